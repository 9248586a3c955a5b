//! Code lengths shared by the CP and Tucker description lengths. All in bits.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Length of the Elias delta codeword for `x`.
pub fn elias_delta_length(x: u64) -> Result<u64> {
    if x < 1 {
        return Err(Error::invalid("Elias delta needs a positive integer"));
    }
    let n = x.ilog2() as u64;
    Ok(n + 2 * (n + 1).ilog2() as u64 + 1)
}

/// Below this `min(k, n - k)` the binomial is summed term by term.
const DIRECT_SUM_LIMIT: u64 = 4096;

/// `log2 C(n, k)`; zero when `k` is 0 or `n`. Panics if `k > n`.
pub fn log2_binomial(n: u64, k: u64) -> f64 {
    assert!(k <= n, "C({n}, {k}) undefined");
    let k = k.min(n - k);
    if k == 0 {
        return 0.0;
    }
    if k <= DIRECT_SUM_LIMIT {
        let base = (n - k) as f64;
        return (1..=k).map(|i| ((base + i as f64) / i as f64).log2()).sum();
    }
    let ln = ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0);
    ln / std::f64::consts::LN_2
}

/// Bits for one factor column of weight `weight` over a mode of size `n`:
/// the weight in `log2 n` bits, then the index of the support among all
/// supports of that weight.
pub fn factor_encoding_length(n: u64, weight: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("factor over an empty mode"));
    }
    if weight > n {
        return Err(Error::invalid(format!("weight {weight} exceeds dimension {n}")));
    }
    Ok(log2_binomial(n, weight) + (n as f64).log2())
}

fn log2_guarded(v: u64) -> f64 {
    (v.max(1) as f64).log2()
}

/// Residual counts of a reconstruction against the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Residual {
    /// Cells of the whole tensor.
    pub cells: u64,
    /// Ones in the reconstruction.
    pub recon_ones: u64,
    pub false_pos: u64,
    pub false_neg: u64,
}

impl Residual {
    pub fn boolean_error(&self) -> u64 {
        self.false_pos + self.false_neg
    }

    /// Bits of the data given the model: the count of reconstructed ones,
    /// the false positives among them, the count of reconstructed zeros and
    /// the false negatives among those.
    pub fn error_bits(&self) -> f64 {
        log2_guarded(self.recon_ones)
            + log2_binomial(self.cells, self.false_pos)
            + log2_guarded(self.cells - self.recon_ones)
            + log2_binomial(self.cells, self.false_neg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Codeword length by building the codeword.
    fn elias_by_construction(x: u64) -> u64 {
        let bin = format!("{x:b}");
        let len = bin.len() as u64;
        let len_bin = format!("{len:b}");
        // unary-ish prefix of len_bin.len()-1 zeros, len_bin, then bin without its leading 1
        (len_bin.len() as u64 - 1) + len_bin.len() as u64 + (len - 1)
    }

    #[test]
    fn elias_examples() {
        assert_eq!(elias_delta_length(1).unwrap(), 1);
        assert_eq!(elias_delta_length(2).unwrap(), 4);
        assert_eq!(elias_delta_length(17).unwrap(), 9);
        assert!(elias_delta_length(0).is_err());
        for x in 1..=1000 {
            assert_eq!(elias_delta_length(x).unwrap(), elias_by_construction(x), "x={x}");
        }
    }

    #[test]
    fn factor_examples() {
        assert!((factor_encoding_length(4, 2).unwrap() - (6f64.log2() + 2.0)).abs() < 1e-12);
        assert_eq!(factor_encoding_length(1, 1).unwrap(), 0.0);
        assert_eq!(factor_encoding_length(8, 0).unwrap(), 3.0);
        assert!(factor_encoding_length(3, 4).is_err());
        assert!(factor_encoding_length(0, 0).is_err());
    }

    #[test]
    fn binomial_small_exact() {
        let mut row = vec![1u128];
        for n in 1..=60u64 {
            let mut next = vec![1u128; n as usize + 1];
            for k in 1..n as usize {
                next[k] = row[k - 1] + row[k];
            }
            row = next;
            for k in 0..=n {
                let want = (row[k as usize] as f64).log2();
                assert!((log2_binomial(n, k) - want).abs() < 1e-9 * want.max(1.0));
            }
        }
    }

    #[test]
    fn binomial_gamma_branch_agrees_with_sum() {
        for &(n, k) in &[(3_000_000u64, 5000u64), (10_000, 4097), (1_000_000_000, 10_000)] {
            let direct: f64 = (1..=k).map(|i| (((n - k) as f64 + i as f64) / i as f64).log2()).sum();
            let got = log2_binomial(n, k);
            assert!((got - direct).abs() <= 1e-9 * direct, "{n} {k}: {got} vs {direct}");
        }
    }

    #[test]
    fn residual_guards_empty_counts() {
        let r = Residual {
            cells: 8,
            recon_ones: 0,
            false_pos: 0,
            false_neg: 3,
        };
        assert!((r.error_bits() - (0.0 + 0.0 + 3.0 + 56f64.log2())).abs() < 1e-12);
        assert_eq!(r.boolean_error(), 3);
    }

    proptest! {
        #[test]
        fn binomial_symmetric_and_pascal(n in 2u64..5000, k in 1u64..5000) {
            let k = k % n;
            prop_assume!(k >= 1);
            let a = log2_binomial(n, k);
            prop_assert!((a - log2_binomial(n, n - k)).abs() < 1e-9 * a.max(1.0));
            // C(n,k) = C(n-1,k-1) * n / k
            let b = log2_binomial(n - 1, k - 1) + (n as f64 / k as f64).log2();
            prop_assert!((a - b).abs() < 1e-9 * a.max(1.0));
        }
    }
}
