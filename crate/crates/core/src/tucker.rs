//! Boolean Tucker decompositions built from blocks and compressed by
//! MDL-gated factor merging.

use std::collections::BTreeSet;
use std::path::Path;

use log::debug;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::block::{intersection, Block};
use crate::cp::{matrix_market, save_factors};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::mdl::{elias_delta_length, factor_encoding_length, log2_binomial, Residual};
use crate::tensor::{Cell, Dims, SparseBinaryTensor};

/// Core cell `(α, β, γ)`: one column index per mode.
pub type CoreCell = [usize; 3];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuckerDecomposition {
    pub dims: Dims,
    /// Column-sparse factor matrices A, B, C.
    pub factors: [Vec<Vec<usize>>; 3],
    pub core: BTreeSet<CoreCell>,
}

impl TuckerDecomposition {
    /// `(p, q, r)`.
    pub fn core_dims(&self) -> [usize; 3] {
        [0, 1, 2].map(|m| self.factors[m].len())
    }

    pub fn validate(&self) -> Result<()> {
        let cd = self.core_dims();
        for g in &self.core {
            if (0..3).any(|m| g[m] >= cd[m]) {
                return Err(Error::invalid(format!("core cell {g:?} outside {cd:?}")));
            }
        }
        for m in 0..3 {
            for col in &self.factors[m] {
                if col.windows(2).any(|w| w[0] >= w[1]) || col.last().is_some_and(|&v| v >= self.dims.get(m)) {
                    return Err(Error::invalid(format!("bad column {col:?} in mode {m}")));
                }
            }
        }
        Ok(())
    }

    /// The rank-1 block a core cell activates.
    pub fn block_of(&self, g: CoreCell) -> Block {
        Block::from_sets([0, 1, 2].map(|m| self.factors[m][g[m]].clone()))
    }

    pub fn blocks(&self) -> Vec<Block> {
        self.core.iter().map(|&g| self.block_of(g)).collect()
    }

    pub fn reconstruct(&self) -> SparseBinaryTensor {
        crate::block::reconstruct(&self.blocks(), self.dims).expect("columns fit the tensor")
    }

    /// Everything except the error bits.
    fn model_bits(&self) -> f64 {
        let cd = self.core_dims();
        let mut bits = 0.0;
        for (m, &p) in cd.iter().enumerate() {
            bits += elias_delta_length(p.max(1) as u64).unwrap() as f64;
            let n = self.dims.get(m) as u64;
            for col in &self.factors[m] {
                bits += factor_encoding_length(n, col.len() as u64).expect("column fits");
            }
        }
        let cells: u64 = cd.iter().map(|&d| d as u64).product();
        if cells > 0 {
            bits += (cells as f64).log2() + log2_binomial(cells, self.core.len() as u64);
        }
        bits
    }

    /// Writes `core.txt` (1-based triples) and the three factor listings.
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join("core.txt"), self.core_text().as_bytes())?;
        save_factors(dir, self.dims, &self.factors)
    }

    pub fn core_text(&self) -> String {
        let [p, q, r] = self.core_dims();
        let cells = self.core.iter().map(|g| Cell::new(g[0], g[1], g[2]));
        SparseBinaryTensor::new(Dims::new(p, q, r), cells)
            .expect("core cells are valid")
            .to_text()
    }

    pub fn factor_matrix_market(&self, mode: usize) -> String {
        matrix_market(self.dims.get(mode), &self.factors[mode])
    }
}

/// B×B×B hyperdiagonal core; factor column `i` is block `i`'s index set.
pub fn trivial_tucker(dims: Dims, blocks: &[Block]) -> Result<TuckerDecomposition> {
    if blocks.is_empty() {
        return Err(Error::invalid("Tucker decomposition needs at least one block"));
    }
    if let Some(b) = blocks.iter().find(|b| !b.fits(dims)) {
        return Err(Error::invalid(format!("block {b} exceeds {dims}")));
    }
    Ok(TuckerDecomposition {
        dims,
        factors: [0, 1, 2].map(|m| blocks.iter().map(|b| b.indices(m).to_vec()).collect()),
        core: (0..blocks.len()).map(|i| [i, i, i]).collect(),
    })
}

pub fn tucker_reconstruct(t: &TuckerDecomposition) -> SparseBinaryTensor {
    t.reconstruct()
}

/// Multiplicity of every reconstructed cell, with the residual counts kept
/// current as blocks come and go.
struct Coverage<'a> {
    x: &'a SparseBinaryTensor,
    count: FxHashMap<Cell, u32>,
    res: Residual,
}

impl<'a> Coverage<'a> {
    fn new(x: &'a SparseBinaryTensor, dims: Dims) -> Self {
        Coverage {
            x,
            count: FxHashMap::default(),
            res: Residual {
                cells: dims.volume(),
                recon_ones: 0,
                false_pos: 0,
                false_neg: x.nnz() as u64,
            },
        }
    }

    fn of(x: &'a SparseBinaryTensor, t: &TuckerDecomposition) -> Self {
        let mut cov = Coverage::new(x, t.dims);
        for b in t.blocks() {
            cov.add(&b);
        }
        cov
    }

    fn add(&mut self, b: &Block) {
        for c in b.cells() {
            let n = self.count.entry(c).or_insert(0);
            *n += 1;
            if *n == 1 {
                self.res.recon_ones += 1;
                if self.x.contains(&c) {
                    self.res.false_neg -= 1;
                } else {
                    self.res.false_pos += 1;
                }
            }
        }
    }

    fn remove(&mut self, b: &Block) {
        for c in b.cells() {
            let n = self.count.get_mut(&c).expect("cell was covered");
            *n -= 1;
            if *n == 0 {
                self.count.remove(&c);
                self.res.recon_ones -= 1;
                if self.x.contains(&c) {
                    self.res.false_neg += 1;
                } else {
                    self.res.false_pos -= 1;
                }
            }
        }
    }
}

/// Total two-part description length of `t` as a model of `x`.
pub fn tucker_description_length(x: &SparseBinaryTensor, t: &TuckerDecomposition) -> f64 {
    t.model_bits() + Coverage::of(x, t).res.error_bits()
}

/// Tucker decomposition plus the Boolean error of its reconstruction.
pub fn tucker_boolean_error(x: &SparseBinaryTensor, t: &TuckerDecomposition) -> u64 {
    Coverage::of(x, t).res.boolean_error()
}

/// `t` with columns `f1 < f2` of `mode` replaced by one column `merged` at
/// position `f1`; later columns shift down and the core is remapped.
fn replace_columns(
    t: &TuckerDecomposition,
    mode: usize,
    f1: usize,
    f2: usize,
    merged: Vec<usize>,
) -> TuckerDecomposition {
    let mut factors = t.factors.clone();
    factors[mode][f1] = merged;
    factors[mode].remove(f2);
    let core = t
        .core
        .iter()
        .map(|&g| {
            let mut g = g;
            g[mode] = match g[mode] {
                v if v == f2 => f1,
                v if v > f2 => v - 1,
                v => v,
            };
            g
        })
        .collect();
    TuckerDecomposition {
        dims: t.dims,
        factors,
        core,
    }
}

/// Scores candidates for one column pair against a coverage of the current
/// decomposition with the affected blocks taken out.
struct PairEval<'c, 'x> {
    cov: &'c mut Coverage<'x>,
    t: &'c TuckerDecomposition,
    mode: usize,
    f1: usize,
    f2: usize,
}

impl PairEval<'_, '_> {
    fn length(&mut self, col: &[usize]) -> (TuckerDecomposition, f64) {
        let cand = replace_columns(self.t, self.mode, self.f1, self.f2, col.to_vec());
        let touched: Vec<Block> = cand
            .core
            .iter()
            .filter(|g| g[self.mode] == self.f1)
            .map(|&g| cand.block_of(g))
            .collect();
        for b in &touched {
            self.cov.add(b);
        }
        let bits = cand.model_bits() + self.cov.res.error_bits();
        for b in &touched {
            self.cov.remove(b);
        }
        (cand, bits)
    }
}

/// Options for factor merging.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuckerOptions {
    /// Keep a symmetric-difference element only if it strictly shortens the
    /// encoding (by default a neutral element is kept).
    pub strict_inclusion: bool,
}

fn check_pair(t: &TuckerDecomposition, mode: usize, f1: usize, f2: usize) -> Result<(usize, usize)> {
    if mode > 2 {
        return Err(Error::invalid(format!("mode {mode} out of range")));
    }
    let cols = t.factors[mode].len();
    if f1 == f2 || f1 >= cols || f2 >= cols {
        return Err(Error::invalid(format!(
            "bad column pair ({f1}, {f2}) of {cols} in mode {mode}"
        )));
    }
    Ok((f1.min(f2), f1.max(f2)))
}

fn merge_with(
    cov: &mut Coverage<'_>,
    t: &TuckerDecomposition,
    mode: usize,
    f1: usize,
    f2: usize,
    opts: TuckerOptions,
) -> Option<(TuckerDecomposition, f64)> {
    let (a, b) = (&t.factors[mode][f1], &t.factors[mode][f2]);
    let mut col = intersection(a, b);
    if col.is_empty() {
        return None;
    }
    let sym: Vec<usize> = {
        let mut v: Vec<usize> = a
            .iter()
            .chain(b)
            .copied()
            .filter(|v| col.binary_search(v).is_err())
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let affected: Vec<Block> = t
        .core
        .iter()
        .filter(|g| g[mode] == f1 || g[mode] == f2)
        .map(|&g| t.block_of(g))
        .collect();
    for blk in &affected {
        cov.remove(blk);
    }
    let mut eval = PairEval { cov, t, mode, f1, f2 };
    let mut best = eval.length(&col);
    for v in sym {
        let pos = col.binary_search(&v).unwrap_err();
        col.insert(pos, v);
        let cand = eval.length(&col);
        let keep = if opts.strict_inclusion {
            cand.1 < best.1
        } else {
            cand.1 <= best.1
        };
        if keep {
            best = cand;
        } else {
            col.remove(pos);
        }
    }
    for blk in &affected {
        eval.cov.add(blk);
    }
    Some(best)
}

/// Merges columns `f1` and `f2` of `mode` into one column grown greedily from
/// their intersection. `None` when the columns are disjoint. The candidate is
/// returned whether or not it is shorter than `t`.
pub fn merge_factors(
    x: &SparseBinaryTensor,
    t: &TuckerDecomposition,
    mode: usize,
    f1: usize,
    f2: usize,
    opts: TuckerOptions,
) -> Result<Option<TuckerDecomposition>> {
    let (f1, f2) = check_pair(t, mode, f1, f2)?;
    let mut cov = Coverage::of(x, t);
    Ok(merge_with(&mut cov, t, mode, f1, f2, opts).map(|(cand, _)| cand))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuckerOutcome {
    pub decomposition: TuckerDecomposition,
    pub bits: f64,
    pub initial_bits: f64,
    /// Description length after each committed merge.
    pub trace: Vec<f64>,
    pub boolean_error: u64,
}

/// Starts from the trivial decomposition and commits every column merge
/// that shortens the description, sweeping modes A, B, C and column pairs
/// `i < j` until a full sweep commits nothing.
pub fn mdl_tucker(x: &SparseBinaryTensor, blocks: &[Block], opts: TuckerOptions) -> Result<TuckerOutcome> {
    let mut t = trivial_tucker(x.dims(), blocks)?;
    let mut cov = Coverage::of(x, &t);
    let initial_bits = t.model_bits() + cov.res.error_bits();
    let mut bits = initial_bits;
    let mut trace = Vec::new();
    loop {
        let mut committed = false;
        for mode in 0..3 {
            let mut i = 0;
            while i < t.factors[mode].len() {
                let mut j = i + 1;
                while j < t.factors[mode].len() {
                    match merge_with(&mut cov, &t, mode, i, j, opts) {
                        Some((cand, cand_bits)) if cand_bits < bits => {
                            debug!("mode {mode}: merged columns {i} and {j}, {bits:.3} -> {cand_bits:.3} bits");
                            for g in t.core.iter().filter(|g| g[mode] == i || g[mode] == j) {
                                cov.remove(&t.block_of(*g));
                            }
                            for g in cand.core.iter().filter(|g| g[mode] == i) {
                                cov.add(&cand.block_of(*g));
                            }
                            t = cand;
                            bits = cand_bits;
                            trace.push(bits);
                            committed = true;
                            j = i + 1;
                        }
                        _ => j += 1,
                    }
                }
                i += 1;
            }
        }
        if !committed {
            break;
        }
    }
    Ok(TuckerOutcome {
        boolean_error: cov.res.boolean_error(),
        decomposition: t,
        bits,
        initial_bits,
        trace,
    })
}
