//! Greedy block ordering and MDL rank selection for Boolean CP.

use rustc_hash::{FxHashMap, FxHashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::block::{blocks_to_text, reconstruct, Block};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::mdl::{elias_delta_length, factor_encoding_length, Residual};
use crate::tensor::{Cell, Dims, SparseBinaryTensor};

/// Blocks in selection order with the marginal gain each had when picked.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OrderedBlocks {
    pub blocks: Vec<Block>,
    pub gains: Vec<i64>,
}

/// Repeatedly picks the block that covers the most uncovered ones minus
/// uncovered zeros. Stops once no block has positive gain. Ties go to the
/// lower input index.
pub fn greedy_order(x: &SparseBinaryTensor, blocks: &[Block]) -> OrderedBlocks {
    let mut gain: Vec<i64> = blocks
        .iter()
        .map(|b| {
            let ones = b.ones_in(x) as i64;
            2 * ones - b.volume() as i64
        })
        .collect();
    let mut alive: Vec<bool> = blocks.iter().map(|b| !b.is_empty()).collect();
    let mut by_row: FxHashMap<usize, Vec<usize>> = FxHashMap::default();
    for (id, b) in blocks.iter().enumerate() {
        for &i in b.indices(0) {
            by_row.entry(i).or_default().push(id);
        }
    }
    let mut covered: FxHashSet<Cell> = FxHashSet::default();
    let mut out = OrderedBlocks::default();
    loop {
        let pick = (0..blocks.len())
            .filter(|&id| alive[id])
            .max_by(|&a, &b| gain[a].cmp(&gain[b]).then(b.cmp(&a)));
        let Some(s) = pick.filter(|&s| gain[s] > 0) else { break };
        alive[s] = false;
        out.blocks.push(blocks[s].clone());
        out.gains.push(gain[s]);
        for c in blocks[s].cells() {
            if !covered.insert(c) {
                continue;
            }
            let delta = if x.contains(&c) { -1 } else { 1 };
            for &t in &by_row[&c.i] {
                if alive[t] && blocks[t].contains(&c) {
                    gain[t] += delta;
                }
            }
        }
    }
    out
}

/// Column-sparse factor matrices; column `i` of each is block `i`'s index set
/// in that mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CpDecomposition {
    pub dims: Dims,
    pub factors: [Vec<Vec<usize>>; 3],
}

impl CpDecomposition {
    pub fn from_blocks(dims: Dims, blocks: &[Block]) -> Result<Self> {
        if let Some(b) = blocks.iter().find(|b| !b.fits(dims)) {
            return Err(Error::invalid(format!("block {b} exceeds {dims}")));
        }
        Ok(CpDecomposition {
            dims,
            factors: [0, 1, 2].map(|m| blocks.iter().map(|b| b.indices(m).to_vec()).collect()),
        })
    }

    pub fn rank(&self) -> usize {
        self.factors[0].len()
    }

    pub fn block(&self, i: usize) -> Block {
        Block::new(
            self.factors[0][i].iter().copied(),
            self.factors[1][i].iter().copied(),
            self.factors[2][i].iter().copied(),
        )
    }

    pub fn blocks(&self) -> Vec<Block> {
        (0..self.rank()).map(|i| self.block(i)).collect()
    }

    pub fn reconstruct(&self) -> SparseBinaryTensor {
        reconstruct(&self.blocks(), self.dims).expect("columns fit by construction")
    }

    /// Factor matrix of `mode` as a MatrixMarket pattern listing, 1-based.
    pub fn factor_matrix_market(&self, mode: usize) -> String {
        matrix_market(self.dims.get(mode), &self.factors[mode])
    }

    /// Writes `blocks.txt` and `factor_A.mtx`, `factor_B.mtx`, `factor_C.mtx`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join("blocks.txt"), blocks_to_text(&self.blocks()).as_bytes())?;
        save_factors(dir, self.dims, &self.factors)
    }
}

/// Column-sparse 0/1 matrix with `rows` rows as a MatrixMarket pattern listing.
pub fn matrix_market(rows: usize, cols: &[Vec<usize>]) -> String {
    let nnz: usize = cols.iter().map(Vec::len).sum();
    let mut s = String::from("%%MatrixMarket matrix coordinate pattern general\n");
    writeln!(s, "{} {} {}", rows, cols.len(), nnz).unwrap();
    for (col, rs) in cols.iter().enumerate() {
        for r in rs {
            writeln!(s, "{} {}", r + 1, col + 1).unwrap();
        }
    }
    s
}

pub(crate) fn save_factors(dir: &Path, dims: Dims, factors: &[Vec<Vec<usize>>; 3]) -> Result<()> {
    for (mode, name) in ["A", "B", "C"].iter().enumerate() {
        let path = dir.join(format!("factor_{name}.mtx"));
        write_atomic(&path, matrix_market(dims.get(mode), &factors[mode]).as_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdlRecord {
    pub rank: usize,
    pub model_bits: f64,
    pub error_bits: f64,
    pub total_bits: f64,
    pub boolean_error: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdlReport {
    /// One record per rank `1..=B`.
    pub records: Vec<MdlRecord>,
    pub chosen_rank: usize,
}

impl MdlReport {
    pub fn chosen(&self) -> &MdlRecord {
        &self.records[self.chosen_rank - 1]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,model_bits,error_bits,total_bits,boolean_error\n");
        for r in &self.records {
            writeln!(
                s,
                "{},{},{},{},{}",
                r.rank, r.model_bits, r.error_bits, r.total_bits, r.boolean_error
            )
            .unwrap();
        }
        s
    }
}

fn block_bits(dims: Dims, b: &Block) -> f64 {
    (0..3)
        .map(|m| factor_encoding_length(dims.get(m) as u64, b.indices(m).len() as u64).expect("block fits"))
        .sum()
}

fn record(rank: usize, factor_bits: f64, res: &Residual) -> MdlRecord {
    let model_bits = elias_delta_length(rank.max(1) as u64).unwrap() as f64 + factor_bits;
    let error_bits = res.error_bits();
    MdlRecord {
        rank,
        model_bits,
        error_bits,
        total_bits: model_bits + error_bits,
        boolean_error: res.boolean_error(),
    }
}

/// Records for every prefix `0..=blocks.len()` in one incremental pass.
/// The empty prefix is encoded as if its rank were 1.
pub fn prefix_description_lengths(x: &SparseBinaryTensor, blocks: &[Block]) -> Vec<MdlRecord> {
    let dims = x.dims();
    let mut res = Residual {
        cells: dims.volume(),
        recon_ones: 0,
        false_pos: 0,
        false_neg: x.nnz() as u64,
    };
    let mut factor_bits = 0.0;
    let mut covered: FxHashSet<Cell> = FxHashSet::default();
    let mut out = vec![record(0, 0.0, &res)];
    for (r, b) in blocks.iter().enumerate() {
        for c in b.cells() {
            if covered.insert(c) {
                res.recon_ones += 1;
                if x.contains(&c) {
                    res.false_neg -= 1;
                } else {
                    res.false_pos += 1;
                }
            }
        }
        factor_bits += block_bits(dims, b);
        out.push(record(r + 1, factor_bits, &res));
    }
    out
}

/// Two-part description length of the CP decomposition given by `prefix`.
pub fn cp_description_length(x: &SparseBinaryTensor, prefix: &[Block]) -> MdlRecord {
    *prefix_description_lengths(x, prefix).last().unwrap()
}

/// Evaluates every prefix of `ordered` and keeps the one with the smallest
/// total (ties to the smaller rank).
pub fn select_rank(x: &SparseBinaryTensor, ordered: &[Block]) -> Result<(CpDecomposition, MdlReport)> {
    if ordered.is_empty() {
        return Err(Error::invalid("rank selection needs at least one block"));
    }
    if let Some(b) = ordered.iter().find(|b| !b.fits(x.dims())) {
        return Err(Error::invalid(format!("block {b} exceeds tensor dims {}", x.dims())));
    }
    let records: Vec<MdlRecord> = prefix_description_lengths(x, ordered).into_iter().skip(1).collect();
    let mut chosen = 0;
    for (i, r) in records.iter().enumerate() {
        if r.total_bits < records[chosen].total_bits {
            chosen = i;
        }
    }
    let cp = CpDecomposition::from_blocks(x.dims(), &ordered[..=chosen])?;
    Ok((
        cp,
        MdlReport {
            records,
            chosen_rank: chosen + 1,
        },
    ))
}
