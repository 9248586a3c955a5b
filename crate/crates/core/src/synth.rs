//! Planted-block synthetic tensors with additive and destructive noise.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::block::{reconstruct, Block};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::tensor::{Cell, Dims, SparseBinaryTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub dims: Dims,
    pub rank: usize,
    /// Mean block side per mode; sides are uniform in `[mean/2, 3·mean/2]`.
    pub block_dims_mean: [usize; 3],
    /// Probability that a block (after the first) shares a chunk of indices
    /// with an earlier block in one mode.
    pub overlap_fraction: f64,
    /// Spurious ones to add, as a fraction of the planted ones.
    pub additive_noise: f64,
    /// Planted ones to delete, as a fraction of the planted ones.
    pub destructive_noise: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(dims: Dims, rank: usize, seed: u64) -> Self {
        SynthSpec {
            dims,
            rank,
            block_dims_mean: [16; 3],
            overlap_fraction: 0.5,
            additive_noise: 0.0,
            destructive_noise: 0.0,
            seed,
        }
    }

    fn side_range(&self, mode: usize) -> (usize, usize) {
        let mean = self.block_dims_mean[mode];
        ((mean / 2).max(1), (3 * mean / 2).min(self.dims.get(mode)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.volume() == 0 {
            return Err(Error::invalid(format!("empty tensor {}", self.dims)));
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(Error::invalid("overlap fraction must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.destructive_noise) {
            return Err(Error::invalid("destructive noise must lie in [0, 1)"));
        }
        if !(self.additive_noise >= 0.0 && self.additive_noise.is_finite()) {
            return Err(Error::invalid("additive noise must be a non-negative number"));
        }
        for m in 0..3 {
            if self.block_dims_mean[m] == 0 {
                return Err(Error::invalid("block side mean must be positive"));
            }
            let (lo, hi) = self.side_range(m);
            if lo > hi {
                return Err(Error::Infeasible(format!(
                    "blocks of side >= {lo} do not fit mode {m} of size {}",
                    self.dims.get(m)
                )));
            }
        }
        Ok(())
    }
}

/// `⌊fraction · n⌋`, robust to the representation error of decimal fractions.
fn fraction_of(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 + 1e-9).floor() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub noise_free: SparseBinaryTensor,
    pub noisy: SparseBinaryTensor,
    pub truth: Vec<Block>,
}

/// JSON manifest of a generated instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthManifest {
    pub spec: SynthSpec,
    pub seed: u64,
    pub blocks: Vec<[Vec<usize>; 3]>,
    pub nnz_noise_free: usize,
    pub nnz_noisy: usize,
    pub deleted: usize,
    pub added: usize,
}

impl TruthManifest {
    pub fn blocks(&self) -> Vec<Block> {
        self.blocks.iter().cloned().map(Block::from_sets).collect()
    }
}

fn sample_set(rng: &mut ChaCha8Rng, n: usize, size: usize, keep: &[usize]) -> Vec<usize> {
    let mut set: HashSet<usize> = keep.iter().copied().collect();
    while set.len() < size {
        set.insert(rng.gen_range(0..n));
    }
    let mut v: Vec<usize> = set.into_iter().collect();
    v.sort_unstable();
    v
}

fn plant(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<Block> {
    let mut blocks: Vec<Block> = Vec::with_capacity(spec.rank);
    for _ in 0..spec.rank {
        let sides = [0, 1, 2].map(|m| {
            let (lo, hi) = spec.side_range(m);
            rng.gen_range(lo..=hi)
        });
        let mut shared: Option<(usize, Vec<usize>)> = None;
        if !blocks.is_empty() && rng.gen_bool(spec.overlap_fraction) {
            let prev = &blocks[rng.gen_range(0..blocks.len())];
            let mode = rng.gen_range(0..3);
            let src = prev.indices(mode);
            let len = rng.gen_range(1..=src.len().min(sides[mode]));
            let start = rng.gen_range(0..=src.len() - len);
            shared = Some((mode, src[start..start + len].to_vec()));
        }
        let sets = [0, 1, 2].map(|m| {
            let keep = match &shared {
                Some((mode, chunk)) if *mode == m => chunk.as_slice(),
                _ => &[],
            };
            sample_set(rng, spec.dims.get(m), sides[m], keep)
        });
        blocks.push(Block::from_sets(sets));
    }
    blocks
}

/// Plants `rank` blocks, then deletes and adds ones as the spec asks.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let truth = plant(spec, &mut rng);
    let noise_free = reconstruct(&truth, spec.dims)?;
    let nnz = noise_free.nnz();

    let deletions = fraction_of(spec.destructive_noise, nnz);
    let additions = fraction_of(spec.additive_noise, nnz);
    let zeros = spec.dims.volume() - nnz as u64;
    if additions as u64 > zeros {
        return Err(Error::Infeasible(format!(
            "cannot add {additions} ones to {zeros} zeros"
        )));
    }
    let dropped: HashSet<usize> = sample(&mut rng, nnz, deletions).into_iter().collect();
    let mut cells: Vec<Cell> = noise_free
        .cells()
        .iter()
        .enumerate()
        .filter(|(id, _)| !dropped.contains(id))
        .map(|(_, &c)| c)
        .collect();
    let d = spec.dims;
    if additions as u64 * 2 <= zeros {
        let mut added: HashSet<Cell> = HashSet::with_capacity(additions);
        while added.len() < additions {
            let c = Cell::new(
                rng.gen_range(0..d.get(0)),
                rng.gen_range(0..d.get(1)),
                rng.gen_range(0..d.get(2)),
            );
            if !noise_free.contains(&c) {
                added.insert(c);
            }
        }
        let mut added: Vec<Cell> = added.into_iter().collect();
        added.sort_unstable();
        cells.extend(added);
    } else {
        // dense case: enumerate the zeros
        let all: Vec<Cell> = (0..d.get(0))
            .flat_map(|i| (0..d.get(1)).flat_map(move |j| (0..d.get(2)).map(move |k| Cell::new(i, j, k))))
            .filter(|c| !noise_free.contains(c))
            .collect();
        cells.extend(sample(&mut rng, all.len(), additions).into_iter().map(|i| all[i]));
    }
    let noisy = SparseBinaryTensor::new(spec.dims, cells)?;
    assert_eq!(noisy.nnz(), nnz - deletions + additions);
    assert_eq!(noisy.intersection_count(&noise_free), (nnz - deletions) as u64);
    Ok(SynthData {
        noise_free,
        noisy,
        truth,
    })
}

impl SynthData {
    pub fn manifest(&self, spec: &SynthSpec) -> TruthManifest {
        let kept = self.noisy.intersection_count(&self.noise_free) as usize;
        TruthManifest {
            spec: spec.clone(),
            seed: spec.seed,
            blocks: self
                .truth
                .iter()
                .map(|b| [0, 1, 2].map(|m| b.indices(m).to_vec()))
                .collect(),
            nnz_noise_free: self.noise_free.nnz(),
            nnz_noisy: self.noisy.nnz(),
            deleted: self.noise_free.nnz() - kept,
            added: self.noisy.nnz() - kept,
        }
    }

    /// Writes `noise_free.txt`, `noisy.txt` and `truth.json` into `dir`.
    pub fn save(&self, spec: &SynthSpec, dir: &Path) -> Result<()> {
        self.noise_free.save(dir.join("noise_free.txt"))?;
        self.noisy.save(dir.join("noisy.txt"))?;
        let json = serde_json::to_string_pretty(&self.manifest(spec))?;
        write_atomic(&dir.join("truth.json"), json.as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub xor_noisy: u64,
    pub xor_noise_free: u64,
    /// `xor_noisy / nnz(noisy)`.
    pub rel_noisy: f64,
    /// `xor_noise_free / nnz(noise_free)`.
    pub rel_noise_free: f64,
}

/// Reconstruction error against the input and against the clean data, each
/// normalized by the reference's number of ones.
pub fn evaluate(
    recon: &SparseBinaryTensor,
    noisy: &SparseBinaryTensor,
    noise_free: &SparseBinaryTensor,
) -> Result<Evaluation> {
    if noisy.is_empty() || noise_free.is_empty() {
        return Err(Error::invalid("relative error against a tensor without ones"));
    }
    let xor_noisy = recon.xor_count(noisy)?;
    let xor_noise_free = recon.xor_count(noise_free)?;
    Ok(Evaluation {
        xor_noisy,
        xor_noise_free,
        rel_noisy: xor_noisy as f64 / noisy.nnz() as f64,
        rel_noise_free: xor_noise_free as f64 / noise_free.nnz() as f64,
    })
}
