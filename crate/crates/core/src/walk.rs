//! Dense block discovery by short random walks.
//!
//! Non-zeros of the tensor are the nodes of an implicit graph in which two
//! cells are adjacent when they share a fiber. Each iteration runs a batch of
//! short walks, keeps the frequently visited cells, takes their convex hull as
//! the candidate block and removes every remaining cell inside the hull from
//! the graph. The hull is reported only if it is dense enough.

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::block::{Block, BlockList};
use crate::error::{Error, Result};
use crate::tensor::SparseBinaryTensor;

/// Which visited cells survive into the candidate block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FreqMode {
    /// Keep cells visited strictly more than this many times.
    Absolute(u32),
    /// Keep cells visited at least as often as the mean visit count.
    AboveMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkParams {
    /// Hulls are accepted only with density strictly above this value.
    pub density_threshold: f64,
    pub walk_length: usize,
    pub num_walks: usize,
    pub freq: FreqMode,
    /// Hulls smaller than this in any mode, or in volume, are removed from
    /// the graph but never reported.
    pub min_block_dims: [usize; 3],
    pub min_block_volume: u64,
    pub seed: u64,
}

impl WalkParams {
    pub const DEFAULT_WALK_LENGTH: usize = 5;

    /// Default walk count: `max(64, 4 · walk_length · ⌈log₂ nnz⌉)`.
    pub fn default_num_walks(walk_length: usize, nnz: usize) -> usize {
        let log = (nnz.max(2) as f64).log2().ceil() as usize;
        (4 * walk_length * log).max(64)
    }

    /// Defaults for a tensor with `nnz` non-zeros.
    pub fn for_tensor(nnz: usize, density_threshold: f64, seed: u64) -> Self {
        WalkParams {
            density_threshold,
            walk_length: Self::DEFAULT_WALK_LENGTH,
            num_walks: Self::default_num_walks(Self::DEFAULT_WALK_LENGTH, nnz),
            freq: FreqMode::AboveMean,
            min_block_dims: [1, 1, 1],
            min_block_volume: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.density_threshold;
        if !(d > 0.0 && d <= 1.0) {
            return Err(Error::invalid(format!("density threshold {d} not in (0, 1]")));
        }
        if self.walk_length == 0 || self.num_walks == 0 {
            return Err(Error::invalid("walk_length and num_walks must be positive"));
        }
        if self.min_block_dims.contains(&0) {
            return Err(Error::invalid("min_block_dims must be positive"));
        }
        Ok(())
    }
}

/// Visit counts of one iteration, in first-visit order.
#[derive(Debug, Clone, Default)]
pub struct VisitCounter {
    counts: FxHashMap<u32, u32>,
    order: Vec<u32>,
}

impl VisitCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn visit(&mut self, id: u32) {
        let n = self.counts.entry(id).or_insert(0);
        if *n == 0 {
            self.order.push(id);
        }
        *n += 1;
    }

    pub fn count(&self, id: u32) -> u32 {
        self.counts.get(&id).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// `(cell id, count)` pairs in first-visit order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.order.iter().map(|&id| (id, self.counts[&id]))
    }

    fn random_visited(&self, rng: &mut impl Rng) -> u32 {
        self.order[rng.gen_range(0..self.order.len())]
    }
}

/// Cells whose visit count passes the filter, in first-visit order.
pub fn frequency_filter(counts: &VisitCounter, mode: FreqMode) -> Vec<u32> {
    match mode {
        FreqMode::Absolute(f) => counts.iter().filter(|&(_, n)| n > f).map(|(id, _)| id).collect(),
        FreqMode::AboveMean => {
            let total: u64 = counts.iter().map(|(_, n)| n as u64).sum();
            let len = counts.len() as u64;
            // n >= total / len without rounding
            counts
                .iter()
                .filter(|&(_, n)| n as u64 * len >= total)
                .map(|(id, _)| id)
                .collect()
        }
    }
}

/// Tombstone overlay over an immutable tensor: which cells are still nodes of
/// the walk graph. Supports O(1) removal and uniform sampling.
#[derive(Debug, Clone)]
struct LiveSet {
    pos: Vec<u32>,
    list: Vec<u32>,
}

const DEAD: u32 = u32::MAX;

impl LiveSet {
    fn full(n: usize) -> Self {
        LiveSet {
            pos: (0..n as u32).collect(),
            list: (0..n as u32).collect(),
        }
    }

    fn len(&self) -> usize {
        self.list.len()
    }

    fn is_alive(&self, id: u32) -> bool {
        self.pos[id as usize] != DEAD
    }

    fn remove(&mut self, id: u32) -> bool {
        let p = self.pos[id as usize];
        if p == DEAD {
            return false;
        }
        let last = *self.list.last().unwrap();
        self.list.swap_remove(p as usize);
        if last != id {
            self.pos[last as usize] = p;
        }
        self.pos[id as usize] = DEAD;
        true
    }

    fn sample(&self, rng: &mut impl Rng) -> u32 {
        self.list[rng.gen_range(0..self.list.len())]
    }
}

/// Runs `num_walks` walks of `walk_length` steps from `start` over live cells.
fn run_walks(x: &SparseBinaryTensor, live: &LiveSet, start: u32, p: &WalkParams, rng: &mut impl Rng) -> VisitCounter {
    let mut counts = VisitCounter::new();
    counts.visit(start);
    let mut nbrs: Vec<u32> = Vec::new();
    for _ in 0..p.num_walks {
        let mut cur = counts.random_visited(rng);
        for _ in 0..p.walk_length {
            nbrs.clear();
            nbrs.extend(x.neighbor_ids(cur).filter(|&n| live.is_alive(n)));
            if nbrs.is_empty() {
                // stalled: jump to another visited cell, the step is spent
                cur = counts.random_visited(rng);
                continue;
            }
            cur = nbrs[rng.gen_range(0..nbrs.len())];
            counts.visit(cur);
        }
    }
    counts
}

/// Result of the walk phase.
#[derive(Debug, Clone)]
pub struct WalkOutcome {
    pub blocks: BlockList,
    /// Number of candidate hulls formed.
    pub iterations: usize,
    /// Cells removed from the graph by each hull, in order.
    pub removed: Vec<usize>,
}

/// Hull of the frequent cells of one iteration.
fn candidate_hull(x: &SparseBinaryTensor, counts: &VisitCounter, freq: FreqMode, start: u32) -> Block {
    let mut kept = frequency_filter(counts, freq);
    if kept.is_empty() {
        // an absolute threshold can reject everything; the start cell still goes
        kept.push(start);
    }
    let cells: Vec<_> = kept.iter().map(|&id| x.cell(id)).collect();
    Block::convex_hull(&cells)
}

fn remove_hull(x: &SparseBinaryTensor, live: &mut LiveSet, hull: &Block) -> usize {
    let mut removed = 0;
    x.for_each_in_box(hull.sets(), |id| {
        if live.remove(id) {
            removed += 1;
        }
    });
    removed
}

fn accepts(x: &SparseBinaryTensor, hull: &Block, p: &WalkParams) -> bool {
    let shape = hull.shape();
    if (0..3).any(|m| shape[m] < p.min_block_dims[m]) || hull.volume() < p.min_block_volume {
        return false;
    }
    let ones = hull.ones_in(x) as f64;
    ones > p.density_threshold * hull.volume() as f64
}

/// Sequential walk phase. Identical inputs and seed give identical output.
pub fn random_walk_phase(x: &SparseBinaryTensor, p: &WalkParams) -> Result<WalkOutcome> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut live = LiveSet::full(x.nnz());
    let mut out = WalkOutcome {
        blocks: BlockList::new(),
        iterations: 0,
        removed: Vec::new(),
    };
    while live.len() > 0 {
        let start = live.sample(&mut rng);
        let counts = run_walks(x, &live, start, p, &mut rng);
        let hull = candidate_hull(x, &counts, p.freq, start);
        let removed = remove_hull(x, &mut live, &hull);
        debug_assert!(removed >= 1);
        out.iterations += 1;
        out.removed.push(removed);
        if accepts(x, &hull, p) {
            debug!("walk accepted block of shape {:?}", hull.shape());
            out.blocks.push(hull);
        }
    }
    Ok(out)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Parallel walk phase: each round starts up to `threads` iterations from
/// pairwise non-adjacent live cells against the same live snapshot, then
/// removes all their hulls at once. Overlapping accepted hulls are all kept.
/// Output is deterministic for a fixed `(seed, threads)` pair.
pub fn random_walk_phase_parallel(x: &SparseBinaryTensor, p: &WalkParams, threads: usize) -> Result<WalkOutcome> {
    if threads <= 1 {
        return random_walk_phase(x, p);
    }
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut live = LiveSet::full(x.nnz());
    let mut out = WalkOutcome {
        blocks: BlockList::new(),
        iterations: 0,
        removed: Vec::new(),
    };
    let mut round: u64 = 0;
    while live.len() > 0 {
        let mut starts: Vec<u32> = Vec::with_capacity(threads);
        for _ in 0..threads * 4 {
            if starts.len() == threads {
                break;
            }
            let s = live.sample(&mut rng);
            let c = x.cell(s);
            if starts.iter().all(|&o| o != s && x.cell(o).hamming(&c) != 1) {
                starts.push(s);
            }
        }
        let snapshot = &live;
        let hulls: Vec<Block> = starts
            .par_iter()
            .enumerate()
            .map(|(slot, &start)| {
                let stream = splitmix64(p.seed ^ splitmix64(round.wrapping_mul(1 << 16) + slot as u64));
                let mut wrng = ChaCha8Rng::seed_from_u64(stream);
                let counts = run_walks(x, snapshot, start, p, &mut wrng);
                candidate_hull(x, &counts, p.freq, start)
            })
            .collect();
        for hull in hulls {
            let removed = remove_hull(x, &mut live, &hull);
            out.iterations += 1;
            out.removed.push(removed);
            if accepts(x, &hull, p) {
                out.blocks.push(hull);
            }
        }
        round += 1;
    }
    Ok(out)
}
