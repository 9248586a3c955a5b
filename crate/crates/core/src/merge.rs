//! Block completion and merging.
//!
//! First every one of the tensor not yet inside a block is checked for a
//! non-trivial monochromatic block containing it. Cells for which none exists
//! are noise and never take part in merging. Then blocks sharing at least one
//! index are merged greedily while the density of the newly claimed region
//! stays above the threshold.

use std::collections::{HashMap, VecDeque};

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::block::{Block, Density};
use crate::error::{Error, Result};
use crate::tensor::{Cell, SparseBinaryTensor};

/// How a popped block picks its merge partner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MergeStrategy {
    /// Highest region density; ties go to the larger result, then the
    /// lexicographically smaller result.
    Best,
    /// First candidate (in block order) that passes the density gate.
    First,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeParams {
    pub density_threshold: f64,
    /// A monochromatic block is non-trivial when every mode is at least this large...
    pub min_block_dims: [usize; 3],
    /// ...and its volume reaches this.
    pub min_block_volume: u64,
    pub strategy: MergeStrategy,
    /// Shuffles the order in which singletons are examined.
    pub seed: u64,
}

impl MergeParams {
    pub fn new(density_threshold: f64, seed: u64) -> Self {
        MergeParams {
            density_threshold,
            min_block_dims: [2, 2, 2],
            min_block_volume: 8,
            strategy: MergeStrategy::Best,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.density_threshold;
        if !(d > 0.0 && d <= 1.0) {
            return Err(Error::invalid(format!("density threshold {d} not in (0, 1]")));
        }
        if self.min_block_dims.contains(&0) {
            return Err(Error::invalid("min_block_dims must be positive"));
        }
        Ok(())
    }

    fn is_nontrivial(&self, shape: [usize; 3]) -> bool {
        (0..3).all(|m| shape[m] >= self.min_block_dims[m])
            && shape.iter().map(|&s| s as u64).product::<u64>() >= self.min_block_volume
    }
}

pub(crate) fn exceeds(d: Density, threshold: f64) -> bool {
    *d.numer() as f64 > threshold * *d.denom() as f64
}

/// Result of the monochromatic search.
#[derive(Debug, Clone, Default)]
pub struct MonoOutcome {
    pub blocks: Vec<Block>,
    /// Ones of the tensor left in no block at all.
    pub noise: Vec<Cell>,
}

/// Subset enumeration is used while it needs at most this many subsets.
const EXHAUSTIVE_LIMIT_BITS: usize = 12;

struct MonoSearch<'a> {
    x: &'a SparseBinaryTensor,
    p: &'a MergeParams,
}

impl MonoSearch<'_> {
    fn mono(&self, sets: [&[usize]; 3]) -> bool {
        let vol: u64 = sets.iter().map(|s| s.len() as u64).product();
        vol > 0 && self.x.count_in_box(sets) == vol
    }

    /// Coordinates present along each fiber through `c`, `c`'s own included.
    fn local_fibers(&self, c: Cell) -> [Vec<usize>; 3] {
        [0, 1, 2].map(|m| {
            self.x
                .fiber(m, c.fiber_key(m))
                .iter()
                .map(|&id| self.x.cell(id).coord(m))
                .collect()
        })
    }

    /// All values `v` of `mode` for which replacing that mode's set by `{v}` stays
    /// monochromatic, restricted to `pool`.
    fn closure(&self, sets: [&[usize]; 3], mode: usize, pool: &[usize]) -> Vec<usize> {
        pool.iter()
            .copied()
            .filter(|&v| {
                let single = [v];
                let mut s = sets;
                s[mode] = &single;
                self.mono(s)
            })
            .collect()
    }

    fn find(&self, c: Cell) -> Option<Block> {
        let fibers = self.local_fibers(c);
        if (0..3).any(|m| fibers[m].len() < self.p.min_block_dims[m]) {
            return None;
        }
        let mut modes = [0, 1, 2];
        modes.sort_by_key(|&m| (fibers[m].len(), m));
        let bits = fibers[modes[0]].len() + fibers[modes[1]].len() - 2;
        if bits <= EXHAUSTIVE_LIMIT_BITS {
            self.exhaustive(c, &fibers, modes)
        } else {
            self.greedy(c, &fibers)
        }
    }

    /// Enumerates every subset of the two shortest local fibers (own coordinate
    /// always included) and closes the third mode. Finds a qualifying block
    /// whenever one contains `c`; returns the largest.
    fn exhaustive(&self, c: Cell, fibers: &[Vec<usize>; 3], modes: [usize; 3]) -> Option<Block> {
        let [ma, mb, mc] = modes;
        let others = |m: usize| -> Vec<usize> { fibers[m].iter().copied().filter(|&v| v != c.coord(m)).collect() };
        let (oa, ob) = (others(ma), others(mb));
        let mut best: Option<Block> = None;
        for mask_a in 0u32..(1 << oa.len()) {
            let sa = subset(c.coord(ma), &oa, mask_a);
            if sa.len() < self.p.min_block_dims[ma] {
                continue;
            }
            for mask_b in 0u32..(1 << ob.len()) {
                let sb = subset(c.coord(mb), &ob, mask_b);
                if sb.len() < self.p.min_block_dims[mb] {
                    continue;
                }
                let mut sets: [&[usize]; 3] = [&[], &[], &[]];
                sets[ma] = &sa;
                sets[mb] = &sb;
                let sc = self.closure(sets, mc, &fibers[mc]);
                if sc.binary_search(&c.coord(mc)).is_err() {
                    continue;
                }
                let mut shape = [0; 3];
                shape[ma] = sa.len();
                shape[mb] = sb.len();
                shape[mc] = sc.len();
                if !self.p.is_nontrivial(shape) {
                    continue;
                }
                let mut owned: [Vec<usize>; 3] = Default::default();
                owned[ma] = sa.clone();
                owned[mb] = sb.clone();
                owned[mc] = sc;
                let cand = Block::from_sets(owned);
                let better = match &best {
                    None => true,
                    Some(b) => cand.volume() > b.volume() || (cand.volume() == b.volume() && cand < *b),
                };
                if better {
                    best = Some(cand);
                }
            }
        }
        best
    }

    /// Grows a monochromatic block from a seed by adding one slice at a time,
    /// always extending the currently smallest mode that can grow and
    /// preferring indices whose slice through the local neighbourhood holds
    /// the most ones.
    fn grow(&self, mut sets: [Vec<usize>; 3], fibers: &[Vec<usize>; 3], support: &[HashMap<usize, u64>; 3]) -> Block {
        loop {
            let mut order = [0, 1, 2];
            order.sort_by_key(|&m| (sets[m].len(), m));
            let mut grew = false;
            for &m in &order {
                let pool: Vec<usize> = fibers[m]
                    .iter()
                    .copied()
                    .filter(|v| sets[m].binary_search(v).is_err())
                    .collect();
                let view = [&sets[0][..], &sets[1][..], &sets[2][..]];
                let feasible = self.closure(view, m, &pool);
                if let Some(&v) = feasible.iter().max_by_key(|&&v| (support[m][&v], std::cmp::Reverse(v))) {
                    let pos = sets[m].binary_search(&v).unwrap_err();
                    sets[m].insert(pos, v);
                    grew = true;
                    break;
                }
            }
            if !grew {
                return Block::from_sets(sets);
            }
        }
    }

    fn greedy(&self, c: Cell, fibers: &[Vec<usize>; 3]) -> Option<Block> {
        let support: [HashMap<usize, u64>; 3] = [0, 1, 2].map(|m| {
            fibers[m]
                .iter()
                .map(|&v| {
                    let single = [v];
                    let mut s = [&fibers[0][..], &fibers[1][..], &fibers[2][..]];
                    s[m] = &single;
                    (v, self.x.count_in_box(s))
                })
                .collect()
        });
        let start = [vec![c.i], vec![c.j], vec![c.k]];
        let b = self.grow(start, fibers, &support);
        if self.p.is_nontrivial(b.shape()) {
            return Some(b);
        }
        // retry from 2x2x2 seeds defined by c and an opposite corner
        let cap = {
            let len = fibers.iter().map(Vec::len).max().unwrap_or(0);
            len * len
        };
        let mut tried = 0;
        let mut best: Option<Block> = None;
        let seeds_box = [&fibers[0][..], &fibers[1][..], &fibers[2][..]];
        let mut seeds = Vec::new();
        self.x.for_each_in_box(seeds_box, |id| {
            let o = self.x.cell(id);
            if o.hamming(&c) == 3 {
                seeds.push(o);
            }
        });
        for o in seeds {
            if tried >= cap {
                break;
            }
            let seed = Block::convex_hull(&[c, o]);
            if !self.mono(seed.sets()) {
                continue;
            }
            tried += 1;
            let sets = [0, 1, 2].map(|m| seed.indices(m).to_vec());
            let b = self.grow(sets, fibers, &support);
            if self.p.is_nontrivial(b.shape()) && best.as_ref().is_none_or(|x| b.volume() > x.volume()) {
                best = Some(b);
            }
        }
        best
    }
}

fn subset(own: usize, others: &[usize], mask: u32) -> Vec<usize> {
    let mut v: Vec<usize> = others
        .iter()
        .enumerate()
        .filter(|(bit, _)| mask & (1 << bit) != 0)
        .map(|(_, &x)| x)
        .collect();
    v.push(own);
    v.sort_unstable();
    v
}

/// Finds non-trivial monochromatic blocks covering the ones of `x` that lie in
/// none of the `existing` blocks. Every such one that belongs to some
/// non-trivial monochromatic block of `x` ends up inside a returned block;
/// the remaining ones are reported as noise.
pub fn find_nontrivial_monochromatic(
    x: &SparseBinaryTensor,
    existing: &[Block],
    p: &MergeParams,
) -> Result<MonoOutcome> {
    p.validate()?;
    let mut covered = vec![false; x.nnz()];
    for b in existing {
        x.for_each_in_box(b.sets(), |id| covered[id as usize] = true);
    }
    let mut order: Vec<u32> = (0..x.nnz() as u32).filter(|&id| !covered[id as usize]).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(p.seed));

    let search = MonoSearch { x, p };
    let mut out = MonoOutcome::default();
    for id in order {
        if covered[id as usize] {
            continue;
        }
        if let Some(b) = search.find(x.cell(id)) {
            debug_assert!(b.contains(&x.cell(id)) && b.is_monochromatic(x));
            x.for_each_in_box(b.sets(), |o| covered[o as usize] = true);
            out.blocks.push(b);
        }
    }
    out.noise = (0..x.nnz())
        .filter(|&id| !covered[id])
        .map(|id| x.cell(id as u32))
        .collect();
    Ok(out)
}

/// One executed merge.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeRecord {
    pub left: Block,
    pub right: Block,
    pub merged: Block,
    /// Region density at execution time; always above the threshold.
    pub density: Density,
    /// Zeros of the tensor the merge newly claimed (not covered before).
    pub new_zeros: u64,
}

#[derive(Debug, Clone, Default)]
pub struct MergeOutcome {
    pub blocks: Vec<Block>,
    pub merges: Vec<MergeRecord>,
}

/// Zeros of the tensor inside at least one live block, as sorted mode-0
/// coordinates per `(j, k)` fiber. Merged blocks contain both their parents,
/// so the set only grows.
#[derive(Default)]
struct CoveredZeros {
    fibers: FxHashMap<(usize, usize), Vec<usize>>,
    total: u64,
}

impl CoveredZeros {
    fn cover(&mut self, x: &SparseBinaryTensor, b: &Block) {
        for &j in b.indices(1) {
            for &k in b.indices(2) {
                let ones = x.fiber(0, (j, k));
                let mut zeros = b
                    .indices(0)
                    .iter()
                    .copied()
                    .filter(|&i| ones.binary_search_by_key(&i, |&id| x.cell(id).i).is_err())
                    .peekable();
                if zeros.peek().is_none() {
                    continue;
                }
                let fiber = self.fibers.entry((j, k)).or_default();
                for i in zeros {
                    if let Err(pos) = fiber.binary_search(&i) {
                        fiber.insert(pos, i);
                        self.total += 1;
                    }
                }
            }
        }
    }

    fn count(&self, sets: [&[usize]; 3]) -> u64 {
        if self.total == 0 || sets.iter().any(|s| s.is_empty()) {
            return 0;
        }
        let mut n = 0;
        for &j in sets[1] {
            for &k in sets[2] {
                if let Some(f) = self.fibers.get(&(j, k)) {
                    n += sets[0].iter().filter(|i| f.binary_search(i).is_ok()).count() as u64;
                }
            }
        }
        n
    }
}

/// Live blocks with per-mode inverted indices.
struct BlockPool<'x> {
    x: &'x SparseBinaryTensor,
    slots: Vec<Option<Block>>,
    /// Ones of the tensor inside each slot's block.
    ones: Vec<u64>,
    index: [HashMap<usize, Vec<usize>>; 3],
    by_value: HashMap<Block, usize>,
    zeros: CoveredZeros,
}

impl<'x> BlockPool<'x> {
    fn new(x: &'x SparseBinaryTensor, blocks: Vec<Block>) -> Self {
        let mut pool = BlockPool {
            x,
            slots: Vec::new(),
            ones: Vec::new(),
            index: Default::default(),
            by_value: HashMap::new(),
            zeros: CoveredZeros::default(),
        };
        for b in blocks {
            if !b.is_empty() {
                pool.insert(b);
            }
        }
        pool
    }

    /// Inserts unless an identical block is live; returns the live id.
    fn insert(&mut self, b: Block) -> usize {
        if let Some(&id) = self.by_value.get(&b) {
            return id;
        }
        let id = self.slots.len();
        for m in 0..3 {
            for &v in b.indices(m) {
                self.index[m].entry(v).or_default().push(id);
            }
        }
        self.zeros.cover(self.x, &b);
        self.ones.push(b.ones_in(self.x));
        self.by_value.insert(b.clone(), id);
        self.slots.push(Some(b));
        id
    }

    fn remove(&mut self, id: usize) -> Option<Block> {
        let b = self.slots[id].take()?;
        self.by_value.remove(&b);
        Some(b)
    }

    fn get(&self, id: usize) -> Option<&Block> {
        self.slots[id].as_ref()
    }

    fn live_ids(&self) -> Vec<usize> {
        (0..self.slots.len()).filter(|&i| self.slots[i].is_some()).collect()
    }

    /// Live blocks sharing an index with `b` in any of the given modes, ascending.
    fn touching(&self, b: &Block, modes: &[usize]) -> Vec<usize> {
        let mut out = Vec::new();
        for &m in modes {
            for v in b.indices(m) {
                if let Some(ids) = self.index[m].get(v) {
                    out.extend(ids.iter().copied().filter(|&id| self.slots[id].is_some()));
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// `(hits, region)` of merging slots `a` and `b`, as `merge_region_counts`
    /// would report against every other live block.
    fn region_counts(&self, a: usize, b: usize, merged: &Block, threshold: f64) -> Option<(u64, u64)> {
        let (ba, bb) = (self.get(a).unwrap(), self.get(b).unwrap());
        let both = ba.intersect(bb);
        let region = merged.volume() + both.volume() - ba.volume() - bb.volume();
        if region == 0 {
            return Some((0, 0));
        }
        let ones = merged.ones_in(self.x) + both.ones_in(self.x) - self.ones[a] - self.ones[b];
        // covered zeros can only raise the count
        if (ones + self.zeros.total.min(region - ones)) as f64 <= threshold * region as f64 {
            return None;
        }
        let z = &self.zeros;
        let claimed = z.count(merged.sets()) + z.count(both.sets()) - z.count(ba.sets()) - z.count(bb.sets());
        Some((ones + claimed, region))
    }

    fn into_blocks(self) -> Vec<Block> {
        self.slots.into_iter().flatten().collect()
    }
}

struct Candidate {
    partner: usize,
    merged: Block,
    density: Density,
    new_zeros: u64,
}

fn better(a: &Candidate, b: &Candidate) -> bool {
    a.density > b.density
        || (a.density == b.density
            && (a.merged.volume() > b.merged.volume()
                || (a.merged.volume() == b.merged.volume() && a.merged < b.merged)))
}

/// Scores every partner of `pivot` against the pool as it stands.
fn best_partner(pool: &BlockPool<'_>, pivot: usize, partners: &[usize], p: &MergeParams) -> Option<Candidate> {
    let b = pool.get(pivot)?;
    let mut best: Option<Candidate> = None;
    for &cid in partners {
        let c = pool.get(cid).unwrap();
        debug_assert!(!b.is_independent(c));
        let merged = b.merge(c);
        let Some((hits, region)) = pool.region_counts(pivot, cid, &merged, p.density_threshold) else {
            continue;
        };
        let density = if region == 0 {
            Density::from_integer(1)
        } else {
            Density::new(hits, region)
        };
        if !exceeds(density, p.density_threshold) {
            continue;
        }
        let cand = Candidate {
            partner: cid,
            merged,
            density,
            new_zeros: region - hits,
        };
        if p.strategy == MergeStrategy::First {
            return Some(cand);
        }
        if best.as_ref().is_none_or(|cur| better(&cand, cur)) {
            best = Some(cand);
        }
    }
    best
}

/// Sequential merge phase: the reference semantics.
///
/// Blocks are processed from a queue. A popped block is compared with every
/// live block that shares an index with it; the chosen gated merge replaces
/// both blocks and the result goes to the back of the queue. Passes repeat
/// until one completes without merging.
pub fn merge_phase(x: &SparseBinaryTensor, blocks: Vec<Block>, p: &MergeParams) -> Result<MergeOutcome> {
    p.validate()?;
    let mut pool = BlockPool::new(x, blocks);
    let mut merges = Vec::new();
    loop {
        let mut merged_any = false;
        let mut queue: VecDeque<usize> = pool.live_ids().into();
        while let Some(bid) = queue.pop_front() {
            let Some(b) = pool.get(bid) else { continue };
            let partners: Vec<usize> = pool.touching(b, &[0, 1, 2]).into_iter().filter(|&c| c != bid).collect();
            let Some(cand) = best_partner(&pool, bid, &partners, p) else {
                continue;
            };
            let right = pool.remove(cand.partner).unwrap();
            let left = pool.remove(bid).unwrap();
            debug!(
                "merge {:?} + {:?} -> {:?} at density {}",
                left.shape(),
                right.shape(),
                cand.merged.shape(),
                cand.density
            );
            let id = pool.insert(cand.merged.clone());
            queue.push_back(id);
            merges.push(MergeRecord {
                left,
                right,
                merged: cand.merged,
                density: cand.density,
                new_zeros: cand.new_zeros,
            });
            merged_any = true;
        }
        if !merged_any {
            break;
        }
    }
    Ok(MergeOutcome {
        blocks: pool.into_blocks(),
        merges,
    })
}

/// Parallel merge phase. Each round greedily picks a maximal set of pairwise
/// independent pivots, scores every pivot's partners concurrently against the
/// round's snapshot and applies all chosen merges at once. A partner chosen
/// by several pivots is merged into each of them and all results are kept.
/// Once a round merges nothing, a sequential pass settles the remaining pairs.
pub fn merge_phase_parallel(x: &SparseBinaryTensor, blocks: Vec<Block>, p: &MergeParams) -> Result<MergeOutcome> {
    p.validate()?;
    let mut pool = BlockPool::new(x, blocks);
    let mut merges = Vec::new();
    loop {
        let mut pivots: Vec<usize> = Vec::new();
        let mut is_pivot = vec![false; pool.slots.len()];
        for id in pool.live_ids() {
            let b = pool.get(id).unwrap();
            if pivots.iter().all(|&q| pool.get(q).unwrap().is_independent(b)) {
                pivots.push(id);
                is_pivot[id] = true;
            }
        }
        let pool_ref = &pool;
        let chosen: Vec<(usize, Candidate)> = pivots
            .par_iter()
            .filter_map(|&pid| {
                let b = pool_ref.get(pid).unwrap();
                let partners: Vec<usize> = pool_ref
                    .touching(b, &[0, 1, 2])
                    .into_iter()
                    .filter(|&c| !is_pivot[c])
                    .collect();
                best_partner(pool_ref, pid, &partners, p).map(|c| (pid, c))
            })
            .collect();
        if chosen.is_empty() {
            break;
        }
        let mut consumed: Vec<usize> = Vec::new();
        let mut results: Vec<Block> = Vec::new();
        for (pid, c) in chosen {
            merges.push(MergeRecord {
                left: pool.get(pid).unwrap().clone(),
                right: pool.get(c.partner).unwrap().clone(),
                merged: c.merged.clone(),
                density: c.density,
                new_zeros: c.new_zeros,
            });
            consumed.push(pid);
            consumed.push(c.partner);
            results.push(c.merged);
        }
        for id in consumed {
            pool.remove(id);
        }
        for b in results {
            pool.insert(b);
        }
    }
    let mut rest = merge_phase(x, pool.into_blocks(), p)?;
    merges.append(&mut rest.merges);
    Ok(MergeOutcome {
        blocks: rest.blocks,
        merges,
    })
}
