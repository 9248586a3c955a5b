//! Blocks: rank-1 binary sub-tensors given by one index set per mode.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::tensor::{Cell, Dims, SparseBinaryTensor};

/// Exact fraction used for densities.
pub type Density = Ratio<u64>;

/// Outer product of three binary vectors, stored as their supports `(I, J, K)`.
///
/// A block with any empty index set is the empty block; it contains no cells.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Block {
    sets: [Vec<usize>; 3],
}

fn sorted(v: impl IntoIterator<Item = usize>) -> Vec<usize> {
    let mut v: Vec<usize> = v.into_iter().collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn union(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut x, mut y) = (0, 0);
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => {
                out.push(a[x]);
                x += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[y]);
                y += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(a[x]);
                x += 1;
                y += 1;
            }
        }
    }
    out.extend_from_slice(&a[x..]);
    out.extend_from_slice(&b[y..]);
    out
}

pub(crate) fn intersection(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let (mut x, mut y) = (0, 0);
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[x]);
                x += 1;
                y += 1;
            }
        }
    }
    out
}

fn disjoint(a: &[usize], b: &[usize]) -> bool {
    let (mut x, mut y) = (0, 0);
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => return false,
        }
    }
    true
}

impl Block {
    pub fn new(
        rows: impl IntoIterator<Item = usize>,
        cols: impl IntoIterator<Item = usize>,
        tubes: impl IntoIterator<Item = usize>,
    ) -> Self {
        Block {
            sets: [sorted(rows), sorted(cols), sorted(tubes)],
        }
    }

    pub fn from_sets(sets: [Vec<usize>; 3]) -> Self {
        let [a, b, c] = sets;
        Self::new(a, b, c)
    }

    pub fn empty() -> Self {
        Block {
            sets: Default::default(),
        }
    }

    /// The smallest rank-1 binary tensor containing every given cell: the
    /// Cartesian product of the per-mode projections.
    pub fn convex_hull<'a>(cells: impl IntoIterator<Item = &'a Cell>) -> Self {
        let mut sets: [Vec<usize>; 3] = Default::default();
        for c in cells {
            for (mode, set) in sets.iter_mut().enumerate() {
                set.push(c.coord(mode));
            }
        }
        Self::from_sets(sets)
    }

    pub fn is_empty(&self) -> bool {
        self.sets.iter().any(Vec::is_empty)
    }

    #[inline]
    pub fn indices(&self, mode: usize) -> &[usize] {
        &self.sets[mode]
    }

    pub fn sets(&self) -> [&[usize]; 3] {
        [&self.sets[0], &self.sets[1], &self.sets[2]]
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.sets[0].len(), self.sets[1].len(), self.sets[2].len()]
    }

    pub fn volume(&self) -> u64 {
        self.sets.iter().map(|s| s.len() as u64).product()
    }

    pub fn contains(&self, c: &Cell) -> bool {
        (0..3).all(|m| self.sets[m].binary_search(&c.coord(m)).is_ok())
    }

    pub fn fits(&self, dims: Dims) -> bool {
        (0..3).all(|m| self.sets[m].last().is_none_or(|&x| x < dims.get(m)))
    }

    /// All cells of `I × J × K` in lexicographic order.
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        let [a, b, c] = &self.sets;
        a.iter()
            .flat_map(move |&i| b.iter().flat_map(move |&j| c.iter().map(move |&k| Cell::new(i, j, k))))
    }

    /// `self ⊞ other`: per-mode union of the index sets.
    pub fn merge(&self, other: &Block) -> Block {
        Block {
            sets: [0, 1, 2].map(|m| union(&self.sets[m], &other.sets[m])),
        }
    }

    /// Per-mode intersection; its cells are exactly the cells in both blocks.
    pub fn intersect(&self, other: &Block) -> Block {
        Block {
            sets: [0, 1, 2].map(|m| intersection(&self.sets[m], &other.sets[m])),
        }
    }

    /// Whether the two blocks share no index in any mode.
    pub fn is_independent(&self, other: &Block) -> bool {
        (0..3).all(|m| disjoint(&self.sets[m], &other.sets[m]))
    }

    /// Whether every cell of `self` lies in `other`.
    pub fn is_within(&self, other: &Block) -> bool {
        self.is_empty() || (0..3).all(|m| self.sets[m].iter().all(|x| other.sets[m].binary_search(x).is_ok()))
    }

    /// Number of non-zeros of `x` inside the block.
    pub fn ones_in(&self, x: &SparseBinaryTensor) -> u64 {
        x.count_in_box(self.sets())
    }

    /// Fraction of the block's cells that are 1 in `x`.
    pub fn density(&self, x: &SparseBinaryTensor) -> Density {
        let vol = self.volume();
        if vol == 0 {
            return Density::from_integer(0);
        }
        Density::new(self.ones_in(x), vol)
    }

    pub fn is_monochromatic(&self, x: &SparseBinaryTensor) -> bool {
        !self.is_empty() && self.ones_in(x) == self.volume()
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:?}, {:?}, {:?})", self.sets[0], self.sets[1], self.sets[2])
    }
}

/// Density of ones in `X ∨ others` over the cells of `a ⊞ b` that lie in
/// neither `a` nor `b`. Covering a zero that another block already covers
/// costs nothing, so such cells count as ones. An empty region yields 1.
pub fn merge_density<'a>(
    x: &SparseBinaryTensor,
    a: &Block,
    b: &Block,
    others: impl IntoIterator<Item = &'a Block>,
) -> Density {
    match merge_region_counts(x, a, b, others) {
        (_, 0) => Density::from_integer(1),
        (hits, region) => Density::new(hits, region),
    }
}

/// `(hits, region)`: size of the region `a ⊞ b` adds and how many of its
/// cells are ones of `x` or covered by `others`.
pub fn merge_region_counts<'a>(
    x: &SparseBinaryTensor,
    a: &Block,
    b: &Block,
    others: impl IntoIterator<Item = &'a Block>,
) -> (u64, u64) {
    let merged = a.merge(b);
    let both = a.intersect(b);
    let region = merged.volume() + both.volume() - a.volume() - b.volume();
    if region == 0 {
        return (0, 0);
    }
    let ones = merged.ones_in(x) + both.ones_in(x) - a.ones_in(x) - b.ones_in(x);

    let mut claimed: HashSet<Cell> = HashSet::new();
    for d in others {
        let overlap = d.intersect(&merged);
        if overlap.is_empty() {
            continue;
        }
        for c in overlap.cells() {
            if !a.contains(&c) && !b.contains(&c) && !x.contains(&c) {
                claimed.insert(c);
            }
        }
    }
    (ones + claimed.len() as u64, region)
}

/// Boolean sum of the blocks as a sparse tensor.
pub fn reconstruct<'a>(blocks: impl IntoIterator<Item = &'a Block>, dims: Dims) -> Result<SparseBinaryTensor> {
    let mut cells = Vec::new();
    for b in blocks {
        if !b.fits(dims) {
            return Err(Error::invalid(format!("block {b} exceeds dims {dims}")));
        }
        cells.extend(b.cells());
    }
    cells.sort_unstable();
    cells.dedup();
    Ok(SparseBinaryTensor::from_sorted_unchecked(dims, cells))
}

/// Ordered blocks plus a per-cell count of how many blocks contain each cell.
#[derive(Debug, Clone, Default)]
pub struct BlockList {
    blocks: Vec<Block>,
    coverage: HashMap<Cell, u32>,
}

impl BlockList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, b: Block) {
        for c in b.cells() {
            *self.coverage.entry(c).or_insert(0) += 1;
        }
        self.blocks.push(b);
    }

    pub fn remove(&mut self, idx: usize) -> Block {
        let b = self.blocks.remove(idx);
        for c in b.cells() {
            if let Some(n) = self.coverage.get_mut(&c) {
                *n -= 1;
                if *n == 0 {
                    self.coverage.remove(&c);
                }
            }
        }
        b
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Block> {
        self.blocks.iter()
    }

    pub fn into_blocks(self) -> Vec<Block> {
        self.blocks
    }

    /// Number of blocks containing `c`.
    pub fn coverage(&self, c: &Cell) -> u32 {
        self.coverage.get(c).copied().unwrap_or(0)
    }

    pub fn is_covered(&self, c: &Cell) -> bool {
        self.coverage.contains_key(c)
    }

    /// Number of distinct covered cells.
    pub fn covered_cells(&self) -> usize {
        self.coverage.len()
    }

    pub fn reconstruct(&self, dims: Dims) -> Result<SparseBinaryTensor> {
        reconstruct(&self.blocks, dims)
    }

    pub fn to_text(&self) -> String {
        blocks_to_text(&self.blocks)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_blocks(&self.blocks, path)
    }
}

impl FromIterator<Block> for BlockList {
    fn from_iter<T: IntoIterator<Item = Block>>(iter: T) -> Self {
        let mut list = BlockList::new();
        for b in iter {
            list.push(b);
        }
        list
    }
}

impl<'a> IntoIterator for &'a BlockList {
    type Item = &'a Block;
    type IntoIter = std::slice::Iter<'a, Block>;

    fn into_iter(self) -> Self::IntoIter {
        self.blocks.iter()
    }
}

/// Block text format: three lines of 1-based indices (rows, columns, tubes)
/// per block, blocks separated by a blank line.
pub fn blocks_to_text(blocks: &[Block]) -> String {
    let mut out = String::new();
    for (n, b) in blocks.iter().enumerate() {
        if n > 0 {
            out.push('\n');
        }
        for set in &b.sets {
            let line: Vec<String> = set.iter().map(|x| (x + 1).to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    out
}

pub fn save_blocks(blocks: &[Block], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), blocks_to_text(blocks).as_bytes())
}

pub fn parse_blocks(reader: impl Read) -> Result<Vec<Block>> {
    let mut blocks = Vec::new();
    let mut pending: Vec<Vec<usize>> = Vec::new();
    let mut start_line = 0;
    let flush = |pending: &mut Vec<Vec<usize>>, blocks: &mut Vec<Block>, line: usize| match pending.len() {
        0 => Ok(()),
        3 => {
            let [a, b, c]: [Vec<usize>; 3] = std::mem::take(pending).try_into().unwrap();
            blocks.push(Block::new(a, b, c));
            Ok(())
        }
        n => Err(Error::Parse {
            line,
            msg: format!("block has {n} index lines, expected 3"),
        }),
    };
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let line = line.trim();
        if line.is_empty() {
            flush(&mut pending, &mut blocks, start_line)?;
            continue;
        }
        if pending.is_empty() {
            start_line = lineno;
        }
        if pending.len() == 3 {
            return Err(Error::Parse {
                line: lineno,
                msg: "missing blank line between blocks".into(),
            });
        }
        let mut set = Vec::new();
        for tok in line.split_whitespace() {
            let v: usize = tok.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad index {tok:?}"),
            })?;
            if v == 0 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "indices are 1-based; found 0".into(),
                });
            }
            set.push(v - 1);
        }
        pending.push(set);
    }
    flush(&mut pending, &mut blocks, start_line)?;
    Ok(blocks)
}

pub fn load_blocks(path: impl AsRef<Path>) -> Result<Vec<Block>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_blocks(f)
}
