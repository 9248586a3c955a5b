//! Sparse binary 3-way tensors.
//!
//! A tensor is stored as the lexicographically sorted list of its non-zero
//! cells plus one fiber index per mode. Cell ids are positions in the sorted
//! list; every fiber lists its cell ids in increasing order, which is also the
//! increasing order of the fiber's varying coordinate.

use std::fmt;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

/// 0-based coordinates of one tensor element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

impl Cell {
    pub const fn new(i: usize, j: usize, k: usize) -> Self {
        Cell { i, j, k }
    }

    #[inline]
    pub fn coord(&self, mode: usize) -> usize {
        match mode {
            0 => self.i,
            1 => self.j,
            2 => self.k,
            _ => panic!("mode {mode} out of range"),
        }
    }

    #[inline]
    pub fn with_coord(mut self, mode: usize, value: usize) -> Self {
        match mode {
            0 => self.i = value,
            1 => self.j = value,
            2 => self.k = value,
            _ => panic!("mode {mode} out of range"),
        }
        self
    }

    /// The pair of coordinates that stay fixed along a mode-`mode` fiber.
    #[inline]
    pub fn fiber_key(&self, mode: usize) -> (usize, usize) {
        match mode {
            0 => (self.j, self.k),
            1 => (self.i, self.k),
            2 => (self.i, self.j),
            _ => panic!("mode {mode} out of range"),
        }
    }

    /// Number of coordinates in which the two cells differ.
    pub fn hamming(&self, other: &Cell) -> usize {
        (self.i != other.i) as usize + (self.j != other.j) as usize + (self.k != other.k) as usize
    }
}

impl From<(usize, usize, usize)> for Cell {
    fn from((i, j, k): (usize, usize, usize)) -> Self {
        Cell { i, j, k }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.i, self.j, self.k)
    }
}

/// Mode sizes `(n, m, l)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims(pub [usize; 3]);

impl Dims {
    pub const fn new(n: usize, m: usize, l: usize) -> Self {
        Dims([n, m, l])
    }

    #[inline]
    pub fn get(&self, mode: usize) -> usize {
        self.0[mode]
    }

    pub fn volume(&self) -> u64 {
        self.0.iter().map(|&d| d as u64).product()
    }

    pub fn contains(&self, c: &Cell) -> bool {
        c.i < self.0[0] && c.j < self.0[1] && c.k < self.0[2]
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.0[0], self.0[1], self.0[2])
    }
}

type FiberMap = FxHashMap<(usize, usize), Vec<u32>>;

/// Immutable sparse binary tensor with per-mode fiber indices.
#[derive(Debug, Clone)]
pub struct SparseBinaryTensor {
    dims: Dims,
    cells: Vec<Cell>,
    fibers: [FiberMap; 3],
}

impl PartialEq for SparseBinaryTensor {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.cells == other.cells
    }
}

impl Eq for SparseBinaryTensor {}

impl SparseBinaryTensor {
    /// Builds a tensor from any collection of cells. Duplicates collapse.
    pub fn new(dims: Dims, cells: impl IntoIterator<Item = Cell>) -> Result<Self> {
        let mut cells: Vec<Cell> = cells.into_iter().collect();
        if let Some(bad) = cells.iter().find(|c| !dims.contains(c)) {
            return Err(Error::OutOfBounds { cell: *bad, dims });
        }
        cells.sort_unstable();
        cells.dedup();
        Ok(Self::from_sorted_unchecked(dims, cells))
    }

    pub fn empty(dims: Dims) -> Self {
        Self::from_sorted_unchecked(dims, Vec::new())
    }

    pub(crate) fn from_sorted_unchecked(dims: Dims, cells: Vec<Cell>) -> Self {
        assert!(cells.len() <= u32::MAX as usize, "too many non-zeros");
        let mut fibers: [FiberMap; 3] = Default::default();
        for (id, c) in cells.iter().enumerate() {
            for (mode, map) in fibers.iter_mut().enumerate() {
                map.entry(c.fiber_key(mode)).or_default().push(id as u32);
            }
        }
        SparseBinaryTensor { dims, cells, fibers }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Number of non-zeros; for binary data this is also the squared Frobenius norm.
    pub fn nnz(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn density(&self) -> f64 {
        let vol = self.dims.volume();
        if vol == 0 {
            0.0
        } else {
            self.cells.len() as f64 / vol as f64
        }
    }

    /// Sorted non-zero cells.
    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    #[inline]
    pub fn cell(&self, id: u32) -> Cell {
        self.cells[id as usize]
    }

    pub fn id_of(&self, c: &Cell) -> Option<u32> {
        self.cells.binary_search(c).ok().map(|p| p as u32)
    }

    pub fn contains(&self, c: &Cell) -> bool {
        self.cells.binary_search(c).is_ok()
    }

    /// Cell ids along the mode-`mode` fiber with the given fixed coordinates.
    pub fn fiber(&self, mode: usize, key: (usize, usize)) -> &[u32] {
        self.fibers[mode].get(&key).map_or(&[], Vec::as_slice)
    }

    /// Largest fiber population over all modes.
    pub fn max_fiber_len(&self) -> usize {
        self.fibers
            .iter()
            .flat_map(|m| m.values().map(Vec::len))
            .max()
            .unwrap_or(0)
    }

    /// Ids of all non-zeros that differ from cell `id` in exactly one coordinate.
    pub fn neighbor_ids(&self, id: u32) -> impl Iterator<Item = u32> + '_ {
        let c = self.cells[id as usize];
        (0..3).flat_map(move |mode| {
            self.fiber(mode, c.fiber_key(mode))
                .iter()
                .copied()
                .filter(move |&n| n != id)
        })
    }

    /// All non-zero cells that share a fiber with `c`, excluding `c`.
    pub fn fiber_neighbors(&self, c: &Cell) -> Result<Vec<Cell>> {
        let id = self.id_of(c).ok_or(Error::NotACell(*c))?;
        Ok(self.neighbor_ids(id).map(|n| self.cell(n)).collect())
    }

    fn check_dims(&self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimMismatch(self.dims, other.dims));
        }
        Ok(())
    }

    /// Number of cells set in exactly one of the two tensors.
    pub fn xor_count(&self, other: &Self) -> Result<u64> {
        self.check_dims(other)?;
        let common = self.intersection_count(other);
        Ok((self.nnz() + other.nnz()) as u64 - 2 * common)
    }

    pub fn intersection_count(&self, other: &Self) -> u64 {
        let (mut a, mut b) = (self.cells.iter().peekable(), other.cells.iter().peekable());
        let mut n = 0;
        while let (Some(x), Some(y)) = (a.peek(), b.peek()) {
            match x.cmp(y) {
                std::cmp::Ordering::Less => {
                    a.next();
                }
                std::cmp::Ordering::Greater => {
                    b.next();
                }
                std::cmp::Ordering::Equal => {
                    n += 1;
                    a.next();
                    b.next();
                }
            }
        }
        n
    }

    /// Boolean sum (element-wise OR) of tensors of equal dims.
    pub fn boolean_or<'a>(dims: Dims, tensors: impl IntoIterator<Item = &'a SparseBinaryTensor>) -> Result<Self> {
        let mut cells = Vec::new();
        for t in tensors {
            if t.dims != dims {
                return Err(Error::DimMismatch(dims, t.dims));
            }
            cells.extend_from_slice(&t.cells);
        }
        cells.sort_unstable();
        cells.dedup();
        Ok(Self::from_sorted_unchecked(dims, cells))
    }

    /// Picks the mode whose fibers are walked when scanning a box: the one with
    /// the most selected indices, so that the number of fiber lookups is smallest.
    fn scan_mode(sets: [&[usize]; 3]) -> usize {
        (0..3).max_by_key(|&m| (sets[m].len(), 3 - m)).unwrap()
    }

    /// Calls `f` with the id of every non-zero inside `I × J × K`.
    /// Index sets must be sorted.
    pub fn for_each_in_box(&self, sets: [&[usize]; 3], mut f: impl FnMut(u32)) {
        if sets.iter().any(|s| s.is_empty()) {
            return;
        }
        let vary = Self::scan_mode(sets);
        let (a, b) = match vary {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for &x in sets[a] {
            for &y in sets[b] {
                let fiber = self.fiber(vary, (x, y));
                if fiber.is_empty() {
                    continue;
                }
                let wanted = sets[vary];
                if fiber.len() <= wanted.len() {
                    for &id in fiber {
                        if wanted.binary_search(&self.cells[id as usize].coord(vary)).is_ok() {
                            f(id);
                        }
                    }
                } else {
                    for &v in wanted {
                        let pos = fiber.binary_search_by_key(&v, |&id| self.cells[id as usize].coord(vary));
                        if let Ok(p) = pos {
                            f(fiber[p]);
                        }
                    }
                }
            }
        }
    }

    /// Number of non-zeros inside `I × J × K`.
    pub fn count_in_box(&self, sets: [&[usize]; 3]) -> u64 {
        let mut n = 0;
        self.for_each_in_box(sets, |_| n += 1);
        n
    }

    /// Parses the text format from a reader. See [`SparseBinaryTensor::load`].
    pub fn parse(reader: impl Read, dims_override: Option<Dims>) -> Result<Self> {
        let reader = BufReader::new(reader);
        let mut cells = Vec::new();
        let mut header_dims = None;
        let mut max = [0usize; 3];
        for (lineno, line) in reader.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line.map_err(|e| Error::Parse {
                line: lineno,
                msg: e.to_string(),
            })?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(d) = parse_dims_comment(comment) {
                    header_dims = Some(d);
                }
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 3 && toks.len() != 4 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected 3 or 4 fields, found {}", toks.len()),
                });
            }
            if toks.len() == 4 {
                let v: f64 = toks[3].parse().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("bad value token {:?}", toks[3]),
                })?;
                if v == 0.0 {
                    continue;
                }
            }
            let mut coords = [0usize; 3];
            for (mode, tok) in toks[..3].iter().enumerate() {
                let v: usize = tok.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("bad coordinate {tok:?}"),
                })?;
                if v == 0 {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: "coordinates are 1-based; found 0".into(),
                    });
                }
                coords[mode] = v - 1;
                max[mode] = max[mode].max(v);
            }
            cells.push(Cell::new(coords[0], coords[1], coords[2]));
        }
        let dims = match dims_override.or(header_dims) {
            Some(d) => d,
            None if cells.is_empty() => {
                return Err(Error::invalid("empty tensor file without dims; pass explicit dims"))
            }
            None => Dims(max),
        };
        Self::new(dims, cells)
    }

    /// Loads a tensor from the text format: one `i j k` or `i j k v` line per
    /// cell, 1-based, `#` comments ignored, value `0` lines skipped. A comment
    /// of the form `# dims n m l` fixes the dims; `dims_override` wins over it.
    pub fn load(path: impl AsRef<Path>, dims_override: Option<Dims>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(file, dims_override).map_err(|e| match e {
            Error::Parse { line, msg } => Error::Parse {
                line,
                msg: format!("{}: {msg}", path.display()),
            },
            other => other,
        })
    }

    /// Text serialization, sorted lexicographically, 1-based, no value column.
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let d = self.dims.0;
        let mut out = format!("# dims {} {} {}\n", d[0], d[1], d[2]);
        for c in &self.cells {
            writeln!(out, "{} {} {}", c.i + 1, c.j + 1, c.k + 1).unwrap();
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_text().as_bytes())
    }
}

fn parse_dims_comment(comment: &str) -> Option<Dims> {
    let mut toks = comment.split_whitespace();
    if toks.next()? != "dims" {
        return None;
    }
    let mut d = [0usize; 3];
    for slot in &mut d {
        *slot = toks.next()?.parse().ok()?;
    }
    if toks.next().is_some() || d.contains(&0) {
        return None;
    }
    Some(Dims(d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(dims: (usize, usize, usize), cells: &[(usize, usize, usize)]) -> SparseBinaryTensor {
        SparseBinaryTensor::new(Dims::new(dims.0, dims.1, dims.2), cells.iter().map(|&c| Cell::from(c))).unwrap()
    }

    fn full(n: usize) -> SparseBinaryTensor {
        let mut cells = Vec::new();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    cells.push((i, j, k));
                }
            }
        }
        t((n, n, n), &cells)
    }

    #[test]
    fn parse_basic() {
        let x = SparseBinaryTensor::parse("1 1 1\n2 2 2\n".as_bytes(), None).unwrap();
        assert_eq!(x.dims(), Dims::new(2, 2, 2));
        assert_eq!(x.cells(), &[Cell::new(0, 0, 0), Cell::new(1, 1, 1)]);
    }

    #[test]
    fn parse_empty_with_override() {
        let x = SparseBinaryTensor::parse("".as_bytes(), Some(Dims::new(3, 3, 3))).unwrap();
        assert_eq!(x.nnz(), 0);
        assert_eq!(x.dims(), Dims::new(3, 3, 3));
        assert!(SparseBinaryTensor::parse("".as_bytes(), None).is_err());
    }

    #[test]
    fn parse_collapses_duplicates_and_skips_zero_values() {
        let x = SparseBinaryTensor::parse("1 1 1\n1 1 1\n".as_bytes(), None).unwrap();
        assert_eq!(x.nnz(), 1);
        let x = SparseBinaryTensor::parse("# comment\n1 1 1 1\n2 2 2 0\n\n3 1 1 1.0\n".as_bytes(), None).unwrap();
        assert_eq!(x.cells(), &[Cell::new(0, 0, 0), Cell::new(2, 0, 0)]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = SparseBinaryTensor::parse("1 1 1\n1 x 1\n".as_bytes(), None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = SparseBinaryTensor::parse("1 1\n".as_bytes(), None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = SparseBinaryTensor::parse("0 1 1\n".as_bytes(), None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = SparseBinaryTensor::parse("4 1 1\n".as_bytes(), Some(Dims::new(3, 3, 3))).unwrap_err();
        assert!(matches!(err, Error::OutOfBounds { .. }));
    }

    #[test]
    fn xor_examples() {
        let x = t((2, 2, 2), &[(0, 0, 0), (1, 1, 1)]);
        let y = t((2, 2, 2), &[(1, 1, 1), (0, 1, 0)]);
        assert_eq!(x.xor_count(&x).unwrap(), 0);
        assert_eq!(x.xor_count(&y).unwrap(), 2);
        let e = SparseBinaryTensor::empty(Dims::new(2, 2, 2));
        let three = t((2, 2, 2), &[(0, 0, 0), (1, 0, 0), (0, 1, 1)]);
        assert_eq!(e.xor_count(&three).unwrap(), 3);
        let other = SparseBinaryTensor::empty(Dims::new(2, 2, 3));
        assert!(matches!(x.xor_count(&other), Err(Error::DimMismatch(..))));
    }

    #[test]
    fn or_examples() {
        let d = Dims::new(2, 2, 2);
        let x = t((2, 2, 2), &[(0, 0, 0), (1, 1, 1)]);
        let e = SparseBinaryTensor::empty(d);
        assert_eq!(SparseBinaryTensor::boolean_or(d, [&x, &x]).unwrap(), x);
        assert_eq!(SparseBinaryTensor::boolean_or(d, [&x, &e]).unwrap(), x);
        let a = t((2, 2, 2), &[(0, 0, 0)]);
        let b = t((2, 2, 2), &[(1, 0, 0)]);
        assert_eq!(
            SparseBinaryTensor::boolean_or(d, [&a, &b]).unwrap(),
            t((2, 2, 2), &[(0, 0, 0), (1, 0, 0)])
        );
        assert_eq!(SparseBinaryTensor::boolean_or(d, []).unwrap(), e);
    }

    #[test]
    fn neighbor_examples() {
        let x = t((2, 2, 2), &[(0, 0, 0)]);
        assert!(x.fiber_neighbors(&Cell::new(0, 0, 0)).unwrap().is_empty());
        let x = t((2, 2, 2), &[(0, 0, 0), (0, 0, 1), (1, 1, 1)]);
        assert_eq!(
            x.fiber_neighbors(&Cell::new(0, 0, 0)).unwrap(),
            vec![Cell::new(0, 0, 1)]
        );
        assert!(matches!(
            x.fiber_neighbors(&Cell::new(1, 0, 0)),
            Err(Error::NotACell(_))
        ));
        let f = full(2);
        for c in f.cells() {
            // brute force: every cell at Hamming distance one
            let expected = f.cells().iter().filter(|o| o.hamming(c) == 1).count();
            assert_eq!(expected, 3);
            assert_eq!(f.fiber_neighbors(c).unwrap().len(), expected);
        }
    }

    #[test]
    fn nnz_and_density() {
        let e = SparseBinaryTensor::empty(Dims::new(2, 2, 2));
        assert_eq!((e.nnz(), e.density()), (0, 0.0));
        let f = full(2);
        assert_eq!((f.nnz(), f.density()), (8, 1.0));
    }

    #[test]
    fn count_in_box_matches_scan() {
        let x = t((3, 3, 3), &[(0, 0, 0), (1, 1, 1), (2, 1, 0), (0, 2, 2), (1, 0, 2)]);
        let sets: [&[usize]; 3] = [&[0, 1], &[0, 1, 2], &[0, 2]];
        let brute = x
            .cells()
            .iter()
            .filter(|c| (0..3).all(|m| sets[m].contains(&c.coord(m))))
            .count() as u64;
        assert_eq!(x.count_in_box(sets), brute);
    }

    fn arb_tensor() -> impl Strategy<Value = SparseBinaryTensor> {
        (1usize..5, 1usize..5, 1usize..5).prop_flat_map(|(n, m, l)| {
            proptest::collection::vec((0..n, 0..m, 0..l), 0..30).prop_map(move |cells| {
                SparseBinaryTensor::new(Dims::new(n, m, l), cells.into_iter().map(Cell::from)).unwrap()
            })
        })
    }

    fn arb_pair() -> impl Strategy<Value = (SparseBinaryTensor, SparseBinaryTensor)> {
        (1usize..5, 1usize..5, 1usize..5).prop_flat_map(|(n, m, l)| {
            let cells = || proptest::collection::vec((0..n, 0..m, 0..l), 0..30);
            (cells(), cells()).prop_map(move |(a, b)| {
                let d = Dims::new(n, m, l);
                (
                    SparseBinaryTensor::new(d, a.into_iter().map(Cell::from)).unwrap(),
                    SparseBinaryTensor::new(d, b.into_iter().map(Cell::from)).unwrap(),
                )
            })
        })
    }

    proptest! {
        #[test]
        fn xor_identity((x, y) in arb_pair()) {
            let inter = x.intersection_count(&y);
            prop_assert_eq!(x.xor_count(&y).unwrap(), (x.nnz() + y.nnz()) as u64 - 2 * inter);
            let or = SparseBinaryTensor::boolean_or(x.dims(), [&x, &y]).unwrap();
            prop_assert!(or.nnz() >= x.nnz());
            let y_minus_x = y.cells().iter().filter(|c| !x.contains(c)).count() as u64;
            prop_assert_eq!(x.xor_count(&or).unwrap(), y_minus_x);
        }

        #[test]
        fn neighbors_symmetric_and_fibers_consistent(x in arb_tensor()) {
            for c in x.cells() {
                let ns = x.fiber_neighbors(c).unwrap();
                for n in &ns {
                    prop_assert_eq!(n.hamming(c), 1);
                    prop_assert!(x.fiber_neighbors(n).unwrap().contains(c));
                }
                let brute = x.cells().iter().filter(|o| o.hamming(c) == 1).count();
                prop_assert_eq!(ns.len(), brute);
            }
            for mode in 0..3 {
                let mut ids: Vec<u32> = x.fibers[mode].values().flatten().copied().collect();
                ids.sort_unstable();
                prop_assert_eq!(ids, (0..x.nnz() as u32).collect::<Vec<_>>());
            }
        }

        #[test]
        fn text_round_trip(x in arb_tensor()) {
            let text = x.to_text();
            let y = SparseBinaryTensor::parse(text.as_bytes(), None).unwrap();
            prop_assert_eq!(&x, &y);
            prop_assert_eq!(y.to_text(), text);
        }
    }
}
