//! Dyadic cubes and sparse piecewise-constant grid functions.
//!
//! A [`GridFunction`] stores values on the half-open cells of side
//! `2^-resolution` lying inside an explicit root cube. Cell indices are
//! absolute integer coordinates, so two functions on different roots can be
//! combined whenever one root contains the other.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::{pow2, CompensatedSum};

/// Integer coordinates of a cell at some level.
pub type Cell = Vec<i64>;

/// Half-open dyadic cube `Π [c_i 2^-level, (c_i+1) 2^-level)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicCube {
    pub level: i32,
    pub coords: Vec<i64>,
}

impl DyadicCube {
    pub fn new(level: i32, coords: Vec<i64>) -> Self {
        Self { level, coords }
    }

    /// `[0,1)^d`.
    pub fn unit(dim: usize) -> Self {
        Self::new(0, vec![0; dim])
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn side(&self) -> f64 {
        pow2(-(self.level as i64))
    }

    /// `l(Q)^beta`, exact for `beta = 1`.
    pub fn side_pow(&self, beta: f64) -> f64 {
        side_pow(self.level, beta)
    }

    pub fn volume(&self) -> f64 {
        pow2(-(self.level as i64) * self.dim() as i64)
    }

    /// The `2^d` cubes of the next level, ordered by the bit pattern of
    /// their offsets (bit `i` selects the upper half along axis `i`).
    pub fn children(&self) -> Vec<DyadicCube> {
        let d = self.dim();
        (0..1usize << d)
            .map(|mask| {
                let coords = (0..d)
                    .map(|i| 2 * self.coords[i] + ((mask >> i) & 1) as i64)
                    .collect();
                DyadicCube::new(self.level + 1, coords)
            })
            .collect()
    }

    pub fn parent(&self) -> DyadicCube {
        self.ancestor(self.level - 1)
    }

    /// The unique cube at `level <= self.level` containing `self`.
    pub fn ancestor(&self, level: i32) -> DyadicCube {
        assert!(level <= self.level, "ancestor level above cube level");
        let shift = (self.level - level) as u32;
        DyadicCube::new(level, self.coords.iter().map(|c| shr(*c, shift)).collect())
    }

    pub fn contains(&self, other: &DyadicCube) -> bool {
        other.level >= self.level && other.ancestor(self.level) == *self
    }

    /// Dyadic cubes are laminar: they intersect iff one contains the other.
    pub fn intersects(&self, other: &DyadicCube) -> bool {
        self.contains(other) || other.contains(self)
    }

    pub fn lower(&self) -> Vec<f64> {
        let s = self.side();
        self.coords.iter().map(|c| *c as f64 * s).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        let s = self.side();
        self.coords.iter().map(|c| (*c as f64 + 0.5) * s).collect()
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        let s = self.side();
        self.coords
            .iter()
            .zip(x)
            .all(|(c, xi)| *c as f64 * s <= *xi && *xi < (*c + 1) as f64 * s)
    }

    /// Index range `[lo, hi)` per axis of the level-`level` cells inside
    /// this cube.
    pub fn cell_range(&self, level: i32) -> Vec<(i64, i64)> {
        assert!(level >= self.level);
        let k = (level - self.level) as u32;
        self.coords.iter().map(|c| (c << k, (c + 1) << k)).collect()
    }

    /// All cells of `level` inside this cube, in lexicographic order.
    pub fn cells_at(&self, level: i32) -> Vec<Cell> {
        let ranges = self.cell_range(level);
        let mut out = Vec::new();
        let mut cur: Vec<i64> = ranges.iter().map(|r| r.0).collect();
        if ranges.iter().any(|r| r.0 >= r.1) {
            return out;
        }
        loop {
            out.push(cur.clone());
            let mut i = ranges.len();
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                cur[i] += 1;
                if cur[i] < ranges[i].1 {
                    break;
                }
                cur[i] = ranges[i].0;
            }
        }
    }
}

/// Floor division by `2^k`.
#[inline]
pub(crate) fn shr(c: i64, k: u32) -> i64 {
    if k >= 63 {
        if c < 0 {
            -1
        } else {
            0
        }
    } else {
        c >> k
    }
}

pub(crate) fn side_pow(level: i32, beta: f64) -> f64 {
    if beta == 1.0 {
        pow2(-(level as i64))
    } else {
        (-(level as f64) * beta).exp2()
    }
}

/// Ancestor coordinates of `cell` at `level` `k` levels up.
#[inline]
pub(crate) fn cell_ancestor(cell: &[i64], k: u32) -> Cell {
    cell.iter().map(|c| shr(*c, k)).collect()
}

/// A finite set of dyadic cubes kept as an antichain.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CubeCollection {
    pub cubes: Vec<DyadicCube>,
}

impl CubeCollection {
    pub fn new(cubes: Vec<DyadicCube>) -> Self {
        let mut c = Self { cubes };
        c.normalize();
        c
    }

    /// Drops cubes contained in another member and sorts the rest.
    pub fn normalize(&mut self) {
        self.cubes.sort();
        self.cubes.dedup();
        let snapshot = self.cubes.clone();
        self.cubes
            .retain(|q| !snapshot.iter().any(|p| p.level < q.level && p.contains(q)));
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    /// `Σ l(Q)^beta`.
    pub fn total_side(&self, beta: f64) -> f64 {
        let mut acc = CompensatedSum::new();
        for q in &self.cubes {
            acc.add(q.side_pow(beta));
        }
        acc.value()
    }

    /// Whether the level-`level` cell lies in the union.
    pub fn covers_cell(&self, level: i32, cell: &[i64]) -> bool {
        self.cubes
            .iter()
            .any(|q| q.level <= level && cell_ancestor(cell, (level - q.level) as u32) == q.coords)
    }
}

/// Sparse piecewise-constant function on the level-`resolution` cells of a
/// root cube.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    dim: usize,
    root: DyadicCube,
    resolution: i32,
    cells: BTreeMap<Cell, f64>,
}

/// The binary and unary pointwise operations on grid functions.
#[derive(Clone, Debug)]
pub enum PointwiseOp {
    Add,
    Sub,
    Min,
    Scale(f64),
    RestrictToCube(DyadicCube),
    Abs,
    SignSplit,
}

impl GridFunction {
    pub fn zeros(root: DyadicCube, resolution: i32) -> Result<Self> {
        if resolution < root.level {
            return Err(invalid(format!(
                "resolution {resolution} is coarser than root level {}",
                root.level
            )));
        }
        if root.dim() == 0 {
            return Err(invalid("dimension must be positive"));
        }
        Ok(Self {
            dim: root.dim(),
            root,
            resolution,
            cells: BTreeMap::new(),
        })
    }

    /// Builds a function from `(cell, value)` pairs; repeated cells add up.
    pub fn from_cells<I>(root: DyadicCube, resolution: i32, cells: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Cell, f64)>,
    {
        let mut f = Self::zeros(root, resolution)?;
        for (c, v) in cells {
            let old = f.get(&c);
            f.set(c, old + v)?;
        }
        Ok(f)
    }

    /// `λ·χ_cube` sampled at `resolution`.
    pub fn indicator(
        root: DyadicCube,
        resolution: i32,
        cube: &DyadicCube,
        value: f64,
    ) -> Result<Self> {
        if !root.contains(cube) {
            return Err(invalid("indicator cube outside root"));
        }
        if cube.level > resolution {
            return Err(invalid("indicator cube finer than resolution"));
        }
        Self::from_cells(
            root,
            resolution,
            cube.cells_at(resolution).into_iter().map(|c| (c, value)),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn root(&self) -> &DyadicCube {
        &self.root
    }

    pub fn resolution(&self) -> i32 {
        self.resolution
    }

    /// Number of stored (nonzero) cells.
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_zero(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Cell, &f64)> {
        self.cells.iter()
    }

    pub fn get(&self, cell: &[i64]) -> f64 {
        self.cells.get(cell).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, cell: Cell, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(invalid("grid values must be finite"));
        }
        if cell.len() != self.dim || !self.cell_in_root(&cell) {
            return Err(invalid(format!(
                "cell {cell:?} outside root {:?}",
                self.root
            )));
        }
        if value == 0.0 {
            self.cells.remove(&cell);
        } else {
            self.cells.insert(cell, value);
        }
        Ok(())
    }

    fn cell_in_root(&self, cell: &[i64]) -> bool {
        cell_ancestor(cell, (self.resolution - self.root.level) as u32) == self.root.coords
    }

    pub fn cell_cube(&self, cell: &[i64]) -> DyadicCube {
        DyadicCube::new(self.resolution, cell.to_vec())
    }

    pub fn cell_volume(&self) -> f64 {
        pow2(-(self.resolution as i64) * self.dim as i64)
    }

    pub fn cell_side(&self) -> f64 {
        pow2(-(self.resolution as i64))
    }

    pub fn integral(&self) -> f64 {
        let mut acc = CompensatedSum::new();
        for v in self.cells.values() {
            acc.add(*v);
        }
        acc.value() * self.cell_volume()
    }

    pub fn l1_norm(&self) -> f64 {
        let mut acc = CompensatedSum::new();
        for v in self.cells.values() {
            acc.add(v.abs());
        }
        acc.value() * self.cell_volume()
    }

    pub fn sup_norm(&self) -> f64 {
        self.cells.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_nonnegative(&self) -> bool {
        self.cells.values().all(|v| *v >= 0.0)
    }

    /// Same function on a finer grid.
    pub fn refine(&self, resolution: i32) -> Result<Self> {
        if resolution < self.resolution {
            return Err(invalid("refine target coarser than current resolution"));
        }
        if resolution == self.resolution {
            return Ok(self.clone());
        }
        let mut out = Self::zeros(self.root.clone(), resolution)?;
        for (c, v) in &self.cells {
            for sub in DyadicCube::new(self.resolution, c.clone()).cells_at(resolution) {
                out.cells.insert(sub, *v);
            }
        }
        Ok(out)
    }

    /// Re-homes the function in a larger (or equal) root cube.
    pub fn with_root(&self, root: DyadicCube) -> Result<Self> {
        if root.dim() != self.dim || !root.contains(&self.root) && !self.support_inside(&root) {
            return Err(invalid("new root does not contain the support"));
        }
        if root.level > self.resolution {
            return Err(invalid("new root finer than resolution"));
        }
        Ok(Self {
            dim: self.dim,
            root,
            resolution: self.resolution,
            cells: self.cells.clone(),
        })
    }

    fn support_inside(&self, cube: &DyadicCube) -> bool {
        cube.level <= self.resolution
            && self
                .cells
                .keys()
                .all(|c| cell_ancestor(c, (self.resolution - cube.level) as u32) == cube.coords)
    }

    /// Signed (or absolute) mass per cell of `level`. Coarser levels sum
    /// cells; finer levels split each cell evenly.
    fn masses_at(&self, level: i32, absolute: bool) -> BTreeMap<Cell, f64> {
        let vol = self.cell_volume();
        let mut out: BTreeMap<Cell, CompensatedSum> = BTreeMap::new();
        if level <= self.resolution {
            let k = (self.resolution - level) as u32;
            for (c, v) in &self.cells {
                let v = if absolute { v.abs() } else { *v };
                out.entry(cell_ancestor(c, k)).or_default().add(v * vol);
            }
        } else {
            let sub_vol = pow2(-(level as i64) * self.dim as i64);
            for (c, v) in &self.cells {
                let v = if absolute { v.abs() } else { *v };
                for sub in DyadicCube::new(self.resolution, c.clone()).cells_at(level) {
                    out.entry(sub).or_default().add(v * sub_vol);
                }
            }
        }
        out.into_iter().map(|(c, s)| (c, s.value())).collect()
    }

    /// `∫_Q |v|` for every level-`level` cell `Q` meeting the support.
    pub fn abs_masses(&self, level: i32) -> BTreeMap<Cell, f64> {
        self.masses_at(level, true)
    }

    pub fn masses(&self, level: i32) -> BTreeMap<Cell, f64> {
        self.masses_at(level, false)
    }

    /// Cell averages at level `n`, stored at resolution `n`.
    pub fn conditional_expectation(&self, n: i32) -> Result<Self> {
        if n > self.resolution {
            return Err(invalid(format!(
                "conditional expectation level {n} finer than resolution {}",
                self.resolution
            )));
        }
        if n < self.root.level {
            return Err(invalid("conditional expectation level coarser than root"));
        }
        let inv_vol = pow2(n as i64 * self.dim as i64);
        let mut out = Self::zeros(self.root.clone(), n)?;
        for (c, m) in self.masses(n) {
            if m != 0.0 {
                out.cells.insert(c, m * inv_vol);
            }
        }
        Ok(out)
    }

    /// The level-`n` cells on which the average of `|v|` is nonzero.
    pub fn support_set(&self, n: i32) -> Vec<DyadicCube> {
        self.abs_masses(n)
            .into_iter()
            .filter(|(_, m)| *m > 0.0)
            .map(|(c, _)| DyadicCube::new(n, c))
            .collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = Self {
            dim: self.dim,
            root: self.root.clone(),
            resolution: self.resolution,
            cells: BTreeMap::new(),
        };
        for (c, v) in &self.cells {
            let w = f(*v);
            if w != 0.0 {
                out.cells.insert(c.clone(), w);
            }
        }
        out
    }

    pub fn scale(&self, lambda: f64) -> Self {
        self.map(|v| lambda * v)
    }

    pub fn abs(&self) -> Self {
        self.map(f64::abs)
    }

    /// `(v⁺, v⁻)` with `v = v⁺ − v⁻`.
    pub fn sign_split(&self) -> (Self, Self) {
        (self.map(|v| v.max(0.0)), self.map(|v| (-v).max(0.0)))
    }

    /// Keeps cells whose index satisfies `keep`.
    pub fn filter_cells(&self, keep: impl Fn(&[i64]) -> bool) -> Self {
        let mut out = self.map(|v| v);
        out.cells.retain(|c, _| keep(c));
        out
    }

    /// `v·χ_Q`. A cube finer than the grid refines the grid first.
    pub fn restrict_to_cube(&self, cube: &DyadicCube) -> Result<Self> {
        if cube.dim() != self.dim {
            return Err(invalid("dimension mismatch"));
        }
        let base = if cube.level > self.resolution {
            self.refine(cube.level)?
        } else {
            self.clone()
        };
        let k = (base.resolution - cube.level) as u32;
        Ok(base.filter_cells(|c| cell_ancestor(c, k) == cube.coords))
    }

    /// Smallest frame (root, resolution) holding both functions.
    fn common_frame(&self, other: &Self) -> Result<(DyadicCube, i32)> {
        if self.dim != other.dim {
            return Err(invalid("dimension mismatch"));
        }
        let root = if self.root.contains(&other.root) {
            self.root.clone()
        } else if other.root.contains(&self.root) {
            other.root.clone()
        } else {
            common_ancestor(&self.root, &other.root)
                .ok_or_else(|| invalid("roots have no common dyadic ancestor"))?
        };
        let res = self.resolution.max(other.resolution).max(root.level);
        Ok((root, res))
    }

    /// Pointwise `op(u, w)` on the common refinement; missing cells are 0.
    pub fn zip_with(&self, other: &Self, op: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let (root, res) = self.common_frame(other)?;
        let a = self.refine(res)?;
        let b = other.refine(res)?;
        let mut out = Self::zeros(root, res)?;
        let keys: BTreeSet<&Cell> = a.cells.keys().chain(b.cells.keys()).collect();
        for c in keys {
            let v = op(a.get(c), b.get(c));
            if v != 0.0 {
                out.cells.insert(c.clone(), v);
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn min(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, f64::min)
    }

    /// Sum of several functions, accumulated per cell without rounding
    /// order effects beyond one compensated pass.
    pub fn sum_all<'a, I: IntoIterator<Item = &'a GridFunction>>(items: I) -> Result<Option<Self>> {
        let mut acc: Option<Self> = None;
        for f in items {
            acc = Some(match acc {
                None => f.clone(),
                Some(a) => a.add(f)?,
            });
        }
        Ok(acc)
    }
}

/// Smallest dyadic cube containing both, if any.
pub fn common_ancestor(a: &DyadicCube, b: &DyadicCube) -> Option<DyadicCube> {
    if a.dim() != b.dim() {
        return None;
    }
    let mut x = a.ancestor(a.level.min(b.level));
    let mut y = b.ancestor(a.level.min(b.level));
    for _ in 0..70 {
        if x == y {
            return Some(x);
        }
        x = x.parent();
        y = y.parent();
    }
    None
}

/// Applies one of the pointwise operations. Unary operations ignore `w`;
/// `SignSplit` returns `(v⁺, v⁻)`.
pub fn pointwise_combine(
    u: &GridFunction,
    w: Option<&GridFunction>,
    op: &PointwiseOp,
) -> Result<(GridFunction, Option<GridFunction>)> {
    let need = || w.ok_or_else(|| invalid("binary operation needs two operands"));
    Ok(match op {
        PointwiseOp::Add => (u.add(need()?)?, None),
        PointwiseOp::Sub => (u.sub(need()?)?, None),
        PointwiseOp::Min => (u.min(need()?)?, None),
        PointwiseOp::Scale(l) => (u.scale(*l), None),
        PointwiseOp::RestrictToCube(q) => (u.restrict_to_cube(q)?, None),
        PointwiseOp::Abs => (u.abs(), None),
        PointwiseOp::SignSplit => {
            let (p, m) = u.sign_split();
            (p, Some(m))
        }
    })
}

#[derive(Serialize, Deserialize)]
struct RootDoc {
    level: i32,
    coords: Vec<i64>,
}

#[derive(Serialize, Deserialize)]
struct GridDoc {
    dimension: usize,
    root: RootDoc,
    resolution: i32,
    cells: Vec<(Vec<i64>, f64)>,
}

impl Serialize for GridFunction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GridDoc {
            dimension: self.dim,
            root: RootDoc {
                level: self.root.level,
                coords: self.root.coords.clone(),
            },
            resolution: self.resolution,
            cells: self.cells.iter().map(|(c, v)| (c.clone(), *v)).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GridFunction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = GridDoc::deserialize(d)?;
        let root = DyadicCube::new(doc.root.level, doc.root.coords);
        if root.dim() != doc.dimension {
            return Err(serde::de::Error::custom("root dimension mismatch"));
        }
        GridFunction::from_cells(root, doc.resolution, doc.cells).map_err(serde::de::Error::custom)
    }
}

impl GridFunction {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(Error::from)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit1() -> DyadicCube {
        DyadicCube::unit(1)
    }

    #[test]
    fn children_bisect() {
        let kids = unit1().children();
        assert_eq!(
            kids,
            vec![DyadicCube::new(1, vec![0]), DyadicCube::new(1, vec![1])]
        );
        let q = DyadicCube::new(2, vec![1]);
        let kids = q.children();
        assert_eq!(kids[0].lower(), vec![0.25]);
        assert_eq!(kids[1].lower(), vec![0.375]);
        assert_eq!(kids[1].side(), 0.125);
        let sq = DyadicCube::unit(2).children();
        assert_eq!(sq.len(), 4);
        let total: f64 = sq.iter().map(|c| c.volume()).sum();
        assert_eq!(total, 1.0);
    }

    #[test]
    fn negative_levels_and_coords() {
        let big = DyadicCube::new(-2, vec![-1]);
        assert_eq!(big.side(), 4.0);
        assert_eq!(big.lower(), vec![-4.0]);
        let c = DyadicCube::new(1, vec![-3]);
        assert_eq!(c.ancestor(-2), big);
        assert!(big.contains(&c));
    }

    #[test]
    fn laminar_exhaustive() {
        let mut all = vec![];
        for level in 0..=4 {
            for c in DyadicCube::unit(1).cells_at(level) {
                all.push(DyadicCube::new(level, c));
            }
        }
        for a in &all {
            for b in &all {
                let (alo, ahi) = (a.lower()[0], a.lower()[0] + a.side());
                let (blo, bhi) = (b.lower()[0], b.lower()[0] + b.side());
                let overlap = alo.max(blo) < ahi.min(bhi);
                assert_eq!(overlap, a.intersects(b));
            }
        }
    }

    #[test]
    fn conditional_expectation_averages() {
        let v = GridFunction::indicator(unit1(), 2, &DyadicCube::new(1, vec![0]), 1.0).unwrap();
        let e = v.conditional_expectation(0).unwrap();
        assert_eq!(e.get(&[0]), 0.5);
        assert_eq!(e.len(), 1);
        assert_eq!(v.conditional_expectation(2).unwrap(), v);
        assert!(v.conditional_expectation(3).is_err());
    }

    #[test]
    fn support_set_examples() {
        let z = GridFunction::zeros(unit1(), 2).unwrap();
        assert!(z.support_set(0).is_empty());
        let v = GridFunction::indicator(unit1(), 2, &DyadicCube::new(1, vec![0]), 1.0).unwrap();
        assert_eq!(v.support_set(0), vec![DyadicCube::new(0, vec![0])]);
        assert_eq!(v.support_set(1), vec![DyadicCube::new(1, vec![0])]);
    }

    #[test]
    fn add_sub_identities() {
        let v =
            GridFunction::from_cells(unit1(), 2, vec![(vec![0], 1.5), (vec![3], -2.0)]).unwrap();
        let z = GridFunction::zeros(unit1(), 1).unwrap();
        assert_eq!(v.add(&z).unwrap(), v);
        assert!(v.sub(&v).unwrap().is_zero());
    }

    #[test]
    fn combine_refines_and_widens() {
        let a = GridFunction::indicator(unit1(), 1, &DyadicCube::new(1, vec![1]), 1.0).unwrap();
        let b = GridFunction::indicator(
            DyadicCube::new(-1, vec![0]),
            2,
            &DyadicCube::new(0, vec![1]),
            2.0,
        )
        .unwrap();
        let s = a.add(&b).unwrap();
        assert_eq!(s.root(), &DyadicCube::new(-1, vec![0]));
        assert_eq!(s.resolution(), 2);
        assert_eq!(s.integral(), 0.5 + 2.0);
        let other = GridFunction::zeros(DyadicCube::new(0, vec![-1]), 1).unwrap();
        assert!(a.add(&other).is_err());
    }

    #[test]
    fn restrict_to_finer_cube() {
        let v = GridFunction::indicator(unit1(), 0, &unit1(), 3.0).unwrap();
        let r = v.restrict_to_cube(&DyadicCube::new(2, vec![1])).unwrap();
        assert_eq!(r.resolution(), 2);
        assert_eq!(r.integral(), 0.75);
    }

    #[test]
    fn json_round_trip_bit_exact() {
        let v = GridFunction::from_cells(
            DyadicCube::new(0, vec![0, 0]),
            3,
            vec![
                (vec![1, 2], 0.1 + 0.2),
                (vec![7, 0], -1e-300),
                (vec![0, 5], 1.0 / 3.0),
            ],
        )
        .unwrap();
        let s = v.to_json().unwrap();
        let w = GridFunction::from_json(&s).unwrap();
        for (c, x) in v.iter() {
            assert_eq!(x.to_bits(), w.get(c).to_bits());
        }
        assert_eq!(v, w);
    }

    #[test]
    fn rejects_cells_outside_root() {
        let mut v = GridFunction::zeros(unit1(), 2).unwrap();
        assert!(v.set(vec![4], 1.0).is_err());
        assert!(v.set(vec![-1], 1.0).is_err());
        assert!(v.set(vec![0], f64::NAN).is_err());
    }

    fn random_fn(d: usize, res: i32, vals: Vec<(u8, i8)>) -> GridFunction {
        let root = DyadicCube::unit(d);
        let side = 1i64 << res;
        let cells = vals.into_iter().map(|(pos, val)| {
            let mut c = vec![0i64; d];
            let mut p = pos as i64;
            for ci in c.iter_mut() {
                *ci = p % side;
                p /= side;
            }
            (c, val as f64 / 8.0)
        });
        GridFunction::from_cells(root, res, cells).unwrap()
    }

    proptest! {
        #[test]
        fn expectation_preserves_integral(
            d in 1usize..=2,
            vals in proptest::collection::vec((any::<u8>(), any::<i8>()), 0..40),
            n in 0i32..=3,
        ) {
            let v = random_fn(d, 3, vals);
            let e = v.conditional_expectation(n).unwrap();
            prop_assert!((e.integral() - v.integral()).abs() <= 1e-12 * (1.0 + v.l1_norm()));
        }

        #[test]
        fn support_set_matches_brute_force(
            vals in proptest::collection::vec((any::<u8>(), any::<i8>()), 0..20),
            n in 0i32..=3,
        ) {
            let v = random_fn(2, 3, vals);
            let got: BTreeSet<DyadicCube> = v.support_set(n).into_iter().collect();
            let mut expect = BTreeSet::new();
            for c in DyadicCube::unit(2).cells_at(n) {
                let q = DyadicCube::new(n, c);
                if v.iter().any(|(cell, x)| *x != 0.0 && q.contains(&v.cell_cube(cell))) {
                    expect.insert(q);
                }
            }
            prop_assert_eq!(got, expect);
        }

        #[test]
        fn sign_split_identity(vals in proptest::collection::vec((any::<u8>(), any::<i8>()), 0..40)) {
            let v = random_fn(1, 6, vals);
            let (p, m) = v.sign_split();
            prop_assert_eq!(p.sub(&m).unwrap(), v.clone());
            for (c, _) in v.iter() {
                prop_assert_eq!(p.get(c) * m.get(c), 0.0);
            }
        }
    }
}
