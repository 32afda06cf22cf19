//! Length `Λ_n`, thickness `Θ_n` and critical thickness `ϑ_n` of grid
//! functions, computed by dynamic programming over the dyadic tree, plus
//! exhaustive-enumeration oracles for small instances.
//!
//! All functionals act on `|v|` and only see cubes of sidelength between
//! `2^-n` and the root sidelength.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dyadic::{cell_ancestor, side_pow, Cell, CubeCollection, DyadicCube, GridFunction};
use crate::error::{invalid, invariant, Error, Result};
use crate::numeric::CompensatedSum;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContentParams {
    /// Cubes have sidelength at least `2^-n`.
    pub n: i32,
    /// Exponent of the content; `1` gives the length.
    pub beta: f64,
}

impl ContentParams {
    pub fn new(n: i32) -> Self {
        Self { n, beta: 1.0 }
    }

    pub fn with_beta(n: i32, beta: f64) -> Self {
        Self { n, beta }
    }

    fn check(&self, v: &GridFunction) -> Result<()> {
        if !(self.beta > 0.0) || self.beta > v.dim() as f64 {
            return Err(invalid(format!("beta {} outside (0, d]", self.beta)));
        }
        if self.n < v.root().level {
            return Err(invalid(format!(
                "n = {} is coarser than the root level {}",
                self.n,
                v.root().level
            )));
        }
        Ok(())
    }
}

/// Masses of `|v|` on every dyadic cube between level `n` and the root,
/// restricted to cubes of positive mass.
pub(crate) struct MassTree {
    pub n: i32,
    pub top: i32,
    /// `levels[i]` holds the cubes of level `n - i`.
    pub levels: Vec<BTreeMap<Cell, f64>>,
    /// `children[i]` maps a level-`(n-i)` cube to its children (`i >= 1`).
    pub children: Vec<BTreeMap<Cell, Vec<Cell>>>,
}

impl MassTree {
    pub fn new(v: &GridFunction, n: i32) -> Self {
        Self::from_leaves(v.abs_masses(n), n, v.root().level)
    }

    pub fn from_leaves(leaves: BTreeMap<Cell, f64>, n: i32, top: i32) -> Self {
        let leaves: BTreeMap<Cell, f64> = leaves.into_iter().filter(|(_, m)| *m > 0.0).collect();
        let mut levels = vec![leaves];
        let mut children = vec![BTreeMap::new()];
        for _ in top..n {
            let prev = levels.last().unwrap();
            let mut next: BTreeMap<Cell, CompensatedSum> = BTreeMap::new();
            let mut kids: BTreeMap<Cell, Vec<Cell>> = BTreeMap::new();
            for (c, m) in prev {
                let p = cell_ancestor(c, 1);
                next.entry(p.clone()).or_default().add(*m);
                kids.entry(p).or_default().push(c.clone());
            }
            levels.push(next.into_iter().map(|(c, s)| (c, s.value())).collect());
            children.push(kids);
        }
        Self {
            n,
            top,
            levels,
            children,
        }
    }

    pub fn level_of(&self, i: usize) -> i32 {
        self.n - i as i32
    }

    pub fn total_mass(&self) -> f64 {
        let mut acc = CompensatedSum::new();
        for m in self.levels[0].values() {
            acc.add(*m);
        }
        acc.value()
    }

    pub fn node_count(&self) -> usize {
        self.levels.iter().map(|l| l.len()).sum()
    }

    /// Bottom-up min-DP. `leaf_keep(mass)` is the value of a leaf that is not
    /// taken and `take(level)` the value of taking a cube. Returns, per level,
    /// `(value, value-if-not-taken)` for every node.
    pub fn evaluate(
        &self,
        leaf_keep: impl Fn(f64) -> f64,
        take: impl Fn(i32) -> f64,
    ) -> Vec<BTreeMap<Cell, (f64, f64)>> {
        let mut out: Vec<BTreeMap<Cell, (f64, f64)>> = Vec::with_capacity(self.levels.len());
        let t = take(self.n);
        out.push(
            self.levels[0]
                .iter()
                .map(|(c, m)| {
                    let keep = leaf_keep(*m);
                    (c.clone(), (t.min(keep), keep))
                })
                .collect(),
        );
        for i in 1..self.levels.len() {
            let t = take(self.level_of(i));
            let prev = &out[i - 1];
            let level: BTreeMap<Cell, (f64, f64)> = self.children[i]
                .iter()
                .map(|(c, kids)| {
                    let mut acc = CompensatedSum::new();
                    for k in kids {
                        acc.add(prev[k].0);
                    }
                    let keep = acc.value();
                    (c.clone(), (t.min(keep), keep))
                })
                .collect();
            out.push(level);
        }
        out
    }

    /// Sum of the top-level values of an evaluation.
    pub fn top_value(values: &[BTreeMap<Cell, (f64, f64)>]) -> f64 {
        let mut acc = CompensatedSum::new();
        for (v, _) in values.last().unwrap().values() {
            acc.add(*v);
        }
        acc.value()
    }

    /// Walks down from the top taking a cube whenever its take-value is
    /// within relative `1e-12` of the alternative. Returns the taken cubes
    /// and the leaves left untaken.
    pub fn backtrace(
        &self,
        values: &[BTreeMap<Cell, (f64, f64)>],
        take: impl Fn(i32) -> f64,
    ) -> (Vec<DyadicCube>, Vec<Cell>) {
        let mut taken = Vec::new();
        let mut residual = Vec::new();
        let top = values.len() - 1;
        let mut stack: Vec<(usize, Cell)> =
            values[top].keys().rev().map(|c| (top, c.clone())).collect();
        while let Some((i, c)) = stack.pop() {
            let (_, keep) = values[i][&c];
            let t = take(self.level_of(i));
            if t - keep <= 1e-12 * t.abs().max(keep.abs()) {
                taken.push(DyadicCube::new(self.level_of(i), c));
            } else if i == 0 {
                residual.push(c);
            } else {
                for k in self.children[i][&c].iter().rev() {
                    stack.push((i - 1, k.clone()));
                }
            }
        }
        (taken, residual)
    }
}

/// `Λ_n[v]` together with a minimal cover.
pub fn length_with_cover(v: &GridFunction, p: &ContentParams) -> Result<(f64, CubeCollection)> {
    p.check(v)?;
    let tree = MassTree::new(v, p.n);
    if tree.levels[0].is_empty() {
        return Ok((0.0, CubeCollection::default()));
    }
    let beta = p.beta;
    let take = |level: i32| side_pow(level, beta);
    let leaf = side_pow(p.n, beta);
    let values = tree.evaluate(|_| leaf, take);
    let value = MassTree::top_value(&values);
    let (cover, _) = tree.backtrace(&values, take);
    Ok((value, CubeCollection::new(cover)))
}

/// `Λ_n[v] = λ(𝔖_n(v))`, the minimal `Σ l(Q)^β` over dyadic covers of the
/// level-`n` support.
pub fn length(v: &GridFunction, p: &ContentParams) -> Result<f64> {
    length_with_cover(v, p).map(|(l, _)| l)
}

/// `Θ_n[v]` together with a maximizing cube (none for `v = 0`).
pub fn thickness_with_cube(
    v: &GridFunction,
    p: &ContentParams,
) -> Result<(f64, Option<DyadicCube>)> {
    p.check(v)?;
    let tree = MassTree::new(v, p.n);
    let mut best = 0.0;
    let mut arg = None;
    for (i, level) in tree.levels.iter().enumerate() {
        let l = side_pow(tree.level_of(i), p.beta);
        for (c, m) in level {
            let r = m / l;
            if r > best {
                best = r;
                arg = Some(DyadicCube::new(tree.level_of(i), c.clone()));
            }
        }
    }
    Ok((best, arg))
}

/// `Θ_n[v] = max_Q l(Q)^-β ∫_Q |v|` over cubes with `l(Q) >= 2^-n`.
pub fn thickness(v: &GridFunction, p: &ContentParams) -> Result<f64> {
    thickness_with_cube(v, p).map(|(t, _)| t)
}

/// Returns `(∫v, Λ_n[v]·Θ_n[v])` and fails if `∫v` exceeds the product.
pub fn complementarity_check(v: &GridFunction, p: &ContentParams) -> Result<(f64, f64)> {
    if !v.is_nonnegative() {
        return Err(invalid("complementarity needs a nonnegative function"));
    }
    let lhs = v.integral();
    let rhs = length(v, p)? * thickness(v, p)?;
    if lhs > rhs * (1.0 + 1e-12) {
        return Err(invariant(format!("∫v = {lhs} exceeds ΛΘ = {rhs}")));
    }
    Ok((lhs, rhs))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ThetaResult {
    pub theta: f64,
    /// The collection `𝒬₁` attaining the equality.
    pub minimizing_collection: CubeCollection,
    /// Level-`n` cells of positive mass outside every cube of `𝒬₁`.
    pub residual_set: Vec<DyadicCube>,
    pub length: f64,
    pub integral: f64,
    /// `∫_{E_*} v`.
    pub residual_mass: f64,
}

impl ThetaResult {
    /// Whether a level-`n` cell lies in `E_* = q ∖ ∪𝒬₁`.
    pub fn in_residual(&self, n: i32, cell: &[i64]) -> bool {
        !self.minimizing_collection.covers_cell(n, cell)
    }
}

/// `F(γ) = min_𝒬 [2γ Σ l(Q)^β + ∫_{q∖∪𝒬} v]`.
pub fn parametric_value(v: &GridFunction, p: &ContentParams, gamma: f64) -> Result<f64> {
    p.check(v)?;
    let tree = MassTree::new(v, p.n);
    if tree.levels[0].is_empty() {
        return Ok(0.0);
    }
    let values = tree.evaluate(|m| m, |l| 2.0 * gamma * side_pow(l, p.beta));
    Ok(MassTree::top_value(&values))
}

struct Pick {
    cubes: Vec<DyadicCube>,
    residual: Vec<Cell>,
    sides: f64,
    uncovered: f64,
}

fn pick_at(tree: &MassTree, beta: f64, gamma: f64) -> (f64, Pick) {
    let take = |l: i32| 2.0 * gamma * side_pow(l, beta);
    let values = tree.evaluate(|m| m, take);
    let f = MassTree::top_value(&values);
    let (cubes, residual) = tree.backtrace(&values, take);
    let sides = CubeCollection {
        cubes: cubes.clone(),
    }
    .total_side(beta);
    let uncovered = residual_mass(tree, &residual);
    (
        f,
        Pick {
            cubes,
            residual,
            sides,
            uncovered,
        },
    )
}

fn residual_mass(tree: &MassTree, residual: &[Cell]) -> f64 {
    let mut acc = CompensatedSum::new();
    for c in residual {
        acc.add(tree.levels[0][c]);
    }
    acc.value()
}

/// Critical thickness `ϑ_n(v)`: the largest `γ` with `F(γ) >= γΛ_n[v]`,
/// with the collection `𝒬₁` and residual set `E_*` certifying it.
pub fn critical_thickness(v: &GridFunction, p: &ContentParams) -> Result<ThetaResult> {
    p.check(v)?;
    if !v.is_nonnegative() {
        return Err(invalid("critical thickness needs a nonnegative function"));
    }
    let tree = MassTree::new(v, p.n);
    let total = tree.total_mass();
    if !(total > 0.0) {
        return Err(Error::Degenerate("∫v = 0".into()));
    }
    let beta = p.beta;
    let (lam, _) = length_with_cover(v, p)?;
    let g = |gamma: f64| {
        let values = tree.evaluate(|m| m, |l| 2.0 * gamma * side_pow(l, beta));
        MassTree::top_value(&values) - gamma * lam
    };

    let mut hi = total / lam;
    if g(hi) < 0.0 {
        let mut lo = 0.0;
        while hi - lo > 1e-10 * hi {
            let mid = 0.5 * (lo + hi);
            if g(mid) >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }

    // Ratio iteration from above: each step lands on the exact ratio of an
    // actual collection, so the final value is attained.
    let mut theta = hi;
    let mut witness: Option<Pick> = None;
    for _ in 0..200 {
        let (_, pick) = pick_at(&tree, beta, theta);
        let denom = lam - 2.0 * pick.sides;
        if denom > 0.0 {
            let r = pick.uncovered / denom;
            if r < theta {
                theta = r;
                witness = Some(pick);
                continue;
            }
        }
        if witness.is_none() && pick.uncovered == total {
            witness = Some(pick);
        }
        break;
    }
    let witness = match witness {
        Some(w) => w,
        None => Pick {
            cubes: vec![],
            residual: tree.levels[0].keys().cloned().collect(),
            sides: 0.0,
            uncovered: total,
        },
    };
    if witness.cubes.is_empty() {
        theta = theta.min(total / lam);
    }

    let scale = (theta * lam).max(total);
    let holds =
        |pk: &Pick| (theta * lam - (2.0 * theta * pk.sides + pk.uncovered)).abs() <= 1e-9 * scale;
    let (_, tie_broken) = pick_at(&tree, beta, theta);
    let chosen = if holds(&tie_broken) {
        tie_broken
    } else {
        witness
    };
    if !holds(&chosen) {
        return Err(invariant(
            "critical thickness collection does not attain equality",
        ));
    }
    if MassTree::top_value(&tree.evaluate(|m| m, |l| 2.0 * theta * side_pow(l, beta)))
        < theta * lam * (1.0 - 1e-9)
    {
        return Err(invariant(
            "covering inequality fails at the computed critical thickness",
        ));
    }

    let residual_tree = MassTree::from_leaves(
        chosen
            .residual
            .iter()
            .map(|c| (c.clone(), tree.levels[0][c]))
            .collect(),
        p.n,
        tree.top,
    );
    let mut resid_thick = 0.0f64;
    for (i, level) in residual_tree.levels.iter().enumerate() {
        let l = side_pow(residual_tree.level_of(i), beta);
        for m in level.values() {
            resid_thick = resid_thick.max(m / l);
        }
    }
    if resid_thick > 2.0 * theta * (1.0 + 1e-9) {
        return Err(invariant(format!(
            "thickness of v on E_* is {resid_thick}, above 2ϑ = {}",
            2.0 * theta
        )));
    }

    Ok(ThetaResult {
        theta,
        minimizing_collection: CubeCollection::new(chosen.cubes),
        residual_set: chosen
            .residual
            .into_iter()
            .map(|c| DyadicCube::new(p.n, c))
            .collect(),
        length: lam,
        integral: total,
        residual_mass: chosen.uncovered,
    })
}

/// One antichain of the pruned tree: `(Σ l^β, covered mass, covers every
/// marked leaf)`.
type Option3 = (f64, f64, bool);

const MAX_NODES: usize = 64;
const MAX_ANTICHAINS: f64 = (1u64 << 20) as f64;

fn enumerate_antichains(v: &GridFunction, p: &ContentParams) -> Result<Vec<Option3>> {
    p.check(v)?;
    if v.dim() > 2 {
        return Err(Error::TooLarge(format!("dimension {} > 2", v.dim())));
    }
    let tree = MassTree::new(v, p.n);
    if tree.node_count() > MAX_NODES {
        return Err(Error::TooLarge(format!("{} tree nodes", tree.node_count())));
    }
    // Count first so the product below cannot explode.
    let mut counts: Vec<BTreeMap<Cell, f64>> =
        vec![tree.levels[0].keys().map(|c| (c.clone(), 2.0)).collect()];
    for i in 1..tree.levels.len() {
        let prev = &counts[i - 1];
        counts.push(
            tree.children[i]
                .iter()
                .map(|(c, kids)| {
                    (
                        c.clone(),
                        1.0 + kids.iter().map(|k| prev[k]).product::<f64>(),
                    )
                })
                .collect(),
        );
    }
    let total: f64 = counts.last().unwrap().values().product();
    if total > MAX_ANTICHAINS {
        return Err(Error::TooLarge(format!("{total} antichains")));
    }

    fn options(tree: &MassTree, beta: f64, i: usize, c: &Cell) -> Vec<Option3> {
        let level = tree.level_of(i);
        let take = (side_pow(level, beta), tree.levels[i][c], true);
        if i == 0 {
            return vec![take, (0.0, 0.0, false)];
        }
        let mut acc: Vec<Option3> = vec![(0.0, 0.0, true)];
        for k in &tree.children[i][c] {
            let sub = options(tree, beta, i - 1, k);
            let mut next = Vec::with_capacity(acc.len() * sub.len());
            for a in &acc {
                for s in &sub {
                    next.push((a.0 + s.0, a.1 + s.1, a.2 && s.2));
                }
            }
            acc = next;
        }
        acc.push(take);
        acc
    }

    let top = tree.levels.len() - 1;
    let mut acc: Vec<Option3> = vec![(0.0, 0.0, true)];
    for c in tree.levels[top].keys() {
        let sub = options(&tree, p.beta, top, c);
        let mut next = Vec::with_capacity(acc.len() * sub.len());
        for a in &acc {
            for s in &sub {
                next.push((a.0 + s.0, a.1 + s.1, a.2 && s.2));
            }
        }
        acc = next;
    }
    Ok(acc)
}

/// `Λ_n[v]` by listing every antichain cover of the support. Small
/// instances only.
pub fn brute_force_length(v: &GridFunction, p: &ContentParams) -> Result<f64> {
    let opts = enumerate_antichains(v, p)?;
    Ok(opts
        .iter()
        .filter(|o| o.2)
        .map(|o| o.0)
        .fold(f64::INFINITY, f64::min))
}

/// `ϑ_n(v)` as the minimum of `∫_{q∖∪𝒬} v / (Λ − 2Σ l(Q)^β)` over every
/// antichain `𝒬` with positive denominator. Small instances only.
pub fn brute_force_theta(v: &GridFunction, p: &ContentParams) -> Result<f64> {
    if !v.is_nonnegative() {
        return Err(invalid("critical thickness needs a nonnegative function"));
    }
    let opts = enumerate_antichains(v, p)?;
    let lam = opts
        .iter()
        .filter(|o| o.2)
        .map(|o| o.0)
        .fold(f64::INFINITY, f64::min);
    let total = v.abs_masses(p.n).values().sum::<f64>();
    if !(total > 0.0) {
        return Err(Error::Degenerate("∫v = 0".into()));
    }
    Ok(opts
        .iter()
        .filter(|o| 2.0 * o.0 < lam)
        .map(|o| (total - o.1).max(0.0) / (lam - 2.0 * o.0))
        .fold(f64::INFINITY, f64::min))
}

/// The stacked-rectangle function: `n + 1` rectangles `2^-ν × 1` with lower
/// left corners `(ν, 0)`, sampled at resolution `resolution >= n`.
pub fn stacked_rectangles(n: u32, resolution: i32) -> Result<GridFunction> {
    let span = (n as f64 + 1.0).log2().ceil() as i32;
    let root = DyadicCube::new(-span, vec![0, 0]);
    let mut cells = Vec::new();
    for nu in 0..=n as i64 {
        let width = 1i64 << (resolution as i64 - nu);
        let height = 1i64 << resolution;
        let x0 = nu << resolution;
        for i in 0..width {
            for j in 0..height {
                cells.push((vec![x0 + i, j], 1.0));
            }
        }
    }
    GridFunction::from_cells(root, resolution, cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_fn(d: usize, res: i32, cells: &[(Vec<i64>, f64)]) -> GridFunction {
        GridFunction::from_cells(DyadicCube::unit(d), res, cells.iter().cloned()).unwrap()
    }

    #[test]
    fn single_cell_length() {
        let v = unit_fn(1, 2, &[(vec![1], 1.0)]);
        assert_eq!(length(&v, &ContentParams::new(2)).unwrap(), 0.25);
    }

    #[test]
    fn zero_function_has_zero_content() {
        let v = GridFunction::zeros(DyadicCube::unit(2), 3).unwrap();
        assert_eq!(length(&v, &ContentParams::new(3)).unwrap(), 0.0);
        assert_eq!(thickness(&v, &ContentParams::new(3)).unwrap(), 0.0);
        assert!(matches!(
            critical_thickness(&v, &ContentParams::new(3)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn indicator_of_unit_interval() {
        let v = GridFunction::indicator(DyadicCube::unit(1), 3, &DyadicCube::unit(1), 1.0).unwrap();
        for n in 0..=3 {
            assert_eq!(thickness(&v, &ContentParams::new(n)).unwrap(), 1.0);
        }
        let (lhs, rhs) = complementarity_check(&v, &ContentParams::new(3)).unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn theta_examples() {
        let p = ContentParams::new(1);
        let full =
            GridFunction::indicator(DyadicCube::unit(1), 1, &DyadicCube::unit(1), 1.0).unwrap();
        let r = critical_thickness(&full, &p).unwrap();
        assert_eq!(r.theta, 1.0);
        assert!(r.minimizing_collection.is_empty());
        assert_eq!(r.residual_set.len(), 2);
        assert_eq!(brute_force_theta(&full, &p).unwrap(), 1.0);

        let half =
            GridFunction::indicator(DyadicCube::unit(1), 1, &DyadicCube::new(1, vec![0]), 1.0)
                .unwrap();
        let r = critical_thickness(&half, &p).unwrap();
        assert_eq!(r.theta, 1.0);
        assert_eq!(brute_force_theta(&half, &p).unwrap(), 1.0);
    }

    #[test]
    fn stacked_rectangles_content() {
        for n in 1..=4u32 {
            let v = stacked_rectangles(n, n as i32).unwrap();
            let p = ContentParams::new(n as i32);
            assert_eq!(length(&v, &p).unwrap(), n as f64 + 1.0);
            assert_eq!(thickness(&v, &p).unwrap(), 1.0);
            assert!(v.integral() < 2.0);
        }
    }

    #[test]
    fn beta_content_of_a_cell() {
        let v = unit_fn(2, 2, &[(vec![0, 0], 1.0)]);
        let p = ContentParams::with_beta(2, 2.0);
        assert!((length(&v, &p).unwrap() - 1.0 / 16.0).abs() < 1e-15);
        assert!((thickness(&v, &p).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn brute_force_rejects_large_trees() {
        let v = GridFunction::indicator(DyadicCube::unit(2), 3, &DyadicCube::unit(2), 1.0).unwrap();
        assert!(matches!(
            brute_force_theta(&v, &ContentParams::new(3)),
            Err(Error::TooLarge(_))
        ));
    }

    fn arb_fn() -> impl Strategy<Value = (GridFunction, i32)> {
        (1usize..=2, 0i32..=3).prop_flat_map(|(d, n)| {
            let side = 1i64 << n;
            let ncell = (side as usize).pow(d as u32);
            let max_cells = if d == 2 { 5 } else { 8 };
            (
                Just(d),
                Just(n),
                proptest::collection::vec((0..ncell, 1u32..16), 1..=max_cells.min(ncell)),
            )
                .prop_map(move |(d, n, raw)| {
                    let cells = raw.into_iter().map(|(pos, val)| {
                        let c = if d == 1 {
                            vec![pos as i64]
                        } else {
                            vec![pos as i64 % side, pos as i64 / side]
                        };
                        (c, val as f64 / 4.0)
                    });
                    (
                        GridFunction::from_cells(DyadicCube::unit(d), n, cells).unwrap(),
                        n,
                    )
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn dp_matches_enumeration((v, n) in arb_fn()) {
            let p = ContentParams::new(n);
            if let Ok(bl) = brute_force_length(&v, &p) {
                prop_assert_eq!(length(&v, &p).unwrap(), bl);
                let bt = brute_force_theta(&v, &p).unwrap();
                let t = critical_thickness(&v, &p).unwrap().theta;
                prop_assert!((t - bt).abs() <= 1e-9 * bt, "{} vs {}", t, bt);
            }
        }

        #[test]
        fn theta_certificate((v, n) in arb_fn()) {
            let p = ContentParams::new(n);
            let r = critical_thickness(&v, &p).unwrap();
            let sides = r.minimizing_collection.total_side(1.0);
            let lhs = r.theta * r.length;
            let rhs = 2.0 * r.theta * sides + r.residual_mass;
            prop_assert!((lhs - rhs).abs() <= 1e-8 * lhs.max(r.integral));
            prop_assert!(r.theta <= r.integral / r.length * (1.0 + 1e-12));
            prop_assert!(r.theta > 0.0);
            let mut on_e = v.clone();
            on_e = on_e.filter_cells(|c| r.in_residual(n, c));
            prop_assert!(thickness(&on_e, &p).unwrap() <= 2.0 * r.theta * (1.0 + 1e-9));
        }

        #[test]
        fn monotone_and_bounded((v, n) in arb_fn(), extra in 0i64..8) {
            let p = ContentParams::new(n);
            let mut w = v.clone();
            let side = 1i64 << n;
            let cell: Vec<i64> = (0..v.dim()).map(|i| (extra + i as i64) % side).collect();
            w.set(cell.clone(), v.get(&cell) + 1.0).unwrap();
            prop_assert!(length(&v, &p).unwrap() <= length(&w, &p).unwrap());
            prop_assert!(thickness(&v, &p).unwrap() <= thickness(&w, &p).unwrap());
            prop_assert!(length(&w, &p).unwrap() <= 1.0);
            let (lhs, rhs) = complementarity_check(&v, &p).unwrap();
            prop_assert!(lhs <= rhs * (1.0 + 1e-12));
        }

        #[test]
        fn thickness_is_homogeneous((v, n) in arb_fn(), k in -3i32..=3) {
            let p = ContentParams::new(n);
            let lam = 2f64.powi(k);
            prop_assert_eq!(thickness(&v.scale(lam), &p).unwrap(), lam * thickness(&v, &p).unwrap());
        }

        #[test]
        fn parametric_value_concave_nondecreasing((v, n) in arb_fn()) {
            let p = ContentParams::new(n);
            let gs: Vec<f64> = (0..=24).map(|i| i as f64 * 0.25).collect();
            let fs: Vec<f64> = gs.iter().map(|g| parametric_value(&v, &p, *g).unwrap()).collect();
            for w in fs.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-12);
            }
            for w in fs.windows(3) {
                prop_assert!(w[1] >= 0.5 * (w[0] + w[2]) - 1e-12);
            }
        }
    }
}
