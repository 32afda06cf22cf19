//! Nonisotropic Calderón–Zygmund machinery: the Hardy–Littlewood maximal
//! function over ρ-balls, Whitney decompositions by dyadic rectangles, the
//! good/bad split with its level pieces, interval index sets and the
//! polynomial projection on a Whitney region.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::{Range, RangeInclusive};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::{BoxIntegrator, DenseGrid};
use crate::dilation::{for_each_in_box, DilationGroup};
use crate::dyadic::{Cell, DyadicCube, GridFunction};
use crate::error::{invalid, invariant, Result};
use crate::numeric::{pow2, CompensatedSum};

/// Default radius exponents for [`maximal_hl`]: from balls inside one cell
/// up to balls swallowing the root from any centre.
pub fn default_radii(
    root: &DyadicCube,
    resolution: i32,
    dil: &DilationGroup,
) -> RangeInclusive<i64> {
    let lo = ((-(resolution as f64) - 1.0) / dil.pmin()).floor() as i64;
    let hi = ((-(root.level as f64) + 1.0) / dil.pmin()).ceil() as i64 + 1;
    lo..=hi
}

/// Centred maximal averages `sup_j |B(x, 2^j)|^{-1} ∫_B |f|` at every cell
/// centre of the root, with zero extension outside it.
pub fn maximal_hl(
    f: &GridFunction,
    dil: &DilationGroup,
    radii: Option<RangeInclusive<i64>>,
) -> Result<GridFunction> {
    if dil.dim() != f.dim() {
        return Err(invalid("dilation dimension mismatch"));
    }
    let radii = radii.unwrap_or_else(|| default_radii(f.root(), f.resolution(), dil));
    let dense = DenseGrid::from_grid(&f.abs());
    let values = maximal_dense(&dense, dil, radii);
    let cells = (0..dense.len())
        .filter(|i| values[*i] > 0.0)
        .map(|i| (dense.cell_of(i), values[i]));
    GridFunction::from_cells(f.root().clone(), f.resolution(), cells.collect::<Vec<_>>())
}

/// Maximal averages of `|g|` at the cell centres of a dense block.
pub fn maximal_dense(g: &DenseGrid, dil: &DilationGroup, radii: RangeInclusive<i64>) -> Vec<f64> {
    let abs = DenseGrid {
        values: g.values.iter().map(|v| v.abs()).collect(),
        ..g.clone()
    };
    let bi = BoxIntegrator::new(&abs);
    let d = g.dim();
    let radii: Vec<(Vec<f64>, f64)> = radii
        .map(|j| {
            let hw: Vec<f64> = dil
                .exponents
                .iter()
                .map(|p| (j as f64 * p).exp2())
                .collect();
            let vol: f64 = hw.iter().map(|w| 2.0 * w).product();
            (hw, vol)
        })
        .collect();
    (0..g.len())
        .into_par_iter()
        .map(|i| {
            let x = g.cell_center(i);
            let mut best = 0.0f64;
            let mut lo = vec![0.0; d];
            let mut hi = vec![0.0; d];
            for (hw, vol) in &radii {
                for a in 0..d {
                    lo[a] = x[a] - hw[a];
                    hi[a] = x[a] + hw[a];
                }
                best = best.max(bi.box_integral(&lo, &hi) / vol);
            }
            best
        })
        .collect()
}

/// One generalized Whitney region: a dyadic rectangle of scale `r(w)` with
/// sides `2^{r p_i}`, as a set of grid cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhitneyCell {
    pub scale: i64,
    pub index: Vec<i64>,
    pub center: Vec<f64>,
    pub resolution: i32,
    pub cells: Vec<Cell>,
    /// Selected at the finest admissible scale without the ball test.
    pub forced: bool,
}

impl WhitneyCell {
    pub fn measure(&self) -> f64 {
        self.cells.len() as f64 * pow2(-(self.resolution as i64) * self.center.len() as i64)
    }

    /// Radius of the enlarged ball `B*`, equal to `2^{r(w)}`.
    pub fn star_radius(&self) -> f64 {
        (self.scale as f64).exp2()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WhitneyDecomposition {
    pub root: DyadicCube,
    pub resolution: i32,
    pub cells: Vec<WhitneyCell>,
    /// The decomposed open set: the input rounded up to the finest
    /// rectangles.
    pub omega: BTreeSet<Cell>,
    /// `B = B(x_w, 2^{r}/K1)`.
    pub k1: f64,
    /// `B** = B(x_w, K2·2^{r}/K1)`.
    pub k2: f64,
    /// Largest number of `B*` balls sharing a cell centre.
    pub k3: usize,
    pub forced: usize,
}

impl WhitneyDecomposition {
    pub fn omega_measure(&self) -> f64 {
        self.omega.len() as f64 * pow2(-(self.resolution as i64) * self.root.dim() as i64)
    }

    /// Index of the region containing each cell of `omega`.
    pub fn owner_map(&self) -> BTreeMap<Cell, usize> {
        let mut m = BTreeMap::new();
        for (i, w) in self.cells.iter().enumerate() {
            for c in &w.cells {
                m.insert(c.clone(), i);
            }
        }
        m
    }
}

/// Cell-level indicator of a set with rectangle counting queries.
struct CellSet {
    lo: Vec<i64>,
    hi: Vec<i64>,
    counts: BoxIntegrator,
    scale: f64,
}

impl CellSet {
    fn new(root: &DyadicCube, resolution: i32, set: &BTreeSet<Cell>) -> Self {
        let ranges = root.cell_range(resolution);
        let lo: Vec<i64> = ranges.iter().map(|r| r.0).collect();
        let hi: Vec<i64> = ranges.iter().map(|r| r.1).collect();
        let shape = ranges.iter().map(|r| (r.1 - r.0) as usize).collect();
        let mut g = DenseGrid::zeros(resolution, lo.clone(), shape);
        for c in set {
            let i = g.index(c).expect("cell inside root");
            g.values[i] = 1.0;
        }
        let scale = pow2(resolution as i64);
        Self {
            lo,
            hi,
            counts: BoxIntegrator::new(&g),
            scale,
        }
    }

    fn count(&self, lo: &[i64], hi: &[i64]) -> usize {
        let l: Vec<f64> = lo.iter().map(|c| *c as f64 / self.scale).collect();
        let h: Vec<f64> = hi.iter().map(|c| *c as f64 / self.scale).collect();
        let vol = self.scale.powi(-(lo.len() as i32));
        (self.counts.box_integral(&l, &h) / vol).round() as usize
    }

    /// Whether every cell of the box lies in the root and in the set.
    fn contains_box(&self, lo: &[i64], hi: &[i64]) -> bool {
        for a in 0..lo.len() {
            if lo[a] < self.lo[a] || hi[a] > self.hi[a] {
                return false;
            }
        }
        let size: i64 = lo.iter().zip(hi).map(|(a, b)| b - a).product();
        self.count(lo, hi) as i64 == size
    }

    /// Whether the box meets a cell outside the set (outside the root
    /// counts as outside).
    fn box_meets_complement(&self, lo: &[i64], hi: &[i64]) -> bool {
        !self.contains_box(lo, hi)
    }
}

/// Cells meeting the closed ρ-ball `B(x, r)` in a set of positive measure.
fn ball_cells(x: &[f64], r: f64, dil: &DilationGroup, scale: f64) -> (Vec<i64>, Vec<i64>) {
    let hw = dil.ball_half_widths(r);
    let lo = x
        .iter()
        .zip(&hw)
        .map(|(c, w)| ((c - w) * scale).floor() as i64)
        .collect();
    let hi = x
        .iter()
        .zip(&hw)
        .map(|(c, w)| ((c + w) * scale).ceil() as i64)
        .collect();
    (lo, hi)
}

fn rect_sides(j: i64, resolution: i32, p: &[i64]) -> Vec<i64> {
    p.iter()
        .map(|pi| 1i64 << (resolution as i64 + j * pi))
        .collect()
}

/// Whitney decomposition of a union of level-`resolution` cells of `root`.
pub fn whitney(
    omega: &BTreeSet<Cell>,
    root: &DyadicCube,
    resolution: i32,
    dil: &DilationGroup,
) -> Result<WhitneyDecomposition> {
    let d = root.dim();
    if dil.dim() != d {
        return Err(invalid("dilation dimension mismatch"));
    }
    let p = dil
        .integer_exponents()
        .ok_or_else(|| invalid("Whitney rectangles need integer exponents"))?;
    let k = (resolution - root.level) as u32;
    for c in omega {
        if c.len() != d || crate::dyadic::cell_ancestor(c, k) != root.coords {
            return Err(invalid("omega cell outside root"));
        }
    }
    let r = resolution as i64;
    let l = root.level as i64;
    let j0 = p
        .iter()
        .map(|pi| (-r as f64 / *pi as f64).ceil() as i64)
        .max()
        .unwrap();
    let j_top = p
        .iter()
        .map(|pi| (-l as f64 / *pi as f64).floor() as i64)
        .min()
        .unwrap();
    if j_top < j0 {
        return Err(invalid("resolution too coarse for Whitney rectangles"));
    }
    let pmin = dil.pmin();
    let k1 = ((1.0 / pmin).floor() + 1.0).exp2();
    let k2 = 8.0 * k1;
    let scale = pow2(r);

    let fine = rect_sides(j0, resolution, &p);
    let mut rounded = BTreeSet::new();
    let fine_rects: BTreeSet<Vec<i64>> = omega
        .iter()
        .map(|c| {
            c.iter()
                .zip(&fine)
                .map(|(ci, s)| ci.div_euclid(*s))
                .collect()
        })
        .collect();
    for m in &fine_rects {
        let ranges: Vec<(i64, i64)> = m
            .iter()
            .zip(&fine)
            .map(|(mi, s)| (mi * s, (mi + 1) * s))
            .collect();
        for_each_in_box(&ranges, |c| {
            rounded.insert(c.to_vec());
        });
    }
    let total: u64 = root
        .cell_range(resolution)
        .iter()
        .map(|(a, b)| (b - a) as u64)
        .product();
    if !rounded.is_empty() && rounded.len() as u64 == total {
        return Err(invalid(
            "omega covers the whole root; no complement to compare against",
        ));
    }
    let set = CellSet::new(root, resolution, &rounded);

    let mut cells = Vec::new();
    let mut forced = 0usize;
    let top_sides = rect_sides(j_top, resolution, &p);
    let root_range = root.cell_range(resolution);
    let top_ranges: Vec<(i64, i64)> = root_range
        .iter()
        .zip(&top_sides)
        .map(|((a, b), s)| (a / s, b / s))
        .collect();
    let mut stack: Vec<(i64, Vec<i64>)> = Vec::new();
    for_each_in_box(&top_ranges, |m| stack.push((j_top, m.to_vec())));
    stack.reverse();
    while let Some((j, m)) = stack.pop() {
        let sides = rect_sides(j, resolution, &p);
        let lo: Vec<i64> = m.iter().zip(&sides).map(|(mi, s)| mi * s).collect();
        let hi: Vec<i64> = lo.iter().zip(&sides).map(|(a, s)| a + s).collect();
        if set.count(&lo, &hi) == 0 {
            continue;
        }
        let center: Vec<f64> = lo
            .iter()
            .zip(&hi)
            .map(|(a, b)| (*a + *b) as f64 * 0.5 / scale)
            .collect();
        let inside = set.contains_box(&lo, &hi);
        let (blo, bhi) = ball_cells(&center, 2.0 * (j as f64).exp2(), dil, scale);
        let select = inside && set.contains_box(&blo, &bhi);
        if select || j == j0 {
            let is_forced = !select;
            forced += is_forced as usize;
            let mut wc = Vec::new();
            let ranges: Vec<(i64, i64)> = lo.iter().zip(&hi).map(|(a, b)| (*a, *b)).collect();
            for_each_in_box(&ranges, |c| wc.push(c.to_vec()));
            cells.push(WhitneyCell {
                scale: j,
                index: m,
                center,
                resolution,
                cells: wc,
                forced: is_forced,
            });
            continue;
        }
        let child_sides = rect_sides(j - 1, resolution, &p);
        let ranges: Vec<(i64, i64)> = lo
            .iter()
            .zip(&hi)
            .zip(&child_sides)
            .map(|((a, b), s)| (a / s, b / s))
            .collect();
        let mut kids = Vec::new();
        for_each_in_box(&ranges, |c| kids.push((j - 1, c.to_vec())));
        kids.reverse();
        stack.extend(kids);
    }

    let k3 = star_overlap(&cells, root, resolution, dil);
    let dec = WhitneyDecomposition {
        root: root.clone(),
        resolution,
        cells,
        omega: rounded,
        k1,
        k2,
        k3,
        forced,
    };
    check_whitney(&dec, dil, &set)?;
    Ok(dec)
}

fn star_overlap(
    cells: &[WhitneyCell],
    root: &DyadicCube,
    resolution: i32,
    dil: &DilationGroup,
) -> usize {
    let scale = pow2(resolution as i64);
    let ranges = root.cell_range(resolution);
    let lo: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    let shape: Vec<usize> = ranges.iter().map(|r| (r.1 - r.0) as usize).collect();
    let mut counts = DenseGrid::zeros(resolution, lo.clone(), shape);
    let h = 1.0 / scale;
    for w in cells {
        let hw = dil.ball_half_widths(w.star_radius());
        // Cells whose centres lie in the closed box.
        let box_range: Vec<(i64, i64)> = (0..lo.len())
            .map(|a| {
                let first = ((w.center[a] - hw[a]) * scale - 0.5).ceil() as i64;
                let last = ((w.center[a] + hw[a]) * scale - 0.5).floor() as i64;
                (first.max(ranges[a].0), (last + 1).min(ranges[a].1))
            })
            .collect();
        for_each_in_box(&box_range, |c| {
            let centre_in =
                (0..c.len()).all(|a| ((c[a] as f64 + 0.5) * h - w.center[a]).abs() <= hw[a]);
            if centre_in {
                let i = counts.index(c).expect("inside");
                counts.values[i] += 1.0;
            }
        });
    }
    counts.values.iter().fold(0.0f64, |m, v| m.max(*v)) as usize
}

fn check_whitney(dec: &WhitneyDecomposition, dil: &DilationGroup, set: &CellSet) -> Result<()> {
    let scale = pow2(dec.resolution as i64);
    // Disjoint with union omega.
    let mut seen = BTreeSet::new();
    for w in &dec.cells {
        for c in &w.cells {
            if !seen.insert(c.clone()) {
                return Err(invariant("Whitney regions overlap"));
            }
        }
    }
    if seen != dec.omega {
        return Err(invariant("Whitney regions do not cover omega"));
    }
    let ind = GridFunction::from_cells(
        dec.root.clone(),
        dec.resolution,
        dec.omega
            .iter()
            .map(|c| (c.clone(), 1.0))
            .collect::<Vec<_>>(),
    )?;
    let m_omega = maximal_hl(&ind, dil, None)?;
    let star_level = (10.0 * dec.k2).powf(-dil.tau);
    let range = dec.root.cell_range(dec.resolution);
    for w in &dec.cells {
        let rstar = w.star_radius();
        // B** inside {M_HL χ_Ω > (10 K2)^{-τ}} on the root.
        let (blo, bhi) = ball_cells(&w.center, dec.k2 * rstar / dec.k1, dil, scale);
        let clipped: Vec<(i64, i64)> = (0..blo.len())
            .map(|a| (blo[a].max(range[a].0), bhi[a].min(range[a].1)))
            .collect();
        let mut ok = true;
        for_each_in_box(&clipped, |c| ok &= m_omega.get(c) > star_level);
        if !ok {
            return Err(invariant("B** leaves the enlarged set"));
        }
        let lo: Vec<f64> = w.cells[0].iter().map(|c| *c as f64 / scale).collect();
        let side: Vec<f64> = dil
            .exponents
            .iter()
            .map(|p| (w.scale as f64 * p).exp2())
            .collect();
        // B ⊂ w ⊂ B*, checked on the rectangle geometry.
        let hb = dil.ball_half_widths(rstar / dec.k1);
        let hs = dil.ball_half_widths(rstar);
        for a in 0..side.len() {
            if !(hb[a] < side[a] / 2.0 && side[a] / 2.0 <= hs[a]) {
                return Err(invariant("Whitney ball nesting fails"));
            }
            if (lo[a] + side[a] / 2.0 - w.center[a]).abs() > 1e-12 * side[a] {
                return Err(invariant("Whitney centre off its rectangle"));
            }
        }
        // B* inside omega, and B** meets the complement.
        if !w.forced {
            let (blo, bhi) = ball_cells(&w.center, rstar, dil, scale);
            if !set.contains_box(&blo, &bhi) {
                return Err(invariant("B* leaves omega"));
            }
        }
        let (blo, bhi) = ball_cells(&w.center, dec.k2 * rstar / dec.k1, dil, scale);
        if !set.box_meets_complement(&blo, &bhi) {
            return Err(invariant("B** misses the complement of omega"));
        }
    }
    Ok(())
}

/// Measured constants of a split.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CzConstants {
    /// `sup |g| / α`.
    pub good_sup: f64,
    /// `max_w |w|^{-1} ∫|f_w| / α`.
    pub bad_average: f64,
    /// `max_x Σ_n |g^n_w(x)| / α`.
    pub level_good_sum: f64,
    /// `max_x Σ_n |g^n(x)| / α`.
    pub level_good_total: f64,
    /// `max_w Σ_n (‖g^n_w‖₁ + ‖b^n_w‖₁) / ∫_w |f|`.
    pub budget: f64,
    /// `α |Ω| / ‖f‖₁`.
    pub weak_type: f64,
    /// Largest `|∫ b^n_w|` relative to `‖f^n_w‖₁`.
    pub mean_zero_error: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: usize,
}

/// `f^n_w`, its `w`-average `g^n_w` and `b^n_w = f^n_w − g^n_w`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelPiece {
    pub region: usize,
    pub level: u32,
    pub f: GridFunction,
    pub g: GridFunction,
    pub b: GridFunction,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CzPieces {
    pub alpha: f64,
    pub c: f64,
    pub whitney: WhitneyDecomposition,
    pub good: GridFunction,
    /// `f_w` indexed like `whitney.cells`.
    pub bad: Vec<GridFunction>,
    pub levels: Vec<LevelPiece>,
    pub constants: CzConstants,
}

impl CzPieces {
    pub fn max_level(&self) -> u32 {
        self.levels.iter().map(|p| p.level).max().unwrap_or(0)
    }

    /// `Σ_w` of the chosen component over pieces of level `n`.
    pub fn level_sum(
        &self,
        n: u32,
        pick: impl Fn(&LevelPiece) -> &GridFunction,
    ) -> Result<GridFunction> {
        let mut acc = GridFunction::zeros(self.good.root().clone(), self.good.resolution())?;
        for p in self.levels.iter().filter(|p| p.level == n) {
            acc = acc.add(pick(p))?;
        }
        Ok(acc)
    }
}

/// Level `n >= 1` with `2^{c(n−1)} α < |v| <= 2^{cn} α`.
pub fn level_of(v: f64, alpha: f64, c: f64) -> u32 {
    let ratio = v.abs() / alpha;
    let mut n = ((ratio.log2() / c).ceil() as i64).max(1) as u32;
    while ratio > (c * n as f64).exp2() {
        n += 1;
    }
    while n > 1 && ratio <= (c * (n - 1) as f64).exp2() {
        n -= 1;
    }
    n
}

/// `f = g + Σ_w Σ_n f^n_w` over `Ω = {M_HL f > α}`.
pub fn cz_split(f: &GridFunction, alpha: f64, dil: &DilationGroup, c: f64) -> Result<CzPieces> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(invalid("alpha must be positive"));
    }
    if !(c > 0.0 && c < 0.5) {
        return Err(invalid("c must lie in (0, 1/2)"));
    }
    let m = maximal_hl(f, dil, None)?;
    let omega: BTreeSet<Cell> = m
        .iter()
        .filter(|(_, v)| **v > alpha)
        .map(|(c, _)| c.clone())
        .collect();
    let whitney = whitney(&omega, f.root(), f.resolution(), dil)?;
    let owner = whitney.owner_map();
    let root = f.root().clone();
    let res = f.resolution();
    let vol = f.cell_volume();

    let mut good_cells = Vec::new();
    let mut bad_cells: Vec<Vec<(Cell, f64)>> = vec![Vec::new(); whitney.cells.len()];
    for (cell, v) in f.iter() {
        match owner.get(cell) {
            Some(w) if v.abs() > alpha => bad_cells[*w].push((cell.clone(), *v)),
            Some(_) => good_cells.push((cell.clone(), *v)),
            None if v.abs() > alpha => {
                return Err(invariant("|f| exceeds alpha outside omega"));
            }
            None => good_cells.push((cell.clone(), *v)),
        }
    }
    let good = GridFunction::from_cells(root.clone(), res, good_cells)?;

    let mut bad = Vec::with_capacity(whitney.cells.len());
    let mut levels = Vec::new();
    let mut k = CzConstants {
        good_sup: good.sup_norm() / alpha,
        k1: whitney.k1,
        k2: whitney.k2,
        k3: whitney.k3,
        ..Default::default()
    };
    let mut level_total: BTreeMap<Cell, f64> = BTreeMap::new();
    for (wi, (w, cells)) in whitney.cells.iter().zip(bad_cells).enumerate() {
        let fw = GridFunction::from_cells(root.clone(), res, cells.clone())?;
        let wm = w.measure();
        k.bad_average = k.bad_average.max(fw.l1_norm() / wm / alpha);
        let mut by_level: BTreeMap<u32, Vec<(Cell, f64)>> = BTreeMap::new();
        for (cell, v) in cells {
            by_level
                .entry(level_of(v, alpha, c))
                .or_default()
                .push((cell, v));
        }
        let mut g_sum = 0.0;
        let mut budget = 0.0;
        for (n, cells) in by_level {
            let fnw = GridFunction::from_cells(root.clone(), res, cells)?;
            let avg = fnw.integral() / wm;
            let g = GridFunction::from_cells(
                root.clone(),
                res,
                w.cells.iter().map(|c| (c.clone(), avg)).collect::<Vec<_>>(),
            )?;
            let b = fnw.sub(&g)?;
            let l1 = fnw.l1_norm();
            if l1 > 0.0 {
                let mut acc = CompensatedSum::new();
                for (_, v) in b.iter() {
                    acc.add(*v);
                }
                k.mean_zero_error = k.mean_zero_error.max((acc.value() * vol).abs() / l1);
            }
            g_sum += avg.abs();
            budget += g.l1_norm() + b.l1_norm();
            for cell in &w.cells {
                *level_total.entry(cell.clone()).or_insert(0.0) += avg.abs();
            }
            levels.push(LevelPiece {
                region: wi,
                level: n,
                f: fnw,
                g,
                b,
            });
        }
        k.level_good_sum = k.level_good_sum.max(g_sum / alpha);
        let fw_all = f
            .filter_cells(|cell| owner.get(cell) == Some(&wi))
            .l1_norm();
        if fw_all > 0.0 {
            k.budget = k.budget.max(budget / fw_all);
        }
        bad.push(fw);
    }
    k.level_good_total = level_total.values().fold(0.0f64, |m, v| m.max(*v)) / alpha;
    let l1 = f.l1_norm();
    k.weak_type = if l1 > 0.0 {
        alpha * whitney.omega_measure() / l1
    } else {
        0.0
    };
    if k.mean_zero_error > 1e-12 {
        return Err(invariant(format!(
            "level pieces not mean zero: {}",
            k.mean_zero_error
        )));
    }
    Ok(CzPieces {
        alpha,
        c,
        whitney,
        good,
        bad,
        levels,
        constants: k,
    })
}

/// `I^n_l = [ln, (l+1)n)` and `(I^n_l)^* = [(l−1)n, (l+1+2/a)n]`.
pub fn interval_index(
    n: i64,
    l: i64,
    dil: &DilationGroup,
) -> Result<(Range<i64>, RangeInclusive<i64>)> {
    if n < 1 {
        return Err(invalid("n must be at least 1"));
    }
    let hi = ((l + 1) as f64 + 2.0 / dil.a) * n as f64;
    Ok((l * n..(l + 1) * n, (l - 1) * n..=hi.floor() as i64))
}

/// Result of projecting onto polynomials on a Whitney region.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Projection {
    pub projection: GridFunction,
    pub residual: GridFunction,
    /// The Gram system was degenerate and only the mean was removed.
    pub mean_only: bool,
    /// `‖Π h‖_∞ / (|w|^{-1} ∫_w |h|)`.
    pub sup_ratio: f64,
    /// Largest `|∫ residual · y^β|` relative to `∫|h| · sup_w |y^β|`.
    pub max_moment: f64,
}

/// Multi-indices with `|β| <= degree`.
pub fn multi_indices(dim: usize, degree: usize) -> Vec<Vec<usize>> {
    fn rec(dim: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == dim {
            out.push(cur.clone());
            return;
        }
        for k in 0..=left {
            cur.push(k);
            rec(dim, left - k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(dim, degree, &mut Vec::new(), &mut out);
    out.sort_by_key(|b| b.iter().sum::<usize>());
    out
}

/// Cell averages of `y^β` in the rescaled coordinates `y = δ_{−r}(x − x_w)`.
fn cell_monomials(w: &WhitneyCell, dil: &DilationGroup, basis: &[Vec<usize>]) -> Vec<Vec<f64>> {
    let h = pow2(-(w.resolution as i64));
    let inv: Vec<f64> = dil
        .exponents
        .iter()
        .map(|p| (-(w.scale as f64) * p).exp2())
        .collect();
    w.cells
        .iter()
        .map(|c| {
            basis
                .iter()
                .map(|beta| {
                    let mut v = 1.0;
                    for a in 0..c.len() {
                        let y0 = (c[a] as f64 * h - w.center[a]) * inv[a];
                        let y1 = ((c[a] + 1) as f64 * h - w.center[a]) * inv[a];
                        let k = beta[a] as i32;
                        v *= (y1.powi(k + 1) - y0.powi(k + 1)) / ((k + 1) as f64 * (y1 - y0));
                    }
                    v
                })
                .collect()
        })
        .collect()
}

/// Orthogonal projection of `h` onto cell-averaged polynomials of total
/// degree `<= degree` on `w`, so the residual has vanishing moments.
pub fn project_polynomial(
    h: &GridFunction,
    w: &WhitneyCell,
    dil: &DilationGroup,
    degree: usize,
) -> Result<Projection> {
    if h.resolution() != w.resolution {
        return Err(invalid("projection needs h at the Whitney resolution"));
    }
    let inside: BTreeSet<&Cell> = w.cells.iter().collect();
    if h.iter().any(|(c, v)| *v != 0.0 && !inside.contains(c)) {
        return Err(invalid("h not supported in w"));
    }
    let basis = multi_indices(h.dim(), degree);
    let mono = cell_monomials(w, dil, &basis);
    let vals: Vec<f64> = w.cells.iter().map(|c| h.get(c)).collect();
    let k = basis.len();
    let gram = DMatrix::from_fn(k, k, |a, b| mono.iter().map(|m| m[a] * m[b]).sum::<f64>());
    let rhs = DVector::from_fn(k, |a, _| {
        mono.iter().zip(&vals).map(|(m, v)| m[a] * v).sum::<f64>()
    });
    let sv = gram.clone().singular_values();
    let cond_ok = w.cells.len() >= k && sv.max() > 0.0 && sv.min() / sv.max() > 1e-13;
    let (coeffs, mean_only) = match (cond_ok, gram.cholesky()) {
        (true, Some(ch)) => (ch.solve(&rhs), false),
        _ => {
            let mut c = DVector::zeros(k);
            c[0] = vals.iter().sum::<f64>() / vals.len() as f64;
            (c, true)
        }
    };
    let proj_vals: Vec<f64> = mono
        .iter()
        .map(|m| (0..k).map(|a| coeffs[a] * m[a]).sum::<f64>())
        .collect();
    let root = h.root().clone();
    let res = h.resolution();
    let projection = GridFunction::from_cells(
        root.clone(),
        res,
        w.cells
            .iter()
            .cloned()
            .zip(proj_vals.iter().cloned())
            .collect::<Vec<_>>(),
    )?;
    let residual = GridFunction::from_cells(
        root,
        res,
        w.cells
            .iter()
            .cloned()
            .zip(vals.iter().zip(&proj_vals).map(|(v, p)| v - p))
            .collect::<Vec<_>>(),
    )?;
    let abs_avg = vals.iter().map(|v| v.abs()).sum::<f64>() / vals.len() as f64;
    let sup_ratio = if abs_avg > 0.0 {
        projection.sup_norm() / abs_avg
    } else {
        0.0
    };
    let total: f64 = vals.iter().map(|v| v.abs()).sum();
    let mut max_moment = 0.0f64;
    let moments = if mean_only { 1 } else { k };
    for a in 0..moments {
        let m: f64 = mono
            .iter()
            .zip(&vals)
            .zip(&proj_vals)
            .map(|((m, v), p)| m[a] * (v - p))
            .sum();
        let sup = mono.iter().fold(0.0f64, |s, m| s.max(m[a].abs()));
        if total > 0.0 && sup > 0.0 {
            max_moment = max_moment.max(m.abs() / (total * sup));
        }
    }
    Ok(Projection {
        projection,
        residual,
        mean_only,
        sup_ratio,
        max_moment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn para() -> DilationGroup {
        DilationGroup::new(vec![1.0, 2.0]).unwrap()
    }

    #[test]
    fn maximal_of_indicator() {
        let root = DyadicCube::new(-2, vec![0, 0]);
        let q = DyadicCube::new(0, vec![1, 1]);
        let f = GridFunction::indicator(root, 3, &q, 1.0).unwrap();
        let m = maximal_hl(&f, &para(), None).unwrap();
        let tau = para().tau;
        for c in q.cells_at(3) {
            let v = m.get(&c);
            assert!(v <= 1.0 + 1e-12 && v >= (-tau).exp2(), "{v}");
        }
        let z = GridFunction::zeros(DyadicCube::unit(2), 3).unwrap();
        assert!(maximal_hl(&z, &para(), None).unwrap().is_zero());
    }

    #[test]
    fn whitney_of_ball() {
        let root = DyadicCube::new(-2, vec![0, 0]);
        let res = 3;
        let dil = para();
        let centre = [2.0, 2.0];
        let omega: BTreeSet<Cell> = root
            .cells_at(res)
            .into_iter()
            .filter(|c| {
                let x = [
                    (c[0] as f64 + 0.5) / 8.0 - centre[0],
                    (c[1] as f64 + 0.5) / 8.0 - centre[1],
                ];
                dil.rho(&x) < 1.2
            })
            .collect();
        let dec = whitney(&omega, &root, res, &dil).unwrap();
        assert!(dec.omega.is_superset(&omega));
        for w in dec.cells.iter().filter(|w| !w.forced) {
            // ρ-distance from the centre to the complement of the ball.
            let dist = 1.2 - dil.rho(&[w.center[0] - centre[0], w.center[1] - centre[1]]);
            let s = w.star_radius();
            assert!(dist >= s * 0.5 && dist <= 16.0 * s, "{dist} {s}");
        }
        assert!(dec.k3 >= 1);
        assert!(whitney(&BTreeSet::new(), &root, res, &dil)
            .unwrap()
            .cells
            .is_empty());
        let all: BTreeSet<Cell> = root.cells_at(res).into_iter().collect();
        assert!(whitney(&all, &root, res, &dil).is_err());
    }

    #[test]
    fn below_threshold_split() {
        let root = DyadicCube::new(-1, vec![0, 0]);
        let f =
            GridFunction::from_cells(root, 3, vec![(vec![3, 3], 0.2), (vec![4, 4], -0.1)]).unwrap();
        let cz = cz_split(&f, 1.0, &para(), 0.125).unwrap();
        assert!(cz.whitney.cells.is_empty());
        assert_eq!(cz.good, f);
        assert!(cz.levels.is_empty());
    }

    #[test]
    fn single_spike_split() {
        let root = DyadicCube::new(-2, vec![0, 0]);
        let f = GridFunction::from_cells(root, 3, vec![(vec![13, 13], 100.0), (vec![2, 2], 0.5)])
            .unwrap();
        let cz = cz_split(&f, 1.0, &para(), 0.125).unwrap();
        assert!(!cz.whitney.cells.is_empty());
        let total: f64 = cz.levels.iter().map(|p| p.f.l1_norm()).sum();
        let big = f.filter_cells(|c| f.get(c).abs() > 1.0).l1_norm();
        assert_eq!(total, big);
        assert_eq!(cz.levels.len(), 1);
        assert_eq!(cz.levels[0].level, level_of(100.0, 1.0, 0.125));
    }

    #[test]
    fn levels_bracket_values() {
        for (v, c) in [(1.5, 0.25), (2.0, 0.5), (1000.0, 0.1), (1.0000001, 0.2)] {
            let n = level_of(v, 1.0, c);
            assert!(n >= 1);
            assert!(v <= (c * n as f64).exp2());
            assert!(n == 1 || v > (c * (n - 1) as f64).exp2());
        }
    }

    #[test]
    fn interval_examples() {
        let iso = DilationGroup::isotropic(2);
        let (i, s) = interval_index(2, 0, &iso).unwrap();
        assert_eq!(i, 0..2);
        assert_eq!(s, -2..=6);
        let (i, _) = interval_index(1, 5, &iso).unwrap();
        assert_eq!(i.collect::<Vec<_>>(), vec![5]);
        assert!(interval_index(0, 0, &iso).is_err());
    }

    #[test]
    fn interval_overlap_bound() {
        for (dil, a) in [(DilationGroup::isotropic(2), 1.0), (para(), 1.0)] {
            for n in 1..=6i64 {
                for k in -20..20i64 {
                    let hits = (-40..40)
                        .filter(|l| interval_index(n, *l, &dil).unwrap().1.contains(&k))
                        .count();
                    assert!(hits as f64 <= 3.0 + 2.0 / a, "n={n} k={k} hits={hits}");
                }
            }
        }
    }

    fn sample_region() -> WhitneyCell {
        let mut cells = Vec::new();
        for_each_in_box(&[(8, 16), (0, 4)], |c| cells.push(c.to_vec()));
        WhitneyCell {
            scale: -1,
            index: vec![1, 0],
            center: vec![0.75, 0.125],
            resolution: 4,
            cells,
            forced: false,
        }
    }

    #[test]
    fn projection_of_polynomial_is_exact() {
        let w = sample_region();
        let root = DyadicCube::unit(2);
        // Piecewise constant cell averages of a linear polynomial in y.
        let basis = multi_indices(2, 2);
        let mono = cell_monomials(&w, &para(), &basis);
        let h = GridFunction::from_cells(
            root,
            4,
            w.cells
                .iter()
                .cloned()
                .zip(mono.iter().map(|m| 2.0 * m[0] - m[1] + 0.5 * m[2]))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let p = project_polynomial(&h, &w, &para(), 2).unwrap();
        assert!(!p.mean_only);
        assert!(p.residual.sup_norm() < 1e-12);
    }

    #[test]
    fn half_indicator_residual_moments() {
        let w = sample_region();
        let h = GridFunction::from_cells(
            DyadicCube::unit(2),
            4,
            w.cells
                .iter()
                .filter(|c| c[0] < 12)
                .map(|c| (c.clone(), 1.0))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let p = project_polynomial(&h, &w, &para(), 2).unwrap();
        assert!(p.max_moment < 1e-12, "{}", p.max_moment);
        assert!(p.sup_ratio.is_finite());
        let tiny = WhitneyCell {
            cells: vec![vec![8, 0]],
            ..sample_region()
        };
        let h1 = GridFunction::from_cells(DyadicCube::unit(2), 4, vec![(vec![8, 0], 3.0)]).unwrap();
        let p1 = project_polynomial(&h1, &tiny, &para(), 2).unwrap();
        assert!(p1.mean_only);
        assert_eq!(p1.residual.sup_norm(), 0.0);
    }

    #[test]
    fn weak_type_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let root = DyadicCube::new(-2, vec![0, 0]);
        let mut worst = 0.0f64;
        for _ in 0..10 {
            let cells: Vec<(Cell, f64)> = (0..20)
                .map(|_| {
                    (
                        vec![rng.gen_range(0..32), rng.gen_range(0..32)],
                        rng.gen_range(-50.0..50.0),
                    )
                })
                .collect();
            let f = GridFunction::from_cells(root.clone(), 3, cells).unwrap();
            let m = maximal_hl(&f, &para(), None).unwrap();
            for alpha in [0.5, 2.0, 8.0] {
                let meas = m.iter().filter(|(_, v)| **v > alpha).count() as f64 * f.cell_volume();
                worst = worst.max(meas * alpha / f.l1_norm());
            }
        }
        assert!(worst < 64.0, "{worst}");
    }

    #[test]
    fn random_whitney_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let root = DyadicCube::new(-2, vec![0, 0]);
        for dil in [para(), DilationGroup::isotropic(2)] {
            for _ in 0..20 {
                let mut omega = BTreeSet::new();
                for _ in 0..rng.gen_range(1..6) {
                    let (x, y) = (rng.gen_range(0..32i64), rng.gen_range(0..32i64));
                    let (wx, wy) = (rng.gen_range(1..10i64), rng.gen_range(1..10i64));
                    for cx in x..(x + wx).min(32) {
                        for cy in y..(y + wy).min(32) {
                            omega.insert(vec![cx, cy]);
                        }
                    }
                }
                let dec = whitney(&omega, &root, 3, &dil).unwrap();
                let total: usize = dec.cells.iter().map(|w| w.cells.len()).sum();
                assert_eq!(total, dec.omega.len());
                assert!(dec.omega.is_superset(&omega));
                assert!(dec.k3 >= 1 && dec.k3 <= 64);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn split_reconstructs(seed in 0u64..10_000, alpha in 0.5f64..4.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let root = DyadicCube::new(-1, vec![0, 0]);
            let cells: Vec<(Cell, f64)> = (0..12)
                .map(|_| (vec![rng.gen_range(0..16), rng.gen_range(0..16)], rng.gen_range(-30.0..30.0)))
                .collect();
            let f = GridFunction::from_cells(root, 3, cells).unwrap();
            let cz = cz_split(&f, alpha, &para(), 0.125).unwrap();
            let mut total = cz.good.clone();
            for p in &cz.levels {
                total = total.add(&p.f).unwrap();
            }
            prop_assert_eq!(&total, &f);
            prop_assert!(cz.constants.good_sup <= 1.0);
            prop_assert!(cz.constants.mean_zero_error <= 1e-12);
            for w in &cz.whitney.cells {
                prop_assert!(w.measure() > 0.0);
            }
        }
    }
}
