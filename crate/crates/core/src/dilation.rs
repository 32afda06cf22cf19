//! Diagonal nonisotropic dilations `δ_k = 2^{kP}`, the homogeneous distance
//! `ρ`, dilation of grid functions, the thickness/length scaling check and
//! the moment-free mollifier `φ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::content::{length, thickness, ContentParams};
use crate::dense::DenseGrid;
use crate::dyadic::{Cell, DyadicCube, GridFunction};
use crate::error::{invalid, invariant, Error, Result};
use crate::numeric::pow2;
use crate::surface::SurfaceMeasure;

/// `P = diag(p)` with exponent bounds `a <= min p`, `A >= max p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DilationGroup {
    pub exponents: Vec<f64>,
    pub tau: f64,
    pub a: f64,
    #[serde(rename = "A")]
    pub big_a: f64,
    pub c1: f64,
    #[serde(rename = "C1")]
    pub big_c1: f64,
}

impl DilationGroup {
    pub fn new(exponents: Vec<f64>) -> Result<Self> {
        Self::with_guard(exponents, 0.0)
    }

    /// `a = min p − guard`, `A = max p + guard`.
    pub fn with_guard(exponents: Vec<f64>, guard: f64) -> Result<Self> {
        if exponents.is_empty() || exponents.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(invalid("dilation exponents must be positive and finite"));
        }
        if !(guard >= 0.0) {
            return Err(invalid("guard must be nonnegative"));
        }
        let tau: f64 = exponents.iter().sum();
        let pmin = exponents.iter().cloned().fold(f64::INFINITY, f64::min);
        let pmax = exponents.iter().cloned().fold(0.0, f64::max);
        let a = pmin - guard;
        let big_a = pmax + guard;
        if a <= 0.0 {
            return Err(invalid("guard leaves no room below the smallest exponent"));
        }
        if exponents.len() >= 2 && big_a >= tau {
            return Err(invalid("upper exponent bound must stay below the trace"));
        }
        // For diagonal P and t >= 1 every coordinate scales by t^{p_i},
        // which lies in [t^a, t^A]; both envelope constants are 1.
        Ok(Self {
            exponents,
            tau,
            a,
            big_a,
            c1: 1.0,
            big_c1: 1.0,
        })
    }

    pub fn isotropic(d: usize) -> Self {
        Self::new(vec![1.0; d]).expect("valid")
    }

    pub fn dim(&self) -> usize {
        self.exponents.len()
    }

    pub fn pmin(&self) -> f64 {
        self.exponents.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn pmax(&self) -> f64 {
        self.exponents.iter().cloned().fold(0.0, f64::max)
    }

    /// Integer exponents, enabling exact grid dilation.
    pub fn integer_exponents(&self) -> Option<Vec<i64>> {
        self.exponents
            .iter()
            .map(|p| {
                if p.fract() == 0.0 {
                    Some(*p as i64)
                } else {
                    None
                }
            })
            .collect()
    }

    /// `t^P x`.
    pub fn apply(&self, t: f64, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.exponents)
            .map(|(xi, p)| xi * t.powf(*p))
            .collect()
    }

    /// `δ_k x = 2^{kP} x`.
    pub fn delta(&self, k: i64, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.exponents)
            .map(|(xi, p)| xi * (k as f64 * p).exp2())
            .collect()
    }

    /// Homogeneous distance `ρ(x) = max_i |x_i|^{1/p_i}`.
    pub fn rho(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.exponents)
            .map(|(xi, p)| xi.abs().powf(1.0 / p))
            .fold(0.0, f64::max)
    }

    /// Half-widths of the closed ρ-ball of radius `r`: `r^{p_i}`.
    pub fn ball_half_widths(&self, r: f64) -> Vec<f64> {
        self.exponents.iter().map(|p| r.powf(*p)).collect()
    }
}

/// Free-standing form of [`DilationGroup::rho`].
pub fn rho(x: &[f64], dil: &DilationGroup) -> f64 {
    dil.rho(x)
}

/// `x ↦ f(δ_k x)` by exact re-indexing; requires integer exponents.
pub fn dilate_grid(f: &GridFunction, k: i64, dil: &DilationGroup) -> Result<GridFunction> {
    if dil.dim() != f.dim() {
        return Err(invalid("dilation dimension mismatch"));
    }
    let p = dil
        .integer_exponents()
        .ok_or_else(|| invalid("exact grid dilation needs integer exponents"))?;
    if k == 0 {
        return Ok(f.clone());
    }
    let r = f.resolution() as i64;
    // Axis i of a level-r cell becomes a level-(r + k p_i) interval.
    let axis_levels: Vec<i64> = p.iter().map(|pi| r + k * pi).collect();
    let new_res = *axis_levels.iter().max().unwrap();
    let root = f.root();
    let root_levels: Vec<i64> = p.iter().map(|pi| root.level as i64 + k * pi).collect();
    let new_root_level = *root_levels.iter().min().unwrap();
    let new_root = DyadicCube::new(
        new_root_level as i32,
        root.coords
            .iter()
            .zip(&root_levels)
            .map(|(c, l)| c >> (l - new_root_level))
            .collect(),
    );
    let expand: Vec<u32> = axis_levels.iter().map(|l| (new_res - l) as u32).collect();
    let mut cells: Vec<(Cell, f64)> = Vec::new();
    for (c, v) in f.iter() {
        let ranges: Vec<(i64, i64)> = c
            .iter()
            .zip(&expand)
            .map(|(ci, e)| (ci << e, (ci + 1) << e))
            .collect();
        for_each_in_box(&ranges, |cell| cells.push((cell.to_vec(), *v)));
    }
    GridFunction::from_cells(new_root, new_res as i32, cells)
}

/// Mass-preserving dilation `2^{-kτ} f(δ_{-k} x)`.
pub fn measure_dilate(f: &GridFunction, k: i64, dil: &DilationGroup) -> Result<GridFunction> {
    Ok(dilate_grid(f, -k, dil)?.scale((-(k as f64) * dil.tau).exp2()))
}

pub(crate) fn for_each_in_box(ranges: &[(i64, i64)], mut visit: impl FnMut(&[i64])) {
    if ranges.iter().any(|r| r.0 >= r.1) {
        return;
    }
    let mut cur: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    loop {
        visit(&cur);
        let mut i = ranges.len();
        loop {
            if i == 0 {
                return;
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

/// Area-weighted resampling of `f(δ_k x)` onto level `resolution`, for any
/// positive exponents. Returns the function and the relative mass error
/// against the exact value `2^{-kτ}∫f`.
pub fn dilate_grid_resampled(
    f: &GridFunction,
    k: i64,
    dil: &DilationGroup,
    resolution: i32,
) -> Result<(GridFunction, f64)> {
    if dil.dim() != f.dim() {
        return Err(invalid("dilation dimension mismatch"));
    }
    let d = f.dim();
    let inv: Vec<f64> = dil
        .exponents
        .iter()
        .map(|p| (-(k as f64) * p).exp2())
        .collect();
    let root = f.root();
    let rlo = root.lower();
    let lo: Vec<f64> = (0..d).map(|i| rlo[i] * inv[i]).collect();
    let hi: Vec<f64> = (0..d).map(|i| (rlo[i] + root.side()) * inv[i]).collect();
    let new_root =
        enclosing_cube(&lo, &hi).ok_or_else(|| invalid("dilated root straddles an axis"))?;
    let new_root = if new_root.level > resolution {
        new_root.ancestor(resolution)
    } else {
        new_root
    };
    let scale = pow2(resolution as i64);
    let h = f.cell_side();
    let mut out = GridFunction::zeros(new_root, resolution)?;
    let mut acc: std::collections::BTreeMap<Cell, f64> = std::collections::BTreeMap::new();
    for (c, v) in f.iter() {
        let a: Vec<f64> = (0..d).map(|i| c[i] as f64 * h * inv[i]).collect();
        let b: Vec<f64> = (0..d).map(|i| (c[i] + 1) as f64 * h * inv[i]).collect();
        let ranges: Vec<(i64, i64)> = (0..d)
            .map(|i| ((a[i] * scale).floor() as i64, (b[i] * scale).ceil() as i64))
            .collect();
        for_each_in_box(&ranges, |cell| {
            let mut frac = 1.0;
            for i in 0..d {
                let cl = cell[i] as f64 / scale;
                let ch = (cell[i] + 1) as f64 / scale;
                let ov = (ch.min(b[i]) - cl.max(a[i])).max(0.0);
                frac *= ov * scale;
            }
            if frac > 0.0 {
                *acc.entry(cell.to_vec()).or_insert(0.0) += v * frac;
            }
        });
    }
    for (c, v) in acc {
        out.set(c, v)?;
    }
    let expect = f.integral() * (-(k as f64) * dil.tau).exp2();
    let err = if expect == 0.0 {
        0.0
    } else {
        ((out.integral() - expect) / expect).abs()
    };
    Ok((out, err))
}

/// Smallest dyadic cube containing the box `[lo, hi)`, if one exists.
pub fn enclosing_cube(lo: &[f64], hi: &[f64]) -> Option<DyadicCube> {
    let ext = lo.iter().zip(hi).map(|(a, b)| b - a).fold(0.0, f64::max);
    if !(ext > 0.0) {
        return None;
    }
    let mut level = (-ext.log2()).floor() as i32;
    for _ in 0..80 {
        let s = pow2(level as i64);
        let a: Vec<i64> = lo.iter().map(|x| (x * s).floor() as i64).collect();
        let b: Vec<i64> = hi.iter().map(|x| (x * s).ceil() as i64 - 1).collect();
        if a == b {
            return Some(DyadicCube::new(level, a));
        }
        level -= 1;
    }
    None
}

/// Both sides of the two scaling inequalities for thickness and length.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingReport {
    pub constant: f64,
    pub thickness_lhs: f64,
    pub thickness_bound: f64,
    pub length_lhs: f64,
    pub length_bound: f64,
    /// `Θ_n[f(δ_j·)] / (2^{-j(τ−A)} Θ_n[f])`.
    pub thickness_ratio: f64,
    /// `Λ_n[f(δ_{−m}·)] / (2^{Am} Λ_n[f])`.
    pub length_ratio: f64,
}

/// Checks `Θ_n[f(δ_j·)] <= C 2^{-j(τ−A)} Θ_n[f]` and
/// `Λ_n[f(δ_{−m}·)] <= C 2^{Am} Λ_n[f]` with `C = 2^d C'`.
pub fn scaling_check(
    f: &GridFunction,
    n: i32,
    j: i64,
    m: i64,
    dil: &DilationGroup,
) -> Result<ScalingReport> {
    if j < 0 || m < 0 {
        return Err(invalid("scaling check needs j, m >= 0"));
    }
    let d = f.dim() as i32;
    // Integer exponents map dyadic cubes onto dyadic rectangles, so one
    // dyadic cube of side 2^{jA} l(Q) covers δ_j Q.
    let c_prime = if dil.integer_exponents().is_some() && dil.big_a == dil.pmax() {
        1.0
    } else {
        2.0
    };
    let constant = pow2(d as i64) * c_prime;
    let fd = dilate_grid(f, j, dil)?;
    let fm = dilate_grid(f, -m, dil)?;
    let p = ContentParams::new(n);
    let th = thickness(f, &p)?;
    let th_l = thickness(&fd, &ContentParams::new(n.max(fd.root().level)))?;
    let la = length(f, &p)?;
    let la_l = length(&fm, &ContentParams::new(n.max(fm.root().level)))?;
    let t_scale = (-(j as f64) * (dil.tau - dil.big_a)).exp2();
    let l_scale = (m as f64 * dil.big_a).exp2();
    let report = ScalingReport {
        constant,
        thickness_lhs: th_l,
        thickness_bound: constant * t_scale * th,
        length_lhs: la_l,
        length_bound: constant * l_scale * la,
        thickness_ratio: if th > 0.0 { th_l / (t_scale * th) } else { 0.0 },
        length_ratio: if la > 0.0 { la_l / (l_scale * la) } else { 0.0 },
    };
    if report.thickness_lhs > report.thickness_bound * (1.0 + 1e-12)
        || report.length_lhs > report.length_bound * (1.0 + 1e-12)
    {
        return Err(invariant(format!("scaling bound violated: {report:?}")));
    }
    Ok(report)
}

/// Tensor-product mollifier `φ(x) = Π φ₁(x_i)` with `φ₁ = bump·polynomial`
/// supported in `|t| <= s`, `s = 1/(2√d)`, so `supp φ ⊂ {|x| <= ½}`.
#[derive(Clone, Debug)]
pub struct Mollifier {
    pub dim: usize,
    pub half_width: f64,
    /// Polynomial coefficients, lowest degree first.
    pub coeffs: Vec<f64>,
    cdf_table: Vec<f64>,
}

const CDF_INTERVALS: usize = 4096;

fn bump(t: f64, s: f64) -> f64 {
    let u = t / s;
    if u.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - u * u)).exp()
    }
}

/// Midpoint-rule moments `∫ bump(t) t^k dt`, `k < count`. The rule is
/// spectrally accurate for a flat-ended bump.
fn bump_moments(s: f64, count: usize, nodes: usize) -> Vec<f64> {
    let h = 2.0 * s / nodes as f64;
    let mut out = vec![0.0; count];
    for i in 0..nodes {
        let t = -s + (i as f64 + 0.5) * h;
        let b = bump(t, s) * h;
        let mut tk = 1.0;
        for o in out.iter_mut() {
            *o += b * tk;
            tk *= t;
        }
    }
    out
}

impl Mollifier {
    pub fn profile(&self, t: f64) -> f64 {
        let b = bump(t, self.half_width);
        if b == 0.0 {
            return 0.0;
        }
        let mut p = 0.0;
        for c in self.coeffs.iter().rev() {
            p = p * t + c;
        }
        b * p
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        x.iter().map(|t| self.profile(*t)).product()
    }

    /// `∫_{-∞}^t φ₁`, from a cubic Hermite table.
    pub fn profile_cdf(&self, t: f64) -> f64 {
        let s = self.half_width;
        if t <= -s {
            return 0.0;
        }
        if t >= s {
            return 1.0;
        }
        let h = 2.0 * s / CDF_INTERVALS as f64;
        let u = (t + s) / h;
        let i = (u.floor() as usize).min(CDF_INTERVALS - 1);
        let x = u - i as f64;
        let t0 = -s + i as f64 * h;
        let (y0, y1) = (self.cdf_table[i], self.cdf_table[i + 1]);
        let (m0, m1) = (self.profile(t0) * h, self.profile(t0 + h) * h);
        let x2 = x * x;
        let x3 = x2 * x;
        (2.0 * x3 - 3.0 * x2 + 1.0) * y0
            + (x3 - 2.0 * x2 + x) * m0
            + (-2.0 * x3 + 3.0 * x2) * y1
            + (x3 - x2) * m1
    }

    /// `∫ φ(x) x^β dx` for a multi-index `β`, by a fine midpoint rule.
    pub fn moment(&self, beta: &[usize]) -> f64 {
        let nodes = 20_000;
        let s = self.half_width;
        let h = 2.0 * s / nodes as f64;
        beta.iter()
            .map(|k| {
                (0..nodes)
                    .map(|i| {
                        let t = -s + (i as f64 + 0.5) * h;
                        self.profile(t) * t.powi(*k as i32) * h
                    })
                    .sum::<f64>()
            })
            .product()
    }

    /// `φ_n(x) = 2^{nd} φ(2^n x)`.
    pub fn scaled(&self, n: i32, x: &[f64]) -> f64 {
        let s = pow2(n as i64);
        let y: Vec<f64> = x.iter().map(|t| t * s).collect();
        pow2(n as i64 * self.dim as i64) * self.eval(&y)
    }
}

/// Builds `φ` in dimension `d` with `∫φ = 1` and vanishing moments of
/// orders `1..=d`.
pub fn build_mollifier(d: usize) -> Result<Mollifier> {
    if d == 0 {
        return Err(invalid("dimension must be positive"));
    }
    let s = 0.5 / (d as f64).sqrt();
    let k = d + 1;
    let mom = bump_moments(s, 2 * k, 40_000);
    let m = DMatrix::from_fn(k, k, |r, c| mom[r + c]);
    let mut rhs = DVector::zeros(k);
    rhs[0] = 1.0;
    let coeffs = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular moment system".into()))?;
    let mut moll = Mollifier {
        dim: d,
        half_width: s,
        coeffs: coeffs.iter().cloned().collect(),
        cdf_table: vec![],
    };

    let h = 2.0 * s / CDF_INTERVALS as f64;
    let mut table = Vec::with_capacity(CDF_INTERVALS + 1);
    table.push(0.0);
    let mut acc = crate::numeric::CompensatedSum::new();
    for i in 0..CDF_INTERVALS {
        // Composite Simpson with 8 panels per table interval.
        let a = -s + i as f64 * h;
        let sub = h / 8.0;
        let mut part = moll.profile(a) + moll.profile(a + h);
        for j in 1..8 {
            let w = if j % 2 == 1 { 4.0 } else { 2.0 };
            part += w * moll.profile(a + j as f64 * sub);
        }
        acc.add(part * sub / 3.0);
        table.push(acc.value());
    }
    moll.cdf_table = table;
    Ok(moll)
}

/// `μ^n = φ_n * μ` as cell averages on level `resolution >= n + 3`.
pub fn mollify(
    mu: &SurfaceMeasure,
    moll: &Mollifier,
    n: i32,
    resolution: i32,
) -> Result<DenseGrid> {
    if resolution < n + 3 {
        return Err(invalid(format!(
            "resolution {resolution} too coarse for n = {n} (need n + 3)"
        )));
    }
    mollify_cells(mu, moll, n, resolution)
}

/// Cell averages of `μ^n` at any level; the cell masses are exact even
/// when the cells are wider than `φ_n`.
pub(crate) fn mollify_cells(
    mu: &SurfaceMeasure,
    moll: &Mollifier,
    n: i32,
    resolution: i32,
) -> Result<DenseGrid> {
    if moll.dim != 2 {
        return Err(invalid("surface measures live in the plane"));
    }
    let h = pow2(-(resolution as i64));
    let reach = moll.half_width * pow2(-(n as i64));
    let nodes = mu.nodes_for_step(h / 4.0);
    let (lo, hi) = mu.bounding_box();
    let origin: Vec<i64> = (0..2)
        .map(|i| ((lo[i] - reach) / h).floor() as i64 - 1)
        .collect();
    let top: Vec<i64> = (0..2)
        .map(|i| ((hi[i] + reach) / h).ceil() as i64 + 1)
        .collect();
    let shape: Vec<usize> = (0..2).map(|i| (top[i] - origin[i]) as usize).collect();
    let mut grid = DenseGrid::zeros(resolution, origin.clone(), shape.clone());
    let sn = pow2(n as i64);
    let inv_vol = 1.0 / (h * h);
    for (t, w) in nodes {
        let y = mu.point(t);
        let mut idx_lo = [0i64; 2];
        let mut idx_hi = [0i64; 2];
        for i in 0..2 {
            idx_lo[i] = ((y[i] - reach) / h).floor() as i64;
            idx_hi[i] = ((y[i] + reach) / h).ceil() as i64;
        }
        let wx: Vec<f64> = (idx_lo[0]..idx_hi[0])
            .map(|c| {
                moll.profile_cdf(sn * ((c + 1) as f64 * h - y[0]))
                    - moll.profile_cdf(sn * (c as f64 * h - y[0]))
            })
            .collect();
        let wy: Vec<f64> = (idx_lo[1]..idx_hi[1])
            .map(|c| {
                moll.profile_cdf(sn * ((c + 1) as f64 * h - y[1]))
                    - moll.profile_cdf(sn * (c as f64 * h - y[1]))
            })
            .collect();
        for (a, cx) in (idx_lo[0]..idx_hi[0]).enumerate() {
            if wx[a] == 0.0 {
                continue;
            }
            for (b, cy) in (idx_lo[1]..idx_hi[1]).enumerate() {
                let idx = grid.index(&[cx, cy]).expect("inside padded box");
                grid.values[idx] += w * wx[a] * wy[b] * inv_vol;
            }
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn para() -> DilationGroup {
        DilationGroup::new(vec![1.0, 2.0]).unwrap()
    }

    #[test]
    fn dilating_unit_square() {
        let f = GridFunction::indicator(DyadicCube::unit(2), 0, &DyadicCube::unit(2), 1.0).unwrap();
        let g = dilate_grid(&f, 1, &para()).unwrap();
        // χ_{[0,½)×[0,¼)}
        assert_eq!(g.resolution(), 2);
        assert_eq!(g.len(), 2);
        assert_eq!(g.get(&[0, 0]), 1.0);
        assert_eq!(g.get(&[1, 0]), 1.0);
        assert_eq!(g.integral(), 0.125);
        assert!(g.root().contains(&DyadicCube::new(2, vec![1, 0])));
    }

    #[test]
    fn identity_and_round_trip() {
        let f = GridFunction::from_cells(
            DyadicCube::unit(2),
            3,
            vec![(vec![1, 5], 2.0), (vec![7, 0], -1.0)],
        )
        .unwrap();
        assert_eq!(dilate_grid(&f, 0, &para()).unwrap(), f);
        for k in [-3i64, -1, 1, 2] {
            let back = dilate_grid(&dilate_grid(&f, k, &para()).unwrap(), -k, &para()).unwrap();
            assert_eq!(back.integral(), f.integral());
            let refined = f.refine(back.resolution()).unwrap();
            for (c, v) in refined.iter() {
                assert_eq!(back.get(c), *v);
            }
            assert_eq!(back.len(), refined.len());
        }
    }

    #[test]
    fn measure_dilation_keeps_mass() {
        let f = GridFunction::from_cells(
            DyadicCube::unit(2),
            3,
            vec![(vec![1, 5], 2.0), (vec![7, 0], 0.3)],
        )
        .unwrap();
        for k in -3..=3 {
            let g = measure_dilate(&f, k, &para()).unwrap();
            assert!((g.integral() - f.integral()).abs() <= 1e-12 * f.integral());
        }
    }

    #[test]
    fn resampling_matches_exact_mode() {
        let f = GridFunction::from_cells(
            DyadicCube::unit(2),
            3,
            vec![(vec![1, 5], 2.0), (vec![7, 0], 0.3)],
        )
        .unwrap();
        let exact = dilate_grid(&f, 1, &para()).unwrap();
        let (res, err) = dilate_grid_resampled(&f, 1, &para(), exact.resolution()).unwrap();
        assert!(err < 1e-12);
        for (c, v) in exact.iter() {
            assert!((res.get(c) - v).abs() < 1e-12);
        }
        let frac = DilationGroup::new(vec![1.0, 1.5]).unwrap();
        assert!(dilate_grid(&f, 1, &frac).is_err());
        let (_, err) = dilate_grid_resampled(&f, 1, &frac, 7).unwrap();
        assert!(err < 1e-12);
    }

    #[test]
    fn rho_examples() {
        assert_eq!(para().rho(&[0.5, 0.25]), 0.5);
        assert_eq!(rho(&[-0.25, 0.0], &para()), 0.25);
    }

    #[test]
    fn scaling_example() {
        let f = GridFunction::indicator(DyadicCube::unit(2), 2, &DyadicCube::unit(2), 1.0).unwrap();
        let r = scaling_check(&f, 2, 1, 0, &para()).unwrap();
        assert_eq!(r.constant, 4.0);
        assert_eq!(r.thickness_lhs, 0.25);
        assert_eq!(r.thickness_bound, 2.0);
        assert_eq!(
            r.thickness_lhs / thickness(&f, &ContentParams::new(2)).unwrap(),
            0.25
        );
        let r0 = scaling_check(&f, 2, 0, 0, &para()).unwrap();
        assert_eq!(r0.thickness_lhs, 1.0);
        assert_eq!(r0.thickness_bound, 4.0);
    }

    #[test]
    fn mollifier_moments() {
        for d in 1..=3 {
            let m = build_mollifier(d).unwrap();
            assert!((m.moment(&vec![0; d]) - 1.0).abs() < 1e-10);
            for k in 1..=d {
                let mut beta = vec![0; d];
                beta[0] = k;
                assert!(m.moment(&beta).abs() < 1e-10, "d={d} k={k}");
            }
            assert_eq!(m.profile(m.half_width), 0.0);
            assert!((m.profile_cdf(m.half_width - 1e-9) - 1.0).abs() < 1e-9);
            assert!(m.half_width * (d as f64).sqrt() <= 0.5 + 1e-15);
        }
    }

    #[test]
    fn mollified_measures() {
        let moll = build_mollifier(2).unwrap();
        let mu = SurfaceMeasure::parabola(2.0).unwrap();
        let mut sups = Vec::new();
        for n in 0..=4 {
            let g = mollify(&mu, &moll, n, n + 4).unwrap();
            assert!((g.integral() - mu.total_mass()).abs() < 1e-10);
            sups.push(g.sup_norm() / pow2(n as i64));
        }
        let spread = sups.iter().cloned().fold(0.0, f64::max)
            / sups.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread < 4.0, "{sups:?}");
        let odd = SurfaceMeasure::parabola_odd(2.0).unwrap();
        let g = mollify(&odd, &moll, 3, 7).unwrap();
        assert!(g.integral().abs() < 1e-10);
        assert!(mollify(&mu, &moll, 3, 5).is_err());
    }

    proptest! {
        #[test]
        fn rho_homogeneous(x in -4.0f64..4.0, y in -4.0f64..4.0, k in -6i64..6) {
            let g = para();
            let lhs = g.rho(&g.delta(k, &[x, y]));
            let rhs = 2f64.powi(k as i32) * g.rho(&[x, y]);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300));
        }

        #[test]
        fn envelope_bounds(x in -3.0f64..3.0, y in -3.0f64..3.0, t in 1.0f64..50.0) {
            let g = para();
            let n = (x * x + y * y).sqrt();
            prop_assume!(n >= 1.0);
            let tx = g.apply(t, &[x, y]);
            let tn = (tx[0] * tx[0] + tx[1] * tx[1]).sqrt();
            prop_assert!(g.c1 * t.powf(g.a) * n <= tn * (1.0 + 1e-12));
            prop_assert!(tn <= g.big_c1 * t.powf(g.big_a) * n * (1.0 + 1e-12));
        }
    }
}
