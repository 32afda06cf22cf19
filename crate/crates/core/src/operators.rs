//! Averages and singular integrals along dilated curves: convolution with
//! `μ_k` and its mollified versions `μ^n_k`, the lacunary maximal operator,
//! the singular Radon transform, parabolic averages, Fourier decay of `μ`,
//! support and autocorrelation checks, and the five-term split of the
//! maximal operator.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::content::{length, thickness, ContentParams};
use crate::czd::{cz_split, interval_index};
use crate::dense::DenseGrid;
use crate::dilation::{build_mollifier, mollify, mollify_cells, DilationGroup, Mollifier};
use crate::dyadic::{DyadicCube, GridFunction};
use crate::error::{invalid, invariant, Error, Result};
use crate::numeric::{ls_slope, pow2};
use crate::surface::SurfaceMeasure;

/// Point masses `(position, weight)` in the plane.
pub type PointMasses = Vec<([f64; 2], f64)>;

/// Cell averages of `Σ_j w_j f(· − s_j)` on the block `origin + [0, shape)`
/// at the resolution of `f`. Exact for piecewise-constant `f` and point
/// masses; each shifted cell overlaps four source cells.
pub fn shift_accumulate(
    f: &DenseGrid,
    masses: &[([f64; 2], f64)],
    origin: &[i64],
    shape: &[usize],
) -> DenseGrid {
    assert_eq!(f.dim(), 2, "shift_accumulate works in the plane");
    let scale = pow2(f.resolution as i64);
    // (integer shift, fractional weights) per mass
    let shifts: Vec<([i64; 2], [[f64; 2]; 2], f64)> = masses
        .iter()
        .filter(|(_, w)| *w != 0.0)
        .map(|(s, w)| {
            let u = [s[0] * scale, s[1] * scale];
            let m = [u[0].floor(), u[1].floor()];
            let phi = [u[0] - m[0], u[1] - m[1]];
            (
                [m[0] as i64, m[1] as i64],
                [[1.0 - phi[0], phi[0]], [1.0 - phi[1], phi[1]]],
                *w,
            )
        })
        .collect();
    let (n0, n1) = (f.shape[0] as i64, f.shape[1] as i64);
    let (o0, o1) = (f.origin[0], f.origin[1]);
    let row = shape[1];
    let mut out = DenseGrid::zeros(f.resolution, origin.to_vec(), shape.to_vec());
    if row == 0 || n1 == 0 {
        return out;
    }
    // Nonzero entries per source row, used when the source is sparse.
    let nonzero: Vec<Vec<(i64, f64)>> = f
        .values
        .chunks(n1 as usize)
        .map(|r| {
            r.iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(j, v)| (j as i64, *v))
                .collect()
        })
        .collect();
    let nnz: usize = nonzero.iter().map(|r| r.len()).sum();
    let sparse = nnz * 4 < f.values.len();
    out.values
        .par_chunks_mut(row)
        .enumerate()
        .for_each(|(i, vals)| {
            let x = origin[0] + i as i64;
            for (m, wts, w) in &shifts {
                for a in 0..2 {
                    let wa = wts[0][a] * w;
                    if wa == 0.0 {
                        continue;
                    }
                    let sx = x - m[0] - a as i64 - o0;
                    if sx < 0 || sx >= n0 {
                        continue;
                    }
                    for b in 0..2 {
                        let wab = wa * wts[1][b];
                        if wab == 0.0 {
                            continue;
                        }
                        // source column = origin[1] + j − m1 − b − o1 ∈ [0, n1)
                        let off = origin[1] - m[1] - b as i64 - o1;
                        if sparse {
                            for &(sy, v) in &nonzero[sx as usize] {
                                let j = sy - off;
                                if j >= 0 && j < row as i64 {
                                    vals[j as usize] += wab * v;
                                }
                            }
                        } else {
                            let src = &f.values[(sx * n1) as usize..((sx + 1) * n1) as usize];
                            let j_lo = (-off).max(0);
                            let j_hi = (n1 - off).min(row as i64);
                            for j in j_lo..j_hi {
                                vals[j as usize] += wab * src[(j + off) as usize];
                            }
                        }
                    }
                }
            }
        });
    out
}

fn check_plane(f: &GridFunction, dil: &DilationGroup) -> Result<()> {
    if f.dim() != 2 || dil.dim() != 2 {
        return Err(invalid("surface operators act on functions in the plane"));
    }
    Ok(())
}

/// Requires the cell side to be at most `2^{k a}/8`.
fn check_scale(resolution: i32, k: i64, dil: &DilationGroup) -> Result<()> {
    let h = pow2(-(resolution as i64));
    if h > (k as f64 * dil.a).exp2() / 8.0 * (1.0 + 1e-12) {
        return Err(invalid(format!(
            "resolution {resolution} too coarse for scale k = {k}"
        )));
    }
    Ok(())
}

/// `δ_k γ(t)` with quadrature weights whose images are `step` apart.
fn surface_masses(mu: &SurfaceMeasure, k: i64, dil: &DilationGroup, step: f64) -> PointMasses {
    let s = [
        (k as f64 * dil.exponents[0]).exp2(),
        (k as f64 * dil.exponents[1]).exp2(),
    ];
    mu.nodes_for_scaled_step(step, s)
        .into_iter()
        .map(|(t, w)| {
            let p = mu.point(t);
            ([s[0] * p[0], s[1] * p[1]], w)
        })
        .collect()
}

/// Mass of a dense density aggregated onto the cells of `level` and
/// placed at their centres, then dilated by `δ_k`.
fn grid_masses(g: &DenseGrid, level: i32, k: i64, dil: &DilationGroup) -> PointMasses {
    let shift = (g.resolution - level).max(0) as u32;
    let vol = g.cell_volume();
    let mut agg: BTreeMap<[i64; 2], f64> = BTreeMap::new();
    for (c, v) in g.iter_cells() {
        if v != 0.0 {
            *agg.entry([c[0] >> shift, c[1] >> shift]).or_insert(0.0) += v * vol;
        }
    }
    let side = pow2(-((g.resolution - shift as i32) as i64));
    let s = [
        (k as f64 * dil.exponents[0]).exp2(),
        (k as f64 * dil.exponents[1]).exp2(),
    ];
    agg.into_iter()
        .map(|(c, w)| {
            (
                [
                    s[0] * (c[0] as f64 + 0.5) * side,
                    s[1] * (c[1] as f64 + 0.5) * side,
                ],
                w,
            )
        })
        .collect()
}

/// Level at which `δ_k`-images of its cells are at most a quarter of
/// `2^{-resolution}`.
fn quadrature_level(resolution: i32, k: i64, dil: &DilationGroup) -> i32 {
    let e = dil
        .exponents
        .iter()
        .map(|p| k as f64 * p)
        .fold(f64::NEG_INFINITY, f64::max);
    (resolution as f64 + 2.0 + e).ceil() as i32
}

/// Convolution engine with cached mollified measures.
pub struct Convolver<'a> {
    pub mu: &'a SurfaceMeasure,
    pub dil: &'a DilationGroup,
    moll: Mollifier,
    /// Surface nodes are spaced `2^{-resolution} / step_divisor` apart.
    pub step_divisor: f64,
    cache: std::sync::Mutex<BTreeMap<(i32, i32), std::sync::Arc<DenseGrid>>>,
}

impl<'a> Convolver<'a> {
    pub fn new(mu: &'a SurfaceMeasure, dil: &'a DilationGroup) -> Result<Self> {
        if dil.dim() != 2 {
            return Err(invalid("surface measures live in the plane"));
        }
        Ok(Self {
            mu,
            dil,
            moll: build_mollifier(2)?,
            step_divisor: 64.0,
            cache: Default::default(),
        })
    }

    pub fn mollifier(&self) -> &Mollifier {
        &self.moll
    }

    /// `μ^n` as cell averages at `level`.
    pub fn mollified(&self, n: i32, level: i32) -> Result<std::sync::Arc<DenseGrid>> {
        let res = level;
        if let Some(g) = self.cache.lock().unwrap().get(&(n, res)) {
            return Ok(g.clone());
        }
        let g = std::sync::Arc::new(mollify_cells(self.mu, &self.moll, n, res)?);
        self.cache.lock().unwrap().insert((n, res), g.clone());
        Ok(g)
    }

    /// Point masses of `μ_k` (or `μ^n_k`) resolved for cells of side
    /// `2^{-resolution}`; `coarse` halves the quadrature density.
    pub fn masses(
        &self,
        k: i64,
        mollify_n: Option<i32>,
        resolution: i32,
        coarse: bool,
    ) -> Result<PointMasses> {
        let h = pow2(-(resolution as i64));
        let factor = if coarse { 2.0 } else { 1.0 };
        Ok(match mollify_n {
            None => surface_masses(self.mu, k, self.dil, factor * h / self.step_divisor),
            Some(n) => {
                if n < 0 {
                    return Err(invalid("mollification index must be nonnegative"));
                }
                let level = quadrature_level(resolution, k, self.dil);
                let g = self.mollified(n, level)?;
                grid_masses(&g, if coarse { level - 1 } else { level }, k, self.dil)
            }
        })
    }

    /// `μ_k * f` (or `μ^n_k * f`) as cell averages on the frame of `f`.
    pub fn convolve(&self, k: i64, f: &GridFunction, mollify_n: Option<i32>) -> Result<DenseGrid> {
        check_plane(f, self.dil)?;
        check_scale(f.resolution(), k, self.dil)?;
        let dense = DenseGrid::from_grid(f);
        let masses = self.masses(k, mollify_n, f.resolution(), false)?;
        Ok(shift_accumulate(
            &dense,
            &masses,
            &dense.origin,
            &dense.shape,
        ))
    }

    /// The convolution with a step-halving error estimate `sup |fine − coarse|`.
    pub fn convolve_with_error(
        &self,
        k: i64,
        f: &GridFunction,
        mollify_n: Option<i32>,
    ) -> Result<(DenseGrid, f64)> {
        let fine = self.convolve(k, f, mollify_n)?;
        let dense = DenseGrid::from_grid(f);
        let masses = self.masses(k, mollify_n, f.resolution(), true)?;
        let coarse = shift_accumulate(&dense, &masses, &dense.origin, &dense.shape);
        let err = fine
            .values
            .iter()
            .zip(&coarse.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        Ok((fine, err))
    }
}

/// `μ_k * f`, or `μ^n_k * f` when `mollify_n = Some(n)`, as cell averages
/// on the cells of the root of `f`.
pub fn convolve(
    mu: &SurfaceMeasure,
    k: i64,
    f: &GridFunction,
    dil: &DilationGroup,
    mollify_n: Option<i32>,
) -> Result<GridFunction> {
    let conv = Convolver::new(mu, dil)?;
    conv.convolve(k, f, mollify_n)?.to_grid(f.root())
}

/// Per-scale summary of an operator evaluation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScaleDiagnostic {
    pub k: i64,
    pub sup_norm: f64,
    pub l2_norm: f64,
    pub support_measure: f64,
    pub error_estimate: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OperatorResult {
    pub field: GridFunction,
    pub k_range: (i64, i64),
    pub diagnostics: Vec<ScaleDiagnostic>,
}

/// `[−R + 3, 0]`: the smallest scale stays a few cells wide.
pub fn default_k_range(resolution: i32) -> RangeInclusive<i64> {
    (-(resolution as i64) + 3).min(0)..=0
}

fn diagnostic(k: i64, g: &DenseGrid, err: f64) -> ScaleDiagnostic {
    let l2 = (g.values.iter().map(|v| v * v).sum::<f64>() * g.cell_volume()).sqrt();
    let sup = g.sup_norm();
    ScaleDiagnostic {
        k,
        sup_norm: sup,
        l2_norm: l2,
        support_measure: g.support_measure(1e-12 * sup),
        error_estimate: err,
    }
}

fn sweep(
    conv: &Convolver,
    f: &GridFunction,
    k_range: RangeInclusive<i64>,
    combine: impl Fn(&mut [f64], &[f64]),
) -> Result<OperatorResult> {
    if k_range.is_empty() {
        return Err(invalid("empty scale range"));
    }
    let mut acc = DenseGrid::from_grid(&GridFunction::zeros(f.root().clone(), f.resolution())?);
    let mut diags = Vec::new();
    for k in k_range.clone() {
        let (g, err) = conv.convolve_with_error(k, f, None)?;
        combine(&mut acc.values, &g.values);
        diags.push(diagnostic(k, &g, err));
    }
    Ok(OperatorResult {
        field: acc.to_grid(f.root())?,
        k_range: (*k_range.start(), *k_range.end()),
        diagnostics: diags,
    })
}

/// `ℳf = sup_k |μ_k * f|` over `k_range`.
pub fn maximal_fn(
    mu: &SurfaceMeasure,
    f: &GridFunction,
    dil: &DilationGroup,
    k_range: RangeInclusive<i64>,
) -> Result<OperatorResult> {
    maximal_with(&Convolver::new(mu, dil)?, f, k_range)
}

/// [`maximal_fn`] with a caller-configured convolution engine.
pub fn maximal_with(
    conv: &Convolver,
    f: &GridFunction,
    k_range: RangeInclusive<i64>,
) -> Result<OperatorResult> {
    if !conv.mu.is_nonnegative() {
        return Err(invalid("the maximal operator needs a nonnegative measure"));
    }
    sweep(conv, f, k_range, |acc, g| {
        for (a, v) in acc.iter_mut().zip(g) {
            *a = a.max(v.abs());
        }
    })
}

/// `Tf = Σ_k μ_k * f` over `k_range`, for `μ` with `∫dμ = 0`.
pub fn radon_transform(
    mu: &SurfaceMeasure,
    f: &GridFunction,
    dil: &DilationGroup,
    k_range: RangeInclusive<i64>,
) -> Result<OperatorResult> {
    if !mu.has_cancellation() {
        return Err(invalid(
            "the singular Radon transform needs a measure with ∫dμ = 0",
        ));
    }
    sweep(&Convolver::new(mu, dil)?, f, k_range, |acc, g| {
        for (a, v) in acc.iter_mut().zip(g) {
            *a += v;
        }
    })
}

/// `𝒫_r f(x) = r^{-1} ∫_0^r f(x₁ − t, x₂ − t^b) dt` as cell averages.
pub fn parabola_average(f: &GridFunction, r: f64, b: f64) -> Result<GridFunction> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(invalid("radius must be positive"));
    }
    if !(b > 0.0 && b.is_finite()) {
        return Err(invalid("exponent must be positive"));
    }
    if f.dim() != 2 {
        return Err(invalid("parabolic averages act on functions in the plane"));
    }
    let h = f.cell_side();
    let speed = 1.0 + b * r.powf(b - 1.0).max(if b < 1.0 { 0.0 } else { 1.0 });
    let count = ((r * speed / (h / 4.0)).ceil() as usize).max(16);
    let dt = r / count as f64;
    let masses: PointMasses = (0..count)
        .map(|i| {
            let t = (i as f64 + 0.5) * dt;
            ([t, t.powf(b)], 1.0 / count as f64)
        })
        .collect();
    let dense = DenseGrid::from_grid(f);
    shift_accumulate(&dense, &masses, &dense.origin, &dense.shape).to_grid(f.root())
}

/// `|μ̂(ξ)|` along rays, with a log-log fit of the largest modulus per radius.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FourierDecay {
    pub slope: f64,
    /// `−slope`, the measured decay exponent.
    pub gamma_fit: f64,
    /// `(|ξ|, ray index, |μ̂(ξ)|)`.
    pub table: Vec<(f64, usize, f64)>,
    pub converged: bool,
}

/// `μ̂(ξ) = ∫ e^{−2πi ξ·x} dμ(x)` by midpoint quadrature with at least 32
/// nodes per oscillation, doubled until two rules agree to `tol`.
pub fn fourier_transform(mu: &SurfaceMeasure, xi: [f64; 2], tol: f64) -> (f64, f64, bool) {
    let speed = {
        let s = mu.axis_speeds();
        (s[0] * s[0] + s[1] * s[1]).sqrt()
    };
    let norm = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
    let mut per_unit = ((32.0 * norm * speed).ceil() as usize).max(256);
    let eval = |count: usize| {
        let mut re = 0.0;
        let mut im = 0.0;
        for (t, w) in mu.nodes(count) {
            let p = mu.point(t);
            let phase = -2.0 * std::f64::consts::PI * (xi[0] * p[0] + xi[1] * p[1]);
            re += w * phase.cos();
            im += w * phase.sin();
        }
        (re, im)
    };
    let mut prev = eval(per_unit);
    for _ in 0..4 {
        per_unit *= 2;
        let next = eval(per_unit);
        if (next.0 - prev.0).hypot(next.1 - prev.1) <= tol {
            return (next.0, next.1, true);
        }
        prev = next;
    }
    (prev.0, prev.1, false)
}

/// Unit directions at angles `πi/count`, `i < count`.
pub fn default_rays(count: usize) -> Vec<[f64; 2]> {
    (0..count)
        .map(|i| {
            let a = std::f64::consts::PI * i as f64 / count as f64;
            [a.cos(), a.sin()]
        })
        .collect()
}

/// Samples `|ξ| = 2^{lo + i/8}` up to `2^{hi}` along each ray and fits the
/// slope of `log max_ray |μ̂|` against `log |ξ|`.
pub fn fourier_decay(
    mu: &SurfaceMeasure,
    rays: &[[f64; 2]],
    range: (f64, f64),
) -> Result<FourierDecay> {
    if rays.is_empty() || !(range.1 > range.0) {
        return Err(invalid("need rays and a nonempty radius range"));
    }
    let steps = ((range.1 - range.0) * 8.0).round() as usize;
    let radii: Vec<f64> = (0..=steps)
        .map(|i| (range.0 + i as f64 / 8.0).exp2())
        .collect();
    let rows: Vec<(f64, Vec<(f64, bool)>)> = radii
        .par_iter()
        .map(|r| {
            let vals = rays
                .iter()
                .map(|u| {
                    let (re, im, ok) = fourier_transform(mu, [r * u[0], r * u[1]], 1e-11);
                    (re.hypot(im), ok)
                })
                .collect();
            (*r, vals)
        })
        .collect();
    let mut table = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut converged = true;
    for (r, vals) in rows {
        let mut best = 0.0f64;
        for (i, (m, ok)) in vals.into_iter().enumerate() {
            converged &= ok;
            best = best.max(m);
            table.push((r, i, m));
        }
        if best <= 0.0 {
            return Err(Error::Numerical(
                "Fourier transform vanishes on a whole circle".into(),
            ));
        }
        xs.push(r.log2());
        ys.push(best.log2());
    }
    let slope = ls_slope(&xs, &ys);
    Ok(FourierDecay {
        slope,
        gamma_fit: -slope,
        table,
        converged,
    })
}

/// Recorded constant for `meas(supp μ^n*f) <= C Λ_n[f]`.
pub const SUPPORT_CONSTANT: f64 = 8.0;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SupportReport {
    pub support_measure: f64,
    pub length: f64,
    pub bound: f64,
    pub ratio: f64,
    pub holds: bool,
}

/// Measures the support of `μ^n * f` on the grid against `Λ_n[f]`.
pub fn check_support(
    mu: &SurfaceMeasure,
    n: i32,
    f: &GridFunction,
    dil: &DilationGroup,
) -> Result<SupportReport> {
    check_plane(f, dil)?;
    let p = ContentParams::new(n);
    let lam = length(f, &p)?;
    if f.is_zero() {
        return Ok(SupportReport {
            support_measure: 0.0,
            length: 0.0,
            bound: 0.0,
            ratio: 0.0,
            holds: true,
        });
    }
    let res = f.resolution().max(n + 2);
    let f = f.refine(res)?;
    let (lo, hi) = support_box(&f);
    let diam = ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt();
    if diam > 10.0 {
        return Err(invalid("support diameter exceeds 10"));
    }
    let conv = Convolver::new(mu, dil)?;
    let level = quadrature_level(res, 0, dil);
    let g = conv.mollified(n, level)?;
    let masses = grid_masses(&g, level, 0, dil);
    let dense = DenseGrid::from_grid(&f);
    // Output block: the support of f plus the support of μ^n.
    let h = f.cell_side();
    let (mlo, mhi) = masses.iter().fold(
        ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]),
        |(mut a, mut b), (s, _)| {
            for i in 0..2 {
                a[i] = a[i].min(s[i]);
                b[i] = b[i].max(s[i]);
            }
            (a, b)
        },
    );
    let origin: Vec<i64> = (0..2)
        .map(|i| ((lo[i] + mlo[i]) / h).floor() as i64 - 2)
        .collect();
    let shape: Vec<usize> = (0..2)
        .map(|i| (((hi[i] + mhi[i]) / h).ceil() as i64 + 2 - origin[i]) as usize)
        .collect();
    let out = shift_accumulate(&dense, &masses, &origin, &shape);
    let sup = out.sup_norm();
    let meas = out.support_measure(1e-12 * sup);
    let bound = SUPPORT_CONSTANT * lam;
    Ok(SupportReport {
        support_measure: meas,
        length: lam,
        bound,
        ratio: meas / lam,
        holds: meas <= bound,
    })
}

fn support_box(f: &GridFunction) -> ([f64; 2], [f64; 2]) {
    let h = f.cell_side();
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for (c, _) in f.iter() {
        for i in 0..2 {
            lo[i] = lo[i].min(c[i] as f64 * h);
            hi[i] = hi[i].max((c[i] + 1) as f64 * h);
        }
    }
    (lo, hi)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AutocorrelationReport {
    pub n: i32,
    pub resolution: i32,
    /// `∫ ν^n * ν̃^n`.
    pub mass: f64,
    /// `(∫ ν^n)²`.
    pub expected_mass: f64,
    /// `β · max_{2^{-n} <= |x| <= 1} |ν^n * ν̃^n(x)| |x|`.
    pub envelope: f64,
    /// `β ‖ν̃^n * ν^n * f‖_∞ / ((1 + n) Θ_n[f])`.
    pub ratio: f64,
}

/// Computes `ν^n * ν̃^n` on a grid (with `ν^n = φ_n * μ`), its `|x|^{-1}`
/// envelope, and the sup-norm ratio of `ν̃^n * ν^n * f` to `(1+n)Θ_n[f]`.
pub fn check_autocorrelation(
    mu: &SurfaceMeasure,
    n: i32,
    beta_curv: f64,
    f: &GridFunction,
) -> Result<AutocorrelationReport> {
    if f.dim() != 2 {
        return Err(invalid("autocorrelation checks are planar"));
    }
    if !(beta_curv > 0.0 && beta_curv <= 1.0) {
        return Err(invalid("curvature lower bound must lie in (0, 1]"));
    }
    if n < 0 {
        return Err(invalid("n must be nonnegative"));
    }
    let res = n + 3;
    let moll = build_mollifier(2)?;
    let nu = mollify(mu, &moll, n, res)?;
    let vol = nu.cell_volume();
    let h = nu.cell_side();
    let nz: Vec<(i64, i64, f64)> = nu
        .iter_cells()
        .filter(|(_, v)| *v != 0.0)
        .map(|(c, v)| (c[0], c[1], v))
        .collect();
    let (s0, s1) = (nu.shape[0] as i64, nu.shape[1] as i64);
    // offsets o = c' − c in (−s, s)
    let (w0, w1) = (2 * s0 - 1, 2 * s1 - 1);
    let mut acf = vec![0.0f64; (w0 * w1) as usize];
    let nu_at = |x: i64, y: i64| nu.get(&[x, y]);
    acf.par_chunks_mut(w1 as usize)
        .enumerate()
        .for_each(|(i, row)| {
            let o0 = i as i64 - (s0 - 1);
            for &(x, y, v) in &nz {
                let x2 = x + o0;
                if x2 < nu.origin[0] || x2 >= nu.origin[0] + s0 {
                    continue;
                }
                for (j, r) in row.iter_mut().enumerate() {
                    let o1 = j as i64 - (s1 - 1);
                    let y2 = y + o1;
                    if y2 < nu.origin[1] || y2 >= nu.origin[1] + s1 {
                        continue;
                    }
                    let u = nu_at(x2, y2);
                    if u != 0.0 {
                        *r += v * u * vol;
                    }
                }
            }
        });
    let mass: f64 = acf.iter().sum::<f64>() * vol;
    let expected = nu.integral().powi(2);
    let lo_r = pow2(-(n as i64));
    let mut envelope = 0.0f64;
    for (idx, a) in acf.iter().enumerate() {
        let o0 = (idx as i64 / w1) - (s0 - 1);
        let o1 = (idx as i64 % w1) - (s1 - 1);
        let r = (((o0 * o0 + o1 * o1) as f64).sqrt()) * h;
        if r >= lo_r && r <= 1.0 {
            envelope = envelope.max(a.abs() * r);
        }
    }

    // ‖A * f‖_∞ by scattering the cells of f.
    let p = ContentParams::new(n);
    let fr = f.refine(f.resolution().max(res))?;
    let ratio = if fr.is_zero() {
        0.0
    } else {
        if fr.resolution() != res {
            return Err(invalid(format!("f must live at resolution <= {res}")));
        }
        let th = thickness(&fr, &p)?;
        let mut out: BTreeMap<(i64, i64), f64> = BTreeMap::new();
        for (c, v) in fr.iter() {
            for (idx, a) in acf.iter().enumerate() {
                if *a == 0.0 {
                    continue;
                }
                let o0 = (idx as i64 / w1) - (s0 - 1);
                let o1 = (idx as i64 % w1) - (s1 - 1);
                *out.entry((c[0] + o0, c[1] + o1)).or_insert(0.0) += a * v * vol;
            }
        }
        let sup = out.values().fold(0.0f64, |m, v| m.max(v.abs()));
        beta_curv * sup / ((1.0 + n as f64) * th)
    };
    Ok(AutocorrelationReport {
        n,
        resolution: res,
        mass,
        expected_mass: expected,
        envelope: beta_curv * envelope,
        ratio,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Level exponent `c` of the split, `c < ½ min(1, γ)`.
    pub c: f64,
    pub k_range: RangeInclusive<i64>,
}

/// The maximal operator and the five terms dominating it pointwise.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaximalSplit {
    /// `sup_k |μ_k * f|`.
    pub maximal: GridFunction,
    /// `M_I1, M_I2, M_I3, M_II, M_III`.
    pub terms: BTreeMap<String, GridFunction>,
    pub k_range: (i64, i64),
    pub levels: u32,
    /// `min_x (Σ terms − ℳf)`, nonnegative when domination holds.
    pub domination_slack: f64,
    /// `‖M_III‖₁ / Σ_n n ‖f^n‖₁`.
    pub diagonal_ratio: f64,
}

pub const TERM_NAMES: [&str; 5] = ["M_I1", "M_I2", "M_I3", "M_II", "M_III"];

fn max_abs_into(acc: &mut [f64], g: &[f64]) {
    for (a, v) in acc.iter_mut().zip(g) {
        *a = a.max(v.abs());
    }
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, v) in acc.iter_mut().zip(g) {
        *a += v;
    }
}

/// Splits `sup_k |μ_k * f|` into the good, mollification, level-good,
/// off-scale and diagonal terms built from the Calderón–Zygmund pieces of
/// `f` at height `alpha`, and checks pointwise domination on the grid.
pub fn split_maximal_terms(
    f: &GridFunction,
    alpha: f64,
    mu: &SurfaceMeasure,
    dil: &DilationGroup,
    config: &SplitConfig,
) -> Result<MaximalSplit> {
    check_plane(f, dil)?;
    if config.k_range.is_empty() {
        return Err(invalid("empty scale range"));
    }
    if !mu.is_nonnegative() {
        return Err(invalid("the maximal operator needs a nonnegative measure"));
    }
    let pieces = cz_split(f, alpha, dil, config.c)?;
    let conv = Convolver::new(mu, dil)?;
    let ks: Vec<i64> = config.k_range.clone().collect();
    let zeros = DenseGrid::from_grid(&GridFunction::zeros(f.root().clone(), f.resolution())?);
    let len = zeros.len();
    let sup_over = |g: &GridFunction, n: Option<i32>, ks: &[i64]| -> Result<Vec<f64>> {
        let mut acc = vec![0.0; len];
        if g.is_zero() {
            return Ok(acc);
        }
        for &k in ks {
            max_abs_into(&mut acc, &conv.convolve(k, g, n)?.values);
        }
        Ok(acc)
    };

    let maximal = sup_over(f, None, &ks)?;
    let m_i1 = sup_over(&pieces.good, None, &ks)?;
    let mut m_i2 = vec![0.0; len];
    let mut m_i3 = vec![0.0; len];
    let mut m_ii = vec![0.0; len];
    let mut m_iii = vec![0.0; len];
    let mut weighted_l1 = 0.0;
    let levels = pieces.max_level();
    for n in 1..=levels {
        let fn_ = pieces.level_sum(n, |p| &p.f)?;
        if fn_.is_zero() {
            continue;
        }
        weighted_l1 += n as f64 * fn_.l1_norm();
        let ni = n as i32;
        let mut diff = vec![0.0f64; len];
        for &k in &ks {
            let a = conv.convolve(k, &fn_, None)?;
            let b = conv.convolve(k, &fn_, Some(ni))?;
            for (d, (x, y)) in diff.iter_mut().zip(a.values.iter().zip(&b.values)) {
                *d = (*d).max((x - y).abs());
            }
        }
        add_into(&mut m_i2, &diff);
        add_into(
            &mut m_i3,
            &sup_over(&pieces.level_sum(n, |p| &p.g)?, Some(ni), &ks)?,
        );

        let mut by_l: BTreeMap<i64, GridFunction> = BTreeMap::new();
        for p in pieces.levels.iter().filter(|p| p.level == n) {
            let r = pieces.whitney.cells[p.region].scale;
            let l = r.div_euclid(n as i64);
            let e = by_l
                .entry(l)
                .or_insert_with(|| GridFunction::zeros(f.root().clone(), f.resolution()).unwrap());
            *e = e.add(&p.b)?;
        }
        for (l, bl) in by_l {
            let (_, star) = interval_index(n as i64, l, dil)?;
            let (inside, outside): (Vec<i64>, Vec<i64>) = ks.iter().partition(|k| star.contains(k));
            add_into(&mut m_ii, &sup_over(&bl, Some(ni), &outside)?);
            add_into(&mut m_iii, &sup_over(&bl, Some(ni), &inside)?);
        }
    }

    let terms_v = [m_i1, m_i2, m_i3, m_ii, m_iii];
    let mut slack = f64::INFINITY;
    let scale = maximal.iter().fold(0.0f64, |m, v| m.max(*v)).max(alpha);
    for i in 0..len {
        let total: f64 = terms_v.iter().map(|t| t[i]).sum();
        slack = slack.min(total - maximal[i]);
    }
    if slack < -1e-10 * scale {
        return Err(invariant(format!(
            "pointwise domination fails by {}",
            -slack
        )));
    }
    let to_grid = |v: Vec<f64>| {
        DenseGrid {
            values: v,
            ..zeros.clone()
        }
        .to_grid(f.root())
    };
    let m3_l1 = terms_v[4].iter().sum::<f64>() * zeros.cell_volume();
    let mut terms = BTreeMap::new();
    for (name, v) in TERM_NAMES.iter().zip(terms_v) {
        terms.insert(name.to_string(), to_grid(v)?);
    }
    Ok(MaximalSplit {
        maximal: to_grid(maximal)?,
        terms,
        k_range: (*config.k_range.start(), *config.k_range.end()),
        levels,
        domination_slack: slack,
        diagonal_ratio: if weighted_l1 > 0.0 {
            m3_l1 / weighted_l1
        } else {
            0.0
        },
    })
}

/// Unit square `[0,1)²` inside the root `[0, 2^{-root_level})²`.
pub fn unit_square(root_level: i32, resolution: i32) -> Result<GridFunction> {
    let root = DyadicCube::new(root_level, vec![0, 0]);
    GridFunction::indicator(root, resolution, &DyadicCube::unit(2), 1.0)
}
