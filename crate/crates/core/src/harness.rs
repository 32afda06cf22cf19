//! Empirical weak-type Orlicz constants, pointwise convergence of parabolic
//! averages, per-term budgets of the maximal-operator split, and the
//! seeded test-function families feeding them.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::czd::{cz_split, maximal_hl};
use crate::dilation::DilationGroup;
use crate::dyadic::{Cell, DyadicCube, GridFunction};
use crate::error::{invalid, Result};
use crate::numeric::ls_slope;
use crate::operators::{
    maximal_with, parabola_average, split_maximal_terms, Convolver, SplitConfig,
};
use crate::surface::SurfaceMeasure;

/// Young functions for weak-type comparisons.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phi {
    /// `t log log(e² + t)`.
    LogLog,
    /// `t log(e + t)`.
    Log,
    /// `t`.
    Linear,
}

impl Phi {
    pub fn eval(self, t: f64) -> f64 {
        let e = std::f64::consts::E;
        match self {
            Phi::LogLog => t * (e * e + t).ln().ln(),
            Phi::Log => t * (e + t).ln(),
            Phi::Linear => t,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "loglog" | "t_loglog" => Ok(Phi::LogLog),
            "log" | "t_log" => Ok(Phi::Log),
            "linear" | "t" => Ok(Phi::Linear),
            other => Err(invalid(format!("unknown Young function {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phi::LogLog => "loglog",
            Phi::Log => "log",
            Phi::Linear => "linear",
        }
    }

    /// `Φ(0) = 0`, monotone and convex on a geometric sample grid.
    pub fn is_young(self) -> bool {
        if self.eval(0.0) != 0.0 {
            return false;
        }
        let ts: Vec<f64> = (0..=400)
            .map(|i| ((i as f64 - 200.0) / 10.0).exp2())
            .collect();
        let mut prev = 0.0;
        for w in ts.windows(3) {
            let (a, b, c) = (w[0], w[1], w[2]);
            let (fa, fb, fc) = (self.eval(a), self.eval(b), self.eval(c));
            if fb < prev || fc < fb {
                return false;
            }
            // convexity: fb below the chord
            let chord = fa + (fc - fa) * (b - a) / (c - a);
            if fb > chord * (1.0 + 1e-12) {
                return false;
            }
            prev = fb;
        }
        true
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeakTypeRow {
    pub alpha: f64,
    /// `|{|Of| > α}|`.
    pub lhs: f64,
    /// Least `C` with `∫Φ(C|f|/α) >= lhs`.
    pub constant: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeakType {
    pub phi: Phi,
    pub c_min: f64,
    pub table: Vec<WeakTypeRow>,
}

/// `2^{-8} … 2^8` times `sup`, 33 geometric points.
pub fn default_alphas(sup: f64) -> Vec<f64> {
    (0..33)
        .map(|i| sup * ((i as f64 - 16.0) / 2.0).exp2())
        .collect()
}

/// Least `C` with `|{|Of| > α}| <= ∫Φ(C|f|/α)` for every `α`, by bisection
/// on the monotone feasibility predicate.
pub fn weak_type_constant(
    field: &GridFunction,
    f: &GridFunction,
    phi: Phi,
    alphas: &[f64],
) -> Result<WeakType> {
    if alphas.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
        return Err(invalid("alphas must be positive"));
    }
    let vol_field = field.cell_volume();
    let vol_f = f.cell_volume();
    let values: Vec<f64> = f
        .iter()
        .map(|(_, v)| v.abs())
        .filter(|v| *v > 0.0)
        .collect();
    let rhs =
        |c: f64, alpha: f64| values.iter().map(|v| phi.eval(c * v / alpha)).sum::<f64>() * vol_f;
    let table: Vec<WeakTypeRow> = alphas
        .par_iter()
        .map(|&alpha| {
            let lhs = field.iter().filter(|(_, v)| v.abs() > alpha).count() as f64 * vol_field;
            if lhs == 0.0 {
                return WeakTypeRow {
                    alpha,
                    lhs,
                    constant: 0.0,
                };
            }
            if values.is_empty() {
                return WeakTypeRow {
                    alpha,
                    lhs,
                    constant: f64::INFINITY,
                };
            }
            let mut hi = 1.0;
            while rhs(hi, alpha) < lhs {
                hi *= 2.0;
            }
            let mut lo = 0.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if rhs(mid, alpha) >= lhs {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            WeakTypeRow {
                alpha,
                lhs,
                constant: hi,
            }
        })
        .collect();
    let c_min = table.iter().fold(0.0f64, |m, r| m.max(r.constant));
    Ok(WeakType { phi, c_min, table })
}

/// A seeded generator of test functions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TestFamily {
    pub name: String,
    pub params: Vec<f64>,
    pub seed: u64,
}

/// `λ χ_E` with `λ = 2^j` and `E` a centred dyadic rectangle of area
/// `2^{-j}` inside the root `[0, 2^{-root_level})²`, so `‖f‖₁ = 1`.
pub fn lambda_stack(j: u32, root_level: i32, resolution: i32) -> Result<GridFunction> {
    let sx = (j + 1) / 2;
    let sy = j / 2;
    if resolution < sx as i32 {
        return Err(invalid("resolution too coarse for the stack"));
    }
    let root = DyadicCube::new(root_level, vec![0, 0]);
    let side = 1i64 << (resolution - root_level);
    let (wx, wy) = (
        1i64 << (resolution - sx as i32),
        1i64 << (resolution - sy as i32),
    );
    let (x0, y0) = (side / 2 - wx / 2, side / 2 - wy / 2);
    let lam = (j as f64).exp2();
    let cells: Vec<(Cell, f64)> = (x0..x0 + wx)
        .flat_map(|x| (y0..y0 + wy).map(move |y| (vec![x, y], lam)))
        .collect();
    GridFunction::from_cells(root, resolution, cells)
}

/// Random signed values on `count` random cells of the middle half of the
/// root, with magnitudes `height · 2^{U[0, spread)}`.
pub fn random_comb(
    seed: u64,
    count: usize,
    height: f64,
    spread: f64,
    root_level: i32,
    resolution: i32,
) -> Result<GridFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = 1i64 << (resolution - root_level);
    let cells: Vec<(Cell, f64)> = (0..count)
        .map(|_| {
            let c = vec![
                rng.gen_range(side / 4..3 * side / 4),
                rng.gen_range(side / 4..3 * side / 4),
            ];
            let s = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            (c, s * height * rng.gen_range(0.0..spread).exp2())
        })
        .collect();
    GridFunction::from_cells(DyadicCube::new(root_level, vec![0, 0]), resolution, cells)
}

impl TestFamily {
    pub fn generate(&self, root_level: i32, resolution: i32) -> Result<GridFunction> {
        let p = |i: usize, d: f64| self.params.get(i).copied().unwrap_or(d);
        match self.name.as_str() {
            "lambda_stack" => lambda_stack(p(0, 0.0) as u32, root_level, resolution),
            "comb" => random_comb(
                self.seed,
                p(0, 32.0) as usize,
                p(1, 1.0),
                p(2, 4.0),
                root_level,
                resolution,
            ),
            other => Err(invalid(format!("unknown family {other}"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeakTypeSweepRow {
    pub j: u32,
    pub lambda: f64,
    pub phi: Phi,
    pub c_min: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeakTypeSweep {
    pub rows: Vec<WeakTypeSweepRow>,
    /// Slope of `log C_min` against `log λ` per Young function.
    pub slopes: Vec<(Phi, f64)>,
}

/// `C_min` of the lacunary maximal operator on the `λ`-stack family.
pub fn weak_type_sweep(
    mu: &SurfaceMeasure,
    dil: &DilationGroup,
    phis: &[Phi],
    js: &[u32],
    root_level: i32,
    resolution: i32,
    k_range: std::ops::RangeInclusive<i64>,
    step_divisor: f64,
) -> Result<WeakTypeSweep> {
    let mut conv = Convolver::new(mu, dil)?;
    conv.step_divisor = step_divisor;
    let mut rows = Vec::new();
    for &j in js {
        let f = lambda_stack(j, root_level, resolution)?;
        let m = maximal_with(&conv, &f, k_range.clone())?;
        let alphas = default_alphas(f.sup_norm());
        for &phi in phis {
            let w = weak_type_constant(&m.field, &f, phi, &alphas)?;
            rows.push(WeakTypeSweepRow {
                j,
                lambda: (j as f64).exp2(),
                phi,
                c_min: w.c_min,
            });
        }
    }
    let slopes = phis
        .iter()
        .map(|&phi| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter(|r| r.phi == phi)
                .map(|r| (r.lambda.log2(), r.c_min.log2()))
                .unzip();
            (phi, ls_slope(&xs, &ys))
        })
        .collect();
    Ok(WeakTypeSweep { rows, slopes })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub r: f64,
    pub max_error: f64,
    pub mean_error: f64,
    /// Fraction of sampled points with `|𝒫_r f − f| > ε`.
    pub fraction_above: f64,
}

/// Samples `samples` cells (avoiding `exclude`) and reports
/// `|𝒫_r f(x) − f(x)|` along `r_sequence`.
pub fn convergence_experiment(
    f: &GridFunction,
    b: f64,
    r_sequence: &[f64],
    samples: usize,
    eps: f64,
    exclude: &BTreeSet<Cell>,
    seed: u64,
) -> Result<Vec<ConvergenceRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ranges = f.root().cell_range(f.resolution());
    let mut points = Vec::with_capacity(samples);
    let mut guard = 0usize;
    while points.len() < samples {
        let c: Cell = ranges.iter().map(|r| rng.gen_range(r.0..r.1)).collect();
        guard += 1;
        if guard > 100 * samples + 1000 {
            return Err(invalid("could not sample enough points"));
        }
        if !exclude.contains(&c) {
            points.push(c);
        }
    }
    r_sequence
        .iter()
        .map(|&r| {
            let avg = parabola_average(f, r, b)?;
            let errs: Vec<f64> = points
                .iter()
                .map(|c| (avg.get(c) - f.get(c)).abs())
                .collect();
            let max_error = errs.iter().fold(0.0f64, |m, e| m.max(*e));
            let mean_error = errs.iter().sum::<f64>() / errs.len().max(1) as f64;
            let fraction_above =
                errs.iter().filter(|e| **e > eps).count() as f64 / errs.len().max(1) as f64;
            Ok(ConvergenceRow {
                r,
                max_error,
                mean_error,
                fraction_above,
            })
        })
        .collect()
}

/// A smooth background plus `count` single-cell spikes of height
/// `2^{m+1}` along a diagonal; returns the spike cells too.
pub fn spike_family(
    count: u32,
    root_level: i32,
    resolution: i32,
) -> Result<(GridFunction, BTreeSet<Cell>)> {
    let root = DyadicCube::new(root_level, vec![0, 0]);
    let side = 1i64 << (resolution - root_level);
    let mut cells = Vec::new();
    let mut spikes = BTreeSet::new();
    for m in 0..count as i64 {
        let c = vec![side / 4 + 3 * m, side / 2 + 2 * m];
        cells.push((c.clone(), ((m + 1) as f64).exp2()));
        spikes.insert(c);
    }
    // smooth background
    let h = (-(resolution as f64)).exp2();
    for x in 0..side {
        for y in 0..side {
            let c = vec![x, y];
            if !spikes.contains(&c) {
                let (u, v) = ((x as f64 + 0.5) * h, (y as f64 + 0.5) * h);
                cells.push((c, (u * 3.0).sin() * (v * 2.0).cos()));
            }
        }
    }
    Ok((GridFunction::from_cells(root, resolution, cells)?, spikes))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TermLedger {
    pub name: String,
    /// Which norm was measured.
    pub norm: String,
    pub measured: f64,
    pub bound: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitBudgetReport {
    pub alpha: f64,
    pub f_l1: f64,
    pub omega_star_measure: f64,
    pub terms: Vec<TermLedger>,
    pub domination_slack: f64,
    pub diagonal_ratio: f64,
}

/// Per-term budgets of the maximal split: `L²` for the good terms against
/// `α^{1/2}‖f‖₁^{1/2}`, `L¹` off `Ω*` for the off-scale term against
/// `‖f‖₁`, and `α^{-1}‖M_III‖₁` against `∫|f|/α · log(e + |f|/α)`.
pub fn split_budget_report(
    f: &GridFunction,
    mu: &SurfaceMeasure,
    dil: &DilationGroup,
    alpha: f64,
    config: &SplitConfig,
) -> Result<SplitBudgetReport> {
    let split = split_maximal_terms(f, alpha, mu, dil, config)?;
    let pieces = cz_split(f, alpha, dil, config.c)?;
    let root = f.root().clone();
    let res = f.resolution();
    let omega = GridFunction::from_cells(
        root,
        res,
        pieces
            .whitney
            .omega
            .iter()
            .map(|c| (c.clone(), 1.0))
            .collect::<Vec<_>>(),
    )?;
    let omega_star: BTreeSet<Cell> = if omega.is_zero() {
        BTreeSet::new()
    } else {
        let thr = (10.0 * pieces.whitney.k2).powf(-dil.tau);
        maximal_hl(&omega, dil, None)?
            .iter()
            .filter(|(_, v)| **v > thr)
            .map(|(c, _)| c.clone())
            .collect()
    };
    let vol = f.cell_volume();
    let f_l1 = f.l1_norm();
    // `+ 0.0` maps `-0.0` to `0.0`.
    let l2 = |g: &GridFunction| {
        (g.iter().map(|(_, v)| v * v).sum::<f64>() * g.cell_volume()).sqrt() + 0.0
    };
    let l2_bound = (alpha * f_l1).sqrt();
    let mut terms = Vec::new();
    for name in ["M_I1", "M_I2", "M_I3"] {
        let m = l2(&split.terms[name]);
        terms.push(TermLedger {
            name: name.into(),
            norm: "L2".into(),
            measured: m,
            bound: l2_bound,
            ratio: if l2_bound > 0.0 { m / l2_bound } else { 0.0 },
        });
    }
    let off: f64 = split.terms["M_II"]
        .iter()
        .filter(|(c, _)| !omega_star.contains(*c))
        .map(|(_, v)| v.abs())
        .sum::<f64>()
        * vol
        + 0.0;
    terms.push(TermLedger {
        name: "M_II".into(),
        norm: "L1 off Omega*".into(),
        measured: off,
        bound: f_l1,
        ratio: if f_l1 > 0.0 { off / f_l1 } else { 0.0 },
    });
    let m3 = split.terms["M_III"].l1_norm() / alpha;
    let llogl: f64 = f
        .iter()
        .map(|(_, v)| v.abs() / alpha * (std::f64::consts::E + v.abs() / alpha).ln())
        .sum::<f64>()
        * vol;
    terms.push(TermLedger {
        name: "M_III".into(),
        norm: "L1 / alpha".into(),
        measured: m3,
        bound: llogl,
        ratio: if llogl > 0.0 { m3 / llogl } else { 0.0 },
    });
    Ok(SplitBudgetReport {
        alpha,
        f_l1,
        omega_star_measure: omega_star.len() as f64 * vol,
        terms,
        domination_slack: split.domination_slack,
        diagonal_ratio: split.diagonal_ratio,
    })
}

/// Hex SHA-256 of the JSON form of a configuration.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn young_functions() {
        for phi in [Phi::LogLog, Phi::Log, Phi::Linear] {
            assert!(phi.is_young(), "{phi:?}");
        }
        assert!(
            (Phi::LogLog.eval(1.0) - (std::f64::consts::E.powi(2) + 1.0).ln().ln()).abs() < 1e-15
        );
    }

    #[test]
    fn zero_function_has_zero_constant() {
        let root = DyadicCube::new(-1, vec![0, 0]);
        let z = GridFunction::zeros(root, 3).unwrap();
        let w = weak_type_constant(&z, &z, Phi::Linear, &default_alphas(1.0)).unwrap();
        assert_eq!(w.c_min, 0.0);
        assert!(w.table.iter().all(|r| r.lhs == 0.0));
        assert!(weak_type_constant(&z, &z, Phi::Linear, &[0.0]).is_err());
    }

    #[test]
    fn constant_is_scale_invariant() {
        let f = lambda_stack(4, -1, 4).unwrap();
        let field = f
            .map(|v| v * 0.3)
            .add(&f.filter_cells(|c| c[0] % 2 == 0))
            .unwrap();
        let alphas = default_alphas(f.sup_norm());
        let a = weak_type_constant(&field, &f, Phi::LogLog, &alphas).unwrap();
        let scaled: Vec<f64> = alphas.iter().map(|x| x * 8.0).collect();
        let b = weak_type_constant(&field.scale(8.0), &f.scale(8.0), Phi::LogLog, &scaled).unwrap();
        assert!((a.c_min - b.c_min).abs() <= 1e-12 * a.c_min);
        // distribution function is nonincreasing
        for w in a.table.windows(2) {
            assert!(w[1].lhs <= w[0].lhs);
        }
    }

    #[test]
    fn indicator_is_restricted_weak_type() {
        let mu = SurfaceMeasure::parabola(2.0).unwrap();
        let dil = DilationGroup::new(vec![1.0, 2.0]).unwrap();
        let f = lambda_stack(0, -1, 4).unwrap();
        let mut conv = Convolver::new(&mu, &dil).unwrap();
        conv.step_divisor = 8.0;
        let m = maximal_with(&conv, &f, -1..=0).unwrap();
        let alphas: Vec<f64> = default_alphas(1.0)
            .into_iter()
            .filter(|a| *a <= 1.0)
            .collect();
        let w = weak_type_constant(&m.field, &f, Phi::Linear, &alphas).unwrap();
        assert!(w.c_min.is_finite() && w.c_min > 0.0);
    }

    #[test]
    fn lambda_stack_has_unit_mass() {
        for j in 0..=6 {
            let f = lambda_stack(j, -1, 4).unwrap();
            assert_eq!(f.integral(), 1.0);
            assert_eq!(f.sup_norm(), (j as f64).exp2());
        }
    }

    #[test]
    fn convergence_of_averages() {
        let root = DyadicCube::new(-1, vec![0, 0]);
        let z = GridFunction::zeros(root, 4).unwrap();
        let rows =
            convergence_experiment(&z, 2.0, &[0.5, 0.1], 20, 1e-3, &BTreeSet::new(), 1).unwrap();
        assert!(rows.iter().all(|r| r.max_error == 0.0));

        let (f, spikes) = spike_family(5, -1, 5).unwrap();
        let rows = convergence_experiment(
            &f,
            2.0,
            &[0.25, 0.0625, 0.015625, 0.001],
            200,
            0.05,
            &spikes,
            2,
        )
        .unwrap();
        for w in rows.windows(2) {
            assert!(w[1].fraction_above <= w[0].fraction_above);
        }
        assert_eq!(rows.last().unwrap().fraction_above, 0.0);
    }

    #[test]
    fn hash_is_stable() {
        let a = config_hash(&vec![1, 2, 3]).unwrap();
        assert_eq!(a.len(), 64);
        assert_eq!(a, config_hash(&vec![1, 2, 3]).unwrap());
        assert_ne!(a, config_hash(&vec![1, 2]).unwrap());
    }

    #[test]
    fn families_are_deterministic() {
        let fam = TestFamily {
            name: "comb".into(),
            params: vec![16.0, 2.0, 3.0],
            seed: 9,
        };
        assert_eq!(fam.generate(-1, 4).unwrap(), fam.generate(-1, 4).unwrap());
        assert!(TestFamily {
            name: "nope".into(),
            params: vec![],
            seed: 0
        }
        .generate(-1, 4)
        .is_err());
    }

    #[test]
    fn budget_below_threshold() {
        let mu = SurfaceMeasure::parabola(2.0).unwrap();
        let dil = DilationGroup::new(vec![1.0, 2.0]).unwrap();
        let f = lambda_stack(0, -1, 3).unwrap().scale(0.5);
        let r = split_budget_report(
            &f,
            &mu,
            &dil,
            1.0,
            &SplitConfig {
                c: 0.2,
                k_range: 0..=0,
            },
        )
        .unwrap();
        assert_eq!(r.omega_star_measure, 0.0);
        for t in &r.terms[1..] {
            assert_eq!(t.measured, 0.0, "{}", t.name);
        }
        assert!(r.terms[0].ratio <= 1.0);
    }
}
