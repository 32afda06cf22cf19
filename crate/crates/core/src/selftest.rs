//! The acceptance suite: one check per criterion, each returning a
//! pass/fail verdict with the measured numbers.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::content::{
    brute_force_length, brute_force_theta, critical_thickness, length, stacked_rectangles,
    thickness, ContentParams,
};
use crate::czd::whitney;
use crate::decompose::{iterate_split, random_bad_pieces, split_once, stopping_decomposition};
use crate::dilation::{build_mollifier, scaling_check, DilationGroup};
use crate::dyadic::{Cell, DyadicCube, GridFunction};
use crate::error::{Error, Result};
use crate::harness::{weak_type_sweep, Phi};
use crate::numeric::ls_slope;
use crate::operators::{
    check_autocorrelation, default_rays, fourier_decay, split_maximal_terms, SplitConfig,
};
use crate::surface::SurfaceMeasure;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(
            f,
            "[{verdict}] {:>2} {} ({:.1}s): {}",
            self.id, self.name, self.seconds, self.detail
        )
    }
}

pub const CRITERIA: [(u32, &str); 13] = [
    (1, "content DP matches enumeration"),
    (2, "stacked rectangles"),
    (3, "single split constants"),
    (4, "iterated split terminates"),
    (5, "stopping-time decomposition bounds"),
    (6, "scaling constants stable"),
    (7, "mollifier moments"),
    (8, "Whitney decomposition"),
    (9, "Fourier decay"),
    (10, "autocorrelation ratio"),
    (11, "weak-type contrast"),
    (12, "maximal split domination"),
    (13, "end-to-end runtime"),
];

type Outcome = Result<(bool, String)>;

fn p12() -> DilationGroup {
    DilationGroup::new(vec![1.0, 2.0]).expect("valid exponents")
}

fn random_nonneg(rng: &mut ChaCha8Rng, d: usize, res: i32, max_cells: usize) -> GridFunction {
    let side = 1i64 << res;
    let count = rng.gen_range(1..=max_cells);
    let cells: Vec<(Cell, f64)> = (0..count)
        .map(|_| {
            (
                (0..d).map(|_| rng.gen_range(0..side)).collect(),
                rng.gen_range(1..16) as f64 / 4.0,
            )
        })
        .collect();
    GridFunction::from_cells(DyadicCube::unit(d), res, cells).expect("cells inside the unit cube")
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Content DP vs exhaustive enumeration on `target` small instances.
pub fn content_oracle(target: usize) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut done, mut skipped) = (0usize, 0usize);
    let (mut worst_l, mut worst_t) = (0.0f64, 0.0f64);
    while done < target {
        let d = rng.gen_range(1..=2);
        let n = rng.gen_range(1..=3);
        let v = random_nonneg(&mut rng, d, n, if d == 2 { 5 } else { 8 });
        let p = ContentParams::new(n);
        let bl = match brute_force_length(&v, &p) {
            Ok(x) => x,
            Err(Error::TooLarge(_)) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        worst_l = worst_l.max(rel(length(&v, &p)?, bl));
        worst_t = worst_t.max(rel(
            critical_thickness(&v, &p)?.theta,
            brute_force_theta(&v, &p)?,
        ));
        done += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = worst_l <= 1e-9 && worst_t <= 1e-9 && secs < 60.0;
    Ok((
        ok,
        format!("{done} instances ({skipped} too large, regenerated), max rel err length {worst_l:.2e}, theta {worst_t:.2e}, {secs:.2}s"),
    ))
}

fn stacked() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for n in 1..=6u32 {
        let v = stacked_rectangles(n, n as i32)?;
        let p = ContentParams::new(n as i32);
        let (l, t, i) = (length(&v, &p)?, thickness(&v, &p)?, v.integral());
        ok &= l == (n + 1) as f64 && t == 1.0 && i < 2.0;
        parts.push(format!("n={n}: Λ={l} Θ={t} ∫={i:.4}"));
    }
    Ok((ok, parts.join("; ")))
}

fn single_split(count: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut violations, mut worst_len, mut worst_thick) = (0usize, 0.0f64, 0.0f64);
    for _ in 0..count {
        let d = rng.gen_range(1..=2);
        let n = rng.gen_range(0..=4);
        let res = rng.gen_range(1..=4).max(n);
        let v = random_nonneg(&mut rng, d, res, 10);
        match split_once(&v, &DyadicCube::unit(d), &ContentParams::new(n)) {
            Ok(s) => {
                let lr = s.certificate.constants["length_ratio"];
                let tr = s.certificate.constants["thickness_product_ratio"];
                worst_len = worst_len.max(lr);
                worst_thick = worst_thick.max(tr);
                let exact = s.g.add(&s.h)? == v.refine(s.g.resolution())?;
                if lr > 0.5 * (1.0 + 1e-12)
                    || tr > 8.0 * (1.0 + 1e-9)
                    || !exact
                    || !s.certificate.reconstructs(&v)
                {
                    violations += 1;
                }
            }
            Err(Error::Invariant(_)) => violations += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((
        violations == 0,
        format!("{count} instances, {violations} violations, max Λ[h]/Λ[v] {worst_len:.4}, max ΛΘ[g]/∫g {worst_thick:.4}"),
    ))
}

fn iteration(count: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut failures = 0usize;
    for _ in 0..count {
        let d = rng.gen_range(1..=2);
        let n = rng.gen_range(1..=4);
        let f = random_nonneg(&mut rng, d, n, 12).map(|x| if x > 2.0 { x } else { -x });
        match iterate_split(&f, &ContentParams::new(n), n as usize) {
            Ok(it)
                if it.residual.is_zero()
                    && it
                        .certificate
                        .reconstructs(&f.refine(it.residual.resolution())?) => {}
            Ok(_) | Err(Error::Invariant(_)) => failures += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((
        failures == 0,
        format!("{count} signed instances, {failures} with a nonzero residual after n+1 steps"),
    ))
}

fn stopping(count: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dil = DilationGroup::isotropic(1);
    let (mut violations, mut worst_len, mut worst_thick) = (0usize, 0.0f64, 0.0f64);
    for _ in 0..count {
        let n = rng.gen_range(1..=3);
        let l = rng.gen_range(0..=1i64);
        let alpha = [0.5, 1.0, 2.0][rng.gen_range(0..3)];
        let top = (l + 1) * n as i64 - 1;
        let root_level = -(top as i32) - 1;
        let resolution = (-(l * n as i64)).max(0) as i32 + rng.gen_range(0..=1);
        let count = rng.gen_range(1..=2);
        let pieces =
            random_bad_pieces(&mut rng, n, l, alpha, 0.125, count, root_level, resolution)?;
        match stopping_decomposition(&pieces, n, l, alpha, &dil) {
            Ok(s) => {
                worst_len = worst_len.max(s.max_length_ratio);
                worst_thick = worst_thick.max(s.max_thickness_ratio);
                if s.max_length_ratio > 1.0 + 1e-12 || s.max_thickness_ratio > 1.0 + 1e-12 {
                    violations += 1;
                }
            }
            Err(Error::Invariant(_)) => violations += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((
        violations == 0,
        format!(
            "{count} instances, {violations} violations, max αΛ/∫|H| {worst_len:.4}, max Θ/(16(n+1)α) {worst_thick:.4}"
        ),
    ))
}

fn scaling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let dil = p12();
    let fs: Vec<GridFunction> = (0..6).map(|_| random_nonneg(&mut rng, 2, 3, 8)).collect();
    let mut thick = vec![0.0f64; 5];
    let mut len = vec![0.0f64; 5];
    for f in &fs {
        for s in 0..=4i64 {
            thick[s as usize] =
                thick[s as usize].max(scaling_check(f, 3, s, 0, &dil)?.thickness_ratio);
            len[s as usize] = len[s as usize].max(scaling_check(f, 3, 0, s, &dil)?.length_ratio);
        }
    }
    let xs: Vec<f64> = (0..=4).map(|s| s as f64).collect();
    let log = |v: &[f64]| v.iter().map(|x| x.log2()).collect::<Vec<f64>>();
    let (sj, sm) = (ls_slope(&xs, &log(&thick)), ls_slope(&xs, &log(&len)));
    Ok((
        sj < 0.05 && sm < 0.05,
        format!("slope in j {sj:.4} (ratios {thick:.3?}), slope in m {sm:.4} (ratios {len:.3?})"),
    ))
}

fn mollifier() -> Outcome {
    let mut worst_mass = 0.0f64;
    let mut worst_moment = 0.0f64;
    for d in 1..=3 {
        let m = build_mollifier(d)?;
        worst_mass = worst_mass.max((m.moment(&vec![0; d]) - 1.0).abs());
        for order in 1..=d {
            for beta in crate::czd::multi_indices(d, order)
                .into_iter()
                .filter(|b| b.iter().sum::<usize>() == order)
            {
                worst_moment = worst_moment.max(m.moment(&beta).abs());
            }
        }
    }
    Ok((
        worst_mass < 1e-10 && worst_moment < 1e-10,
        format!("d = 1..3, |∫φ − 1| {worst_mass:.2e}, max moment {worst_moment:.2e}"),
    ))
}

fn whitney_sweep(count: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dil = p12();
    let root = DyadicCube::new(-2, vec![0, 0]);
    let (mut worst_k3, mut failures) = (0usize, 0usize);
    for _ in 0..count {
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
        match whitney(&omega, &root, 3, &dil) {
            Ok(dec) => {
                let total: usize = dec.cells.iter().map(|w| w.cells.len()).sum();
                if total != dec.omega.len() || !dec.omega.is_superset(&omega) {
                    failures += 1;
                }
                worst_k3 = worst_k3.max(dec.k3);
            }
            Err(Error::Invariant(_)) => failures += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((
        failures == 0 && worst_k3 <= 8,
        format!("{count} random sets, {failures} failures, max K3 = {worst_k3}"),
    ))
}

fn fourier() -> Outcome {
    let start = Instant::now();
    let rays = default_rays(12);
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, mu) in [
        ("parabola", SurfaceMeasure::parabola(2.0)?),
        ("circle", SurfaceMeasure::circle()),
    ] {
        let fd = fourier_decay(&mu, &rays, (4.0, 10.0))?;
        ok &= (fd.slope + 0.5).abs() <= 0.05 && fd.converged;
        parts.push(format!(
            "{name} slope {:.4}{}",
            fd.slope,
            if fd.converged { "" } else { " (unconverged)" }
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 300.0;
    Ok((ok, format!("{}, {secs:.1}s", parts.join(", "))))
}

fn autocorrelation() -> Outcome {
    let mu = SurfaceMeasure::parabola(2.0)?;
    let mut ratios = Vec::new();
    for n in 1..=6 {
        let f =
            GridFunction::indicator(DyadicCube::unit(2), n, &DyadicCube::new(n, vec![1, 1]), 1.0)?;
        ratios.push(check_autocorrelation(&mu, n, 1.0, &f)?.ratio);
    }
    let xs: Vec<f64> = (1..=6).map(|n| n as f64).collect();
    let slope = ls_slope(&xs, &ratios);
    Ok((
        slope < 0.1 && ratios.iter().all(|r| r.is_finite()),
        format!("ratios {ratios:.3?}, slope {slope:.4}"),
    ))
}

fn weak_type() -> Outcome {
    let mu = SurfaceMeasure::parabola(2.0)?;
    let js: Vec<u32> = (0..=10).collect();
    let sweep = weak_type_sweep(
        &mu,
        &p12(),
        &[Phi::LogLog, Phi::Linear],
        &js,
        -1,
        7,
        -4..=0,
        64.0,
    )?;
    let slope = |phi| {
        sweep
            .slopes
            .iter()
            .find(|(p, _)| *p == phi)
            .map(|(_, s)| *s)
            .unwrap_or(f64::NAN)
    };
    let (sl, s1) = (slope(Phi::LogLog), slope(Phi::Linear));
    Ok((
        sl < 0.1 && s1 > 0.3,
        format!("loglog slope {sl:.4} (< 0.1), linear slope {s1:.4} (> 0.3)"),
    ))
}

fn domination(count: usize) -> Outcome {
    let mu = SurfaceMeasure::parabola(2.0)?;
    let dil = p12();
    let root = DyadicCube::new(-2, vec![0, 0]);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cfg = SplitConfig {
        c: 0.2,
        k_range: -1..=0,
    };
    let (mut failures, mut worst) = (0usize, f64::INFINITY);
    for _ in 0..count {
        let cells: Vec<(Cell, f64)> = (0..rng.gen_range(10..60))
            .map(|_| {
                (
                    vec![rng.gen_range(16..48), rng.gen_range(16..48)],
                    rng.gen_range(-1.0..1.0) * 50.0,
                )
            })
            .collect();
        let f = GridFunction::from_cells(root.clone(), 4, cells)?;
        let alpha = rng.gen_range(1.0..8.0);
        match split_maximal_terms(&f, alpha, &mu, &dil, &cfg) {
            Ok(s) => {
                worst = worst.min(s.domination_slack);
                if s.domination_slack < -1e-10 {
                    failures += 1;
                }
            }
            Err(Error::Invariant(_)) => failures += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((
        failures == 0,
        format!("{count} random f, {failures} failures, min slack {worst:.3e}"),
    ))
}

/// Runs one criterion (1..=12). Criterion 13 is the wall clock of
/// [`run_all`].
pub fn run_criterion(id: u32) -> CriterionResult {
    let start = Instant::now();
    let outcome = match id {
        1 => content_oracle(200),
        2 => stacked(),
        3 => single_split(1000),
        4 => iteration(200),
        5 => stopping(100),
        6 => scaling(),
        7 => mollifier(),
        8 => whitney_sweep(50),
        9 => fourier(),
        10 => autocorrelation(),
        11 => weak_type(),
        12 => domination(20),
        _ => Ok((false, "no such criterion".into())),
    };
    let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    let name = CRITERIA
        .iter()
        .find(|(i, _)| *i == id)
        .map(|(_, n)| n.to_string())
        .unwrap_or_default();
    CriterionResult {
        id,
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Every criterion in order, with the end-to-end runtime appended.
pub fn run_all(mut on_result: impl FnMut(&CriterionResult)) -> Vec<CriterionResult> {
    let start = Instant::now();
    let mut out = Vec::new();
    for id in 1..=12 {
        let r = run_criterion(id);
        on_result(&r);
        out.push(r);
    }
    let secs = start.elapsed().as_secs_f64();
    let total = CriterionResult {
        id: 13,
        name: CRITERIA[12].1.into(),
        passed: secs < 1200.0,
        detail: format!("{secs:.1}s for criteria 1-12 (limit 1200s)"),
        seconds: secs,
    };
    on_result(&total);
    out.push(total);
    out
}
