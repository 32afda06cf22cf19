use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dyadic_core::content::{
    critical_thickness, length_with_cover, thickness_with_cube, ContentParams,
};
use dyadic_core::czd::cz_split;
use dyadic_core::decompose::{iterate_split, split_once, stopping_decomposition, TaggedPiece};
use dyadic_core::dilation::DilationGroup;
use dyadic_core::harness::{
    config_hash, convergence_experiment, default_alphas, spike_family, split_budget_report,
    weak_type_sweep,
};
use dyadic_core::operators::{
    maximal_fn, parabola_average, radon_transform, OperatorResult, SplitConfig,
};
use dyadic_core::selftest::{run_all, run_criterion, CriterionResult};
use dyadic_core::surface::SurfaceMeasure;
use dyadic_core::GridFunction;
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::output::{write_csv, write_json};

pub fn read_grid(path: &Path) -> Result<GridFunction> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    GridFunction::from_json(&text)
        .with_context(|| format!("parsing grid function {}", path.display()))
}

pub fn parse_dilation(text: &str) -> Result<DilationGroup> {
    let exps: Vec<f64> = serde_json::from_str(text)
        .with_context(|| format!("--dil expects a JSON list, got {text}"))?;
    Ok(DilationGroup::new(exps)?)
}

pub fn parse_krange(text: &str) -> Result<(i64, i64)> {
    let (a, b) = text
        .split_once(':')
        .with_context(|| format!("--krange expects LO:HI, got {text}"))?;
    let (lo, hi): (i64, i64) = (a.trim().parse()?, b.trim().parse()?);
    if lo > hi {
        bail!("--krange {lo}:{hi} is empty");
    }
    Ok((lo, hi))
}

fn g(x: f64) -> String {
    format!("{x:e}")
}

pub fn content(op: &str, input: &Path, n: i32, beta: f64, out: Option<&Path>) -> Result<()> {
    let v = read_grid(input)?;
    let p = ContentParams::with_beta(n, beta);
    let body = match op {
        "length" => {
            let (value, cover) = length_with_cover(&v, &p)?;
            json!({ "op": op, "n": n, "beta": beta, "value": value, "certificate": { "cover": cover } })
        }
        "thickness" => {
            let (value, cube) = thickness_with_cube(&v, &p)?;
            json!({ "op": op, "n": n, "beta": beta, "value": value, "certificate": { "maximizing_cube": cube } })
        }
        "theta" => {
            let r = critical_thickness(&v, &p)?;
            json!({ "op": op, "n": n, "beta": beta, "value": r.theta, "certificate": r })
        }
        other => bail!("unknown content op {other}"),
    };
    emit(out, "content", &body)
}

fn emit<T: Serialize>(out: Option<&Path>, command: &str, body: &T) -> Result<()> {
    match out {
        Some(path) => write_json(path, command, body),
        None => {
            println!("{}", crate::output::to_json(command, body)?);
            Ok(())
        }
    }
}

pub struct DecomposeArgs<'a> {
    pub method: &'a str,
    pub input: &'a Path,
    pub n: i32,
    pub m: Option<usize>,
    pub l: i64,
    pub alpha: f64,
    pub dil: Option<&'a str>,
    pub out_dir: &'a Path,
}

pub fn decompose(a: &DecomposeArgs) -> Result<()> {
    let p = ContentParams::new(a.n);
    let dir = a.out_dir;
    match a.method {
        "split" => {
            let v = read_grid(a.input)?;
            let s = split_once(&v, v.root(), &p)?;
            write_json(&dir.join("g.json"), "decompose", &s.g)?;
            write_json(&dir.join("h.json"), "decompose", &s.h)?;
            let cert = json!({ "method": "split", "n": a.n, "constants": s.certificate.constants,
                "reconstructs": s.certificate.reconstructs(&v) });
            write_json(&dir.join("cert.json"), "decompose", &cert)
        }
        "iterate" => {
            let f = read_grid(a.input)?;
            let m = a.m.unwrap_or(a.n.max(1) as usize);
            let it = iterate_split(&f, &p, m)?;
            for (i, g) in it.pieces.iter().enumerate() {
                write_json(&dir.join(format!("g{}.json", i + 1)), "decompose", g)?;
            }
            write_json(&dir.join("h.json"), "decompose", &it.residual)?;
            let cert = json!({ "method": "iterate", "n": a.n, "m": m, "absorbed": it.absorbed,
                "lengths": it.lengths, "constants": it.certificate.constants,
                "reconstructs": it.certificate.reconstructs(&f.refine(it.residual.resolution())?) });
            write_json(&dir.join("cert.json"), "decompose", &cert)
        }
        "stopping" => {
            let text = fs::read_to_string(a.input)
                .with_context(|| format!("reading {}", a.input.display()))?;
            let pieces: Vec<TaggedPiece> = serde_json::from_str(&text)
                .with_context(|| format!("parsing tagged pieces {}", a.input.display()))?;
            let dil = match a.dil {
                Some(s) => parse_dilation(s)?,
                None => DilationGroup::isotropic(pieces.first().map(|t| t.b.dim()).unwrap_or(1)),
            };
            let s = stopping_decomposition(&pieces, a.n, a.l, a.alpha, &dil)?;
            write_json(
                &dir.join("pieces.json"),
                "decompose",
                &json!({ "pieces": s.pieces }),
            )?;
            let cert = json!({ "method": "stopping", "n": s.n, "l": s.l, "alpha": s.alpha,
                "kappa_max": s.kappa_max, "kappa_min": s.kappa_min,
                "max_stopping_index": s.max_stopping_index, "max_step_thickness": s.max_step_thickness,
                "max_length_ratio": s.max_length_ratio, "max_thickness_ratio": s.max_thickness_ratio,
                "initial_thickness": s.initial_thickness, "steps": s.steps });
            write_json(&dir.join("cert.json"), "decompose", &cert)
        }
        other => bail!("unknown decomposition method {other}"),
    }
}

pub fn czd(
    input: &Path,
    alpha: f64,
    dil: &str,
    c: f64,
    out: &Path,
    cells_csv: Option<&Path>,
) -> Result<()> {
    let f = read_grid(input)?;
    let dil = parse_dilation(dil)?;
    let cz = cz_split(&f, alpha, &dil, c)?;
    let regions: Vec<_> = cz
        .whitney
        .cells
        .iter()
        .map(|w| json!({ "scale": w.scale, "index": w.index, "center": w.center, "cells": w.cells.len(), "forced": w.forced }))
        .collect();
    let body = json!({
        "alpha": alpha, "c": c, "constants": cz.constants, "omega_measure": cz.whitney.omega_measure(),
        "regions": regions, "good": cz.good, "bad": cz.bad, "levels": cz.max_level(),
    });
    write_json(out, "czd", &body)?;
    if let Some(path) = cells_csv {
        let mut rows = Vec::new();
        for (i, w) in cz.whitney.cells.iter().enumerate() {
            for c in &w.cells {
                let mut row: Vec<String> = c.iter().map(|x| x.to_string()).collect();
                row.resize(2, String::new());
                row.extend([
                    i.to_string(),
                    w.scale.to_string(),
                    g(f.get(c)),
                    g(cz.good.get(c)),
                ]);
                rows.push(row);
            }
        }
        write_csv(path, &["i0", "i1", "region", "scale", "f", "good"], &rows)?;
    }
    Ok(())
}

pub struct OpArgs<'a> {
    pub kind: &'a str,
    pub surface: &'a str,
    pub input: &'a Path,
    pub krange: Option<&'a str>,
    pub dil: &'a str,
    pub radius: f64,
    pub out: &'a Path,
    pub diagnostics: Option<&'a Path>,
}

fn surface_exponent(mu: &SurfaceMeasure) -> Result<f64> {
    match mu.kind {
        dyadic_core::surface::SurfaceKind::Parabola { b } => Ok(b),
        _ => bail!("this operator needs a parabola surface"),
    }
}

pub fn op(a: &OpArgs) -> Result<()> {
    let f = read_grid(a.input)?;
    let dil = parse_dilation(a.dil)?;
    let mu = SurfaceMeasure::parse(a.surface)?;
    let (lo, hi) = match a.krange {
        Some(s) => parse_krange(s)?,
        None => {
            let r = dyadic_core::operators::default_k_range(f.resolution());
            (*r.start(), *r.end())
        }
    };
    let result: OperatorResult = match a.kind {
        "maximal" => maximal_fn(&mu, &f, &dil, lo..=hi)?,
        "radon" => radon_transform(&mu, &f, &dil, lo..=hi)?,
        "hilbert" => {
            let h = SurfaceMeasure::hilbert_parabola(surface_exponent(&mu)?)?;
            radon_transform(&h, &f, &dil, lo..=hi)?
        }
        "average" => {
            let field = parabola_average(&f, a.radius, surface_exponent(&mu)?)?;
            OperatorResult {
                field,
                k_range: (0, 0),
                diagnostics: vec![],
            }
        }
        other => bail!("unknown operator kind {other}"),
    };
    write_json(
        a.out,
        "op",
        &json!({ "kind": a.kind, "surface": a.surface, "k_range": result.k_range, "field": result.field }),
    )?;
    if let Some(path) = a.diagnostics {
        let rows: Vec<Vec<String>> = result
            .diagnostics
            .iter()
            .map(|d| {
                vec![
                    d.k.to_string(),
                    g(d.sup_norm),
                    g(d.l2_norm),
                    g(d.support_measure),
                    g(d.error_estimate),
                ]
            })
            .collect();
        write_csv(
            path,
            &[
                "k",
                "sup_norm",
                "l2_norm",
                "support_measure",
                "error_estimate",
            ],
            &rows,
        )?;
    }
    Ok(())
}

pub fn harness(suite: &str, cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let hash = config_hash(cfg)?;
    let mu = cfg.surface()?;
    let dil = cfg.dilation()?;
    let (lo, hi) = cfg.k_range;
    let summary = match suite {
        "weaktype" => {
            let sweep = weak_type_sweep(
                &mu,
                &dil,
                &cfg.phis()?,
                &cfg.js,
                cfg.root_level,
                cfg.resolution,
                lo..=hi,
                cfg.step_divisor,
            )?;
            let rows: Vec<Vec<String>> = sweep
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.j.to_string(),
                        g(r.lambda),
                        r.phi.name().to_string(),
                        g(r.c_min),
                    ]
                })
                .collect();
            write_csv(
                &out_dir.join("weaktype.csv"),
                &["j", "lambda", "phi", "c_min"],
                &rows,
            )?;
            let slopes: BTreeMap<&str, f64> =
                sweep.slopes.iter().map(|(p, s)| (p.name(), *s)).collect();
            json!({ "suite": suite, "config_hash": hash, "slopes": slopes, "rows": sweep.rows.len() })
        }
        "convergence" => {
            let (f, spikes) = spike_family(cfg.spikes, cfg.root_level, cfg.resolution)?;
            let rows = convergence_experiment(
                &f,
                cfg.b,
                &cfg.r_sequence,
                cfg.samples,
                cfg.eps,
                &spikes,
                cfg.seed,
            )?;
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| vec![g(r.r), g(r.max_error), g(r.mean_error), g(r.fraction_above)])
                .collect();
            write_csv(
                &out_dir.join("convergence.csv"),
                &["r", "max_error", "mean_error", "fraction_above"],
                &table,
            )?;
            let decreasing = rows
                .windows(2)
                .all(|w| w[1].fraction_above <= w[0].fraction_above);
            json!({ "suite": suite, "config_hash": hash, "fraction_decreasing": decreasing, "rows": rows })
        }
        "split-budget" => {
            let f = cfg.family.generate(cfg.root_level, cfg.resolution)?;
            let sup = f.sup_norm();
            let alphas = cfg.alphas.clone().unwrap_or_else(|| {
                default_alphas(sup)
                    .into_iter()
                    .filter(|a| *a <= sup && *a >= sup / 8.0)
                    .collect()
            });
            let split = SplitConfig {
                c: cfg.c,
                k_range: lo..=hi,
            };
            let mut table = Vec::new();
            let mut reports = Vec::new();
            for &alpha in &alphas {
                let r = split_budget_report(&f, &mu, &dil, alpha, &split)?;
                for t in &r.terms {
                    table.push(vec![
                        g(alpha),
                        t.name.clone(),
                        t.norm.clone(),
                        g(t.measured),
                        g(t.bound),
                        g(t.ratio),
                    ]);
                }
                reports.push(r);
            }
            write_csv(
                &out_dir.join("split_budget.csv"),
                &["alpha", "term", "norm", "measured", "bound", "ratio"],
                &table,
            )?;
            json!({ "suite": suite, "config_hash": hash, "reports": reports })
        }
        other => bail!("unknown suite {other}"),
    };
    write_json(&out_dir.join("summary.json"), "harness", &summary)
}

/// Runs the selftest and reports whether every criterion passed.
pub fn selftest(only: &[u32], json_out: Option<&PathBuf>) -> Result<bool> {
    if let Some(bad) = only.iter().find(|id| !(1..=12).contains(*id)) {
        bail!("no criterion {bad}; choose from 1-12 (13 is the runtime of a full run)");
    }
    let print = |r: &CriterionResult| println!("{r}");
    let results: Vec<CriterionResult> = if only.is_empty() {
        run_all(print)
    } else {
        only.iter()
            .map(|id| {
                let r = run_criterion(*id);
                print(&r);
                r
            })
            .collect()
    };
    let passed = results.iter().filter(|r| r.passed).count();
    println!("{passed}/{} criteria passed", results.len());
    if let Some(path) = json_out {
        write_json(path, "selftest", &json!({ "results": results }))?;
    }
    Ok(passed == results.len())
}
