use std::path::Path;

use anyhow::{bail, Context, Result};
use dyadic_core::dilation::DilationGroup;
use dyadic_core::harness::{Phi, TestFamily};
use dyadic_core::surface::SurfaceMeasure;
use serde::{Deserialize, Serialize};

/// Run configuration shared by the harness suites. Every field has a
/// default, so `{}` is a valid config.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub exponents: Vec<f64>,
    pub surface: String,
    pub root_level: i32,
    /// Working resolution of the grids.
    pub resolution: i32,
    /// Content level.
    pub n: i32,
    pub beta: f64,
    /// Explicit alpha grid; defaults to 33 points around `‖f‖_∞`.
    pub alphas: Option<Vec<f64>>,
    pub k_range: (i64, i64),
    pub c: f64,
    pub seed: u64,
    pub js: Vec<u32>,
    pub phis: Vec<String>,
    /// Quadrature nodes per cell side in the convolutions.
    pub step_divisor: f64,
    pub family: TestFamily,
    pub b: f64,
    pub r_sequence: Vec<f64>,
    pub samples: usize,
    pub eps: f64,
    pub spikes: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            exponents: vec![1.0, 2.0],
            surface: "parabola:b=2".into(),
            root_level: -1,
            resolution: 7,
            n: 3,
            beta: 1.0,
            alphas: None,
            k_range: (-4, 0),
            c: 0.2,
            seed: 0,
            js: (0..=10).collect(),
            phis: vec!["loglog".into(), "log".into(), "linear".into()],
            step_divisor: 8.0,
            family: TestFamily {
                name: "comb".into(),
                params: vec![48.0, 4.0, 3.0],
                seed: 0,
            },
            b: 2.0,
            r_sequence: vec![0.25, 0.0625, 0.015625, 0.00390625],
            samples: 200,
            eps: 0.05,
            spikes: 5,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dilation(&self) -> Result<DilationGroup> {
        Ok(DilationGroup::new(self.exponents.clone())?)
    }

    pub fn surface(&self) -> Result<SurfaceMeasure> {
        Ok(SurfaceMeasure::parse(&self.surface)?)
    }

    pub fn phis(&self) -> Result<Vec<Phi>> {
        self.phis.iter().map(|s| Ok(Phi::parse(s)?)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let dil = self.dilation().context("config field `exponents`")?;
        self.surface().context("config field `surface`")?;
        self.phis().context("config field `phis`")?;
        if dil.dim() != 2 {
            bail!(
                "config field `exponents`: the operators act on the plane, got {} exponents",
                dil.dim()
            );
        }
        if self.resolution < self.root_level {
            bail!(
                "config field `resolution` ({}) is coarser than `root_level` ({})",
                self.resolution,
                self.root_level
            );
        }
        if self.resolution > 14 {
            bail!(
                "config field `resolution` ({}) exceeds the supported maximum 14",
                self.resolution
            );
        }
        if self.k_range.0 > self.k_range.1 {
            bail!(
                "config field `k_range`: {} > {}",
                self.k_range.0,
                self.k_range.1
            );
        }
        if !(self.beta > 0.0 && self.beta <= 2.0) {
            bail!("config field `beta` ({}) must lie in (0, 2]", self.beta);
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            bail!("config field `c` ({}) must be positive", self.c);
        }
        if let Some(a) = &self.alphas {
            if a.is_empty() || a.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                bail!("config field `alphas` must be a nonempty list of positive numbers");
            }
        }
        if self
            .js
            .iter()
            .any(|j| *j > 2 * (self.resolution - self.root_level).max(0) as u32)
        {
            bail!("config field `js`: a stack of area 2^-j needs resolution - root_level >= j/2");
        }
        if !(self.step_divisor >= 1.0) {
            bail!(
                "config field `step_divisor` ({}) must be at least 1",
                self.step_divisor
            );
        }
        if !(self.b > 0.0) || !(self.eps > 0.0) || self.samples == 0 {
            bail!("config fields `b`, `eps` and `samples` must be positive");
        }
        if self.r_sequence.iter().any(|r| !(*r > 0.0)) {
            bail!("config field `r_sequence` must hold positive radii");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.exponents, vec![1.0, 2.0]);
    }

    #[test]
    fn rejects_bad_fields() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"nope": 1}"#).is_err());
        let cfg: RunConfig = serde_json::from_str(r#"{"k_range": [1, 0]}"#).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("k_range"));
        let cfg: RunConfig = serde_json::from_str(r#"{"exponents": [1, 2, 3]}"#).unwrap();
        assert!(cfg.validate().is_err());
        let cfg: RunConfig = serde_json::from_str(r#"{"surface": "ellipse"}"#).unwrap();
        assert!(format!("{:#}", cfg.validate().unwrap_err()).contains("surface"));
    }
}
