//! Compactly supported measures `dμ = χ(t) w(t) dt` carried by a curve
//! `γ(t)` in the plane.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numeric::CompensatedSum;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SurfaceKind {
    /// `γ(t) = (t, t^b)`, with `|t|^b` for non-integer `b`.
    Parabola { b: f64 },
    /// `γ(θ) = r (cos θ, sin θ)`.
    Circle { radius: f64 },
    /// `γ(t) = (t, ψ(t))` with `ψ` linearly interpolated from samples
    /// spread evenly over `[lo, hi]`.
    Graph { lo: f64, hi: f64, values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Cutoff {
    /// `exp(-1/(1-u²))`, `u = (t - center)/half_width`.
    Bump {
        center: f64,
        half_width: f64,
    },
    Indicator,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelWeight {
    One,
    /// `1/t`, for the lacunary pieces of the Hilbert transform.
    InverseT,
    /// `t`, an odd cutoff with the same support as the even one.
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMeasure {
    pub kind: SurfaceKind,
    pub cutoff: Cutoff,
    pub weight: KernelWeight,
    /// Parameter intervals carrying the measure.
    pub intervals: Vec<(f64, f64)>,
    /// Overall normalization factor.
    pub scale: f64,
    /// Default quadrature density, nodes per unit parameter.
    pub nodes_per_unit: usize,
}

fn bump(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - u * u)).exp()
    }
}

fn power(t: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && b.abs() < 64.0 {
        t.powi(b as i32)
    } else {
        t.abs().powf(b)
    }
}

impl SurfaceMeasure {
    fn build(
        kind: SurfaceKind,
        cutoff: Cutoff,
        weight: KernelWeight,
        intervals: Vec<(f64, f64)>,
    ) -> Self {
        Self {
            kind,
            cutoff,
            weight,
            intervals,
            scale: 1.0,
            nodes_per_unit: 4096,
        }
    }

    fn normalized(mut self) -> Self {
        self.scale = 1.0;
        let total: f64 = self
            .nodes(self.nodes_per_unit)
            .iter()
            .map(|(_, w)| w.abs())
            .sum();
        self.scale = 1.0 / total;
        self
    }

    /// Probability measure on `(t, t^b)`, `|t| <= ½`, with a bump cutoff.
    pub fn parabola(b: f64) -> Result<Self> {
        if !(b.is_finite() && b > 0.0) || b == 1.0 {
            return Err(invalid(
                "parabola exponent must be positive and different from 1",
            ));
        }
        Ok(Self::build(
            SurfaceKind::Parabola { b },
            Cutoff::Bump {
                center: 0.0,
                half_width: 0.5,
            },
            KernelWeight::One,
            vec![(-0.5, 0.5)],
        )
        .normalized())
    }

    /// The parabola with odd cutoff `t·bump(t)`, normalized to `∫|dμ| = 1`,
    /// so that `∫dμ = 0`.
    pub fn parabola_odd(b: f64) -> Result<Self> {
        let mut m = Self::parabola(b)?;
        m.weight = KernelWeight::Linear;
        Ok(m.normalized())
    }

    /// Probability measure on an arc of the circle of radius ½ centred on
    /// the positive first axis.
    pub fn circle() -> Self {
        let h = std::f64::consts::FRAC_PI_2;
        Self::build(
            SurfaceKind::Circle { radius: 0.5 },
            Cutoff::Bump {
                center: 0.0,
                half_width: h,
            },
            KernelWeight::One,
            vec![(-h, h)],
        )
        .normalized()
    }

    /// Probability measure on the graph of `ψ` over `[-½, ½]`.
    pub fn graph(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 || values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("graph needs at least two finite samples"));
        }
        let m = Self::build(
            SurfaceKind::Graph {
                lo: -0.5,
                hi: 0.5,
                values,
            },
            Cutoff::Bump {
                center: 0.0,
                half_width: 0.5,
            },
            KernelWeight::One,
            vec![(-0.5, 0.5)],
        );
        if m.support_radius() > 1.0 {
            return Err(invalid("graph leaves the unit ball"));
        }
        Ok(m.normalized())
    }

    /// One lacunary block of the Hilbert transform along `(t, t^b)`:
    /// `dt/t` on `¼ <= |t| <= ½`. Its dilates `δ_k` tile `t ≠ 0`.
    pub fn hilbert_parabola(b: f64) -> Result<Self> {
        if !(b.is_finite() && b > 0.0) || b == 1.0 {
            return Err(invalid(
                "parabola exponent must be positive and different from 1",
            ));
        }
        Ok(Self::build(
            SurfaceKind::Parabola { b },
            Cutoff::Indicator,
            KernelWeight::InverseT,
            vec![(-0.5, -0.25), (0.25, 0.5)],
        ))
    }

    /// Parses `parabola:b=2`, `parabola_odd:b=2`, `hilbert:b=2`, `circle`.
    pub fn parse(text: &str) -> Result<Self> {
        let (name, rest) = text.split_once(':').unwrap_or((text, ""));
        let mut b = 2.0;
        for kv in rest.split(',').filter(|s| !s.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| invalid(format!("bad surface option {kv}")))?;
            match k.trim() {
                "b" => {
                    b = v
                        .trim()
                        .parse()
                        .map_err(|_| invalid(format!("bad exponent {v}")))?
                }
                other => return Err(invalid(format!("unknown surface option {other}"))),
            }
        }
        match name.trim() {
            "parabola" => Self::parabola(b),
            "parabola_odd" => Self::parabola_odd(b),
            "hilbert" => Self::hilbert_parabola(b),
            "circle" => Ok(Self::circle()),
            other => Err(invalid(format!("unknown surface {other}"))),
        }
    }

    pub fn point(&self, t: f64) -> [f64; 2] {
        match &self.kind {
            SurfaceKind::Parabola { b } => [t, power(t, *b)],
            SurfaceKind::Circle { radius } => [radius * t.cos(), radius * t.sin()],
            SurfaceKind::Graph { lo, hi, values } => {
                let n = values.len() - 1;
                let u = ((t - lo) / (hi - lo) * n as f64).clamp(0.0, n as f64);
                let i = (u.floor() as usize).min(n - 1);
                let x = u - i as f64;
                [t, values[i] * (1.0 - x) + values[i + 1] * x]
            }
        }
    }

    /// `χ(t)·w(t)` times the normalization.
    pub fn density(&self, t: f64) -> f64 {
        let c = match &self.cutoff {
            Cutoff::Bump { center, half_width } => bump((t - center) / half_width),
            Cutoff::Indicator => 1.0,
        };
        let w = match self.weight {
            KernelWeight::One => 1.0,
            KernelWeight::InverseT => 1.0 / t,
            KernelWeight::Linear => t,
        };
        self.scale * c * w
    }

    /// Composite midpoint nodes `(t, weight)` with `count` nodes per unit
    /// parameter.
    pub fn nodes(&self, count: usize) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for &(a, b) in &self.intervals {
            let m = (((b - a) * count as f64).ceil() as usize).max(1);
            let h = (b - a) / m as f64;
            for i in 0..m {
                // Offsets from the endpoint nearest 0, so mirrored intervals
                // produce exactly mirrored nodes.
                let off = (i as f64 + 0.5) * h;
                let t = if a >= 0.0 {
                    a + off
                } else if b <= 0.0 {
                    -((-b) + off)
                } else {
                    0.5 * (a + b) + (i as f64 + 0.5 - 0.5 * m as f64) * h
                };
                let w = self.density(t) * h;
                if w != 0.0 {
                    out.push((t, w));
                }
            }
        }
        out
    }

    /// Largest per-axis speed `sup |γ_i'(t)|` over the intervals.
    pub fn axis_speeds(&self) -> [f64; 2] {
        let mut s = [0.0f64; 2];
        for &(a, b) in &self.intervals {
            let m = 512;
            let h = (b - a) / m as f64;
            for i in 0..m {
                let p = self.point(a + i as f64 * h);
                let q = self.point(a + (i + 1) as f64 * h);
                for ax in 0..2 {
                    s[ax] = s[ax].max(((q[ax] - p[ax]) / h).abs());
                }
            }
        }
        // Slack for curvature between samples.
        [s[0] * 1.05 + 1e-12, s[1] * 1.05 + 1e-12]
    }

    /// Nodes whose images under `x ↦ (scales[0] x_1, scales[1] x_2)` are
    /// at most `step` apart.
    pub fn nodes_for_scaled_step(&self, step: f64, scales: [f64; 2]) -> Vec<(f64, f64)> {
        let sp = self.axis_speeds();
        let speed = ((sp[0] * scales[0]).powi(2) + (sp[1] * scales[1]).powi(2)).sqrt();
        let per_unit = (speed / step).ceil().max(256.0);
        let per_unit = per_unit.min(1e8) as usize;
        self.nodes(per_unit)
    }

    pub fn nodes_for_step(&self, step: f64) -> Vec<(f64, f64)> {
        self.nodes_for_scaled_step(step, [1.0, 1.0])
    }

    pub fn total_mass(&self) -> f64 {
        let mut acc = CompensatedSum::new();
        for (_, w) in self.nodes(self.nodes_per_unit) {
            acc.add(w);
        }
        acc.value()
    }

    pub fn total_variation(&self) -> f64 {
        self.nodes(self.nodes_per_unit)
            .iter()
            .map(|(_, w)| w.abs())
            .sum()
    }

    /// `∫dμ = 0` to `1e-12` relative to the total variation.
    pub fn has_cancellation(&self) -> bool {
        self.total_mass().abs() <= 1e-12 * self.total_variation()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.nodes(self.nodes_per_unit)
            .iter()
            .all(|(_, w)| *w >= 0.0)
    }

    /// Axis-aligned bounding box of the support.
    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for &(a, b) in &self.intervals {
            let m = 2048;
            for i in 0..=m {
                let p = self.point(a + (b - a) * i as f64 / m as f64);
                for ax in 0..2 {
                    lo[ax] = lo[ax].min(p[ax]);
                    hi[ax] = hi[ax].max(p[ax]);
                }
            }
        }
        (lo, hi)
    }

    pub fn support_radius(&self) -> f64 {
        let mut r = 0.0f64;
        for &(a, b) in &self.intervals {
            let m = 2048;
            for i in 0..=m {
                let p = self.point(a + (b - a) * i as f64 / m as f64);
                r = r.max((p[0] * p[0] + p[1] * p[1]).sqrt());
            }
        }
        r
    }

    pub fn descriptor(&self) -> String {
        let base = match &self.kind {
            SurfaceKind::Parabola { b } => format!("parabola:b={b}"),
            SurfaceKind::Circle { radius } => format!("circle:r={radius}"),
            SurfaceKind::Graph { values, .. } => format!("graph:samples={}", values.len()),
        };
        match self.weight {
            KernelWeight::One => base,
            KernelWeight::InverseT => format!("{base},weight=1/t"),
            KernelWeight::Linear => format!("{base},weight=t"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_averages() {
        for m in [
            SurfaceMeasure::parabola(2.0).unwrap(),
            SurfaceMeasure::circle(),
            SurfaceMeasure::parabola(1.5).unwrap(),
        ] {
            assert!((m.total_mass() - 1.0).abs() < 1e-12, "{}", m.descriptor());
            assert!(m.is_nonnegative());
            assert!(m.support_radius() <= 1.0);
            assert!(!m.has_cancellation());
        }
    }

    #[test]
    fn cancelling_measures() {
        let h = SurfaceMeasure::hilbert_parabola(2.0).unwrap();
        assert!(h.has_cancellation());
        assert!(h.support_radius() <= 1.0);
        let o = SurfaceMeasure::parabola_odd(2.0).unwrap();
        assert!(o.has_cancellation());
        assert!((o.total_variation() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn parse_and_points() {
        let m = SurfaceMeasure::parse("parabola:b=2").unwrap();
        assert_eq!(m.point(0.5), [0.5, 0.25]);
        assert_eq!(m.point(-0.5), [-0.5, 0.25]);
        assert!(SurfaceMeasure::parse("parabola:b=1").is_err());
        assert!(SurfaceMeasure::parse("sphere").is_err());
        let g = SurfaceMeasure::graph(vec![0.0, 0.25, 0.0]).unwrap();
        assert_eq!(g.point(-0.25), [-0.25, 0.125]);
    }
}
