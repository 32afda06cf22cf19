//! Dense rectangular blocks of grid cells with signed offsets, used by the
//! convolution-heavy code, and exact box integrals via prefix sums.

use crate::dyadic::{Cell, DyadicCube, GridFunction};
use crate::error::{invalid, Result};
use crate::numeric::{pow2, CompensatedSum};

/// Values on the cells `origin + [0, shape)` of level `resolution`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrid {
    pub resolution: i32,
    pub origin: Vec<i64>,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl DenseGrid {
    pub fn zeros(resolution: i32, origin: Vec<i64>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            resolution,
            origin,
            shape,
            values: vec![0.0; len],
        }
    }

    /// Dense copy of the cells of `root` at the function's resolution.
    pub fn from_grid(f: &GridFunction) -> Self {
        let ranges = f.root().cell_range(f.resolution());
        let origin = ranges.iter().map(|r| r.0).collect();
        let shape = ranges.iter().map(|r| (r.1 - r.0) as usize).collect();
        let mut g = Self::zeros(f.resolution(), origin, shape);
        for (c, v) in f.iter() {
            let i = g.index(c).expect("cell inside root");
            g.values[i] = *v;
        }
        g
    }

    /// Sparse function on `root` holding the cells of this block that lie
    /// inside it.
    pub fn to_grid(&self, root: &DyadicCube) -> Result<GridFunction> {
        if root.dim() != self.dim() {
            return Err(invalid("dimension mismatch"));
        }
        let k = self.resolution - root.level;
        if k < 0 {
            return Err(invalid("root finer than grid"));
        }
        let cells = self
            .iter_cells()
            .filter(|(c, v)| *v != 0.0 && crate::dyadic::cell_ancestor(c, k as u32) == root.coords)
            .collect::<Vec<_>>();
        GridFunction::from_cells(root.clone(), self.resolution, cells)
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cell_side(&self) -> f64 {
        pow2(-(self.resolution as i64))
    }

    pub fn cell_volume(&self) -> f64 {
        pow2(-(self.resolution as i64) * self.dim() as i64)
    }

    #[inline]
    pub fn index(&self, cell: &[i64]) -> Option<usize> {
        let mut idx = 0usize;
        for i in 0..self.shape.len() {
            let off = cell[i] - self.origin[i];
            if off < 0 || off as usize >= self.shape[i] {
                return None;
            }
            idx = idx * self.shape[i] + off as usize;
        }
        Some(idx)
    }

    pub fn cell_of(&self, mut idx: usize) -> Cell {
        let d = self.dim();
        let mut c = vec![0i64; d];
        for i in (0..d).rev() {
            c[i] = self.origin[i] + (idx % self.shape[i]) as i64;
            idx /= self.shape[i];
        }
        c
    }

    pub fn get(&self, cell: &[i64]) -> f64 {
        self.index(cell).map(|i| self.values[i]).unwrap_or(0.0)
    }

    /// Value at a point (zero outside the block).
    pub fn value_at(&self, x: &[f64]) -> f64 {
        let scale = pow2(self.resolution as i64);
        let mut idx = 0usize;
        for i in 0..self.shape.len() {
            let off = (x[i] * scale).floor() as i64 - self.origin[i];
            if off < 0 || off as usize >= self.shape[i] {
                return 0.0;
            }
            idx = idx * self.shape[i] + off as usize;
        }
        self.values[idx]
    }

    pub fn iter_cells(&self) -> impl Iterator<Item = (Cell, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| (self.cell_of(i), *v))
    }

    pub fn cell_center(&self, idx: usize) -> Vec<f64> {
        let h = self.cell_side();
        self.cell_of(idx)
            .iter()
            .map(|c| (*c as f64 + 0.5) * h)
            .collect()
    }

    pub fn integral(&self) -> f64 {
        let mut acc = CompensatedSum::new();
        for v in &self.values {
            acc.add(*v);
        }
        acc.value() * self.cell_volume()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Measure of the cells where `|value| > threshold`.
    pub fn support_measure(&self, threshold: f64) -> f64 {
        self.values.iter().filter(|v| v.abs() > threshold).count() as f64 * self.cell_volume()
    }
}

/// Cumulative integrals of a dense block, giving exact integrals of the
/// piecewise-constant function over arbitrary axis-parallel boxes.
pub struct BoxIntegrator {
    resolution: i32,
    origin: Vec<i64>,
    shape: Vec<usize>,
    /// Corner sums on the `(shape + 1)` lattice.
    sums: Vec<f64>,
}

impl BoxIntegrator {
    pub fn new(g: &DenseGrid) -> Self {
        let d = g.dim();
        let ext: Vec<usize> = g.shape.iter().map(|s| s + 1).collect();
        let total: usize = ext.iter().product();
        let mut sums = vec![0.0; total];
        let vol = g.cell_volume();
        for (i, v) in g.values.iter().enumerate() {
            let c = g.cell_of(i);
            let mut idx = 0usize;
            for a in 0..d {
                idx = idx * ext[a] + (c[a] - g.origin[a]) as usize + 1;
            }
            sums[idx] = v * vol;
        }
        let mut stride = 1usize;
        for a in (0..d).rev() {
            for idx in 0..total {
                let coord = (idx / stride) % ext[a];
                if coord > 0 {
                    sums[idx] += sums[idx - stride];
                }
            }
            stride *= ext[a];
        }
        Self {
            resolution: g.resolution,
            origin: g.origin.clone(),
            shape: g.shape.clone(),
            sums,
        }
    }

    /// `∫_{(-∞, x]} f`, multilinear inside cells.
    fn cumulative(&self, x: &[f64]) -> f64 {
        let d = self.shape.len();
        let scale = pow2(self.resolution as i64);
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for a in 0..d {
            let u = x[a] * scale - self.origin[a] as f64;
            let n = self.shape[a] as f64;
            if u <= 0.0 {
                return 0.0;
            }
            let u = u.min(n);
            let j = (u.floor() as usize).min(self.shape[a].saturating_sub(1));
            base[a] = j;
            frac[a] = u - j as f64;
        }
        let mut acc = 0.0;
        for mask in 0..1usize << d {
            let mut w = 1.0;
            let mut idx = 0usize;
            for a in 0..d {
                let bit = (mask >> a) & 1;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                idx = idx * (self.shape[a] + 1) + base[a] + bit;
            }
            if w != 0.0 {
                acc += w * self.sums[idx];
            }
        }
        acc
    }

    /// `∫` over the box `Π [lo_i, hi_i)`.
    pub fn box_integral(&self, lo: &[f64], hi: &[f64]) -> f64 {
        let d = self.shape.len();
        let mut acc = 0.0;
        let mut corner = vec![0.0; d];
        for mask in 0..1usize << d {
            let mut sign = 1.0;
            for a in 0..d {
                if (mask >> a) & 1 == 1 {
                    corner[a] = hi[a];
                } else {
                    corner[a] = lo[a];
                    sign = -sign;
                }
            }
            acc += sign * self.cumulative(&corner);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_round_trip() {
        let f = GridFunction::from_cells(
            DyadicCube::new(0, vec![0, 0]),
            2,
            vec![(vec![1, 2], 3.0), (vec![3, 0], -1.0)],
        )
        .unwrap();
        let g = DenseGrid::from_grid(&f);
        assert_eq!(g.len(), 16);
        assert_eq!(g.get(&[1, 2]), 3.0);
        assert_eq!(g.to_grid(f.root()).unwrap(), f);
        assert_eq!(g.integral(), f.integral());
        assert_eq!(g.value_at(&[0.3, 0.6]), 3.0);
    }

    #[test]
    fn box_integrals_are_exact() {
        let f = GridFunction::from_cells(
            DyadicCube::new(0, vec![0, 0]),
            2,
            vec![(vec![0, 0], 1.0), (vec![1, 1], 2.0), (vec![3, 3], 4.0)],
        )
        .unwrap();
        let bi = BoxIntegrator::new(&DenseGrid::from_grid(&f));
        assert!((bi.box_integral(&[-1.0, -1.0], &[2.0, 2.0]) - f.integral()).abs() < 1e-15);
        // half of cell (0,0) and a quarter of cell (1,1)
        let got = bi.box_integral(&[0.125, 0.0], &[0.375, 0.375]);
        let expect = 0.5 * 1.0 / 16.0 + 0.25 * 2.0 / 16.0;
        assert!((got - expect).abs() < 1e-15);
    }
}
