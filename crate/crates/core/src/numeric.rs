//! Floating-point helpers shared by the grid code: compensated summation,
//! exact expansion sums, exact two-way splits and least-squares slopes.

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = CompensatedSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

/// Error-free accumulation of doubles as a non-overlapping expansion.
///
/// `is_zero` answers whether the real-number sum of everything added is
/// exactly zero, which is how grid reconstructions are certified.
#[derive(Clone, Debug, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, mut x: f64) {
        let mut i = 0;
        for j in 0..self.partials.len() {
            let y = self.partials[j];
            let (hi, lo) = two_sum(x, y);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        if x != 0.0 {
            self.partials.push(x);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.partials.iter().all(|p| *p == 0.0)
    }

    /// Rounded value of the exact sum.
    pub fn value(&self) -> f64 {
        self.partials.iter().rev().sum()
    }
}

/// True when `parts` sum to `target` exactly in real arithmetic.
pub fn sums_exactly_to(parts: &[f64], target: f64) -> bool {
    let mut acc = ExactSum::new();
    for p in parts {
        acc.add(*p);
    }
    acc.add(-target);
    acc.is_zero()
}

/// Splits `x` into `(p, x - p)` with `p ≈ part` such that the two returned
/// doubles add up to `x` exactly. Signs follow `x`; `part` is clamped to
/// `[0, |x|]` in magnitude.
pub fn exact_split(x: f64, part: f64) -> (f64, f64) {
    if x == 0.0 {
        return (0.0, 0.0);
    }
    let s = x.signum();
    let ax = x.abs();
    let ap = (part * s).clamp(0.0, ax);
    let (p, r) = if ap >= 0.5 * ax {
        (ap, ax - ap)
    } else {
        let r = ax - ap;
        (ax - r, r)
    };
    (s * p, s * r)
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// `2^e` for integer `e`, exact over the normal range.
#[inline]
pub fn pow2(e: i64) -> f64 {
    2f64.powi(e as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_beats_naive_on_cancellation() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(xs), 2.0);
    }

    #[test]
    fn exact_sum_detects_one_ulp() {
        assert!(sums_exactly_to(&[0.1, 0.2], 0.1 + 0.2) == false);
        assert!(sums_exactly_to(&[0.5, 0.25], 0.75));
        let mut acc = ExactSum::new();
        for x in [1e300, 1.0, -1e300, -1.0] {
            acc.add(x);
        }
        assert!(acc.is_zero());
    }

    #[test]
    fn exact_split_reassembles() {
        let cases = [
            (1.0, 1e-17),
            (0.3, 0.1),
            (7.1, 6.9),
            (-2.5, -0.7),
            (1.0, 0.5),
        ];
        for (x, p) in cases {
            let (a, b) = exact_split(x, p);
            assert!(sums_exactly_to(&[a, b], x), "{x} {p}");
            assert!((a - p).abs() <= 4.0 * f64::EPSILON * x.abs());
        }
    }

    #[test]
    fn slope_of_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        assert!((ls_slope(&xs, &ys) - 2.0).abs() < 1e-14);
    }
}
