use serde::{Deserialize, Serialize};

/// Uniform cubic B-spline basis over `[-range, range]` split into `intervals`
/// cells. The knot vector is extended by three cells on each side, giving
/// `intervals + 3` basis functions that span every cubic spline on the range.
/// Inputs are clamped to the range before evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplineGrid {
    pub intervals: usize,
    pub range: f64,
}

impl Default for SplineGrid {
    fn default() -> Self {
        Self {
            intervals: 8,
            range: 3.0,
        }
    }
}

impl SplineGrid {
    pub fn basis_count(&self) -> usize {
        self.intervals + 3
    }

    fn step(&self) -> f64 {
        2.0 * self.range / self.intervals as f64
    }

    /// Interval index and local coordinate in `[0, 1]` of a clamped input.
    fn locate(&self, x: f64) -> (usize, f64) {
        let x = x.clamp(-self.range, self.range);
        let pos = (x + self.range) / self.step();
        let cell = (pos.floor() as usize).min(self.intervals - 1);
        (cell, pos - cell as f64)
    }

    /// Writes all basis values at `x` into `out` (length [`Self::basis_count`]).
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        out.fill(0.0);
        let (cell, u) = self.locate(x);
        let v = 1.0 - u;
        let u2 = u * u;
        let u3 = u2 * u;
        out[cell] = v * v * v / 6.0;
        out[cell + 1] = (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0;
        out[cell + 2] = (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0;
        out[cell + 3] = u3 / 6.0;
    }

    /// Derivatives of the basis values with respect to the unclamped input.
    /// Zero outside the open range, where the clamp is flat.
    pub fn deriv_into(&self, x: f64, out: &mut [f64]) {
        out.fill(0.0);
        if x <= -self.range || x >= self.range {
            return;
        }
        let (cell, u) = self.locate(x);
        let h = self.step();
        let v = 1.0 - u;
        out[cell] = -0.5 * v * v / h;
        out[cell + 1] = (1.5 * u * u - 2.0 * u) / h;
        out[cell + 2] = (-1.5 * u * u + u + 0.5) / h;
        out[cell + 3] = 0.5 * u * u / h;
    }
}
