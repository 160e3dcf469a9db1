//! One-dimensional interpolation stencils shared by point evaluation and the
//! separable whole-array shifts of the collision engine.

use serde::{Deserialize, Serialize};

/// Interpolation scheme used to evaluate grid functions off the nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    /// Tensor-product linear interpolation (2 taps per axis).
    Linear,
    /// Tensor-product Catmull-Rom cubic (4 taps per axis, C¹, exact on quadratics).
    #[default]
    Cubic,
}

/// Tap offsets relative to `floor(x)` and their weights for fractional part `t`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Taps {
    pub first: i64,
    pub len: usize,
    pub w: [f64; 4],
}

impl Interp {
    #[inline]
    pub(crate) fn taps(self, t: f64) -> Taps {
        match self {
            Interp::Linear => Taps { first: 0, len: 2, w: [1.0 - t, t, 0.0, 0.0] },
            Interp::Cubic => {
                let t2 = t * t;
                let t3 = t2 * t;
                Taps {
                    first: -1,
                    len: 4,
                    w: [
                        0.5 * (-t3 + 2.0 * t2 - t),
                        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
                        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
                        0.5 * (t3 - t2),
                    ],
                }
            }
        }
    }

    /// Ghost layers needed on each side of a padded field.
    pub(crate) const GHOST: usize = 2;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_weights_reproduce_quadratics() {
        for k in 0..=10 {
            let t = k as f64 / 10.0;
            let tp = Interp::Cubic.taps(t);
            let mut m = [0.0; 3];
            for j in 0..tp.len {
                let x = (tp.first + j as i64) as f64;
                m[0] += tp.w[j];
                m[1] += tp.w[j] * x;
                m[2] += tp.w[j] * x * x;
            }
            assert!((m[0] - 1.0).abs() < 1e-14);
            assert!((m[1] - t).abs() < 1e-14);
            assert!((m[2] - t * t).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_weights_partition_unity() {
        let tp = Interp::Linear.taps(0.3);
        assert!((tp.w[0] + tp.w[1] - 1.0).abs() < 1e-15);
    }
}
