//! Elementwise nonlinearities and their derivatives.

use super::spec::ActivationKind;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

impl ActivationKind {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Self::Relu => z.max(0.0),
            Self::LeakyRelu(slope) => {
                if z > 0.0 {
                    z
                } else {
                    slope * z
                }
            }
            Self::Gelu => {
                let u = SQRT_2_OVER_PI * (z + GELU_CUBIC * z * z * z);
                0.5 * z * (1.0 + u.tanh())
            }
            Self::Tanh => z.tanh(),
            Self::Abs => z.abs(),
            Self::Identity => z,
        }
    }

    /// Derivative at `z`. At the kink of piecewise-linear functions the
    /// left derivative is used (ReLU'(0) = 0, |.|'(0) = 0).
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Self::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::LeakyRelu(slope) => {
                if z > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Self::Gelu => {
                let z2 = z * z;
                let u = SQRT_2_OVER_PI * (z + GELU_CUBIC * z2 * z);
                let t = u.tanh();
                0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * z2)
            }
            Self::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Self::Abs => {
                if z > 0.0 {
                    1.0
                } else if z < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Self::Identity => 1.0,
        }
    }
}
