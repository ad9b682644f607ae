//! Nonlinear flux algebra of the p-Laplacian with shift `kappa`.
//!
//! ```text
//! S(xi)  = (kappa + |xi|)^(p-2)     xi
//! V(xi)  = (kappa + |xi|)^((p-2)/2) xi
//! phi(t) = int_0^t (kappa + s)^(p-2) s ds
//! ```
//!
//! `S` is the gradient of `xi -> phi(|xi|)`, and the pair `(S, V)` satisfies
//! `(S(a) - S(b)) . (a - b) ~ |V(a) - V(b)|^2` with constants depending only on `p`.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Exponent and shift of the nonlinear flux.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxParams {
    p: f64,
    kappa: f64,
}

/// A spatial gradient in two dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Grad2 {
    pub x: f64,
    pub y: f64,
}

/// Dense symmetric 2x2 matrix stored row-major.
pub type Mat2 = [[f64; 2]; 2];

impl Grad2 {
    pub const ZERO: Grad2 = Grad2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Grad2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }
}

impl Add for Grad2 {
    type Output = Grad2;
    fn add(self, rhs: Grad2) -> Grad2 {
        Grad2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Grad2 {
    type Output = Grad2;
    fn sub(self, rhs: Grad2) -> Grad2 {
        Grad2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Neg for Grad2 {
    type Output = Grad2;
    fn neg(self) -> Grad2 {
        Grad2::new(-self.x, -self.y)
    }
}

impl Mul<Grad2> for f64 {
    type Output = Grad2;
    fn mul(self, rhs: Grad2) -> Grad2 {
        Grad2::new(self * rhs.x, self * rhs.y)
    }
}

impl FluxParams {
    pub fn new(p: f64, kappa: f64) -> Result<Self> {
        if !(p > 1.0) || !p.is_finite() || !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::InvalidFlux { p, kappa });
        }
        Ok(Self { p, kappa })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// `S(xi) = (kappa + |xi|)^(p-2) xi`, continuously extended by `S(0) = 0`.
    pub fn s(&self, xi: Grad2) -> Grad2 {
        let r = xi.norm();
        if r == 0.0 {
            return Grad2::ZERO;
        }
        (self.kappa + r).powf(self.p - 2.0) * xi
    }

    /// `V(xi) = (kappa + |xi|)^((p-2)/2) xi`, with `V(0) = 0`.
    pub fn v(&self, xi: Grad2) -> Grad2 {
        let r = xi.norm();
        if r == 0.0 {
            return Grad2::ZERO;
        }
        (self.kappa + r).powf(0.5 * (self.p - 2.0)) * xi
    }

    /// The potential `phi(t)` for `t >= 0`, so that `phi(|xi|)` has gradient `S(xi)`.
    pub fn phi(&self, t: f64) -> f64 {
        debug_assert!(t >= 0.0);
        let (p, k) = (self.p, self.kappa);
        if t == 0.0 {
            return 0.0;
        }
        if k == 0.0 {
            return t.powf(p) / p;
        }
        let s = t / k;
        if s < 1e-4 {
            // Closed form cancels catastrophically for t << kappa; use the Taylor series
            // phi(t) = kappa^p [ s^2/2 + (p-2) s^3/3 + (p-2)(p-3) s^4/8 + ... ].
            let c3 = (p - 2.0) / 3.0;
            let c4 = (p - 2.0) * (p - 3.0) / 8.0;
            return k.powf(p) * s * s * (0.5 + s * (c3 + s * c4));
        }
        ((k + t).powf(p - 1.0) * ((p - 1.0) * t - k) + k.powf(p)) / (p * (p - 1.0))
    }

    /// Jacobian of `S` at `xi`.
    pub fn ds(&self, xi: Grad2) -> Result<Mat2> {
        let (p, k) = (self.p, self.kappa);
        let r = xi.norm();
        if r == 0.0 {
            let diag = if k > 0.0 {
                k.powf(p - 2.0)
            } else if p > 2.0 {
                0.0
            } else if p == 2.0 {
                1.0
            } else {
                return Err(Error::SingularJacobian { p });
            };
            return Ok([[diag, 0.0], [0.0, diag]]);
        }
        let a = k + r;
        let iso = a.powf(p - 2.0);
        let rank1 = (p - 2.0) * a.powf(p - 3.0) / r;
        Ok([
            [iso + rank1 * xi.x * xi.x, rank1 * xi.x * xi.y],
            [rank1 * xi.y * xi.x, iso + rank1 * xi.y * xi.y],
        ])
    }
}
