//! Plane linear elasticity with a spectral tension/compression split.

use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialParams {
    /// Shear modulus μ in N/mm².
    pub mu: f64,
    /// Lamé λ in N/mm².
    pub lambda: f64,
    /// Critical energy release rate in N/mm.
    pub g_c: f64,
    pub kappa: f64,
    /// Regularization length in mm.
    pub epsilon: f64,
}

impl MaterialParams {
    pub fn validate(&self) -> Result<(), String> {
        let ok = self.mu > 0.0
            && self.lambda > 0.0
            && self.g_c > 0.0
            && self.kappa > 0.0
            && self.kappa < 1.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(format!("invalid material parameters {self:?}"))
        }
    }
}

/// Symmetric 2×2 tensor stored as `(xx, yy, xy)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Sym2 {
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
}

impl Sym2 {
    pub const ZERO: Sym2 = Sym2 {
        xx: 0.0,
        yy: 0.0,
        xy: 0.0,
    };
    pub const IDENTITY: Sym2 = Sym2 {
        xx: 1.0,
        yy: 1.0,
        xy: 0.0,
    };

    pub fn new(xx: f64, yy: f64, xy: f64) -> Self {
        Sym2 { xx, yy, xy }
    }

    /// Symmetric part of a displacement gradient `g[i][j] = ∂u_i/∂x_j`.
    pub fn from_grad(g: [[f64; 2]; 2]) -> Self {
        Sym2 {
            xx: g[0][0],
            yy: g[1][1],
            xy: 0.5 * (g[0][1] + g[1][0]),
        }
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn ddot(&self, o: &Sym2) -> f64 {
        self.xx * o.xx + self.yy * o.yy + 2.0 * self.xy * o.xy
    }

    pub fn norm(&self) -> f64 {
        self.ddot(self).sqrt()
    }

    /// `self · v`.
    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.xx * v[0] + self.xy * v[1],
            self.xy * v[0] + self.yy * v[1],
        ]
    }

    /// Symmetric part of `A·B·C` for symmetric `A`, `B`, `C`.
    fn sandwich(a: &Sym2, b: &Sym2, c: &Sym2) -> Sym2 {
        let m = |s: &Sym2| [[s.xx, s.xy], [s.xy, s.yy]];
        let (a, b, c) = (m(a), m(b), m(c));
        let mut ab = [[0.0; 2]; 2];
        let mut abc = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                ab[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                abc[i][j] = ab[i][0] * c[0][j] + ab[i][1] * c[1][j];
            }
        }
        Sym2 {
            xx: abc[0][0],
            yy: abc[1][1],
            xy: 0.5 * (abc[0][1] + abc[1][0]),
        }
    }
}

impl Add for Sym2 {
    type Output = Sym2;
    fn add(self, o: Sym2) -> Sym2 {
        Sym2 {
            xx: self.xx + o.xx,
            yy: self.yy + o.yy,
            xy: self.xy + o.xy,
        }
    }
}

impl Sub for Sym2 {
    type Output = Sym2;
    fn sub(self, o: Sym2) -> Sym2 {
        Sym2 {
            xx: self.xx - o.xx,
            yy: self.yy - o.yy,
            xy: self.xy - o.xy,
        }
    }
}

impl Neg for Sym2 {
    type Output = Sym2;
    fn neg(self) -> Sym2 {
        Sym2 {
            xx: -self.xx,
            yy: -self.yy,
            xy: -self.xy,
        }
    }
}

impl Mul<Sym2> for f64 {
    type Output = Sym2;
    fn mul(self, s: Sym2) -> Sym2 {
        Sym2 {
            xx: self * s.xx,
            yy: self * s.yy,
            xy: self * s.xy,
        }
    }
}

/// Heaviside with `H(0) = 0`.
fn heaviside(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// `g(φ) = (1-κ)φ² + κ` and its derivative.
pub fn degradation(phi: f64, kappa: f64) -> (f64, f64) {
    ((1.0 - kappa) * phi * phi + kappa, 2.0 * (1.0 - kappa) * phi)
}

struct Eigen {
    values: [f64; 2],
    /// Spectral projectors; `None` when the eigenvalues coincide.
    projectors: Option<[Sym2; 2]>,
}

fn eigen(e: &Sym2) -> Eigen {
    let m = 0.5 * e.trace();
    let d = 0.5 * (e.xx - e.yy);
    let r = d.hypot(e.xy);
    let values = [m + r, m - r];
    if 2.0 * r < 1e-12 * e.norm() || r == 0.0 {
        return Eigen {
            values,
            projectors: None,
        };
    }
    let p1 = (1.0 / (2.0 * r)) * (*e - values[1] * Sym2::IDENTITY);
    let p2 = Sym2::IDENTITY - p1;
    Eigen {
        values,
        projectors: Some([p1, p2]),
    }
}

/// `(E⁺, E⁻)` from the positive and negative parts of the eigenvalues.
pub fn spectral_split(e: &Sym2) -> (Sym2, Sym2) {
    let eig = eigen(e);
    let plus = match eig.projectors {
        Some([p1, p2]) => eig.values[0].max(0.0) * p1 + eig.values[1].max(0.0) * p2,
        None => 0.5 * e.trace().max(0.0) * Sym2::IDENTITY,
    };
    (plus, *e - plus)
}

pub fn stress_plus(e: &Sym2, mu: f64, lambda: f64) -> Sym2 {
    let (ep, _) = spectral_split(e);
    2.0 * mu * ep + lambda * e.trace().max(0.0) * Sym2::IDENTITY
}

pub fn stress_minus(e: &Sym2, mu: f64, lambda: f64) -> Sym2 {
    let (_, em) = spectral_split(e);
    let tr = e.trace();
    2.0 * mu * em + lambda * (tr - tr.max(0.0)) * Sym2::IDENTITY
}

pub fn stress(e: &Sym2, mu: f64, lambda: f64) -> Sym2 {
    2.0 * mu * *e + lambda * e.trace() * Sym2::IDENTITY
}

/// Directional derivative of `E ↦ E⁺` along `de`.
fn dstrain_plus(e: &Sym2, de: &Sym2) -> Sym2 {
    let eig = eigen(e);
    match eig.projectors {
        Some([p1, p2]) => {
            let [l1, l2] = eig.values;
            let ratio = (l1.max(0.0) - l2.max(0.0)) / (l1 - l2);
            let cross = Sym2::sandwich(&p1, de, &p2) + Sym2::sandwich(&p2, de, &p1);
            heaviside(l1) * Sym2::sandwich(&p1, de, &p1)
                + heaviside(l2) * Sym2::sandwich(&p2, de, &p2)
                + ratio * cross
        }
        None => heaviside(0.5 * e.trace()) * *de,
    }
}

/// Directional derivatives `(dσ⁺, dσ⁻)` at `e` along `de`.
pub fn dstress_split(e: &Sym2, de: &Sym2, mu: f64, lambda: f64) -> (Sym2, Sym2) {
    let dep = dstrain_plus(e, de);
    let h = heaviside(e.trace());
    let dtr = de.trace();
    let plus = 2.0 * mu * dep + lambda * h * dtr * Sym2::IDENTITY;
    let minus = 2.0 * mu * (*de - dep) + lambda * (1.0 - h) * dtr * Sym2::IDENTITY;
    (plus, minus)
}

/// Bulk and crack energy densities at a point.
pub fn energy_densities(phi: f64, e: &Sym2, grad_phi: [f64; 2], p: &MaterialParams) -> (f64, f64) {
    let (g, _) = degradation(phi, p.kappa);
    let tr = e.trace();
    let bulk = g * p.mu * e.ddot(e) + 0.5 * p.lambda * tr * tr;
    let grad2 = grad_phi[0] * grad_phi[0] + grad_phi[1] * grad_phi[1];
    let crack = 0.5 * p.g_c * ((phi - 1.0).powi(2) / p.epsilon + p.epsilon * grad2);
    (bulk, crack)
}
