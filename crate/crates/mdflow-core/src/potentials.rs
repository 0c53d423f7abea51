//! Confinement and interaction potentials with their structural constants.

use core::f64::consts::E;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::*;
use crate::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Potential {
    Zero,
    /// `a |x - center|²`
    Quadratic {
        a: f64,
        center: Vecd,
    },
    /// `x y` in the plane.
    Saddle,
    /// `-c exp(-|x|²)`
    Gaussian {
        c: f64,
    },
}

impl Potential {
    pub fn quadratic(a: f64) -> Self {
        Potential::Quadratic { a, center: ZERO }
    }

    pub fn value(&self, x: &Vecd) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::Quadratic { a, center } => a * dist2(x, center),
            Potential::Saddle => x[0] * x[1],
            Potential::Gaussian { c } => -c * exp(-norm2(x)),
        }
    }

    pub fn gradient(&self, x: &Vecd) -> Vecd {
        match self {
            Potential::Zero => ZERO,
            Potential::Quadratic { a, center } => scale(&sub(x, center), 2.0 * a),
            Potential::Saddle => [x[1], x[0], 0.0],
            Potential::Gaussian { c } => scale(x, 2.0 * c * exp(-norm2(x))),
        }
    }

    /// Convexity modulus: `⟨∇f(x) - ∇f(y), x - y⟩ >= λ |x - y|²`.
    pub fn lambda(&self) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::Quadratic { a, .. } => 2.0 * a,
            Potential::Saddle => -1.0,
            // radial Hessian eigenvalue 2c e^{-s}(1 - 2s) is smallest at s = |x|² = 3/2
            Potential::Gaussian { c } => -4.0 * c * exp(-1.5),
        }
    }

    /// `C` with `|∇f(x)| <= C (1 + |x|)`.
    pub fn growth_constant(&self) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::Quadratic { a, center } => 2.0 * a.abs() * norm(center).max(1.0),
            Potential::Saddle => 1.0,
            // max_r 2c r e^{-r²} = c sqrt(2/e)
            Potential::Gaussian { c } => c.abs() * sqrt(2.0 / E),
        }
    }

    /// Bound on the spectral norm of the Hessian.
    pub fn hessian_bound(&self) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::Quadratic { a, .. } => 2.0 * a.abs(),
            Potential::Saddle => 1.0,
            Potential::Gaussian { c } => 2.0 * c.abs(),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        match self {
            Potential::Quadratic { center, .. } => norm(center) == 0.0,
            _ => true,
        }
    }

    pub fn lower_bound(&self) -> Option<f64> {
        match self {
            Potential::Zero => Some(0.0),
            Potential::Quadratic { a, .. } if *a >= 0.0 => Some(0.0),
            Potential::Quadratic { .. } | Potential::Saddle => None,
            Potential::Gaussian { c } => Some(-c.abs()),
        }
    }
}

/// Confinement `V` and symmetric interaction `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialPair {
    pub v: Potential,
    pub w: Potential,
}

impl PotentialPair {
    pub fn new(v: Potential, w: Potential) -> Result<Self> {
        if !w.is_symmetric() {
            return Err(invalid("interaction potential must satisfy W(x) = W(-x)"));
        }
        Ok(PotentialPair { v, w })
    }

    pub fn confinement(v: Potential) -> Self {
        PotentialPair {
            v,
            w: Potential::Zero,
        }
    }

    pub fn lambda_v(&self) -> f64 {
        self.v.lambda()
    }
    pub fn lambda_w(&self) -> f64 {
        self.w.lambda()
    }
    pub fn lambda(&self) -> f64 {
        self.lambda_v().min(self.lambda_w())
    }
    pub fn growth_v(&self) -> f64 {
        self.v.growth_constant()
    }
    pub fn growth_w(&self) -> f64 {
        self.w.growth_constant()
    }
    pub fn growth_constant(&self) -> f64 {
        self.growth_v().max(self.growth_w())
    }
    pub fn w_symmetric(&self) -> bool {
        self.w.is_symmetric()
    }
    pub fn has_interaction(&self) -> bool {
        self.w != Potential::Zero
    }
}

/// Sampled structural checks for one potential.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialAudit {
    /// min over pairs of `(⟨∇f(x)-∇f(y), x-y⟩ - λ|x-y|²) / |x-y|²`; nonnegative when λ is valid.
    pub convexity_margin: f64,
    /// max over samples of `|∇f(x)| / (1+|x|)`.
    pub growth_ratio: f64,
    /// max over samples of `|∇f(x) + ∇f(-x)|`.
    pub symmetry_defect: f64,
}

/// Draws `samples` pairs uniformly from the cube `[-radius, radius]^dim`.
pub fn audit_potential(
    f: &Potential,
    dim: usize,
    samples: usize,
    radius: f64,
    seed: u64,
) -> PotentialAudit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lam = f.lambda();
    let mut margin = f64::INFINITY;
    let mut growth: f64 = 0.0;
    let mut sym: f64 = 0.0;
    let draw = |rng: &mut ChaCha8Rng| {
        let mut x = ZERO;
        for xi in x.iter_mut().take(dim) {
            *xi = radius * (2.0 * rng.random::<f64>() - 1.0);
        }
        x
    };
    for _ in 0..samples {
        let x = draw(&mut rng);
        let y = draw(&mut rng);
        let d = sub(&x, &y);
        let l2 = norm2(&d);
        if l2 > 0.0 {
            let gx = f.gradient(&x);
            let gy = f.gradient(&y);
            margin = margin.min((dot(&sub(&gx, &gy), &d) - lam * l2) / l2);
        }
        let gx = f.gradient(&x);
        growth = growth.max(norm(&gx) / (1.0 + norm(&x)));
        sym = sym.max(norm(&add(&gx, &f.gradient(&scale(&x, -1.0)))));
    }
    PotentialAudit {
        convexity_margin: margin,
        growth_ratio: growth,
        symmetry_defect: sym,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hand_gradients() {
        assert_eq!(
            Potential::Saddle.gradient(&[2.0, 3.0, 0.0]),
            [3.0, 2.0, 0.0]
        );
        assert_eq!(
            Potential::quadratic(1.0).gradient(&[1.0, -1.0, 0.0]),
            [2.0, -2.0, 0.0]
        );
    }

    #[test]
    fn gaussian_gradient_matches_central_differences() {
        let w = Potential::Gaussian { c: 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let x = [
                2.0 * rng.random::<f64>() - 1.0,
                2.0 * rng.random::<f64>() - 1.0,
                0.0,
            ];
            let g = w.gradient(&x);
            for i in 0..2 {
                let h = 1e-5;
                let mut a = x;
                let mut b = x;
                a[i] += h;
                b[i] -= h;
                let fd = (w.value(&a) - w.value(&b)) / (2.0 * h);
                assert_relative_eq!(g[i], fd, max_relative = 1e-6, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn declared_constants_pass_sampling() {
        let cat = [
            Potential::Zero,
            Potential::quadratic(0.7),
            Potential::Quadratic {
                a: 0.5,
                center: [1.5, -0.5, 0.0],
            },
            Potential::Saddle,
            Potential::Gaussian { c: 0.8 },
        ];
        for f in &cat {
            let a = audit_potential(f, 2, 10_000, 3.0, 5);
            assert!(a.convexity_margin >= -1e-9, "{f:?} {a:?}");
            assert!(a.growth_ratio <= f.growth_constant() + 1e-12, "{f:?} {a:?}");
        }
    }

    #[test]
    fn asymmetric_interaction_rejected() {
        let w = Potential::Quadratic {
            a: 1.0,
            center: [1.0, 0.0, 0.0],
        };
        assert!(PotentialPair::new(Potential::Zero, w).is_err());
    }
}
