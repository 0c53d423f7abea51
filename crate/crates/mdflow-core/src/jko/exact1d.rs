//! Exact one-dimensional step: minimizes
//! `(1/2τ) W₂²(μ, ν) + Σ ν_k (ε log(ν_k / h) + V_k) + ½ Σ W_kl ν_k ν_l`
//! over piecewise-constant `ν` on a contiguous block of cells, with the transport
//! term evaluated exactly between the piecewise-constant densities.
//!
//! The unknowns are the cumulative masses `Q_j` at interior faces. In these variables
//! the objective is smooth and its Hessian without the interaction part is
//! tridiagonal, so each Newton step is a tridiagonal solve.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::*;
use crate::{invalid, Error, Result};

/// Position along the cumulative-mass axis, stored both from the left and from the
/// right so that differences near either end keep full relative precision.
#[derive(Debug, Clone, Copy)]
struct Pos {
    l: f64,
    r: f64,
}

fn gap(a: Pos, b: Pos) -> f64 {
    if a.l > 0.5 && b.l > 0.5 {
        a.r - b.r
    } else {
        b.l - a.l
    }
}

fn knots(m: &[f64]) -> Vec<Pos> {
    let n = m.len();
    let mut out = vec![Pos { l: 0.0, r: 0.0 }; n + 1];
    let mut acc = 0.0;
    for i in 0..n {
        out[i].l = acc;
        acc += m[i];
    }
    out[n].l = acc;
    acc = 0.0;
    for i in (0..n).rev() {
        acc += m[i];
        out[i].r = acc;
    }
    out
}

/// Source density and target cell block.
pub(crate) struct Problem<'a> {
    /// Lower face of the first source cell.
    pub src_lo: f64,
    /// Source cell masses (zeros allowed).
    pub mu: &'a [f64],
    /// Lower face of the first target cell.
    pub tgt_lo: f64,
    pub h: f64,
    pub tau: f64,
    pub eps: f64,
    /// `V` at the target cell centers; its length fixes the number of target cells.
    pub v: &'a [f64],
    /// Row-major `n × n` interaction matrix `W(c_k - c_l)` on the target cells.
    pub w: Option<&'a [f64]>,
}

/// Transport integrals for one target segment `k` in the local coordinate `s ∈ [0,1]`,
/// with `r(s) = X_μ(Q_k + ν_k s) - (f_k + h s)`.
#[derive(Debug, Clone, Default)]
pub(crate) struct Walk {
    /// `∫₀¹ |X_μ - X_ν|² dq`
    pub cost: f64,
    /// `∫ r s ds`
    pub a: Vec<f64>,
    /// `∫ r (1 - s) ds`
    pub b: Vec<f64>,
    /// `∫ X' s² ds`, `∫ X' s(1-s) ds`, `∫ X' (1-s)² ds` with `X' = dX_μ/dq`.
    pub hss: Vec<f64>,
    pub hsu: Vec<f64>,
    pub huu: Vec<f64>,
}

struct Source {
    lo: f64,
    mu: Vec<f64>,
    knots: Vec<Pos>,
}

impl Source {
    fn new(lo: f64, h: f64, mu: &[f64]) -> Result<Self> {
        let first = mu
            .iter()
            .position(|&m| m > 0.0)
            .ok_or_else(|| invalid("source has no mass"))?;
        let last = mu.iter().rposition(|&m| m > 0.0).unwrap_or(first);
        let mu = mu[first..=last].to_vec();
        let knots = knots(&mu);
        Ok(Source {
            lo: lo + first as f64 * h,
            mu,
            knots,
        })
    }
}

fn int_s(sa: f64, sb: f64) -> f64 {
    (sb - sa) * (sa + sb) / 2.0
}

fn int_ss(sa: f64, sb: f64) -> f64 {
    (sb - sa) * (sa * sa + sa * sb + sb * sb) / 3.0
}

fn int_uu(sa: f64, sb: f64) -> f64 {
    let (ua, ub) = (1.0 - sa, 1.0 - sb);
    (sb - sa) * (ua * ua + ua * ub + ub * ub) / 3.0
}

/// `∫ (linear r)(linear φ)` over `[sa, sb]` from endpoint values.
fn int_lin(ds: f64, ra: f64, rb: f64, pa: f64, pb: f64) -> f64 {
    ds * (ra * pa / 3.0 + (ra * pb + rb * pa) / 6.0 + rb * pb / 3.0)
}

fn walk(src: &Source, tgt_lo: f64, h: f64, nu: &[f64], qk: &[Pos], full: bool) -> Walk {
    let n = nu.len();
    let m = src.mu.len();
    let pk = &src.knots;
    let mut out = Walk {
        a: vec![0.0; n],
        b: vec![0.0; n],
        hss: vec![0.0; n],
        hsu: vec![0.0; n],
        huu: vec![0.0; n],
        cost: 0.0,
    };
    let mut comp = 0.0;
    let (mut i, mut k) = (0usize, 0usize);
    let mut cur = pk[0];
    while i < m && k < n {
        let ln = gap(cur, qk[k + 1]);
        let lm = gap(cur, pk[i + 1]);
        let len = ln.min(lm);
        if len > 0.0 {
            let sa = (gap(qk[k], cur) / nu[k]).clamp(0.0, 1.0);
            let sb = (sa + len / nu[k]).min(1.0);
            let xa = src.lo + h * (i as f64 + (gap(pk[i], cur) / src.mu[i]).clamp(0.0, 1.0));
            let xb = xa + h * len / src.mu[i];
            let f0 = tgt_lo + h * k as f64;
            let ra = xa - (f0 + h * sa);
            let rb = xb - (f0 + h * sb);
            let term = len * (ra * ra + ra * rb + rb * rb) / 3.0;
            let y = term - comp;
            let t = out.cost + y;
            comp = (t - out.cost) - y;
            out.cost = t;
            if full {
                let ds = sb - sa;
                out.a[k] += int_lin(ds, ra, rb, sa, sb);
                out.b[k] += int_lin(ds, ra, rb, 1.0 - sa, 1.0 - sb);
                let xp = h / src.mu[i];
                let (iss, is) = (int_ss(sa, sb), int_s(sa, sb));
                out.hss[k] += xp * iss;
                out.hsu[k] += xp * (is - iss);
                out.huu[k] += xp * int_uu(sa, sb);
            }
        }
        let adv_n = ln <= lm;
        let adv_m = lm <= ln;
        if adv_n {
            k += 1;
            cur = qk[k];
        }
        if adv_m {
            i += 1;
            if !adv_n {
                cur = pk[i];
            }
            let mut jump = 0.0;
            while i < m && src.mu[i] == 0.0 {
                jump += h;
                i += 1;
            }
            if full && jump > 0.0 && k < n {
                let s = (gap(qk[k], cur) / nu[k]).clamp(0.0, 1.0);
                out.hss[k] += jump * s * s / nu[k];
                out.hsu[k] += jump * s * (1.0 - s) / nu[k];
                out.huu[k] += jump * (1.0 - s) * (1.0 - s) / nu[k];
            }
        }
    }
    out
}

/// Transport integrals of `ν` against `μ` (both as cell masses on grids of side `h`).
pub(crate) fn transport_walk(
    src_lo: f64,
    mu: &[f64],
    tgt_lo: f64,
    h: f64,
    nu: &[f64],
) -> Result<Walk> {
    let src = Source::new(src_lo, h, mu)?;
    if nu.iter().any(|&x| !(x > 0.0)) {
        return Err(invalid("target masses must be positive"));
    }
    Ok(walk(&src, tgt_lo, h, nu, &knots(nu), true))
}

/// Result of [`solve`].
#[derive(Debug, Clone)]
pub(crate) struct Solution {
    pub nu: Vec<f64>,
    pub iterations: usize,
    /// Newton decrement `-G·δQ` at exit.
    pub decrement: f64,
}

struct Evaluator<'a> {
    p: &'a Problem<'a>,
    src: Source,
}

impl Evaluator<'_> {
    fn objective(&self, nu: &[f64], qk: &[Pos]) -> (f64, f64) {
        let p = self.p;
        let w = walk(&self.src, p.tgt_lo, p.h, nu, qk, false);
        self.assemble(nu, w.cost)
    }

    /// Objective value and a magnitude scale for round-off allowances.
    fn assemble(&self, nu: &[f64], cost: f64) -> (f64, f64) {
        let p = self.p;
        let lnh = ln(p.h);
        let mut scale = cost / (2.0 * p.tau);
        let mut val = cost / (2.0 * p.tau);
        for (k, &x) in nu.iter().enumerate() {
            let e = x * (p.eps * (ln(x) - lnh) + p.v[k]);
            val += e;
            scale += abs(e);
        }
        if let Some(w) = p.w {
            let n = nu.len();
            let mut s = 0.0;
            for k in 0..n {
                s += nu[k] * ksum((0..n).map(|l| w[k * n + l] * nu[l]));
            }
            val += 0.5 * s;
            scale += 0.5 * abs(s);
        }
        (val, scale)
    }
}

/// Newton iteration on the interior cumulative masses from the positive start `nu0`.
pub(crate) fn solve(p: &Problem, nu0: &[f64], max_iter: usize, tol: f64) -> Result<Solution> {
    let n = p.v.len();
    if nu0.len() != n || n == 0 {
        return Err(invalid("initial guess must match the target cells"));
    }
    if !(p.tau > 0.0) || !(p.eps > 0.0) {
        return Err(invalid("tau and eps must be positive"));
    }
    let ev = Evaluator {
        p,
        src: Source::new(p.src_lo, p.h, p.mu)?,
    };
    let total = ksum(nu0.iter().copied());
    let mut nu: Vec<f64> = nu0.iter().map(|x| x / total).collect();
    if nu.iter().any(|&x| !(x > 0.0)) {
        return Err(invalid("initial guess must be strictly positive"));
    }
    let mut qk = knots(&nu);
    if n == 1 {
        return Ok(Solution {
            nu,
            iterations: 0,
            decrement: 0.0,
        });
    }
    let ht = p.h / p.tau;
    let mut decrement = f64::INFINITY;
    let mut iterations = 0;
    let mut stalled = 0;
    while iterations < max_iter {
        iterations += 1;
        let w = walk(&ev.src, p.tgt_lo, p.h, &nu, &qk, true);
        let (f, scale) = ev.assemble(&nu, w.cost);
        let field: Vec<f64> = match p.w {
            Some(wm) => (0..n)
                .map(|k| p.v[k] + ksum((0..n).map(|l| wm[k * n + l] * nu[l])))
                .collect(),
            None => p.v.to_vec(),
        };
        // interior knots j = 1..n-1 stored at j-1
        let m = n - 1;
        let mut g = vec![0.0; m];
        let mut d = vec![0.0; m];
        let mut e = vec![0.0; m.saturating_sub(1)];
        for j in 1..n {
            g[j - 1] = ht * (w.a[j - 1] + w.b[j]) + p.eps * ln(nu[j - 1] / nu[j]) + field[j - 1]
                - field[j];
            d[j - 1] = ht * (w.hss[j - 1] + w.huu[j]) + p.eps * (1.0 / nu[j - 1] + 1.0 / nu[j]);
            if j < m {
                e[j - 1] = ht * w.hsu[j] - p.eps / nu[j];
            }
        }
        let mut dq: Vec<f64> = g.iter().map(|x| -x).collect();
        if !tridiag_solve(&d, &e, &mut dq) {
            return Err(Error::NotConverged {
                iterations,
                residual: decrement,
            });
        }
        decrement = -ksum(g.iter().zip(&dq).map(|(a, b)| a * b));
        if !(decrement >= 0.0) {
            return Err(Error::NotConverged {
                iterations,
                residual: decrement,
            });
        }
        if decrement <= tol {
            return Ok(Solution {
                nu,
                iterations,
                decrement,
            });
        }
        let mut dnu = vec![0.0; n];
        for k in 0..n {
            let hi = if k < m { dq[k] } else { 0.0 };
            let lo = if k > 0 { dq[k - 1] } else { 0.0 };
            dnu[k] = hi - lo;
        }
        let mut alpha: f64 = 1.0;
        for k in 0..n {
            if dnu[k] < 0.0 {
                alpha = alpha.min(0.99 * nu[k] / -dnu[k]);
            }
        }
        let noise = 64.0 * f64::EPSILON * scale.max(1e-300);
        let mut accepted = false;
        while alpha > 1e-14 {
            let trial: Vec<f64> = nu.iter().zip(&dnu).map(|(x, dx)| x + alpha * dx).collect();
            if trial.iter().all(|&x| x > 0.0) {
                let tq = knots(&trial);
                let (ft, _) = ev.objective(&trial, &tq);
                if ft <= f - 1e-4 * alpha * decrement + noise {
                    nu = trial;
                    qk = tq;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            // No representable decrease left: the iterate is optimal to round-off.
            stalled += 1;
            if decrement <= 1e3 * noise || stalled > 2 {
                if decrement <= 1e3 * noise {
                    return Ok(Solution {
                        nu,
                        iterations,
                        decrement,
                    });
                }
                return Err(Error::NotConverged {
                    iterations,
                    residual: decrement,
                });
            }
        }
    }
    if decrement <= tol.max(1e-12) {
        return Ok(Solution {
            nu,
            iterations,
            decrement,
        });
    }
    Err(Error::NotConverged {
        iterations,
        residual: decrement,
    })
}

/// Objective value at a given `ν` (no optimization).
#[cfg(test)]
pub(crate) fn objective(p: &Problem, nu: &[f64]) -> Result<f64> {
    let ev = Evaluator {
        p,
        src: Source::new(p.src_lo, p.h, p.mu)?,
    };
    // zero cells carry no entropy; keep them out of the walk
    let pos: Vec<usize> = (0..nu.len()).filter(|&k| nu[k] > 0.0).collect();
    if pos.len() == nu.len() {
        return Ok(ev.objective(nu, &knots(nu)).0);
    }
    let q = crate::transport::Quantile1d::from_cells(p.tgt_lo, p.h, nu);
    let s = crate::transport::Quantile1d::from_cells(p.src_lo, p.h, p.mu);
    let mut val = crate::transport::Quantile1d::w2_squared(&s, &q) / (2.0 * p.tau);
    let lnh = ln(p.h);
    for &k in &pos {
        val += nu[k] * (p.eps * (ln(nu[k]) - lnh) + p.v[k]);
    }
    if let Some(w) = p.w {
        let n = nu.len();
        for k in 0..n {
            val += 0.5 * nu[k] * ksum((0..n).map(|l| w[k * n + l] * nu[l]));
        }
    }
    Ok(val)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::Quantile1d;

    fn brute_cost(src_lo: f64, mu: &[f64], tgt_lo: f64, h: f64, nu: &[f64]) -> f64 {
        Quantile1d::w2_squared(
            &Quantile1d::from_cells(src_lo, h, mu),
            &Quantile1d::from_cells(tgt_lo, h, nu),
        )
    }

    #[test]
    fn walk_cost_matches_quantile_formula() {
        let mu = [0.1, 0.0, 0.3, 0.2, 0.0, 0.0, 0.4];
        let nu = [0.25, 0.05, 0.3, 0.4];
        let w = transport_walk(-0.3, &mu, 0.1, 0.1, &nu).unwrap();
        assert!((w.cost - brute_cost(-0.3, &mu, 0.1, 0.1, &nu)).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mu = [0.1, 0.0, 0.3, 0.2, 0.0, 0.4];
        let h = 0.1;
        let nu = [0.22, 0.13, 0.27, 0.16, 0.22];
        let w = transport_walk(0.0, &mu, 0.05, h, &nu).unwrap();
        for j in 1..nu.len() {
            // move mass from cell j to cell j-1 (raises Q_j)
            let step = 1e-6;
            let mut up = nu;
            up[j - 1] += step;
            up[j] -= step;
            let mut dn = nu;
            dn[j - 1] -= step;
            dn[j] += step;
            let fd = (brute_cost(0.0, &mu, 0.05, h, &up) - brute_cost(0.0, &mu, 0.05, h, &dn))
                / (2.0 * step);
            let an = 2.0 * h * (w.a[j - 1] + w.b[j]);
            assert!((fd - an).abs() < 1e-7, "knot {j}: fd {fd} vs {an}");
        }
    }

    #[test]
    fn hessian_diagonal_matches_finite_differences() {
        let mu = [0.1, 0.0, 0.3, 0.2, 0.0, 0.4];
        let h = 0.1;
        let nu = [0.22, 0.13, 0.27, 0.16, 0.22];
        let grad = |nu: &[f64], j: usize| {
            let w = transport_walk(0.0, &mu, 0.05, h, nu).unwrap();
            2.0 * h * (w.a[j - 1] + w.b[j])
        };
        let w = transport_walk(0.0, &mu, 0.05, h, &nu).unwrap();
        for j in 1..nu.len() {
            let step = 1e-6;
            let mut up = nu;
            up[j - 1] += step;
            up[j] -= step;
            let mut dn = nu;
            dn[j - 1] -= step;
            dn[j] += step;
            let fd = (grad(&up, j) - grad(&dn, j)) / (2.0 * step);
            let an = 2.0 * h * (w.hss[j - 1] + w.huu[j]);
            assert!(
                (fd - an).abs() < 1e-5 * an.abs().max(1.0),
                "knot {j}: fd {fd} vs {an}"
            );
        }
    }

    #[test]
    fn solution_beats_perturbations() {
        let mu = [0.0, 0.2, 0.5, 0.3, 0.0, 0.0];
        let v: Vec<f64> = (0..6)
            .map(|k| {
                let x = 0.1 * k as f64 + 0.05;
                2.0 * (x - 0.4) * (x - 0.4)
            })
            .collect();
        let p = Problem {
            src_lo: 0.0,
            mu: &mu,
            tgt_lo: 0.0,
            h: 0.1,
            tau: 0.05,
            eps: 0.1,
            v: &v,
            w: None,
        };
        let sol = solve(&p, &[1.0 / 6.0; 6], 200, 1e-24).unwrap();
        let base = objective(&p, &sol.nu).unwrap();
        for k in 0..5 {
            let mut t = sol.nu.clone();
            t[k] += 1e-4;
            t[k + 1] -= 1e-4;
            assert!(objective(&p, &t).unwrap() >= base - 1e-14);
        }
    }
}
