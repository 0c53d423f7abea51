//! Entropic step: scaling iterations in log domain for
//! `min_γ ⟨C/2τ, γ⟩ + σ Σ γ (log γ - 1) + φ(γᵀ1)` subject to `γ1 = μ`,
//! with the second marginal updated by the closed-form KL proximal map of `φ`.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::*;
use crate::{invalid, Error, Result};

pub(crate) struct Problem<'a> {
    pub src_pts: &'a [Vecd],
    pub src_mass: &'a [f64],
    pub tgt_pts: &'a [Vecd],
    /// Cell volume `h^d`.
    pub vol: f64,
    pub tau: f64,
    pub eps: f64,
    /// `V` at the target points.
    pub v: &'a [f64],
    /// Row-major interaction matrix on the target points.
    pub w: Option<&'a [f64]>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Settings {
    /// Final smoothing `σ`, in energy units.
    pub eta: f64,
    /// Number of annealing stages; each divides `σ` by 4.
    pub stages: usize,
    pub max_iter: usize,
    /// Stop when the first-marginal L¹ error drops below this.
    pub tol: f64,
}

pub(crate) struct Solution {
    pub nu: Vec<f64>,
    pub iterations: usize,
    pub marginal_error: f64,
}

fn lse(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ln(xs.map(|x| exp(x - m)).sum::<f64>())
}

pub(crate) fn solve(p: &Problem, s: &Settings) -> Result<Solution> {
    let (ns, nt) = (p.src_pts.len(), p.tgt_pts.len());
    if ns == 0 || nt == 0 || p.src_mass.len() != ns || p.v.len() != nt {
        return Err(invalid("entropic step needs matching, nonempty inputs"));
    }
    if !(s.eta > 0.0) {
        return Err(invalid("entropic smoothing must be positive"));
    }
    let cost: Vec<f64> = (0..ns * nt)
        .map(|idx| dist2(&p.src_pts[idx / nt], &p.tgt_pts[idx % nt]) / (2.0 * p.tau))
        .collect();
    let log_a: Vec<f64> = p
        .src_mass
        .iter()
        .map(|&m| if m > 0.0 { ln(m) } else { f64::NEG_INFINITY })
        .collect();
    let mut f = vec![0.0; ns];
    let mut g = vec![0.0; nt];
    let mut nu = vec![1.0 / nt as f64; nt];
    let shift = p.eps * (1.0 - ln(p.vol));
    let mut total_iter = 0;
    let mut err = f64::INFINITY;
    let stages = s.stages.max(1);
    for stage in 0..stages {
        let sigma = s.eta * powf(4.0, (stages - 1 - stage) as f64);
        err = f64::INFINITY;
        let mut it = 0;
        while it < s.max_iter {
            it += 1;
            // first marginal: exact after this update; err measures how far off it was
            err = 0.0;
            for k in 0..ns {
                if log_a[k] == f64::NEG_INFINITY {
                    f[k] = f64::NEG_INFINITY;
                    continue;
                }
                let row = &cost[k * nt..(k + 1) * nt];
                let l = lse((0..nt).map(|j| (g[j] - row[j]) / sigma));
                let fk = f[k];
                err += abs(exp((fk / sigma) + l) - p.src_mass[k]);
                f[k] = sigma * (log_a[k] - l);
            }
            let field: Vec<f64> = match p.w {
                Some(w) => (0..nt)
                    .map(|j| p.v[j] + ksum((0..nt).map(|m| w[j * nt + m] * nu[m])))
                    .collect(),
                None => p.v.to_vec(),
            };
            for j in 0..nt {
                let ls = lse((0..ns)
                    .filter(|&k| f[k] > f64::NEG_INFINITY)
                    .map(|k| (f[k] - cost[k * nt + j]) / sigma));
                let lnu = (sigma * ls - shift - field[j]) / (sigma + p.eps);
                g[j] = sigma * (lnu - ls);
                nu[j] = exp(lnu);
            }
            if it > 1 && err < s.tol {
                break;
            }
        }
        total_iter += it;
        if !(err.is_finite()) {
            return Err(Error::NotConverged {
                iterations: total_iter,
                residual: err,
            });
        }
    }
    if err > s.tol {
        return Err(Error::NotConverged {
            iterations: total_iter,
            residual: err,
        });
    }
    let total = ksum(nu.iter().copied());
    for x in nu.iter_mut() {
        *x /= total;
    }
    Ok(Solution {
        nu,
        iterations: total_iter,
        marginal_error: err,
    })
}
