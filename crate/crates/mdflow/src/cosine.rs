//! Particle chains on the boundary of `{y >= cos(2πx)}` under `V = xy`.
//!
//! On the boundary a particle at abscissa `x` moves with `ẋ = ϑ(x) / (1 + (2π sin 2πx)²)`
//! where `ϑ(x) = 2πx sin(2πx) - cos(2πx)`, so equilibria solve `2πx = cot(2πx)`.

use std::f64::consts::PI;

use mdflow_core::geometry::{project_velocity, CosineEpigraph};
use mdflow_core::linalg::norm;
use mdflow_core::particles::{
    chain_ensemble, default_dt, simulate, step, MassLaw, ParticleEnsemble, SimOptions, SpeedMetric,
};
use mdflow_core::potentials::{Potential, PotentialPair};
use mdflow_core::transport::{certify, wasserstein_with, LpOptions};
use rayon::prelude::*;

use crate::Result;

pub fn theta(x: f64) -> f64 {
    let a = 2.0 * PI * x;
    a * a.sin() - a.cos()
}

pub fn theta_prime(x: f64) -> f64 {
    let a = 2.0 * PI * x;
    4.0 * PI * a.sin() + 4.0 * PI * PI * x * a.cos()
}

/// Safeguarded Newton on a sign-changing bracket.
fn root(mut lo: f64, mut hi: f64) -> Result<f64> {
    let (flo, fhi) = (theta(lo), theta(hi));
    if flo.signum() == fhi.signum() {
        return Err(mdflow_core::Error::RootNotBracketed { lo, hi }.into());
    }
    let rising = flo < 0.0;
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = theta(x);
        if f == 0.0 {
            return Ok(x);
        }
        if (f < 0.0) == rising {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - f / theta_prime(x);
        x = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 4.0 * f64::EPSILON * x.abs() {
            break;
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibria {
    pub n: usize,
    /// Root in `(N - 1/2, N - 1/4)`, where `ϑ` decreases.
    pub stable: f64,
    /// Root in `(N, N + 1/4)`, where `ϑ` increases.
    pub unstable: f64,
    pub stable_slope: f64,
    pub unstable_slope: f64,
}

pub fn cosine_equilibria(n_lo: usize, n_hi: usize) -> Result<Vec<Equilibria>> {
    if n_lo < 2 || n_hi < n_lo {
        return Err(mdflow_core::Error::InvalidInput(format!(
            "equilibrium range [{n_lo}, {n_hi}] must satisfy 2 <= lo <= hi"
        ))
        .into());
    }
    (n_lo..=n_hi)
        .map(|n| {
            let nf = n as f64;
            let stable = root(nf - 0.5, nf - 0.25)?;
            let unstable = root(nf, nf + 0.25)?;
            Ok(Equilibria {
                n,
                stable,
                unstable,
                stable_slope: theta_prime(stable),
                unstable_slope: theta_prime(unstable),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstabilityOptions {
    /// Chain length is `max(extra, n + extra)`.
    pub extra_atoms: usize,
    pub mass_bits: u32,
    /// Long-time runs stop once every projected speed is below this.
    pub settle_speed: f64,
    pub settle_time: f64,
}

impl Default for InstabilityOptions {
    fn default() -> Self {
        InstabilityOptions {
            extra_atoms: 28,
            mass_bits: 120,
            settle_speed: 1e-8,
            settle_time: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstabilityRow {
    pub n: usize,
    pub j_max: usize,
    pub dt: f64,
    pub d0: f64,
    pub d_t0: f64,
    pub ratio: f64,
    pub certified: bool,
    pub escaped: usize,
    /// Largest `|x_j(∞) - (j+1)¹_*|` over the perturbed atoms.
    pub limit_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstabilityReport {
    pub alpha: f64,
    pub t0: f64,
    pub rows: Vec<InstabilityRow>,
    /// Slope of `ln r_n` against `ln n`.
    pub ratio_exponent: f64,
    /// Slope of `ln d(t0)` against `ln d(0)` across the perturbations.
    pub stability_exponent: f64,
    pub monotone: bool,
    /// `r_last / r_first`.
    pub growth: f64,
}

pub fn chain_length(n: usize, extra: usize) -> usize {
    extra.max(n + extra)
}

fn saddle() -> PotentialPair {
    PotentialPair::confinement(Potential::Saddle)
}

fn max_projected_speed(
    ens: &ParticleEnsemble,
    pot: &PotentialPair,
    dom: &CosineEpigraph,
) -> Result<f64> {
    let mut m: f64 = 0.0;
    for x in &ens.positions {
        let w = mdflow_core::particles::interaction_velocity(ens, pot, x);
        m = m.max(norm(&project_velocity(&w, x, ens.time, dom)?));
    }
    Ok(m)
}

/// Integrates until the projected speeds fall below `speed` or `t_max` elapses.
pub fn settle(
    ens: &ParticleEnsemble,
    dom: &CosineEpigraph,
    speed: f64,
    t_max: f64,
) -> Result<(ParticleEnsemble, f64)> {
    let pot = saddle();
    let mut cur = ens.clone();
    let t_stop = ens.time + t_max;
    loop {
        let v = max_projected_speed(&cur, &pot, dom)?;
        if v < speed || cur.time >= t_stop {
            return Ok((cur, v));
        }
        let dt = default_dt(&cur, &pot, dom);
        for _ in 0..200 {
            cur = step(&cur, &pot, dom, dt)?;
        }
    }
}

/// Least-squares slope of `y` against `x`.
pub(crate) fn slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

fn instability_row(
    alpha: f64,
    law: MassLaw,
    n: usize,
    t0: f64,
    opts: &InstabilityOptions,
    eq: &[Equilibria],
) -> Result<InstabilityRow> {
    let dom = CosineEpigraph::default();
    let pot = saddle();
    let j_max = chain_length(n, opts.extra_atoms);
    let base = chain_ensemble(law, j_max, None)?;
    let pert = chain_ensemble(law, j_max, Some((n, alpha)))?;
    let dt = default_dt(&base, &pot, &dom).min(default_dt(&pert, &pot, &dom));
    let sim = SimOptions {
        record_every: usize::MAX,
        metric: SpeedMetric::Pairing,
        keep_snapshots: false,
    };
    let (a, _) = simulate(&base, &pot, &dom, t0, dt, &sim)?;
    let (b, _) = simulate(&pert, &pot, &dom, t0, dt, &sim)?;
    let lp = LpOptions {
        mass_bits: Some(opts.mass_bits),
        ..LpOptions::default()
    };
    let (m0, n0) = (base.to_measure(), pert.to_measure());
    let (d0, plan0) = wasserstein_with(&m0, &n0, &lp)?;
    let (ma, mb) = (a.to_measure(), b.to_measure());
    let (d1, plan1) = wasserstein_with(&ma, &mb, &lp)?;
    let certified =
        certify(&m0, &n0, &plan0, 1e-9).passed && certify(&ma, &mb, &plan1, 1e-9).passed;

    // perturbed atoms j >= n, settled on their own (W = 0 decouples particles)
    let esc_idx: Vec<usize> = (n..=j_max).map(|j| j - 1).collect();
    let esc = ParticleEnsemble::new(
        2,
        esc_idx.iter().map(|&i| pert.positions[i]).collect(),
        vec![1.0 / esc_idx.len() as f64; esc_idx.len()],
        0.0,
    )?;
    let (fin, _) = settle(&esc, &dom, opts.settle_speed, opts.settle_time)?;
    let mut limit_error: f64 = 0.0;
    for (k, &i) in esc_idx.iter().enumerate() {
        let j = i + 1;
        let target = eq
            .iter()
            .find(|e| e.n == j + 1)
            .map(|e| e.stable)
            .unwrap_or(f64::NAN);
        limit_error = limit_error.max((fin.positions[k][0] - target).abs());
    }
    Ok(InstabilityRow {
        n,
        j_max,
        dt,
        d0,
        d_t0: d1,
        ratio: d1 / d0,
        certified,
        escaped: esc_idx.len(),
        limit_error,
    })
}

pub fn instability_experiment(
    alpha: f64,
    law: MassLaw,
    n_list: &[usize],
    t0: f64,
    opts: &InstabilityOptions,
) -> Result<InstabilityReport> {
    if !(alpha > 0.0 && alpha < 1.0) || !(t0 > 0.0) || n_list.is_empty() {
        return Err(mdflow_core::Error::InvalidInput(
            "need 0 < alpha < 1, t0 > 0 and at least one n".into(),
        )
        .into());
    }
    let n_max = n_list.iter().copied().max().unwrap_or(2);
    let eq = cosine_equilibria(2, chain_length(n_max, opts.extra_atoms) + 1)?;
    let rows = n_list
        .par_iter()
        .map(|&n| instability_row(alpha, law, n, t0, opts, &eq))
        .collect::<Result<Vec<_>>>()?;
    let ratio_exponent = slope(
        &rows
            .iter()
            .map(|r| ((r.n as f64).ln(), r.ratio.ln()))
            .collect::<Vec<_>>(),
    );
    let stability_exponent = slope(
        &rows
            .iter()
            .map(|r| (r.d0.ln(), r.d_t0.ln()))
            .collect::<Vec<_>>(),
    );
    let monotone = rows.windows(2).all(|w| w[1].ratio > w[0].ratio);
    let growth = rows.last().map_or(f64::NAN, |l| l.ratio / rows[0].ratio);
    Ok(InstabilityReport {
        alpha,
        t0,
        rows,
        ratio_exponent,
        stability_exponent,
        monotone,
        growth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theta_at_integers_is_minus_one() {
        for n in 1..10 {
            assert!((theta(n as f64) + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stability_classified_by_slope() {
        for e in cosine_equilibria(2, 12).unwrap() {
            assert!(e.stable_slope < 0.0 && e.unstable_slope > 0.0);
            assert!(theta(e.stable).abs() < 1e-9 && theta(e.unstable).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_small_n() {
        assert!(cosine_equilibria(1, 3).is_err());
    }
}
