//! Projected interacting-particle scheme (catching-up discretization) and its audits.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{project_point, project_velocity, MovingDomain};
use crate::linalg::*;
use crate::potentials::{Potential, PotentialPair};
use crate::transport::{wasserstein_1d, wasserstein_with, DiscreteMeasure, LpOptions};
use crate::{invalid, Error, Result};

/// Weighted particles at a common time.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub dim: usize,
    pub positions: Vec<Vecd>,
    pub masses: Vec<f64>,
    pub time: f64,
}

impl ParticleEnsemble {
    pub fn new(dim: usize, positions: Vec<Vecd>, masses: Vec<f64>, time: f64) -> Result<Self> {
        if positions.is_empty() || positions.len() != masses.len() {
            return Err(invalid(
                "ensemble needs at least one particle and one mass per particle",
            ));
        }
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::Dimension {
                expected: MAX_DIM,
                got: dim,
            });
        }
        if masses.iter().any(|m| !(*m >= 0.0)) {
            return Err(invalid("masses must be nonnegative"));
        }
        if abs(ksum(masses.iter().copied()) - 1.0) > 1e-12 {
            return Err(invalid("masses must sum to one"));
        }
        Ok(ParticleEnsemble {
            dim,
            positions,
            masses,
            time,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn to_measure(&self) -> DiscreteMeasure {
        DiscreteMeasure {
            dim: self.dim,
            points: self.positions.clone(),
            weights: self.masses.clone(),
        }
    }

    pub fn second_moment(&self) -> f64 {
        ksum(
            self.positions
                .iter()
                .zip(&self.masses)
                .map(|(p, m)| m * norm2(p)),
        )
    }

    /// Largest signed distance over the particles (at most the boundary band when contained).
    pub fn max_signed_distance<D: MovingDomain + ?Sized>(&self, dom: &D) -> f64 {
        self.positions
            .iter()
            .map(|p| dom.signed_distance(p, self.time))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn check_support<D: MovingDomain + ?Sized>(&self, dom: &D) -> Result<()> {
        let band = dom.boundary_band(self.time);
        for p in &self.positions {
            let sd = dom.signed_distance(p, self.time);
            if sd > band {
                return Err(Error::DomainViolation { distance: sd, band });
            }
        }
        Ok(())
    }
}

/// `∫_{|x|>R} |x|² dμ`.
pub fn tail_mass(ens: &ParticleEnsemble, r: f64) -> f64 {
    ksum(
        ens.positions
            .iter()
            .zip(&ens.masses)
            .filter(|(p, _)| norm(p) > r)
            .map(|(p, m)| m * norm2(p)),
    )
}

/// `w(x) = -∇V(x) - Σ_j m_j ∇W(x - x_j)`.
pub fn interaction_velocity(ens: &ParticleEnsemble, pot: &PotentialPair, x: &Vecd) -> Vecd {
    let mut w = scale(&pot.v.gradient(x), -1.0);
    if pot.w != Potential::Zero {
        for (p, m) in ens.positions.iter().zip(&ens.masses) {
            let d = sub(x, p);
            if norm2(&d) > 0.0 {
                w = axpy(&w, -m, &pot.w.gradient(&d));
            }
        }
    }
    w
}

pub fn velocities(ens: &ParticleEnsemble, pot: &PotentialPair) -> Vec<Vecd> {
    ens.positions
        .iter()
        .map(|x| interaction_velocity(ens, pot, x))
        .collect()
}

/// `Σ m_i V(x_i) + ½ Σ_i Σ_j m_i m_j W(x_i - x_j)`, diagonal included.
pub fn energy_phi(ens: &ParticleEnsemble, pot: &PotentialPair) -> f64 {
    let v = ksum(
        ens.positions
            .iter()
            .zip(&ens.masses)
            .map(|(p, m)| m * pot.v.value(p)),
    );
    if pot.w == Potential::Zero {
        return v;
    }
    let mut terms = Vec::with_capacity(ens.len() * ens.len());
    for (pi, mi) in ens.positions.iter().zip(&ens.masses) {
        for (pj, mj) in ens.positions.iter().zip(&ens.masses) {
            terms.push(mi * mj * pot.w.value(&sub(pi, pj)));
        }
    }
    v + 0.5 * ksum(terms)
}

/// Per-step audit quantities at the pre-step state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepAudit {
    /// `Σ m |P w|²`
    pub projected_power: f64,
    /// `Σ m (w - P w)·P w`
    pub boundary_work: f64,
    /// `max |w|`
    pub max_speed: f64,
}

/// One catching-up step: projected explicit Euler followed by a nearest-point projection.
pub fn step<D: MovingDomain + ?Sized>(
    ens: &ParticleEnsemble,
    pot: &PotentialPair,
    dom: &D,
    dt: f64,
) -> Result<ParticleEnsemble> {
    step_with_audit(ens, pot, dom, dt).map(|(e, _)| e)
}

pub fn step_with_audit<D: MovingDomain + ?Sized>(
    ens: &ParticleEnsemble,
    pot: &PotentialPair,
    dom: &D,
    dt: f64,
) -> Result<(ParticleEnsemble, StepAudit)> {
    if !(dt > 0.0) {
        return Err(Error::StepSize(alloc::format!(
            "dt = {dt} must be positive"
        )));
    }
    if 3.0 * dom.hausdorff_lipschitz() * dt >= dom.prox_radius() {
        return Err(Error::StepSize(alloc::format!(
            "3 L dt / r_p must be below 1 (dt = {dt})"
        )));
    }
    let t = ens.time;
    let t1 = t + dt;
    let mut out = Vec::with_capacity(ens.len());
    let mut power = Vec::with_capacity(ens.len());
    let mut work = Vec::with_capacity(ens.len());
    let mut vmax: f64 = 0.0;
    for (x, m) in ens.positions.iter().zip(&ens.masses) {
        let w = interaction_velocity(ens, pot, x);
        let pw = project_velocity(&w, x, t, dom)?;
        vmax = vmax.max(norm(&w));
        power.push(m * norm2(&pw));
        work.push(m * dot(&sub(&w, &pw), &pw));
        let y = axpy(x, dt, &pw);
        out.push(project_point(&y, t1, dom)?);
    }
    let audit = StepAudit {
        projected_power: ksum(power),
        boundary_work: ksum(work),
        max_speed: vmax,
    };
    Ok((
        ParticleEnsemble {
            dim: ens.dim,
            positions: out,
            masses: ens.masses.clone(),
            time: t1,
        },
        audit,
    ))
}

/// `min(r_p / (10 v_max), 1 / (10 |λ| + 1))` at the current state.
pub fn default_dt<D: MovingDomain + ?Sized>(
    ens: &ParticleEnsemble,
    pot: &PotentialPair,
    dom: &D,
) -> f64 {
    let vmax = velocities(ens, pot).iter().map(norm).fold(0.0, f64::max);
    let a = if vmax > 0.0 {
        dom.prox_radius() / (10.0 * vmax)
    } else {
        f64::INFINITY
    };
    a.min(1.0 / (10.0 * pot.lambda().abs() + 1.0))
}

/// How consecutive recorded states are compared for the metric speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpeedMetric {
    /// Exact distance (quantile formula in 1-D, network simplex otherwise).
    Exact,
    /// Particle-wise pairing; an upper bound on the distance.
    Pairing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub record_every: usize,
    pub metric: SpeedMetric,
    pub keep_snapshots: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            record_every: 1,
            metric: SpeedMetric::Exact,
            keep_snapshots: true,
        }
    }
}

/// Time series of a particle run. All series have one entry per recorded time; interval
/// quantities (`metric_speed`, `slope_term`, `extra_term`) refer to the interval ending
/// at that time and are zero for the first record.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub snapshots: Vec<Vec<Vecd>>,
    pub masses: Vec<f64>,
    pub energy: Vec<f64>,
    pub second_moment: Vec<f64>,
    /// `d_W(μ(t_{k-1}), μ(t_k)) / (t_k - t_{k-1})`
    pub metric_speed: Vec<f64>,
    /// `∫ ½ Σ m |P w|² dt` over the interval.
    pub slope_term: Vec<f64>,
    /// `∫ Σ m (w - P w)·P w dt` over the interval.
    pub extra_term: Vec<f64>,
}

fn distance(a: &ParticleEnsemble, b: &ParticleEnsemble, metric: SpeedMetric) -> Result<f64> {
    match metric {
        SpeedMetric::Pairing => Ok(sqrt(ksum(
            a.positions
                .iter()
                .zip(&b.positions)
                .zip(&a.masses)
                .map(|((p, q), m)| m * dist2(p, q)),
        ))),
        SpeedMetric::Exact if a.dim == 1 => wasserstein_1d(&a.to_measure(), &b.to_measure()),
        SpeedMetric::Exact => {
            Ok(wasserstein_with(&a.to_measure(), &b.to_measure(), &LpOptions::default())?.0)
        }
    }
}

/// Runs `ceil(T / dt)` steps (the last one shortened to land on `T`).
pub fn simulate<D: MovingDomain + ?Sized>(
    ens0: &ParticleEnsemble,
    pot: &PotentialPair,
    dom: &D,
    t_end: f64,
    dt: f64,
    opts: &SimOptions,
) -> Result<(ParticleEnsemble, TrajectoryRecord)> {
    ens0.check_support(dom)?;
    let t0 = ens0.time;
    let steps = ceil((t_end - t0) / dt - 1e-9).max(0.0) as usize;
    let every = opts.record_every.max(1);
    let mut rec = TrajectoryRecord {
        masses: ens0.masses.clone(),
        ..Default::default()
    };
    let push =
        |rec: &mut TrajectoryRecord, e: &ParticleEnsemble, speed: f64, slope: f64, extra: f64| {
            rec.times.push(e.time);
            if opts.keep_snapshots {
                rec.snapshots.push(e.positions.clone());
            }
            rec.energy.push(energy_phi(e, pot));
            rec.second_moment.push(e.second_moment());
            rec.metric_speed.push(speed);
            rec.slope_term.push(slope);
            rec.extra_term.push(extra);
        };
    push(&mut rec, ens0, 0.0, 0.0, 0.0);
    let mut cur = ens0.clone();
    let mut last = ens0.clone();
    let (mut slope, mut extra) = (0.0, 0.0);
    for k in 0..steps {
        let h = if k + 1 == steps { t_end - cur.time } else { dt };
        if !(h > 0.0) {
            break;
        }
        let (next, audit) = step_with_audit(&cur, pot, dom, h)?;
        slope += 0.5 * h * audit.projected_power;
        extra += h * audit.boundary_work;
        cur = next;
        if (k + 1) % every == 0 || k + 1 == steps {
            let d = distance(&last, &cur, opts.metric)?;
            let speed = d / (cur.time - last.time);
            push(&mut rec, &cur, speed, slope, extra);
            slope = 0.0;
            extra = 0.0;
            last = cur.clone();
        }
    }
    Ok((cur, rec))
}

/// Cumulative residual `φ(μ(t_0)) - φ(μ(t_k)) - Σ [½ |μ'|² Δt + ∫½∫|Pw|² + ∫∫(w - Pw)·Pw]`
/// over the recorded intervals; one entry per recorded time.
pub fn maximal_slope_audit(traj: &TrajectoryRecord) -> Vec<f64> {
    let mut out = Vec::with_capacity(traj.times.len());
    let mut acc = 0.0;
    for k in 0..traj.times.len() {
        if k > 0 {
            let dt = traj.times[k] - traj.times[k - 1];
            acc += 0.5 * traj.metric_speed[k] * traj.metric_speed[k] * dt
                + traj.slope_term[k]
                + traj.extra_term[k];
        }
        out.push(traj.energy[0] - traj.energy[k] - acc);
    }
    out
}

/// Constants of the a-priori estimates, built from declared growth constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateConstants {
    /// `C_V + C_W + C_c`
    pub k: f64,
    /// Rate in `m₂(t) <= (1 + m₂(0)) e^{C t} - 1`.
    pub moment_rate: f64,
    /// Moment bound at the horizon.
    pub moment_bound: f64,
    /// Rate in `|x(t)|² <= e^{C' T} (1 + |x(0)|²)`.
    pub growth_rate: f64,
    /// `C_H` in `d_W(μ(t), μ(s)) <= C_H |t - s|^{1/2}`.
    pub holder: f64,
    pub horizon: f64,
}

impl EstimateConstants {
    pub fn new<D: MovingDomain + ?Sized>(
        pot: &PotentialPair,
        dom: &D,
        m2_0: f64,
        horizon: f64,
    ) -> Self {
        let cw = pot.growth_w();
        let k = pot.growth_v() + cw + dom.speed_bound();
        let moment_rate = 3.0 * k + 2.0 * cw;
        let moment_bound = (1.0 + m2_0) * exp(moment_rate * horizon) - 1.0;
        let lin = k + cw * sqrt(moment_bound);
        let growth_rate = 3.0 * lin;
        let s = 2.0 * lin * lin * (1.0 + moment_bound);
        EstimateConstants {
            k,
            moment_rate,
            moment_bound,
            growth_rate,
            holder: sqrt(horizon * s),
            horizon,
        }
    }

    pub fn moment_bound_at(&self, m2_0: f64, t: f64) -> f64 {
        m2_0 + (1.0 + m2_0) * libm::expm1(self.moment_rate * t)
    }

    pub fn position_bound(&self, x0_sq: f64) -> f64 {
        exp(self.growth_rate * self.horizon) * (1.0 + x0_sq)
    }
}

/// Equal-mass particles uniform in a ball (rejection sampling).
pub fn uniform_ball(
    dim: usize,
    n: usize,
    center: Vecd,
    radius: f64,
    seed: u64,
) -> Result<ParticleEnsemble> {
    if n == 0 || !(radius > 0.0) {
        return Err(invalid("need n >= 1 and a positive radius"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::with_capacity(n);
    while pts.len() < n {
        let mut x = ZERO;
        for xi in x.iter_mut().take(dim) {
            *xi = 2.0 * rng.random::<f64>() - 1.0;
        }
        if norm2(&x) <= 1.0 {
            pts.push(axpy(&center, radius, &x));
        }
    }
    ParticleEnsemble::new(dim, pts, vec![1.0 / n as f64; n], 0.0)
}

/// Mass profile of a chain of atoms indexed by `j = 1, 2, ...`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MassLaw {
    /// `m_j ∝ e^{-j}`
    Exponential,
    /// `m_j ∝ j^{-β}`
    Power { beta: f64 },
}

impl MassLaw {
    pub fn weight(&self, j: usize) -> f64 {
        match self {
            MassLaw::Exponential => exp(-(j as f64)),
            MassLaw::Power { beta } => powf(j as f64, -beta),
        }
    }
}

/// Horizontal position of chain atom `j`; atoms from index `n` on are shifted to
/// `j + j^{-α}` when a perturbation `(n, α)` is given.
pub fn chain_position(j: usize, perturbation: Option<(usize, f64)>) -> f64 {
    match perturbation {
        Some((n, alpha)) if j >= n => j as f64 + powf(j as f64, -alpha),
        _ => j as f64,
    }
}

/// Atoms `j = 1..=j_max` on the graph of `cos(2πx)` with normalized masses.
pub fn chain_ensemble(
    law: MassLaw,
    j_max: usize,
    perturbation: Option<(usize, f64)>,
) -> Result<ParticleEnsemble> {
    if j_max == 0 {
        return Err(invalid("chain needs at least one atom"));
    }
    let w: Vec<f64> = (1..=j_max).map(|j| law.weight(j)).collect();
    let total = ksum(w.iter().copied());
    let pts = (1..=j_max)
        .map(|j| {
            let x = chain_position(j, perturbation);
            [x, cos(2.0 * core::f64::consts::PI * x), 0.0]
        })
        .collect();
    let masses: Vec<f64> = w.iter().map(|m| m / total).collect();
    let s = ksum(masses.iter().copied());
    // fold the last ulp of rounding into the heaviest atom
    let mut masses = masses;
    masses[0] += 1.0 - s;
    ParticleEnsemble::new(2, pts, masses, 0.0)
}
