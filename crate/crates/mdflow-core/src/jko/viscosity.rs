//! Comparison of viscous grid solutions with the first-order particle solution.

use alloc::vec;
use alloc::vec::Vec;

use super::grid::{grid_to_points_distance, GridMeasure};
use super::{run_jko, InnerSolver, JkoConfig, RecordOptions};
use crate::geometry::{project_point, MovingDomain};
use crate::linalg::*;
use crate::particles::{simulate, ParticleEnsemble, SimOptions, SpeedMetric};
use crate::potentials::PotentialPair;
use crate::transport::DiscreteMeasure;
use crate::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ViscosityScenario {
    pub pot: PotentialPair,
    pub initial: GridMeasure,
    pub tau: f64,
    /// Comparison times; each must be a multiple of `tau`.
    pub record_times: Vec<f64>,
    /// Particle count of the first-order reference.
    pub particles: usize,
    pub particle_dt: f64,
    pub solver: InnerSolver,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViscosityRow {
    pub eps: f64,
    pub t: f64,
    pub distance: f64,
}

/// Fit of `d_W² <= C ε^p t e^{ct}` with `p = 1/(d+2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViscosityFit {
    pub exponent: f64,
    /// `c` from a least-squares fit of `log(d²/(ε^p t))` against `t` over all rows.
    pub rate: f64,
    /// `C` fitted on the rows of the largest `ε` only.
    pub constant: f64,
    /// Largest `d²/(ε^p t e^{ct})` over the whole sweep.
    pub max_ratio: f64,
    /// `max_ratio <= constant (1 + tol)`: the constant from the largest `ε` bounds every row.
    pub bounded: bool,
    /// Final-time distance per `ε`, in decreasing `ε`.
    pub final_distances: Vec<(f64, f64)>,
    /// Final-time distance is non-increasing as `ε` decreases, within the relative tolerance.
    pub monotone: bool,
}

/// Equal-mass particles at the quantile midpoints (1-D) or at subcell centers of every
/// positive cell (higher dimensions), projected into the domain.
pub fn particles_from_grid<D: MovingDomain + ?Sized>(
    gm: &GridMeasure,
    dom: &D,
    n: usize,
) -> Result<ParticleEnsemble> {
    if n == 0 {
        return Err(invalid("need at least one particle"));
    }
    let g = &gm.grid;
    let (pos, mass): (Vec<Vecd>, Vec<f64>) = if g.dim == 1 {
        let m = gm.masses();
        let mut out = Vec::with_capacity(n);
        let mut k = 0;
        let mut below = 0.0;
        for i in 0..n {
            let q = (i as f64 + 0.5) / n as f64;
            while k + 1 < m.len() && below + m[k] < q {
                below += m[k];
                k += 1;
            }
            let frac = if m[k] > 0.0 {
                ((q - below) / m[k]).clamp(0.0, 1.0)
            } else {
                0.5
            };
            out.push([g.origin[0] + (k as f64 + frac) * g.h, 0.0, 0.0]);
        }
        (out, vec![1.0 / n as f64; n])
    } else {
        let cells: Vec<usize> = (0..g.len()).filter(|&k| gm.density[k] > 0.0).collect();
        let r = round(powf(n as f64 / cells.len() as f64, 1.0 / g.dim as f64)).max(1.0) as usize;
        let sub = r.pow(g.dim as u32);
        let m = gm.masses();
        let mut pos = Vec::with_capacity(cells.len() * sub);
        let mut mass = Vec::with_capacity(cells.len() * sub);
        for &k in &cells {
            let c = g.center(k);
            for s in 0..sub {
                let mut p = c;
                let mut rem = s;
                for i in 0..g.dim {
                    let j = rem % r;
                    rem /= r;
                    p[i] += ((j as f64 + 0.5) / r as f64 - 0.5) * g.h;
                }
                pos.push(p);
                mass.push(m[k] / sub as f64);
            }
        }
        (pos, mass)
    };
    let pos = pos
        .iter()
        .map(|p| project_point(p, gm.time, dom))
        .collect::<Result<Vec<_>>>()?;
    let total = ksum(mass.iter().copied());
    ParticleEnsemble::new(
        g.dim,
        pos,
        mass.iter().map(|m| m / total).collect(),
        gm.time,
    )
}

/// First-order particle solution at the scenario's record times.
pub fn particle_reference<D: MovingDomain + ?Sized>(
    sc: &ViscosityScenario,
    dom: &D,
) -> Result<Vec<DiscreteMeasure>> {
    let mut ens = particles_from_grid(&sc.initial, dom, sc.particles)?;
    let opts = SimOptions {
        record_every: usize::MAX,
        metric: SpeedMetric::Pairing,
        keep_snapshots: false,
    };
    let mut out = Vec::with_capacity(sc.record_times.len());
    for &t in &sc.record_times {
        if t > ens.time {
            ens = simulate(&ens, &sc.pot, dom, t, sc.particle_dt, &opts)?.0;
        }
        out.push(ens.to_measure());
    }
    Ok(out)
}

/// Distances between the viscous solution at one `ε` and the particle reference.
pub fn viscosity_rows<D: MovingDomain + ?Sized>(
    eps: f64,
    sc: &ViscosityScenario,
    dom: &D,
    reference: &[DiscreteMeasure],
) -> Result<Vec<ViscosityRow>> {
    if !dom.is_convex() {
        return Err(Error::NonConvexDomain);
    }
    let t_end = sc
        .record_times
        .iter()
        .copied()
        .fold(sc.initial.time, f64::max);
    let mut cfg = JkoConfig::new(sc.tau, eps)?;
    cfg.solver = sc.solver;
    cfg.audit_distance = false;
    let (_, traj) = run_jko(
        &sc.initial,
        &sc.pot,
        dom,
        &cfg,
        t_end,
        &RecordOptions {
            record_every: 1,
            keep_snapshots: true,
        },
    )?;
    let mut rows = Vec::with_capacity(sc.record_times.len());
    for (i, &t) in sc.record_times.iter().enumerate() {
        let snap = traj
            .snapshots
            .iter()
            .find(|s| abs(s.time - t) <= 1e-9 * (1.0 + abs(t)))
            .ok_or_else(|| invalid("record times must be multiples of tau"))?;
        rows.push(ViscosityRow {
            eps,
            t,
            distance: grid_to_points_distance(snap, &reference[i])?,
        });
    }
    Ok(rows)
}

/// Runs the sweep sequentially; see [`fit_viscosity`] for the fitted constants.
pub fn viscosity_gap<D: MovingDomain + ?Sized>(
    eps_list: &[f64],
    sc: &ViscosityScenario,
    dom: &D,
) -> Result<Vec<ViscosityRow>> {
    if !dom.is_convex() {
        return Err(Error::NonConvexDomain);
    }
    let reference = particle_reference(sc, dom)?;
    let mut rows = Vec::new();
    for &eps in eps_list {
        rows.extend(viscosity_rows(eps, sc, dom, &reference)?);
    }
    Ok(rows)
}

pub fn fit_viscosity(rows: &[ViscosityRow], dim: usize, tol: f64) -> ViscosityFit {
    let p = 1.0 / (dim as f64 + 2.0);
    let pts: Vec<(f64, f64, f64)> = rows
        .iter()
        .filter(|r| r.t > 0.0 && r.distance > 0.0)
        .map(|r| {
            (
                r.eps,
                r.t,
                ln(r.distance * r.distance / (powf(r.eps, p) * r.t)),
            )
        })
        .collect();
    let n = pts.len() as f64;
    let rate = if pts.is_empty() {
        0.0
    } else {
        let mt = pts.iter().map(|x| x.1).sum::<f64>() / n;
        let my = pts.iter().map(|x| x.2).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|x| (x.1 - mt) * (x.1 - mt)).sum();
        let sxy: f64 = pts.iter().map(|x| (x.1 - mt) * (x.2 - my)).sum();
        if sxx > 1e-300 {
            sxy / sxx
        } else {
            0.0
        }
    };
    let eps_max = pts.iter().map(|x| x.0).fold(f64::NEG_INFINITY, f64::max);
    let ratio = |x: &(f64, f64, f64)| exp(x.2 - rate * x.1);
    let constant = pts
        .iter()
        .filter(|x| x.0 == eps_max)
        .map(ratio)
        .fold(0.0, f64::max);
    let max_ratio = pts.iter().map(ratio).fold(0.0, f64::max);
    let mut eps_desc: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    eps_desc.sort_by(|a, b| b.total_cmp(a));
    eps_desc.dedup();
    let final_distances: Vec<(f64, f64)> = eps_desc
        .iter()
        .map(|&e| {
            let last = rows
                .iter()
                .filter(|r| r.eps == e)
                .fold(None::<&ViscosityRow>, |acc, r| match acc {
                    Some(a) if a.t >= r.t => Some(a),
                    _ => Some(r),
                });
            (e, last.map_or(f64::NAN, |r| r.distance))
        })
        .collect();
    let monotone = final_distances
        .windows(2)
        .all(|w| w[1].1 <= w[0].1 * (1.0 + tol));
    ViscosityFit {
        exponent: p,
        rate,
        constant,
        max_ratio,
        bounded: max_ratio <= constant * (1.0 + tol),
        final_distances,
        monotone,
    }
}
