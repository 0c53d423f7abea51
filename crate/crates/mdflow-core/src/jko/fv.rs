//! Explicit finite-volume scheme with Scharfetter–Gummel fluxes and no-flux faces on
//! the mask boundary. Used as an independent check of the minimizing-movement solver.

use alloc::vec;
use alloc::vec::Vec;

use super::grid::{energy_phi_eps, interaction_field, potential_values, GridMeasure};
use super::{GridTrajectory, RecordOptions};
use crate::geometry::MovingDomain;
use crate::linalg::*;
use crate::potentials::PotentialPair;
use crate::{invalid, Error, Result};

/// `z / (e^z - 1)`.
fn bernoulli(z: f64) -> f64 {
    if abs(z) < 1e-8 {
        1.0 - 0.5 * z
    } else {
        z / libm::expm1(z)
    }
}

/// Largest stable explicit step for the given field.
fn cfl_limit(gm: &GridMeasure, field: &[f64], eps: f64) -> f64 {
    let g = &gm.grid;
    let mut jump: f64 = 0.0;
    for k in 0..g.len() {
        if !gm.mask[k] {
            continue;
        }
        for axis in 0..g.dim {
            if let Some(l) = g.upper_neighbor(k, axis) {
                if gm.mask[l] {
                    jump = jump.max(abs(field[l] - field[k]));
                }
            }
        }
    }
    g.h * g.h / (2.0 * g.dim as f64 * (eps + jump))
}

fn field_of(gm: &GridMeasure, v: &[f64], pot: &PotentialPair) -> Vec<f64> {
    if !pot.has_interaction() {
        return v.to_vec();
    }
    let cells: Vec<usize> = (0..gm.grid.len()).collect();
    let w = interaction_field(&gm.grid, pot, &gm.masses(), &cells);
    v.iter().zip(&w).map(|(a, b)| a + b).collect()
}

/// One explicit step of length `dt` on the current mask.
fn step(gm: &GridMeasure, field: &[f64], eps: f64, dt: f64) -> Vec<f64> {
    let g = &gm.grid;
    let mut u = gm.density.clone();
    let c = dt / g.h;
    for k in 0..g.len() {
        if !gm.mask[k] {
            continue;
        }
        for axis in 0..g.dim {
            let Some(l) = g.upper_neighbor(k, axis) else {
                continue;
            };
            if !gm.mask[l] {
                continue;
            }
            let z = (field[l] - field[k]) / eps;
            let flux = eps / g.h * (bernoulli(z) * gm.density[k] - bernoulli(-z) * gm.density[l]);
            u[k] -= c * flux;
            u[l] += c * flux;
        }
    }
    u
}

/// Moves mass of cells that left the mask to the nearest cell of the new mask.
fn remask(gm: &GridMeasure, mask: Vec<bool>, t: f64) -> Result<GridMeasure> {
    let g = &gm.grid;
    let mut masses = vec![0.0; g.len()];
    let old = gm.masses();
    for k in 0..g.len() {
        if old[k] == 0.0 {
            continue;
        }
        let target = if mask[k] {
            k
        } else {
            g.nearest_masked(&mask, &g.center(k))
                .ok_or_else(|| invalid("domain left the grid"))?
        };
        masses[target] += old[k];
    }
    let vol = g.cell_volume();
    let density = masses.iter().map(|m| m / vol).collect();
    Ok(GridMeasure {
        grid: g.clone(),
        density,
        mask,
        time: t,
    })
}

/// Runs the scheme from `gm0` to `t_end`; errors if `dt` violates the explicit
/// stability limit at any step.
pub fn fv_solve<D: MovingDomain + ?Sized>(
    gm0: &GridMeasure,
    pot: &PotentialPair,
    dom: &D,
    eps: f64,
    dt: f64,
    t_end: f64,
    opts: &RecordOptions,
) -> Result<(GridMeasure, GridTrajectory)> {
    if !(eps > 0.0) || !(dt > 0.0) {
        return Err(invalid("eps and dt must be positive"));
    }
    let v = potential_values(&gm0.grid, pot);
    let mut cur = gm0.clone();
    let mut rec = GridTrajectory::default();
    rec.push(
        &cur,
        energy_phi_eps(&cur, pot, eps),
        0.0,
        0.0,
        0,
        opts.keep_snapshots,
    );
    let steps = ceil((t_end - gm0.time) / dt - 1e-9).max(0.0) as usize;
    let every = opts.record_every.max(1);
    for s in 0..steps {
        let h = if s + 1 == steps { t_end - cur.time } else { dt };
        if !(h > 0.0) {
            break;
        }
        let field = field_of(&cur, &v, pot);
        let limit = cfl_limit(&cur, &field, eps);
        if h > limit {
            return Err(Error::Cfl { dt: h, limit });
        }
        let u = step(&cur, &field, eps, h);
        let t = cur.time + h;
        cur = GridMeasure {
            grid: cur.grid.clone(),
            density: u,
            mask: cur.mask.clone(),
            time: t,
        };
        if !dom.is_stationary() {
            cur = remask(&cur, cur.grid.mask(dom, t), t)?;
        }
        if (s + 1) % every == 0 || s + 1 == steps {
            rec.push(
                &cur,
                energy_phi_eps(&cur, pot, eps),
                0.0,
                0.0,
                0,
                opts.keep_snapshots,
            );
        }
    }
    Ok((cur, rec))
}
