//! Cell-centered densities on axis-aligned grids.

use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::MovingDomain;
use crate::linalg::*;
use crate::potentials::PotentialPair;
use crate::transport::{wasserstein_with, DiscreteMeasure, LpOptions, Quantile1d};
use crate::{invalid, Error, Result};

/// Uniform grid of `n[0] × … × n[dim-1]` cubic cells of side `h`, lower corner `origin`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub dim: usize,
    pub n: [usize; MAX_DIM],
    pub origin: Vecd,
    pub h: f64,
}

impl Grid {
    pub fn new(dim: usize, n: &[usize], origin: Vecd, h: f64) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM || n.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: n.len(),
            });
        }
        if !(h > 0.0) || n.contains(&0) {
            return Err(invalid("grid needs positive cell size and cell counts"));
        }
        let mut nn = [1; MAX_DIM];
        nn[..dim].copy_from_slice(n);
        Ok(Grid {
            dim,
            n: nn,
            origin,
            h,
        })
    }

    /// `cells` equal cells on `[a, b]`.
    pub fn interval(a: f64, b: f64, cells: usize) -> Result<Self> {
        if !(b > a) {
            return Err(invalid("interval needs a < b"));
        }
        Self::new(1, &[cells], [a, 0.0, 0.0], (b - a) / cells as f64)
    }

    /// Smallest grid of side `h` anchored at `lo` that covers `[lo, hi]`.
    pub fn covering(dim: usize, lo: Vecd, hi: Vecd, h: f64) -> Result<Self> {
        let n: Vec<usize> = (0..dim)
            .map(|i| ceil((hi[i] - lo[i]) / h - 1e-9).max(1.0) as usize)
            .collect();
        Self::new(dim, &n, lo, h)
    }

    pub fn len(&self) -> usize {
        self.n[..self.dim].iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        powf(self.h, self.dim as f64)
    }

    pub fn multi_index(&self, k: usize) -> [usize; MAX_DIM] {
        let mut out = [0; MAX_DIM];
        let mut r = k;
        for (i, o) in out.iter_mut().enumerate().take(self.dim) {
            *o = r % self.n[i];
            r /= self.n[i];
        }
        out
    }

    pub fn flat_index(&self, idx: &[usize; MAX_DIM]) -> usize {
        let mut k = 0;
        for i in (0..self.dim).rev() {
            k = k * self.n[i] + idx[i];
        }
        k
    }

    pub fn center(&self, k: usize) -> Vecd {
        let idx = self.multi_index(k);
        let mut c = ZERO;
        for i in 0..self.dim {
            c[i] = self.origin[i] + (idx[i] as f64 + 0.5) * self.h;
        }
        c
    }

    /// Cell containing `x`, if any.
    pub fn locate(&self, x: &Vecd) -> Option<usize> {
        let mut idx = [0; MAX_DIM];
        for i in 0..self.dim {
            let f = floor((x[i] - self.origin[i]) / self.h);
            if f < 0.0 || f >= self.n[i] as f64 {
                return None;
            }
            idx[i] = f as usize;
        }
        Some(self.flat_index(&idx))
    }

    /// Neighbor across the upper face of cell `k` along `axis`.
    pub fn upper_neighbor(&self, k: usize, axis: usize) -> Option<usize> {
        let mut idx = self.multi_index(k);
        if idx[axis] + 1 >= self.n[axis] {
            return None;
        }
        idx[axis] += 1;
        Some(self.flat_index(&idx))
    }

    /// Cells whose centers lie in the closure of Ω(t).
    pub fn mask<D: MovingDomain + ?Sized>(&self, dom: &D, t: f64) -> Vec<bool> {
        (0..self.len())
            .map(|k| dom.contains(&self.center(k), t))
            .collect()
    }

    /// Masked cell whose center is closest to `x`.
    pub fn nearest_masked(&self, mask: &[bool], x: &Vecd) -> Option<usize> {
        let mut best = None;
        let mut bd = f64::INFINITY;
        for (k, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
            let d = dist2(&self.center(k), x);
            if d < bd {
                bd = d;
                best = Some(k);
            }
        }
        best
    }
}

/// Absolutely continuous probability measure with constant density on each grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeasure {
    pub grid: Grid,
    pub density: Vec<f64>,
    pub mask: Vec<bool>,
    pub time: f64,
}

impl GridMeasure {
    pub fn new(grid: Grid, density: Vec<f64>, mask: Vec<bool>, time: f64) -> Result<Self> {
        if density.len() != grid.len() || mask.len() != grid.len() {
            return Err(invalid("density and mask must match the grid"));
        }
        for (u, m) in density.iter().zip(&mask) {
            if !(*u >= 0.0) || !u.is_finite() {
                return Err(invalid("densities must be finite and nonnegative"));
            }
            if !m && *u != 0.0 {
                return Err(invalid("density must vanish outside the mask"));
            }
        }
        let gm = GridMeasure {
            grid,
            density,
            mask,
            time,
        };
        if abs(gm.total_mass() - 1.0) > 1e-8 {
            return Err(invalid("grid measure must have unit mass"));
        }
        Ok(gm)
    }

    /// Samples `f` at the masked cell centers and normalizes.
    pub fn from_fn<D: MovingDomain + ?Sized>(
        grid: Grid,
        dom: &D,
        t: f64,
        f: impl Fn(&Vecd) -> f64,
    ) -> Result<Self> {
        let mask = grid.mask(dom, t);
        let raw: Vec<f64> = (0..grid.len())
            .map(|k| {
                if mask[k] {
                    f(&grid.center(k)).max(0.0)
                } else {
                    0.0
                }
            })
            .collect();
        Self::from_unnormalized(grid, raw, mask, t)
    }

    pub fn uniform<D: MovingDomain + ?Sized>(grid: Grid, dom: &D, t: f64) -> Result<Self> {
        Self::from_fn(grid, dom, t, |_| 1.0)
    }

    pub fn from_unnormalized(
        grid: Grid,
        mut density: Vec<f64>,
        mask: Vec<bool>,
        t: f64,
    ) -> Result<Self> {
        let total = ksum(density.iter().copied()) * grid.cell_volume();
        if !(total > 0.0) || !total.is_finite() {
            return Err(invalid("density has no mass inside the domain"));
        }
        for u in density.iter_mut() {
            *u /= total;
        }
        Self::new(grid, density, mask, t)
    }

    /// Builds the measure from per-cell masses.
    pub fn from_masses(grid: Grid, masses: &[f64], mask: Vec<bool>, t: f64) -> Result<Self> {
        let vol = grid.cell_volume();
        Self::from_unnormalized(grid, masses.iter().map(|m| m / vol).collect(), mask, t)
    }

    pub fn masses(&self) -> Vec<f64> {
        let vol = self.grid.cell_volume();
        self.density.iter().map(|u| u * vol).collect()
    }

    pub fn total_mass(&self) -> f64 {
        ksum(self.density.iter().copied()) * self.grid.cell_volume()
    }

    /// Cell-centered atoms of the positive cells.
    pub fn to_measure(&self) -> Result<DiscreteMeasure> {
        let vol = self.grid.cell_volume();
        let (pts, ws): (Vec<Vecd>, Vec<f64>) = (0..self.grid.len())
            .filter(|&k| self.density[k] > 0.0)
            .map(|k| (self.grid.center(k), self.density[k] * vol))
            .unzip();
        DiscreteMeasure::normalized(self.grid.dim, pts, ws)
    }

    /// Quantile function of the piecewise-constant density (1-D only).
    pub fn quantile(&self) -> Quantile1d {
        Quantile1d::from_cells(self.grid.origin[0], self.grid.h, &self.masses())
    }

    /// `∫|x|² u dx`, exact for piecewise-constant densities.
    pub fn second_moment(&self) -> f64 {
        let vol = self.grid.cell_volume();
        let spread = self.grid.dim as f64 * self.grid.h * self.grid.h / 12.0;
        ksum(
            (0..self.grid.len())
                .filter(|&k| self.density[k] > 0.0)
                .map(|k| self.density[k] * vol * (norm2(&self.grid.center(k)) + spread)),
        )
    }

    pub fn mean(&self) -> Vecd {
        let vol = self.grid.cell_volume();
        let mut m = ZERO;
        for k in 0..self.grid.len() {
            if self.density[k] > 0.0 {
                m = axpy(&m, self.density[k] * vol, &self.grid.center(k));
            }
        }
        m
    }

    /// Index range `[first, last]` of masked cells along a 1-D grid; errors if the
    /// mask is empty or has holes.
    pub fn mask_range(mask: &[bool]) -> Result<(usize, usize)> {
        let first = mask
            .iter()
            .position(|&m| m)
            .ok_or_else(|| invalid("empty mask"))?;
        let last = mask.iter().rposition(|&m| m).unwrap_or(first);
        if mask[first..=last].iter().any(|m| !m) {
            return Err(Error::NonConvexDomain);
        }
        Ok((first, last))
    }
}

fn same_grid(a: &GridMeasure, b: &GridMeasure) -> Result<()> {
    if a.grid != b.grid {
        return Err(invalid("grid measures live on different grids"));
    }
    Ok(())
}

/// `Σ |u_a - u_b| h^d`.
pub fn l1_distance(a: &GridMeasure, b: &GridMeasure) -> Result<f64> {
    same_grid(a, b)?;
    Ok(ksum(a.density.iter().zip(&b.density).map(|(x, y)| abs(x - y))) * a.grid.cell_volume())
}

/// `(Σ |u_a - u_b|² h^d)^{1/2}`.
pub fn l2_distance(a: &GridMeasure, b: &GridMeasure) -> Result<f64> {
    same_grid(a, b)?;
    Ok(sqrt(
        ksum(
            a.density
                .iter()
                .zip(&b.density)
                .map(|(x, y)| (x - y) * (x - y)),
        ) * a.grid.cell_volume(),
    ))
}

/// Quadratic Wasserstein distance between grid measures: exact between the
/// piecewise-constant densities in 1-D, between cell-centered atoms otherwise.
pub fn grid_distance(a: &GridMeasure, b: &GridMeasure) -> Result<f64> {
    if a.grid.dim != b.grid.dim {
        return Err(Error::Dimension {
            expected: a.grid.dim,
            got: b.grid.dim,
        });
    }
    if a.grid.dim == 1 {
        return Ok(sqrt(
            Quantile1d::w2_squared(&a.quantile(), &b.quantile()).max(0.0),
        ));
    }
    Ok(wasserstein_with(&a.to_measure()?, &b.to_measure()?, &LpOptions::default())?.0)
}

/// Distance from a grid measure to a weighted point cloud (exact quantile formula in 1-D).
pub fn grid_to_points_distance(a: &GridMeasure, b: &DiscreteMeasure) -> Result<f64> {
    if a.grid.dim == 1 {
        return Ok(sqrt(
            Quantile1d::w2_squared(&a.quantile(), &b.quantile()).max(0.0),
        ));
    }
    Ok(wasserstein_with(&a.to_measure()?, b, &LpOptions::default())?.0)
}

/// `V` at the cell centers.
pub(crate) fn potential_values(grid: &Grid, pot: &PotentialPair) -> Vec<f64> {
    (0..grid.len())
        .map(|k| pot.v.value(&grid.center(k)))
        .collect()
}

/// `(W * m)(c_k)` for the cell masses `m`, restricted to the listed cells.
pub(crate) fn interaction_field(
    grid: &Grid,
    pot: &PotentialPair,
    masses: &[f64],
    cells: &[usize],
) -> Vec<f64> {
    if !pot.has_interaction() {
        return vec![0.0; cells.len()];
    }
    let support: Vec<usize> = (0..grid.len()).filter(|&l| masses[l] > 0.0).collect();
    cells
        .iter()
        .map(|&k| {
            let ck = grid.center(k);
            ksum(
                support
                    .iter()
                    .map(|&l| pot.w.value(&sub(&ck, &grid.center(l))) * masses[l]),
            )
        })
        .collect()
}

/// `ε Σ u log u h^d + Σ V u h^d + ½ ΣΣ W(c_k - c_l) u_k u_l h^{2d}` with `0 log 0 = 0`.
pub fn energy_phi_eps(gm: &GridMeasure, pot: &PotentialPair, eps: f64) -> f64 {
    let vol = gm.grid.cell_volume();
    let cells: Vec<usize> = (0..gm.grid.len())
        .filter(|&k| gm.density[k] > 0.0)
        .collect();
    let entropy = ksum(cells.iter().map(|&k| {
        let u = gm.density[k];
        u * ln(u) * vol
    }));
    let confinement = ksum(
        cells
            .iter()
            .map(|&k| pot.v.value(&gm.grid.center(k)) * gm.density[k] * vol),
    );
    let interaction = if pot.has_interaction() {
        let masses = gm.masses();
        let field = interaction_field(&gm.grid, pot, &masses, &cells);
        0.5 * ksum(cells.iter().zip(&field).map(|(&k, f)| masses[k] * f))
    } else {
        0.0
    };
    eps * entropy + confinement + interaction
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoxDomain;
    use crate::potentials::Potential;

    #[test]
    fn uniform_entropy_values() {
        let dom = BoxDomain::interval(0.0, 1.0).unwrap();
        let g = Grid::interval(0.0, 1.0, 10).unwrap();
        let gm = GridMeasure::uniform(g, &dom, 0.0).unwrap();
        let pot = PotentialPair::confinement(Potential::Zero);
        assert!(energy_phi_eps(&gm, &pot, 0.7).abs() < 1e-15);

        let half = BoxDomain::interval(0.0, 0.5).unwrap();
        let g = Grid::interval(0.0, 1.0, 10).unwrap();
        let gm = GridMeasure::uniform(g, &half, 0.0).unwrap();
        assert!((energy_phi_eps(&gm, &pot, 0.3) - 0.3 * core::f64::consts::LN_2).abs() < 1e-14);
    }

    #[test]
    fn indices_round_trip() {
        let g = Grid::new(2, &[3, 4], [0.0, 0.0, 0.0], 0.5).unwrap();
        for k in 0..g.len() {
            assert_eq!(g.flat_index(&g.multi_index(k)), k);
            assert_eq!(g.locate(&g.center(k)), Some(k));
        }
    }

    #[test]
    fn mask_hole_is_rejected() {
        assert!(matches!(
            GridMeasure::mask_range(&[false, true, false, true]),
            Err(Error::NonConvexDomain)
        ));
        assert_eq!(
            GridMeasure::mask_range(&[false, true, true, false]).unwrap(),
            (1, 2)
        );
    }
}
