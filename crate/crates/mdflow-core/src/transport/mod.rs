//! Exact discrete optimal transport with quadratic cost.

mod quantile;
mod simplex;

pub use quantile::{Quantile1d, QuantilePiece};
pub use simplex::FlowValue;

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::*;
use crate::{invalid, Error, Result};

/// Weighted point cloud with unit total mass.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    pub dim: usize,
    pub points: Vec<Vecd>,
    pub weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(dim: usize, points: Vec<Vecd>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() || points.is_empty() {
            return Err(invalid(
                "measure needs matching, nonempty points and weights",
            ));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(invalid("weights must be nonnegative"));
        }
        let s = ksum(weights.iter().copied());
        if abs(s - 1.0) > 1e-12 {
            return Err(invalid("weights must sum to one"));
        }
        Ok(DiscreteMeasure {
            dim,
            points,
            weights,
        })
    }

    /// Rescales the weights to unit mass.
    pub fn normalized(dim: usize, points: Vec<Vecd>, weights: Vec<f64>) -> Result<Self> {
        let s = ksum(weights.iter().copied());
        if !(s > 0.0) {
            return Err(invalid("total mass must be positive"));
        }
        Self::new(dim, points, weights.iter().map(|w| w / s).collect())
    }

    pub fn uniform(dim: usize, points: Vec<Vecd>) -> Result<Self> {
        let n = points.len();
        Self::new(dim, points, vec![1.0 / n as f64; n])
    }

    /// 1-D measure from scalar positions.
    pub fn line(xs: &[f64], ws: &[f64]) -> Result<Self> {
        Self::new(1, xs.iter().map(|&x| [x, 0.0, 0.0]).collect(), ws.to_vec())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn second_moment(&self) -> f64 {
        ksum(
            self.points
                .iter()
                .zip(&self.weights)
                .map(|(p, w)| w * norm2(p)),
        )
    }

    fn coords(&self) -> Vec<f64> {
        self.points.iter().map(|p| p[0]).collect()
    }

    pub fn quantile(&self) -> Quantile1d {
        Quantile1d::from_atoms(&self.coords(), &self.weights)
    }
}

/// Sparse coupling with its quadratic cost and the dual potentials that certify it.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub entries: Vec<(usize, usize, f64)>,
    pub cost: f64,
    /// Kantorovich potentials with `alpha_i + beta_j <= |x_i - y_j|²`.
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Solver settings for [`wasserstein_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpOptions {
    /// Largest admissible `N·M`.
    pub cap: usize,
    /// When set, masses are carried as exact integers scaled by `2^bits` (at most 120),
    /// which keeps weights spanning many orders of magnitude distinguishable.
    pub mass_bits: Option<u32>,
    pub max_pivots: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        LpOptions {
            cap: 4_000_000,
            mass_bits: None,
            max_pivots: 50_000_000,
        }
    }
}

/// Exact 2-Wasserstein distance and an optimal plan.
pub fn wasserstein(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<(f64, TransportPlan)> {
    wasserstein_with(mu, nu, &LpOptions::default())
}

pub fn wasserstein_with(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    opts: &LpOptions,
) -> Result<(f64, TransportPlan)> {
    if mu.dim != nu.dim {
        return Err(Error::Dimension {
            expected: mu.dim,
            got: nu.dim,
        });
    }
    let entries = mu.len() * nu.len();
    if entries > opts.cap {
        return Err(Error::SizeCap {
            entries,
            cap: opts.cap,
        });
    }
    let rows: Vec<usize> = (0..mu.len()).filter(|&i| mu.weights[i] > 0.0).collect();
    let cols: Vec<usize> = (0..nu.len()).filter(|&j| nu.weights[j] > 0.0).collect();
    let (n, m) = (rows.len(), cols.len());
    let mut cost = Vec::with_capacity(n * m);
    for &i in &rows {
        for &j in &cols {
            cost.push(dist2(&mu.points[i], &nu.points[j]));
        }
    }

    let (flows, alpha_r, beta_c): (Vec<(usize, usize, f64)>, Vec<f64>, Vec<f64>) =
        match opts.mass_bits {
            None => {
                let a: Vec<f64> = rows.iter().map(|&i| mu.weights[i]).collect();
                let mut b: Vec<f64> = cols.iter().map(|&j| nu.weights[j]).collect();
                // absorb the rounding imbalance into the heaviest target atom
                let gap = ksum(a.iter().copied()) - ksum(b.iter().copied());
                let jmax = argmax(&b);
                b[jmax] += gap;
                let sol = simplex::solve(&cost, &a, &b, opts.max_pivots)?;
                (sol.flows, sol.alpha, sol.beta)
            }
            Some(bits) => {
                let bits = bits.min(120);
                let scale_f = powf(2.0, bits as f64);
                let total: i128 = 1i128 << bits;
                let a = integer_masses(rows.iter().map(|&i| mu.weights[i]), scale_f, total);
                let b = integer_masses(cols.iter().map(|&j| nu.weights[j]), scale_f, total);
                let sol = simplex::solve(&cost, &a, &b, opts.max_pivots)?;
                let flows = sol
                    .flows
                    .into_iter()
                    .map(|(i, j, f)| (i, j, f as f64 / scale_f))
                    .collect();
                (flows, sol.alpha, sol.beta)
            }
        };

    let mut entries_out = Vec::with_capacity(flows.len());
    let mut total = 0.0;
    let mut comp = 0.0;
    for (i, j, f) in flows {
        let term = f * cost[i * m + j] - comp;
        let t = total + term;
        comp = (t - total) - term;
        total = t;
        entries_out.push((rows[i], cols[j], f));
    }
    let (alpha, beta) = expand_duals(mu, nu, &rows, &cols, &alpha_r, &beta_c);
    let total = total.max(0.0);
    Ok((
        sqrt(total),
        TransportPlan {
            entries: entries_out,
            cost: total,
            alpha,
            beta,
        },
    ))
}

fn argmax(xs: &[f64]) -> usize {
    let mut k = 0;
    for i in 1..xs.len() {
        if xs[i] > xs[k] {
            k = i;
        }
    }
    k
}

fn integer_masses(ws: impl Iterator<Item = f64>, scale_f: f64, total: i128) -> Vec<i128> {
    let mut v: Vec<i128> = ws.map(|w| round(w * scale_f) as i128).collect();
    let s: i128 = v.iter().sum();
    let k = v
        .iter()
        .enumerate()
        .max_by_key(|(_, x)| **x)
        .map(|(k, _)| k)
        .unwrap_or(0);
    v[k] += total - s;
    // atoms that round to nothing keep one unit so the supports stay intact
    let mut borrowed = 0;
    for x in v.iter_mut() {
        if *x <= 0 {
            *x = 1;
            borrowed += 1;
        }
    }
    v[k] -= borrowed;
    v
}

/// Fills duals of zero-weight atoms with the tightest feasible values.
fn expand_duals(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    rows: &[usize],
    cols: &[usize],
    a: &[f64],
    b: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut alpha = vec![f64::NAN; mu.len()];
    let mut beta = vec![f64::NAN; nu.len()];
    for (r, &i) in rows.iter().enumerate() {
        alpha[i] = a[r];
    }
    for (c, &j) in cols.iter().enumerate() {
        beta[j] = b[c];
    }
    for i in 0..mu.len() {
        if alpha[i].is_nan() {
            alpha[i] = cols
                .iter()
                .map(|&j| dist2(&mu.points[i], &nu.points[j]) - beta[j])
                .fold(f64::INFINITY, f64::min);
        }
    }
    for j in 0..nu.len() {
        if beta[j].is_nan() {
            beta[j] = (0..mu.len())
                .map(|i| dist2(&mu.points[i], &nu.points[j]) - alpha[i])
                .fold(f64::INFINITY, f64::min);
        }
    }
    (alpha, beta)
}

/// Optimality certificate of a plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    /// Largest marginal violation.
    pub primal_violation: f64,
    /// Largest `alpha_i + beta_j - c_ij` (positive part).
    pub dual_violation: f64,
    /// Largest `|c_ij - alpha_i - beta_j|` over the support of the plan.
    pub slackness_violation: f64,
    /// `|primal cost - Σ alpha a - Σ beta b|`.
    pub duality_gap: f64,
    pub passed: bool,
}

/// Checks primal feasibility, dual feasibility and complementary slackness.
/// Tolerances scale with the largest cost.
pub fn certify(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    plan: &TransportPlan,
    tol: f64,
) -> Certificate {
    let mut rows = vec![0.0; mu.len()];
    let mut cols = vec![0.0; nu.len()];
    let mut slack: f64 = 0.0;
    let mut recomputed = 0.0;
    for &(i, j, g) in &plan.entries {
        rows[i] += g;
        cols[j] += g;
        let c = dist2(&mu.points[i], &nu.points[j]);
        recomputed += g * c;
        if g > 0.0 {
            slack = slack.max(abs(c - plan.alpha[i] - plan.beta[j]));
        }
    }
    let mut primal: f64 = abs(recomputed - plan.cost);
    for i in 0..mu.len() {
        primal = primal.max(abs(rows[i] - mu.weights[i]));
    }
    for j in 0..nu.len() {
        primal = primal.max(abs(cols[j] - nu.weights[j]));
    }
    let mut dual: f64 = 0.0;
    let mut cmax: f64 = 0.0;
    for i in 0..mu.len() {
        for j in 0..nu.len() {
            let c = dist2(&mu.points[i], &nu.points[j]);
            cmax = cmax.max(c);
            dual = dual.max(plan.alpha[i] + plan.beta[j] - c);
        }
    }
    let dual_obj = ksum(
        mu.weights
            .iter()
            .zip(&plan.alpha)
            .map(|(w, a)| if *w > 0.0 { w * a } else { 0.0 }),
    ) + ksum(nu.weights.iter().zip(&plan.beta).map(|(w, b)| {
        if *w > 0.0 {
            w * b
        } else {
            0.0
        }
    }));
    let gap = abs(plan.cost - dual_obj);
    let scale_c = cmax.max(1.0);
    Certificate {
        primal_violation: primal,
        dual_violation: dual,
        slackness_violation: slack,
        duality_gap: gap,
        passed: primal <= tol
            && dual <= tol * scale_c
            && slack <= tol * scale_c
            && gap <= tol * scale_c,
    }
}

/// 1-D distance by quantile matching.
pub fn wasserstein_1d(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    if mu.dim != 1 || nu.dim != 1 {
        return Err(Error::Dimension {
            expected: 1,
            got: mu.dim.max(nu.dim),
        });
    }
    Ok(sqrt(Quantile1d::w2_squared(&mu.quantile(), &nu.quantile())))
}

/// Monotone coupling of two 1-D measures as plan entries.
pub fn monotone_plan(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Vec<(usize, usize, f64)> {
    let mut a: Vec<usize> = (0..mu.len()).filter(|&i| mu.weights[i] > 0.0).collect();
    let mut b: Vec<usize> = (0..nu.len()).filter(|&j| nu.weights[j] > 0.0).collect();
    a.sort_by(|&x, &y| mu.points[x][0].total_cmp(&mu.points[y][0]));
    b.sort_by(|&x, &y| nu.points[x][0].total_cmp(&nu.points[y][0]));
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    let mut ra = a.first().map_or(0.0, |&k| mu.weights[k]);
    let mut rb = b.first().map_or(0.0, |&k| nu.weights[k]);
    while i < a.len() && j < b.len() {
        let g = ra.min(rb);
        if g > 0.0 {
            out.push((a[i], b[j], g));
        }
        ra -= g;
        rb -= g;
        if ra <= 1e-14 * mu.weights[a[i]] {
            i += 1;
            ra = if i < a.len() { mu.weights[a[i]] } else { 0.0 };
        }
        if rb <= 1e-14 * nu.weights[b[j]] {
            j += 1;
            rb = if j < b.len() { nu.weights[b[j]] } else { 0.0 };
        }
    }
    out
}

/// Optimal map values `t(x_i)` for every base atom: the barycentric projection of an
/// optimal plan. In 1-D the plan is the monotone rearrangement, so the values are the
/// cell averages of the exact quantile map; in higher dimension the result approximates
/// the Monge map.
pub fn optimal_map(base: &DiscreteMeasure, target: &DiscreteMeasure) -> Result<Vec<Vecd>> {
    if base.weights.iter().any(|w| !(*w > 0.0)) {
        return Err(invalid("base measure needs strictly positive weights"));
    }
    let entries = if base.dim == 1 && target.dim == 1 {
        monotone_plan(base, target)
    } else {
        wasserstein(base, target)?.1.entries
    };
    Ok(barycentric(base, target, &entries))
}

pub fn barycentric(
    base: &DiscreteMeasure,
    target: &DiscreteMeasure,
    entries: &[(usize, usize, f64)],
) -> Vec<Vecd> {
    let mut acc = vec![ZERO; base.len()];
    let mut mass = vec![0.0; base.len()];
    for &(i, j, g) in entries {
        acc[i] = axpy(&acc[i], g, &target.points[j]);
        mass[i] += g;
    }
    acc.iter()
        .zip(&mass)
        .zip(&base.points)
        .map(|((a, &m), p)| if m > 0.0 { scale(a, 1.0 / m) } else { *p })
        .collect()
}

/// `(Σ_i m_i |t1(x_i) - t2(x_i)|²)^{1/2}` for given map values.
pub fn pseudo_wasserstein_from_maps(base: &DiscreteMeasure, t1: &[Vecd], t2: &[Vecd]) -> f64 {
    sqrt(ksum(
        base.weights
            .iter()
            .zip(t1.iter().zip(t2))
            .map(|(w, (a, b))| w * dist2(a, b)),
    ))
}

/// Distance between optimal maps from a common base. In 1-D the maps are the exact
/// rearrangements from the absolutely continuous base, and the integral reduces to the
/// quantile distance of `mu1` and `mu2`.
pub fn pseudo_wasserstein(
    base: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    mu2: &DiscreteMeasure,
) -> Result<f64> {
    if base.weights.iter().any(|w| !(*w > 0.0)) {
        return Err(invalid("base measure needs strictly positive weights"));
    }
    if base.dim == 1 {
        return wasserstein_1d(mu1, mu2);
    }
    let t1 = optimal_map(base, mu1)?;
    let t2 = optimal_map(base, mu2)?;
    Ok(pseudo_wasserstein_from_maps(base, &t1, &t2))
}

/// Generalized geodesic from `mu` (s = 0) to `e` (s = 1) with base `base`.
///
/// In 1-D the interpolant `(1-s) X_mu + s X_e` is built on the common refinement of the
/// quantile functions, one atom per refined piece, so constant speed holds exactly.
pub fn generalized_geodesic(
    base: &DiscreteMeasure,
    mu: &DiscreteMeasure,
    e: &DiscreteMeasure,
    s: f64,
) -> Result<DiscreteMeasure> {
    if !(0.0..=1.0).contains(&s) {
        return Err(invalid("interpolation parameter must lie in [0, 1]"));
    }
    if base.dim == 1 {
        let qm = mu.quantile();
        let qe = e.quantile();
        let mut xs = Vec::new();
        let mut ws = Vec::new();
        Quantile1d::refine([&qm, &qe], |len, a, b| {
            let xm = 0.5 * (a[0] + b[0]);
            let xe = 0.5 * (a[1] + b[1]);
            xs.push((1.0 - s) * xm + s * xe);
            ws.push(len);
        });
        return DiscreteMeasure::normalized(1, xs.iter().map(|&x| [x, 0.0, 0.0]).collect(), ws);
    }
    let tm = optimal_map(base, mu)?;
    let te = optimal_map(base, e)?;
    let pts = tm
        .iter()
        .zip(&te)
        .map(|(a, b)| axpy(&scale(a, 1.0 - s), s, b))
        .collect();
    DiscreteMeasure::new(base.dim, pts, base.weights.clone())
}

/// Density histogram of a 1-D measure on `bins` equal bins of `[lo, hi]`.
pub fn histogram(mu: &DiscreteMeasure, lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let h = (hi - lo) / bins as f64;
    let mut out = vec![0.0; bins];
    for (p, w) in mu.points.iter().zip(&mu.weights) {
        let k = floor((p[0] - lo) / h);
        if k >= 0.0 && (k as usize) < bins {
            out[k as usize] += w / h;
        } else if p[0] == hi {
            out[bins - 1] += w / h;
        }
    }
    out
}

/// Voxel estimate of the Brunn-Minkowski inequality `|A+B|^{1/d} >= |A|^{1/d} + |B|^{1/d}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinkowskiCheck {
    pub vol_a: f64,
    pub vol_b: f64,
    pub vol_sum: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub passed: bool,
}

/// Voxelizes both sample clouds at width `voxel`, forms the Minkowski sum of the voxel
/// sets, and compares with a tolerance of one voxel width per set.
pub fn minkowski_density_check(
    dim: usize,
    a: &[Vecd],
    b: &[Vecd],
    voxel: f64,
) -> Result<MinkowskiCheck> {
    if !(1..=MAX_DIM).contains(&dim) || a.is_empty() || b.is_empty() || !(voxel > 0.0) {
        return Err(invalid(
            "need nonempty clouds, 1 <= dim <= 3 and a positive voxel width",
        ));
    }
    let vox = |cloud: &[Vecd]| -> Vec<[i64; MAX_DIM]> {
        let mut v: Vec<[i64; MAX_DIM]> = cloud
            .iter()
            .map(|p| {
                let mut k = [0i64; MAX_DIM];
                for i in 0..dim {
                    k[i] = floor(p[i] / voxel) as i64;
                }
                k
            })
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let va = vox(a);
    let vb = vox(b);
    let mut lo = [i64::MAX; MAX_DIM];
    let mut hi = [i64::MIN; MAX_DIM];
    for k in &va {
        for i in 0..dim {
            lo[i] = lo[i].min(k[i]);
            hi[i] = hi[i].max(k[i]);
        }
    }
    let mut ext = [1usize; MAX_DIM];
    for i in 0..dim {
        ext[i] = (hi[i] - lo[i] + 1) as usize;
    }
    let mut lo_b = [i64::MAX; MAX_DIM];
    let mut hi_b = [i64::MIN; MAX_DIM];
    for k in &vb {
        for i in 0..dim {
            lo_b[i] = lo_b[i].min(k[i]);
            hi_b[i] = hi_b[i].max(k[i]);
        }
    }
    let mut sext = [1usize; MAX_DIM];
    for i in 0..dim {
        sext[i] = ext[i] + (hi_b[i] - lo_b[i]) as usize;
    }
    let total: usize = sext.iter().product();
    let mut occ = vec![false; total];
    for kb in &vb {
        for ka in &va {
            let mut idx = 0usize;
            for i in (0..dim).rev() {
                let off = (ka[i] - lo[i] + kb[i] - lo_b[i]) as usize;
                idx = idx * sext[i] + off;
            }
            occ[idx] = true;
        }
    }
    let cell = powf(voxel, dim as f64);
    let vol_a = va.len() as f64 * cell;
    let vol_b = vb.len() as f64 * cell;
    let vol_sum = occ.iter().filter(|&&o| o).count() as f64 * cell;
    let inv = 1.0 / dim as f64;
    let lhs = powf(vol_sum, inv);
    let rhs = powf(vol_a, inv) + powf(vol_b, inv);
    Ok(MinkowskiCheck {
        vol_a,
        vol_b,
        vol_sum,
        lhs,
        rhs,
        passed: lhs >= rhs - 2.0 * voxel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn two_point_example() {
        let mu = DiscreteMeasure::line(&[0.0, 1.0], &[0.5, 0.5]).unwrap();
        let nu = DiscreteMeasure::line(&[0.1, 0.9], &[0.5, 0.5]).unwrap();
        let (d, plan) = wasserstein(&mu, &nu).unwrap();
        // the two vertex couplings cost 0.01 and 0.81
        assert_abs_diff_eq!(d, 0.1, epsilon = 1e-14);
        assert!(certify(&mu, &nu, &plan, 1e-12).passed);
    }

    #[test]
    fn identical_measures() {
        let mu = DiscreteMeasure::new(
            2,
            vec![[0.0, 1.0, 0.0], [2.0, 0.5, 0.0], [1.0, 1.0, 0.0]],
            vec![0.2, 0.3, 0.5],
        )
        .unwrap();
        let (d, plan) = wasserstein(&mu, &mu).unwrap();
        assert_eq!(d, 0.0);
        for (i, j, _) in plan.entries {
            assert_eq!(i, j);
        }
    }

    #[test]
    fn integer_mode_agrees() {
        let mu = DiscreteMeasure::line(&[0.0, 0.3, 1.0], &[0.25, 0.25, 0.5]).unwrap();
        let nu = DiscreteMeasure::line(&[0.2, 0.7], &[0.6, 0.4]).unwrap();
        let a = wasserstein(&mu, &nu).unwrap().0;
        let opts = LpOptions {
            mass_bits: Some(100),
            ..LpOptions::default()
        };
        let b = wasserstein_with(&mu, &nu, &opts).unwrap().0;
        assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        assert_abs_diff_eq!(a, wasserstein_1d(&mu, &nu).unwrap(), epsilon = 1e-14);
    }

    #[test]
    fn cap_is_enforced() {
        let mu = DiscreteMeasure::uniform(1, vec![ZERO; 10]).unwrap();
        let opts = LpOptions {
            cap: 50,
            ..LpOptions::default()
        };
        assert!(matches!(
            wasserstein_with(&mu, &mu, &opts),
            Err(Error::SizeCap { .. })
        ));
    }
}
