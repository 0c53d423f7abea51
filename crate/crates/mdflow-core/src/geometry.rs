//! Time-dependent domains, the velocity projection, nearest-point maps and the
//! interior retraction used by the moving-domain minimizing-movement step.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::*;
use crate::{invalid, Error, Result};

/// Signed distance, outward normal, nearest boundary point and boundary normal speed
/// at that point, all evaluated in one pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryQuery {
    pub signed_distance: f64,
    pub normal: Vecd,
    pub foot: Vecd,
    pub speed: f64,
}

pub trait MovingDomain: Send + Sync {
    fn dim(&self) -> usize;
    fn query(&self, x: &Vecd, t: f64) -> BoundaryQuery;
    fn prox_radius(&self) -> f64;
    /// Rate `L` with `d_H(Ω(t), Ω(s)) <= L |t - s|`.
    fn hausdorff_lipschitz(&self) -> f64;
    /// Axis-aligned box containing Ω(t); a finite window for unbounded domains.
    fn bounding_box(&self, t: f64) -> (Vecd, Vecd);
    fn is_convex(&self) -> bool;
    /// Constant `C` with `|c(x,t)| <= C (1 + |x|)`.
    fn speed_bound(&self) -> f64;

    fn signed_distance(&self, x: &Vecd, t: f64) -> f64 {
        self.query(x, t).signed_distance
    }
    fn outward_normal(&self, x: &Vecd, t: f64) -> Vecd {
        self.query(x, t).normal
    }
    fn boundary_speed(&self, x: &Vecd, t: f64) -> f64 {
        self.query(x, t).speed
    }
    fn closest_boundary_point(&self, x: &Vecd, t: f64) -> Vecd {
        self.query(x, t).foot
    }
    /// Membership of the closure, up to the boundary band.
    fn contains(&self, x: &Vecd, t: f64) -> bool {
        self.signed_distance(x, t) <= self.boundary_band(t)
    }
    fn boundary_band(&self, t: f64) -> f64 {
        let (lo, hi) = self.bounding_box(t);
        1e-9 * dist(&lo, &hi).max(1.0)
    }
    /// Cheap test for `signed_distance < -margin`; domains without a closed form may
    /// answer from a bound and skip the full nearest-point search.
    fn deep_inside(&self, x: &Vecd, t: f64, margin: f64) -> bool {
        self.signed_distance(x, t) < -margin
    }
    fn is_stationary(&self) -> bool {
        self.hausdorff_lipschitz() == 0.0
    }
    /// The map `Q^t`: points at depth below `r_p / 2` are pushed to depth `r_p / 2`
    /// along the signed-distance gradient, deeper points are fixed.
    fn inner_point(&self, x: &Vecd, t: f64) -> Vecd {
        let half = 0.5 * self.prox_radius();
        let q = self.query(x, t);
        let depth = -q.signed_distance;
        if depth >= half {
            *x
        } else {
            axpy(x, -(half - depth), &q.normal)
        }
    }
}

/// `v` if `v·n <= c`, otherwise `v - (v·n) n + c n`.
#[inline]
pub fn project_with(v: &Vecd, n: &Vecd, c: f64) -> Vecd {
    let vn = dot(v, n);
    if vn <= c {
        *v
    } else {
        axpy(v, c - vn, n)
    }
}

/// Projected velocity at `x`: identity in the interior, normal component capped by the
/// boundary speed inside the boundary band.
pub fn project_velocity<D: MovingDomain + ?Sized>(
    v: &Vecd,
    x: &Vecd,
    t: f64,
    dom: &D,
) -> Result<Vecd> {
    let band = dom.boundary_band(t);
    if dom.deep_inside(x, t, band) {
        return Ok(*v);
    }
    let q = dom.query(x, t);
    if q.signed_distance > band {
        return Err(Error::DomainViolation {
            distance: q.signed_distance,
            band,
        });
    }
    if q.signed_distance < -band {
        return Ok(*v);
    }
    Ok(project_with(v, &q.normal, q.speed))
}

/// Nearest point of the closure of Ω(t); identity inside.
pub fn project_point<D: MovingDomain + ?Sized>(x: &Vecd, t: f64, dom: &D) -> Result<Vecd> {
    if dom.deep_inside(x, t, 0.0) {
        return Ok(*x);
    }
    let q = dom.query(x, t);
    if q.signed_distance <= 0.0 {
        return Ok(*x);
    }
    if q.signed_distance >= dom.prox_radius() {
        return Err(Error::AmbiguousProjection {
            distance: q.signed_distance,
            prox_radius: dom.prox_radius(),
        });
    }
    Ok(q.foot)
}

/// `(1 - θ) x + θ Q^t(x)` with `θ = 3 L τ / r_p`.
pub fn retraction_map<D: MovingDomain + ?Sized>(
    x: &Vecd,
    t: f64,
    tau: f64,
    dom: &D,
) -> Result<Vecd> {
    let theta = retraction_theta(dom, tau)?;
    if theta == 0.0 {
        return Ok(*x);
    }
    let q = dom.inner_point(x, t);
    Ok(axpy(&scale(x, 1.0 - theta), theta, &q))
}

pub fn retraction_theta<D: MovingDomain + ?Sized>(dom: &D, tau: f64) -> Result<f64> {
    let theta = 3.0 * dom.hausdorff_lipschitz() * tau / dom.prox_radius();
    if theta >= 1.0 {
        return Err(Error::StepSize(alloc::format!(
            "3 L tau / r_p = {theta:.3} must be below 1"
        )));
    }
    Ok(theta)
}

/// Ball with linear radius schedule `R(t) = r0 + rate * t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    pub dim: usize,
    pub center: Vecd,
    pub r0: f64,
    pub rate: f64,
    pub prox: f64,
}

impl Ball {
    pub fn new(dim: usize, center: Vecd, radius: f64) -> Result<Self> {
        Self::moving(dim, center, radius, 0.0, radius)
    }

    pub fn moving(dim: usize, center: Vecd, r0: f64, rate: f64, prox: f64) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::Dimension {
                expected: MAX_DIM,
                got: dim,
            });
        }
        if !(r0 > 0.0) || !(prox > 0.0) {
            return Err(invalid("ball radius and prox radius must be positive"));
        }
        Ok(Ball {
            dim,
            center,
            r0,
            rate,
            prox,
        })
    }

    pub fn radius(&self, t: f64) -> f64 {
        (self.r0 + self.rate * t).max(0.0)
    }
}

impl MovingDomain for Ball {
    fn dim(&self) -> usize {
        self.dim
    }
    fn query(&self, x: &Vecd, t: f64) -> BoundaryQuery {
        let r = self.radius(t);
        let d = sub(x, &self.center);
        let len = norm(&d);
        let normal = if len > 0.0 {
            scale(&d, 1.0 / len)
        } else {
            [1.0, 0.0, 0.0]
        };
        BoundaryQuery {
            signed_distance: len - r,
            normal,
            foot: axpy(&self.center, r, &normal),
            speed: self.rate,
        }
    }
    fn prox_radius(&self) -> f64 {
        self.prox
    }
    fn hausdorff_lipschitz(&self) -> f64 {
        self.rate.abs()
    }
    fn bounding_box(&self, t: f64) -> (Vecd, Vecd) {
        let r = self.radius(t);
        let mut lo = self.center;
        let mut hi = self.center;
        for i in 0..self.dim {
            lo[i] -= r;
            hi[i] += r;
        }
        (lo, hi)
    }
    fn is_convex(&self) -> bool {
        true
    }
    fn speed_bound(&self) -> f64 {
        self.rate.abs()
    }
}

/// Axis-aligned box (an interval for `dim = 1`) whose faces move at constant speed.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    pub dim: usize,
    pub lo0: Vecd,
    pub hi0: Vecd,
    pub vlo: Vecd,
    pub vhi: Vecd,
    pub prox: f64,
}

impl BoxDomain {
    pub fn new(dim: usize, lo: Vecd, hi: Vecd) -> Result<Self> {
        Self::moving(dim, lo, hi, ZERO, ZERO, None)
    }

    pub fn interval(a: f64, b: f64) -> Result<Self> {
        Self::new(1, [a, 0.0, 0.0], [b, 0.0, 0.0])
    }

    /// Faces move as `lo(t) = lo0 + vlo t`, `hi(t) = hi0 + vhi t`. The prox radius
    /// defaults to half the smallest initial width.
    pub fn moving(
        dim: usize,
        lo0: Vecd,
        hi0: Vecd,
        vlo: Vecd,
        vhi: Vecd,
        prox: Option<f64>,
    ) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::Dimension {
                expected: MAX_DIM,
                got: dim,
            });
        }
        let mut wmin = f64::INFINITY;
        for i in 0..dim {
            let w = hi0[i] - lo0[i];
            if !(w > 0.0) {
                return Err(invalid("box must have positive width on every axis"));
            }
            wmin = wmin.min(w);
        }
        let prox = prox.unwrap_or(0.5 * wmin);
        if !(prox > 0.0) {
            return Err(invalid("prox radius must be positive"));
        }
        Ok(BoxDomain {
            dim,
            lo0,
            hi0,
            vlo,
            vhi,
            prox,
        })
    }

    pub fn lo(&self, t: f64) -> Vecd {
        axpy(&self.lo0, t, &self.vlo)
    }
    pub fn hi(&self, t: f64) -> Vecd {
        axpy(&self.hi0, t, &self.vhi)
    }

    fn face_velocity(&self, i: usize, upper: bool) -> f64 {
        if upper {
            self.vhi[i]
        } else {
            self.vlo[i]
        }
    }
}

impl MovingDomain for BoxDomain {
    fn dim(&self) -> usize {
        self.dim
    }
    fn query(&self, x: &Vecd, t: f64) -> BoundaryQuery {
        let lo = self.lo(t);
        let hi = self.hi(t);
        let mut outside = false;
        let mut foot = *x;
        for i in 0..self.dim {
            if x[i] < lo[i] {
                foot[i] = lo[i];
                outside = true;
            } else if x[i] > hi[i] {
                foot[i] = hi[i];
                outside = true;
            }
        }
        if outside {
            let d = sub(x, &foot);
            let len = norm(&d);
            let normal = scale(&d, 1.0 / len);
            let mut speed = 0.0;
            for i in 0..self.dim {
                if normal[i] != 0.0 {
                    speed += normal[i] * self.face_velocity(i, normal[i] > 0.0);
                }
            }
            return BoundaryQuery {
                signed_distance: len,
                normal,
                foot,
                speed,
            };
        }
        let mut best = f64::NEG_INFINITY;
        let mut axis = 0;
        let mut upper = false;
        for i in 0..self.dim {
            let dl = lo[i] - x[i];
            let du = x[i] - hi[i];
            if dl > best {
                best = dl;
                axis = i;
                upper = false;
            }
            if du > best {
                best = du;
                axis = i;
                upper = true;
            }
        }
        let mut normal = ZERO;
        normal[axis] = if upper { 1.0 } else { -1.0 };
        foot[axis] = if upper { hi[axis] } else { lo[axis] };
        let speed = if upper {
            self.vhi[axis]
        } else {
            -self.vlo[axis]
        };
        BoundaryQuery {
            signed_distance: best,
            normal,
            foot,
            speed,
        }
    }
    fn prox_radius(&self) -> f64 {
        self.prox
    }
    fn hausdorff_lipschitz(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            let m = self.vlo[i].abs().max(self.vhi[i].abs());
            s += m * m;
        }
        sqrt(s)
    }
    fn bounding_box(&self, t: f64) -> (Vecd, Vecd) {
        (self.lo(t), self.hi(t))
    }
    fn is_convex(&self) -> bool {
        true
    }
    fn speed_bound(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.dim {
            m = m.max(self.vlo[i].abs()).max(self.vhi[i].abs());
        }
        m
    }
    /// Clamp into the inner parallel box; the signed-distance gradient is not unique at
    /// corners, so the smooth formula does not apply there.
    fn inner_point(&self, x: &Vecd, t: f64) -> Vecd {
        let half = 0.5 * self.prox;
        let lo = self.lo(t);
        let hi = self.hi(t);
        let mut q = *x;
        for i in 0..self.dim {
            let a = lo[i] + half;
            let b = hi[i] - half;
            q[i] = if a <= b {
                x[i].clamp(a, b)
            } else {
                0.5 * (lo[i] + hi[i])
            };
        }
        q
    }
}

/// Half-space `{x : a·x <= b0 + vb t}` with unit `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace {
    pub dim: usize,
    pub a: Vecd,
    pub b0: f64,
    pub vb: f64,
    pub prox: f64,
    /// Half-width of the reporting window used as bounding box.
    pub window: f64,
}

impl HalfSpace {
    pub fn new(dim: usize, a: Vecd, b0: f64, vb: f64, prox: f64) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::Dimension {
                expected: MAX_DIM,
                got: dim,
            });
        }
        let len = norm(&a);
        if !(len > 0.0) || !(prox > 0.0) {
            return Err(invalid(
                "half-space needs a nonzero normal and positive prox radius",
            ));
        }
        Ok(HalfSpace {
            dim,
            a: scale(&a, 1.0 / len),
            b0: b0 / len,
            vb: vb / len,
            prox,
            window: 10.0,
        })
    }
}

impl MovingDomain for HalfSpace {
    fn dim(&self) -> usize {
        self.dim
    }
    fn query(&self, x: &Vecd, t: f64) -> BoundaryQuery {
        let sd = dot(&self.a, x) - (self.b0 + self.vb * t);
        BoundaryQuery {
            signed_distance: sd,
            normal: self.a,
            foot: axpy(x, -sd, &self.a),
            speed: self.vb,
        }
    }
    fn prox_radius(&self) -> f64 {
        self.prox
    }
    fn hausdorff_lipschitz(&self) -> f64 {
        self.vb.abs()
    }
    fn bounding_box(&self, _t: f64) -> (Vecd, Vecd) {
        let mut lo = ZERO;
        let mut hi = ZERO;
        for i in 0..self.dim {
            lo[i] = -self.window;
            hi[i] = self.window;
        }
        (lo, hi)
    }
    fn is_convex(&self) -> bool {
        true
    }
    fn speed_bound(&self) -> f64 {
        self.vb.abs()
    }
}

/// Stationary epigraph `{(x, y) : y >= cos(2πx)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineEpigraph {
    pub prox: f64,
    pub x_window: (f64, f64),
    pub y_max: f64,
}

impl Default for CosineEpigraph {
    fn default() -> Self {
        CosineEpigraph {
            prox: cosine_min_curvature_radius(),
            x_window: (-2.0, 130.0),
            y_max: 3.0,
        }
    }
}

/// Smallest curvature radius of the graph of `cos(2πx)`, attained at the crests.
pub fn cosine_min_curvature_radius() -> f64 {
    1.0 / (4.0 * PI * PI)
}

#[inline]
fn g(s: f64) -> f64 {
    cos(2.0 * PI * s)
}
#[inline]
fn gp(s: f64) -> f64 {
    -2.0 * PI * sin(2.0 * PI * s)
}

impl CosineEpigraph {
    pub fn new(prox: f64) -> Result<Self> {
        if !(prox > 0.0) {
            return Err(invalid("prox radius must be positive"));
        }
        Ok(CosineEpigraph {
            prox,
            ..Default::default()
        })
    }

    /// Graph parameter of the nearest boundary point to `(x, y)`.
    pub fn nearest_parameter(&self, x: f64, y: f64) -> f64 {
        let r = abs(y - g(x));
        if r == 0.0 {
            return x;
        }
        let f = |s: f64| {
            let a = s - x;
            let b = g(s) - y;
            0.5 * (a * a + b * b)
        };
        let df = |s: f64| (s - x) + gp(s) * (g(s) - y);
        let n = ((2.0 * r / 0.004) as usize).max(8);
        let step = 2.0 * r / n as f64;
        let mut best = x;
        let mut fbest = f(x);
        for k in 0..=n {
            let s = x - r + step * k as f64;
            let fs = f(s);
            if fs < fbest {
                fbest = fs;
                best = s;
            }
        }
        let mut lo = best - step;
        let mut hi = best + step;
        if df(lo) > 0.0 || df(hi) < 0.0 {
            // the scan landed on an endpoint of a flat stretch; keep the sample
            return best;
        }
        let mut s = best;
        for _ in 0..100 {
            let d1 = df(s);
            if d1 > 0.0 {
                hi = s;
            } else {
                lo = s;
            }
            let d2 = 1.0 + gp(s) * gp(s) + (-4.0 * PI * PI * g(s)) * (g(s) - y);
            let mut next = if d2 > 0.0 {
                s - d1 / d2
            } else {
                0.5 * (lo + hi)
            };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if abs(next - s) <= 1e-15 * (1.0 + abs(s)) || hi - lo <= 4e-16 * (1.0 + abs(s)) {
                s = next;
                break;
            }
            s = next;
        }
        s
    }
}

impl MovingDomain for CosineEpigraph {
    fn dim(&self) -> usize {
        2
    }
    fn query(&self, p: &Vecd, _t: f64) -> BoundaryQuery {
        let s = self.nearest_parameter(p[0], p[1]);
        let foot = [s, g(s), 0.0];
        let slope = gp(s);
        let len = sqrt(1.0 + slope * slope);
        let normal = [slope / len, -1.0 / len, 0.0];
        let d = dist(p, &foot);
        let inside = p[1] >= g(p[0]);
        BoundaryQuery {
            signed_distance: if inside { -d } else { d },
            normal,
            foot,
            speed: 0.0,
        }
    }
    fn prox_radius(&self) -> f64 {
        self.prox
    }
    fn hausdorff_lipschitz(&self) -> f64 {
        0.0
    }
    fn bounding_box(&self, _t: f64) -> (Vecd, Vecd) {
        (
            [self.x_window.0, -1.0, 0.0],
            [self.x_window.1, self.y_max, 0.0],
        )
    }
    fn is_convex(&self) -> bool {
        false
    }
    fn speed_bound(&self) -> f64 {
        0.0
    }
    fn boundary_band(&self, _t: f64) -> f64 {
        1e-9
    }
    fn deep_inside(&self, p: &Vecd, _t: f64, margin: f64) -> bool {
        // vertical gap over the steepest slope bounds the distance from below
        let gap = p[1] - g(p[0]);
        gap > 0.0 && gap > margin * sqrt(1.0 + 4.0 * PI * PI) * (1.0 + 1e-12) + 1e-300
    }
}

/// Convex polytope `{x : a_k·x <= b_k + s_k t}` with unit rows `a_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    pub dim: usize,
    pub normals: Vec<Vecd>,
    pub b0: Vec<f64>,
    pub speeds: Vec<f64>,
    pub prox: f64,
    lipschitz: f64,
}

struct Candidate {
    point: Vecd,
    lambda: [f64; MAX_DIM],
    faces: [usize; MAX_DIM],
    k: usize,
}

impl Polytope {
    /// Rows are normalized on input. The polytope must be bounded with nonempty interior
    /// at `t = 0`; the prox radius defaults to the smallest slack of the vertex centroid.
    pub fn new(
        dim: usize,
        normals: Vec<Vecd>,
        b0: Vec<f64>,
        speeds: Vec<f64>,
        prox: Option<f64>,
    ) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::Dimension {
                expected: MAX_DIM,
                got: dim,
            });
        }
        if normals.len() != b0.len() || normals.len() != speeds.len() || normals.len() < dim + 1 {
            return Err(invalid(
                "polytope needs at least dim+1 faces with matching offsets and speeds",
            ));
        }
        let mut rows = Vec::with_capacity(normals.len());
        let mut bs = Vec::with_capacity(normals.len());
        let mut ss = Vec::with_capacity(normals.len());
        for k in 0..normals.len() {
            let len = norm(&normals[k]);
            if !(len > 0.0) {
                return Err(invalid("polytope face normal is zero"));
            }
            rows.push(scale(&normals[k], 1.0 / len));
            bs.push(b0[k] / len);
            ss.push(speeds[k] / len);
        }
        let mut p = Polytope {
            dim,
            normals: rows,
            b0: bs,
            speeds: ss,
            prox: 1.0,
            lipschitz: 0.0,
        };
        let verts = p.vertices(0.0);
        if verts.len() < dim + 1 {
            return Err(invalid("polytope is empty or degenerate"));
        }
        let mut lip: f64 = 0.0;
        for (_, v) in &verts {
            lip = lip.max(norm(v));
        }
        p.lipschitz = lip;
        let c = p.center(0.0);
        let slack = p.min_slack(&c, 0.0);
        if !(slack > 0.0) {
            return Err(invalid("polytope has empty interior"));
        }
        p.prox = prox.unwrap_or(slack);
        if !(p.prox > 0.0) {
            return Err(invalid("prox radius must be positive"));
        }
        Ok(p)
    }

    fn b(&self, k: usize, t: f64) -> f64 {
        self.b0[k] + self.speeds[k] * t
    }

    fn slack(&self, k: usize, x: &Vecd, t: f64) -> f64 {
        self.b(k, t) - dot(&self.normals[k], x)
    }

    fn min_slack(&self, x: &Vecd, t: f64) -> f64 {
        (0..self.normals.len())
            .map(|k| self.slack(k, x, t))
            .fold(f64::INFINITY, f64::min)
    }

    /// Solves `Gram(S) λ = rhs` for the face subset `S`.
    fn gram_solve(&self, faces: &[usize], rhs: &[f64]) -> Option<[f64; MAX_DIM]> {
        let k = faces.len();
        let mut a = [0.0; MAX_DIM * MAX_DIM];
        for i in 0..k {
            for j in 0..k {
                a[i * k + j] = dot(&self.normals[faces[i]], &self.normals[faces[j]]);
            }
        }
        let mut b = [0.0; MAX_DIM];
        b[..k].copy_from_slice(rhs);
        if !cholesky_solve(&mut a[..k * k], k, &mut b[..k]) {
            return None;
        }
        // reject nearly dependent face sets
        for v in b.iter().take(k) {
            if !v.is_finite() || abs(*v) > 1e12 {
                return None;
            }
        }
        Some(b)
    }

    fn subsets(&self, max_size: usize, mut f: impl FnMut(&[usize])) {
        let m = self.normals.len();
        let mut idx = [0usize; MAX_DIM];
        fn rec(
            m: usize,
            size: usize,
            pos: usize,
            start: usize,
            idx: &mut [usize; MAX_DIM],
            f: &mut dyn FnMut(&[usize]),
        ) {
            if pos == size {
                f(&idx[..size]);
                return;
            }
            for i in start..m {
                idx[pos] = i;
                rec(m, size, pos + 1, i + 1, idx, f);
            }
        }
        for size in 1..=max_size {
            rec(m, size, 0, 0, &mut idx, &mut f);
        }
    }

    /// Vertices at time `t` with their velocities.
    pub fn vertices(&self, t: f64) -> Vec<(Vecd, Vecd)> {
        let mut out: Vec<(Vecd, Vecd)> = Vec::new();
        let d = self.dim;
        let mut sets: Vec<[usize; MAX_DIM]> = Vec::new();
        self.subsets(d, |s| {
            if s.len() == d {
                let mut a = [0usize; MAX_DIM];
                a[..d].copy_from_slice(s);
                sets.push(a);
            }
        });
        for s in sets {
            let faces = &s[..d];
            let mut rhs = [0.0; MAX_DIM];
            let mut srhs = [0.0; MAX_DIM];
            for (i, &k) in faces.iter().enumerate() {
                rhs[i] = self.b(k, t);
                srhs[i] = self.speeds[k];
            }
            let (Some(l), Some(ls)) = (
                self.gram_solve(faces, &rhs[..d]),
                self.gram_solve(faces, &srhs[..d]),
            ) else {
                continue;
            };
            let mut p = ZERO;
            let mut v = ZERO;
            for (i, &k) in faces.iter().enumerate() {
                p = axpy(&p, l[i], &self.normals[k]);
                v = axpy(&v, ls[i], &self.normals[k]);
            }
            let scale_ref = 1.0 + norm(&p);
            if self.min_slack(&p, t) >= -1e-9 * scale_ref
                && !out.iter().any(|(q, _)| dist(q, &p) <= 1e-9 * scale_ref)
            {
                out.push((p, v));
            }
        }
        out
    }

    /// Vertex centroid, used as the inner anchor of the retraction.
    pub fn center(&self, t: f64) -> Vecd {
        let v = self.vertices(t);
        let mut c = ZERO;
        for (p, _) in &v {
            c = add(&c, p);
        }
        scale(&c, 1.0 / v.len().max(1) as f64)
    }

    fn exterior_projection(&self, x: &Vecd, t: f64) -> Candidate {
        let mut best: Option<(f64, Candidate)> = None;
        let tol = 1e-10 * (1.0 + norm(x));
        self.subsets(self.dim, |faces| {
            let k = faces.len();
            let mut rhs = [0.0; MAX_DIM];
            for (i, &f) in faces.iter().enumerate() {
                rhs[i] = dot(&self.normals[f], x) - self.b(f, t);
            }
            let Some(l) = self.gram_solve(faces, &rhs[..k]) else {
                return;
            };
            if l[..k].iter().any(|&v| v < -tol) {
                return;
            }
            let mut p = *x;
            for (i, &f) in faces.iter().enumerate() {
                p = axpy(&p, -l[i], &self.normals[f]);
            }
            if self.min_slack(&p, t) < -tol {
                return;
            }
            let d = dist2(x, &p);
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                let mut fs = [0usize; MAX_DIM];
                fs[..k].copy_from_slice(faces);
                best = Some((
                    d,
                    Candidate {
                        point: p,
                        lambda: l,
                        faces: fs,
                        k,
                    },
                ));
            }
        });
        best.map(|(_, c)| c).unwrap_or(Candidate {
            point: *x,
            lambda: [0.0; MAX_DIM],
            faces: [0; MAX_DIM],
            k: 0,
        })
    }
}

impl MovingDomain for Polytope {
    fn dim(&self) -> usize {
        self.dim
    }
    fn query(&self, x: &Vecd, t: f64) -> BoundaryQuery {
        let m = self.normals.len();
        let mut kmin = 0;
        let mut smin = f64::INFINITY;
        for k in 0..m {
            let s = self.slack(k, x, t);
            if s < smin {
                smin = s;
                kmin = k;
            }
        }
        if smin >= 0.0 {
            return BoundaryQuery {
                signed_distance: -smin,
                normal: self.normals[kmin],
                foot: axpy(x, smin, &self.normals[kmin]),
                speed: self.speeds[kmin],
            };
        }
        let c = self.exterior_projection(x, t);
        let d = dist(x, &c.point);
        let normal = scale(&sub(x, &c.point), 1.0 / d);
        let mut speed = 0.0;
        for i in 0..c.k {
            speed += c.lambda[i] * self.speeds[c.faces[i]];
        }
        BoundaryQuery {
            signed_distance: d,
            normal,
            foot: c.point,
            speed: speed / d,
        }
    }
    fn prox_radius(&self) -> f64 {
        self.prox
    }
    fn hausdorff_lipschitz(&self) -> f64 {
        self.lipschitz
    }
    fn bounding_box(&self, t: f64) -> (Vecd, Vecd) {
        let mut lo = [f64::INFINITY; MAX_DIM];
        let mut hi = [f64::NEG_INFINITY; MAX_DIM];
        for (p, _) in self.vertices(t) {
            for i in 0..self.dim {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        for i in self.dim..MAX_DIM {
            lo[i] = 0.0;
            hi[i] = 0.0;
        }
        (lo, hi)
    }
    fn is_convex(&self) -> bool {
        true
    }
    fn speed_bound(&self) -> f64 {
        self.speeds.iter().fold(0.0, |m: f64, s| m.max(s.abs()))
    }
    /// Moves toward the vertex centroid until every face slack reaches `r_p / 2`.
    fn inner_point(&self, x: &Vecd, t: f64) -> Vecd {
        let half = 0.5 * self.prox;
        let c = self.center(t);
        let mut theta: f64 = 0.0;
        for k in 0..self.normals.len() {
            let sx = self.slack(k, x, t);
            if sx < half {
                let sc = self.slack(k, &c, t);
                theta = if sc > sx {
                    theta.max((half - sx) / (sc - sx))
                } else {
                    1.0
                };
            }
        }
        axpy(x, theta.min(1.0), &sub(&c, x))
    }
}

/// Catalog of concrete domains.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Ball(Ball),
    Box(BoxDomain),
    HalfSpace(HalfSpace),
    Cosine(CosineEpigraph),
    Polytope(Polytope),
}

macro_rules! delegate {
    ($self:ident, $d:ident => $e:expr) => {
        match $self {
            Domain::Ball($d) => $e,
            Domain::Box($d) => $e,
            Domain::HalfSpace($d) => $e,
            Domain::Cosine($d) => $e,
            Domain::Polytope($d) => $e,
        }
    };
}

impl MovingDomain for Domain {
    fn dim(&self) -> usize {
        delegate!(self, d => d.dim())
    }
    fn query(&self, x: &Vecd, t: f64) -> BoundaryQuery {
        delegate!(self, d => d.query(x, t))
    }
    fn prox_radius(&self) -> f64 {
        delegate!(self, d => d.prox_radius())
    }
    fn hausdorff_lipschitz(&self) -> f64 {
        delegate!(self, d => d.hausdorff_lipschitz())
    }
    fn bounding_box(&self, t: f64) -> (Vecd, Vecd) {
        delegate!(self, d => d.bounding_box(t))
    }
    fn is_convex(&self) -> bool {
        delegate!(self, d => d.is_convex())
    }
    fn speed_bound(&self) -> f64 {
        delegate!(self, d => d.speed_bound())
    }
    fn boundary_band(&self, t: f64) -> f64 {
        delegate!(self, d => d.boundary_band(t))
    }
    fn deep_inside(&self, x: &Vecd, t: f64, margin: f64) -> bool {
        delegate!(self, d => d.deep_inside(x, t, margin))
    }
    fn inner_point(&self, x: &Vecd, t: f64) -> Vecd {
        delegate!(self, d => d.inner_point(x, t))
    }
}

/// Outcome of [`validate_domain`].
#[derive(Debug, Clone, PartialEq)]
pub struct DomainReport {
    /// Largest `r_p ⟨n(x), y - x⟩ / |y - x|²` over sampled boundary/interior pairs; at most 1 when prox-regular.
    pub worst_prox_ratio: f64,
    pub lipschitz_estimate: f64,
    pub declared_lipschitz: f64,
    /// Largest `| |∇sd| - 1 |` over collar samples.
    pub gradient_defect_max: f64,
    /// Largest `|∇sd - n|` over collar samples.
    pub normal_defect_max: f64,
    /// Fraction of collar samples whose normal defect exceeds 1e-3 (kinks of the distance function).
    pub normal_defect_fraction: f64,
    /// Largest `|c(x,t)| / (1 + |x|)` seen.
    pub speed_growth: f64,
    pub pairs_checked: usize,
    pub collar_samples: usize,
    pub passed: bool,
}

fn random_in_box(rng: &mut ChaCha8Rng, lo: &Vecd, hi: &Vecd, dim: usize) -> Vecd {
    let mut x = ZERO;
    for i in 0..dim {
        x[i] = lo[i] + (hi[i] - lo[i]) * rng.random::<f64>();
    }
    x
}

/// Samples the domain at every time of `t_grid` and checks prox-regularity, the declared
/// Hausdorff rate, consistency of normals with the signed distance, and speed growth.
pub fn validate_domain<D: MovingDomain + ?Sized>(
    dom: &D,
    t_grid: &[f64],
    sample_count: usize,
    seed: u64,
) -> DomainReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = dom.dim();
    let rp = dom.prox_radius();
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut pairs = 0usize;
    let mut grad_max: f64 = 0.0;
    let mut normal_max: f64 = 0.0;
    let mut bad_normals = 0usize;
    let mut collar = 0usize;
    let mut speed_growth: f64 = 0.0;
    let mut lip_est: f64 = 0.0;
    let mut prev_feet: Vec<Vecd> = Vec::new();

    for (ti, &t) in t_grid.iter().enumerate() {
        let (mut lo, mut hi) = dom.bounding_box(t);
        let mut scale_len: f64 = 0.0;
        for i in 0..dim {
            scale_len = scale_len.max(hi[i] - lo[i]);
        }
        let pad = 0.25 * rp.min(scale_len);
        for i in 0..dim {
            lo[i] -= pad;
            hi[i] += pad;
        }
        let mut feet: Vec<Vecd> = Vec::new();
        let per_t = sample_count.max(1);
        let mut attempts = 0;
        while feet.len() < per_t && attempts < 50 * per_t {
            attempts += 1;
            let z = random_in_box(&mut rng, &lo, &hi, dim);
            let q = dom.query(&z, t);
            if abs(q.signed_distance) >= 0.5 * rp.min(scale_len) {
                continue;
            }
            feet.push(q.foot);
            speed_growth = speed_growth.max(abs(q.speed) / (1.0 + norm(&q.foot)));

            // prox pairs: interior points at several scales around the foot
            let nq = dom.query(&q.foot, t).normal;
            for s in [0.05, 0.3, 1.0, 3.0] {
                let mut y = q.foot;
                for i in 0..dim {
                    y[i] += s * rp * (2.0 * rng.random::<f64>() - 1.0);
                }
                if dom.signed_distance(&y, t) < 0.0 {
                    let d = sub(&y, &q.foot);
                    let l2 = norm2(&d);
                    if l2 > 0.0 {
                        worst = worst.max(rp * dot(&nq, &d) / l2);
                        pairs += 1;
                    }
                }
            }

            // finite-difference gradient of the signed distance in the collar
            let hstep = 1e-6 * rp.min(1.0);
            let mut grad = ZERO;
            for i in 0..dim {
                let mut a = z;
                let mut b = z;
                a[i] += hstep;
                b[i] -= hstep;
                grad[i] = (dom.signed_distance(&a, t) - dom.signed_distance(&b, t)) / (2.0 * hstep);
            }
            collar += 1;
            grad_max = grad_max.max(abs(norm(&grad) - 1.0));
            let nd = dist(&grad, &q.normal);
            if nd > 1e-3 {
                bad_normals += 1;
            }
            normal_max = normal_max.max(nd);
        }
        if ti > 0 {
            let dt = t - t_grid[ti - 1];
            if dt > 0.0 {
                let mut h: f64 = 0.0;
                for f in &prev_feet {
                    h = h.max(abs(dom.signed_distance(f, t)));
                }
                for f in &feet {
                    h = h.max(abs(dom.signed_distance(f, t_grid[ti - 1])));
                }
                lip_est = lip_est.max(h / dt);
            }
        }
        prev_feet = feet;
    }

    let declared = dom.hausdorff_lipschitz();
    let frac = if collar > 0 {
        bad_normals as f64 / collar as f64
    } else {
        0.0
    };
    let prox_ok = worst <= 1.0 + 1e-6;
    let lip_ok = lip_est <= declared * (1.0 + 1e-6) + 1e-9;
    let speed_ok = speed_growth <= dom.speed_bound() * (1.0 + 1e-9) + 1e-12;
    DomainReport {
        worst_prox_ratio: if pairs > 0 { worst } else { 0.0 },
        lipschitz_estimate: lip_est,
        declared_lipschitz: declared,
        gradient_defect_max: grad_max,
        normal_defect_max: normal_max,
        normal_defect_fraction: frac,
        speed_growth,
        pairs_checked: pairs,
        collar_samples: collar,
        passed: prox_ok && lip_ok && speed_ok && frac <= 0.01,
    }
}

/// `E(w) = w·P(w) - ½|P(w)|²` for the projection with normal `n` and speed `c`.
pub fn boundary_energy_density(w: &Vecd, n: &Vecd, c: f64) -> f64 {
    let p = project_with(w, n, c);
    dot(w, &p) - 0.5 * norm2(&p)
}
