//! JSON scenario files and their translation into core objects.

use std::path::Path;

use mdflow_core::geometry::{
    Ball, BoxDomain, CosineEpigraph, Domain, HalfSpace, MovingDomain, Polytope,
};
use mdflow_core::jko::{Grid, GridMeasure, InnerSolver};
use mdflow_core::linalg::{vec_from, Vecd, ZERO};
use mdflow_core::particles::{
    chain_ensemble, uniform_ball, MassLaw, ParticleEnsemble, SpeedMetric,
};
use mdflow_core::potentials::{Potential, PotentialPair};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{io_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub domain: DomainSpec,
    pub potentials: PotentialsSpec,
    pub initial: InitialSpec,
    pub solver: SolverSpec,
    pub schedule: Schedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    /// Radius `radius + rate t`.
    Ball {
        center: Vec<f64>,
        radius: f64,
        #[serde(default)]
        rate: f64,
        #[serde(default)]
        prox: Option<f64>,
    },
    /// Faces at `lo + vlo t` and `hi + vhi t`.
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
        #[serde(default)]
        vlo: Option<Vec<f64>>,
        #[serde(default)]
        vhi: Option<Vec<f64>>,
        #[serde(default)]
        prox: Option<f64>,
    },
    /// `{x : normal·x <= offset + speed t}`.
    HalfSpace {
        normal: Vec<f64>,
        offset: f64,
        #[serde(default)]
        speed: f64,
        #[serde(default)]
        prox: Option<f64>,
    },
    /// Epigraph of `cos(2πx)` in the plane.
    Cosine {
        #[serde(default)]
        prox: Option<f64>,
    },
    /// `{x : n_i·x <= b_i + s_i t}`.
    Polytope {
        normals: Vec<Vec<f64>>,
        offsets: Vec<f64>,
        #[serde(default)]
        speeds: Option<Vec<f64>>,
        #[serde(default)]
        prox: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum PotentialSpec {
    #[default]
    Zero,
    Quadratic {
        a: f64,
        #[serde(default)]
        center: Vec<f64>,
    },
    Saddle,
    Gaussian {
        c: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialsSpec {
    #[serde(rename = "V")]
    pub v: PotentialSpec,
    #[serde(rename = "W", default)]
    pub w: PotentialSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainPerturbation {
    pub n: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Particles {
        points: Vec<Vec<f64>>,
        #[serde(default)]
        masses: Option<Vec<f64>>,
    },
    UniformBall {
        n: usize,
        center: Vec<f64>,
        radius: f64,
    },
    ExponentialChain {
        j_max: usize,
        #[serde(default)]
        perturbation: Option<ChainPerturbation>,
    },
    PowerChain {
        beta: f64,
        j_max: usize,
        #[serde(default)]
        perturbation: Option<ChainPerturbation>,
    },
    /// Density on the solver grid; particle solvers sample it with `particles` atoms.
    Density {
        profile: ProfileSpec,
        #[serde(default)]
        particles: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    Uniform,
    /// `exp(-|x - center|² / (2 sigma²)) + floor`
    Gaussian {
        center: Vec<f64>,
        sigma: f64,
        #[serde(default)]
        floor: f64,
    },
    /// All mass in the cell containing `at`.
    Spike {
        at: Vec<f64>,
    },
    /// `exp(-V / eps)` for the scenario's confinement.
    Gibbs {
        eps: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MetricSpec {
    #[default]
    Exact,
    Pairing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InnerSpec {
    #[default]
    Auto,
    Exact1d,
    Entropic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Cell count along the first axis; the cell size follows from the extent.
    #[serde(default)]
    pub cells: Option<usize>,
    #[serde(default)]
    pub h: Option<f64>,
    /// Defaults to the domain's bounding box at the initial time.
    #[serde(default)]
    pub lo: Option<Vec<f64>>,
    #[serde(default)]
    pub hi: Option<Vec<f64>>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SolverSpec {
    Particles {
        /// Defaults to the stability-limited step at the initial state.
        #[serde(default)]
        dt: Option<f64>,
        #[serde(default = "one")]
        record_every: usize,
        #[serde(default)]
        metric: MetricSpec,
    },
    Jko {
        tau: f64,
        eps: f64,
        grid: GridSpec,
        #[serde(default)]
        inner: InnerSpec,
        #[serde(default)]
        eta: Option<f64>,
        #[serde(default = "one")]
        record_every: usize,
    },
    Fv {
        dt: f64,
        eps: f64,
        grid: GridSpec,
        #[serde(default = "one")]
        record_every: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub t_end: f64,
    #[serde(default)]
    pub record_times: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MassLawSpec {
    Exponential,
    Power { beta: f64 },
}

impl From<MassLawSpec> for MassLaw {
    fn from(m: MassLawSpec) -> Self {
        match m {
            MassLawSpec::Exponential => MassLaw::Exponential,
            MassLawSpec::Power { beta } => MassLaw::Power { beta },
        }
    }
}

fn tol_5() -> f64 {
    0.05
}
fn tol_10() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExperimentSpec {
    Viscosity {
        eps_list: Vec<f64>,
        particles: usize,
        particle_dt: f64,
        #[serde(default = "tol_5")]
        tol: f64,
    },
    Stability {
        delta0_list: Vec<f64>,
        direction: Vec<f64>,
        #[serde(default = "tol_10")]
        tol: f64,
    },
    Cosine {
        alpha: f64,
        mass_law: MassLawSpec,
        n_list: Vec<usize>,
        t0: f64,
        /// Inclusive range of `N` for the equilibrium table.
        equilibria: [usize; 2],
    },
    Validate {
        times: Vec<f64>,
        samples: usize,
    },
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            Error::Schema {
                field,
                line: inner.line(),
                column: inner.column(),
                message: inner.to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the canonical JSON form; equal scenarios (including the seed) hash equally.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(
            serde_json::to_vec(self).expect("scenario serializes"),
        ))
    }

    pub fn domain(&self) -> Result<Domain> {
        self.domain.build()
    }

    pub fn potentials(&self) -> Result<PotentialPair> {
        let dim = self.domain.build()?.dim();
        Ok(PotentialPair::new(
            self.potentials.v.build(dim)?,
            self.potentials.w.build(dim)?,
        )?)
    }

    pub fn dim(&self) -> Result<usize> {
        Ok(self.domain.build()?.dim())
    }

    pub fn grid_spec(&self) -> Option<&GridSpec> {
        match &self.solver {
            SolverSpec::Jko { grid, .. } | SolverSpec::Fv { grid, .. } => Some(grid),
            SolverSpec::Particles { .. } => None,
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        let spec = self
            .grid_spec()
            .ok_or_else(|| Error::Scenario("a grid needs a jko or fv solver".into()))?;
        let dom = self.domain()?;
        spec.build(&dom)
    }

    /// Initial grid density, for grid solvers.
    pub fn initial_density(&self) -> Result<GridMeasure> {
        let InitialSpec::Density { profile, .. } = &self.initial else {
            return Err(Error::Scenario(
                "grid solvers need a `density` initial condition".into(),
            ));
        };
        let dom = self.domain()?;
        let pot = self.potentials()?;
        profile.build(self.grid()?, &dom, &pot)
    }

    /// Initial particle ensemble. Density data needs a grid solver block to live on.
    pub fn initial_particles(&self) -> Result<ParticleEnsemble> {
        let dim = self.dim()?;
        let ens = match &self.initial {
            InitialSpec::Particles { points, masses } => {
                let pts = points
                    .iter()
                    .map(|p| point(p, dim))
                    .collect::<Result<Vec<_>>>()?;
                let n = pts.len();
                let ms = masses
                    .clone()
                    .unwrap_or_else(|| vec![1.0 / n.max(1) as f64; n]);
                ParticleEnsemble::new(dim, pts, ms, 0.0)?
            }
            InitialSpec::UniformBall { n, center, radius } => {
                uniform_ball(dim, *n, point(center, dim)?, *radius, self.seed)?
            }
            InitialSpec::ExponentialChain {
                j_max,
                perturbation,
            } => chain_ensemble(
                MassLaw::Exponential,
                *j_max,
                perturbation.map(|p| (p.n, p.alpha)),
            )?,
            InitialSpec::PowerChain {
                beta,
                j_max,
                perturbation,
            } => chain_ensemble(
                MassLaw::Power { beta: *beta },
                *j_max,
                perturbation.map(|p| (p.n, p.alpha)),
            )?,
            InitialSpec::Density { particles, .. } => {
                let n = particles.ok_or_else(|| {
                    Error::Scenario("`initial.particles` is required to sample a density".into())
                })?;
                mdflow_core::jko::particles_from_grid(&self.initial_density()?, &self.domain()?, n)?
            }
        };
        Ok(ens)
    }

    pub fn inner_solver(&self) -> InnerSolver {
        match &self.solver {
            SolverSpec::Jko { inner, .. } => match inner {
                InnerSpec::Auto => InnerSolver::Auto,
                InnerSpec::Exact1d => InnerSolver::Exact1d,
                InnerSpec::Entropic => InnerSolver::Entropic,
            },
            _ => InnerSolver::Auto,
        }
    }

    pub fn particle_metric(&self) -> SpeedMetric {
        match &self.solver {
            SolverSpec::Particles {
                metric: MetricSpec::Pairing,
                ..
            } => SpeedMetric::Pairing,
            _ => SpeedMetric::Exact,
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn point(v: &[f64], dim: usize) -> Result<Vecd> {
    if v.len() != dim {
        return Err(Error::Scenario(format!(
            "expected a {dim}-component point, got {}",
            v.len()
        )));
    }
    Ok(vec_from(v))
}

/// Empty vectors stand for the origin.
fn point_or_zero(v: &[f64], dim: usize) -> Result<Vecd> {
    if v.is_empty() {
        Ok(ZERO)
    } else {
        point(v, dim)
    }
}

impl DomainSpec {
    pub fn build(&self) -> Result<Domain> {
        Ok(match self {
            DomainSpec::Ball {
                center,
                radius,
                rate,
                prox,
            } => Domain::Ball(Ball::moving(
                center.len(),
                point(center, center.len())?,
                *radius,
                *rate,
                prox.unwrap_or(*radius),
            )?),
            DomainSpec::Box {
                lo,
                hi,
                vlo,
                vhi,
                prox,
            } => {
                let d = lo.len();
                let zero = vec![0.0; d];
                let vlo = vlo.as_deref().unwrap_or(&zero);
                let vhi = vhi.as_deref().unwrap_or(&zero);
                Domain::Box(BoxDomain::moving(
                    d,
                    point(lo, d)?,
                    point(hi, d)?,
                    point(vlo, d)?,
                    point(vhi, d)?,
                    *prox,
                )?)
            }
            DomainSpec::HalfSpace {
                normal,
                offset,
                speed,
                prox,
            } => Domain::HalfSpace(HalfSpace::new(
                normal.len(),
                point(normal, normal.len())?,
                *offset,
                *speed,
                prox.unwrap_or(1.0),
            )?),
            DomainSpec::Cosine { prox } => match prox {
                Some(p) => Domain::Cosine(CosineEpigraph::new(*p)?),
                None => Domain::Cosine(CosineEpigraph::default()),
            },
            DomainSpec::Polytope {
                normals,
                offsets,
                speeds,
                prox,
            } => {
                let d = normals.first().map_or(0, Vec::len);
                let ns = normals
                    .iter()
                    .map(|n| point(n, d))
                    .collect::<Result<Vec<_>>>()?;
                let sp = speeds.clone().unwrap_or_else(|| vec![0.0; offsets.len()]);
                Domain::Polytope(Polytope::new(d, ns, offsets.clone(), sp, *prox)?)
            }
        })
    }
}

impl PotentialSpec {
    pub fn build(&self, dim: usize) -> Result<Potential> {
        Ok(match self {
            PotentialSpec::Zero => Potential::Zero,
            PotentialSpec::Quadratic { a, center } => Potential::Quadratic {
                a: *a,
                center: point_or_zero(center, dim)?,
            },
            PotentialSpec::Saddle => {
                if dim != 2 {
                    return Err(Error::Scenario("the saddle potential is planar".into()));
                }
                Potential::Saddle
            }
            PotentialSpec::Gaussian { c } => Potential::Gaussian { c: *c },
        })
    }
}

impl GridSpec {
    pub fn build(&self, dom: &Domain) -> Result<Grid> {
        let dim = dom.dim();
        let (blo, bhi) = dom.bounding_box(0.0);
        let lo = match &self.lo {
            Some(v) => point(v, dim)?,
            None => blo,
        };
        let hi = match &self.hi {
            Some(v) => point(v, dim)?,
            None => bhi,
        };
        match (self.cells, self.h) {
            (Some(n), None) if dim == 1 => Ok(Grid::interval(lo[0], hi[0], n)?),
            (Some(n), None) => Ok(Grid::covering(dim, lo, hi, (hi[0] - lo[0]) / n as f64)?),
            (None, Some(h)) => Ok(Grid::covering(dim, lo, hi, h)?),
            _ => Err(Error::Scenario(
                "grid needs exactly one of `cells` and `h`".into(),
            )),
        }
    }
}

impl ProfileSpec {
    pub fn build(&self, grid: Grid, dom: &Domain, pot: &PotentialPair) -> Result<GridMeasure> {
        let dim = grid.dim;
        Ok(match self {
            ProfileSpec::Uniform => GridMeasure::uniform(grid, dom, 0.0)?,
            ProfileSpec::Gaussian {
                center,
                sigma,
                floor,
            } => {
                let c = point(center, dim)?;
                let s2 = 2.0 * sigma * sigma;
                GridMeasure::from_fn(grid, dom, 0.0, |x| {
                    (-mdflow_core::linalg::dist2(x, &c) / s2).exp() + floor
                })?
            }
            ProfileSpec::Spike { at } => {
                let x = point(at, dim)?;
                let mask = grid.mask(dom, 0.0);
                let k = grid
                    .nearest_masked(&mask, &x)
                    .ok_or_else(|| Error::Scenario("spike lies off the grid".into()))?;
                let mut dens = vec![0.0; grid.len()];
                dens[k] = 1.0;
                GridMeasure::from_unnormalized(grid, dens, mask, 0.0)?
            }
            ProfileSpec::Gibbs { eps } => {
                GridMeasure::from_fn(grid, dom, 0.0, |x| (-pot.v.value(x) / eps).exp())?
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "box diffusion",
        "seed": 3,
        "domain": {"type": "box", "lo": [0.0], "hi": [1.0]},
        "potentials": {"V": {"type": "zero"}},
        "initial": {"type": "density", "profile": {"type": "spike", "at": [0.2]}},
        "solver": {"type": "fv", "dt": 1e-4, "eps": 0.5, "grid": {"cells": 20}},
        "schedule": {"t_end": 0.1}
    }"#;

    #[test]
    fn parses_and_builds() {
        let sc = Scenario::from_json(MINIMAL).unwrap();
        let gm = sc.initial_density().unwrap();
        assert_eq!(gm.grid.len(), 20);
        assert!((gm.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_domain_names_the_field() {
        let bad = MINIMAL.replace(r#""type": "box""#, r#""type": "torus""#);
        match Scenario::from_json(&bad).unwrap_err() {
            Error::Schema {
                field,
                message,
                line,
                ..
            } => {
                assert_eq!(field, "domain.type");
                assert!(message.contains("torus"));
                assert_eq!(line, 4);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unknown_field_is_rejected() {
        let bad = MINIMAL.replace(r#""t_end": 0.1"#, r#""t_end": 0.1, "tend": 2"#);
        let Error::Schema { field, .. } = Scenario::from_json(&bad).unwrap_err() else {
            panic!()
        };
        assert_eq!(field, "schedule.tend");
    }

    #[test]
    fn hash_depends_on_seed() {
        let a = Scenario::from_json(MINIMAL).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 4;
        assert_ne!(a.hash(), b.hash());
    }
}
