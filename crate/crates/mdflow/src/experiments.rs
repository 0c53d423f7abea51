//! Experiment drivers: each turns a scenario into tables, fitted constants and pass/fail
//! flags, persists them under an output directory and draws the plots.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mdflow_core::geometry::{project_point, validate_domain, Domain, MovingDomain};
use mdflow_core::jko::{
    fit_viscosity, fv_solve, particle_reference, run_jko, viscosity_rows, JkoConfig, RecordOptions,
    ViscosityScenario,
};
use mdflow_core::linalg::{axpy, dist2, ksum, norm2, vec_from};
use mdflow_core::particles::{
    default_dt, maximal_slope_audit, simulate, EstimateConstants, ParticleEnsemble, SimOptions,
};
use mdflow_core::potentials::PotentialPair;
use mdflow_core::transport::{wasserstein, wasserstein_1d, DiscreteMeasure};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::cosine::{cosine_equilibria, instability_experiment, slope, InstabilityOptions};
use crate::io::{
    write_grid_binary, write_grid_csv, write_json, write_table_csv, write_trajectory_csv,
};
use crate::plots::{Plot, Series};
use crate::scenario::{hex, ExperimentSpec, Scenario, SolverSpec};
use crate::{io_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub unit: String,
}

fn nan_from_null<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    let v: Vec<Option<f64>> = Vec::deserialize(d)?;
    Ok(v.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    /// Non-finite values are written as `null`.
    #[serde(deserialize_with = "nan_from_null")]
    pub values: Vec<f64>,
    /// Which run produced the row.
    pub provenance: String,
}

/// How [`emit_plots`] draws a table: one series per distinct value of `group`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotHint {
    pub x: usize,
    pub y: Vec<usize>,
    #[serde(default)]
    pub group: Option<usize>,
    #[serde(default)]
    pub log_x: bool,
    #[serde(default)]
    pub log_y: bool,
    #[serde(default)]
    pub scatter: bool,
    /// Keys of [`ExperimentSummary::constants`] quoted on the plot.
    #[serde(default)]
    pub annotate: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
    pub rows: Vec<Row>,
    #[serde(default)]
    pub plot: Option<PlotHint>,
}

impl Table {
    pub fn new(name: &str, cols: &[(&str, &str)]) -> Self {
        Table {
            name: name.into(),
            columns: cols
                .iter()
                .map(|(n, u)| Column {
                    name: (*n).into(),
                    unit: (*u).into(),
                })
                .collect(),
            rows: Vec::new(),
            plot: None,
        }
    }

    pub fn push(&mut self, values: Vec<f64>, provenance: impl Into<String>) {
        debug_assert_eq!(values.len(), self.columns.len());
        self.rows.push(Row {
            values,
            provenance: provenance.into(),
        });
    }

    pub fn with_plot(mut self, hint: PlotHint) -> Self {
        self.plot = Some(hint);
        self
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c.name == name)?;
        Some(self.rows.iter().map(|r| r.values[i]).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub command: String,
    pub scenario: String,
    pub scenario_hash: String,
    pub seed: u64,
    /// Step sizes, grid sizes and solver tolerances used.
    pub settings: BTreeMap<String, f64>,
    pub tables: Vec<Table>,
    pub constants: BTreeMap<String, f64>,
    pub flags: BTreeMap<String, bool>,
    /// Files written, relative to the output directory.
    pub files: Vec<String>,
}

impl ExperimentSummary {
    fn new(command: Command, sc: &Scenario) -> Self {
        ExperimentSummary {
            command: command.name().into(),
            scenario: sc.name.clone(),
            scenario_hash: sc.hash(),
            seed: sc.seed,
            settings: BTreeMap::new(),
            tables: Vec::new(),
            constants: BTreeMap::new(),
            flags: BTreeMap::new(),
            files: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.flags.values().all(|&f| f)
    }

    /// SHA-256 of the JSON form.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(
            serde_json::to_vec(self).expect("summary serializes"),
        ))
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    fn set(&mut self, key: &str, v: f64) {
        self.settings.insert(key.into(), v);
    }
    fn constant(&mut self, key: &str, v: f64) {
        self.constants.insert(key.into(), v);
    }
    fn flag(&mut self, key: &str, v: bool) {
        self.flags.insert(key.into(), v);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    SimulateParticles,
    RunJko,
    ViscositySweep,
    StabilitySweep,
    CosineInstability,
    ValidateDomain,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SimulateParticles => "simulate-particles",
            Command::RunJko => "run-jko",
            Command::ViscositySweep => "viscosity-sweep",
            Command::StabilitySweep => "stability-sweep",
            Command::CosineInstability => "cosine-instability",
            Command::ValidateDomain => "validate-domain",
        }
    }

    /// The command a scenario describes: its experiment block, else its solver.
    pub fn for_scenario(sc: &Scenario) -> Command {
        match (&sc.experiment, &sc.solver) {
            (Some(ExperimentSpec::Viscosity { .. }), _) => Command::ViscositySweep,
            (Some(ExperimentSpec::Stability { .. }), _) => Command::StabilitySweep,
            (Some(ExperimentSpec::Cosine { .. }), _) => Command::CosineInstability,
            (Some(ExperimentSpec::Validate { .. }), _) => Command::ValidateDomain,
            (None, SolverSpec::Particles { .. }) => Command::SimulateParticles,
            (None, _) => Command::RunJko,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Replaces the scenario's seed.
    pub seed: Option<u64>,
}

/// Loads, runs and persists a scenario.
pub fn run_scenario(path: &Path, opts: &RunOptions) -> Result<ExperimentSummary> {
    let sc = Scenario::load(path)?;
    run_command(Command::for_scenario(&sc), sc, opts)
}

/// Runs `cmd` on `sc`; the scenario must describe that command. `validate-domain` accepts
/// any scenario.
pub fn run_command(cmd: Command, mut sc: Scenario, opts: &RunOptions) -> Result<ExperimentSummary> {
    if let Some(s) = opts.seed {
        sc.seed = s;
    }
    let own = Command::for_scenario(&sc);
    if cmd != own && cmd != Command::ValidateDomain {
        return Err(Error::Scenario(format!(
            "`{}` cannot run a scenario describing `{}`",
            cmd.name(),
            own.name()
        )));
    }
    std::fs::create_dir_all(&opts.out).map_err(io_err(&opts.out))?;
    let mut summary = match cmd {
        Command::SimulateParticles => particle_run(&sc, &opts.out)?,
        Command::RunJko => grid_run(&sc, &opts.out)?,
        Command::ViscositySweep => viscosity_experiment(&sc)?,
        Command::StabilitySweep => stability_experiment(&sc)?,
        Command::CosineInstability => cosine_experiment(&sc)?,
        Command::ValidateDomain => domain_check(&sc)?,
    };
    for t in &summary.tables {
        let name = format!("{}.csv", t.name);
        write_table_csv(t, &opts.out.join(&name))?;
        summary.files.push(name);
    }
    let plots = emit_plots(&summary, &opts.out)?;
    summary.files.extend(plots);
    summary.files.push("summary.json".into());
    write_json(&summary, &opts.out.join("summary.json"))?;
    Ok(summary)
}

fn sha_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(hex(&Sha256::digest(bytes)))
}

/// Draws every table carrying a [`PlotHint`] to `<table>.svg`. Each plot embeds the hash
/// of the table's CSV, which must already exist in `out`.
pub fn emit_plots(summary: &ExperimentSummary, out: &Path) -> Result<Vec<String>> {
    let mut files = Vec::new();
    for t in &summary.tables {
        let Some(h) = &t.plot else { continue };
        let csv = out.join(format!("{}.csv", t.name));
        let data_hash = sha_file(&csv)?;
        let mut groups: Vec<(String, Vec<&Row>)> = Vec::new();
        for r in &t.rows {
            let key = h
                .group
                .map(|g| format!("{} = {}", t.columns[g].name, r.values[g]))
                .unwrap_or_default();
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.push(r),
                None => groups.push((key, vec![r])),
            }
        }
        let mut series = Vec::new();
        for &yi in &h.y {
            for (key, rows) in &groups {
                let label = if key.is_empty() {
                    t.columns[yi].name.clone()
                } else {
                    format!("{} ({key})", t.columns[yi].name)
                };
                let pts = rows.iter().map(|r| (r.values[h.x], r.values[yi])).collect();
                series.push(if h.scatter {
                    Series::scatter(label, pts)
                } else {
                    Series::line(label, pts)
                });
            }
        }
        let annotation = (!h.annotate.is_empty()).then(|| {
            h.annotate
                .iter()
                .filter_map(|k| summary.constants.get(k).map(|v| format!("{k} = {v:.4}")))
                .collect::<Vec<_>>()
                .join(", ")
        });
        let ylab: Vec<String> =
            h.y.iter()
                .map(|&i| format!("{} [{}]", t.columns[i].name, t.columns[i].unit))
                .collect();
        let plot = Plot {
            title: format!("{}: {}", summary.scenario, t.name),
            x_label: format!("{} [{}]", t.columns[h.x].name, t.columns[h.x].unit),
            y_label: ylab.join(", "),
            log_x: h.log_x,
            log_y: h.log_y,
            series,
            annotation,
            data_hash: Some(data_hash),
        };
        let name = format!("{}.svg", t.name);
        plot.write(&out.join(&name))?;
        files.push(name);
    }
    Ok(files)
}

fn hint(x: usize, y: &[usize]) -> PlotHint {
    PlotHint {
        x,
        y: y.to_vec(),
        group: None,
        log_x: false,
        log_y: false,
        scatter: false,
        annotate: Vec::new(),
    }
}

fn particle_distance(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64> {
    Ok(if a.dim == 1 {
        wasserstein_1d(a, b)?
    } else {
        wasserstein(a, b)?.0
    })
}

fn particle_dt(
    sc: &Scenario,
    ens: &ParticleEnsemble,
    pot: &PotentialPair,
    dom: &Domain,
) -> (f64, usize) {
    match &sc.solver {
        SolverSpec::Particles {
            dt, record_every, ..
        } => (
            dt.unwrap_or_else(|| default_dt(ens, pot, dom)),
            *record_every,
        ),
        _ => (default_dt(ens, pot, dom), 1),
    }
}

fn particle_run(sc: &Scenario, out: &Path) -> Result<ExperimentSummary> {
    let mut s = ExperimentSummary::new(Command::SimulateParticles, sc);
    let dom = sc.domain()?;
    let pot = sc.potentials()?;
    let ens = sc.initial_particles()?;
    let (dt, every) = particle_dt(sc, &ens, &pot, &dom);
    let t_end = sc.schedule.t_end;
    s.set("dt", dt);
    s.set("t_end", t_end);
    s.set("particles", ens.len() as f64);
    s.set("record_every", every as f64);
    let opts = SimOptions {
        record_every: every,
        metric: sc.particle_metric(),
        keep_snapshots: true,
    };
    let (end, rec) = simulate(&ens, &pot, &dom, t_end, dt, &opts)?;
    write_trajectory_csv(&rec, ens.dim, &out.join("trajectory.csv"))?;
    s.files.push("trajectory.csv".into());

    let k = EstimateConstants::new(&pot, &dom, ens.second_moment(), t_end);
    s.constant("moment_rate", k.moment_rate);
    s.constant("growth_rate", k.growth_rate);
    s.constant("holder_constant", k.holder);
    let residual = maximal_slope_audit(&rec);
    let mut tab = Table::new(
        "energy",
        &[
            ("t", "time"),
            ("energy", "energy"),
            ("second_moment", "length^2"),
            ("metric_speed", "length/time"),
            ("slope_term", "energy"),
            ("extra_term", "energy"),
            ("slope_residual", "energy"),
        ],
    )
    .with_plot(hint(0, &[1]));
    for i in 0..rec.times.len() {
        tab.push(
            vec![
                rec.times[i],
                rec.energy[i],
                rec.second_moment[i],
                rec.metric_speed[i],
                rec.slope_term[i],
                rec.extra_term[i],
                residual[i],
            ],
            format!("simulate dt={dt:e}"),
        );
    }
    s.tables.push(tab);

    let m2_0 = ens.second_moment();
    let mass_ok =
        rec.masses == ens.masses && (ksum(end.masses.iter().copied()) - 1.0).abs() <= 1e-12;
    let support_ok = rec
        .times
        .iter()
        .zip(&rec.snapshots)
        .all(|(&t, snap)| snap.iter().all(|p| dom.contains(p, t)));
    let moment_ok = rec
        .times
        .iter()
        .zip(&rec.second_moment)
        .all(|(&t, &m)| m <= k.moment_bound_at(m2_0, t));
    let growth_ok = rec.snapshots.iter().all(|snap| {
        snap.iter()
            .zip(&ens.positions)
            .all(|(p, p0)| norm2(p) <= k.position_bound(norm2(p0)))
    });
    // the pairing cost bounds the distance from above, so the check is conservative
    let stride = (rec.times.len() / 100).max(1);
    let idx: Vec<usize> = (0..rec.times.len()).step_by(stride).collect();
    let mut holder_ok = true;
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[..a] {
            let pair = ksum(
                rec.snapshots[i]
                    .iter()
                    .zip(&rec.snapshots[j])
                    .zip(&rec.masses)
                    .map(|((x, y), m)| m * dist2(x, y)),
            );
            holder_ok &= pair.sqrt() <= k.holder * (rec.times[i] - rec.times[j]).sqrt();
        }
    }
    let worst = residual.iter().copied().fold(0.0f64, f64::min);
    s.constant("slope_residual_min", worst);
    s.constant("slope_residual_over_dt", -worst / dt);
    s.flag("mass_exact", mass_ok);
    s.flag("support_contained", support_ok);
    s.flag("moment_bound", moment_ok);
    s.flag("position_bound", growth_ok);
    s.flag("holder_bound", holder_ok);
    if dom.is_stationary() {
        s.flag(
            "extra_term_zero",
            rec.extra_term.iter().all(|x| x.abs() <= 1e-12),
        );
    }

    if ens.dim == 2 {
        let shown = ens.len().min(24);
        let series = (0..shown)
            .map(|i| {
                Series::line(
                    format!("particle {i}"),
                    rec.snapshots
                        .iter()
                        .map(|snap| (snap[i][0], snap[i][1]))
                        .collect(),
                )
            })
            .collect();
        let plot = Plot {
            title: format!("{}: particle paths", sc.name),
            x_label: "x".into(),
            y_label: "y".into(),
            series,
            data_hash: Some(sha_file(&out.join("trajectory.csv"))?),
            ..Default::default()
        };
        plot.write(&out.join("trajectory.svg"))?;
        s.files.push("trajectory.svg".into());
    }
    Ok(s)
}

fn grid_run(sc: &Scenario, out: &Path) -> Result<ExperimentSummary> {
    let mut s = ExperimentSummary::new(Command::RunJko, sc);
    let dom = sc.domain()?;
    let pot = sc.potentials()?;
    let gm0 = sc.initial_density()?;
    let t_end = sc.schedule.t_end;
    s.set("h", gm0.grid.h);
    s.set("cells", gm0.grid.len() as f64);
    s.set("t_end", t_end);
    let (fin, tr, provenance) = match &sc.solver {
        SolverSpec::Jko {
            tau,
            eps,
            eta,
            record_every,
            ..
        } => {
            let mut cfg = JkoConfig::new(*tau, *eps)?;
            cfg.solver = sc.inner_solver();
            cfg.eta = *eta;
            s.set("tau", *tau);
            s.set("eps", *eps);
            s.set("newton_tol", cfg.newton_tol);
            s.set("marginal_tol", cfg.marginal_tol);
            s.set("polish_cells", cfg.polish_cells as f64);
            let (fin, tr) = run_jko(
                &gm0,
                &pot,
                &dom,
                &cfg,
                t_end,
                &RecordOptions {
                    record_every: *record_every,
                    keep_snapshots: false,
                },
            )?;
            s.constant("slope_sum", tr.slope_sum());
            s.constant("step_constant", tr.step_constant());
            (
                fin,
                tr,
                format!("run_jko tau={tau:e} eps={eps:e} h={:e}", gm0.grid.h),
            )
        }
        SolverSpec::Fv {
            dt,
            eps,
            record_every,
            ..
        } => {
            s.set("dt", *dt);
            s.set("eps", *eps);
            let (fin, tr) = fv_solve(
                &gm0,
                &pot,
                &dom,
                *eps,
                *dt,
                t_end,
                &RecordOptions {
                    record_every: *record_every,
                    keep_snapshots: false,
                },
            )?;
            (
                fin,
                tr,
                format!("fv_solve dt={dt:e} eps={eps:e} h={:e}", gm0.grid.h),
            )
        }
        SolverSpec::Particles { .. } => {
            return Err(Error::Scenario("run-jko needs a jko or fv solver".into()))
        }
    };
    let mut tab = Table::new(
        "energy",
        &[
            ("t", "time"),
            ("energy", "energy"),
            ("second_moment", "length^2"),
            ("mass", "1"),
            ("min_density", "1/length^d"),
            ("step_distance", "length"),
            ("excess", "energy"),
        ],
    )
    .with_plot(hint(0, &[1]));
    for i in 0..tr.times.len() {
        tab.push(
            vec![
                tr.times[i],
                tr.energy[i],
                tr.second_moment[i],
                tr.mass[i],
                tr.min_density[i],
                tr.step_distance[i],
                tr.excess[i],
            ],
            provenance.clone(),
        );
    }
    s.tables.push(tab);
    let drift = tr.mass.iter().map(|m| (m - 1.0).abs()).fold(0.0, f64::max);
    s.constant("mass_drift", drift);
    s.constant("max_energy_increase", tr.max_energy_increase());
    s.flag("mass_conserved", drift <= 1e-8);
    s.flag("nonnegative", tr.min_density.iter().all(|&u| u >= 0.0));
    if dom.is_stationary() {
        s.flag("energy_monotone", tr.max_energy_increase() <= 1e-10);
    }
    write_grid_csv(&fin, &out.join("final_density.csv"))?;
    write_grid_binary(&fin, &out.join("final_density.bin"))?;
    s.files.push("final_density.csv".into());
    s.files.push("final_density.bin".into());
    Ok(s)
}

fn viscosity_experiment(sc: &Scenario) -> Result<ExperimentSummary> {
    let Some(ExperimentSpec::Viscosity {
        eps_list,
        particles,
        particle_dt,
        tol,
    }) = &sc.experiment
    else {
        return Err(Error::Scenario("missing viscosity block".into()));
    };
    let SolverSpec::Jko { tau, .. } = &sc.solver else {
        return Err(Error::Scenario(
            "the viscosity sweep needs a jko solver block for tau and the grid".into(),
        ));
    };
    let mut s = ExperimentSummary::new(Command::ViscositySweep, sc);
    let dom = sc.domain()?;
    let initial = sc.initial_density()?;
    let record_times = if sc.schedule.record_times.is_empty() {
        (1..=4)
            .map(|k| sc.schedule.t_end * k as f64 / 4.0)
            .collect()
    } else {
        sc.schedule.record_times.clone()
    };
    let vs = ViscosityScenario {
        pot: sc.potentials()?,
        initial,
        tau: *tau,
        record_times,
        particles: *particles,
        particle_dt: *particle_dt,
        solver: sc.inner_solver(),
    };
    s.set("tau", *tau);
    s.set("h", vs.initial.grid.h);
    s.set("particles", *particles as f64);
    s.set("particle_dt", *particle_dt);
    s.set("tol", *tol);
    let reference = particle_reference(&vs, &dom)?;
    let rows: Vec<_> = eps_list
        .par_iter()
        .map(|&eps| viscosity_rows(eps, &vs, &dom, &reference))
        .collect::<mdflow_core::Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let dim = vs.initial.grid.dim;
    let fit = fit_viscosity(&rows, dim, *tol);
    s.constant("exponent", fit.exponent);
    s.constant("rate_c", fit.rate);
    s.constant("constant_C", fit.constant);
    s.constant("max_ratio", fit.max_ratio);

    let mut tab = Table::new(
        "viscosity",
        &[
            ("eps", "1"),
            ("t", "time"),
            ("distance", "length"),
            ("ratio", "1"),
        ],
    );
    for r in &rows {
        let ratio =
            r.distance * r.distance / (r.eps.powf(fit.exponent) * r.t * (fit.rate * r.t).exp());
        tab.push(
            vec![r.eps, r.t, r.distance, ratio],
            format!(
                "viscosity_gap eps={:e} tau={tau:e} h={:e}",
                r.eps, vs.initial.grid.h
            ),
        );
    }
    s.tables.push(tab.with_plot(PlotHint {
        group: Some(0),
        ..hint(1, &[2])
    }));

    let finals: Vec<(f64, f64)> = fit.final_distances.clone();
    let lx: Vec<(f64, f64)> = finals
        .iter()
        .filter(|p| p.1 > 0.0)
        .map(|&(e, d)| (e.ln(), (d * d).ln()))
        .collect();
    let slope = slope(&lx);
    s.constant("final_sq_distance_eps_slope", slope);
    let mut fin = Table::new(
        "viscosity_final",
        &[
            ("eps", "1"),
            ("distance", "length"),
            ("distance_sq", "length^2"),
        ],
    );
    for &(e, d) in &finals {
        fin.push(
            vec![e, d, d * d],
            format!("viscosity_gap eps={e:e} t={}", sc.schedule.t_end),
        );
    }
    s.tables.push(fin.with_plot(PlotHint {
        log_x: true,
        log_y: true,
        annotate: vec!["final_sq_distance_eps_slope".into(), "exponent".into()],
        ..hint(0, &[2])
    }));
    s.flag("monotone_in_eps", fit.monotone);
    s.flag("single_constant_bounds_sweep", fit.bounded);
    Ok(s)
}

fn stability_experiment(sc: &Scenario) -> Result<ExperimentSummary> {
    let Some(ExperimentSpec::Stability {
        delta0_list,
        direction,
        tol,
    }) = &sc.experiment
    else {
        return Err(Error::Scenario("missing stability block".into()));
    };
    let mut s = ExperimentSummary::new(Command::StabilitySweep, sc);
    let dom = sc.domain()?;
    let pot = sc.potentials()?;
    let base = sc.initial_particles()?;
    if direction.len() != base.dim {
        return Err(Error::Scenario(
            "stability direction must match the domain dimension".into(),
        ));
    }
    let dir = vec_from(direction);
    let (dt, every) = particle_dt(sc, &base, &pot, &dom);
    let t_end = sc.schedule.t_end;
    let c = -pot.lambda_v() + (-pot.lambda_w()).max(0.0);
    s.set("dt", dt);
    s.set("t_end", t_end);
    s.set("tol", *tol);
    s.constant("gronwall_rate", c);
    let opts = SimOptions {
        record_every: every,
        metric: sc.particle_metric(),
        keep_snapshots: true,
    };

    let runs: Vec<(f64, Vec<(f64, f64, f64)>)> = delta0_list
        .par_iter()
        .map(|&delta| -> Result<_> {
            let moved = base
                .positions
                .iter()
                .map(|p| project_point(&axpy(p, delta, &dir), base.time, &dom))
                .collect::<mdflow_core::Result<Vec<_>>>()?;
            let partner = ParticleEnsemble::new(base.dim, moved, base.masses.clone(), base.time)?;
            let (_, ra) = simulate(&base, &pot, &dom, t_end, dt, &opts)?;
            let (_, rb) = simulate(&partner, &pot, &dom, t_end, dt, &opts)?;
            let mut d0 = 0.0;
            let mut out = Vec::with_capacity(ra.times.len());
            for (i, t) in ra.times.iter().enumerate() {
                let ma =
                    DiscreteMeasure::new(base.dim, ra.snapshots[i].clone(), base.masses.clone())?;
                let mb =
                    DiscreteMeasure::new(base.dim, rb.snapshots[i].clone(), base.masses.clone())?;
                let d = particle_distance(&ma, &mb)?;
                if i == 0 {
                    d0 = d;
                }
                // identical pairs stay identical: 0/0 is reported as 1
                let ratio = if d0 == 0.0 {
                    if d == 0.0 {
                        1.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    d / d0
                };
                out.push((*t, d, ratio));
            }
            Ok((d0, out))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut tab = Table::new(
        "stability",
        &[
            ("delta0", "length"),
            ("t", "time"),
            ("distance", "length"),
            ("ratio", "1"),
            ("gronwall_bound", "1"),
        ],
    );
    let mut bounded = true;
    let mut max_ratio: f64 = 0.0;
    for (k, (d0, series)) in runs.iter().enumerate() {
        for &(t, d, r) in series {
            let bound = (c * t).exp();
            bounded &= r <= bound * (1.0 + tol);
            max_ratio = max_ratio.max(r);
            tab.push(
                vec![*d0, t, d, r, bound],
                format!("paired simulate shift={:e} dt={dt:e}", delta0_list[k]),
            );
        }
    }
    s.tables.push(tab.with_plot(PlotHint {
        group: Some(0),
        ..hint(1, &[3])
    }));
    s.constant("max_ratio", max_ratio);
    let pts: Vec<(f64, f64)> = runs
        .iter()
        .filter(|(d0, v)| *d0 > 0.0 && v.last().is_some_and(|x| x.1 > 0.0))
        .map(|(d0, v)| (d0.ln(), v.last().unwrap().1.ln()))
        .collect();
    if pts.len() >= 2 {
        s.constant("exponent_p", slope(&pts));
    }
    if dom.is_convex() {
        s.flag("gronwall_bound", bounded);
    }
    Ok(s)
}

fn cosine_experiment(sc: &Scenario) -> Result<ExperimentSummary> {
    let Some(ExperimentSpec::Cosine {
        alpha,
        mass_law,
        n_list,
        t0,
        equilibria,
    }) = &sc.experiment
    else {
        return Err(Error::Scenario("missing cosine block".into()));
    };
    if !matches!(sc.domain()?, Domain::Cosine(_)) {
        return Err(Error::Scenario(
            "the cosine experiment runs on the cosine domain".into(),
        ));
    }
    let mut s = ExperimentSummary::new(Command::CosineInstability, sc);
    let opts = InstabilityOptions::default();
    s.set("alpha", *alpha);
    s.set("t0", *t0);
    s.set("extra_atoms", opts.extra_atoms as f64);
    s.set("mass_bits", opts.mass_bits as f64);
    s.set("settle_speed", opts.settle_speed);

    let eq = cosine_equilibria(equilibria[0], equilibria[1])?;
    let mut et = Table::new(
        "equilibria",
        &[
            ("N", "1"),
            ("stable", "length"),
            ("unstable", "length"),
            ("stable_slope", "1/length"),
            ("unstable_slope", "1/length"),
        ],
    );
    for e in &eq {
        et.push(
            vec![
                e.n as f64,
                e.stable,
                e.unstable,
                e.stable_slope,
                e.unstable_slope,
            ],
            "cosine_equilibria safeguarded Newton",
        );
    }
    s.tables.push(et);
    s.flag(
        "equilibria_classified",
        eq.iter()
            .all(|e| e.stable_slope < 0.0 && e.unstable_slope > 0.0),
    );
    let gaps: Vec<f64> = eq
        .iter()
        .filter_map(|e| {
            eq.iter()
                .find(|f| f.n == 2 * e.n)
                .map(|f| (e.unstable - e.n as f64) / (f.unstable - f.n as f64))
        })
        .collect();
    if !gaps.is_empty() {
        s.flag(
            "gap_scales_like_inverse_n",
            gaps.iter().all(|g| (g - 2.0).abs() <= 0.2),
        );
    }

    let rep = instability_experiment(*alpha, (*mass_law).into(), n_list, *t0, &opts)?;
    let mut it = Table::new(
        "instability",
        &[
            ("n", "1"),
            ("j_max", "1"),
            ("dt", "time"),
            ("d0", "length"),
            ("d_t0", "length"),
            ("ratio", "1"),
            ("limit_error", "length"),
        ],
    );
    for r in &rep.rows {
        it.push(
            vec![
                r.n as f64,
                r.j_max as f64,
                r.dt,
                r.d0,
                r.d_t0,
                r.ratio,
                r.limit_error,
            ],
            format!("paired chains alpha={alpha} n={} t0={t0}", r.n),
        );
    }
    s.tables.push(it.with_plot(PlotHint {
        log_x: true,
        log_y: true,
        annotate: vec!["ratio_exponent".into()],
        ..hint(0, &[5])
    }));
    s.constant("ratio_exponent", rep.ratio_exponent);
    s.constant("stability_exponent", rep.stability_exponent);
    s.constant("growth", rep.growth);
    s.flag("ratios_increase", rep.monotone);
    s.flag("ratio_growth_at_least_2", rep.growth >= 2.0);
    s.flag(
        "limits_are_next_equilibria",
        rep.rows.iter().all(|r| r.limit_error <= 1e-3),
    );
    s.flag("transport_certified", rep.rows.iter().all(|r| r.certified));
    s.flag(
        "stability_exponent_below_one",
        rep.stability_exponent > 0.0 && rep.stability_exponent < 1.0,
    );
    Ok(s)
}

fn domain_check(sc: &Scenario) -> Result<ExperimentSummary> {
    let mut s = ExperimentSummary::new(Command::ValidateDomain, sc);
    let dom = sc.domain()?;
    let (times, samples) = match &sc.experiment {
        Some(ExperimentSpec::Validate { times, samples }) => (times.clone(), *samples),
        _ => (
            (0..=4)
                .map(|k| sc.schedule.t_end * k as f64 / 4.0)
                .collect(),
            400,
        ),
    };
    s.set("samples", samples as f64);
    let rep = validate_domain(&dom, &times, samples, sc.seed);
    s.constant("worst_prox_ratio", rep.worst_prox_ratio);
    s.constant("lipschitz_estimate", rep.lipschitz_estimate);
    s.constant("declared_lipschitz", rep.declared_lipschitz);
    s.constant("gradient_defect_max", rep.gradient_defect_max);
    s.constant("normal_defect_fraction", rep.normal_defect_fraction);
    s.constant("speed_growth", rep.speed_growth);
    s.flag("domain_valid", rep.passed);
    Ok(s)
}
