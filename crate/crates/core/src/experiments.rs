//! Scenarios, presets, evacuation metrics and vision sweeps.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::eikonal::{CostModel, Reduction, SolverKind, SolverSettings, SpeedLaw};
use crate::error::{config, Error, Result};
use crate::fields::{KernelKind, ScalarField};
use crate::geometry::{build_grid, Dim, Domain, Grid, Point, Rect, VisionSpec};
use crate::macroscopic::{run_macro, FluxLaw, FluxMode, MacroParams, MacroRun};
use crate::micro::{run_micro, sample_particles, Block, KdeConfig, MicroParams, MicroRun, ParticleEnsemble};
use crate::par;
use crate::pipeline::{AssemblyStats, DirectionModel, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Macro,
    Micro,
}

/// A point exit in 1D or a segment `[from, to]` in 2D.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExitDef {
    Point(f64),
    Segment([Point; 2]),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub x: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<[f64; 2]>,
    pub exits: Vec<ExitDef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub obstacles: Vec<Rect>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub param: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WallSpec {
    pub enabled: bool,
    pub width: f64,
}

impl Default for WallSpec {
    fn default() -> Self {
        WallSpec {
            enabled: true,
            width: 0.025,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeSpec {
    /// Time step cap (the micro solver uses it as its fixed step).
    pub dt: f64,
    pub t_max: f64,
    pub safety: f64,
    /// Remaining mass fraction that ends a macroscopic run.
    pub threshold: f64,
    /// Reassemble directions every this many steps.
    pub refresh: usize,
}

impl Default for TimeSpec {
    fn default() -> Self {
        TimeSpec {
            dt: 5e-3,
            t_max: 10.0,
            safety: 0.45,
            threshold: 0.01,
            refresh: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: Option<String>,
    pub snapshot_times: Vec<f64>,
    /// Micro: record trajectories every this many steps (0 disables).
    pub trajectory_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub model: ModelKind,
    pub domain: DomainSpec,
    pub resolution: Vec<usize>,
    pub initial: Vec<Block>,
    /// Particle count (micro only).
    #[serde(default)]
    pub particles: Option<usize>,
    pub vision: VisionSpec,
    #[serde(default)]
    pub cost: CostModel,
    #[serde(default)]
    pub flux: FluxLaw,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub kde: KdeConfig,
    #[serde(default)]
    pub projection: crate::direction::ProjectionParams,
    #[serde(default)]
    pub wall: WallSpec,
    #[serde(default)]
    pub time: TimeSpec,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default = "default_reduction")]
    pub reduction: Reduction,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default = "one_f")]
    pub u_single: f64,
    #[serde(default)]
    pub literal_signs: bool,
    #[serde(default)]
    pub literal_velocity: bool,
    /// Observers with no density above this value nearby keep the reference potential.
    #[serde(default)]
    pub active_density: Option<f64>,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub parallel: bool,
}

fn default_reduction() -> Reduction {
    Reduction::Mh
}
fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}

/// Everything derived from a scenario that a run needs.
pub struct Built {
    pub domain: Domain,
    pub model: DirectionModel,
    pub rho0: ScalarField,
}

impl Scenario {
    pub fn dim(&self) -> Dim {
        if self.domain.y.is_some() {
            Dim::Two
        } else {
            Dim::One
        }
    }

    pub fn build_domain(&self) -> Result<Domain> {
        let d = &self.domain;
        if d.exits.is_empty() {
            return schema("domain.exits", "at least one exit is required");
        }
        match d.y {
            None => {
                let pts = d
                    .exits
                    .iter()
                    .enumerate()
                    .map(|(i, e)| match e {
                        ExitDef::Point(p) => Ok(*p),
                        ExitDef::Segment(_) => schema(&format!("domain.exits[{i}]"), "1D exits are points"),
                    })
                    .collect::<Result<Vec<_>>>()?;
                if !d.obstacles.is_empty() {
                    return schema("domain.obstacles", "obstacles need a 2D domain");
                }
                Domain::new_1d(d.x, &pts)
            }
            Some(y) => {
                let segs = d
                    .exits
                    .iter()
                    .enumerate()
                    .map(|(i, e)| match e {
                        ExitDef::Segment([a, b]) => Ok((*a, *b)),
                        ExitDef::Point(_) => schema(&format!("domain.exits[{i}]"), "2D exits are segments"),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Domain::new_2d(d.x, y, &segs, self.wall.width, d.obstacles.clone())
            }
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            vision: self.vision,
            cost: self.cost.clone(),
            flux: self.flux,
            projection: self.projection,
            kernel: self.kernel.kind,
            kernel_param: self.kernel.param,
            wall_cost: self.wall.enabled,
            solver: self.solver,
            reduction: self.reduction,
            stride: self.stride,
            u_single: self.u_single,
            literal_signs: self.literal_signs,
            active_density: self.active_density,
            parallel: self.parallel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let domain = self.build_domain()?;
        let want = if self.dim() == Dim::Two { 2 } else { 1 };
        if self.resolution.len() != want {
            return schema("resolution", &format!("expected {want} entries"));
        }
        self.cost.validate()?;
        self.flux.validate()?;
        if (self.flux.rho_max - self.cost.rho_max).abs() > 0.0 {
            return schema("flux.rho_max", "must equal cost.rho_max");
        }
        for (i, b) in self.initial.iter().enumerate() {
            let y = b.y_range(&domain);
            let [dy0, dy1] = domain.y_range();
            let inside = b.x[0] >= domain.x[0]
                && b.x[1] <= domain.x[1]
                && b.x[0] <= b.x[1]
                && (self.dim() == Dim::One || (y[0] >= dy0 && y[1] <= dy1 && y[0] <= y[1]));
            if !inside {
                return schema(&format!("initial[{i}]"), "block must lie inside the domain");
            }
            if !(b.value >= 0.0 && b.value <= self.cost.rho_max) {
                return schema(&format!("initial[{i}].value"), "must lie in [0, rho_max]");
            }
        }
        let t = &self.time;
        if !(t.dt > 0.0 && t.t_max >= 0.0 && t.safety > 0.0 && t.refresh > 0) {
            return schema("time", "dt, safety and refresh must be positive, t_max nonnegative");
        }
        if !(0.0..1.0).contains(&t.threshold) {
            return schema("time.threshold", "must lie in [0, 1)");
        }
        if self.stride == 0 {
            return schema("stride", "must be at least 1");
        }
        if self.model == ModelKind::Micro && !self.particles.is_some_and(|n| n > 0) {
            return schema("particles", "micro scenarios need a positive particle count");
        }
        self.kde.validate()?;
        Ok(())
    }

    pub fn build(&self) -> Result<Built> {
        self.validate()?;
        let domain = self.build_domain()?;
        let grid = build_grid(&domain, &self.resolution)?;
        if grid.n_cells() > 200_000 {
            log::warn!(
                "{} cells: per-step observer solves at this resolution take a long time",
                grid.n_cells()
            );
        }
        if grid.dim == Dim::Two && self.solver.kind == SolverKind::Fsm && !self.vision.covers(&domain) {
            log::warn!("fast sweeping per observer is slow in 2D; --solver fmm gives the same discretization");
        }
        let rho0 = block_density(&grid, &domain, &self.initial);
        let model = DirectionModel::new(grid, &domain, self.model_config())?;
        Ok(Built { domain, model, rho0 })
    }
}

fn schema<T>(path: &str, message: &str) -> Result<T> {
    Err(Error::Schema {
        path: path.to_string(),
        message: message.to_string(),
    })
}

/// Cell densities from blocks; each cell takes the last block containing its centre.
pub fn block_density(grid: &Grid, domain: &Domain, blocks: &[Block]) -> ScalarField {
    let values = (0..grid.n_cells())
        .map(|c| {
            if grid.blocked[c] {
                return 0.0;
            }
            let p = grid.cell_center(c);
            blocks
                .iter()
                .rev()
                .find(|b| {
                    let y = b.y_range(domain);
                    p[0] >= b.x[0] && p[0] <= b.x[1] && (grid.dim == Dim::One || (p[1] >= y[0] && p[1] <= y[1]))
                })
                .map_or(0.0, |b| b.value)
        })
        .collect();
    ScalarField::on_cells(grid, values)
}

/// Total mass of a block list.
pub fn block_mass(domain: &Domain, blocks: &[Block]) -> f64 {
    blocks.iter().map(|b| b.value * b.area(domain)).sum()
}

pub fn corridor_blocks_1d() -> Vec<Block> {
    vec![
        Block {
            x: [0.0, 0.3],
            y: None,
            value: 0.85,
        },
        Block {
            x: [0.6, 1.0],
            y: None,
            value: 0.25,
        },
    ]
}

pub fn corridor_blocks_2d() -> Vec<Block> {
    vec![
        Block {
            x: [0.05, 0.3],
            y: Some([0.0, 0.25]),
            value: 0.1,
        },
        Block {
            x: [0.6, 0.95],
            y: None,
            value: 0.95,
        },
    ]
}

/// Initial density of the 1D corridor on `grid`.
pub fn initial_density_1d(grid: &Grid) -> ScalarField {
    let d = Domain::new_1d([0.0, 1.0], &[0.0, 1.0]).expect("unit corridor");
    block_density(grid, &d, &corridor_blocks_1d())
}

/// Initial density of the 2D corridor on `grid`.
pub fn initial_density_2d(grid: &Grid, domain: &Domain) -> ScalarField {
    block_density(grid, domain, &corridor_blocks_2d())
}

pub const PRESETS: [&str; 3] = ["corridor1d", "corridor2d_micro", "corridor2d_macro"];

/// Built-in scenario. `full_scale` selects the fine resolutions.
pub fn preset(name: &str, full_scale: bool) -> Result<Scenario> {
    if full_scale {
        log::warn!("full-scale preset `{name}`: expect very long run times");
    }
    let lwr = FluxLaw {
        mode: FluxMode::Lwr,
        rho_max: 1.0,
    };
    let scn = match name {
        "corridor1d" => {
            let n = if full_scale { 10_000 } else { 500 };
            Scenario {
                name: name.into(),
                model: ModelKind::Macro,
                domain: DomainSpec {
                    x: [0.0, 1.0],
                    y: None,
                    exits: vec![ExitDef::Point(0.0), ExitDef::Point(1.0)],
                    obstacles: vec![],
                },
                resolution: vec![n],
                initial: corridor_blocks_1d(),
                particles: None,
                vision: VisionSpec::new(0.75)?,
                cost: CostModel {
                    law: SpeedLaw::Linear,
                    c_max: 1e4,
                    ..CostModel::default()
                },
                flux: lwr,
                kernel: KernelSpec {
                    kind: KernelKind::Indicator,
                    param: 0.05,
                },
                kde: KdeConfig::default(),
                projection: Default::default(),
                wall: WallSpec {
                    enabled: false,
                    width: 0.025,
                },
                time: TimeSpec {
                    // dt / dx = 0.5 at every resolution
                    dt: 0.5 / n as f64,
                    t_max: 4.0,
                    ..TimeSpec::default()
                },
                solver: SolverSettings::default(),
                reduction: Reduction::Mh,
                stride: 1,
                u_single: 1.0,
                literal_signs: false,
                literal_velocity: false,
                active_density: None,
                output: OutputSpec {
                    dir: None,
                    snapshot_times: vec![0.0, 0.31, 0.71, 1.29],
                    trajectory_every: 0,
                },
                seed: 0,
                parallel: true,
            }
        }
        "corridor2d_micro" => {
            let res = if full_scale { vec![1000, 500] } else { vec![100, 50] };
            Scenario {
                name: name.into(),
                model: ModelKind::Micro,
                domain: DomainSpec {
                    x: [0.0, 1.0],
                    y: Some([0.0, 0.5]),
                    exits: vec![
                        ExitDef::Segment([[0.0, 0.0], [0.0, 0.5]]),
                        ExitDef::Segment([[1.0, 0.0], [1.0, 0.5]]),
                    ],
                    obstacles: vec![],
                },
                resolution: res,
                initial: corridor_blocks_1d(),
                particles: Some(500),
                vision: VisionSpec::new(0.25)?,
                cost: CostModel::default(),
                flux: lwr,
                kernel: KernelSpec {
                    kind: KernelKind::Bump,
                    param: 0.05,
                },
                kde: KdeConfig::default(),
                projection: Default::default(),
                wall: WallSpec::default(),
                time: TimeSpec {
                    dt: 1e-2,
                    t_max: 1.5,
                    ..TimeSpec::default()
                },
                solver: SolverSettings::default(),
                reduction: Reduction::Mh,
                stride: 4,
                u_single: 1.0,
                literal_signs: false,
                literal_velocity: false,
                active_density: None,
                output: OutputSpec {
                    dir: None,
                    snapshot_times: vec![],
                    trajectory_every: 20,
                },
                seed: 1,
                parallel: true,
            }
        }
        "corridor2d_macro" => {
            let res = if full_scale { vec![1000, 500] } else { vec![200, 100] };
            Scenario {
                name: name.into(),
                model: ModelKind::Macro,
                domain: DomainSpec {
                    x: [0.0, 1.0],
                    y: Some([0.0, 0.5]),
                    exits: vec![
                        ExitDef::Segment([[0.0, 0.0], [0.0, 0.1]]),
                        ExitDef::Segment([[1.0, 0.4], [1.0, 0.5]]),
                    ],
                    obstacles: vec![],
                },
                resolution: res,
                initial: corridor_blocks_2d(),
                particles: None,
                vision: VisionSpec::new(0.75)?,
                cost: CostModel::default(),
                flux: lwr,
                kernel: KernelSpec {
                    kind: KernelKind::Bump,
                    param: 0.05,
                },
                kde: KdeConfig::default(),
                projection: Default::default(),
                wall: WallSpec::default(),
                time: TimeSpec {
                    dt: 5e-3,
                    t_max: 10.0,
                    ..TimeSpec::default()
                },
                solver: SolverSettings {
                    kind: SolverKind::Fsm,
                    ..SolverSettings::default()
                },
                reduction: Reduction::Mh,
                stride: 4,
                u_single: 1.0,
                literal_signs: false,
                literal_velocity: false,
                active_density: None,
                output: OutputSpec {
                    dir: None,
                    snapshot_times: vec![0.0, 0.25, 0.8, 1.07, 1.4, 2.1, 2.75],
                    trajectory_every: 0,
                },
                seed: 0,
                parallel: true,
            }
        }
        other => return config(format!("unknown preset `{other}` (known: {})", PRESETS.join(", "))),
    };
    Ok(scn)
}

/// Parses and validates a scenario; errors carry the path of the offending field.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let scn: Scenario = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    scn.validate()?;
    Ok(scn)
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    parse_scenario(&std::fs::read_to_string(path)?)
}

/// First time the remaining fraction drops to `1 - threshold`, linearly
/// interpolated; `None` if never reached. `history` holds `(t, remaining)`.
pub fn evacuation_time(history: &[(f64, f64)], threshold: f64) -> Result<Option<f64>> {
    let Some(&(t0, m0)) = history.first() else {
        return Err(Error::Data("empty mass history".into()));
    };
    let target = 1.0 - threshold;
    let slack = 1e-12 * m0.abs().max(1.0);
    for w in history.windows(2) {
        if w[1].1 > w[0].1 + slack || w[1].0 < w[0].0 {
            return Err(Error::Data(format!("mass history is not monotone at t = {}", w[1].0)));
        }
    }
    if m0 <= target {
        return Ok(Some(t0));
    }
    for w in history.windows(2) {
        let ((ta, ma), (tb, mb)) = (w[0], w[1]);
        if mb <= target {
            let s = if ma > mb { (ma - target) / (ma - mb) } else { 1.0 };
            return Ok(Some(ta + s * (tb - ta)));
        }
    }
    Ok(None)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub t: f64,
    /// Remaining fraction of the initial mass (or particles).
    pub remaining: f64,
    /// Cumulative share of the initial mass per exit.
    pub exits: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub name: String,
    pub model: ModelKind,
    pub vision: VisionSpec,
    pub evacuation_time: Option<f64>,
    pub history: Vec<ReportRow>,
    pub exit_shares: Vec<f64>,
    pub steps: usize,
    pub assemblies: usize,
    pub stats: AssemblyStats,
    pub wall_clock: f64,
    pub max_conservation_error: Option<f64>,
    pub turned: Option<usize>,
}

pub enum RunOutput {
    Macro(MacroRun),
    Micro(MicroRun),
}

pub fn macro_params(scn: &Scenario) -> MacroParams {
    MacroParams {
        dt_cap: scn.time.dt,
        t_max: scn.time.t_max,
        safety: scn.time.safety,
        threshold: scn.time.threshold,
        refresh: scn.time.refresh,
        snapshot_times: scn.output.snapshot_times.clone(),
        dump_dir: scn.output.dir.as_ref().map(Into::into),
    }
}

pub fn micro_params(scn: &Scenario, domain: &Domain) -> MicroParams {
    let n = scn.particles.unwrap_or(1);
    MicroParams {
        dt: scn.time.dt,
        t_max: scn.time.t_max,
        kde: scn.kde,
        literal_velocity: scn.literal_velocity,
        particle_mass: block_mass(domain, &scn.initial) / n as f64,
        trajectory_every: scn.output.trajectory_every,
        refresh: scn.time.refresh,
    }
}

/// Runs a scenario to completion.
pub fn run_scenario(scn: &Scenario) -> Result<(RunReport, RunOutput, Built)> {
    let built = scn.build()?;
    let threshold = 1.0 - scn.time.threshold;
    let (report, out) = match scn.model {
        ModelKind::Macro => {
            let run = run_macro(&built.model, built.rho0.clone(), &macro_params(scn), |_, _| {})?;
            let m0 = run.initial_mass;
            let history: Vec<ReportRow> = run
                .history
                .iter()
                .map(|h| ReportRow {
                    t: h.t,
                    remaining: if m0 > 0.0 { h.mass / m0 } else { 0.0 },
                    exits: h.outflux.iter().map(|o| if m0 > 0.0 { o / m0 } else { 0.0 }).collect(),
                })
                .collect();
            let pairs: Vec<(f64, f64)> = history.iter().map(|r| (r.t, r.remaining)).collect();
            let report = RunReport {
                name: scn.name.clone(),
                model: scn.model,
                vision: scn.vision,
                evacuation_time: evacuation_time(&pairs, threshold)?,
                exit_shares: history.last().map(|r| r.exits.clone()).unwrap_or_default(),
                history,
                steps: run.final_state.step,
                assemblies: run.assemblies,
                stats: run.stats,
                wall_clock: run.wall_clock,
                max_conservation_error: Some(run.max_conservation_error),
                turned: None,
            };
            (report, RunOutput::Macro(run))
        }
        ModelKind::Micro => {
            let n = scn.particles.unwrap_or(0);
            let pos = sample_particles(&scn.initial, &built.domain, n, scn.seed)?;
            let params = micro_params(scn, &built.domain);
            let run = run_micro(&built.model, &built.domain, ParticleEnsemble::new(pos), &params, |_, _, _| {})?;
            let history: Vec<ReportRow> = run
                .history
                .iter()
                .map(|h| ReportRow {
                    t: h.t,
                    remaining: 1.0 - h.total(),
                    exits: h.fractions.clone(),
                })
                .collect();
            let pairs: Vec<(f64, f64)> = history.iter().map(|r| (r.t, r.remaining)).collect();
            let report = RunReport {
                name: scn.name.clone(),
                model: scn.model,
                vision: scn.vision,
                evacuation_time: evacuation_time(&pairs, threshold)?,
                exit_shares: history.last().map(|r| r.exits.clone()).unwrap_or_default(),
                history,
                steps: run.steps,
                assemblies: run.assemblies,
                stats: run.stats,
                wall_clock: run.wall_clock,
                max_conservation_error: None,
                turned: Some(run.ensemble.n_turned()),
            };
            (report, RunOutput::Micro(run))
        }
    };
    Ok((report, out, built))
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub vision: VisionSpec,
    pub report: std::result::Result<RunReport, String>,
}

/// Independent runs of `base` for every vision diameter; a failing run only
/// marks its own row.
pub fn vision_sweep(base: &Scenario, values: &[VisionSpec], parallel: bool) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return config("the sweep needs at least one value");
    }
    Ok(par::map_range(values.len(), parallel, |i| {
        let scn = Scenario {
            vision: values[i],
            ..base.clone()
        };
        SweepRow {
            vision: values[i],
            report: run_scenario(&scn).map(|r| r.0).map_err(|e| e.to_string()),
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evacuation_time_examples() {
        let h = [(0.0, 1.0), (1.0, 0.5), (2.0, 0.005)];
        let t = evacuation_time(&h, 0.99).unwrap().unwrap();
        assert!((t - (1.0 + 0.49 / 0.495)).abs() < 1e-12);
        assert!((t - 1.990).abs() < 1e-3);
        assert_eq!(evacuation_time(&[(0.0, 1.0), (1.0, 0.5)], 0.99).unwrap(), None);
        assert_eq!(evacuation_time(&[(0.0, 0.0)], 0.99).unwrap(), Some(0.0));
        assert!(matches!(
            evacuation_time(&[(0.0, 1.0), (1.0, 0.4), (2.0, 0.6)], 0.99),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn initial_densities() {
        let p = preset("corridor1d", false).unwrap();
        let b = p.build().unwrap();
        let g = &b.model.grid;
        assert_eq!(b.rho0.values[g.locate_cell([0.1, 0.0])], 0.85);
        assert_eq!(b.rho0.values[g.locate_cell([0.45, 0.0])], 0.0);
        let mass: f64 = b.rho0.values.iter().sum::<f64>() * g.cell_measure();
        assert!((mass - 0.355).abs() < 1e-12);
        assert_eq!(initial_density_1d(g), b.rho0);

        let d = preset("corridor2d_macro", false).unwrap().build_domain().unwrap();
        let g = build_grid(&d, &[200, 100]).unwrap();
        let rho = initial_density_2d(&g, &d);
        assert_eq!(rho.values[g.locate_cell([0.7, 0.25])], 0.95);
        assert_eq!(rho.values[g.locate_cell([0.5, 0.1])], 0.0);
        assert_eq!(rho.values[g.locate_cell([0.1, 0.1])], 0.1);
    }

    #[test]
    fn presets_round_trip_through_json() {
        for name in PRESETS {
            let p = preset(name, false).unwrap();
            let text = serde_json::to_string_pretty(&p).unwrap();
            assert_eq!(parse_scenario(&text).unwrap(), p);
        }
        let p = preset("corridor2d_macro", false).unwrap();
        assert_eq!(p.time.dt, 5e-3);
        assert_eq!(p.kernel.kind, KernelKind::Bump);
        assert_eq!(p.cost.c_max, 1e3);
        assert_eq!(p.cost.delta_rho, 1e-7);
        assert_eq!(p.solver.kind, SolverKind::Fsm);
        let p = preset("corridor1d", false).unwrap();
        assert_eq!(p.kernel.kind, KernelKind::Indicator);
        assert_eq!(p.cost.c_max, 1e4);
        assert!(!p.wall.enabled);
        assert_eq!(p.vision.diameter, 0.75);
        assert!(preset("nope", false).is_err());
    }

    #[test]
    fn schema_errors_name_the_field() {
        let mut v = serde_json::to_value(preset("corridor1d", false).unwrap()).unwrap();
        v["time"]["bogus"] = serde_json::json!(1);
        match parse_scenario(&v.to_string()) {
            Err(Error::Schema { path, .. }) => assert!(path.starts_with("time"), "{path}"),
            other => panic!("{other:?}"),
        }
        let mut v = serde_json::to_value(preset("corridor1d", false).unwrap()).unwrap();
        v["domain"].as_object_mut().unwrap().remove("exits");
        assert!(matches!(parse_scenario(&v.to_string()), Err(Error::Schema { .. })));
        let mut v = serde_json::to_value(preset("corridor1d", false).unwrap()).unwrap();
        v["initial"][0]["value"] = serde_json::json!(1.5);
        match parse_scenario(&v.to_string()) {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "initial[0].value"),
            other => panic!("{other:?}"),
        }
        let mut v = serde_json::to_value(preset("corridor1d", false).unwrap()).unwrap();
        v["vision"] = serde_json::json!("inf");
        assert!(parse_scenario(&v.to_string()).unwrap().vision.diameter.is_infinite());
    }

    #[test]
    fn empty_density_terminates_at_zero() {
        let mut p = preset("corridor1d", false).unwrap();
        p.initial.clear();
        let (r, _, _) = run_scenario(&p).unwrap();
        assert_eq!(r.evacuation_time, Some(0.0));
        assert_eq!(r.steps, 0);
        assert!(r.exit_shares.iter().all(|&s| s == 0.0));
    }
}
