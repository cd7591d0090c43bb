//! Finite-volume evolution of the crowd density with a dimension-split FORCE
//! scheme driven by the assembled direction field.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::fields::{ScalarField, VectorField};
use crate::geometry::{Dim, FaceClass, Grid, Side};
use crate::par;
use crate::pipeline::{AssemblyStats, DirectionFields, DirectionModel};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxMode {
    /// Speed `f(rho)`, flux `rho f(rho)`.
    #[default]
    AsWritten,
    /// Speed `1 - rho / rho_max`, flux `f(rho)`.
    Lwr,
}

/// Flux law built on the mobility `f(rho) = rho (1 - rho / rho_max)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FluxLaw {
    pub mode: FluxMode,
    pub rho_max: f64,
}

impl Default for FluxLaw {
    fn default() -> Self {
        FluxLaw {
            mode: FluxMode::AsWritten,
            rho_max: 1.0,
        }
    }
}

impl FluxLaw {
    pub fn mobility(&self, rho: f64) -> f64 {
        rho * (1.0 - rho / self.rho_max)
    }

    pub fn speed(&self, rho: f64) -> f64 {
        match self.mode {
            FluxMode::AsWritten => self.mobility(rho),
            FluxMode::Lwr => 1.0 - rho / self.rho_max,
        }
    }

    pub fn flux(&self, rho: f64) -> f64 {
        rho * self.speed(rho)
    }

    pub fn dflux(&self, rho: f64) -> f64 {
        let m = self.rho_max;
        match self.mode {
            FluxMode::AsWritten => 2.0 * rho - 3.0 * rho * rho / m,
            FluxMode::Lwr => 1.0 - 2.0 * rho / m,
        }
    }

    /// `max |flux'|` over `[lo, hi]`.
    pub fn max_wave_speed(&self, lo: f64, hi: f64) -> f64 {
        let mut s = self.dflux(lo).abs().max(self.dflux(hi).abs());
        if self.mode == FluxMode::AsWritten {
            let crit = self.rho_max / 3.0;
            if (lo..=hi).contains(&crit) {
                s = s.max(self.dflux(crit).abs());
            }
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho_max > 0.0 && self.rho_max.is_finite()) {
            return config("flux rho_max must be positive");
        }
        Ok(())
    }
}

/// FORCE flux for `g(rho) = flux(rho) * theta`: the mean of the Lax-Friedrichs
/// and the two-step Lax-Wendroff fluxes.
pub fn force_flux(rho_l: f64, rho_r: f64, theta: f64, dt: f64, h: f64, law: &FluxLaw) -> f64 {
    let gl = law.flux(rho_l) * theta;
    let gr = law.flux(rho_r) * theta;
    let lf = 0.5 * (gl + gr) - 0.5 * h / dt * (rho_r - rho_l);
    let star = 0.5 * (rho_l + rho_r) - 0.5 * dt / h * (gr - gl);
    let lw = law.flux(star) * theta;
    0.5 * (lf + lw)
}

/// `safety * h / max_speed`, capped; the cap is returned for a stopped field.
pub fn cfl_dt(max_speed: f64, h: f64, safety: f64, cap: f64) -> f64 {
    if max_speed > 0.0 {
        (safety * h / max_speed).min(cap)
    } else {
        cap
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MacroState {
    pub t: f64,
    pub rho: ScalarField,
    /// Cumulative mass through each exit.
    pub outflux: Vec<f64>,
    pub step: usize,
}

impl MacroState {
    pub fn new(rho: ScalarField, n_exits: usize) -> Self {
        MacroState {
            t: 0.0,
            rho,
            outflux: vec![0.0; n_exits],
            step: 0,
        }
    }

    pub fn mass(&self, grid: &Grid) -> f64 {
        self.rho.values.iter().sum::<f64>() * grid.cell_measure()
    }

    pub fn total_outflux(&self) -> f64 {
        self.outflux.iter().sum()
    }
}

#[derive(Clone, Copy, Debug)]
struct ExitFace {
    cell: usize,
    exit: usize,
    axis: usize,
    normal: [f64; 2],
}

/// Open interior faces per axis and exit faces of a grid.
#[derive(Clone, Debug)]
pub struct FaceTopology {
    interior: [Vec<(usize, usize)>; 2],
    exits: Vec<ExitFace>,
    axes: usize,
}

impl FaceTopology {
    pub fn new(grid: &Grid) -> Self {
        let [nx, ny] = grid.cells;
        let open = |c: usize| !grid.blocked[c];
        let mut interior = [Vec::new(), Vec::new()];
        for j in 0..ny {
            for i in 0..nx {
                let c = grid.cell_index(i, j);
                if i + 1 < nx && open(c) && open(c + 1) {
                    interior[0].push((c, c + 1));
                }
                if grid.dim == Dim::Two && j + 1 < ny && open(c) && open(c + nx) {
                    interior[1].push((c, c + nx));
                }
            }
        }
        let exits = grid
            .boundary
            .iter()
            .filter_map(|f| match f.class {
                FaceClass::Exit(k) => Some(ExitFace {
                    cell: f.cell,
                    exit: k,
                    axis: if matches!(f.side, Side::Left | Side::Right) { 0 } else { 1 },
                    normal: f.side.outward_normal(),
                }),
                FaceClass::Wall => None,
            })
            .collect();
        FaceTopology {
            interior,
            exits,
            axes: if grid.dim == Dim::Two { 2 } else { 1 },
        }
    }
}

/// Largest stable time step for `direction`, capped by `cap`.
pub fn stable_dt(grid: &Grid, rho: &ScalarField, direction: &VectorField, law: &FluxLaw, safety: f64, cap: f64) -> f64 {
    let lo = rho.min().max(0.0);
    let hi = rho.max().min(law.rho_max);
    let g = law.max_wave_speed(lo.min(hi), hi);
    let axes = if grid.dim == Dim::Two { 2 } else { 1 };
    let mut dt = cap;
    for a in 0..axes {
        let d = direction.values.iter().map(|v| v[a].abs()).fold(0.0, f64::max);
        dt = dt.min(cfl_dt(g * d, grid.h[a], safety, cap));
    }
    dt
}

/// One time step: an x sweep followed by a y sweep. Wall faces and faces with a
/// zero normal direction carry no flux;
/// exit faces carry `flux(rho) * max(D . n, 0)`.
pub fn step_macro(
    state: &MacroState,
    grid: &Grid,
    topo: &FaceTopology,
    direction: &VectorField,
    law: &FluxLaw,
    dt: f64,
    parallel: bool,
) -> Result<MacroState> {
    let mut rho = state.rho.values.clone();
    let mut outflux = state.outflux.clone();
    let d = &direction.values;
    for a in 0..topo.axes {
        let h = grid.h[a];
        let len = grid.h[1 - a];
        let faces = &topo.interior[a];
        let cur = &rho;
        let fluxes = par::map_range(faces.len(), parallel, |f| {
            let (l, r) = faces[f];
            let theta = 0.5 * (d[l][a] + d[r][a]);
            if theta == 0.0 {
                // g vanishes identically on this face
                return 0.0;
            }
            force_flux(cur[l], cur[r], theta, dt, h, law)
        });
        let mut next = rho.clone();
        for (&(l, r), &f) in faces.iter().zip(&fluxes) {
            next[l] -= dt / h * f;
            next[r] += dt / h * f;
        }
        for e in topo.exits.iter().filter(|e| e.axis == a) {
            let theta = (d[e.cell][0] * e.normal[0] + d[e.cell][1] * e.normal[1]).max(0.0);
            let f = law.flux(rho[e.cell]) * theta;
            next[e.cell] -= dt / h * f;
            outflux[e.exit] += dt * f * len;
        }
        rho = next;
    }
    let t = state.t + dt;
    let tol = 1e-12;
    if let Some((cell, &value)) = rho
        .iter()
        .enumerate()
        .find(|(_, &r)| !(r >= -tol && r <= law.rho_max + tol))
    {
        return Err(Error::Monotonicity {
            cell,
            value,
            rho_max: law.rho_max,
            time: t,
        });
    }
    Ok(MacroState {
        t,
        rho: ScalarField::from_values(state.rho.loc, state.rho.dims, rho),
        outflux,
        step: state.step + 1,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MacroParams {
    pub dt_cap: f64,
    pub t_max: f64,
    pub safety: f64,
    /// Stop once the remaining mass fraction drops below this value.
    pub threshold: f64,
    /// Reassemble the direction field every `refresh` steps.
    pub refresh: usize,
    pub snapshot_times: Vec<f64>,
    /// Where to write the density if the run aborts.
    pub dump_dir: Option<PathBuf>,
}

impl Default for MacroParams {
    fn default() -> Self {
        MacroParams {
            dt_cap: 5e-3,
            t_max: 10.0,
            safety: 0.45,
            threshold: 0.01,
            refresh: 1,
            snapshot_times: Vec::new(),
            dump_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub t: f64,
    pub mass: f64,
    pub outflux: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub t: f64,
    pub rho: ScalarField,
    pub fields: DirectionFields,
}

#[derive(Clone, Debug)]
pub struct MacroRun {
    pub initial_mass: f64,
    pub history: Vec<HistoryRow>,
    pub snapshots: Vec<Snapshot>,
    pub final_state: MacroState,
    /// Whether the remaining mass fell below the threshold before `t_max`.
    pub evacuated: bool,
    pub assemblies: usize,
    pub stats: AssemblyStats,
    pub max_conservation_error: f64,
    pub wall_clock: f64,
}

fn dump_state(dir: &PathBuf, grid: &Grid, state: &MacroState) {
    let path = dir.join(format!("abort_density_t{:.6}.csv", state.t));
    match crate::io::write_scalar_csv(&path, grid, &state.rho) {
        Ok(()) => log::error!("density before the failing step written to {}", path.display()),
        Err(e) => log::error!("could not write state dump: {e}"),
    }
}

/// Runs the macroscopic model from `rho0`. `on_step` sees every state together
/// with the direction field used to advance it.
pub fn run_macro(
    model: &DirectionModel,
    rho0: ScalarField,
    params: &MacroParams,
    mut on_step: impl FnMut(&MacroState, &DirectionFields),
) -> Result<MacroRun> {
    let start = Instant::now();
    let grid = &model.grid;
    let law = &model.config.flux;
    law.validate()?;
    if params.refresh == 0 || !(params.dt_cap > 0.0) || !(params.safety > 0.0) {
        return config("refresh, dt cap and safety must be positive");
    }
    let topo = FaceTopology::new(grid);
    let mut state = MacroState::new(rho0, grid.n_exits());
    let m0 = state.mass(grid);
    let row = |s: &MacroState| HistoryRow {
        t: s.t,
        mass: s.mass(grid),
        outflux: s.outflux.clone(),
    };
    let mut history = vec![row(&state)];
    let mut snapshots = Vec::new();
    let mut pending: Vec<f64> = params.snapshot_times.clone();
    pending.sort_by(f64::total_cmp);
    pending.reverse();
    let mut fields: Option<DirectionFields> = None;
    let mut stats = AssemblyStats::default();
    let mut assemblies = 0;
    let mut max_err: f64 = 0.0;
    let eps = 1e-12;

    loop {
        let remaining = if m0 > 0.0 { state.mass(grid) / m0 } else { 0.0 };
        let done = remaining < params.threshold || state.t >= params.t_max - eps;
        let snap_due = pending.last().is_some_and(|&ts| ts <= state.t + eps);
        if fields.is_none() || state.step % params.refresh == 0 || (snap_due && done) {
            if m0 <= 0.0 && fields.is_none() && !snap_due {
                break;
            }
            let f = model.assemble(&state.rho)?;
            stats.observer_solves += f.stats.observer_solves;
            stats.marched_vertices += f.stats.marched_vertices;
            stats.zero_gradients += f.stats.zero_gradients;
            assemblies += 1;
            fields = Some(f);
        }
        let f = fields.as_ref().unwrap();
        while pending.last().is_some_and(|&ts| ts <= state.t + eps) {
            pending.pop();
            snapshots.push(Snapshot {
                t: state.t,
                rho: state.rho.clone(),
                fields: f.clone(),
            });
        }
        if done || m0 <= 0.0 {
            break;
        }
        on_step(&state, f);
        let mut dt = stable_dt(grid, &state.rho, &f.direction, law, params.safety, params.dt_cap);
        dt = dt.min(params.t_max - state.t);
        state = match step_macro(&state, grid, &topo, &f.direction, law, dt, model.config.parallel) {
            Ok(s) => s,
            Err(e) => {
                if let Some(dir) = &params.dump_dir {
                    dump_state(dir, grid, &state);
                }
                return Err(e);
            }
        };
        let r = row(&state);
        if m0 > 0.0 {
            max_err = max_err.max((m0 - r.mass - state.total_outflux()).abs() / m0);
        }
        history.push(r);
    }
    let remaining = if m0 > 0.0 { state.mass(grid) / m0 } else { 0.0 };
    Ok(MacroRun {
        initial_mass: m0,
        history,
        snapshots,
        evacuated: remaining < params.threshold,
        final_state: state,
        assemblies,
        stats,
        max_conservation_error: max_err,
        wall_clock: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Location;
    use crate::geometry::{build_grid, Domain};

    const LWR: FluxLaw = FluxLaw {
        mode: FluxMode::Lwr,
        rho_max: 1.0,
    };

    #[test]
    fn mobility_values() {
        let f = FluxLaw::default();
        assert_eq!(f.mobility(0.0), 0.0);
        assert_eq!(f.mobility(1.0), 0.0);
        assert_eq!(f.mobility(0.5), 0.25);
        assert_eq!(f.flux(0.5), 0.125);
        assert_eq!(LWR.flux(0.5), 0.25);
        assert_eq!(LWR.speed(0.0), 1.0);
    }

    #[test]
    fn wave_speed_bounds_derivative() {
        for law in [FluxLaw::default(), LWR] {
            let s = law.max_wave_speed(0.0, 1.0);
            for i in 0..=1000 {
                let r = i as f64 / 1000.0;
                let d = (law.flux(r + 1e-7) - law.flux(r - 1e-7)) / 2e-7;
                assert!(d.abs() <= s + 1e-6);
            }
        }
        assert!((FluxLaw::default().max_wave_speed(0.0, 0.5) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn force_flux_examples() {
        for law in [FluxLaw::default(), LWR] {
            for r in [0.0, 0.3, 0.7] {
                assert!((force_flux(r, r, 0.8, 0.5, 1.0, &law) - 0.8 * law.flux(r)).abs() < 1e-15);
            }
            assert_eq!(force_flux(1.0, 1.0, 1.0, 0.5, 1.0, &law), 0.0);
        }
        // LF = 0.16 + 0.6, LW = g(0.5) = 0.25
        assert!((force_flux(0.8, 0.2, 1.0, 0.5, 1.0, &LWR) - 0.505).abs() < 1e-15);
    }

    #[test]
    fn cfl_examples() {
        assert!((cfl_dt(1.0, 0.01, 0.45, 1.0) - 0.0045).abs() < 1e-18);
        assert_eq!(cfl_dt(0.0, 0.01, 0.45, 5e-3), 5e-3);
    }

    fn line(n: usize) -> Grid {
        build_grid(&Domain::new_1d([0.0, 1.0], &[0.0, 1.0]).unwrap(), &[n]).unwrap()
    }

    fn riemann(n: usize, t_end: f64) -> Vec<f64> {
        let g = line(n);
        let topo = FaceTopology::new(&g);
        let rho = ScalarField::on_cells(&g, (0..n).map(|c| if g.cell_center(c)[0] < 0.5 { 0.85 } else { 0.0 }).collect());
        let d = VectorField::from_values(Location::Cell, g.cells, vec![[1.0, 0.0]; n]);
        let mut s = MacroState::new(rho, 2);
        while s.t < t_end - 1e-14 {
            let dt = stable_dt(&g, &s.rho, &d, &LWR, 0.45, t_end - s.t);
            s = step_macro(&s, &g, &topo, &d, &LWR, dt, false).unwrap();
        }
        s.rho.values
    }

    #[test]
    fn riemann_rarefaction_self_convergence() {
        let t = 0.2;
        let fine = riemann(1600, t);
        let err = |n: usize| {
            let r = 1600 / n;
            let c = riemann(n, t);
            c.iter()
                .enumerate()
                .map(|(i, v)| (v - fine[i * r..(i + 1) * r].iter().sum::<f64>() / r as f64).abs() / n as f64)
                .sum::<f64>()
        };
        let (e50, e200) = (err(50), err(200));
        assert!(e200 < e50, "{e50} {e200}");
        // at least O(h^1/2)
        assert!(e200 <= e50 / 2.0 * 1.05, "{e50} {e200}");
        // rarefaction head moves at g'(0) = 1, tail at g'(0.85) = -0.7
        let at = |x: f64| fine[(x * 1600.0) as usize];
        assert!((at(0.5 - 0.7 * t - 0.05) - 0.85).abs() < 1e-3);
        assert!(at(0.5 + t + 0.05) < 1e-3);
        // fan centre: g'(rho) = 0 at rho = 0.5
        assert!((at(0.5) - 0.5).abs() < 0.02);
    }

    #[test]
    fn zero_direction_keeps_state_and_mass_balances() {
        let g = line(20);
        let topo = FaceTopology::new(&g);
        let rho = ScalarField::on_cells(&g, (0..20).map(|c| 0.05 * (c + 1) as f64 % 0.9).collect());
        let s = MacroState::new(rho.clone(), 2);
        let z = VectorField::zeros(Location::Cell, g.cells);
        let n = step_macro(&s, &g, &topo, &z, &LWR, 0.01, false).unwrap();
        assert_eq!(n.rho, rho);
        let left = VectorField::from_values(Location::Cell, g.cells, vec![[-1.0, 0.0]; 20]);
        let n = step_macro(&s, &g, &topo, &left, &LWR, 0.01, false).unwrap();
        let m0 = s.mass(&g);
        assert!(((m0 - n.mass(&g)) - n.total_outflux()).abs() <= 1e-12 * m0);
        assert!(n.outflux[0] > 0.0 && n.outflux[1] == 0.0);
    }

    #[test]
    fn oversized_step_is_reported() {
        let g = line(20);
        let topo = FaceTopology::new(&g);
        let rho = ScalarField::on_cells(&g, (0..20).map(|c| if c % 2 == 0 { 0.9 } else { 0.0 }).collect());
        let d = VectorField::from_values(Location::Cell, g.cells, vec![[1.0, 0.0]; 20]);
        let r = step_macro(&MacroState::new(rho, 2), &g, &topo, &d, &LWR, 1.0, false);
        assert!(matches!(r, Err(Error::Monotonicity { .. })));
    }

    #[test]
    fn exit_outflow_speed_matches_mobility() {
        let g = line(10);
        let topo = FaceTopology::new(&g);
        let mut rho = ScalarField::zeros(Location::Cell, g.cells);
        rho.values[9] = 0.5;
        let mut dir = vec![[0.0, 0.0]; 10];
        dir[9] = [1.0, 0.0];
        let d = VectorField::from_values(Location::Cell, g.cells, dir);
        let law = FluxLaw::default();
        let s = step_macro(&MacroState::new(rho, 2), &g, &topo, &d, &law, 1e-3, false).unwrap();
        // outflow velocity f(0.5) carrying density 0.5
        assert!((s.outflux[1] - 1e-3 * 0.5 * law.mobility(0.5)).abs() < 1e-15);
    }
}
