//! Particle version of the model: kernel density estimate, velocity sampling
//! from the shared direction field, explicit Euler steps and exit absorption.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::direction::assemble_velocity;
use crate::error::{config, Error, Result};
use crate::fields::{ScalarField, VectorField};
use crate::geometry::{Dim, Domain, Grid, Point, Side, GEOM_TOL};
use crate::macroscopic::FluxLaw;
use crate::par;
use crate::pipeline::{AssemblyStats, DirectionFields, DirectionModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KdeConfig {
    pub sigma: f64,
    /// Kernel support in multiples of `sigma`.
    pub truncation: f64,
}

impl Default for KdeConfig {
    fn default() -> Self {
        KdeConfig {
            sigma: 0.05,
            truncation: 4.0,
        }
    }
}

impl KdeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.truncation > 0.0) {
            return config("kde sigma and truncation must be positive");
        }
        Ok(())
    }

    fn eval(&self, r2: f64, dim: Dim) -> f64 {
        let s2 = self.sigma * self.sigma;
        let norm = match dim {
            Dim::One => 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * self.sigma),
            Dim::Two => 1.0 / (2.0 * std::f64::consts::PI * s2),
        };
        norm * (-r2 / (2.0 * s2)).exp()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    pub pos: Vec<Point>,
    pub alive: Vec<bool>,
    pub exit_taken: Vec<Option<usize>>,
    pub exit_time: Vec<Option<f64>>,
    /// Set once the horizontal velocity changed sign.
    pub turned: Vec<bool>,
    last_sign: Vec<i8>,
}

impl ParticleEnsemble {
    pub fn new(pos: Vec<Point>) -> Self {
        let n = pos.len();
        ParticleEnsemble {
            pos,
            alive: vec![true; n],
            exit_taken: vec![None; n],
            exit_time: vec![None; n],
            turned: vec![false; n],
            last_sign: vec![0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.pos.len()
    }

    pub fn n_alive(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }

    pub fn n_turned(&self) -> usize {
        self.turned.iter().filter(|&&a| a).count()
    }

    /// Fraction of particles absorbed by each exit.
    pub fn exit_fractions(&self, n_exits: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_exits];
        for k in self.exit_taken.iter().flatten() {
            out[*k] += 1.0;
        }
        let n = self.n().max(1) as f64;
        out.iter_mut().for_each(|v| *v /= n);
        out
    }
}

/// `weight * sum_j g(x - X_j)` on cell centres over alive particles.
pub fn empirical_density(ens: &ParticleEnsemble, grid: &Grid, kde: &KdeConfig, weight: f64, parallel: bool) -> ScalarField {
    let [nx, ny] = grid.cells;
    let reach = kde.truncation * kde.sigma;
    let alive: Vec<Point> = ens.pos.iter().zip(&ens.alive).filter(|(_, &a)| a).map(|(p, _)| *p).collect();
    let rows = par::map_range(ny, parallel, |j| {
        let mut row = vec![0.0; nx];
        let yc = grid.cell_center(grid.cell_index(0, j))[1];
        for p in &alive {
            let dy = if grid.dim == Dim::Two { yc - p[1] } else { 0.0 };
            if dy.abs() > reach {
                continue;
            }
            let lo = ((p[0] - reach - grid.origin[0]) / grid.h[0]).floor().max(0.0) as usize;
            let hi = (((p[0] + reach - grid.origin[0]) / grid.h[0]).ceil().max(0.0) as usize).min(nx);
            for (i, r) in row.iter_mut().enumerate().take(hi).skip(lo) {
                let dx = grid.origin[0] + (i as f64 + 0.5) * grid.h[0] - p[0];
                let r2 = dx * dx + dy * dy;
                if r2 <= reach * reach {
                    *r += weight * kde.eval(r2, grid.dim);
                }
            }
        }
        row
    });
    let mut values: Vec<f64> = rows.into_iter().flatten().collect();
    for (c, v) in values.iter_mut().enumerate() {
        if grid.blocked[c] {
            *v = 0.0;
        }
    }
    ScalarField::on_cells(grid, values)
}

/// Bilinear interpolation of a cell field at `p`, skipping blocked cells.
pub fn sample_cells(grid: &Grid, f: &VectorField, p: Point) -> Result<[f64; 2]> {
    if !grid.contains(p) {
        return Err(Error::OutsideDomain(p[0], p[1]));
    }
    let [nx, ny] = grid.cells;
    let coord = |a: usize, n: usize| {
        let s = ((p[a] - grid.origin[a]) / grid.h[a] - 0.5).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n.saturating_sub(2));
        (i, (s - i as f64).min(1.0), n > 1)
    };
    let (i, tx, _) = coord(0, nx);
    let (j, ty, two) = if grid.dim == Dim::Two { coord(1, ny) } else { (0, 0.0, false) };
    let corners = [
        (i, j, (1.0 - tx) * (1.0 - ty)),
        (i + 1, j, tx * (1.0 - ty)),
        (i, j + 1, (1.0 - tx) * ty),
        (i + 1, j + 1, tx * ty),
    ];
    let (mut w, mut out) = (0.0, [0.0; 2]);
    for (ci, cj, wt) in corners {
        if wt <= 0.0 || ci >= nx || (cj >= ny && two) || (!two && cj > 0) {
            continue;
        }
        let c = grid.cell_index(ci, cj);
        if grid.blocked[c] {
            continue;
        }
        w += wt;
        out[0] += wt * f.values[c][0];
        out[1] += wt * f.values[c][1];
    }
    if w == 0.0 {
        let c = grid.locate_cell(p);
        return Ok(f.values[c]);
    }
    Ok([out[0] / w, out[1] / w])
}

/// Cell velocity used by the particles: `speed(rho) D` or, in literal mode,
/// `-f(rho)^2` times the consensus field.
pub fn particle_velocity_field(
    rho: &ScalarField,
    fields: &DirectionFields,
    law: &FluxLaw,
    literal: bool,
) -> VectorField {
    let rho_c = rho.map(|r| r.clamp(0.0, law.rho_max));
    if literal {
        let values = rho_c
            .values
            .iter()
            .zip(&fields.consensus.values)
            .map(|(&r, c)| {
                let f = law.mobility(r);
                [-f * f * c[0], -f * f * c[1]]
            })
            .collect();
        VectorField::from_values(rho.loc, rho.dims, values)
    } else {
        assemble_velocity(&rho_c, &fields.direction, |r| law.speed(r))
    }
}

/// Where the segment `a -> b` first leaves the domain box: parameter and side.
fn first_crossing(domain: &Domain, a: Point, b: Point) -> Option<(f64, Side)> {
    let [y0, y1] = domain.y_range();
    let mut best: Option<(f64, Side)> = None;
    let mut consider = |s: f64, side: Side| {
        if (0.0..=1.0).contains(&s) && best.is_none_or(|(t, _)| s < t) {
            best = Some((s, side));
        }
    };
    let d = [b[0] - a[0], b[1] - a[1]];
    if b[0] < domain.x[0] {
        consider((domain.x[0] - a[0]) / d[0], Side::Left);
    }
    if b[0] > domain.x[1] {
        consider((domain.x[1] - a[0]) / d[0], Side::Right);
    }
    if domain.y.is_some() {
        if b[1] < y0 {
            consider((y0 - a[1]) / d[1], Side::Bottom);
        }
        if b[1] > y1 {
            consider((y1 - a[1]) / d[1], Side::Top);
        }
    }
    best
}

/// Exit whose segment contains `p` on `side`.
fn exit_at(domain: &Domain, p: Point, side: Side) -> Option<usize> {
    domain.exits.iter().find_map(|e| {
        if e.side != side {
            return None;
        }
        if domain.y.is_none() {
            return Some(e.index);
        }
        let (lo, hi) = e.interval();
        let s = match side {
            Side::Left | Side::Right => p[1],
            Side::Bottom | Side::Top => p[0],
        };
        (s >= lo - GEOM_TOL && s <= hi + GEOM_TOL).then_some(e.index)
    })
}

/// Moves `p` out of any obstacle along the axis of least penetration.
fn push_out_of_obstacles(domain: &Domain, mut p: Point) -> Point {
    for r in &domain.obstacles {
        if r.contains(p) && !(p[0] == r.x[0] || p[0] == r.x[1] || p[1] == r.y[0] || p[1] == r.y[1]) {
            let moves = [
                (p[0] - r.x[0], [r.x[0], p[1]]),
                (r.x[1] - p[0], [r.x[1], p[1]]),
                (p[1] - r.y[0], [p[0], r.y[0]]),
                (r.y[1] - p[1], [p[0], r.y[1]]),
            ];
            p = moves.iter().min_by(|a, b| a.0.total_cmp(&b.0)).unwrap().1;
        }
    }
    p
}

/// One explicit Euler step of all alive particles with velocities sampled from
/// the cell field `v`. Particles leaving through an exit are absorbed; wall
/// crossings are projected back onto the wall.
pub fn step_micro(
    ens: &mut ParticleEnsemble,
    grid: &Grid,
    domain: &Domain,
    v: &VectorField,
    dt: f64,
    t: f64,
    parallel: bool,
) -> Result<()> {
    let [y0, y1] = domain.y_range();
    let moves = par::map_range(ens.n(), parallel, |j| -> Result<Option<(Point, [f64; 2], Option<(usize, f64)>)>> {
        if !ens.alive[j] {
            return Ok(None);
        }
        let a = ens.pos[j];
        let vel = sample_cells(grid, v, a)?;
        let mut b = [a[0] + dt * vel[0], a[1] + dt * vel[1]];
        if grid.dim == Dim::One {
            b[1] = a[1];
        }
        let mut absorbed = None;
        if let Some((s, side)) = first_crossing(domain, a, b) {
            let hit = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
            if let Some(k) = exit_at(domain, hit, side) {
                absorbed = Some((k, t + s * dt));
                b = hit;
            }
        }
        if absorbed.is_none() {
            b[0] = b[0].clamp(domain.x[0], domain.x[1]);
            if domain.y.is_some() {
                b[1] = b[1].clamp(y0, y1);
            }
            b = push_out_of_obstacles(domain, b);
        }
        Ok(Some((b, vel, absorbed)))
    });
    for (j, m) in moves.into_iter().enumerate() {
        let Some((p, vel, absorbed)) = m? else { continue };
        ens.pos[j] = p;
        if vel[0].abs() > 1e-3 {
            let s = vel[0].signum() as i8;
            if ens.last_sign[j] != 0 && ens.last_sign[j] != s {
                ens.turned[j] = true;
            }
            ens.last_sign[j] = s;
        }
        if let Some((k, te)) = absorbed {
            ens.alive[j] = false;
            ens.exit_taken[j] = Some(k);
            ens.exit_time[j] = Some(te);
        }
    }
    Ok(())
}

/// Axis-aligned block of constant density. `y` is ignored in 1D and defaults
/// to the full height in 2D.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub x: [f64; 2],
    #[serde(default)]
    pub y: Option<[f64; 2]>,
    pub value: f64,
}

impl Block {
    pub fn y_range(&self, domain: &Domain) -> [f64; 2] {
        self.y.unwrap_or(domain.y_range())
    }

    pub fn area(&self, domain: &Domain) -> f64 {
        let w = self.x[1] - self.x[0];
        match domain.dim() {
            Dim::One => w,
            Dim::Two => {
                let y = self.y_range(domain);
                w * (y[1] - y[0])
            }
        }
    }
}

/// Seeded sampling of `n` particles from piecewise-constant blocks: counts by
/// largest remainder of the block masses, positions uniform inside each block.
pub fn sample_particles(blocks: &[Block], domain: &Domain, n: usize, seed: u64) -> Result<Vec<Point>> {
    let masses: Vec<f64> = blocks.iter().map(|b| b.value * b.area(domain)).collect();
    let total: f64 = masses.iter().sum();
    if !(total > 0.0) {
        return config("initial density has no mass to sample particles from");
    }
    let exact: Vec<f64> = masses.iter().map(|m| m / total * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..blocks.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let missing = n - counts.iter().sum::<usize>();
    for &k in order.iter().take(missing) {
        counts[k] += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for (b, &c) in blocks.iter().zip(&counts) {
        let y = b.y_range(domain);
        for _ in 0..c {
            let px = rng.random_range(b.x[0]..=b.x[1]);
            let py = if domain.dim() == Dim::Two { rng.random_range(y[0]..=y[1]) } else { 0.0 };
            out.push([px, py]);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MicroParams {
    pub dt: f64,
    pub t_max: f64,
    pub kde: KdeConfig,
    /// Use `-f^2` times the consensus field instead of `speed(rho) D`.
    pub literal_velocity: bool,
    /// Mass carried by each particle in the density estimate.
    pub particle_mass: f64,
    /// Record trajectories every this many steps (0 disables).
    pub trajectory_every: usize,
    /// Reassemble the direction field every `refresh` steps.
    pub refresh: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub id: usize,
    pub pos: Point,
    pub alive: bool,
    pub turned: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExitRow {
    pub t: f64,
    /// Fraction of particles absorbed per exit.
    pub fractions: Vec<f64>,
}

impl ExitRow {
    pub fn total(&self) -> f64 {
        self.fractions.iter().sum()
    }
}

#[derive(Clone, Debug)]
pub struct MicroRun {
    pub history: Vec<ExitRow>,
    pub trajectories: Vec<TrajectoryRow>,
    pub ensemble: ParticleEnsemble,
    pub steps: usize,
    pub assemblies: usize,
    pub stats: AssemblyStats,
    pub wall_clock: f64,
}

fn record(ens: &ParticleEnsemble, t: f64, out: &mut Vec<TrajectoryRow>) {
    for j in 0..ens.n() {
        out.push(TrajectoryRow {
            t,
            id: j,
            pos: ens.pos[j],
            alive: ens.alive[j],
            turned: ens.turned[j],
        });
    }
}

/// Runs the particle model until `t_max` or until every particle left.
pub fn run_micro(
    model: &DirectionModel,
    domain: &Domain,
    mut ens: ParticleEnsemble,
    params: &MicroParams,
    mut on_step: impl FnMut(f64, &ParticleEnsemble, &DirectionFields),
) -> Result<MicroRun> {
    let start = Instant::now();
    params.kde.validate()?;
    if !(params.dt > 0.0) || params.refresh == 0 {
        return config("micro time step and refresh must be positive");
    }
    let grid = &model.grid;
    let law = &model.config.flux;
    let nexits = grid.n_exits();
    let parallel = model.config.parallel;
    let mut t = 0.0;
    let mut history = vec![ExitRow {
        t,
        fractions: ens.exit_fractions(nexits),
    }];
    let mut traj = Vec::new();
    if params.trajectory_every > 0 {
        record(&ens, t, &mut traj);
    }
    let (mut steps, mut assemblies, mut stats) = (0, 0, AssemblyStats::default());
    let mut velocity: Option<(VectorField, DirectionFields)> = None;
    while t < params.t_max - 1e-12 && ens.n_alive() > 0 {
        if velocity.is_none() || steps % params.refresh == 0 {
            let rho = empirical_density(&ens, grid, &params.kde, params.particle_mass, parallel);
            let f = model.assemble(&rho)?;
            stats.observer_solves += f.stats.observer_solves;
            stats.marched_vertices += f.stats.marched_vertices;
            stats.zero_gradients += f.stats.zero_gradients;
            assemblies += 1;
            let v = particle_velocity_field(&rho, &f, law, params.literal_velocity);
            velocity = Some((v, f));
        }
        let (v, f) = velocity.as_ref().unwrap();
        on_step(t, &ens, f);
        let dt = params.dt.min(params.t_max - t);
        step_micro(&mut ens, grid, domain, v, dt, t, parallel)?;
        t += dt;
        steps += 1;
        history.push(ExitRow {
            t,
            fractions: ens.exit_fractions(nexits),
        });
        if params.trajectory_every > 0 && steps % params.trajectory_every == 0 {
            record(&ens, t, &mut traj);
        }
    }
    Ok(MicroRun {
        history,
        trajectories: traj,
        ensemble: ens,
        steps,
        assemblies,
        stats,
        wall_clock: start.elapsed().as_secs_f64(),
    })
}
