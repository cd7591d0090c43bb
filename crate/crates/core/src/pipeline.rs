//! Per-step assembly of the direction field from a cell density: observer
//! self-potentials for every exit, exit choice, conviction, consensus and the
//! projected, boundary-corrected direction of motion. Shared by the
//! finite-volume and particle solvers.

use crate::direction::{
    assemble_direction, cell_boundaries, consensus_field, conviction_field, select_exits, CellBoundary, ExitChoice,
    ProjectionParams,
};
use crate::eikonal::{
    solve, visible_cost, CostModel, EikonalProblem, Reduction, Reference, SelfScratch, SelfSolver, SelfValue,
    SolverSettings,
};
use crate::error::{config, Result};
use crate::fields::{cell_to_vertex, make_kernel, Kernel, KernelKind, Location, ScalarField, VectorField};
use crate::geometry::{layer_profile, wall_cost, Dim, Domain, Grid, VisionSpec};
use crate::macroscopic::FluxLaw;
use crate::par;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vision: VisionSpec,
    pub cost: CostModel,
    pub flux: FluxLaw,
    pub projection: ProjectionParams,
    pub kernel: KernelKind,
    pub kernel_param: f64,
    /// Whether wall costs enter the visible cost.
    pub wall_cost: bool,
    pub solver: SolverSettings,
    pub reduction: Reduction,
    /// Observer stride in vertices.
    pub stride: usize,
    /// Conviction magnitude used when there is a single exit.
    pub u_single: f64,
    pub literal_signs: bool,
    /// Skip observers with no density above this value nearby.
    pub active_density: Option<f64>,
    pub parallel: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vision: VisionSpec::global(),
            cost: CostModel::default(),
            flux: FluxLaw::default(),
            projection: ProjectionParams::default(),
            kernel: KernelKind::Bump,
            kernel_param: 0.05,
            wall_cost: true,
            solver: SolverSettings::default(),
            reduction: Reduction::Mh,
            stride: 1,
            u_single: 1.0,
            literal_signs: false,
            active_density: None,
            parallel: true,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AssemblyStats {
    pub observer_solves: usize,
    pub marched_vertices: usize,
    pub zero_gradients: usize,
}

#[derive(Clone, Debug)]
pub struct DirectionFields {
    /// Cell-averaged self-potential per exit.
    pub self_costs: Vec<ScalarField>,
    pub choice: Vec<ExitChoice>,
    pub conviction: VectorField,
    pub consensus: VectorField,
    /// Direction of motion `-P[consensus]` after boundary post-processing.
    pub direction: VectorField,
    pub stats: AssemblyStats,
}

/// Precomputed static data for direction assembly on one grid.
pub struct DirectionModel {
    pub grid: Grid,
    pub config: ModelConfig,
    pub kernel: Kernel,
    pub wall_cost: ScalarField,
    pub references: Vec<Reference>,
    pub boundary: Vec<CellBoundary>,
    xs: Vec<usize>,
    ys: Vec<usize>,
    interp_x: Vec<(usize, usize, f64)>,
    interp_y: Vec<(usize, usize, f64)>,
}

fn lattice_axis(n: usize, stride: usize) -> (Vec<usize>, Vec<(usize, usize, f64)>) {
    let mut pts: Vec<usize> = (0..n).step_by(stride.max(1)).collect();
    if *pts.last().unwrap() != n - 1 {
        pts.push(n - 1);
    }
    let mut interp = Vec::with_capacity(n);
    let mut a = 0;
    for i in 0..n {
        while a + 1 < pts.len() && pts[a + 1] <= i {
            a += 1;
        }
        if pts[a] == i || a + 1 == pts.len() {
            interp.push((a, a, 0.0));
        } else {
            let t = (i - pts[a]) as f64 / (pts[a + 1] - pts[a]) as f64;
            interp.push((a, a + 1, t));
        }
    }
    (pts, interp)
}

impl DirectionModel {
    pub fn new(grid: Grid, domain: &Domain, cfg: ModelConfig) -> Result<Self> {
        cfg.cost.validate()?;
        cfg.flux.validate()?;
        if cfg.stride == 0 {
            return config("observer stride must be at least 1");
        }
        if !(cfg.projection.ell > 0.0 && cfg.projection.k > 0.0) {
            return config("projection parameters must be positive");
        }
        let kernel = make_kernel(cfg.kernel, cfg.kernel_param, &grid)?;
        let wall_cost = if cfg.wall_cost && grid.dim == Dim::Two {
            wall_cost(&layer_profile(&grid, domain)?, &cfg.cost)
        } else {
            ScalarField::zeros(Location::Vertex, grid.vertex_dims())
        };
        let references = (0..grid.n_exits())
            .map(|k| Reference::new(&grid, &cfg.cost, k))
            .collect::<Result<Vec<_>>>()?;
        let boundary = cell_boundaries(&grid);
        let [nx, ny] = grid.vertex_dims();
        let (xs, interp_x) = lattice_axis(nx, cfg.stride);
        let (ys, interp_y) = lattice_axis(ny, cfg.stride);
        Ok(DirectionModel {
            grid,
            config: cfg,
            kernel,
            wall_cost,
            references,
            boundary,
            xs,
            ys,
            interp_x,
            interp_y,
        })
    }

    pub fn n_observers(&self) -> usize {
        self.xs.len() * self.ys.len()
    }

    /// Observer vertices near density above `thr`.
    fn active_observers(&self, rho: &ScalarField, thr: f64) -> Vec<bool> {
        let g = &self.grid;
        let [nx, ny] = g.vertex_dims();
        let dense: Vec<bool> = (0..g.n_vertices()).map(|v| g.vertex_cells(v).any(|c| rho.values[c] > thr)).collect();
        let hmax = if g.dim == Dim::Two { g.h[0].max(g.h[1]) } else { g.h[0] };
        let reach = self.kernel.support() + (self.config.stride + 1) as f64 * hmax;
        let ri = (reach / g.h[0]).ceil() as usize;
        let rj = if g.dim == Dim::Two { (reach / g.h[1]).ceil() as usize } else { 0 };
        let rows = dilate_rows(&dense, nx, ny, ri);
        let near = dilate_cols(&rows, nx, ny, rj);
        let mut out = Vec::with_capacity(self.n_observers());
        for &j in &self.ys {
            for &i in &self.xs {
                out.push(near[j * nx + i]);
            }
        }
        out
    }

    /// Self values and gradients on every vertex for every exit.
    pub fn self_values(&self, rho_v: &ScalarField, rho_cells: &ScalarField) -> Result<(Vec<Vec<SelfValue>>, AssemblyStats)> {
        let g = &self.grid;
        let cfg = &self.config;
        let nexits = g.n_exits();
        let visible = visible_cost(g, rho_v, &self.wall_cost, &cfg.cost);
        let mut stats = AssemblyStats::default();
        let tol = cfg.solver.tolerance(g, &cfg.cost);

        if cfg.vision.covers_grid(g) {
            let mut out = Vec::with_capacity(nexits);
            for k in 0..nexits {
                let p = EikonalProblem::new(g, visible.clone(), &[k]);
                let s = solve(&p, &cfg.solver, tol)?;
                stats.observer_solves += 1;
                out.push(
                    s.phi
                        .values
                        .iter()
                        .zip(&s.grad.values)
                        .map(|(&value, &grad)| SelfValue { value, grad })
                        .collect(),
                );
            }
            return Ok((out, stats));
        }

        let active = cfg.active_density.map(|thr| self.active_observers(rho_cells, thr));
        let nobs = self.n_observers();
        let nx_l = self.xs.len();
        let vnx = g.vertex_dims()[0];
        let solvers: Vec<SelfSolver> = self
            .references
            .iter()
            .map(|r| {
                SelfSolver::new(
                    g,
                    r,
                    &visible,
                    cfg.vision,
                    cfg.reduction,
                    cfg.solver.kind,
                    tol,
                    cfg.solver.max_sweeps,
                )
            })
            .collect();
        let results = par::map_range_init(nobs * nexits, cfg.parallel, SelfScratch::default, |scratch, idx| -> Result<(SelfValue, bool, usize)> {
            let (o, k) = (idx / nexits, idx % nexits);
            let v = self.ys[o / nx_l] * vnx + self.xs[o % nx_l];
            if active.as_ref().is_some_and(|a| !a[o]) {
                let r = &self.references[k].solution;
                return Ok((
                    SelfValue {
                        value: r.phi.values[v],
                        grad: r.grad.values[v],
                    },
                    false,
                    0,
                ));
            }
            let before = scratch.pops;
            let sv = solvers[k].solve(v, scratch)?;
            Ok((sv, true, scratch.pops - before))
        });
        let mut lattice = vec![Vec::with_capacity(nobs); nexits];
        for (idx, r) in results.into_iter().enumerate() {
            let (sv, solved, pops): (SelfValue, bool, usize) = r?;
            lattice[idx % nexits].push(sv);
            stats.observer_solves += solved as usize;
            stats.marched_vertices += pops;
        }
        let out = lattice.iter().map(|l| self.interpolate(l)).collect();
        Ok((out, stats))
    }

    fn interpolate(&self, lattice: &[SelfValue]) -> Vec<SelfValue> {
        let [nx, ny] = self.grid.vertex_dims();
        let nx_l = self.xs.len();
        let mut out = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            let (ja, jb, ty) = self.interp_y[j];
            for i in 0..nx {
                let (ia, ib, tx) = self.interp_x[i];
                if tx == 0.0 && ty == 0.0 {
                    out.push(lattice[ja * nx_l + ia]);
                    continue;
                }
                let corners = [
                    (ja * nx_l + ia, (1.0 - tx) * (1.0 - ty)),
                    (ja * nx_l + ib, tx * (1.0 - ty)),
                    (jb * nx_l + ia, (1.0 - tx) * ty),
                    (jb * nx_l + ib, tx * ty),
                ];
                let (mut w, mut val, mut grad) = (0.0, 0.0, [0.0; 2]);
                for (l, wt) in corners {
                    let s = lattice[l];
                    if wt > 0.0 && s.value.is_finite() {
                        w += wt;
                        val += wt * s.value;
                        grad[0] += wt * s.grad[0];
                        grad[1] += wt * s.grad[1];
                    }
                }
                out.push(if w > 0.0 {
                    SelfValue {
                        value: val / w,
                        grad: [grad[0] / w, grad[1] / w],
                    }
                } else {
                    SelfValue {
                        value: f64::INFINITY,
                        grad: [0.0; 2],
                    }
                });
            }
        }
        out
    }

    pub fn assemble(&self, rho: &ScalarField) -> Result<DirectionFields> {
        let g = &self.grid;
        let cfg = &self.config;
        let rho_max = cfg.cost.rho_max;
        let rho_v = cell_to_vertex(g, rho).map(|r| r.clamp(0.0, rho_max));
        let (per_exit, mut stats) = self.self_values(&rho_v, rho)?;
        let nexits = per_exit.len();
        let ncells = g.n_cells();

        let mut self_costs = vec![vec![0.0; ncells]; nexits];
        let mut cell_grads = vec![vec![[0.0; 2]; ncells]; nexits];
        for c in 0..ncells {
            for k in 0..nexits {
                let (mut s, mut gsum, mut n) = (0.0, [0.0; 2], 0);
                for v in g.cell_vertices(c) {
                    let sv = per_exit[k][v];
                    if sv.value.is_finite() {
                        s += sv.value;
                        gsum[0] += sv.grad[0];
                        gsum[1] += sv.grad[1];
                        n += 1;
                    }
                }
                if n > 0 {
                    self_costs[k][c] = s / n as f64;
                    cell_grads[k][c] = [gsum[0] / n as f64, gsum[1] / n as f64];
                } else {
                    self_costs[k][c] = f64::INFINITY;
                }
            }
        }
        let mut costs = vec![0.0; nexits];
        let choice: Vec<ExitChoice> = (0..ncells)
            .map(|c| {
                for k in 0..nexits {
                    costs[k] = self_costs[k][c];
                }
                select_exits(&costs)
            })
            .collect();
        let grads: Vec<[f64; 2]> = choice.iter().enumerate().map(|(c, ch)| cell_grads[ch.best][c]).collect();
        let (conviction, zero) = conviction_field(Location::Cell, g.cells, &choice, &grads, cfg.u_single);
        stats.zero_gradients = zero;
        let rho_c = rho.map(|r| r.clamp(0.0, rho_max));
        let consensus = consensus_field(&rho_c, &conviction, &self.kernel, cfg.cost.delta_rho, cfg.parallel);
        let direction = assemble_direction(&consensus, &self.boundary, &cfg.projection, cfg.literal_signs);
        Ok(DirectionFields {
            self_costs: self_costs
                .into_iter()
                .map(|v| ScalarField::on_cells(g, v))
                .collect(),
            choice,
            conviction,
            consensus,
            direction,
            stats,
        })
    }
}

fn dilate_rows(m: &[bool], nx: usize, ny: usize, r: usize) -> Vec<bool> {
    let mut out = vec![false; m.len()];
    for j in 0..ny {
        let row = &m[j * nx..(j + 1) * nx];
        let mut prefix = vec![0usize; nx + 1];
        for i in 0..nx {
            prefix[i + 1] = prefix[i] + row[i] as usize;
        }
        for i in 0..nx {
            let (a, b) = (i.saturating_sub(r), (i + r).min(nx - 1));
            out[j * nx + i] = prefix[b + 1] > prefix[a];
        }
    }
    out
}

fn dilate_cols(m: &[bool], nx: usize, ny: usize, r: usize) -> Vec<bool> {
    let mut out = vec![false; m.len()];
    for i in 0..nx {
        let mut prefix = vec![0usize; ny + 1];
        for j in 0..ny {
            prefix[j + 1] = prefix[j] + m[j * nx + i] as usize;
        }
        for j in 0..ny {
            let (a, b) = (j.saturating_sub(r), (j + r).min(ny - 1));
            out[j * nx + i] = prefix[b + 1] > prefix[a];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_grid;

    fn corridor() -> (Domain, Grid) {
        let d = Domain::new_2d(
            [0.0, 1.0],
            [0.0, 0.5],
            &[([0.0, 0.0], [0.0, 0.1]), ([1.0, 0.4], [1.0, 0.5])],
            0.025,
            vec![],
        )
        .unwrap();
        let g = build_grid(&d, &[40, 20]).unwrap();
        (d, g)
    }

    fn blocks(g: &Grid) -> ScalarField {
        ScalarField::on_cells(
            g,
            (0..g.n_cells())
                .map(|c| {
                    let p = g.cell_center(c);
                    if (0.05..0.3).contains(&p[0]) && p[1] < 0.25 {
                        0.1
                    } else if (0.6..0.95).contains(&p[0]) {
                        0.95
                    } else {
                        0.0
                    }
                })
                .collect(),
        )
    }

    #[test]
    fn lattice_axis_brackets() {
        let (pts, interp) = lattice_axis(10, 4);
        assert_eq!(pts, vec![0, 4, 8, 9]);
        assert_eq!(interp[4], (1, 1, 0.0));
        assert_eq!(interp[6], (1, 2, 0.5));
        assert_eq!(interp[9], (3, 3, 0.0));
    }

    #[test]
    fn stride_one_matches_direct_solves() {
        let (d, g) = corridor();
        let rho = blocks(&g);
        let cfg = ModelConfig {
            vision: VisionSpec::new(0.3).unwrap(),
            ..ModelConfig::default()
        };
        let m = DirectionModel::new(g.clone(), &d, cfg.clone()).unwrap();
        let rho_v = cell_to_vertex(&g, &rho);
        let (vals, stats) = m.self_values(&rho_v, &rho).unwrap();
        assert_eq!(stats.observer_solves, g.n_vertices() * 2);
        for k in 0..2 {
            for v in (0..g.n_vertices()).step_by(29) {
                let full = crate::eikonal::local_potential(
                    &g,
                    g.vertex_pos(v),
                    &rho_v,
                    k,
                    cfg.vision,
                    &cfg.cost,
                    &m.wall_cost,
                    &cfg.solver,
                )
                .unwrap();
                assert!((full.phi.values[v] - vals[k][v].value).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn active_skip_keeps_dynamics_near_density() {
        let (d, g) = corridor();
        let mut rho = ScalarField::zeros(Location::Cell, g.cells);
        rho.values[g.cell_index(20, 10)] = 0.5;
        let base = ModelConfig {
            vision: VisionSpec::new(0.3).unwrap(),
            stride: 2,
            ..ModelConfig::default()
        };
        let full = DirectionModel::new(g.clone(), &d, base.clone()).unwrap().assemble(&rho).unwrap();
        let skip = DirectionModel::new(
            g.clone(),
            &d,
            ModelConfig {
                active_density: Some(0.0),
                ..base
            },
        )
        .unwrap()
        .assemble(&rho)
        .unwrap();
        assert!(skip.stats.observer_solves < full.stats.observer_solves);
        for c in [g.cell_index(20, 10), g.cell_index(19, 10), g.cell_index(21, 11)] {
            assert_eq!(full.direction.values[c], skip.direction.values[c]);
        }
    }

    #[test]
    fn global_vision_uses_one_solve_per_exit() {
        let (d, g) = corridor();
        let m = DirectionModel::new(g.clone(), &d, ModelConfig::default()).unwrap();
        let f = m.assemble(&blocks(&g)).unwrap();
        assert_eq!(f.stats.observer_solves, 2);
        // empty right part of the corridor heads to the right exit
        let c = g.cell_index(38, 18);
        assert_eq!(f.choice[c].best, 1);
        assert!(f.direction.values[c][0] > 0.0);
        // far left heads left
        let c = g.cell_index(2, 2);
        assert_eq!(f.choice[c].best, 0);
        assert!(f.direction.values[c][0] < 0.0);
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let (d, g) = corridor();
        let cfg = ModelConfig {
            vision: VisionSpec::new(0.4).unwrap(),
            stride: 3,
            ..ModelConfig::default()
        };
        let a = DirectionModel::new(g.clone(), &d, cfg.clone()).unwrap().assemble(&blocks(&g)).unwrap();
        let b = DirectionModel::new(g.clone(), &d, ModelConfig { parallel: false, ..cfg })
            .unwrap()
            .assemble(&blocks(&g))
            .unwrap();
        assert_eq!(a.direction, b.direction);
    }
}
