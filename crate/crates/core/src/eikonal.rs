//! Eikonal solvers for `|grad_y phi(x, y)| = c(y)`: fast sweeping, fast
//! marching, a graph shortest-path oracle, observer-local cost assembly and the
//! exact domain reductions used to accelerate per-observer solves.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::fields::{Location, ScalarField, VectorField};
use crate::geometry::{in_disc, vision_mask, Dim, Grid, Point, VisionSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeedLaw {
    /// `f(rho) = 1 - rho / rho_max`
    Linear,
    /// `f(rho) = rho (rho_max - rho) / rho_max^2`
    Lwr,
}

/// Walking-cost law `c(rho) = min(1 / f(max(rho, delta_rho)), c_max)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModel {
    pub law: SpeedLaw,
    pub rho_max: f64,
    /// Density assumed in the hidden part of the domain.
    pub rho_hidden: f64,
    pub c_max: f64,
    pub delta_rho: f64,
    /// Wall cost is `chi / f(rho_max - wall_epsilon)`.
    pub wall_epsilon: f64,
    pub wall_cap: Option<f64>,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            law: SpeedLaw::Linear,
            rho_max: 1.0,
            rho_hidden: 0.0,
            c_max: 1e3,
            delta_rho: 1e-7,
            wall_epsilon: 0.025,
            wall_cap: None,
        }
    }
}

impl CostModel {
    pub fn speed(&self, rho: f64) -> f64 {
        let m = self.rho_max;
        match self.law {
            SpeedLaw::Linear => 1.0 - rho / m,
            SpeedLaw::Lwr => rho * (m - rho) / (m * m),
        }
    }

    pub fn cost(&self, rho: f64) -> f64 {
        let f = self.speed(rho.max(self.delta_rho));
        if f > 0.0 {
            (1.0 / f).min(self.c_max)
        } else {
            self.c_max
        }
    }

    pub fn hidden_cost(&self) -> f64 {
        self.cost(self.rho_hidden)
    }

    /// Checks numerically that the capped cost never decreases with density.
    pub fn is_nondecreasing(&self) -> bool {
        let n = 2000;
        let mut prev = self.cost(0.0);
        for i in 1..=n {
            let c = self.cost(self.rho_max * i as f64 / n as f64);
            if c < prev - 1e-12 * prev {
                return false;
            }
            prev = c;
        }
        true
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho_max > 0.0) {
            return config("rho_max must be positive");
        }
        if !(0.0..self.rho_max).contains(&self.rho_hidden) {
            return config(format!("hidden density {} outside [0, rho_max)", self.rho_hidden));
        }
        if !(self.c_max > 0.0 && self.c_max.is_finite()) {
            return config("c_max must be positive and finite");
        }
        if !(self.delta_rho > 0.0) {
            return config("delta_rho must be positive");
        }
        if !(self.wall_epsilon > 0.0 && self.wall_epsilon < self.rho_max) {
            return config("wall epsilon must lie in (0, rho_max)");
        }
        if let Some(cap) = self.wall_cap {
            if !(cap >= 0.0) {
                return config("wall cap must be nonnegative");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Fsm,
    Fmm,
}

impl FromStr for SolverKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fsm" => Ok(SolverKind::Fsm),
            "fmm" => Ok(SolverKind::Fmm),
            _ => config(format!("unknown solver {s:?} (expected fsm or fmm)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    None,
    Mh,
    Vsharp,
}

impl FromStr for Reduction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Reduction::None),
            "mh" => Ok(Reduction::Mh),
            "vsharp" => Ok(Reduction::Vsharp),
            _ => config(format!("unknown reduction {s:?} (expected none, mh or vsharp)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub kind: SolverKind,
    /// `None` selects `1e-8 * diameter * c_max`.
    pub tol: Option<f64>,
    pub max_sweeps: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            kind: SolverKind::Fmm,
            tol: None,
            max_sweeps: 100,
        }
    }
}

impl SolverSettings {
    pub fn tolerance(&self, grid: &Grid, cm: &CostModel) -> f64 {
        self.tol.unwrap_or_else(|| {
            let e = grid.extent();
            1e-8 * e[0].hypot(e[1]) * cm.c_max
        })
    }
}

/// Cost field plus Dirichlet data.
#[derive(Clone, Debug)]
pub struct EikonalProblem<'a> {
    pub grid: &'a Grid,
    /// Per-vertex cost; `INFINITY` marks impassable vertices.
    pub cost: Vec<f64>,
    pub boundary: Vec<(usize, f64)>,
}

impl<'a> EikonalProblem<'a> {
    /// Zero boundary on the vertices of the listed exits.
    pub fn new(grid: &'a Grid, cost: Vec<f64>, exits: &[usize]) -> Self {
        let boundary = exits
            .iter()
            .flat_map(|&k| grid.exit_vertices[k].iter().map(|&v| (v, 0.0)))
            .collect();
        EikonalProblem { grid, cost, boundary }
    }

    pub fn constant(grid: &'a Grid, c: f64, exits: &[usize]) -> Self {
        let cost = (0..grid.n_vertices())
            .map(|v| if grid.passable[v] { c } else { f64::INFINITY })
            .collect();
        Self::new(grid, cost, exits)
    }
}

#[derive(Clone, Debug)]
pub struct EikonalSolution {
    pub phi: ScalarField,
    /// Upwind gradient.
    pub grad: VectorField,
    pub sweeps: usize,
    pub residual: f64,
    /// Acceptance order (marching solvers only).
    pub accepted: Vec<usize>,
}

/// Visible vertices get `c(max(rho, delta)) + W`, hidden ones `c(rho_H)`;
/// impassable vertices are infinite.
pub fn assemble_cost(grid: &Grid, rho: &ScalarField, mask: &[bool], w: &ScalarField, cm: &CostModel) -> ScalarField {
    let hidden = cm.hidden_cost();
    let values = (0..grid.n_vertices())
        .map(|v| {
            if !grid.passable[v] {
                f64::INFINITY
            } else if mask[v] {
                cm.cost(rho.values[v]) + w.values[v]
            } else {
                hidden
            }
        })
        .collect();
    ScalarField::on_vertices(grid, values)
}

/// Per-vertex visible cost `c(rho) + W` (infinite on impassable vertices).
pub fn visible_cost(grid: &Grid, rho: &ScalarField, w: &ScalarField, cm: &CostModel) -> Vec<f64> {
    (0..grid.n_vertices())
        .map(|v| {
            if grid.passable[v] {
                cm.cost(rho.values[v]) + w.values[v]
            } else {
                f64::INFINITY
            }
        })
        .collect()
}

/// Godunov update from the smaller neighbour per axis.
#[inline]
pub(crate) fn godunov(a: f64, b: f64, c: f64, hx: f64, hy: f64) -> f64 {
    let ta = a + c * hx;
    if ta <= b {
        return ta;
    }
    let tb = b + c * hy;
    if tb <= a {
        return tb;
    }
    let ia = 1.0 / (hx * hx);
    let ib = 1.0 / (hy * hy);
    let s = ia + ib;
    let disc = s * c * c - ia * ib * (a - b) * (a - b);
    (ia * a + ib * b + disc.max(0.0).sqrt()) / s
}

/// Neighbour lookup on the vertex lattice. Directions: 0 = -x, 1 = +x,
/// 2 = -y, 3 = +y.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Lattice {
    pub nx: usize,
    pub ny: usize,
    pub h: [f64; 2],
    pub two_d: bool,
}

impl Lattice {
    pub fn new(grid: &Grid) -> Self {
        let [nx, ny] = grid.vertex_dims();
        Lattice {
            nx,
            ny,
            h: grid.h,
            two_d: grid.dim == Dim::Two,
        }
    }

    #[inline]
    pub fn nbr(&self, v: usize, d: usize) -> Option<usize> {
        let i = v % self.nx;
        match d {
            0 => (i > 0).then(|| v - 1),
            1 => (i + 1 < self.nx).then(|| v + 1),
            2 => (v >= self.nx).then(|| v - self.nx),
            _ => (v + self.nx < self.nx * self.ny).then(|| v + self.nx),
        }
    }

    #[inline]
    pub fn ndirs(&self) -> usize {
        if self.two_d {
            4
        } else {
            2
        }
    }

    #[inline]
    pub fn ij(&self, v: usize) -> (usize, usize) {
        let (v, nx) = (v as u32, self.nx as u32);
        ((v % nx) as usize, (v / nx) as usize)
    }

    /// Godunov value at vertex `v = (i, j)` from neighbour values given by `val`.
    #[inline]
    pub fn update_ij(&self, v: usize, i: usize, j: usize, c: f64, val: impl Fn(usize) -> f64) -> f64 {
        let lo = if i > 0 { val(v - 1) } else { f64::INFINITY };
        let hi = if i + 1 < self.nx { val(v + 1) } else { f64::INFINITY };
        let a = lo.min(hi);
        if !self.two_d {
            return a + c * self.h[0];
        }
        let lo = if j > 0 { val(v - self.nx) } else { f64::INFINITY };
        let hi = if j + 1 < self.ny { val(v + self.nx) } else { f64::INFINITY };
        let b = lo.min(hi);
        if a == f64::INFINITY && b == f64::INFINITY {
            return f64::INFINITY;
        }
        godunov(a, b, c, self.h[0], self.h[1])
    }

    /// One-sided gradient towards the smaller neighbour on each axis, zero on
    /// an axis where no neighbour is smaller or both are equal.
    #[inline]
    pub fn upwind_grad(&self, v: usize, phi_v: f64, val: impl Fn(usize) -> f64) -> [f64; 2] {
        let mut g = [0.0; 2];
        if !phi_v.is_finite() {
            return g;
        }
        let axes = if self.two_d { 2 } else { 1 };
        for (axis, gi) in g.iter_mut().enumerate().take(axes) {
            let lo = self.nbr(v, 2 * axis).map_or(f64::INFINITY, &val);
            let hi = self.nbr(v, 2 * axis + 1).map_or(f64::INFINITY, &val);
            let h = self.h[axis];
            if lo < phi_v && lo < hi {
                *gi = (phi_v - lo) / h;
            } else if hi < phi_v && hi < lo {
                *gi = (hi - phi_v) / h;
            }
        }
        g
    }
}

pub fn upwind_gradient(grid: &Grid, phi: &ScalarField) -> VectorField {
    let lat = Lattice::new(grid);
    let values = (0..phi.len())
        .map(|v| lat.upwind_grad(v, phi.values[v], |u| phi.values[u]))
        .collect();
    VectorField::from_values(Location::Vertex, grid.vertex_dims(), values)
}

fn finish(grid: &Grid, phi: Vec<f64>, sweeps: usize, residual: f64, accepted: Vec<usize>) -> EikonalSolution {
    let phi = ScalarField::on_vertices(grid, phi);
    let grad = upwind_gradient(grid, &phi);
    EikonalSolution {
        phi,
        grad,
        sweeps,
        residual,
        accepted,
    }
}

fn check_problem(p: &EikonalProblem) -> Result<()> {
    if p.boundary.is_empty() {
        return config("eikonal problem has an empty boundary set");
    }
    if p.cost.len() != p.grid.n_vertices() {
        return config("cost field does not match the grid");
    }
    if let Some(c) = p.cost.iter().find(|c| !(**c > 0.0)) {
        return config(format!("eikonal cost must be positive, found {c}"));
    }
    Ok(())
}

/// Gauss-Seidel fast sweeping over all `2^d` orderings. Every directional
/// sweep counts towards `max_sweeps`; convergence is checked after each full
/// cycle of orderings.
pub fn fsm_solve(p: &EikonalProblem, tol: f64, max_sweeps: usize) -> Result<EikonalSolution> {
    check_problem(p)?;
    let lat = Lattice::new(p.grid);
    let n = p.grid.n_vertices();
    let mut phi = vec![f64::INFINITY; n];
    let mut fixed = vec![false; n];
    for &(v, val) in &p.boundary {
        phi[v] = phi[v].min(val);
        fixed[v] = true;
    }
    let (nx, ny) = (lat.nx, lat.ny);
    let orders: &[(bool, bool)] = if lat.two_d {
        &[(false, false), (true, false), (true, true), (false, true)]
    } else {
        &[(false, false), (true, false)]
    };
    let mut sweeps = 0;
    loop {
        let mut change: f64 = 0.0;
        for &(rev_x, rev_y) in orders {
            sweeps += 1;
            for jj in 0..ny {
                let j = if rev_y { ny - 1 - jj } else { jj };
                for ii in 0..nx {
                    let i = if rev_x { nx - 1 - ii } else { ii };
                    let v = j * nx + i;
                    let c = p.cost[v];
                    if fixed[v] || !c.is_finite() {
                        continue;
                    }
                    let new = lat.update_ij(v, i, j, c, |u| phi[u]);
                    if new < phi[v] {
                        change = change.max(phi[v] - new);
                        phi[v] = new;
                    }
                }
            }
        }
        if change <= tol {
            return Ok(finish(p.grid, phi, sweeps, change, Vec::new()));
        }
        if sweeps >= max_sweeps {
            return Err(Error::NonConvergence {
                sweeps,
                residual: change,
            });
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Entry {
    key: f64,
    v: u32,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.key.total_cmp(&self.key).then_with(|| other.v.cmp(&self.v))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const FAR: u8 = 0;
const TRIAL: u8 = 1;
const KNOWN: u8 = 2;

/// Reusable fast-marching workspace. Resetting is O(1) through generation
/// stamps, so one workspace can serve thousands of small local solves.
#[derive(Clone, Debug, Default)]
pub struct Marcher {
    phi: Vec<f64>,
    stamp: Vec<u32>,
    state: Vec<u8>,
    gen: u32,
    heap: BinaryHeap<Entry>,
    /// Vertices accepted by the last march.
    pub pops: usize,
}

impl Marcher {
    pub fn new(n: usize) -> Self {
        Marcher {
            phi: vec![f64::INFINITY; n],
            stamp: vec![0; n],
            state: vec![FAR; n],
            gen: 0,
            heap: BinaryHeap::new(),
            pops: 0,
        }
    }

    fn reset(&mut self, n: usize) {
        if self.phi.len() != n {
            *self = Marcher::new(n);
        }
        self.gen = self.gen.wrapping_add(1);
        if self.gen == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.gen = 1;
        }
        self.heap.clear();
        self.pops = 0;
    }

    #[inline]
    fn state(&self, v: usize) -> u8 {
        if self.stamp[v] == self.gen {
            self.state[v]
        } else {
            FAR
        }
    }

    #[inline]
    fn known(&self, v: usize) -> f64 {
        if self.state(v) == KNOWN {
            self.phi[v]
        } else {
            f64::INFINITY
        }
    }

    #[inline]
    fn set(&mut self, v: usize, val: f64, st: u8) {
        self.stamp[v] = self.gen;
        self.phi[v] = val;
        self.state[v] = st;
    }

    /// Marches from `sources` (accepted with their values) and `seeds`
    /// (non-fixed vertices next to the fixed region). `fixed(v)` returns the
    /// frozen value of vertices outside the unknown region. Stops once
    /// `target` is accepted. Returns the value at `target` if given.
    #[allow(clippy::too_many_arguments)]
    fn march<C, F>(
        &mut self,
        lat: &Lattice,
        n: usize,
        cost: C,
        fixed: F,
        sources: &[(usize, f64)],
        seeds: &[usize],
        target: Option<usize>,
        mut trace: Option<&mut Vec<usize>>,
    ) -> f64
    where
        C: Fn(usize, usize, usize) -> f64,
        F: Fn(usize) -> Option<f64>,
    {
        self.reset(n);
        if let Some(t) = target {
            if let Some(val) = fixed(t) {
                return val;
            }
        }
        for &(v, val) in sources {
            if self.state(v) != FAR && self.phi[v] <= val {
                continue;
            }
            self.set(v, val, TRIAL);
            self.heap.push(Entry { key: val, v: v as u32 });
        }
        for &v in seeds {
            if fixed(v).is_some() || self.state(v) != FAR {
                continue;
            }
            let (i, j) = lat.ij(v);
            let c = cost(v, i, j);
            if !c.is_finite() {
                continue;
            }
            let val = lat.update_ij(v, i, j, c, |u| fixed(u).unwrap_or(f64::INFINITY));
            if val.is_finite() {
                self.set(v, val, TRIAL);
                self.heap.push(Entry { key: val, v: v as u32 });
            }
        }
        while let Some(Entry { key, v }) = self.heap.pop() {
            let v = v as usize;
            if self.state(v) == KNOWN || key > self.phi[v] {
                continue;
            }
            self.state[v] = KNOWN;
            self.pops += 1;
            if let Some(t) = trace.as_deref_mut() {
                t.push(v);
            }
            if Some(v) == target {
                return key;
            }
            let (i, j) = lat.ij(v);
            for d in 0..lat.ndirs() {
                let (u, iu, ju) = match d {
                    0 if i > 0 => (v - 1, i - 1, j),
                    1 if i + 1 < lat.nx => (v + 1, i + 1, j),
                    2 if j > 0 => (v - lat.nx, i, j - 1),
                    3 if j + 1 < lat.ny => (v + lat.nx, i, j + 1),
                    _ => continue,
                };
                if self.state(u) == KNOWN || fixed(u).is_some() {
                    continue;
                }
                let c = cost(u, iu, ju);
                if !c.is_finite() {
                    continue;
                }
                let val = lat.update_ij(u, iu, ju, c, |w| fixed(w).unwrap_or_else(|| self.known(w)));
                if self.state(u) == FAR || val < self.phi[u] {
                    self.set(u, val, TRIAL);
                    self.heap.push(Entry { key: val, v: u as u32 });
                }
            }
        }
        target.map_or(f64::NAN, |t| self.known(t))
    }

    /// Value of `v` after the last march (fixed values take precedence).
    #[inline]
    fn value(&self, v: usize, fixed: &impl Fn(usize) -> Option<f64>) -> f64 {
        fixed(v).unwrap_or_else(|| self.known(v))
    }
}

/// Fast marching with a binary heap; accepted values never change.
pub fn fmm_solve(p: &EikonalProblem) -> Result<EikonalSolution> {
    check_problem(p)?;
    let lat = Lattice::new(p.grid);
    let n = p.grid.n_vertices();
    let mut m = Marcher::new(n);
    let mut order = Vec::with_capacity(n);
    let cost = |v: usize, _: usize, _: usize| p.cost[v];
    m.march(&lat, n, cost, |_| None, &p.boundary, &[], None, Some(&mut order));
    let phi = (0..n).map(|v| m.known(v)).collect();
    Ok(finish(p.grid, phi, 0, 0.0, order))
}

pub fn solve(p: &EikonalProblem, settings: &SolverSettings, tol: f64) -> Result<EikonalSolution> {
    match settings.kind {
        SolverKind::Fsm => fsm_solve(p, tol, settings.max_sweeps),
        SolverKind::Fmm => fmm_solve(p),
    }
}

/// Shortest paths on the 8-neighbour graph with edge weight
/// `(c_a + c_b) / 2 * |a - b|`.
pub fn dijkstra_oracle(p: &EikonalProblem) -> Result<EikonalSolution> {
    check_problem(p)?;
    let lat = Lattice::new(p.grid);
    let n = p.grid.n_vertices();
    let mut dist = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    for &(v, val) in &p.boundary {
        if val < dist[v] {
            dist[v] = val;
            heap.push(Entry { key: val, v: v as u32 });
        }
    }
    let steps: &[(isize, isize)] = if lat.two_d {
        &[(-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (1, -1), (-1, 1), (1, 1)]
    } else {
        &[(-1, 0), (1, 0)]
    };
    let mut order = Vec::with_capacity(n);
    let mut done = vec![false; n];
    while let Some(Entry { key, v }) = heap.pop() {
        let v = v as usize;
        if done[v] || key > dist[v] {
            continue;
        }
        done[v] = true;
        order.push(v);
        let (i, j) = ((v % lat.nx) as isize, (v / lat.nx) as isize);
        for &(di, dj) in steps {
            let (a, b) = (i + di, j + dj);
            if a < 0 || b < 0 || a as usize >= lat.nx || b as usize >= lat.ny {
                continue;
            }
            let u = b as usize * lat.nx + a as usize;
            if !p.cost[u].is_finite() {
                continue;
            }
            let len = (di as f64 * lat.h[0]).hypot(dj as f64 * lat.h[1]);
            let nd = key + 0.5 * (p.cost[v] + p.cost[u]) * len;
            if nd < dist[u] {
                dist[u] = nd;
                heap.push(Entry { key: nd, v: u as u32 });
            }
        }
    }
    Ok(finish(p.grid, dist, 0, 0.0, order))
}

/// Full-domain potential towards exit `k` as seen from observer `x`.
#[allow(clippy::too_many_arguments)]
pub fn local_potential(
    grid: &Grid,
    x: Point,
    rho: &ScalarField,
    k: usize,
    vision: VisionSpec,
    cm: &CostModel,
    w: &ScalarField,
    settings: &SolverSettings,
) -> Result<EikonalSolution> {
    if !grid.contains(x) {
        return Err(Error::OutsideDomain(x[0], x[1]));
    }
    let mask = vision_mask(grid, x, vision);
    let cost = assemble_cost(grid, rho, &mask, w, cm);
    let p = EikonalProblem::new(grid, cost.values, &[k]);
    solve(&p, settings, settings.tolerance(grid, cm))
}

/// Potential for constant hidden cost with the listed exits as zero boundary.
pub fn compute_reference_potential(cm: &CostModel, grid: &Grid, exits: &[usize]) -> Result<EikonalSolution> {
    let p = EikonalProblem::constant(grid, cm.hidden_cost(), exits);
    fmm_solve(&p)
}

/// `m_H = min_{V_x} phi_H` and the superlevel set `M_H = {phi_H >= m_H}`.
pub fn compute_mh(phi_h: &ScalarField, grid: &Grid, x: Point, vision: VisionSpec) -> (f64, Vec<bool>) {
    let mask = vision_mask(grid, x, vision);
    let m_h = phi_h
        .values
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .map(|(&p, _)| p)
        .fold(f64::INFINITY, f64::min);
    let set = phi_h.values.iter().map(|&p| p >= m_h).collect();
    (m_h, set)
}

/// Sorted reference potential plus upwind bookkeeping used by the reductions.
#[derive(Clone, Debug)]
pub struct Reference {
    pub exit: usize,
    pub solution: EikonalSolution,
    pub hidden_cost: f64,
    order: Vec<u32>,
    sorted: Vec<f64>,
    /// Bit `d` set when neighbour `d` is an upwind dependency.
    used: Vec<u8>,
    /// Smallest neighbour value.
    min_nbr: Vec<f64>,
    source: Vec<bool>,
}

impl Reference {
    pub fn new(grid: &Grid, cm: &CostModel, exit: usize) -> Result<Self> {
        let solution = compute_reference_potential(cm, grid, &[exit])?;
        let lat = Lattice::new(grid);
        let phi = &solution.phi.values;
        let n = phi.len();
        let mut order: Vec<u32> = (0..n as u32).filter(|&v| phi[v as usize].is_finite()).collect();
        order.sort_by(|&a, &b| phi[a as usize].total_cmp(&phi[b as usize]).then(a.cmp(&b)));
        let sorted = order.iter().map(|&v| phi[v as usize]).collect();
        let mut used = vec![0u8; n];
        let mut min_nbr = vec![f64::INFINITY; n];
        for v in 0..n {
            for d in 0..lat.ndirs() {
                if let Some(u) = lat.nbr(v, d) {
                    min_nbr[v] = min_nbr[v].min(phi[u]);
                    if phi[u] < phi[v] {
                        used[v] |= 1 << d;
                    }
                }
            }
        }
        let mut source = vec![false; n];
        for &v in &grid.exit_vertices[exit] {
            source[v] = true;
        }
        Ok(Reference {
            exit,
            solution,
            hidden_cost: cm.hidden_cost(),
            order,
            sorted,
            used,
            min_nbr,
            source,
        })
    }

    pub fn phi(&self) -> &[f64] {
        &self.solution.phi.values
    }

    fn first_at_least(&self, level: f64) -> usize {
        self.sorted.partition_point(|&p| p < level)
    }

    /// Margin below `m_H` under which reference values are frozen.
    fn margin(&self, grid: &Grid) -> f64 {
        let h = match grid.dim {
            Dim::One => grid.h[0],
            Dim::Two => grid.h[0].max(grid.h[1]),
        };
        1.01 * self.hidden_cost * h
    }

    /// Non-fixed vertices adjacent to `{phi_H < level}`.
    fn frontier(&self, grid: &Grid, level: f64, out: &mut Vec<usize>) {
        out.clear();
        let hi = level + self.margin(grid);
        let start = self.first_at_least(level);
        for &v in &self.order[start..] {
            let v = v as usize;
            if self.sorted_value(v) > hi {
                break;
            }
            if self.min_nbr[v] < level && !self.source[v] {
                out.push(v);
            }
        }
    }

    #[inline]
    fn sorted_value(&self, v: usize) -> f64 {
        self.solution.phi.values[v]
    }
}

/// Upwind dependency fan of the vision set in the reference potential: every
/// vertex whose discrete characteristic reaches a visible vertex.
pub fn vsharp_dependency(reference: &Reference, grid: &Grid, mask: &[bool], m_h: f64) -> Vec<bool> {
    let lat = Lattice::new(grid);
    let mut dep = vec![false; grid.n_vertices()];
    let start = reference.first_at_least(m_h);
    for &v in &reference.order[start..] {
        let v = v as usize;
        if mask[v] {
            dep[v] = true;
            continue;
        }
        let bits = reference.used[v];
        dep[v] = (0..lat.ndirs()).any(|d| bits & (1 << d) != 0 && lat.nbr(v, d).is_some_and(|u| dep[u]));
    }
    dep
}

/// Characteristics' shadow of the vision set: gradient walks of step `h/2`
/// on the reference potential that pass through the vision disc, united with
/// the discrete dependency fan, restricted to `M_H`.
pub fn compute_vsharp(reference: &Reference, grid: &Grid, x: Point, vision: VisionSpec) -> Vec<bool> {
    let phi_h = &reference.solution.phi;
    let (m_h, mh) = compute_mh(phi_h, grid, x, vision);
    let mask = vision_mask(grid, x, vision);
    let mut out = vsharp_dependency(reference, grid, &mask, m_h);
    if vision.covers_grid(grid) {
        return mh;
    }
    let h = match grid.dim {
        Dim::One => grid.h[0],
        Dim::Two => grid.h[0].min(grid.h[1]),
    };
    let step = 0.5 * h;
    let e = grid.extent();
    let budget = (10.0 * e[0].hypot(e[1]) / h).ceil() as usize;
    let r = vision.radius();
    let stop = reference.hidden_cost * h;
    for v in 0..grid.n_vertices() {
        if out[v] || !mh[v] || !phi_h.values[v].is_finite() {
            continue;
        }
        let mut p = grid.vertex_pos(v);
        let mut hit = true;
        for _ in 0..budget {
            if in_disc(p, x, r) {
                break;
            }
            if sample_scalar(grid, &phi_h.values, p) <= stop {
                hit = false;
                break;
            }
            let g = sample_vector(grid, &reference.solution.grad.values, p);
            let n = g[0].hypot(g[1]);
            if n == 0.0 {
                hit = false;
                break;
            }
            p = [p[0] - step * g[0] / n, p[1] - step * g[1] / n];
        }
        out[v] = hit;
    }
    for (o, m) in out.iter_mut().zip(&mh) {
        *o &= *m;
    }
    out
}

fn bilinear_weights(grid: &Grid, p: Point) -> [(usize, f64); 4] {
    let [nx, ny] = grid.vertex_dims();
    let fx = ((p[0] - grid.origin[0]) / grid.h[0]).clamp(0.0, (nx - 1) as f64);
    let i = (fx.floor() as usize).min(nx.saturating_sub(2));
    let tx = fx - i as f64;
    if grid.dim == Dim::One {
        return [(i, 1.0 - tx), (i + 1, tx), (i, 0.0), (i, 0.0)];
    }
    let fy = ((p[1] - grid.origin[1]) / grid.h[1]).clamp(0.0, (ny - 1) as f64);
    let j = (fy.floor() as usize).min(ny.saturating_sub(2));
    let ty = fy - j as f64;
    let v = j * nx + i;
    [
        (v, (1.0 - tx) * (1.0 - ty)),
        (v + 1, tx * (1.0 - ty)),
        (v + nx, (1.0 - tx) * ty),
        (v + nx + 1, tx * ty),
    ]
}

fn sample_scalar(grid: &Grid, f: &[f64], p: Point) -> f64 {
    bilinear_weights(grid, p)
        .iter()
        .filter(|(_, w)| *w > 0.0)
        .map(|&(v, w)| w * f[v])
        .sum()
}

fn sample_vector(grid: &Grid, f: &[[f64; 2]], p: Point) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (v, w) in bilinear_weights(grid, p) {
        if w > 0.0 {
            out[0] += w * f[v][0];
            out[1] += w * f[v][1];
        }
    }
    out
}

impl VisionSpec {
    pub(crate) fn covers_grid(&self, grid: &Grid) -> bool {
        let e = grid.extent();
        self.diameter.is_infinite() || self.radius() >= e[0].hypot(e[1])
    }
}

/// Full-domain potential computed on the reduced unknown set: `M_H` (frozen
/// reference values below `m_H`) or, when the cost is nondecreasing in
/// density and the hidden density vanishes, the characteristics' shadow.
#[allow(clippy::too_many_arguments)]
pub fn reduced_local_potential(
    grid: &Grid,
    x: Point,
    rho: &ScalarField,
    reference: &Reference,
    vision: VisionSpec,
    cm: &CostModel,
    w: &ScalarField,
    settings: &SolverSettings,
    reduction: Reduction,
) -> Result<EikonalSolution> {
    if !grid.contains(x) {
        return Err(Error::OutsideDomain(x[0], x[1]));
    }
    let mask = vision_mask(grid, x, vision);
    let cost = assemble_cost(grid, rho, &mask, w, cm);
    let phi_h = reference.phi();
    let m_h = phi_h
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .map(|(&p, _)| p)
        .fold(f64::INFINITY, f64::min);
    let frozen: Vec<bool> = match effective_reduction(reduction, cm) {
        Reduction::None => vec![false; phi_h.len()],
        Reduction::Mh => {
            let level = m_h - reference.margin(grid);
            phi_h.iter().map(|&p| p < level).collect()
        }
        Reduction::Vsharp => {
            let dep = vsharp_dependency(reference, grid, &mask, m_h);
            dep.iter().zip(phi_h).map(|(&d, p)| !d && p.is_finite()).collect()
        }
    };
    let mut p = EikonalProblem::new(grid, cost.values, &[reference.exit]);
    p.boundary.retain(|&(v, _)| !frozen[v]);
    p.boundary
        .extend((0..phi_h.len()).filter(|&v| frozen[v]).map(|v| (v, phi_h[v])));
    solve(&p, settings, settings.tolerance(grid, cm))
}

/// The reduction actually applied: the shadow reduction needs zero hidden
/// density and a cost law that never decreases with density.
pub fn effective_reduction(requested: Reduction, cm: &CostModel) -> Reduction {
    if requested == Reduction::Vsharp && !(cm.rho_hidden == 0.0 && cm.is_nondecreasing()) {
        log::debug!("shadow reduction preconditions fail; using the superlevel-set reduction");
        return Reduction::Mh;
    }
    requested
}

/// Observer-local self value `phi_k(x, x)` and upwind self-gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelfValue {
    pub value: f64,
    pub grad: [f64; 2],
}

/// Shared per-step inputs for observer-local solves towards one exit.
pub struct SelfSolver<'a> {
    pub grid: &'a Grid,
    pub reference: &'a Reference,
    /// Visible cost per vertex (`c(rho) + W`, infinite when impassable).
    pub visible: &'a [f64],
    pub vision: VisionSpec,
    pub reduction: Reduction,
    pub solver: SolverKind,
    pub tol: f64,
    pub max_sweeps: usize,
    /// Prefix sums of the visible cost along a 1D corridor.
    prefix: Option<Vec<f64>>,
}

/// Per-worker scratch for [`SelfSolver`].
#[derive(Default)]
pub struct SelfScratch {
    marcher: Marcher,
    seeds: Vec<usize>,
    mask: Vec<bool>,
    pub pops: usize,
}

impl<'a> SelfSolver<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: &'a Grid,
        reference: &'a Reference,
        visible: &'a [f64],
        vision: VisionSpec,
        reduction: Reduction,
        solver: SolverKind,
        tol: f64,
        max_sweeps: usize,
    ) -> Self {
        let prefix = (grid.dim == Dim::One).then(|| {
            let mut s = Vec::with_capacity(visible.len() + 1);
            s.push(0.0);
            for &c in visible {
                s.push(s.last().unwrap() + c);
            }
            s
        });
        SelfSolver {
            grid,
            reference,
            visible,
            vision,
            reduction,
            solver,
            tol,
            max_sweeps,
            prefix,
        }
    }

    fn hidden(&self) -> f64 {
        self.reference.hidden_cost
    }

    /// Along a 1D corridor the single-source Godunov recursion is
    /// `phi_i = phi_{i -/+ 1} + c_i h`, evaluated here with prefix sums.
    fn solve_1d(&self, own: usize) -> SelfValue {
        let prefix = self.prefix.as_ref().expect("1D prefix sums");
        let n = self.visible.len();
        let h = self.grid.h[0];
        let src = self.grid.exit_vertices[self.reference.exit][0];
        let (lo, hi) = if self.vision.diameter.is_infinite() {
            (0, n - 1)
        } else {
            let r = (self.vision.radius() * (1.0 + 1e-12) + 1e-12) / h;
            let r = r.floor() as usize;
            (own.saturating_sub(r), (own + r).min(n - 1))
        };
        // costs counted on vertices strictly between the source and `own`, plus own
        let sum = |a: usize, b: usize| -> f64 {
            // sum over vertices a..=b of the observer cost
            if a > b {
                return 0.0;
            }
            let (va, vb) = (a.max(lo), b.min(hi));
            let vis = if va <= vb { prefix[vb + 1] - prefix[va] } else { 0.0 };
            let nvis = if va <= vb { vb - va + 1 } else { 0 };
            vis + self.hidden() * ((b - a + 1) - nvis) as f64
        };
        if own == src {
            return SelfValue {
                value: 0.0,
                grad: [0.0; 2],
            };
        }
        let (value, g) = if src < own {
            let value = h * sum(src + 1, own);
            let c_own = self.cost_1d(own, lo, hi);
            (value, c_own)
        } else {
            let value = h * sum(own, src - 1);
            let c_own = self.cost_1d(own, lo, hi);
            (value, -c_own)
        };
        SelfValue { value, grad: [g, 0.0] }
    }

    fn cost_1d(&self, v: usize, lo: usize, hi: usize) -> f64 {
        if (lo..=hi).contains(&v) {
            self.visible[v]
        } else {
            self.hidden()
        }
    }

    /// Self value at vertex `own` for an observer located at that vertex.
    pub fn solve(&self, own: usize, scratch: &mut SelfScratch) -> Result<SelfValue> {
        if self.grid.dim == Dim::One && self.grid.exit_vertices[self.reference.exit].len() == 1 {
            return Ok(self.solve_1d(own));
        }
        if !self.grid.passable[own] {
            return Ok(SelfValue {
                value: f64::INFINITY,
                grad: [0.0; 2],
            });
        }
        let grid = self.grid;
        let lat = Lattice::new(grid);
        let n = grid.n_vertices();
        let x = grid.vertex_pos(own);
        let r = self.vision.radius();
        let global = self.vision.diameter.is_infinite();
        let (visible, hidden) = (self.visible, self.hidden());
        let [ox, oy] = grid.origin;
        let [hx, hy] = grid.h;
        let two_d = grid.dim == Dim::Two;
        let cost = |v: usize, i: usize, j: usize| {
            let p = [ox + i as f64 * hx, if two_d { oy + j as f64 * hy } else { oy }];
            if global || v == own || in_disc(p, x, r) {
                visible[v]
            } else if visible[v].is_finite() {
                hidden
            } else {
                f64::INFINITY
            }
        };
        let phi_h = self.reference.phi();
        let source = &self.reference.source;
        let m_h = if global {
            0.0
        } else {
            disc_min(grid, phi_h, x, r, own)
        };
        let reduction = if global {
            Reduction::None
        } else {
            self.reduction
        };

        if self.solver == SolverKind::Fsm {
            return self.solve_fsm(own, &cost, reduction, m_h, scratch);
        }

        let exits: Vec<(usize, f64)>;
        let value = match reduction {
            Reduction::None => {
                exits = grid.exit_vertices[self.reference.exit].iter().map(|&v| (v, 0.0)).collect();
                let v = scratch.marcher.march(&lat, n, cost, |_| None, &exits, &[], Some(own), None);
                let g = lat.upwind_grad(own, v, |u| scratch.marcher.known(u));
                (v, g)
            }
            Reduction::Mh | Reduction::Vsharp if m_h - self.reference.margin(grid) <= 0.0 => {
                exits = grid.exit_vertices[self.reference.exit].iter().map(|&v| (v, 0.0)).collect();
                let v = scratch.marcher.march(&lat, n, cost, |_| None, &exits, &[], Some(own), None);
                let g = lat.upwind_grad(own, v, |u| scratch.marcher.known(u));
                (v, g)
            }
            Reduction::Mh => {
                let level = m_h - self.reference.margin(grid);
                self.reference.frontier(grid, level, &mut scratch.seeds);
                let fixed = |v: usize| (phi_h[v] < level || source[v]).then(|| if source[v] { 0.0 } else { phi_h[v] });
                let seeds = std::mem::take(&mut scratch.seeds);
                let v = scratch.marcher.march(&lat, n, cost, fixed, &[], &seeds, Some(own), None);
                scratch.seeds = seeds;
                let g = lat.upwind_grad(own, v, |u| scratch.marcher.value(u, &fixed));
                (v, g)
            }
            Reduction::Vsharp => {
                scratch.mask.clear();
                scratch.mask.resize(n, false);
                mark_disc(grid, x, r, own, &mut scratch.mask);
                let dep = vsharp_dependency(self.reference, grid, &scratch.mask, m_h);
                let fixed = |v: usize| (!dep[v] && phi_h[v].is_finite()).then(|| phi_h[v]);
                scratch.seeds.clear();
                for v in 0..n {
                    if dep[v] && (0..lat.ndirs()).any(|d| lat.nbr(v, d).is_some_and(|u| fixed(u).is_some())) {
                        scratch.seeds.push(v);
                    }
                }
                let sources: Vec<(usize, f64)> = grid.exit_vertices[self.reference.exit]
                    .iter()
                    .filter(|&&v| dep[v])
                    .map(|&v| (v, 0.0))
                    .collect();
                let seeds = std::mem::take(&mut scratch.seeds);
                let v = scratch.marcher.march(&lat, n, cost, fixed, &sources, &seeds, Some(own), None);
                scratch.seeds = seeds;
                let g = lat.upwind_grad(own, v, |u| scratch.marcher.value(u, &fixed));
                (v, g)
            }
        };
        scratch.pops += scratch.marcher.pops;
        Ok(SelfValue {
            value: value.0,
            grad: value.1,
        })
    }

    fn solve_fsm(
        &self,
        own: usize,
        cost: &impl Fn(usize, usize, usize) -> f64,
        reduction: Reduction,
        m_h: f64,
        scratch: &mut SelfScratch,
    ) -> Result<SelfValue> {
        let grid = self.grid;
        let n = grid.n_vertices();
        let phi_h = self.reference.phi();
        let lat = Lattice::new(grid);
        let costs: Vec<f64> = (0..n)
            .map(|v| {
                let (i, j) = lat.ij(v);
                cost(v, i, j)
            })
            .collect();
        let mut p = EikonalProblem::new(grid, costs, &[self.reference.exit]);
        match reduction {
            Reduction::None => {}
            Reduction::Mh | Reduction::Vsharp => {
                let level = m_h - self.reference.margin(grid);
                if level > 0.0 {
                    let frozen: Vec<bool> = if reduction == Reduction::Mh {
                        phi_h.iter().map(|&p| p < level).collect()
                    } else {
                        let x = grid.vertex_pos(own);
                        scratch.mask.clear();
                        scratch.mask.resize(n, false);
                        mark_disc(grid, x, self.vision.radius(), own, &mut scratch.mask);
                        let dep = vsharp_dependency(self.reference, grid, &scratch.mask, m_h);
                        dep.iter().zip(phi_h).map(|(&d, p)| !d && p.is_finite()).collect()
                    };
                    p.boundary.retain(|&(v, _)| !frozen[v]);
                    p.boundary.extend((0..n).filter(|&v| frozen[v]).map(|v| (v, phi_h[v])));
                }
            }
        }
        let sol = fsm_solve(&p, self.tol, self.max_sweeps)?;
        Ok(SelfValue {
            value: sol.phi.values[own],
            grad: sol.grad.values[own],
        })
    }
}

/// Index ranges of vertices whose positions may fall inside the disc.
fn disc_box(grid: &Grid, x: Point, r: f64) -> ([usize; 2], [usize; 2]) {
    let [nx, ny] = grid.vertex_dims();
    let span = |c: f64, o: f64, h: f64, n: usize| -> [usize; 2] {
        let lo = ((c - r - o) / h - 1e-9).ceil().max(0.0) as usize;
        let hi = (((c + r - o) / h + 1e-9).floor().max(0.0) as usize).min(n - 1);
        [lo.min(n - 1), hi]
    };
    let xi = span(x[0], grid.origin[0], grid.h[0], nx);
    let yj = if grid.dim == Dim::Two {
        span(x[1], grid.origin[1], grid.h[1], ny)
    } else {
        [0, 0]
    };
    (xi, yj)
}

fn disc_min(grid: &Grid, f: &[f64], x: Point, r: f64, own: usize) -> f64 {
    let mut m = f[own];
    let (xi, yj) = disc_box(grid, x, r);
    let nx = grid.vertex_dims()[0];
    for j in yj[0]..=yj[1] {
        for i in xi[0]..=xi[1] {
            let v = j * nx + i;
            if f[v] < m && in_disc(grid.vertex_pos(v), x, r) {
                m = f[v];
            }
        }
    }
    m
}

fn mark_disc(grid: &Grid, x: Point, r: f64, own: usize, mask: &mut [bool]) {
    mask[own] = true;
    let (xi, yj) = disc_box(grid, x, r);
    let nx = grid.vertex_dims()[0];
    for j in yj[0]..=yj[1] {
        for i in xi[0]..=xi[1] {
            let v = j * nx + i;
            if in_disc(grid.vertex_pos(v), x, r) {
                mask[v] = true;
            }
        }
    }
}

/// Closed-form 1D potential towards the exit at `exit_x` for an observer at
/// `x` with vision length `l`. `blocks` lists `(a, b, rho)` pieces of a
/// piecewise-constant density (zero elsewhere).
pub fn oracle_1d(blocks: &[(f64, f64, f64)], x: f64, y: f64, l: f64, exit_x: f64, cm: &CostModel) -> f64 {
    let (a, b) = (exit_x.min(y), exit_x.max(y));
    let (va, vb) = (x - 0.5 * l, x + 0.5 * l);
    let mut cuts = vec![a, b];
    for &(p, q, _) in blocks {
        cuts.extend([p, q]);
    }
    cuts.extend([va, vb]);
    cuts.retain(|c| c.is_finite() && *c >= a && *c <= b);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let rho_at = |z: f64| {
        blocks
            .iter()
            .find(|&&(p, q, _)| z >= p && z <= q)
            .map_or(0.0, |&(_, _, r)| r)
    };
    cuts.windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            let c = if mid >= va && mid <= vb {
                cm.cost(rho_at(mid))
            } else {
                cm.hidden_cost()
            };
            c * (w[1] - w[0])
        })
        .sum()
}
