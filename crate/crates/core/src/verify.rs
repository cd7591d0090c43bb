//! Quick self-checks behind the `verify` command. Each check compares a solver
//! against a closed form or an exact identity on a small problem.

use crate::eikonal::{
    fmm_solve, fsm_solve, local_potential, oracle_1d, reduced_local_potential, CostModel, EikonalProblem, Reduction,
    Reference, SolverSettings,
};
use crate::experiments::{preset, run_scenario};
use crate::fields::{cell_to_vertex, Location, ScalarField};
use crate::geometry::{build_grid, Domain, VisionSpec};
use crate::macroscopic::{force_flux, FluxLaw, FluxMode};

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, run: impl FnOnce() -> crate::Result<(bool, String)>) -> Check {
    match run() {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn distance_to_wall() -> crate::Result<(bool, String)> {
    let d = Domain::new_2d([0.0, 1.0], [0.0, 1.0], &[([0.0, 0.0], [0.0, 1.0])], 0.025, vec![])?;
    let g = build_grid(&d, &[64, 64])?;
    let p = EikonalProblem::constant(&g, 1.0, &[0]);
    let a = fmm_solve(&p)?;
    let b = fsm_solve(&p, 1e-12, 100)?;
    let err = (0..g.n_vertices())
        .map(|v| (a.phi.values[v] - g.vertex_pos(v)[0]).abs())
        .fold(0.0, f64::max);
    let agree = a.phi.max_abs_diff(&b.phi);
    Ok((err <= 1.5 * g.h[0] && agree <= 1e-6, format!("max error {err:.2e}, fsm/fmm gap {agree:.2e}")))
}

fn force_identities() -> crate::Result<(bool, String)> {
    let lwr = FluxLaw {
        mode: FluxMode::Lwr,
        rho_max: 1.0,
    };
    let f = force_flux(0.8, 0.2, 1.0, 0.5, 1.0, &lwr);
    let consistent = (force_flux(0.3, 0.3, 0.7, 0.4, 1.0, &lwr) - 0.7 * lwr.flux(0.3)).abs() < 1e-15;
    Ok(((f - 0.505).abs() < 1e-15 && consistent, format!("F(0.8, 0.2) = {f}")))
}

fn corridor_oracle() -> crate::Result<(bool, String)> {
    let d = Domain::new_1d([0.0, 1.0], &[0.0, 1.0])?;
    let g = build_grid(&d, &[500])?;
    let blocks = [(0.0, 0.3, 0.85), (0.6, 1.0, 0.25)];
    let rho_c = ScalarField::on_cells(
        &g,
        (0..g.n_cells())
            .map(|c| {
                let x = g.cell_center(c)[0];
                blocks.iter().find(|b| x >= b.0 && x <= b.1).map_or(0.0, |b| b.2)
            })
            .collect(),
    );
    let rho = cell_to_vertex(&g, &rho_c);
    let cm = CostModel::default();
    let w = ScalarField::zeros(Location::Vertex, g.vertex_dims());
    let x = 0.2;
    let s = local_potential(&g, [x, 0.0], &rho, 1, VisionSpec::new(0.75)?, &cm, &w, &SolverSettings::default())?;
    let err = (0..g.n_vertices())
        .map(|v| {
            let y = g.vertex_pos(v)[0];
            (s.phi.values[v] - oracle_1d(&blocks, x, y, 0.75, 1.0, &cm)).abs()
        })
        .fold(0.0, f64::max);
    let tol = 2.0 * g.h[0] * cm.cost(0.85);
    Ok((err <= tol, format!("max error {err:.2e} (bound {tol:.2e})")))
}

fn reduction_exact() -> crate::Result<(bool, String)> {
    let d = Domain::new_2d([0.0, 1.0], [0.0, 0.5], &[([1.0, 0.4], [1.0, 0.5])], 0.025, vec![])?;
    let g = build_grid(&d, &[60, 30])?;
    let cm = CostModel::default();
    let rho = ScalarField::on_vertices(
        &g,
        (0..g.n_vertices())
            .map(|v| if g.vertex_pos(v)[0] > 0.6 { 0.8 } else { 0.1 })
            .collect(),
    );
    let w = ScalarField::zeros(Location::Vertex, g.vertex_dims());
    let settings = SolverSettings::default();
    let reference = Reference::new(&g, &cm, 0)?;
    let vision = VisionSpec::new(0.5)?;
    let x = [0.3, 0.2];
    let full = local_potential(&g, x, &rho, 0, vision, &cm, &w, &settings)?;
    let red = reduced_local_potential(&g, x, &rho, &reference, vision, &cm, &w, &settings, Reduction::Mh)?;
    let gap = full.phi.max_abs_diff(&red.phi);
    Ok((gap <= 1e-9, format!("reduced vs full {gap:.2e}")))
}

fn conservation() -> crate::Result<(bool, String)> {
    let mut scn = preset("corridor1d", false)?;
    scn.resolution = vec![100];
    scn.time.dt = 5e-3;
    scn.time.t_max = 0.5;
    let (report, _, _) = run_scenario(&scn)?;
    let err = report.max_conservation_error.unwrap_or(f64::INFINITY);
    Ok((err <= 1e-10, format!("relative mass defect {err:.2e}")))
}

pub fn run_all() -> Vec<Check> {
    vec![
        check("eikonal distance to a straight exit", distance_to_wall),
        check("FORCE flux identities", force_identities),
        check("1D potential against the closed form", corridor_oracle),
        check("reduced solve equals full solve", reduction_exact),
        check("finite-volume mass balance", conservation),
    ]
}
