//! Output writers: CSV fields, legacy VTK, mass history, trajectories and run summaries.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::direction::assemble_velocity;
use crate::error::Result;
use crate::experiments::{Built, RunOutput, RunReport, Scenario, SweepRow};
use crate::fields::{Location, ScalarField, VectorField};
use crate::geometry::{Dim, Grid, VisionSpec};
use crate::macroscopic::MacroRun;
use crate::micro::TrajectoryRow;

/// 1D: `x,value` rows. 2D: one header line then one matrix row per `y` index.
pub fn write_scalar_csv(path: &Path, grid: &Grid, f: &ScalarField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let [nx, ny] = f.dims;
    if grid.dim == Dim::One {
        writeln!(w, "x,value")?;
        for i in 0..nx {
            let x = match f.loc {
                Location::Cell => grid.cell_center(i)[0],
                Location::Vertex => grid.vertex_pos(i)[0],
            };
            writeln!(w, "{x},{}", f.values[i])?;
        }
    } else {
        writeln!(w, "# {nx} columns (x) by {ny} rows (y), row 0 at the bottom")?;
        for j in 0..ny {
            let row: Vec<String> = (0..nx).map(|i| f.values[j * nx + i].to_string()).collect();
            writeln!(w, "{}", row.join(","))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Legacy VTK structured points with cell data; vectors get a zero z component.
pub fn write_vtk(path: &Path, grid: &Grid, scalars: &[(&str, &ScalarField)], vectors: &[(&str, &VectorField)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let [nx, ny] = grid.cells;
    let nz_pts = if grid.dim == Dim::Two { ny + 1 } else { 2 };
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "local-hughes fields")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET STRUCTURED_POINTS")?;
    writeln!(w, "DIMENSIONS {} {} 1", nx + 1, nz_pts)?;
    writeln!(w, "ORIGIN {} {} 0", grid.origin[0], grid.origin[1])?;
    writeln!(w, "SPACING {} {} 1", grid.h[0], grid.h[1])?;
    writeln!(w, "CELL_DATA {}", nx * ny)?;
    for (name, f) in scalars {
        writeln!(w, "SCALARS {name} double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for v in &f.values {
            writeln!(w, "{v}")?;
        }
    }
    for (name, f) in vectors {
        writeln!(w, "VECTORS {name} double")?;
        for v in &f.values {
            writeln!(w, "{} {} 0", v[0], v[1])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `t,mass,outflux_0,...` or, for particle runs, `t,remaining,exit_0,...`.
pub fn write_history_csv(path: &Path, report: &RunReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n = report.exit_shares.len();
    let mut header = vec!["t".to_string(), "remaining".to_string()];
    header.extend((0..n).map(|k| format!("exit_{k}")));
    w.write_record(&header)?;
    for r in &report.history {
        let mut rec = vec![r.t.to_string(), r.remaining.to_string()];
        rec.extend(r.exits.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_mass_csv(path: &Path, run: &MacroRun) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n = run.final_state.outflux.len();
    let mut header = vec!["t".to_string(), "mass".to_string()];
    header.extend((0..n).map(|k| format!("outflux_{k}")));
    w.write_record(&header)?;
    for h in &run.history {
        let mut rec = vec![h.t.to_string(), h.mass.to_string()];
        rec.extend(h.outflux.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectories_csv(path: &Path, rows: &[TrajectoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "id", "x", "y", "alive", "turned"])?;
    for r in rows {
        w.write_record(&[
            r.t.to_string(),
            r.id.to_string(),
            r.pos[0].to_string(),
            r.pos[1].to_string(),
            (r.alive as u8).to_string(),
            (r.turned as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn vision_label(v: VisionSpec) -> String {
    if v.diameter.is_infinite() {
        "inf".into()
    } else {
        v.diameter.to_string()
    }
}

/// Plain `key = value` run summary.
pub fn write_summary(path: &Path, scn: &Scenario, report: &RunReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "scenario = {}", scn.name)?;
    writeln!(w, "model = {:?}", report.model)?;
    writeln!(w, "resolution = {:?}", scn.resolution)?;
    writeln!(w, "vision = {}", vision_label(report.vision))?;
    writeln!(w, "solver = {:?}", scn.solver.kind)?;
    writeln!(w, "reduction = {:?}", scn.reduction)?;
    writeln!(w, "stride = {}", scn.stride)?;
    writeln!(w, "flux = {:?}", scn.flux.mode)?;
    writeln!(w, "seed = {}", scn.seed)?;
    writeln!(w, "threads = {}", if scn.parallel && crate::par::rayon_enabled() { "rayon" } else { "sequential" })?;
    match report.evacuation_time {
        Some(t) => writeln!(w, "evacuation_time = {t}")?,
        None => writeln!(w, "evacuation_time = not reached")?,
    }
    let shares: Vec<String> = report.exit_shares.iter().map(|s| format!("{s:.6}")).collect();
    writeln!(w, "exit_shares = {}", shares.join(", "))?;
    if let Some(e) = report.max_conservation_error {
        writeln!(w, "max_conservation_error = {e:e}")?;
    }
    if let Some(n) = report.turned {
        writeln!(w, "turned_particles = {n}")?;
    }
    writeln!(w, "steps = {}", report.steps)?;
    writeln!(w, "direction_assemblies = {}", report.assemblies)?;
    writeln!(w, "observer_solves = {}", report.stats.observer_solves)?;
    writeln!(w, "marched_vertices = {}", report.stats.marched_vertices)?;
    writeln!(w, "zero_gradient_cells = {}", report.stats.zero_gradients)?;
    writeln!(w, "wall_clock_s = {:.3}", report.wall_clock)?;
    w.flush()?;
    Ok(())
}

/// Sweep table `L,evacuation_time,status`.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["L", "evacuation_time", "status"])?;
    for r in rows {
        let (t, status) = match &r.report {
            Ok(rep) => (
                rep.evacuation_time.map_or("not_reached".to_string(), |t| t.to_string()),
                "ok".to_string(),
            ),
            Err(e) => (String::new(), format!("failed: {e}")),
        };
        w.write_record(&[vision_label(r.vision), t, status])?;
    }
    w.flush()?;
    Ok(())
}

/// Exit percentage over time, one column per swept `L` (particle runs).
pub fn write_sweep_exit_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let ok: Vec<(&SweepRow, &RunReport)> = rows.iter().filter_map(|r| r.report.as_ref().ok().map(|rep| (r, rep))).collect();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend(ok.iter().map(|(r, _)| format!("L={}", vision_label(r.vision))));
    w.write_record(&header)?;
    let len = ok.iter().map(|(_, rep)| rep.history.len()).max().unwrap_or(0);
    for i in 0..len {
        let t = ok
            .iter()
            .find_map(|(_, rep)| rep.history.get(i).map(|h| h.t))
            .unwrap_or_default();
        let mut rec = vec![t.to_string()];
        rec.extend(ok.iter().map(|(_, rep)| {
            let h = rep.history.get(i).or(rep.history.last()).unwrap();
            (1.0 - h.remaining).to_string()
        }));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes every output of a finished run into `dir`.
pub fn write_run(dir: &Path, scn: &Scenario, report: &RunReport, out: &RunOutput, built: &Built) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let grid = &built.model.grid;
    write_summary(&dir.join("summary.txt"), scn, report)?;
    write_history_csv(&dir.join("history.csv"), report)?;
    std::fs::write(dir.join("scenario.json"), serde_json::to_string_pretty(scn)?)?;
    match out {
        RunOutput::Macro(run) => {
            write_mass_csv(&dir.join("mass.csv"), run)?;
            for (i, s) in run.snapshots.iter().enumerate() {
                let velocity = assemble_velocity(&s.rho, &s.fields.direction, |r| scn.flux.speed(r.clamp(0.0, scn.flux.rho_max)));
                let stem = format!("snapshot_{i:03}_t{:.4}", s.t);
                write_scalar_csv(&dir.join(format!("{stem}_density.csv")), grid, &s.rho)?;
                write_scalar_csv(&dir.join(format!("{stem}_speed.csv")), grid, &velocity.component(0))?;
                if grid.n_exits() >= 2 {
                    let conv = ScalarField::from_values(
                        s.rho.loc,
                        s.rho.dims,
                        s.fields.self_costs[1].values.iter().zip(&s.fields.self_costs[0].values).map(|(r, l)| r - l).collect(),
                    );
                    write_scalar_csv(&dir.join(format!("{stem}_cost_gap.csv")), grid, &conv)?;
                }
                if grid.dim == Dim::Two {
                    write_vtk(
                        &dir.join(format!("{stem}.vtk")),
                        grid,
                        &[("density", &s.rho), ("speed", &velocity.norms())],
                        &[
                            ("direction", &s.fields.direction),
                            ("conviction", &s.fields.conviction),
                            ("velocity", &velocity),
                        ],
                    )?;
                }
            }
            write_scalar_csv(&dir.join("final_density.csv"), grid, &run.final_state.rho)?;
        }
        RunOutput::Micro(run) => {
            write_trajectories_csv(&dir.join("trajectories.csv"), &run.trajectories)?;
        }
    }
    Ok(())
}
