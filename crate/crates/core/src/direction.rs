//! From per-exit potentials to walking directions: exit choice, conviction,
//! consensus, smoothed projection and boundary post-processing.

use serde::{Deserialize, Serialize};

use crate::fields::{convolve, convolve_vector, norm, Kernel, Location, ScalarField, VectorField};
use crate::geometry::{FaceClass, Grid, Side};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExitChoice {
    pub best: usize,
    /// `None` with a single exit.
    pub runner_up: Option<usize>,
    pub best_cost: f64,
    /// `INFINITY` with a single exit.
    pub runner_cost: f64,
}

impl ExitChoice {
    pub fn gap(&self) -> f64 {
        self.runner_cost - self.best_cost
    }
}

/// Cheapest and second cheapest exit; ties go to the lowest index.
pub fn select_exits(costs: &[f64]) -> ExitChoice {
    assert!(!costs.is_empty(), "at least one exit cost is required");
    let mut best = 0;
    for (k, &c) in costs.iter().enumerate().skip(1) {
        if c < costs[best] {
            best = k;
        }
    }
    let mut runner: Option<usize> = None;
    for (k, &c) in costs.iter().enumerate() {
        if k != best && runner.is_none_or(|r| c < costs[r]) {
            runner = Some(k);
        }
    }
    ExitChoice {
        best,
        runner_up: runner,
        best_cost: costs[best],
        runner_cost: runner.map_or(f64::INFINITY, |r| costs[r]),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionParams {
    pub ell: f64,
    pub k: f64,
}

impl Default for ProjectionParams {
    fn default() -> Self {
        ProjectionParams { ell: 0.05, k: 25.0 }
    }
}

/// Normalizes vectors longer than `ell` and shrinks shorter ones smoothly to zero.
pub fn smoothed_projection(v: [f64; 2], p: &ProjectionParams) -> [f64; 2] {
    let n = norm(v);
    if n == 0.0 {
        return [0.0, 0.0];
    }
    let scale = if n > p.ell {
        1.0
    } else {
        (std::f64::consts::PI * (p.k * n).atan() / (2.0 * (p.k * p.ell).atan())).sin()
    };
    [scale * v[0] / n, scale * v[1] / n]
}

/// Conviction: unit ascent direction of the chosen potential scaled by the
/// cost gap to the runner-up (`u_single` without a runner-up). Returns `None`
/// when the gradient vanishes although the gap is positive.
pub fn conviction(choice: &ExitChoice, grad: [f64; 2], u_single: f64) -> Option<[f64; 2]> {
    let gap = if choice.runner_up.is_some() {
        choice.gap()
    } else {
        u_single
    };
    if !(gap > 0.0) {
        return Some([0.0, 0.0]);
    }
    let n = norm(grad);
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    let gap = if gap.is_finite() { gap } else { u_single };
    Some([gap * grad[0] / n, gap * grad[1] / n])
}

/// Conviction per entry plus the number of zero-gradient entries.
pub fn conviction_field(
    loc: Location,
    dims: [usize; 2],
    choices: &[ExitChoice],
    grads: &[[f64; 2]],
    u_single: f64,
) -> (VectorField, usize) {
    let mut zero = 0;
    let values = choices
        .iter()
        .zip(grads)
        .map(|(c, g)| {
            conviction(c, *g, u_single).unwrap_or_else(|| {
                zero += 1;
                [0.0, 0.0]
            })
        })
        .collect();
    (VectorField::from_values(loc, dims, values), zero)
}

/// `(rho u * K) / (rho * K)`, falling back to `u` where `rho * K < delta_rho`.
pub fn consensus_field(rho: &ScalarField, u: &VectorField, k: &Kernel, delta_rho: f64, parallel: bool) -> VectorField {
    let weighted = VectorField::from_values(
        u.loc,
        u.dims,
        rho.values.iter().zip(&u.values).map(|(r, v)| [r * v[0], r * v[1]]).collect(),
    );
    let num = convolve_vector(&weighted, k, parallel);
    let den = convolve(rho, k, parallel);
    let values = num
        .values
        .iter()
        .zip(&den.values)
        .zip(&u.values)
        .map(|((n, &d), own)| if d < delta_rho { *own } else { [n[0] / d, n[1] / d] })
        .collect();
    VectorField::from_values(u.loc, u.dims, values)
}

/// Boundary information of one cell.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CellBoundary {
    /// Outward normal of an adjacent exit face.
    pub exit: Option<[f64; 2]>,
    /// Outward normals of adjacent wall faces as a side bitmask.
    pub walls: u8,
}

fn side_bit(s: Side) -> u8 {
    match s {
        Side::Left => 1,
        Side::Right => 2,
        Side::Bottom => 4,
        Side::Top => 8,
    }
}

pub fn cell_boundaries(grid: &Grid) -> Vec<CellBoundary> {
    let mut out = vec![CellBoundary::default(); grid.n_cells()];
    for f in &grid.boundary {
        match f.class {
            FaceClass::Exit(_) => out[f.cell].exit = Some(f.side.outward_normal()),
            FaceClass::Wall => out[f.cell].walls |= side_bit(f.side),
        }
    }
    out
}

/// Direction of motion `-P[phi]`: forced onto the outward normal next to exits
/// (inward with `literal_signs`), outward components removed next to walls.
pub fn assemble_direction(
    consensus: &VectorField,
    boundary: &[CellBoundary],
    params: &ProjectionParams,
    literal_signs: bool,
) -> VectorField {
    let values = consensus
        .values
        .iter()
        .zip(boundary)
        .map(|(phi, b)| {
            if let Some(n) = b.exit {
                return if literal_signs { [-n[0], -n[1]] } else { n };
            }
            let p = smoothed_projection(*phi, params);
            let mut d = [-p[0], -p[1]];
            for s in Side::ALL {
                if b.walls & side_bit(s) != 0 {
                    let n = s.outward_normal();
                    let out = d[0] * n[0] + d[1] * n[1];
                    if out > 0.0 {
                        d[0] -= out * n[0];
                        d[1] -= out * n[1];
                    }
                }
            }
            d
        })
        .collect();
    VectorField::from_values(consensus.loc, consensus.dims, values)
}

/// Velocity `speed(rho) * direction`.
pub fn assemble_velocity(rho: &ScalarField, direction: &VectorField, speed: impl Fn(f64) -> f64) -> VectorField {
    let values = rho
        .values
        .iter()
        .zip(&direction.values)
        .map(|(&r, d)| {
            let s = speed(r);
            [s * d[0], s * d[1]]
        })
        .collect();
    VectorField::from_values(direction.loc, direction.dims, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{make_kernel, KernelKind};
    use crate::geometry::{build_grid, Domain};
    use proptest::prelude::*;

    #[test]
    fn exit_selection() {
        let c = select_exits(&[2.0, 1.0]);
        assert_eq!((c.best, c.runner_up), (1, Some(0)));
        let c = select_exits(&[1.5, 1.5]);
        assert_eq!((c.best, c.runner_up, c.gap()), (0, Some(1), 0.0));
        let c = select_exits(&[3.0, 1.0, 2.0]);
        assert_eq!((c.best, c.runner_up), (1, Some(2)));
        let c = select_exits(&[4.0]);
        assert_eq!(c.runner_up, None);
        assert_eq!(c.runner_cost, f64::INFINITY);
    }

    #[test]
    fn conviction_cases() {
        // empty unit corridor, observer at x = 0.2: costs 0.2 and 0.8
        let c = select_exits(&[0.2, 0.8]);
        let u = conviction(&c, [1.0, 0.0], 1.0).unwrap();
        assert!((u[0] - 0.6).abs() < 1e-12 && u[1] == 0.0);
        let tie = select_exits(&[0.5, 0.5]);
        assert_eq!(conviction(&tie, [1.0, 0.0], 1.0), Some([0.0, 0.0]));
        let single = select_exits(&[0.7]);
        assert_eq!(conviction(&single, [0.0, -2.0], 1.0), Some([0.0, -1.0]));
        assert_eq!(conviction(&c, [0.0, 0.0], 1.0), None);
        let (_, zero) = conviction_field(Location::Cell, [2, 1], &[c, c], &[[0.0, 0.0], [1.0, 0.0]], 1.0);
        assert_eq!(zero, 1);
    }

    #[test]
    fn projection_examples() {
        let p = ProjectionParams::default();
        assert_eq!(smoothed_projection([0.2, 0.0], &p), [1.0, 0.0]);
        assert_eq!(smoothed_projection([0.0, 0.0], &p), [0.0, 0.0]);
        let at = smoothed_projection([0.05, 0.0], &p);
        assert!((norm(at) - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn projection_properties(x in -1.0f64..1.0, y in -1.0f64..1.0, s in 1.0f64..3.0) {
            let p = ProjectionParams::default();
            let a = smoothed_projection([x, y], &p);
            let na = norm(a);
            prop_assert!(na <= 1.0 + 1e-12);
            if norm([x, y]) > 0.0 {
                // parallel, same orientation
                prop_assert!((a[0] * y - a[1] * x).abs() < 1e-12);
                prop_assert!(a[0] * x + a[1] * y >= 0.0);
            }
            let b = smoothed_projection([s * x, s * y], &p);
            prop_assert!(norm(b) >= na - 1e-12);
        }
    }

    #[test]
    fn consensus_cases() {
        let d = Domain::new_1d([0.0, 1.0], &[0.0, 1.0]).unwrap();
        let g = build_grid(&d, &[100]).unwrap();
        let k = make_kernel(KernelKind::Indicator, 0.05, &g).unwrap();
        let mut rho = ScalarField::zeros(Location::Cell, g.cells);
        for c in 20..40 {
            rho.values[c] = 0.5;
        }
        let u = VectorField::from_values(Location::Cell, g.cells, vec![[0.3, 0.0]; 100]);
        let phi = consensus_field(&rho, &u, &k, 1e-7, false);
        assert!(phi.values.iter().all(|v| (v[0] - 0.3).abs() < 1e-12));
        // opposing blocks of equal mass around cell 50
        let mut rho = ScalarField::zeros(Location::Cell, g.cells);
        let mut uv = vec![[0.0, 0.0]; 100];
        for c in 46..50 {
            rho.values[c] = 0.4;
            uv[c] = [1.0, 0.0];
        }
        for c in 51..55 {
            rho.values[c] = 0.4;
            uv[c] = [-1.0, 0.0];
        }
        uv[50] = [0.7, 0.0];
        let u = VectorField::from_values(Location::Cell, g.cells, uv);
        let phi = consensus_field(&rho, &u, &k, 1e-7, false);
        assert!(phi.values[50][0].abs() < 1e-12);
        // empty neighbourhood falls back to own preference
        assert_eq!(phi.values[90], [0.0, 0.0]);
    }

    #[test]
    fn consensus_scales_with_conviction() {
        let d = Domain::new_1d([0.0, 1.0], &[0.0, 1.0]).unwrap();
        let g = build_grid(&d, &[50]).unwrap();
        let k = make_kernel(KernelKind::Indicator, 0.1, &g).unwrap();
        let rho = ScalarField::on_cells(&g, (0..50).map(|c| (c as f64 / 50.0).sin().abs()).collect());
        let u = VectorField::from_values(Location::Cell, g.cells, (0..50).map(|c| [((c * 7) % 5) as f64 - 2.0, 0.0]).collect());
        let scaled = VectorField::from_values(Location::Cell, g.cells, u.values.iter().map(|v| [3.0 * v[0], 0.0]).collect());
        let a = consensus_field(&rho, &u, &k, 1e-9, false);
        let b = consensus_field(&rho, &scaled, &k, 1e-9, false);
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((3.0 * x[0] - y[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_post_processing() {
        let d = Domain::new_2d([0.0, 1.0], [0.0, 0.5], &[([0.0, 0.0], [0.0, 0.1])], 0.025, vec![]).unwrap();
        let g = build_grid(&d, &[20, 10]).unwrap();
        let b = cell_boundaries(&g);
        let n = g.n_cells();
        // consensus pointing up-left everywhere: motion is down-right
        let phi = VectorField::from_values(Location::Cell, g.cells, vec![[-0.5, 0.5]; n]);
        let p = ProjectionParams::default();
        let dir = assemble_direction(&phi, &b, &p, false);
        let exit_cell = g.cell_index(0, 0);
        assert_eq!(dir.values[exit_cell], [-1.0, 0.0]);
        let lit = assemble_direction(&phi, &b, &p, true);
        assert_eq!(lit.values[exit_cell], [1.0, 0.0]);
        // bottom wall cell: downward component removed
        let bottom = g.cell_index(10, 0);
        assert!(dir.values[bottom][1].abs() < 1e-15 && dir.values[bottom][0] > 0.0);
        let inner = g.cell_index(10, 5);
        assert!(dir.values[inner][1] < 0.0);
        let rho = ScalarField::constant(Location::Cell, g.cells, 0.5);
        let v = assemble_velocity(&rho, &dir, |r| r * (1.0 - r));
        assert!((v.values[exit_cell][0] + 0.25).abs() < 1e-15);
        let jam = ScalarField::constant(Location::Cell, g.cells, 1.0);
        let v = assemble_velocity(&jam, &dir, |r| r * (1.0 - r));
        assert!(v.values.iter().all(|x| norm(*x) == 0.0));
    }
}
