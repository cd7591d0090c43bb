use local_hughes::eikonal::{
    compute_mh, compute_vsharp, dijkstra_oracle, fmm_solve, fsm_solve, local_potential, oracle_1d,
    reduced_local_potential, CostModel, EikonalProblem, Reduction, Reference, SolverKind, SolverSettings,
};
use local_hughes::fields::{Location, ScalarField};
use local_hughes::geometry::{build_grid, Domain, VisionSpec};
use proptest::prelude::*;

fn unit_square(exit: ([f64; 2], [f64; 2]), n: usize) -> local_hughes::geometry::Grid {
    let d = Domain::new_2d([0.0, 1.0], [0.0, 1.0], &[exit], 0.025, vec![]).unwrap();
    build_grid(&d, &[n, n]).unwrap()
}

fn segment_distance(p: [f64; 2], lo: f64, hi: f64) -> f64 {
    let y = p[1].clamp(lo, hi);
    p[0].hypot(p[1] - y)
}

#[test]
fn full_edge_exit_is_exact() {
    let g = unit_square(([0.0, 0.0], [0.0, 1.0]), 40);
    let s = fmm_solve(&EikonalProblem::constant(&g, 2.0, &[0])).unwrap();
    for v in 0..g.n_vertices() {
        assert!((s.phi.values[v] - 2.0 * g.vertex_pos(v)[0]).abs() < 1e-12);
    }
}

#[test]
fn perpendicular_exits_converge_at_first_order() {
    let mut errs = vec![];
    for n in [32, 64, 128] {
        let d = Domain::new_2d(
            [0.0, 1.0],
            [0.0, 1.0],
            &[([0.0, 0.0], [0.0, 1.0]), ([0.0, 0.0], [1.0, 0.0])],
            0.025,
            vec![],
        )
        .unwrap();
        let g = build_grid(&d, &[n, n]).unwrap();
        let s = fmm_solve(&EikonalProblem::constant(&g, 1.0, &[0, 1])).unwrap();
        let e = (0..g.n_vertices())
            .map(|v| {
                let p = g.vertex_pos(v);
                (s.phi.values[v] - p[0].min(p[1])).abs()
            })
            .fold(0.0, f64::max);
        assert!(e <= 0.5 * g.h[0], "n = {n}: {e}");
        errs.push(e);
    }
    for w in errs.windows(2) {
        assert!((w[0] / w[1]).log2() > 0.95);
    }
}

#[test]
fn segment_exit_error_stays_near_h() {
    let mut errs = vec![];
    for n in [32, 64, 128] {
        let g = unit_square(([0.0, 0.4], [0.0, 0.6]), n);
        let s = fmm_solve(&EikonalProblem::constant(&g, 1.0, &[0])).unwrap();
        let e = (0..g.n_vertices())
            .map(|v| (s.phi.values[v] - segment_distance(g.vertex_pos(v), 0.4, 0.6)).abs())
            .fold(0.0, f64::max);
        assert!(e <= 2.0 * g.h[0], "n = {n}: {e}");
        errs.push(e);
    }
    assert!(errs[2] < errs[1] && errs[1] < errs[0]);
}

#[test]
fn graph_oracle_brackets_the_distance() {
    let g = unit_square(([0.0, 0.4], [0.0, 0.6]), 30);
    let p = EikonalProblem::constant(&g, 1.0, &[0]);
    let b = dijkstra_oracle(&p).unwrap();
    let octile = 1.0 + (2.0f64.sqrt() - 1.0).powi(2) / 2.0;
    for v in 0..g.n_vertices() {
        let exact = segment_distance(g.vertex_pos(v), 0.4, 0.6);
        assert!(b.phi.values[v] >= exact - 1e-12);
        assert!(b.phi.values[v] <= octile * exact + 1e-12);
    }
}

fn corridor() -> (Domain, local_hughes::geometry::Grid) {
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

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fsm_and_fmm_agree(seed in prop::collection::vec(0.0f64..1.0, 33 * 33)) {
        let g = unit_square(([0.0, 0.0], [0.0, 0.5]), 32);
        let cost: Vec<f64> = seed.iter().map(|s| 1.0 + 4.0 * s).collect();
        let p = EikonalProblem::new(&g, cost, &[0]);
        let a = fmm_solve(&p).unwrap();
        let b = fsm_solve(&p, 1e-12, 200).unwrap();
        prop_assert!(a.phi.max_abs_diff(&b.phi) <= 1e-6);
    }

    #[test]
    fn potential_grows_with_density(base in 0.0f64..0.5, extra in 0.0f64..0.4, x in 0.05f64..0.95, y in 0.05f64..0.45) {
        let (_, g) = corridor();
        let cm = CostModel::default();
        let w = ScalarField::zeros(Location::Vertex, g.vertex_dims());
        let settings = SolverSettings::default();
        let lo = ScalarField::constant(Location::Vertex, g.vertex_dims(), base);
        let hi = ScalarField::constant(Location::Vertex, g.vertex_dims(), base + extra);
        let vision = VisionSpec::new(0.5).unwrap();
        let a = local_potential(&g, [x, y], &lo, 1, vision, &cm, &w, &settings).unwrap();
        let b = local_potential(&g, [x, y], &hi, 1, vision, &cm, &w, &settings).unwrap();
        for v in 0..g.n_vertices() {
            prop_assert!(a.phi.values[v] <= b.phi.values[v] + 1e-12);
        }
    }

    #[test]
    fn reductions_match_the_full_solve(
        x in 0.05f64..0.95,
        y in 0.05f64..0.45,
        l in 0.1f64..1.0,
        dense in 0.0f64..0.95,
        split in 0.2f64..0.8,
    ) {
        let (_, g) = corridor();
        let cm = CostModel::default();
        let w = ScalarField::zeros(Location::Vertex, g.vertex_dims());
        let settings = SolverSettings { kind: SolverKind::Fmm, ..Default::default() };
        let rho = ScalarField::on_vertices(
            &g,
            (0..g.n_vertices()).map(|v| if g.vertex_pos(v)[0] > split { dense } else { 0.1 }).collect(),
        );
        let vision = VisionSpec::new(l).unwrap();
        for k in 0..2 {
            let reference = Reference::new(&g, &cm, k).unwrap();
            let full = local_potential(&g, [x, y], &rho, k, vision, &cm, &w, &settings).unwrap();
            for red in [Reduction::Mh, Reduction::Vsharp] {
                let r = reduced_local_potential(&g, [x, y], &rho, &reference, vision, &cm, &w, &settings, red).unwrap();
                prop_assert!(full.phi.max_abs_diff(&r.phi) <= 1e-9);
            }
            let (_, mh) = compute_mh(&reference.solution.phi, &g, [x, y], vision);
            let vs = compute_vsharp(&reference, &g, [x, y], vision);
            prop_assert!(vs.iter().zip(&mh).all(|(a, b)| !a || *b));
        }
    }

    #[test]
    fn corridor_potential_matches_the_integral(
        a in 0.0f64..0.4,
        b in 0.45f64..1.0,
        r1 in 0.0f64..0.9,
        r2 in 0.0f64..0.9,
        x in 0.0f64..1.0,
        l in 0.05f64..1.5,
    ) {
        let d = Domain::new_1d([0.0, 1.0], &[0.0, 1.0]).unwrap();
        let g = build_grid(&d, &[400]).unwrap();
        let blocks = [(0.0, a, r1), (b, 1.0, r2)];
        let rho = ScalarField::on_vertices(
            &g,
            (0..g.n_vertices())
                .map(|v| {
                    let y = g.vertex_pos(v)[0];
                    blocks.iter().find(|bl| y >= bl.0 && y <= bl.1).map_or(0.0, |bl| bl.2)
                })
                .collect(),
        );
        let cm = CostModel::default();
        let w = ScalarField::zeros(Location::Vertex, g.vertex_dims());
        let vision = VisionSpec::new(l).unwrap();
        let s = local_potential(&g, [x, 0.0], &rho, 0, vision, &cm, &w, &SolverSettings::default()).unwrap();
        let tol = 2.0 * g.h[0] * cm.cost(r1.max(r2)) * 2.0;
        for v in 0..g.n_vertices() {
            let y = g.vertex_pos(v)[0];
            let exact = oracle_1d(&blocks, x, y, l, 0.0, &cm);
            prop_assert!((s.phi.values[v] - exact).abs() <= tol, "y = {y}: {} vs {exact}", s.phi.values[v]);
        }
    }
}
