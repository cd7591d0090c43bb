use local_hughes::fields::{Location, ScalarField, VectorField};
use local_hughes::geometry::{build_grid, Domain};
use local_hughes::macroscopic::{force_flux, stable_dt, step_macro, FaceTopology, FluxLaw, FluxMode, MacroState};
use proptest::prelude::*;

fn law(mode: FluxMode) -> FluxLaw {
    FluxLaw { mode, rho_max: 1.0 }
}

fn modes() -> impl Strategy<Value = FluxMode> {
    prop_oneof![Just(FluxMode::AsWritten), Just(FluxMode::Lwr)]
}

proptest! {
    #[test]
    fn force_is_consistent(r in 0.0f64..1.0, theta in -1.0f64..1.0, lam in 0.05f64..0.9, mode in modes()) {
        let l = law(mode);
        let f = force_flux(r, r, theta, lam, 1.0, &l);
        prop_assert!((f - theta * l.flux(r)).abs() <= 1e-14);
    }

    #[test]
    fn force_is_monotone_under_cfl(
        a in 0.0f64..1.0,
        b in 0.0f64..1.0,
        d in 0.0f64..0.05,
        theta in -1.0f64..1.0,
        mode in modes(),
    ) {
        let l = law(mode);
        let lam = 0.9 / l.max_wave_speed(0.0, 1.0).max(1e-12);
        let dt = lam;
        let up = (a + d).min(1.0);
        prop_assert!(force_flux(up, b, theta, dt, 1.0, &l) >= force_flux(a, b, theta, dt, 1.0, &l) - 1e-14);
        let up = (b + d).min(1.0);
        prop_assert!(force_flux(a, up, theta, dt, 1.0, &l) <= force_flux(a, b, theta, dt, 1.0, &l) + 1e-14);
    }

    #[test]
    fn steps_conserve_mass_and_stay_bounded(
        rho in prop::collection::vec(0.0f64..1.0, 12 * 6),
        dir in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 12 * 6),
        mode in modes(),
    ) {
        let d = Domain::new_2d(
            [0.0, 1.0],
            [0.0, 0.5],
            &[([0.0, 0.0], [0.0, 0.25]), ([1.0, 0.25], [1.0, 0.5])],
            0.025,
            vec![],
        )
        .unwrap();
        let g = build_grid(&d, &[12, 6]).unwrap();
        let l = law(mode);
        let topo = FaceTopology::new(&g);
        let direction = VectorField::from_values(
            Location::Cell,
            g.cells,
            dir.iter().map(|&(x, y)| {
                let n = x.hypot(y).max(1.0);
                [x / n, y / n]
            }).collect(),
        );
        let mut state = MacroState::new(ScalarField::on_cells(&g, rho), g.n_exits());
        let m0 = state.mass(&g);
        for _ in 0..20 {
            let dt = stable_dt(&g, &state.rho, &direction, &l, 0.45, 0.1);
            state = step_macro(&state, &g, &topo, &direction, &l, dt, false).unwrap();
            prop_assert!(state.rho.min() >= -1e-12 && state.rho.max() <= 1.0 + 1e-12);
        }
        prop_assert!((state.mass(&g) + state.total_outflux() - m0).abs() <= 1e-12 * m0.max(1.0));
        prop_assert!(state.outflux.iter().all(|&o| o >= 0.0));
    }
}

#[test]
fn parallel_step_matches_sequential() {
    let d = Domain::new_2d([0.0, 1.0], [0.0, 0.5], &[([1.0, 0.0], [1.0, 0.5])], 0.025, vec![]).unwrap();
    let g = build_grid(&d, &[40, 20]).unwrap();
    let l = law(FluxMode::Lwr);
    let rho = ScalarField::on_cells(&g, (0..g.n_cells()).map(|c| (c % 13) as f64 / 13.0).collect());
    let dir = VectorField::from_values(Location::Cell, g.cells, vec![[1.0, 0.0]; g.n_cells()]);
    let s = MacroState::new(rho, 1);
    let topo = FaceTopology::new(&g);
    let dt = stable_dt(&g, &s.rho, &dir, &l, 0.45, 1.0);
    let a = step_macro(&s, &g, &topo, &dir, &l, dt, true).unwrap();
    let b = step_macro(&s, &g, &topo, &dir, &l, dt, false).unwrap();
    assert_eq!(a.rho, b.rho);
    assert_eq!(a.outflux, b.outflux);
}
