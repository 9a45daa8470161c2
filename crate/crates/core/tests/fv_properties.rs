use aggr_core::fv::{
    cfl_dt, entropy_residual, linear_velocity, nonlinear_velocity, step, FvState, Grid,
    VelocityOperator,
};
use aggr_core::potentials::{
    velocity_sup_bound, BuiltinLaw, BuiltinPotential, Mode, PointyPotential, VelocityLaw,
};
use proptest::prelude::*;

const CELLS: usize = 200;

fn potential(kind: u8) -> PointyPotential {
    let builtin = match kind % 3 {
        0 => BuiltinPotential::AbsHalf,
        1 => BuiltinPotential::ExpPointy,
        _ => BuiltinPotential::AbsScaled { sigma: 0.004 },
    };
    PointyPotential::builtin(builtin).unwrap()
}

fn law(kind: u8) -> VelocityLaw {
    if kind % 2 == 0 {
        VelocityLaw::identity()
    } else {
        VelocityLaw::builtin(BuiltinLaw::preset_atan()).unwrap()
    }
}

/// Unit-mass state with random densities on cells `[lo, lo + width)`.
fn random_state() -> impl Strategy<Value = FvState> {
    (40usize..100, 5usize..60, prop::collection::vec(0.0f64..1.0, CELLS), prop::collection::vec(any::<bool>(), CELLS))
        .prop_map(|(lo, width, values, holes)| {
            let grid = Grid::covering(-2.5, 2.5, CELLS).unwrap();
            let mut rho = vec![0.0; CELLS];
            for i in lo..lo + width {
                rho[i] = if holes[i] { 0.0 } else { values[i] };
            }
            rho[lo] = rho[lo].max(0.1);
            let mass: f64 = rho.iter().sum::<f64>() * grid.dx();
            rho.iter_mut().for_each(|r| *r /= mass);
            FvState::new(grid, rho).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scheme_invariants(state in random_state(), pot_kind in 0u8..3, law_kind in 0u8..2, nonlinear in any::<bool>()) {
        let pot = potential(pot_kind);
        let law = law(law_kind);
        let mode = if nonlinear { Mode::Nonlinear } else { Mode::Linear };
        let op = VelocityOperator::new(state.grid, pot.clone(), law, mode).unwrap();
        let a_inf = velocity_sup_bound(&pot, &law, mode).unwrap();
        let dt = cfl_dt(a_inf, state.grid.dx(), 0.9, 1.0).unwrap();
        let mass0 = state.mass();
        let mut current = state;
        for _ in 0..25 {
            let vel = op.velocity(&current).unwrap();
            prop_assert!(vel.max_abs() <= a_inf + 1e-12);
            if let Some(r) = entropy_residual(&current, &vel) {
                prop_assert!(r <= 1e-12, "entropy residual {}", r);
            }
            let next = step(&current, &vel, dt).unwrap();
            prop_assert!(next.min_density() >= 0.0);
            prop_assert!((next.mass() - mass0).abs() <= 1e-12);
            let (lo0, hi0) = current.support().unwrap();
            let (lo1, hi1) = next.support().unwrap();
            prop_assert!(lo1 + 1 >= lo0 && hi1 <= hi0 + 1);
            prop_assert!(next.cumulative_variation() <= current.cumulative_variation() + 1e-12);
            current = next;
        }
    }

    #[test]
    fn identity_law_paths_agree(state in random_state(), exp in any::<bool>()) {
        let pot = potential(u8::from(exp));
        let linear = linear_velocity(&state, &pot);
        let nonlinear = nonlinear_velocity(&state, &pot, &VelocityLaw::identity()).unwrap();
        for (l, n) in linear.a_cell.iter().zip(&nonlinear.a_cell) {
            prop_assert!((l - n).abs() <= 1e-12, "{} vs {}", l, n);
        }
    }
}

fn even_state(grid: Grid) -> FvState {
    let rho: Vec<f64> = (0..grid.n_cells())
        .map(|i| {
            let x = grid.center(i);
            (-10.0 * (x - 0.7f64).powi(2)).exp() + (-10.0 * (x + 0.7f64).powi(2)).exp() + 0.5 * (-20.0 * x * x).exp()
        })
        .collect();
    // symmetrize exactly so that rounding in the centers does not seed asymmetry
    let n = rho.len();
    let sym: Vec<f64> = (0..n).map(|i| 0.5 * (rho[i] + rho[n - 1 - i])).collect();
    let mass = sym.iter().sum::<f64>() * grid.dx();
    FvState::new(grid, sym.iter().map(|r| r / mass).collect()).unwrap()
}

fn max_asymmetry(grid: Grid, pot: &PointyPotential, law: VelocityLaw, mode: Mode) -> f64 {
    let op = VelocityOperator::new(grid, pot.clone(), law, mode).unwrap();
    let a_inf = velocity_sup_bound(pot, &law, mode).unwrap();
    let dt = cfl_dt(a_inf, grid.dx(), 0.9, 1.0).unwrap();
    let mut state = even_state(grid);
    for _ in 0..1000 {
        let vel = op.velocity(&state).unwrap();
        state = step(&state, &vel, dt).unwrap();
    }
    let n = grid.n_cells();
    (0..n).map(|i| (state.rho[i] - state.rho[n - 1 - i]).abs()).fold(0.0, f64::max)
}

#[test]
fn symmetry_is_preserved_for_a_thousand_steps() {
    let odd = Grid::covering(-3.0, 3.0, CELLS + 1).unwrap();
    let even = Grid::covering(-3.0, 3.0, CELLS).unwrap();
    let cases = [
        (potential(0), VelocityLaw::identity(), Mode::Linear, true),
        (potential(1), VelocityLaw::identity(), Mode::Linear, true),
        (potential(2), law(1), Mode::Nonlinear, true),
        // With w ≠ 0 a Dirac split across the two central cells of an even grid
        // is unstable at rate O(1) per unit time, so rounding-level asymmetry
        // grows; the odd grid forms the Dirac in the central cell instead.
        (potential(1), law(1), Mode::Nonlinear, false),
    ];
    for (pot, law, mode, check_even) in cases {
        let grids: &[Grid] = if check_even { &[odd, even] } else { &[odd] };
        for &grid in grids {
            let asym = max_asymmetry(grid, &pot, law, mode);
            assert!(asym <= 1e-12, "{mode:?} on {} cells: asymmetry {asym}", grid.n_cells());
        }
    }
}
