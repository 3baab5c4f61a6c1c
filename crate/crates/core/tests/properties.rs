use keyboard::beta::{posterior_interval_prob, regularized_incomplete_beta, DoseData};
use keyboard::grid::{DoseCoord, Grid};
use keyboard::isotonic::{matrix_isotonic, WeightedMatrix};
use keyboard::keys::{should_eliminate, Decision, KeyPartition};
use keyboard::rng::{stream, ReplayDraws};
use keyboard::trial::{Algorithm, Design, TrialConfig, TrialStatus};
use proptest::prelude::*;
use rand::Rng;

/// Composite trapezoid rule on the Beta density with one Richardson step.
fn trapezoid_cdf(x: f64, a: f64, b: f64) -> f64 {
    let ln_norm = statrs::function::beta::ln_beta(a, b);
    let density = |t: f64| {
        if t <= 0.0 || t >= 1.0 {
            let inner = if t <= 0.0 { a } else { b };
            return if inner == 1.0 { (-ln_norm).exp() } else { 0.0 };
        }
        ((a - 1.0) * t.ln() + (b - 1.0) * (1.0 - t).ln() - ln_norm).exp()
    };
    let trap = |steps: usize| {
        let h = x / steps as f64;
        let inner: f64 = (1..steps).map(|i| density(i as f64 * h)).sum();
        h * (0.5 * density(0.0) + inner + 0.5 * density(x))
    };
    let coarse = trap(20_000);
    let fine = trap(40_000);
    (4.0 * fine - coarse) / 3.0
}

#[test]
fn incomplete_beta_matches_trapezoid_oracle() {
    let mut rng = stream(11);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let a = f64::from(rng.random_range(1u32..=15));
        let b = f64::from(rng.random_range(1u32..=15));
        let x = rng.random_range(0.01..0.99);
        let got = regularized_incomplete_beta(x, a, b).unwrap();
        worst = worst.max((got - trapezoid_cdf(x, a, b)).abs());
    }
    assert!(worst < 1e-8, "max error {worst:e}");
}

fn partitions() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.1f64..0.5, 0.01f64..0.1, 0.01f64..0.1)
}

proptest! {
    #[test]
    fn incomplete_beta_symmetry(x in 0.0f64..=1.0, a in 0.5f64..60.0, b in 0.5f64..60.0) {
        let lhs = regularized_incomplete_beta(x, a, b).unwrap();
        let rhs = 1.0 - regularized_incomplete_beta(1.0 - x, b, a).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn interval_probabilities_add(n in 0u32..80, frac in 0.0f64..=1.0, cuts in prop::collection::vec(0.001f64..0.999, 3)) {
        let y = (frac * f64::from(n)).round() as u32;
        let data = DoseData::new(n, y).unwrap();
        let mut c = cuts.clone();
        c.sort_by(f64::total_cmp);
        prop_assume!(c[0] < c[1] && c[1] < c[2]);
        let whole = posterior_interval_prob(c[0], c[2], data).unwrap();
        let parts = posterior_interval_prob(c[0], c[1], data).unwrap()
            + posterior_interval_prob(c[1], c[2], data).unwrap();
        prop_assert!((whole - parts).abs() < 1e-12);
    }

    #[test]
    fn decisions_monotone_in_dlts((phi, e1, e2) in partitions(), n in 1u32..40) {
        let part = KeyPartition::build(phi, e1, e2).unwrap();
        let decisions: Vec<Decision> = (0..=n).map(|y| part.decide(DoseData { n, y }).unwrap()).collect();
        prop_assert!(decisions.windows(2).all(|w| w[0] <= w[1]), "{decisions:?}");
    }

    #[test]
    fn elimination_monotone_and_implies_deescalation(n in 1u32..60, y in 0u32..60, high in any::<bool>()) {
        prop_assume!(y <= n);
        let (phi, eps) = if high { (0.3, 0.05) } else { (0.2, 0.03) };
        let part = KeyPartition::build(phi, eps, eps).unwrap();
        let data = DoseData { n, y };
        if should_eliminate(data, phi, 0.95).unwrap() {
            prop_assert_eq!(part.decide(data).unwrap(), Decision::Deescalate);
            let more_dlts = DoseData { n, y: y + 1 };
            let extra_dlt = DoseData { n: n + 1, y: y + 1 };
            if y < n {
                prop_assert!(should_eliminate(more_dlts, phi, 0.95).unwrap());
            }
            prop_assert!(should_eliminate(extra_dlt, phi, 0.95).unwrap());
        }
    }
}

fn weighted_matrix() -> impl Strategy<Value = WeightedMatrix> {
    (1usize..=4, 1usize..=4).prop_flat_map(|(r, c)| {
        (
            prop::collection::vec(0.0f64..1.0, r * c),
            prop::collection::vec(0.1f64..10.0, r * c),
        )
            .prop_map(move |(v, w)| WeightedMatrix {
                values: Grid::from_rows(v.chunks(c).map(|x| x.to_vec()).collect()).unwrap(),
                weights: Grid::from_rows(w.chunks(c).map(|x| x.to_vec()).collect()).unwrap(),
                mask: Grid::filled(r, c, true),
            })
    })
}

fn unwrap_fit(fit: &Grid<Option<f64>>) -> Grid<f64> {
    fit.map(|v| v.unwrap())
}

proptest! {
    #[test]
    fn isotonic_fit_is_feasible_and_preserves_weighted_mean(m in weighted_matrix()) {
        let fit = unwrap_fit(&matrix_isotonic(&m).unwrap());
        let tol = 1e-9;
        for c in fit.coords() {
            let v = *fit.get(c);
            let right = DoseCoord::new(c.j, c.k + 1);
            let down = DoseCoord::new(c.j + 1, c.k);
            if fit.contains(right) { prop_assert!(v <= fit.get(right) + tol); }
            if fit.contains(down) { prop_assert!(v <= fit.get(down) + tol); }
        }
        let mass = |g: &Grid<f64>| g.iter().map(|(c, v)| v * m.weights.get(c)).sum::<f64>();
        prop_assert!((mass(&fit) - mass(&m.values)).abs() < 1e-8);
    }

    #[test]
    fn isotonic_fit_is_idempotent(m in weighted_matrix()) {
        let once = unwrap_fit(&matrix_isotonic(&m).unwrap());
        let again = WeightedMatrix { values: once.clone(), ..m.clone() };
        let twice = unwrap_fit(&matrix_isotonic(&again).unwrap());
        for c in once.coords() {
            prop_assert!((once.get(c) - twice.get(c)).abs() < 1e-9);
        }
    }
}

fn algorithm() -> impl Strategy<Value = Algorithm> {
    prop::sample::select(Algorithm::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn trial_invariants(
        alg in algorithm(),
        rows in 1usize..=4,
        cols in 1usize..=5,
        seed in any::<u64>(),
        outcomes in prop::collection::vec(0u32..=1, 1..40),
    ) {
        let mut cfg = TrialConfig::new(rows, cols, 0.3, 0.05, 0.05, 40).with_algorithm(alg);
        cfg.seed = seed;
        let design = Design::new(cfg).unwrap();
        let mut state = design.start();
        let mut rng = stream(seed);
        for &y in &outcomes {
            if state.status != TrialStatus::Active {
                break;
            }
            let before = state.current;
            design.apply_cohort(&mut state, y, &mut rng).unwrap();
            let after = state.current;
            let (dj, dk) = (after.j.abs_diff(before.j), after.k.abs_diff(before.k));
            prop_assert!(dj <= 1 && dk <= 1, "skipped from {before} to {after}");
            let diagonal = dj == 1 && dk == 1;
            if diagonal {
                let up = after.j > before.j;
                let allowed = if up { alg == Algorithm::Key3 || alg == Algorithm::Key5 } else { alg != Algorithm::Key1 && alg != Algorithm::Key4 };
                prop_assert!(allowed, "{alg} moved diagonally from {before} to {after}");
            }
            if state.status == TrialStatus::Active || state.status == TrialStatus::CompletedMaxN {
                prop_assert!(!state.is_eliminated(after), "assigned eliminated dose {after}");
            }
            for e in &state.eliminated {
                for c in state.tallies.coords() {
                    if c.dominates(e) {
                        prop_assert!(state.is_eliminated(c));
                    }
                }
            }
        }
        prop_assert_eq!(state.patients() as usize, state.history.len());
        prop_assert_eq!(design.replay(&state.history).unwrap(), state);
    }
}

#[test]
fn escalation_tie_breaks_evenly() {
    let design = Design::new(TrialConfig::new(3, 3, 0.3, 0.05, 0.05, 30)).unwrap();
    let mut up_row = 0;
    for seed in 0..10_000u64 {
        let mut state = design.start();
        design.apply_cohort(&mut state, 0, &mut stream(seed)).unwrap();
        if state.current == DoseCoord::new(2, 1) {
            up_row += 1;
        } else {
            assert_eq!(state.current, DoseCoord::new(1, 2));
        }
    }
    let share = f64::from(up_row) / 10_000.0;
    assert!((share - 0.5).abs() < 0.03, "share {share}");
}

#[test]
fn replay_draws_drive_tie_breaks() {
    let design = Design::new(TrialConfig::new(2, 2, 0.3, 0.05, 0.05, 10)).unwrap();
    let mut state = design.start();
    design
        .apply_cohort(&mut state, 0, &mut ReplayDraws::new(&[0.99]))
        .unwrap();
    assert_eq!(state.current, DoseCoord::new(1, 2));
}
