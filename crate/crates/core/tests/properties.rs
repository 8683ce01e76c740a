use approx::assert_relative_eq;
use bdy_cheat::analysis::{gini_double_sum, gini_equilibrium, gini_pmf};
use bdy_cheat::equilibrium::{
    bisect_ratio, discriminant, equilibrium_ratio, quadratic_residual, quadratic_roots, solve_equilibrium,
};
use bdy_cheat::lyapunov::{
    energy_dissipation_rate, h_functional, h_production, linearized_rhs, sample_perturbation,
    weighted_poincare_check, PerturbationPair,
};
use bdy_cheat::meanfield::{apply_lc, apply_lh, first_moment, rate_r, total, MeanFieldState};
use bdy_cheat::pmf::{mix, WealthPmf};
use bdy_cheat::ModelParams64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn params_strategy() -> impl Strategy<Value = ModelParams64> {
    (0.1f64..20.0, 0.0f64..1.0, 0.0f64..0.99)
        .prop_map(|(mu, n_h, gamma)| ModelParams64::mean_field(mu, n_h, gamma).unwrap())
}

fn interior_params() -> impl Strategy<Value = ModelParams64> {
    (0.5f64..10.0, 0.05f64..0.95, 0.01f64..0.95)
        .prop_map(|(mu, n_h, gamma)| ModelParams64::mean_field(mu, n_h, gamma).unwrap())
}

fn pmf_strategy(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 2..max_len).prop_map(|w| {
        let s: f64 = w.iter().sum::<f64>().max(1e-300);
        w.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn quadratic_brackets_the_root(p in params_strategy()) {
        let k = 1.0 - p.gamma();
        prop_assert!(quadratic_residual(&p, 0.0) > 0.0);
        if p.n_h() < 1.0 {
            prop_assert!(quadratic_residual(&p, k) <= 1e-12);
            let (small, large) = quadratic_roots(&p);
            let r = equilibrium_ratio(&p);
            prop_assert!(r > 0.0 && r < k);
            prop_assert!((r - small).abs() < 1e-12);
            prop_assert!(large >= k - 1e-12);
        }
    }

    #[test]
    fn discriminant_is_positive(p in params_strategy()) {
        prop_assert!(discriminant(&p) > 0.0);
    }

    #[test]
    fn cheaters_hold_more_at_equilibrium(p in interior_params()) {
        let r = equilibrium_ratio(&p);
        let mean_c = r / (1.0 - p.gamma() - r);
        let mean_h = r / (1.0 - r);
        prop_assert!(mean_c > mean_h);
        prop_assert!((p.n_c() * mean_c + p.n_h() * mean_h - p.mu()).abs() < 1e-8 * p.mu());
    }

    #[test]
    fn operators_are_zero_sum(p in pmf_strategy(300), r in 0.0f64..2.0, gamma in 0.0f64..0.99) {
        prop_assert!(total(&apply_lh(&p, r)).abs() < 1e-14);
        prop_assert!(total(&apply_lc(&p, r, gamma)).abs() < 1e-14);
        // Zero-sum holds without normalization too.
        let scaled: Vec<f64> = p.iter().map(|x| 7.0 * x).collect();
        prop_assert!(total(&apply_lh(&scaled, r)).abs() < 1e-13);
    }

    #[test]
    fn weighted_first_moment_is_conserved(
        pc in pmf_strategy(40),
        ph in pmf_strategy(40),
        p in interior_params(),
    ) {
        // Pad so nothing touches the top bin.
        let mut pc = pc; pc.resize(80, 0.0);
        let mut ph = ph; ph.resize(80, 0.0);
        let r = p.n_c() * p.give_prob() * (1.0 - pc[0]) + p.n_h() * (1.0 - ph[0]);
        let moment = p.n_h() * first_moment(&apply_lh(&ph, r)) + p.n_c() * first_moment(&apply_lc(&pc, r, p.gamma()));
        prop_assert!(moment.abs() < 1e-12, "{moment}");
    }

    #[test]
    fn gini_forms_agree_and_ignore_padding(p in pmf_strategy(200), pad in 0usize..20) {
        let pmf = WealthPmf::new(p).unwrap();
        prop_assume!(pmf.mean() > 1e-6);
        let a = gini_pmf(&pmf).unwrap();
        let b = gini_double_sum(&pmf).unwrap();
        prop_assert!((a - b).abs() < 1e-10);
        prop_assert!((0.0..1.0).contains(&a));
        let padded = pmf.resized(pmf.n_max() + pad);
        prop_assert!((gini_pmf(&padded).unwrap() - a).abs() < 1e-14);
    }

    #[test]
    fn closed_form_gini_matches_truncated_mixture(
        mu in 0.5f64..10.0, n_h in 0.2f64..0.8, gamma in 0.0f64..0.95,
    ) {
        let p = ModelParams64::mean_field(mu, n_h, gamma).unwrap();
        let eq = solve_equilibrium(&p, 2000).unwrap();
        prop_assert!((gini_equilibrium(&p).unwrap() - gini_pmf(&eq.p_bar_mix).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn production_is_nonnegative(pc in pmf_strategy(60), ph in pmf_strategy(60), p in interior_params()) {
        let n = pc.len().max(ph.len());
        let mut pc = pc; pc.resize(n, 0.0);
        let mut ph = ph; ph.resize(n, 0.0);
        let s = MeanFieldState::new(WealthPmf::new(pc).unwrap(), WealthPmf::new(ph).unwrap(), p).unwrap();
        prop_assert!(h_production(&s) >= 0.0);
    }

    #[test]
    fn linearized_flow_preserves_admissibility(p in interior_params(), seed in any::<u64>()) {
        let Ok(eq) = solve_equilibrium(&p, 400) else { return Ok(()) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = sample_perturbation(&eq, &p, 20, &mut rng);
        let adm = w.admissibility(&p);
        prop_assert!(adm.mass_c.abs() < 1e-10 && adm.mass_h.abs() < 1e-10 && adm.weighted_mean.abs() < 1e-8);
        let d = linearized_rhs(&w, &eq, &p);
        // Only the suppressed top flux can leak the mean; w lives far below it.
        prop_assert!(d.admissibility(&p).max_abs() < 1e-8);
        prop_assert!(energy_dissipation_rate(&w, &eq, &p) <= 0.0);
    }

    #[test]
    fn poincare_holds_for_three_point_sequences(r in 0.01f64..0.99, a in -10.0f64..10.0) {
        // (a, -2a, a) has zero mass and zero first moment.
        prop_assert!(weighted_poincare_check(r, &[a, -2.0 * a, a]).is_ok());
    }
}

#[test]
fn closed_form_matches_bisection_on_a_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    use rand::Rng;
    for _ in 0..1000 {
        let p = ModelParams64::mean_field(
            rng.random_range(0.1..20.0),
            rng.random_range(0.0..0.999),
            rng.random_range(0.0..0.99),
        )
        .unwrap();
        let (r, oracle) = (equilibrium_ratio(&p), bisect_ratio(&p));
        assert!((r - oracle).abs() < 1e-12, "{p:?}: {r} vs {oracle}");
    }
}

#[test]
fn rate_at_equilibrium_equals_r_bar() {
    let p = ModelParams64::default();
    let eq = solve_equilibrium(&p, 500).unwrap();
    let s = MeanFieldState::from_equilibrium(&eq, p);
    assert!((rate_r(&s) - eq.r_bar).abs() < 1e-10);
}

#[test]
fn mixture_weights() {
    let pc = WealthPmf::<f64>::dirac(0, 2).unwrap();
    let ph = WealthPmf::<f64>::dirac(2, 2).unwrap();
    let half = ModelParams64::mean_field(1.0, 0.5, 0.2).unwrap();
    let m = mix(&pc, &ph, &half).unwrap();
    assert_eq!(m.probs(), &[0.5, 0.0, 0.5]);
    assert_eq!(m.mean(), 1.0);
    let honest = ModelParams64::mean_field(1.0, 1.0, 0.2).unwrap();
    assert_eq!(mix(&pc, &ph, &honest).unwrap(), ph);
    let cheat = ModelParams64::mean_field(1.0, 0.0, 0.2).unwrap();
    assert_eq!(mix(&pc, &ph, &cheat).unwrap(), pc);
}

#[test]
fn h_is_maximal_at_equilibrium_among_nearby_pairs() {
    let p = ModelParams64::default();
    let eq = solve_equilibrium(&p, 500).unwrap();
    let pc = eq.p_bar_c.as_ref().unwrap();
    let h_eq = h_functional(pc, &eq.p_bar_h, &p);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let w: PerturbationPair<f64> = sample_perturbation(&eq, &p, 15, &mut rng).scaled(1e-3);
        let f: Vec<f64> = pc.probs().iter().zip(&w.wc).map(|(a, b)| a + b).collect();
        let g: Vec<f64> = eq.p_bar_h.probs().iter().zip(&w.wh).map(|(a, b)| a + b).collect();
        if f.iter().chain(&g).any(|x| *x < 0.0) {
            continue;
        }
        let h = bdy_cheat::lyapunov::h_functional_raw(&p, &f, &g);
        assert!(h <= h_eq + 1e-12);
    }
}

#[test]
fn f32_pipeline_agrees_with_f64() {
    let p64 = ModelParams64::default();
    let p32 = p64.cast::<f32>();
    let r32 = equilibrium_ratio(&p32) as f64;
    assert_relative_eq!(r32, equilibrium_ratio(&p64), epsilon = 1e-6);
    let g32 = gini_equilibrium(&p32).unwrap() as f64;
    assert_relative_eq!(g32, gini_equilibrium(&p64).unwrap(), epsilon = 1e-5);
}
