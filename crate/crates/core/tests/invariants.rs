//! Property tests for model invariants.

use proptest::prelude::*;

use teamsdt::aggregation::{team_accuracy, Agent, AggregationRule, RuleContext};
use teamsdt::bounds::{kappa, max_gain, minimax_interval, optimal_weights, rho_star, rho_star_k};
use teamsdt::io::{read_trials, write_trials, Manifest};
use teamsdt::normal;
use teamsdt::sdt::{simulate_trials, AgentParams, PairConfig};

fn agent(d: f64) -> AgentParams {
    AgentParams::canonical(d, 0.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normal_cdf_is_symmetric_and_invertible(x in -8.0f64..8.0) {
        prop_assert!((normal::cdf(x) + normal::cdf(-x) - 1.0).abs() < 1e-14);
        // Invert on the lower tail, where `cdf` keeps full relative precision.
        let lower = -x.abs();
        prop_assert!((normal::inv_cdf(normal::cdf(lower)) - lower).abs() < 1e-9 * (1.0 + x.abs()));
    }

    #[test]
    fn bivariate_cdf_respects_frechet_bounds(h in -3.0f64..3.0, k in -3.0f64..3.0, r in -0.99f64..0.99) {
        let p = normal::bivariate_cdf(h, k, r).unwrap();
        let (ph, pk) = (normal::cdf(h), normal::cdf(k));
        prop_assert!(p >= (ph + pk - 1.0).max(0.0) - 1e-12);
        prop_assert!(p <= ph.min(pk) + 1e-12);
        prop_assert!((p - normal::bivariate_cdf(k, h, r).unwrap()).abs() < 1e-12);
        let indep = normal::bivariate_cdf(h, k, 0.0).unwrap();
        prop_assert!((indep - ph * pk).abs() < 1e-12);
    }

    #[test]
    fn kclass_threshold_shrinks_with_k(rho in 0.0f64..=1.0, k in 2usize..64) {
        let a = rho_star_k(rho, k).unwrap();
        let b = rho_star_k(rho, k + 1).unwrap();
        prop_assert!(b <= a && a <= rho);
    }

    #[test]
    fn kappa_is_increasing_and_nonnegative(r1 in 0.0f64..0.99, r2 in 0.0f64..0.99) {
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let (kl, kh) = (kappa(lo).unwrap(), kappa(hi).unwrap());
        prop_assert!(kl >= 0.0 && kl <= kh + 1e-15);
    }

    #[test]
    fn optimal_weights_have_unit_combined_scale(d_h in 0.1f64..4.0, d_m in 0.1f64..4.0, rho in -0.9f64..0.9) {
        let (w_h, w_m) = optimal_weights(d_h, d_m, rho).unwrap();
        let q = w_h * w_h + w_m * w_m - 2.0 * rho * w_h * w_m;
        prop_assert!((q - 1.0).abs() < 1e-12);
        prop_assert!((w_h / w_m - d_h / d_m).abs() < 1e-9 * (1.0 + d_h / d_m));
    }

    #[test]
    fn ceiling_never_exceeds_error_mass(e in 0.0f64..=1.0, d in 0.0f64..10.0) {
        let g = max_gain(e, d);
        prop_assert!(g >= e / 2.0 - 1e-15 && g <= e);
    }

    #[test]
    fn minimax_flag_matches_order(dd in 0.0f64..5.0, e in 0.0f64..=1.0) {
        let m = minimax_interval(dd, e).unwrap();
        prop_assert_eq!(m.ordered, m.lo <= m.hi);
        prop_assert!(m.lo >= 0.0 && m.lo < 0.5 / std::f64::consts::PI.sqrt());
    }

    #[test]
    fn threshold_is_clamped_and_symmetric(a in 0.01f64..0.99, b in 0.01f64..0.99) {
        let t = rho_star(a, b).unwrap();
        prop_assert!((0.0..=1.0).contains(&t.value));
        prop_assert_eq!(t, rho_star(b, a).unwrap());
    }

    #[test]
    fn calibration_hits_feasible_targets(d_h in 0.3f64..3.0, d_m in 0.3f64..3.0, u in 0.0f64..1.0) {
        let (h, m) = (agent(d_h), agent(d_m));
        let (lo, hi) = teamsdt::sdt::achievable_error_correlation(&h, &m, 0.5).unwrap();
        let target = (lo + u * (hi - lo)).clamp(lo + 1e-3, hi - 1e-3);
        prop_assume!(lo + 1e-3 < hi - 1e-3);
        let cfg = PairConfig::with_error_correlation(h, m, target, 0.5).unwrap();
        prop_assert!((cfg.error_correlation().unwrap() - target).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn deferring_reproduces_the_agent(d_h in 0.2f64..3.0, d_m in 0.2f64..3.0, r in -0.5f64..0.9, seed in any::<u64>()) {
        let cfg = PairConfig::new(agent(d_h), agent(d_m), r).unwrap();
        let trials = simulate_trials(&cfg, 500, seed);
        let ctx = RuleContext::new(seed);
        let h = trials.iter().filter(|t| t.h_correct()).count() as f64 / 500.0;
        let got = team_accuracy(&AggregationRule::DeferTo { agent: Agent::H }, &trials, &ctx).unwrap();
        prop_assert!((got - h).abs() < 1e-12);
    }

    #[test]
    fn agreeing_trials_follow_the_common_label(d in 0.2f64..3.0, r in -0.5f64..0.9, seed in any::<u64>()) {
        let cfg = PairConfig::new(agent(d), agent(d * 0.7), r).unwrap();
        let ctx = RuleContext::new(seed);
        let (w_h, w_m) = optimal_weights(d, d * 0.7, r.max(0.0)).unwrap();
        let rules = [
            AggregationRule::MajorityRandomTiebreak,
            AggregationRule::confidence_weighted(w_h, w_m).unwrap(),
        ];
        for (i, t) in simulate_trials(&cfg, 300, seed).iter().enumerate() {
            for rule in &rules {
                let out = rule.apply(t, i as u64, &ctx);
                prop_assert!(out <= 1);
                if t.agree() {
                    prop_assert_eq!(out, t.yhat_h);
                }
            }
        }
    }

    #[test]
    fn trial_logs_round_trip(d_h in 0.2f64..3.0, d_m in 0.2f64..3.0, r in -0.5f64..0.9, seed in any::<u64>()) {
        let cfg = PairConfig::new(agent(d_h), agent(d_m), r).unwrap();
        let trials = simulate_trials(&cfg, 200, seed);
        let mut buf = Vec::new();
        write_trials(&mut buf, "pair", &trials).unwrap();
        let log = read_trials(buf.as_slice(), Manifest::default()).unwrap();
        prop_assert_eq!(log.records(), trials);
    }
}
