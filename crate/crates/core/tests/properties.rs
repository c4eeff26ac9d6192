use cgpo_core::confidence::{calibrate, calibrate_threshold, min_confidence_index, segment_steps};
use cgpo_core::corpus::{generate_split, render_solution, verify_answer, CorpusConfig};
use cgpo_core::pairs::select_pair;
use cgpo_core::reward::CandidateScore;
use cgpo_core::trainer::{neg_log_sigmoid, objective};
use proptest::prelude::*;

fn scores() -> impl Strategy<Value = Vec<CandidateScore>> {
    prop::collection::vec((0u32..30, -5.0f64..5.0, 0usize..5), 2..9).prop_map(|v| {
        v.into_iter()
            .map(|(token, logit, s)| CandidateScore {
                token,
                logit,
                score: s as f64 / 4.0,
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn threshold_is_a_member_and_bounds_the_tail(
        values in prop::collection::vec(1e-6f64..=1.0, 1..300),
        q in 0.001f64..0.999,
    ) {
        let tau = calibrate_threshold(&values, q).unwrap();
        prop_assert!(values.contains(&tau));
        let below = values.iter().filter(|&&c| c < tau).count();
        prop_assert!(below as f64 <= q * values.len() as f64);
    }

    #[test]
    fn thresholds_are_ordered_like_their_quantiles(
        values in prop::collection::vec(1e-6f64..=1.0, 1..300),
        a in 0.01f64..0.5,
        b in 0.01f64..0.5,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let t = calibrate(&values, lo, hi).unwrap();
        prop_assert!(t.tau_split <= t.tau_stop);
    }

    #[test]
    fn raising_tau_only_adds_step_starts(
        trace in prop::collection::vec(1e-6f64..=1.0, 1..120),
        a in 0.0f64..1.0,
        b in 0.0f64..1.0,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let coarse = segment_steps(&trace, lo);
        let fine = segment_steps(&trace, hi);
        prop_assert!(coarse.step_starts.iter().all(|s| fine.step_starts.contains(s)));
        for t in 0..trace.len() {
            prop_assert!(coarse.steps().nth(coarse.step_of(t)).unwrap().contains(&t));
        }
    }

    #[test]
    fn branch_index_is_the_earliest_minimum(trace in prop::collection::vec(0.0f64..=1.0, 1..80)) {
        let i = min_confidence_index(&trace);
        prop_assert!(trace.iter().all(|&c| c >= trace[i]));
        prop_assert!(trace[..i].iter().all(|&c| c > trace[i]));
    }

    #[test]
    fn selected_pair_spans_the_score_range(s in scores(), gap in 0.0f64..0.8) {
        let max = s.iter().map(|c| c.score).fold(f64::MIN, f64::max);
        let min = s.iter().map(|c| c.score).fold(f64::MAX, f64::min);
        match select_pair(&s, gap) {
            Some((chosen, rejected)) => {
                prop_assert_ne!(chosen, rejected);
                prop_assert_eq!(s[chosen].score, max);
                prop_assert_eq!(s[rejected].score, min);
                prop_assert!(max - min > gap);
            }
            None => prop_assert!(max - min <= gap),
        }
    }

    #[test]
    fn loss_matches_pointwise_softplus(
        pairs in prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0), 1..32),
        beta in 0.05f64..2.0,
    ) {
        let (theta, reference): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let (stats, _) = objective(&theta, &reference, beta);
        let expected = theta
            .iter()
            .zip(&reference)
            .map(|(t, r)| neg_log_sigmoid(beta * (t - r)))
            .sum::<f64>()
            / theta.len() as f64;
        prop_assert!((stats.loss - expected).abs() < 1e-12);
        prop_assert!(stats.loss >= 0.0);
    }
}

#[test]
fn gold_solutions_verify_on_both_splits() {
    let cfg = CorpusConfig {
        n_train: 300,
        n_eval: 100,
        ..CorpusConfig::default()
    };
    for eval in [false, true] {
        for p in generate_split(&cfg, eval).unwrap() {
            assert!(verify_answer(&p, &render_solution(&p)), "{}", p.expression);
        }
    }
}

#[test]
fn splits_do_not_share_expressions() {
    let cfg = CorpusConfig {
        n_train: 2_000,
        n_eval: 300,
        ..CorpusConfig::default()
    };
    let train: std::collections::HashSet<String> =
        generate_split(&cfg, false).unwrap().into_iter().map(|p| p.expression).collect();
    assert!(generate_split(&cfg, true).unwrap().iter().all(|p| !train.contains(&p.expression)));
}
