use proptest::prelude::*;

use mastery_core::analytics::{
    ability_histogram, cohort_summary, rank_skills, relative_mastery, skill_observed_vs_predicted,
    student_trajectory, StudentSelector,
};
use mastery_core::fit::check_gradient;
use mastery_core::ingest::{
    build_table, clean, parse_records, subsample, ColumnSchema, InteractionTable, ResponseRecord,
};
use mastery_core::metrics::{auc, calibration, log_loss};
use mastery_core::model::{
    neg_log_likelihood, neg_log_posterior, predict_prob, ModelParams, PriorConfig,
};

fn records_strategy(
    max_students: usize,
    max_skills: usize,
    max_len: usize,
) -> impl Strategy<Value = Vec<ResponseRecord>> {
    prop::collection::vec((0..max_students, 0..max_skills, any::<bool>()), 1..max_len).prop_map(
        |rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, (s, k, c))| ResponseRecord {
                    student: format!("s{s}"),
                    skill: format!("k{k}"),
                    correct: c,
                    order: i as u64,
                })
                .collect()
        },
    )
}

fn table_and_params() -> impl Strategy<Value = (InteractionTable, ModelParams)> {
    records_strategy(12, 6, 80).prop_flat_map(|records| {
        let table = build_table(&records).unwrap();
        let (ns, nk) = (table.num_students(), table.num_skills());
        (
            Just(table),
            prop::collection::vec(-4.0..4.0f64, ns),
            prop::collection::vec(-4.0..4.0f64, nk),
        )
            .prop_map(|(t, theta, beta)| (t, ModelParams { theta, beta }))
    })
}

fn to_csv(records: &[ResponseRecord]) -> String {
    let mut text = String::from("student,skill,correct\n");
    for r in records {
        text.push_str(&format!(
            "{},{},{}\n",
            r.student,
            r.skill,
            u8::from(r.correct)
        ));
    }
    text
}

proptest! {
    #[test]
    fn interning_is_stable(records in records_strategy(20, 8, 60)) {
        let text = to_csv(&records);
        let once = || {
            let log = parse_records(text.as_bytes(), &ColumnSchema::default()).unwrap();
            build_table(&clean(log).0).unwrap()
        };
        prop_assert_eq!(once(), once());
    }

    #[test]
    fn counts_are_consistent(records in records_strategy(20, 8, 60)) {
        let t = build_table(&records).unwrap();
        prop_assert_eq!(t.attempts_per_student().iter().sum::<usize>(), t.len());
        prop_assert_eq!(t.attempts_per_skill().iter().sum::<usize>(), t.len());
        prop_assert!(t.attempts_per_student().iter().all(|&c| c > 0));
        prop_assert!(t.attempts_per_skill().iter().all(|&c| c > 0));
        prop_assert!(t.records().windows(2).all(|w| w[0].order <= w[1].order));
    }

    #[test]
    fn subsample_draws_from_input(records in records_strategy(20, 8, 60), seed in any::<u64>(), frac in 0.01..1.0f64) {
        let t = build_table(&records).unwrap();
        let n = ((frac * t.len() as f64).ceil() as usize).clamp(1, t.len());
        let sub = subsample(&t, n, seed).unwrap();
        prop_assert_eq!(sub.len(), n);
        let mut pool = t.to_records();
        for r in sub.to_records() {
            let at = pool.iter().position(|p| *p == r);
            prop_assert!(at.is_some(), "record {:?} not in input", r);
            pool.swap_remove(at.unwrap());
        }
        prop_assert_eq!(sub, subsample(&t, n, seed).unwrap());
    }

    #[test]
    fn cleaning_report_balances_on_fuzz(
        rows in prop::collection::vec(
            prop::collection::vec(prop::sample::select(vec!["", "s1", "s2", "k1", "k1~k2", "k2~k3~k1", "0", "1", "yes", " 1 "]), 2..5),
            0..40,
        ),
        expand in any::<bool>(),
    ) {
        let mut text = String::from("student,skill,correct\n");
        for row in &rows {
            text.push_str(&row.join(","));
            text.push('\n');
        }
        let schema = ColumnSchema {
            multi_skill_separator: Some("~".into()),
            expand_multi_skill: expand,
            ..ColumnSchema::default()
        };
        let log = parse_records(text.as_bytes(), &schema).unwrap();
        let (kept, report) = clean(log);
        prop_assert!(report.is_balanced(), "{:?}", report);
        prop_assert_eq!(report.rows_read, rows.len());
        prop_assert_eq!(report.rows_kept, kept.len());
        prop_assert!(kept.iter().all(|r| !r.student.is_empty() && !r.skill.is_empty()));
    }

    #[test]
    fn logistic_symmetry(theta in -30.0..30.0f64, beta in -30.0..30.0f64) {
        let sum = predict_prob(theta, beta).unwrap() + predict_prob(beta, theta).unwrap();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn shift_changes_only_the_penalty((table, params) in table_and_params(), c in -3.0..3.0f64) {
        let prior = PriorConfig::default();
        let mut shifted = params.clone();
        shifted.theta.iter_mut().chain(shifted.beta.iter_mut()).for_each(|v| *v += c);
        let nll = neg_log_likelihood(&params, &table).unwrap();
        let nll_shifted = neg_log_likelihood(&shifted, &table).unwrap();
        prop_assert!((nll - nll_shifted).abs() <= 1e-9 * nll.max(1.0));

        let expected: f64 = params.theta.iter().chain(&params.beta)
            .map(|v| ((v + c).powi(2) - v * v) / (2.0 * 100.0))
            .sum();
        let delta = neg_log_posterior(&shifted, &table, &prior).unwrap()
            - neg_log_posterior(&params, &table, &prior).unwrap();
        prop_assert!((delta - expected).abs() <= 1e-9 * nll.max(1.0), "{} vs {}", delta, expected);
    }

    #[test]
    fn objective_is_positive((table, params) in table_and_params()) {
        prop_assert!(neg_log_posterior(&params, &table, &PriorConfig::default()).unwrap() > 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences((table, params) in table_and_params()) {
        let err = check_gradient(&table, &PriorConfig::default(), &params, 1e-5).unwrap();
        prop_assert!(err <= 1e-6, "relative error {}", err);
    }

    #[test]
    fn auc_ignores_monotone_transforms(
        pairs in prop::collection::vec((any::<bool>(), -5.0..5.0f64), 2..100),
    ) {
        let labels: Vec<bool> = pairs.iter().map(|p| p.0).collect();
        prop_assume!(labels.iter().any(|&y| y) && labels.iter().any(|&y| !y));
        let scores: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let squashed: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
        prop_assert_eq!(auc(&labels, &scores).unwrap(), auc(&labels, &squashed).unwrap());
    }

    #[test]
    fn auc_flips_on_tie_free_scores(
        labels in prop::collection::vec(any::<bool>(), 2..100),
        seed in any::<u64>(),
    ) {
        prop_assume!(labels.iter().any(|&y| y) && labels.iter().any(|&y| !y));
        let mut rng = mastery_core::rng::SeededRng::new(seed);
        let perm = rng.partial_shuffle(labels.len(), labels.len());
        let scores: Vec<f64> = perm.iter().map(|&p| p as f64).collect();
        let flipped: Vec<bool> = labels.iter().map(|y| !y).collect();
        let sum = auc(&labels, &scores).unwrap() + auc(&flipped, &scores).unwrap();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn log_loss_is_minimized_at_the_mean(labels in prop::collection::vec(any::<bool>(), 1..200)) {
        let mean = labels.iter().filter(|&&y| y).count() as f64 / labels.len() as f64;
        let at_mean = log_loss(&labels, &vec![mean; labels.len()]).unwrap();
        for i in 0..=1000 {
            let p = i as f64 / 1000.0;
            let l = log_loss(&labels, &vec![p; labels.len()]).unwrap();
            prop_assert!(at_mean <= l + 1e-12, "p={} beats the mean {}", p, mean);
        }
    }

    #[test]
    fn calibration_partitions_records(
        pairs in prop::collection::vec((any::<bool>(), 0.0..1.0f64), 1..300),
        bins in 1usize..20,
    ) {
        prop_assume!(pairs.len() >= bins);
        let labels: Vec<bool> = pairs.iter().map(|p| p.0).collect();
        let probs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let table = calibration(&labels, &probs, bins).unwrap();
        prop_assert_eq!(table.bins.len(), bins);
        prop_assert_eq!(table.bins.iter().map(|b| b.count).sum::<usize>(), labels.len());
        let hits: f64 = table.bins.iter().map(|b| b.observed_fraction * b.count as f64).sum();
        let expected = labels.iter().filter(|&&y| y).count() as f64;
        prop_assert!((hits - expected).abs() < 1e-9);
    }

    #[test]
    fn analytics_agree_with_raw_params((table, params) in table_and_params(), bins in 1usize..15) {
        let h = ability_histogram(&params, bins).unwrap();
        prop_assert!((h.proportions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert_eq!(h.counts.iter().sum::<usize>(), params.theta.len());

        let summary = cohort_summary(&params);
        let mt = params.theta.iter().sum::<f64>() / params.theta.len() as f64;
        let mb = params.beta.iter().sum::<f64>() / params.beta.len() as f64;
        prop_assert_eq!(relative_mastery(&summary), mt - mb);

        let ranking = rank_skills(&params, &table, 1).unwrap();
        let min = params.beta.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(ranking.easiest[0].beta, min);
        prop_assert!(params.beta.contains(&ranking.hardest[0].beta));

        let labels: Vec<&str> = table.skill_labels().iter().map(String::as_str).collect();
        for cmp in skill_observed_vs_predicted(&params, &table, &labels).unwrap() {
            let k = table.skill_index(&cmp.skill).unwrap();
            let rows: Vec<_> = table.records().iter().filter(|r| r.skill == k).collect();
            let hits = rows.iter().filter(|r| r.correct).count();
            prop_assert_eq!(cmp.count, rows.len());
            prop_assert_eq!(cmp.observed, hits as f64 / rows.len() as f64);
        }

        let traj = student_trajectory(&params, &table, &StudentSelector::Highest).unwrap();
        let s = table.student_index(&traj.student).unwrap();
        prop_assert_eq!(traj.points.len(), table.attempts_per_student()[s]);
        for p in &traj.points {
            let k = table.skill_index(&p.skill).unwrap();
            prop_assert_eq!(p.predicted, predict_prob(params.theta[s], params.beta[k]).unwrap());
        }
    }
}
