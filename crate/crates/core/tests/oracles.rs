use mastery_core::fit::{fit_map, FitConfig, Termination};
use mastery_core::ingest::{
    build_table, clean, parse_records, subsample, write_canonical_csv, ColumnSchema, ResponseRecord,
};
use mastery_core::model::{gradient, PriorConfig};
use mastery_core::synth::{generate, ResponsesPerStudent, SynthSpec};

/// Independent SplitMix64, written from the published algorithm.
struct Reference(u64);

impl Reference {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    fn below(&mut self, m: u64) -> u64 {
        let t = (u64::MAX - m + 1) % m;
        loop {
            let x = self.next();
            if x >= t {
                return x % m;
            }
        }
    }
}

#[test]
fn single_record_subsample_matches_reference_generator() {
    let records: Vec<ResponseRecord> = ["a", "b", "c"]
        .iter()
        .enumerate()
        .map(|(i, s)| ResponseRecord {
            student: s.to_string(),
            skill: format!("k{i}"),
            correct: i % 2 == 0,
            order: i as u64,
        })
        .collect();
    let table = build_table(&records).unwrap();
    for seed in [0, 1, 42, 2025, u64::MAX] {
        let picked = Reference(seed).below(3) as usize;
        let sub = subsample(&table, 1, seed).unwrap();
        assert_eq!(
            sub.to_records(),
            vec![records[picked].clone()],
            "seed {seed}"
        );
    }
}

#[test]
fn full_subsample_keeps_the_multiset() {
    let data = generate(&SynthSpec::new(20, 4, 10, 3)).unwrap();
    let sub = subsample(&data.table, data.table.len(), 99).unwrap();
    let mut a = data.table.to_records();
    let mut b = sub.to_records();
    a.sort_by_key(|r| r.order);
    b.sort_by_key(|r| r.order);
    assert_eq!(a, b);
}

#[test]
fn synthetic_csv_round_trips_through_ingest() {
    let data = generate(&SynthSpec::new(30, 6, 8, 12)).unwrap();
    let mut buf = Vec::new();
    write_canonical_csv(&data.table, &mut buf).unwrap();
    let (records, report) = clean(parse_records(buf.as_slice(), &ColumnSchema::default()).unwrap());
    assert_eq!(report.rows_kept, data.table.len());
    assert_eq!(build_table(&records).unwrap(), data.table);
}

#[test]
fn descent_and_stationarity_on_synthetic_fits() {
    let prior = PriorConfig::default();
    let config = FitConfig::default();
    for seed in 0..5 {
        let spec = SynthSpec {
            responses_per_student: ResponsesPerStudent::Range { min: 2, max: 30 },
            ..SynthSpec::new(80, 12, 0, seed)
        };
        let data = generate(&spec).unwrap();
        let fit = fit_map(&data.table, &prior, &config).unwrap();
        let trace = &fit.diagnostics.objective_trace;
        assert!(trace.windows(2).all(|w| w[1] <= w[0]), "seed {seed}");
        assert!(fit.converged());
        let g = gradient(&fit.params, &data.table, &prior).unwrap();
        let norm = g
            .theta
            .iter()
            .chain(&g.beta)
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        assert_eq!(norm, fit.diagnostics.final_gradient_norm);
        if fit.diagnostics.termination_reason == Termination::GradientTol {
            assert!(norm <= config.gradient_tolerance);
        }
    }
}

#[test]
fn subsample_grid_fits_converge() {
    let spec = SynthSpec {
        responses_per_student: ResponsesPerStudent::Range { min: 20, max: 180 },
        skill_weights: Some((1..=110).map(|k| 1.0 / k as f64).collect()),
        ..SynthSpec::new(500, 110, 0, 2011)
    };
    let data = generate(&spec).unwrap();
    assert!(data.table.len() >= 40_000);
    let prior = PriorConfig::default();
    for n in [20_000, 40_000] {
        for seed in [42, 2025] {
            let sub = subsample(&data.table, n, seed).unwrap();
            let fit = fit_map(&sub, &prior, &FitConfig::default()).unwrap();
            assert_ne!(
                fit.diagnostics.termination_reason,
                Termination::MaxIter,
                "n {n} seed {seed}"
            );
        }
    }
}

#[test]
fn generated_rates_match_model_per_cell() {
    use mastery_core::model::predict_prob;
    let spec = SynthSpec::new(1, 1, 10_000, 8);
    let data = generate(&spec).unwrap();
    let p = predict_prob(data.truth.theta[0], data.truth.beta[0]).unwrap();
    let frac = data.table.labels().iter().filter(|&&y| y).count() as f64 / 10_000.0;
    assert!((frac - p).abs() <= 0.02, "{frac} vs {p}");
}

#[test]
fn params_json_round_trips_bit_exactly() {
    use mastery_core::model::{ModelParams, ParamsDocument};
    let data = generate(&SynthSpec::new(40, 8, 10, 77)).unwrap();
    let fit = fit_map(&data.table, &PriorConfig::default(), &FitConfig::default()).unwrap();
    let text = serde_json::to_string(&fit.params.to_document(&data.table, &fit.prior)).unwrap();
    let doc: ParamsDocument = serde_json::from_str(&text).unwrap();
    assert_eq!(
        ModelParams::from_document(&doc, &data.table).unwrap(),
        fit.params
    );
}
