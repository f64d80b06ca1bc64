use super::*;
use std::path::Path;

use crate::quantizers::CoarseSpec;

fn stream_cfg(trend: f32, months: usize, seed: u64) -> DriftStreamConfig {
    DriftStreamConfig {
        n_clusters: 24,
        dim: 12,
        points_per_month: 2000,
        n_months: months,
        trend_magnitude: trend,
        center_spread: 3.0,
        seed,
        ..Default::default()
    }
}

fn protocol(synthetic: DriftStreamConfig, strategy: UpdateStrategy) -> ProtocolConfig {
    let mut index = IndexConfig::new(CoarseSpec::Flat { k: 32 });
    index.seed = 3;
    ProtocolConfig {
        dataset: None,
        synthetic: Some(synthetic),
        burst: None,
        train_mode: TrainMode::OutOfDomain,
        window: 3,
        update_every: 1,
        n_steps: None,
        strategy,
        budgets: vec![
            Budget::Fraction { fraction: 0.02 },
            Budget::Fraction { fraction: 0.05 },
            Budget::Fraction { fraction: 0.15 },
        ],
        k: 10,
        n_queries: 300,
        train_sample_size: 4000,
        index,
        seed: 9,
    }
}

fn full() -> UpdateStrategy {
    UpdateStrategy::Full {
        train_sample_size: 4000,
        retrain_codec: false,
    }
}

fn lazy() -> UpdateStrategy {
    UpdateStrategy::Lazy {
        iters: 1,
        source: Default::default(),
    }
}

#[test]
fn short_dataset_is_rejected_up_front() {
    let cfg = protocol(stream_cfg(0.0, 4, 1), UpdateStrategy::None);
    let err = run_stream(&cfg).unwrap_err();
    assert!(matches!(err, Error::InvalidDataset(_)), "{err}");
    assert!(!err.is_config_error());
    let mut ok = cfg.clone();
    ok.synthetic.as_mut().unwrap().n_months = 5;
    assert_eq!(run_stream(&ok).unwrap().steps.len(), 1);
}

#[test]
fn bad_configs_are_config_errors() {
    let base = protocol(stream_cfg(0.0, 6, 1), UpdateStrategy::None);
    let mut c = base.clone();
    c.window = 0;
    assert!(c.validate().unwrap_err().is_config_error());
    let mut c = base.clone();
    c.budgets = vec![Budget::Dcs(100), Budget::Dcs(50)];
    assert!(c.validate().is_err());
    let mut c = base.clone();
    c.budgets = vec![Budget::Dcs(10), Budget::Fraction { fraction: 0.5 }];
    assert!(c.validate().is_err());
    let mut c = base.clone();
    c.dataset = Some("x.tds".into());
    assert!(c.validate().is_err());
    let mut c = base;
    c.n_steps = Some(9);
    assert!(run_stream(&c).unwrap_err().is_config_error());
}

#[test]
fn config_json_accepts_both_budget_forms() {
    let json = r#"{
        "synthetic": {"n_clusters": 4, "dim": 4, "points_per_month": 100, "n_months": 6,
            "trend_magnitude": 0.1, "seasonal_magnitude": 0.0, "seasonal_period_months": 12,
            "cluster_birth_rate": 0.0, "cluster_death_rate": 0.0, "noise_sigma": 1.0, "seed": 1},
        "window": 2,
        "strategy": {"strategy": "lazy"},
        "budgets": [{"fraction": 0.1}, {"fraction": 0.3}],
        "index": {"coarse": {"kind": "flat", "k": 4}}
    }"#;
    let c: ProtocolConfig = serde_json::from_str(json).unwrap();
    assert_eq!(c.k, 10);
    assert_eq!(c.n_queries, 10_000);
    assert_eq!(c.strategy, lazy());
    assert_eq!(c.budgets[1], Budget::Fraction { fraction: 0.3 });
    let abs: Vec<Budget> = serde_json::from_str("[100, 500]").unwrap();
    assert_eq!(abs, vec![Budget::Dcs(100), Budget::Dcs(500)]);
    assert!(serde_json::from_str::<ProtocolConfig>(&json.replace("\"window\"", "\"windw\"")).is_err());
}

#[test]
fn stream_report_invariants() {
    let cfg = protocol(stream_cfg(0.3, 8, 2), lazy());
    let r = run_stream(&cfg).unwrap();
    assert_eq!(r.steps.len(), 4);
    assert_eq!(r.label, "lazy");
    for (i, s) in r.steps.iter().enumerate() {
        assert_eq!(s.step, i + 1);
        assert_eq!(s.window, format!("{}-{}", i + 1, i + 3));
        assert_eq!(s.query_month, i as i64 + 4);
        assert_eq!(s.n_live, 6000);
        assert_eq!(s.n_queries, 300);
        assert!(s.update.is_some());
        assert!(s.list_min <= s.list_median && s.list_median <= s.list_max);
        for b in &s.budgets {
            assert!((0.0..=1.0).contains(&b.recall));
            assert_eq!(b.dcs_actual, b.dcs_expected);
            assert_eq!(b.dcs_expected, 300 * b.dcs as u64);
        }
        assert_eq!(s.budgets.iter().map(|b| b.dcs).collect::<Vec<_>>(), vec![120, 300, 900]);
        assert!(s.budgets.windows(2).all(|w| w[0].recall <= w[1].recall));
    }
}

#[test]
fn exhaustive_budget_gives_exact_recall() {
    let mut cfg = protocol(stream_cfg(0.3, 6, 3), UpdateStrategy::None);
    cfg.budgets = vec![Budget::Dcs(100), Budget::Dcs(1_000_000)];
    let r = run_stream(&cfg).unwrap();
    for s in &r.steps {
        assert_eq!(s.budgets[1].recall, 1.0);
        assert_eq!(s.budgets[1].dcs_expected, 300 * 6000);
        assert_eq!(s.budgets[1].dcs_actual, s.budgets[1].dcs_expected);
    }
}

#[test]
fn update_every_controls_when_updates_run() {
    let mut cfg = protocol(stream_cfg(0.3, 9, 4), lazy());
    cfg.update_every = 2;
    let r = run_stream(&cfg).unwrap();
    let updated: Vec<usize> = r.steps.iter().filter(|s| s.update.is_some()).map(|s| s.step).collect();
    assert_eq!(updated, vec![2, 4]);
    let s = summarize(&[r]);
    assert_eq!(s.runs[0].n_updates, 2);
}

#[test]
fn in_domain_mode_rebuilds_every_step() {
    let mut cfg = protocol(stream_cfg(0.3, 6, 5), UpdateStrategy::None);
    cfg.train_mode = TrainMode::InDomain;
    let r = run_stream(&cfg).unwrap();
    assert_eq!(r.label, "in_domain");
    for s in &r.steps {
        let u = s.update.unwrap();
        assert_eq!(u.cells_retrained, 32);
        assert_eq!(u.vectors_reassigned, 6000);
    }
}

#[test]
fn strategies_share_queries_and_ground_truth() {
    let cfg = protocol(stream_cfg(0.3, 6, 6), UpdateStrategy::None);
    let ds = cfg.load_dataset().unwrap();
    let mut cache = GroundTruthCache::default();
    let a = run_stream_on(&ds, &cfg, &mut cache).unwrap();
    assert_eq!((cache.len(), cache.hits()), (2, 0));
    let b = run_stream_on(&ds, &ProtocolConfig { strategy: lazy(), ..cfg.clone() }, &mut cache).unwrap();
    assert_eq!((cache.len(), cache.hits()), (2, 2));
    let mut other_seed = cfg.clone();
    other_seed.seed += 1;
    run_stream_on(&ds, &other_seed, &mut cache).unwrap();
    assert_eq!((cache.len(), cache.hits()), (4, 2));
    assert_eq!(a.steps.len(), b.steps.len());
}

#[test]
fn empty_report_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let files = report_emit(&[], dir.path()).unwrap();
    let text = std::fs::read_to_string(&files.csv).unwrap();
    assert_eq!(text, format!("{}\n", CSV_HEADER.join(",")));
    assert_eq!(summary_from_csv(&files.csv).unwrap(), Summary::default());
}

#[test]
fn summary_round_trips_through_csv() {
    let cfg = protocol(stream_cfg(0.4, 7, 7), UpdateStrategy::None);
    let reports = run_streams(&cfg, &[UpdateStrategy::None, lazy(), full()]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = report_emit(&reports, dir.path().join("out")).unwrap();
    let emitted: Summary = serde_json::from_str(&std::fs::read_to_string(&files.summary).unwrap()).unwrap();
    assert_eq!(summary_from_csv(&files.csv).unwrap(), emitted);
    assert_eq!(emitted, summarize(&reports));
    assert_eq!(read_rows(&files.csv).unwrap().len(), 3 * 3 * 3);

    assert_eq!(emitted.runs.len(), 3);
    for (run, r) in emitted.runs.iter().zip(&reports) {
        assert_eq!(run.mean_recall, r.mean_recall());
        assert_eq!(run.mean_update_time, r.mean_update_time());
    }
    assert_eq!(emitted.max_gap.len(), 2);
    let g = &emitted.max_gap[1];
    let want = reports[2]
        .steps
        .iter()
        .zip(&reports[0].steps)
        .map(|(a, b)| a.budgets[0].recall - b.budgets[0].recall)
        .fold(f64::MIN, f64::max);
    assert_eq!((g.label.as_str(), g.baseline.as_str(), g.gap), ("full", "none", want));
}

fn without_times(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().clone();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            header
                .iter()
                .zip(rec.iter())
                .filter(|(h, _)| !h.ends_with("_time"))
                .map(|(_, v)| v.to_string())
                .collect()
        })
        .collect()
}


#[test]
fn same_seed_same_csv_modulo_times() {
    let cfg = protocol(stream_cfg(0.4, 6, 8), UpdateStrategy::None);
    let strategies = [lazy(), UpdateStrategy::Hybrid { k: Some(4), iters: 1, source: Default::default() }, full()];
    let dir = tempfile::tempdir().unwrap();
    let a = report_emit(&run_streams(&cfg, &strategies).unwrap(), dir.path().join("a")).unwrap();
    let b = report_emit(&run_streams(&cfg, &strategies).unwrap(), dir.path().join("b")).unwrap();
    let (ra, rb) = (without_times(&a.csv), without_times(&b.csv));
    assert!(!ra.is_empty());
    assert_eq!(ra, rb);
}

#[test]
fn full_and_none_agree_without_drift() {
    let mut stream = stream_cfg(0.0, 7, 10);
    stream.n_clusters = 64;
    stream.center_spread = 1.0;
    stream.points_per_month = 4000;
    let mut cfg = protocol(stream, UpdateStrategy::None);
    cfg.index.coarse = CoarseSpec::Flat { k: 64 };
    cfg.n_queries = 1000;
    cfg.budgets = [0.05, 0.1, 0.2].map(|fraction| Budget::Fraction { fraction }).to_vec();
    let r = run_streams(&cfg, &[UpdateStrategy::None, full()]).unwrap();
    for (a, b) in r[0].steps.iter().zip(&r[1].steps) {
        for (x, y) in a.budgets.iter().zip(&b.budgets) {
            assert!((x.recall - y.recall).abs() <= 0.02, "step {}: {} vs {}", a.step, x.recall, y.recall);
        }
    }
}

#[test]
fn full_keeps_up_with_a_trend() {
    let cfg = protocol(stream_cfg(1.0, 8, 11), UpdateStrategy::None);
    let r = run_streams(&cfg, &[UpdateStrategy::None, full()]).unwrap();
    for (a, b) in r[0].steps.iter().zip(&r[1].steps) {
        for (x, y) in a.budgets.iter().zip(&b.budgets) {
            assert!(y.recall >= x.recall - 0.005, "step {}: none {} full {}", a.step, x.recall, y.recall);
        }
    }
}

#[test]
fn lazy_updates_help_more_when_frequent() {
    let base = protocol(stream_cfg(1.0, 10, 12), lazy());
    let mean = |every: usize| {
        let r = run_stream(&ProtocolConfig { update_every: every, ..base.clone() }).unwrap();
        r.mean_recall()
    };
    let (often, rarely) = (mean(1), mean(6));
    for (a, b) in often.iter().zip(&rarely) {
        assert!(*b <= a + 0.005, "every 6: {b}, every 1: {a}");
    }
}
