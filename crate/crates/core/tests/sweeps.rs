use std::sync::OnceLock;

use airdecode::diagnostics::{
    data_volume_sweep, omega_sweep, subsample, write_gnuplot, write_jsonl, write_sweep_csv,
    SweepSettings,
};
use airdecode::toy::{ToyCorpus, ToyCorpusConfig, PROMPTS};
use airdecode::*;

struct Fixture {
    corpus: ToyCorpus,
    ensemble: AttributeEnsemble,
    eval: NGramModel,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let cfg = ToyCorpusConfig {
            docs_per_class: 400,
            ..Default::default()
        };
        let corpus = ToyCorpus::generate(&cfg);
        let held = ToyCorpus::generate(&ToyCorpusConfig { seed: 99, ..cfg });
        let ensemble =
            AttributeEnsemble::build(&corpus.labeled(), None, &EnsembleConfig::with_order(3)).unwrap();
        let eval = NGramModel::train_texts(
            &held.all_docs(),
            &TokenizerConfig::default(),
            3,
            Smoothing::for_order(3),
        )
        .unwrap();
        Fixture { corpus, ensemble, eval }
    })
}

fn settings(omegas: Vec<f64>, samples: usize, jobs: usize) -> SweepSettings {
    let mut preset = AttributePreset::named("sentiment").unwrap();
    preset.length = 20;
    SweepSettings {
        prompts: PROMPTS.iter().map(|s| s.to_string()).collect(),
        targets: vec!["positive".into(), "negative".into()],
        omegas,
        modes: CompositionMode::ALL.to_vec(),
        samples_per_point: samples,
        preset,
        overlap_k: 20,
        seed: 13,
        jobs,
    }
}

#[test]
fn default_grid_has_sixteen_rows() {
    let f = fixture();
    let omegas: Vec<f64> = (0..8).map(|i| i as f64 * 20.0).collect();
    let report = omega_sweep(&f.ensemble, &f.eval, &settings(omegas, 2, 0)).unwrap();
    assert_eq!(report.rows.len(), 16);
    assert!(report.failures.is_empty());
    for r in &report.rows {
        for x in [r.acc, r.dist1, r.dist2, r.dist3, r.r_or, r.r_oa, r.r_ora] {
            assert!((0.0..=1.0).contains(&x));
        }
        assert!(r.ppl >= 1.0 && r.ppl.is_finite());
        assert!(r.r_ora <= r.r_or.min(r.r_oa));
    }
    for m in CompositionMode::ALL {
        assert_eq!(report.row(0.0, m).unwrap().r_or, 1.0);
    }
}

#[test]
fn sweep_outputs_are_reproducible() {
    let f = fixture();
    let run = |jobs| {
        let report = omega_sweep(&f.ensemble, &f.eval, &settings(vec![0.0, 80.0], 4, jobs)).unwrap();
        let mut csv = Vec::new();
        write_sweep_csv(&report.rows, &mut csv).unwrap();
        let mut jsonl = Vec::new();
        write_jsonl(&report.rows, &mut jsonl).unwrap();
        (report, csv, jsonl)
    };
    let (a, csv_a, json_a) = run(1);
    let (b, csv_b, json_b) = run(2);
    assert_eq!(a, b);
    assert_eq!(csv_a, csv_b);
    assert_eq!(json_a, json_b);
    let text = String::from_utf8(csv_a).unwrap();
    assert!(text.starts_with("omega,mode,acc,ppl,dist1,dist2,dist3,r_or,r_oa,r_ora\n"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn gnuplot_blocks_per_mode() {
    let f = fixture();
    let report = omega_sweep(&f.ensemble, &f.eval, &settings(vec![0.0, 40.0], 2, 1)).unwrap();
    let mut out = Vec::new();
    write_gnuplot(&report.rows, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.matches("\n\n\n").count(), 1, "{text}");
    let data_lines = text.lines().filter(|l| !l.is_empty() && !l.starts_with('#')).count();
    assert_eq!(data_lines, 4);
}

#[test]
fn full_volume_reproduces_standard_sweep() {
    let f = fixture();
    let s = settings(vec![140.0], 4, 1);
    let standard = omega_sweep(&f.ensemble, &f.eval, &s).unwrap();
    let (rows, failures) = data_volume_sweep(
        &f.corpus.labeled(),
        None,
        &[400],
        &EnsembleConfig::with_order(3),
        &f.eval,
        &s,
    )
    .unwrap();
    assert!(failures.is_empty());
    let rows: Vec<_> = rows.into_iter().map(|r| r.row).collect();
    assert_eq!(rows, standard.rows);
}

#[test]
fn volume_larger_than_corpus_is_rejected() {
    let f = fixture();
    assert!(subsample(&f.corpus.positive, 401, 0).is_err());
    let err = data_volume_sweep(
        &f.corpus.labeled(),
        None,
        &[10_000],
        &EnsembleConfig::with_order(3),
        &f.eval,
        &settings(vec![0.0], 1, 1),
    );
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn subsample_is_seeded() {
    let f = fixture();
    let a = subsample(&f.corpus.positive, 50, 1).unwrap();
    assert_eq!(a, subsample(&f.corpus.positive, 50, 1).unwrap());
    assert_ne!(a, subsample(&f.corpus.positive, 50, 2).unwrap());
}

#[test]
fn invalid_settings_fail_fast() {
    let f = fixture();
    let mut s = settings(vec![], 1, 1);
    assert!(omega_sweep(&f.ensemble, &f.eval, &s).is_err());
    s.omegas = vec![0.0];
    s.targets = vec!["neutral".into()];
    assert!(matches!(
        omega_sweep(&f.ensemble, &f.eval, &s),
        Err(Error::UnknownLabel(_))
    ));
}
