//! Whole-pipeline checks on the toy problem.

use rarebound::bayes::{credible_bound, default_grid, CredibleConfig};
use rarebound::blackbox::{toy_distribution, toy_f, toy_objective};
use rarebound::campaign::{build_design, run_toy_study, toy_oracle_pi, CampaignConfig, StudyMethod};
use rarebound::kriging::GpModel;
use rarebound::mbis::CriticalRegion;
use rarebound::sampling::{blocks, derive_seed, rng, BLOCK};

fn toy_model(n: usize, seed: u64) -> GpModel {
    let cfg = CampaignConfig { anneal_iterations: 2000, ..CampaignConfig::default() };
    build_design(&toy_objective(n), &toy_distribution(), &cfg, n, seed).unwrap()
}

#[test]
fn failure_splits_over_region_and_complement() {
    let model = toy_model(50, 3);
    let region = CriticalRegion::new(&model, 0.01, 3.0);
    let dist = toy_distribution();
    let m = 2_000_000;
    let (mut inside, mut outside) = (0u64, 0u64);
    for (b, _, len) in blocks(m, BLOCK) {
        let xs = dist.sample_many(&mut rng(derive_seed(99, b as u64)), len);
        for (x, member) in xs.iter().zip(region.contains_block(&xs)) {
            if toy_f(x[0], x[1]) < 0.01 {
                if member {
                    inside += 1;
                } else {
                    outside += 1;
                }
            }
        }
    }
    let split = (inside + outside) as f64 / m as f64;
    let (direct, se) = toy_oracle_pi(0.01, m, 7).unwrap();
    let se = (se * se + split * (1.0 - split) / m as f64).sqrt();
    assert!((split - direct).abs() <= 4.0 * se, "{split} vs {direct}");
    // the region should catch nearly all of the failures at kappa = 3
    assert!(outside as f64 <= 0.05 * (inside + outside) as f64, "{inside} inside, {outside} outside");
}

#[test]
fn credible_bound_grows_with_level() {
    let model = toy_model(30, 4);
    let dist = toy_distribution();
    let grid = default_grid(&model, dist.domain(), 25, 5).unwrap();
    let mut prev = 0.0;
    let mut sample = None;
    for alpha in [0.5, 0.2, 0.05, 0.02, 0.0] {
        let cc = CredibleConfig { realizations: 100, m_int: 10_000, alpha, ..CredibleConfig::default() };
        let r = credible_bound(&model, &dist, &grid, 0.01, &cc, 6).unwrap();
        assert!(r.report.bound >= prev);
        prev = r.report.bound;
        let s = sample.get_or_insert_with(|| r.pi_sample.clone());
        assert_eq!(*s, r.pi_sample);
        assert!(r.pi_sample.iter().all(|p| (0.0..=1.0).contains(p)));
    }
}

#[test]
fn study_is_reproducible() {
    let cfg = CampaignConfig {
        anneal_iterations: 1000,
        m_region: 50_000,
        oracle_samples: 1_000_000,
        realizations: 100,
        m_int: 10_000,
        grid_points: 25,
        bayes_n: 30,
        ..CampaignConfig::default()
    };
    let methods = [StudyMethod::Mbis, StudyMethod::Bayes];
    let a = run_toy_study(&cfg, &methods, 2, 8).unwrap();
    let b = run_toy_study(&cfg, &methods, 2, 8).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), 4);
    for s in &a.summaries {
        assert!((0.0..=1.0).contains(&s.coverage));
        let nominal = match s.method {
            StudyMethod::Mbis => 1.0 - (cfg.alpha + cfg.beta),
            StudyMethod::Bayes => 1.0 - cfg.credible_alpha,
        };
        assert_eq!(s.nominal_level, nominal);
    }
}

#[test]
fn saved_model_predicts_identically() {
    let model = toy_model(20, 9);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    model.save_json(&path).unwrap();
    let back = GpModel::load_json(&path).unwrap();
    let xs = toy_distribution().sample_many(&mut rng(1), 200);
    assert_eq!(model.predict_many(&xs), back.predict_many(&xs));
}
