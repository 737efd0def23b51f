use varcross_core::specificity::{specificity_analysis, RidgeOptions};
use varcross_core::synth::{
    generate, generate_battery, generate_fingerprints, BatteryConfig, FingerprintSpec, GeneratorConfig,
};

#[test]
fn same_seed_same_data() {
    let cfg = GeneratorConfig::new(50, 4, 3, [1.0, 0.25, 0.5, 1.0], 12);
    let (a, ta) = generate(&cfg).unwrap();
    let (b, tb) = generate(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta.to_json().unwrap(), tb.to_json().unwrap());
    let (c, _) = generate(&GeneratorConfig::new(50, 4, 3, [1.0, 0.25, 0.5, 1.0], 13)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn missingness_deletes_whole_cells() {
    let mut cfg = GeneratorConfig::new(400, 5, 3, [1.0, 0.25, 0.5, 1.0], 1);
    cfg.missing_rate = 0.1;
    let (data, truth) = generate(&cfg).unwrap();
    assert_eq!(truth.n_cells + truth.deleted_cells, 2000);
    assert_eq!(data.n_obs(), truth.n_cells * 3);
    let share = truth.deleted_cells as f64 / 2000.0;
    assert!((share - 0.1).abs() < 0.03, "{share}");
}

#[test]
fn realized_proportions_track_the_configuration() {
    let (_, truth) = generate(&GeneratorConfig::new(5000, 10, 2, [1.0, 0.25, 0.5, 1.0], 4)).unwrap();
    let p = truth.realized_proportions;
    let sum = p.tau + p.beta + p.iota + p.residual;
    assert!((sum - 1.0).abs() < 1e-12);
    assert!((p.tau - 1.0 / 2.75).abs() < 0.03);
    assert!((p.iota - 0.5 / 2.75).abs() < 0.03);
}

#[test]
fn invalid_configurations_are_rejected() {
    assert!(generate(&GeneratorConfig::new(1, 3, 2, [1.0; 4], 0)).is_err());
    assert!(generate(&GeneratorConfig::new(5, 3, 0, [1.0; 4], 0)).is_err());
    assert!(generate(&GeneratorConfig::new(5, 3, 2, [-1.0, 1.0, 1.0, 1.0], 0)).is_err());
    let mut cfg = GeneratorConfig::new(5, 3, 2, [1.0; 4], 0);
    cfg.missing_rate = 1.5;
    assert!(generate(&cfg).is_err());
}

#[test]
fn purely_model_specific_fingerprints_do_not_transfer() {
    let mut cfg = GeneratorConfig::new(200, 3, 1, [1.0; 4], 8);
    cfg.fingerprint = Some(FingerprintSpec::new(0.0, 1.0));
    let set = generate_fingerprints(&cfg, 6).unwrap();
    let res = specificity_analysis::<f64>(&set.scores(), &RidgeOptions::default()).unwrap();
    for r in &res {
        for n in &r.per_norm {
            assert!(n.within_r2 > 0.5, "{} {}: {}", r.model, n.norm, n.within_r2);
            for c in n.cross_r2.values() {
                assert!(c.abs() < 0.1, "{} {}: cross {c}", r.model, n.norm);
            }
        }
    }
}

#[test]
fn battery_has_one_dataset_per_norm() {
    let norms = ["visual", "arousal", "humor"].map(String::from).to_vec();
    let b = generate_battery(&BatteryConfig::new(40, 3, 2, norms, 5)).unwrap();
    assert_eq!(b.datasets.len(), 3);
    assert_eq!(b.human.len(), 3);
    assert_eq!(b.deterministic[0].len(), 40 * 3);
    assert_eq!(b.datasets[1].norm(), "arousal");
    assert_eq!(b.datasets[0].n_obs(), 40 * 3 * 2);
}
