use std::path::PathBuf;

use memgan_core::config::{ExperimentConfig, Precision};
use memgan_core::experiments::{load_dataset, run_training};
use memgan_core::gan::GanModel;

fn config() -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    ExperimentConfig::load(path).unwrap()
}

#[test]
fn shipped_subset_loads_unchanged() {
    let (train, test) = load_dataset(&config()).unwrap();
    assert_eq!((train.len(), test.len()), (6000, 4000));
    assert_eq!(train.dims, (1, 20, 20));
    assert_eq!(train.labels[..10], [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
    let mut counts = [0usize; 10];
    train.labels.iter().for_each(|&l| counts[l as usize] += 1);
    assert_eq!(counts, [600; 10]);
    assert_eq!(test.classes(), 10);
    for d in [&train, &test] {
        assert!(d.images.iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
    }
    let fold =
        |d: &memgan_core::dataset::Dataset| (0..d.len()).fold(0u64, |h, i| h.rotate_left(7) ^ d.image_checksum(i));
    assert_eq!(train.image_checksum(0), 0xf540_0147_1d4b_092f);
    assert_eq!(fold(&train), 0xa35c_807c_e3a9_e7f3);
    assert_eq!(fold(&test), 0xc99e_6c02_949a_9f81);
}

fn short_run(precision: Precision, seed: u64, iterations: usize) -> (Vec<u8>, Vec<memgan_core::gan::StepLog>) {
    let mut cfg = config();
    cfg.seed = seed;
    cfg.iterations = iterations;
    let (train, _) = load_dataset(&cfg).unwrap();
    let run = run_training(&cfg, precision, &train.take(640)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.mgck");
    run.model.save(&path).unwrap();
    (std::fs::read(path).unwrap(), run.log)
}

#[test]
fn training_is_reproducible() {
    let (ckpt_a, log_a) = short_run(Precision::Fixed(8), 7, 4);
    let (ckpt_b, log_b) = short_run(Precision::Fixed(8), 7, 4);
    assert_eq!(log_a, log_b);
    assert_eq!(ckpt_a, ckpt_b);
    let (ckpt_c, _) = short_run(Precision::Fixed(8), 8, 4);
    assert_ne!(ckpt_a, ckpt_c);
}

#[test]
fn checkpoint_resumes_bit_identically() {
    let mut cfg = config();
    cfg.iterations = 3;
    let (train, _) = load_dataset(&cfg).unwrap();
    let run = run_training(&cfg, Precision::Fixed(8), &train.take(640)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.mgck");
    run.model.save(&path).unwrap();
    let back = GanModel::load(&path).unwrap();
    assert_eq!(back.state_inventory(), run.model.state_inventory());
    let real: Vec<_> = train.images[..back.batch()].to_vec();
    let mut r = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
    let z = back.sample_noise(back.batch(), &mut r);
    assert_eq!(
        back.objectives(&real, &z).unwrap(),
        run.model.objectives(&real, &z).unwrap()
    );
}

#[test]
fn only_crossbars_and_scalars_survive_an_iteration() {
    let mut cfg = config();
    cfg.iterations = 2;
    let (train, _) = load_dataset(&cfg).unwrap();
    let run = run_training(&cfg, Precision::Fixed(8), &train.take(640)).unwrap();
    let fresh = GanModel::from_preset(cfg.model.clone(), cfg.device_config(Precision::Fixed(8)), cfg.seed).unwrap();
    let inv = run.model.state_inventory();
    assert_eq!(inv.pending_traces, 0);
    assert_eq!(inv.trace_values, 0);
    assert_eq!(inv.crossbars, fresh.state_inventory().crossbars);
    let names: Vec<&str> = inv.scalars.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["alpha", "batch", "iteration"]);
    assert_eq!(inv.scalars[2].1, 2.0);
}

#[test]
fn float_training_raises_the_discriminator_objective() {
    let (_, log) = short_run(Precision::Float, 1, 30);
    let first = log[0].objective_d;
    let tail: f64 = log[20..].iter().map(|s| s.objective_d).sum::<f64>() / 10.0;
    assert!(tail > first, "V_D {first} -> {tail}");
    assert!(log
        .iter()
        .all(|s| s.objective_d.is_finite() && s.objective_g.is_finite()));
}
