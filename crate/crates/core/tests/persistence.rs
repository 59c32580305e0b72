use proreg::datagen::format::{self, FormatVersion};
use proreg::datagen::{generate, BiasSpec};
use proreg::harness::experiment::prepare_data;
use proreg::harness::{run_experiment, ExperimentConfig, Method};
use proreg::model::checkpoint::{config_hash, Checkpoint};
use proreg::model::init_ft;
use proreg::oracle::{build_oracle, OracleQuality, OracleSpec};
use proreg::Error;

fn small_spec(seed: u64) -> BiasSpec {
    BiasSpec { train_size: 120, id_test_size: 40, ood_test_size: 40, seed, ..BiasSpec::default() }
}

#[test]
fn dataset_file_round_trip_with_cache() {
    let dir = tempfile::tempdir().unwrap();
    let mut d = generate(&small_spec(5)).unwrap();
    let os = OracleSpec { quality: OracleQuality::Noisy { sigma: 0.3 }, temperature: Some(0.02), seed: 5 };
    build_oracle(&d.spec, &os).unwrap().cache_zero_shot_labels(&mut d, &os).unwrap();
    let path = dir.path().join("d.prds");
    format::save(&d, &path).unwrap();
    let (back, version) = format::load_with_version(&path).unwrap();
    assert_eq!(version, FormatVersion::V2);
    assert_eq!(back, d);
    assert_eq!(std::fs::read(&path).unwrap(), format::to_bytes(&back).unwrap());
}

#[test]
fn version_one_files_load_and_migrate() {
    let dir = tempfile::tempdir().unwrap();
    let d = generate(&small_spec(2)).unwrap();
    let old = dir.path().join("old.prds");
    format::save_as(&d, &old, FormatVersion::V1).unwrap();
    let (loaded, version) = format::load_with_version(&old).unwrap();
    assert_eq!(version, FormatVersion::V1);
    assert!(version.compatibility_note().is_some());
    assert_eq!(loaded, d);
    assert!(loaded.oracle.is_none() && !loaded.has_zero_shot_cache());

    // Running an experiment from the old file recomputes the cache.
    let mut cfg = ExperimentConfig::new(Method::ProReg { alpha: 2.0 });
    cfg.dataset = Some(old.clone());
    cfg.train.epochs = 1;
    let (migrated, _) = prepare_data(&cfg, 0).unwrap();
    assert!(migrated.has_zero_shot_cache());
    let new = dir.path().join("new.prds");
    format::save(&migrated, &new).unwrap();
    assert_eq!(format::load_with_version(&new).unwrap(), (migrated, FormatVersion::V2));

    // A cache cannot be written into the old layout.
    let mut cached = d.clone();
    let os = OracleSpec::default();
    build_oracle(&cached.spec, &os).unwrap().cache_zero_shot_labels(&mut cached, &os).unwrap();
    assert!(format::to_bytes_as(&cached, FormatVersion::V1).is_err());
}

#[test]
fn damaged_files_are_rejected_explicitly() {
    let d = generate(&small_spec(1)).unwrap();
    let bytes = format::to_bytes(&d).unwrap();
    for at in [0usize, 20, 60, bytes.len() - 1] {
        let mut bad = bytes.clone();
        bad[at] ^= 0x40;
        let err = format::from_bytes(&bad).unwrap_err();
        assert!(
            matches!(err, Error::ChecksumMismatch | Error::BadMagic { .. }),
            "byte {at}: {err}"
        );
    }
    assert!(matches!(format::from_bytes(&bytes[..bytes.len() / 2]), Err(Error::Truncated { .. })));
    assert!(matches!(format::from_bytes(&bytes[..10]), Err(Error::Truncated { .. })));
    let mut future = bytes.clone();
    future[4] = 9;
    assert!(matches!(format::from_bytes(&future), Err(Error::UnsupportedVersion { found: 9, .. })));
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ck = Checkpoint { model: init_ft(20, 5, 3, 0.01).unwrap(), config_hash: config_hash(&"x").unwrap() };
    let path = dir.path().join("m.ckpt");
    ck.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[70] ^= 1;
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::ChecksumMismatch)));
    assert!(matches!(Checkpoint::load(dir.path().join("missing.ckpt")), Err(Error::Io { .. })));
}

#[test]
fn experiment_writes_csv_and_loadable_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(Method::Kd { lambda: 0.5 });
    cfg.data = small_spec(0);
    cfg.train.epochs = 2;
    cfg.seeds = vec![4, 1];
    cfg.output = Some(dir.path().join("out/kd.csv"));
    let rows = run_experiment(&cfg).unwrap();
    assert_eq!(rows.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![1, 4]);
    let text = std::fs::read_to_string(dir.path().join("out/kd.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 + 2);
    for seed in [1, 4] {
        let ck = Checkpoint::load(dir.path().join(format!("out/kd-kd-lambda=0.5-seed{seed}.ckpt"))).unwrap();
        let seeded = ExperimentConfig { seeds: vec![seed], ..cfg.clone() };
        assert_eq!(ck.config_hash, config_hash(&seeded).unwrap());
        assert_eq!(ck.model.class_count(), 5);
    }
}
