mod common;

use common::small_config;
use plab::harness::{run_iterated_training_with, MetricLog, MetricSink, Tee};
use plab::io::{
    checkpoint_from_str, checkpoint_to_string, config_to_string, load_checkpoint, parse_config, save_checkpoint,
    spec_hash, Checkpoint, MetricFiles, CSV_HEADER, CSV_NAME, JSONL_NAME,
};
use plab::nn::{ActivationKind, Network, NetworkSpec, NormPlacement};
use plab::optim::{OptimizerConfig, OptimizerState};
use plab::Error;
use serde_json::{json, Value};

fn stationary() -> String {
    small_config(json!({"kind": "stationary"}), 20, 1)
}

fn edit(f: impl FnOnce(&mut Value)) -> String {
    let mut v: Value = serde_json::from_str(&stationary()).unwrap();
    f(&mut v);
    v.to_string()
}

#[test]
fn config_round_trips() {
    let parsed = parse_config(&stationary()).unwrap();
    let again = parse_config(&config_to_string(&parsed.value).unwrap()).unwrap();
    assert_eq!(parsed.value, again.value);
    assert!(again.defaults_applied.is_empty(), "{:?}", again.defaults_applied);
    assert!(parsed.defaults_applied.iter().any(|p| p == "reset"), "{:?}", parsed.defaults_applied);
}

fn config_error(text: &str) -> (String, String) {
    match parse_config(text) {
        Err(Error::Config { path, message }) => (path, message),
        other => panic!("expected a config error, got {:?}", other.map(|p| p.value)),
    }
}

#[test]
fn unknown_and_missing_keys_are_named() {
    let (path, message) = config_error(&edit(|v| v["optimizer"]["learning_rate"] = json!(0.1)));
    assert_eq!(path, "optimizer.learning_rate");
    assert!(message.contains("learning_rate"), "{message}");
    let (_, message) = config_error(&edit(|v| {
        v.as_object_mut().unwrap().remove("task");
    }));
    assert!(message.contains("task"), "{message}");
    let (path, _) = config_error(&edit(|v| v["data"]["bogus"] = json!(1)));
    assert!(path.starts_with("data"), "{path}");
}

#[test]
fn out_of_range_values_are_rejected_with_paths() {
    let cases: Vec<(Box<dyn Fn(&mut Value)>, &str)> = vec![
        (Box::new(|v| v["task"]["mode"] = json!({"kind": "random_labels", "epsilon": 1.5})), "task.mode"),
        (Box::new(|v| v["optimizer"]["lr"] = json!(-1.0)), "optimizer"),
        (Box::new(|v| v["cadence"] = json!(0)), "cadence"),
        (Box::new(|v| v["batch_size"] = json!(0)), "batch_size"),
        (Box::new(|v| v["version"] = json!(2)), "version"),
        (Box::new(|v| v["task"]["budget"] = json!(7)), "task.budget"),
        (Box::new(|v| v["loss"] = json!({"kind": "xent", "smoothing": 1.0})), "loss"),
    ];
    for (f, want) in cases {
        let (path, message) = config_error(&edit(f));
        assert_eq!(path, want, "{message}");
    }
}

#[test]
fn syntax_errors_report_offsets() {
    let text = "{\n  \"version\": 1,\n  \"network\": ]";
    match parse_config(text) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, text.len()),
        other => panic!("{:?}", other.map(|p| p.value)),
    }
}

fn checkpoint() -> Checkpoint {
    let spec = NetworkSpec::mlp(5, &[7, 6], 3, ActivationKind::Tanh, NormPlacement::Both);
    let mut network = Network::init(&spec, 11).unwrap();
    let mut opt = OptimizerState::new(OptimizerConfig::adam(1e-3), network.params());
    let x = common::random_matrix(9, 5, 2);
    for _ in 0..3 {
        let (out, trace) = network.forward_train(&x).unwrap();
        let g = network.backward(&trace, &out).unwrap().params;
        opt.apply(network.params_mut(), &g).unwrap();
    }
    Checkpoint {
        network,
        optimizer: Some(opt),
        seed: 42,
        step: 3,
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let ck = checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    save_checkpoint(&path, &ck).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
    assert_eq!(bits(loaded.network.flat_params()), bits(ck.network.flat_params()));
    assert_eq!(loaded.network.buffers(), ck.network.buffers());
    assert_eq!(loaded.optimizer, ck.optimizer);
    assert_eq!((loaded.seed, loaded.step), (42, 3));
    let path2 = dir.path().join("ck2.json");
    save_checkpoint(&path2, &loaded).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    loaded.check_spec(ck.network.spec()).unwrap();
}

#[test]
fn checkpoint_corruption_is_detected() {
    let text = checkpoint_to_string(&checkpoint()).unwrap();
    let hash = spec_hash(checkpoint().network.spec());
    let tampered = text.replace(&hash, &"0".repeat(64));
    assert!(matches!(checkpoint_from_str(&tampered), Err(Error::Checkpoint(m)) if m.contains("hash")));

    let cut = &text[..text.len() / 2];
    match checkpoint_from_str(cut) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, cut.len()),
        other => panic!("{:?}", other.map(|c| c.step)),
    }
    let versioned = text.replacen("\"version\":1", "\"version\":9", 1);
    assert!(matches!(checkpoint_from_str(&versioned), Err(Error::Checkpoint(m)) if m.contains("version")));

    let other = NetworkSpec::mlp(5, &[7], 3, ActivationKind::Tanh, NormPlacement::None);
    assert!(checkpoint().check_spec(&other).is_err());
}

#[test]
fn metric_files_mirror_the_log() {
    let config = parse_config(&small_config(json!({"kind": "permute_pixels"}), 15, 3)).unwrap().value;
    let dir = tempfile::tempdir().unwrap();
    let mut log = MetricLog::default();
    {
        let mut files = MetricFiles::create(dir.path(), false).unwrap();
        run_iterated_training_with(&config, 0, dir.path(), &mut Tee(&mut files, &mut log)).unwrap();
        files.flush().unwrap();
    }
    let csv = std::fs::read_to_string(dir.path().join(CSV_NAME)).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    assert_eq!(CSV_HEADER, "step,task,loss,accuracy,dead_frac,zombie_frac,param_norm,entropy");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), log.records.len());
    for (row, rec) in rows.iter().zip(&log.records) {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 8);
        assert_eq!(fields[0].parse::<u64>().unwrap(), rec.step);
        assert_eq!(fields[2].parse::<f64>().unwrap(), rec.loss);
    }
    let jsonl = std::fs::read_to_string(dir.path().join(JSONL_NAME)).unwrap();
    let values: Vec<Value> = jsonl.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(values.len(), log.records.len() + log.heavy.len());
    assert!(values.iter().all(|v| v["step"].is_u64() && v["kind"].is_string()));

    assert!(matches!(MetricFiles::create(dir.path(), false), Err(Error::Exists(_))));
    assert_eq!(std::fs::read_to_string(dir.path().join(CSV_NAME)).unwrap(), csv);
    MetricFiles::create(dir.path(), true).unwrap();
}
