mod common;

use std::fs;

use common::{code, ok, ribforge, s, stderr, tiny_config, tree_crcs};
use ribforge_cli::error::{EXIT_CONFIG, EXIT_IO};

#[test]
fn gen_data_splits_six_two_two_and_reruns_identically() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&["gen-data", "--out", s(&a), "--n", "10", "--seed", "4"]);
    ok(&["gen-data", "--out", s(&b), "--n", "10", "--seed", "4"]);
    let idx: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("splits.json")).unwrap()).unwrap();
    let len = |k: &str| idx[k].as_array().unwrap().len();
    assert_eq!((len("train"), len("val"), len("test")), (6, 2, 2));
    assert_eq!(tree_crcs(&a), tree_crcs(&b));
    assert!(a.join("resolved-config.json").is_file());
}

#[test]
fn too_few_samples_is_a_config_error() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(code(&["gen-data", "--out", s(&t.path().join("d")), "--n", "2"]), EXIT_CONFIG);
}

#[test]
fn sdgan_without_guidance_weights_names_the_flag() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("d");
    ok(&["gen-data", "--out", s(&d), "--n", "5"]);
    let out = ribforge(&["train", "sdgan", "--data", s(&d), "--out", s(&t.path().join("g"))]);
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    assert!(stderr(&out).contains("--guidance-weights"), "{}", stderr(&out));
}

#[test]
fn missing_inputs_are_io_errors() {
    let t = tempfile::tempdir().unwrap();
    let missing = t.path().join("missing");
    assert_eq!(code(&["train", "guidance", "--data", s(&missing), "--out", s(&t.path().join("o"))]), EXIT_IO);
    assert_eq!(code(&["render", "--sample", s(&missing), "--out", s(&t.path().join("p.ppm"))]), EXIT_IO);
}

#[test]
fn unknown_config_keys_and_bad_thread_caps_are_config_errors() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("bad.json");
    fs::write(&cfg, r#"{"mtunet": {"train": {"epochz": 3}}}"#).unwrap();
    let out = ribforge(&["config", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    assert!(stderr(&out).contains("epochz"));
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_ribforge"))
        .arg("config")
        .env("RIBFORGE_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
}

#[test]
fn corrupted_sample_is_rejected() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("d");
    ok(&["gen-data", "--out", s(&d), "--n", "5"]);
    let img = d.join("train/s0000/image.pgm");
    let mut bytes = fs::read(&img).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xFF;
    fs::write(&img, bytes).unwrap();
    assert_eq!(code(&["eval", "--oracle", "--data", s(&d), "--split", "train", "--out", s(&t.path().join("e"))]), EXIT_IO);
}

#[test]
fn oracle_eval_is_all_ones() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("d");
    ok(&["gen-data", "--out", s(&d), "--n", "5"]);
    let e = t.path().join("e");
    ok(&["eval", "--oracle", "--data", s(&d), "--out", s(&e)]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(e.join("eval.json")).unwrap()).unwrap();
    for g in ["ribs", "lungs", "clavicles"] {
        assert_eq!(v["groups"][g]["miou"], 1.0);
        assert_eq!(v["groups"][g]["mdsc"], 1.0);
    }
    assert!(v["per_channel"].as_array().unwrap().len() == 16);
}

#[test]
fn render_writes_a_three_tile_ppm() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("d");
    ok(&["gen-data", "--out", s(&d), "--n", "5"]);
    let p = t.path().join("panel.ppm");
    ok(&["render", "--sample", s(&d.join("train/s0000")), "--out", s(&p)]);
    let bytes = fs::read(&p).unwrap();
    let header = b"P6\n192 64\n255\n";
    assert!(bytes.starts_with(header));
    assert_eq!(bytes.len(), header.len() + 192 * 64 * 3);
}

#[test]
fn full_config_echo_carries_the_full_preset() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("full.json");
    fs::write(&cfg, r#"{"preset": "full"}"#).unwrap();
    let out = ok(&["config", "--config", s(&cfg)]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["config"]["image_size"], 448);
    assert_eq!(v["config"]["preset"], "full");
}

#[test]
fn stages_chain_and_rerun_to_identical_trees() {
    let t = tempfile::tempdir().unwrap();
    let cfg = tiny_config(t.path());
    let d = t.path().join("d");
    ok(&["gen-data", "--out", s(&d), "--n", "6", "--seed", "2"]);
    let run = |tag: &str| {
        let root = t.path().join(tag);
        let (g, sd, sy, m, e) = (root.join("g"), root.join("sd"), root.join("sy"), root.join("m"), root.join("e"));
        let c = s(&cfg);
        ok(&["train", "guidance", "--data", s(&d), "--config", c, "--out", s(&g)]);
        let gw = g.join("guidance.weights");
        ok(&["train", "sdgan", "--data", s(&d), "--config", c, "--out", s(&sd), "--guidance-weights", s(&gw)]);
        let genw = sd.join("generator.weights");
        ok(&["synthesize", "--gen-weights", s(&genw), "--masks-from", s(&d), "--n", "4", "--seed", "9", "--out", s(&sy), "--config", c]);
        ok(&["train", "mtunet", "--data", s(&d), "--config", c, "--out", s(&m), "--synthetic-data", s(&sy)]);
        ok(&["eval", "--weights", s(&m.join("mtunet.weights")), "--data", s(&d), "--config", c, "--out", s(&e)]);
        root
    };
    let (a, b) = (run("a"), run("b"));
    assert_eq!(tree_crcs(&a), tree_crcs(&b));

    let digests: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("sd/guidance-digest.json")).unwrap()).unwrap();
    assert_eq!(digests["before"], digests["after"]);
    let manifests = fs::read_dir(a.join("sy/train")).unwrap().count();
    assert_eq!(manifests, 4);
    let m = fs::read_to_string(a.join("sy/train/s0000/manifest.json")).unwrap();
    assert!(m.contains("\"synthetic\""));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("g/report.json")).unwrap()).unwrap();
    let digest = format!("{:08x}", crc32fast::hash(&fs::read(a.join("g/guidance.weights")).unwrap()));
    assert_eq!(report["weight_digest"], digest.as_str());
    assert_eq!(report["losses"]["train_bce"].as_array().unwrap().len(), 2);
}

#[test]
fn module_ablation_writes_four_rows() {
    let t = tempfile::tempdir().unwrap();
    let cfg = tiny_config(t.path());
    let d = t.path().join("d");
    ok(&["gen-data", "--out", s(&d), "--n", "5", "--seed", "1"]);
    let g = t.path().join("g");
    ok(&["train", "guidance", "--data", s(&d), "--config", s(&cfg), "--out", s(&g)]);
    let sd = t.path().join("sd");
    let gw = g.join("guidance.weights");
    ok(&["train", "sdgan", "--data", s(&d), "--config", s(&cfg), "--out", s(&sd), "--guidance-weights", s(&gw)]);
    let out = t.path().join("abl");
    let genw = sd.join("generator.weights");
    ok(&["ablation", "--kind", "modules", "--data", s(&d), "--gen-weights", s(&genw), "--config", s(&cfg), "--out", s(&out)]);
    let rows: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("ablation.json")).unwrap()).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0]["label"], "baseline");
    assert_eq!(rows[0]["n_synthetic"], 0);
    assert_eq!(rows[0]["use_aspp"], false);
    assert_eq!(rows[3]["use_aspp"], true);
}
