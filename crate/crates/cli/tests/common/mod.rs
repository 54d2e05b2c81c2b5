#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn ribforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ribforge"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) -> Output {
    let out = ribforge(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

pub fn code(args: &[&str]) -> i32 {
    ribforge(args).status.code().expect("exit code")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// CRC32 of every file under `root` keyed by relative path, leaving out
/// wall-clock timing files.
pub fn tree_crcs(root: &Path) -> BTreeMap<PathBuf, u32> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, u32>) {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if p.file_name().unwrap() != "timing.json" {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), crc32fast::hash(&fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// A run config with every stage cut to one or two epochs.
pub fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.json");
    let doc = serde_json::json!({
        "seed": 5,
        "guidance": { "train": { "epochs": 2, "schedule": { "kind": "linear_to_zero", "total_epochs": 2 } } },
        "sdgan": { "train": { "epochs": 1, "schedule": { "kind": "constant_then_linear", "n_const": 1, "n_decay": 0 } } },
        "mtunet": { "train": { "epochs": 1 } },
        "ablation": { "multipliers": [0, 1], "module_multiplier": 1 }
    });
    fs::write(&path, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    path
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
