//! In-memory datasets, batching and the split directory layout.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use ribforge_core::{derive_seed, seeded, Tensor};
use ribforge_data::io::{read_split, write_split};
use ribforge_data::{generate_phantom, split_dataset, PhantomConfig, Sample};

use crate::error::{PipelineError, Result};

pub const SPLITS_FILE: &str = "splits.json";
pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitIndex {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplits {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn parts(&self) -> [&Vec<Sample>; 3] {
        [&self.train, &self.val, &self.test]
    }
}

/// `n` phantoms with per-sample seeds derived from `seed`, split 6:2:2.
pub fn generate_dataset(n: usize, seed: u64, phantom: &PhantomConfig) -> Result<DatasetSplits> {
    let samples = (0..n)
        .map(|i| generate_phantom(derive_seed(seed, &format!("sample.{i}")), phantom))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let (train, val, test) = split_dataset(samples, seed)?;
    Ok(DatasetSplits { train, val, test })
}

/// Writes `<root>/{train,val,test}/<id>/…` and `<root>/splits.json`.
pub fn write_dataset(splits: &DatasetSplits, root: &Path, seed: u64) -> Result<SplitIndex> {
    let mut ids = Vec::with_capacity(3);
    for (name, part) in SPLIT_NAMES.iter().zip(splits.parts()) {
        ids.push(write_split(part, &root.join(name), "s")?);
    }
    let [train, val, test]: [Vec<String>; 3] = ids.try_into().expect("three splits");
    let index = SplitIndex { seed, train, val, test };
    let path = root.join(SPLITS_FILE);
    let text = serde_json::to_string_pretty(&index).expect("split index serialises");
    fs::write(&path, text + "\n").map_err(|source| PipelineError::Io { path, source })?;
    Ok(index)
}

/// Reads whichever split directories exist under `root`.
pub fn read_dataset(root: &Path) -> Result<DatasetSplits> {
    if !root.is_dir() {
        return Err(PipelineError::Io {
            path: root.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        });
    }
    let mut out = DatasetSplits::default();
    for (name, part) in SPLIT_NAMES.iter().zip([&mut out.train, &mut out.val, &mut out.test]) {
        let dir = root.join(name);
        if dir.is_dir() {
            *part = read_split(&dir)?;
        }
    }
    Ok(out)
}

/// Images `[N,1,H,W]` and stacked masks `[N,C,H,W]` of a batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub masks: Tensor<f32>,
}

pub fn collate(samples: &[&Sample]) -> Result<Batch> {
    if samples.is_empty() {
        return Err(PipelineError::Invalid("empty batch".into()));
    }
    let images: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.image).collect();
    let stacks: Vec<Tensor<f32>> = samples.iter().map(|s| s.masks.stacked()).collect();
    let stack_refs: Vec<&Tensor<f32>> = stacks.iter().collect();
    Ok(Batch { images: Tensor::stack(&images)?, masks: Tensor::stack(&stack_refs)? })
}

/// Visiting order of epoch `epoch`: a permutation keyed by `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(derive_seed(seed, &format!("epoch.{epoch}"))));
    order
}
