//! Synthetic-volume and module ablations over shared seeds.

use std::collections::BTreeMap;

use ribforge_core::{derive_seed, EvalTable};
use ribforge_data::{MaskSet, Sample};
use ribforge_models::ModelWeights;

use crate::config::PipelineConfig;
use crate::dataset::DatasetSplits;
use crate::error::{PipelineError, Result};
use crate::eval::{evaluate_model, EvalRow};
use crate::mtunet::train_mtunet;
use crate::synthesis::synthesize_pairs;

/// Runs MTUNet trainings for ablation rows and memoises them by
/// `(n_synthetic, use_aspp)`, so rows shared between the two ablations train
/// once.
pub struct AblationRunner<'a> {
    data: &'a DatasetSplits,
    generator: Option<&'a ModelWeights>,
    cfg: PipelineConfig,
    synthetic: Vec<Sample>,
    cache: BTreeMap<(usize, bool), EvalTable>,
}

impl<'a> AblationRunner<'a> {
    pub fn new(data: &'a DatasetSplits, generator: Option<&'a ModelWeights>, cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        if data.train.is_empty() || data.test.is_empty() {
            return Err(PipelineError::Invalid("ablations need non-empty train and test splits".into()));
        }
        Ok(AblationRunner { data, generator, cfg: cfg.clone(), synthetic: Vec::new(), cache: BTreeMap::new() })
    }

    fn synthesis_seed(&self) -> u64 {
        derive_seed(self.cfg.mtunet.train.seed, "ablation.synthesis")
    }

    /// The first `n` synthetic pairs. Pairs are a prefix-stable sequence, so
    /// smaller rows see a subset of larger ones.
    fn synthetic(&mut self, n: usize) -> Result<&[Sample]> {
        if n > self.synthetic.len() {
            let gen = self
                .generator
                .ok_or_else(|| PipelineError::Invalid("rows with synthetic data need generator weights".into()))?;
            let sources: Vec<MaskSet> = self.data.train.iter().map(|s| s.masks.clone()).collect();
            self.synthetic = synthesize_pairs(gen, &sources, n, self.synthesis_seed(), &self.cfg)?;
        }
        Ok(&self.synthetic[..n])
    }

    pub fn row(&mut self, label: &str, n_synthetic: usize, use_aspp: bool) -> Result<EvalRow> {
        let key = (n_synthetic, use_aspp);
        if !self.cache.contains_key(&key) {
            let mut cfg = self.cfg.clone();
            cfg.mtunet.model.use_aspp = use_aspp;
            let synthetic = if n_synthetic == 0 { Vec::new() } else { self.synthetic(n_synthetic)?.to_vec() };
            let (weights, _) = train_mtunet(&self.data.train, &synthetic, &self.data.val, &cfg)?;
            let table = evaluate_model(&weights, &cfg.mtunet.model, &self.data.test)?;
            self.cache.insert(key, table);
        }
        Ok(EvalRow {
            label: label.to_string(),
            n_real: self.data.train.len(),
            n_synthetic,
            use_aspp,
            eval: self.cache[&key].clone(),
        })
    }

    /// One row per multiplier `m`, trained on real plus `m·|real|` synthetic
    /// pairs.
    pub fn volume(&mut self, multipliers: &[usize]) -> Result<Vec<EvalRow>> {
        if multipliers.is_empty() {
            return Err(PipelineError::Invalid("multipliers must not be empty".into()));
        }
        let n = self.data.train.len();
        let aspp = self.cfg.mtunet.model.use_aspp;
        multipliers.iter().map(|&m| self.row(&format!("real+{m}x"), m * n, aspp)).collect()
    }

    /// Baseline, +SD-GAN, +ASPP and both, in that order.
    pub fn modules(&mut self) -> Result<Vec<EvalRow>> {
        let n = self.cfg.ablation.module_multiplier * self.data.train.len();
        [("baseline", false, false), ("+sdgan", true, false), ("+aspp", false, true), ("+sdgan+aspp", true, true)]
            .into_iter()
            .map(|(label, sdgan, aspp)| self.row(label, if sdgan { n } else { 0 }, aspp))
            .collect()
    }
}

pub fn ablation_synthetic_volume(data: &DatasetSplits, gen: &ModelWeights, multipliers: &[usize], cfg: &PipelineConfig) -> Result<Vec<EvalRow>> {
    AblationRunner::new(data, Some(gen), cfg)?.volume(multipliers)
}

pub fn ablation_modules(data: &DatasetSplits, gen: &ModelWeights, cfg: &PipelineConfig) -> Result<Vec<EvalRow>> {
    AblationRunner::new(data, Some(gen), cfg)?.modules()
}
