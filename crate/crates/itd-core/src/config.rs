//! Run configuration: one flat key-value document (TOML on disk) with
//! strict parsing. Unknown keys are rejected; every numeric field is range
//! checked with a field-path message. The resolved config is embedded in
//! every results file.

use crate::harness::DecodeParams;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub master_seed: u64,

    // Task suite.
    pub task_count: usize,
    /// Observations per induction batch.
    pub n: usize,
    pub batches: usize,
    /// Held-out pairs per task.
    pub m_de: usize,
    pub depth_cap: usize,

    // Data generation.
    pub per_batch_hypotheses: usize,
    pub pairs_per_f: usize,
    pub epsilon: f64,
    pub consistency_min: usize,
    pub budget: usize,
    pub input_min_len: usize,
    pub input_max_len: usize,

    // Scorer.
    pub order: usize,
    pub lambda: f64,
    /// Context encoder: "full" or "flags-only".
    pub encoder: String,
    /// Grammar draws used to fit the base (untuned) model's prior.
    pub base_prior_samples: usize,
    /// Drop duplicate (x, y, f) records before training.
    pub dedup_corpus: bool,

    // Decoding.
    pub beam_width: usize,
    pub temperature: f64,
    pub top_p: f64,
    /// Sample/candidate count for SC and HS.
    pub k: usize,
    pub l_max: usize,
    pub io_group_size: usize,

    // Sweep grids.
    pub sweep_methods: Vec<String>,
    pub sweep_n: Vec<usize>,
    pub sweep_epsilon: Vec<f64>,
    pub seeds: u64,

    /// Worker threads for parallel stages (0 = all cores).
    pub workers: usize,

    // Stage artifact paths.
    pub tasks_path: String,
    pub corpus_path: String,
    pub model_gd_path: String,
    pub model_io_path: String,
    pub summary_path: String,
    pub detail_path: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            master_seed: 42,
            task_count: 50,
            n: 5,
            batches: 3,
            m_de: 17,
            depth_cap: 2,
            per_batch_hypotheses: 5,
            pairs_per_f: 5,
            epsilon: 0.2,
            consistency_min: 1,
            budget: 50,
            input_min_len: 0,
            input_max_len: 10,
            order: 3,
            lambda: 0.1,
            encoder: "full".into(),
            base_prior_samples: 500,
            dedup_corpus: false,
            beam_width: 5,
            temperature: 0.3,
            top_p: 0.95,
            k: 5,
            l_max: 16,
            io_group_size: 5,
            sweep_methods: vec![
                "io".into(),
                "sc".into(),
                "hs".into(),
                "itd-io".into(),
                "itd".into(),
            ],
            sweep_n: vec![2, 5, 8, 20],
            sweep_epsilon: vec![0.0, 0.2, 0.4],
            seeds: 3,
            workers: 0,
            tasks_path: "out/tasks.jsonl".into(),
            corpus_path: "out/corpus.jsonl".into(),
            model_gd_path: "out/model_gd.json".into(),
            model_io_path: "out/model_io.json".into(),
            summary_path: "out/summary.json".into(),
            detail_path: "out/detail.jsonl".into(),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("config field {field}: {msg}")]
pub struct ConfigError {
    pub field: &'static str,
    pub msg: String,
}

fn check(cond: bool, field: &'static str, msg: impl Into<String>) -> Result<(), ConfigError> {
    if cond {
        Ok(())
    } else {
        Err(ConfigError {
            field,
            msg: msg.into(),
        })
    }
}

impl RunConfig {
    pub fn default_config() -> Self {
        Self::default()
    }

    /// Parse a TOML document; unknown keys are rejected.
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| ConfigError {
            field: "(document)",
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        check(self.task_count >= 1, "task_count", "must be at least 1")?;
        check(self.n >= 1, "n", "must be at least 1")?;
        check(self.batches >= 1, "batches", "must be at least 1")?;
        check(self.m_de >= 1, "m_de", "must be at least 1")?;
        check(
            (1..=crate::dsl::MAX_DEPTH).contains(&self.depth_cap),
            "depth_cap",
            format!("must be in 1..={}", crate::dsl::MAX_DEPTH),
        )?;
        check(
            self.per_batch_hypotheses >= 1,
            "per_batch_hypotheses",
            "must be at least 1",
        )?;
        check(self.pairs_per_f >= 1, "pairs_per_f", "must be at least 1")?;
        check(
            (0.0..=1.0).contains(&self.epsilon),
            "epsilon",
            "must be in 0..=1",
        )?;
        check(
            self.consistency_min <= self.n,
            "consistency_min",
            "must not exceed n",
        )?;
        check(
            self.budget >= self.per_batch_hypotheses,
            "budget",
            "must be at least per_batch_hypotheses",
        )?;
        check(
            self.input_min_len <= self.input_max_len,
            "input_min_len",
            "must not exceed input_max_len",
        )?;
        check(
            self.input_max_len <= crate::dsl::MAX_LEN,
            "input_max_len",
            format!("must be at most {}", crate::dsl::MAX_LEN),
        )?;
        check(self.order >= 2, "order", "must be at least 2")?;
        check(self.lambda > 0.0, "lambda", "must be positive")?;
        check(
            self.encoder.parse::<crate::scorer::Encoder>().is_ok(),
            "encoder",
            format!("unknown encoder {:?}", self.encoder),
        )?;
        check(
            self.base_prior_samples >= 1,
            "base_prior_samples",
            "must be at least 1",
        )?;
        check(self.beam_width >= 1, "beam_width", "must be at least 1")?;
        check(self.temperature > 0.0, "temperature", "must be positive")?;
        check(
            self.top_p > 0.0 && self.top_p <= 1.0,
            "top_p",
            "must be in (0, 1]",
        )?;
        check(self.k >= 1, "k", "must be at least 1")?;
        check(self.l_max >= 2, "l_max", "must be at least 2")?;
        check(self.io_group_size >= 1, "io_group_size", "must be at least 1")?;
        check(!self.sweep_methods.is_empty(), "sweep_methods", "must be nonempty")?;
        for m in &self.sweep_methods {
            check(
                m.parse::<crate::harness::Method>().is_ok(),
                "sweep_methods",
                format!("unknown method {m:?}"),
            )?;
        }
        check(!self.sweep_n.is_empty(), "sweep_n", "must be nonempty")?;
        for &n in &self.sweep_n {
            check(n >= 1, "sweep_n", "entries must be at least 1")?;
        }
        for &e in &self.sweep_epsilon {
            check(
                (0.0..=1.0).contains(&e),
                "sweep_epsilon",
                "entries must be in 0..=1",
            )?;
        }
        check(!self.sweep_epsilon.is_empty(), "sweep_epsilon", "must be nonempty")?;
        check(self.seeds >= 1, "seeds", "must be at least 1")?;
        Ok(())
    }

    pub fn decode_params(&self) -> DecodeParams {
        DecodeParams {
            beam_width: self.beam_width,
            l_max: self.l_max,
            k: self.k,
            temperature: self.temperature,
            top_p: self.top_p,
            encoder: self.encoder.parse().expect("config validated"),
        }
    }

    pub fn with_task_count(mut self, count: usize) -> Self {
        self.task_count = count;
        self
    }
}
