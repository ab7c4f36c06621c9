//! Evaluation protocol: task generation and splits, the induction methods
//! (IO, SC, HS, and the trained IO/grouped decoders), execution-accuracy
//! scoring against the held-out split, and the sweep over sample counts and
//! deductor strength.
//!
//! Every method on a given (task, batch) sees the identical observations
//! and the identical interpreter, and all randomness derives from the
//! master seed, so whole sweeps are bit-reproducible.

use crate::config::RunConfig;
use crate::datagen::{
    batch_agreement, deduce, generate_corpus, sample_input, CorpusRecord, DatagenParams,
    DeductorConfig, UnsatisfiableDomain,
};
use crate::decoder::{beam_search, nbgd_beam, prior_rerank};
use crate::dsl::{
    canonicalize, execute, parse, sample_program, GrammarWeights, Observation, Transformation,
    Vocabulary,
};
use crate::par;
use crate::scorer::{ContextKey, Encoder, ScorerTable};
use crate::seed;
use crate::trainer::{build_instances, fit, TrainMode};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// One induction task: a hidden transformation, batched induction
/// observations, and a held-out deduction split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub truth: Transformation,
    pub d_in: Vec<Vec<Observation>>,
    pub d_de: Vec<Observation>,
}

/// Generate `count` tasks of `batches` x `n` induction pairs and `m_de`
/// held-out pairs each. Truths that behave like the identity on every drawn
/// input (or whose domain cannot be satisfied) are resampled.
pub fn generate_tasks(
    count: usize,
    n: usize,
    batches: usize,
    m_de: usize,
    depth_cap: usize,
    weights: &GrammarWeights,
    master_seed: u64,
) -> Vec<Task> {
    let idxs: Vec<usize> = (0..count).collect();
    par::map_indexed(&idxs, |_, &task_idx| {
        for attempt in 0..10_000u64 {
            let mut rng = seed::rng_for(master_seed, &[0x7A5C, task_idx as u64, attempt]);
            let truth = sample_program(weights, depth_cap, &mut rng);
            match draw_observations(&truth, n * batches + m_de, &mut rng) {
                Ok(obs) => {
                    if obs.iter().all(|o| o.y == o.x) {
                        continue; // identity-equivalent on every drawn input
                    }
                    let (in_obs, de_obs) = obs.split_at(n * batches);
                    let d_in = in_obs.chunks(n).map(|c| c.to_vec()).collect();
                    return Task {
                        id: format!("task-{task_idx:03}"),
                        truth,
                        d_in,
                        d_de: de_obs.to_vec(),
                    };
                }
                Err(UnsatisfiableDomain { .. }) => continue,
            }
        }
        unreachable!("task resampling exhausted 10k attempts")
    })
}

fn draw_observations<R: Rng>(
    truth: &Transformation,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Observation>, UnsatisfiableDomain> {
    (0..count)
        .map(|_| {
            let x = sample_input(truth, (0, 10), rng)?;
            let y = execute(truth, &x).expect("sample_input guarantees success");
            Ok(Observation { x, y })
        })
        .collect()
}

/// Fraction of held-out pairs the hypothesis reproduces exactly. Parse
/// failures score 0; a domain error on a test input counts as a miss.
pub fn evaluate_hypothesis(h: Option<&Transformation>, d_de: &[Observation]) -> f64 {
    let Some(h) = h else {
        return 0.0;
    };
    if d_de.is_empty() {
        return 0.0;
    }
    let hits = d_de
        .iter()
        .filter(|obs| execute(h, &obs.x).as_ref() == Ok(&obs.y))
        .count();
    hits as f64 / d_de.len() as f64
}

/// The induction methods under comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Beam decode of the batch context on the base (untrained) model.
    Io,
    /// Self-consistency: sampled hypotheses, majority vote.
    Sc,
    /// Hypothesis search: candidates filtered by agreement on the batch.
    Hs,
    /// Beam decode of the batch context on the batch-trained model.
    ItdIo,
    /// Grouped decode over per-pair contexts plus prior re-rank.
    Itd,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Io, Method::Sc, Method::Hs, Method::ItdIo, Method::Itd];

    fn stream_id(self) -> u64 {
        match self {
            Method::Io => 0,
            Method::Sc => 1,
            Method::Hs => 2,
            Method::ItdIo => 3,
            Method::Itd => 4,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Io => "io",
            Method::Sc => "sc",
            Method::Hs => "hs",
            Method::ItdIo => "itd-io",
            Method::Itd => "itd",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown method {0:?}")]
pub struct MethodParseError(pub String);

impl FromStr for Method {
    type Err = MethodParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "io" => Ok(Method::Io),
            "sc" => Ok(Method::Sc),
            "hs" => Ok(Method::Hs),
            "itd-io" => Ok(Method::ItdIo),
            "itd" => Ok(Method::Itd),
            other => Err(MethodParseError(other.to_string())),
        }
    }
}

/// Decoding knobs shared by the methods.
#[derive(Clone, Copy, Debug)]
pub struct DecodeParams {
    pub beam_width: usize,
    pub l_max: usize,
    /// Sample/candidate count for SC and HS.
    pub k: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub encoder: Encoder,
}

/// A decoded hypothesis: its surface text (when decoding produced one) and
/// its parsed form (when the text parses).
#[derive(Clone, Debug, PartialEq)]
pub struct Induced {
    pub text: Option<String>,
    pub hypothesis: Option<Transformation>,
}

impl Induced {
    fn none() -> Self {
        Induced {
            text: None,
            hypothesis: None,
        }
    }
}

/// Beam decode on the batch context; top-1 returned.
pub fn run_io_baseline(model: &ScorerTable, batch: &[Observation], p: &DecodeParams) -> Induced {
    let ctx = p.encoder.io(batch);
    match beam_search(model, &ctx, p.beam_width, p.l_max) {
        Ok(beams) => {
            let seq = beams[0].token_seq(model.vocab()).expect("finished beam");
            Induced {
                text: Some(seq.text(model.vocab())),
                hypothesis: parse(&seq, Vocabulary::dsl()).ok(),
            }
        }
        Err(_) => Induced::none(),
    }
}

/// Majority vote over canonicalized hypotheses; ties break by summed model
/// score, then by text. Returns the winner.
pub fn majority_vote(votes: &[(Transformation, f64)]) -> Option<Transformation> {
    let mut groups: BTreeMap<String, (Transformation, usize, f64)> = BTreeMap::new();
    for (f, score) in votes {
        let canon = canonicalize(f);
        let key = canon.to_string();
        let entry = groups.entry(key).or_insert((canon, 0, 0.0));
        entry.1 += 1;
        entry.2 += score;
    }
    groups
        .into_iter()
        .max_by(|(ka, (_, ca, sa)), (kb, (_, cb, sb))| {
            ca.cmp(cb)
                .then_with(|| sa.partial_cmp(sb).expect("finite scores"))
                .then_with(|| kb.cmp(ka)) // lexicographically smaller text wins
        })
        .map(|(_, (f, _, _))| f)
}

/// Self-consistency: sample `k` hypotheses on the batch context and take a
/// majority vote; unparseable samples are excluded.
pub fn run_sc_baseline<R: Rng>(
    model: &ScorerTable,
    batch: &[Observation],
    p: &DecodeParams,
    rng: &mut R,
) -> Induced {
    let ctx = p.encoder.io(batch);
    let mut votes: Vec<(Transformation, f64)> = Vec::new();
    for _ in 0..p.k {
        let sampled = model.sample_sequence(&ctx, p.temperature, p.top_p, p.l_max, rng);
        if let Some(seq) = sampled.into_token_seq(model.vocab()) {
            if let Ok(f) = parse(&seq, Vocabulary::dsl()) {
                let score = model.seq_logprob(&ctx, &seq);
                votes.push((f, score));
            }
        }
    }
    match majority_vote(&votes) {
        Some(f) => Induced {
            text: Some(f.to_string()),
            hypothesis: Some(f),
        },
        None => Induced::none(),
    }
}

/// Hypothesis search: pool beam top-k and k sampled candidates (plus any
/// injected ones), score each by agreement on the observed batch under the
/// configured deductor, and return the best. Ties break by model score,
/// then text.
pub fn run_hs_baseline<R: Rng>(
    model: &ScorerTable,
    batch: &[Observation],
    p: &DecodeParams,
    deductor: &DeductorConfig,
    extra_candidates: &[Transformation],
    rng: &mut R,
) -> Induced {
    let ctx = p.encoder.io(batch);
    let mut candidates: Vec<Transformation> = Vec::new();
    if let Ok(beams) = beam_search(model, &ctx, p.k, p.l_max) {
        for b in beams {
            if let Some(seq) = b.token_seq(model.vocab()) {
                if let Ok(f) = parse(&seq, Vocabulary::dsl()) {
                    candidates.push(f);
                }
            }
        }
    }
    for _ in 0..p.k {
        let sampled = model.sample_sequence(&ctx, p.temperature, p.top_p, p.l_max, rng);
        if let Some(seq) = sampled.into_token_seq(model.vocab()) {
            if let Ok(f) = parse(&seq, Vocabulary::dsl()) {
                candidates.push(f);
            }
        }
    }
    candidates.extend(extra_candidates.iter().cloned());

    // Dedup by canonical form, keeping first occurrence.
    let mut seen = std::collections::BTreeSet::new();
    candidates.retain(|f| seen.insert(canonicalize(f).to_string()));
    if candidates.is_empty() {
        return Induced::none();
    }

    let mut best: Option<(f64, f64, String, Transformation)> = None;
    for f in candidates {
        let agreement = if deductor.epsilon <= 0.0 {
            batch_agreement(&f, batch) as f64 / batch.len() as f64
        } else {
            let hits = batch
                .iter()
                .filter(|obs| match execute(&f, &obs.x) {
                    Ok(_) => deduce(&f, &obs.x, deductor, rng) == obs.y,
                    Err(_) => false,
                })
                .count();
            hits as f64 / batch.len() as f64
        };
        let score = model.seq_logprob(&ctx, &f.tokenize());
        let text = f.to_string();
        let better = match &best {
            None => true,
            Some((ba, bs, bt, _)) => {
                agreement > *ba
                    || (agreement == *ba && (score > *bs || (score == *bs && text < *bt)))
            }
        };
        if better {
            best = Some((agreement, score, text, f));
        }
    }
    let (_, _, text, f) = best.expect("candidates nonempty");
    Induced {
        text: Some(text),
        hypothesis: Some(f),
    }
}

/// The grouped decoder: per-pair contexts, summed-step beam search, then
/// prior re-rank with the batch size as the exponent.
pub fn run_itd(model_gd: &ScorerTable, batch: &[Observation], p: &DecodeParams) -> Induced {
    let ctxs: Vec<_> = batch.iter().map(|o| p.encoder.gd(o)).collect();
    match nbgd_beam(model_gd, &ctxs, p.beam_width, p.l_max) {
        Ok(beams) => {
            let ranked = prior_rerank(&beams, model_gd, batch.len());
            let top = &ranked[0];
            Induced {
                text: Some(top.tokens.text(model_gd.vocab())),
                hypothesis: top.parsed.clone().ok(),
            }
        }
        Err(_) => Induced::none(),
    }
}

/// One scored decode: everything needed to recompute the aggregate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetailRecord {
    pub method: String,
    pub n: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub task: String,
    pub batch: usize,
    pub hypothesis: Option<String>,
    pub accuracy: f64,
}

/// Models available to the methods: the untrained base plus the two fitted
/// tables.
pub struct EvalModels<'a> {
    pub base: &'a ScorerTable,
    pub io: Option<&'a ScorerTable>,
    pub gd: Option<&'a ScorerTable>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("method {0} requires a trained model that was not supplied")]
    MissingModel(Method),
}

/// Mean execution accuracy of one method over the task suite, with one
/// detail row per (task, batch). The aggregate is the mean over tasks of
/// the mean over batches.
pub fn evaluate_method(
    method: Method,
    tasks: &[Task],
    models: &EvalModels,
    p: &DecodeParams,
    hs_deductor: &DeductorConfig,
    master_seed: u64,
    n: usize,
    epsilon: f64,
    seed_label: u64,
) -> Result<(f64, Vec<DetailRecord>), EvalError> {
    let decode_model = match method {
        Method::Io | Method::Sc | Method::Hs => models.base,
        Method::ItdIo => models.io.ok_or(EvalError::MissingModel(method))?,
        Method::Itd => models.gd.ok_or(EvalError::MissingModel(method))?,
    };
    let per_task: Vec<(f64, Vec<DetailRecord>)> = par::map_indexed(tasks, |task_idx, task| {
        let mut rows = Vec::with_capacity(task.d_in.len());
        let mut acc_sum = 0.0;
        for (batch_idx, batch) in task.d_in.iter().enumerate() {
            let mut rng = seed::rng_for(
                master_seed,
                &[0xE7A1, method.stream_id(), task_idx as u64, batch_idx as u64],
            );
            let induced = match method {
                Method::Io | Method::ItdIo => run_io_baseline(decode_model, batch, p),
                Method::Sc => run_sc_baseline(decode_model, batch, p, &mut rng),
                Method::Hs => run_hs_baseline(decode_model, batch, p, hs_deductor, &[], &mut rng),
                Method::Itd => run_itd(decode_model, batch, p),
            };
            let accuracy = evaluate_hypothesis(induced.hypothesis.as_ref(), &task.d_de);
            acc_sum += accuracy;
            rows.push(DetailRecord {
                method: method.to_string(),
                n,
                epsilon,
                seed: seed_label,
                task: task.id.clone(),
                batch: batch_idx,
                hypothesis: induced.text,
                accuracy,
            });
        }
        (acc_sum / task.d_in.len() as f64, rows)
    });
    let mean = per_task.iter().map(|(a, _)| a).sum::<f64>() / tasks.len().max(1) as f64;
    let details = per_task.into_iter().flat_map(|(_, d)| d).collect();
    Ok((mean, details))
}

/// Task suite plus the three models the methods need, built end to end from
/// the config for one (seed, n, epsilon) cell.
pub struct Suite {
    pub tasks: Vec<Task>,
    pub base: ScorerTable,
    pub io: ScorerTable,
    pub gd: ScorerTable,
}

/// Fit the base (untuned) model: grammar draws counted under the empty
/// context only. It knows the hypothesis language but carries no
/// conditioning evidence, standing in for the pretrained-but-untuned
/// proposer the baselines decode from.
pub fn fit_base_prior(
    samples: usize,
    depth_cap: usize,
    weights: &GrammarWeights,
    order: usize,
    lambda: f64,
    master_seed: u64,
) -> ScorerTable {
    let mut builder =
        crate::scorer::ScorerBuilder::new(order, lambda, Vocabulary::dsl().clone());
    let mut rng = seed::rng_for(master_seed, &[0xBA5E]);
    for _ in 0..samples {
        let f = sample_program(weights, depth_cap, &mut rng);
        builder.count_sequence(&ContextKey::Empty, &f.tokenize());
    }
    builder.freeze()
}

/// Run the full pipeline for one cell: generate tasks at batch size `n`,
/// generate the corpus with deductor noise `epsilon`, and fit the base and
/// both trained models.
pub fn build_suite(cfg: &RunConfig, seed_idx: u64, n: usize, epsilon: f64) -> Suite {
    let cell_seed = seed::derive(
        cfg.master_seed,
        &[0x5EED, seed_idx, n as u64, epsilon.to_bits()],
    );
    let weights = GrammarWeights::default();
    let tasks = generate_tasks(
        cfg.task_count,
        n,
        cfg.batches,
        cfg.m_de,
        cfg.depth_cap,
        &weights,
        cell_seed,
    );
    let params = DatagenParams {
        per_batch_hypotheses: cfg.per_batch_hypotheses,
        pairs_per_f: cfg.pairs_per_f,
        consistency_min: cfg.consistency_min,
        budget: cfg.budget,
        length_range: (cfg.input_min_len, cfg.input_max_len),
        deductor: DeductorConfig::noisy(epsilon),
        grammar: weights.clone(),
        depth_cap: cfg.depth_cap,
    };
    let (mut corpus, _) = generate_corpus(&tasks, &params, seed::derive(cell_seed, &[1]));
    if cfg.dedup_corpus {
        corpus = crate::datagen::dedup_records(corpus);
    }
    let gd = fit_mode(&corpus, TrainMode::Gd, cfg);
    let io = fit_mode(&corpus, TrainMode::Io, cfg);
    let base = fit_base_prior(
        cfg.base_prior_samples,
        cfg.depth_cap,
        &weights,
        cfg.order,
        cfg.lambda,
        cell_seed,
    );
    Suite { tasks, base, io, gd }
}

fn fit_mode(corpus: &[CorpusRecord], mode: TrainMode, cfg: &RunConfig) -> ScorerTable {
    let encoder: Encoder = cfg.encoder.parse().expect("config validated");
    let instances = build_instances(corpus, mode, cfg.io_group_size, encoder, cfg.master_seed);
    fit(&instances, cfg.order, cfg.lambda)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub mean: f64,
    pub stderr: f64,
}

/// Aggregate sweep output: `method -> n -> epsilon -> (mean, stderr)` plus
/// the per-decode details.
#[derive(Serialize)]
pub struct SweepReport {
    pub config: RunConfig,
    pub results: BTreeMap<String, BTreeMap<String, BTreeMap<String, CellStats>>>,
    #[serde(skip)]
    pub details: Vec<DetailRecord>,
}

/// Run `methods` over the cross product of `n_grid` x `epsilon_grid` x
/// seeds. Each cell runs the full pipeline (tasks, corpus, training) before
/// evaluating all methods on it.
pub fn sweep_cells(
    cfg: &RunConfig,
    methods: &[Method],
    n_grid: &[usize],
    epsilon_grid: &[f64],
    seeds: u64,
) -> SweepReport {
    let p = cfg.decode_params();
    let mut per_seed: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    let mut details = Vec::new();
    for seed_idx in 0..seeds {
        for &eps in epsilon_grid {
            for &n in n_grid {
                let suite = build_suite(cfg, seed_idx, n, eps);
                let models = EvalModels {
                    base: &suite.base,
                    io: Some(&suite.io),
                    gd: Some(&suite.gd),
                };
                let hs_ded = DeductorConfig::noisy(eps);
                for &method in methods {
                    let (mean, rows) = evaluate_method(
                        method,
                        &suite.tasks,
                        &models,
                        &p,
                        &hs_ded,
                        seed::derive(cfg.master_seed, &[0xEA17, seed_idx, n as u64, eps.to_bits()]),
                        n,
                        eps,
                        seed_idx,
                    )
                    .expect("suite supplies all models");
                    per_seed
                        .entry((method.to_string(), n.to_string(), eps.to_string()))
                        .or_default()
                        .push(mean);
                    details.extend(rows);
                }
            }
        }
    }
    let mut results: BTreeMap<String, BTreeMap<String, BTreeMap<String, CellStats>>> =
        BTreeMap::new();
    for ((method, n, eps), means) in per_seed {
        let k = means.len() as f64;
        let mean = means.iter().sum::<f64>() / k;
        let stderr = if means.len() > 1 {
            let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (k - 1.0);
            (var / k).sqrt()
        } else {
            0.0
        };
        results
            .entry(method)
            .or_default()
            .entry(n)
            .or_default()
            .insert(eps, CellStats { mean, stderr });
    }
    SweepReport {
        config: cfg.clone(),
        results,
        details,
    }
}

/// The full sweep over the grids declared in the config.
pub fn sweep(cfg: &RunConfig) -> SweepReport {
    let methods: Vec<Method> = cfg
        .sweep_methods
        .iter()
        .map(|m| m.parse().expect("config validated"))
        .collect();
    sweep_cells(cfg, &methods, &cfg.sweep_n, &cfg.sweep_epsilon, cfg.seeds)
}

/// Write tasks as line-oriented JSON.
pub fn write_tasks<W: std::io::Write>(tasks: &[Task], mut w: W) -> std::io::Result<()> {
    for t in tasks {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum TaskReadError {
    #[error("tasks I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("tasks line {line}: {msg}")]
    Line { line: usize, msg: String },
}

/// Read tasks, re-verifying that every observation is consistent with the
/// task's transformation.
pub fn read_tasks<R: std::io::BufRead>(r: R) -> Result<Vec<Task>, TaskReadError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let task: Task = serde_json::from_str(&line).map_err(|e| TaskReadError::Line {
            line: i + 1,
            msg: e.to_string(),
        })?;
        for obs in task.d_in.iter().flatten().chain(task.d_de.iter()) {
            if execute(&task.truth, &obs.x).as_ref() != Ok(&obs.y) {
                return Err(TaskReadError::Line {
                    line: i + 1,
                    msg: format!("observation {} inconsistent with {}", obs.x, task.truth),
                });
            }
        }
        out.push(task);
    }
    Ok(out)
}
