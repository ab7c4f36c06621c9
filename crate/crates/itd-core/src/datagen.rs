//! Deductive data generation: sample candidate transformations from a weak
//! prior, sample inputs compatible with each candidate, and deduce outputs
//! with an exact or noise-injected deductor, emitting (x, y, f) records.
//!
//! The whole stage is deterministic: each task derives its own RNG stream
//! from (master seed, task index), so parallel and serial runs emit
//! identical corpora.

use crate::dsl::{
    execute, sample_program, GrammarWeights, IntList, Observation, Transformation, Vocabulary,
    MAX_LEN,
};
use crate::harness::Task;
use crate::par;
use crate::scorer::{Encoder, ScorerTable};
use crate::seed;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One generated training record. With a noiseless deductor,
/// `y == execute(f, x)` holds by construction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub x: IntList,
    pub y: IntList,
    pub f: Transformation,
}

/// Corruption model standing in for an imperfect deductor. `epsilon = 0`
/// reproduces exact deduction.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DeductorConfig {
    pub epsilon: f64,
    pub substitute: bool,
    pub drop: bool,
    pub insert: bool,
}

impl DeductorConfig {
    pub fn exact() -> Self {
        DeductorConfig {
            epsilon: 0.0,
            substitute: true,
            drop: true,
            insert: true,
        }
    }

    pub fn noisy(epsilon: f64) -> Self {
        DeductorConfig {
            epsilon,
            ..DeductorConfig::exact()
        }
    }
}

/// Where bootstrap hypotheses come from: the weighted grammar prior, or a
/// previously fitted scorer sampled on the batch's IO context.
pub enum PriorSource<'a> {
    Grammar {
        weights: &'a GrammarWeights,
        depth_cap: usize,
    },
    Scorer {
        model: &'a ScorerTable,
        temperature: f64,
        top_p: f64,
        l_max: usize,
        encoder: Encoder,
    },
}

impl PriorSource<'_> {
    fn draw<R: Rng>(&self, batch: &[Observation], rng: &mut R) -> Option<Transformation> {
        match self {
            PriorSource::Grammar { weights, depth_cap } => {
                Some(sample_program(weights, *depth_cap, rng))
            }
            PriorSource::Scorer {
                model,
                temperature,
                top_p,
                l_max,
                encoder,
            } => {
                let ctx = encoder.io(batch);
                let sampled = model.sample_sequence(&ctx, *temperature, *top_p, *l_max, rng);
                let seq = sampled.into_token_seq(model.vocab())?;
                crate::dsl::parse(&seq, Vocabulary::dsl()).ok()
            }
        }
    }
}

/// Number of observed pairs a candidate reproduces exactly.
pub fn batch_agreement(f: &Transformation, batch: &[Observation]) -> usize {
    batch
        .iter()
        .filter(|obs| execute(f, &obs.x).as_ref() == Ok(&obs.y))
        .count()
}

/// Draw `count` candidate transformations for one observed batch, keeping
/// draws that reproduce at least `consistency_min` pairs. After `budget`
/// filtered draws the remainder is filled with unfiltered draws, so exactly
/// `count` candidates always come back.
pub fn sample_prior_hypotheses<R: Rng>(
    source: &PriorSource,
    batch: &[Observation],
    count: usize,
    consistency_min: usize,
    budget: usize,
    rng: &mut R,
) -> Vec<Transformation> {
    assert!(count >= 1 && budget >= count);
    let mut kept = Vec::with_capacity(count);
    let mut spent = 0usize;
    while kept.len() < count && spent < budget {
        spent += 1;
        let Some(f) = source.draw(batch, rng) else {
            continue;
        };
        if consistency_min == 0 || batch_agreement(&f, batch) >= consistency_min {
            kept.push(f);
        }
    }
    while kept.len() < count {
        if let Some(f) = source.draw(batch, rng) {
            kept.push(f);
        }
    }
    kept
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("no input satisfying the transformation's domain after {attempts} attempts")]
pub struct UnsatisfiableDomain {
    pub attempts: usize,
}

const INPUT_ATTEMPTS: usize = 100;

/// Uniform random digit list with length drawn from `length_range`,
/// resampled until `execute(f, x)` succeeds; up to 100 attempts.
pub fn sample_input<R: Rng>(
    f: &Transformation,
    length_range: (usize, usize),
    rng: &mut R,
) -> Result<IntList, UnsatisfiableDomain> {
    let (lo, hi) = length_range;
    assert!(lo <= hi && hi <= MAX_LEN);
    for _ in 0..INPUT_ATTEMPTS {
        let len = rng.gen_range(lo..=hi);
        let digits: Vec<u8> = (0..len).map(|_| rng.gen_range(0..=9)).collect();
        let x = IntList::new(digits).expect("digits within range");
        if execute(f, &x).is_ok() {
            return Ok(x);
        }
    }
    Err(UnsatisfiableDomain {
        attempts: INPUT_ATTEMPTS,
    })
}

/// Deduce `y` from `(f, x)`: the exact output, corrupted with probability
/// `epsilon` by one enabled mutation. Mutations respect the digit-list
/// invariants; when none applies the exact output is returned.
pub fn deduce<R: Rng>(
    f: &Transformation,
    x: &IntList,
    cfg: &DeductorConfig,
    rng: &mut R,
) -> IntList {
    let exact = execute(f, x).expect("deduce precondition: execute succeeds");
    if cfg.epsilon <= 0.0 || rng.gen::<f64>() >= cfg.epsilon {
        return exact;
    }
    let mut kinds: Vec<u8> = Vec::new();
    if cfg.substitute && !exact.is_empty() {
        kinds.push(0);
    }
    if cfg.drop && !exact.is_empty() {
        kinds.push(1);
    }
    if cfg.insert && exact.len() < MAX_LEN {
        kinds.push(2);
    }
    if kinds.is_empty() {
        return exact;
    }
    let kind = kinds[rng.gen_range(0..kinds.len())];
    let mut digits = exact.digits().to_vec();
    match kind {
        0 => {
            let pos = rng.gen_range(0..digits.len());
            let old = digits[pos];
            let repl = (old + rng.gen_range(1..=9)) % 10;
            digits[pos] = repl;
        }
        1 => {
            let pos = rng.gen_range(0..digits.len());
            digits.remove(pos);
        }
        _ => {
            let pos = rng.gen_range(0..=digits.len());
            digits.insert(pos, rng.gen_range(0..=9));
        }
    }
    IntList::new(digits).expect("mutations preserve invariants")
}

/// Knobs for one corpus generation run.
#[derive(Clone, Debug)]
pub struct DatagenParams {
    pub per_batch_hypotheses: usize,
    pub pairs_per_f: usize,
    pub consistency_min: usize,
    pub budget: usize,
    pub length_range: (usize, usize),
    pub deductor: DeductorConfig,
    pub grammar: GrammarWeights,
    pub depth_cap: usize,
}

/// Outcome counters for a corpus run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DatagenStats {
    pub records: usize,
    /// Hypotheses dropped because no satisfying input was found.
    pub dropped_hypotheses: usize,
}

/// Generate the full training corpus: for every batch of every task's
/// induction split, sample hypotheses, then (x, y) pairs for each.
/// Hypotheses with unsatisfiable domains are dropped and counted.
pub fn generate_corpus(
    tasks: &[Task],
    params: &DatagenParams,
    master_seed: u64,
) -> (Vec<CorpusRecord>, DatagenStats) {
    let per_task: Vec<(Vec<CorpusRecord>, usize)> = par::map_indexed(tasks, |task_idx, task| {
        generate_for_task(task, task_idx, params, master_seed)
    });
    let mut records = Vec::new();
    let mut stats = DatagenStats::default();
    for (mut recs, drops) in per_task {
        stats.dropped_hypotheses += drops;
        records.append(&mut recs);
    }
    stats.records = records.len();
    (records, stats)
}

fn generate_for_task(
    task: &Task,
    task_idx: usize,
    params: &DatagenParams,
    master_seed: u64,
) -> (Vec<CorpusRecord>, usize) {
    let source = PriorSource::Grammar {
        weights: &params.grammar,
        depth_cap: params.depth_cap,
    };
    let mut records = Vec::new();
    let mut drops = 0usize;
    for (batch_idx, batch) in task.d_in.iter().enumerate() {
        let mut rng = seed::rng_for(master_seed, &[0xDA7A, task_idx as u64, batch_idx as u64]);
        let hypotheses = sample_prior_hypotheses(
            &source,
            batch,
            params.per_batch_hypotheses,
            params.consistency_min,
            params.budget,
            &mut rng,
        );
        for f in hypotheses {
            let mut pairs = Vec::with_capacity(params.pairs_per_f);
            let mut ok = true;
            for _ in 0..params.pairs_per_f {
                match sample_input(&f, params.length_range, &mut rng) {
                    Ok(x) => {
                        let y = deduce(&f, &x, &params.deductor, &mut rng);
                        pairs.push((x, y));
                    }
                    Err(_) => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                for (x, y) in pairs {
                    records.push(CorpusRecord { x, y, f: f.clone() });
                }
            } else {
                drops += 1;
            }
        }
    }
    (records, drops)
}

/// Drop exact duplicate (x, y, f) records, keeping first occurrences.
pub fn dedup_records(records: Vec<CorpusRecord>) -> Vec<CorpusRecord> {
    let mut seen = std::collections::HashSet::new();
    records
        .into_iter()
        .filter(|r| seen.insert((r.x.clone(), r.y.clone(), r.f.clone())))
        .collect()
}

/// Write records as line-oriented JSON: `{"x":[..],"y":[..],"f":"..."}`.
pub fn write_corpus<W: std::io::Write>(
    records: &[CorpusRecord],
    mut w: W,
) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum CorpusReadError {
    #[error("corpus I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus line {line}: {msg}")]
    Line { line: usize, msg: String },
}

pub fn read_corpus<R: std::io::BufRead>(r: R) -> Result<Vec<CorpusRecord>, CorpusReadError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord =
            serde_json::from_str(&line).map_err(|e| CorpusReadError::Line {
                line: i + 1,
                msg: e.to_string(),
            })?;
        out.push(rec);
    }
    Ok(out)
}
