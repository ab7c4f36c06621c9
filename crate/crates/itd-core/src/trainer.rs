//! Fitting the scorer from a corpus: organize records into single-pair or
//! batch-context instances and count n-grams. Counting replaces gradient
//! training at this scale; the fitted table is the trained model.

use crate::datagen::CorpusRecord;
use crate::dsl::{Observation, TokenSeq};
use crate::scorer::{ContextKey, Encoder, ScorerBuilder, ScorerTable};
use crate::seed;
use rand::seq::SliceRandom;
use std::collections::BTreeMap;

/// One supervision pair: a conditioning context and the target hypothesis
/// token sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingInstance {
    pub ctx: ContextKey,
    pub target: TokenSeq,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    /// One instance per record, conditioned on its single pair.
    Gd,
    /// Records grouped by their transformation, partitioned into groups of
    /// `io_group_size` (remainder kept), conditioned on the group.
    Io,
}

/// Build training instances from a corpus.
pub fn build_instances(
    corpus: &[CorpusRecord],
    mode: TrainMode,
    io_group_size: usize,
    encoder: Encoder,
    rng_seed: u64,
) -> Vec<TrainingInstance> {
    match mode {
        TrainMode::Gd => corpus
            .iter()
            .map(|r| TrainingInstance {
                ctx: encoder.gd(&Observation {
                    x: r.x.clone(),
                    y: r.y.clone(),
                }),
                target: r.f.tokenize(),
            })
            .collect(),
        TrainMode::Io => {
            assert!(io_group_size >= 1);
            // Group by transformation text; BTreeMap fixes the group order.
            let mut groups: BTreeMap<String, Vec<&CorpusRecord>> = BTreeMap::new();
            for r in corpus {
                groups.entry(r.f.to_string()).or_default().push(r);
            }
            let mut out = Vec::new();
            for (gi, (_, mut records)) in groups.into_iter().enumerate() {
                let mut rng = seed::rng_for(rng_seed, &[0x10c0, gi as u64]);
                records.shuffle(&mut rng);
                for chunk in records.chunks(io_group_size) {
                    let obs: Vec<Observation> = chunk
                        .iter()
                        .map(|r| Observation {
                            x: r.x.clone(),
                            y: r.y.clone(),
                        })
                        .collect();
                    out.push(TrainingInstance {
                        ctx: encoder.io(&obs),
                        target: chunk[0].f.tokenize(),
                    });
                }
            }
            out
        }
    }
}

/// Count every instance under its own context and once more under the empty
/// context (the prior), then freeze.
pub fn fit(instances: &[TrainingInstance], order: usize, lambda: f64) -> ScorerTable {
    let mut builder = ScorerBuilder::new(order, lambda, crate::dsl::Vocabulary::dsl().clone());
    for inst in instances {
        builder.count_sequence(&inst.ctx, &inst.target);
        builder.count_sequence(&ContextKey::Empty, &inst.target);
    }
    builder.freeze()
}

/// Perplexity of the model on instances (contexts as given).
pub fn perplexity(model: &ScorerTable, instances: &[TrainingInstance]) -> f64 {
    let pairs: Vec<(ContextKey, TokenSeq)> = instances
        .iter()
        .map(|i| (i.ctx, i.target.clone()))
        .collect();
    model.perplexity(&pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_corpus, DatagenParams, DeductorConfig};
    use crate::dsl::{GrammarWeights, IntList, Prim, Transformation, Vocabulary};
    use crate::harness::generate_tasks;

    fn rec(x: &[u8], y: &[u8], f: Transformation) -> CorpusRecord {
        CorpusRecord {
            x: IntList::new(x.to_vec()).unwrap(),
            y: IntList::new(y.to_vec()).unwrap(),
            f,
        }
    }

    fn small_corpus() -> Vec<CorpusRecord> {
        let rev = Transformation::Prim(Prim::Reverse);
        let tail = Transformation::Prim(Prim::Tail);
        let mut out = Vec::new();
        for i in 0..15 {
            let x = vec![(i % 10) as u8, ((i + 3) % 10) as u8];
            let y = vec![x[1], x[0]];
            out.push(rec(&x, &y, rev.clone()));
        }
        for i in 0..10 {
            let x = vec![(i % 10) as u8, ((i + 5) % 10) as u8];
            let y = vec![x[1]];
            out.push(rec(&x, &y, tail.clone()));
        }
        out
    }

    #[test]
    fn gd_mode_is_one_to_one() {
        let corpus = small_corpus();
        let instances = build_instances(&corpus, TrainMode::Gd, 5, Encoder::Full, 0);
        assert_eq!(instances.len(), corpus.len());
    }

    #[test]
    fn io_mode_groups_by_transformation() {
        let corpus = small_corpus();
        // 15 reverse records and 10 tail records at group size 5: 3 + 2.
        let instances = build_instances(&corpus, TrainMode::Io, 5, Encoder::Full, 0);
        assert_eq!(instances.len(), 5);
        // Remainder groups are kept: group size 4 gives 4 + 3 = 7.
        let instances = build_instances(&corpus, TrainMode::Io, 4, Encoder::Full, 0);
        assert_eq!(instances.len(), 7);
    }

    #[test]
    fn io_group_of_one_matches_gd_bools() {
        let corpus = small_corpus();
        let io = build_instances(&corpus, TrainMode::Io, 1, Encoder::Full, 0);
        let gd = build_instances(&corpus, TrainMode::Gd, 1, Encoder::Full, 0);
        assert_eq!(io.len(), gd.len());
        use crate::scorer::ContextKey::{Gd, Io};
        // Same multiset of (flag-part, target) on both sides.
        let mut io_keys: Vec<(Vec<bool>, String)> = io
            .iter()
            .map(|i| match i.ctx {
                Io(f) => (f.flags.to_vec(), i.target.text(Vocabulary::dsl())),
                _ => panic!(),
            })
            .collect();
        let mut gd_keys: Vec<(Vec<bool>, String)> = gd
            .iter()
            .map(|i| match i.ctx {
                Gd(f) => (f.flags.to_vec(), i.target.text(Vocabulary::dsl())),
                _ => panic!(),
            })
            .collect();
        io_keys.sort();
        gd_keys.sort();
        assert_eq!(io_keys, gd_keys);
    }

    #[test]
    fn count_conservation() {
        let corpus = small_corpus();
        let instances = build_instances(&corpus, TrainMode::Gd, 5, Encoder::Full, 0);
        let model = fit(&instances, 3, 0.1);
        let want: u64 = instances.iter().map(|i| 2 * i.target.len() as u64).sum();
        assert_eq!(model.position_count(), want);
    }

    #[test]
    fn instance_order_does_not_matter() {
        let corpus = small_corpus();
        let mut instances = build_instances(&corpus, TrainMode::Gd, 5, Encoder::Full, 0);
        let a = fit(&instances, 3, 0.1);
        instances.reverse();
        let b = fit(&instances, 3, 0.1);
        assert_eq!(a, b);
    }

    #[test]
    fn single_instance_dominates_equal_length_sequences() {
        let target: Transformation = "( reverse )".parse().unwrap();
        let inst = TrainingInstance {
            ctx: crate::scorer::encode_gd(&Observation {
                x: IntList::new(vec![1, 2]).unwrap(),
                y: IntList::new(vec![2, 1]).unwrap(),
            }),
            target: target.tokenize(),
        };
        let model = fit(std::slice::from_ref(&inst), 3, 0.1);
        let fitted_lp = model.seq_logprob(&inst.ctx, &inst.target);
        for other in ["( tail )", "( head )", "( sort_asc )"] {
            let f: Transformation = other.parse().unwrap();
            let lp = model.seq_logprob(&inst.ctx, &f.tokenize());
            assert!(fitted_lp > lp, "{other}: {lp} vs {fitted_lp}");
        }
    }

    #[test]
    fn trained_model_beats_uniform_on_held_out_data() {
        let tasks = generate_tasks(10, 5, 3, 5, 2, &GrammarWeights::default(), 41);
        let params = DatagenParams {
            per_batch_hypotheses: 5,
            pairs_per_f: 5,
            consistency_min: 1,
            budget: 50,
            length_range: (0, 10),
            deductor: DeductorConfig::exact(),
            grammar: GrammarWeights::default(),
            depth_cap: 2,
        };
        let (train_recs, _) = generate_corpus(&tasks, &params, 1);
        let held_tasks = generate_tasks(5, 5, 3, 5, 2, &GrammarWeights::default(), 42);
        let (held_recs, _) = generate_corpus(&held_tasks, &params, 2);

        let train = build_instances(&train_recs, TrainMode::Gd, 5, Encoder::Full, 0);
        let held = build_instances(&held_recs, TrainMode::Gd, 5, Encoder::Full, 0);
        let model = fit(&train, 3, 0.1);
        let uniform = ScorerTable::untrained(3, 0.1, Vocabulary::dsl().clone());
        let ppl_model = perplexity(&model, &held);
        let ppl_uniform = perplexity(&uniform, &held);
        assert!(
            ppl_model < ppl_uniform,
            "model {ppl_model:.2} vs uniform {ppl_uniform:.2}"
        );
    }
}
