//! Brute-force oracles for the decoders.
//!
//! On a tiny vocabulary every complete token sequence can be enumerated, so
//! beam search and the grouped decode can be checked against exhaustive
//! argmax/ranking computed by direct summation. The oracle shares only the
//! model's probability definition with the decoders; the search itself is
//! plain enumeration.

use crate::decoder::{nbgd_beam, prior_rerank, Beam};
use crate::dsl::{TokenId, TokenSeq, Vocabulary};
use crate::scorer::{ContextKey, GdFeatures, ScorerBuilder, ScorerTable};
use crate::seed::rng_for;
use rand::Rng;
use std::time::{Duration, Instant};

/// Every sequence of non-EOS tokens followed by EOS, total length <= l_max,
/// in lexicographic order.
pub fn all_complete_seqs(vocab: &Vocabulary, l_max: usize) -> Vec<TokenSeq> {
    let eos = vocab.eos();
    let inner: Vec<TokenId> = (0..vocab.size() as u8).filter(|&t| t != eos).collect();
    let mut out = Vec::new();
    let mut stack: Vec<Vec<TokenId>> = vec![Vec::new()];
    while let Some(prefix) = stack.pop() {
        let mut with_eos = prefix.clone();
        with_eos.push(eos);
        out.push(TokenSeq::new(with_eos, vocab).unwrap());
        if prefix.len() + 1 < l_max {
            // Reverse push so the stack pops in lexicographic order.
            for &t in inner.iter().rev() {
                let mut ext = prefix.clone();
                ext.push(t);
                stack.push(ext);
            }
        }
    }
    out.sort_by(|a, b| a.ids().cmp(b.ids()));
    out
}

/// Sum of per-context sequence log-probabilities, computed by direct
/// token-by-token accumulation.
pub fn summed_seq_logprob(model: &ScorerTable, ctxs: &[ContextKey], seq: &TokenSeq) -> f64 {
    let mut sorted = ctxs.to_vec();
    sorted.sort_unstable();
    let ids = seq.ids();
    let mut total = 0.0;
    for ctx in &sorted {
        for (j, &t) in ids.iter().enumerate() {
            total += model.token_logprob(ctx, &ids[..j], t);
        }
    }
    total
}

/// Exhaustive argmax of the grouped score over all complete sequences.
pub fn exhaustive_group_argmax(
    model: &ScorerTable,
    ctxs: &[ContextKey],
    l_max: usize,
) -> (TokenSeq, f64) {
    let mut best: Option<(TokenSeq, f64)> = None;
    for seq in all_complete_seqs(model.vocab(), l_max) {
        let score = summed_seq_logprob(model, ctxs, &seq);
        let better = match &best {
            None => true,
            Some((bseq, bscore)) => {
                score > *bscore || (score == *bscore && seq.ids() < bseq.ids())
            }
        };
        if better {
            best = Some((seq, score));
        }
    }
    best.expect("at least the bare EOS sequence exists")
}

/// Exhaustive ranking of `-(n-1) log p(f) + sum_i log p(f|ctx_i)` over all
/// complete sequences; ties break lexicographically.
pub fn exhaustive_posterior_ranking(
    model: &ScorerTable,
    ctxs: &[ContextKey],
    n: usize,
    l_max: usize,
) -> Vec<(TokenSeq, f64)> {
    let mut scored: Vec<(TokenSeq, f64)> = all_complete_seqs(model.vocab(), l_max)
        .into_iter()
        .map(|seq| {
            let evidence = summed_seq_logprob(model, ctxs, &seq);
            let prior = model.seq_logprob(&ContextKey::Empty, &seq);
            let score = evidence - (n as f64 - 1.0) * prior;
            (seq, score)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.ids().cmp(b.0.ids())));
    scored
}

/// Kendall tau between two rankings of the same item set; 1.0 means
/// identical order.
pub fn kendall_tau<T: Eq + std::hash::Hash>(a: &[T], b: &[T]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let pos_b: std::collections::HashMap<&T, usize> =
        b.iter().enumerate().map(|(i, t)| (t, i)).collect();
    let ranks: Vec<usize> = a.iter().map(|t| pos_b[t]).collect();
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            if ranks[i] < ranks[j] {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    (concordant - discordant) as f64 / (concordant + discordant) as f64
}

/// A synthetic GD key for oracle models; features carry no meaning here.
fn synthetic_ctx(tag: u8) -> ContextKey {
    ContextKey::Gd(GdFeatures {
        len_x: tag,
        len_y: tag,
        delta_sign: 0,
        flags: [false; 9],
        new_min: None,
    })
}

/// A random tiny model plus a pool of synthetic contexts it was trained on.
pub fn random_tiny_model(
    seed: u64,
    vocab_size: usize,
    l_max: usize,
) -> (ScorerTable, Vec<ContextKey>) {
    assert!((2..=6).contains(&vocab_size));
    let names: Vec<String> = (0..vocab_size - 1)
        .map(|i| format!("t{i}"))
        .chain(std::iter::once("<eos>".to_string()))
        .collect();
    let vocab = Vocabulary::new(names);
    let mut rng = rng_for(seed, &[0xF00D]);
    let n_ctx = rng.gen_range(1..=3);
    let ctxs: Vec<ContextKey> = (0..n_ctx).map(|i| synthetic_ctx(i as u8)).collect();
    let mut builder = ScorerBuilder::new(3, 0.1, vocab.clone());
    for ctx in &ctxs {
        let n_seqs = rng.gen_range(2..=8);
        for _ in 0..n_seqs {
            let len = rng.gen_range(0..l_max);
            let mut ids: Vec<TokenId> = (0..len)
                .map(|_| rng.gen_range(0..vocab.size() as u8 - 1))
                .collect();
            ids.push(vocab.eos());
            let seq = TokenSeq::new(ids, &vocab).unwrap();
            builder.count_sequence(ctx, &seq);
            builder.count_sequence(&ContextKey::Empty, &seq);
        }
    }
    (builder.freeze(), ctxs)
}

/// Draw a context multiset of size n, mixing trained and unseen keys so the
/// backoff path is exercised.
fn draw_contexts<R: Rng>(pool: &[ContextKey], n: usize, rng: &mut R) -> Vec<ContextKey> {
    (0..n)
        .map(|_| {
            if rng.gen_bool(0.8) {
                pool[rng.gen_range(0..pool.len())]
            } else {
                synthetic_ctx(9)
            }
        })
        .collect()
}

pub struct OracleReport {
    pub name: String,
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
}

/// Group-decode oracle: with an exhaustive beam width, the top beam must be
/// the enumerated argmax of the summed sequence score.
pub fn check_group_decode(instances: usize, master_seed: u64) -> OracleReport {
    let start = Instant::now();
    let vocab_size = 5;
    let l_max = 6;
    let width = (vocab_size as usize).pow(l_max as u32);
    let mut failures = Vec::new();
    for i in 0..instances {
        let (model, pool) = random_tiny_model(master_seed.wrapping_add(i as u64), vocab_size, l_max);
        let mut rng = rng_for(master_seed, &[1, i as u64]);
        let n = rng.gen_range(1..=3);
        let ctxs = draw_contexts(&pool, n, &mut rng);
        let beams = nbgd_beam(&model, &ctxs, width, l_max).expect("exhaustive width always finishes");
        let (want_seq, want_score) = exhaustive_group_argmax(&model, &ctxs, l_max);
        let got = &beams[0];
        if got.ids != want_seq.ids() || (got.score - want_score).abs() > 1e-9 {
            failures.push(format!(
                "instance {i}: beam {:?} ({:.12}) vs exhaustive {:?} ({:.12})",
                got.ids,
                got.score,
                want_seq.ids(),
                want_score
            ));
        }
    }
    OracleReport {
        name: format!("group-decode argmax x{instances}"),
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("{instances} instantiations matched the exhaustive argmax")
        } else {
            failures.join("; ")
        },
        elapsed: start.elapsed(),
    }
}

/// Posterior re-rank oracle: the full re-ranked ordering must equal the
/// brute-force ordering of the grouped posterior (Kendall tau 1.0).
pub fn check_posterior_rerank(instances: usize, master_seed: u64) -> OracleReport {
    let start = Instant::now();
    let vocab_size = 4;
    let l_max = 5;
    let width = (vocab_size as usize).pow(l_max as u32);
    let mut failures = Vec::new();
    let mut min_tau = 1.0f64;
    for i in 0..instances {
        let (model, pool) = random_tiny_model(master_seed.wrapping_add(7_000 + i as u64), vocab_size, l_max);
        for &n in &[1usize, 2, 3, 5] {
            let mut rng = rng_for(master_seed, &[2, i as u64, n as u64]);
            let ctxs = draw_contexts(&pool, n, &mut rng);
            let beams = nbgd_beam(&model, &ctxs, width, l_max).expect("exhaustive width");
            let ranked = prior_rerank(&beams, &model, n);
            let want = exhaustive_posterior_ranking(&model, &ctxs, n, l_max);
            let got_order: Vec<Vec<TokenId>> =
                ranked.iter().map(|h| h.tokens.ids().to_vec()).collect();
            let want_order: Vec<Vec<TokenId>> =
                want.iter().take(got_order.len()).map(|(s, _)| s.ids().to_vec()).collect();
            let tau = kendall_tau(&got_order, &want_order);
            min_tau = min_tau.min(tau);
            if got_order != want_order {
                failures.push(format!("instance {i} n={n}: tau {tau}"));
            }
        }
    }
    OracleReport {
        name: format!("posterior re-rank ranking x{instances}"),
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("kendall tau 1.0 for all instances and n in {{1,2,3,5}} (min {min_tau})")
        } else {
            failures.join("; ")
        },
        elapsed: start.elapsed(),
    }
}

/// Degeneracy check: group decoding with a single context reproduces plain
/// beam search token for token.
pub fn check_single_context_degeneracy(cases: usize, master_seed: u64) -> OracleReport {
    let start = Instant::now();
    let mut failures = 0usize;
    for i in 0..cases {
        let (model, pool) = random_tiny_model(master_seed.wrapping_add(50_000 + i as u64), 5, 6);
        let mut rng = rng_for(master_seed, &[3, i as u64]);
        let ctx = draw_contexts(&pool, 1, &mut rng)[0];
        let a = crate::decoder::beam_search(&model, &ctx, 5, 6);
        let b = nbgd_beam(&model, &[ctx], 5, 6);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                if a.len() != b.len()
                    || a.iter().zip(&b).any(|(x, y): (&Beam, &Beam)| {
                        x.ids != y.ids || (x.score - y.score).abs() > 1e-12
                    })
                {
                    failures += 1;
                }
            }
            (Err(_), Err(_)) => {}
            _ => failures += 1,
        }
    }
    OracleReport {
        name: format!("single-context degeneracy x{cases}"),
        pass: failures == 0,
        detail: format!("{failures} mismatches"),
        elapsed: start.elapsed(),
    }
}

/// All oracle checks at their standard sizes.
pub fn run_all_checks(master_seed: u64) -> Vec<OracleReport> {
    vec![
        check_group_decode(100, master_seed),
        check_posterior_rerank(25, master_seed),
        check_single_context_degeneracy(200, master_seed),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_counts_match_formula() {
        let (model, _) = random_tiny_model(1, 4, 3);
        // Sum over m in 0..=2 of 3^m = 1 + 3 + 9 = 13 sequences.
        assert_eq!(all_complete_seqs(model.vocab(), 3).len(), 13);
    }

    #[test]
    fn kendall_tau_detects_order() {
        let a = vec![1, 2, 3, 4];
        assert_eq!(kendall_tau(&a, &a), 1.0);
        let rev: Vec<i32> = a.iter().rev().cloned().collect();
        assert_eq!(kendall_tau(&a, &rev), -1.0);
    }

    #[test]
    fn perturbed_prior_exponent_fails_the_rerank_check() {
        // Sanity: using n instead of n-1 in the re-rank must be caught.
        let (model, pool) = random_tiny_model(3, 4, 4);
        let n = 3;
        let mut rng = rng_for(3, &[9]);
        let ctxs = draw_contexts(&pool, n, &mut rng);
        let width = 4usize.pow(4);
        let beams = nbgd_beam(&model, &ctxs, width, 4).unwrap();
        // Deliberately wrong exponent.
        let mut wrong: Vec<(Vec<TokenId>, f64)> = beams
            .iter()
            .map(|b| {
                let seq = b.token_seq(model.vocab()).unwrap();
                let prior = model.seq_logprob(&ContextKey::Empty, &seq);
                (seq.ids().to_vec(), b.score - n as f64 * prior)
            })
            .collect();
        wrong.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        let want = exhaustive_posterior_ranking(&model, &ctxs, n, 4);
        let want_order: Vec<Vec<TokenId>> = want.iter().map(|(s, _)| s.ids().to_vec()).collect();
        let wrong_order: Vec<Vec<TokenId>> = wrong.into_iter().map(|(s, _)| s).collect();
        assert_ne!(wrong_order, want_order, "perturbation must change the ranking");
    }

    #[test]
    fn quick_oracle_pass() {
        let r = check_group_decode(5, 42);
        assert!(r.pass, "{}", r.detail);
        let r = check_single_context_degeneracy(10, 42);
        assert!(r.pass, "{}", r.detail);
    }
}
