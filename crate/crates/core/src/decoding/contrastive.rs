//! Contrastive decoding (expert minus amateur) and contrastive search
//! (confidence minus degeneration penalty).

use super::sampling::{argmax, top_k_support};
use super::trace::{CandidateTrace, StepTrace};
use crate::error::{Error, Result};
use crate::lm::{check_context, LanguageModel, TokenId};

/// A selected token together with the step diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Choice {
    pub token: TokenId,
    pub trace: StepTrace,
}

/// Tokens whose expert probability is at least `alpha` times the expert
/// maximum, ascending by id. Always contains the expert argmax.
pub fn cd_candidate_set(expert_dist: &[f64], alpha: f64) -> Vec<TokenId> {
    let max = expert_dist[argmax(expert_dist) as usize];
    let threshold = alpha * max;
    expert_dist
        .iter()
        .enumerate()
        .filter(|(_, p)| **p >= threshold)
        .map(|(i, _)| i as TokenId)
        .collect()
}

/// Log-probabilities after dividing log-probabilities by `temperature` and
/// renormalizing. A temperature of exactly 1 returns `ln p` untouched.
pub fn temperature_log_probs(dist: &[f64], temperature: f64) -> Vec<f64> {
    let logs: Vec<f64> = dist.iter().map(|p| p.ln()).collect();
    if temperature == 1.0 {
        return logs;
    }
    let scaled: Vec<f64> = logs.iter().map(|l| l / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scaled.into_iter().map(|s| s - lse).collect()
}

fn check_unit(name: &str, value: f64, lower_inclusive: bool) -> Result<()> {
    let lower_ok = if lower_inclusive {
        value >= 0.0
    } else {
        value > 0.0
    };
    if lower_ok && value <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} out of range: {value}")))
    }
}

/// Contrastive-decoding selection over explicit distributions.
///
/// Maximizes `ln p_exp(v) - ln p_ama(v; temperature)` over
/// [`cd_candidate_set`]. A zero amateur probability makes the score `+inf`;
/// such candidates are flagged in the trace.
pub fn cd_select(
    expert_dist: &[f64],
    amateur_dist: &[f64],
    alpha: f64,
    amateur_temperature: f64,
) -> Result<Choice> {
    check_unit("contrastive decoding alpha", alpha, false)?;
    if !(amateur_temperature > 0.0 && amateur_temperature.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "amateur temperature must be positive, got {amateur_temperature}"
        )));
    }
    if expert_dist.is_empty() || expert_dist.len() != amateur_dist.len() {
        return Err(Error::InvalidInput(format!(
            "expert and amateur vocabularies differ ({} vs {})",
            expert_dist.len(),
            amateur_dist.len()
        )));
    }
    let amateur_logs = temperature_log_probs(amateur_dist, amateur_temperature);
    let mut best: Option<(TokenId, f64)> = None;
    let mut candidates = Vec::new();
    for v in cd_candidate_set(expert_dist, alpha) {
        let expert_lp = expert_dist[v as usize].ln();
        let amateur_lp = amateur_logs[v as usize];
        let score = expert_lp - amateur_lp;
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((v, score));
        }
        candidates.push(CandidateTrace {
            expert_logprob: Some(expert_lp),
            amateur_logprob: Some(amateur_lp),
            score: Some(score),
            flagged: amateur_lp == f64::NEG_INFINITY,
            ..CandidateTrace::probability(v, expert_dist[v as usize])
        });
    }
    let (token, _) = best.expect("candidate set contains the expert argmax");
    Ok(Choice {
        token,
        trace: StepTrace {
            position: 0,
            candidates,
            chosen: token,
        },
    })
}

/// One contrastive-decoding step: queries both models on `context`.
pub fn cd_step(
    expert: &dyn LanguageModel,
    amateur: &dyn LanguageModel,
    context: &[TokenId],
    alpha: f64,
    amateur_temperature: f64,
) -> Result<Choice> {
    let (ev, av) = (expert.vocab(), amateur.vocab());
    if ev.size() != av.size() {
        return Err(Error::InvalidInput(format!(
            "expert vocabulary size {} differs from amateur {}",
            ev.size(),
            av.size()
        )));
    }
    check_context(&ev, context)?;
    let expert_dist = expert.next_distribution(context)?;
    let amateur_dist = amateur.next_distribution(context)?;
    cd_select(&expert_dist, &amateur_dist, alpha, amateur_temperature)
}

/// Cosine similarity, or `None` when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Maximum cosine similarity between `candidate` and each context
/// representation. Zero-norm pairs count as similarity 0 and set the flag.
pub fn degeneration_penalty(candidate: &[f64], context_reprs: &[Vec<f64>]) -> (f64, bool) {
    let mut flagged = false;
    let penalty = context_reprs
        .iter()
        .map(|h| {
            cosine(candidate, h).unwrap_or_else(|| {
                flagged = true;
                0.0
            })
        })
        .fold(f64::NEG_INFINITY, f64::max);
    (penalty, flagged)
}

/// Contrastive-search selection over explicit inputs.
///
/// `candidate_reprs[i]` is the representation of `top_k_support(dist, k)[i]`
/// appended to the context. Maximizes
/// `(1 - alpha) * p(v) - alpha * penalty(v)`, lowest id on ties.
pub fn cs_select(
    dist: &[f64],
    context_reprs: &[Vec<f64>],
    candidates: &[TokenId],
    candidate_reprs: &[Vec<f64>],
    alpha: f64,
) -> Result<Choice> {
    check_unit("contrastive search alpha", alpha, true)?;
    if context_reprs.is_empty() {
        return Err(Error::EmptyContext);
    }
    if candidates.is_empty() || candidates.len() != candidate_reprs.len() {
        return Err(Error::InvalidInput(
            "need exactly one representation per candidate".into(),
        ));
    }
    let mut best: Option<(TokenId, f64)> = None;
    let mut traces = Vec::with_capacity(candidates.len());
    for (&v, h_v) in candidates.iter().zip(candidate_reprs) {
        let confidence = dist[v as usize];
        let (penalty, flagged) = degeneration_penalty(h_v, context_reprs);
        let score = (1.0 - alpha) * confidence - alpha * penalty;
        let better = match best {
            None => true,
            Some((b, s)) => score > s || (score == s && v < b),
        };
        if better {
            best = Some((v, score));
        }
        traces.push(CandidateTrace {
            penalty: Some(penalty),
            score: Some(score),
            flagged,
            ..CandidateTrace::probability(v, confidence)
        });
    }
    let (token, _) = best.expect("candidates are non-empty");
    Ok(Choice {
        token,
        trace: StepTrace {
            position: 0,
            candidates: traces,
            chosen: token,
        },
    })
}

/// One contrastive-search step over the top-`k` candidates of `model`.
pub fn cs_step(
    model: &dyn LanguageModel,
    context: &[TokenId],
    k: usize,
    alpha: f64,
) -> Result<Choice> {
    if k == 0 {
        return Err(Error::InvalidInput(
            "contrastive search needs k >= 1".into(),
        ));
    }
    check_unit("contrastive search alpha", alpha, true)?;
    check_context(&model.vocab(), context)?;
    let (dist, context_reprs) = model.step(context)?.into_parts();
    let candidates = top_k_support(&dist, k);
    let candidate_reprs = model.candidate_representations(context, &candidates)?;
    cs_select(&dist, &context_reprs, &candidates, &candidate_reprs, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{TableModel, Vocabulary};

    fn table(probs: Vec<f64>, vectors: Vec<Vec<f64>>) -> TableModel {
        let vocab = Vocabulary::new(probs.len(), None).unwrap();
        TableModel::unconditional(vocab, probs, vectors).unwrap()
    }

    fn constant_vectors(n: usize) -> Vec<Vec<f64>> {
        vec![vec![1.0, 2.0]; n]
    }

    #[test]
    fn candidate_set_examples() {
        assert_eq!(cd_candidate_set(&[0.7, 0.2, 0.1], 0.5), vec![0]);
        assert_eq!(cd_candidate_set(&[0.4, 0.4, 0.2], 1.0), vec![0, 1]);
        assert_eq!(
            cd_candidate_set(&[0.5, 0.3, 0.15, 0.05], 0.1),
            vec![0, 1, 2, 3]
        );
    }

    #[test]
    fn cd_hand_example() {
        // Candidates {0, 1}; ln .5 - ln .6 = -0.182 < ln .4 - ln .2 = 0.693.
        let c = cd_select(&[0.5, 0.4, 0.1], &[0.6, 0.2, 0.2], 0.5, 1.0).unwrap();
        assert_eq!(c.token, 1);
        assert_eq!(c.trace.candidates.len(), 2);
        assert!(c.trace.contains_chosen());
    }

    #[test]
    fn cd_singleton_and_uniform_amateur() {
        let c = cd_select(&[0.7, 0.2, 0.1], &[0.01, 0.01, 0.98], 0.5, 0.5).unwrap();
        assert_eq!(c.token, 0);
        let c = cd_select(&[0.3, 0.45, 0.25], &[1.0 / 3.0; 3], 0.1, 1.0).unwrap();
        assert_eq!(c.token, 1);
    }

    #[test]
    fn cd_identical_models_tie_to_lowest_id() {
        let d = [0.2, 0.35, 0.1, 0.35];
        let c = cd_select(&d, &d, 0.5, 1.0).unwrap();
        assert!(c.trace.candidates.iter().all(|t| t.score == Some(0.0)));
        assert_eq!(c.token, 0);
    }

    #[test]
    fn cd_zero_amateur_probability_flagged() {
        let c = cd_select(&[0.6, 0.4], &[1.0, 0.0], 0.5, 0.5).unwrap();
        assert_eq!(c.token, 1);
        assert!(c.trace.any_flagged());
        assert_eq!(c.trace.candidates[1].score, Some(f64::INFINITY));
    }

    #[test]
    fn cd_rejects_bad_parameters() {
        assert!(cd_select(&[0.5, 0.5], &[0.5, 0.5], 0.0, 1.0).is_err());
        assert!(cd_select(&[0.5, 0.5], &[0.5, 0.5], 0.5, 0.0).is_err());
        assert!(cd_select(&[0.5, 0.5], &[1.0], 0.5, 1.0).is_err());
    }

    #[test]
    fn temperature_sharpens() {
        let logs = temperature_log_probs(&[0.6, 0.3, 0.1], 0.5);
        // p^2 renormalized: .36, .09, .01 over .46.
        let expect = [0.36 / 0.46, 0.09 / 0.46, 0.01 / 0.46];
        for (l, e) in logs.iter().zip(expect) {
            assert!((l.exp() - e).abs() < 1e-12);
        }
        let t = temperature_log_probs(&[0.5, 0.0, 0.5], 2.0);
        assert_eq!(t[1], f64::NEG_INFINITY);
    }

    #[test]
    fn cosine_edge_cases() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 2.0]), Some(0.0));
        assert_eq!(cosine(&[1.0, 1.0], &[3.0, 3.0]), Some(1.0));
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), None);
        let (p, flagged) = degeneration_penalty(&[0.0, 0.0], &[vec![1.0, 0.0]]);
        assert_eq!((p, flagged), (0.0, true));
    }

    #[test]
    fn cs_alpha_zero_is_greedy() {
        let m = table(vec![0.1, 0.5, 0.4], constant_vectors(3));
        assert_eq!(cs_step(&m, &[0], 3, 0.0).unwrap().token, 1);
    }

    #[test]
    fn cs_k_one_returns_top_token() {
        let m = table(
            vec![0.1, 0.5, 0.4],
            vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
        );
        for alpha in [0.0, 0.5, 1.0] {
            assert_eq!(cs_step(&m, &[1], 1, alpha).unwrap().token, 1);
        }
    }

    #[test]
    fn cs_penalty_avoids_repetition() {
        // Token 1 is most likely but identical in representation to the context.
        let vectors = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let m = table(vec![0.1, 0.5, 0.4], vectors);
        let c = cs_step(&m, &[0], 2, 0.6).unwrap();
        // token 1: .4*.5 - .6*1 = -0.4 ; token 2: .4*.4 - .6*0 = 0.16
        assert_eq!(c.token, 2);
        let scores: Vec<f64> = c
            .trace
            .candidates
            .iter()
            .map(|t| t.score.unwrap())
            .collect();
        assert!((scores[0] + 0.4).abs() < 1e-12 && (scores[1] - 0.16).abs() < 1e-12);
    }

    #[test]
    fn cs_errors() {
        let m = table(vec![0.5, 0.5], constant_vectors(2));
        assert!(matches!(cs_step(&m, &[], 2, 0.5), Err(Error::EmptyContext)));
        assert!(cs_step(&m, &[0], 0, 0.5).is_err());
        assert!(cs_step(&m, &[0], 2, 1.5).is_err());
        assert!(cs_step(&m, &[2], 2, 0.5).is_err());
    }
}
