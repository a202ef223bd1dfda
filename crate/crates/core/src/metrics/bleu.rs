use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Pooled corpus statistics behind a BLEU score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuStats {
    pub bleu: f64,
    /// Clipped precision for n = 1..=4.
    pub precisions: [f64; MAX_ORDER],
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU on a 0-100 scale, single reference per hypothesis, with
/// moses `multi-bleu.perl` semantics.
pub fn corpus_bleu<R: AsRef<str>, H: AsRef<str>>(references: &[Vec<R>], hypotheses: &[Vec<H>]) -> Result<f64> {
    Ok(corpus_bleu_stats(references, hypotheses)?.bleu)
}

pub fn corpus_bleu_stats<R: AsRef<str>, H: AsRef<str>>(references: &[Vec<R>], hypotheses: &[Vec<H>]) -> Result<BleuStats> {
    if references.len() != hypotheses.len() {
        return Err(Error::Validation(format!(
            "{} references but {} hypotheses",
            references.len(),
            hypotheses.len()
        )));
    }
    if references.is_empty() {
        return Err(Error::Validation("BLEU needs at least one sentence pair".into()));
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (r, h) in references.iter().zip(hypotheses) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let rc = ngram_counts(r, n);
            let hc = ngram_counts(h, n);
            totals[n - 1] += h.len().saturating_sub(n - 1);
            matches[n - 1] += hc.iter().map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0))).sum::<usize>();
        }
    }
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        if totals[n] > 0 {
            precisions[n] = matches[n] as f64 / totals[n] as f64;
        }
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    let bleu = if ref_len == 0 || precisions.contains(&0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * brevity_penalty * log_mean.exp()
    };
    Ok(BleuStats {
        bleu,
        precisions,
        matches,
        totals,
        brevity_penalty,
        hyp_len,
        ref_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn corpus(lines: &[&str]) -> Vec<Vec<String>> {
        lines.iter().map(|l| toks(l)).collect()
    }

    #[test]
    fn identical_is_exactly_100() {
        let r = corpus(&["the car is parked at home", "it will rain on monday in boston"]);
        assert_eq!(corpus_bleu(&r, &r).unwrap(), 100.0);
    }

    #[test]
    fn repeated_word_clipped() {
        let s = corpus_bleu_stats(&corpus(&["the cat sat"]), &corpus(&["the the the"])).unwrap();
        assert_eq!(s.matches[0], 1);
        assert_eq!(s.totals[0], 3);
        assert_eq!(s.matches[1], 0);
        assert_eq!(s.bleu, 0.0);
    }

    #[test]
    fn hand_computed_three_pairs() {
        let refs = corpus(&["a b c d e", "x y z w", "p q r s t u"]);
        let hyps = corpus(&["a b c d", "x y z w", "p q r s t v"]);
        // n=1: 4+4+5 = 13 of 4+4+6 = 14
        // n=2: 3+3+4 = 10 of 3+3+5 = 11
        // n=3: 2+2+3 = 7 of 2+2+4 = 8
        // n=4: 1+1+2 = 4 of 1+1+3 = 5
        // hyp 14 < ref 15 -> BP = exp(1 - 15/14)
        let expected = 100.0
            * (1.0f64 - 15.0 / 14.0).exp()
            * ((13.0f64 / 14.0).ln() + (10.0f64 / 11.0).ln() + (7.0f64 / 8.0).ln() + (4.0f64 / 5.0).ln()).exp().powf(0.25);
        let got = corpus_bleu(&refs, &hyps).unwrap();
        assert!((got - expected).abs() < 0.01, "{got} vs {expected}");
        assert!((got - 81.63).abs() < 0.01, "{got}");
    }

    #[test]
    fn short_hypothesis_penalized() {
        let s = corpus_bleu_stats(&corpus(&["a b c d e f g h"]), &corpus(&["a b c d e f"])).unwrap();
        assert!(s.brevity_penalty < 1.0);
        assert!((s.brevity_penalty - (1.0f64 - 8.0 / 6.0).exp()).abs() < 1e-15);
        assert!((s.bleu - 100.0 * s.brevity_penalty).abs() < 1e-9);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        assert!(corpus_bleu(&corpus(&["a"]), &corpus(&["a", "b"])).is_err());
        assert!(corpus_bleu::<String, String>(&[], &[]).is_err());
    }

    #[test]
    fn empty_hypotheses_score_zero() {
        assert_eq!(corpus_bleu(&corpus(&["a b c d"]), &[Vec::<String>::new()]).unwrap(), 0.0);
    }

    fn sentence() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 0..9)
            .prop_map(|v| v.into_iter().map(str::to_string).collect())
    }

    proptest! {
        #[test]
        fn permutation_invariant(pairs in prop::collection::vec((sentence(), sentence()), 1..8), rot in 0usize..8) {
            let (r, h): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
            let k = rot % pairs.len();
            let mut rr = r.clone();
            let mut hh = h.clone();
            rr.rotate_left(k);
            hh.rotate_left(k);
            let a = corpus_bleu(&r, &h).unwrap();
            let b = corpus_bleu(&rr, &hh).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!((0.0..=100.0).contains(&a));
        }

        #[test]
        fn truncation_keeps_penalty_at_most_one(refs in prop::collection::vec(sentence(), 1..6)) {
            let hyps: Vec<Vec<String>> = refs.iter().map(|r| r[..r.len().saturating_sub(1)].to_vec()).collect();
            let s = corpus_bleu_stats(&refs, &hyps).unwrap();
            prop_assert!(s.brevity_penalty <= 1.0);
        }
    }
}
