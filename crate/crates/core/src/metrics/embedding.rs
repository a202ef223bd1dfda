use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, Vocabulary};
use crate::jointembed::{cosine, EmbeddingMatrix};

/// Word vectors looked up by token string. Reserved and unknown tokens are
/// out of vocabulary.
#[derive(Debug, Clone, Copy)]
pub struct WordVectors<'a> {
    pub embeddings: &'a EmbeddingMatrix,
    pub vocab: &'a Vocabulary,
}

impl<'a> WordVectors<'a> {
    pub fn new(embeddings: &'a EmbeddingMatrix, vocab: &'a Vocabulary) -> Self {
        WordVectors { embeddings, vocab }
    }

    pub fn get(&self, token: &str) -> Option<&'a [f64]> {
        let id: TokenId = self.vocab.id(token)?;
        (!id.is_reserved()).then(|| self.embeddings.vector(id))
    }

    fn lookup<T: AsRef<str>>(&self, tokens: &[T]) -> Vec<&'a [f64]> {
        tokens.iter().filter_map(|t| self.get(t.as_ref())).collect()
    }
}

/// A sentence-level similarity. `all_oov` marks a pair where one side had no
/// in-vocabulary token; its value is then 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub value: f64,
    pub all_oov: bool,
}

impl SentenceScore {
    const OOV: SentenceScore = SentenceScore {
        value: 0.0,
        all_oov: true,
    };

    fn of(value: f64) -> Self {
        SentenceScore { value, all_oov: false }
    }
}

fn mean_vector(vs: &[&[f64]]) -> Vec<f64> {
    let mut out = vec![0.0; vs[0].len()];
    for v in vs {
        for (o, x) in out.iter_mut().zip(*v) {
            *o += x;
        }
    }
    let n = vs.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Per dimension, the value of largest magnitude; positive wins ties.
fn extrema_vector(vs: &[&[f64]]) -> Vec<f64> {
    (0..vs[0].len())
        .map(|k| {
            let max = vs.iter().map(|v| v[k]).fold(f64::NEG_INFINITY, f64::max);
            let min = vs.iter().map(|v| v[k]).fold(f64::INFINITY, f64::min);
            if max >= -min {
                max
            } else {
                min
            }
        })
        .collect()
}

fn with_vectors<R: AsRef<str>, H: AsRef<str>>(
    wv: &WordVectors,
    reference: &[R],
    hypothesis: &[H],
    f: impl FnOnce(&[&[f64]], &[&[f64]]) -> f64,
) -> SentenceScore {
    let r = wv.lookup(reference);
    let h = wv.lookup(hypothesis);
    if r.is_empty() || h.is_empty() {
        SentenceScore::OOV
    } else {
        SentenceScore::of(f(&r, &h))
    }
}

/// Cosine between the mean word vectors of the two sentences.
pub fn embedding_average<R: AsRef<str>, H: AsRef<str>>(wv: &WordVectors, reference: &[R], hypothesis: &[H]) -> SentenceScore {
    with_vectors(wv, reference, hypothesis, |r, h| cosine(&mean_vector(r), &mean_vector(h)))
}

/// Cosine between the per-dimension extrema vectors.
pub fn vector_extrema<R: AsRef<str>, H: AsRef<str>>(wv: &WordVectors, reference: &[R], hypothesis: &[H]) -> SentenceScore {
    with_vectors(wv, reference, hypothesis, |r, h| cosine(&extrema_vector(r), &extrema_vector(h)))
}

fn greedy_one_way(a: &[&[f64]], b: &[&[f64]]) -> f64 {
    a.iter()
        .map(|x| b.iter().map(|y| cosine(x, y)).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / a.len() as f64
}

/// Each word matched to its most similar word on the other side, averaged
/// over words and over both directions.
pub fn greedy_matching<R: AsRef<str>, H: AsRef<str>>(wv: &WordVectors, reference: &[R], hypothesis: &[H]) -> SentenceScore {
    with_vectors(wv, reference, hypothesis, |r, h| (greedy_one_way(r, h) + greedy_one_way(h, r)) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn setup(vectors: &[(&str, Vec<f64>)]) -> (EmbeddingMatrix, Vocabulary) {
        let vocab = Vocabulary::from_tokens(vectors.iter().map(|(t, _)| (t.to_string(), false))).unwrap();
        let d = vectors[0].1.len();
        let mut e = EmbeddingMatrix::zeros(vocab.len(), d);
        for (t, v) in vectors {
            e.row_mut(vocab.id(t).unwrap().index()).copy_from_slice(v);
        }
        (e, vocab)
    }

    fn s(text: &str) -> Vec<&str> {
        text.split_whitespace().collect()
    }

    #[test]
    fn identical_sentences_score_one() {
        let (e, v) = setup(&[("a", vec![1.0, 2.0, -1.0]), ("b", vec![0.5, -3.0, 0.2])]);
        let wv = WordVectors::new(&e, &v);
        for f in [embedding_average::<&str, &str>, vector_extrema, greedy_matching] {
            let sc = f(&wv, &s("a b a"), &s("a b a"));
            assert!((sc.value - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_means_score_zero() {
        let (e, v) = setup(&[("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0])]);
        let wv = WordVectors::new(&e, &v);
        assert!(embedding_average(&wv, &s("a"), &s("b")).value.abs() < 1e-15);
        assert!(greedy_matching(&wv, &s("a"), &s("b")).value.abs() < 1e-15);
    }

    #[test]
    fn two_word_average_by_hand() {
        let (e, v) = setup(&[("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0]), ("c", vec![1.0, 1.0])]);
        let wv = WordVectors::new(&e, &v);
        // mean(a, b) = (0.5, 0.5) is parallel to c; mean(a, a) = a is at 45 degrees
        assert!((embedding_average(&wv, &s("a b"), &s("c")).value - 1.0).abs() < 1e-12);
        assert!((embedding_average(&wv, &s("a a"), &s("c")).value - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn extrema_picks_largest_magnitude_per_dimension() {
        let (e, v) = setup(&[
            ("a", vec![3.0, 0.5]),
            ("b", vec![-1.0, -2.0]),
            ("c", vec![3.0, -2.0]),
        ]);
        let wv = WordVectors::new(&e, &v);
        // extrema(a, b) = (3, -2) = c
        assert!((vector_extrema(&wv, &s("a b"), &s("c")).value - 1.0).abs() < 1e-12);
        // singletons reduce to plain cosine
        let direct = cosine(e.vector(v.id("a").unwrap()), e.vector(v.id("b").unwrap()));
        assert!((vector_extrema(&wv, &s("a"), &s("b")).value - direct).abs() < 1e-15);
    }

    #[test]
    fn greedy_is_symmetrized_by_hand() {
        let (e, v) = setup(&[("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0]), ("c", vec![1.0, 1.0])]);
        let wv = WordVectors::new(&e, &v);
        // ref "a" vs hyp "a b": G(ref,hyp) = 1, G(hyp,ref) = (1 + 0) / 2
        let sc = greedy_matching(&wv, &s("a"), &s("a b"));
        assert!((sc.value - 0.75).abs() < 1e-15);
        let sc = greedy_matching(&wv, &s("a b"), &s("c"));
        let c45 = 0.5f64.sqrt();
        assert!((sc.value - (c45 + c45) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn oov_tokens_skipped_and_flagged() {
        let (e, v) = setup(&[("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0])]);
        let wv = WordVectors::new(&e, &v);
        let sc = embedding_average(&wv, &s("a zzz"), &s("a"));
        assert!((sc.value - 1.0).abs() < 1e-12 && !sc.all_oov);
        let sc = greedy_matching(&wv, &s("zzz <unk>"), &s("a"));
        assert_eq!(sc, SentenceScore::OOV);
    }

    fn vecs() -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 5)
    }

    proptest! {
        #[test]
        fn bounded_and_scale_invariant(
            vs in vecs(),
            r in prop::collection::vec(0usize..5, 1..6),
            h in prop::collection::vec(0usize..5, 1..6),
            scale in 0.01f64..100.0,
        ) {
            let names = ["a", "b", "c", "d", "e"];
            let table: Vec<(&str, Vec<f64>)> = names.iter().copied().zip(vs.iter().cloned()).collect();
            let (e, v) = setup(&table);
            let mut e2 = e.clone();
            e2.vectors.iter_mut().for_each(|x| *x *= scale);
            let rs: Vec<&str> = r.iter().map(|&i| names[i]).collect();
            let hs: Vec<&str> = h.iter().map(|&i| names[i]).collect();
            for f in [embedding_average::<&str, &str>, vector_extrema, greedy_matching] {
                let a = f(&WordVectors::new(&e, &v), &rs, &hs).value;
                let b = f(&WordVectors::new(&e2, &v), &rs, &hs).value;
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&a));
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
