use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{SparseVector, Vocabulary};
use crate::textprep::TokenSeq;

pub fn count_vectorize(tokens: &TokenSeq, vocab: &Vocabulary) -> SparseVector {
    let pairs = tokens.iter().filter_map(|t| vocab.get(t)).map(|i| (i, 1.0)).collect();
    SparseVector::from_pairs(vocab.len(), pairs).expect("vocabulary indices are in range")
}

/// ln((1 + N) / (1 + df)) + 1
pub fn smoothed_idf(n_docs: usize, df: u64) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfIdfModel {
    pub vocab: Vocabulary,
    pub idf: Vec<f64>,
}

/// Fits idf weights from document frequencies over `docs`.
pub fn fit_tfidf(docs: &[TokenSeq], vocab: &Vocabulary) -> TfIdfModel {
    let mut df = vec![0u64; vocab.len()];
    for doc in docs {
        let present: HashSet<usize> = doc.iter().filter_map(|t| vocab.get(t)).collect();
        for i in present {
            df[i] += 1;
        }
    }
    TfIdfModel {
        vocab: vocab.clone(),
        idf: df.iter().map(|&d| smoothed_idf(docs.len(), d)).collect(),
    }
}

/// Raw counts scaled by idf, then L2-normalized.
pub fn tfidf_transform(tokens: &TokenSeq, model: &TfIdfModel) -> SparseVector {
    let counts = count_vectorize(tokens, &model.vocab);
    let scaled: Vec<(usize, f64)> = counts.entries().iter().map(|&(i, c)| (i, c * model.idf[i])).collect();
    let norm = scaled.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    let normalized = if norm > 0.0 {
        scaled.into_iter().map(|(i, v)| (i, v / norm)).collect()
    } else {
        Vec::new()
    };
    SparseVector::from_pairs(model.vocab.len(), normalized).expect("indices in range")
}

#[cfg(test)]
mod tests {
    use super::super::build_vocab;
    use super::*;
    use proptest::prelude::*;

    fn seq(words: &[&str]) -> TokenSeq {
        words.iter().collect()
    }

    #[test]
    fn count_examples() {
        let vocab = build_vocab(&[seq(&["ভাল", "ভাল", "না"])], 1).unwrap();
        assert_eq!(vocab.get("ভাল"), Some(0));
        let v = count_vectorize(&seq(&["ভাল", "ভাল", "না"]), &vocab);
        assert_eq!(v.entries(), &[(0, 2.0), (1, 1.0)]);
        assert!(count_vectorize(&seq(&[]), &vocab).is_zero());
        assert!(count_vectorize(&seq(&["x", "y"]), &vocab).is_zero());
    }

    #[test]
    fn idf_values() {
        // ln(3/2) + 1 evaluated independently.
        assert!((smoothed_idf(2, 1) - 1.405_465_108_108_164_4).abs() < 1e-12);
        assert_eq!(smoothed_idf(7, 7), 1.0);
        for df in 0..10 {
            assert!(smoothed_idf(10, df) > smoothed_idf(10, df + 1));
        }
    }

    #[test]
    fn tfidf_examples() {
        let docs = vec![seq(&["a", "a", "b"]), seq(&["b"])];
        let vocab = build_vocab(&docs, 1).unwrap();
        let model = fit_tfidf(&docs, &vocab);
        let (ia, ib) = (vocab.get("a").unwrap(), vocab.get("b").unwrap());
        assert!((model.idf[ia] - 1.405_465_108_108_164_4).abs() < 1e-12);
        assert_eq!(model.idf[ib], 1.0);

        let one = tfidf_transform(&seq(&["b"]), &model);
        assert_eq!(one.entries(), &[(ib, 1.0)]);

        // counts [2, 1] with idf [1.405465, 1]: pre-norm [2.810930, 1.0].
        let v = tfidf_transform(&docs[0], &model).to_dense();
        let pre: [f64; 2] = [2.0 * 1.405_465_108_108_164_4, 1.0];
        let n = (pre[0] * pre[0] + pre[1] * pre[1]).sqrt();
        assert!((v[ia] - pre[0] / n).abs() < 1e-12);
        assert!((v[ib] - pre[1] / n).abs() < 1e-12);

        assert!(tfidf_transform(&seq(&["zz"]), &model).is_zero());
    }

    proptest! {
        #[test]
        fn count_sum_and_unit_norm(words in proptest::collection::vec("[abcxyz]", 0..20)) {
            let docs = vec![seq(&["a", "b", "c"]), seq(&["a"])];
            let vocab = build_vocab(&docs, 1).unwrap();
            let model = fit_tfidf(&docs, &vocab);
            let t: TokenSeq = words.iter().collect();
            let counts = count_vectorize(&t, &vocab);
            let in_vocab = t.iter().filter(|w| vocab.get(w).is_some()).count();
            prop_assert_eq!(counts.entries().iter().map(|e| e.1).sum::<f64>(), in_vocab as f64);
            let v = tfidf_transform(&t, &model);
            prop_assert!(v.is_zero() || (v.norm() - 1.0).abs() < 1e-12);
        }
    }
}
