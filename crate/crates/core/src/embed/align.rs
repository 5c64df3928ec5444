use crate::error::{Error, Result};
use crate::numeric::Tensor;

use super::set::EmbeddingSet;
use super::vocab::Vocabulary;

/// Small-sample embeddings on the common vocabulary. Rows of absent words are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SmallContext {
    pub set: EmbeddingSet,
    pub mask: Vec<bool>,
}

impl SmallContext {
    pub fn coverage(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aligned {
    pub a: EmbeddingSet,
    pub b: EmbeddingSet,
    pub small: Option<SmallContext>,
}

fn restrict(e: &EmbeddingSet, words: &[String], vocab: &Vocabulary) -> Result<EmbeddingSet> {
    let rows: Vec<usize> = words
        .iter()
        .map(|w| e.vocab.get(w).expect("word drawn from the intersection"))
        .collect();
    EmbeddingSet::new(vocab.clone(), e.matrix.gather_rows(&rows), e.meta.clone())
}

/// Restricts `a` and `b` to their common words (in `a`'s order). When `small`
/// is given it is laid out on the same words, with a mask of which it covers.
pub fn intersect_align(a: &EmbeddingSet, b: &EmbeddingSet, small: Option<&EmbeddingSet>) -> Result<Aligned> {
    let d = a.dim();
    if b.dim() != d || small.is_some_and(|c| c.dim() != d) {
        return Err(Error::Alignment(format!(
            "embedding dimensions differ: {} vs {}{}",
            d,
            b.dim(),
            small.map(|c| format!(" vs {}", c.dim())).unwrap_or_default()
        )));
    }
    let (words, counts): (Vec<String>, Vec<u64>) = a
        .words()
        .iter()
        .zip(a.vocab.counts())
        .filter(|(w, _)| b.vocab.contains(w))
        .map(|(w, &c)| (w.clone(), c))
        .unzip();
    if words.is_empty() {
        return Err(Error::Alignment("vocabularies have no word in common".into()));
    }
    let vocab = Vocabulary::new(words.clone(), counts)?;
    let aligned_a = restrict(a, &words, &vocab)?;
    let aligned_b = restrict(b, &words, &vocab)?;
    let small = small
        .map(|c| {
            let mut m = Tensor::zeros(words.len(), d);
            let mut mask = vec![false; words.len()];
            for (i, w) in words.iter().enumerate() {
                if let Some(row) = c.vector(w) {
                    m.row_mut(i).copy_from_slice(row);
                    mask[i] = true;
                }
            }
            EmbeddingSet::new(vocab.clone(), m, c.meta.clone()).map(|set| SmallContext { set, mask })
        })
        .transpose()?;
    Ok(Aligned {
        a: aligned_a,
        b: aligned_b,
        small,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::EmbeddingMeta;

    fn set(words: &[&str], dim: usize) -> EmbeddingSet {
        let vocab = Vocabulary::from_words(words.iter().map(|w| w.to_string()).collect()).unwrap();
        let m = Tensor::from_fn(words.len(), dim, |r, c| (words[r].len() * 10 + r * 3 + c) as f32);
        EmbeddingSet::new(vocab, m, EmbeddingMeta::default()).unwrap()
    }

    #[test]
    fn identical_inputs_pass_through() {
        let a = set(&["x", "yy", "zzz"], 4);
        let out = intersect_align(&a, &a, None).unwrap();
        assert_eq!(out.a, a);
        assert_eq!(out.b, a);
        assert!(out.small.is_none());
    }

    #[test]
    fn rows_follow_words() {
        let a = set(&["x", "yy", "zzz"], 2);
        let b = set(&["zzz", "q", "x"], 2);
        let out = intersect_align(&a, &b, None).unwrap();
        assert_eq!(out.a.words(), ["x", "zzz"]);
        assert_eq!(out.b.words(), ["x", "zzz"]);
        assert_eq!(out.b.matrix.row(0), b.vector("x").unwrap());
        assert_eq!(out.b.matrix.row(1), b.vector("zzz").unwrap());
    }

    #[test]
    fn small_set_mask() {
        let a = set(&["x", "yy", "zzz"], 2);
        let c = set(&["yy", "other"], 2);
        let out = intersect_align(&a, &a, Some(&c)).unwrap();
        let small = out.small.unwrap();
        assert_eq!(small.mask, vec![false, true, false]);
        assert_eq!(small.set.matrix.row(0), &[0.0, 0.0]);
        assert_eq!(small.set.matrix.row(1), c.vector("yy").unwrap());
        assert_eq!(small.coverage(), 1);
    }

    #[test]
    fn disjoint_or_mismatched_dims_fail() {
        let a = set(&["x"], 2);
        let b = set(&["y"], 2);
        assert!(matches!(intersect_align(&a, &b, None), Err(Error::Alignment(_))));
        let c = set(&["x"], 3);
        assert!(matches!(intersect_align(&a, &c, None), Err(Error::Alignment(_))));
    }
}
