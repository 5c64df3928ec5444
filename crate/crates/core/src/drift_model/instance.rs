use crate::embed::{Aligned, EmbeddingSet, SmallContext};
use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// One example for the drift predictors: embeddings at `t`, optional
/// small-sample embeddings at `t+1` with a coverage mask, and (outside pure
/// inference) the full embeddings at `t+1`. All rows follow `words`.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftInstance {
    pub words: Vec<String>,
    pub e1: Tensor<f32>,
    pub small: Option<(Tensor<f32>, Vec<bool>)>,
    pub target: Option<Tensor<f32>>,
}

impl DriftInstance {
    pub fn new(
        words: Vec<String>,
        e1: Tensor<f32>,
        small: Option<(Tensor<f32>, Vec<bool>)>,
        target: Option<Tensor<f32>>,
    ) -> Result<Self> {
        let inst = Self {
            words,
            e1,
            small,
            target,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn from_aligned(aligned: &Aligned) -> Result<Self> {
        Self::new(
            aligned.a.words().to_vec(),
            aligned.a.matrix.clone(),
            aligned.small.as_ref().map(|s| (s.set.matrix.clone(), s.mask.clone())),
            Some(aligned.b.matrix.clone()),
        )
    }

    /// Inference-time instance without a target.
    pub fn for_prediction(e1: &EmbeddingSet, small: Option<&SmallContext>) -> Result<Self> {
        if let Some(s) = small {
            if s.set.words() != e1.words() {
                return Err(Error::Alignment(
                    "small-context embeddings are not aligned to the input vocabulary".into(),
                ));
            }
        }
        Self::new(
            e1.words().to_vec(),
            e1.matrix.clone(),
            small.map(|s| (s.set.matrix.clone(), s.mask.clone())),
            None,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.words.len();
        let d = self.e1.cols();
        if self.e1.rows() != n {
            return Err(Error::Alignment(format!("{} e1 rows for {n} words", self.e1.rows())));
        }
        if let Some((s, mask)) = &self.small {
            if s.shape() != [n, d] || mask.len() != n {
                return Err(Error::Alignment("small-context shape or mask length mismatch".into()));
            }
        }
        if let Some(t) = &self.target {
            if t.shape() != [n, d] {
                return Err(Error::Alignment(format!(
                    "target shape {:?} does not match e1 {:?}",
                    t.shape(),
                    self.e1.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.e1.cols()
    }

    pub fn target(&self) -> Result<&Tensor<f32>> {
        self.target
            .as_ref()
            .ok_or_else(|| Error::Data("instance has no target embeddings".into()))
    }

    /// Row `i` of the result is row `perm[i]` of `self`, in every component.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            words: perm.iter().map(|&p| self.words[p].clone()).collect(),
            e1: self.e1.gather_rows(perm),
            small: self
                .small
                .as_ref()
                .map(|(s, m)| (s.gather_rows(perm), perm.iter().map(|&p| m[p]).collect())),
            target: self.target.as_ref().map(|t| t.gather_rows(perm)),
        }
    }

    pub fn without_small(&self) -> Self {
        Self {
            small: None,
            ..self.clone()
        }
    }
}
