//! Semantic encoders `E: R^D → R^m`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{matvec, matvec_t};
use crate::rng::{chain_rng, std_normal};

/// `z = M x + b` with row-major `M` (m × D).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEncoder {
    rows: usize,
    cols: usize,
    matrix: Vec<f64>,
    bias: Option<Vec<f64>>,
}

impl LinearEncoder {
    pub fn new(matrix: Vec<f64>, rows: usize, cols: usize, bias: Option<Vec<f64>>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("encoder", "needs at least one row and column"));
        }
        check_dim("encoder matrix", rows * cols, matrix.len())?;
        if let Some(b) = &bias {
            check_dim("encoder bias", rows, b.len())?;
        }
        let finite = matrix.iter().chain(bias.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("encoder", "entries must be finite"));
        }
        Ok(LinearEncoder {
            rows,
            cols,
            matrix,
            bias,
        })
    }

    /// Builds from a list of rows.
    pub fn from_rows(rows: &[Vec<f64>], bias: Option<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("encoder", "rows have different lengths"));
        }
        Self::new(rows.concat(), rows.len(), cols, bias)
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = vec![0.0; dim * dim];
        for i in 0..dim {
            m[i * dim + i] = 1.0;
        }
        LinearEncoder {
            rows: dim,
            cols: dim,
            matrix: m,
            bias: None,
        }
    }

    /// Gaussian random matrix with entries `N(0, 1/D)`.
    pub fn random(rows: usize, cols: usize, seed: u64) -> Result<Self> {
        let mut rng = chain_rng(seed, 0);
        let sd = 1.0 / (cols as f64).sqrt();
        let m = (0..rows * cols).map(|_| sd * std_normal(&mut rng)).collect();
        Self::new(m, rows, cols, None)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("encoder input", self.cols, x.len())?;
        Ok(self.apply(x))
    }

    pub(crate) fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut z = matvec(&self.matrix, self.rows, x);
        if let Some(b) = &self.bias {
            for (zi, bi) in z.iter_mut().zip(b) {
                *zi += bi;
            }
        }
        z
    }

    /// `Mᵀ u`.
    pub fn adjoint(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_dim("adjoint input", self.rows, u.len())?;
        Ok(matvec_t(&self.matrix, self.cols, u))
    }
}

/// One-hidden-layer tanh network `z = W₂ tanh(W₁ x + b₁) + b₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpEncoder {
    input: usize,
    hidden: usize,
    output: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl MlpEncoder {
    pub fn random(input: usize, hidden: usize, output: usize, seed: u64) -> Result<Self> {
        if input == 0 || hidden == 0 || output == 0 {
            return Err(Error::invalid("encoder", "layer widths must be positive"));
        }
        let mut rng = chain_rng(seed, 0);
        let mut draw = |n: usize, fan_in: usize| -> Vec<f64> {
            let sd = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| sd * std_normal(&mut rng)).collect()
        };
        let w1 = draw(hidden * input, input);
        let w2 = draw(output * hidden, hidden);
        Ok(MlpEncoder {
            input,
            hidden,
            output,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; output],
        })
    }

    pub(crate) fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut h = matvec(&self.w1, self.hidden, x);
        for (hi, bi) in h.iter_mut().zip(&self.b1) {
            *hi = (*hi + bi).tanh();
        }
        let mut z = matvec(&self.w2, self.output, &h);
        for (zi, bi) in z.iter_mut().zip(&self.b2) {
            *zi += bi;
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    Linear(LinearEncoder),
    Mlp(MlpEncoder),
}

impl Encoder {
    pub fn in_dim(&self) -> usize {
        match self {
            Encoder::Linear(e) => e.cols,
            Encoder::Mlp(e) => e.input,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Encoder::Linear(e) => e.rows,
            Encoder::Mlp(e) => e.output,
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Encoder::Linear(_))
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("encoder input", self.in_dim(), x.len())?;
        Ok(self.apply(x))
    }

    pub(crate) fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Encoder::Linear(e) => e.apply(x),
            Encoder::Mlp(e) => e.apply(x),
        }
    }
}

impl From<LinearEncoder> for Encoder {
    fn from(e: LinearEncoder) -> Self {
        Encoder::Linear(e)
    }
}

impl From<MlpEncoder> for Encoder {
    fn from(e: MlpEncoder) -> Self {
        Encoder::Mlp(e)
    }
}

/// Serializable encoder description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EncoderSpec {
    Identity,
    Linear {
        rows: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<Vec<f64>>,
    },
    RandomLinear { m: usize, seed: u64 },
    Mlp { m: usize, hidden: usize, seed: u64 },
}

impl EncoderSpec {
    pub fn build(&self, dim: usize) -> Result<Encoder> {
        Ok(match self {
            EncoderSpec::Identity => LinearEncoder::identity(dim).into(),
            EncoderSpec::Linear { rows, bias } => {
                let e = LinearEncoder::from_rows(rows, bias.clone())?;
                check_dim("encoder columns", dim, e.cols())?;
                e.into()
            }
            EncoderSpec::RandomLinear { m, seed } => LinearEncoder::random(*m, dim, *seed)?.into(),
            EncoderSpec::Mlp { m, hidden, seed } => MlpEncoder::random(dim, *hidden, *m, *seed)?.into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_selector() {
        assert_eq!(LinearEncoder::identity(3).encode(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        let sel = LinearEncoder::from_rows(&[vec![1.0, 0.0]], None).unwrap();
        assert_eq!(sel.encode(&[3.0, 7.0]).unwrap(), vec![3.0]);
        assert!(sel.encode(&[3.0]).is_err());
    }

    #[test]
    fn mlp_is_deterministic() {
        let a = MlpEncoder::random(2, 8, 3, 4).unwrap();
        assert_eq!(a.apply(&[0.1, 0.2]), MlpEncoder::random(2, 8, 3, 4).unwrap().apply(&[0.1, 0.2]));
    }
}
