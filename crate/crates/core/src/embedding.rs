//! Fourier positional embedding of 2-D coordinates and softmax-gated fusion
//! of hidden states.

use nalgebra::{DMatrix, DVector, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_SIGMA: f64 = 10.0;
pub const DEFAULT_FREQUENCIES: usize = 32;

/// `PE(x) = W·[x ‖ sin(2πBᵀx) ‖ cos(2πBᵀx)] + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierPE {
    b_freq: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl FourierPE {
    /// Explicit frequencies (2×K), projection (D×(2+2K)) and bias (D).
    pub fn new(b_freq: DMatrix<f64>, w: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        let k = b_freq.ncols();
        if b_freq.nrows() != 2 || k == 0 {
            return Err(Error::Structural(format!(
                "frequency matrix must be 2xK with K ≥ 1, got {}x{}",
                b_freq.nrows(),
                k
            )));
        }
        if w.ncols() != 2 + 2 * k || w.nrows() != bias.len() {
            return Err(Error::Structural(format!(
                "projection {}x{} and bias {} do not fit {} features",
                w.nrows(),
                w.ncols(),
                bias.len(),
                2 + 2 * k
            )));
        }
        Ok(Self { b_freq, w, bias })
    }

    /// Gaussian frequencies with standard deviation `sigma`, identity
    /// projection and zero bias.
    pub fn seeded(k: usize, sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Configuration(format!("bandwidth must be positive and finite, got {sigma}")));
        }
        let normal = Normal::new(0.0, sigma).expect("valid bandwidth");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b_freq = DMatrix::from_fn(2, k, |_, _| normal.sample(&mut rng));
        let d = 2 + 2 * k;
        Self::new(b_freq, DMatrix::identity(d, d), DVector::zeros(d))
    }

    pub fn frequencies(&self) -> &DMatrix<f64> {
        &self.b_freq
    }

    pub fn k(&self) -> usize {
        self.b_freq.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }

    /// Feature vector `[x ‖ sin(2πBᵀx) ‖ cos(2πBᵀx)]`.
    pub fn features(&self, x: &Vector2<f64>) -> Result<DVector<f64>> {
        if !(0.0..=1.0).contains(&x.x) || !(0.0..=1.0).contains(&x.y) {
            return Err(Error::Validation(format!("position ({}, {}) outside the unit square", x.x, x.y)));
        }
        let k = self.k();
        let proj = self.b_freq.transpose() * DVector::from_column_slice(x.as_slice());
        let mut f = DVector::zeros(2 + 2 * k);
        f[0] = x.x;
        f[1] = x.y;
        for j in 0..k {
            let a = std::f64::consts::TAU * proj[j];
            f[2 + j] = a.sin();
            f[2 + k + j] = a.cos();
        }
        Ok(f)
    }
}

pub fn fourier_pe(x: &Vector2<f64>, pe: &FourierPE) -> Result<DVector<f64>> {
    Ok(&pe.w * pe.features(x)? + &pe.bias)
}

/// `Σᵢ softmax(logits)ᵢ · statesᵢ`.
pub fn gated_fusion(states: &[DVector<f64>], gate_logits: &[f64]) -> Result<DVector<f64>> {
    if states.is_empty() || states.len() != gate_logits.len() {
        return Err(Error::Structural(format!(
            "{} states vs {} gate logits",
            states.len(),
            gate_logits.len()
        )));
    }
    let dim = states[0].len();
    if states.iter().any(|s| s.len() != dim) {
        return Err(Error::Structural("hidden states differ in dimension".into()));
    }
    let m = gate_logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = gate_logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    let mut out = DVector::zeros(dim);
    for (s, w) in states.iter().zip(&e) {
        out += s * (w / z);
    }
    Ok(out)
}
