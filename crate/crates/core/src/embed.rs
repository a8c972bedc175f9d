//! One-hidden-layer feedforward embedder projecting raw features onto the
//! unit hypersphere: `x = normalize(W2 · tanh(W1 · raw + b1) + b2)`.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ZERO_NORM;
use crate::scalar::{dot, norm, Scalar};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    /// Linear pass-through, mostly for tests.
    Identity,
}

impl Activation {
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    fn slope<T: Scalar>(self, out: T) -> T {
        match self {
            Activation::Tanh => T::one() - out * out,
            Activation::Identity => T::one(),
        }
    }
}

/// Weights are row-major: `w1` is `hidden × raw_dim`, `w2` is `dim × hidden`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderParams<T> {
    pub raw_dim: usize,
    pub hidden: usize,
    pub dim: usize,
    #[serde(default)]
    pub activation: Activation,
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: Vec<T>,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EmbedTrace<T> {
    raw: Vec<T>,
    act: Vec<T>,
    pre_norm: T,
    /// The unit-norm embedding.
    pub output: Vec<T>,
}

impl<T: Scalar> EmbedderParams<T> {
    pub fn zeros(raw_dim: usize, hidden: usize, dim: usize) -> Self {
        Self {
            raw_dim,
            hidden,
            dim,
            activation: Activation::Tanh,
            w1: vec![T::zero(); hidden * raw_dim],
            b1: vec![T::zero(); hidden],
            w2: vec![T::zero(); dim * hidden],
            b2: vec![T::zero(); dim],
        }
    }

    /// Uniform weights in `±sqrt(3 / fan_in)`, zero biases.
    pub fn init<R: Rng + ?Sized>(raw_dim: usize, hidden: usize, dim: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(raw_dim, hidden, dim);
        let draw = |fan_in: usize, out: &mut [T], rng: &mut R| {
            let bound = (3.0 / fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for w in out {
                *w = T::lit(dist.sample(rng));
            }
        };
        draw(raw_dim, &mut p.w1, rng);
        draw(hidden, &mut p.w2, rng);
        p
    }

    pub fn validate(&self) -> Result<()> {
        let (r, h, d) = (self.raw_dim, self.hidden, self.dim);
        if self.w1.len() != h * r || self.b1.len() != h || self.w2.len() != d * h || self.b2.len() != d {
            return Err(Error::ShapeMismatch(format!("embedder shapes inconsistent with {r}→{h}→{d}")));
        }
        if self.tensors().iter().any(|t| t.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidConfig("embedder has non-finite weights".into()));
        }
        Ok(())
    }

    pub fn tensors(&self) -> [&[T]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut [T]; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn forward(&self, raw: &[T]) -> Result<EmbedTrace<T>> {
        if raw.len() != self.raw_dim {
            return Err(Error::LengthMismatch { expected: self.raw_dim, got: raw.len() });
        }
        let act: Vec<T> = self
            .w1
            .chunks(self.raw_dim)
            .zip(&self.b1)
            .map(|(row, &b)| self.activation.apply(dot(row, raw) + b))
            .collect();
        let z: Vec<T> = self.w2.chunks(self.hidden).zip(&self.b2).map(|(row, &b)| dot(row, &act) + b).collect();
        let n = norm(&z);
        if !(n > T::lit(ZERO_NORM)) {
            return Err(Error::ZeroVector { norm: n.to_f64_lossy() });
        }
        let output = z.iter().map(|&v| v / n).collect();
        Ok(EmbedTrace { raw: raw.to_vec(), act, pre_norm: n, output })
    }

    /// Adds `∂L/∂params` into `grads` given `∂L/∂x` at the unit-norm output.
    pub fn backward(&self, trace: &EmbedTrace<T>, grad_x: &[T], grads: &mut EmbedderParams<T>) {
        let x = &trace.output;
        // through x = z/|z|: dz = (g - x<x,g>)/|z|
        let proj = dot(x, grad_x);
        let dz: Vec<T> = grad_x.iter().zip(x).map(|(&g, &xi)| (g - xi * proj) / trace.pre_norm).collect();

        let mut dact = vec![T::zero(); self.hidden];
        for (i, &dzi) in dz.iter().enumerate() {
            grads.b2[i] = grads.b2[i] + dzi;
            let row = &self.w2[i * self.hidden..(i + 1) * self.hidden];
            let grow = &mut grads.w2[i * self.hidden..(i + 1) * self.hidden];
            for j in 0..self.hidden {
                grow[j] = grow[j] + dzi * trace.act[j];
                dact[j] = dact[j] + dzi * row[j];
            }
        }
        for (j, &a) in trace.act.iter().enumerate() {
            let dpre = dact[j] * self.activation.slope(a);
            grads.b1[j] = grads.b1[j] + dpre;
            let grow = &mut grads.w1[j * self.raw_dim..(j + 1) * self.raw_dim];
            for (g, &r) in grow.iter_mut().zip(&trace.raw) {
                *g = *g + dpre * r;
            }
        }
    }
}

/// Forward pass returning only the unit-norm embedding.
pub fn embed<T: Scalar>(params: &EmbedderParams<T>, raw: &[T]) -> Result<Vec<T>> {
    params.forward(raw).map(|t| t.output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_map_normalizes() {
        let mut p = EmbedderParams::<f64>::zeros(2, 2, 2);
        p.activation = Activation::Identity;
        p.w1 = vec![1.0, 0.0, 0.0, 1.0];
        p.w2 = vec![1.0, 0.0, 0.0, 1.0];
        let x = embed(&p, &[3.0, 4.0]).unwrap();
        assert!((x[0] - 0.6).abs() < 1e-15 && (x[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn output_is_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = EmbedderParams::<f64>::init(32, 64, 16, &mut rng);
        p.validate().unwrap();
        for s in 0..20 {
            let raw: Vec<f64> = (0..32).map(|i| ((i * 7 + s) as f64).sin()).collect();
            let x = embed(&p, &raw).unwrap();
            assert!((norm(&x) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn collapsed_output_is_an_error() {
        let p = EmbedderParams::<f64>::zeros(3, 4, 2);
        assert!(matches!(embed(&p, &[1.0, 2.0, 3.0]), Err(Error::ZeroVector { .. })));
        assert!(matches!(embed(&p, &[1.0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = EmbedderParams::<f64>::init(5, 4, 3, &mut rng);
        let raw = [0.3, -1.2, 0.5, 0.9, -0.1];
        let probe = [0.7, -0.2, 0.4];
        // L = <probe, x>
        let loss = |q: &EmbedderParams<f64>| dot(&embed(q, &raw).unwrap(), &probe);
        let trace = p.forward(&raw).unwrap();
        let mut g = EmbedderParams::zeros(5, 4, 3);
        p.backward(&trace, &probe, &mut g);
        let h = 1e-6;
        for t in 0..4 {
            for i in 0..p.tensors()[t].len() {
                let mut a = p.clone();
                a.tensors_mut()[t][i] += h;
                let mut b = p.clone();
                b.tensors_mut()[t][i] -= h;
                let fd = (loss(&a) - loss(&b)) / (2.0 * h);
                assert!((fd - g.tensors()[t][i]).abs() < 1e-8, "tensor {t} entry {i}");
            }
        }
    }
}
