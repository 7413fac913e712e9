//! Named parameter sets and first-order optimizers.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Mat};
use crate::error::{CoreError, Result};

/// Ordered, named collection of parameter matrices for one model. Order is
/// the parameter index used on tapes and in checkpoints.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Register a parameter; names must be unique.
    pub fn add(&mut self, name: &str, value: Mat) -> usize {
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter name {name}"
        );
        self.names.push(name.to_string());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, index: usize) -> &Mat {
        &self.values[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Mat {
        &mut self.values[index]
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    /// Total scalar count across all matrices.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|m| m.len()).sum()
    }
}

/// Uniform init in ±scale, the classic small-recurrent-net range.
pub fn init_uniform(rng: &mut impl Rng, rows: usize, cols: usize, scale: f32) -> Mat {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-scale..scale))
}

pub fn zeros(rows: usize, cols: usize) -> Mat {
    Array2::zeros((rows, cols))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(CoreError::Argument(format!(
                "unknown optimizer {other:?} (want sgd or adam)"
            ))),
        }
    }
}

/// Optimizer over one parameter set. SGD applies `p -= lr * g` (an exact
/// zero gradient leaves parameters bitwise unchanged); Adam keeps per-matrix
/// first/second moments with bias correction.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        lr: f32,
    },
    Adam {
        lr: f32,
        beta1: f32,
        beta2: f32,
        eps: f32,
        t: u32,
        moments: Vec<Option<(Mat, Mat)>>,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f32) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam {
                lr,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                t: 0,
                moments: Vec::new(),
            },
        }
    }

    /// Apply one update from the gradients recorded for `set_tag`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients, set_tag: u8) {
        match self {
            Optimizer::Sgd { lr } => {
                let lr = *lr;
                for index in 0..params.len() {
                    if let Some(g) = grads.get(set_tag, index) {
                        let p = params.get_mut(index);
                        assert_eq!(p.dim(), g.dim(), "gradient shape mismatch");
                        p.zip_mut_with(g, |pv, &gv| *pv -= lr * gv);
                    }
                }
            }
            Optimizer::Adam { lr, beta1, beta2, eps, t, moments } => {
                *t += 1;
                if moments.len() < params.len() {
                    moments.resize_with(params.len(), || None);
                }
                let (lr, b1, b2, eps) = (*lr, *beta1, *beta2, *eps);
                let bc1 = 1.0 - b1.powi(*t as i32);
                let bc2 = 1.0 - b2.powi(*t as i32);
                for (index, slot) in moments.iter_mut().enumerate().take(params.len()) {
                    let Some(g) = grads.get(set_tag, index) else { continue };
                    let p = params.get_mut(index);
                    assert_eq!(p.dim(), g.dim(), "gradient shape mismatch");
                    let (m, v) = slot
                        .get_or_insert_with(|| (Array2::zeros(g.dim()), Array2::zeros(g.dim())));
                    m.zip_mut_with(g, |mv, &gv| *mv = b1 * *mv + (1.0 - b1) * gv);
                    v.zip_mut_with(g, |vv, &gv| *vv = b2 * *vv + (1.0 - b2) * gv * gv);
                    ndarray::Zip::from(p)
                        .and(&*m)
                        .and(&*v)
                        .for_each(|pv, &mv, &vv| {
                            let m_hat = mv / bc1;
                            let v_hat = vv / bc2;
                            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
                        });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tape::Tape;
    use crate::seeding::derive_rng;

    #[test]
    fn sgd_moves_against_gradient_and_zero_grad_is_bitwise_noop() {
        let mut params = ParamSet::new();
        let idx = params.add("w", Mat::from_elem((1, 2), 1.0));
        let before = params.get(idx).clone();

        // loss = sum(w * w) → grad 2w; one SGD step with lr 0.1 → w = 0.8.
        let mut tape = Tape::new();
        let w = tape.param(0, idx, params.get(idx));
        let sq = tape.mul(w, w);
        let root = tape.sum_all(sq);
        let grads = tape.backward(root);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1);
        opt.step(&mut params, &grads, 0);
        assert!((params.get(idx)[[0, 0]] - 0.8).abs() < 1e-6);

        // Explicit zero gradient: parameters bitwise unchanged.
        let mut params2 = ParamSet::new();
        let idx2 = params2.add("w", before.clone());
        let mut tape = Tape::new();
        let w = tape.param(0, idx2, params2.get(idx2));
        let z = tape.scale(w, 0.0);
        let root = tape.sum_all(z);
        let grads = tape.backward(root);
        assert!(grads.get(0, idx2).unwrap().iter().all(|&g| g == 0.0));
        opt.step(&mut params2, &grads, 0);
        let same = params2
            .get(idx2)
            .iter()
            .zip(before.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut rng = derive_rng(1, &["adam"]);
        let mut params = ParamSet::new();
        let idx = params.add("w", init_uniform(&mut rng, 1, 3, 2.0));
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.05);
        for _ in 0..400 {
            let mut tape = Tape::new();
            let w = tape.param(0, idx, params.get(idx));
            let sq = tape.mul(w, w);
            let root = tape.sum_all(sq);
            let grads = tape.backward(root);
            opt.step(&mut params, &grads, 0);
        }
        assert!(params.get(idx).iter().all(|&w| w.abs() < 1e-2));
    }

    #[test]
    fn optimizer_kind_parses() {
        assert_eq!("sgd".parse::<OptimizerKind>().unwrap(), OptimizerKind::Sgd);
        assert_eq!("adam".parse::<OptimizerKind>().unwrap(), OptimizerKind::Adam);
        assert!("rmsprop".parse::<OptimizerKind>().is_err());
    }

    #[test]
    fn param_set_indexing() {
        let mut params = ParamSet::new();
        let a = params.add("alpha", zeros(2, 2));
        let b = params.add("beta", zeros(1, 4));
        assert_eq!(params.index_of("alpha"), Some(a));
        assert_eq!(params.index_of("beta"), Some(b));
        assert_eq!(params.index_of("gamma"), None);
        assert_eq!(params.scalar_count(), 8);
        assert_eq!(params.name(a), "alpha");
    }
}
