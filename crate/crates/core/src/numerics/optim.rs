//! AdamW: bias-corrected adaptive moments with decoupled weight decay.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::matrix::Matrix;
use crate::numerics::tape::Gradients;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// Whether decoupled weight decay applies to a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decay {
    Apply,
    Skip,
}

/// Anything exposing named trainable matrices.
pub trait Parameters {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Matrix));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix, Decay));
}

#[derive(Clone, Debug)]
struct Moments {
    first: Matrix,
    second: Matrix,
}

#[derive(Clone, Debug)]
pub struct AdamW {
    config: AdamWConfig,
    step_count: u64,
    moments: BTreeMap<String, Moments>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            step_count: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update to every parameter of `models`. All gradients are
    /// validated before any parameter is touched.
    pub fn step(&mut self, models: &mut [&mut dyn Parameters], grads: &Gradients) -> Result<()> {
        let mut check = Ok(());
        for model in models.iter() {
            model.visit_params(&mut |name, p| {
                if check.is_err() {
                    return;
                }
                check = match grads.get(name) {
                    None => Err(Error::MissingGradient(name.to_string())),
                    Some(g) if g.shape() != p.shape() => Err(Error::Dimension {
                        op: "optimizer_step",
                        left: p.shape(),
                        right: g.shape(),
                    }),
                    Some(g) if !g.is_finite() => Err(Error::NonFiniteGradient(name.to_string())),
                    Some(_) => Ok(()),
                };
            });
        }
        check?;

        self.step_count += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step_count as i32;
        let correct1 = 1.0 - beta1.powi(t);
        let correct2 = 1.0 - beta2.powi(t);
        let moments = &mut self.moments;

        for model in models.iter_mut() {
            model.visit_params_mut(&mut |name, p, decay| {
                let g = grads.get(name).expect("validated above");
                let state = moments.entry(name.to_string()).or_insert_with(|| Moments {
                    first: Matrix::zeros(p.rows(), p.cols()),
                    second: Matrix::zeros(p.rows(), p.cols()),
                });
                let decay_factor = match decay {
                    Decay::Apply => 1.0 - lr * weight_decay,
                    Decay::Skip => 1.0,
                };
                let (m, v) = (state.first.data_mut(), state.second.data_mut());
                for (((pv, &gv), mv), vv) in p
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(m.iter_mut())
                    .zip(v.iter_mut())
                {
                    *mv = beta1 * *mv + (1.0 - beta1) * gv;
                    *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                    let m_hat = *mv / correct1;
                    let v_hat = *vv / correct2;
                    *pv = *pv * decay_factor - lr * m_hat / (v_hat.sqrt() + eps);
                }
            });
        }
        Ok(())
    }
}
