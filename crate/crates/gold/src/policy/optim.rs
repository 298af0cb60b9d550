//! First-order ascent on flat parameter vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{GradVector, Policy};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptAlgo {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub algo: OptAlgo,
    pub lr: f64,
}

/// Gradient-ascent optimizer; owns the Adam moment buffers when needed.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, num_params: usize) -> Self {
        let (m, v) = match config.algo {
            OptAlgo::Sgd => (Vec::new(), Vec::new()),
            OptAlgo::Adam => (vec![0.0; num_params], vec![0.0; num_params]),
        };
        Optimizer {
            config,
            step: 0,
            m,
            v,
        }
    }

    pub fn config(&self) -> OptimizerConfig {
        self.config
    }

    /// One ascent step. Rejects non-finite gradients before touching the
    /// parameters, so a failed step leaves the policy unchanged.
    pub fn step(&mut self, policy: &mut Policy, grad: &GradVector) -> Result<()> {
        check_finite(grad)?;
        if grad.len() != policy.num_params() {
            return Err(Error::InvalidArgument(
                "gradient length does not match parameter count".into(),
            ));
        }
        let lr = self.config.lr;
        match self.config.algo {
            OptAlgo::Sgd => {
                for (p, g) in policy.params_mut().iter_mut().zip(grad.as_slice()) {
                    *p += lr * g;
                }
            }
            OptAlgo::Adam => {
                self.step += 1;
                let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
                for (i, (p, &g)) in policy
                    .params_mut()
                    .iter_mut()
                    .zip(grad.as_slice())
                    .enumerate()
                {
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    *p += lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
        Ok(())
    }
}

/// Single plain ascent step at rate `lr`, no state. Handy for gradient
/// studies that bypass the optimizer schedule.
pub fn apply_update(policy: &mut Policy, grad: &GradVector, lr: f64) -> Result<()> {
    check_finite(grad)?;
    for (p, g) in policy.params_mut().iter_mut().zip(grad.as_slice()) {
        *p += lr * g;
    }
    Ok(())
}

fn check_finite(grad: &GradVector) -> Result<()> {
    if let Some(i) = grad.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient entry {i} is {}",
            grad.as_slice()[i]
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::TabularPolicy;

    fn small_policy() -> Policy {
        Policy::Tabular(TabularPolicy::new(1, 1, 4).unwrap())
    }

    fn grad_like(policy: &Policy, fill: impl Fn(usize) -> f64) -> GradVector {
        GradVector((0..policy.num_params()).map(fill).collect())
    }

    #[test]
    fn sgd_step_is_exact() {
        let mut p = small_policy();
        let g = grad_like(&p, |i| i as f64);
        let mut opt = Optimizer::new(
            OptimizerConfig {
                algo: OptAlgo::Sgd,
                lr: 0.1,
            },
            p.num_params(),
        );
        opt.step(&mut p, &g).unwrap();
        for (i, &w) in p.params().iter().enumerate() {
            assert!((w - 0.1 * i as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut p = small_policy();
        let g = grad_like(&p, |i| if i % 2 == 0 { 0.5 } else { -0.25 });
        let mut opt = Optimizer::new(
            OptimizerConfig {
                algo: OptAlgo::Adam,
                lr: 0.01,
            },
            p.num_params(),
        );
        opt.step(&mut p, &g).unwrap();
        for (i, &w) in p.params().iter().enumerate() {
            let expect = if i % 2 == 0 { 0.01 } else { -0.01 };
            assert!((w - expect).abs() < 1e-7, "param {i}: {w}");
        }
    }

    #[test]
    fn adam_ignores_zero_gradient() {
        let mut p = small_policy();
        let mut opt = Optimizer::new(
            OptimizerConfig {
                algo: OptAlgo::Adam,
                lr: 0.5,
            },
            p.num_params(),
        );
        let zero = grad_like(&p, |_| 0.0);
        opt.step(&mut p, &zero).unwrap();
        assert!(p.params().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn non_finite_gradient_is_rejected_before_updating() {
        let mut p = small_policy();
        let mut g = grad_like(&p, |_| 1.0);
        g.0[3] = f64::NAN;
        let mut opt = Optimizer::new(
            OptimizerConfig {
                algo: OptAlgo::Adam,
                lr: 0.01,
            },
            p.num_params(),
        );
        let err = opt.step(&mut p, &g).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        assert!(p.params().iter().all(|&w| w == 0.0), "params untouched");
        assert!(apply_update(&mut p, &g, 0.1).is_err());
    }

    #[test]
    fn repeated_steps_are_deterministic() {
        let run = || {
            let mut p = small_policy();
            let mut opt = Optimizer::new(
                OptimizerConfig {
                    algo: OptAlgo::Adam,
                    lr: 0.05,
                },
                p.num_params(),
            );
            for k in 1..=25 {
                let g = grad_like(&p, |i| ((i + k) as f64 * 0.3).sin());
                opt.step(&mut p, &g).unwrap();
            }
            p.params().to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert!(a.iter().all(|w| w.is_finite()));
    }
}
