//! Adam with bias-corrected moments, and global-norm gradient clipping.

use crate::error::{Error, Result};
use crate::params::Parameterized;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment buffers are created lazily on the first step and follow the visit order of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Rebuilds optimizer state, e.g. from a checkpoint.
    pub fn from_state(config: AdamConfig, step: u64, first: Vec<Vec<f64>>, second: Vec<Vec<f64>>) -> Result<Self> {
        if first.len() != second.len()
            || first.iter().zip(&second).any(|(m, v)| m.len() != v.len())
        {
            return Err(Error::Shape("first and second moment buffers differ in shape".into()));
        }
        Ok(Adam {
            config,
            step,
            first,
            second,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.first, &self.second)
    }

    /// One update `theta -= lr * m_hat / (sqrt(v_hat) + eps)`.
    ///
    /// Every gradient is checked before any parameter is touched, so a
    /// non-finite gradient leaves both parameters and state unchanged.
    pub fn step<P: Parameterized>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let mut grad_bufs: Vec<(String, Vec<f64>)> = Vec::new();
        let mut bad = None;
        grads.visit(&mut |name, g| {
            if bad.is_none() && g.iter().any(|v| !v.is_finite()) {
                bad = Some(name.to_string());
            }
            grad_bufs.push((name.to_string(), g.to_vec()));
        });
        if let Some(name) = bad {
            return Err(Error::NonFinite(name));
        }

        let mut shapes = Vec::new();
        params.visit(&mut |_, p| shapes.push(p.len()));
        if shapes.len() != grad_bufs.len() || shapes.iter().zip(&grad_bufs).any(|(n, (_, g))| *n != g.len()) {
            return Err(Error::Shape("gradient buffers do not match parameters".into()));
        }
        if self.first.is_empty() {
            self.first = shapes.iter().map(|&n| vec![0.0; n]).collect();
            self.second = self.first.clone();
        } else if self.first.len() != shapes.len() || self.first.iter().zip(&shapes).any(|(m, &n)| m.len() != n) {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let mut k = 0;
        let (first, second) = (&mut self.first, &mut self.second);
        params.visit_mut(&mut |_, p| {
            let g = &grad_bufs[k].1;
            let (m, v) = (&mut first[k], &mut second[k]);
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
            k += 1;
        });
        Ok(())
    }
}

/// L2 norm over every buffer.
pub fn global_norm<P: Parameterized>(grads: &P) -> f64 {
    let mut sq = 0.0;
    grads.visit(&mut |_, g| sq += g.iter().map(|v| v * v).sum::<f64>());
    sq.sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm<P: Parameterized>(grads: &mut P, max_norm: f64) -> Result<f64> {
    if max_norm <= 0.0 || !max_norm.is_finite() {
        return Err(Error::Numeric(format!("max_norm must be positive, got {max_norm}")));
    }
    let norm = global_norm(grads);
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut theta = vec![0.5, -2.0];
        adam.step(&mut theta, &vec![0.0, 0.0]).unwrap();
        assert_eq!(theta, vec![0.5, -2.0]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut theta = vec![0.0];
        adam.step(&mut theta, &vec![1.0]).unwrap();
        // m_hat = v_hat = 1, so the update is lr / (1 + eps)
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((theta[0] - expected).abs() < 1e-15);
    }

    /// Straight transcription of the update rule on a scalar.
    fn reference_adam(theta0: f64, grad: impl Fn(f64) -> f64, cfg: AdamConfig, steps: usize) -> f64 {
        let (mut theta, mut m, mut v) = (theta0, 0.0, 0.0);
        for t in 1..=steps {
            let g = grad(theta);
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let m_hat = m / (1.0 - cfg.beta1.powi(t as i32));
            let v_hat = v / (1.0 - cfg.beta2.powi(t as i32));
            theta -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        theta
    }

    #[test]
    fn minimizes_quadratic() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg);
        let mut theta = vec![1.0];
        for _ in 0..100 {
            let g = vec![2.0 * theta[0]];
            adam.step(&mut theta, &g).unwrap();
        }
        assert!(theta[0].abs() < 0.5);
        let reference = reference_adam(1.0, |t| 2.0 * t, cfg, 100);
        assert!((theta[0] - reference).abs() < 1e-12);
    }

    #[test]
    fn constant_gradient_step_approaches_learning_rate() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut theta = vec![0.0];
        let mut last = 0.0;
        for _ in 0..5000 {
            last = theta[0];
            adam.step(&mut theta, &vec![3.0]).unwrap();
        }
        assert!(((last - theta[0]) - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut adam = Adam::new(AdamConfig::default());
            let mut theta = vec![0.1, 0.2, 0.3];
            for i in 0..10 {
                let g: Vec<f64> = theta.iter().map(|t| (t * i as f64).sin()).collect();
                adam.step(&mut theta, &g).unwrap();
            }
            theta
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_is_rejected_untouched() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut theta = vec![1.0, 2.0];
        let err = adam.step(&mut theta, &vec![0.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(ref n) if n == "param"));
        assert_eq!(theta, vec![1.0, 2.0]);
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn clipping() {
        let mut g = vec![3.0, 4.0];
        let norm = clip_global_norm(&mut g, 1.0).unwrap();
        assert_eq!(norm, 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);

        let mut small = vec![0.1, 0.2];
        clip_global_norm(&mut small, 1.0).unwrap();
        assert_eq!(small, vec![0.1, 0.2]);

        let mut zero = vec![0.0; 3];
        clip_global_norm(&mut zero, 1.0).unwrap();
        assert_eq!(zero, vec![0.0; 3]);

        let mut once = vec![30.0, -40.0, 12.0];
        clip_global_norm(&mut once, 2.5).unwrap();
        let mut twice = once.clone();
        clip_global_norm(&mut twice, 2.5).unwrap();
        assert_eq!(once, twice);

        assert!(clip_global_norm(&mut vec![1.0], 0.0).is_err());
    }
}
