//! Central finite-difference verification of analytic gradients.
//!
//! Only the loss closure is evaluated here, so the numeric gradient is
//! independent of whatever backward pass produced the analytic one.

use crate::params::Parameterized;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Step for `(f(x + h) - f(x - h)) / 2h`.
    pub step: f64,
    /// Bound on `|a - n| / max(|a|, |n|, floor)`.
    pub rel_tolerance: f64,
    /// Denominator floor so entries that are zero up to rounding do not divide by ~0.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            rel_tolerance: 1e-5,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<Mismatch>,
    pub failures: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    fn record(&mut self, cfg: &GradCheckConfig, param: &str, index: usize, analytic: f64, numeric: f64) {
        let denom = analytic.abs().max(numeric.abs()).max(cfg.floor);
        let rel = (analytic - numeric).abs() / denom;
        self.checked += 1;
        if rel > cfg.rel_tolerance || !rel.is_finite() {
            self.failures += 1;
        }
        if rel > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(rel);
            self.worst = Some(Mismatch {
                param: param.to_string(),
                index,
                analytic,
                numeric,
                rel_error: rel,
            });
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.failures += other.failures;
        if other.max_rel_error >= self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            if other.worst.is_some() {
                self.worst = other.worst;
            }
        }
    }
}

/// Compares `analytic` (a gradient-shaped copy of `params`) against central differences of `loss`.
pub fn check_params<P, F>(params: &P, analytic: &P, loss: F, cfg: GradCheckConfig) -> GradCheckReport
where
    P: Parameterized + Clone,
    F: Fn(&P) -> f64,
{
    let mut names = Vec::new();
    let mut lens = Vec::new();
    params.visit(&mut |name, v| {
        names.push(name.to_string());
        lens.push(v.len());
    });
    let analytic = analytic.flatten();
    let mut report = GradCheckReport::default();
    let mut offset = 0;
    for (buf, (name, &len)) in names.iter().zip(&lens).enumerate() {
        for i in 0..len {
            let eval = |delta: f64| {
                let mut p = params.clone();
                let mut k = 0;
                p.visit_mut(&mut |_, v| {
                    if k == buf {
                        v[i] += delta;
                    }
                    k += 1;
                });
                loss(&p)
            };
            let numeric = (eval(cfg.step) - eval(-cfg.step)) / (2.0 * cfg.step);
            report.record(&cfg, name, i, analytic[offset + i], numeric);
        }
        offset += len;
    }
    report
}

/// Same check for a plain input buffer.
pub fn check_slice<F>(input: &[f64], analytic: &[f64], name: &str, loss: F, cfg: GradCheckConfig) -> GradCheckReport
where
    F: Fn(&[f64]) -> f64,
{
    let mut report = GradCheckReport::default();
    let mut work = input.to_vec();
    for i in 0..input.len() {
        work[i] = input[i] + cfg.step;
        let up = loss(&work);
        work[i] = input[i] - cfg.step;
        let down = loss(&work);
        work[i] = input[i];
        report.record(&cfg, name, i, analytic[i], (up - down) / (2.0 * cfg.step));
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_correct_and_rejects_wrong_gradients() {
        let params = vec![0.3, -1.2, 2.0];
        let loss = |p: &Vec<f64>| p[0] * p[0] + (p[1] * p[2]).sin();
        let good = vec![0.6, (-2.4f64).cos() * 2.0, (-2.4f64).cos() * -1.2];
        assert!(check_params(&params, &good, loss, GradCheckConfig::default()).passed());

        let mut bad = good.clone();
        bad[1] *= 1.01;
        let report = check_params(&params, &bad, loss, GradCheckConfig::default());
        assert_eq!(report.failures, 1);
        assert_eq!(report.worst.unwrap().index, 1);
    }

    #[test]
    fn slice_check() {
        let x = [1.0, 2.0];
        let report = check_slice(&x, &[4.0, 1.0], "x", |v| 2.0 * v[0] * v[0] + v[1], GradCheckConfig::default());
        assert!(report.passed());
        assert_eq!(report.checked, 2);
    }
}
