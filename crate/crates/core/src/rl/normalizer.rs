use serde::{Deserialize, Serialize};

const CLIP: f64 = 10.0;

/// Running per-feature mean and variance (Welford). Features flagged in
/// `passthrough` (one-hot and binary inputs) are left untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    passthrough: Vec<bool>,
    pub frozen: bool,
}

impl Normalizer {
    pub fn new(n: usize) -> Normalizer {
        Normalizer {
            count: 0.0,
            mean: vec![0.0; n],
            m2: vec![0.0; n],
            passthrough: vec![false; n],
            frozen: false,
        }
    }

    pub fn with_passthrough(mut self, range: std::ops::Range<usize>) -> Self {
        self.passthrough[range].iter_mut().for_each(|p| *p = true);
        self
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> Vec<f64> {
        if self.count < 2.0 {
            return vec![1.0; self.mean.len()];
        }
        self.m2.iter().map(|m| m / self.count).collect()
    }

    /// No-op once frozen.
    pub fn update(&mut self, x: &[f64]) {
        if self.frozen {
            return;
        }
        self.count += 1.0;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / self.count;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let var = self.variance();
        x.iter()
            .zip(&self.mean)
            .zip(&var)
            .zip(&self.passthrough)
            .map(|(((x, m), v), &skip)| {
                if skip {
                    *x
                } else {
                    ((x - m) / (v + 1e-8).sqrt()).clamp(-CLIP, CLIP)
                }
            })
            .collect()
    }
}
