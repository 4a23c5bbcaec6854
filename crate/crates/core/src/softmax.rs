//! Linear softmax classification over sparse indicator features, shared by
//! the embodiment and skill discriminators.

use crate::util::log_sum_exp;

/// One labeled example: active feature indexes plus the class.
pub type LabeledExample = (Vec<usize>, usize);

#[derive(Debug, Clone)]
pub(crate) struct SparseSoftmax {
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Class-major layout: `weights[class * feature_dim + feature]`.
    pub weights: Vec<f64>,
}

impl SparseSoftmax {
    pub fn new(num_classes: usize, feature_dim: usize) -> Self {
        Self { num_classes, feature_dim, weights: vec![0.0; num_classes * feature_dim] }
    }

    pub fn logits(&self, features: &[usize]) -> Vec<f64> {
        (0..self.num_classes)
            .map(|c| {
                let row = &self.weights[c * self.feature_dim..(c + 1) * self.feature_dim];
                features.iter().map(|&i| row[i]).sum()
            })
            .collect()
    }

    pub fn log_posterior(&self, features: &[usize]) -> Vec<f64> {
        let logits = self.logits(features);
        let z = log_sum_exp(&logits);
        logits.into_iter().map(|l| l - z).collect()
    }

    pub fn posterior(&self, features: &[usize]) -> Vec<f64> {
        self.log_posterior(features).into_iter().map(f64::exp).collect()
    }

    /// Mean cross-entropy plus the ridge penalty.
    pub fn loss(&self, batch: &[LabeledExample], l2: f64) -> f64 {
        assert!(!batch.is_empty());
        let mut nll = 0.0;
        for (features, label) in batch {
            nll -= self.log_posterior(features)[*label];
        }
        let ridge: f64 = self.weights.iter().map(|w| w * w).sum();
        nll / batch.len() as f64 + 0.5 * l2 * ridge
    }

    pub fn gradient(&self, batch: &[LabeledExample], l2: f64) -> Vec<f64> {
        assert!(!batch.is_empty());
        let mut grad: Vec<f64> = self.weights.iter().map(|w| l2 * w).collect();
        let scale = 1.0 / batch.len() as f64;
        for (features, label) in batch {
            let probs = self.posterior(features);
            for (c, &pc) in probs.iter().enumerate() {
                let coeff = scale * (pc - if c == *label { 1.0 } else { 0.0 });
                let row = c * self.feature_dim;
                for &i in features {
                    grad[row + i] += coeff;
                }
            }
        }
        grad
    }

    /// One full-batch gradient step with backtracking, starting from `lr`;
    /// returns the pre-step loss. Count features can have large norms (a
    /// window repeating one transition), so a fixed step diverges on exactly
    /// the batches a settled policy produces; halving until the loss drops
    /// keeps every step a descent step on this convex objective.
    pub fn step(&mut self, batch: &[LabeledExample], lr: f64, l2: f64) -> f64 {
        let loss = self.loss(batch, l2);
        let grad = self.gradient(batch, l2);
        let prev = self.weights.clone();
        let mut step = lr;
        for _ in 0..30 {
            for ((w, p), g) in self.weights.iter_mut().zip(&prev).zip(&grad) {
                *w = p - step * g;
            }
            if self.loss(batch, l2) < loss {
                return loss;
            }
            step *= 0.5;
        }
        self.weights = prev;
        loss
    }
}
