use crate::nn::Parameterized;
use crate::real::Real;

/// ADAM with bias-corrected moments, one moment pair per parameter tensor
/// in visiting order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64, model: &impl Parameterized<T>) -> Self {
        let mut m = Vec::new();
        model.visit_params(&mut |p| m.push(vec![T::zero(); p.len()]));
        let v = m.clone();
        Adam { learning_rate, beta1, beta2, epsilon, step: 0, m, v }
    }

    pub fn update(&mut self, model: &mut impl Parameterized<T>) {
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64_lossy(self.beta1);
        let b2 = T::from_f64_lossy(self.beta2);
        let c1 = T::one() - b1;
        let c2 = T::one() - b2;
        let lr_t = self.learning_rate * (1.0 - self.beta2.powi(t)).sqrt() / (1.0 - self.beta1.powi(t));
        let lr_t = T::from_f64_lossy(lr_t);
        // epsilon is applied to the bias-corrected second moment
        let eps_hat = T::from_f64_lossy(self.epsilon * (1.0 - self.beta2.powi(t)).sqrt());
        let mut k = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        model.visit_params_mut(&mut |p| {
            let (m, v) = (&mut ms[k], &mut vs[k]);
            for ((w, &g), (mi, vi)) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut().zip(v.iter_mut())) {
                *mi = b1 * *mi + c1 * g;
                *vi = b2 * *vi + c2 * g * g;
                *w -= lr_t * *mi / (vi.sqrt() + eps_hat);
            }
            k += 1;
        });
    }
}

/// Tracks the best validation loss; `observe` returns true when training
/// should stop.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    pub epochs_without_improvement: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: f64::INFINITY, best_epoch: 0, epochs_without_improvement: 0 }
    }

    /// Returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> (bool, bool) {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.epochs_without_improvement = 0;
            (true, false)
        } else {
            self.epochs_without_improvement += 1;
            (false, self.epochs_without_improvement >= self.patience)
        }
    }
}
