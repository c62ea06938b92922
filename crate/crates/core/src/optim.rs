//! L1 loss, RMSE metric, Adam, and the multi-step learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{Graph, NodeId, Scalar, Tensor};

/// Mean absolute difference over all elements, recorded on the tape so it is
/// differentiable w.r.t. the prediction (subgradient 0 at exact ties).
pub fn l1_loss<T: Scalar>(g: &mut Graph<T>, pred: NodeId, target: NodeId) -> Result<NodeId> {
    let sp = g.shape(pred);
    let st = g.shape(target);
    if sp != st {
        return Err(Error::shape("l1_loss", format!("{sp} vs {st}")));
    }
    let diff = g.sub(pred, target)?;
    let abs = g.abs(diff)?;
    let total = g.sum(abs)?;
    g.scale(total, 1.0 / sp.numel() as f64)
}

/// Root mean square error, accumulated in f64 whatever the tensor dtype.
pub fn rmse<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "rmse",
            format!("{} vs {}", pred.shape(), target.shape()),
        ));
    }
    let mut acc = 0.0f64;
    for (p, t) in pred.data().iter().zip(target.data()) {
        let d = p.as_f64() - t.as_f64();
        acc += d * d;
    }
    Ok((acc / pred.numel() as f64).sqrt())
}

/// Bias-corrected Adam state: first/second moment buffers aligned with the
/// parameter store's registration order.
#[derive(Debug)]
pub struct AdamState<T: Scalar> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        AdamState {
            m: params.iter().map(|(_, p)| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|(_, p)| vec![T::zero(); p.numel()]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.m, &self.v)
    }

    /// Restores moment buffers and step counter (checkpoint loading).
    pub fn restore(&mut self, m: Vec<Vec<T>>, v: Vec<Vec<T>>, t: u64) -> Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(Error::checkpoint(format!(
                "optimizer state has {} / {} buffers, expected {}",
                m.len(),
                v.len(),
                self.m.len()
            )));
        }
        for (slot, buf) in self.m.iter().zip(&m).chain(self.v.iter().zip(&v)) {
            if slot.len() != buf.len() {
                return Err(Error::checkpoint("optimizer buffer length mismatch".to_string()));
            }
        }
        self.m = m;
        self.v = v;
        self.t = t;
        Ok(())
    }

    /// One bias-corrected update. Consumes and clears parameter gradients.
    pub fn step(&mut self, params: &mut ParamStore<T>, lr: f64) -> Result<()> {
        self.t += 1;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::one();
        let corr1 = T::from_f64(1.0 - self.beta1.powi(self.t as i32));
        let corr2 = T::from_f64(1.0 - self.beta2.powi(self.t as i32));
        let eps = T::from_f64(self.eps);
        let lr = T::from_f64(lr);
        for (i, (name, p)) in params.iter_mut().enumerate() {
            let grad = p
                .grad
                .take()
                .ok_or_else(|| Error::MissingGradient { name: name.to_string() })?;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for ((w, g), (m, v)) in
                p.data_mut().iter_mut().zip(&grad).zip(m.iter_mut().zip(v.iter_mut()))
            {
                *m = b1 * *m + (one - b1) * *g;
                *v = b2 * *v + (one - b2) * *g * *g;
                let m_hat = *m / corr1;
                let v_hat = *v / corr2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Multi-step learning-rate schedule: the base rate is multiplied by `gamma`
/// at each milestone, and the cut applies from the milestone epoch onward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub base_lr: f32,
    pub milestones: Vec<usize>,
    pub gamma: f32,
    pub total_epochs: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            base_lr: 0.00025,
            milestones: vec![25, 50, 75, 100, 125, 150],
            gamma: 0.5,
            total_epochs: 200,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !self.milestones.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::config("schedule milestones must be strictly increasing"));
        }
        if let Some(&last) = self.milestones.last() {
            if last >= self.total_epochs {
                return Err(Error::config(format!(
                    "last milestone {last} must be below total_epochs {}",
                    self.total_epochs
                )));
            }
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> Result<f32> {
        if epoch >= self.total_epochs {
            return Err(Error::invalid(
                "lr_at",
                format!("epoch {epoch} out of range 0..{}", self.total_epochs),
            ));
        }
        let cuts = self.milestones.iter().filter(|&&m| epoch >= m).count();
        Ok(self.base_lr * self.gamma.powi(cuts as i32))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn scalar_store(value: f32, grad: f32) -> ParamStore<f32> {
        let mut store = ParamStore::new();
        let mut t = Tensor::scalar(value);
        t.grad = Some(vec![grad]);
        store.register("w", t);
        store
    }

    #[test]
    fn l1_loss_examples() {
        let mut g = Graph::<f64>::new();
        let p = g.constant(&Tensor::new(Shape::new(1, 1, 1, 2), vec![1.0, 3.0]).unwrap()).unwrap();
        let t = g.constant(&Tensor::new(Shape::new(1, 1, 1, 2), vec![2.0, 1.0]).unwrap()).unwrap();
        let loss = l1_loss(&mut g, p, t).unwrap();
        assert!((g.value(loss)[0] - 1.5).abs() < 1e-12);
        let zero = l1_loss(&mut g, p, p).unwrap();
        assert_eq!(g.value(zero)[0], 0.0);

        let bad = g.constant(&Tensor::zeros(Shape::new(1, 1, 2, 2))).unwrap();
        assert!(l1_loss(&mut g, p, bad).is_err());
    }

    #[test]
    fn l1_loss_matches_scalar_loop_oracle() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let shape = Shape::new(2, 1, 4, 4);
        let a = Tensor::<f64>::rand_uniform(shape, -2.0, 2.0, &mut rng);
        let b = Tensor::<f64>::rand_uniform(shape, -2.0, 2.0, &mut rng);
        let mut expect = 0.0;
        for (x, y) in a.data().iter().zip(b.data()) {
            expect += (x - y).abs();
        }
        expect /= shape.numel() as f64;
        let mut g = Graph::new();
        let pa = g.constant(&a).unwrap();
        let pb = g.constant(&b).unwrap();
        let loss = l1_loss(&mut g, pa, pb).unwrap();
        assert!((g.value(loss)[0] - expect).abs() < 1e-7);
    }

    #[test]
    fn rmse_examples_and_scale_equivariance() {
        let p = Tensor::<f64>::new(Shape::new(1, 1, 1, 2), vec![0.0, 0.0]).unwrap();
        let t = Tensor::<f64>::new(Shape::new(1, 1, 1, 2), vec![3.0, 4.0]).unwrap();
        assert!((rmse(&p, &t).unwrap() - (25.0f64 / 2.0).sqrt()).abs() < 1e-12);
        assert_eq!(rmse(&t, &t).unwrap(), 0.0);

        let scale = -2.5;
        let ps = p.map(|v| v * scale);
        let ts = t.map(|v| v * scale);
        let lhs = rmse(&ps, &ts).unwrap();
        let rhs = scale.abs() * rmse(&p, &t).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn rmse_is_pixel_permutation_invariant() {
        let p = Tensor::<f64>::new(Shape::new(1, 1, 1, 4), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let t = Tensor::<f64>::new(Shape::new(1, 1, 1, 4), vec![0.0, 1.0, 5.0, 2.0]).unwrap();
        let perm = [2usize, 0, 3, 1];
        let pp = Tensor::<f64>::new(p.shape(), perm.iter().map(|&i| p.data()[i]).collect()).unwrap();
        let tp = Tensor::<f64>::new(t.shape(), perm.iter().map(|&i| t.data()[i]).collect()).unwrap();
        assert!((rmse(&p, &t).unwrap() - rmse(&pp, &tp).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_minus_lr() {
        // With g=1 at t=1 the bias-corrected update is exactly lr / (1 + eps).
        let mut store = ParamStore::<f64>::new();
        let mut t = Tensor::scalar(0.0);
        t.grad = Some(vec![1.0]);
        store.register("w", t);
        let mut adam = AdamState::new(&store);
        let lr = 0.01;
        adam.step(&mut store, lr).unwrap();
        let w = store.get("w").unwrap().data()[0];
        assert!((w + lr).abs() < 1e-6 * lr, "w={w}");
        assert_eq!(adam.step_count(), 1);
        assert!(store.get("w").unwrap().grad.is_none(), "gradients cleared after step");
    }

    #[test]
    fn adam_two_steps_match_hand_recurrence() {
        let g = 0.7f64;
        let lr = 0.003f64;
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let mut m = 0.0;
        let mut v = 0.0;
        let mut w_ref = 0.5;
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            w_ref -= lr * m_hat / (v_hat.sqrt() + eps);
        }

        let mut store = ParamStore::<f64>::new();
        let mut t = Tensor::scalar(0.5);
        t.grad = Some(vec![g]);
        store.register("w", t);
        let mut adam = AdamState::new(&store);
        adam.step(&mut store, lr).unwrap();
        store.get_mut("w").unwrap().grad = Some(vec![g]);
        adam.step(&mut store, lr).unwrap();
        let w = store.get("w").unwrap().data()[0];
        assert!((w - w_ref).abs() < 1e-12, "{w} vs {w_ref}");
    }

    #[test]
    fn adam_zero_grad_keeps_parameters() {
        let mut store = scalar_store(1.25, 0.0);
        let mut adam = AdamState::new(&store);
        adam.step(&mut store, 0.1).unwrap();
        assert_eq!(store.get("w").unwrap().data()[0], 1.25);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn adam_lr_zero_is_noop() {
        let mut store = scalar_store(1.25, 3.0);
        let mut adam = AdamState::new(&store);
        adam.step(&mut store, 0.0).unwrap();
        assert_eq!(store.get("w").unwrap().data()[0], 1.25);
    }

    #[test]
    fn adam_missing_grad_is_error() {
        let mut store = ParamStore::<f32>::new();
        store.register("w", Tensor::scalar(0.0));
        let mut adam = AdamState::new(&store);
        assert!(matches!(adam.step(&mut store, 0.1), Err(Error::MissingGradient { .. })));
    }

    #[test]
    fn schedule_milestones_halve_from_the_milestone_onward() {
        let s = Schedule::default();
        s.validate().unwrap();
        assert_eq!(s.lr_at(0).unwrap(), 0.00025);
        assert_eq!(s.lr_at(24).unwrap(), 0.00025);
        assert_eq!(s.lr_at(25).unwrap(), 0.000125);
        assert_eq!(s.lr_at(150).unwrap(), 3.90625e-6);
        assert_eq!(s.lr_at(199).unwrap(), 3.90625e-6);
        assert!(s.lr_at(200).is_err());
    }

    #[test]
    fn schedule_is_non_increasing_with_seven_plateaus() {
        let s = Schedule::default();
        let mut plateaus = 1;
        let mut prev = s.lr_at(0).unwrap();
        for e in 1..s.total_epochs {
            let lr = s.lr_at(e).unwrap();
            assert!(lr <= prev);
            if lr != prev {
                plateaus += 1;
            }
            prev = lr;
        }
        assert_eq!(plateaus, 7);
    }

    #[test]
    fn schedule_validation_rejects_bad_milestones() {
        let s = Schedule { milestones: vec![10, 10], ..Default::default() };
        assert!(s.validate().is_err());
        let s = Schedule { milestones: vec![250], ..Default::default() };
        assert!(s.validate().is_err());
    }
}
