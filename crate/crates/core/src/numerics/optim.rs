use serde::{Deserialize, Serialize};

use super::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;
pub const LR_FLOOR: f64 = 1e-6;
/// Minimum decrease that counts as an improvement for the plateau schedule.
pub const PLATEAU_THRESHOLD: f64 = 1e-6;

/// Adam moments plus a reduce-on-plateau learning-rate schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimState {
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
    pub step: u64,
    pub lr: f64,
    pub best_metric: f64,
    pub epochs_since_improvement: usize,
}

impl OptimState {
    pub fn new(params: &[&Tensor], lr: f64) -> Self {
        let zeros = |t: &&Tensor| Tensor::zeros(t.shape());
        Self {
            first: params.iter().map(zeros).collect(),
            second: params.iter().map(zeros).collect(),
            step: 0,
            lr,
            best_metric: f64::INFINITY,
            epochs_since_improvement: 0,
        }
    }
}

/// One bias-corrected Adam update with learning rate `lr`.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut OptimState, lr: f64) {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    assert_eq!(params.len(), state.first.len(), "optimizer state built for these parameters");
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        assert_eq!(p.shape(), g.shape(), "gradient shape");
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = BETA1 * *mv + (1.0 - BETA1) * gv;
            *vv = BETA2 * *vv + (1.0 - BETA2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
    }
}

/// Feeds one metric value (lower is better) to the plateau schedule and
/// returns the learning rate to use next.
pub fn plateau_update(state: &mut OptimState, metric: f64, factor: f64, patience: usize) -> f64 {
    if metric < state.best_metric - PLATEAU_THRESHOLD {
        state.best_metric = metric;
        state.epochs_since_improvement = 0;
    } else {
        state.epochs_since_improvement += 1;
        if state.epochs_since_improvement >= patience {
            state.lr = (state.lr * factor).max(LR_FLOOR);
            state.epochs_since_improvement = 0;
        }
    }
    state.lr
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(p: &mut Tensor, g: Tensor, s: &mut OptimState, lr: f64) {
        adam_step(&mut [p], &[g], s, lr);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let mut s = OptimState::new(&[&p], 1e-3);
        step(&mut p, Tensor::zeros(&[2]), &mut s, 1e-3);
        assert_eq!(p.data(), &[1.0, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // m̂ = g, v̂ = g², so the update is -lr·g/(|g| + eps).
        let mut p = Tensor::vector(vec![0.0, 0.0]);
        let mut s = OptimState::new(&[&p], 0.1);
        step(&mut p, Tensor::vector(vec![2.0, -0.5]), &mut s, 0.1);
        let expect = [-0.1 * 2.0 / (2.0 + EPS), 0.1 * 0.5 / (0.5 + EPS)];
        for (a, b) in p.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn two_steps_on_parabola() {
        // f(x) = x², x0 = 1, lr = 0.1. Step 1: g=2 -> x = 1 - 0.1·2/(2+eps).
        // Step 2: g = 2·x1; m = 0.9·0.2 + 0.1·g ... evaluated by hand below.
        let lr = 0.1;
        let mut p = Tensor::vector(vec![1.0]);
        let mut s = OptimState::new(&[&p], lr);
        step(&mut p, Tensor::vector(vec![2.0]), &mut s, lr);
        let x1 = 1.0 - lr * 2.0 / (2.0 + EPS);
        assert!((p.item() - x1).abs() < 1e-15);
        let g2 = 2.0 * x1;
        step(&mut p, Tensor::vector(vec![g2]), &mut s, lr);
        let m = 0.9 * (0.1 * 2.0) + 0.1 * g2;
        let v = 0.999 * (0.001 * 4.0) + 0.001 * g2 * g2;
        let m_hat = m / (1.0 - 0.81);
        let v_hat = v / (1.0 - 0.999f64.powi(2));
        let x2 = x1 - lr * m_hat / (v_hat.sqrt() + EPS);
        assert!((p.item() - x2).abs() < 1e-14);
        assert!(x2.abs() < x1.abs() && x1.abs() < 1.0);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut p = Tensor::vector(vec![0.3, 0.7]);
        let mut s = OptimState::new(&[&p], 0.0);
        for _ in 0..5 {
            step(&mut p, Tensor::vector(vec![1.0, -3.0]), &mut s, 0.0);
        }
        assert_eq!(p.data(), &[0.3, 0.7]);
    }

    #[test]
    fn improving_metric_keeps_lr() {
        let mut s = OptimState::new(&[], 1e-3);
        for i in 0..20 {
            assert_eq!(plateau_update(&mut s, 10.0 - i as f64, 0.5, 2), 1e-3);
        }
    }

    #[test]
    fn flat_metric_halves_after_third_call() {
        let mut s = OptimState::new(&[], 1e-3);
        assert_eq!(plateau_update(&mut s, 1.0, 0.5, 2), 1e-3);
        assert_eq!(plateau_update(&mut s, 1.0, 0.5, 2), 1e-3);
        assert_eq!(plateau_update(&mut s, 1.0, 0.5, 2), 5e-4);
        assert_eq!(s.epochs_since_improvement, 0);
    }

    #[test]
    fn lr_clamps_at_floor() {
        let mut s = OptimState::new(&[], 4e-6);
        for _ in 0..50 {
            plateau_update(&mut s, 1.0, 0.5, 1);
        }
        assert_eq!(s.lr, LR_FLOOR);
    }
}
