//! Adam, kept per parameter set so each component advances independently.

use crate::model::ParamSet;
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moments aligned with one `ParamSet`'s arrays, plus the step
/// counter used for bias correction.
#[derive(Debug, Clone)]
pub struct AdamSetState {
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamSetState {
    pub fn for_set(set: &ParamSet) -> Self {
        let m = set.arrays().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        let v = set.arrays().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        AdamSetState { t: 0, m, v }
    }
}

/// One Adam step on a whole parameter set. `grads` must align with the set's
/// array order. The counter advances even for all-zero gradients; an all-zero
/// gradient leaves the parameters bit-identical.
pub fn adam_step(set: &mut ParamSet, opt: &mut AdamSetState, grads: &[Tensor], lr: f64) {
    assert_eq!(grads.len(), set.len(), "gradient/array count mismatch");
    opt.t += 1;
    let t = opt.t as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (idx, grad) in grads.iter().enumerate() {
        let p = set.tensor_mut(idx).data_mut();
        let m = opt.m[idx].data_mut();
        let v = opt.v[idx].data_mut();
        debug_assert_eq!(p.len(), grad.data().len());
        for (i, &g) in grad.data().iter().enumerate() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_set(values: Vec<f64>) -> ParamSet {
        let n = values.len();
        ParamSet::new(vec![(
            "w".to_string(),
            Tensor::from_vec(&[n], values).unwrap(),
        )])
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        let mut set = toy_set(vec![1.0, -2.0, 0.5]);
        let mut opt = AdamSetState::for_set(&set);
        let g = Tensor::from_vec(&[3], vec![0.3, -0.7, 0.01]).unwrap();
        adam_step(&mut set, &mut opt, &[g], 1e-3);
        let expect = [1.0 - 1e-3, -2.0 + 1e-3, 0.5 - 1e-3];
        for (p, e) in set.tensor(0).data().iter().zip(expect) {
            assert!((p - e).abs() < 1e-6, "{} vs {}", p, e);
        }
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_params_but_advances_counter() {
        let mut set = toy_set(vec![0.25, 0.75]);
        let before = set.tensor(0).clone();
        let mut opt = AdamSetState::for_set(&set);
        let g = Tensor::zeros(&[2]);
        adam_step(&mut set, &mut opt, &[g], 1e-3);
        assert_eq!(set.tensor(0), &before);
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn disjoint_updates_commute() {
        let mut a1 = toy_set(vec![1.0]);
        let mut b1 = toy_set(vec![2.0]);
        let mut oa1 = AdamSetState::for_set(&a1);
        let mut ob1 = AdamSetState::for_set(&b1);
        let ga = Tensor::from_vec(&[1], vec![0.5]).unwrap();
        let gb = Tensor::from_vec(&[1], vec![-0.25]).unwrap();
        adam_step(&mut a1, &mut oa1, &[ga.clone()], 1e-2);
        adam_step(&mut b1, &mut ob1, &[gb.clone()], 1e-2);

        let mut a2 = toy_set(vec![1.0]);
        let mut b2 = toy_set(vec![2.0]);
        let mut oa2 = AdamSetState::for_set(&a2);
        let mut ob2 = AdamSetState::for_set(&b2);
        adam_step(&mut b2, &mut ob2, &[gb], 1e-2);
        adam_step(&mut a2, &mut oa2, &[ga], 1e-2);

        assert_eq!(a1.tensor(0), a2.tensor(0));
        assert_eq!(b1.tensor(0), b2.tensor(0));
    }
}
