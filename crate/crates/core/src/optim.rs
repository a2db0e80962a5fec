//! Adaptive moment estimation, one moment pair and step counter per parameter group.

use alloc::collections::BTreeMap;
use serde::{Deserialize, Serialize};

use crate::model::{GroupId, ModelParams, ParamGroup};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn step(&self, params: &mut ParamGroup, grads: &ParamGroup, moments: &mut AdamMoments) {
        moments.t += 1;
        let t = moments.t as f64;
        let bc1 = 1.0 - libm::pow(self.beta1, t);
        let bc2 = 1.0 - libm::pow(self.beta2, t);
        let arrays = params.arrays.iter_mut().zip(&grads.arrays).zip(moments.m.arrays.iter_mut().zip(moments.v.arrays.iter_mut()));
        for ((p, g), (m, v)) in arrays {
            let values = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((p, &g), (m, v)) in values {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= self.lr * m_hat / (libm::sqrt(v_hat) + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamMoments {
    pub m: ParamGroup,
    pub v: ParamGroup,
    pub t: u64,
}

impl AdamMoments {
    pub fn for_group(group: &ParamGroup) -> Self {
        Self { m: group.zeros_like(), v: group.zeros_like(), t: 0 }
    }
}

/// Moment arrays for every parameter group, mirroring the parameter shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub groups: BTreeMap<GroupId, AdamMoments>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        Self { groups: params.groups().map(|(id, g)| (id, AdamMoments::for_group(g))).collect() }
    }

    pub fn moments_mut(&mut self, id: GroupId) -> &mut AdamMoments {
        self.groups.get_mut(&id).expect("optimizer state mirrors the parameter groups")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use alloc::vec;

    #[test]
    fn first_step_moves_each_value_by_lr_against_the_gradient_sign() {
        let mut p = ParamGroup { arrays: vec![Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap()] };
        let g = ParamGroup { arrays: vec![Tensor::from_vec(&[3], vec![0.3, -4.0, 0.0]).unwrap()] };
        let mut m = AdamMoments::for_group(&p);
        Adam::new(0.1).step(&mut p, &g, &mut m);
        let d = p.arrays[0].data();
        assert!((d[0] - 0.9).abs() < 1e-6);
        assert!((d[1] + 1.9).abs() < 1e-6);
        assert_eq!(d[2], 0.5);
        assert_eq!(m.t, 1);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = ParamGroup { arrays: vec![Tensor::from_vec(&[2], vec![3.0, -2.0]).unwrap()] };
        let mut m = AdamMoments::for_group(&p);
        let adam = Adam::new(0.05);
        for _ in 0..2000 {
            let g = ParamGroup { arrays: vec![Tensor::from_vec(&[2], p.arrays[0].data().iter().map(|x| 2.0 * x).collect()).unwrap()] };
            adam.step(&mut p, &g, &mut m);
        }
        assert!(p.arrays[0].data().iter().all(|x| x.abs() < 1e-2));
    }
}
