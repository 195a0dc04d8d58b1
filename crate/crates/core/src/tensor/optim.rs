use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// First-order optimizer state over a whole [`ParamStore`].
#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: u64,
        m: Vec<Tensor>,
        v: Vec<Tensor>,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, store: &ParamStore) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => {
                let zeros: Vec<Tensor> = store
                    .iter()
                    .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
                    .collect();
                Optimizer::Adam {
                    lr,
                    beta1: 0.9,
                    beta2: 0.999,
                    eps: 1e-8,
                    step: 0,
                    m: zeros.clone(),
                    v: zeros,
                }
            }
        }
    }

    /// Applies one update; `grads` is indexed like the store.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) {
        match self {
            Optimizer::Sgd { lr } => {
                for (id, g) in store.ids().collect::<Vec<_>>().into_iter().zip(grads) {
                    for (p, gv) in store.get_mut(id).data_mut().iter_mut().zip(g.data()) {
                        *p -= *lr * gv;
                    }
                }
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                step,
                m,
                v,
            } => {
                *step += 1;
                let bc1 = 1.0 - beta1.powi(*step as i32);
                let bc2 = 1.0 - beta2.powi(*step as i32);
                let ids: Vec<_> = store.ids().collect();
                for (k, id) in ids.into_iter().enumerate() {
                    let g = grads[k].data();
                    let (mk, vk) = (m[k].data_mut(), v[k].data_mut());
                    for (i, p) in store.get_mut(id).data_mut().iter_mut().enumerate() {
                        mk[i] = *beta1 * mk[i] + (1.0 - *beta1) * g[i];
                        vk[i] = *beta2 * vk[i] + (1.0 - *beta2) * g[i] * g[i];
                        let m_hat = mk[i] / bc1;
                        let v_hat = vk[i] / bc2;
                        *p -= *lr * m_hat / (v_hat.sqrt() + *eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_moves_against_gradient() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::row(vec![1.0, -1.0]));
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.5, &store);
        opt.step(&mut store, &[Tensor::row(vec![2.0, -2.0])]);
        assert_eq!(store.iter().next().unwrap().1.data(), &[0.0, 0.0]);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::row(vec![0.0]));
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1, &store);
        opt.step(&mut store, &[Tensor::row(vec![3.0])]);
        let w = store.iter().next().unwrap().1.data()[0];
        assert!((w + 0.1).abs() < 1e-6, "{w}");
    }
}
