use std::borrow::Cow;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamGrad, ParamGrads, ParameterStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
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

#[derive(Clone, Debug, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    /// Rows of a row-sparse table that have ever received a gradient, in
    /// first-touch order; `None` for dense parameters.
    rows: Option<(usize, Vec<usize>, Vec<bool>)>,
}

/// Bias-corrected Adam moments for every parameter of a store.
///
/// Moments start at zero. A parameter (or embedding row) that has never
/// received a gradient would get an exactly zero update, so it is skipped.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<Option<Moments>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParameterStore) -> Self {
        AdamState {
            config,
            step: 0,
            moments: vec![None; params.len()],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update with `grads` (missing gradients count as zero).
    pub fn step(&mut self, params: &mut ParameterStore, grads: &ParamGrads) {
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2, lr, eps) = (c.beta1, c.beta2, c.learning_rate, c.epsilon);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
        };

        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let grad = grads.get(id);
            let slot = &mut self.moments[id.index()];
            if slot.is_none() {
                if grad.is_none() {
                    continue;
                }
                let len = params.get(id).len();
                let rows = params.is_sparse(id).then(|| {
                    let width = params.get(id).last_dim();
                    (width, Vec::new(), vec![false; len / width])
                });
                *slot = Some(Moments {
                    m: vec![0.0; len],
                    v: vec![0.0; len],
                    rows,
                });
            }
            let mom = slot.as_mut().unwrap();
            let values = params.get_mut(id).data_mut();
            match &mut mom.rows {
                None => {
                    let g = grad.map(|g| g.to_dense(values.len()));
                    for i in 0..values.len() {
                        let gi = g.as_ref().map_or(0.0, |g| g[i]);
                        update(&mut values[i], &mut mom.m[i], &mut mom.v[i], gi);
                    }
                }
                Some((width, touched, seen)) => {
                    let w = *width;
                    let rows: Cow<'_, BTreeMap<usize, Vec<f64>>> = match grad {
                        Some(ParamGrad::Rows { rows, .. }) => Cow::Borrowed(rows),
                        Some(g) => Cow::Owned(
                            g.to_dense(values.len())
                                .chunks(w)
                                .map(<[f64]>::to_vec)
                                .enumerate()
                                .collect(),
                        ),
                        None => Cow::Owned(BTreeMap::new()),
                    };
                    for &r in rows.keys() {
                        if !seen[r] {
                            seen[r] = true;
                            touched.push(r);
                        }
                    }
                    for &r in touched.iter() {
                        let g = rows.get(&r);
                        for k in 0..w {
                            let gi = g.map_or(0.0, |g| g[k]);
                            let i = r * w + k;
                            update(&mut values[i], &mut mom.m[i], &mut mom.v[i], gi);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, Tensor};

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = ParameterStore::new();
        let id = params
            .register("w", Tensor::vector(vec![1.0, -2.0, 0.5]))
            .unwrap();
        let mut adam = AdamState::new(AdamConfig::default(), &params);
        let grads = {
            let mut tape = Tape::new(&params);
            let w = tape.param(id);
            let s = tape.scale(w, 3.0);
            let l = tape.sum(s);
            tape.backward(l).unwrap().params
        };
        adam.step(&mut params, &grads);
        for (new, old) in params.get(id).data().iter().zip([1.0, -2.0, 0.5]) {
            assert!((old - new - 1e-3).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut params = ParameterStore::new();
        let id = params
            .register("w", Tensor::vector(vec![1.0, 2.0]))
            .unwrap();
        let before = params.clone();
        let mut adam = AdamState::new(AdamConfig::default(), &params);
        let empty = ParamGrads::new(1);
        for _ in 0..10 {
            adam.step(&mut params, &empty);
        }
        assert_eq!(params, before);
        assert_eq!(adam.step_count(), 10);
        let _ = id;
    }

    /// Plain dense Adam over a table, for comparison with the row-skipping path.
    fn dense_reference(table: &mut [f64], grads: &[Vec<f64>], cfg: &AdamConfig) {
        let mut m = vec![0.0; table.len()];
        let mut v = vec![0.0; table.len()];
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            for i in 0..table.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let mh = m[i] / (1.0 - cfg.beta1.powi(t));
                let vh = v[i] / (1.0 - cfg.beta2.powi(t));
                table[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
            }
        }
    }

    #[test]
    fn sparse_rows_match_dense_adam() {
        use crate::autodiff::SparseVector;
        let mut params = ParameterStore::new();
        let data: Vec<f64> = (0..12).map(|i| i as f64 * 0.1 - 0.4).collect();
        let id = params
            .register_sparse("e", Tensor::matrix(6, 2, data.clone()).unwrap())
            .unwrap();
        let cfg = AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(cfg.clone(), &params);
        let mut dense_grads = Vec::new();
        for (step, rows) in [vec![1usize, 4], vec![4], vec![2], vec![1, 2]]
            .iter()
            .enumerate()
        {
            let grads = {
                let mut tape = Tape::new(&params);
                let e = tape.param(id);
                let inputs: Vec<SparseVector> = rows
                    .iter()
                    .map(|&r| SparseVector::new(6, vec![(r as u32, 1.0 + step as f64)]).unwrap())
                    .collect();
                let x = tape.sparse_embed(inputs, e).unwrap();
                let x = tape.tanh(x);
                let l = tape.sum(x);
                tape.backward(l).unwrap().params
            };
            dense_grads.push(grads.dense(&params, id));
            adam.step(&mut params, &grads);
        }
        let mut reference = data;
        dense_reference(&mut reference, &dense_grads, &cfg);
        for (a, b) in params.get(id).data().iter().zip(&reference) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
        // Never-touched rows are bitwise untouched.
        for r in [0usize, 3, 5] {
            for k in 0..2 {
                let i = r * 2 + k;
                assert_eq!(
                    params.get(id).data()[i].to_bits(),
                    (i as f64 * 0.1 - 0.4).to_bits()
                );
            }
        }
    }
}
