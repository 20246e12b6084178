//! Central finite-difference checks of tape gradients.

use super::params::{ParamGrad, ParamId, ParameterStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Outcome of a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(1, |numeric|)` over checked coordinates.
    pub max_relative_error: f64,
    pub coordinates_checked: usize,
    /// Parameter (or input) name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

impl GradCheckReport {
    fn new() -> Self {
        GradCheckReport {
            max_relative_error: 0.0,
            coordinates_checked: 0,
            worst: None,
        }
    }

    fn record(&mut self, name: &str, index: usize, analytic: f64, numeric: f64) {
        let err = (analytic - numeric).abs() / numeric.abs().max(1.0);
        self.coordinates_checked += 1;
        if self.worst.is_none() || err > self.max_relative_error {
            self.max_relative_error = err;
            self.worst = Some((name.to_string(), index));
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.coordinates_checked += other.coordinates_checked;
        if other.worst.is_some()
            && (self.worst.is_none() || other.max_relative_error > self.max_relative_error)
        {
            self.max_relative_error = other.max_relative_error;
            self.worst = other.worst;
        }
    }
}

fn evaluate<F>(params: &ParameterStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new(params);
    let loss = f(&mut tape)?;
    tape.value(loss).item()
}

/// Checks parameter gradients of the scalar program `f`.
///
/// Dense parameters are checked on every coordinate. Row-sparse tables are
/// checked on every row that received gradient plus `untouched_rows` other
/// rows, where both sides must be exactly zero.
pub fn grad_check<F>(
    params: &ParameterStore,
    f: F,
    epsilon: f64,
    untouched_rows: usize,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new(params);
        let loss = f(&mut tape)?;
        tape.backward(loss)?.params
    };
    let mut work = params.clone();
    let mut report = GradCheckReport::new();
    for id in params.ids() {
        let dense_len = params.get(id).len();
        let coords: Vec<usize> = match analytic.get(id) {
            Some(ParamGrad::Rows { width, rows }) => {
                let mut c: Vec<usize> = rows
                    .keys()
                    .flat_map(|&r| (r * width..(r + 1) * width).collect::<Vec<_>>())
                    .collect();
                let n_rows = dense_len / width;
                let extra = (0..n_rows)
                    .filter(|r| !rows.contains_key(r))
                    .step_by((n_rows / untouched_rows.max(1)).max(1))
                    .take(untouched_rows);
                for r in extra {
                    c.extend(r * width..(r + 1) * width);
                }
                c
            }
            _ if params.is_sparse(id) => {
                let width = params.get(id).last_dim();
                let n_rows = dense_len / width;
                (0..n_rows)
                    .step_by((n_rows / untouched_rows.max(1)).max(1))
                    .take(untouched_rows)
                    .flat_map(|r| r * width..(r + 1) * width)
                    .collect()
            }
            _ => (0..dense_len).collect(),
        };
        let grad = analytic.dense(params, id);
        for i in coords {
            let numeric = central_difference(&mut work, id, i, epsilon, &f)?;
            report.record(params.name(id), i, grad[i], numeric);
        }
    }
    Ok(report)
}

fn central_difference<F>(
    work: &mut ParameterStore,
    id: ParamId,
    i: usize,
    epsilon: f64,
    f: &F,
) -> Result<f64>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let original = work.get(id).data()[i];
    work.get_mut(id).data_mut()[i] = original + epsilon;
    let plus = evaluate(work, f)?;
    work.get_mut(id).data_mut()[i] = original - epsilon;
    let minus = evaluate(work, f)?;
    work.get_mut(id).data_mut()[i] = original;
    Ok((plus - minus) / (2.0 * epsilon))
}

/// Checks gradients with respect to input tensors of a scalar program; every
/// input is treated as differentiable.
pub fn grad_check_inputs<F>(inputs: &[Tensor], f: F, epsilon: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let empty = ParameterStore::new();
    let run = |values: &[Tensor], backward: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new(&empty);
        let vars: Vec<Var> = values
            .iter()
            .map(|t| tape.leaf(t.clone().with_grad()))
            .collect();
        let loss = f(&mut tape, &vars)?;
        let value = tape.value(loss).item()?;
        if !backward {
            return Ok((value, Vec::new()));
        }
        let grads = tape.backward(loss)?;
        let per_input = vars
            .iter()
            .zip(values)
            .map(|(&v, t)| {
                grads
                    .wrt(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; t.len()])
            })
            .collect();
        Ok((value, per_input))
    };
    let (_, analytic) = run(inputs, true)?;
    let mut work = inputs.to_vec();
    let mut report = GradCheckReport::new();
    for k in 0..work.len() {
        for i in 0..work[k].len() {
            let original = work[k].data()[i];
            work[k].data_mut()[i] = original + epsilon;
            let (plus, _) = run(&work, false)?;
            work[k].data_mut()[i] = original - epsilon;
            let (minus, _) = run(&work, false)?;
            work[k].data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * epsilon);
            report.record(&format!("input{k}"), i, analytic[k][i], numeric);
        }
    }
    Ok(report)
}
