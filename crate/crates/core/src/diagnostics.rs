//! Finite-difference gradient checks over every tape op and over the full
//! ranking network on small configurations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{
    grad_check, grad_check_inputs, GradCheckReport, PoolKind, SparseVector, Tensor,
};
use crate::corpus::{Document, Field};
use crate::error::Result;
use crate::model::{ConvConfig, FieldConfig, Mode, Model, ModelConfig, QueryMode, Scoring};

/// One named gradient check.
#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_relative_error: f64,
    pub coordinates_checked: usize,
    /// Parameter or input name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

impl CheckResult {
    fn new(name: impl Into<String>, r: GradCheckReport) -> Self {
        CheckResult {
            name: name.into(),
            max_relative_error: r.max_relative_error,
            coordinates_checked: r.coordinates_checked,
            worst: r.worst,
        }
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Result<Tensor> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// A random program touching every differentiable op once.
fn op_chain(rng: &mut ChaCha8Rng, epsilon: f64) -> Result<GradCheckReport> {
    let seq = rng.random_range(3..7);
    let cin = rng.random_range(1..4);
    let cout = rng.random_range(1..4);
    let ws = rng.random_range(1..=3.min(seq));
    let stride = rng.random_range(1..=ws);
    let kind = if rng.random_bool(0.5) {
        PoolKind::Max
    } else {
        PoolKind::Avg
    };
    let inputs = [
        rand_tensor(rng, vec![seq, cin])?,
        rand_tensor(rng, vec![ws, cin, cout])?,
        rand_tensor(rng, vec![cout])?,
        rand_tensor(rng, vec![cout])?,
        rand_tensor(rng, vec![cout, 2])?,
        rand_tensor(rng, vec![2])?,
    ];
    grad_check_inputs(
        &inputs,
        |t, v| {
            let n = t.row_normalize(v[0]);
            let c = t.conv1d(n, v[1], v[2], stride)?;
            let a = t.tanh(c);
            let p = t.pool(a, kind)?;
            let pr = t.pool_rows(a, PoolKind::Avg, 1)?;
            let h = t.hadamard(p, v[3])?;
            let sm = t.softmax(h);
            let cat = t.concat(&[sm, pr])?;
            let sl = t.slice(cat, 1, cout)?;
            let st = t.stack(&[sl, p])?;
            let sr = t.sum_rows(st);
            let sc = t.scale(sr, 0.5);
            let ad = t.add(sc, p)?;
            let mc = t.mul_const(ad, (0..cout).map(|i| i as f64 - 0.5).collect())?;
            let d = t.dense(mc, v[4], v[5])?;
            Ok(t.sum(d))
        },
        epsilon,
    )
}

/// Sparse embedding lookup followed by the pairwise loss.
fn embed_and_loss(rng: &mut ChaCha8Rng, epsilon: f64) -> Result<GradCheckReport> {
    let table = rand_tensor(rng, vec![5, 3])?;
    let w1: f64 = rng.random_range(0.0..1.0);
    let rows = vec![
        SparseVector::new(5, vec![(0, 1.0), (3, 2.0)])?,
        SparseVector::empty(5),
        SparseVector::new(5, vec![(3, 1.0)])?,
    ];
    grad_check_inputs(
        &[table],
        |t, v| {
            let e = t.sparse_embed(rows.clone(), v[0])?;
            let n = t.row_normalize(e);
            let s = t.sum_rows(n);
            let a = t.slice(s, 0, 1)?;
            let b = t.slice(s, 1, 1)?;
            t.pair_loss(a, b, w1, 1.0 - w1)
        },
        epsilon,
    )
}

fn toy_conv() -> ConvConfig {
    ConvConfig {
        conv1_window: 2,
        conv2_window: 2,
        ..ConvConfig::new(4, 2, 2)
    }
}

/// Five fields of width 2, three instance slots, no dropout.
pub fn toy_model_config() -> ModelConfig {
    ModelConfig {
        fields: Field::ALL
            .iter()
            .map(|&field| FieldConfig {
                field,
                max_instances: if field.is_multi_instance() { 3 } else { 1 },
                encoder: toy_conv(),
                output_dim: 2,
                keep_prob: 1.0,
            })
            .collect(),
        embed_dim: 3,
        query: toy_conv(),
        matching_hidden_dim: 4,
        dropout_keep: 1.0,
        ..ModelConfig::default()
    }
}

fn toy_doc(id: &str, anchors: &[&str], clicks: &[&str]) -> Document {
    Document {
        id: id.into(),
        title: "cheap flights paris".into(),
        url: "https://fly.example.com/paris-deals".into(),
        body: "book cheap flights to paris and rome today".into(),
        anchors: anchors.iter().map(|s| s.to_string()).collect(),
        clicked_queries: clicks.iter().map(|s| s.to_string()).collect(),
    }
}

/// Pairwise loss of one triple through the whole network, checked against
/// every dense parameter and the touched embedding rows.
fn network(cfg: ModelConfig, seed: u64, epsilon: f64) -> Result<GradCheckReport> {
    let mut model = Model::new(cfg, seed)?;
    // Nonzero biases so every bias path carries gradient.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let name = model.params.name(id);
        if name.ends_with("bias") || name == "match.mix" {
            for v in model.params.get_mut(id).data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    }
    let q = model.prepare_query("q", "cheap paris flights")?;
    let d1 = model.prepare_document(&toy_doc("a", &["paris deals", "paris"], &["paris flights"]));
    let d2 = model.prepare_document(&toy_doc("b", &[], &[]));
    grad_check(
        &model.params,
        |tape| {
            let mut pass = model.pass(Mode::Eval, None);
            let qv = pass.query(tape, &q)?;
            let r1 = pass.document(tape, &d1)?;
            let r2 = pass.document(tape, &d2)?;
            let s1 = pass.score(tape, qv, &r1)?;
            let s2 = pass.score(tape, qv, &r2)?;
            tape.pair_loss(s1, s2, 0.75, 0.25)
        },
        epsilon,
        3,
    )
}

/// Runs `trials` randomized op checks and the network check under each
/// architecture variant.
pub fn gradient_suite(seed: u64, trials: usize, epsilon: f64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ops: Option<GradCheckReport> = None;
    let mut embed: Option<GradCheckReport> = None;
    for _ in 0..trials.max(1) {
        let r = op_chain(&mut rng, epsilon)?;
        match &mut ops {
            Some(acc) => acc.merge(r),
            None => ops = Some(r),
        }
        let r = embed_and_loss(&mut rng, epsilon)?;
        match &mut embed {
            Some(acc) => acc.merge(r),
            None => embed = Some(r),
        }
    }
    let mut out = vec![
        CheckResult::new("ops", ops.expect("at least one trial")),
        CheckResult::new("sparse_embed+pair_loss", embed.expect("at least one trial")),
    ];
    let joint = toy_model_config();
    out.push(CheckResult::new(
        "network/joint",
        network(joint.clone(), seed, epsilon)?,
    ));
    let aggregated = ModelConfig {
        scoring: Scoring::ScoreAggregation,
        ..joint.clone()
    };
    out.push(CheckResult::new(
        "network/score_aggregation",
        network(aggregated, seed, epsilon)?,
    ));
    let mut shared = ModelConfig {
        query_mode: QueryMode::Shared,
        masking: false,
        ..joint
    };
    for f in &mut shared.fields {
        f.encoder.pooling = PoolKind::Avg;
        f.encoder.avg_pool_excludes_padding = true;
    }
    out.push(CheckResult::new(
        "network/shared_unmasked_avg",
        network(shared, seed, epsilon)?,
    ));
    Ok(out)
}
