use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ConvConfig, ModelConfig, QueryMode, Scoring};
use crate::autodiff::{ParamId, ParameterStore, PoolKind, SparseVector, Tape, Tensor, Var};
use crate::corpus::{select_instances, Document, Field};
use crate::error::{Error, Result};
use crate::text::{encode_tokens, normalize, split_url, EncodedText, TrigramSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One field of a document, tokenized, hashed and padded.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldInput {
    /// At most `M_i` encoded instances; slots beyond the vector are padding.
    pub instances: Vec<EncodedText>,
    /// Number of leading instances the mask marks present.
    pub present: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedDocument {
    pub id: String,
    /// In model field order.
    pub fields: Vec<FieldInput>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedQuery {
    pub id: String,
    pub text: EncodedText,
    /// Number of normalized tokens before truncation.
    pub token_count: usize,
}

#[derive(Clone, Copy, Debug)]
struct EncoderParams {
    conv1_w: ParamId,
    conv1_b: ParamId,
    conv2_w: ParamId,
    conv2_b: ParamId,
    dense_w: ParamId,
    dense_b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct MatcherParams {
    hidden_w: ParamId,
    hidden_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

#[derive(Clone, Debug)]
struct Layout {
    embedding: ParamId,
    fields: Vec<EncoderParams>,
    query: EncoderParams,
    matchers: Vec<MatcherParams>,
    mix: Option<ParamId>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, limit: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

fn glorot(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, shape, limit)
}

fn register_encoder(
    store: &mut ParameterStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    conv: &ConvConfig,
    embed_dim: usize,
    output_dim: usize,
) -> Result<EncoderParams> {
    let (ws1, ws2, ch) = (conv.conv1_window, conv.conv2_window, conv.channels);
    Ok(EncoderParams {
        conv1_w: store.register(
            format!("{prefix}.conv1.weight"),
            glorot(rng, vec![ws1, embed_dim, ch], ws1 * embed_dim, ch),
        )?,
        conv1_b: store.register(format!("{prefix}.conv1.bias"), Tensor::zeros(vec![ch]))?,
        conv2_w: store.register(
            format!("{prefix}.conv2.weight"),
            glorot(rng, vec![ws2, ch, ch], ws2 * ch, ch),
        )?,
        conv2_b: store.register(format!("{prefix}.conv2.bias"), Tensor::zeros(vec![ch]))?,
        dense_w: store.register(
            format!("{prefix}.dense.weight"),
            glorot(rng, vec![ch, output_dim], ch, output_dim),
        )?,
        dense_b: store.register(
            format!("{prefix}.dense.bias"),
            Tensor::zeros(vec![output_dim]),
        )?,
    })
}

fn register_matcher(
    store: &mut ParameterStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    input_dim: usize,
    hidden: usize,
) -> Result<MatcherParams> {
    Ok(MatcherParams {
        hidden_w: store.register(
            format!("{prefix}.hidden.weight"),
            glorot(rng, vec![input_dim, hidden], input_dim, hidden),
        )?,
        hidden_b: store.register(format!("{prefix}.hidden.bias"), Tensor::zeros(vec![hidden]))?,
        out_w: store.register(
            format!("{prefix}.out.weight"),
            glorot(rng, vec![hidden, 1], hidden, 1),
        )?,
        out_b: store.register(format!("{prefix}.out.bias"), Tensor::zeros(vec![1]))?,
    })
}

/// Registers every parameter for `config` in a fixed order.
fn build(config: &ModelConfig, seed: u64) -> Result<(ParameterStore, Layout)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    let l = config.embed_dim;
    let limit = 1.0 / (l as f64).sqrt();
    let embedding = store.register_sparse(
        "embedding",
        uniform(&mut rng, vec![config.trigram_dim, l], limit),
    )?;
    let fields = config
        .fields
        .iter()
        .map(|f| {
            register_encoder(
                &mut store,
                &mut rng,
                f.field.name(),
                &f.encoder,
                l,
                f.output_dim,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let query = register_encoder(
        &mut store,
        &mut rng,
        "query",
        &config.query,
        l,
        config.query_dim(),
    )?;
    let h = config.matching_hidden_dim;
    let (matchers, mix) = match config.scoring {
        Scoring::Joint => (
            vec![register_matcher(
                &mut store,
                &mut rng,
                "match",
                config.doc_dim(),
                h,
            )?],
            None,
        ),
        Scoring::ScoreAggregation => {
            let matchers = config
                .fields
                .iter()
                .map(|f| {
                    register_matcher(
                        &mut store,
                        &mut rng,
                        &format!("match.{}", f.field),
                        f.output_dim,
                        h,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let mix = store.register("match.mix", Tensor::zeros(vec![config.fields.len()]))?;
            (matchers, Some(mix))
        }
    };
    Ok((
        store,
        Layout {
            embedding,
            fields,
            query,
            matchers,
            mix,
        },
    ))
}

/// An NRM-F network: its configuration and trainable parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParameterStore,
    layout: Layout,
}

impl Model {
    /// Fresh parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let (params, layout) = build(&config, seed)?;
        Ok(Model {
            config,
            params,
            layout,
        })
    }

    /// Rebuilds a model from named tensors, checking that they are exactly
    /// the tensors `config` declares, in declaration order.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let (mut params, layout) = build(&config, 0)?;
        if params.len() != tensors.len() {
            return Err(Error::config(format!(
                "config declares {} tensors, found {}",
                params.len(),
                tensors.len()
            )));
        }
        let ids: Vec<ParamId> = params.ids().collect();
        for (id, (name, t)) in ids.into_iter().zip(tensors) {
            let expected = params.get(id);
            if params.name(id) != name || expected.shape() != t.shape() {
                return Err(Error::config(format!(
                    "tensor {name} {:?} does not match config ({} {:?})",
                    t.shape(),
                    params.name(id),
                    expected.shape()
                )));
            }
            *params.get_mut(id) = t;
        }
        Ok(Model {
            config,
            params,
            layout,
        })
    }

    pub fn embedding(&self) -> ParamId {
        self.layout.embedding
    }

    /// Ids of one field encoder's parameters.
    pub fn field_encoder_params(&self, field: Field) -> Option<Vec<ParamId>> {
        let i = self.config.fields.iter().position(|f| f.field == field)?;
        let e = self.layout.fields[i];
        Some(vec![
            e.conv1_w, e.conv1_b, e.conv2_w, e.conv2_b, e.dense_w, e.dense_b,
        ])
    }

    /// The query tower's final projection weight `[channels, query_dim]`.
    pub fn query_projection(&self) -> ParamId {
        self.layout.query.dense_w
    }

    pub fn pass(&self, mode: Mode, rng: Option<ChaCha8Rng>) -> Pass<'_> {
        Pass {
            model: self,
            mode,
            rng,
            pad_cache: vec![None; self.config.fields.len()],
        }
    }

    pub fn prepare_document(&self, doc: &Document) -> PreparedDocument {
        let space = TrigramSpace;
        let fields = self
            .config
            .fields
            .iter()
            .map(|fc| {
                let tokenized: Vec<_> = doc
                    .instances(fc.field)
                    .into_iter()
                    .map(|s| {
                        if fc.field == Field::Url {
                            split_url(s)
                        } else {
                            normalize(s)
                        }
                    })
                    .filter(|t| !t.is_empty())
                    .collect();
                let texts: Vec<String> = tokenized.iter().map(|t| t.join()).collect();
                let instances: Vec<EncodedText> = select_instances(&texts, fc.max_instances)
                    .iter()
                    .map(|t| encode_tokens(&normalize(t), fc.encoder.max_tokens, &space))
                    .collect();
                FieldInput {
                    present: instances.len(),
                    instances,
                }
            })
            .collect();
        PreparedDocument {
            id: doc.id.clone(),
            fields,
        }
    }

    pub fn prepare_query(&self, id: &str, text: &str) -> Result<PreparedQuery> {
        let tokens = normalize(text);
        if tokens.is_empty() {
            return Err(Error::data(format!(
                "query {id} is empty after normalization"
            )));
        }
        Ok(PreparedQuery {
            id: id.to_string(),
            token_count: tokens.len(),
            text: encode_tokens(&tokens, self.config.query.max_tokens, &TrigramSpace),
        })
    }

    /// Eval-mode score of one query-document pair.
    pub fn score(&self, query: &PreparedQuery, doc: &PreparedDocument) -> Result<f64> {
        Ok(self.score_all(query, std::slice::from_ref(doc))?[0])
    }

    /// Eval-mode scores of documents for one query, sharing one query encoding.
    pub fn score_all(&self, query: &PreparedQuery, docs: &[PreparedDocument]) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.params);
        let mut pass = self.pass(Mode::Eval, None);
        let q = pass.query(&mut tape, query)?;
        docs.iter()
            .map(|d| {
                let dr = pass.document(&mut tape, d)?;
                let s = pass.score(&mut tape, q, &dr)?;
                tape.value(s).item()
            })
            .collect()
    }
}

/// Per-field and concatenated document representation.
#[derive(Clone, Debug)]
pub struct DocRepr {
    pub fields: Vec<Var>,
    pub joint: Var,
}

/// One forward pass over a single tape. Create a fresh pass per tape: it
/// caches the encoding of all-padding instances.
pub struct Pass<'m> {
    model: &'m Model,
    mode: Mode,
    rng: Option<ChaCha8Rng>,
    pad_cache: Vec<Option<Var>>,
}

/// Inverted dropout on a whole vector: kept units scaled by `1 / keep`.
fn unit_dropout(tape: &mut Tape<'_>, x: Var, keep: f64, rng: &mut ChaCha8Rng) -> Result<Var> {
    let n = tape.value(x).len();
    let factors = (0..n)
        .map(|_| {
            if rng.random_bool(keep) {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect();
    tape.mul_const(x, factors)
}

/// Masked average of instance representations: `rowsum(R ∘ B) / max(1, present)`
/// where the first `present` rows of `B` are one. Without masking every row is
/// averaged over the slot count.
pub fn aggregate_field(
    tape: &mut Tape<'_>,
    rows: &[Var],
    present: usize,
    masking: bool,
) -> Result<Var> {
    let r = tape.stack(rows)?;
    if !masking {
        let s = tape.sum_rows(r);
        return Ok(tape.scale(s, 1.0 / rows.len() as f64));
    }
    let d = tape.value(r).last_dim();
    let mask: Vec<f64> = (0..rows.len())
        .flat_map(|i| std::iter::repeat_n(if i < present { 1.0 } else { 0.0 }, d))
        .collect();
    let masked = tape.mul_const(r, mask)?;
    let s = tape.sum_rows(masked);
    Ok(tape.scale(s, 1.0 / present.max(1) as f64))
}

/// Field-level dropout: in training each field survives with its keep
/// probability (scaled by its inverse) or is zeroed entirely; identity in eval.
pub fn field_dropout(
    tape: &mut Tape<'_>,
    reprs: &[Var],
    keep_probs: &[f64],
    rng: Option<&mut ChaCha8Rng>,
    mode: Mode,
) -> Result<Vec<Var>> {
    if reprs.len() != keep_probs.len() {
        return Err(Error::config("one keep probability per field required"));
    }
    if let Some(&p) = keep_probs.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
        return Err(Error::config(format!("keep_prob {p} must lie in (0, 1]")));
    }
    let rng = match (mode, rng) {
        (Mode::Train, Some(rng)) => rng,
        (Mode::Train, None) if keep_probs.iter().any(|&p| p < 1.0) => {
            return Err(Error::config("training-mode field dropout needs an rng"));
        }
        _ => return Ok(reprs.to_vec()),
    };
    let mut out = Vec::with_capacity(reprs.len());
    for (&x, &keep) in reprs.iter().zip(keep_probs) {
        if keep >= 1.0 {
            out.push(x);
        } else if rng.random_bool(keep) {
            out.push(tape.scale(x, 1.0 / keep));
        } else {
            out.push(tape.scale(x, 0.0));
        }
    }
    Ok(out)
}

impl Pass<'_> {
    fn dropout_rng(&mut self) -> Option<&mut ChaCha8Rng> {
        match self.mode {
            Mode::Train => self.rng.as_mut(),
            Mode::Eval => None,
        }
    }

    /// The instance encoder up to its dense output, before conventional dropout.
    fn encode_core(
        &self,
        tape: &mut Tape,
        vectors: Arc<[SparseVector]>,
        true_length: usize,
        conv: &ConvConfig,
        p: EncoderParams,
    ) -> Result<Var> {
        if vectors.len() != conv.max_tokens {
            return Err(Error::config(format!(
                "encoded length {} differs from max_tokens {}",
                vectors.len(),
                conv.max_tokens
            )));
        }
        let table = tape.param(self.model.layout.embedding);
        let x = tape.sparse_embed(vectors, table)?;
        let x = tape.row_normalize(x);
        let (w1, b1) = (tape.param(p.conv1_w), tape.param(p.conv1_b));
        let h = tape.conv1d(x, w1, b1, conv.conv1_stride)?;
        let h = tape.tanh(h);
        let (w2, b2) = (tape.param(p.conv2_w), tape.param(p.conv2_b));
        let h = tape.conv1d(h, w2, b2, conv.conv2_stride)?;
        let h = tape.tanh(h);
        let rows = match conv.pooling {
            PoolKind::Avg if conv.avg_pool_excludes_padding => conv.covered_rows(true_length),
            _ => tape.value(h).rows(),
        };
        let pooled = tape.pool_rows(h, conv.pooling, rows)?;
        let (wd, bd) = (tape.param(p.dense_w), tape.param(p.dense_b));
        let o = tape.dense(pooled, wd, bd)?;
        Ok(tape.tanh(o))
    }

    fn conventional_dropout(&mut self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let keep = self.model.config.dropout_keep;
        match self.dropout_rng() {
            Some(rng) if keep < 1.0 => unit_dropout(tape, x, keep, rng),
            _ => Ok(x),
        }
    }

    /// Encoding of an all-padding instance of a field, computed once per pass.
    fn padding_core(&mut self, tape: &mut Tape<'_>, field_index: usize) -> Result<Var> {
        if let Some(v) = self.pad_cache[field_index] {
            return Ok(v);
        }
        let fc = &self.model.config.fields[field_index];
        let pad = vec![SparseVector::empty(self.model.config.trigram_dim); fc.encoder.max_tokens];
        let v = self.encode_core(
            tape,
            pad.into(),
            0,
            &fc.encoder,
            self.model.layout.fields[field_index],
        )?;
        self.pad_cache[field_index] = Some(v);
        Ok(v)
    }

    /// Encodes one instance of the field at position `field_index`.
    pub fn encode_instance(
        &mut self,
        tape: &mut Tape,
        text: &EncodedText,
        field_index: usize,
    ) -> Result<Var> {
        let core = if text.is_padding() {
            self.padding_core(tape, field_index)?
        } else {
            let fc = &self.model.config.fields[field_index];
            self.encode_core(
                tape,
                text.vectors.clone(),
                text.true_length,
                &fc.encoder,
                self.model.layout.fields[field_index],
            )?
        };
        self.conventional_dropout(tape, core)
    }

    /// Masked field representation, before field-level dropout.
    pub fn field(
        &mut self,
        tape: &mut Tape,
        input: &FieldInput,
        field_index: usize,
    ) -> Result<Var> {
        let fc = &self.model.config.fields[field_index];
        let m = fc.max_instances;
        if input.instances.len() > m || input.present > input.instances.len() {
            return Err(Error::data(format!(
                "{}: {} instances ({} present) for {m} slots",
                fc.field,
                input.instances.len(),
                input.present
            )));
        }
        let mut rows = Vec::with_capacity(m);
        for slot in 0..m {
            let v = match input.instances.get(slot) {
                Some(text) => self.encode_instance(tape, text, field_index)?,
                None => {
                    let core = self.padding_core(tape, field_index)?;
                    self.conventional_dropout(tape, core)?
                }
            };
            rows.push(v);
        }
        aggregate_field(tape, &rows, input.present, self.model.config.masking)
    }

    /// Field representations after field-level dropout, and their concatenation.
    pub fn document(&mut self, tape: &mut Tape, doc: &PreparedDocument) -> Result<DocRepr> {
        let k = self.model.config.fields.len();
        if doc.fields.len() != k {
            return Err(Error::data(format!(
                "document {} has {} fields, model expects {k}",
                doc.id,
                doc.fields.len()
            )));
        }
        let mut reprs = Vec::with_capacity(k);
        for (i, input) in doc.fields.iter().enumerate() {
            reprs.push(self.field(tape, input, i)?);
        }
        let keep: Vec<f64> = self
            .model
            .config
            .fields
            .iter()
            .map(|f| f.keep_prob)
            .collect();
        let mode = self.mode;
        let fields = field_dropout(tape, &reprs, &keep, self.rng.as_mut(), mode)?;
        let joint = tape.concat(&fields)?;
        Ok(DocRepr { fields, joint })
    }

    /// Query representation laid out as one slice per field (width `Σ D_i`).
    pub fn query(&mut self, tape: &mut Tape, query: &PreparedQuery) -> Result<Var> {
        let cfg = &self.model.config;
        let core = self.encode_core(
            tape,
            query.text.vectors.clone(),
            query.text.true_length,
            &cfg.query,
            self.model.layout.query,
        )?;
        let q = self.conventional_dropout(tape, core)?;
        match cfg.query_mode {
            QueryMode::PerField => Ok(q),
            QueryMode::Shared => tape.concat(&vec![q; cfg.fields.len()]),
        }
    }

    fn matcher(&self, tape: &mut Tape<'_>, input: Var, m: MatcherParams) -> Result<Var> {
        let (wh, bh) = (tape.param(m.hidden_w), tape.param(m.hidden_b));
        let h = tape.dense(input, wh, bh)?;
        let h = tape.tanh(h);
        let (wo, bo) = (tape.param(m.out_w), tape.param(m.out_b));
        tape.dense(h, wo, bo)
    }

    /// Relevance score of a document representation for a query representation.
    pub fn score(&mut self, tape: &mut Tape<'_>, query: Var, doc: &DocRepr) -> Result<Var> {
        let layout = &self.model.layout;
        match self.model.config.scoring {
            Scoring::Joint => {
                let x = tape.hadamard(query, doc.joint)?;
                self.matcher(tape, x, layout.matchers[0])
            }
            Scoring::ScoreAggregation => {
                let mut scores = Vec::with_capacity(doc.fields.len());
                let mut offset = 0;
                for (i, fc) in self.model.config.fields.iter().enumerate() {
                    let q = tape.slice(query, offset, fc.output_dim)?;
                    offset += fc.output_dim;
                    let x = tape.hadamard(q, doc.fields[i])?;
                    scores.push(self.matcher(tape, x, layout.matchers[i])?);
                }
                let s = tape.concat(&scores)?;
                let mix = tape.param(layout.mix.expect("aggregation has mixing weights"));
                let w = tape.softmax(mix);
                let ws = tape.hadamard(w, s)?;
                Ok(tape.sum(ws))
            }
        }
    }
}
