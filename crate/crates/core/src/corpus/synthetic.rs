//! Seeded synthetic multi-field collections.
//!
//! Every query has a latent entity and topic. Every judged document has a
//! latent entity match and topic match in `[0, 1]`; their mean is the
//! affinity, thresholded into a grade. Each field sees a noisy copy of the two
//! latents and renders them as text: a slot either carries the query's
//! entity/topic word or a distractor from another entity/topic.
//!
//! Fields differ in what they reveal. Titles are short and clean, URLs
//! fuse entity words into a single domain token, bodies are long and mostly
//! background with scattered topic words, anchors mix both aspects with
//! medium noise, and clicked queries look like the query itself with little
//! noise. Clicked queries are more likely to exist for high-affinity
//! documents while keeping the configured coverage on average.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Corpus, Document, Field, Grade, JudgedQuery};
use crate::error::{Error, Result};

/// Standard deviation of the Gaussian noise each field adds to the latents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldNoise {
    pub title: f64,
    pub url: f64,
    pub body: f64,
    pub anchors: f64,
    pub clicked_queries: f64,
}

impl Default for FieldNoise {
    fn default() -> Self {
        FieldNoise {
            title: 0.15,
            url: 0.2,
            body: 0.15,
            anchors: 0.12,
            clicked_queries: 0.05,
        }
    }
}

impl FieldNoise {
    pub fn get(&self, field: Field) -> f64 {
        match field {
            Field::Title => self.title,
            Field::Url => self.url,
            Field::Body => self.body,
            Field::Anchors => self.anchors,
            Field::ClickedQueries => self.clicked_queries,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub queries: usize,
    pub docs_per_query: usize,
    pub vocab_size: usize,
    pub topics: usize,
    pub entities: usize,
    pub words_per_topic: usize,
    /// Entities get between 1 and this many words.
    pub max_words_per_entity: usize,
    /// Queries name their entity plus between 1 and this many topic words.
    pub max_query_topic_words: usize,
    pub anchor_coverage: f64,
    pub click_coverage: f64,
    /// How strongly click presence follows affinity, in `[0, 1]`.
    pub click_bias: f64,
    pub noise: FieldNoise,
    pub body_length: usize,
    /// Share of body tokens that are topic slots.
    pub body_topic_rate: f64,
    /// Share of body tokens that are entity slots.
    pub body_entity_rate: f64,
    /// Ascending affinity thresholds for grades 1..=4.
    pub grade_edges: [f64; 4],
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 0,
            queries: 2000,
            docs_per_query: 10,
            vocab_size: 800,
            topics: 40,
            entities: 60,
            words_per_topic: 8,
            max_words_per_entity: 2,
            max_query_topic_words: 2,
            anchor_coverage: 0.61,
            click_coverage: 0.73,
            click_bias: 0.8,
            noise: FieldNoise::default(),
            body_length: 60,
            body_topic_rate: 0.15,
            body_entity_rate: 0.03,
            grade_edges: [0.35, 0.5, 0.65, 0.8],
        }
    }
}

/// Background words required beyond the entity and topic words.
const MIN_BACKGROUND: usize = 50;

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(format!("{name} = {v} must lie in [0, 1]")))
            }
        };
        unit("anchor_coverage", self.anchor_coverage)?;
        unit("click_coverage", self.click_coverage)?;
        unit("click_bias", self.click_bias)?;
        unit("body_topic_rate", self.body_topic_rate)?;
        unit("body_entity_rate", self.body_entity_rate)?;
        if self.body_topic_rate + self.body_entity_rate > 1.0 {
            return Err(Error::config("body slot rates exceed 1"));
        }
        if self.topics < 2 || self.entities < 2 {
            return Err(Error::config("need at least two topics and two entities"));
        }
        if self.words_per_topic == 0
            || self.max_words_per_entity == 0
            || self.max_query_topic_words == 0
        {
            return Err(Error::config("topics and entities need at least one word"));
        }
        if self.queries == 0 || self.docs_per_query == 0 || self.body_length == 0 {
            return Err(Error::config(
                "queries, docs_per_query and body_length must be positive",
            ));
        }
        let needed = self.topics * self.words_per_topic
            + self.entities * self.max_words_per_entity
            + MIN_BACKGROUND;
        if self.vocab_size < needed {
            return Err(Error::config(format!(
                "vocab_size {} too small to separate topics and entities (need {needed})",
                self.vocab_size
            )));
        }
        if self.grade_edges.windows(2).any(|w| w[0] >= w[1])
            || self.grade_edges[0] <= 0.0
            || self.grade_edges[3] > 1.0
        {
            return Err(Error::config(format!(
                "grade_edges {:?} must increase strictly within (0, 1]",
                self.grade_edges
            )));
        }
        for f in Field::ALL {
            if self.noise.get(f) < 0.0 {
                return Err(Error::config(format!("negative noise for {f}")));
            }
        }
        Ok(())
    }

    pub fn grade(&self, affinity: f64) -> Grade {
        self.grade_edges.iter().filter(|&&e| affinity >= e).count() as Grade
    }
}

/// A field's noisy view of the document latents.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldLatent {
    pub present: bool,
    pub entity: f64,
    pub topic: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DocLatent {
    pub query_id: String,
    pub doc_id: String,
    pub entity: f64,
    pub topic: f64,
    pub affinity: f64,
    /// Indexed like [`Field::ALL`].
    pub fields: [FieldLatent; 5],
}

impl DocLatent {
    pub fn field(&self, field: Field) -> FieldLatent {
        self.fields[Field::ALL.iter().position(|&f| f == field).unwrap()]
    }

    /// Score an oracle would assign from one field's latent view alone;
    /// missing fields score zero.
    pub fn field_oracle(&self, field: Field) -> f64 {
        let l = self.field(field);
        if l.present {
            (l.entity + l.topic) / 2.0
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub latents: Vec<DocLatent>,
}

struct Lexicon {
    entities: Vec<Vec<String>>,
    topics: Vec<Vec<String>>,
    background: Vec<String>,
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    const CONSONANTS: &[u8] = b"bcdfghjklmnprstvwz";
    const VOWELS: &[u8] = b"aeiou";
    let len = rng.random_range(3..=7);
    let start_vowel = rng.random_bool(0.3);
    (0..len)
        .map(|i| {
            let set = if (i % 2 == 0) == start_vowel {
                VOWELS
            } else {
                CONSONANTS
            };
            *set.choose(rng).unwrap() as char
        })
        .collect()
}

impl Lexicon {
    fn build(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut seen = BTreeSet::new();
        let mut words = Vec::with_capacity(cfg.vocab_size);
        while words.len() < cfg.vocab_size {
            let w = pseudo_word(rng);
            if seen.insert(w.clone()) {
                words.push(w);
            }
        }
        let mut it = words.into_iter();
        let entities = (0..cfg.entities)
            .map(|_| {
                let n = rng.random_range(1..=cfg.max_words_per_entity);
                it.by_ref().take(n).collect()
            })
            .collect();
        let topics = (0..cfg.topics)
            .map(|_| it.by_ref().take(cfg.words_per_topic).collect())
            .collect();
        Lexicon {
            entities,
            topics,
            background: it.collect(),
        }
    }
}

/// Pick an index other than `own` uniformly.
fn other(rng: &mut ChaCha8Rng, n: usize, own: usize) -> usize {
    let k = rng.random_range(0..n - 1);
    if k >= own {
        k + 1
    } else {
        k
    }
}

const TITLE_ENTITY_SLOTS: usize = 2;
const TITLE_TOPIC_SLOTS: usize = 2;
const TITLE_BACKGROUND: usize = 2;

struct QuerySpec {
    entity: usize,
    topic: usize,
    topic_words: Vec<String>,
}

struct Renderer<'a> {
    lex: &'a Lexicon,
    q: &'a QuerySpec,
}

/// `n` flags of which `n * p`, stochastically rounded, are set, in random
/// order. Counting matches this way keeps the text close to the latent.
fn matching_slots(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<bool> {
    let x = n as f64 * p;
    let k = (x.floor() as usize + usize::from(rng.random_bool(x - x.floor()))).min(n);
    let mut flags = vec![true; k];
    flags.resize(n, false);
    flags.shuffle(rng);
    flags
}

impl Renderer<'_> {
    fn entity_word(&self, rng: &mut ChaCha8Rng, matched: bool) -> String {
        let e = if matched {
            self.q.entity
        } else {
            other(rng, self.lex.entities.len(), self.q.entity)
        };
        self.lex.entities[e].choose(rng).unwrap().clone()
    }

    /// A matched slot repeats one of the query's own topic words.
    fn topic_word(&self, rng: &mut ChaCha8Rng, matched: bool) -> String {
        if matched {
            return self.q.topic_words.choose(rng).unwrap().clone();
        }
        let t = other(rng, self.lex.topics.len(), self.q.topic);
        self.lex.topics[t].choose(rng).unwrap().clone()
    }

    fn background(&self, rng: &mut ChaCha8Rng) -> String {
        self.lex.background.choose(rng).unwrap().clone()
    }

    fn title(&self, rng: &mut ChaCha8Rng, l: FieldLatent) -> String {
        let mut words: Vec<String> = Vec::new();
        for m in matching_slots(rng, TITLE_ENTITY_SLOTS, l.entity) {
            words.push(self.entity_word(rng, m));
        }
        for m in matching_slots(rng, TITLE_TOPIC_SLOTS, l.topic) {
            words.push(self.topic_word(rng, m));
        }
        for _ in 0..TITLE_BACKGROUND {
            words.push(self.background(rng));
        }
        words.shuffle(rng);
        capitalize(&words.join(" "))
    }

    fn url(&self, rng: &mut ChaCha8Rng, l: FieldLatent) -> String {
        let e = if rng.random_bool(l.entity) {
            self.q.entity
        } else {
            other(rng, self.lex.entities.len(), self.q.entity)
        };
        let domain: String = self.lex.entities[e].concat();
        let matched = rng.random_bool(l.topic);
        let topic = self.topic_word(rng, matched);
        let page = self.background(rng);
        format!(
            "https://www.{domain}.com/{topic}/{page}-{}.html",
            rng.random_range(1..100)
        )
    }

    fn body(&self, rng: &mut ChaCha8Rng, l: FieldLatent, cfg: &SyntheticConfig) -> String {
        let n = cfg.body_length;
        let n_topic = (n as f64 * cfg.body_topic_rate).round() as usize;
        let n_entity = ((n as f64 * cfg.body_entity_rate).round() as usize).min(n - n_topic);
        let mut words: Vec<String> = Vec::with_capacity(n);
        for m in matching_slots(rng, n_topic, l.topic) {
            words.push(self.topic_word(rng, m));
        }
        for m in matching_slots(rng, n_entity, l.entity) {
            words.push(self.entity_word(rng, m));
        }
        while words.len() < n {
            words.push(self.background(rng));
        }
        words.shuffle(rng);
        let mut text = String::new();
        for (i, chunk) in words.chunks(12).enumerate() {
            if i > 0 {
                text.push(' ');
            }
            text.push_str(&capitalize(&chunk.join(" ")));
            text.push('.');
        }
        text
    }

    fn anchor(&self, rng: &mut ChaCha8Rng, entity: bool, topic: bool) -> String {
        let mut words = vec![self.entity_word(rng, entity), self.topic_word(rng, topic)];
        for _ in 0..rng.random_range(0..=2) {
            words.push(self.background(rng));
        }
        words.shuffle(rng);
        words.join(" ")
    }

    fn clicked_query(&self, rng: &mut ChaCha8Rng, entity: bool, topic: bool) -> String {
        let e = if entity {
            self.q.entity
        } else {
            other(rng, self.lex.entities.len(), self.q.entity)
        };
        let mut words = self.lex.entities[e].clone();
        if topic {
            words.extend(self.q.topic_words.iter().cloned());
        } else {
            let t = other(rng, self.lex.topics.len(), self.q.topic);
            let n = self.q.topic_words.len();
            words.extend(self.lex.topics[t].choose_multiple(rng, n).cloned());
        }
        words.join(" ")
    }

    /// Between 1 and 4 distinct instances whose entity and topic matches
    /// follow the field latent, each repeated up to `max_mult` times.
    fn instances(
        &self,
        rng: &mut ChaCha8Rng,
        l: FieldLatent,
        max_mult: usize,
        make: impl Fn(&Self, &mut ChaCha8Rng, bool, bool) -> String,
    ) -> Vec<String> {
        let n = rng.random_range(1..=4);
        let entity = matching_slots(rng, n, l.entity);
        let topic = matching_slots(rng, n, l.topic);
        let mut out = Vec::new();
        for i in 0..n {
            let text = make(self, rng, entity[i], topic[i]);
            for _ in 0..rng.random_range(1..=max_mult) {
                out.push(text.clone());
            }
        }
        out.shuffle(rng);
        out
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(first) => first.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// CDF of the mean of two independent uniforms (triangular on `[0, 1]`).
fn mean_cdf(a: f64) -> f64 {
    let a = a.clamp(0.0, 1.0);
    if a < 0.5 {
        2.0 * a * a
    } else {
        1.0 - 2.0 * (1.0 - a) * (1.0 - a)
    }
}

/// Generates a corpus and the latent variables behind every document.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lex = Lexicon::build(cfg, &mut rng);
    let normals: Vec<Normal<f64>> = Field::ALL
        .iter()
        .map(|&f| Normal::new(0.0, cfg.noise.get(f)).expect("noise validated"))
        .collect();

    let mut corpus = Corpus::default();
    let mut latents = Vec::with_capacity(cfg.queries * cfg.docs_per_query);
    for qi in 0..cfg.queries {
        let query_id = format!("q{qi:05}");
        let entity = rng.random_range(0..cfg.entities);
        let topic = rng.random_range(0..cfg.topics);
        let n_topic = rng.random_range(1..=cfg.max_query_topic_words.min(cfg.words_per_topic));
        let topic_words: Vec<String> = lex.topics[topic]
            .choose_multiple(&mut rng, n_topic)
            .cloned()
            .collect();
        let text = lex.entities[entity]
            .iter()
            .chain(&topic_words)
            .cloned()
            .collect::<Vec<_>>()
            .join(" ");
        let spec = QuerySpec {
            entity,
            topic,
            topic_words,
        };
        let render = Renderer {
            lex: &lex,
            q: &spec,
        };

        let mut judgments = BTreeMap::new();
        for di in 0..cfg.docs_per_query {
            let doc_id = format!("{query_id}-d{di}");
            let ent: f64 = rng.random();
            let top: f64 = rng.random();
            let affinity = (ent + top) / 2.0;

            let mut fields = [FieldLatent {
                present: true,
                entity: 0.0,
                topic: 0.0,
            }; 5];
            for (k, l) in fields.iter_mut().enumerate() {
                l.entity = (ent + normals[k].sample(&mut rng)).clamp(0.0, 1.0);
                l.topic = (top + normals[k].sample(&mut rng)).clamp(0.0, 1.0);
            }
            let anchors_present = rng.random_bool(cfg.anchor_coverage);
            let spread = cfg.click_coverage.min(1.0 - cfg.click_coverage);
            let p_click = (cfg.click_coverage
                + cfg.click_bias * (2.0 * mean_cdf(affinity) - 1.0) * spread)
                .clamp(0.0, 1.0);
            let clicks_present = rng.random_bool(p_click);
            fields[3].present = anchors_present;
            fields[4].present = clicks_present;

            let title = render.title(&mut rng, fields[0]);
            let url = render.url(&mut rng, fields[1]);
            let body = render.body(&mut rng, fields[2], cfg);
            let anchors = if anchors_present {
                render.instances(&mut rng, fields[3], 3, Renderer::anchor)
            } else {
                Vec::new()
            };
            let clicked_queries = if clicks_present {
                render.instances(&mut rng, fields[4], 4, Renderer::clicked_query)
            } else {
                Vec::new()
            };

            judgments.insert(doc_id.clone(), cfg.grade(affinity));
            corpus.documents.push(Document {
                id: doc_id.clone(),
                title,
                url,
                body,
                anchors,
                clicked_queries,
            });
            latents.push(DocLatent {
                query_id: query_id.clone(),
                doc_id,
                entity: ent,
                topic: top,
                affinity,
                fields,
            });
        }
        corpus.queries.push(JudgedQuery {
            id: query_id,
            text,
            judgments,
        });
    }
    Ok(SyntheticCorpus { corpus, latents })
}
