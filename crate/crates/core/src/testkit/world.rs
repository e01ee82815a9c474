//! A tiny scripted world: documents annotated with the facts they state,
//! multi-hop questions over those facts, and rule-driven mocks that answer
//! by reading the prompts the pipeline builds.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clients::scripted::RuleLlm;
use crate::clients::{ChatRequest, ClientError, CrossScorer, LanguageModel};
use crate::corpus::{Corpus, Document};
use crate::embedding::EmbeddingStore;
use crate::eval::{Gold, Qrels};
use crate::pipeline::Question;
use crate::prompts::{render_evidence, FINAL_ANSWER, INTERMEDIATE_ANSWER};
use crate::text::tokenize;

pub const UNKNOWN: &str = "unknown";

/// A statement a document makes about a sub-question. Unsound facts are
/// what a careless reader takes away; the meta-reasoner ignores them.
#[derive(Debug, Clone, PartialEq)]
pub struct Fact {
    pub sub_question: String,
    pub answer: String,
    pub sound: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldDoc {
    pub doc: Document,
    pub facts: Vec<Fact>,
    /// Sparse embedding as (axis, weight); empty means a random direction
    /// in the noise block.
    pub axes: Vec<(usize, f64)>,
    /// Added to the scorer's logit when the doc states any fact for the query.
    pub boost: f64,
}

impl WorldDoc {
    pub fn new(id: &str, text: &str) -> Self {
        Self {
            doc: Document::new(id, text),
            facts: Vec::new(),
            axes: Vec::new(),
            boost: 0.0,
        }
    }

    pub fn titled(mut self, title: &str) -> Self {
        self.doc = self.doc.with_title(title);
        self
    }

    pub fn axis(mut self, axis: usize, weight: f64) -> Self {
        self.axes.push((axis, weight));
        self
    }

    pub fn fact(mut self, sub_question: &str, answer: &str) -> Self {
        self.facts.push(Fact {
            sub_question: sub_question.into(),
            answer: answer.into(),
            sound: true,
        });
        self
    }

    pub fn unsound(mut self, sub_question: &str, answer: &str) -> Self {
        self.facts.push(Fact {
            sub_question: sub_question.into(),
            answer: answer.into(),
            sound: false,
        });
        self
    }

    pub fn boost(mut self, b: f64) -> Self {
        self.boost = b;
        self
    }
}

/// Question answered by chaining hops; each hop pattern's `{}` is filled
/// with the previous answer (the seed entity for the first hop).
#[derive(Debug, Clone, PartialEq)]
pub struct WorldQuestion {
    pub qid: String,
    pub question: String,
    pub seed: String,
    pub hops: Vec<String>,
    pub gold: String,
    /// Doc ids that answer each hop soundly.
    pub gold_docs: Vec<String>,
}

impl WorldQuestion {
    pub fn sub_question(&self, hop: usize, prev: &str) -> String {
        self.hops[hop].replacen("{}", prev, 1)
    }
}

#[derive(Debug, Clone, Default)]
pub struct World {
    pub docs: Vec<WorldDoc>,
    pub questions: Vec<WorldQuestion>,
    /// Number of random noise dimensions appended after the named axes.
    pub noise_dims: usize,
    pub seed: u64,
}

impl World {
    pub fn corpus(&self) -> Corpus {
        Corpus::from_documents(self.docs.iter().map(|d| d.doc.clone()).collect()).expect("world corpus is valid")
    }

    pub fn questions(&self) -> Vec<Question> {
        self.questions
            .iter()
            .map(|q| Question {
                qid: q.qid.clone(),
                question: q.question.clone(),
                answer: Some(Gold::One(q.gold.clone())),
            })
            .collect()
    }

    /// Graded 1 for every hop's gold doc, keyed by question id.
    pub fn qrels(&self) -> Qrels {
        let mut q = Qrels::default();
        for wq in &self.questions {
            for d in &wq.gold_docs {
                q.insert(&wq.qid, d, 1);
            }
        }
        q
    }

    fn named_axes(&self) -> usize {
        self.docs
            .iter()
            .flat_map(|d| d.axes.iter().map(|a| a.0 + 1))
            .max()
            .unwrap_or(0)
    }

    pub fn embed_dim(&self) -> usize {
        self.named_axes() + self.noise_dims
    }

    /// Docs with axes get exactly those components; the rest get a random
    /// direction inside the noise block, orthogonal to every named axis.
    pub fn embeddings(&self) -> EmbeddingStore<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let na = self.named_axes();
        let dim = self.embed_dim();
        let mut store = EmbeddingStore::new(dim).expect("positive dim");
        for d in &self.docs {
            let mut v = vec![0.0; dim];
            if d.axes.is_empty() {
                for x in &mut v[na..] {
                    *x = rng.gen_range(-1.0..1.0);
                }
            } else {
                for &(a, w) in &d.axes {
                    v[a] += w;
                }
            }
            store.insert(d.doc.doc_id.clone(), v).expect("unique ids");
        }
        store
    }

    fn by_rendered_line(&self) -> HashMap<String, usize> {
        self.docs
            .iter()
            .enumerate()
            .map(|(i, d)| (strip_evidence_tag(&render_evidence(&[&d.doc])).to_string(), i))
            .collect()
    }

    /// Checks that every gold doc shares no token with the sub-question it
    /// answers along the gold chain.
    pub fn gold_docs_lexically_hidden(&self) -> Result<(), String> {
        for q in &self.questions {
            let mut prev = q.seed.clone();
            for (hop, gold) in q.gold_docs.iter().enumerate() {
                let sq = q.sub_question(hop, &prev);
                let d = self.docs.iter().find(|d| &d.doc.doc_id == gold).ok_or(gold.clone())?;
                let st = tokenize(&sq);
                if let Some(t) = tokenize(&d.doc.full_text()).iter().find(|t| st.contains(t)) {
                    return Err(format!("{gold} shares {t:?} with {sq:?}"));
                }
                prev = d
                    .facts
                    .iter()
                    .find(|f| f.sub_question == sq && f.sound)
                    .map(|f| f.answer.clone())
                    .ok_or(format!("{gold} does not answer {sq:?}"))?;
            }
        }
        Ok(())
    }
}

fn strip_evidence_tag(line: &str) -> &str {
    match line.find("]: ") {
        Some(i) if line.starts_with("[Evidence ") => &line[i + 3..],
        _ => line,
    }
}

fn last_question(prompt: &str) -> Option<&str> {
    prompt
        .lines()
        .rev()
        .find_map(|l| l.strip_prefix("Question: "))
        .map(str::trim)
}

/// Evidence docs named in the prompt, in prompt order.
fn evidence_docs<'w>(world: &'w World, index: &HashMap<String, usize>, prompt: &str) -> Vec<&'w WorldDoc> {
    prompt
        .lines()
        .filter(|l| l.starts_with("[Evidence "))
        .filter_map(|l| index.get(strip_evidence_tag(l)).map(|&i| &world.docs[i]))
        .collect()
}

fn answers_in(docs: &[&WorldDoc], sub_question: &str, sound_only: bool) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for d in docs {
        for f in &d.facts {
            if f.sub_question == sub_question && (f.sound || !sound_only) && !out.contains(&f.answer) {
                out.push(f.answer.clone());
            }
        }
    }
    out
}

fn respond(world: &World, index: &HashMap<String, usize>, req: &ChatRequest) -> Vec<String> {
    let prompt = req.prompt_text();
    let n = req.n;
    if !req.stop.is_empty() {
        return vec![decompose(world, &prompt)];
    }
    let docs = evidence_docs(world, index, &prompt);
    let question = last_question(&prompt).unwrap_or_default();
    if prompt.contains("Existing reasoning path:") {
        return vec![meta(world, &prompt, question, &docs)];
    }
    let answers = answers_in(&docs, question, false);
    if answers.is_empty() {
        return vec![UNKNOWN.to_string(); n];
    }
    (0..n).map(|j| answers[j % answers.len()].clone()).collect()
}

fn decompose(world: &World, prompt: &str) -> String {
    let tail = match prompt.rfind("Question: ") {
        Some(i) => &prompt[i..],
        None => return "I cannot tell.".into(),
    };
    let question = tail.lines().next().unwrap_or("").trim_start_matches("Question: ").trim();
    let Some(q) = world.questions.iter().find(|q| q.question == question) else {
        return format!(" No.\n{FINAL_ANSWER} {UNKNOWN}");
    };
    let answers: Vec<&str> = tail
        .lines()
        .filter_map(|l| l.strip_prefix(INTERMEDIATE_ANSWER))
        .map(str::trim)
        .collect();
    let hop = answers.len();
    if hop >= q.hops.len() {
        return format!("{FINAL_ANSWER} {}", answers.last().copied().unwrap_or(UNKNOWN));
    }
    let prev = answers.last().copied().unwrap_or(&q.seed);
    let lead = if hop == 0 { " Yes.\n" } else { "" };
    format!("{lead}Follow up: {}\n{INTERMEDIATE_ANSWER} (model guess)", q.sub_question(hop, prev))
}

/// Walks the question's hop chain over sound facts in the pooled evidence;
/// falls back to the sequential answer stated in the reasoning path.
fn meta(world: &World, prompt: &str, question: &str, docs: &[&WorldDoc]) -> String {
    fn walk(q: &WorldQuestion, hop: usize, prev: &str, docs: &[&WorldDoc]) -> Option<String> {
        if hop == q.hops.len() {
            return Some(prev.to_string());
        }
        let sq = q.sub_question(hop, prev);
        answers_in(docs, &sq, true)
            .iter()
            .find_map(|a| walk(q, hop + 1, a, docs))
    }
    let sequential = prompt
        .split("Existing reasoning path:")
        .nth(1)
        .and_then(|rest| rest.lines().find_map(|l| l.strip_prefix(FINAL_ANSWER)))
        .map(str::trim)
        .unwrap_or(UNKNOWN)
        .to_string();
    match world
        .questions
        .iter()
        .find(|q| q.question == question)
        .and_then(|q| walk(q, 0, &q.seed, docs))
    {
        Some(a) => format!("the evidence links each step of the question.\n{FINAL_ANSWER} {a}"),
        None => format!("the evidence does not settle it; keeping the reasoning path.\n{FINAL_ANSWER} {sequential}"),
    }
}

/// Chat mock answering from the world's fact table.
pub fn world_llm(world: Arc<World>) -> impl LanguageModel {
    let index = world.by_rendered_line();
    RuleLlm::new(move |req: &ChatRequest| respond(&world, &index, req))
}

/// Logit 3 (+ boost) for docs stating any fact for the query, otherwise a
/// small lexical-overlap term below zero.
pub struct WorldScorer {
    world: Arc<World>,
    by_text: HashMap<String, usize>,
}

impl WorldScorer {
    pub fn new(world: Arc<World>) -> Self {
        let by_text = world
            .docs
            .iter()
            .enumerate()
            .map(|(i, d)| (d.doc.full_text(), i))
            .collect();
        Self { world, by_text }
    }
}

impl CrossScorer for WorldScorer {
    fn score(&self, query: &str, doc_text: &str) -> Result<f64, ClientError> {
        let Some(&i) = self.by_text.get(doc_text) else {
            return Err(ClientError::Protocol(format!("unknown document text {doc_text:?}")));
        };
        let d = &self.world.docs[i];
        if d.facts.iter().any(|f| f.sub_question == query) {
            return Ok(3.0 + d.boost);
        }
        let qt = tokenize(query);
        let mut shared: Vec<String> = tokenize(doc_text).into_iter().filter(|t| qt.contains(t)).collect();
        shared.sort();
        shared.dedup();
        Ok(-2.0 + 0.25 * shared.len() as f64)
    }
}
