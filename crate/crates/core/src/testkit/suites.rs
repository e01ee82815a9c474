//! Named fixture suites. Each is recorded by running the real pipeline (or
//! the feedback stage alone) against world-driven mocks wrapped in
//! recorders; replay then needs nothing but the written files.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::world::{world_llm, World, WorldDoc, WorldQuestion, WorldScorer};
use super::TestkitError;
use crate::clients::fingerprint::fingerprint_embed;
use crate::clients::scripted::{
    ExactMatchNli, FixtureRecord, FixtureSet, RecordingLlm, RecordingNli, RecordingScorer, ScriptedEmbedder,
    ScriptedLlm, ScriptedNli, TableScorer,
};
use crate::clients::{Embedder, EntailmentJudge, LanguageModel};
use crate::corpus::{ingest_corpus, Corpus, Document};
use crate::embedding::{embed_corpus, EmbeddingStore};
use crate::eval::Qrels;
use crate::graph::build_graph;
use crate::index::TermIndex;
use crate::nar::NarConfig;
use crate::pipeline::{load_questions, write_questions, Clients, Engine, PipelineConfig, Question};
use crate::prompts::{ExemplarSet, Prompts};
use crate::scalar::Scalar;
use crate::uncertainty::{cluster_answers, sample_answers};

pub const SUITES: &[&str] = &["two-hop", "wqa-exemplars", "qualitative-table7", "asu-distractor"];

pub const MANIFEST_FILE: &str = "suite.json";
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const QUESTIONS_FILE: &str = "questions.jsonl";
pub const QRELS_FILE: &str = "qrels.txt";
pub const LLM_FILE: &str = "llm.jsonl";
pub const NLI_FILE: &str = "nli.jsonl";
pub const SCORER_FILE: &str = "scorer.jsonl";
pub const EMBED_FILE: &str = "embed.jsonl";
pub const BATCHES_FILE: &str = "batches.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub name: String,
    pub embed_dim: usize,
    pub graph_k: usize,
    /// Full configuration; the ablation run flips both feedback flags off.
    pub pipeline: PipelineConfig,
    pub records_ablation: bool,
}

impl SuiteManifest {
    pub fn ablation(&self) -> PipelineConfig {
        PipelineConfig {
            asu_enabled: false,
            mer_enabled: false,
            ..self.pipeline.clone()
        }
    }
}

/// A feedback batch recorded by the `asu-distractor` suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsuBatch {
    pub label: String,
    pub sub_question: String,
    /// Evidence in presentation order.
    pub doc_ids: Vec<String>,
    pub m: usize,
    pub temperature: f64,
}

fn two_hop_config() -> PipelineConfig {
    PipelineConfig {
        l: 10,
        nar: NarConfig::new(4, 24, 4),
        exemplars: ExemplarSet::Mqa,
        ..PipelineConfig::default()
    }
}

const FILLER_ADJ: &[&str] = &["quiet", "amber", "rusty", "hollow", "bright", "narrow", "gentle", "distant", "frozen", "silver", "crooked"];
const FILLER_NOUN: &[&str] = &["lantern", "orchard", "mill", "ferry", "meadow", "quarry", "chapel", "cistern", "tannery", "granary", "bakery"];
const FILLER_VERB: &[&str] = &["stands", "waits", "fades", "rests", "hums", "leans"];
const FILLER_PLACE: &[&str] = &["a ford", "a hill", "a marsh", "a dune", "a cliff", "an inlet", "a grove"];

fn filler(i: usize) -> WorldDoc {
    let text = format!(
        "A {} {} {} near {}.",
        FILLER_ADJ[i % FILLER_ADJ.len()],
        FILLER_NOUN[(i * 7 + 3) % FILLER_NOUN.len()],
        FILLER_VERB[(i * 5 + 1) % FILLER_VERB.len()],
        FILLER_PLACE[(i * 3 + 2) % FILLER_PLACE.len()],
    );
    WorldDoc::new(&format!("f{i:02}"), &text)
}

struct Chain<'a> {
    key: &'a str,
    entity: &'a str,
    r1: &'a str,
    mid: &'a str,
    r2: &'a str,
    answer: &'a str,
    bridge: &'a str,
    gold1: &'a str,
    gold2: &'a str,
}

/// Forty documents, five two-hop questions. Every gold document shares no
/// token with its sub-question and is reached only through the graph; the
/// last question adds three boosted distractors that disagree with each
/// other about the first hop.
pub fn two_hop_world() -> World {
    let chains = [
        Chain { key: "z", entity: "Zorvik", r1: "founder", mid: "Orla Venn", r2: "mentor", answer: "Quillan Dast",
            bridge: "Zorvik lies beside a cold river in a northern valley.",
            gold1: "Orla Venn created that river town long ago.",
            gold2: "Quillan Dast trained that young leader for years." },
        Chain { key: "m", entity: "Marrowgate", r1: "architect", mid: "Teodric Saln", r2: "spouse", answer: "Ysolde Arkh",
            bridge: "Marrowgate stands guard over a busy harbor road.",
            gold1: "Teodric Saln drew plans for that harbor gate.",
            gold2: "Ysolde Arkh married that planner in spring." },
        Chain { key: "p", entity: "Pellucid", r1: "captain", mid: "Bram Oskel", r2: "father", answer: "Corwin Tallow",
            bridge: "Pellucid sails between distant islands every summer.",
            gold1: "Bram Oskel commands that vessel with a steady hand.",
            gold2: "Corwin Tallow raised that sailor near a lighthouse." },
        Chain { key: "h", entity: "Hollowmere", r1: "mayor", mid: "Idris Fenwick", r2: "teacher", answer: "Mabel Quorn",
            bridge: "Hollowmere holds a market on every second morning.",
            gold1: "Idris Fenwick leads that market town council.",
            gold2: "Mabel Quorn taught that council leader to read." },
        Chain { key: "v", entity: "Velmora", r1: "founder", mid: "Sabine Roke", r2: "mentor", answer: "Linus Harrow",
            bridge: "Velmora grew around an old stone bridge.",
            gold1: "Sabine Roke laid out those first streets by that bridge.",
            gold2: "Linus Harrow guided that young planner through hard winters." },
    ];
    let mut w = World {
        noise_dims: 8,
        seed: 40,
        ..World::default()
    };
    for (i, c) in chains.iter().enumerate() {
        let hop1 = format!("Who is the {} of {{}}?", c.r1);
        let hop2 = format!("Who is the {} of {{}}?", c.r2);
        let sq1 = hop1.replacen("{}", c.entity, 1);
        let sq2 = hop2.replacen("{}", c.mid, 1);
        let id = |s: &str| format!("{}-{s}", c.key);
        let (bridge, gold1, gold2) = (
            WorldDoc::new(&id("bridge"), c.bridge),
            WorldDoc::new(&id("gold1"), c.gold1).fact(&sq1, c.mid),
            WorldDoc::new(&id("gold2"), c.gold2).fact(&sq2, c.answer),
        );
        if c.key == "v" {
            // Distractors lie on their own axis; the first-hop gold doc
            // bridges that axis and the entity's, so it is a top neighbor of
            // both the entity doc and every distractor.
            let (a, b, g) = (4, 5, 6);
            w.docs.push(bridge.axis(a, 1.0));
            w.docs.push(gold1.axis(a, 1.0).axis(b, 1.0).axis(g, 0.5));
            w.docs.push(gold2.axis(a, 0.5).axis(b, 0.5).axis(g, 1.0));
            for (j, (text, who)) in [
                ("Velmora legend credits Brin Tosk with its creation.", "Brin Tosk"),
                ("Velmora tavern songs name Edda Wynn as its creator.", "Edda Wynn"),
                ("Velmora tourist leaflets claim Rolf Icke started it.", "Rolf Icke"),
            ]
            .into_iter()
            .enumerate()
            {
                w.docs.push(
                    WorldDoc::new(&format!("v-dis{}", j + 1), text)
                        .unsound(&sq1, who)
                        .boost(0.5 - 0.1 * j as f64)
                        .axis(b, 1.0),
                );
            }
        } else {
            w.docs.push(bridge.axis(i, 1.0));
            w.docs.push(gold1.axis(i, 1.0));
            w.docs.push(gold2.axis(i, 1.0));
        }
        w.questions.push(WorldQuestion {
            qid: format!("th{}", i + 1),
            question: format!("Who is the {} of the {} of {}?", c.r2, c.r1, c.entity),
            seed: c.entity.into(),
            hops: vec![hop1, hop2],
            gold: c.answer.into(),
            gold_docs: vec![id("gold1"), id("gold2")],
        });
    }
    let fillers = 40 - w.docs.len();
    w.docs.extend((0..fillers).map(filler));
    w
}

pub fn wqa_world() -> World {
    let sq1 = "Who was the mother of George Washington?";
    let sq2 = "Who was the father of Mary Ball Washington?";
    let mut w = World {
        noise_dims: 8,
        seed: 9,
        ..World::default()
    };
    w.docs = vec![
        WorldDoc::new("gw", "George Washington was born in 1732 to Augustine Washington and his second wife, Mary Ball Washington.")
            .titled("George Washington")
            .fact(sq1, "Mary Ball Washington")
            .axis(0, 1.0),
        WorldDoc::new("mbw", "Mary Ball Washington was the daughter of Joseph Ball and his second wife, Mary Johnson.")
            .titled("Mary Ball Washington")
            .fact(sq2, "Joseph Ball")
            .axis(0, 1.0),
        WorldDoc::new("aw", "Augustine Washington was a planter and a justice in colonial Virginia.").titled("Augustine Washington"),
        WorldDoc::new("mv", "Mount Vernon is a plantation on the banks of the Potomac River.").titled("Mount Vernon"),
        WorldDoc::new("lc", "Lancaster County lies on the Northern Neck of Virginia.").titled("Lancaster County"),
        WorldDoc::new("fr", "Fredericksburg grew as a river port on the Rappahannock.").titled("Fredericksburg"),
    ];
    w.questions = vec![WorldQuestion {
        qid: "wqa1".into(),
        question: "Who was the maternal grandfather of George Washington?".into(),
        seed: "George Washington".into(),
        hops: vec!["Who was the mother of {}?".into(), "Who was the father of {}?".into()],
        gold: "Joseph Ball".into(),
        gold_docs: vec!["gw".into(), "mbw".into()],
    }];
    w
}

/// The sequential path follows the wrong screenwriter into a fictional
/// namesake; only the pooled evidence links the other writer to the role.
pub fn table7_world() -> World {
    let sq1 = "Who wrote the screenplay for Good Will Hunting?";
    let matt = "Who did Matt Damon play in Dazed and Confused?";
    let ben = "Who did Ben Affleck play in Dazed and Confused?";
    let mut w = World {
        noise_dims: 8,
        seed: 7,
        ..World::default()
    };
    w.docs = vec![
        WorldDoc::new("gwh", "Matt Damon and Ben Affleck wrote Good Will Hunting (1997), a screenplay about a young math genius in Boston.")
            .titled("Good Will Hunting")
            .fact(sq1, "Matt Damon")
            .fact(sq1, "Ben Affleck")
            .axis(0, 1.0),
        WorldDoc::new("ba", "Benjamin Affleck-Boldt (born August 15, 1972) is an American actor. He later appeared in the independent coming-of-age comedy Dazed and Confused as Fred O'Bannion.")
            .titled("Ben Affleck")
            .fact(ben, "Fred O'Bannion")
            .axis(0, 1.0),
        WorldDoc::new("ds1", "Damon begins working alongside his younger brother, Stefan Salvatore, to resist greater threats.")
            .titled("Damon Salvatore")
            .unsound(matt, "Damon Salvatore")
            .boost(0.5)
            .axis(1, 1.0),
        WorldDoc::new("ds2", "Damon Salvatore is a fictional character in The Vampire Diaries. He is portrayed by Ian Somerhalder in the television series.")
            .titled("Damon Salvatore")
            .unsound(matt, "Damon Salvatore")
            .boost(0.4)
            .axis(1, 1.0),
        WorldDoc::new("md", "Matt Damon is an American actor known for the Bourne films.").titled("Matt Damon").axis(0, 0.5).axis(1, 0.5),
        WorldDoc::new("dc", "Dazed and Confused is a 1993 coming-of-age comedy film written and directed by Richard Linklater.")
            .titled("Dazed and Confused"),
        WorldDoc::new("rl", "Richard Linklater is an American film director from Houston.").titled("Richard Linklater"),
        WorldDoc::new("tvd", "The Vampire Diaries is a supernatural drama television series.").titled("The Vampire Diaries"),
        WorldDoc::new("bf", "The Bourne Identity is a 2002 action thriller film.").titled("The Bourne Identity"),
        WorldDoc::new("mg", "A math genius is a person with exceptional mathematical ability.").titled("Genius"),
        WorldDoc::new("bo", "Boston is the capital of Massachusetts.").titled("Boston"),
        WorldDoc::new("sc", "A screenplay is a written work for a film or television program.").titled("Screenplay"),
    ];
    w.questions = vec![WorldQuestion {
        qid: "mqa1".into(),
        question: "Who did the screenwriter for Good Will Hunting play in Dazed and Confused?".into(),
        seed: "Good Will Hunting".into(),
        hops: vec!["Who wrote the screenplay for {}?".into(), "Who did {} play in Dazed and Confused?".into()],
        gold: "Fred O'Bannion".into(),
        gold_docs: vec!["gwh".into(), "ba".into()],
    }];
    w
}

fn artifact<E: std::error::Error + Send + Sync + 'static>(what: &str) -> impl FnOnce(E) -> TestkitError + '_ {
    move |e| TestkitError::Artifact {
        what: what.to_string(),
        source: Box::new(e),
    }
}

fn write_common(dir: &Path, world: &World) -> Result<(Corpus, EmbeddingStore<f64>), TestkitError> {
    fs::create_dir_all(dir).map_err(artifact("output directory"))?;
    let corpus = world.corpus();
    corpus.write_jsonl(&dir.join(CORPUS_FILE)).map_err(artifact("corpus"))?;
    write_questions(&dir.join(QUESTIONS_FILE), &world.questions()).map_err(artifact("questions"))?;
    world.qrels().save(&dir.join(QRELS_FILE)).map_err(artifact("qrels"))?;
    let store = world.embeddings();
    let mut emb = FixtureSet::default();
    for d in corpus.iter() {
        emb.insert(FixtureRecord {
            fingerprint: fingerprint_embed(&d.full_text(), store.dim()),
            completions: None,
            verdict: None,
            vector: Some(store.get(&d.doc_id).expect("embedded").to_vec()),
            score: None,
            label: Some(d.doc_id.clone()),
        });
    }
    emb.save(&dir.join(EMBED_FILE)).map_err(artifact("embedding fixture"))?;
    Ok((corpus, store))
}

struct Recorders {
    llm: Arc<RecordingLlm<Arc<dyn LanguageModel>>>,
    nli: Arc<RecordingNli<ExactMatchNli>>,
    scorer: Arc<RecordingScorer<WorldScorer>>,
}

impl Recorders {
    fn new(world: &Arc<World>) -> Self {
        Self {
            llm: Arc::new(RecordingLlm::new(Arc::new(world_llm(world.clone())) as Arc<dyn LanguageModel>)),
            nli: Arc::new(RecordingNli::new(ExactMatchNli)),
            scorer: Arc::new(RecordingScorer::new(WorldScorer::new(world.clone()))),
        }
    }

    fn clients(&self) -> Clients {
        Clients {
            llm: self.llm.clone(),
            nli: self.nli.clone(),
            scorer: self.scorer.clone(),
        }
    }

    fn save(&self, dir: &Path) -> Result<(), TestkitError> {
        self.llm.fixture().save(&dir.join(LLM_FILE)).map_err(artifact("llm fixture"))?;
        self.nli.fixture().save(&dir.join(NLI_FILE)).map_err(artifact("nli fixture"))?;
        self.scorer
            .fixture()
            .save(&dir.join(SCORER_FILE))
            .map_err(artifact("scorer fixture"))
    }
}

fn record_pipeline(dir: &Path, world: World, manifest: &SuiteManifest) -> Result<(), TestkitError> {
    let (corpus, store) = write_common(dir, &world)?;
    let world = Arc::new(world);
    let rec = Recorders::new(&world);
    let questions = world.questions();
    let mut configs = vec![manifest.pipeline.clone()];
    if manifest.records_ablation {
        configs.push(manifest.ablation());
    }
    let (graph, _) = build_graph(&store, manifest.graph_k).map_err(artifact("graph"))?;
    for cfg in configs {
        let engine = Engine::new(
            corpus.clone(),
            TermIndex::build(&corpus),
            graph.clone(),
            rec.clients(),
            Prompts::default(),
            cfg,
        )
        .map_err(artifact("engine"))?;
        for o in engine.run_batch(&questions, 1) {
            if let Err(e) = o.result {
                return Err(TestkitError::Recording(format!("{}: {e}", o.qid)));
            }
        }
    }
    rec.save(dir)?;
    write_manifest(dir, manifest)
}

fn write_manifest(dir: &Path, manifest: &SuiteManifest) -> Result<(), TestkitError> {
    let json = serde_json::to_string_pretty(manifest).map_err(artifact("manifest"))?;
    fs::write(dir.join(MANIFEST_FILE), json + "\n").map_err(artifact("manifest"))
}

fn record_asu(dir: &Path) -> Result<SuiteManifest, TestkitError> {
    let world = two_hop_world();
    let (corpus, store) = write_common(dir, &world)?;
    let cfg = two_hop_config();
    let sq = "Who is the founder of Velmora?";
    let batches = vec![
        AsuBatch {
            label: "distractor".into(),
            sub_question: sq.into(),
            doc_ids: vec!["v-dis1".into(), "v-dis2".into(), "v-dis3".into(), "v-bridge".into()],
            m: cfg.m,
            temperature: cfg.temperature,
        },
        AsuBatch {
            label: "gold".into(),
            sub_question: sq.into(),
            doc_ids: vec!["v-gold1".into()],
            m: cfg.m,
            temperature: cfg.temperature,
        },
    ];
    let world = Arc::new(world);
    let rec = Recorders::new(&world);
    let prompts = Prompts::default();
    for b in &batches {
        let docs: Vec<&Document> = b.doc_ids.iter().filter_map(|id| corpus.get(id)).collect();
        let samples = sample_answers(rec.llm.as_ref(), &prompts, &b.sub_question, &docs, b.m, b.temperature)
            .map_err(artifact("answer sampling"))?;
        cluster_answers(rec.nli.as_ref(), &samples).map_err(artifact("clustering"))?;
    }
    rec.save(dir)?;
    let json = serde_json::to_string_pretty(&batches).map_err(artifact("batches"))?;
    fs::write(dir.join(BATCHES_FILE), json + "\n").map_err(artifact("batches"))?;
    let manifest = SuiteManifest {
        name: "asu-distractor".into(),
        embed_dim: store.dim(),
        graph_k: 10,
        pipeline: cfg,
        records_ablation: false,
    };
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

/// Writes the named suite into `dir` and returns its manifest.
pub fn build_fixture_suite(name: &str, dir: &Path) -> Result<SuiteManifest, TestkitError> {
    let (world, exemplars) = match name {
        "two-hop" => (two_hop_world(), ExemplarSet::Mqa),
        "wqa-exemplars" => (wqa_world(), ExemplarSet::Wqa),
        "qualitative-table7" => (table7_world(), ExemplarSet::Mqa),
        "asu-distractor" => return record_asu(dir),
        other => return Err(TestkitError::UnknownSuite(other.to_string())),
    };
    let manifest = SuiteManifest {
        name: name.to_string(),
        embed_dim: world.embed_dim(),
        graph_k: 10,
        pipeline: PipelineConfig {
            exemplars,
            ..two_hop_config()
        },
        records_ablation: true,
    };
    record_pipeline(dir, world, &manifest)?;
    Ok(manifest)
}

/// A suite read back from disk; every client replays strictly.
pub struct Suite {
    pub dir: PathBuf,
    pub manifest: SuiteManifest,
    pub corpus: Corpus,
    pub questions: Vec<Question>,
    pub qrels: Qrels,
}

impl Suite {
    pub fn load(dir: &Path) -> Result<Self, TestkitError> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE)).map_err(artifact("manifest"))?;
        let manifest = serde_json::from_str(&text).map_err(artifact("manifest"))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            corpus: ingest_corpus(&dir.join(CORPUS_FILE)).map_err(artifact("corpus"))?,
            questions: load_questions(&dir.join(QUESTIONS_FILE)).map_err(artifact("questions"))?,
            qrels: Qrels::load(&dir.join(QRELS_FILE)).map_err(artifact("qrels"))?,
        })
    }

    fn fixture(&self, file: &str) -> Result<FixtureSet, TestkitError> {
        FixtureSet::load(&self.dir.join(file)).map_err(artifact("fixture"))
    }

    pub fn clients(&self) -> Result<Clients, TestkitError> {
        Ok(Clients {
            llm: Arc::new(ScriptedLlm::from_fixture(&self.fixture(LLM_FILE)?)),
            nli: Arc::new(ScriptedNli::from_fixture(&self.fixture(NLI_FILE)?)),
            scorer: Arc::new(TableScorer::from_fixture(&self.fixture(SCORER_FILE)?)),
        })
    }

    pub fn llm(&self) -> Result<Arc<dyn LanguageModel>, TestkitError> {
        Ok(Arc::new(ScriptedLlm::from_fixture(&self.fixture(LLM_FILE)?)))
    }

    pub fn nli(&self) -> Result<Arc<dyn EntailmentJudge>, TestkitError> {
        Ok(Arc::new(ScriptedNli::from_fixture(&self.fixture(NLI_FILE)?)))
    }

    pub fn embedder(&self) -> Result<impl Embedder, TestkitError> {
        Ok(ScriptedEmbedder::from_fixture(&self.fixture(EMBED_FILE)?, self.manifest.embed_dim))
    }

    pub fn asu_batches(&self) -> Result<Vec<AsuBatch>, TestkitError> {
        let text = fs::read_to_string(self.dir.join(BATCHES_FILE)).map_err(artifact("batches"))?;
        serde_json::from_str(&text).map_err(artifact("batches"))
    }

    /// Index, replayed embeddings and graph, wired to replay clients.
    pub fn engine<S: Scalar>(&self, config: PipelineConfig) -> Result<Engine<S>, TestkitError> {
        let store: EmbeddingStore<S> =
            embed_corpus(&self.corpus, &self.embedder()?, self.manifest.embed_dim).map_err(artifact("embeddings"))?;
        let (graph, _) = build_graph(&store, self.manifest.graph_k).map_err(artifact("graph"))?;
        Engine::new(
            self.corpus.clone(),
            TermIndex::build(&self.corpus),
            graph,
            self.clients()?,
            Prompts::default(),
            config,
        )
        .map_err(artifact("engine"))
    }
}
