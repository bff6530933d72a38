//! Planted-chain corpora and an oracle model for end-to-end tests.
//!
//! Every chain i plants two facts: `person founded org` (doc `c{i}-a`) and
//! `org is headquartered in place` (doc `c{i}-b`). The question asks where
//! the company founded by the person is headquartered, so both documents are
//! gold and the answer is the place.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use pathtrack::corpus::{Corpus, Document, QaRecord, SimpleTokenizer};
use pathtrack::embedding::{Embedder, HashEmbedder};
use pathtrack::generator::{CallKind, ChatRequest, Generator, ResponderBackend};
use pathtrack::indexer::{build_index, normalize_entity, Index};
use pathtrack::{Engine, EngineConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

pub const FOUNDED: &str = "founded";
pub const LOCATED: &str = "is headquartered in";

#[derive(Debug, Clone)]
pub struct Chain {
    pub query_id: String,
    pub person: String,
    pub org: String,
    pub place: String,
    pub question: String,
    /// Gold documents reachable along the planted path.
    pub path_docs: Vec<String>,
    /// Extra gold document with no extractable facts.
    pub note_doc: Option<String>,
}

impl Chain {
    pub fn gold(&self) -> BTreeSet<String> {
        self.path_docs
            .iter()
            .chain(self.note_doc.iter())
            .cloned()
            .collect()
    }

    fn canon(s: &str) -> String {
        normalize_entity(s).unwrap()
    }

    pub fn first_hop(&self) -> String {
        format!(
            "({}) –{FOUNDED}→ ({})",
            Self::canon(&self.person),
            Self::canon(&self.org)
        )
    }

    pub fn full_path(&self) -> String {
        format!(
            "{} –{LOCATED}→ ({})",
            self.first_hop(),
            Self::canon(&self.place)
        )
    }

    pub fn requirement(&self) -> String {
        format!("Where is {} headquartered?", self.org)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PlantOptions {
    pub chains: usize,
    /// Documents linking a chain's person to unrelated entities.
    pub distractors: usize,
    /// When set, the person and the org each get `b - 1` extra neighbours
    /// and each of the person's neighbours gets `b - 1` children.
    pub branching: Option<usize>,
    /// Every n-th chain gets an extra gold note with no extractable facts.
    pub notes_every: Option<usize>,
    pub seed: u64,
}

impl Default for PlantOptions {
    fn default() -> Self {
        PlantOptions {
            chains: 50,
            distractors: 100,
            branching: None,
            notes_every: None,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Planted {
    pub corpus: Corpus,
    pub chains: Vec<Chain>,
    /// Extraction reply keyed by document text.
    pub extractions: HashMap<String, String>,
}

impl Planted {
    pub fn records(&self) -> &[QaRecord] {
        &self.corpus.records
    }

    pub fn chain_for(&self, question: &str) -> Option<&Chain> {
        self.chains.iter().find(|c| c.question == question)
    }
}

const SYLLABLES: &[&str] = &[
    "ka", "vor", "lim", "te", "dra", "nos", "bel", "qui", "sar", "mo", "fen", "ul", "zan", "tri",
    "gor", "pe", "wis", "hal", "ob", "rin", "cas", "du", "yel", "mar",
];

struct Namer {
    rng: ChaCha8Rng,
    used: BTreeSet<String>,
}

impl Namer {
    fn word(&mut self, syllables: usize) -> String {
        let mut w: String = (0..syllables)
            .map(|_| *SYLLABLES.choose(&mut self.rng).unwrap())
            .collect();
        w[..1].make_ascii_uppercase();
        w
    }

    fn name(&mut self, suffix: &str) -> String {
        loop {
            let n = self.rng.gen_range(2..4);
            let first = self.word(n);
            let second = self.word(3);
            let name = if suffix.is_empty() {
                format!("{first} {second}")
            } else {
                format!("{first}{} {suffix}", second.to_lowercase())
            };
            if self.used.insert(normalize_entity(&name).unwrap()) {
                return name;
            }
        }
    }
}

fn extraction(triples: &[(&str, &str, &str)]) -> String {
    let entities: BTreeSet<&str> = triples.iter().flat_map(|(h, _, t)| [*h, *t]).collect();
    json!({
        "entities": entities,
        "triples": triples.iter().map(|(h, r, t)| [h, r, t]).collect::<Vec<_>>(),
    })
    .to_string()
}

pub fn planted(opts: PlantOptions) -> Planted {
    let mut namer = Namer {
        rng: ChaCha8Rng::seed_from_u64(opts.seed),
        used: BTreeSet::new(),
    };
    let mut docs: Vec<Document> = Vec::new();
    let mut extractions = HashMap::new();
    let mut add = |docs: &mut Vec<Document>, id: String, title: &str, text: String, ex: String| {
        extractions.insert(text.clone(), ex);
        docs.push(Document::new(id, title, text, &SimpleTokenizer).unwrap());
    };

    let mut chains = Vec::new();
    for i in 0..opts.chains {
        let person = namer.name("");
        let org = namer.name("Corp");
        let place = namer.name("");
        let a = format!("c{i:03}-a");
        let b = format!("c{i:03}-b");
        add(
            &mut docs,
            a.clone(),
            &person,
            format!("{person} {FOUNDED} {org} after years in the industry."),
            extraction(&[(&person, FOUNDED, &org)]),
        );
        add(
            &mut docs,
            b.clone(),
            &org,
            format!("{org} {LOCATED} {place}."),
            extraction(&[(&org, LOCATED, &place)]),
        );
        let note_doc = match opts.notes_every {
            Some(n) if i % n == 0 => {
                let id = format!("c{i:03}-n");
                add(
                    &mut docs,
                    id.clone(),
                    "Notes",
                    format!(
                        "Where is the company founded by {person} headquartered? {person} founded {org}. Where is {org} headquartered?"
                    ),
                    extraction(&[]),
                );
                Some(id)
            }
            _ => None,
        };
        chains.push(Chain {
            query_id: format!("q{i:03}"),
            question: format!("Where is the company founded by {person} headquartered?"),
            person,
            org,
            place,
            path_docs: vec![a, b],
            note_doc,
        });
    }

    if let Some(b) = opts.branching {
        for (i, c) in chains.iter().enumerate() {
            for j in 0..b - 1 {
                let n = namer.name("");
                let mut triples_owned = vec![(c.person.clone(), "knows".to_string(), n.clone())];
                for k in 0..b - 1 {
                    let m = namer.name("");
                    triples_owned.push((
                        n.clone(),
                        format!("works with{}", " closely".repeat(k % 2)),
                        m,
                    ));
                }
                let text = triples_owned
                    .iter()
                    .map(|(h, r, t)| format!("{h} {r} {t}."))
                    .collect::<Vec<_>>()
                    .join(" ");
                let triples: Vec<(&str, &str, &str)> = triples_owned
                    .iter()
                    .map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str()))
                    .collect();
                add(
                    &mut docs,
                    format!("y{i:03}-{j}"),
                    &n,
                    text,
                    extraction(&triples),
                );
            }
            for j in 0..b - 1 {
                let p = namer.name("Partners");
                add(
                    &mut docs,
                    format!("z{i:03}-{j}"),
                    &c.org,
                    format!("{} partners with {p}.", c.org),
                    extraction(&[(&c.org, "partners with", &p)]),
                );
            }
        }
    }

    for j in 0..opts.distractors {
        let c = &chains[j % chains.len().max(1)];
        let d = namer.name("");
        let e = namer.name("");
        add(
            &mut docs,
            format!("x{j:03}"),
            &d,
            format!("{} met {d} in {e}. {d} later moved to {e}.", c.person),
            extraction(&[(&c.person, "met", &d), (&d, "moved to", &e)]),
        );
    }

    let records = chains
        .iter()
        .map(|c| QaRecord {
            query_id: c.query_id.clone(),
            question: c.question.clone(),
            gold_answer: c.place.clone(),
            gold_doc_ids: c.gold(),
        })
        .collect();
    Planted {
        corpus: Corpus::new(docs, records).unwrap(),
        chains,
        extractions,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackerMode {
    /// Marks exactly the planted path at each hop.
    Oracle,
    /// Marks everything valid and expandable until the full path appears.
    ExpandAll,
}

/// `[n]` of the listed candidate rendered exactly as `rendering`.
pub fn number_in(listing: &str, rendering: &str) -> Option<usize> {
    listing.lines().find_map(|line| {
        let (num, text) = line.strip_prefix('[')?.split_once("] ")?;
        (text == rendering).then(|| num.parse().ok())?
    })
}

fn track_reply(chain: &Chain, req: &ChatRequest, mode: TrackerMode) -> String {
    let listing = req.var("candidates");
    if let Some(n) = number_in(listing, &chain.full_path()) {
        return json!({
            "chain": format!("{} founded {}. {} is headquartered in {}.", chain.person, chain.org, chain.org, chain.place),
            "valid": [n], "expand": [], "requirement": "", "continue": false,
        })
        .to_string();
    }
    match mode {
        TrackerMode::ExpandAll => {
            let all: Vec<usize> = (1..=listing.lines().count()).collect();
            json!({
                "chain": format!("{} founded {}.", chain.person, chain.org),
                "valid": all, "expand": all,
                "requirement": chain.requirement(), "continue": true,
            })
            .to_string()
        }
        TrackerMode::Oracle => match number_in(listing, &chain.first_hop()) {
            Some(n) => json!({
                "chain": format!("{} founded {}.", chain.person, chain.org),
                "valid": [n], "expand": [n],
                "requirement": chain.requirement(), "continue": true,
            })
            .to_string(),
            None => r#"{"valid": [], "expand": [], "continue": true}"#.to_string(),
        },
    }
}

/// Model stand-in that knows the planted facts.
pub fn oracle_backend(planted: &Planted, mode: TrackerMode) -> ResponderBackend {
    let extractions = planted.extractions.clone();
    let chains = planted.chains.clone();
    ResponderBackend::new("oracle", move |req| {
        let chain = || {
            chains
                .iter()
                .find(|c| c.question == req.var("question"))
                .ok_or_else(|| pathtrack::Error::Precondition("unknown question".into()))
        };
        Ok(match req.kind {
            CallKind::Openie => extractions
                .get(req.var("text"))
                .cloned()
                .unwrap_or_else(|| r#"{"entities": [], "triples": []}"#.into()),
            CallKind::QueryEntities => json!({ "entities": [chain()?.person] }).to_string(),
            CallKind::PathTracking => track_reply(chain()?, req, mode),
            CallKind::Qa => format!("Answer: {}", chain()?.place),
        })
    })
}

pub fn build_planted_index(planted: &Planted, config: &EngineConfig) -> (Index, Arc<dyn Embedder>) {
    let embedder: Arc<dyn Embedder> = Arc::new(HashEmbedder::new(config.embed_dim));
    let generator = Generator::new(Arc::new(oracle_backend(planted, TrackerMode::Oracle)));
    let index = build_index(
        &planted.corpus,
        &generator,
        embedder.as_ref(),
        &config.index_config(),
    )
    .unwrap();
    (index, embedder)
}

pub fn engine(planted: &Planted, config: EngineConfig, mode: TrackerMode) -> Engine {
    let (index, embedder) = build_planted_index(planted, &config);
    engine_over(Arc::new(index), embedder, planted, config, mode)
}

pub fn engine_over(
    index: Arc<Index>,
    embedder: Arc<dyn Embedder>,
    planted: &Planted,
    config: EngineConfig,
    mode: TrackerMode,
) -> Engine {
    let generator = Generator::new(Arc::new(oracle_backend(planted, mode)));
    Engine::new(index, generator, embedder, config).unwrap()
}
