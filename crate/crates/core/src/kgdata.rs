//! Triple files, vocabularies, splits, the observed-triple index, and negative
//! sampling by corruption.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Triple {
    pub s: usize,
    pub p: usize,
    pub o: usize,
}

impl Triple {
    pub fn new(s: usize, p: usize, o: usize) -> Self {
        Self { s, p, o }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Subject,
    Object,
}

/// Bijective string <-> id map, ids assigned by first appearance.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocab {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn from_names(names: impl IntoIterator<Item = String>) -> Self {
        let mut v = Vocab::default();
        for n in names {
            v.intern(&n);
        }
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct KnowledgeGraph {
    pub name: String,
    pub entities: Vocab,
    pub predicates: Vocab,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    observed: HashSet<Triple>,
    /// `(s, p) -> objects` and `(p, o) -> subjects` over all observed triples.
    objects_of: HashMap<(usize, usize), Vec<usize>>,
    subjects_of: HashMap<(usize, usize), Vec<usize>>,
}

/// Machine-readable dataset summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetStats {
    pub triples: usize,
    pub entities: usize,
    pub predicates: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    /// Average number of labeled links touching a node.
    pub avg_links: f64,
}

impl KnowledgeGraph {
    pub fn from_splits(
        name: &str,
        entities: Vocab,
        predicates: Vocab,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Self {
        let mut kg = Self {
            name: name.to_string(),
            entities,
            predicates,
            train,
            valid,
            test,
            ..Default::default()
        };
        kg.reindex();
        kg
    }

    fn reindex(&mut self) {
        self.observed.clear();
        self.objects_of.clear();
        self.subjects_of.clear();
        let all: Vec<Triple> = self.train.iter().chain(&self.valid).chain(&self.test).copied().collect();
        for t in all {
            if self.observed.insert(t) {
                self.objects_of.entry((t.s, t.p)).or_default().push(t.o);
                self.subjects_of.entry((t.p, t.o)).or_default().push(t.s);
            }
        }
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_predicates(&self) -> usize {
        self.predicates.len()
    }

    pub fn is_observed(&self, t: &Triple) -> bool {
        self.observed.contains(t)
    }

    pub fn observed_len(&self) -> usize {
        self.observed.len()
    }

    pub fn known_objects(&self, s: usize, p: usize) -> &[usize] {
        self.objects_of.get(&(s, p)).map_or(&[], Vec::as_slice)
    }

    pub fn known_subjects(&self, p: usize, o: usize) -> &[usize] {
        self.subjects_of.get(&(p, o)).map_or(&[], Vec::as_slice)
    }

    pub fn split(&self, which: Split) -> &[Triple] {
        match which {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn stats(&self) -> DatasetStats {
        let triples = self.observed.len();
        let entities = self.num_entities();
        DatasetStats {
            triples,
            entities,
            predicates: self.num_predicates(),
            train: self.train.len(),
            valid: self.valid.len(),
            test: self.test.len(),
            avg_links: if entities == 0 {
                0.0
            } else {
                2.0 * triples as f64 / entities as f64
            },
        }
    }

    pub fn triple_names(&self, t: &Triple) -> (&str, &str, &str) {
        (self.entities.name(t.s), self.predicates.name(t.p), self.entities.name(t.o))
    }
}

#[derive(Debug)]
struct RawTriple<'a> {
    s: &'a str,
    p: &'a str,
    o: &'a str,
}

fn parse_file(path: &Path, text: &str) -> Result<Vec<(usize, String, String, String)>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::MalformedLine {
                path: path.to_path_buf(),
                line: i + 1,
                reason: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let raw = RawTriple {
            s: fields[0],
            p: fields[1],
            o: fields[2],
        };
        rows.push((i + 1, raw.s.to_string(), raw.p.to_string(), raw.o.to_string()));
    }
    if rows.is_empty() {
        return Err(Error::Empty("triple file"));
    }
    Ok(rows)
}

fn intern_rows(rows: &[(usize, String, String, String)], ents: &mut Vocab, preds: &mut Vocab) -> Vec<Triple> {
    rows.iter()
        .map(|(_, s, p, o)| {
            let s = ents.intern(s);
            let p = preds.intern(p);
            let o = ents.intern(o);
            Triple::new(s, p, o)
        })
        .collect()
}

fn split_file(dir: &Path, stem: &str) -> Option<PathBuf> {
    ["txt", "tsv"]
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

/// Loads a dataset. A directory with `train`/`valid`/`test` files (`.txt` or
/// `.tsv`) keeps its canonical split; a single file is split 80/10/10 with a
/// shuffle drawn from `split_rng`.
pub fn load_dataset(path: &Path, split_rng: &mut ChaCha8Rng) -> Result<KnowledgeGraph> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut ents = Vocab::default();
    let mut preds = Vocab::default();
    if path.is_dir() {
        let mut splits = Vec::new();
        for stem in ["train", "valid", "test"] {
            let file = split_file(path, stem).ok_or_else(|| {
                Error::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("{}: missing {stem}.txt", path.display()),
                ))
            })?;
            let text = fs::read_to_string(&file)?;
            splits.push(intern_rows(&parse_file(&file, &text)?, &mut ents, &mut preds));
        }
        let test = splits.pop().unwrap_or_default();
        let valid = splits.pop().unwrap_or_default();
        let train = splits.pop().unwrap_or_default();
        return Ok(KnowledgeGraph::from_splits(&name, ents, preds, train, valid, test));
    }
    let text = fs::read_to_string(path)?;
    let rows = parse_file(path, &text)?;
    let all = intern_rows(&rows, &mut ents, &mut preds);
    let mut unique = Vec::with_capacity(all.len());
    let mut seen = HashSet::new();
    for t in all {
        if seen.insert(t) {
            unique.push(t);
        }
    }
    let (train, valid, test) = random_split(unique, split_rng);
    Ok(KnowledgeGraph::from_splits(&name, ents, preds, train, valid, test))
}

/// Seeded 80/10/10 split.
pub fn random_split(mut triples: Vec<Triple>, rng: &mut ChaCha8Rng) -> (Vec<Triple>, Vec<Triple>, Vec<Triple>) {
    triples.shuffle(rng);
    let n = triples.len();
    let n_test = n / 10;
    let n_valid = n / 10;
    let test = triples.split_off(n - n_test);
    let valid = triples.split_off(n - n_test - n_valid);
    (triples, valid, test)
}

/// Resolves a dataset argument: an existing path, or a name under
/// `$QKGE_DATA_DIR` (default `data/`).
pub fn resolve_dataset(arg: &str) -> PathBuf {
    let direct = PathBuf::from(arg);
    if direct.exists() {
        return direct;
    }
    let root = std::env::var_os("QKGE_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"));
    root.join(arg)
}

/// Replaces one side of `t` by an entity drawn uniformly from all other
/// entities. With `filtered`, draws that land on an observed triple are
/// redrawn (bounded number of attempts).
pub fn corrupt(t: &Triple, side: Side, rng: &mut ChaCha8Rng, kg: &KnowledgeGraph, filtered: bool) -> Triple {
    let n = kg.num_entities();
    debug_assert!(n >= 2);
    let original = match side {
        Side::Subject => t.s,
        Side::Object => t.o,
    };
    let mut out = *t;
    for _ in 0..32 {
        let mut e = rng.random_range(0..n - 1);
        if e >= original {
            e += 1;
        }
        match side {
            Side::Subject => out.s = e,
            Side::Object => out.o = e,
        }
        if !filtered || !kg.is_observed(&out) {
            break;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Labeled {
    pub triple: Triple,
    pub label: f64,
}

/// Shuffles the training split and groups it into batches of `batch_size`
/// positives, each followed by its `negatives` corruptions (alternating object
/// then subject side).
pub fn epoch_batches(
    kg: &KnowledgeGraph,
    batch_size: usize,
    negatives: usize,
    filtered: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<Labeled>> {
    let mut order: Vec<usize> = (0..kg.train.len()).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .map(|chunk| {
            let mut batch = Vec::with_capacity(chunk.len() * (1 + negatives));
            for &i in chunk {
                let t = kg.train[i];
                batch.push(Labeled { triple: t, label: 1.0 });
                for k in 0..negatives {
                    let side = if k % 2 == 0 { Side::Object } else { Side::Subject };
                    batch.push(Labeled {
                        triple: corrupt(&t, side, rng, kg, filtered),
                        label: -1.0,
                    });
                }
            }
            batch
        })
        .collect()
}
