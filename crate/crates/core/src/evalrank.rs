//! Filtered link-prediction ranking (MR, Hits@3, Hits@10) in both retrieval
//! directions, and value-function histograms.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::ClassicalModel;
use crate::error::{Error, Result};
use crate::kgdata::{KnowledgeGraph, Split, Triple};
use crate::model::{Model, QuantumContext};
use crate::rng::{substream, Stream};
use crate::scoring::estimate_from_p0;
use crate::training::{NoiseScale, Regularizer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Rank the true object among `(s, p, o')`.
    Object,
    /// Rank the true subject among `(s', p, o)`.
    Subject,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TieBreak {
    /// `1 + #{strictly greater}`
    #[default]
    Optimistic,
    /// `1 + #{greater or equal}`, excluding the target itself.
    Pessimistic,
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    pub ties: TieBreak,
    /// Parameter noise applied once for the whole pass.
    pub noise: f64,
    pub noise_scale: NoiseScale,
    /// Replace each exact score by an estimate from this many ancilla shots.
    pub shots: Option<u64>,
    pub seed: u64,
}

/// Scores every candidate substitution as a dot product between a query
/// vector and a row of the candidate table.
pub struct Scorer<'a> {
    dim: usize,
    /// One row per entity.
    candidates: Vec<f64>,
    source: Source<'a>,
}

enum Source<'a> {
    Quantum(QuantumContext),
    Classical(&'a ClassicalModel),
}

fn flatten(amps: &[crate::qsim::C64], out: &mut Vec<f64>) {
    for z in amps {
        out.push(z.re);
        out.push(z.im);
    }
}

impl<'a> Scorer<'a> {
    pub fn new(model: &'a Model, opts: &EvalOptions) -> Result<Self> {
        match model {
            Model::Quantum(q) => {
                let mut reg = Regularizer::evaluation(opts.noise, opts.noise_scale, opts.seed);
                let ctx = QuantumContext::full(q, if opts.noise > 0.0 { Some(&mut reg) } else { None })?;
                let dim = 2 * q.predicate_spec.dim();
                let mut candidates = Vec::with_capacity(dim * q.num_entities());
                for e in 0..q.num_entities() {
                    flatten(ctx.entity(e).amplitudes(), &mut candidates);
                }
                Ok(Self {
                    dim,
                    candidates,
                    source: Source::Quantum(ctx),
                })
            }
            Model::Classical(c) => Ok(Self {
                dim: c.entity_width(),
                candidates: c.entities.clone(),
                source: Source::Classical(c),
            }),
        }
    }

    pub fn num_entities(&self) -> usize {
        self.candidates.len() / self.dim
    }

    fn query(&self, t: &Triple, dir: Direction) -> Vec<f64> {
        match &self.source {
            Source::Classical(c) => match dir {
                Direction::Object => c.object_query(t.s, t.p),
                Direction::Subject => c.subject_query(t.p, t.o),
            },
            Source::Quantum(ctx) => {
                let up = ctx.predicate(t.p);
                let state = match dir {
                    Direction::Object => up.evolve(ctx.entity(t.s)),
                    Direction::Subject => {
                        let mut b = ctx.entity(t.o).clone();
                        up.apply_gates_inverse(&mut b);
                        b
                    }
                };
                let mut q = Vec::with_capacity(self.dim);
                flatten(state.amplitudes(), &mut q);
                q
            }
        }
    }

    /// `η` of every candidate replacing the `dir` side of `t`.
    pub fn scores(&self, t: &Triple, dir: Direction) -> Vec<f64> {
        let q = self.query(t, dir);
        self.candidates
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(&q).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn eta(&self, t: &Triple) -> f64 {
        let q = self.query(t, Direction::Object);
        let row = &self.candidates[t.o * self.dim..(t.o + 1) * self.dim];
        row.iter().zip(&q).map(|(a, b)| a * b).sum()
    }
}

/// Rank of `target` among `scores` after removing the candidates in `known`
/// (other than `target` itself).
pub fn rank_from_scores(scores: &[f64], target: usize, known: &[usize], ties: TieBreak) -> usize {
    let st = scores[target];
    let beats = |c: usize| match ties {
        TieBreak::Optimistic => scores[c] > st,
        TieBreak::Pessimistic => scores[c] >= st,
    };
    let raw = (0..scores.len()).filter(|&c| c != target && beats(c)).count();
    let mut removed = known.to_vec();
    removed.sort_unstable();
    removed.dedup();
    let filtered = removed.iter().filter(|&&c| c != target && beats(c)).count();
    1 + raw - filtered
}

/// Unfiltered counterpart of [`rank_from_scores`].
pub fn raw_rank(scores: &[f64], target: usize, ties: TieBreak) -> usize {
    rank_from_scores(scores, target, &[], ties)
}

fn known_for<'k>(kg: &'k KnowledgeGraph, t: &Triple, dir: Direction) -> (&'k [usize], usize) {
    match dir {
        Direction::Object => (kg.known_objects(t.s, t.p), t.o),
        Direction::Subject => (kg.known_subjects(t.p, t.o), t.s),
    }
}

pub fn filtered_rank_with(scorer: &Scorer, kg: &KnowledgeGraph, t: &Triple, dir: Direction, ties: TieBreak) -> usize {
    let scores = scorer.scores(t, dir);
    let (known, target) = known_for(kg, t, dir);
    rank_from_scores(&scores, target, known, ties)
}

/// Shot estimates of every score, `p0 = (1 + η) / 2` being the ancilla-0
/// probability of the interference circuit.
fn shot_scores(mut scores: Vec<f64>, shots: u64, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
    for s in &mut scores {
        *s = estimate_from_p0(0.5 * (1.0 + *s), shots, rng);
    }
    scores
}

fn rank_pair(scorer: &Scorer, kg: &KnowledgeGraph, t: &Triple, index: usize, opts: &EvalOptions) -> (usize, usize) {
    let mut rng = opts.shots.map(|_| substream(opts.seed, Stream::Shots, index as u64));
    let mut one = |dir: Direction| {
        let mut scores = scorer.scores(t, dir);
        if let (Some(n), Some(r)) = (opts.shots, rng.as_mut()) {
            scores = shot_scores(scores, n, r);
        }
        let (known, target) = known_for(kg, t, dir);
        rank_from_scores(&scores, target, known, opts.ties)
    };
    (one(Direction::Object), one(Direction::Subject))
}

pub fn filtered_rank(model: &Model, kg: &KnowledgeGraph, t: &Triple, dir: Direction) -> Result<usize> {
    if t.s >= model.num_entities() || t.o >= model.num_entities() {
        return Err(Error::UnknownEntity(t.s.max(t.o)));
    }
    if t.p >= model.num_predicates() {
        return Err(Error::UnknownPredicate(t.p));
    }
    let scorer = Scorer::new(model, &EvalOptions::default())?;
    Ok(filtered_rank_with(&scorer, kg, t, dir, TieBreak::Optimistic))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub mr: f64,
    pub hits3: f64,
    pub hits10: f64,
}

impl Metrics {
    pub fn from_ranks<'a>(ranks: impl IntoIterator<Item = &'a usize>) -> Self {
        let (mut n, mut sum, mut h3, mut h10) = (0usize, 0usize, 0usize, 0usize);
        for &r in ranks {
            n += 1;
            sum += r;
            h3 += (r <= 3) as usize;
            h10 += (r <= 10) as usize;
        }
        let n = n.max(1) as f64;
        Self {
            mr: sum as f64 / n,
            hits3: h3 as f64 / n,
            hits10: h10 as f64 / n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankResult {
    pub object_ranks: Vec<usize>,
    pub subject_ranks: Vec<usize>,
    pub object: Metrics,
    pub subject: Metrics,
    pub combined: Metrics,
}

pub fn evaluate_triples(model: &Model, kg: &KnowledgeGraph, triples: &[Triple], opts: &EvalOptions) -> Result<RankResult> {
    if triples.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let scorer = Scorer::new(model, opts)?;
    if opts.shots == Some(0) {
        return Err(Error::InvalidConfig("at least one shot is required".into()));
    }
    if opts.shots.is_some() && !model.kind().is_quantum() {
        return Err(Error::UnsupportedModel(model.kind().to_string()));
    }
    let ranks: Vec<(usize, usize)> = triples
        .par_iter()
        .enumerate()
        .map(|(i, t)| rank_pair(&scorer, kg, t, i, opts))
        .collect();
    let (object_ranks, subject_ranks): (Vec<usize>, Vec<usize>) = ranks.into_iter().unzip();
    Ok(RankResult {
        object: Metrics::from_ranks(&object_ranks),
        subject: Metrics::from_ranks(&subject_ranks),
        combined: Metrics::from_ranks(object_ranks.iter().chain(&subject_ranks)),
        object_ranks,
        subject_ranks,
    })
}

pub fn evaluate(model: &Model, kg: &KnowledgeGraph, split: Split, opts: &EvalOptions) -> Result<RankResult> {
    evaluate_triples(model, kg, kg.split(split), opts)
}

/// Metrics CSV with one row per direction plus the combined row; Hits@n in
/// percent.
pub fn write_metrics_csv(path: &Path, dataset: &str, model: &str, r: &RankResult) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "dataset,model,direction,mr,hits3,hits10")?;
    for (name, m) in [("object", r.object), ("subject", r.subject), ("combined", r.combined)] {
        writeln!(
            f,
            "{dataset},{model},{name},{:.4},{:.2},{:.2}",
            m.mr,
            100.0 * m.hits3,
            100.0 * m.hits10
        )?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "bin_lo,bin_hi,count")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(f, "{},{},{}", self.edges[i], self.edges[i + 1], c)?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Counts `η` over every candidate substitution of every triple, both
/// directions, in `bins` equal bins over `[-1, 1]`. Values outside the range
/// land in the end bins.
pub fn eta_histogram(model: &Model, kg: &KnowledgeGraph, split: Split, bins: usize) -> Result<Histogram> {
    if bins < 2 {
        return Err(Error::InvalidConfig("histogram needs at least two bins".into()));
    }
    let triples = kg.split(split);
    if triples.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let scorer = Scorer::new(model, &EvalOptions::default())?;
    let edges: Vec<f64> = (0..=bins).map(|i| -1.0 + 2.0 * i as f64 / bins as f64).collect();
    let counts = triples
        .par_iter()
        .map(|t| {
            let mut c = vec![0u64; bins];
            for dir in [Direction::Object, Direction::Subject] {
                for eta in scorer.scores(t, dir) {
                    let k = (((eta + 1.0) / 2.0) * bins as f64).floor();
                    c[(k.max(0.0) as usize).min(bins - 1)] += 1;
                }
            }
            c
        })
        .reduce(
            || vec![0u64; bins],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    Ok(Histogram { edges, counts })
}
