//! SGD training for every model kind, gate dropout and Gaussian parameter
//! noise, and early stopping on validation Hits@3.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{accumulate_triple, LossConfig, Scratch};
use crate::baselines::{loss_scale, sample_loss, ClassicalModel, LossKind};
use crate::circuits::{CircuitSpec, ParamStore};
use crate::error::{Error, Result};
use crate::evalrank::{evaluate, EvalOptions};
use crate::kgdata::{epoch_batches, KnowledgeGraph, Labeled, Split};
use crate::model::{EntityRepr, Model, ModelKind, QceEntity, QuantumContext, QuantumModel};
use crate::qsim::EulerGate;
use crate::rng::{stream, Stream};

/// Owner of a contiguous block of trainable parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Owner {
    Predicate(usize),
    Entity(usize),
    /// The Tucker core tensor.
    Core,
}

/// How the second argument of `N(0, |θ|)` is read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseScale {
    #[default]
    StdDev,
    Variance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub qubits: usize,
    pub rank: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub kappa: u32,
    pub negatives: usize,
    pub init_range: f64,
    pub dropout: f64,
    pub noise: f64,
    pub noise_scale: NoiseScale,
    /// Keep parameter noise on while scoring validation/test triples.
    pub noise_at_eval: bool,
    pub loss: LossKind,
    pub lambda: f64,
    pub filtered_negatives: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Fqce,
            qubits: 6,
            rank: 64,
            lr: 5.0,
            batch_size: 256,
            epochs: 1000,
            eval_every: 20,
            patience: 5,
            kappa: 3,
            negatives: 2,
            init_range: PI / 10.0,
            dropout: 0.0,
            noise: 0.0,
            noise_scale: NoiseScale::StdDev,
            noise_at_eval: false,
            loss: LossKind::Mse,
            lambda: 0.0,
            filtered_negatives: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be a finite non-negative number");
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.patience == 0 {
            return bad("batch size, eval-every and patience must be positive");
        }
        if self.kappa == 0 {
            return bad("kappa must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be non-negative");
        }
        if self.lambda < 0.0 {
            return bad("lambda must be non-negative");
        }
        if self.model.is_quantum() {
            if self.qubits < 2 {
                return bad("at least two qubits are required");
            }
            if self.rank != 1 << self.qubits {
                return bad("for circuit models the rank must equal 2^qubits");
            }
        } else if self.rank == 0 {
            return bad("rank must be positive");
        }
        Ok(())
    }
}

/// Per-slot dropout mask; `true` marks a gate switched off.
pub fn dropout_mask(len: usize, probability: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    (0..len).map(|_| rng.random::<f64>() < probability).collect()
}

/// Copy of `params` with each gate independently replaced by the identity.
pub fn apply_dropout(params: &[EulerGate], probability: f64, rng: &mut ChaCha8Rng) -> Vec<EulerGate> {
    if probability == 0.0 {
        return params.to_vec();
    }
    let mask = dropout_mask(params.len(), probability, rng);
    params
        .iter()
        .zip(mask)
        .map(|(g, off)| if off { EulerGate::IDENTITY } else { *g })
        .collect()
}

/// `θ ← θ + μ · N(0, |θ|)` for every entry.
pub fn apply_noise(params: &mut [f64], mu: f64, scale: NoiseScale, rng: &mut ChaCha8Rng) {
    if mu == 0.0 {
        return;
    }
    for v in params {
        let z: f64 = rng.sample(StandardNormal);
        let sd = match scale {
            NoiseScale::StdDev => v.abs(),
            NoiseScale::Variance => v.abs().sqrt(),
        };
        *v += mu * sd * z;
    }
}

/// Dropout and noise state for one training run or one evaluation pass. With
/// both switched off it draws nothing.
#[derive(Clone, Debug)]
pub struct Regularizer {
    pub dropout: f64,
    pub noise: f64,
    pub scale: NoiseScale,
    dropout_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
}

impl Regularizer {
    pub fn training(cfg: &TrainConfig) -> Self {
        Self {
            dropout: cfg.dropout,
            noise: cfg.noise,
            scale: cfg.noise_scale,
            dropout_rng: stream(cfg.seed, Stream::Dropout),
            noise_rng: stream(cfg.seed, Stream::Noise),
        }
    }

    /// Noise only, resampled once per evaluation pass.
    pub fn evaluation(noise: f64, scale: NoiseScale, seed: u64) -> Self {
        Self {
            dropout: 0.0,
            noise,
            scale,
            dropout_rng: stream(seed, Stream::EvalNoise),
            noise_rng: stream(seed, Stream::EvalNoise),
        }
    }

    pub fn is_active(&self) -> bool {
        self.dropout > 0.0 || self.noise > 0.0
    }

    pub fn dropout_mask(&mut self, len: usize) -> Option<Vec<bool>> {
        (self.dropout > 0.0).then(|| dropout_mask(len, self.dropout, &mut self.dropout_rng))
    }

    pub fn perturb_gates(&mut self, gates: &mut [EulerGate]) {
        if self.noise == 0.0 {
            return;
        }
        for g in gates {
            let mut a = g.to_array();
            apply_noise(&mut a, self.noise, self.scale, &mut self.noise_rng);
            *g = EulerGate::from_array(a);
        }
    }

    pub fn perturb_values(&mut self, values: &mut [f64]) {
        apply_noise(values, self.noise, self.scale, &mut self.noise_rng);
    }
}

/// Random initial model: gate angles uniform in `±init_range` (predicates
/// first, then entity circuits), QCE vectors standard normal then normalized,
/// classical tables `N(0, 1/R)`.
pub fn init_model(kg: &KnowledgeGraph, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Model> {
    cfg.validate()?;
    let (ne, np) = (kg.num_entities(), kg.num_predicates());
    if ne < 2 || np == 0 {
        return Err(Error::Empty("entity or predicate vocabulary"));
    }
    if !cfg.model.is_quantum() {
        return Ok(Model::Classical(ClassicalModel::random(
            cfg.model, cfg.rank, ne, np, cfg.lambda, rng,
        )?));
    }
    let predicate_spec = CircuitSpec::build(cfg.qubits, false)?;
    let entity_spec = CircuitSpec::build(cfg.qubits, true)?;
    let random_store = |owner: usize, spec: &CircuitSpec, rng: &mut ChaCha8Rng| ParamStore {
        owner,
        gates: (0..spec.num_slots())
            .map(|_| {
                let mut a = [0.0; 3];
                for v in &mut a {
                    *v = rng.random_range(-cfg.init_range..=cfg.init_range);
                }
                EulerGate::from_array(a)
            })
            .collect(),
    };
    let predicates = (0..np).map(|p| random_store(p, &predicate_spec, rng)).collect();
    let entities = match cfg.model {
        ModelKind::Fqce => EntityRepr::Circuit((0..ne).map(|e| random_store(e, &entity_spec, rng)).collect()),
        _ => {
            let dim = 1 << cfg.qubits;
            let mut ents = Vec::with_capacity(ne);
            for _ in 0..ne {
                let raw: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                ents.push(QceEntity::new(&raw)?);
            }
            EntityRepr::Amplitude(ents)
        }
    };
    Ok(Model::Quantum(QuantumModel {
        kind: cfg.model,
        predicate_spec,
        entity_spec,
        predicates,
        entities,
    }))
}

/// Random streams consumed by training.
#[derive(Clone, Debug)]
pub struct TrainRngs {
    pub sampling: ChaCha8Rng,
    pub reg: Regularizer,
}

impl TrainRngs {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            sampling: stream(cfg.seed, Stream::Sampling),
            reg: Regularizer::training(cfg),
        }
    }
}

/// Samples per gradient work unit. Fixed, so the reduction order (and hence
/// every bit of the result) does not depend on the thread count.
const CHUNK: usize = 32;

type SparseGrad = BTreeMap<Owner, Vec<f64>>;

fn add_into(acc: &mut SparseGrad, other: SparseGrad) {
    for (k, v) in other {
        match acc.get_mut(&k) {
            Some(a) => {
                for (x, y) in a.iter_mut().zip(&v) {
                    *x += y;
                }
            }
            None => {
                acc.insert(k, v);
            }
        }
    }
}

fn quantum_segment_len(model: &QuantumModel, owner: Owner) -> usize {
    match (owner, &model.entities) {
        (Owner::Entity(_), EntityRepr::Amplitude(_)) => model.predicate_spec.dim(),
        _ => model.predicate_spec.param_count(),
    }
}

fn quantum_batch_gradient(
    model: &QuantumModel,
    batch: &[Labeled],
    loss: &LossConfig,
    reg: &mut Regularizer,
) -> Result<(f64, SparseGrad)> {
    let ents: BTreeSet<usize> = batch.iter().flat_map(|l| [l.triple.s, l.triple.o]).collect();
    let preds: BTreeSet<usize> = batch.iter().map(|l| l.triple.p).collect();
    let reg = if reg.is_active() { Some(reg) } else { None };
    let ctx = QuantumContext::build(model, ents, preds, reg)?;
    let m = batch.len() as f64;
    let parts: Vec<(f64, SparseGrad)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut scratch = Scratch::new(model.n_qubits());
            let mut grads = SparseGrad::new();
            let mut loss_sum = 0.0;
            for l in chunk {
                let t = l.triple;
                let eta = accumulate_triple(
                    &ctx,
                    (t.s, t.p, t.o),
                    |eta| loss.residual_weight(eta, l.label) / m,
                    &mut scratch,
                    |owner, f| {
                        let g = grads
                            .entry(owner)
                            .or_insert_with(|| vec![0.0; quantum_segment_len(model, owner)]);
                        f(g)
                    },
                );
                loss_sum += (l.label - eta).powi(2 * loss.kappa as i32);
            }
            (loss_sum, grads)
        })
        .collect();
    let mut total = 0.0;
    let mut grads = SparseGrad::new();
    for (l, g) in parts {
        total += l;
        add_into(&mut grads, g);
    }
    Ok((total / m, grads))
}

fn classical_batch_gradient(model: &ClassicalModel, batch: &[Labeled], which: LossKind) -> (f64, SparseGrad) {
    let scale = loss_scale(which, batch.len());
    let parts: Vec<(f64, SparseGrad)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grads = SparseGrad::new();
            let mut loss_sum = 0.0;
            for l in chunk {
                let t = l.triple;
                let mut sample = 0.0;
                model.accumulate_triple(
                    (t.s, t.p, t.o),
                    |eta| {
                        let (ls, d) = sample_loss(which, l.label, eta);
                        sample = ls;
                        scale * d
                    },
                    |owner, f| {
                        let g = grads
                            .entry(owner)
                            .or_insert_with(|| vec![0.0; model.segment_len(owner)]);
                        f(g)
                    },
                );
                loss_sum += sample;
            }
            (loss_sum, grads)
        })
        .collect();
    let mut total = 0.0;
    let mut grads = SparseGrad::new();
    for (l, g) in parts {
        total += l;
        add_into(&mut grads, g);
    }
    (scale * total + model.lambda * model.squared_norm(), grads)
}

fn apply_quantum_update(model: &mut QuantumModel, grads: &SparseGrad, lr: f64) -> Result<()> {
    for (&owner, g) in grads {
        let store = match (owner, &mut model.entities) {
            (Owner::Predicate(p), _) => &mut model.predicates[p],
            (Owner::Entity(e), EntityRepr::Circuit(v)) => &mut v[e],
            (Owner::Entity(e), EntityRepr::Amplitude(v)) => {
                let ent = &mut v[e];
                let raw: Vec<f64> = ent.vector.iter().zip(g).map(|(x, d)| x - lr * d).collect();
                ent.set(&raw)?;
                continue;
            }
            (Owner::Core, _) => continue,
        };
        for (gate, d) in store.gates.iter_mut().zip(g.chunks_exact(3)) {
            gate.alpha -= lr * d[0];
            gate.beta -= lr * d[1];
            gate.gamma -= lr * d[2];
        }
    }
    Ok(())
}

fn apply_classical_update(model: &mut ClassicalModel, grads: &SparseGrad, lr: f64) {
    if model.lambda > 0.0 {
        let decay = 1.0 - 2.0 * lr * model.lambda;
        for v in model
            .entities
            .iter_mut()
            .chain(model.predicates.iter_mut())
            .chain(model.core.iter_mut())
        {
            *v *= decay;
        }
    }
    for (&owner, g) in grads {
        for (x, d) in model.segment_mut(owner).iter_mut().zip(g) {
            *x -= lr * d;
        }
    }
}

/// Loss and gradient of one batch at the current parameters.
pub fn batch_step(model: &mut Model, batch: &[Labeled], cfg: &TrainConfig, reg: &mut Regularizer) -> Result<f64> {
    match model {
        Model::Quantum(q) => {
            let (loss, grads) = quantum_batch_gradient(q, batch, &LossConfig::new(cfg.kappa)?, reg)?;
            if loss.is_finite() && cfg.lr != 0.0 {
                apply_quantum_update(q, &grads, cfg.lr)?;
            }
            Ok(loss)
        }
        Model::Classical(c) => {
            let (loss, grads) = classical_batch_gradient(c, batch, cfg.loss);
            if loss.is_finite() && cfg.lr != 0.0 {
                apply_classical_update(c, &grads, cfg.lr);
            }
            Ok(loss)
        }
    }
}

/// One pass over the shuffled training split. Returns the mean batch loss.
pub fn train_epoch(
    model: &mut Model,
    kg: &KnowledgeGraph,
    cfg: &TrainConfig,
    rngs: &mut TrainRngs,
    epoch: usize,
) -> Result<f64> {
    if kg.train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let batches = epoch_batches(kg, cfg.batch_size, cfg.negatives, cfg.filtered_negatives, &mut rngs.sampling);
    let mut sum = 0.0;
    for (b, batch) in batches.iter().enumerate() {
        let loss = batch_step(model, batch, cfg, &mut rngs.reg)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: b });
        }
        sum += loss;
    }
    Ok(sum / batches.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub epoch: usize,
    pub loss: f64,
    pub valid_hits3: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub best: Model,
    pub best_epoch: usize,
    pub best_valid_hits3: f64,
    pub epochs_run: usize,
    pub log: Vec<LogRow>,
}

/// Trains with early stopping on the filtered validation Hits@3.
pub fn fit(model: Model, kg: &KnowledgeGraph, cfg: &TrainConfig) -> Result<FitResult> {
    fit_with(model, kg, cfg, |m| {
        let opts = EvalOptions {
            noise: if cfg.noise_at_eval { cfg.noise } else { 0.0 },
            noise_scale: cfg.noise_scale,
            seed: cfg.seed,
            ..EvalOptions::default()
        };
        Ok(evaluate(m, kg, Split::Valid, &opts)?.combined.hits3)
    }, |_| {})
}

/// Like [`fit`] with a caller-supplied validation metric (higher is better)
/// and a per-epoch callback.
pub fn fit_with(
    mut model: Model,
    kg: &KnowledgeGraph,
    cfg: &TrainConfig,
    mut metric: impl FnMut(&Model) -> Result<f64>,
    mut on_epoch: impl FnMut(&LogRow),
) -> Result<FitResult> {
    cfg.validate()?;
    if kg.valid.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let start = Instant::now();
    let mut rngs = TrainRngs::new(cfg);
    let mut best: Option<(Model, usize, f64)> = None;
    let mut stale = 0;
    let mut log = Vec::new();
    let mut epochs_run = 0;
    for epoch in 1..=cfg.epochs {
        let loss = train_epoch(&mut model, kg, cfg, &mut rngs, epoch)?;
        epochs_run = epoch;
        let evaluate_now = epoch % cfg.eval_every == 0 || (epoch == cfg.epochs && best.is_none());
        let mut row = LogRow {
            epoch,
            loss,
            valid_hits3: None,
            wall_seconds: 0.0,
        };
        let mut stop = false;
        if evaluate_now {
            let h = metric(&model)?;
            row.valid_hits3 = Some(h);
            if best.as_ref().is_none_or(|b| h > b.2) {
                best = Some((model.clone(), epoch, h));
                stale = 0;
            } else {
                stale += 1;
                stop = stale >= cfg.patience;
            }
        }
        row.wall_seconds = start.elapsed().as_secs_f64();
        on_epoch(&row);
        log.push(row);
        if stop {
            break;
        }
    }
    let (best, best_epoch, best_valid_hits3) = match best {
        Some(b) => b,
        None => {
            let h = metric(&model)?;
            (model, epochs_run, h)
        }
    };
    Ok(FitResult {
        best,
        best_epoch,
        best_valid_hits3,
        epochs_run,
        log,
    })
}

pub fn write_log_csv(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,loss,valid_hits3,wall_seconds")?;
    for r in rows {
        let h = r.valid_hits3.map(|h| h.to_string()).unwrap_or_default();
        writeln!(f, "{},{},{},{:.3}", r.epoch, r.loss, h, r.wall_seconds)?;
    }
    f.flush()?;
    Ok(())
}
