//! RESCAL, DistMult, ComplEx and Tucker value functions with their losses and
//! analytic gradients.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kgdata::Labeled;
use crate::model::ModelKind;
use crate::training::Owner;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Mse,
    Logistic,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(LossKind::Mse),
            "logistic" => Ok(LossKind::Logistic),
            _ => Err(Error::UnknownName(s.to_string())),
        }
    }
}

/// Parameter tables of a classical model, row-major.
///
/// ComplEx rows store the `R` real parts followed by the `R` imaginary parts.
/// RESCAL predicate rows are `R x R` matrices. Tucker keeps a core
/// `W[i][j][k]` at `(i * R + j) * R + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassicalModel {
    pub kind: ModelKind,
    pub rank: usize,
    pub num_entities: usize,
    pub num_predicates: usize,
    pub lambda: f64,
    pub entities: Vec<f64>,
    pub predicates: Vec<f64>,
    pub core: Vec<f64>,
}

/// Dense gradient with the same layout as the model tables.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassicalGrads {
    pub entities: Vec<f64>,
    pub predicates: Vec<f64>,
    pub core: Vec<f64>,
}

pub fn entity_width(kind: ModelKind, rank: usize) -> usize {
    match kind {
        ModelKind::ComplEx => 2 * rank,
        _ => rank,
    }
}

pub fn predicate_width(kind: ModelKind, rank: usize) -> usize {
    match kind {
        ModelKind::ComplEx => 2 * rank,
        ModelKind::Rescal => rank * rank,
        _ => rank,
    }
}

impl ClassicalModel {
    pub fn zeros(kind: ModelKind, rank: usize, num_entities: usize, num_predicates: usize, lambda: f64) -> Result<Self> {
        if kind.is_quantum() {
            return Err(Error::UnsupportedModel(kind.to_string()));
        }
        if rank == 0 {
            return Err(Error::InvalidConfig("rank must be positive".into()));
        }
        Ok(Self {
            kind,
            rank,
            num_entities,
            num_predicates,
            lambda,
            entities: vec![0.0; num_entities * entity_width(kind, rank)],
            predicates: vec![0.0; num_predicates * predicate_width(kind, rank)],
            core: if kind == ModelKind::Tucker {
                vec![0.0; rank * rank * rank]
            } else {
                Vec::new()
            },
        })
    }

    /// Every table entry drawn from `N(0, 1/R)`.
    pub fn random(
        kind: ModelKind,
        rank: usize,
        num_entities: usize,
        num_predicates: usize,
        lambda: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut m = Self::zeros(kind, rank, num_entities, num_predicates, lambda)?;
        let normal = Normal::new(0.0, 1.0 / (rank as f64).sqrt()).expect("positive sigma");
        for v in m.entities.iter_mut().chain(m.predicates.iter_mut()).chain(m.core.iter_mut()) {
            *v = normal.sample(rng);
        }
        Ok(m)
    }

    pub fn entity_width(&self) -> usize {
        entity_width(self.kind, self.rank)
    }

    pub fn predicate_width(&self) -> usize {
        predicate_width(self.kind, self.rank)
    }

    pub fn entity(&self, e: usize) -> &[f64] {
        let w = self.entity_width();
        &self.entities[e * w..(e + 1) * w]
    }

    pub fn predicate(&self, p: usize) -> &[f64] {
        let w = self.predicate_width();
        &self.predicates[p * w..(p + 1) * w]
    }

    pub fn check_triple(&self, s: usize, p: usize, o: usize) -> Result<()> {
        for e in [s, o] {
            if e >= self.num_entities {
                return Err(Error::UnknownEntity(e));
            }
        }
        if p >= self.num_predicates {
            return Err(Error::UnknownPredicate(p));
        }
        Ok(())
    }

    pub fn value(&self, s: usize, p: usize, o: usize) -> Result<f64> {
        self.check_triple(s, p, o)?;
        let q = self.object_query(s, p);
        Ok(dot(&q, self.entity(o)))
    }

    /// `q` with `η(s, p, o') = q · a_o'` for every candidate object.
    pub fn object_query(&self, s: usize, p: usize) -> Vec<f64> {
        let r = self.rank;
        let (a, w) = (self.entity(s), self.predicate(p));
        match self.kind {
            ModelKind::DistMult => a.iter().zip(w).map(|(x, y)| x * y).collect(),
            ModelKind::ComplEx => {
                let (sr, si) = a.split_at(r);
                let (pr, pi) = w.split_at(r);
                let mut q = vec![0.0; 2 * r];
                for i in 0..r {
                    q[i] = sr[i] * pr[i] - si[i] * pi[i];
                    q[r + i] = sr[i] * pi[i] + si[i] * pr[i];
                }
                q
            }
            ModelKind::Rescal => {
                let mut q = vec![0.0; r];
                for i in 0..r {
                    let row = &w[i * r..(i + 1) * r];
                    for (qj, m) in q.iter_mut().zip(row) {
                        *qj += a[i] * m;
                    }
                }
                q
            }
            ModelKind::Tucker => {
                let mut q = vec![0.0; r];
                for i in 0..r {
                    for j in 0..r {
                        let c = a[i] * w[j];
                        let fiber = &self.core[(i * r + j) * r..(i * r + j + 1) * r];
                        for (qk, wk) in q.iter_mut().zip(fiber) {
                            *qk += c * wk;
                        }
                    }
                }
                q
            }
            ModelKind::Qce | ModelKind::Fqce => unreachable!("classical model with quantum kind"),
        }
    }

    /// `q` with `η(s', p, o) = q · a_s'` for every candidate subject.
    pub fn subject_query(&self, p: usize, o: usize) -> Vec<f64> {
        let r = self.rank;
        let (w, b) = (self.predicate(p), self.entity(o));
        match self.kind {
            ModelKind::DistMult => w.iter().zip(b).map(|(x, y)| x * y).collect(),
            ModelKind::ComplEx => {
                let (pr, pi) = w.split_at(r);
                let (or, oi) = b.split_at(r);
                let mut q = vec![0.0; 2 * r];
                for i in 0..r {
                    q[i] = pr[i] * or[i] + pi[i] * oi[i];
                    q[r + i] = pr[i] * oi[i] - pi[i] * or[i];
                }
                q
            }
            ModelKind::Rescal => (0..r).map(|i| dot(&w[i * r..(i + 1) * r], b)).collect(),
            ModelKind::Tucker => {
                let mut q = vec![0.0; r];
                for (i, qi) in q.iter_mut().enumerate() {
                    for j in 0..r {
                        let fiber = &self.core[(i * r + j) * r..(i * r + j + 1) * r];
                        *qi += w[j] * dot(fiber, b);
                    }
                }
                q
            }
            ModelKind::Qce | ModelKind::Fqce => unreachable!("classical model with quantum kind"),
        }
    }

    /// `q` with `η(s, p, o) = q · a_p`.
    fn predicate_query(&self, s: usize, o: usize) -> Vec<f64> {
        let r = self.rank;
        let (a, b) = (self.entity(s), self.entity(o));
        match self.kind {
            ModelKind::DistMult => a.iter().zip(b).map(|(x, y)| x * y).collect(),
            ModelKind::ComplEx => {
                let (sr, si) = a.split_at(r);
                let (or, oi) = b.split_at(r);
                let mut q = vec![0.0; 2 * r];
                for i in 0..r {
                    q[i] = sr[i] * or[i] + si[i] * oi[i];
                    q[r + i] = sr[i] * oi[i] - si[i] * or[i];
                }
                q
            }
            ModelKind::Rescal => {
                let mut q = vec![0.0; r * r];
                for i in 0..r {
                    for j in 0..r {
                        q[i * r + j] = a[i] * b[j];
                    }
                }
                q
            }
            _ => {
                let mut q = vec![0.0; r];
                for i in 0..r {
                    for (j, qj) in q.iter_mut().enumerate() {
                        let fiber = &self.core[(i * r + j) * r..(i * r + j + 1) * r];
                        *qj += a[i] * dot(fiber, b);
                    }
                }
                q
            }
        }
    }

    /// Adds `weight · ∂η_spo` to each touched table row via `sink`; the Tucker
    /// core goes to `Owner::Core`. Returns `η`.
    pub fn accumulate_triple(
        &self,
        (s, p, o): (usize, usize, usize),
        weight_of: impl FnOnce(f64) -> f64,
        mut sink: impl FnMut(Owner, &mut dyn FnMut(&mut [f64])),
    ) -> f64 {
        let qo = self.object_query(s, p);
        let eta = dot(&qo, self.entity(o));
        let weight = weight_of(eta);
        if weight == 0.0 {
            return eta;
        }
        let qs = self.subject_query(p, o);
        let qp = self.predicate_query(s, o);
        sink(Owner::Entity(s), &mut |g| axpy(weight, &qs, g));
        sink(Owner::Entity(o), &mut |g| axpy(weight, &qo, g));
        sink(Owner::Predicate(p), &mut |g| axpy(weight, &qp, g));
        if self.kind == ModelKind::Tucker {
            let r = self.rank;
            let (a, w, b) = (self.entity(s), self.predicate(p), self.entity(o));
            sink(Owner::Core, &mut |g| {
                for i in 0..r {
                    for j in 0..r {
                        let c = weight * a[i] * w[j];
                        let fiber = &mut g[(i * r + j) * r..(i * r + j + 1) * r];
                        axpy(c, b, fiber);
                    }
                }
            });
        }
        eta
    }

    pub fn squared_norm(&self) -> f64 {
        self.entities
            .iter()
            .chain(&self.predicates)
            .chain(&self.core)
            .map(|v| v * v)
            .sum()
    }

    pub fn param_blocks(&self) -> Vec<(String, Vec<f64>)> {
        let mut blocks = vec![
            ("entities".to_string(), self.entities.clone()),
            ("predicates".to_string(), self.predicates.clone()),
        ];
        if self.kind == ModelKind::Tucker {
            blocks.push(("core".to_string(), self.core.clone()));
        }
        blocks
    }

    /// Mutable table segment for one gradient owner.
    pub fn segment_mut(&mut self, owner: Owner) -> &mut [f64] {
        match owner {
            Owner::Entity(e) => {
                let w = self.entity_width();
                &mut self.entities[e * w..(e + 1) * w]
            }
            Owner::Predicate(p) => {
                let w = self.predicate_width();
                &mut self.predicates[p * w..(p + 1) * w]
            }
            Owner::Core => &mut self.core,
        }
    }

    pub fn segment_len(&self, owner: Owner) -> usize {
        match owner {
            Owner::Entity(_) => self.entity_width(),
            Owner::Predicate(_) => self.predicate_width(),
            Owner::Core => self.core.len(),
        }
    }
}

/// Per-sample loss and `∂loss/∂η`, before the `1/m` of MSE.
pub fn sample_loss(which: LossKind, y: f64, eta: f64) -> (f64, f64) {
    match which {
        LossKind::Mse => ((y - eta).powi(2), 2.0 * (eta - y)),
        LossKind::Logistic => {
            let z = -y * eta;
            // log(1 + e^z) and its derivative sigma(z), stable for large |z|
            let l = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            let sigma = 1.0 / (1.0 + (-z).exp());
            (l, -y * sigma)
        }
    }
}

/// Scale applied to the summed per-sample loss.
pub fn loss_scale(which: LossKind, m: usize) -> f64 {
    match which {
        LossKind::Mse => 1.0 / m as f64,
        LossKind::Logistic => 1.0,
    }
}

/// MSE is averaged over the batch, the logistic loss summed; both add
/// `λ ‖A‖²` over every table entry.
pub fn classical_loss(model: &ClassicalModel, batch: &[Labeled], which: LossKind) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut data = 0.0;
    for l in batch {
        let t = l.triple;
        data += sample_loss(which, l.label, model.value(t.s, t.p, t.o)?).0;
    }
    Ok(loss_scale(which, batch.len()) * data + model.lambda * model.squared_norm())
}

pub fn classical_gradients(model: &ClassicalModel, batch: &[Labeled], which: LossKind) -> Result<ClassicalGrads> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let scale = loss_scale(which, batch.len());
    let mut grads = ClassicalGrads {
        entities: model.entities.iter().map(|v| 2.0 * model.lambda * v).collect(),
        predicates: model.predicates.iter().map(|v| 2.0 * model.lambda * v).collect(),
        core: model.core.iter().map(|v| 2.0 * model.lambda * v).collect(),
    };
    let (ew, pw) = (model.entity_width(), model.predicate_width());
    for l in batch {
        let t = l.triple;
        model.check_triple(t.s, t.p, t.o)?;
        model.accumulate_triple(
            (t.s, t.p, t.o),
            |eta| scale * sample_loss(which, l.label, eta).1,
            |owner, f| match owner {
                Owner::Entity(e) => f(&mut grads.entities[e * ew..(e + 1) * ew]),
                Owner::Predicate(p) => f(&mut grads.predicates[p * pw..(p + 1) * pw]),
                Owner::Core => f(&mut grads.core),
            },
        );
    }
    Ok(grads)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
