//! Model state shared by scoring, training, evaluation and checkpoints.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::ClassicalModel;
use crate::circuits::{CircuitSpec, CompiledCircuit, ParamStore};
use crate::error::{Error, Result};
use crate::qsim::{EulerGate, StateVector};
use crate::qtree::AmplitudeTree;
use crate::training::Regularizer;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Qce,
    Fqce,
    Rescal,
    DistMult,
    ComplEx,
    Tucker,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Qce,
        ModelKind::Fqce,
        ModelKind::Rescal,
        ModelKind::DistMult,
        ModelKind::ComplEx,
        ModelKind::Tucker,
    ];

    pub fn is_quantum(self) -> bool {
        matches!(self, ModelKind::Qce | ModelKind::Fqce)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Qce => "qce",
            ModelKind::Fqce => "fqce",
            ModelKind::Rescal => "rescal",
            ModelKind::DistMult => "distmult",
            ModelKind::ComplEx => "complex",
            ModelKind::Tucker => "tucker",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownName(s.to_string()))
    }
}

/// A QCE entity: a unit-norm real vector and the tree it is loaded from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QceEntity {
    pub vector: Vec<f64>,
    pub tree: AmplitudeTree,
}

impl QceEntity {
    pub fn new(raw: &[f64]) -> Result<Self> {
        let vector = normalized(raw)?;
        let tree = AmplitudeTree::build(&vector)?;
        Ok(Self { vector, tree })
    }

    /// Replaces the vector with `raw / ‖raw‖` and refreshes the tree entry by
    /// entry.
    pub fn set(&mut self, raw: &[f64]) -> Result<()> {
        let vector = normalized(raw)?;
        for (k, &v) in vector.iter().enumerate() {
            self.tree.update_entry(k, v)?;
        }
        self.vector = vector;
        Ok(())
    }

    pub fn state(&self) -> StateVector {
        self.tree.prepare_state()
    }
}

pub fn normalized(raw: &[f64]) -> Result<Vec<f64>> {
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(raw.iter().map(|v| v / norm).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum EntityRepr {
    /// QCE: classical unit vectors loaded as amplitudes.
    Amplitude(Vec<QceEntity>),
    /// fQCE: per-entity circuits run on `H^{⊗n}|0...0>`.
    Circuit(Vec<ParamStore>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantumModel {
    pub kind: ModelKind,
    pub predicate_spec: CircuitSpec,
    pub entity_spec: CircuitSpec,
    pub predicates: Vec<ParamStore>,
    pub entities: EntityRepr,
}

impl QuantumModel {
    pub fn n_qubits(&self) -> usize {
        self.predicate_spec.n_qubits
    }

    pub fn num_entities(&self) -> usize {
        match &self.entities {
            EntityRepr::Amplitude(v) => v.len(),
            EntityRepr::Circuit(v) => v.len(),
        }
    }

    pub fn num_predicates(&self) -> usize {
        self.predicates.len()
    }

    pub fn check_triple(&self, s: usize, p: usize, o: usize) -> Result<()> {
        for e in [s, o] {
            if e >= self.num_entities() {
                return Err(Error::UnknownEntity(e));
            }
        }
        if p >= self.num_predicates() {
            return Err(Error::UnknownPredicate(p));
        }
        Ok(())
    }

    /// Unperturbed quantum representation of entity `e`.
    pub fn entity_state(&self, e: usize) -> Result<StateVector> {
        match &self.entities {
            EntityRepr::Amplitude(v) => Ok(v.get(e).ok_or(Error::UnknownEntity(e))?.state()),
            EntityRepr::Circuit(v) => {
                let params = v.get(e).ok_or(Error::UnknownEntity(e))?;
                Ok(CompiledCircuit::new(&self.entity_spec, &params.gates)?.from_zero())
            }
        }
    }

    pub fn predicate_circuit(&self, p: usize) -> Result<CompiledCircuit> {
        let params = self.predicates.get(p).ok_or(Error::UnknownPredicate(p))?;
        CompiledCircuit::new(&self.predicate_spec, &params.gates)
    }

    pub fn gate_param_count(&self) -> usize {
        let per = self.predicate_spec.param_count();
        match &self.entities {
            EntityRepr::Amplitude(_) => per * self.num_predicates(),
            EntityRepr::Circuit(v) => per * (self.num_predicates() + v.len()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Quantum(QuantumModel),
    Classical(ClassicalModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Quantum(q) => q.kind,
            Model::Classical(c) => c.kind,
        }
    }

    pub fn num_entities(&self) -> usize {
        match self {
            Model::Quantum(q) => q.num_entities(),
            Model::Classical(c) => c.num_entities,
        }
    }

    pub fn num_predicates(&self) -> usize {
        match self {
            Model::Quantum(q) => q.num_predicates(),
            Model::Classical(c) => c.num_predicates,
        }
    }

    /// Named flat parameter blocks in a fixed order.
    pub fn param_blocks(&self) -> Vec<(String, Vec<f64>)> {
        match self {
            Model::Quantum(q) => {
                let mut blocks = vec![(
                    "predicates".to_string(),
                    q.predicates.iter().flat_map(|p| p.flat()).collect(),
                )];
                match &q.entities {
                    EntityRepr::Amplitude(v) => blocks.push((
                        "entity_vectors".to_string(),
                        v.iter().flat_map(|e| e.vector.iter().copied()).collect(),
                    )),
                    EntityRepr::Circuit(v) => blocks.push((
                        "entity_circuits".to_string(),
                        v.iter().flat_map(|p| p.flat()).collect(),
                    )),
                }
                blocks
            }
            Model::Classical(c) => c.param_blocks(),
        }
    }
}

/// Compiled circuits and prepared entity states for one evaluation pass or
/// one training batch. Only the requested entities are materialized.
#[derive(Clone, Debug)]
pub struct QuantumContext {
    pub kind: ModelKind,
    pub n_qubits: usize,
    pub predicates: Vec<Option<CompiledCircuit>>,
    pub entity_circuits: Vec<Option<CompiledCircuit>>,
    pub entity_states: Vec<Option<StateVector>>,
}

impl QuantumContext {
    pub fn full(model: &QuantumModel, reg: Option<&mut Regularizer>) -> Result<Self> {
        Self::build(model, 0..model.num_entities(), 0..model.num_predicates(), reg)
    }

    /// Builds a context over the given (sorted, deduplicated) ids. Regularizer
    /// draws happen in id order, predicates first.
    pub fn build(
        model: &QuantumModel,
        entities: impl IntoIterator<Item = usize>,
        predicates: impl IntoIterator<Item = usize>,
        mut reg: Option<&mut Regularizer>,
    ) -> Result<Self> {
        let mut ctx = Self {
            kind: model.kind,
            n_qubits: model.n_qubits(),
            predicates: vec![None; model.num_predicates()],
            entity_circuits: Vec::new(),
            entity_states: vec![None; model.num_entities()],
        };
        for p in predicates {
            let params = model.predicates.get(p).ok_or(Error::UnknownPredicate(p))?;
            ctx.predicates[p] = Some(compile(&model.predicate_spec, &params.gates, reg.as_deref_mut())?);
        }
        match &model.entities {
            EntityRepr::Amplitude(v) => {
                for e in entities {
                    let ent = v.get(e).ok_or(Error::UnknownEntity(e))?;
                    let state = match reg.as_deref_mut() {
                        Some(r) if r.noise > 0.0 => {
                            let mut x = ent.vector.clone();
                            r.perturb_values(&mut x);
                            match AmplitudeTree::build(&x) {
                                Ok(t) => t.prepare_state(),
                                Err(_) => ent.state(),
                            }
                        }
                        _ => ent.state(),
                    };
                    ctx.entity_states[e] = Some(state);
                }
            }
            EntityRepr::Circuit(v) => {
                ctx.entity_circuits = vec![None; v.len()];
                for e in entities {
                    let params = v.get(e).ok_or(Error::UnknownEntity(e))?;
                    let c = compile(&model.entity_spec, &params.gates, reg.as_deref_mut())?;
                    ctx.entity_states[e] = Some(c.from_zero());
                    ctx.entity_circuits[e] = Some(c);
                }
            }
        }
        Ok(ctx)
    }

    pub fn entity(&self, e: usize) -> &StateVector {
        self.entity_states[e]
            .as_ref()
            .expect("entity not materialized in this context")
    }

    pub fn predicate(&self, p: usize) -> &CompiledCircuit {
        self.predicates[p]
            .as_ref()
            .expect("predicate not compiled in this context")
    }

    pub fn entity_circuit(&self, e: usize) -> &CompiledCircuit {
        self.entity_circuits[e]
            .as_ref()
            .expect("entity circuit not compiled in this context")
    }

    /// `η = Re <o| U_p |s>`
    pub fn eta(&self, s: usize, p: usize, o: usize) -> f64 {
        let sp = self.predicate(p).evolve(self.entity(s));
        self.entity(o).real_overlap(&sp)
    }
}

fn compile(spec: &CircuitSpec, gates: &[EulerGate], reg: Option<&mut Regularizer>) -> Result<CompiledCircuit> {
    match reg {
        None => CompiledCircuit::new(spec, gates),
        Some(r) => {
            let mask = r.dropout_mask(gates.len());
            let mut perturbed = gates.to_vec();
            r.perturb_gates(&mut perturbed);
            CompiledCircuit::with_mask(spec, &perturbed, mask.as_deref())
        }
    }
}
