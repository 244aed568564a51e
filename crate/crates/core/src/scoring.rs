//! The value function `η = Re <o| U_p |s>`: exact, through the ancilla
//! interference circuit, and estimated from simulated measurement shots.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{EntityRepr, ModelKind, QuantumModel};
use crate::qsim::{Mat2, StateVector};
use crate::qtree::apply_load_ops;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TripleScore {
    pub eta: f64,
    pub model: ModelKind,
    /// 0 for exact scores.
    pub shots_used: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AncillaReadout {
    pub p0: f64,
    pub p1: f64,
    pub eta: f64,
}

pub fn eta_exact(model: &QuantumModel, s: usize, p: usize, o: usize) -> Result<TripleScore> {
    model.check_triple(s, p, o)?;
    let sp = model.predicate_circuit(p)?.evolve(&model.entity_state(s)?);
    let eta = model.entity_state(o)?.inner_product(&sp)?.re;
    Ok(TripleScore {
        eta,
        model: model.kind,
        shots_used: 0,
    })
}

/// Prepares entity `e` on wires `1..=n` of `state`, every gate conditioned on
/// the ancilla (wire 0) being `|1>`.
fn prepare_entity_on_ancilla(model: &QuantumModel, state: &mut StateVector, e: usize) -> Result<()> {
    let on = [(0, true)];
    match &model.entities {
        EntityRepr::Amplitude(v) => {
            let ent = v.get(e).ok_or(Error::UnknownEntity(e))?;
            apply_load_ops(state, &ent.tree.loading_ops(), 1, &on)
        }
        EntityRepr::Circuit(v) => {
            let params = v.get(e).ok_or(Error::UnknownEntity(e))?;
            crate::circuits::CompiledCircuit::new(&model.entity_spec, &params.gates)?.apply_conditioned(state, 1, &on)
        }
    }
}

/// Simulates the `(n+1)`-qubit interference circuit: Hadamard on the ancilla,
/// object preparation controlled on ancilla `|0>`, subject preparation and
/// `U_p` controlled on ancilla `|1>`, Hadamard again.
pub fn ancilla_state(model: &QuantumModel, s: usize, p: usize, o: usize) -> Result<StateVector> {
    model.check_triple(s, p, o)?;
    let n = model.n_qubits();
    let mut state = StateVector::zero(n + 1);
    state.apply_hadamard(0)?;
    // |0>-controlled branch via X conjugation of the ancilla
    state.apply_single(0, &Mat2::PAULI_X)?;
    prepare_entity_on_ancilla(model, &mut state, o)?;
    state.apply_single(0, &Mat2::PAULI_X)?;
    prepare_entity_on_ancilla(model, &mut state, s)?;
    model.predicate_circuit(p)?.apply_conditioned(&mut state, 1, &[(0, true)])?;
    state.apply_hadamard(0)?;
    Ok(state)
}

pub fn eta_via_ancilla(model: &QuantumModel, s: usize, p: usize, o: usize) -> Result<AncillaReadout> {
    let state = ancilla_state(model, s, p, o)?;
    let half = state.dim() / 2;
    let p0: f64 = state.amplitudes()[..half].iter().map(|z| z.norm_sqr()).sum();
    let p1: f64 = state.amplitudes()[half..].iter().map(|z| z.norm_sqr()).sum();
    Ok(AncillaReadout {
        p0,
        p1,
        eta: 2.0 * p0 - 1.0,
    })
}

/// `2 · (fraction of ancilla-0 outcomes) - 1` over `n_shots` Bernoulli(p0)
/// draws.
pub fn estimate_from_p0(p0: f64, n_shots: u64, rng: &mut ChaCha8Rng) -> f64 {
    let p0 = p0.clamp(0.0, 1.0);
    let zeros = (0..n_shots).filter(|_| rng.random::<f64>() < p0).count();
    2.0 * zeros as f64 / n_shots as f64 - 1.0
}

pub fn eta_shots(
    model: &QuantumModel,
    s: usize,
    p: usize,
    o: usize,
    n_shots: u64,
    rng: &mut ChaCha8Rng,
) -> Result<TripleScore> {
    if n_shots == 0 {
        return Err(Error::InvalidConfig("at least one shot is required".into()));
    }
    let readout = eta_via_ancilla(model, s, p, o)?;
    Ok(TripleScore {
        eta: estimate_from_p0(readout.p0, n_shots, rng),
        model: model.kind,
        shots_used: n_shots,
    })
}
