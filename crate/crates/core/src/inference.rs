//! Simulated quantum inference: the joint ancilla/index/representation state
//! for a query `(s, p)`, amplitude amplification of the ancilla-`|0>`
//! subspace, and sampled candidate tallies.
//!
//! Wire 0 is the ancilla `A`, wires `1..=n_e` the index register `I`, the
//! remaining `n` wires the representation register `L`.

use std::f64::consts::PI;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::circuits::CompiledCircuit;
use crate::error::{Error, Result};
use crate::model::{EntityRepr, QuantumModel};
use crate::qsim::{StateVector, MAX_QUBITS};
use crate::qtree::{apply_load_ops, AmplitudeTree};

#[derive(Clone, Debug)]
pub struct InferenceState {
    pub num_entities: usize,
    pub index_qubits: usize,
    pub data_qubits: usize,
    pub query: (usize, usize),
    /// Present in idealistic mode.
    pub solutions: Option<Vec<usize>>,
    /// The prepared state `|ψ>`, kept for the reflection about it.
    pub initial: StateVector,
    pub state: StateVector,
}

pub fn index_qubits(num_entities: usize) -> usize {
    (usize::BITS - num_entities.saturating_sub(1).leading_zeros()).max(1) as usize
}

fn index_conditions(i: usize, n_e: usize) -> Vec<(usize, bool)> {
    (0..n_e).map(|q| (1 + q, (i >> (n_e - 1 - q)) & 1 == 1)).collect()
}

fn check_size(model: &QuantumModel, s: usize, p: usize) -> Result<(usize, usize, usize)> {
    model.check_triple(s, p, s)?;
    let ne = model.num_entities();
    let n_e = index_qubits(ne);
    let total = 1 + n_e + model.n_qubits();
    if total > MAX_QUBITS {
        return Err(Error::TooLarge(1usize << total.min(63)));
    }
    Ok((ne, n_e, total))
}

fn uniform_index_register(state: &mut StateVector, ne: usize) -> Result<()> {
    let tree = AmplitudeTree::build(&vec![1.0; ne])?;
    apply_load_ops(state, &tree.loading_ops(), 1, &[])
}

/// Prepares `|sp> = U_p |s>` on `L` under the given conditions.
fn prepare_sp(model: &QuantumModel, state: &mut StateVector, s: usize, p: usize, offset: usize, conds: &[(usize, bool)]) -> Result<()> {
    prepare_entity(model, state, s, offset, conds)?;
    model.predicate_circuit(p)?.apply_conditioned(state, offset, conds)
}

fn prepare_entity(model: &QuantumModel, state: &mut StateVector, e: usize, offset: usize, conds: &[(usize, bool)]) -> Result<()> {
    match &model.entities {
        EntityRepr::Amplitude(v) => apply_load_ops(state, &v[e].tree.loading_ops(), offset, conds),
        EntityRepr::Circuit(v) => CompiledCircuit::new(&model.entity_spec, &v[e].gates)?.apply_conditioned(state, offset, conds),
    }
}

/// `(1/(2√N_e)) Σ_i [|0>|i>(|e_i> + |sp>) + |1>|i>(|e_i> - |sp>)]`, built by
/// simulating the conditional preparations and the final ancilla Hadamard.
pub fn build_inference_state(model: &QuantumModel, s: usize, p: usize) -> Result<InferenceState> {
    let (ne, n_e, total) = check_size(model, s, p)?;
    let offset = 1 + n_e;
    let mut state = StateVector::zero(total);
    state.apply_hadamard(0)?;
    uniform_index_register(&mut state, ne)?;
    for i in 0..ne {
        let mut conds = vec![(0, false)];
        conds.extend(index_conditions(i, n_e));
        prepare_entity(model, &mut state, i, offset, &conds)?;
    }
    prepare_sp(model, &mut state, s, p, offset, &[(0, true)])?;
    state.apply_hadamard(0)?;
    Ok(InferenceState {
        num_entities: ne,
        index_qubits: n_e,
        data_qubits: model.n_qubits(),
        query: (s, p),
        solutions: None,
        initial: state.clone(),
        state,
    })
}

/// Idealistic variant: the index-`i` representation is `+|sp>` for solutions
/// and `-|sp>` otherwise, i.e. `η = ±1` exactly.
pub fn build_idealistic_state(model: &QuantumModel, s: usize, p: usize, solutions: &[usize]) -> Result<InferenceState> {
    let (ne, n_e, total) = check_size(model, s, p)?;
    if solutions.is_empty() {
        return Err(Error::Empty("solution set"));
    }
    if let Some(&bad) = solutions.iter().find(|&&e| e >= ne) {
        return Err(Error::UnknownEntity(bad));
    }
    let mut state = StateVector::zero(total);
    state.apply_hadamard(0)?;
    uniform_index_register(&mut state, ne)?;
    prepare_sp(model, &mut state, s, p, 1 + n_e, &[])?;
    for i in (0..ne).filter(|i| !solutions.contains(i)) {
        let mut conds = vec![(0, false)];
        conds.extend(index_conditions(i, n_e));
        state.apply_conditional_phase_flip(&conds)?;
    }
    state.apply_hadamard(0)?;
    let mut sol = solutions.to_vec();
    sol.sort_unstable();
    sol.dedup();
    Ok(InferenceState {
        num_entities: ne,
        index_qubits: n_e,
        data_qubits: model.n_qubits(),
        query: (s, p),
        solutions: Some(sol),
        initial: state.clone(),
        state,
    })
}

impl InferenceState {
    fn data_dim(&self) -> usize {
        1 << self.data_qubits
    }

    fn half(&self) -> usize {
        self.state.dim() / 2
    }

    /// `(Pr(|0>_A |i>_I), Pr(|1>_A |i>_I))` for every index `i < 2^{n_e}`.
    pub fn index_probabilities(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.data_dim();
        let amps = self.state.amplitudes();
        let block = |k: usize| amps[k * d..(k + 1) * d].iter().map(|z| z.norm_sqr()).sum::<f64>();
        let ni = 1 << self.index_qubits;
        ((0..ni).map(block).collect(), (ni..2 * ni).map(block).collect())
    }

    pub fn p0(&self) -> f64 {
        self.state.amplitudes()[..self.half()].iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn initial_p0(&self) -> f64 {
        self.initial.amplitudes()[..self.half()].iter().map(|z| z.norm_sqr()).sum()
    }

    /// `Pr(i ∈ solutions | A = 0)`.
    pub fn postselected_success(&self) -> Option<f64> {
        let sol = self.solutions.as_ref()?;
        let (p0, _) = self.index_probabilities();
        let good: f64 = sol.iter().map(|&i| p0[i]).sum();
        Some(good / p0.iter().sum::<f64>())
    }
}

/// `sin²((2m + 1) θ₀)` with `sin² θ₀ = initial_p0`.
pub fn predicted_p0(initial_p0: f64, iterations: usize) -> f64 {
    let theta = initial_p0.clamp(0.0, 1.0).sqrt().asin();
    ((2 * iterations + 1) as f64 * theta).sin().powi(2)
}

/// `iterations` rounds of `(2|ψ><ψ| - I) S_χ`, `S_χ` flipping the sign of
/// every ancilla-`|0>` amplitude.
pub fn amplify(mut st: InferenceState, iterations: usize) -> InferenceState {
    let half = st.half();
    for _ in 0..iterations {
        let v = st.state.amplitudes_mut();
        for z in &mut v[..half] {
            *z = -*z;
        }
        let overlap: crate::qsim::C64 = st
            .initial
            .amplitudes()
            .iter()
            .zip(v.iter())
            .map(|(a, b)| a.conj() * b)
            .sum();
        for (z, a) in v.iter_mut().zip(st.initial.amplitudes()) {
            *z = 2.0 * overlap * a - *z;
        }
    }
    st
}

/// `⌊(π/4) √(2 N_e / H)⌋`, or 0 when `H > 2 N_e`.
pub fn iteration_count(num_entities: usize, solutions: usize) -> usize {
    if solutions == 0 || solutions > 2 * num_entities {
        return 0;
    }
    (PI / 4.0 * (2.0 * num_entities as f64 / solutions as f64).sqrt()).floor() as usize
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Tally {
    pub shots: u64,
    pub post_selected: u64,
    /// Ancilla-0 counts per entity index.
    pub counts: Vec<u64>,
    /// Most frequent indices, ties broken by index.
    pub top: Vec<(usize, u64)>,
}

/// Samples `(A, I)` outcomes, drops ancilla-1 shots and tallies indices.
pub fn sample_candidates(st: &InferenceState, shots: u64, top_k: usize, rng: &mut ChaCha8Rng) -> Result<Tally> {
    if shots == 0 {
        return Err(Error::InvalidConfig("at least one shot is required".into()));
    }
    let (p0, p1) = st.index_probabilities();
    let ni = p0.len();
    let weights: Vec<f64> = p0.iter().chain(&p1).copied().collect();
    let dist = WeightedIndex::new(&weights).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut counts = vec![0u64; st.num_entities];
    let mut post = 0;
    for _ in 0..shots {
        let k = dist.sample(rng);
        if k < ni {
            post += 1;
            if k < st.num_entities {
                counts[k] += 1;
            }
        }
    }
    let mut top: Vec<(usize, u64)> = counts.iter().copied().enumerate().filter(|(_, c)| *c > 0).collect();
    top.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    top.truncate(top_k);
    Ok(Tally {
        shots,
        post_selected: post,
        counts,
        top,
    })
}

#[derive(Clone, Debug, Default)]
pub struct InferOptions {
    /// Idealistic mode when set.
    pub solutions: Option<Vec<usize>>,
    /// Defaults to `iteration_count(N_e, H)`.
    pub iterations: Option<usize>,
    /// `H` for the default iteration count outside idealistic mode.
    pub expected_solutions: usize,
    pub shots: u64,
    pub top_k: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct InferenceReport {
    pub query: (usize, usize),
    pub num_entities: usize,
    pub iterations: usize,
    pub initial_index_p0: Vec<f64>,
    pub final_index_p0: Vec<f64>,
    pub initial_p0: f64,
    pub initial_p1: f64,
    pub final_p0: f64,
    pub predicted_final_p0: f64,
    pub postselected_success: Option<f64>,
    pub tally: Option<Tally>,
}

pub fn run_inference(model: &QuantumModel, s: usize, p: usize, opts: &InferOptions, rng: &mut ChaCha8Rng) -> Result<InferenceReport> {
    let st = match &opts.solutions {
        Some(sol) => build_idealistic_state(model, s, p, sol)?,
        None => build_inference_state(model, s, p)?,
    };
    let h = match &st.solutions {
        Some(sol) => sol.len(),
        None => opts.expected_solutions.max(1),
    };
    let iterations = opts.iterations.unwrap_or_else(|| iteration_count(st.num_entities, h));
    let ne = st.num_entities;
    let (init0, init1) = st.index_probabilities();
    let initial_p0 = st.initial_p0();
    let st = amplify(st, iterations);
    let (fin0, _) = st.index_probabilities();
    let tally = if opts.shots > 0 {
        Some(sample_candidates(&st, opts.shots, opts.top_k.max(1), rng)?)
    } else {
        None
    };
    Ok(InferenceReport {
        query: (s, p),
        num_entities: ne,
        iterations,
        initial_index_p0: init0[..ne].to_vec(),
        final_index_p0: fin0[..ne].to_vec(),
        initial_p0,
        initial_p1: init1.iter().sum(),
        final_p0: st.p0(),
        predicted_final_p0: predicted_p0(initial_p0, iterations),
        postselected_success: st.postselected_success(),
        tally,
    })
}
