//! Loss, shifted-parameter gate derivatives and value-function gradients.
//!
//! Two evaluations of the same derivative are provided. `derivative_circuit_gradient`
//! re-runs the circuit once per shifted term with the slot replaced, exactly
//! as a device would. `accumulate_adjoint` obtains the identical quantity
//! `Re <bra| O_L .. D_k .. O_1 |input>` for every slot in one backward sweep by
//! caching the partial products; training uses it.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::circuits::{apply_slot, CompiledCircuit, Slot, PARAMS_PER_GATE};
use crate::error::{Error, Result};
use crate::model::{ModelKind, QuantumContext, QuantumModel};
use crate::qsim::{gate_matrix, EulerGate, Mat2, StateVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Param {
    Alpha,
    Beta,
    Gamma,
}

impl Param {
    pub const ALL: [Param; 3] = [Param::Alpha, Param::Beta, Param::Gamma];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kappa: u32,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { kappa: 1 }
    }
}

impl LossConfig {
    pub fn new(kappa: u32) -> Result<Self> {
        if kappa == 0 {
            return Err(Error::InvalidConfig("kappa must be >= 1".into()));
        }
        Ok(Self { kappa })
    }

    fn exponent(&self) -> i32 {
        2 * self.kappa as i32
    }

    /// `∂/∂η` of one summand before the `1/m` factor: `2κ (η - y)^{2κ-1}`.
    pub fn residual_weight(&self, eta: f64, y: f64) -> f64 {
        let k = self.kappa as f64;
        2.0 * k * (eta - y).powi(self.exponent() - 1)
    }
}

/// `(1/m) Σ (y - η)^{2κ}` over `(η, y)` pairs.
pub fn loss(scores: &[(f64, f64)], cfg: &LossConfig) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("loss batch"));
    }
    let e = cfg.exponent();
    Ok(scores.iter().map(|&(eta, y)| (y - eta).powi(e)).sum::<f64>() / scores.len() as f64)
}

/// Derivative of `G(α, β, γ)` in one parameter, assembled from shifted gates.
pub fn gate_derivative(g: EulerGate, which: Param) -> Mat2 {
    shift_terms(g, which)
        .iter()
        .fold(Mat2::ZERO, |acc, (w, shifted)| acc.add(&gate_matrix(*shifted).scale(*w)))
}

/// `∂G = Σ w_i G(shifted_i)`.
pub fn shift_terms(g: EulerGate, which: Param) -> Vec<(f64, EulerGate)> {
    let EulerGate { alpha, beta, gamma } = g;
    match which {
        Param::Alpha => vec![(1.0, EulerGate::new(alpha + FRAC_PI_2, beta, gamma))],
        Param::Beta => vec![
            (0.5, EulerGate::new(alpha, beta + FRAC_PI_2, 0.0)),
            (0.5, EulerGate::new(alpha, beta + FRAC_PI_2, PI)),
        ],
        Param::Gamma => vec![
            (0.5, EulerGate::new(alpha, 0.0, gamma + FRAC_PI_2)),
            (0.5, EulerGate::new(alpha, PI, gamma + FRAC_PI_2)),
        ],
    }
}

/// What a derivative run puts in place of slot `k`.
#[derive(Clone, Copy, Debug)]
enum Replacement {
    /// The slot's own wiring with a different gate matrix.
    Gate(Mat2),
    /// `P0 ⊗ 1` on the control wire: the branch of a controlled gate that
    /// does not depend on its parameters.
    ControlZeroBranch,
}

fn run_with_replacement(circ: &CompiledCircuit, input: &StateVector, k: usize, rep: Replacement) -> StateVector {
    let mut state = input.clone();
    if circ.hadamard_prelude {
        state.apply_hadamard_all();
    }
    for (i, (slot, m)) in circ.slots.iter().zip(&circ.mats).enumerate() {
        if i != k {
            apply_slot(&mut state, slot, m);
            continue;
        }
        match rep {
            Replacement::Gate(g) => apply_slot(&mut state, slot, &g),
            Replacement::ControlZeroBranch => {
                let control = slot.control().expect("only controlled slots have a zero branch");
                // zero out the control-|1> half, keep the control-|0> half
                state
                    .apply_multi_controlled(&[(control, true)], slot.target(), &Mat2::ZERO)
                    .expect("slot wires are valid");
            }
        }
    }
    state
}

/// `∂/∂θ Re <bra| U |input>` for every gate parameter of `circ`, each from
/// re-running the circuit with shifted gates.
///
/// For a single-qubit slot the derivative operator is `Σ w_i G(shifted_i)`
/// lifted to the register. For a controlled slot it is `P1 ⊗ ∂G`, obtained as
/// `Σ w_i C(G(shifted_i)) - (Σ w_i) P0 ⊗ 1`.
pub fn derivative_circuit_gradient(circ: &CompiledCircuit, input: &StateVector, bra: &StateVector) -> Vec<f64> {
    let mut grads = vec![0.0; PARAMS_PER_GATE * circ.slots.len()];
    for (k, slot) in circ.slots.iter().enumerate() {
        if !circ.active[k] {
            continue;
        }
        for (j, which) in Param::ALL.into_iter().enumerate() {
            let mut value = 0.0;
            let mut weight_sum = 0.0;
            for (w, shifted) in shift_terms(circ.gates[k], which) {
                let out = run_with_replacement(circ, input, k, Replacement::Gate(gate_matrix(shifted)));
                value += w * bra.real_overlap(&out);
                weight_sum += w;
            }
            if let Slot::Controlled { .. } = slot {
                let out = run_with_replacement(circ, input, k, Replacement::ControlZeroBranch);
                value -= weight_sum * bra.real_overlap(&out);
            }
            grads[PARAMS_PER_GATE * k + j] = value;
        }
    }
    grads
}

/// Scratch registers for the backward sweep.
#[derive(Clone, Debug)]
pub struct Scratch {
    psi: StateVector,
    chi: StateVector,
}

impl Scratch {
    pub fn new(n_qubits: usize) -> Self {
        Self {
            psi: StateVector::zero(n_qubits),
            chi: StateVector::zero(n_qubits),
        }
    }
}

/// Adds `weight · ∂/∂θ Re <bra| U |input>` for every gate parameter into
/// `grads`, given `output = U |input>`.
pub fn accumulate_adjoint(
    circ: &CompiledCircuit,
    output: &StateVector,
    bra: &StateVector,
    weight: f64,
    grads: &mut [f64],
    scratch: &mut Scratch,
) {
    debug_assert_eq!(grads.len(), PARAMS_PER_GATE * circ.slots.len());
    let Scratch { psi, chi } = scratch;
    psi.copy_from(output);
    chi.copy_from(bra);
    for k in (0..circ.slots.len()).rev() {
        let slot = &circ.slots[k];
        let inv = circ.mats[k].dagger();
        apply_slot(psi, slot, &inv);
        if circ.active[k] {
            let m = psi.pair_overlap(chi, slot.target(), slot.control());
            for (j, d) in circ.derivs[k].iter().enumerate() {
                let re: f64 = (0..4).map(|i| d.0[i].re * m[i].re - d.0[i].im * m[i].im).sum();
                grads[PARAMS_PER_GATE * k + j] += weight * re;
            }
        }
        if k > 0 {
            apply_slot(chi, slot, &inv);
        }
    }
}

/// Gradient of `η_spo` for one triple. For QCE `subject`/`object` hold the
/// classical embedding gradients, for fQCE the entity-circuit gate gradients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientVector {
    pub predicate: Vec<f64>,
    pub subject: Vec<f64>,
    pub object: Vec<f64>,
}

/// Gate-parameter gradients of `η_spo` by derivative-circuit runs: the
/// predicate circuit, plus both entity circuits for fQCE.
pub fn eta_gradient_gates(model: &QuantumModel, s: usize, p: usize, o: usize) -> Result<GradientVector> {
    model.check_triple(s, p, o)?;
    let up = model.predicate_circuit(p)?;
    let s_state = model.entity_state(s)?;
    let o_state = model.entity_state(o)?;
    let predicate = derivative_circuit_gradient(&up, &s_state, &o_state);
    let (subject, object) = match model.kind {
        ModelKind::Fqce => {
            let ctx = QuantumContext::build(model, dedup(s, o), [p], None)?;
            let mut bra = o_state.clone();
            up.apply_gates_inverse(&mut bra);
            let sp = up.evolve(&s_state);
            let zero = StateVector::zero(model.n_qubits());
            (
                derivative_circuit_gradient(ctx.entity_circuit(s), &zero, &bra),
                derivative_circuit_gradient(ctx.entity_circuit(o), &zero, &sp),
            )
        }
        _ => (Vec::new(), Vec::new()),
    };
    Ok(GradientVector {
        predicate,
        subject,
        object,
    })
}

/// `∂η/∂a_s = Re(U_p† |o>)` and `∂η/∂a_o = Re(U_p |s>)` for QCE.
pub fn eta_gradient_qce_embeddings(model: &QuantumModel, s: usize, p: usize, o: usize) -> Result<GradientVector> {
    if model.kind != ModelKind::Qce {
        return Err(Error::UnsupportedModel(model.kind.to_string()));
    }
    model.check_triple(s, p, o)?;
    let up = model.predicate_circuit(p)?;
    let mut bra = model.entity_state(o)?;
    up.apply_gates_inverse(&mut bra);
    let sp = up.evolve(&model.entity_state(s)?);
    Ok(GradientVector {
        predicate: Vec::new(),
        subject: bra.amplitudes().iter().map(|z| z.re).collect(),
        object: sp.amplitudes().iter().map(|z| z.re).collect(),
    })
}

/// Adjoint gradient of `η_spo` inside a prepared context, scaled by `weight`
/// and handed to `sink` per owner. Returns `η`.
pub fn accumulate_triple(
    ctx: &QuantumContext,
    (s, p, o): (usize, usize, usize),
    weight_of: impl FnOnce(f64) -> f64,
    scratch: &mut Scratch,
    mut sink: impl FnMut(crate::training::Owner, &mut dyn FnMut(&mut [f64])),
) -> f64 {
    use crate::training::Owner;
    let up = ctx.predicate(p);
    let s_state = ctx.entity(s);
    let o_state = ctx.entity(o);
    let sp = up.evolve(s_state);
    let eta = o_state.real_overlap(&sp);
    let weight = weight_of(eta);
    if weight == 0.0 {
        return eta;
    }
    sink(Owner::Predicate(p), &mut |g| {
        accumulate_adjoint(up, &sp, o_state, weight, g, scratch)
    });
    let mut bra = o_state.clone();
    up.apply_gates_inverse(&mut bra);
    match ctx.kind {
        ModelKind::Fqce => {
            sink(Owner::Entity(s), &mut |g| {
                accumulate_adjoint(ctx.entity_circuit(s), s_state, &bra, weight, g, scratch)
            });
            sink(Owner::Entity(o), &mut |g| {
                accumulate_adjoint(ctx.entity_circuit(o), o_state, &sp, weight, g, scratch)
            });
        }
        _ => {
            sink(Owner::Entity(s), &mut |g| {
                for (gi, z) in g.iter_mut().zip(bra.amplitudes()) {
                    *gi += weight * z.re;
                }
            });
            sink(Owner::Entity(o), &mut |g| {
                for (gi, z) in g.iter_mut().zip(sp.amplitudes()) {
                    *gi += weight * z.re;
                }
            });
        }
    }
    eta
}

fn dedup(a: usize, b: usize) -> Vec<usize> {
    if a == b {
        vec![a]
    } else {
        vec![a.min(b), a.max(b)]
    }
}
