//! Fixed four-block circuit architecture shared by every predicate (and, with a
//! Hadamard prelude, by every fQCE entity).
//!
//! Block 0 holds one single-qubit gate per wire. Blocks 1..=3 hold one
//! controlled gate per target wire with control range 1, 2 and 3: the gate on
//! target `j` is controlled by wire `(j - range) mod n`. For six qubits this is
//! exactly `C6(G1) C1(G2) ... C5(G6)` and its two shifted companions. Within a
//! block gates execute in ascending target order.

use serde::{Deserialize, Serialize};

use crate::autodiff::{gate_derivative, Param};
use crate::error::{Error, Result};
use crate::qsim::{gate_matrix, EulerGate, Mat2, StateVector};

pub const BLOCKS: usize = 4;
pub const PARAMS_PER_GATE: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot {
    Single { target: usize },
    Controlled { control: usize, target: usize },
}

impl Slot {
    pub fn target(&self) -> usize {
        match *self {
            Slot::Single { target } | Slot::Controlled { target, .. } => target,
        }
    }

    pub fn control(&self) -> Option<usize> {
        match *self {
            Slot::Single { .. } => None,
            Slot::Controlled { control, .. } => Some(control),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub n_qubits: usize,
    pub hadamard_prelude: bool,
    pub layout: Vec<Slot>,
}

/// Control range used by controlled block `block` (1-based) on `n` wires.
///
/// Ranges run 1, 2, 3 and wrap modulo `n - 1` so the control never lands on
/// the target for small registers.
pub fn control_range(block: usize, n_qubits: usize) -> usize {
    (block - 1) % (n_qubits - 1) + 1
}

impl CircuitSpec {
    pub fn build(n_qubits: usize, hadamard_prelude: bool) -> Result<Self> {
        if n_qubits < 2 {
            return Err(Error::TooFewQubits(n_qubits));
        }
        if n_qubits > crate::qsim::MAX_QUBITS {
            return Err(Error::TooLarge(1 << n_qubits.min(63)));
        }
        let mut layout = Vec::with_capacity(BLOCKS * n_qubits);
        layout.extend((0..n_qubits).map(|target| Slot::Single { target }));
        for block in 1..BLOCKS {
            let range = control_range(block, n_qubits);
            for target in 0..n_qubits {
                let control = (target + n_qubits - range) % n_qubits;
                layout.push(Slot::Controlled { control, target });
            }
        }
        Ok(Self {
            n_qubits,
            hadamard_prelude,
            layout,
        })
    }

    pub fn num_slots(&self) -> usize {
        self.layout.len()
    }

    pub fn param_count(&self) -> usize {
        PARAMS_PER_GATE * self.num_slots()
    }

    /// Slots of block `b` (0 = single-qubit block).
    pub fn block(&self, b: usize) -> &[Slot] {
        let n = self.n_qubits;
        &self.layout[b * n..(b + 1) * n]
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    /// Control range of every controlled block, for checkpoint descriptors.
    pub fn block_ranges(&self) -> Vec<usize> {
        (1..BLOCKS).map(|b| control_range(b, self.n_qubits)).collect()
    }
}

/// Trainable gate parameters of one entity or predicate, in layout order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub owner: usize,
    pub gates: Vec<EulerGate>,
}

impl ParamStore {
    pub fn identity(owner: usize, spec: &CircuitSpec) -> Self {
        Self {
            owner,
            gates: vec![EulerGate::IDENTITY; spec.num_slots()],
        }
    }

    pub fn from_flat(owner: usize, flat: &[f64]) -> Self {
        let gates = flat
            .chunks_exact(PARAMS_PER_GATE)
            .map(|c| EulerGate::new(c[0], c[1], c[2]))
            .collect();
        Self { owner, gates }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.gates.iter().flat_map(|g| g.to_array()).collect()
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }
}

/// A circuit with its gate matrices evaluated, ready to apply many times.
#[derive(Clone, Debug)]
pub struct CompiledCircuit {
    pub(crate) n_qubits: usize,
    pub(crate) hadamard_prelude: bool,
    pub(crate) slots: Vec<Slot>,
    pub(crate) gates: Vec<EulerGate>,
    pub(crate) mats: Vec<Mat2>,
    /// `∂/∂α, ∂/∂β, ∂/∂γ` of each gate matrix.
    pub(crate) derivs: Vec<[Mat2; 3]>,
    /// Slots switched off by dropout act as identity and carry no gradient.
    pub(crate) active: Vec<bool>,
}

impl CompiledCircuit {
    pub fn new(spec: &CircuitSpec, gates: &[EulerGate]) -> Result<Self> {
        Self::with_mask(spec, gates, None)
    }

    pub fn with_mask(spec: &CircuitSpec, gates: &[EulerGate], dropped: Option<&[bool]>) -> Result<Self> {
        if gates.len() != spec.num_slots() {
            return Err(Error::DimensionMismatch {
                expected: spec.num_slots(),
                actual: gates.len(),
            });
        }
        let active: Vec<bool> = match dropped {
            Some(mask) => mask.iter().map(|d| !d).collect(),
            None => vec![true; gates.len()],
        };
        let mats = gates
            .iter()
            .zip(&active)
            .map(|(g, &on)| if on { gate_matrix(*g) } else { Mat2::IDENTITY })
            .collect();
        let derivs = gates
            .iter()
            .zip(&active)
            .map(|(g, &on)| {
                if on {
                    Param::ALL.map(|which| gate_derivative(*g, which))
                } else {
                    [Mat2::ZERO; 3]
                }
            })
            .collect();
        Ok(Self {
            n_qubits: spec.n_qubits,
            hadamard_prelude: spec.hadamard_prelude,
            slots: spec.layout.clone(),
            gates: gates.to_vec(),
            mats,
            derivs,
            active,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    /// Applies the prelude (if any) and every slot in layout order.
    pub fn apply(&self, state: &mut StateVector) {
        debug_assert_eq!(state.n_qubits(), self.n_qubits);
        if self.hadamard_prelude {
            state.apply_hadamard_all();
        }
        self.apply_gates(state);
    }

    /// Applies the gate slots only, skipping the prelude.
    pub fn apply_gates(&self, state: &mut StateVector) {
        for (slot, m) in self.slots.iter().zip(&self.mats) {
            apply_slot(state, slot, m);
        }
    }

    /// Applies `U†` of the gate slots (prelude excluded).
    pub fn apply_gates_inverse(&self, state: &mut StateVector) {
        for (slot, m) in self.slots.iter().zip(&self.mats).rev() {
            apply_slot(state, slot, &m.dagger());
        }
    }

    pub fn evolve(&self, input: &StateVector) -> StateVector {
        let mut out = input.clone();
        self.apply(&mut out);
        out
    }

    /// `U H^{⊗n} |0...0>` (prelude applied analytically when present).
    pub fn from_zero(&self) -> StateVector {
        let mut s = if self.hadamard_prelude {
            StateVector::uniform(self.n_qubits)
        } else {
            StateVector::zero(self.n_qubits)
        };
        self.apply_gates(&mut s);
        s
    }

    /// Applies the circuit (prelude included) to wires `offset..offset + n` of
    /// a larger register, with `extra` conditions added to every gate.
    pub fn apply_conditioned(&self, state: &mut StateVector, offset: usize, extra: &[(usize, bool)]) -> Result<()> {
        if self.hadamard_prelude {
            let h = Mat2::hadamard();
            for q in 0..self.n_qubits {
                state.apply_multi_controlled(extra, q + offset, &h)?;
            }
        }
        let mut conds = extra.to_vec();
        for (slot, m) in self.slots.iter().zip(&self.mats) {
            conds.truncate(extra.len());
            if let Some(c) = slot.control() {
                conds.push((c + offset, true));
            }
            state.apply_multi_controlled(&conds, slot.target() + offset, m)?;
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn apply_slot(state: &mut StateVector, slot: &Slot, m: &Mat2) {
    match *slot {
        Slot::Single { target } => state.apply_single_unchecked(target, m),
        Slot::Controlled { control, target } => state.apply_controlled_unchecked(control, target, m),
    }
}

pub fn run_circuit(spec: &CircuitSpec, params: &ParamStore, input: &StateVector) -> Result<StateVector> {
    if input.n_qubits() != spec.n_qubits {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            actual: input.dim(),
        });
    }
    let compiled = CompiledCircuit::new(spec, &params.gates)?;
    Ok(compiled.evolve(input))
}

/// `|e> = U_e H^{⊗n} |0...0>`
pub fn fqce_entity_state(spec: &CircuitSpec, params: &ParamStore) -> Result<StateVector> {
    if !spec.hadamard_prelude {
        return Err(Error::InvalidConfig(
            "entity circuits require the Hadamard prelude".into(),
        ));
    }
    Ok(CompiledCircuit::new(spec, &params.gates)?.from_zero())
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::qsim::{dense, C64};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(spec: &CircuitSpec, rng: &mut impl Rng) -> ParamStore {
        ParamStore {
            owner: 0,
            gates: (0..spec.num_slots())
                .map(|_| {
                    EulerGate::new(
                        rng.random_range(-3.2..3.2),
                        rng.random_range(-3.2..3.2),
                        rng.random_range(-3.2..3.2),
                    )
                })
                .collect(),
        }
    }

    fn max_diff(a: &[C64], b: &[C64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn six_qubit_wiring_matches_printed_blocks() {
        let spec = CircuitSpec::build(6, false).unwrap();
        // 1-based pairs (control, target) as printed for U2, U3, U4
        let printed = [
            [(6, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6)],
            [(5, 1), (6, 2), (1, 3), (2, 4), (3, 5), (4, 6)],
            [(4, 1), (5, 2), (6, 3), (1, 4), (2, 5), (3, 6)],
        ];
        for (b, row) in printed.iter().enumerate() {
            let got: Vec<(usize, usize)> = spec
                .block(b + 1)
                .iter()
                .map(|s| (s.control().unwrap() + 1, s.target() + 1))
                .collect();
            assert_eq!(got, row.to_vec());
        }
        assert!(spec.block(0).iter().enumerate().all(|(i, s)| *s == Slot::Single { target: i }));
    }

    #[test]
    fn parameter_counts() {
        let spec = CircuitSpec::build(6, false).unwrap();
        assert_eq!(spec.num_slots(), 24);
        assert_eq!(spec.param_count(), 72);
        for n in 2..10 {
            assert_eq!(CircuitSpec::build(n, true).unwrap().param_count(), 12 * n);
        }
        assert!(matches!(CircuitSpec::build(1, false), Err(Error::TooFewQubits(1))));
    }

    #[test]
    fn control_range_rule_holds_for_all_sizes() {
        for n in 2..12 {
            let spec = CircuitSpec::build(n, false).unwrap();
            for b in 1..BLOCKS {
                let range = control_range(b, n);
                for s in spec.block(b) {
                    let (c, t) = (s.control().unwrap(), s.target());
                    assert_ne!(c, t);
                    assert_eq!((c + range) % n, t);
                }
            }
        }
        // two wires: every controlled block uses the other qubit
        let spec = CircuitSpec::build(2, false).unwrap();
        for b in 1..BLOCKS {
            for s in spec.block(b) {
                assert_eq!(s.control().unwrap(), 1 - s.target());
            }
        }
    }

    #[test]
    fn zero_params_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let spec = CircuitSpec::build(6, false).unwrap();
        let params = ParamStore::identity(0, &spec);
        let mut amps: Vec<C64> = (0..64).map(|_| C64::new(rng.random(), rng.random())).collect();
        let norm = amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        amps.iter_mut().for_each(|z| *z /= norm);
        let input = StateVector::from_amplitudes(amps).unwrap();
        let out = run_circuit(&spec, &params, &input).unwrap();
        assert!(max_diff(out.amplitudes(), input.amplitudes()) < 1e-15);

        let spec = CircuitSpec::build(6, true).unwrap();
        let e = fqce_entity_state(&spec, &ParamStore::identity(0, &spec)).unwrap();
        assert!(e.amplitudes().iter().all(|z| (z - C64::new(0.125, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn evolution_matches_dense_operator() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [2, 3, 4, 6] {
            for prelude in [false, true] {
                let spec = CircuitSpec::build(n, prelude).unwrap();
                let params = random_params(&spec, &mut rng);
                let u = oracle::dense_operator(&spec, &params.gates);
                let input = StateVector::basis(n, rng.random_range(0..1 << n));
                let out = run_circuit(&spec, &params, &input).unwrap();
                let expect = dense::matvec(&u, input.amplitudes());
                assert!(max_diff(out.amplitudes(), &expect) < 1e-10);
                let uu = dense::matmul(&dense::dagger(&u), &u);
                assert!(dense::max_diff_from_identity(&uu) < 1e-10);
            }
        }
    }

    #[test]
    fn inverse_undoes_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let spec = CircuitSpec::build(5, false).unwrap();
        let params = random_params(&spec, &mut rng);
        let c = CompiledCircuit::new(&spec, &params.gates).unwrap();
        let s = StateVector::uniform(5);
        let mut t = c.evolve(&s);
        c.apply_gates_inverse(&mut t);
        assert!(max_diff(s.amplitudes(), t.amplitudes()) < 1e-12);
    }

    #[test]
    fn entity_states_are_normalized_and_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let spec = CircuitSpec::build(6, true).unwrap();
        let a = fqce_entity_state(&spec, &random_params(&spec, &mut rng)).unwrap();
        let b = fqce_entity_state(&spec, &random_params(&spec, &mut rng)).unwrap();
        assert!((a.norm_sqr() - 1.0).abs() < 1e-10);
        assert!((b.norm_sqr() - 1.0).abs() < 1e-10);
        assert!(a.inner_product(&b).unwrap().norm() < 1.0 - 1e-6);

        let c = CompiledCircuit::new(&spec, &random_params(&spec, &mut rng).gates).unwrap();
        assert!(max_diff(c.from_zero().amplitudes(), c.evolve(&StateVector::zero(6)).amplitudes()) < 1e-14);
    }

    #[test]
    fn dropped_slots_act_as_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let spec = CircuitSpec::build(3, false).unwrap();
        let params = random_params(&spec, &mut rng);
        let all_dropped = vec![true; spec.num_slots()];
        let c = CompiledCircuit::with_mask(&spec, &params.gates, Some(&all_dropped)).unwrap();
        let s = StateVector::basis(3, 5);
        assert_eq!(c.evolve(&s), s);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let spec = CircuitSpec::build(3, false).unwrap();
        let params = ParamStore::identity(0, &spec);
        assert!(run_circuit(&spec, &params, &StateVector::zero(4)).is_err());
        assert!(fqce_entity_state(&spec, &params).is_err());
    }
}
