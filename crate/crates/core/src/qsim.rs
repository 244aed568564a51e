//! Dense statevector simulation.
//!
//! Qubits are numbered from 0 and qubit 0 is the most significant bit of the
//! basis index, so `|q0 q1 ... q(n-1)>` reads left to right like a ket. All gate
//! applications update amplitude pairs in place; no `2^n x 2^n` matrix is ever
//! materialized.

use std::ops::Mul;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Largest register the simulator accepts.
pub const MAX_QUBITS: usize = 24;

/// Euler-angle parameterization of an SU(2) gate (global phase dropped).
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EulerGate {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl EulerGate {
    pub const IDENTITY: EulerGate = EulerGate {
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
    };

    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self { alpha, beta, gamma }
    }

    pub fn from_array(p: [f64; 3]) -> Self {
        Self::new(p[0], p[1], p[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.alpha, self.beta, self.gamma]
    }

    /// `[[e^{iβ}cosα, e^{iγ}sinα], [-e^{-iγ}sinα, e^{-iβ}cosα]]`
    pub fn matrix(&self) -> Mat2 {
        gate_matrix(*self)
    }
}

/// Row-major 2x2 complex matrix. Carries both gates and (non-unitary) gate
/// derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat2(pub [C64; 4]);

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([ONE, ZERO, ZERO, ONE]);
    pub const ZERO: Mat2 = Mat2([ZERO; 4]);
    pub const PAULI_X: Mat2 = Mat2([ZERO, ONE, ONE, ZERO]);

    pub fn new(a: C64, b: C64, c: C64, d: C64) -> Self {
        Mat2([a, b, c, d])
    }

    pub fn hadamard() -> Self {
        let h = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        Mat2([h, h, h, -h])
    }

    /// Real rotation `[[cos θ, -sin θ], [sin θ, cos θ]]` taking `|0>` to
    /// `cos θ |0> + sin θ |1>`.
    pub fn ry(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Mat2([C64::new(c, 0.0), C64::new(-s, 0.0), C64::new(s, 0.0), C64::new(c, 0.0)])
    }

    pub fn entry(&self, row: usize, col: usize) -> C64 {
        self.0[2 * row + col]
    }

    pub fn dagger(&self) -> Self {
        let [a, b, c, d] = self.0;
        Mat2([a.conj(), c.conj(), b.conj(), d.conj()])
    }

    pub fn scale(&self, k: f64) -> Self {
        Mat2(self.0.map(|z| z * k))
    }

    pub fn add(&self, other: &Mat2) -> Self {
        let mut out = self.0;
        for (o, z) in out.iter_mut().zip(other.0) {
            *o += z;
        }
        Mat2(out)
    }

    pub fn max_abs_diff(&self, other: &Mat2) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl Mul for Mat2 {
    type Output = Mat2;

    fn mul(self, rhs: Mat2) -> Mat2 {
        let [a, b, c, d] = self.0;
        let [e, f, g, h] = rhs.0;
        Mat2([a * e + b * g, a * f + b * h, c * e + d * g, c * f + d * h])
    }
}

pub fn gate_matrix(g: EulerGate) -> Mat2 {
    let (sa, ca) = g.alpha.sin_cos();
    let eb = C64::from_polar(1.0, g.beta);
    let eg = C64::from_polar(1.0, g.gamma);
    Mat2([eb * ca, eg * sa, -eg.conj() * sa, eb.conj() * ca])
}

/// Dense complex amplitudes of an n-qubit pure state.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<C64>,
}

impl StateVector {
    /// `|0...0>`
    pub fn zero(n_qubits: usize) -> Self {
        Self::basis(n_qubits, 0)
    }

    pub fn basis(n_qubits: usize, index: usize) -> Self {
        assert!(n_qubits >= 1 && n_qubits <= MAX_QUBITS, "unsupported register size {n_qubits}");
        let mut amps = vec![ZERO; 1 << n_qubits];
        amps[index] = ONE;
        Self { n_qubits, amps }
    }

    /// Equal superposition over all basis states, i.e. `H^{⊗n}|0...0>`.
    pub fn uniform(n_qubits: usize) -> Self {
        let dim = 1usize << n_qubits;
        let a = C64::new((dim as f64).sqrt().recip(), 0.0);
        Self {
            n_qubits,
            amps: vec![a; dim],
        }
    }

    pub fn from_amplitudes(amps: Vec<C64>) -> Result<Self> {
        let len = amps.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(len));
        }
        let n_qubits = len.trailing_zeros() as usize;
        if n_qubits > MAX_QUBITS {
            return Err(Error::TooLarge(len));
        }
        Ok(Self { n_qubits, amps })
    }

    pub fn from_real(values: &[f64]) -> Result<Self> {
        Self::from_amplitudes(values.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Copies `other` into `self` without reallocating.
    pub fn copy_from(&mut self, other: &StateVector) {
        debug_assert_eq!(self.n_qubits, other.n_qubits);
        self.amps.copy_from_slice(&other.amps);
    }

    fn check_qubit(&self, q: usize) -> Result<()> {
        if q >= self.n_qubits {
            Err(Error::QubitOutOfRange {
                index: q,
                n_qubits: self.n_qubits,
            })
        } else {
            Ok(())
        }
    }

    /// Bit stride of qubit `q` inside the basis index.
    #[inline]
    fn stride(&self, q: usize) -> usize {
        1 << (self.n_qubits - 1 - q)
    }

    pub fn apply_single(&mut self, target: usize, m: &Mat2) -> Result<()> {
        self.check_qubit(target)?;
        self.apply_single_unchecked(target, m);
        Ok(())
    }

    #[inline]
    pub(crate) fn apply_single_unchecked(&mut self, target: usize, m: &Mat2) {
        let stride = self.stride(target);
        let [a, b, c, d] = m.0;
        for chunk in self.amps.chunks_exact_mut(2 * stride) {
            let (lo, hi) = chunk.split_at_mut(stride);
            for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                let (u, v) = (*x, *y);
                *x = a * u + b * v;
                *y = c * u + d * v;
            }
        }
    }

    /// Applies `m` to `target` on the subspace where `control` is `|1>`.
    pub fn apply_controlled(&mut self, control: usize, target: usize, m: &Mat2) -> Result<()> {
        self.check_qubit(control)?;
        self.check_qubit(target)?;
        if control == target {
            return Err(Error::QubitCollision(control));
        }
        self.apply_controlled_unchecked(control, target, m);
        Ok(())
    }

    #[inline]
    pub(crate) fn apply_controlled_unchecked(&mut self, control: usize, target: usize, m: &Mat2) {
        let ts = self.stride(target);
        let cs = self.stride(control);
        let [a, b, c, d] = m.0;
        if cs > ts {
            // control is more significant: the upper half of each control block
            for block in self.amps.chunks_exact_mut(2 * cs) {
                let upper = &mut block[cs..];
                for chunk in upper.chunks_exact_mut(2 * ts) {
                    let (lo, hi) = chunk.split_at_mut(ts);
                    for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                        let (u, v) = (*x, *y);
                        *x = a * u + b * v;
                        *y = c * u + d * v;
                    }
                }
            }
        } else {
            for chunk in self.amps.chunks_exact_mut(2 * ts) {
                let (lo, hi) = chunk.split_at_mut(ts);
                for (lo_c, hi_c) in lo.chunks_exact_mut(2 * cs).zip(hi.chunks_exact_mut(2 * cs)) {
                    for (x, y) in lo_c[cs..].iter_mut().zip(hi_c[cs..].iter_mut()) {
                        let (u, v) = (*x, *y);
                        *x = a * u + b * v;
                        *y = c * u + d * v;
                    }
                }
            }
        }
    }

    /// Applies `m` to `target` on the subspace where every `(qubit, value)`
    /// condition holds. Only the matching amplitude pairs are visited.
    pub fn apply_multi_controlled(
        &mut self,
        conditions: &[(usize, bool)],
        target: usize,
        m: &Mat2,
    ) -> Result<()> {
        self.check_qubit(target)?;
        let (fixed_mask, fixed_val) = self.condition_mask(conditions, Some(target))?;
        let ts = self.stride(target);
        let free = (self.dim() - 1) & !fixed_mask & !ts;
        let [a, b, c, d] = m.0;
        for_each_submask(free, |sub| {
            let i = fixed_val | sub;
            let j = i | ts;
            let (u, v) = (self.amps[i], self.amps[j]);
            self.amps[i] = a * u + b * v;
            self.amps[j] = c * u + d * v;
        });
        Ok(())
    }

    /// Multiplies every amplitude matching the conditions by -1.
    pub fn apply_conditional_phase_flip(&mut self, conditions: &[(usize, bool)]) -> Result<()> {
        let (fixed_mask, fixed_val) = self.condition_mask(conditions, None)?;
        let free = (self.dim() - 1) & !fixed_mask;
        for_each_submask(free, |sub| {
            let i = fixed_val | sub;
            self.amps[i] = -self.amps[i];
        });
        Ok(())
    }

    fn condition_mask(
        &self,
        conditions: &[(usize, bool)],
        target: Option<usize>,
    ) -> Result<(usize, usize)> {
        let mut mask = 0;
        let mut val = 0;
        for &(q, bit) in conditions {
            self.check_qubit(q)?;
            if Some(q) == target {
                return Err(Error::QubitCollision(q));
            }
            let s = self.stride(q);
            mask |= s;
            if bit {
                val |= s;
            }
        }
        Ok((mask, val))
    }

    pub fn apply_hadamard(&mut self, target: usize) -> Result<()> {
        self.apply_single(target, &Mat2::hadamard())
    }

    pub fn apply_hadamard_all(&mut self) {
        let h = Mat2::hadamard();
        for q in 0..self.n_qubits {
            self.apply_single_unchecked(q, &h);
        }
    }

    /// `<self|other> = Σ conj(self_k) other_k`
    pub fn inner_product(&self, other: &StateVector) -> Result<C64> {
        if self.n_qubits != other.n_qubits {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        Ok(inner(&self.amps, &other.amps))
    }

    /// `Re <self|other>`, the quantity every value function reduces to.
    #[inline]
    pub fn real_overlap(&self, other: &StateVector) -> f64 {
        debug_assert_eq!(self.n_qubits, other.n_qubits);
        self.amps
            .iter()
            .zip(other.amps.iter())
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }

    /// Local 2x2 overlap between `bra` and `self` on the target wire: entry
    /// `(j, k)` is `Σ conj(bra_j) self_k` over the amplitude pairs that differ
    /// only in the target bit (restricted to control `|1>` when given). For any
    /// operator `D` on that wire, `<bra| D_lifted |self> = Σ_jk D_jk M_jk`.
    pub(crate) fn pair_overlap(&self, bra: &StateVector, target: usize, control: Option<usize>) -> [C64; 4] {
        let ts = self.stride(target);
        let mut acc = [ZERO; 4];
        let mut visit = |i: usize| {
            let j = i | ts;
            let (b0, b1) = (bra.amps[i].conj(), bra.amps[j].conj());
            let (k0, k1) = (self.amps[i], self.amps[j]);
            acc[0] += b0 * k0;
            acc[1] += b0 * k1;
            acc[2] += b1 * k0;
            acc[3] += b1 * k1;
        };
        match control {
            None => {
                for base in (0..self.dim()).step_by(2 * ts) {
                    for i in base..base + ts {
                        visit(i);
                    }
                }
            }
            Some(c) => {
                let cs = self.stride(c);
                let free = (self.dim() - 1) & !cs & !ts;
                for_each_submask(free, |sub| visit(cs | sub));
            }
        }
        acc
    }
}

#[inline]
fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// Calls `f` on every submask of `mask` in increasing order.
#[inline]
pub(crate) fn for_each_submask(mask: usize, mut f: impl FnMut(usize)) {
    let mut sub = 0usize;
    loop {
        f(sub);
        if sub == mask {
            break;
        }
        sub = (sub.wrapping_sub(mask)) & mask;
    }
}
