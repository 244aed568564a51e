//! Binary tree of squared partial norms used to load a real vector as the
//! amplitudes of a `⌈log₂R⌉`-qubit state.
//!
//! Level 0 is the root `‖x‖²`, level `depth` holds the squared leaves `x_k²`,
//! and a parallel array holds `sgn(x_k)`. Loading walks root to leaf: at level
//! `d` one rotation per node, conditioned on the `d` ancestor bits, splits the
//! mass between the two children; a final conditional phase flip per negative
//! leaf restores signs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qsim::{Mat2, StateVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeTree {
    depth: usize,
    levels: Vec<Vec<f64>>,
    signs: Vec<f64>,
}

/// One step of the loading procedure on a register of `depth` qubits.
#[derive(Clone, Debug, PartialEq)]
pub enum LoadOp {
    /// `Ry(theta)` on `target` when every ancestor bit matches.
    Rotation {
        conditions: Vec<(usize, bool)>,
        target: usize,
        theta: f64,
    },
    /// Sign flip of the single basis state selected by the conditions.
    SignFlip { conditions: Vec<(usize, bool)> },
}

fn prefix_conditions(prefix: usize, bits: usize) -> Vec<(usize, bool)> {
    (0..bits)
        .map(|q| (q, (prefix >> (bits - 1 - q)) & 1 == 1))
        .collect()
}

impl AmplitudeTree {
    pub fn build(x: &[f64]) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::Empty("amplitude vector"));
        }
        if x.iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroVector);
        }
        let width = x.len().next_power_of_two().max(2);
        let depth = width.trailing_zeros() as usize;
        let mut leaves = vec![0.0; width];
        let mut signs = vec![1.0; width];
        for (k, &v) in x.iter().enumerate() {
            leaves[k] = v * v;
            if v < 0.0 {
                signs[k] = -1.0;
            }
        }
        let mut levels = vec![leaves];
        while levels[0].len() > 1 {
            let parent: Vec<f64> = levels[0].chunks_exact(2).map(|c| c[0] + c[1]).collect();
            levels.insert(0, parent);
        }
        Ok(Self { depth, levels, signs })
    }

    /// Every level from the root down, then the signs.
    pub fn to_flat(&self) -> Vec<f64> {
        self.levels.iter().flatten().chain(&self.signs).copied().collect()
    }

    pub fn from_flat(depth: usize, flat: &[f64]) -> Result<Self> {
        let width = 1usize << depth;
        let expected = 3 * width - 1;
        if depth == 0 || flat.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: flat.len(),
            });
        }
        let mut levels = Vec::with_capacity(depth + 1);
        let mut at = 0;
        for d in 0..=depth {
            levels.push(flat[at..at + (1 << d)].to_vec());
            at += 1 << d;
        }
        Ok(Self {
            depth,
            levels,
            signs: flat[at..].to_vec(),
        })
    }

    /// Number of qubits the loaded state lives on.
    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Leaf count after zero padding.
    pub fn width(&self) -> usize {
        self.signs.len()
    }

    pub fn root(&self) -> f64 {
        self.levels[0][0]
    }

    pub fn level(&self, d: usize) -> &[f64] {
        &self.levels[d]
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    /// `atan2(√right, √left)` for the internal node `index` at `level`.
    pub fn rotation_angle(&self, level: usize, index: usize) -> Result<f64> {
        if level >= self.depth || index >= self.levels[level].len() {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.levels.get(level).map_or(0, Vec::len),
            });
        }
        if self.levels[level][index] == 0.0 {
            return Err(Error::ZeroNode { level, index });
        }
        Ok(self.angle_or_zero(level, index))
    }

    fn angle_or_zero(&self, level: usize, index: usize) -> f64 {
        let children = &self.levels[level + 1];
        let (left, right) = (children[2 * index], children[2 * index + 1]);
        if left == 0.0 && right == 0.0 {
            0.0
        } else {
            right.sqrt().atan2(left.sqrt())
        }
    }

    /// Gate sequence of the loading procedure, level by level.
    pub fn loading_ops(&self) -> Vec<LoadOp> {
        let mut ops = Vec::with_capacity(2 * self.width());
        for level in 0..self.depth {
            for index in 0..self.levels[level].len() {
                ops.push(LoadOp::Rotation {
                    conditions: prefix_conditions(index, level),
                    target: level,
                    theta: self.angle_or_zero(level, index),
                });
            }
        }
        for (k, &s) in self.signs.iter().enumerate() {
            if s < 0.0 {
                ops.push(LoadOp::SignFlip {
                    conditions: prefix_conditions(k, self.depth),
                });
            }
        }
        ops
    }

    /// Simulates the loading procedure gate by gate from `|0...0>`.
    pub fn prepare_state(&self) -> StateVector {
        let mut state = StateVector::zero(self.depth);
        apply_load_ops(&mut state, &self.loading_ops(), 0, &[])
            .expect("loading ops are built for this register");
        state
    }

    /// Sets `x_k = value` and refreshes the root-to-leaf path. Returns the
    /// number of nodes rewritten.
    pub fn update_entry(&mut self, k: usize, value: f64) -> Result<usize> {
        if k >= self.width() {
            return Err(Error::IndexOutOfRange {
                index: k,
                len: self.width(),
            });
        }
        self.signs[k] = if value < 0.0 { -1.0 } else { 1.0 };
        let mut idx = k;
        self.levels[self.depth][idx] = value * value;
        let mut touched = 1;
        for level in (0..self.depth).rev() {
            idx /= 2;
            let children = &self.levels[level + 1];
            let sum = children[2 * idx] + children[2 * idx + 1];
            self.levels[level][idx] = sum;
            touched += 1;
        }
        Ok(touched)
    }
}

/// Applies loading ops with every wire shifted by `offset` and the extra
/// `conditions` added to each gate (used to control the whole loading on an
/// ancilla).
pub fn apply_load_ops(
    state: &mut StateVector,
    ops: &[LoadOp],
    offset: usize,
    extra: &[(usize, bool)],
) -> Result<()> {
    let shift = |conds: &[(usize, bool)]| -> Vec<(usize, bool)> {
        conds
            .iter()
            .map(|&(q, b)| (q + offset, b))
            .chain(extra.iter().copied())
            .collect()
    };
    for op in ops {
        match op {
            LoadOp::Rotation {
                conditions,
                target,
                theta,
            } => state.apply_multi_controlled(&shift(conditions), target + offset, &Mat2::ry(*theta))?,
            LoadOp::SignFlip { conditions } => state.apply_conditional_phase_flip(&shift(conditions))?,
        }
    }
    Ok(())
}
