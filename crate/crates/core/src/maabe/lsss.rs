//! Linear secret sharing programs compiled from access policies.
//!
//! Each leaf of the policy becomes one row of the share-generating matrix.
//! The root starts with the vector `(1)`. A threshold gate `k of (c₁..cₘ)`
//! over a node vector `v` allocates `k − 1` fresh columns and gives child `j`
//! the vector `v ‖ (j, j², …, j^{k−1})` in those columns. Any `k` children
//! can cancel the fresh columns (their Vandermonde block is invertible) and
//! recover `v`; fewer cannot. `AND` and `OR` are the `k = m` and `k = 1`
//! cases, so `OR` simply copies `v` to every child.
//!
//! A set of rows reconstructs the secret iff the target `(1, 0, …, 0)` lies
//! in their span.

use std::collections::BTreeSet;

use bls12_381::Scalar;
use rand::{CryptoRng, RngCore};

use super::policy::{AccessPolicy, PolicyNode};
use crate::attribute::AttributeId;
use crate::pairing::{random_nonzero_scalar, PairingError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LsssProgram {
    matrix: Vec<Vec<Scalar>>,
    row_labels: Vec<AttributeId>,
    cols: usize,
}

impl LsssProgram {
    pub fn from_policy(policy: &AccessPolicy) -> Self {
        let mut rows = Vec::new();
        let mut next_col = 1;
        compile(policy.root(), vec![Scalar::one()], &mut next_col, &mut rows);
        let cols = next_col;
        let (matrix, row_labels) = rows
            .into_iter()
            .map(|(mut v, label)| {
                v.resize(cols, Scalar::zero());
                (v, label)
            })
            .unzip();
        Self { matrix, row_labels, cols }
    }

    pub fn rows(&self) -> usize {
        self.matrix.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn matrix(&self) -> &[Vec<Scalar>] {
        &self.matrix
    }

    pub fn row_labels(&self) -> &[AttributeId] {
        &self.row_labels
    }

    /// Indices of rows labeled by an attribute in `attrs`.
    pub fn rows_for(&self, attrs: &BTreeSet<AttributeId>) -> Vec<usize> {
        (0..self.rows()).filter(|&i| attrs.contains(&self.row_labels[i])).collect()
    }

    /// Shares `λᵢ = Mᵢ · (secret, r₂, …, r_c)` with fresh random `rⱼ`.
    pub fn share<R: RngCore + CryptoRng + ?Sized>(
        &self,
        secret: Scalar,
        rng: &mut R,
    ) -> Result<Vec<Scalar>, PairingError> {
        let mut rho = Vec::with_capacity(self.cols);
        rho.push(secret);
        for _ in 1..self.cols {
            rho.push(random_nonzero_scalar(rng)?);
        }
        Ok(self.matrix.iter().map(|row| row.iter().zip(&rho).fold(Scalar::zero(), |acc, (m, r)| acc + m * r)).collect())
    }

    /// Coefficients `ωᵢ` (aligned with `rows`) such that
    /// `Σ ωᵢ Mᵢ = (1, 0, …, 0)`, or `None` when the rows do not span the target.
    pub fn reconstruction_coefficients(&self, rows: &[usize]) -> Option<Vec<Scalar>> {
        let unknowns = rows.len();
        // one equation per column; augmented with the target in the last slot
        let mut aug: Vec<Vec<Scalar>> = (0..self.cols)
            .map(|c| {
                let mut eq: Vec<Scalar> = rows.iter().map(|&r| self.matrix[r][c]).collect();
                eq.push(if c == 0 { Scalar::one() } else { Scalar::zero() });
                eq
            })
            .collect();

        let mut pivots = Vec::new();
        let mut pivot_row = 0;
        for col in 0..unknowns {
            let Some(found) = (pivot_row..aug.len()).find(|&r| aug[r][col] != Scalar::zero()) else {
                continue;
            };
            aug.swap(pivot_row, found);
            let inv: Scalar = Option::from(aug[pivot_row][col].invert()).expect("non-zero pivot");
            for x in aug[pivot_row].iter_mut() {
                *x *= inv;
            }
            let pivot = aug[pivot_row].clone();
            for (r, row) in aug.iter_mut().enumerate() {
                if r != pivot_row && row[col] != Scalar::zero() {
                    let factor = row[col];
                    for (x, p) in row.iter_mut().zip(&pivot) {
                        *x -= factor * p;
                    }
                }
            }
            pivots.push(col);
            pivot_row += 1;
            if pivot_row == aug.len() {
                break;
            }
        }
        // inconsistent: 0 = non-zero
        if aug[pivot_row..].iter().any(|eq| eq[unknowns] != Scalar::zero()) {
            return None;
        }
        let mut omega = vec![Scalar::zero(); unknowns];
        for (r, &col) in pivots.iter().enumerate() {
            omega[col] = aug[r][unknowns];
        }
        Some(omega)
    }

    pub fn accepts(&self, attrs: &BTreeSet<AttributeId>) -> bool {
        self.reconstruction_coefficients(&self.rows_for(attrs)).is_some()
    }
}

pub fn policy_to_lsss(policy: &AccessPolicy) -> LsssProgram {
    LsssProgram::from_policy(policy)
}

fn compile(node: &PolicyNode, vector: Vec<Scalar>, next_col: &mut usize, rows: &mut Vec<(Vec<Scalar>, AttributeId)>) {
    match node {
        PolicyNode::Leaf(id) => rows.push((vector, id.clone())),
        PolicyNode::Gate { threshold, children } => {
            let base = *next_col;
            let fresh = threshold - 1;
            *next_col += fresh;
            for (j, child) in children.iter().enumerate() {
                let x = Scalar::from(j as u64 + 1);
                let mut v = vector.clone();
                v.resize(base + fresh, Scalar::zero());
                let mut power = x;
                for e in 0..fresh {
                    v[base + e] = power;
                    power *= x;
                }
                compile(child, v, next_col, rows);
            }
        }
    }
}
