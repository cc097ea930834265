//! Finite sums `sum_k C_k exp(-H_k / eps)` and matrices of them.

use crate::scalar::Scalar;
use nalgebra::DMatrix;
use num_complex::Complex64;
use num_rational::Rational64;
use num_traits::Zero;
use std::fmt::Debug;
use std::ops::{Add, Mul};

/// Coefficient ring of an [`ExpSum`].
pub trait Coefficient: Clone + Debug + Zero + Add<Output = Self> + Mul<Output = Self> {
    /// Whether `self`, obtained by summing terms of total size `gross`, is zero.
    fn negligible(&self, gross: f64) -> bool;
    fn magnitude(&self) -> f64;
    fn real_part(&self) -> f64;
    fn times_real(&self, factor: f64) -> Self;
}

impl Coefficient for f64 {
    fn negligible(&self, gross: f64) -> bool {
        self.abs() <= 1e-10 * gross
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
    fn real_part(&self) -> f64 {
        *self
    }
    fn times_real(&self, factor: f64) -> Self {
        self * factor
    }
}

impl Coefficient for Complex64 {
    fn negligible(&self, gross: f64) -> bool {
        self.norm() <= 1e-10 * gross
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
    fn real_part(&self) -> f64 {
        self.re
    }
    fn times_real(&self, factor: f64) -> Self {
        self * factor
    }
}

impl Coefficient for Rational64 {
    fn negligible(&self, _gross: f64) -> bool {
        self.is_zero()
    }
    fn magnitude(&self) -> f64 {
        self.to_f64_lossy().abs()
    }
    fn real_part(&self) -> f64 {
        self.to_f64_lossy()
    }
    fn times_real(&self, factor: f64) -> Self {
        self.scaled(factor)
    }
}

/// Terms sorted by increasing exponent; exponents within the tie tolerance
/// are merged and cancelled terms dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpSum<S, C = f64> {
    terms: Vec<(C, S)>,
}

impl<S: Scalar, C: Coefficient> Default for ExpSum<S, C> {
    fn default() -> Self {
        ExpSum { terms: Vec::new() }
    }
}

impl<S: Scalar, C: Coefficient> ExpSum<S, C> {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn term(coef: C, exponent: S) -> Self {
        let mut s = Self::zero();
        s.push(coef, exponent);
        s
    }

    pub fn from_terms(terms: impl IntoIterator<Item = (C, S)>) -> Self {
        let mut raw: Vec<(C, S)> = terms.into_iter().collect();
        raw.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("ordered exponents"));
        let mut out: Vec<(C, S, f64)> = Vec::new();
        for (c, h) in raw {
            let size = c.magnitude();
            match out.last_mut() {
                Some(last) if last.1.ties(&h) => {
                    last.0 = last.0.clone() + c;
                    last.2 += size;
                }
                _ => out.push((c, h, size)),
            }
        }
        ExpSum {
            terms: out
                .into_iter()
                .filter(|(c, _, gross)| !c.negligible(*gross))
                .map(|(c, h, _)| (c, h))
                .collect(),
        }
    }

    pub fn push(&mut self, coef: C, exponent: S) {
        let mut terms = std::mem::take(&mut self.terms);
        terms.push((coef, exponent));
        *self = Self::from_terms(terms);
    }

    pub fn terms(&self) -> &[(C, S)] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Term with the smallest exponent.
    pub fn leading(&self) -> Option<&(C, S)> {
        self.terms.first()
    }

    pub fn scale(&self, factor: C) -> Self {
        Self::from_terms(self.terms.iter().map(|(c, h)| (c.clone() * factor.clone(), h.clone())))
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::from_terms(self.terms.iter().chain(other.terms.iter()).cloned())
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Vec::with_capacity(self.terms.len() * other.terms.len());
        for (c1, h1) in &self.terms {
            for (c2, h2) in &other.terms {
                out.push((c1.clone() * c2.clone(), h1.clone() + h2.clone()));
            }
        }
        Self::from_terms(out)
    }

    /// Sum at `eps`.
    pub fn value(&self, eps: f64) -> C {
        self.terms.iter().fold(C::zero(), |acc, (c, h)| {
            acc + c.times_real((-h.to_f64_lossy() / eps).exp())
        })
    }

    /// Real part of the sum at `eps`.
    pub fn evaluate(&self, eps: f64) -> f64 {
        self.terms
            .iter()
            .map(|(c, h)| c.real_part() * (-h.to_f64_lossy() / eps).exp())
            .sum()
    }
}

/// Dense matrix whose entries are exponential sums.
#[derive(Clone, Debug, PartialEq)]
pub struct AsymptoticMatrix<S, C = f64> {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<ExpSum<S, C>>,
}

impl<S: Scalar, C: Coefficient> AsymptoticMatrix<S, C> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        AsymptoticMatrix {
            rows,
            cols,
            entries: vec![ExpSum::zero(); rows * cols],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> &ExpSum<S, C> {
        &self.entries[i * self.cols + j]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut ExpSum<S, C> {
        &mut self.entries[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: ExpSum<S, C>) {
        self.entries[i * self.cols + j] = v;
    }

    pub fn evaluate(&self, eps: f64) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).evaluate(eps))
    }

    pub fn value(&self, eps: f64) -> DMatrix<C>
    where
        C: nalgebra::Scalar,
    {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).value(eps))
    }

    /// Smallest exponent over the given index block, with the coefficient
    /// matrix of the terms at that exponent.
    pub fn block_leading(&self, rows: &[usize], cols: &[usize]) -> Option<(S, DMatrix<C>)>
    where
        C: nalgebra::Scalar,
    {
        let mut best: Option<S> = None;
        for &i in rows {
            for &j in cols {
                if let Some((_, h)) = self.get(i, j).leading() {
                    if best.as_ref().is_none_or(|b| h.below(b)) {
                        best = Some(h.clone());
                    }
                }
            }
        }
        let h = best?;
        let m = DMatrix::from_fn(rows.len(), cols.len(), |a, b| {
            self.get(rows[a], cols[b])
                .terms()
                .iter()
                .find(|(_, e)| e.ties(&h))
                .map(|(c, _)| c.clone())
                .unwrap_or_else(C::zero)
        });
        Some((h, m))
    }
}

/// How an eigenvalue estimate was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mechanism {
    /// Exactly zero eigenvalue of the generator.
    Zero,
    /// Exit of one level of a metastable hierarchy.
    Hierarchy,
    /// Eigenvalue of a leading diagonal block.
    DiagonalBlock,
    /// Eigenvalue of a leading Schur complement over a two-cycle.
    CycleSchur,
    /// Leading form unavailable; value computed numerically at fixed epsilon.
    Numeric,
}

impl std::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Mechanism::Zero => "zero",
            Mechanism::Hierarchy => "hierarchy",
            Mechanism::DiagonalBlock => "diagonal-block",
            Mechanism::CycleSchur => "cycle-schur",
            Mechanism::Numeric => "numeric",
        };
        f.write_str(s)
    }
}

/// Leading-order eigenvalue `-C exp(-H / eps)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenEstimate<S> {
    pub prefactor: S,
    /// `None` for the exact zero eigenvalue.
    pub exponent: Option<S>,
    pub multiplicity: usize,
    /// Irrep label; `"asym"` when no symmetry is used.
    pub irrep: String,
    /// State or orbit the estimate is attached to.
    pub site: Option<usize>,
    pub mechanism: Mechanism,
    pub theta: Option<S>,
}

impl<S: Scalar> EigenEstimate<S> {
    pub fn zero(irrep: &str, site: Option<usize>) -> Self {
        EigenEstimate {
            prefactor: S::zero(),
            exponent: None,
            multiplicity: 1,
            irrep: irrep.to_string(),
            site,
            mechanism: Mechanism::Zero,
            theta: None,
        }
    }

    pub fn value(&self, eps: f64) -> f64 {
        match &self.exponent {
            None => 0.0,
            Some(h) => -self.prefactor.to_f64_lossy() * (-h.to_f64_lossy() / eps).exp(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.exponent.is_none()
    }
}
