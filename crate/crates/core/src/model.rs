//! Process specification and generator assembly.
//!
//! A process lives on finitely many states with potential `V_i`, mass `m_i`
//! and undirected edges carrying a coupling `c_e` and a saddle height `V_e`.
//! The jump rate along an edge is `(c_e / m_i) exp(-(V_e - V_i) / eps)`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use nalgebra::DMatrix;
use std::collections::{BTreeSet, VecDeque};

#[derive(Clone, Debug, PartialEq)]
pub struct Edge<S> {
    pub a: usize,
    pub b: usize,
    pub coupling: S,
    pub saddle: S,
}

impl<S: Scalar> Edge<S> {
    pub fn new(a: usize, b: usize, coupling: S, saddle: S) -> Self {
        Edge { a, b, coupling, saddle }
    }

    pub fn other(&self, state: usize) -> usize {
        if state == self.a {
            self.b
        } else {
            self.a
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProcessSpec<S> {
    pub labels: Vec<String>,
    pub potential: Vec<S>,
    pub mass: Vec<S>,
    pub edges: Vec<Edge<S>>,
    pub epsilon: S,
}

/// One violated structural requirement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Diagnostic {
    LengthMismatch {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    EdgeOutOfRange {
        edge: usize,
    },
    SelfLoop {
        edge: usize,
    },
    DuplicateEdge {
        a: usize,
        b: usize,
    },
    SaddleBelowEndpoint {
        a: usize,
        b: usize,
    },
    NonPositiveCoupling {
        edge: usize,
    },
    NonPositiveMass {
        state: usize,
    },
    NonPositiveEpsilon,
    Disconnected {
        components: usize,
    },
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Diagnostic::LengthMismatch { field, expected, found } => {
                write!(f, "{field} has {found} entries, expected {expected}")
            }
            Diagnostic::EdgeOutOfRange { edge } => write!(f, "edge {edge} references an unknown state"),
            Diagnostic::SelfLoop { edge } => write!(f, "edge {edge} is a self-loop"),
            Diagnostic::DuplicateEdge { a, b } => write!(f, "duplicate edge {a}-{b}"),
            Diagnostic::SaddleBelowEndpoint { a, b } => {
                write!(f, "edge {a}-{b} has saddle below an endpoint")
            }
            Diagnostic::NonPositiveCoupling { edge } => write!(f, "edge {edge} has non-positive coupling"),
            Diagnostic::NonPositiveMass { state } => write!(f, "state {state} has non-positive mass"),
            Diagnostic::NonPositiveEpsilon => write!(f, "epsilon must be positive"),
            Diagnostic::Disconnected { components } => {
                write!(f, "graph has {components} connected components")
            }
        }
    }
}

impl<S: Scalar> ProcessSpec<S> {
    /// Builds a spec with unit masses.
    pub fn with_unit_mass(potential: Vec<S>, edges: Vec<Edge<S>>, epsilon: S) -> Self {
        let n = potential.len();
        ProcessSpec {
            labels: (1..=n).map(|i| i.to_string()).collect(),
            potential,
            mass: vec![S::one(); n],
            edges,
            epsilon,
        }
    }

    pub fn len(&self) -> usize {
        self.potential.len()
    }

    pub fn is_empty(&self) -> bool {
        self.potential.is_empty()
    }

    /// `(neighbour, edge index)` pairs for every state.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.len()];
        for (k, e) in self.edges.iter().enumerate() {
            if e.a < self.len() && e.b < self.len() {
                adj[e.a].push((e.b, k));
                adj[e.b].push((e.a, k));
            }
        }
        adj
    }

    /// Exponent `h_ij = V_e - V_i` of leaving `i` through `edge`.
    pub fn exponent(&self, from: usize, edge: usize) -> S {
        self.edges[edge].saddle.clone() - self.potential[from].clone()
    }

    /// Prefactor `c_e / m_i` of leaving `i` through `edge`.
    pub fn prefactor(&self, from: usize, edge: usize) -> S {
        self.edges[edge].coupling.clone() / self.mass[from].clone()
    }

    /// Dense matrix of exponents; `None` marks absent edges.
    pub fn exponent_matrix(&self) -> Vec<Vec<Option<S>>> {
        let n = self.len();
        let mut h = vec![vec![None; n]; n];
        for (k, e) in self.edges.iter().enumerate() {
            h[e.a][e.b] = Some(self.exponent(e.a, k));
            h[e.b][e.a] = Some(self.exponent(e.b, k));
        }
        h
    }

    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        self.edges
            .iter()
            .position(|e| (e.a == a && e.b == b) || (e.a == b && e.b == a))
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn map_scalar<T: Scalar>(&self, f: impl Fn(&S) -> T) -> ProcessSpec<T> {
        ProcessSpec {
            labels: self.labels.clone(),
            potential: self.potential.iter().map(&f).collect(),
            mass: self.mass.iter().map(&f).collect(),
            edges: self
                .edges
                .iter()
                .map(|e| Edge::new(e.a, e.b, f(&e.coupling), f(&e.saddle)))
                .collect(),
            epsilon: f(&self.epsilon),
        }
    }

    pub fn to_f64(&self) -> ProcessSpec<f64> {
        self.map_scalar(|v| v.to_f64_lossy())
    }
}

/// Number of connected components of the undirected state graph.
pub fn component_count<S: Scalar>(spec: &ProcessSpec<S>) -> usize {
    let adj = spec.adjacency();
    let mut seen = vec![false; spec.len()];
    let mut components = 0;
    for start in 0..spec.len() {
        if seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            for &(j, _) in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    components
}

/// Lists every structural violation; empty when the spec is well formed.
pub fn validate_spec<S: Scalar>(spec: &ProcessSpec<S>) -> Vec<Diagnostic> {
    let n = spec.len();
    let mut out = Vec::new();
    if spec.mass.len() != n {
        out.push(Diagnostic::LengthMismatch {
            field: "mass",
            expected: n,
            found: spec.mass.len(),
        });
    }
    if spec.labels.len() != n {
        out.push(Diagnostic::LengthMismatch {
            field: "labels",
            expected: n,
            found: spec.labels.len(),
        });
    }
    if spec.epsilon <= S::zero() {
        out.push(Diagnostic::NonPositiveEpsilon);
    }
    for (i, m) in spec.mass.iter().enumerate() {
        if *m <= S::zero() {
            out.push(Diagnostic::NonPositiveMass { state: i });
        }
    }
    let mut pairs = BTreeSet::new();
    for (k, e) in spec.edges.iter().enumerate() {
        if e.a >= n || e.b >= n {
            out.push(Diagnostic::EdgeOutOfRange { edge: k });
            continue;
        }
        if e.a == e.b {
            out.push(Diagnostic::SelfLoop { edge: k });
            continue;
        }
        let key = (e.a.min(e.b), e.a.max(e.b));
        if !pairs.insert(key) {
            out.push(Diagnostic::DuplicateEdge { a: key.0, b: key.1 });
        }
        if e.saddle < spec.potential[e.a] || e.saddle < spec.potential[e.b] {
            out.push(Diagnostic::SaddleBelowEndpoint { a: e.a, b: e.b });
        }
        if e.coupling <= S::zero() {
            out.push(Diagnostic::NonPositiveCoupling { edge: k });
        }
    }
    if n > 0 {
        let components = component_count(spec);
        if components > 1 {
            out.push(Diagnostic::Disconnected { components });
        }
    }
    out
}

/// Converts diagnostics into the most specific error.
pub fn ensure_valid<S: Scalar>(spec: &ProcessSpec<S>) -> Result<()> {
    let diags = validate_spec(spec);
    if let Some(d) = diags
        .iter()
        .find(|d| matches!(d, Diagnostic::SaddleBelowEndpoint { .. }))
    {
        if let Diagnostic::SaddleBelowEndpoint { a, b } = d {
            return Err(Error::InvalidSaddle { a: *a, b: *b });
        }
    }
    if let Some(Diagnostic::Disconnected { components }) =
        diags.iter().find(|d| matches!(d, Diagnostic::Disconnected { .. }))
    {
        return Err(Error::Irreducibility {
            components: *components,
        });
    }
    match diags.first() {
        Some(d) => Err(Error::Precondition(d.to_string())),
        None => Ok(()),
    }
}

/// Dense generator of a reversible jump process.
///
/// Off-diagonal entries are jump rates; the diagonal is minus the row sum.
#[derive(Clone, Debug)]
pub struct Generator {
    pub matrix: DMatrix<f64>,
    pub labels: Vec<String>,
    /// `ln mu_i` of the reversible measure, when known from the spec.
    pub log_measure: Option<Vec<f64>>,
    /// Temperature the generator was assembled at, when known.
    pub epsilon: Option<f64>,
}

impl Generator {
    pub fn new(matrix: DMatrix<f64>, labels: Vec<String>) -> Self {
        Generator {
            matrix,
            labels,
            log_measure: None,
            epsilon: None,
        }
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    /// Infinity norm of the matrix.
    pub fn norm_inf(&self) -> f64 {
        (0..self.len())
            .map(|i| self.matrix.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Log reversible measure: stored if available, else reconstructed from
    /// rate ratios along a BFS spanning tree.
    pub fn reversible_log_measure(&self) -> Result<Vec<f64>> {
        if let Some(m) = &self.log_measure {
            return Ok(m.clone());
        }
        let n = self.len();
        let mut logm = vec![f64::NAN; n];
        if n == 0 {
            return Ok(logm);
        }
        logm[0] = 0.0;
        let mut queue = VecDeque::from([0usize]);
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                if j == i || !logm[j].is_nan() {
                    continue;
                }
                let (lij, lji) = (self.matrix[(i, j)], self.matrix[(j, i)]);
                if lij > 0.0 && lji > 0.0 {
                    logm[j] = logm[i] + lij.ln() - lji.ln();
                    queue.push_back(j);
                } else if lij > 0.0 || lji > 0.0 {
                    return Err(Error::NotReversible(format!("one-way rate between {i} and {j}")));
                }
            }
        }
        if logm.iter().any(|v| v.is_nan()) {
            return Err(Error::Irreducibility { components: 2 });
        }
        Ok(logm)
    }

    /// Largest relative detailed-balance violation `|mu_i L_ij - mu_j L_ji|`.
    pub fn reversibility_defect(&self) -> Result<f64> {
        let logm = self.reversible_log_measure()?;
        let n = self.len();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let (lij, lji) = (self.matrix[(i, j)], self.matrix[(j, i)]);
                if lij == 0.0 && lji == 0.0 {
                    continue;
                }
                if lij == 0.0 || lji == 0.0 {
                    return Ok(f64::INFINITY);
                }
                let lhs = logm[i] + lij.ln();
                let rhs = logm[j] + lji.ln();
                worst = worst.max((lhs - rhs).abs());
            }
        }
        Ok(worst)
    }
}

/// Assembles the generator at the spec's epsilon or at an override.
pub fn assemble_generator<S: Scalar>(spec: &ProcessSpec<S>, epsilon: Option<f64>) -> Result<Generator> {
    ensure_valid(spec)?;
    let eps = epsilon.unwrap_or_else(|| spec.epsilon.to_f64_lossy());
    if !(eps > 0.0) {
        return Err(Error::Precondition("epsilon must be positive".into()));
    }
    let n = spec.len();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for (k, e) in spec.edges.iter().enumerate() {
        for (from, to) in [(e.a, e.b), (e.b, e.a)] {
            let h = spec.exponent(from, k).to_f64_lossy();
            let c = spec.prefactor(from, k).to_f64_lossy();
            l[(from, to)] = c * (-h / eps).exp();
        }
    }
    for i in 0..n {
        let s: f64 = (0..n).filter(|&j| j != i).map(|j| l[(i, j)]).sum();
        l[(i, i)] = -s;
    }
    let log_measure = (0..n)
        .map(|i| spec.mass[i].to_f64_lossy().ln() - spec.potential[i].to_f64_lossy() / eps)
        .collect();
    Ok(Generator {
        matrix: l,
        labels: spec.labels.clone(),
        log_measure: Some(log_measure),
        epsilon: Some(eps),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Rational64;

    fn triangle() -> ProcessSpec<f64> {
        ProcessSpec::with_unit_mass(
            vec![0.0, 0.2, 0.5],
            vec![
                Edge::new(0, 1, 1.0, 1.0),
                Edge::new(1, 2, 2.0, 0.9),
                Edge::new(0, 2, 1.0, 1.4),
            ],
            0.1,
        )
    }

    #[test]
    fn generator_rows_sum_to_zero() {
        let g = assemble_generator(&triangle(), None).unwrap();
        for i in 0..3 {
            assert!(g.matrix.row(i).sum().abs() < 1e-14);
        }
        assert!((g.matrix[(1, 2)] - 2.0 * (-0.7f64 / 0.1).exp()).abs() < 1e-15);
    }

    #[test]
    fn detailed_balance_holds() {
        let g = assemble_generator(&triangle(), None).unwrap();
        assert!(g.reversibility_defect().unwrap() < 1e-12);
        let stored = g.log_measure.clone().unwrap();
        let mut bare = g.clone();
        bare.log_measure = None;
        let rebuilt = bare.reversible_log_measure().unwrap();
        for i in 0..3 {
            assert!(((rebuilt[i] - rebuilt[0]) - (stored[i] - stored[0])).abs() < 1e-10);
        }
    }

    #[test]
    fn saddle_below_endpoint_is_rejected() {
        let mut s = triangle();
        s.edges[0].saddle = 0.1;
        assert_eq!(
            assemble_generator(&s, None).unwrap_err(),
            Error::InvalidSaddle { a: 0, b: 1 }
        );
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let s = ProcessSpec::with_unit_mass(vec![0.0, 0.0, 0.0], vec![Edge::new(0, 1, 1.0, 1.0)], 0.1);
        assert_eq!(
            assemble_generator(&s, None).unwrap_err(),
            Error::Irreducibility { components: 2 }
        );
        assert!(validate_spec(&s).contains(&Diagnostic::Disconnected { components: 2 }));
    }

    #[test]
    fn duplicate_and_self_loops_are_reported() {
        let mut s = triangle();
        s.edges.push(Edge::new(1, 0, 1.0, 2.0));
        s.edges.push(Edge::new(2, 2, 1.0, 2.0));
        let d = validate_spec(&s);
        assert!(d.contains(&Diagnostic::DuplicateEdge { a: 0, b: 1 }));
        assert!(d.contains(&Diagnostic::SelfLoop { edge: 4 }));
    }

    #[test]
    fn rational_spec_exponents_are_exact() {
        let r = |p, q| Rational64::new(p, q);
        let s = ProcessSpec::with_unit_mass(
            vec![r(0, 1), r(1, 3)],
            vec![Edge::new(0, 1, r(1, 1), r(1, 2))],
            r(1, 10),
        );
        assert_eq!(s.exponent(1, 0), r(1, 6));
        assert_eq!(s.exponent_matrix()[0][1], Some(r(1, 2)));
        assert!(validate_spec(&s).is_empty());
    }
}
