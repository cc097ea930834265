//! Symmetry reduction of a generator: isotypic projectors, active orbits,
//! basis vectors of the isotypic subspaces and the reduced generators they
//! carry.
//!
//! Conventions: `pi(g) e_b = e_{g(b)}`, the projector of irrep `p` is
//! `P = (d/|G|) sum_g conj(chi(g)) pi(g)`, and the inner product on an orbit
//! `A` is `<u, v> = (1/|A|) sum_{c in A} conj(u_c) v_c`.

use crate::asymptotic::{AsymptoticMatrix, ExpSum};
use crate::error::{Error, Result};
use crate::hierarchy::{ExponentSystem, Rate, Target, Witness};
use crate::model::{ensure_valid, Edge, ProcessSpec};
use crate::scalar::Scalar;
use crate::symgroup::{
    character_table, check_accidental_degeneracy, check_spec_invariance, orbit_decomposition, orbit_links,
    validate_table, CharacterTable, Irrep, Orbit, OrbitDecomposition, OrbitLink, PermGroup,
};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde_json::{json, Value};
use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Isotypic projector of one irrep.
#[derive(Clone, Debug)]
pub struct Projector {
    pub irrep: usize,
    pub label: String,
    pub matrix: DMatrix<Complex64>,
}

impl Projector {
    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn orbit_trace(&self, orbit: &Orbit) -> f64 {
        orbit.members.iter().map(|&b| self.matrix[(b, b)].re).sum()
    }

    /// `||P^2 - P||_F`.
    pub fn idempotency_residual(&self) -> f64 {
        (&self.matrix * &self.matrix - &self.matrix).norm()
    }

    /// `||P^* - P||_F`.
    pub fn hermiticity_residual(&self) -> f64 {
        (self.matrix.adjoint() - &self.matrix).norm()
    }

    /// `||P L - L P||_F / ||L||_F`.
    pub fn commutation_residual(&self, l: &DMatrix<f64>) -> f64 {
        let lc = l.map(|x| Complex64::new(x, 0.0));
        let scale = l.norm().max(f64::MIN_POSITIVE);
        (&self.matrix * &lc - &lc * &self.matrix).norm() / scale
    }
}

pub fn projector(group: &PermGroup, table: &CharacterTable, p: usize) -> Projector {
    let irrep = &table.irreps[p];
    let n = group.degree;
    let w = irrep.dim as f64 / group.order() as f64;
    let mut m = DMatrix::from_element(n, n, ZERO);
    for (g, perm) in group.elements.iter().enumerate() {
        let coef = irrep.chars[g].conj() * w;
        for (b, &gb) in perm.iter().enumerate() {
            m[(gb, b)] += coef;
        }
    }
    Projector {
        irrep: p,
        label: irrep.label.clone(),
        matrix: m,
    }
}

/// Multiplicities `alpha_i^(p)` of every irrep on every orbit.
#[derive(Clone, Debug, PartialEq)]
pub struct ActiveOrbitTable {
    pub labels: Vec<String>,
    pub dims: Vec<usize>,
    pub orbit_sizes: Vec<usize>,
    /// `alpha[p][i]`.
    pub alpha: Vec<Vec<usize>>,
}

impl ActiveOrbitTable {
    pub fn alpha_d(&self, p: usize, i: usize) -> usize {
        self.alpha[p][i] * self.dims[p]
    }

    /// Orbits on which irrep `p` is active.
    pub fn active(&self, p: usize) -> Vec<usize> {
        (0..self.orbit_sizes.len()).filter(|&i| self.alpha[p][i] > 0).collect()
    }

    /// Number of eigenvalues carried by irrep `p`.
    pub fn total(&self, p: usize) -> usize {
        (0..self.orbit_sizes.len()).map(|i| self.alpha_d(p, i)).sum()
    }

    pub fn grand_total(&self) -> usize {
        (0..self.labels.len()).map(|p| self.total(p)).sum()
    }

    /// One row per irrep with the `alpha * d` grid, as in the usual
    /// presentation of these tables.
    pub fn to_json(&self, orbit_names: &[String]) -> Value {
        let rows: Vec<Value> = (0..self.labels.len())
            .map(|p| {
                json!({
                    "irrep": self.labels[p],
                    "dim": self.dims[p],
                    "alpha": self.alpha[p],
                    "alpha_d": (0..self.orbit_sizes.len()).map(|i| self.alpha_d(p, i)).collect::<Vec<_>>(),
                    "total": self.total(p),
                })
            })
            .collect();
        json!({
            "orbits": orbit_names,
            "orbit_sizes": self.orbit_sizes,
            "rows": rows,
            "total": self.grand_total(),
        })
    }
}

/// `alpha_i^(p) = (1/|G_a|) sum_{h in G_a} chi(h)`.
pub fn active_orbits(
    group: &PermGroup,
    table: &CharacterTable,
    orbits: &OrbitDecomposition,
) -> Result<ActiveOrbitTable> {
    if orbits.orbit_of.len() != group.degree {
        return Err(Error::Precondition(format!(
            "orbits cover {} states, group acts on {}",
            orbits.orbit_of.len(),
            group.degree
        )));
    }
    let mut alpha = Vec::with_capacity(table.irreps.len());
    for irrep in &table.irreps {
        let mut row = Vec::with_capacity(orbits.orbits.len());
        for orbit in &orbits.orbits {
            let s: Complex64 = orbit.stabilizer.iter().map(|&h| irrep.chars[h]).sum();
            let v = s / orbit.stabilizer.len() as f64;
            let k = v.re.round();
            if (v - k).norm() > 1e-9 || k < 0.0 || k as usize > irrep.dim {
                return Err(Error::InvalidTable(format!(
                    "multiplicity {v} of {} on orbit of {} is not an integer in 0..={}",
                    irrep.label, orbit.representative, irrep.dim
                )));
            }
            row.push(k as usize);
        }
        alpha.push(row);
    }
    let t = ActiveOrbitTable {
        labels: table.irreps.iter().map(|p| p.label.clone()).collect(),
        dims: table.irreps.iter().map(|p| p.dim).collect(),
        orbit_sizes: orbits.orbits.iter().map(|o| o.len()).collect(),
        alpha,
    };
    for (i, &size) in t.orbit_sizes.iter().enumerate() {
        let col: usize = (0..t.labels.len()).map(|p| t.alpha_d(p, i)).sum();
        if col != size {
            return Err(Error::InvalidTable(format!(
                "multiplicities on orbit {i} add up to {col}, orbit has {size} states"
            )));
        }
    }
    Ok(t)
}

/// `u^c` for a state `c` of `orbit`:
/// `(u^c)_b = (d/|G_c|) sum_{g : g(c) = b} conj(chi(g))`, i.e. `(|G|/|G_c|) P e^c`.
pub fn basis_vector(group: &PermGroup, irrep: &Irrep, orbit: &Orbit, state: usize) -> DVector<Complex64> {
    let mut u = DVector::from_element(group.degree, ZERO);
    let w = irrep.dim as f64 / orbit.stabilizer.len() as f64;
    for (g, perm) in group.elements.iter().enumerate() {
        u[perm[state]] += irrep.chars[g].conj() * w;
    }
    u
}

/// `(1/|A|) sum_{c in A} conj(u_c) v_c`.
pub fn orbit_inner(orbit: &Orbit, u: &DVector<Complex64>, v: &DVector<Complex64>) -> Complex64 {
    let s: Complex64 = orbit.members.iter().map(|&c| u[c].conj() * v[c]).sum();
    s / orbit.len() as f64
}

#[derive(Clone, Debug)]
pub struct BasisVector {
    pub orbit: usize,
    /// `h` with `state = h(a)`.
    pub element: usize,
    pub state: usize,
    pub components: DVector<Complex64>,
}

/// Basis of one isotypic subspace, grouped by orbit.
#[derive(Clone, Debug)]
pub struct BasisVectors {
    pub irrep: usize,
    pub vectors: Vec<BasisVector>,
    /// Active orbits with the index range of their vectors.
    pub blocks: Vec<(usize, Range<usize>)>,
}

impl BasisVectors {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn block_of(&self, orbit: usize) -> Option<&Range<usize>> {
        self.blocks.iter().find(|(o, _)| *o == orbit).map(|(_, r)| r)
    }

    /// Gram matrix of the vectors of one orbit.
    pub fn gram(&self, orbit: &Orbit, range: &Range<usize>) -> DMatrix<Complex64> {
        let vs = &self.vectors[range.clone()];
        DMatrix::from_fn(vs.len(), vs.len(), |x, y| {
            orbit_inner(orbit, &vs[x].components, &vs[y].components)
        })
    }
}

/// Group elements `h` selecting the vectors `u^{h(a)}` on chosen orbits;
/// other orbits use the greedy choice.
#[derive(Clone, Debug, Default)]
pub struct BasisChoice {
    pub overrides: BTreeMap<usize, Vec<usize>>,
}

impl BasisChoice {
    pub fn greedy() -> Self {
        Self::default()
    }

    pub fn with(mut self, orbit: usize, elements: Vec<usize>) -> Self {
        self.overrides.insert(orbit, elements);
        self
    }
}

/// Incremental Gram-Schmidt under the orbit inner product.
struct Span<'a> {
    orbit: &'a Orbit,
    basis: Vec<DVector<Complex64>>,
}

impl<'a> Span<'a> {
    fn residual(&self, v: &DVector<Complex64>) -> DVector<Complex64> {
        let mut r = v.clone();
        for q in &self.basis {
            let c = orbit_inner(self.orbit, q, &r);
            r -= q * c;
        }
        r
    }

    /// Adds `v` if it is independent of the span.
    fn try_add(&mut self, v: &DVector<Complex64>) -> bool {
        let norm2 = orbit_inner(self.orbit, v, v).re;
        if norm2 <= 1e-20 {
            return false;
        }
        let r = self.residual(v);
        let rn = orbit_inner(self.orbit, &r, &r).re;
        if rn <= 1e-8 * norm2 {
            return false;
        }
        self.basis.push(r.unscale(rn.sqrt()));
        true
    }
}

/// `alpha * d` independent vectors `u^{h(a)}` on one active orbit.
///
/// Greedy choice scans states in the order of their first transversal
/// element and takes first the vectors orthogonal to all chosen ones, then
/// any independent ones.
pub fn orbit_basis(
    group: &PermGroup,
    irrep: &Irrep,
    orbit_index: usize,
    orbit: &Orbit,
    count: usize,
    elements: Option<&[usize]>,
) -> Result<Vec<BasisVector>> {
    let a = orbit.representative;
    let make = |h: usize| BasisVector {
        orbit: orbit_index,
        element: h,
        state: group.apply(h, a),
        components: basis_vector(group, irrep, orbit, group.apply(h, a)),
    };
    let mut span = Span {
        orbit,
        basis: Vec::new(),
    };
    let mut chosen: Vec<BasisVector> = Vec::new();
    if let Some(list) = elements {
        for &h in list {
            let v = make(h);
            if !span.try_add(&v.components) {
                return Err(Error::RepresentativeChoice(format!(
                    "vector at state {} is dependent on the previous ones for irrep {}",
                    v.state, irrep.label
                )));
            }
            chosen.push(v);
        }
        if chosen.len() != count {
            return Err(Error::RepresentativeChoice(format!(
                "{} vectors given for irrep {} on orbit {orbit_index}, {count} needed",
                chosen.len(),
                irrep.label
            )));
        }
        return Ok(chosen);
    }
    let mut candidates: Vec<(usize, usize)> = orbit.transversal.iter().map(|(&c, &h)| (h, c)).collect();
    candidates.sort_unstable();
    let vectors: Vec<BasisVector> = candidates.iter().map(|&(h, _)| make(h)).collect();
    let mut used = vec![false; vectors.len()];
    for (k, v) in vectors.iter().enumerate() {
        if chosen.len() == count {
            break;
        }
        let nv = orbit_inner(orbit, &v.components, &v.components).re;
        let orthogonal = chosen.iter().all(|w| {
            let nw = orbit_inner(orbit, &w.components, &w.components).re;
            orbit_inner(orbit, &w.components, &v.components).norm() <= 1e-10 * (nv * nw).sqrt()
        });
        if orthogonal && span.try_add(&v.components) {
            used[k] = true;
            chosen.push(v.clone());
        }
    }
    for (k, v) in vectors.iter().enumerate() {
        if chosen.len() == count {
            break;
        }
        if !used[k] && span.try_add(&v.components) {
            chosen.push(v.clone());
        }
    }
    if chosen.len() != count {
        return Err(Error::RepresentativeChoice(format!(
            "only {} independent vectors for irrep {} on orbit {orbit_index}, {count} needed",
            chosen.len(),
            irrep.label
        )));
    }
    Ok(chosen)
}

/// A process with a symmetry group and the data derived from it.
#[derive(Clone, Debug)]
pub struct SymmetricSystem<S> {
    pub spec: ProcessSpec<S>,
    pub group: PermGroup,
    pub table: CharacterTable,
    pub orbits: OrbitDecomposition,
    pub links: Vec<Vec<Option<OrbitLink<S>>>>,
    pub active: ActiveOrbitTable,
}

impl<S: Scalar> SymmetricSystem<S> {
    /// Validates the spec, its invariance, the table and the absence of
    /// accidental degeneracies.
    pub fn new(
        spec: ProcessSpec<S>,
        group: PermGroup,
        table: Option<CharacterTable>,
        representatives: Option<&[usize]>,
    ) -> Result<Self> {
        ensure_valid(&spec)?;
        if group.degree != spec.len() {
            return Err(Error::Precondition(format!(
                "group acts on {} states, spec has {}",
                group.degree,
                spec.len()
            )));
        }
        let violations = check_spec_invariance(&spec, &group);
        if !violations.is_empty() {
            return Err(Error::Precondition(format!(
                "spec is not invariant: {}",
                violations.join("; ")
            )));
        }
        let table = match table {
            Some(t) => t,
            None => character_table(&group)?,
        };
        validate_table(&group, &table)?;
        check_accidental_degeneracy(&spec, &group)?;
        let orbits = orbit_decomposition(&group, representatives)?;
        let links = orbit_links(&spec, &group, &orbits)?;
        let active = active_orbits(&group, &table, &orbits)?;
        Ok(SymmetricSystem {
            spec,
            group,
            table,
            orbits,
            links,
            active,
        })
    }

    pub fn orbit_names(&self) -> Vec<String> {
        self.orbits
            .orbits
            .iter()
            .map(|o| self.spec.labels[o.representative].clone())
            .collect()
    }

    /// `m*_i = m_a / |G_a|`.
    pub fn orbit_mass(&self, i: usize) -> S {
        let o = &self.orbits.orbits[i];
        self.spec.mass[o.representative].clone() / S::from_count(o.stabilizer.len())
    }

    /// `c*_ij = c_ab / |G_a ∩ G_b|`.
    pub fn orbit_coupling(&self, i: usize, j: usize) -> Option<S> {
        let l = self.links[i][j].as_ref()?;
        Some(l.coupling.clone() / S::from_count(l.joint_stabilizer))
    }

    /// `c*_ij / m*_i`, computed as `c_ab |G_a| / (|G_a ∩ G_b| m_a)`.
    pub fn orbit_rate(&self, i: usize, j: usize) -> Option<Rate<S>> {
        let l = self.links[i][j].as_ref()?;
        let o = &self.orbits.orbits[i];
        let pref = l.coupling.clone() * S::from_count(o.stabilizer.len())
            / (self.spec.mass[o.representative].clone() * S::from_count(l.joint_stabilizer));
        Some(Rate::new(pref, l.exponent.clone(), Witness::Edge(l.edge)))
    }

    /// Successor of each orbit among all others, by the minimal link
    /// exponent.
    pub fn orbit_successors(&self) -> Result<Vec<Option<usize>>> {
        let k = self.orbits.orbits.len();
        let mut out = Vec::with_capacity(k);
        for i in 0..k {
            let mut best: Option<(S, usize)> = None;
            let mut tie = false;
            for j in (0..k).filter(|&j| j != i) {
                if let Some(l) = &self.links[i][j] {
                    match &best {
                        Some((h, _)) if l.exponent.ties(h) => tie = true,
                        Some((h, _)) if !l.exponent.below(h) => {}
                        _ => {
                            best = Some((l.exponent.clone(), j));
                            tie = false;
                        }
                    }
                }
            }
            if tie {
                return Err(Error::Degeneracy(format!(
                    "orbit of {} has two successors at the same exponent",
                    self.spec.labels[self.orbits.orbits[i].representative]
                )));
            }
            out.push(best.map(|(_, j)| j));
        }
        Ok(out)
    }

    /// Fastest exit of the representative of orbit `i`: the edge, whether
    /// its endpoint lies in the same orbit, and the element `k` with
    /// `k(a) = a*` in that case.
    pub fn fastest_exit(&self, i: usize) -> Result<(usize, Option<usize>)> {
        let o = &self.orbits.orbits[i];
        let a = o.representative;
        let mut best: Option<S> = None;
        for (e, edge) in self.spec.edges.iter().enumerate() {
            if edge.a == a || edge.b == a {
                let h = self.spec.exponent(a, e);
                if best.as_ref().is_none_or(|b| h.below(b)) {
                    best = Some(h);
                }
            }
        }
        let h = best.ok_or_else(|| Error::Precondition(format!("state {} has no edges", self.spec.labels[a])))?;
        let mut inside = None;
        let mut outside = None;
        for (e, edge) in self.spec.edges.iter().enumerate() {
            if (edge.a == a || edge.b == a) && self.spec.exponent(a, e).ties(&h) {
                let b = edge.other(a);
                if self.orbits.orbit_of[b] == i {
                    inside.get_or_insert((e, o.transversal[&b]));
                } else {
                    outside.get_or_insert(e);
                }
            }
        }
        match (inside, outside) {
            (Some(_), Some(_)) => Err(Error::Degeneracy(format!(
                "fastest exit of {} is attained both inside and outside its orbit",
                self.spec.labels[a]
            ))),
            (Some((e, k)), None) => Ok((e, Some(k))),
            (None, Some(e)) => Ok((e, None)),
            (None, None) => unreachable!("minimum is attained"),
        }
    }

    /// Process on orbit representatives with masses `m*` and couplings
    /// `c*`; its generator is the trivial-irrep reduction at leading order.
    pub fn orbit_spec(&self) -> ProcessSpec<S> {
        let k = self.orbits.orbits.len();
        let reps: Vec<usize> = self.orbits.orbits.iter().map(|o| o.representative).collect();
        let mut edges = Vec::new();
        for i in 0..k {
            for j in (i + 1)..k {
                if let (Some(l), Some(c)) = (&self.links[i][j], self.orbit_coupling(i, j)) {
                    let saddle = self.spec.potential[reps[i]].clone() + l.exponent.clone();
                    edges.push(Edge::new(i, j, c, saddle));
                }
            }
        }
        ProcessSpec {
            labels: reps.iter().map(|&a| self.spec.labels[a].clone()).collect(),
            potential: reps.iter().map(|&a| self.spec.potential[a].clone()).collect(),
            mass: (0..k).map(|i| self.orbit_mass(i)).collect(),
            edges,
            epsilon: self.spec.epsilon.clone(),
        }
    }

    /// Exponent system of a one-dimensional irrep on its active orbits, with
    /// exits to inactive orbits and the in-orbit defect
    /// `(1 - Re pi(h)) L_{a h(a)}` sent to the sink.
    pub fn augmented_system(&self, p: usize) -> Result<(Vec<usize>, ExponentSystem<S>)> {
        let irrep = &self.table.irreps[p];
        if irrep.dim != 1 {
            return Err(Error::Precondition(format!(
                "irrep {} is not one-dimensional",
                irrep.label
            )));
        }
        let active = self.active.active(p);
        let pos: BTreeMap<usize, usize> = active.iter().enumerate().map(|(x, &i)| (i, x)).collect();
        let names = self.orbit_names();
        let mut sys = ExponentSystem::new(
            active.iter().map(|&i| names[i].clone()).collect(),
            active
                .iter()
                .map(|&i| self.spec.potential[self.orbits.orbits[i].representative].clone())
                .collect(),
        );
        for (x, &i) in active.iter().enumerate() {
            for j in (0..self.orbits.orbits.len()).filter(|&j| j != i) {
                if let Some(rate) = self.orbit_rate(i, j) {
                    let target = pos.get(&j).map_or(Target::Sink, |&y| Target::State(y));
                    sys.add_rate(x, target, rate);
                }
            }
            let o = &self.orbits.orbits[i];
            let a = o.representative;
            for (e, edge) in self.spec.edges.iter().enumerate() {
                if edge.a != a && edge.b != a {
                    continue;
                }
                let c = edge.other(a);
                if self.orbits.orbit_of[c] != i {
                    continue;
                }
                let defect = 1.0 - irrep.chars[o.transversal[&c]].re;
                if defect.abs() <= 1e-12 {
                    continue;
                }
                let pref = self.spec.prefactor(a, e).scaled(defect);
                sys.add_rate(
                    x,
                    Target::Sink,
                    Rate::new(pref, self.spec.exponent(a, e), Witness::Edge(e)),
                );
            }
        }
        Ok((active, sys))
    }

    /// Basis of irrep `p` on all its active orbits.
    pub fn basis(&self, p: usize, choice: &BasisChoice) -> Result<BasisVectors> {
        let irrep = &self.table.irreps[p];
        let mut vectors = Vec::new();
        let mut blocks = Vec::new();
        for i in self.active.active(p) {
            let start = vectors.len();
            let vs = orbit_basis(
                &self.group,
                irrep,
                i,
                &self.orbits.orbits[i],
                self.active.alpha_d(p, i),
                choice.overrides.get(&i).map(|v| v.as_slice()),
            )?;
            vectors.extend(vs);
            blocks.push((i, start..vectors.len()));
        }
        Ok(BasisVectors {
            irrep: p,
            vectors,
            blocks,
        })
    }

    /// Reduced generator of irrep `p` in the given basis.
    pub fn reduce(&self, basis: BasisVectors) -> Result<ReducedMatrix<S>> {
        let nb = basis.len();
        let adj = self.spec.adjacency();
        let mut element: AsymptoticMatrix<S, Complex64> = AsymptoticMatrix::zeros(nb, nb);
        let linked = |i: usize, j: usize| i == j || self.links[i][j].is_some();
        for (i, ri) in &basis.blocks {
            let orbit = &self.orbits.orbits[*i];
            let inv_size = 1.0 / orbit.len() as f64;
            for (j, rj) in &basis.blocks {
                if !linked(*i, *j) {
                    continue;
                }
                for x in ri.clone() {
                    let ux = &basis.vectors[x].components;
                    for y in rj.clone() {
                        let uy = &basis.vectors[y].components;
                        let mut terms = Vec::new();
                        for &c in &orbit.members {
                            if ux[c].norm() <= 1e-14 {
                                continue;
                            }
                            for &(e, k) in &adj[c] {
                                let diff = uy[e] - uy[c];
                                if diff.norm() <= 1e-14 {
                                    continue;
                                }
                                let rate = self.spec.prefactor(c, k).to_f64_lossy();
                                terms.push((ux[c].conj() * diff * (rate * inv_size), self.spec.exponent(c, k)));
                            }
                        }
                        element.set(x, y, ExpSum::from_terms(terms));
                    }
                }
            }
        }
        let mut grams = Vec::new();
        let mut exact: AsymptoticMatrix<S, Complex64> = AsymptoticMatrix::zeros(nb, nb);
        for (i, ri) in &basis.blocks {
            let g = basis.gram(&self.orbits.orbits[*i], ri);
            let ginv = g
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::RepresentativeChoice(format!("singular Gram matrix on orbit {i}")))?;
            for (a, x) in ri.clone().enumerate() {
                for y in 0..nb {
                    let mut acc: ExpSum<S, Complex64> = ExpSum::zero();
                    for (b, xb) in ri.clone().enumerate() {
                        let coef = ginv[(a, b)];
                        if coef.norm() > 1e-14 && !element.get(xb, y).is_zero() {
                            acc = acc.add(&element.get(xb, y).scale(coef));
                        }
                    }
                    exact.set(x, y, acc);
                }
            }
            grams.push(g);
        }
        let mut leading = Vec::new();
        for (bi, (i, ri)) in basis.blocks.iter().enumerate() {
            let rows: Vec<usize> = ri.clone().collect();
            for (bj, (j, rj)) in basis.blocks.iter().enumerate() {
                let cols: Vec<usize> = rj.clone().collect();
                if let Some((h, c)) = exact.block_leading(&rows, &cols) {
                    let pref = self.block_prefactor(*i, *j, &h);
                    let pf = pref.to_f64_lossy();
                    leading.push(ReducedBlock {
                        row: bi,
                        col: bj,
                        prefactor: pref,
                        exponent: h,
                        m: c.map(|z| z / pf),
                    });
                }
            }
        }
        let irrep = &self.table.irreps[basis.irrep];
        Ok(ReducedMatrix {
            irrep: irrep.label.clone(),
            dim: irrep.dim,
            orbits: basis.blocks.iter().map(|(i, _)| *i).collect(),
            element,
            grams,
            exact,
            leading,
            basis,
        })
    }

    /// Prefactor used to normalise the leading block `(i, j)` at exponent
    /// `h`: `c*/m*` for the link exponent, the single-edge rate of the
    /// representative on the diagonal, `1` otherwise.
    fn block_prefactor(&self, i: usize, j: usize, h: &S) -> S {
        if i != j {
            if let (Some(l), Some(r)) = (&self.links[i][j], self.orbit_rate(i, j)) {
                if l.exponent.ties(h) {
                    return r.prefactor;
                }
            }
            return S::one();
        }
        let a = self.orbits.orbits[i].representative;
        self.spec
            .adjacency()
            .get(a)
            .and_then(|nb| nb.iter().find(|&&(_, e)| self.spec.exponent(a, e).ties(h)))
            .map_or_else(S::one, |&(_, e)| self.spec.prefactor(a, e))
    }

    pub fn reduced_trivial(&self) -> Result<ReducedMatrix<S>> {
        let p = self.table.trivial();
        self.reduce(self.basis(p, &BasisChoice::greedy())?)
    }

    pub fn reduced_dim1(&self, p: usize) -> Result<ReducedMatrix<S>> {
        if self.table.irreps[p].dim != 1 {
            return Err(Error::Precondition(format!(
                "irrep {} is not one-dimensional",
                self.table.irreps[p].label
            )));
        }
        self.reduce(self.basis(p, &BasisChoice::greedy())?)
    }

    pub fn reduced_dimd(&self, p: usize, choice: &BasisChoice) -> Result<ReducedMatrix<S>> {
        if self.table.irreps[p].dim < 2 {
            return Err(Error::Precondition(format!(
                "irrep {} is one-dimensional",
                self.table.irreps[p].label
            )));
        }
        self.reduce(self.basis(p, choice)?)
    }

    /// Leading block `(i, j)` from character sums alone, normalised by the
    /// diagonal of the Gram matrix instead of its inverse. Equals the
    /// leading block of [`ReducedMatrix::exact`] for orthogonal bases.
    ///
    /// Off-diagonal: `(c*/(alpha m*)) M` with
    /// `M_xy = (1/|G_aG_b|) sum_{g in G_aG_b} conj chi(h1 g h2^-1)`, where `b`
    /// is the minimal neighbour of `a` in `A_j` and `h2(b)` the state of `y`.
    /// Diagonal: `-(c*/(alpha m*)) M` with the sum over `G_a` when the fastest
    /// exit leaves the orbit, otherwise `-(L_{aa*}/alpha) M` with
    /// `M = sum_{c} (1/|G_a|) sum_{g in G_a} [conj chi(h1 g h2^-1) - conj chi(h1 k_c g h2^-1)]`
    /// over the fastest in-orbit neighbours `c = k_c(a)`.
    pub fn character_block(&self, basis: &BasisVectors, i: usize, j: usize) -> Result<(S, S, DMatrix<Complex64>)> {
        let p = basis.irrep;
        let irrep = &self.table.irreps[p];
        let alpha = self.active.alpha[p][i] as f64;
        let ri = basis
            .block_of(i)
            .ok_or_else(|| Error::Precondition(format!("orbit {i} inactive")))?;
        let rj = basis
            .block_of(j)
            .ok_or_else(|| Error::Precondition(format!("orbit {j} inactive")))?;
        let g = &self.group;
        let oi = &self.orbits.orbits[i];
        let a = oi.representative;
        let chi = |x: usize| irrep.chars[x].conj();
        let coset_sum = |set: &[usize], h1: usize, k: usize, h2: usize| -> Complex64 {
            let h2inv = g.inverse(h2);
            let s: Complex64 = set.iter().map(|&q| chi(g.mul(g.mul(h1, g.mul(k, q)), h2inv))).sum();
            s / set.len() as f64
        };
        let rows: Vec<usize> = ri.clone().map(|x| basis.vectors[x].element).collect();
        if i != j {
            let l = self.links[i][j]
                .as_ref()
                .ok_or_else(|| Error::Precondition(format!("orbits {i} and {j} are not linked")))?;
            let oj = &self.orbits.orbits[j];
            let b = l.target;
            let kb = oj.transversal[&b];
            let kb_inv = g.inverse(kb);
            let mut product: BTreeSet<usize> = BTreeSet::new();
            let gb = g.stabilizer(b);
            for &x in &oi.stabilizer {
                for &y in &gb {
                    product.insert(g.mul(x, y));
                }
            }
            let product: Vec<usize> = product.into_iter().collect();
            let m = DMatrix::from_fn(ri.len(), rj.len(), |x, y| {
                let h2 = g.mul(basis.vectors[rj.start + y].element, kb_inv);
                coset_sum(&product, rows[x], g.identity(), h2) / alpha
            });
            let r = self.orbit_rate(i, j).expect("linked orbits");
            return Ok((r.prefactor, r.exponent, m));
        }
        let cols = rows.clone();
        self.fastest_exit(i)?;
        let coset_matrix = |k: usize| {
            DMatrix::from_fn(rows.len(), cols.len(), |x, y| {
                coset_sum(&oi.stabilizer, rows[x], k, cols[y])
            })
        };
        let base = coset_matrix(g.identity());
        let mut parts: Vec<(S, S, DMatrix<Complex64>)> = Vec::new();
        let exit = (0..self.orbits.orbits.len())
            .filter(|&j| j != i)
            .filter_map(|j| self.orbit_rate(i, j))
            .reduce(|x, y| x.combine(y));
        if let Some(r) = exit {
            parts.push((r.exponent, r.prefactor, base.map(|z| -z / alpha)));
        }
        for (e, ed) in self.spec.edges.iter().enumerate() {
            if ed.a != a && ed.b != a {
                continue;
            }
            let c = ed.other(a);
            if c == a || self.orbits.orbit_of[c] != i {
                continue;
            }
            let m = (coset_matrix(oi.transversal[&c]) - &base).map(|z| z / alpha);
            parts.push((self.spec.exponent(a, e), self.spec.prefactor(a, e), m));
        }
        parts.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap_or(std::cmp::Ordering::Equal));
        let mut k = 0;
        while k < parts.len() {
            let (h, pref, _) = parts[k].clone();
            let pf = pref.to_f64_lossy();
            let mut sum = DMatrix::from_element(rows.len(), cols.len(), ZERO);
            let mut gross = 0.0;
            while k < parts.len() && parts[k].0.ties(&h) {
                let w = parts[k].1.to_f64_lossy() / pf;
                gross += parts[k].2.norm() * w.abs();
                sum += parts[k].2.map(|z| z * w);
                k += 1;
            }
            if sum.norm() > 1e-10 * gross {
                return Ok((pref, h, sum));
            }
        }
        Err(Error::Precondition(format!(
            "diagonal block of orbit {i} vanishes at every order"
        )))
    }
}

/// Leading part `prefactor * exp(-exponent/eps) * m` of one block.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedBlock<S> {
    /// Positions in [`ReducedMatrix::orbits`].
    pub row: usize,
    pub col: usize,
    pub prefactor: S,
    pub exponent: S,
    pub m: DMatrix<Complex64>,
}

/// Reduced generator of one irrep on its active orbits.
#[derive(Clone, Debug)]
pub struct ReducedMatrix<S> {
    pub irrep: String,
    pub dim: usize,
    /// Active orbits, in block order.
    pub orbits: Vec<usize>,
    pub basis: BasisVectors,
    /// `E_xy = <u^x, L u^y>`.
    pub element: AsymptoticMatrix<S, Complex64>,
    /// Gram matrix of each orbit block.
    pub grams: Vec<DMatrix<Complex64>>,
    /// `X = G^{-1} E`: the matrix of `L` on the isotypic subspace.
    pub exact: AsymptoticMatrix<S, Complex64>,
    pub leading: Vec<ReducedBlock<S>>,
}

impl<S: Scalar> ReducedMatrix<S> {
    pub fn len(&self) -> usize {
        self.exact.rows
    }

    pub fn is_empty(&self) -> bool {
        self.exact.rows == 0
    }

    /// Index range of the block of the `k`-th active orbit.
    pub fn range(&self, k: usize) -> Range<usize> {
        self.basis.blocks[k].1.clone()
    }

    pub fn block(&self, row: usize, col: usize) -> Option<&ReducedBlock<S>> {
        self.leading.iter().find(|b| b.row == row && b.col == col)
    }

    pub fn value(&self, eps: f64) -> DMatrix<Complex64> {
        self.exact.value(eps)
    }

    /// Real matrix at `eps` if every imaginary part is at most `1e-10`
    /// relative to the largest entry.
    pub fn real_value(&self, eps: f64) -> Option<DMatrix<f64>> {
        let v = self.value(eps);
        let scale = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
        v.iter()
            .all(|z| z.im.abs() <= 1e-10 * scale.max(f64::MIN_POSITIVE))
            .then(|| v.map(|z| z.re))
    }

    /// Eigenvalues of the reduced generator at `eps`.
    pub fn eigenvalues(&self, eps: f64) -> Result<Vec<Complex64>> {
        complex_eigenvalues(&self.value(eps))
    }

    pub fn to_json(&self, orbit_names: &[String]) -> Value {
        let mat = |m: &DMatrix<Complex64>| -> Value {
            let re: Vec<Vec<f64>> = (0..m.nrows())
                .map(|r| (0..m.ncols()).map(|c| m[(r, c)].re).collect())
                .collect();
            let im: Vec<Vec<f64>> = (0..m.nrows())
                .map(|r| (0..m.ncols()).map(|c| m[(r, c)].im).collect())
                .collect();
            json!({"re": re, "im": im})
        };
        let blocks: Vec<Value> = self
            .leading
            .iter()
            .map(|b| {
                json!({
                    "row": orbit_names[self.orbits[b.row]],
                    "col": orbit_names[self.orbits[b.col]],
                    "C": b.prefactor.to_f64_lossy(),
                    "C_exact": b.prefactor.to_string(),
                    "H": b.exponent.to_f64_lossy(),
                    "H_exact": b.exponent.to_string(),
                    "M": mat(&b.m),
                })
            })
            .collect();
        let states: Vec<Value> = self
            .basis
            .vectors
            .iter()
            .map(|v| json!({"orbit": orbit_names[v.orbit], "state": v.state}))
            .collect();
        json!({
            "irrep": self.irrep,
            "dim": self.dim,
            "orbits": self.orbits.iter().map(|&i| orbit_names[i].clone()).collect::<Vec<_>>(),
            "basis": states,
            "blocks": blocks,
        })
    }
}

/// Eigenvalues of a complex square matrix via its Schur form.
pub fn complex_eigenvalues(m: &DMatrix<Complex64>) -> Result<Vec<Complex64>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = nalgebra::Schur::try_new(m.clone(), 1e-14, 10_000)
        .ok_or_else(|| Error::Solver("complex Schur decomposition did not converge".into()))?;
    let (_, t) = schur.unpack();
    Ok((0..t.nrows()).map(|k| t[(k, k)]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_process, standard_representatives, PrefactorMode};
    use crate::model::assemble_generator;
    use crate::symgroup::{generate_group, trivial_group, Word, DEFAULT_GROUP_LIMIT};

    fn lattice_system(n: usize, gamma: f64) -> SymmetricSystem<f64> {
        let m = build_process(n, gamma, PrefactorMode::Unit, false).unwrap();
        let g = generate_group(&m.generators, m.structure.clone(), DEFAULT_GROUP_LIMIT).unwrap();
        let reps: Vec<usize> = standard_representatives(n)
            .unwrap()
            .iter()
            .map(|l| m.state(l).unwrap())
            .collect();
        SymmetricSystem::new(m.spec, g, None, Some(&reps)).unwrap()
    }

    fn n4() -> SymmetricSystem<f64> {
        lattice_system(4, 0.1)
    }

    fn close(a: Complex64, b: f64) -> bool {
        (a - b).norm() < 1e-10
    }

    #[test]
    fn projectors_partition_the_identity() {
        let s = n4();
        let l = assemble_generator(&s.spec, Some(0.1)).unwrap().matrix;
        let mut sum = DMatrix::from_element(6, 6, ZERO);
        for p in 0..s.table.irreps.len() {
            let pr = projector(&s.group, &s.table, p);
            assert!(pr.idempotency_residual() < 1e-10);
            assert!(pr.hermiticity_residual() < 1e-10);
            assert!(pr.commutation_residual(&l) < 1e-10);
            let t = pr.trace();
            assert!((t - s.active.total(p) as f64).abs() < 1e-10);
            for (i, o) in s.orbits.orbits.iter().enumerate() {
                assert!((pr.orbit_trace(o) - s.active.alpha_d(p, i) as f64).abs() < 1e-10);
            }
            sum += pr.matrix;
        }
        assert!((sum - DMatrix::identity(6, 6)).norm() < 1e-10);
    }

    #[test]
    fn trivial_group_projector_is_identity() {
        let g = trivial_group(3);
        let t = character_table(&g).unwrap();
        let p = projector(&g, &t, 0);
        assert!((p.matrix - DMatrix::identity(3, 3)).norm() < 1e-15);
    }

    #[test]
    fn n4_active_orbit_grid() {
        let s = n4();
        let grid: Vec<(String, Vec<usize>)> = (0..s.table.irreps.len())
            .map(|p| {
                (
                    s.active.labels[p].clone(),
                    vec![s.active.alpha_d(p, 0), s.active.alpha_d(p, 1)],
                )
            })
            .collect();
        let expect = [
            ("+++", [1, 1]),
            ("++-", [0, 0]),
            ("+-+", [0, 0]),
            ("+--", [0, 0]),
            ("-++", [1, 0]),
            ("-+-", [0, 0]),
            ("--+", [0, 0]),
            ("---", [0, 1]),
            ("1,+", [0, 0]),
            ("1,-", [2, 0]),
        ];
        assert_eq!(grid.len(), expect.len());
        for ((l, row), (el, erow)) in grid.iter().zip(expect.iter()) {
            assert_eq!(l, el);
            assert_eq!(row.as_slice(), erow.as_slice());
        }
        assert_eq!(s.active.grand_total(), 6);
        let js = s.active.to_json(&s.orbit_names());
        assert_eq!(js["total"], 6);
    }

    /// Basis vectors listed along the orbit `a, r(a), r^2(a), r^3(a)`.
    fn along_rotation(s: &SymmetricSystem<f64>, v: &DVector<Complex64>) -> Vec<Complex64> {
        let a = s.orbits.orbits[0].representative;
        let r = s.group.element_of_word(Word { r: 1, s: 0, c: 0 }).unwrap();
        let mut out = Vec::new();
        let mut x = a;
        for _ in 0..4 {
            out.push(v[x]);
            x = s.group.apply(r, x);
        }
        out
    }

    #[test]
    fn n4_basis_vectors() {
        let s = n4();
        let p = s.table.find("-++").unwrap();
        let b = s.basis(p, &BasisChoice::greedy()).unwrap();
        assert_eq!(b.len(), 1);
        let u = along_rotation(&s, &b.vectors[0].components);
        for (z, e) in u.iter().zip([1.0, -1.0, 1.0, -1.0]) {
            assert!(close(*z, e));
        }
        let p = s.table.find("1,-").unwrap();
        let b = s.basis(p, &BasisChoice::greedy()).unwrap();
        assert_eq!(b.len(), 2);
        let u0 = along_rotation(&s, &b.vectors[0].components);
        let u1 = along_rotation(&s, &b.vectors[1].components);
        for (z, e) in u0.iter().zip([2.0, 0.0, -2.0, 0.0]) {
            assert!(close(*z, e));
        }
        for (z, e) in u1.iter().zip([0.0, 2.0, 0.0, -2.0]) {
            assert!(close(*z, e));
        }
        let o = &s.orbits.orbits[0];
        assert!(close(
            orbit_inner(o, &b.vectors[0].components, &b.vectors[0].components),
            2.0
        ));
        let t = s.basis(s.table.trivial(), &BasisChoice::greedy()).unwrap();
        for v in &t.vectors {
            for c in 0..6 {
                let inside = s.orbits.orbit_of[c] == v.orbit;
                assert!(close(v.components[c], if inside { 1.0 } else { 0.0 }));
            }
        }
    }

    #[test]
    fn basis_vector_matches_projector() {
        let s = n4();
        for p in 0..s.table.irreps.len() {
            let pr = projector(&s.group, &s.table, p);
            for (i, o) in s.orbits.orbits.iter().enumerate() {
                for &c in &o.members {
                    let u = basis_vector(&s.group, &s.table.irreps[p], o, c);
                    let mut e = DVector::from_element(6, ZERO);
                    e[c] = Complex64::new(1.0, 0.0);
                    let scale = s.group.order() as f64 / o.stabilizer.len() as f64;
                    let v = &pr.matrix * e * Complex64::new(scale, 0.0);
                    assert!((u - v).norm() < 1e-12, "irrep {p} orbit {i}");
                }
            }
        }
    }

    #[test]
    fn dependent_choice_is_rejected() {
        let s = n4();
        let p = s.table.find("1,-").unwrap();
        let r2 = s.group.element_of_word(Word { r: 2, s: 0, c: 0 }).unwrap();
        let choice = BasisChoice::greedy().with(0, vec![0, r2]);
        assert!(matches!(s.basis(p, &choice), Err(Error::RepresentativeChoice(_))));
    }

    fn leading_scalar(m: &ReducedMatrix<f64>, r: usize, c: usize) -> (f64, Complex64) {
        let (h, mat) = m.exact.block_leading(&[r], &[c]).unwrap();
        (h, mat[(0, 0)])
    }

    #[test]
    fn n4_reduced_matrices() {
        let s = n4();
        let h = |a: &str, b: &str| {
            let ia = s.spec.label_index(a).unwrap();
            let ib = s.spec.label_index(b).unwrap();
            s.spec.exponent(ia, s.spec.edge_index(ia, ib).unwrap())
        };
        let (hab, hba, haa) = (h("++--", "+-+-"), h("+-+-", "++--"), h("++--", "+--+"));
        let t = s.reduced_trivial().unwrap();
        assert_eq!(t.len(), 2);
        let (e, z) = leading_scalar(&t, 0, 1);
        assert!(e.ties(&hab) && close(z, 2.0));
        let (e, z) = leading_scalar(&t, 0, 0);
        assert!(e.ties(&hab) && close(z, -2.0));
        let (e, z) = leading_scalar(&t, 1, 0);
        assert!(e.ties(&hba) && close(z, 4.0));
        let (e, z) = leading_scalar(&t, 1, 1);
        assert!(e.ties(&hba) && close(z, -4.0));

        let r = s.reduced_dim1(s.table.find("-++").unwrap()).unwrap();
        let entry = r.exact.get(0, 0);
        assert_eq!(entry.terms().len(), 2);
        assert!(entry.terms()[0].1.ties(&haa) && close(entry.terms()[0].0, -4.0));
        assert!(entry.terms()[1].1.ties(&hab) && close(entry.terms()[1].0, -2.0));
        let r = s.reduced_dim1(s.table.find("---").unwrap()).unwrap();
        let (e, z) = leading_scalar(&r, 0, 0);
        assert!(e.ties(&hba) && close(z, -4.0));

        let r = s
            .reduced_dimd(s.table.find("1,-").unwrap(), &BasisChoice::greedy())
            .unwrap();
        let v = r.exact.value(0.1);
        let expect = -2.0 * (-haa / 0.1f64).exp() - 2.0 * (-hab / 0.1f64).exp();
        assert!((v - DMatrix::identity(2, 2) * Complex64::new(expect, 0.0)).norm() < 1e-14);
        let b = r.block(0, 0).unwrap();
        assert!((&b.m - DMatrix::identity(2, 2) * Complex64::new(-2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn trivial_through_dim1_path_matches() {
        let s = n4();
        let p = s.table.trivial();
        let a = s.reduced_trivial().unwrap();
        let b = s.reduced_dim1(p).unwrap();
        assert_eq!(a.exact, b.exact);
    }

    #[test]
    fn trivial_group_reduction_is_the_generator() {
        let spec = ProcessSpec::with_unit_mass(
            vec![0.0, 0.3, 0.1, 0.5],
            vec![
                Edge::new(0, 1, 1.0, 1.0),
                Edge::new(1, 2, 2.0, 0.7),
                Edge::new(2, 3, 0.5, 1.25),
                Edge::new(0, 3, 1.5, 1.35),
            ],
            0.1,
        );
        let sys = SymmetricSystem::new(spec.clone(), trivial_group(4), None, None).unwrap();
        let t = sys.reduced_trivial().unwrap();
        let l = assemble_generator(&spec, Some(0.07)).unwrap().matrix;
        let v = t.real_value(0.07).unwrap();
        assert!((v - l).norm() < 1e-14);
    }

    #[test]
    fn restricted_spectra_partition_the_generator_spectrum() {
        let s = n4();
        let eps = 0.1;
        let mut all: Vec<f64> = Vec::new();
        for p in 0..s.table.irreps.len() {
            if s.active.total(p) == 0 {
                continue;
            }
            let r = s.reduce(s.basis(p, &BasisChoice::greedy()).unwrap()).unwrap();
            for z in r.eigenvalues(eps).unwrap() {
                assert!(z.im.abs() < 1e-10);
                all.push(z.re);
            }
        }
        let l = assemble_generator(&s.spec, Some(eps)).unwrap().matrix;
        let mut exact: Vec<f64> = complex_eigenvalues(&l.map(|x| Complex64::new(x, 0.0)))
            .unwrap()
            .iter()
            .map(|z| z.re)
            .collect();
        exact.sort_by(|a, b| a.partial_cmp(b).unwrap());
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(all.len(), 6);
        for (a, b) in all.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn character_blocks_match_exact_route_on_n4() {
        let s = n4();
        for p in 0..s.table.irreps.len() {
            if s.active.total(p) == 0 {
                continue;
            }
            let basis = s.basis(p, &BasisChoice::greedy()).unwrap();
            let r = s.reduce(basis.clone()).unwrap();
            for (bi, &i) in r.orbits.iter().enumerate() {
                for (bj, &j) in r.orbits.iter().enumerate() {
                    if i != j && s.links[i][j].is_none() {
                        continue;
                    }
                    let (c, h, m) = s.character_block(&basis, i, j).unwrap();
                    let rows: Vec<usize> = r.range(bi).collect();
                    let cols: Vec<usize> = r.range(bj).collect();
                    let (he, me) = r.exact.block_leading(&rows, &cols).unwrap();
                    assert!(h.ties(&he), "irrep {} block ({i},{j})", r.irrep);
                    assert!(
                        (me - m * Complex64::new(c, 0.0)).norm() < 1e-10,
                        "irrep {} block ({i},{j})",
                        r.irrep
                    );
                }
            }
        }
    }

    #[test]
    fn orbit_spec_has_symmetry_factors() {
        let s = n4();
        let o = s.orbit_spec();
        assert_eq!(o.len(), 2);
        assert_eq!(o.mass, vec![0.25, 0.125]);
        assert_eq!(o.edges.len(), 1);
        assert_eq!(o.edges[0].coupling, 0.5);
    }

    #[test]
    fn augmented_system_for_sign_irrep() {
        let s = n4();
        let p = s.table.find("-++").unwrap();
        let (active, sys) = s.augmented_system(p).unwrap();
        assert_eq!(active, vec![0]);
        let mut rates: Vec<(f64, f64)> = sys.rates_from(0).map(|(_, r)| (r.prefactor, r.exponent)).collect();
        rates.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        assert_eq!(rates.len(), 1);
        assert_eq!(rates[0].0, 4.0);
    }
}
