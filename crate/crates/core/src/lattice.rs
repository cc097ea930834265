//! Ring of `N` coupled double wells constrained to zero mean:
//! `V(x) = sum U(x_i) + (gamma/4) sum (x_{i+1} - x_i)^2`, `U(x) = x^4/4 - x^2/2`,
//! on the plane `sum x_i = 0`.
//!
//! Critical points at `gamma = 0` take three levels; they are continued to
//! `gamma > 0` by Newton's method on the Lagrange system, and minima are
//! connected by descending from each index-1 saddle.

use crate::error::{Error, Result};
use crate::model::{Edge, ProcessSpec};
use crate::symgroup::{Permutation, Structure};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use std::collections::HashMap;

/// Level multiplicities `(n0, n1, n2)`, `n0 <= n1 <= n2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Triple {
    pub n: [usize; 3],
}

impl Triple {
    pub fn new(n0: usize, n1: usize, n2: usize) -> Triple {
        Triple { n: [n0, n1, n2] }
    }

    pub fn total(&self) -> usize {
        self.n.iter().sum()
    }

    pub fn r(&self) -> i64 {
        let [a, b, c] = self.n.map(|v| v as i64);
        a * a + b * b + c * c - a * b - a * c - b * c
    }

    /// `sign * (n2 - n1, n0 - n2, n1 - n0) / sqrt(R)`.
    pub fn levels(&self, sign: f64) -> [f64; 3] {
        let [a, b, c] = self.n.map(|v| v as f64);
        let s = sign / (self.r() as f64).sqrt();
        [s * (c - b), s * (a - c), s * (b - a)]
    }

    /// Lagrange multiplier `alpha0 alpha1 alpha2`.
    pub fn multiplier(&self, sign: f64) -> f64 {
        let l = self.levels(sign);
        l[0] * l[1] * l[2]
    }
}

/// Every ordered triple summing to `n`; the degenerate case `R = 0` is
/// excluded.
pub fn all_triples(n: usize) -> Vec<Triple> {
    let mut out = Vec::new();
    for n0 in 0..=n {
        for n1 in n0..=n {
            if n0 + n1 > n {
                break;
            }
            let n2 = n - n0 - n1;
            if n2 >= n1 {
                let t = Triple::new(n0, n1, n2);
                if t.r() > 0 {
                    out.push(t);
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticalPoint {
    pub x: Vec<f64>,
    pub gamma: f64,
    pub multiplier: f64,
    pub value: f64,
    pub index: usize,
    pub triple: Triple,
    /// Level pattern at `gamma = 0`, e.g. `++--` or `AAbbbAbb`.
    pub label: String,
}

pub fn potential(x: &[f64], gamma: f64) -> f64 {
    let n = x.len();
    let on_site: f64 = x.iter().map(|&v| 0.25 * v.powi(4) - 0.5 * v * v).sum();
    let coupling: f64 = (0..n).map(|i| (x[(i + 1) % n] - x[i]).powi(2)).sum();
    on_site + 0.25 * gamma * coupling
}

pub fn gradient(x: &[f64], gamma: f64) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let (prev, next) = (x[(i + n - 1) % n], x[(i + 1) % n]);
            x[i].powi(3) - x[i] + 0.5 * gamma * (2.0 * x[i] - prev - next)
        })
        .collect()
}

pub fn hessian(x: &[f64], gamma: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        h[(i, i)] += 3.0 * x[i] * x[i] - 1.0 + gamma;
        h[(i, (i + 1) % n)] -= 0.5 * gamma;
        h[(i, (i + n - 1) % n)] -= 0.5 * gamma;
    }
    h
}

/// Eigenpairs of the Hessian restricted to the plane `sum x_i = 0`,
/// eigenvalues ascending, eigenvectors as columns in ambient coordinates.
pub fn constrained_hessian(x: &[f64], gamma: f64) -> (Vec<f64>, Vec<DVector<f64>>) {
    let n = x.len();
    let p = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    let m = &p * hessian(x, gamma) * &p;
    let eig = SymmetricEigen::new(m);
    let ones = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let normal = (0..n)
        .max_by(|&a, &b| {
            let oa = eig.eigenvectors.column(a).dot(&ones).abs();
            let ob = eig.eigenvectors.column(b).dot(&ones).abs();
            oa.total_cmp(&ob)
        })
        .expect("nonempty");
    let mut pairs: Vec<(f64, DVector<f64>)> = (0..n)
        .filter(|&k| k != normal)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors.column(k).into_owned()))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

fn morse_index(x: &[f64], gamma: f64) -> Result<usize> {
    let (vals, _) = constrained_hessian(x, gamma);
    if vals.iter().any(|v| v.abs() < 1e-8) {
        return Err(Error::Continuation(format!(
            "degenerate constrained Hessian at gamma = {gamma}"
        )));
    }
    Ok(vals.iter().filter(|&&v| v < 0.0).count())
}

/// Label character of a level at `gamma = 0`.
fn level_char(level: usize, value: f64) -> char {
    if value.abs() < 1e-12 {
        return 'o';
    }
    let pos = value > 0.0;
    let pm = (value.abs() - 1.0).abs() < 1e-12;
    let c = match (pm, level) {
        (true, _) => return if pos { '+' } else { '-' },
        (false, 0) => 'z',
        (false, 1) => 'a',
        _ => 'b',
    };
    if pos {
        c.to_ascii_uppercase()
    } else {
        c
    }
}

/// Next lexicographic permutation of a multiset.
fn next_permutation(v: &mut [usize]) -> bool {
    let Some(i) = (1..v.len()).rev().find(|&i| v[i - 1] < v[i]) else {
        return false;
    };
    let j = (i..v.len()).rev().find(|&j| v[j] > v[i - 1]).expect("pivot");
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// All critical points of triple `t` at `gamma = 0`, both sign branches,
/// duplicates removed.
pub fn triple_points(t: &Triple) -> Vec<CriticalPoint> {
    let mut out: Vec<CriticalPoint> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for sign in [1.0, -1.0] {
        let levels = t.levels(sign);
        let mut pattern: Vec<usize> = (0..3).flat_map(|j| std::iter::repeat_n(j, t.n[j])).collect();
        loop {
            let x: Vec<f64> = pattern.iter().map(|&j| levels[j]).collect();
            let label: String = pattern.iter().map(|&j| level_char(j, levels[j])).collect();
            if seen.insert(label.clone()) {
                out.push(CriticalPoint {
                    value: potential(&x, 0.0),
                    index: morse_index(&x, 0.0).unwrap_or(usize::MAX),
                    x,
                    gamma: 0.0,
                    multiplier: t.multiplier(sign),
                    triple: *t,
                    label,
                });
            }
            if !next_permutation(&mut pattern) {
                break;
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct Gamma0Points {
    pub minima: Vec<CriticalPoint>,
    pub saddles: Vec<CriticalPoint>,
}

/// Minima from triples `(0, n1, N - n1)` and index-1 saddles from
/// `(1, n1, N - n1 - 1)` with `3 n1 > N`; `(0,2,2)` and `(1,1,2)` for `N = 4`.
pub fn enumerate_gamma0(n: usize) -> Result<Gamma0Points> {
    if n < 4 || n.is_multiple_of(3) {
        return Err(Error::Unsupported(format!(
            "N = {n}: need N >= 4 and N not a multiple of 3"
        )));
    }
    let (min_triples, saddle_triples) = if n == 4 {
        (vec![Triple::new(0, 2, 2)], vec![Triple::new(1, 1, 2)])
    } else {
        let mins = (0..=n)
            .filter(|&n1| 3 * n1 > n && n1 <= n - n1)
            .map(|n1| Triple::new(0, n1, n - n1))
            .collect();
        let sads = (1..n)
            .filter(|&n1| 3 * n1 > n && n1 < n && n1 < n - n1)
            .map(|n1| Triple::new(1, n1, n - n1 - 1))
            .collect();
        (mins, sads)
    };
    let collect = |ts: Vec<Triple>| ts.iter().flat_map(triple_points).collect::<Vec<_>>();
    Ok(Gamma0Points {
        minima: collect(min_triples),
        saddles: collect(saddle_triples),
    })
}

/// Default upper bound on `gamma` below which continuation is trusted.
pub fn default_gamma_bound(n: usize) -> f64 {
    if n == 4 {
        0.3
    } else {
        0.1
    }
}

/// Newton solve of `grad V - lambda 1 = 0`, `sum x = 0` at fixed `gamma`.
fn newton(x0: &[f64], lambda0: f64, gamma: f64) -> Option<(Vec<f64>, f64)> {
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut lambda = lambda0;
    for _ in 0..60 {
        let g = gradient(x.as_slice(), gamma);
        let mut f = DVector::zeros(n + 1);
        for i in 0..n {
            f[i] = g[i] - lambda;
        }
        f[n] = x.sum();
        if f.amax() < 1e-14 {
            return Some((x.as_slice().to_vec(), lambda));
        }
        let h = hessian(x.as_slice(), gamma);
        let mut j = DMatrix::zeros(n + 1, n + 1);
        j.view_mut((0, 0), (n, n)).copy_from(&h);
        for i in 0..n {
            j[(i, n)] = -1.0;
            j[(n, i)] = 1.0;
        }
        let step = j.lu().solve(&f)?;
        for i in 0..n {
            x[i] -= step[i];
        }
        lambda -= step[n];
        if !x.iter().all(|v| v.is_finite()) {
            return None;
        }
    }
    let g = gradient(x.as_slice(), gamma);
    let res = g.iter().map(|v| (v - lambda).abs()).fold(x.sum().abs(), f64::max);
    (res < 1e-11).then(|| (x.as_slice().to_vec(), lambda))
}

/// Continues a `gamma = 0` critical point to `target` in `steps` equal
/// increments, keeping the Morse index fixed.
pub fn continue_gamma(seed: &CriticalPoint, target: f64, steps: usize) -> Result<CriticalPoint> {
    if target == seed.gamma {
        return Ok(seed.clone());
    }
    let steps = steps.max(1);
    let index0 = morse_index(&seed.x, seed.gamma)?;
    let mut x = seed.x.clone();
    let mut lambda = seed.multiplier;
    let mut last_good = seed.gamma;
    for k in 1..=steps {
        let gamma = seed.gamma + (target - seed.gamma) * k as f64 / steps as f64;
        let (nx, nl) = newton(&x, lambda, gamma).ok_or_else(|| {
            Error::Continuation(format!(
                "Newton diverged for {}; last good gamma {last_good}",
                seed.label
            ))
        })?;
        let idx = morse_index(&nx, gamma).map_err(|_| {
            Error::Continuation(format!(
                "degenerate Hessian for {}; last good gamma {last_good}",
                seed.label
            ))
        })?;
        if idx != index0 {
            return Err(Error::Continuation(format!(
                "Morse index of {} changed from {index0} to {idx}; last good gamma {last_good}",
                seed.label
            )));
        }
        x = nx;
        lambda = nl;
        last_good = gamma;
    }
    Ok(CriticalPoint {
        value: potential(&x, target),
        x,
        gamma: target,
        multiplier: lambda,
        index: index0,
        triple: seed.triple,
        label: seed.label.clone(),
    })
}

/// `r(x)_i = x_{i+1}`, `s` reverses, `c` negates; applied to labels.
pub fn transform_label(label: &str, word: (usize, usize, usize)) -> String {
    let mut chars: Vec<char> = label.chars().collect();
    let n = chars.len();
    if word.2 % 2 == 1 {
        chars = chars.iter().map(|&c| negate_char(c)).collect();
    }
    if word.1 % 2 == 1 {
        chars.reverse();
    }
    chars.rotate_left(word.0 % n.max(1));
    chars.into_iter().collect()
}

fn negate_char(c: char) -> char {
    match c {
        '+' => '-',
        '-' => '+',
        'o' => 'o',
        c if c.is_ascii_uppercase() => c.to_ascii_lowercase(),
        c => c.to_ascii_uppercase(),
    }
}

/// How couplings and masses are assigned.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrefactorMode {
    /// All couplings and masses equal to 1.
    Unit,
    /// `m_i = 1/sqrt(det H_i)`, `c_e = |mu_e| / (2 pi sqrt(|det H_e|))` from
    /// the constrained Hessians (experimental).
    Hessian,
}

impl std::str::FromStr for PrefactorMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(PrefactorMode::Unit),
            "hessian" => Ok(PrefactorMode::Hessian),
            _ => Err(Error::Parse(format!("unknown prefactor mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LatticeModel {
    pub n: usize,
    pub gamma: f64,
    pub spec: ProcessSpec<f64>,
    pub minima: Vec<CriticalPoint>,
    pub saddles: Vec<CriticalPoint>,
    /// Saddle index behind each edge of `spec`.
    pub edge_saddle: Vec<usize>,
    /// `r`, `s`, `c` as permutations of the minima.
    pub generators: Vec<Permutation>,
    pub structure: Structure,
}

impl LatticeModel {
    pub fn state(&self, label: &str) -> Option<usize> {
        self.spec.label_index(label)
    }
}

/// Projected gradient descent from `x` until the gradient is negligible.
fn descend(x0: &[f64], gamma: f64) -> Vec<f64> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let step = 0.1;
    for _ in 0..200_000 {
        let g = gradient(&x, gamma);
        let mean = g.iter().sum::<f64>() / n as f64;
        let mut norm: f64 = 0.0;
        for i in 0..n {
            let d = g[i] - mean;
            x[i] -= step * d;
            norm = norm.max(d.abs());
        }
        if norm < 1e-11 {
            break;
        }
    }
    x
}

fn nearest(minima: &[CriticalPoint], x: &[f64]) -> Option<usize> {
    minima
        .iter()
        .enumerate()
        .map(|(k, m)| (k, m.x.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()))
        .filter(|(_, d)| *d < 1e-4)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(k, _)| k)
}

fn det_plane(x: &[f64], gamma: f64) -> (f64, f64) {
    let (vals, _) = constrained_hessian(x, gamma);
    (vals.iter().product(), vals[0])
}

/// Builds the minima/saddle graph at `gamma`, attaching the dihedral-times-Z2
/// action. `allow_large_gamma` lifts the default bound.
pub fn build_process(n: usize, gamma: f64, mode: PrefactorMode, allow_large_gamma: bool) -> Result<LatticeModel> {
    if gamma < 0.0 || (!allow_large_gamma && gamma > default_gamma_bound(n) + 1e-15) {
        return Err(Error::Precondition(format!(
            "gamma = {gamma} outside the default range [0, {}]",
            default_gamma_bound(n)
        )));
    }
    let points = enumerate_gamma0(n)?;
    let steps = ((gamma / 0.01).ceil() as usize).max(1);
    let minima: Vec<CriticalPoint> = points
        .minima
        .par_iter()
        .map(|p| continue_gamma(p, gamma, steps))
        .collect::<Result<_>>()?;
    let saddles: Vec<CriticalPoint> = points
        .saddles
        .par_iter()
        .map(|p| continue_gamma(p, gamma, steps))
        .collect::<Result<_>>()?;
    if let Some(p) = minima.iter().find(|p| p.index != 0) {
        return Err(Error::Continuation(format!("{} is not a minimum", p.label)));
    }
    if let Some(p) = saddles.iter().find(|p| p.index != 1) {
        return Err(Error::Continuation(format!("{} is not an index-1 saddle", p.label)));
    }

    let ends: Vec<(usize, usize)> = saddles
        .par_iter()
        .map(|z| {
            let (_, vecs) = constrained_hessian(&z.x, gamma);
            let v = &vecs[0];
            let mut found = Vec::new();
            for sign in [1.0, -1.0] {
                let start: Vec<f64> = z.x.iter().zip(v.iter()).map(|(a, b)| a + sign * 1e-4 * b).collect();
                let end = descend(&start, gamma);
                found.push(nearest(&minima, &end).ok_or_else(|| {
                    Error::Connectivity(format!("descent from saddle {} did not reach a minimum", z.label))
                })?);
            }
            if found[0] == found[1] {
                return Err(Error::Connectivity(format!(
                    "both descents from saddle {} reach {}",
                    z.label, minima[found[0]].label
                )));
            }
            Ok((found[0].min(found[1]), found[0].max(found[1])))
        })
        .collect::<Result<_>>()?;

    let mass: Vec<f64> = match mode {
        PrefactorMode::Unit => vec![1.0; minima.len()],
        PrefactorMode::Hessian => minima.iter().map(|p| 1.0 / det_plane(&p.x, gamma).0.sqrt()).collect(),
    };
    let coupling = |z: &CriticalPoint| -> f64 {
        match mode {
            PrefactorMode::Unit => 1.0,
            PrefactorMode::Hessian => {
                let (det, mu) = det_plane(&z.x, gamma);
                mu.abs() / (2.0 * std::f64::consts::PI * det.abs().sqrt())
            }
        }
    };

    // Parallel saddles between one pair: equal heights add, otherwise the
    // lower one is kept.
    let mut by_pair: HashMap<(usize, usize), (Edge<f64>, usize)> = HashMap::new();
    let mut pair_order = Vec::new();
    for (k, &(a, b)) in ends.iter().enumerate() {
        let e = Edge::new(a, b, coupling(&saddles[k]), saddles[k].value);
        match by_pair.get_mut(&(a, b)) {
            None => {
                pair_order.push((a, b));
                by_pair.insert((a, b), (e, k));
            }
            Some((old, idx)) => {
                if (old.saddle - e.saddle).abs() <= 1e-9 {
                    old.coupling += e.coupling;
                } else if e.saddle < old.saddle {
                    *old = e;
                    *idx = k;
                }
            }
        }
    }
    let mut edges = Vec::new();
    let mut edge_saddle = Vec::new();
    for pair in pair_order {
        let (e, k) = by_pair.remove(&pair).expect("pair present");
        edges.push(e);
        edge_saddle.push(k);
    }

    let labels: Vec<String> = minima.iter().map(|p| p.label.clone()).collect();
    let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(k, l)| (l.as_str(), k)).collect();
    let perm = |word| -> Result<Permutation> {
        labels
            .iter()
            .map(|l| {
                index
                    .get(transform_label(l, word).as_str())
                    .copied()
                    .ok_or_else(|| Error::Connectivity(format!("image of {l} is not a minimum")))
            })
            .collect()
    };
    let generators = vec![perm((1, 0, 0))?, perm((0, 1, 0))?, perm((0, 0, 1))?];
    let spec = ProcessSpec {
        labels,
        potential: minima.iter().map(|p| p.value).collect(),
        mass,
        edges,
        epsilon: 0.05,
    };
    Ok(LatticeModel {
        n,
        gamma,
        spec,
        minima,
        saddles,
        edge_saddle,
        generators,
        structure: Structure::DihedralTimesZ2(n),
    })
}

/// Orbit representatives in the customary order: `N = 4` gives `a`, `b`;
/// `N = 8` gives the twelve orbits with `+-` orbits first.
pub fn standard_representatives(n: usize) -> Option<Vec<&'static str>> {
    match n {
        4 => Some(vec!["++--", "+-+-"]),
        8 => Some(vec![
            "++++----", "++--++--", "+++--+--", "+---+++-", "+--+-++-", "++-+-+--", "+-+-+-+-", "AAbbbAbb", "AAAbbbbb",
            "bAbbAbAb", "bAbAbbbA", "AbAAbbbb",
        ]),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triple_levels_solve_the_constraints() {
        for t in all_triples(8) {
            for sign in [1.0, -1.0] {
                let a = t.levels(sign);
                let weighted: f64 = (0..3).map(|j| t.n[j] as f64 * a[j]).sum();
                assert!(weighted.abs() < 1e-12);
                assert!((a[0] + a[1] + a[2]).abs() < 1e-12);
                assert!((a[0] * a[1] + a[0] * a[2] + a[1] * a[2] + 1.0).abs() < 1e-12);
                for v in a {
                    assert!((v.powi(3) - v - t.multiplier(sign)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn n4_counts() {
        let p = enumerate_gamma0(4).unwrap();
        assert_eq!((p.minima.len(), p.saddles.len()), (6, 12));
        assert!(p.minima.iter().all(|m| m.index == 0));
        assert!(p.saddles.iter().all(|m| m.index == 1));
    }

    #[test]
    fn multiples_of_three_are_rejected() {
        assert!(matches!(enumerate_gamma0(6), Err(Error::Unsupported(_))));
    }

    /// Every level assignment of every triple, classified by its own Hessian,
    /// must agree with the triple-based enumeration.
    #[test]
    fn n5_enumeration_matches_brute_force() {
        let p = enumerate_gamma0(5).unwrap();
        assert_eq!(p.minima.len(), 20);
        let all: Vec<CriticalPoint> = all_triples(5).iter().flat_map(triple_points).collect();
        let minima: Vec<&CriticalPoint> = all.iter().filter(|c| c.index == 0).collect();
        let saddles: Vec<&CriticalPoint> = all.iter().filter(|c| c.index == 1).collect();
        assert_eq!(minima.len(), p.minima.len());
        assert_eq!(saddles.len(), p.saddles.len());
        for c in &all {
            let g = gradient(&c.x, 0.0);
            assert!(g.iter().all(|v| (v - c.multiplier).abs() < 1e-12));
        }
    }

    #[test]
    fn zero_gamma_continuation_is_identity() {
        let p = enumerate_gamma0(4).unwrap();
        let c = continue_gamma(&p.minima[0], 0.0, 5).unwrap();
        assert_eq!(c, p.minima[0]);
    }

    #[test]
    fn label_transport() {
        assert_eq!(transform_label("++--", (1, 0, 0)), "+--+");
        assert_eq!(transform_label("++--", (0, 1, 0)), "--++");
        assert_eq!(transform_label("AAbbbAbb", (0, 0, 1)), "aaBBBaBB");
    }

    #[test]
    fn n4_graph_is_an_octahedron() {
        let m = build_process(4, 0.1, PrefactorMode::Unit, false).unwrap();
        assert_eq!(m.spec.len(), 6);
        assert_eq!(m.spec.edges.len(), 12);
        let mut degree = [0; 6];
        for e in &m.spec.edges {
            degree[e.a] += 1;
            degree[e.b] += 1;
        }
        assert!(degree.iter().all(|&d| d == 4));
    }
}
