//! Symmetry-adapted spectrum assembly and numerical oracles: dense
//! diagonalisation, block triangularisation, hitting-time solves and
//! kinetic Monte Carlo.

use crate::asymptotic::{EigenEstimate, Mechanism};
use crate::equivariant::{complex_eigenvalues, BasisChoice, ReducedMatrix, SymmetricSystem};
use crate::error::{Error, Result};
use crate::hierarchy::{metastable_order, ExponentSystem, MetastableOrder, Target};
use crate::model::{assemble_generator, Generator, ProcessSpec};
use crate::scalar::{DoubleDouble, Real, Scalar};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;
use std::fmt::Write as _;

// ---------------------------------------------------------------------------
// Dense oracle

/// Off-diagonal part of `D^{1/2} L D^{-1/2}` and the diagonal of `L`.
fn symmetrized<R: Real>(gen: &Generator) -> Result<Vec<Vec<R>>> {
    let n = gen.len();
    let defect = gen.reversibility_defect()?;
    if !(defect <= 1e-8) {
        return Err(Error::NotReversible(format!("symmetrization residual {defect:.3e}")));
    }
    let mut a = vec![vec![R::zero(); n]; n];
    for i in 0..n {
        let mut row = R::zero();
        for j in (0..n).filter(|&j| j != i) {
            let (lij, lji) = (gen.matrix[(i, j)], gen.matrix[(j, i)]);
            if lij < 0.0 {
                return Err(Error::Precondition(format!("negative rate {i} -> {j}")));
            }
            row = row + R::from_f64(lij);
            if lij > 0.0 {
                a[i][j] = (R::from_f64(lij) * R::from_f64(lji)).sqrt();
            }
        }
        a[i][i] = -row;
    }
    Ok(a)
}

fn check_top_eigenvalue(values: &[f64], norm: f64) -> Result<()> {
    if let Some(&top) = values.first() {
        if top.abs() > 1e-12 * norm.max(f64::MIN_POSITIVE) {
            return Err(Error::Solver(format!("largest eigenvalue {top:.3e} is not zero")));
        }
    }
    Ok(())
}

/// Eigenvalues of a reversible generator in decreasing order.
pub fn exact_spectrum(gen: &Generator) -> Result<Vec<f64>> {
    let a = symmetrized::<f64>(gen)?;
    let n = a.len();
    let m = DMatrix::from_fn(n, n, |i, j| a[i][j]);
    let mut values: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
    values.sort_by(|x, y| y.total_cmp(x));
    check_top_eigenvalue(&values, gen.norm_inf())?;
    Ok(values)
}

/// [`exact_spectrum`] via cyclic Jacobi in precision `R`, accurate to high
/// relative precision on the small eigenvalues.
pub fn exact_spectrum_precise<R: Real>(gen: &Generator) -> Result<Vec<f64>> {
    let a = symmetrized::<R>(gen)?;
    let mut values: Vec<f64> = jacobi_eigenvalues(a)?.into_iter().map(|v| v.as_f64()).collect();
    values.sort_by(|x, y| y.total_cmp(x));
    check_top_eigenvalue(&values, gen.norm_inf())?;
    Ok(values)
}

/// Eigenvalues of a symmetric matrix; off-diagonal entries are dropped once
/// negligible against the geometric mean of their diagonal pair.
pub fn jacobi_eigenvalues<R: Real>(mut a: Vec<Vec<R>>) -> Result<Vec<R>> {
    let n = a.len();
    let eps = R::epsilon();
    let half = R::from_f64(0.5);
    for _ in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p][q];
                if apq == R::zero() {
                    continue;
                }
                if apq.abs() <= eps * (a[p][p] * a[q][q]).abs().sqrt() {
                    a[p][q] = R::zero();
                    a[q][p] = R::zero();
                    continue;
                }
                rotated = true;
                let theta = (a[q][q] - a[p][p]) * half / apq;
                let t = if theta.abs() > R::from_f64(1e100) {
                    half / theta
                } else {
                    let t = R::one() / (theta.abs() + (R::one() + theta * theta).sqrt());
                    if theta < R::zero() {
                        -t
                    } else {
                        t
                    }
                };
                let c = R::one() / (R::one() + t * t).sqrt();
                let s = t * c;
                let tau = s / (R::one() + c);
                a[p][p] = a[p][p] - t * apq;
                a[q][q] = a[q][q] + t * apq;
                a[p][q] = R::zero();
                a[q][p] = R::zero();
                for r in (0..n).filter(|&r| r != p && r != q) {
                    let g = a[r][p];
                    let h = a[r][q];
                    let gp = g - s * (h + g * tau);
                    let hq = h + s * (g - h * tau);
                    a[r][p] = gp;
                    a[p][r] = gp;
                    a[r][q] = hq;
                    a[q][r] = hq;
                }
            }
        }
        if !rotated {
            return Ok((0..n).map(|i| a[i][i]).collect());
        }
    }
    Err(Error::Solver("Jacobi iteration did not converge".into()))
}

// ---------------------------------------------------------------------------
// Block triangularisation

/// One elimination `L -> S^{-1} L S` removing the last state of the block.
#[derive(Clone, Debug)]
pub struct EliminationStep {
    pub state: usize,
    /// `A + L21 S12`, the eliminated diagonal entry of `T`.
    pub diagonal: f64,
    /// `S12`, indexed like the remaining states.
    pub coupling: Vec<f64>,
    pub iterations: usize,
    /// Largest measured ratio of successive Picard updates.
    pub contraction: f64,
    /// `||L11 S12 - S12 A - S12 L21 S12 + L12|| / ||L||`.
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct TriangularizationResult {
    /// States from deepest to shallowest; rows of `t` follow this order.
    pub order: Vec<usize>,
    /// In elimination order, shallowest first.
    pub steps: Vec<EliminationStep>,
    /// Lower-triangular similar matrix.
    pub t: DMatrix<f64>,
    /// First reduced block `T11 = L11 - S12 L21`, in order coordinates.
    pub first_block: DMatrix<f64>,
}

impl TriangularizationResult {
    /// Diagonal of `T` in decreasing order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut v: Vec<f64> = (0..self.t.nrows()).map(|k| self.t[(k, k)]).collect();
        v.sort_by(|x, y| y.total_cmp(x));
        v
    }

    pub fn max_residual(&self) -> f64 {
        self.steps.iter().map(|s| s.residual).fold(0.0, f64::max)
    }
}

const PICARD_MAX_ITER: usize = 200;
const PICARD_WARMUP: usize = 3;

fn inf_norm<R: Real>(m: &[Vec<R>]) -> R {
    m.iter()
        .map(|row| row.iter().fold(R::zero(), |acc, &x| acc + x.abs()))
        .fold(R::zero(), |a, b| a.max(b))
}

fn vec_norm<R: Real>(v: &[R]) -> R {
    v.iter().fold(R::zero(), |acc, &x| acc.max(x.abs()))
}

/// Block-triangularises `gen` by eliminating states from the shallowest end
/// of `order`, solving the quadratic for `S12` by Picard iteration in
/// precision `R`. The diagonal is recomputed in `R` from the off-diagonal
/// rates.
pub fn triangularize<R: Real>(gen: &Generator, order: &[usize]) -> Result<TriangularizationResult> {
    let n = gen.len();
    let mut seen = vec![false; n];
    for &s in order {
        if s >= n || std::mem::replace(&mut seen[s], true) {
            return Err(Error::Precondition("order is not a permutation of the states".into()));
        }
    }
    if order.len() != n {
        return Err(Error::Precondition("order is not a permutation of the states".into()));
    }
    let epsilon = gen.epsilon.unwrap_or(f64::NAN);
    let tol = {
        let fine = R::epsilon() * R::from_f64(64.0);
        if fine < R::from_f64(1e-14) {
            fine
        } else {
            R::from_f64(1e-14)
        }
    };
    let mut b: Vec<Vec<R>> = vec![vec![R::zero(); n]; n];
    for (x, &i) in order.iter().enumerate() {
        let mut row = R::zero();
        for (y, &j) in order.iter().enumerate() {
            if x != y {
                let v = R::from_f64(gen.matrix[(i, j)]);
                b[x][y] = v;
                row = row + v;
            }
        }
        b[x][x] = -row;
    }
    let mut t = DMatrix::zeros(n, n);
    let mut steps = Vec::with_capacity(n.saturating_sub(1));
    let mut first_block = DMatrix::zeros(0, 0);
    for k in (1..n).rev() {
        let norm = inf_norm(&b);
        let a = b[k][k];
        if !(a < R::zero()) {
            return Err(Error::Solver(format!(
                "non-negative pivot at state {}",
                gen.labels[order[k]]
            )));
        }
        let l12: Vec<R> = (0..k).map(|i| b[i][k]).collect();
        let l21: Vec<R> = (0..k).map(|j| b[k][j]).collect();
        let apply_l11 = |s: &[R]| -> Vec<R> {
            (0..k)
                .map(|i| (0..k).fold(R::zero(), |acc, j| acc + b[i][j] * s[j]))
                .collect()
        };
        let dot = |u: &[R], v: &[R]| u.iter().zip(v).fold(R::zero(), |acc, (&x, &y)| acc + x * y);
        // First two terms of the series for S12.
        let mut s: Vec<R> = {
            let l11l12 = apply_l11(&l12);
            (0..k).map(|i| l12[i] / a + l11l12[i] / (a * a)).collect()
        };
        let mut prev_diff: Option<R> = None;
        let mut contraction: f64 = 0.0;
        let mut converged = false;
        let mut iterations = 0;
        while iterations < PICARD_MAX_ITER {
            iterations += 1;
            let sigma = dot(&l21, &s);
            let l11s = apply_l11(&s);
            let next: Vec<R> = (0..k).map(|i| (l12[i] + l11s[i] - s[i] * sigma) / a).collect();
            let diff = (0..k).fold(R::zero(), |acc, i| acc.max((next[i] - s[i]).abs()));
            let scale = vec_norm(&next);
            s = next;
            if diff <= tol * scale || diff == R::zero() {
                converged = true;
                break;
            }
            if let Some(p) = prev_diff {
                if diff > R::from_f64(1e3) * R::epsilon() * scale && p > R::zero() {
                    let ratio = (diff / p).as_f64();
                    if iterations > PICARD_WARMUP {
                        contraction = contraction.max(ratio);
                        if ratio >= 0.5 {
                            return Err(Error::EpsilonTooLarge { epsilon, factor: ratio });
                        }
                    }
                }
            }
            prev_diff = Some(diff);
        }
        if !converged {
            return Err(Error::Solver(format!(
                "Picard iteration for state {} did not converge in {PICARD_MAX_ITER} steps",
                gen.labels[order[k]]
            )));
        }
        let sigma = dot(&l21, &s);
        let l11s = apply_l11(&s);
        let residual = (0..k).fold(R::zero(), |acc, i| {
            acc.max((l11s[i] - s[i] * a - s[i] * sigma + l12[i]).abs())
        });
        let diagonal = a + sigma;
        t[(k, k)] = diagonal.as_f64();
        for j in 0..k {
            t[(k, j)] = l21[j].as_f64();
        }
        for i in 0..k {
            for j in 0..k {
                b[i][j] = b[i][j] - s[i] * l21[j];
            }
        }
        b.truncate(k);
        for row in &mut b {
            row.truncate(k);
        }
        if k + 1 == n {
            first_block = DMatrix::from_fn(k, k, |i, j| b[i][j].as_f64());
        }
        steps.push(EliminationStep {
            state: order[k],
            diagonal: diagonal.as_f64(),
            coupling: s.iter().map(|v| v.as_f64()).collect(),
            iterations,
            contraction,
            residual: (residual / norm).as_f64(),
        });
    }
    if n > 0 {
        t[(0, 0)] = b[0][0].as_f64();
    }
    Ok(TriangularizationResult {
        order: order.to_vec(),
        steps,
        t,
        first_block,
    })
}

/// Exponents `h_ij min (h_in - h_nk + h_nj)` after eliminating the
/// shallowest state `n` of `order` through its fastest neighbour `k`;
/// `None` where no rate remains.
pub fn first_step_exponents<S: Scalar>(spec: &ProcessSpec<S>, order: &MetastableOrder<S>) -> Vec<Vec<Option<S>>> {
    let h = spec.exponent_matrix();
    let size = spec.len();
    let mut out = h.clone();
    let Some(&last) = order.order.last() else {
        return out;
    };
    let exit = (0..size)
        .filter_map(|j| h[last][j].clone())
        .fold(None::<S>, |acc, v| Some(acc.map_or(v.clone(), |a| S::min_of(a, v))));
    let Some(exit) = exit else {
        return out;
    };
    for i in (0..size).filter(|&i| i != last) {
        for j in (0..size).filter(|&j| j != last && j != i) {
            if let (Some(hin), Some(hnj)) = (&h[i][last], &h[last][j]) {
                let via = hin.clone() - exit.clone() + hnj.clone();
                out[i][j] = Some(match &h[i][j] {
                    Some(direct) => S::min_of(direct.clone(), via),
                    None => via,
                });
            }
        }
        out[i][last] = None;
        out[last][i] = None;
    }
    out
}

/// The same exponents produced by the elimination engine.
pub fn engine_first_step_exponents<S: Scalar>(
    spec: &ProcessSpec<S>,
    order: &MetastableOrder<S>,
) -> Result<Vec<Vec<Option<S>>>> {
    let size = spec.len();
    let mut sys = ExponentSystem::from_spec(spec)?;
    if let Some(&last) = order.order.last() {
        sys.force_remove(last)?;
    }
    Ok((0..size)
        .map(|i| {
            (0..size)
                .map(|j| {
                    if i == j || !sys.is_alive(i) || !sys.is_alive(j) {
                        None
                    } else {
                        sys.rate(i, Target::State(j)).map(|r| r.exponent.clone())
                    }
                })
                .collect()
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Hitting times

#[derive(Clone, Debug)]
pub struct HittingTimeResult {
    pub target: Vec<usize>,
    /// Complement of the target, increasing.
    pub complement: Vec<usize>,
    /// `w_A(x)` for `x` in the complement.
    pub times: Vec<f64>,
    /// `||L_BB w + 1||_inf`.
    pub residual: f64,
}

impl HittingTimeResult {
    pub fn time(&self, state: usize) -> Option<f64> {
        if self.target.contains(&state) {
            return Some(0.0);
        }
        self.complement.iter().position(|&x| x == state).map(|k| self.times[k])
    }

    /// Expected hitting time from a start distribution.
    pub fn mean_from(&self, start: &[(usize, f64)]) -> Result<f64> {
        let total: f64 = start.iter().map(|&(_, p)| p).sum();
        if !(total > 0.0) {
            return Err(Error::Precondition("start distribution has no mass".into()));
        }
        let mut acc = 0.0;
        for &(x, p) in start {
            let w = self
                .time(x)
                .ok_or_else(|| Error::Precondition(format!("start state {x} out of range")))?;
            acc += p * w;
        }
        Ok(acc / total)
    }
}

fn check_target(n: usize, target: &[usize]) -> Result<Vec<bool>> {
    let mut in_a = vec![false; n];
    for &a in target {
        if a >= n {
            return Err(Error::Precondition(format!("target state {a} out of range")));
        }
        in_a[a] = true;
    }
    let count = in_a.iter().filter(|&&x| x).count();
    if count == 0 || count == n {
        return Err(Error::Precondition("target must be a nonempty proper subset".into()));
    }
    Ok(in_a)
}

/// Solves `L_BB w = -1` with LU and iterative refinement, accumulating `w`
/// and the residual in double-double.
pub fn hitting_times(gen: &Generator, target: &[usize]) -> Result<HittingTimeResult> {
    let n = gen.len();
    let in_a = check_target(n, target)?;
    let comp: Vec<usize> = (0..n).filter(|&x| !in_a[x]).collect();
    let nb = comp.len();
    let dd = DoubleDouble::from_f64;
    let mut lbb_dd = vec![vec![DoubleDouble::zero(); nb]; nb];
    for (x, &i) in comp.iter().enumerate() {
        let mut row = DoubleDouble::zero();
        for j in (0..n).filter(|&j| j != i) {
            row = row + dd(gen.matrix[(i, j)]);
        }
        for (y, &j) in comp.iter().enumerate() {
            lbb_dd[x][y] = if x == y { -row } else { dd(gen.matrix[(i, j)]) };
        }
    }
    let lbb = DMatrix::from_fn(nb, nb, |x, y| lbb_dd[x][y].as_f64());
    let lu = lbb.lu();
    let mut w = vec![DoubleDouble::zero(); nb];
    let residual_of = |w: &[DoubleDouble]| -> Vec<DoubleDouble> {
        (0..nb)
            .map(|x| {
                let lw = (0..nb).fold(DoubleDouble::zero(), |acc, y| acc + lbb_dd[x][y] * w[y]);
                -DoubleDouble::one() - lw
            })
            .collect()
    };
    let mut residual = f64::INFINITY;
    for _ in 0..4 {
        let r = residual_of(&w);
        residual = r.iter().fold(0.0, |acc: f64, v| acc.max(v.as_f64().abs()));
        if residual <= 1e-24 {
            break;
        }
        let rhs = DVector::from_iterator(nb, r.iter().map(|v| v.as_f64()));
        let dw = lu.solve(&rhs).ok_or_else(|| Error::Solver("L_BB is singular".into()))?;
        if dw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver("L_BB is singular".into()));
        }
        for (wi, d) in w.iter_mut().zip(dw.iter()) {
            *wi = *wi + dd(*d);
        }
    }
    let r = residual_of(&w);
    residual = residual.min(r.iter().fold(0.0, |acc: f64, v| acc.max(v.as_f64().abs())));
    if !(residual <= 1e-10) {
        return Err(Error::Solver(format!("hitting-time residual {residual:.3e}")));
    }
    let times: Vec<f64> = w.iter().map(|v| v.as_f64()).collect();
    if times.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::Solver("non-positive hitting time".into()));
    }
    Ok(HittingTimeResult {
        target: (0..n).filter(|&x| in_a[x]).collect(),
        complement: comp,
        times,
        residual,
    })
}

// ---------------------------------------------------------------------------
// Kinetic Monte Carlo

#[derive(Clone, Debug)]
pub struct SimulationConfig {
    pub samples: usize,
    pub seed: u64,
    pub batch_size: usize,
    /// Jump budget per sample.
    pub max_steps: u64,
}

impl SimulationConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        SimulationConfig {
            samples,
            seed,
            batch_size: 1000,
            max_steps: 10_000_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SimulationResult {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// Running mean and sum of squared deviations.
#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    count: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, o: Moments) -> Moments {
        if self.count == 0 {
            return o;
        }
        if o.count == 0 {
            return self;
        }
        let count = self.count + o.count;
        let d = o.mean - self.mean;
        Moments {
            count,
            mean: self.mean + d * o.count as f64 / count as f64,
            m2: self.m2 + o.m2 + d * d * (self.count as f64 * o.count as f64) / count as f64,
        }
    }
}

/// Mean first-passage time to `target` by simulation of the process
/// assembled from `spec`.
pub fn simulate_mfpt<S: Scalar>(
    spec: &ProcessSpec<S>,
    epsilon: Option<f64>,
    target: &[usize],
    start: &[(usize, f64)],
    config: &SimulationConfig,
) -> Result<SimulationResult> {
    let gen = assemble_generator(spec, epsilon)?;
    simulate_generator(&gen, target, start, config)
}

/// Simulation on an assembled generator; batch `b` uses stream `b` of a
/// ChaCha generator keyed by the master seed.
pub fn simulate_generator(
    gen: &Generator,
    target: &[usize],
    start: &[(usize, f64)],
    config: &SimulationConfig,
) -> Result<SimulationResult> {
    let n = gen.len();
    let in_a = check_target(n, target)?;
    if config.samples == 0 || config.batch_size == 0 {
        return Err(Error::Precondition("sample and batch counts must be positive".into()));
    }
    let mut start_cdf = Vec::new();
    let mut total = 0.0;
    for &(x, p) in start {
        if x >= n || !(p >= 0.0) {
            return Err(Error::Precondition("invalid start distribution".into()));
        }
        if p > 0.0 {
            total += p;
            start_cdf.push((x, total));
        }
    }
    if start_cdf.is_empty() {
        return Err(Error::Precondition("start distribution has no mass".into()));
    }
    let jumps: Vec<(f64, Vec<(usize, f64)>)> = (0..n)
        .map(|i| {
            let mut acc = 0.0;
            let mut list = Vec::new();
            for j in (0..n).filter(|&j| j != i) {
                let r = gen.matrix[(i, j)];
                if r > 0.0 {
                    acc += r;
                    list.push((j, acc));
                }
            }
            (acc, list)
        })
        .collect();
    let mut reach = in_a.clone();
    let mut changed = true;
    while changed {
        changed = false;
        for i in 0..n {
            if !reach[i] && jumps[i].1.iter().any(|&(j, _)| reach[j]) {
                reach[i] = true;
                changed = true;
            }
        }
    }
    if start_cdf.iter().any(|&(x, _)| !reach[x]) {
        return Err(Error::Precondition(
            "target unreachable from the start distribution".into(),
        ));
    }
    let batches = config.samples.div_ceil(config.batch_size);
    let results: Vec<(Moments, bool)> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(b as u64);
            let count = config.batch_size.min(config.samples - b * config.batch_size);
            let mut moments = Moments::default();
            for _ in 0..count {
                let u: f64 = rng.random::<f64>() * total;
                let mut x = start_cdf
                    .iter()
                    .find(|&&(_, c)| u < c)
                    .unwrap_or(start_cdf.last().unwrap())
                    .0;
                let mut time = 0.0;
                let mut steps = 0u64;
                while !in_a[x] {
                    if steps >= config.max_steps {
                        return (moments, true);
                    }
                    let (rate, list) = &jumps[x];
                    let hold: f64 = Exp1.sample(&mut rng);
                    time += hold / rate;
                    let v: f64 = rng.random::<f64>() * rate;
                    x = list.iter().find(|&&(_, c)| v < c).unwrap_or(list.last().unwrap()).0;
                    steps += 1;
                }
                moments.push(time);
            }
            (moments, false)
        })
        .collect();
    let timed_out = results.iter().any(|r| r.1);
    let moments = results.iter().fold(Moments::default(), |acc, r| acc.merge(r.0));
    if timed_out {
        return Err(Error::Timeout {
            completed: moments.count,
            requested: config.samples,
            partial_mean: moments.mean,
        });
    }
    let var = if moments.count > 1 {
        moments.m2 / (moments.count - 1) as f64
    } else {
        0.0
    };
    Ok(SimulationResult {
        mean: moments.mean,
        stderr: (var / moments.count as f64).sqrt(),
        samples: moments.count,
    })
}

// ---------------------------------------------------------------------------
// Symmetry-adapted spectrum

/// Estimates of one exponent, zero first.
#[derive(Clone, Debug, PartialEq)]
pub struct Cluster<S> {
    /// `None` for the zero eigenvalue.
    pub exponent: Option<S>,
    /// Indices into the estimate list.
    pub members: Vec<usize>,
    /// Distinct prefactors, decreasing.
    pub prefactors: Vec<S>,
    pub multiplicity: usize,
    pub irreps: Vec<String>,
}

/// Slowest nonzero mode: largest exponent, then smallest prefactor.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralGap<S> {
    pub estimate: usize,
    pub exponent: S,
    pub prefactor: S,
    /// Other estimates share the exponent, so the prefactor decided.
    pub tie_broken: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterReport<S> {
    pub clusters: Vec<Cluster<S>>,
    pub gap: Option<SpectralGap<S>>,
    pub total: usize,
}

pub fn cluster_report<S: Scalar>(estimates: &[EigenEstimate<S>]) -> ClusterReport<S> {
    let mut idx: Vec<usize> = (0..estimates.len()).collect();
    idx.sort_by(|&a, &b| match (&estimates[a].exponent, &estimates[b].exponent) {
        (None, None) => std::cmp::Ordering::Equal,
        (None, Some(_)) => std::cmp::Ordering::Less,
        (Some(_), None) => std::cmp::Ordering::Greater,
        (Some(x), Some(y)) => x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal),
    });
    let mut clusters: Vec<Cluster<S>> = Vec::new();
    for k in idx {
        let e = &estimates[k];
        let same = clusters.last().is_some_and(|c| match (&c.exponent, &e.exponent) {
            (None, None) => true,
            (Some(x), Some(y)) => x.ties(y),
            _ => false,
        });
        if !same {
            clusters.push(Cluster {
                exponent: e.exponent.clone(),
                members: Vec::new(),
                prefactors: Vec::new(),
                multiplicity: 0,
                irreps: Vec::new(),
            });
        }
        let c = clusters.last_mut().expect("cluster exists");
        c.members.push(k);
        c.multiplicity += e.multiplicity;
        if !c.prefactors.iter().any(|p| p.ties(&e.prefactor)) {
            c.prefactors.push(e.prefactor.clone());
        }
        if !c.irreps.contains(&e.irrep) {
            c.irreps.push(e.irrep.clone());
        }
    }
    for c in &mut clusters {
        c.prefactors
            .sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    }
    let gap = clusters.iter().rev().find(|c| c.exponent.is_some()).map(|c| {
        let &best = c
            .members
            .iter()
            .min_by(|&&a, &&b| {
                estimates[a]
                    .prefactor
                    .partial_cmp(&estimates[b].prefactor)
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .expect("nonempty cluster");
        SpectralGap {
            estimate: best,
            exponent: c.exponent.clone().expect("nonzero cluster"),
            prefactor: estimates[best].prefactor.clone(),
            tie_broken: c.members.len() > 1,
        }
    });
    ClusterReport {
        total: clusters.iter().map(|c| c.multiplicity).sum(),
        clusters,
        gap,
    }
}

#[derive(Clone, Debug)]
pub struct SymmetricSpectrum<S> {
    pub estimates: Vec<EigenEstimate<S>>,
    pub report: ClusterReport<S>,
    /// Smallest error order over all estimates.
    pub theta: Option<S>,
    /// Conditions detected but not fatal, such as defective leading blocks.
    pub flags: Vec<String>,
}

/// Groups numerically equal eigenvalues.
fn group_values(values: &[Complex64]) -> Vec<(Complex64, usize)> {
    let scale = values
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    let mut out: Vec<(Complex64, usize)> = Vec::new();
    for z in sorted {
        match out.last_mut() {
            Some((w, m)) if (*w - z).norm() <= 1e-9 * scale => *m += 1,
            _ => out.push((z, 1)),
        }
    }
    out
}

/// Whether the leading matrix has a full eigenbasis for the eigenvalue.
fn is_semisimple(m: &DMatrix<Complex64>, value: Complex64, multiplicity: usize) -> bool {
    if multiplicity <= 1 {
        return true;
    }
    let n = m.nrows();
    let shifted = m - DMatrix::from_diagonal_element(n, n, value);
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    let sv = shifted.singular_values();
    let rank = sv.iter().filter(|&&s| s > 1e-8 * scale).count();
    n - rank == multiplicity
}

fn numeric_estimates<S: Scalar>(
    values: &[Complex64],
    irrep: &str,
    site: Option<usize>,
    eps: f64,
) -> Result<Vec<EigenEstimate<S>>> {
    let mut out = Vec::new();
    for (z, mult) in group_values(values) {
        let mag = z.norm();
        if !(mag > 0.0) {
            return Err(Error::Solver(format!("vanishing eigenvalue in irrep {irrep}")));
        }
        let h = S::from_f64(-eps * mag.ln()).ok_or_else(|| Error::Solver("non-finite exponent".into()))?;
        out.push(EigenEstimate {
            prefactor: S::one(),
            exponent: Some(h),
            multiplicity: mult,
            irrep: irrep.to_string(),
            site,
            mechanism: Mechanism::Numeric,
            theta: None,
        });
    }
    Ok(out)
}

fn block_estimates<S: Scalar>(
    value: &DMatrix<Complex64>,
    prefactor: &S,
    exponent: &S,
    irrep: &str,
    site: usize,
    mechanism: Mechanism,
    theta: Option<S>,
    flags: &mut Vec<String>,
) -> Result<Option<Vec<EigenEstimate<S>>>> {
    let values = complex_eigenvalues(value)?;
    let scale = value.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut out = Vec::new();
    for (mu, mult) in group_values(&values) {
        if mu.norm() <= 1e-10 * scale.max(f64::MIN_POSITIVE) || mu.re >= 0.0 {
            return Ok(None);
        }
        if mu.im.abs() > 1e-9 * mu.norm() {
            flags.push(format!("irrep {irrep}, orbit {site}: complex leading eigenvalue {mu}"));
        }
        if !is_semisimple(value, mu, mult) {
            flags.push(format!("irrep {irrep}, orbit {site}: defective leading block"));
        }
        out.push(EigenEstimate {
            prefactor: prefactor.scaled(-mu.re),
            exponent: Some(exponent.clone()),
            multiplicity: mult,
            irrep: irrep.to_string(),
            site: Some(site),
            mechanism,
            theta: theta.clone(),
        });
    }
    Ok(Some(out))
}

fn submatrix(
    m: &DMatrix<Complex64>,
    rows: &std::ops::Range<usize>,
    cols: &std::ops::Range<usize>,
) -> DMatrix<Complex64> {
    m.view((rows.start, cols.start), (rows.len(), cols.len())).into_owned()
}

fn min_theta<S: Scalar>(a: Option<S>, b: Option<S>) -> Option<S> {
    match (a, b) {
        (Some(x), Some(y)) => Some(S::min_of(x, y)),
        (x, None) => x,
        (None, y) => y,
    }
}

impl<S: Scalar> SymmetricSystem<S> {
    /// Gap between the two smallest distinct exit exponents of the orbit
    /// representative.
    fn exit_gap(&self, i: usize) -> Option<S> {
        let a = self.orbits.orbits[i].representative;
        let mut hs: Vec<S> = self
            .spec
            .edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.a == a || e.b == a)
            .map(|(k, _)| self.spec.exponent(a, k))
            .collect();
        hs.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
        let first = hs.first()?.clone();
        hs.into_iter().find(|h| !h.ties(&first)).map(|h| h - first)
    }

    fn trivial_estimates(&self) -> Result<Vec<EigenEstimate<S>>> {
        let label = &self.table.irreps[self.table.trivial()].label;
        let ord = metastable_order(&self.orbit_spec())?;
        let mut out = vec![EigenEstimate::zero(label, Some(ord.order[0]))];
        for level in &ord.levels {
            out.push(EigenEstimate {
                prefactor: level.prefactor.clone(),
                exponent: Some(level.exponent.clone()),
                multiplicity: 1,
                irrep: label.clone(),
                site: Some(level.state),
                mechanism: Mechanism::Hierarchy,
                theta: Some(ord.theta.clone()),
            });
        }
        Ok(out)
    }

    fn dim1_estimates(&self, p: usize, eps: f64, flags: &mut Vec<String>) -> Result<Vec<EigenEstimate<S>>> {
        let label = self.table.irreps[p].label.clone();
        let (active, mut sys) = self.augmented_system(p)?;
        let elimination = sys.eliminate();
        match elimination {
            Ok(removals) if sys.alive_states().is_empty() => Ok(removals
                .into_iter()
                .map(|r| EigenEstimate {
                    prefactor: r.rate.prefactor,
                    exponent: Some(r.rate.exponent),
                    multiplicity: 1,
                    irrep: label.clone(),
                    site: Some(active[r.state]),
                    mechanism: Mechanism::Hierarchy,
                    theta: r.successor_gap,
                })
                .collect()),
            other => {
                let why = match other {
                    Err(e) => e.to_string(),
                    Ok(_) => "elimination stalled".to_string(),
                };
                flags.push(format!("irrep {label}: {why}; numeric eigenvalues at epsilon {eps}"));
                let r = self.reduced_dim1(p)?;
                numeric_estimates(&r.eigenvalues(eps)?, &label, None, eps)
            }
        }
    }

    fn dimd_estimates(
        &self,
        p: usize,
        choice: &BasisChoice,
        successors: &[Option<usize>],
        eps: f64,
        flags: &mut Vec<String>,
    ) -> Result<Vec<EigenEstimate<S>>> {
        let r: ReducedMatrix<S> = self.reduced_dimd(p, choice)?;
        let label = r.irrep.clone();
        let pos = |orbit: usize| r.orbits.iter().position(|&o| o == orbit);
        let potential = |i: usize| self.spec.potential[self.orbits.orbits[i].representative].clone();
        let mut out = Vec::new();
        let mut numeric_value: Option<DMatrix<Complex64>> = None;
        let mut numeric =
            |r: &ReducedMatrix<S>| -> DMatrix<Complex64> { numeric_value.get_or_insert_with(|| r.value(eps)).clone() };
        for (k, &i) in r.orbits.iter().enumerate() {
            let ri = r.range(k);
            let dii = r
                .block(k, k)
                .ok_or_else(|| Error::Solver(format!("missing diagonal block for orbit {i}")))?;
            let cii = dii.m.map(|z| z * dii.prefactor.to_f64_lossy());
            let cycle = successors[i]
                .filter(|&j| successors[j] == Some(i) && potential(i) < potential(j))
                .and_then(|j| pos(j).map(|kj| (j, kj)));
            let theta_i = self.exit_gap(i);
            let mut done = false;
            if let Some((j, kj)) = cycle {
                let rj = r.range(kj);
                let theta = min_theta(theta_i.clone(), self.exit_gap(j));
                if let (Some(bij), Some(bji), Some(bjj)) = (r.block(k, kj), r.block(kj, k), r.block(kj, kj)) {
                    let hc = bij.exponent.clone() + bji.exponent.clone() - bjj.exponent.clone();
                    if hc.ties(&dii.exponent) {
                        let inv = bjj.m.clone().try_inverse();
                        if let Some(inv) = inv {
                            let factor = bij.prefactor.to_f64_lossy() * bji.prefactor.to_f64_lossy()
                                / bjj.prefactor.to_f64_lossy();
                            let schur = &cii - (&bij.m * inv * &bji.m).map(|z| z * factor);
                            if let Some(est) = block_estimates(
                                &schur,
                                &S::one(),
                                &dii.exponent,
                                &label,
                                i,
                                Mechanism::CycleSchur,
                                theta.clone(),
                                flags,
                            )? {
                                out.extend(est);
                                done = true;
                            }
                        }
                    } else if hc.below(&dii.exponent) {
                        flags.push(format!(
                            "irrep {label}, orbit {i}: cycle exponent {hc} below diagonal exponent {}; numeric Schur complement at epsilon {eps}",
                            dii.exponent
                        ));
                    } else {
                        let est = block_estimates(
                            &dii.m,
                            &dii.prefactor,
                            &dii.exponent,
                            &label,
                            i,
                            Mechanism::DiagonalBlock,
                            theta_i.clone(),
                            flags,
                        )?;
                        if let Some(est) = est {
                            out.extend(est);
                            done = true;
                        }
                    }
                    if !done {
                        let x = numeric(&r);
                        let xij = submatrix(&x, &ri, &rj);
                        let xjj = submatrix(&x, &rj, &rj);
                        let xji = submatrix(&x, &rj, &ri);
                        let inv = xjj
                            .try_inverse()
                            .ok_or_else(|| Error::Solver(format!("singular block of orbit {j}")))?;
                        let schur = submatrix(&x, &ri, &ri) - xij * inv * xji;
                        out.extend(numeric_estimates(&complex_eigenvalues(&schur)?, &label, Some(i), eps)?);
                        done = true;
                    }
                }
            }
            if !done {
                match block_estimates(
                    &dii.m,
                    &dii.prefactor,
                    &dii.exponent,
                    &label,
                    i,
                    Mechanism::DiagonalBlock,
                    theta_i,
                    flags,
                )? {
                    Some(est) => out.extend(est),
                    None => {
                        flags.push(format!(
                            "irrep {label}, orbit {i}: leading diagonal block degenerate; numeric eigenvalues at epsilon {eps}"
                        ));
                        let x = numeric(&r);
                        out.extend(numeric_estimates(
                            &complex_eigenvalues(&submatrix(&x, &ri, &ri))?,
                            &label,
                            Some(i),
                            eps,
                        )?);
                    }
                }
            }
        }
        Ok(out)
    }

    fn irrep_estimates(
        &self,
        p: usize,
        choice: &BasisChoice,
        successors: &[Option<usize>],
    ) -> Result<(Vec<EigenEstimate<S>>, Vec<String>)> {
        let mut flags = Vec::new();
        if self.active.total(p) == 0 {
            return Ok((Vec::new(), flags));
        }
        let eps = self.spec.epsilon.to_f64_lossy();
        let est = if p == self.table.trivial() {
            self.trivial_estimates()?
        } else if self.table.irreps[p].dim == 1 {
            self.dim1_estimates(p, eps, &mut flags)?
        } else {
            self.dimd_estimates(p, choice, successors, eps, &mut flags)?
        };
        let count: usize = est.iter().map(|e| e.multiplicity).sum();
        if count != self.active.total(p) {
            return Err(Error::Solver(format!(
                "irrep {} produced {count} eigenvalues, expected {}",
                self.table.irreps[p].label,
                self.active.total(p)
            )));
        }
        Ok((est, flags))
    }
}

/// Leading-order spectrum of a symmetric process, irrep by irrep.
pub fn symmetric_spectrum<S: Scalar>(sys: &SymmetricSystem<S>, choice: &BasisChoice) -> Result<SymmetricSpectrum<S>> {
    let successors = sys.orbit_successors()?;
    let per_irrep: Vec<Result<(Vec<EigenEstimate<S>>, Vec<String>)>> = (0..sys.table.irreps.len())
        .into_par_iter()
        .map(|p| sys.irrep_estimates(p, choice, &successors))
        .collect();
    let mut estimates = Vec::new();
    let mut flags = Vec::new();
    for r in per_irrep {
        let (e, f) = r?;
        estimates.extend(e);
        flags.extend(f);
    }
    sort_estimates(&mut estimates);
    let report = cluster_report(&estimates);
    if report.total != sys.spec.len() {
        return Err(Error::Solver(format!(
            "{} eigenvalues for {} states",
            report.total,
            sys.spec.len()
        )));
    }
    let theta = estimates
        .iter()
        .filter(|e| e.mechanism != Mechanism::Numeric)
        .fold(None, |acc, e| min_theta(acc, e.theta.clone()));
    Ok(SymmetricSpectrum {
        estimates,
        report,
        theta,
        flags,
    })
}

/// Orders by exponent (zero first), prefactor decreasing, irrep, site.
pub fn sort_estimates<S: Scalar>(estimates: &mut [EigenEstimate<S>]) {
    use std::cmp::Ordering;
    estimates.sort_by(|a, b| {
        let by_h = match (&a.exponent, &b.exponent) {
            (None, None) => Ordering::Equal,
            (None, Some(_)) => Ordering::Less,
            (Some(_), None) => Ordering::Greater,
            (Some(x), Some(y)) if x.ties(y) => Ordering::Equal,
            (Some(x), Some(y)) => x.partial_cmp(y).unwrap_or(Ordering::Equal),
        };
        by_h.then_with(|| {
            if a.prefactor.ties(&b.prefactor) {
                Ordering::Equal
            } else {
                b.prefactor.partial_cmp(&a.prefactor).unwrap_or(Ordering::Equal)
            }
        })
        .then_with(|| a.irrep.cmp(&b.irrep))
        .then_with(|| a.site.cmp(&b.site))
    });
}

// ---------------------------------------------------------------------------
// Matching against exact eigenvalues

/// Pairs each estimate copy with an exact eigenvalue by sorting both sides
/// by log-magnitude; returns the matched values per estimate.
pub fn match_estimates<S: Scalar>(estimates: &[EigenEstimate<S>], exact: &[f64], eps: f64) -> Result<Vec<Vec<f64>>> {
    let mut copies: Vec<(f64, usize)> = Vec::new();
    for (k, e) in estimates.iter().enumerate() {
        let key = if e.is_zero() {
            f64::NEG_INFINITY
        } else {
            e.value(eps).abs().ln()
        };
        copies.extend(std::iter::repeat_n((key, k), e.multiplicity));
    }
    if copies.len() != exact.len() {
        return Err(Error::Precondition(format!(
            "{} estimates for {} eigenvalues",
            copies.len(),
            exact.len()
        )));
    }
    copies.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut ex = exact.to_vec();
    ex.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let mut out = vec![Vec::new(); estimates.len()];
    for ((_, k), v) in copies.into_iter().zip(ex) {
        out[k].push(v);
    }
    Ok(out)
}

/// `|ln(|lambda| / (C exp(-H/eps)))|`; zero for the zero estimate.
pub fn log_deviation<S: Scalar>(estimate: &EigenEstimate<S>, lambda: f64, eps: f64) -> f64 {
    if estimate.is_zero() {
        return 0.0;
    }
    (lambda.abs().ln() - estimate.value(eps).abs().ln()).abs()
}

// ---------------------------------------------------------------------------
// Export

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectrumRow {
    pub irrep: String,
    pub site: String,
    pub mechanism: String,
    pub multiplicity: usize,
    pub exponent: Option<f64>,
    pub exponent_exact: String,
    pub prefactor: f64,
    pub prefactor_exact: String,
    pub theta: Option<f64>,
    pub estimate: f64,
    pub exact: Option<f64>,
    pub deviation: Option<f64>,
}

/// One row per eigenvalue copy, so an estimate of multiplicity `d` gives `d`
/// rows.
pub fn spectrum_rows<S: Scalar>(
    estimates: &[EigenEstimate<S>],
    site_labels: &[String],
    eps: f64,
    exact: Option<&[f64]>,
) -> Result<Vec<SpectrumRow>> {
    let matched = exact.map(|ex| match_estimates(estimates, ex, eps)).transpose()?;
    let mut rows = Vec::new();
    for (k, e) in estimates.iter().enumerate() {
        for copy in 0..e.multiplicity {
            let exact = matched.as_ref().map(|m| m[k][copy]);
            rows.push(SpectrumRow {
                irrep: e.irrep.clone(),
                site: e
                    .site
                    .map(|s| site_labels.get(s).cloned().unwrap_or_else(|| s.to_string()))
                    .unwrap_or_default(),
                mechanism: e.mechanism.to_string(),
                multiplicity: e.multiplicity,
                exponent: e.exponent.as_ref().map(|h| h.to_f64_lossy()),
                exponent_exact: e.exponent.as_ref().map_or_else(|| "inf".into(), |h| h.to_string()),
                prefactor: e.prefactor.to_f64_lossy(),
                prefactor_exact: e.prefactor.to_string(),
                theta: e.theta.as_ref().map(|t| t.to_f64_lossy()),
                estimate: e.value(eps),
                exact,
                deviation: exact.map(|v| log_deviation(e, v, eps)),
            });
        }
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.12e}"))
}

const CSV_HEADER: &str = "irrep,site,mechanism,multiplicity,H,C,theta,estimate,exact,deviation";

fn csv_fields(r: &SpectrumRow) -> Vec<String> {
    vec![
        r.irrep.clone(),
        r.site.clone(),
        r.mechanism.clone(),
        r.multiplicity.to_string(),
        r.exponent_exact.clone(),
        r.prefactor_exact.clone(),
        opt(r.theta),
        format!("{:.12e}", r.estimate),
        opt(r.exact),
        opt(r.deviation),
    ]
}

/// Fields containing separators are quoted.
pub(crate) fn write_csv<I>(records: I) -> String
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::WriterBuilder::new().flexible(false).from_writer(Vec::new());
    for r in records {
        w.write_record(&r).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("utf-8 fields")
}

pub fn rows_csv(rows: &[SpectrumRow]) -> String {
    let header = CSV_HEADER.split(',').map(String::from).collect();
    write_csv(std::iter::once(header).chain(rows.iter().map(csv_fields)))
}

pub fn rows_json(rows: &[SpectrumRow]) -> Value {
    serde_json::to_value(rows).expect("rows serialize")
}

/// Long-format CSV with one row per `(epsilon, estimate)`.
pub fn sweep_csv(sweep: &[(f64, Vec<SpectrumRow>)]) -> String {
    let header = std::iter::once("epsilon")
        .chain(CSV_HEADER.split(','))
        .map(String::from)
        .collect();
    let body = sweep.iter().flat_map(|(eps, rows)| {
        rows.iter().map(move |r| {
            let mut f = vec![eps.to_string()];
            f.extend(csv_fields(r));
            f
        })
    });
    write_csv(std::iter::once(header).chain(body))
}

pub fn rows_table(rows: &[SpectrumRow]) -> String {
    let mut s = format!(
        "{:<10} {:<8} {:<15} {:>4} {:>12} {:>12} {:>14} {:>14} {:>10}\n",
        "irrep", "site", "mechanism", "mult", "H", "C", "estimate", "exact", "deviation"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<10} {:<8} {:<15} {:>4} {:>12} {:>12} {:>14.6e} {:>14} {:>10}",
            r.irrep,
            r.site,
            r.mechanism,
            r.multiplicity,
            r.exponent.map_or_else(|| "inf".into(), |h| format!("{h:.6}")),
            format!("{:.6}", r.prefactor),
            r.estimate,
            r.exact.map_or_else(String::new, |v| format!("{v:.6e}")),
            r.deviation.map_or_else(String::new, |v| format!("{v:.3e}")),
        );
    }
    s
}
