//! Communication heights, successor-graph elimination and metastable order.
//!
//! The elimination engine works on leading-order rates `C exp(-H / eps)`
//! between surviving states. Removing a state `i` whose successor is `s`
//! replaces every rate `j -> k` by the leading part of
//! `r_jk + r_ji r_ik / r_is`, which on exponents reads
//! `h_jk min (h_ji - h_is + h_ik)`.

use crate::asymptotic::{EigenEstimate, Mechanism};
use crate::error::{Error, Result};
use crate::model::{ensure_valid, ProcessSpec};
use crate::scalar::Scalar;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::fmt::Write as _;

/// Minimax saddle levels between all pairs of states.
#[derive(Clone, Debug)]
pub struct CommHeights<S> {
    potential: Vec<S>,
    level: Vec<Vec<Option<S>>>,
    bottleneck: Vec<Vec<Option<usize>>>,
    parent: Vec<Vec<Option<usize>>>,
    pub tree_edges: Vec<usize>,
}

impl<S: Scalar> CommHeights<S> {
    pub fn len(&self) -> usize {
        self.potential.len()
    }

    pub fn is_empty(&self) -> bool {
        self.potential.is_empty()
    }

    /// Lowest achievable maximal saddle over paths `i -> j`.
    pub fn level(&self, i: usize, j: usize) -> Option<&S> {
        self.level[i][j].as_ref()
    }

    /// `H(i, j)`: level minus `V_i`.
    pub fn height(&self, i: usize, j: usize) -> Option<S> {
        self.level[i][j].clone().map(|l| l - self.potential[i].clone())
    }

    /// `H(i, A)` together with the minimising target.
    pub fn height_to_set(&self, i: usize, set: &[usize]) -> Option<(S, usize)> {
        let mut best: Option<(S, usize)> = None;
        for &j in set {
            if j == i {
                continue;
            }
            if let Some(h) = self.height(i, j) {
                if best.as_ref().is_none_or(|(b, _)| h < *b) {
                    best = Some((h, j));
                }
            }
        }
        best
    }

    /// Highest edge on the optimal path; `None` if two edges tie.
    pub fn highest_edge(&self, i: usize, j: usize) -> Option<usize> {
        self.bottleneck[i][j]
    }

    /// State sequence of the optimal path from `i` to `j`.
    pub fn path(&self, i: usize, j: usize) -> Vec<usize> {
        let mut out = vec![j];
        let mut cur = j;
        while cur != i {
            match self.parent[i][cur] {
                Some(p) => {
                    out.push(p);
                    cur = p;
                }
                None => return Vec::new(),
            }
        }
        out.reverse();
        out
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.parent[r] != r {
            r = self.parent[r];
        }
        let mut c = x;
        while self.parent[c] != r {
            let next = self.parent[c];
            self.parent[c] = r;
            c = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

/// Minimax levels from a minimum spanning tree over saddle heights.
pub fn communication_heights<S: Scalar>(spec: &ProcessSpec<S>) -> Result<CommHeights<S>> {
    ensure_valid(spec)?;
    let n = spec.len();
    let mut order: Vec<usize> = (0..spec.edges.len()).collect();
    order.sort_by(|&a, &b| {
        spec.edges[a]
            .saddle
            .partial_cmp(&spec.edges[b].saddle)
            .unwrap_or(Ordering::Equal)
    });
    let mut uf = UnionFind::new(n);
    let mut tree_edges = Vec::new();
    let mut adj = vec![Vec::new(); n];
    for k in order {
        let e = &spec.edges[k];
        if uf.union(e.a, e.b) {
            tree_edges.push(k);
            adj[e.a].push((e.b, k));
            adj[e.b].push((e.a, k));
        }
    }
    let mut level = vec![vec![None; n]; n];
    let mut bottleneck = vec![vec![None; n]; n];
    let mut parent = vec![vec![None; n]; n];
    for src in 0..n {
        // (level, edge, tied) along the tree path from src
        let mut best: Vec<Option<(S, usize, bool)>> = vec![None; n];
        let mut seen = vec![false; n];
        seen[src] = true;
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for &(v, k) in &adj[u] {
                if seen[v] {
                    continue;
                }
                seen[v] = true;
                parent[src][v] = Some(u);
                let s = spec.edges[k].saddle.clone();
                let next = match &best[u] {
                    None => (s, k, false),
                    Some((m, mk, tied)) => {
                        if s.ties(m) {
                            (S::max_of(s, m.clone()), *mk, true)
                        } else if s > *m {
                            (s, k, false)
                        } else {
                            (m.clone(), *mk, *tied)
                        }
                    }
                };
                best[v] = Some(next);
                queue.push_back(v);
            }
        }
        for v in 0..n {
            if let Some((m, k, tied)) = best[v].take() {
                level[src][v] = Some(m);
                bottleneck[src][v] = if tied { None } else { Some(k) };
            }
        }
    }
    Ok(CommHeights {
        potential: spec.potential.clone(),
        level,
        bottleneck,
        parent,
        tree_edges,
    })
}

/// Lowest maximal saddle from `from` to any state in `targets`, skipping
/// the edge `skip`.
pub fn minimax_avoiding<S: Scalar>(
    spec: &ProcessSpec<S>,
    from: usize,
    targets: &[usize],
    skip: Option<usize>,
) -> Option<S> {
    #[derive(PartialEq)]
    struct Item<S>(S, usize);
    impl<S: PartialOrd> Eq for Item<S> {}
    impl<S: PartialOrd> PartialOrd for Item<S> {
        fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
            Some(self.cmp(o))
        }
    }
    impl<S: PartialOrd> Ord for Item<S> {
        fn cmp(&self, o: &Self) -> Ordering {
            o.0.partial_cmp(&self.0).unwrap_or(Ordering::Equal)
        }
    }
    let adj = spec.adjacency();
    let n = spec.len();
    let mut best: Vec<Option<S>> = vec![None; n];
    let mut heap = BinaryHeap::new();
    best[from] = Some(spec.potential[from].clone());
    heap.push(Item(spec.potential[from].clone(), from));
    let mut is_target = vec![false; n];
    for &t in targets {
        is_target[t] = true;
    }
    while let Some(Item(d, u)) = heap.pop() {
        if best[u].as_ref().is_some_and(|b| d > *b) {
            continue;
        }
        if is_target[u] && u != from {
            return Some(d);
        }
        for &(v, k) in &adj[u] {
            if Some(k) == skip {
                continue;
            }
            let nd = S::max_of(d.clone(), spec.edges[k].saddle.clone());
            if best[v].as_ref().is_none_or(|b| nd < *b) {
                best[v] = Some(nd.clone());
                heap.push(Item(nd, v));
            }
        }
    }
    None
}

/// Destination of a rate: a surviving state or the absorbing sink.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    State(usize),
    Sink,
}

/// Edge that carries the leading exponent of a rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Witness {
    Edge(usize),
    /// Two different edges realise the same leading exponent.
    Ambiguous,
    Unknown,
}

impl Witness {
    fn merge(self, other: Witness) -> Witness {
        if self == other {
            self
        } else {
            Witness::Ambiguous
        }
    }
}

/// Leading-order rate `prefactor * exp(-exponent / eps)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rate<S> {
    pub prefactor: S,
    pub exponent: S,
    pub witness: Witness,
}

impl<S: Scalar> Rate<S> {
    pub fn new(prefactor: S, exponent: S, witness: Witness) -> Self {
        Rate {
            prefactor,
            exponent,
            witness,
        }
    }

    /// Leading part of the sum of two rates.
    pub fn combine(self, other: Rate<S>) -> Rate<S> {
        if self.exponent.ties(&other.exponent) {
            Rate {
                prefactor: self.prefactor + other.prefactor,
                exponent: S::min_of(self.exponent, other.exponent),
                witness: self.witness.merge(other.witness),
            }
        } else if other.exponent < self.exponent {
            other
        } else {
            self
        }
    }
}

/// Surviving states with their leading-order outgoing rates.
#[derive(Clone, Debug)]
pub struct ExponentSystem<S> {
    pub labels: Vec<String>,
    pub potential: Vec<S>,
    alive: Vec<bool>,
    out: Vec<BTreeMap<Target, Rate<S>>>,
}

/// Successor of each surviving state and the two-cycles they form.
#[derive(Clone, Debug, PartialEq)]
pub struct SuccessorGraph {
    pub successor: Vec<Option<Target>>,
    /// `(top, bottom)`; the sink is always a bottom.
    pub cycles: Vec<(usize, Target)>,
}

/// Record of one state removal.
#[derive(Clone, Debug, PartialEq)]
pub struct Removal<S> {
    pub state: usize,
    pub successor: Target,
    pub rate: Rate<S>,
    /// Gap to the second smallest exit exponent, if any.
    pub successor_gap: Option<S>,
}

impl<S: Scalar> ExponentSystem<S> {
    pub fn new(labels: Vec<String>, potential: Vec<S>) -> Self {
        let n = potential.len();
        ExponentSystem {
            labels,
            potential,
            alive: vec![true; n],
            out: vec![BTreeMap::new(); n],
        }
    }

    pub fn from_spec(spec: &ProcessSpec<S>) -> Result<Self> {
        ensure_valid(spec)?;
        let mut sys = ExponentSystem::new(spec.labels.clone(), spec.potential.clone());
        for (k, e) in spec.edges.iter().enumerate() {
            for (from, to) in [(e.a, e.b), (e.b, e.a)] {
                sys.add_rate(
                    from,
                    Target::State(to),
                    Rate::new(spec.prefactor(from, k), spec.exponent(from, k), Witness::Edge(k)),
                );
            }
        }
        Ok(sys)
    }

    pub fn len(&self) -> usize {
        self.potential.len()
    }

    pub fn is_empty(&self) -> bool {
        self.potential.is_empty()
    }

    pub fn is_alive(&self, i: usize) -> bool {
        self.alive[i]
    }

    pub fn alive_states(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.alive[i]).collect()
    }

    pub fn add_rate(&mut self, from: usize, to: Target, rate: Rate<S>) {
        let slot = self.out[from].remove(&to);
        let merged = match slot {
            Some(old) => old.combine(rate),
            None => rate,
        };
        self.out[from].insert(to, merged);
    }

    pub fn rate(&self, from: usize, to: Target) -> Option<&Rate<S>> {
        self.out[from].get(&to)
    }

    pub fn rates_from(&self, from: usize) -> impl Iterator<Item = (&Target, &Rate<S>)> {
        self.out[from].iter()
    }

    /// Exit with the smallest exponent; ties are an error.
    pub fn successor(&self, i: usize) -> Result<Option<(Target, Rate<S>, Option<S>)>> {
        let mut sorted: Vec<(&Target, &Rate<S>)> = self.out[i].iter().collect();
        sorted.sort_by(|a, b| a.1.exponent.partial_cmp(&b.1.exponent).unwrap_or(Ordering::Equal));
        match sorted.as_slice() {
            [] => Ok(None),
            [(t, r)] => Ok(Some((**t, (*r).clone(), None))),
            [(t, r), (t2, r2), ..] => {
                if r.exponent.ties(&r2.exponent) {
                    return Err(Error::Degeneracy(format!(
                        "state {} has tied exits to {:?} and {:?} at exponent {}",
                        self.labels[i], t, t2, r.exponent
                    )));
                }
                let gap = r2.exponent.clone() - r.exponent.clone();
                Ok(Some((**t, (*r).clone(), Some(gap))))
            }
        }
    }

    pub fn successor_graph(&self) -> Result<SuccessorGraph> {
        let n = self.len();
        let mut successor = vec![None; n];
        for i in self.alive_states() {
            successor[i] = self.successor(i)?.map(|(t, _, _)| t);
        }
        let mut cycles = Vec::new();
        for i in self.alive_states() {
            match successor[i] {
                Some(Target::Sink) => cycles.push((i, Target::Sink)),
                Some(Target::State(j)) => {
                    if successor[j] == Some(Target::State(i)) {
                        if j < i {
                            continue;
                        }
                        let (vi, vj) = (&self.potential[i], &self.potential[j]);
                        if vi.ties(vj) {
                            return Err(Error::Degeneracy(format!(
                                "two-cycle ({}, {}) has equal potentials",
                                self.labels[i], self.labels[j]
                            )));
                        }
                        if vi > vj {
                            cycles.push((i, Target::State(j)));
                        } else {
                            cycles.push((j, Target::State(i)));
                        }
                    } else {
                        let mut cur = j;
                        for _ in 0..n {
                            match successor[cur] {
                                Some(Target::State(next)) if next == i => {
                                    return Err(Error::NotReversible(format!(
                                        "successor cycle longer than two through {}",
                                        self.labels[i]
                                    )));
                                }
                                Some(Target::State(next)) => cur = next,
                                _ => break,
                            }
                        }
                    }
                }
                None => {}
            }
        }
        Ok(SuccessorGraph { successor, cycles })
    }

    fn is_top(&self, i: usize) -> Result<Option<(Target, Rate<S>, Option<S>)>> {
        let Some((t, r, gap)) = self.successor(i)? else {
            return Ok(None);
        };
        match t {
            Target::Sink => Ok(Some((t, r, gap))),
            Target::State(j) => {
                let back = self.successor(j)?.map(|(t2, _, _)| t2);
                if back == Some(Target::State(i)) && self.potential[i] > self.potential[j] {
                    Ok(Some((t, r, gap)))
                } else {
                    Ok(None)
                }
            }
        }
    }

    /// Removes the top `i` of a two-cycle, rerouting rates through it.
    pub fn remove_state(&mut self, i: usize) -> Result<Removal<S>> {
        if !self.alive[i] {
            return Err(Error::Precondition(format!("state {} already removed", self.labels[i])));
        }
        let Some((succ, exit, gap)) = self.is_top(i)? else {
            return Err(Error::Precondition(format!(
                "state {} is not the top of a two-cycle",
                self.labels[i]
            )));
        };
        Ok(self.reroute(i, succ, exit, gap))
    }

    /// Removes `i` through its fastest exit whether or not it tops a two-cycle.
    pub fn force_remove(&mut self, i: usize) -> Result<Removal<S>> {
        if !self.alive[i] {
            return Err(Error::Precondition(format!("state {} already removed", self.labels[i])));
        }
        let Some((succ, exit, gap)) = self.successor(i)? else {
            return Err(Error::Precondition(format!("state {} has no exit", self.labels[i])));
        };
        Ok(self.reroute(i, succ, exit, gap))
    }

    fn reroute(&mut self, i: usize, succ: Target, exit: Rate<S>, gap: Option<S>) -> Removal<S> {
        let outgoing: Vec<(Target, Rate<S>)> = self.out[i].iter().map(|(t, r)| (*t, r.clone())).collect();
        for j in self.alive_states() {
            if j == i {
                continue;
            }
            let Some(r_ji) = self.out[j].remove(&Target::State(i)) else {
                continue;
            };
            for (k, r_ik) in &outgoing {
                if *k == Target::State(j) {
                    continue;
                }
                let exponent = r_ji.exponent.clone() - exit.exponent.clone() + r_ik.exponent.clone();
                let prefactor = r_ji.prefactor.clone() * r_ik.prefactor.clone() / exit.prefactor.clone();
                let level_ji = self.potential[j].clone() + r_ji.exponent.clone();
                let level_ik = self.potential[i].clone() + r_ik.exponent.clone();
                let witness = if level_ji.ties(&level_ik) {
                    r_ji.witness.merge(r_ik.witness)
                } else if level_ji > level_ik {
                    r_ji.witness
                } else {
                    r_ik.witness
                };
                self.add_rate(j, *k, Rate::new(prefactor, exponent, witness));
            }
        }
        self.alive[i] = false;
        self.out[i].clear();
        Removal {
            state: i,
            successor: succ,
            rate: exit,
            successor_gap: gap,
        }
    }

    /// Removes tops round by round until no state can leave.
    pub fn eliminate(&mut self) -> Result<Vec<Removal<S>>> {
        let mut removals = Vec::new();
        loop {
            let graph = self.successor_graph()?;
            if graph.cycles.is_empty() {
                break;
            }
            let mut tops: Vec<(S, usize)> = graph
                .cycles
                .iter()
                .map(|&(top, bottom)| (self.rate(top, bottom).expect("exit rate").exponent.clone(), top))
                .collect();
            tops.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
            let mut removed_any = false;
            for (_, top) in tops {
                if !self.alive[top] || self.is_top(top)?.is_none() {
                    continue;
                }
                removals.push(self.remove_state(top)?);
                removed_any = true;
            }
            if !removed_any {
                break;
            }
        }
        Ok(removals)
    }
}

/// Node of the disconnectivity tree; leaves are states.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeNode<S> {
    pub height: S,
    pub children: Vec<usize>,
    pub state: Option<usize>,
    pub witness: Option<Witness>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisconnectivityTree<S> {
    pub nodes: Vec<TreeNode<S>>,
    pub root: usize,
}

impl<S: Scalar> DisconnectivityTree<S> {
    /// Builds the tree from removals: each removal joins the branch of the
    /// removed state to the branch of its successor at the exit level.
    pub fn from_removals(potential: &[S], removals: &[Removal<S>]) -> Self {
        let n = potential.len();
        let mut nodes: Vec<TreeNode<S>> = potential
            .iter()
            .enumerate()
            .map(|(i, v)| TreeNode {
                height: v.clone(),
                children: Vec::new(),
                state: Some(i),
                witness: None,
            })
            .collect();
        let mut uf = UnionFind::new(n);
        let mut top_node: Vec<usize> = (0..n).collect();
        for r in removals {
            let Target::State(j) = r.successor else {
                continue;
            };
            let (ri, rj) = (uf.find(r.state), uf.find(j));
            let (ni, nj) = (top_node[ri], top_node[rj]);
            nodes.push(TreeNode {
                height: potential[r.state].clone() + r.rate.exponent.clone(),
                children: vec![ni, nj],
                state: None,
                witness: Some(r.rate.witness),
            });
            uf.union(ri, rj);
            let root = uf.find(rj);
            top_node[root] = nodes.len() - 1;
        }
        let root = if n == 0 { 0 } else { top_node[uf.find(0)] };
        DisconnectivityTree { nodes, root }
    }

    /// Parent heights never fall below child heights.
    pub fn is_monotone(&self) -> bool {
        self.nodes
            .iter()
            .all(|node| node.children.iter().all(|&c| !node.height.below(&self.nodes[c].height)))
    }

    /// Merge height of the lowest node containing both states.
    pub fn merge_height(&self, a: usize, b: usize) -> Option<S> {
        let mut parent = vec![None; self.nodes.len()];
        for (k, node) in self.nodes.iter().enumerate() {
            for &c in &node.children {
                parent[c] = Some(k);
            }
        }
        let ancestors = |mut x: usize| {
            let mut v = vec![x];
            while let Some(p) = parent[x] {
                v.push(p);
                x = p;
            }
            v
        };
        let pa = ancestors(a);
        let pb = ancestors(b);
        pa.iter()
            .find(|x| pb.contains(x))
            .map(|&x| self.nodes[x].height.clone())
    }
}

/// One level of the hierarchy: the exit of `state` towards deeper states.
#[derive(Clone, Debug, PartialEq)]
pub struct Level<S> {
    pub state: usize,
    pub exponent: S,
    pub prefactor: S,
    /// Highest edge on the optimal exit path.
    pub edge: Option<usize>,
    pub successor: Target,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetastableOrder<S> {
    /// States from deepest to shallowest; `order[0]` is the ground state.
    pub order: Vec<usize>,
    /// `levels[k]` describes `order[k + 1]`.
    pub levels: Vec<Level<S>>,
    pub theta: S,
    pub tree: DisconnectivityTree<S>,
    pub removals: Vec<Removal<S>>,
}

impl<S: Scalar> MetastableOrder<S> {
    /// `M_k`: the `k` deepest states.
    pub fn deepest(&self, k: usize) -> &[usize] {
        &self.order[..k]
    }
}

/// Sorts removals by decreasing exit exponent and checks strict separation.
fn levels_from_removals<S: Scalar>(removals: &[Removal<S>], labels: &[String]) -> Result<Vec<Level<S>>> {
    let mut levels: Vec<Level<S>> = removals
        .iter()
        .map(|r| Level {
            state: r.state,
            exponent: r.rate.exponent.clone(),
            prefactor: r.rate.prefactor.clone(),
            edge: match r.rate.witness {
                Witness::Edge(k) => Some(k),
                _ => None,
            },
            successor: r.successor,
        })
        .collect();
    levels.sort_by(|a, b| b.exponent.partial_cmp(&a.exponent).unwrap_or(Ordering::Equal));
    for w in levels.windows(2) {
        if w[0].exponent.ties(&w[1].exponent) {
            return Err(Error::Degeneracy(format!(
                "states {} and {} exit at the same exponent {}",
                labels[w[0].state], labels[w[1].state], w[0].exponent
            )));
        }
    }
    Ok(levels)
}

/// Metastable order of a reversible spec, checked against communication
/// heights.
pub fn metastable_order<S: Scalar>(spec: &ProcessSpec<S>) -> Result<MetastableOrder<S>> {
    let heights = communication_heights(spec)?;
    let mut sys = ExponentSystem::from_spec(spec)?;
    let removals = sys.eliminate()?;
    let survivors = sys.alive_states();
    if survivors.len() != 1 {
        return Err(Error::Precondition(format!(
            "elimination stalled with {} states left",
            survivors.len()
        )));
    }
    let levels = levels_from_removals(&removals, &spec.labels)?;
    for r in &removals {
        if r.rate.witness == Witness::Ambiguous {
            return Err(Error::Degeneracy(format!(
                "exit of state {} has two distinct highest edges",
                spec.labels[r.state]
            )));
        }
    }
    let mut order = vec![survivors[0]];
    order.extend(levels.iter().map(|l| l.state));

    let mut theta: Option<S> = None;
    let mut tighten = |v: S| {
        theta = Some(match theta.take() {
            None => v,
            Some(t) => S::min_of(t, v),
        });
    };
    for k in 1..order.len() {
        let state = order[k];
        let deeper = &order[..k];
        let (h, _) = heights
            .height_to_set(state, deeper)
            .ok_or_else(|| Error::Precondition("missing communication height".into()))?;
        let level = &levels[k - 1];
        if !h.ties(&level.exponent) {
            return Err(Error::Precondition(format!(
                "exit exponent {} of state {} differs from communication height {}",
                level.exponent, spec.labels[state], h
            )));
        }
        let with_k: Vec<usize> = order[..=k].to_vec();
        for &i in deeper {
            let rest: Vec<usize> = with_k.iter().copied().filter(|&x| x != i).collect();
            if let Some((hi, _)) = heights.height_to_set(i, &rest) {
                tighten(hi - h.clone());
            }
        }
        if let Some(e) = level.edge {
            if let Some(alt) = minimax_avoiding(spec, state, deeper, Some(e)) {
                tighten(alt - spec.edges[e].saddle.clone());
            }
        }
    }
    let theta = theta.unwrap_or_else(S::zero);
    if order.len() > 1 && !(theta > S::tie_tolerance()) {
        return Err(Error::Degeneracy(format!(
            "no positive separation theta (found {theta})"
        )));
    }
    let tree = DisconnectivityTree::from_removals(&spec.potential, &removals);
    Ok(MetastableOrder {
        order,
        levels,
        theta,
        tree,
        removals,
    })
}

/// Leading-order spectrum of a spec without symmetry.
pub fn asymmetric_spectrum<S: Scalar>(spec: &ProcessSpec<S>) -> Result<Vec<EigenEstimate<S>>> {
    let ord = metastable_order(spec)?;
    let mut out = vec![EigenEstimate::zero("asym", Some(ord.order[0]))];
    for level in &ord.levels {
        out.push(EigenEstimate {
            prefactor: level.prefactor.clone(),
            exponent: Some(level.exponent.clone()),
            multiplicity: 1,
            irrep: "asym".into(),
            site: Some(level.state),
            mechanism: Mechanism::Hierarchy,
            theta: Some(ord.theta.clone()),
        });
    }
    Ok(out)
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Successor graph in DOT; edges `i -> s(i)`, two-cycles drawn bold.
pub fn successor_graph_dot(graph: &SuccessorGraph, labels: &[String]) -> String {
    let mut out = String::from("digraph successors {\n");
    for (i, s) in graph.successor.iter().enumerate() {
        if s.is_some() {
            let _ = writeln!(out, "  n{i} [label=\"{}\"];", dot_escape(&labels[i]));
        }
    }
    if graph.successor.contains(&Some(Target::Sink)) {
        out.push_str("  sink [label=\"sink\", shape=box];\n");
    }
    for (i, s) in graph.successor.iter().enumerate() {
        let in_cycle = graph.cycles.iter().any(|(t, b)| *t == i || *b == Target::State(i));
        let style = if in_cycle { " [style=bold]" } else { "" };
        match s {
            Some(Target::State(j)) => {
                let _ = writeln!(out, "  n{i} -> n{j}{style};");
            }
            Some(Target::Sink) => {
                let _ = writeln!(out, "  n{i} -> sink{style};");
            }
            None => {}
        }
    }
    out.push_str("}\n");
    out
}

/// Disconnectivity tree in DOT with node heights as labels.
pub fn tree_dot<S: Scalar>(tree: &DisconnectivityTree<S>, labels: &[String]) -> String {
    let mut out = String::from("digraph disconnectivity {\n");
    for (k, node) in tree.nodes.iter().enumerate() {
        let label = match node.state {
            Some(i) => format!("{} ({})", labels[i], node.height),
            None => format!("{}", node.height),
        };
        let _ = writeln!(out, "  t{k} [label=\"{}\"];", dot_escape(&label));
    }
    for (k, node) in tree.nodes.iter().enumerate() {
        for c in &node.children {
            let _ = writeln!(out, "  t{k} -> t{c};");
        }
    }
    out.push_str("}\n");
    out
}

/// Communication heights as CSV rows `from,to,H,level,highest_edge`.
pub fn comm_heights_csv<S: Scalar>(heights: &CommHeights<S>, labels: &[String]) -> String {
    let mut out = String::from("from,to,H,level,highest_edge\n");
    for i in 0..heights.len() {
        for j in 0..heights.len() {
            if i == j {
                continue;
            }
            if let (Some(h), Some(l)) = (heights.height(i, j), heights.level(i, j)) {
                let edge = heights
                    .highest_edge(i, j)
                    .map(|e| e.to_string())
                    .unwrap_or_else(|| "tied".into());
                let _ = writeln!(out, "{},{},{},{},{}", labels[i], labels[j], h, l, edge);
            }
        }
    }
    out
}

/// Hierarchy table as CSV rows `k,state,H_k,C_k,theta`.
pub fn hierarchy_csv<S: Scalar>(order: &MetastableOrder<S>, labels: &[String]) -> String {
    let theta = order.theta.to_string();
    let header = ["k", "state", "H_k", "C_k", "theta"].map(String::from).to_vec();
    let first = vec![
        "1".into(),
        labels[order.order[0]].clone(),
        "inf".into(),
        "0".into(),
        theta.clone(),
    ];
    let rest = order.levels.iter().enumerate().map(|(k, level)| {
        vec![
            (k + 2).to_string(),
            labels[level.state].clone(),
            level.exponent.to_string(),
            level.prefactor.to_string(),
            theta.clone(),
        ]
    });
    crate::spectra::write_csv([header, first].into_iter().chain(rest))
}
