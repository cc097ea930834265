//! Permutation groups acting on states, their character tables and the
//! orbit structure they induce on a process.
//!
//! Elements compose as functions: `mul(g, h)` is `g ∘ h`, applying `h`
//! first. For the tagged families every element is the word
//! `r^i s^j c^k = r^i ∘ s^j ∘ c^k` with `s r s = r^{-1}` and `c` central.

use crate::error::{Error, Result};
use crate::model::ProcessSpec;
use crate::scalar::Scalar;
use nalgebra::DMatrix;
use num_complex::Complex64;
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::f64::consts::PI;

pub type Permutation = Vec<usize>;

pub const DEFAULT_GROUP_LIMIT: usize = 1_000_000;

/// Abstract group the generators are declared to present.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Structure {
    Trivial,
    /// Generator `r` of order `n`.
    Cyclic(usize),
    /// Generators `r`, `s`.
    Dihedral(usize),
    /// Generators `r`, `c`.
    CyclicTimesZ2(usize),
    /// Generators `r`, `s`, `c`.
    DihedralTimesZ2(usize),
    Opaque,
}

impl Structure {
    /// Parses tags such as `dihedral_x_z2:4`, `cyclic:3`, `z2`, `trivial`.
    pub fn parse(tag: &str) -> Result<Structure> {
        let tag = tag.trim().to_ascii_lowercase();
        let (name, arg) = match tag.split_once(':') {
            Some((a, b)) => (a.to_string(), Some(b.to_string())),
            None => (tag.clone(), None),
        };
        let order = || -> Result<usize> {
            arg.as_deref()
                .and_then(|a| a.parse().ok())
                .filter(|&n: &usize| n >= 1)
                .ok_or_else(|| Error::Parse(format!("structure tag `{tag}` needs a positive order")))
        };
        Ok(match name.as_str() {
            "trivial" => Structure::Trivial,
            "z2" => Structure::Cyclic(2),
            "cyclic" => Structure::Cyclic(order()?),
            "dihedral" => Structure::Dihedral(order()?),
            "cyclic_x_z2" => Structure::CyclicTimesZ2(order()?),
            "dihedral_x_z2" => Structure::DihedralTimesZ2(order()?),
            "opaque" => Structure::Opaque,
            _ => return Err(Error::Parse(format!("unknown structure tag `{tag}`"))),
        })
    }

    /// Inverse of [`Structure::parse`].
    pub fn tag(&self) -> String {
        match self {
            Structure::Trivial => "trivial".into(),
            Structure::Cyclic(n) => format!("cyclic:{n}"),
            Structure::Dihedral(n) => format!("dihedral:{n}"),
            Structure::CyclicTimesZ2(n) => format!("cyclic_x_z2:{n}"),
            Structure::DihedralTimesZ2(n) => format!("dihedral_x_z2:{n}"),
            Structure::Opaque => "opaque".into(),
        }
    }

    fn generator_count(&self) -> Option<usize> {
        match self {
            Structure::Trivial => Some(0),
            Structure::Cyclic(_) => Some(1),
            Structure::Dihedral(_) | Structure::CyclicTimesZ2(_) => Some(2),
            Structure::DihedralTimesZ2(_) => Some(3),
            Structure::Opaque => None,
        }
    }

    fn rotation_order(&self) -> usize {
        match self {
            Structure::Cyclic(n)
            | Structure::Dihedral(n)
            | Structure::CyclicTimesZ2(n)
            | Structure::DihedralTimesZ2(n) => *n,
            _ => 1,
        }
    }

    fn has_reflection(&self) -> bool {
        matches!(self, Structure::Dihedral(_) | Structure::DihedralTimesZ2(_))
    }

    fn has_center(&self) -> bool {
        matches!(self, Structure::CyclicTimesZ2(_) | Structure::DihedralTimesZ2(_))
    }
}

/// `r^r s^s c^c`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Word {
    pub r: usize,
    pub s: usize,
    pub c: usize,
}

impl std::fmt::Display for Word {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut parts = Vec::new();
        match self.r {
            0 => {}
            1 => parts.push("r".to_string()),
            k => parts.push(format!("r{k}")),
        }
        if self.s == 1 {
            parts.push("s".into());
        }
        if self.c == 1 {
            parts.push("c".into());
        }
        if parts.is_empty() {
            f.write_str("id")
        } else {
            f.write_str(&parts.concat())
        }
    }
}

fn compose(p: &[usize], q: &[usize]) -> Permutation {
    q.iter().map(|&x| p[x]).collect()
}

fn identity(n: usize) -> Permutation {
    (0..n).collect()
}

fn power(p: &[usize], k: usize) -> Permutation {
    let mut out = identity(p.len());
    for _ in 0..k {
        out = compose(p, &out);
    }
    out
}

#[derive(Clone, Debug)]
pub struct PermGroup {
    pub degree: usize,
    pub structure: Structure,
    pub generators: Vec<Permutation>,
    /// Element images; index 0 is the identity.
    pub elements: Vec<Permutation>,
    /// Word of each element for tagged structures.
    pub words: Option<Vec<Word>>,
    index: HashMap<Permutation, usize>,
    word_index: HashMap<Word, usize>,
}

impl PermGroup {
    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn identity(&self) -> usize {
        0
    }

    pub fn apply(&self, g: usize, state: usize) -> usize {
        self.elements[g][state]
    }

    /// Index of `g ∘ h`.
    pub fn mul(&self, g: usize, h: usize) -> usize {
        if let Some(words) = &self.words {
            let (a, b) = (words[g], words[h]);
            let n = self.structure.rotation_order();
            let r = if a.s == 1 {
                (a.r + n - b.r % n) % n
            } else {
                (a.r + b.r) % n
            };
            let w = Word {
                r,
                s: a.s ^ b.s,
                c: a.c ^ b.c,
            };
            return self.word_index[&w];
        }
        self.index[&compose(&self.elements[g], &self.elements[h])]
    }

    pub fn inverse(&self, g: usize) -> usize {
        if let Some(words) = &self.words {
            let a = words[g];
            let n = self.structure.rotation_order();
            let w = if a.s == 1 {
                a
            } else {
                Word {
                    r: (n - a.r) % n,
                    s: 0,
                    c: a.c,
                }
            };
            return self.word_index[&w];
        }
        let p = &self.elements[g];
        let mut inv = vec![0; p.len()];
        for (x, &y) in p.iter().enumerate() {
            inv[y] = x;
        }
        self.index[&inv]
    }

    pub fn word(&self, g: usize) -> Option<Word> {
        self.words.as_ref().map(|w| w[g])
    }

    pub fn element_of_word(&self, w: Word) -> Option<usize> {
        self.word_index.get(&w).copied()
    }

    /// Element indices of the stabiliser of `state`.
    pub fn stabilizer(&self, state: usize) -> Vec<usize> {
        (0..self.order()).filter(|&g| self.apply(g, state) == state).collect()
    }

    pub fn conjugacy_classes(&self) -> Vec<Vec<usize>> {
        let mut class_of = vec![usize::MAX; self.order()];
        let mut classes: Vec<Vec<usize>> = Vec::new();
        for g in 0..self.order() {
            if class_of[g] != usize::MAX {
                continue;
            }
            let mut members: Vec<usize> = (0..self.order())
                .map(|h| self.mul(self.mul(h, g), self.inverse(h)))
                .collect();
            members.sort_unstable();
            members.dedup();
            for &m in &members {
                class_of[m] = classes.len();
            }
            classes.push(members);
        }
        classes
    }

    /// Number of orbits from fixed-point counts.
    pub fn burnside_orbit_count(&self) -> usize {
        let fixed: usize = self
            .elements
            .iter()
            .map(|p| p.iter().enumerate().filter(|(x, y)| x == *y).count())
            .sum();
        fixed / self.order()
    }
}

/// Closes the generators into a group. Tagged structures enumerate words and
/// check the defining relations; opaque groups are closed by breadth-first
/// search up to `limit` elements.
pub fn generate_group(generators: &[Permutation], structure: Structure, limit: usize) -> Result<PermGroup> {
    let degree = generators.first().map(|g| g.len()).unwrap_or(0);
    for (k, g) in generators.iter().enumerate() {
        let mut seen = vec![false; g.len()];
        if g.len() != degree || g.iter().any(|&x| x >= degree || std::mem::replace(&mut seen[x], true)) {
            return Err(Error::Parse(format!(
                "generator {k} is not a permutation of {degree} states"
            )));
        }
    }
    match structure {
        Structure::Opaque => close_opaque(generators, degree, limit),
        Structure::Trivial if generators.is_empty() => Err(Error::Parse(
            "the trivial group needs the number of states; pass one identity generator".into(),
        )),
        _ => close_tagged(generators, structure, degree),
    }
}

/// Trivial group on `n` states.
pub fn trivial_group(n: usize) -> PermGroup {
    close_tagged(&[identity(n)], Structure::Trivial, n).expect("trivial group")
}

fn close_opaque(generators: &[Permutation], degree: usize, limit: usize) -> Result<PermGroup> {
    let id = identity(degree);
    let mut elements = vec![id.clone()];
    let mut index = HashMap::from([(id, 0usize)]);
    let mut queue = VecDeque::from([0usize]);
    while let Some(k) = queue.pop_front() {
        for g in generators {
            let p = compose(g, &elements[k]);
            if !index.contains_key(&p) {
                if elements.len() >= limit {
                    return Err(Error::GroupTooLarge { limit });
                }
                index.insert(p.clone(), elements.len());
                queue.push_back(elements.len());
                elements.push(p);
            }
        }
    }
    Ok(PermGroup {
        degree,
        structure: Structure::Opaque,
        generators: generators.to_vec(),
        elements,
        words: None,
        index,
        word_index: HashMap::new(),
    })
}

fn close_tagged(generators: &[Permutation], structure: Structure, degree: usize) -> Result<PermGroup> {
    let id = identity(degree);
    let gens: Vec<Permutation> = if structure == Structure::Trivial {
        Vec::new()
    } else {
        generators.to_vec()
    };
    if let Some(count) = structure.generator_count() {
        if gens.len() != count {
            return Err(Error::UnsupportedGroup(format!(
                "{structure:?} needs {count} generators, got {}",
                gens.len()
            )));
        }
    }
    let n = structure.rotation_order();
    let r = if n > 1 || matches!(structure, Structure::Cyclic(_)) {
        gens[0].clone()
    } else {
        id.clone()
    };
    let s = if structure.has_reflection() {
        gens[1].clone()
    } else {
        id.clone()
    };
    let c = if structure.has_center() {
        gens[gens.len() - 1].clone()
    } else {
        id.clone()
    };

    let fail = |what: &str| {
        Err(Error::UnsupportedGroup(format!(
            "generators violate {what} for {structure:?}"
        )))
    };
    if power(&r, n) != id {
        return fail("r^n = id");
    }
    if compose(&s, &s) != id {
        return fail("s^2 = id");
    }
    if compose(&c, &c) != id {
        return fail("c^2 = id");
    }
    let r_inv = power(&r, n - 1);
    if structure.has_reflection() && compose(&compose(&s, &r), &s) != r_inv {
        return fail("s r s = r^-1");
    }
    if compose(&c, &r) != compose(&r, &c) || compose(&c, &s) != compose(&s, &c) {
        return fail("central c");
    }

    let js = if structure.has_reflection() { 2 } else { 1 };
    let ks = if structure.has_center() { 2 } else { 1 };
    let mut elements = Vec::new();
    let mut words = Vec::new();
    let mut word_index = HashMap::new();
    for k in 0..ks {
        for j in 0..js {
            for i in 0..n {
                let w = Word { r: i, s: j, c: k };
                let p = compose(&power(&r, i), &compose(&power(&s, j), &power(&c, k)));
                word_index.insert(w, elements.len());
                words.push(w);
                elements.push(p);
            }
        }
    }
    let mut index = HashMap::new();
    for (k, p) in elements.iter().enumerate() {
        index.entry(p.clone()).or_insert(k);
    }
    Ok(PermGroup {
        degree,
        structure,
        generators: gens,
        elements,
        words: Some(words),
        index,
        word_index,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Irrep {
    pub label: String,
    pub dim: usize,
    /// Character value of every group element.
    pub chars: Vec<Complex64>,
    /// Matrix of every group element, for the two-dimensional dihedral
    /// irreps: `r -> diag(w^l, w^-l)`, `s -> [[0,1],[1,0]]`, `c -> +-1`.
    pub matrices: Option<Vec<DMatrix<Complex64>>>,
}

impl Irrep {
    /// Whether every character value is real.
    pub fn is_real(&self) -> bool {
        self.chars.iter().all(|c| c.im.abs() < 1e-12)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CharacterTable {
    pub irreps: Vec<Irrep>,
    pub classes: Vec<Vec<usize>>,
}

impl CharacterTable {
    pub fn find(&self, label: &str) -> Option<usize> {
        self.irreps.iter().position(|p| p.label == label)
    }

    /// Index of the irrep with constant character 1.
    pub fn trivial(&self) -> usize {
        self.irreps
            .iter()
            .position(|p| p.dim == 1 && p.chars.iter().all(|c| (c - 1.0).norm() < 1e-12))
            .expect("trivial irrep present")
    }
}

fn sign_label(v: i32) -> char {
    if v > 0 {
        '+'
    } else {
        '-'
    }
}

/// Character table of a tagged structure.
pub fn character_table(group: &PermGroup) -> Result<CharacterTable> {
    let Some(words) = &group.words else {
        return Err(Error::UnsupportedGroup(
            "opaque groups need a user-supplied character table".into(),
        ));
    };
    let n = group.structure.rotation_order();
    let center = group.structure.has_center();
    let taus: Vec<i32> = if center { vec![1, -1] } else { vec![1] };
    let mut irreps = Vec::new();
    let one_dim = |label: String, f: &dyn Fn(&Word) -> Complex64| Irrep {
        label,
        dim: 1,
        chars: words.iter().map(f).collect(),
        matrices: None,
    };
    match group.structure {
        Structure::Trivial => irreps.push(one_dim("trivial".into(), &|_| Complex64::new(1.0, 0.0))),
        Structure::Cyclic(_) | Structure::CyclicTimesZ2(_) => {
            for k in 0..n {
                for &tau in &taus {
                    let label = if center {
                        format!("{k},{}", sign_label(tau))
                    } else {
                        k.to_string()
                    };
                    irreps.push(one_dim(label, &|w: &Word| {
                        let phase = Complex64::from_polar(1.0, 2.0 * PI * (k * w.r) as f64 / n as f64);
                        phase * (tau.pow(w.c as u32) as f64)
                    }));
                }
            }
        }
        Structure::Dihedral(_) | Structure::DihedralTimesZ2(_) => {
            let rhos: Vec<i32> = if n.is_multiple_of(2) { vec![1, -1] } else { vec![1] };
            for &rho in &rhos {
                for sigma in [1, -1] {
                    for &tau in &taus {
                        let mut label = format!("{}{}", sign_label(rho), sign_label(sigma));
                        if center {
                            label.push(sign_label(tau));
                        }
                        irreps.push(one_dim(label, &|w: &Word| {
                            let v = rho.pow(w.r as u32) * sigma.pow(w.s as u32) * tau.pow(w.c as u32);
                            Complex64::new(v as f64, 0.0)
                        }));
                    }
                }
            }
            let top = if n.is_multiple_of(2) { n / 2 } else { n.div_ceil(2) };
            for l in 1..top {
                for &tau in &taus {
                    let label = if center {
                        format!("{l},{}", sign_label(tau))
                    } else {
                        l.to_string()
                    };
                    let matrices: Vec<DMatrix<Complex64>> = words
                        .iter()
                        .map(|w| {
                            let phase = Complex64::from_polar(1.0, 2.0 * PI * (l * w.r) as f64 / n as f64);
                            let rot = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![phase, phase.conj()]));
                            let refl = if w.s == 1 {
                                DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]).map(|x| Complex64::new(x, 0.0))
                            } else {
                                DMatrix::identity(2, 2)
                            };
                            rot * refl * Complex64::new(tau.pow(w.c as u32) as f64, 0.0)
                        })
                        .collect();
                    irreps.push(Irrep {
                        label,
                        dim: 2,
                        chars: matrices.iter().map(|m| m.trace()).collect(),
                        matrices: Some(matrices),
                    });
                }
            }
        }
        Structure::Opaque => unreachable!(),
    }
    let table = CharacterTable {
        irreps,
        classes: group.conjugacy_classes(),
    };
    validate_table(group, &table)?;
    Ok(table)
}

/// User-supplied character table: class representatives are words in the
/// generators (lists of generator indices, applied right to left) and each
/// row lists one character value per class.
pub fn table_from_classes(
    group: &PermGroup,
    class_words: &[Vec<usize>],
    rows: &[(String, Vec<Complex64>)],
) -> Result<CharacterTable> {
    let classes = group.conjugacy_classes();
    let mut class_of = vec![usize::MAX; group.order()];
    for (k, cl) in classes.iter().enumerate() {
        for &g in cl {
            class_of[g] = k;
        }
    }
    let mut column_class = Vec::new();
    for word in class_words {
        let mut p = identity(group.degree);
        for &gi in word.iter().rev() {
            let g = group
                .generators
                .get(gi)
                .ok_or_else(|| Error::InvalidTable(format!("generator index {gi} out of range")))?;
            p = compose(&p, g);
        }
        let idx = group
            .elements
            .iter()
            .position(|e| *e == p)
            .ok_or_else(|| Error::InvalidTable("class word is not a group element".into()))?;
        column_class.push(class_of[idx]);
    }
    let mut sorted = column_class.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != classes.len() || column_class.len() != classes.len() {
        return Err(Error::InvalidTable(format!(
            "table lists {} classes, group has {}",
            column_class.len(),
            classes.len()
        )));
    }
    let mut irreps = Vec::new();
    for (label, values) in rows {
        if values.len() != column_class.len() {
            return Err(Error::InvalidTable(format!("row {label} has wrong length")));
        }
        let mut chars = vec![Complex64::new(0.0, 0.0); group.order()];
        for (col, &cl) in column_class.iter().enumerate() {
            for &g in &classes[cl] {
                chars[g] = values[col];
            }
        }
        let dim = chars[group.identity()].re.round() as usize;
        irreps.push(Irrep {
            label: label.clone(),
            dim,
            chars,
            matrices: None,
        });
    }
    let table = CharacterTable { irreps, classes };
    validate_table(group, &table)?;
    Ok(table)
}

/// Row orthonormality, class-function property and sum of squared dimensions.
pub fn validate_table(group: &PermGroup, table: &CharacterTable) -> Result<()> {
    let order = group.order() as f64;
    if table.irreps.len() != table.classes.len() {
        return Err(Error::InvalidTable(format!(
            "{} irreps for {} classes",
            table.irreps.len(),
            table.classes.len()
        )));
    }
    let dims: usize = table.irreps.iter().map(|p| p.dim * p.dim).sum();
    if dims != group.order() {
        return Err(Error::InvalidTable(format!(
            "sum of squared dimensions {dims} != |G| {}",
            group.order()
        )));
    }
    for p in &table.irreps {
        for cl in &table.classes {
            if cl.iter().any(|&g| (p.chars[g] - p.chars[cl[0]]).norm() > 1e-9) {
                return Err(Error::InvalidTable(format!("{} is not a class function", p.label)));
            }
        }
        if (p.chars[group.identity()] - p.dim as f64).norm() > 1e-9 {
            return Err(Error::InvalidTable(format!("{} has chi(id) != dim", p.label)));
        }
    }
    for p in &table.irreps {
        let defect = convolution_defect(group, p);
        if defect > 1e-10 {
            return Err(Error::InvalidTable(format!(
                "{} violates the convolution identity by {defect:e}",
                p.label
            )));
        }
        if let Some(ms) = &p.matrices {
            for g in 0..group.order() {
                for h in 0..group.order() {
                    if (&ms[g] * &ms[h] - &ms[group.mul(g, h)]).norm() > 1e-10 {
                        return Err(Error::InvalidTable(format!(
                            "{} matrices are not a homomorphism",
                            p.label
                        )));
                    }
                }
            }
        }
    }
    for (a, p) in table.irreps.iter().enumerate() {
        for (b, q) in table.irreps.iter().enumerate() {
            let ip: Complex64 = p
                .chars
                .iter()
                .zip(&q.chars)
                .map(|(x, y)| x * y.conj())
                .sum::<Complex64>()
                / order;
            let want = if a == b { 1.0 } else { 0.0 };
            if (ip - want).norm() > 1e-9 {
                return Err(Error::InvalidTable(format!(
                    "rows {} and {} are not orthonormal",
                    p.label, q.label
                )));
            }
        }
    }
    Ok(())
}

/// `max_h |(d/|G|) sum_g conj(chi(g)) chi(h g) - chi(h)|`.
pub fn convolution_defect(group: &PermGroup, irrep: &Irrep) -> f64 {
    let scale = irrep.dim as f64 / group.order() as f64;
    (0..group.order())
        .map(|h| {
            let sum: Complex64 = (0..group.order())
                .map(|g| irrep.chars[g].conj() * irrep.chars[group.mul(h, g)])
                .sum();
            (sum * scale - irrep.chars[h]).norm()
        })
        .fold(0.0, f64::max)
}

/// Largest row-orthonormality defect of a table.
pub fn orthogonality_defect(group: &PermGroup, table: &CharacterTable) -> f64 {
    let order = group.order() as f64;
    let mut worst: f64 = 0.0;
    for (a, p) in table.irreps.iter().enumerate() {
        for (b, q) in table.irreps.iter().enumerate() {
            let ip: Complex64 = p
                .chars
                .iter()
                .zip(&q.chars)
                .map(|(x, y)| x.conj() * y)
                .sum::<Complex64>()
                / order;
            let want = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((ip - want).norm());
        }
    }
    worst
}

/// First `(generator, a, b)` with `|L_ab - L_g(a)g(b)| > 1e-12 max|L|`.
pub fn check_invariance(l: &DMatrix<f64>, group: &PermGroup) -> Option<(usize, usize, usize)> {
    let scale = l.amax();
    for (gi, g) in group.generators.iter().enumerate() {
        for a in 0..l.nrows() {
            for b in 0..l.ncols() {
                if (l[(a, b)] - l[(g[a], g[b])]).abs() > 1e-12 * scale {
                    return Some((gi, a, b));
                }
            }
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq)]
pub struct Orbit {
    pub representative: usize,
    pub members: Vec<usize>,
    pub stabilizer: Vec<usize>,
    /// For each member `b`, the first element `h` with `h(rep) = b`.
    pub transversal: BTreeMap<usize, usize>,
}

impl Orbit {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrbitDecomposition {
    pub orbits: Vec<Orbit>,
    pub orbit_of: Vec<usize>,
}

/// Splits the states into orbits. Representatives default to the smallest
/// member and orbits are then ordered by representative; an explicit list
/// fixes both.
pub fn orbit_decomposition(group: &PermGroup, representatives: Option<&[usize]>) -> Result<OrbitDecomposition> {
    let n = group.degree;
    let mut orbit_of = vec![usize::MAX; n];
    let mut raw: Vec<Vec<usize>> = Vec::new();
    for a in 0..n {
        if orbit_of[a] != usize::MAX {
            continue;
        }
        let mut members: Vec<usize> = group.elements.iter().map(|p| p[a]).collect();
        members.sort_unstable();
        members.dedup();
        for &m in &members {
            orbit_of[m] = raw.len();
        }
        raw.push(members);
    }
    let reps: Vec<usize> = match representatives {
        None => raw.iter().map(|m| m[0]).collect(),
        Some(list) => {
            if list.len() != raw.len() {
                return Err(Error::Precondition(format!(
                    "{} representatives for {} orbits",
                    list.len(),
                    raw.len()
                )));
            }
            let mut hit = vec![false; raw.len()];
            for &r in list {
                if r >= n || std::mem::replace(&mut hit[orbit_of[r]], true) {
                    return Err(Error::Precondition("representatives must hit each orbit once".into()));
                }
            }
            list.to_vec()
        }
    };
    let mut orbits = Vec::new();
    let mut new_orbit_of = vec![0; n];
    for (k, &rep) in reps.iter().enumerate() {
        let members = raw[orbit_of[rep]].clone();
        for &m in &members {
            new_orbit_of[m] = k;
        }
        let mut transversal = BTreeMap::new();
        for g in 0..group.order() {
            transversal.entry(group.apply(g, rep)).or_insert(g);
        }
        orbits.push(Orbit {
            representative: rep,
            members,
            stabilizer: group.stabilizer(rep),
            transversal,
        });
    }
    Ok(OrbitDecomposition {
        orbits,
        orbit_of: new_orbit_of,
    })
}

/// Lists every violated invariance `V`, `m` and edge data under the
/// generators.
pub fn check_spec_invariance<S: Scalar>(spec: &ProcessSpec<S>, group: &PermGroup) -> Vec<String> {
    let mut out = Vec::new();
    if group.degree != spec.len() {
        out.push(format!(
            "group acts on {} states, spec has {}",
            group.degree,
            spec.len()
        ));
        return out;
    }
    let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
    for (k, e) in spec.edges.iter().enumerate() {
        edges.insert((e.a.min(e.b), e.a.max(e.b)), k);
    }
    for (gi, g) in group.generators.iter().enumerate() {
        for a in 0..spec.len() {
            if !spec.potential[a].ties(&spec.potential[g[a]]) {
                out.push(format!(
                    "generator {gi}: V differs between {} and {}",
                    spec.labels[a], spec.labels[g[a]]
                ));
            }
            if !spec.mass[a].ties(&spec.mass[g[a]]) {
                out.push(format!(
                    "generator {gi}: m differs between {} and {}",
                    spec.labels[a], spec.labels[g[a]]
                ));
            }
        }
        for e in &spec.edges {
            let (ga, gb) = (g[e.a], g[e.b]);
            match edges.get(&(ga.min(gb), ga.max(gb))) {
                None => out.push(format!(
                    "generator {gi}: edge ({}, {}) has no image",
                    spec.labels[e.a], spec.labels[e.b]
                )),
                Some(&k) => {
                    let f = &spec.edges[k];
                    if !f.saddle.ties(&e.saddle) || !f.coupling.ties(&e.coupling) {
                        out.push(format!(
                            "generator {gi}: edge ({}, {}) changes saddle or coupling",
                            spec.labels[e.a], spec.labels[e.b]
                        ));
                    }
                }
            }
        }
    }
    out
}

/// Equal exponents must come from edges related by a group element.
pub fn check_accidental_degeneracy<S: Scalar>(spec: &ProcessSpec<S>, group: &PermGroup) -> Result<()> {
    let m = spec.edges.len();
    let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
    for (k, e) in spec.edges.iter().enumerate() {
        lookup.insert((e.a.min(e.b), e.a.max(e.b)), k);
    }
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        p[x] = r;
        r
    }
    for g in &group.generators {
        for (k, e) in spec.edges.iter().enumerate() {
            let (ga, gb) = (g[e.a], g[e.b]);
            if let Some(&img) = lookup.get(&(ga.min(gb), ga.max(gb))) {
                let (a, b) = (find(&mut parent, k), find(&mut parent, img));
                parent[a] = b;
            }
        }
    }
    let mut directed: Vec<(S, usize, usize)> = Vec::with_capacity(2 * m);
    for (k, e) in spec.edges.iter().enumerate() {
        directed.push((spec.exponent(e.a, k), k, e.a));
        directed.push((spec.exponent(e.b, k), k, e.b));
    }
    directed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut start = 0;
    while start < directed.len() {
        let mut end = start + 1;
        while end < directed.len() && directed[end].0.ties(&directed[end - 1].0) {
            end += 1;
        }
        let root = find(&mut parent, directed[start].1);
        for item in &directed[start + 1..end] {
            if find(&mut parent, item.1) != root {
                let (e1, e2) = (&spec.edges[directed[start].1], &spec.edges[item.1]);
                return Err(Error::NonDegeneracy(format!(
                    "edges ({}, {}) and ({}, {}) share exponent {} without being related by symmetry",
                    spec.labels[e1.a], spec.labels[e1.b], spec.labels[e2.a], spec.labels[e2.b], item.0
                )));
            }
        }
        start = end;
    }
    Ok(())
}

/// Minimal transition between two orbits, seen from the representative of
/// the source orbit.
#[derive(Clone, Debug, PartialEq)]
pub struct OrbitLink<S> {
    /// `h*(A_i, A_j)`.
    pub exponent: S,
    /// Minimising neighbour `b` of the representative.
    pub target: usize,
    pub edge: usize,
    pub coupling: S,
    /// Number of neighbours in `A_j` at the minimal exponent.
    pub count: usize,
    /// `|G_a ∩ G_b|`.
    pub joint_stabilizer: usize,
    /// Distance from `h*` to the next larger exponent into `A_j`.
    pub gap: Option<S>,
}

/// Orbit-to-orbit minimal links; `links[i][i]` describes transitions
/// inside an orbit.
pub fn orbit_links<S: Scalar>(
    spec: &ProcessSpec<S>,
    group: &PermGroup,
    orbits: &OrbitDecomposition,
) -> Result<Vec<Vec<Option<OrbitLink<S>>>>> {
    let adj = spec.adjacency();
    let k = orbits.orbits.len();
    let mut links = vec![vec![None; k]; k];
    for (i, orbit) in orbits.orbits.iter().enumerate() {
        let a = orbit.representative;
        let mut by_orbit: BTreeMap<usize, Vec<(S, usize, usize)>> = BTreeMap::new();
        for &(b, e) in &adj[a] {
            by_orbit
                .entry(orbits.orbit_of[b])
                .or_default()
                .push((spec.exponent(a, e), b, e));
        }
        for (j, mut list) in by_orbit {
            list.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap_or(std::cmp::Ordering::Equal));
            let (h, b, e) = list[0].clone();
            let count = list.iter().filter(|x| x.0.ties(&h)).count();
            let gap = list.iter().find(|x| !x.0.ties(&h)).map(|x| x.0.clone() - h.clone());
            let joint = orbit.stabilizer.iter().filter(|&&g| group.apply(g, b) == b).count();
            let expected = orbit.stabilizer.len() / joint;
            if count != expected {
                return Err(Error::NonDegeneracy(format!(
                    "{count} minimal neighbours of {} in orbit {j}, symmetry predicts {expected}",
                    spec.labels[a]
                )));
            }
            links[i][j] = Some(OrbitLink {
                exponent: h,
                target: b,
                edge: e,
                coupling: spec.edges[e].coupling.clone(),
                count,
                joint_stabilizer: joint,
                gap,
            });
        }
    }
    Ok(links)
}
