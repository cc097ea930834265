//! Acceptance criteria AC1 to AC10, one PASS/FAIL line each.

use kramers_core::asymptotic::{EigenEstimate, Mechanism};
use kramers_core::equivariant::{projector, BasisChoice, SymmetricSystem};
use kramers_core::hierarchy::{asymmetric_spectrum, metastable_order, Witness};
use kramers_core::lattice::{
    build_process, continue_gamma, enumerate_gamma0, standard_representatives, CriticalPoint, PrefactorMode,
};
use kramers_core::model::{assemble_generator, Edge, ProcessSpec};
use kramers_core::spectra::{
    engine_first_step_exponents, exact_spectrum, exact_spectrum_precise, first_step_exponents, hitting_times,
    simulate_mfpt, sort_estimates, spectrum_rows, symmetric_spectrum, triangularize, SimulationConfig,
};
use kramers_core::symgroup::{
    character_table, check_accidental_degeneracy, convolution_defect, generate_group, orthogonality_defect,
    trivial_group, PermGroup, Structure, Word, DEFAULT_GROUP_LIMIT,
};
use kramers_core::{DoubleDouble, Scalar};
use num_complex::Complex64;
use num_rational::Rational64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

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

fn active_grid(s: &SymmetricSystem<f64>, expect: &[(&str, &[usize], usize)], grand: usize) -> Check {
    let irreps = &s.active.labels;
    ensure!(
        irreps.len() == expect.len(),
        "{} irreps, expected {}",
        irreps.len(),
        expect.len()
    );
    for (p, (label, row, total)) in expect.iter().enumerate() {
        ensure!(irreps[p] == *label, "irrep {p} is {}, expected {label}", irreps[p]);
        let got: Vec<usize> = (0..row.len()).map(|i| s.active.alpha_d(p, i)).collect();
        ensure!(got == *row, "{label}: row {got:?}, expected {row:?}");
        ensure!(
            s.active.total(p) == *total,
            "{label}: total {}, expected {total}",
            s.active.total(p)
        );
    }
    ensure!(
        s.active.grand_total() == grand,
        "grand total {}",
        s.active.grand_total()
    );
    Ok(())
}

fn ac1() -> Check {
    let s = lattice_system(4, 0.1);
    let rows: [(&str, &[usize], usize); 10] = [
        ("+++", &[1, 1], 2),
        ("++-", &[0, 0], 0),
        ("+-+", &[0, 0], 0),
        ("+--", &[0, 0], 0),
        ("-++", &[1, 0], 1),
        ("-+-", &[0, 0], 0),
        ("--+", &[0, 0], 0),
        ("---", &[0, 1], 1),
        ("1,+", &[0, 0], 0),
        ("1,-", &[2, 0], 2),
    ];
    active_grid(&s, &rows, 6)
}

fn ac2() -> Check {
    let s = lattice_system(8, 0.02);
    let rows: [(&str, &[usize], usize); 14] = [
        ("+++", &[1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1], 12),
        ("++-", &[0, 0, 1, 0, 0, 0, 0, 1, 1, 1, 1, 1], 6),
        ("+-+", &[0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 1], 2),
        ("+--", &[0, 0, 0, 1, 0, 1, 0, 1, 0, 0, 0, 1], 4),
        ("-++", &[1, 1, 0, 1, 1, 1, 0, 1, 0, 0, 0, 1], 7),
        ("-+-", &[0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 1], 2),
        ("--+", &[0, 0, 1, 0, 0, 0, 0, 1, 1, 1, 1, 1], 6),
        ("---", &[0, 0, 1, 1, 0, 1, 1, 1, 1, 1, 1, 1], 9),
        ("1,+", &[0, 0, 2, 2, 0, 2, 0, 4, 2, 2, 2, 4], 20),
        ("1,-", &[2, 0, 2, 2, 2, 2, 0, 4, 2, 2, 2, 4], 24),
        ("2,+", &[2, 0, 2, 2, 2, 2, 0, 4, 2, 2, 2, 4], 24),
        ("2,-", &[0, 2, 2, 2, 0, 2, 0, 4, 2, 2, 2, 4], 22),
        ("3,+", &[0, 0, 2, 2, 0, 2, 0, 4, 2, 2, 2, 4], 20),
        ("3,-", &[2, 0, 2, 2, 2, 2, 0, 4, 2, 2, 2, 4], 24),
    ];
    active_grid(&s, &rows, 182)?;
    let sizes: Vec<usize> = s.orbits.orbits.iter().map(|o| o.len()).collect();
    ensure!(
        sizes == [8, 4, 16, 16, 8, 16, 2, 32, 16, 16, 16, 32],
        "orbit sizes {sizes:?}"
    );
    Ok(())
}

/// `(c/m, h)` of the edge from the representative of orbit `from` towards orbit `to`.
fn orbit_edge(s: &SymmetricSystem<f64>, from: usize, to: usize) -> (f64, f64) {
    let rate = s.orbit_rate(from, to).unwrap();
    let e = match rate.witness {
        Witness::Edge(e) => e,
        other => panic!("orbit rate witness {other:?}"),
    };
    let a = s.orbits.orbits[from].representative;
    (s.spec.edges[e].coupling / s.spec.mass[a], rate.exponent)
}

fn ac3() -> Check {
    let s = lattice_system(4, 0.1);
    let a = s.orbits.orbits[0].representative;
    let (mut l_aa, mut l_ba) = (None, None);
    for (e, edge) in s.spec.edges.iter().enumerate() {
        let (x, y) = (s.orbits.orbit_of[edge.a], s.orbits.orbit_of[edge.b]);
        if x == 0 && y == 0 && (edge.a == a || edge.b == a) {
            l_aa = Some((s.spec.prefactor(a, e), s.spec.exponent(a, e)));
        }
        if x != y {
            let b = if x == 1 { edge.a } else { edge.b };
            l_ba = Some((s.spec.prefactor(b, e), s.spec.exponent(b, e)));
        }
    }
    let ((c_aa, h_aa), (c_ba, h_ba)) = (l_aa.ok_or("no a-a' edge")?, l_ba.ok_or("no b-a edge")?);
    let sp = symmetric_spectrum(&s, &BasisChoice::greedy()).map_err(|e| e.to_string())?;
    ensure!(sp.flags.is_empty(), "flags {:?}", sp.flags);
    let mut got: Vec<(f64, Option<f64>)> = Vec::new();
    for e in &sp.estimates {
        for _ in 0..e.multiplicity {
            got.push((e.prefactor, e.exponent));
        }
    }
    let mut expect = vec![
        (0.0, None),
        (2.0 * c_aa, Some(h_aa)),
        (2.0 * c_aa, Some(h_aa)),
        (4.0 * c_aa, Some(h_aa)),
        (4.0 * c_ba, Some(h_ba)),
        (4.0 * c_ba, Some(h_ba)),
    ];
    let key = |x: &(f64, Option<f64>)| (x.1.unwrap_or(-1.0), x.0);
    got.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
    expect.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
    ensure!(got.len() == 6, "{} eigenvalues", got.len());
    for (g, e) in got.iter().zip(&expect) {
        // unit couplings: prefactors are the integers 2 and 4
        ensure!(g.0 == e.0, "prefactor {} vs {}", g.0, e.0);
        match (g.1, e.1) {
            (None, None) => {}
            (Some(x), Some(y)) => ensure!(x == y, "exponent {x} vs {y}"),
            _ => return Err(format!("zero mismatch: {g:?} vs {e:?}")),
        }
    }
    let theta = sp.theta.ok_or("no theta")?;
    let dev = |eps: f64| -> Result<f64, String> {
        let gen = assemble_generator(&s.spec, Some(eps)).map_err(|e| e.to_string())?;
        let exact = exact_spectrum(&gen).map_err(|e| e.to_string())?;
        let rows = spectrum_rows(&sp.estimates, &s.orbit_names(), eps, Some(&exact)).map_err(|e| e.to_string())?;
        Ok(rows.iter().filter_map(|r| r.deviation).fold(0.0, |m, d| m.max(d.abs())))
    };
    let (d1, d2) = (dev(0.10)?, dev(0.05)?);
    let factor = (theta * (1.0 / 0.05 - 1.0 / 0.10)).exp() * 0.5;
    ensure!(
        d1 >= factor * d2,
        "deviation {d1:.3e} -> {d2:.3e}, needed factor {factor:.3}"
    );
    Ok(())
}

fn ac4() -> Check {
    let s = lattice_system(8, 0.02);
    let p = s.table.find("1,-").ok_or("no irrep 1,-")?;
    let r6 = s.group.element_of_word(Word { r: 6, s: 0, c: 0 }).ok_or("no r^6")?;
    let choice = BasisChoice::greedy().with(0, vec![0, r6]).with(8, vec![0, r6]);
    let red = s.reduced_dimd(p, &choice).map_err(|e| e.to_string())?;
    let k1 = red.orbits.iter().position(|&o| o == 0).ok_or("A1 inactive")?;
    let k9 = red.orbits.iter().position(|&o| o == 8).ok_or("A9 inactive")?;
    let (u, v) = ((2.0 + 2f64.sqrt()) / 4.0, 2f64.sqrt() / 4.0);
    let m19 = [[u, v], [-v, u]];
    let m91 = [[u, -v], [v, u]];
    for ((row, col), want, name) in [((k1, k9), m19, "M19"), ((k9, k1), m91, "M91")] {
        let b = red.block(row, col).ok_or(format!("{name}: missing block"))?;
        for i in 0..2 {
            for j in 0..2 {
                let z: Complex64 = b.m[(i, j)];
                ensure!(
                    (z - want[i][j]).norm() <= 1e-12,
                    "{name}[{i}{j}] = {z}, expected {}",
                    want[i][j]
                );
            }
        }
    }
    // leading Schur eigenvalues do not depend on the basis
    let sp = symmetric_spectrum(&s, &BasisChoice::greedy()).map_err(|e| e.to_string())?;
    let a1 = sp
        .estimates
        .iter()
        .find(|e| e.irrep == "1,-" && e.site == Some(0))
        .ok_or("no 1,- estimate on A1")?;
    ensure!(a1.mechanism == Mechanism::CycleSchur, "A1 mechanism {:?}", a1.mechanism);
    ensure!(a1.multiplicity == 2, "A1 multiplicity {}", a1.multiplicity);
    let (c19, h19) = orbit_edge(&s, 0, 8);
    let factor = a1.prefactor / c19;
    ensure!((factor - (2.0 - 2f64.sqrt())).abs() <= 1e-12, "Schur factor {factor}");
    ensure!((a1.exponent.unwrap() - h19).abs() <= 1e-12, "A1 exponent");
    let a7 = sp
        .estimates
        .iter()
        .find(|e| e.irrep == "+++" && e.site == Some(6))
        .ok_or("no trivial estimate on A7")?;
    let (c7, h7) = orbit_edge(&s, 6, 10);
    ensure!(a7.prefactor / c7 == 8.0, "A7 symmetry factor {}", a7.prefactor / c7);
    ensure!(
        (a7.exponent.unwrap() - h7).abs() <= 1e-12,
        "A7 exponent {:?} vs {h7}",
        a7.exponent
    );
    Ok(())
}

fn ac5() -> Check {
    let s = lattice_system(4, 0.1);
    let target = s.orbits.orbits[0].members.clone();
    let start: Vec<(usize, f64)> = s.orbits.orbits[1].members.iter().map(|&b| (b, 1.0)).collect();
    let b = s.orbits.orbits[1].representative;
    let (c_ab, h_ba) = s
        .spec
        .edges
        .iter()
        .enumerate()
        .find(|(_, e)| e.a == b || e.b == b)
        .map(|(k, e)| (e.coupling, s.spec.exponent(b, k)))
        .ok_or("no edge at b")?;
    let theta = metastable_order(&s.orbit_spec()).map_err(|e| e.to_string())?.theta;
    let eps = 0.08;
    let gen = assemble_generator(&s.spec, Some(eps)).map_err(|e| e.to_string())?;
    let w = hitting_times(&gen, &target).map_err(|e| e.to_string())?;
    let mean = w.mean_from(&start).map_err(|e| e.to_string())?;
    let closed = 0.25 * (s.spec.mass[b] / c_ab) * (h_ba / eps).exp();
    let rel = ((mean - closed) / closed).abs();
    ensure!(rel <= 5.0 * (-theta / eps).exp(), "relative error {rel:.3e}");

    let eps = 0.3;
    let gen = assemble_generator(&s.spec, Some(eps)).map_err(|e| e.to_string())?;
    let w = hitting_times(&gen, &target).map_err(|e| e.to_string())?;
    let mean = w.mean_from(&start).map_err(|e| e.to_string())?;
    let sim = simulate_mfpt(&s.spec, Some(eps), &target, &start, &SimulationConfig::new(100_000, 1))
        .map_err(|e| e.to_string())?;
    ensure!(
        (sim.mean - mean).abs() <= 3.0 * sim.stderr,
        "simulated {} +- {} vs {mean}",
        sim.mean,
        sim.stderr
    );
    Ok(())
}

/// Random connected reversible spec with a clear hierarchy, `theta >= 0.06`.
fn random_metastable_spec(rng: &mut ChaCha8Rng) -> (ProcessSpec<f64>, f64) {
    loop {
        let n = rng.random_range(3..=12);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut edges = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut add = |a: usize, b: usize, rng: &mut ChaCha8Rng, edges: &mut Vec<Edge<f64>>| {
            if a != b && seen.insert((a.min(b), a.max(b))) {
                let saddle = v[a].max(v[b]) + rng.random_range(0.05..0.8);
                edges.push(Edge::new(a, b, rng.random_range(0.5..2.0), saddle));
            }
        };
        for i in 1..n {
            let j = rng.random_range(0..i);
            add(i, j, rng, &mut edges);
        }
        for _ in 0..rng.random_range(0..n) {
            let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
            add(a, b, rng, &mut edges);
        }
        let mut spec = ProcessSpec::with_unit_mass(v, edges, 0.03);
        spec.mass = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        if let Ok(ord) = metastable_order(&spec) {
            if ord.theta >= 0.06 {
                return (spec, ord.theta);
            }
        }
    }
}

fn ac6() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for k in 0..20 {
        let (spec, _) = random_metastable_spec(&mut rng);
        let ord = metastable_order(&spec).map_err(|e| e.to_string())?;
        let gen = assemble_generator(&spec, Some(0.03)).map_err(|e| e.to_string())?;
        let tri = triangularize::<DoubleDouble>(&gen, &ord.order).map_err(|e| format!("instance {k}: {e}"))?;
        let mut t = tri.eigenvalues();
        let mut exact = exact_spectrum_precise::<DoubleDouble>(&gen).map_err(|e| e.to_string())?;
        t.sort_by(f64::total_cmp);
        exact.sort_by(f64::total_cmp);
        let scale = gen.norm_inf();
        let (tz, ez) = (t.pop().unwrap(), exact.pop().unwrap());
        ensure!(
            tz.abs().max(ez.abs()) <= 1e-12 * scale,
            "instance {k}: zero mode {tz:e}, {ez:e}"
        );
        for (a, b) in t.iter().zip(&exact) {
            ensure!(
                ((a - b) / b).abs() <= 1e-8,
                "instance {k} (n = {}): {a:e} vs {b:e}",
                spec.len()
            );
        }
        let direct = first_step_exponents(&spec, &ord);
        let engine = engine_first_step_exponents(&spec, &ord).map_err(|e| e.to_string())?;
        for (i, (x, y)) in direct.iter().zip(&engine).enumerate() {
            for (j, (p, q)) in x.iter().zip(y).enumerate() {
                match (p, q) {
                    (None, None) => {}
                    (Some(p), Some(q)) => {
                        ensure!((p - q).abs() <= 1e-12, "instance {k}: exponent ({i},{j}) {p} vs {q}")
                    }
                    _ => return Err(format!("instance {k}: support differs at ({i},{j})")),
                }
            }
        }
    }
    Ok(())
}

fn group_properties(name: &str, group: &PermGroup, n_orbits: usize) -> Check {
    let table = character_table(group).map_err(|e| format!("{name}: {e}"))?;
    let n = group.degree;
    let mut trace_total = 0.0;
    for p in 0..table.irreps.len() {
        let pr = projector(group, &table, p);
        let r = pr.idempotency_residual();
        ensure!(r <= 1e-10, "{name}: projector {p} idempotency {r:e}");
        trace_total += pr.trace();
        let c = convolution_defect(group, &table.irreps[p]);
        ensure!(c <= 1e-10, "{name}: convolution defect {c:e} for irrep {p}");
    }
    ensure!(
        (trace_total - n as f64).abs() <= 1e-10,
        "{name}: trace sum {trace_total}"
    );
    let orbits = kramers_core::symgroup::orbit_decomposition(group, None).map_err(|e| e.to_string())?;
    let active = kramers_core::equivariant::active_orbits(group, &table, &orbits).map_err(|e| e.to_string())?;
    ensure!(
        active.grand_total() == n,
        "{name}: sum of alpha d is {}",
        active.grand_total()
    );
    ensure!(
        group.burnside_orbit_count() == n_orbits,
        "{name}: Burnside count {}",
        group.burnside_orbit_count()
    );
    ensure!(
        orbits.orbits.len() == n_orbits,
        "{name}: {} orbits",
        orbits.orbits.len()
    );
    let o = orthogonality_defect(group, &table);
    ensure!(o <= 1e-10, "{name}: orthogonality defect {o:e}");
    Ok(())
}

fn ac7() -> Check {
    group_properties("trivial", &trivial_group(5), 5)?;
    let z2 = generate_group(
        &[vec![2, 1, 0, 4, 3]],
        Structure::parse("z2").unwrap(),
        DEFAULT_GROUP_LIMIT,
    )
    .map_err(|e| e.to_string())?;
    group_properties("Z2", &z2, 3)?;
    let s4 = lattice_system(4, 0.1);
    group_properties("D4xZ2", &s4.group, 2)?;
    let s8 = lattice_system(8, 0.02);
    group_properties("D8xZ2", &s8.group, 12)?;
    Ok(())
}

fn restricted_union(s: &SymmetricSystem<f64>, eps: f64) -> Check {
    let mut all: Vec<f64> = Vec::new();
    for p in 0..s.table.irreps.len() {
        if s.active.total(p) == 0 {
            continue;
        }
        let basis = s.basis(p, &BasisChoice::greedy()).map_err(|e| e.to_string())?;
        let red = s.reduce(basis).map_err(|e| e.to_string())?;
        for z in red.eigenvalues(eps).map_err(|e| e.to_string())? {
            ensure!(
                z.im.abs() <= 1e-8 * z.norm().max(1e-300),
                "irrep {}: complex eigenvalue {z}",
                red.irrep
            );
            all.push(z.re);
        }
    }
    let gen = assemble_generator(&s.spec, Some(eps)).map_err(|e| e.to_string())?;
    let mut exact = exact_spectrum(&gen).map_err(|e| e.to_string())?;
    ensure!(
        all.len() == exact.len(),
        "{} restricted vs {} exact",
        all.len(),
        exact.len()
    );
    all.sort_by(f64::total_cmp);
    exact.sort_by(f64::total_cmp);
    let scale = gen.norm_inf();
    let (az, ez) = (all.pop().unwrap(), exact.pop().unwrap());
    ensure!(az.abs().max(ez.abs()) <= 1e-12 * scale, "zero mode {az:e}, {ez:e}");
    for (a, b) in all.iter().zip(&exact) {
        ensure!(((a - b) / b).abs() <= 1e-8, "restricted {a:e} vs exact {b:e}");
    }
    Ok(())
}

fn ac8() -> Check {
    restricted_union(&lattice_system(4, 0.1), 0.1)?;
    restricted_union(&lattice_system(8, 0.02), 0.1)
}

fn ac9() -> Check {
    let p4 = enumerate_gamma0(4).map_err(|e| e.to_string())?;
    ensure!((p4.minima.len(), p4.saddles.len()) == (6, 12), "N=4 counts");
    let p8 = enumerate_gamma0(8).map_err(|e| e.to_string())?;
    ensure!(
        (p8.minima.len(), p8.saddles.len()) == (182, 560),
        "N=8 counts {} {}",
        p8.minima.len(),
        p8.saddles.len()
    );
    let find = |pts: &[CriticalPoint], x: [f64; 4]| -> Result<CriticalPoint, String> {
        pts.iter()
            .find(|c| c.x.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-12))
            .cloned()
            .ok_or(format!("no critical point at {x:?}"))
    };
    let a = find(&p4.minima, [1.0, 1.0, -1.0, -1.0])?;
    let b = find(&p4.minima, [1.0, -1.0, 1.0, -1.0])?;
    let aa = find(&p4.saddles, [1.0, 0.0, -1.0, 0.0])?;
    let ab = find(&p4.saddles, [1.0, -1.0, 0.0, 0.0])?;
    for g in [0.05, 0.1, 0.2, 0.3] {
        let close = |c: &CriticalPoint, x: [f64; 4], v: f64, name: &str| -> Check {
            for (i, (p, q)) in c.x.iter().zip(&x).enumerate() {
                ensure!((p - q).abs() <= 1e-8, "gamma {g}, {name}: x[{i}] = {p}, expected {q}");
            }
            ensure!(
                (c.value - v).abs() <= 1e-8,
                "gamma {g}, {name}: V = {}, expected {v}",
                c.value
            );
            Ok(())
        };
        let cont = |seed: &CriticalPoint| continue_gamma(seed, g, 20).map_err(|e| format!("gamma {g}: {e}"));
        let x = (1.0 - g).sqrt();
        close(&cont(&a)?, [x, x, -x, -x], -(1.0 - g).powi(2), "a")?;
        let x = (1.0 - 2.0 * g).sqrt();
        close(&cont(&b)?, [x, -x, x, -x], -(1.0 - 2.0 * g).powi(2), "b")?;
        let x = (1.0 - g).sqrt();
        close(&cont(&aa)?, [x, 0.0, -x, 0.0], -0.5 * (1.0 - g).powi(2), "a-a'")?;
        let (u, w) = ((2.0 - g).sqrt(), (2.0 - 5.0 * g).sqrt());
        let (x, y) = ((u + w) / 8f64.sqrt(), (u - w) / 8f64.sqrt());
        close(
            &cont(&ab)?,
            [x, -x, y, -y],
            -(4.0 - 12.0 * g + 7.0 * g * g) / 8.0,
            "a-b",
        )?;
    }
    Ok(())
}

/// Random rational spec whose exit exponents are pairwise distinct.
fn random_rational_spec(rng: &mut ChaCha8Rng) -> ProcessSpec<Rational64> {
    let r = |p: i64, q: i64| Rational64::new(p, q);
    loop {
        let n = rng.random_range(2..=7);
        let v: Vec<Rational64> = (0..n).map(|_| r(rng.random_range(0..40), 40)).collect();
        let mut edges: Vec<Edge<Rational64>> = Vec::new();
        for i in 1..n {
            let j = rng.random_range(0..i);
            let top = v[i].max(v[j]);
            edges.push(Edge::new(
                i,
                j,
                r(rng.random_range(1..5), rng.random_range(1..4)),
                top + r(rng.random_range(1..40), 40),
            ));
        }
        let mut spec = ProcessSpec::with_unit_mass(v, edges, r(1, 20));
        spec.mass = (0..n)
            .map(|_| r(rng.random_range(1..4), rng.random_range(1..3)))
            .collect();
        let g = trivial_group(n);
        if check_accidental_degeneracy(&spec, &g).is_ok() && metastable_order(&spec).is_ok() {
            return spec;
        }
    }
}

fn ac10() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for k in 0..10 {
        let spec = random_rational_spec(&mut rng);
        let g = trivial_group(spec.len());
        let sys = SymmetricSystem::new(spec.clone(), g, None, None).map_err(|e| format!("instance {k}: {e}"))?;
        let sym = symmetric_spectrum(&sys, &BasisChoice::greedy()).map_err(|e| format!("instance {k}: {e}"))?;
        let mut asym = asymmetric_spectrum(&spec).map_err(|e| format!("instance {k}: {e}"))?;
        sort_estimates(&mut asym);
        let key = |e: &EigenEstimate<Rational64>| (e.prefactor, e.exponent, e.multiplicity);
        let a: Vec<_> = sym.estimates.iter().map(key).collect();
        let b: Vec<_> = asym.iter().map(key).collect();
        ensure!(a == b, "instance {k}: {a:?} vs {b:?}");
        ensure!(
            sym.estimates.iter().all(|e| e.prefactor.to_f64_lossy() >= 0.0),
            "instance {k}: sign"
        );
    }
    Ok(())
}

#[test]
fn acceptance() {
    let criteria: [(&str, &str, fn() -> Check); 10] = [
        ("AC1", "N=4 active-orbit grid", ac1),
        ("AC2", "N=8 active-orbit grid", ac2),
        ("AC3", "N=4 leading-order spectrum and oracle sandwich", ac3),
        ("AC4", "N=8 reduced blocks, Schur factor and symmetry factor", ac4),
        ("AC5", "N=4 mean first-passage time and simulation", ac5),
        ("AC6", "triangularisation oracle on random specs", ac6),
        ("AC7", "group-theory identities", ac7),
        ("AC8", "block-diagonalisation completeness", ac8),
        ("AC9", "critical-point counts and continuation", ac9),
        ("AC10", "trivial group reduces to the asymmetric spectrum", ac10),
    ];
    let mut failed = Vec::new();
    for (id, name, f) in criteria {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(()) => println!("{id} PASS {name} ({secs:.1}s)"),
            Err(msg) => {
                println!("{id} FAIL {name} ({secs:.1}s): {msg}");
                failed.push(id);
            }
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
