use crate::{Cli, Command, Format, InputArgs, Oracle, SetArgs};
use kramers_core::asymptotic::EigenEstimate;
use kramers_core::equivariant::{BasisChoice, SymmetricSystem};
use kramers_core::hierarchy::{
    asymmetric_spectrum, hierarchy_csv, metastable_order, successor_graph_dot, tree_dot, ExponentSystem,
    MetastableOrder, Target,
};
use kramers_core::io::{document_to_string, parse_document, Document, GroupInput};
use kramers_core::lattice::{build_process, standard_representatives, PrefactorMode};
use kramers_core::model::{assemble_generator, validate_spec, ProcessSpec};
use kramers_core::spectra::{
    cluster_report, exact_spectrum, hitting_times, rows_csv, rows_json, rows_table, simulate_mfpt, sort_estimates,
    spectrum_rows, sweep_csv, symmetric_spectrum, triangularize, ClusterReport, SimulationConfig, SpectrumRow,
};
use kramers_core::symgroup::{
    character_table, check_accidental_degeneracy, check_invariance, check_spec_invariance, generate_group,
    table_from_classes, validate_table, DEFAULT_GROUP_LIMIT,
};
use kramers_core::{DoubleDouble, Error, Scalar};
use num_rational::Rational64;
use serde_json::{json, Value};
use std::fmt::Write as _;

pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::Parse(_)) { 2 } else { 1 };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

pub struct Outcome {
    pub text: String,
    pub code: u8,
}

impl Outcome {
    fn ok(text: String) -> Self {
        Outcome { text, code: 0 }
    }
}

type CmdResult = Result<Outcome, Failure>;

pub fn run(cli: &Cli) -> CmdResult {
    if let Command::LatticeGen {
        n,
        gamma,
        prefactors,
        epsilon,
        allow_large_gamma,
    } = &cli.command
    {
        return lattice_gen(*n, *gamma, prefactors, *epsilon, *allow_large_gamma);
    }
    if cli.rational {
        run_with::<Rational64>(cli)
    } else {
        run_with::<f64>(cli)
    }
}

pub fn emit(cli: &Cli, text: &str) -> Result<(), Failure> {
    match &cli.out {
        Some(path) => {
            std::fs::write(path, text).map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load<S: Scalar>(input: &InputArgs) -> Result<Document<S>, Failure> {
    let text = std::fs::read_to_string(&input.input)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", input.input.display())))?;
    Ok(parse_document(&text)?)
}

fn format_or(cli: &Cli, default: Format, allowed: &[Format]) -> Result<Format, Failure> {
    let f = cli.format.unwrap_or(default);
    if allowed.contains(&f) {
        Ok(f)
    } else {
        Err(Failure::usage(format!(
            "format {f:?} is not available for this command"
        )))
    }
}

fn run_with<S: Scalar>(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Validate(input) => validate::<S>(cli, &load(input)?),
        Command::Hierarchy { input, orbits } => hierarchy::<S>(cli, &load(input)?, *orbits),
        Command::Tree {
            input,
            successors,
            orbits,
        } => tree::<S>(cli, &load(input)?, *successors, *orbits),
        Command::Spectrum {
            input,
            epsilon,
            oracle,
            no_symmetry,
        } => spectrum::<S>(cli, &load(input)?, *epsilon, *oracle, *no_symmetry),
        Command::Mfpt { input, sets, epsilon } => mfpt::<S>(cli, &load(input)?, sets, *epsilon),
        Command::Simulate {
            input,
            sets,
            epsilon,
            samples,
            seed,
            max_steps,
        } => {
            let mut cfg = SimulationConfig::new(*samples, *seed);
            cfg.max_steps = *max_steps;
            simulate::<S>(cli, &load(input)?, sets, *epsilon, &cfg)
        }
        Command::Sweep {
            input,
            sweep,
            oracle,
            no_symmetry,
        } => sweep_cmd::<S>(cli, &load(input)?, sweep, *oracle, *no_symmetry),
        Command::LatticeGen { .. } => unreachable!("handled before dispatch"),
    }
}

// ---------------------------------------------------------------------------

struct Check {
    name: &'static str,
    outcome: Result<String, String>,
}

fn validate<S: Scalar>(cli: &Cli, doc: &Document<S>) -> CmdResult {
    let format = format_or(cli, Format::Table, &[Format::Table, Format::Json])?;
    let mut checks = Vec::new();
    let diags = validate_spec(&doc.spec);
    let structure_ok = diags.is_empty();
    checks.push(Check {
        name: "spec structure",
        outcome: if structure_ok {
            Ok(format!("{} states, {} edges", doc.spec.len(), doc.spec.edges.len()))
        } else {
            Err(diags.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))
        },
    });
    if structure_ok {
        match &doc.group {
            Some(g) => validate_group(doc, g, &mut checks),
            None => checks.push(Check {
                name: "metastable order",
                outcome: metastable_order(&doc.spec)
                    .map(|o| format!("theta = {}", o.theta))
                    .map_err(|e| e.to_string()),
            }),
        }
    }
    let all_ok = checks.iter().all(|c| c.outcome.is_ok());
    let text = match format {
        Format::Json => {
            let list: Vec<Value> = checks
                .iter()
                .map(|c| match &c.outcome {
                    Ok(m) => json!({"check": c.name, "pass": true, "message": m}),
                    Err(m) => json!({"check": c.name, "pass": false, "message": m}),
                })
                .collect();
            format!(
                "{}\n",
                serde_json::to_string_pretty(&json!({"pass": all_ok, "checks": list})).unwrap()
            )
        }
        _ => {
            let mut s = String::new();
            for c in &checks {
                match &c.outcome {
                    Ok(m) => writeln!(s, "PASS {}: {m}", c.name),
                    Err(m) => writeln!(s, "FAIL {}: {m}", c.name),
                }
                .unwrap();
            }
            s
        }
    };
    Ok(Outcome {
        text,
        code: if all_ok { 0 } else { 1 },
    })
}

fn validate_group<S: Scalar>(doc: &Document<S>, g: &GroupInput, checks: &mut Vec<Check>) {
    let group = match generate_group(&g.generators, g.structure.clone(), DEFAULT_GROUP_LIMIT) {
        Ok(group) => {
            checks.push(Check {
                name: "group closure",
                outcome: Ok(format!("order {}", group.order())),
            });
            group
        }
        Err(e) => {
            checks.push(Check {
                name: "group closure",
                outcome: Err(e.to_string()),
            });
            return;
        }
    };
    let violations = check_spec_invariance(&doc.spec, &group);
    checks.push(Check {
        name: "spec invariance",
        outcome: if violations.is_empty() {
            Ok("invariant".into())
        } else {
            Err(violations.join("; "))
        },
    });
    checks.push(Check {
        name: "generator invariance",
        outcome: match assemble_generator(&doc.spec, None) {
            Ok(gen) => match check_invariance(&gen.matrix, &group) {
                None => Ok("invariant".into()),
                Some((k, a, b)) => Err(format!(
                    "generator {k} moves rate ({}, {})",
                    doc.spec.labels[a], doc.spec.labels[b]
                )),
            },
            Err(e) => Err(e.to_string()),
        },
    });
    let table = match &g.table {
        Some(t) => table_from_classes(&group, &t.classes, &t.rows),
        None => character_table(&group),
    };
    checks.push(Check {
        name: "character table",
        outcome: table
            .and_then(|t| validate_table(&group, &t).map(|_| t))
            .map(|t| format!("{} irreps", t.irreps.len()))
            .map_err(|e| e.to_string()),
    });
    checks.push(Check {
        name: "accidental degeneracy",
        outcome: check_accidental_degeneracy(&doc.spec, &group)
            .map(|_| "none".into())
            .map_err(|e| e.to_string()),
    });
    if checks.iter().any(|c| c.outcome.is_err()) {
        return;
    }
    let sys = match doc.system() {
        Ok(Some(sys)) => sys,
        Ok(None) => return,
        Err(e) => {
            checks.push(Check {
                name: "orbit decomposition",
                outcome: Err(e.to_string()),
            });
            return;
        }
    };
    checks.push(Check {
        name: "orbit decomposition",
        outcome: Ok(format!("{} orbits", sys.orbits.orbits.len())),
    });
    checks.push(Check {
        name: "orbit successors",
        outcome: sys
            .orbit_successors()
            .map(|_| "unique".into())
            .map_err(|e| e.to_string()),
    });
    checks.push(Check {
        name: "orbit metastable order",
        outcome: metastable_order(&sys.orbit_spec())
            .map(|o| format!("theta = {}", o.theta))
            .map_err(|e| e.to_string()),
    });
}

// ---------------------------------------------------------------------------

fn level_spec<S: Scalar>(doc: &Document<S>, orbits: bool) -> Result<ProcessSpec<S>, Failure> {
    if !orbits {
        return Ok(doc.spec.clone());
    }
    let sys = doc
        .system()?
        .ok_or_else(|| Failure::usage("--orbits needs a group in the spec"))?;
    Ok(sys.orbit_spec())
}

fn hierarchy<S: Scalar>(cli: &Cli, doc: &Document<S>, orbits: bool) -> CmdResult {
    let format = format_or(cli, Format::Table, &[Format::Table, Format::Csv, Format::Json])?;
    let spec = level_spec(doc, orbits)?;
    let ord = metastable_order(&spec)?;
    let labels = &spec.labels;
    let succ = |t: &Target| match t {
        Target::State(j) => labels[*j].clone(),
        Target::Sink => "sink".into(),
    };
    let text = match format {
        Format::Csv => hierarchy_csv(&ord, labels),
        Format::Json => {
            let levels: Vec<Value> = ord
                .levels
                .iter()
                .enumerate()
                .map(|(k, l)| {
                    json!({
                        "k": k + 2,
                        "state": labels[l.state],
                        "H": l.exponent.to_f64_lossy(),
                        "H_exact": l.exponent.to_string(),
                        "C": l.prefactor.to_f64_lossy(),
                        "C_exact": l.prefactor.to_string(),
                        "successor": succ(&l.successor),
                    })
                })
                .collect();
            let order: Vec<&String> = ord.order.iter().map(|&i| &labels[i]).collect();
            format!(
                "{}\n",
                serde_json::to_string_pretty(&json!({
                    "order": order,
                    "ground": labels[ord.order[0]],
                    "levels": levels,
                    "theta": ord.theta.to_f64_lossy(),
                    "theta_exact": ord.theta.to_string(),
                }))
                .unwrap()
            )
        }
        _ => {
            let mut s = format!(
                "{:>3}  {:<10} {:>14} {:>14}  {}\n",
                "k", "state", "H_k", "C_k", "successor"
            );
            writeln!(s, "{:>3}  {:<10} {:>14} {:>14}  -", 1, labels[ord.order[0]], "inf", "0").unwrap();
            for (k, l) in ord.levels.iter().enumerate() {
                writeln!(
                    s,
                    "{:>3}  {:<10} {:>14} {:>14}  {}",
                    k + 2,
                    labels[l.state],
                    l.exponent.to_string(),
                    l.prefactor.to_string(),
                    succ(&l.successor)
                )
                .unwrap();
            }
            writeln!(s, "theta = {}", ord.theta).unwrap();
            s
        }
    };
    Ok(Outcome::ok(text))
}

fn tree<S: Scalar>(cli: &Cli, doc: &Document<S>, successors: bool, orbits: bool) -> CmdResult {
    format_or(cli, Format::Dot, &[Format::Dot])?;
    let spec = level_spec(doc, orbits)?;
    let text = if successors {
        let graph = ExponentSystem::from_spec(&spec)?.successor_graph()?;
        successor_graph_dot(&graph, &spec.labels)
    } else {
        let ord = metastable_order(&spec)?;
        tree_dot(&ord.tree, &spec.labels)
    };
    Ok(Outcome::ok(text))
}

// ---------------------------------------------------------------------------

struct SpectrumData<S> {
    estimates: Vec<EigenEstimate<S>>,
    sites: Vec<String>,
    report: ClusterReport<S>,
    theta: Option<S>,
    flags: Vec<String>,
}

fn estimates<S: Scalar>(doc: &Document<S>, no_symmetry: bool) -> Result<SpectrumData<S>, Failure> {
    if !no_symmetry {
        if let Some(sys) = doc.system()? {
            let sp = symmetric_spectrum(&sys, &BasisChoice::greedy())?;
            return Ok(SpectrumData {
                sites: sys.orbit_names(),
                estimates: sp.estimates,
                report: sp.report,
                theta: sp.theta,
                flags: sp.flags,
            });
        }
    }
    let mut est = asymmetric_spectrum(&doc.spec)?;
    sort_estimates(&mut est);
    let theta = est.iter().find_map(|e| e.theta.clone());
    Ok(SpectrumData {
        report: cluster_report(&est),
        estimates: est,
        sites: doc.spec.labels.clone(),
        theta,
        flags: Vec::new(),
    })
}

fn oracle_values<S: Scalar>(spec: &ProcessSpec<S>, eps: f64, oracle: Oracle) -> Result<Vec<f64>, Failure> {
    let gen = assemble_generator(spec, Some(eps))?;
    Ok(match oracle {
        Oracle::Exact => exact_spectrum(&gen)?,
        Oracle::Triangularize => {
            let ord = metastable_order(spec)?;
            triangularize::<DoubleDouble>(&gen, &ord.order)?.eigenvalues()
        }
    })
}

fn report_json<S: Scalar>(data: &SpectrumData<S>) -> Value {
    let clusters: Vec<Value> = data
        .report
        .clusters
        .iter()
        .map(|c| {
            json!({
                "H": c.exponent.as_ref().map(|h| h.to_f64_lossy()),
                "multiplicity": c.multiplicity,
                "prefactors": c.prefactors.iter().map(|p| p.to_f64_lossy()).collect::<Vec<_>>(),
                "irreps": c.irreps,
            })
        })
        .collect();
    let gap = data.report.gap.as_ref().map(|g| {
        json!({
            "H": g.exponent.to_f64_lossy(),
            "C": g.prefactor.to_f64_lossy(),
            "irrep": data.estimates[g.estimate].irrep,
            "tie_broken": g.tie_broken,
        })
    });
    json!({
        "clusters": clusters,
        "spectral_gap": gap,
        "theta": data.theta.as_ref().map(|t| t.to_f64_lossy()),
        "flags": data.flags,
    })
}

fn report_table<S: Scalar>(data: &SpectrumData<S>) -> String {
    let mut s = String::from("\nclusters:\n");
    for c in &data.report.clusters {
        let h = c.exponent.as_ref().map_or_else(|| "inf".into(), |h| h.to_string());
        let prefs: Vec<String> = c.prefactors.iter().map(|p| p.to_string()).collect();
        writeln!(
            s,
            "  H = {h}: multiplicity {}, prefactors [{}], irreps [{}]",
            c.multiplicity,
            prefs.join(", "),
            c.irreps.join(", ")
        )
        .unwrap();
    }
    if let Some(g) = &data.report.gap {
        writeln!(
            s,
            "spectral gap: H = {}, C = {}{}",
            g.exponent,
            g.prefactor,
            if g.tie_broken {
                " (exponent shared; chosen by prefactor)"
            } else {
                ""
            }
        )
        .unwrap();
    }
    if let Some(t) = &data.theta {
        writeln!(s, "theta = {t}").unwrap();
    }
    for f in &data.flags {
        writeln!(s, "flag: {f}").unwrap();
    }
    s
}

fn spectrum<S: Scalar>(
    cli: &Cli,
    doc: &Document<S>,
    epsilon: Option<f64>,
    oracle: Option<Oracle>,
    no_symmetry: bool,
) -> CmdResult {
    let format = format_or(cli, Format::Table, &[Format::Table, Format::Csv, Format::Json])?;
    let eps = epsilon.unwrap_or_else(|| doc.spec.epsilon.to_f64_lossy());
    if !(eps > 0.0) {
        return Err(Failure::usage("epsilon must be positive"));
    }
    let data = estimates(doc, no_symmetry)?;
    let exact = oracle.map(|o| oracle_values(&doc.spec, eps, o)).transpose()?;
    let rows = spectrum_rows(&data.estimates, &data.sites, eps, exact.as_deref())?;
    let text = match format {
        Format::Csv => rows_csv(&rows),
        Format::Json => {
            let mut v = report_json(&data);
            v["epsilon"] = json!(eps);
            v["rows"] = rows_json(&rows);
            format!("{}\n", serde_json::to_string_pretty(&v).unwrap())
        }
        _ => format!("epsilon = {eps}\n{}{}", rows_table(&rows), report_table(&data)),
    };
    Ok(Outcome::ok(text))
}

fn sweep_cmd<S: Scalar>(cli: &Cli, doc: &Document<S>, sweep: &[f64], oracle: Oracle, no_symmetry: bool) -> CmdResult {
    let format = format_or(cli, Format::Csv, &[Format::Csv, Format::Json])?;
    if sweep.iter().any(|&e| !(e > 0.0)) || sweep.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Failure::usage("sweep values must be positive and strictly decreasing"));
    }
    let data = estimates(doc, no_symmetry)?;
    let mut all: Vec<(f64, Vec<SpectrumRow>)> = Vec::new();
    for &eps in sweep {
        let exact = oracle_values(&doc.spec, eps, oracle)?;
        all.push((eps, spectrum_rows(&data.estimates, &data.sites, eps, Some(&exact))?));
    }
    let text = match format {
        Format::Json => {
            let v: Vec<Value> = all
                .iter()
                .map(|(eps, rows)| json!({"epsilon": eps, "rows": rows_json(rows)}))
                .collect();
            format!("{}\n", serde_json::to_string_pretty(&v).unwrap())
        }
        _ => sweep_csv(&all),
    };
    Ok(Outcome::ok(text))
}

// ---------------------------------------------------------------------------

struct Sets {
    target: Vec<usize>,
    start: Vec<(usize, f64)>,
    /// Target expressed as orbit indices, when given by orbits.
    target_orbits: Option<Vec<usize>>,
}

fn resolve_states<S: Scalar>(doc: &Document<S>, names: &[String]) -> Result<Vec<usize>, Failure> {
    names
        .iter()
        .map(|l| {
            doc.spec
                .label_index(l)
                .ok_or_else(|| Failure::usage(format!("unknown state `{l}`")))
        })
        .collect()
}

fn resolve_orbits<S: Scalar>(
    sys: &SymmetricSystem<S>,
    doc: &Document<S>,
    names: &[String],
) -> Result<Vec<usize>, Failure> {
    names
        .iter()
        .map(|t| {
            if let Some(i) = doc.spec.label_index(t) {
                return Ok(sys.orbits.orbit_of[i]);
            }
            t.parse::<usize>()
                .ok()
                .filter(|&k| k >= 1 && k <= sys.orbits.orbits.len())
                .map(|k| k - 1)
                .ok_or_else(|| Failure::usage(format!("unknown orbit `{t}`")))
        })
        .collect()
}

fn resolve_sets<S: Scalar>(doc: &Document<S>, sets: &SetArgs) -> Result<(Sets, Option<SymmetricSystem<S>>), Failure> {
    let need_sys = !sets.target_orbits.is_empty() || !sets.start_orbits.is_empty();
    let sys = if need_sys {
        Some(
            doc.system()?
                .ok_or_else(|| Failure::usage("orbit sets need a group in the spec"))?,
        )
    } else {
        None
    };
    let mut target = resolve_states(doc, &sets.target)?;
    let mut start = resolve_states(doc, &sets.start)?;
    let mut target_orbits = None;
    if let Some(sys) = &sys {
        let to = resolve_orbits(sys, doc, &sets.target_orbits)?;
        for &i in &to {
            target.extend(&sys.orbits.orbits[i].members);
        }
        if sets.target.is_empty() && !to.is_empty() {
            target_orbits = Some(to);
        }
        for i in resolve_orbits(sys, doc, &sets.start_orbits)? {
            start.extend(&sys.orbits.orbits[i].members);
        }
    }
    target.sort_unstable();
    target.dedup();
    start.sort_unstable();
    start.dedup();
    if target.is_empty() || start.is_empty() {
        return Err(Failure::usage("both a target and a start set are required"));
    }
    Ok((
        Sets {
            target,
            start: start.into_iter().map(|x| (x, 1.0)).collect(),
            target_orbits,
        },
        sys,
    ))
}

/// Exit level `k + 1` when `set` is the `k` deepest states of `ord`.
fn hierarchy_level<S: Scalar>(ord: &MetastableOrder<S>, set: &[usize]) -> Option<(S, S)> {
    let k = set.len();
    if k == 0 || k >= ord.order.len() {
        return None;
    }
    let mut deepest = ord.deepest(k).to_vec();
    deepest.sort_unstable();
    let mut s = set.to_vec();
    s.sort_unstable();
    (deepest == s).then(|| {
        let l = &ord.levels[k - 1];
        (l.prefactor.clone(), l.exponent.clone())
    })
}

fn mfpt<S: Scalar>(cli: &Cli, doc: &Document<S>, sets: &SetArgs, epsilon: Option<f64>) -> CmdResult {
    let format = format_or(cli, Format::Table, &[Format::Table, Format::Csv, Format::Json])?;
    let eps = epsilon.unwrap_or_else(|| doc.spec.epsilon.to_f64_lossy());
    let (sets, sys) = resolve_sets(doc, sets)?;
    let gen = assemble_generator(&doc.spec, Some(eps))?;
    let w = hitting_times(&gen, &sets.target)?;
    let mean = w.mean_from(&sets.start)?;
    let level = match (&sys, &sets.target_orbits) {
        (Some(sys), Some(orbits)) => metastable_order(&sys.orbit_spec())
            .ok()
            .and_then(|ord| hierarchy_level(&ord, orbits)),
        _ => metastable_order(&doc.spec)
            .ok()
            .and_then(|ord| hierarchy_level(&ord, &sets.target)),
    };
    let prediction = level.as_ref().map(|(c, h)| {
        let value = (h.to_f64_lossy() / eps).exp() / c.to_f64_lossy();
        (c.clone(), h.clone(), value)
    });
    let text = match format {
        Format::Json => {
            let pred = prediction.as_ref().map(|(c, h, v)| {
                json!({"value": v, "inverse_prefactor": 1.0 / c.to_f64_lossy(), "C_exact": c.to_string(), "H": h.to_f64_lossy(), "H_exact": h.to_string(), "relative_difference": (mean - v) / v})
            });
            format!(
                "{}\n",
                serde_json::to_string_pretty(&json!({
                    "epsilon": eps,
                    "mean_first_passage_time": mean,
                    "residual": w.residual,
                    "hierarchy_prediction": pred,
                }))
                .unwrap()
            )
        }
        Format::Csv => {
            let mut s = String::from("epsilon,mfpt,residual,prediction,inverse_prefactor,H\n");
            match &prediction {
                Some((c, h, v)) => writeln!(
                    s,
                    "{eps},{mean:.12e},{:.3e},{v:.12e},{},{h}",
                    w.residual,
                    1.0 / c.to_f64_lossy()
                ),
                None => writeln!(s, "{eps},{mean:.12e},{:.3e},,,", w.residual),
            }
            .unwrap();
            s
        }
        _ => {
            let mut s = format!(
                "epsilon = {eps}\nmean first-passage time = {mean:.12e}\nsolver residual = {:.3e}\n",
                w.residual
            );
            match &prediction {
                Some((c, h, v)) => writeln!(
                    s,
                    "hierarchy prediction = (1/C) exp(H/eps) = {v:.12e}  [1/C = {}, C = {c}, H = {h}]\nrelative difference = {:.3e}",
                    1.0 / c.to_f64_lossy(),
                    (mean - v) / v
                ),
                None => writeln!(s, "hierarchy prediction: target is not a set of deepest states"),
            }
            .unwrap();
            s
        }
    };
    Ok(Outcome::ok(text))
}

fn simulate<S: Scalar>(
    cli: &Cli,
    doc: &Document<S>,
    sets: &SetArgs,
    epsilon: Option<f64>,
    cfg: &SimulationConfig,
) -> CmdResult {
    let format = format_or(cli, Format::Table, &[Format::Table, Format::Csv, Format::Json])?;
    let eps = epsilon.unwrap_or_else(|| doc.spec.epsilon.to_f64_lossy());
    let (sets, _) = resolve_sets(doc, sets)?;
    let r = match simulate_mfpt(&doc.spec, Some(eps), &sets.target, &sets.start, cfg) {
        Ok(r) => r,
        Err(Error::Timeout {
            completed,
            requested,
            partial_mean,
        }) => {
            return Err(Failure {
                code: 1,
                message: format!(
                    "step budget exhausted after {completed} of {requested} samples (partial mean {partial_mean:.6e})"
                ),
            })
        }
        Err(e) => return Err(e.into()),
    };
    let text = match format {
        Format::Json => format!(
            "{}\n",
            serde_json::to_string_pretty(&json!({"epsilon": eps, "seed": cfg.seed, "result": r})).unwrap()
        ),
        Format::Csv => format!(
            "epsilon,seed,samples,mean,stderr\n{eps},{},{},{:.12e},{:.6e}\n",
            cfg.seed, r.samples, r.mean, r.stderr
        ),
        _ => format!(
            "epsilon = {eps}\nsamples = {}\nmean = {:.12e}\nstderr = {:.6e}\n",
            r.samples, r.mean, r.stderr
        ),
    };
    Ok(Outcome::ok(text))
}

// ---------------------------------------------------------------------------

fn lattice_gen(n: usize, gamma: f64, prefactors: &str, epsilon: f64, allow_large_gamma: bool) -> CmdResult {
    let mode: PrefactorMode = prefactors.parse()?;
    if !(epsilon > 0.0) {
        return Err(Failure::usage("epsilon must be positive"));
    }
    let model = build_process(n, gamma, mode, allow_large_gamma)?;
    let mut spec = model.spec.clone();
    spec.epsilon = epsilon;
    let doc = Document {
        spec,
        group: Some(GroupInput {
            generators: model.generators.clone(),
            structure: model.structure.clone(),
            representatives: standard_representatives(n).map(|r| r.iter().map(|s| s.to_string()).collect()),
            table: None,
        }),
        meta: Some(json!({"lattice": {"n": n, "gamma": gamma, "prefactors": prefactors}})),
    };
    Ok(Outcome::ok(document_to_string(&doc)))
}
