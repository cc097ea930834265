use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn kramers(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kramers"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Header and data records of a CSV output.
fn records(o: &Output) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_reader(o.stdout.as_slice());
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|x| x.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn path(name: &str) -> String {
    fixture(name).to_string_lossy().into_owned()
}

#[test]
fn validate_exit_codes() {
    let ok = kramers(&["validate", &path("n4.json")]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    assert!(stdout(&ok).lines().all(|l| l.starts_with("PASS")));

    let bad = kramers(&["validate", &path("degenerate.json")]);
    assert_eq!(bad.status.code(), Some(1));
    let report = stdout(&bad);
    assert!(report.contains("FAIL accidental degeneracy"));
    assert!(report.contains("(a, b)") && report.contains("(b, c)"));

    let missing = kramers(&["validate", &path("does_not_exist.json")]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn malformed_input_exits_two() {
    let dir = std::env::temp_dir().join(format!("kramers-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let f = dir.join("broken.json");
    std::fs::write(&f, "{\"format\": 1, \"states\": [").unwrap();
    let o = kramers(&["spectrum", f.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn three_state_spectrum_rows() {
    let o = kramers(&["spectrum", &path("three_state.json"), "--format", "csv", "--rational"]);
    assert_eq!(o.status.code(), Some(0));
    let (_, rows) = records(&o);
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][..6], ["asym", "1", "zero", "1", "inf", "0"]);
    assert_eq!(rows[1][..6], ["asym", "3", "hierarchy", "1", "3/10", "3"]);
    // lambda_2 = -(c13/m2) exp(-h231/eps)
    assert_eq!(rows[2][..6], ["asym", "2", "hierarchy", "1", "9/10", "2"]);
}

#[test]
fn n4_spectrum_with_exact_oracle() {
    let o = kramers(&[
        "spectrum",
        &path("n4.json"),
        "--oracle",
        "exact",
        "--epsilon",
        "0.05",
        "--format",
        "csv",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let (header, rows) = records(&o);
    assert_eq!(header[9], "deviation");
    assert_eq!(rows.len(), 6);
    let theta: f64 = 0.04625;
    for r in &rows[1..] {
        let dev: f64 = r[9].parse::<f64>().unwrap().abs();
        assert!(dev < 5.0 * (-theta / 0.05f64).exp(), "{r:?}");
    }
}

#[test]
fn trivial_group_n4_is_rejected_as_degenerate() {
    // without the symmetry the tied exits are accidental
    let o = kramers(&["spectrum", &path("n4_trivial.json")]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("accidental degeneracy"), "{err}");
    let v = kramers(&["validate", &path("n4_trivial.json")]);
    assert_eq!(v.status.code(), Some(1));
}

#[test]
fn tree_output_is_byte_deterministic() {
    let a = kramers(&["tree", &path("three_state.json")]);
    let b = kramers(&["tree", &path("three_state.json")]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let dot = stdout(&a);
    assert!(dot.contains("label=\"0.8\"") && dot.contains("label=\"1.2\""));
}

#[test]
fn mfpt_reports_prediction_with_quarter_prefactor() {
    let o = kramers(&[
        "mfpt",
        &path("n4.json"),
        "--target-orbits",
        "1",
        "--start-orbits",
        "2",
        "--epsilon",
        "0.08",
        "--format",
        "json",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let pred = &v["hierarchy_prediction"];
    assert_eq!(pred["inverse_prefactor"].as_f64().unwrap(), 0.25);
    let mean = v["mean_first_passage_time"].as_f64().unwrap();
    let value = pred["value"].as_f64().unwrap();
    assert!(((mean - value) / value).abs() < 5.0 * (-0.04625f64 / 0.08).exp());
}

#[test]
fn simulate_is_reproducible() {
    let args = [
        "simulate",
        &path("three_state.json"),
        "--target",
        "1",
        "--start",
        "3",
        "--epsilon",
        "0.3",
        "--samples",
        "2000",
        "--seed",
        "7",
        "--format",
        "csv",
    ];
    let a = kramers(&args);
    let b = kramers(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn sweep_emits_long_format() {
    let o = kramers(&["sweep", &path("n4.json"), "--sweep", "0.1,0.05,0.025"]);
    assert_eq!(o.status.code(), Some(0));
    let (header, rows) = records(&o);
    assert_eq!(header[..2], ["epsilon", "irrep"]);
    assert_eq!(rows.len(), 18);
    // deviations of the nonzero modes shrink with epsilon
    for k in 1..6 {
        let dev: Vec<f64> = (0..3)
            .map(|s| rows[6 * s + k][10].parse::<f64>().unwrap().abs())
            .collect();
        assert!(dev[2] < dev[0], "row {k}: {dev:?}");
    }

    let rising = kramers(&["sweep", &path("n4.json"), "--sweep", "0.05,0.1"]);
    assert_eq!(rising.status.code(), Some(2));
}

#[test]
fn lattice_gen_round_trips_through_validate() {
    let dir = std::env::temp_dir().join(format!("kramers-cli-lg-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let f = dir.join("n4.json");
    let o = kramers(&[
        "lattice-gen",
        "--n",
        "4",
        "--gamma",
        "0.1",
        "--out",
        f.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read(&f).unwrap(), std::fs::read(fixture("n4.json")).unwrap());
    let v = kramers(&["validate", f.to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(0));
}

#[test]
fn hierarchy_json_on_orbits() {
    let o = kramers(&["hierarchy", &path("n4.json"), "--orbits", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["ground"], "++--");
    assert_eq!(v["levels"][0]["C"].as_f64().unwrap(), 4.0);
}
