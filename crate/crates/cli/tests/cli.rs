use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_margin-audit");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert_eq!(code(&out), 0, "{args:?} failed: {}", stderr(&out));
    out
}

fn json(dir: &Path, file: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(file)).unwrap()).unwrap()
}

/// Columns of a comma-separated file with a header row.
fn columns(path: &Path) -> Vec<(String, Vec<String>)> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let mut cols: Vec<(String, Vec<String>)> =
        lines.next().unwrap().split(',').map(|h| (h.to_string(), vec![])).collect();
    for line in lines {
        for (c, v) in cols.iter_mut().zip(line.split(',')) {
            c.1.push(v.to_string());
        }
    }
    cols
}

fn column(cols: &[(String, Vec<String>)], name: &str) -> Vec<f64> {
    cols.iter().find(|c| c.0 == name).unwrap().1.iter().map(|v| v.parse().unwrap()).collect()
}

fn group_gap(path: &Path, col: &str) -> f64 {
    let cols = columns(path);
    let x = column(&cols, "x");
    let v = column(&cols, col);
    let mut sums = [0.0; 2];
    let mut counts = [0.0; 2];
    for (xi, vi) in x.iter().zip(&v) {
        sums[*xi as usize] += vi;
        counts[*xi as usize] += 1.0;
    }
    sums[1] / counts[1] - sums[0] / counts[0]
}

fn hiring(dir: &Path, n: &str) {
    ok(dir, &["simulate", "--model", "hiring-basic", "--n", n, "--seed", "42", "--t", "0.5", "--out", "h.csv"]);
}

fn effect(report: &Value, key: &str) -> f64 {
    let (kind, target) = key.split_once('_').unwrap();
    report["decomposition"]["effects"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["kind"].as_str().unwrap().eq_ignore_ascii_case(kind) && e["target"] == target)
        .unwrap_or_else(|| panic!("no effect {key}"))["value"]
        .as_f64()
        .unwrap()
}

#[test]
fn usage_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run(dir.path(), &[])), 2);
    assert_eq!(code(&run(dir.path(), &["decompose", "--bogus"])), 2);
    assert_eq!(code(&run(dir.path(), &["simulate", "--out", "a.csv"])), 2);
    assert_eq!(code(&run(dir.path(), &["--help"])), 0);
    assert_eq!(code(&run(dir.path(), &["--version"])), 0);
}

#[test]
fn simulate_hiring_gap() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["simulate", "--model", "hiring-basic", "--p0", "0.49", "--p1", "0.51", "--n", "100000", "--seed", "42", "--t", "0.5", "--out", "h.csv"]);
    let header = fs::read_to_string(dir.path().join("h.csv")).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "x,y,s,yhat,m");
    assert!(dir.path().join("h.schema.json").is_file());
    assert!((group_gap(&dir.path().join("h.csv"), "y") - 0.02).abs() <= 0.006);

    ok(dir.path(), &["simulate", "--model", "hiring-basic", "--p0", "0.3", "--p1", "0.3", "--n", "100000", "--seed", "42", "--out", "flat.csv"]);
    assert!(group_gap(&dir.path().join("flat.csv"), "y").abs() <= 0.012);
}

#[test]
fn simulate_invalid_params_exit_2() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &["simulate", "--model", "hiring-basic", "--p0", "1.5", "--n", "10", "--out", "h.csv"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("invalid model parameters"), "{}", stderr(&out));
}

#[test]
fn omitted_seed_is_logged() {
    let dir = TempDir::new().unwrap();
    let out = ok(dir.path(), &["simulate", "--model", "hiring-basic", "--n", "100", "--out", "h.csv"]);
    assert!(stderr(&out).contains("using 42"));
    let explicit = TempDir::new().unwrap();
    ok(explicit.path(), &["simulate", "--model", "hiring-basic", "--n", "100", "--seed", "42", "--out", "h.csv"]);
    assert_eq!(
        fs::read(dir.path().join("h.csv")).unwrap(),
        fs::read(explicit.path().join("h.csv")).unwrap()
    );
}

#[test]
fn decompose_hiring() {
    let dir = TempDir::new().unwrap();
    hiring(dir.path(), "100000");
    ok(dir.path(), &["decompose", "--data", "h.csv", "--nuisance", "frequency", "--out", "d.json"]);
    let r = json(dir.path(), "d.json");
    for key in ["version", "config_echo", "decomposition", "diagnostics"] {
        assert!(r.get(key).is_some(), "missing {key}");
    }
    assert!(r.get("audit").is_none());
    assert!((effect(&r, "de_s") - 0.02).abs() < 0.01);
    assert!((effect(&r, "de_m") - 0.98).abs() < 0.01);
    assert_eq!(effect(&r, "tv_yhat"), 1.0);
    assert!(r["decomposition"]["additivity_residual"].as_f64().unwrap().abs() <= 1e-10);
}

#[test]
fn cor1_without_outcome_exit_2() {
    let dir = TempDir::new().unwrap();
    hiring(dir.path(), "1000");
    let mut schema = json(dir.path(), "h.schema.json");
    schema.as_object_mut().unwrap().remove("y");
    fs::write(dir.path().join("noy.schema.json"), schema.to_string()).unwrap();
    let out = run(dir.path(), &["decompose", "--data", "h.csv", "--schema", "noy.schema.json", "--mode", "cor1"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("outcome column is missing"), "{}", stderr(&out));
}

#[test]
fn malformed_inputs_exit_2() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.csv"), "x,y,s\n0,1,0.3\n1,zz,0.4\n").unwrap();
    fs::write(d.join("bad.schema.json"), r#"{"x":"x","x0":0,"x1":1,"y":"y","s":"s","threshold":{"mode":"fixed","value":0.5}}"#).unwrap();
    let out = run(d, &["decompose", "--data", "bad.csv"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).starts_with("error:"));

    fs::write(d.join("junk.schema.json"), "{not json").unwrap();
    assert_eq!(code(&run(d, &["decompose", "--data", "bad.csv", "--schema", "junk.schema.json"])), 2);
    assert_eq!(code(&run(d, &["decompose", "--data", "missing.csv"])), 2);
    assert_eq!(code(&run(d, &["oracle", "--model-file", "junk.schema.json"])), 2);
    assert_eq!(code(&run(d, &["influence", "--data", "bad.csv", "--target", "q"])), 2);
}

#[test]
fn estimation_error_names_term() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    // z = 2 only ever appears with x = 1
    fs::write(d.join("e.csv"), "x,z,y,s\n0,0,0,0.2\n0,1,1,0.7\n1,0,1,0.6\n1,1,0,0.4\n1,2,1,0.9\n").unwrap();
    fs::write(d.join("e.schema.json"), r#"{"x":"x","x0":0,"x1":1,"z":["z"],"y":"y","s":"s","threshold":{"mode":"fixed","value":0.5}}"#).unwrap();
    let out = run(d, &["decompose", "--data", "e.csv", "--nuisance", "frequency"]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("estimation failed at term"), "{err}");
}

fn write_policy(dir: &Path, name: &str, body: &str) {
    fs::write(dir.join(name), body).unwrap();
}

#[test]
fn audit_scenarios_exit_codes() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    hiring(d, "20000");
    write_policy(d, "none.json", r#"{"DE":"none","IE":"none","SE":"none"}"#);
    let out = run(d, &["audit", "--data", "h.csv", "--policy", "none.json", "--bootstrap", "200", "--seed", "1", "--out", "a.json"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("FAIL") && text.contains("amplification along DE: 0.98"), "{text}");
    let r = json(d, "a.json");
    assert_eq!(r["audit"]["overall"], "FAIL");
    let outcomes: Vec<&str> = r["audit"]["verdicts"].as_array().unwrap().iter().map(|v| v["outcome"].as_str().unwrap()).collect();
    assert_eq!(outcomes, ["fail", "pass", "pass"]);

    write_policy(d, "weak.json", r#"{"DE":"weak","IE":"none","SE":"none"}"#);
    let out = run(d, &["audit", "--data", "h.csv", "--policy", "weak.json", "--bootstrap", "200", "--seed", "1", "--out", "w.json"]);
    assert_eq!(code(&out), 1);
    let de = &json(d, "w.json")["audit"]["verdicts"][0];
    assert_eq!(de["outcome"], "fail");
    let checks = de["checks"].as_array().unwrap();
    assert_eq!(checks[0]["decision"], "consistent");
    assert_eq!(checks[1]["statement"]["type"], "zero");
    assert_eq!(checks[1]["decision"], "violated");

    ok(d, &["simulate", "--model", "random-discrete", "--model-seed", "13", "--no-direct", "--seed", "42", "--n", "20000", "--score", "outcome-fit", "--out", "fair.csv"]);
    write_policy(d, "bn.json", r#"{"DE":"none","IE":"strong","SE":"strong"}"#);
    let out = run(d, &["audit", "--data", "fair.csv", "--policy", "bn.json", "--seed", "42"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["audit"]["overall"], "SUCCESS");
    assert!(stderr(&out).contains("SUCCESS"));
}

#[test]
fn malformed_policy_exit_2() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    hiring(d, "500");
    for (i, body) in [r#"{"DE":"nope","IE":"none","SE":"none"}"#, r#"{"DE":"none"}"#, "[1,2", r#"{"DE":"none","IE":"none","SE":"none","level":1.5}"#]
        .iter()
        .enumerate()
    {
        let name = format!("p{i}.json");
        write_policy(d, &name, body);
        let out = run(d, &["audit", "--data", "h.csv", "--policy", &name, "--bootstrap", "20"]);
        assert_eq!(code(&out), 2, "{body}: {}", stderr(&out));
    }
}

#[test]
fn influence_hiring_constant_and_mean() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    hiring(d, "5000");
    ok(d, &["influence", "--data", "h.csv", "--target", "s", "--nuisance", "frequency", "--out", "inf.csv"]);
    let cols = columns(&d.join("inf.csv"));
    let si = column(&cols, "si_de");
    assert!(si.iter().all(|v| *v == si[0]));
    ok(d, &["decompose", "--data", "h.csv", "--nuisance", "frequency", "--out", "d.json"]);
    let mean = si.iter().sum::<f64>() / si.len() as f64;
    assert!((mean - effect(&json(d, "d.json"), "de_s")).abs() <= 1e-12);
}

#[test]
fn random_discrete_round_trip_against_oracle() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--model", "random-discrete", "--z-levels", "3", "--w-levels", "3", "--seed", "7", "--n", "200000", "--out", "r.csv"]);
    let model = json(d, "r.model.json");
    assert!(model.get("mechanisms").is_some() || model.get("params").is_some());
    ok(d, &["oracle", "--model-file", "r.model.json", "--strata", "--out", "o.json"]);
    ok(d, &["decompose", "--data", "r.csv", "--nuisance", "frequency", "--out", "d.json"]);
    let (o, r) = (json(d, "o.json"), json(d, "d.json"));
    for t in ["y", "s", "yhat", "m"] {
        for k in ["de", "ie", "se"] {
            let truth = o["effects"][t][k].as_f64().unwrap();
            let est = effect(&r, &format!("{k}_{t}"));
            assert!((truth - est).abs() <= 0.01, "{k}_{t}: {est} vs {truth}");
        }
    }

    ok(d, &["influence", "--data", "r.csv", "--target", "y", "--nuisance", "frequency", "--out", "i.csv", "--strata-out", "st.json"]);
    let strata = json(d, "st.json");
    let truth = o["strata"]["y"].as_array().unwrap();
    let label = |v: &Value| v.as_array().unwrap().iter().map(|x| x.to_string().trim_matches('"').to_string()).collect::<Vec<_>>();
    let mut worst: f64 = 0.0;
    for s in strata["de"].as_array().unwrap() {
        let cell = truth.iter().find(|c| label(&c["z"]) == label(&s["z"]) && label(&c["w"]) == label(&s["w"])).unwrap();
        worst = worst.max((cell["influence_limit"].as_f64().unwrap() - s["mean"].as_f64().unwrap()).abs());
    }
    assert!(worst <= 0.02, "worst stratum error {worst}");
}

#[test]
fn oracle_builtins() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let out = ok(d, &["oracle", "--model", "hiring-basic", "--p0", "0.49", "--p1", "0.51", "--t", "0.5"]);
    let o: Value = serde_json::from_slice(&out.stdout).unwrap();
    let get = |o: &Value, t: &str, k: &str| o["effects"][t][k].as_f64().unwrap();
    assert!((get(&o, "y", "de") - 0.02).abs() < 1e-12);
    assert_eq!(get(&o, "yhat", "de"), 1.0);
    assert!((get(&o, "m", "de") - 0.98).abs() < 1e-12);
    for t in ["y", "yhat", "m"] {
        assert!(get(&o, t, "ie").abs() < 1e-12 && get(&o, t, "se").abs() < 1e-12);
    }

    let out = ok(d, &["oracle", "--model", "hiring-extended", "--alpha", "0.2", "--beta", "0.45", "--lambda", "0.1"]);
    let o: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((get(&o, "s", "de") - 0.2).abs() < 1e-12);
    // ie = -lambda * beta
    assert!((get(&o, "s", "ie") + 0.045).abs() < 1e-12);
    assert!(get(&o, "s", "se").abs() < 1e-12);

    let out = ok(d, &["oracle", "--model", "hiring-basic", "--mc", "200000", "--seed", "3"]);
    let mc: Value = serde_json::from_slice(&out.stdout).unwrap();
    let exact: Value = serde_json::from_slice(&ok(d, &["oracle", "--model", "hiring-basic"]).stdout).unwrap();
    for t in ["y", "yhat", "m"] {
        let se = mc["effects"][t]["mc_std_error"].as_f64().unwrap();
        for k in ["de", "ie", "se", "tv"] {
            assert!((get(&mc, t, k) - get(&exact, t, k)).abs() <= 3.0 * se + 1e-12, "{t}.{k}");
        }
    }
}

#[test]
fn plot_svg_matches_csv() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    hiring(d, "3000");
    ok(d, &["decompose", "--data", "h.csv", "--bootstrap", "50", "--seed", "9", "--plot", "fig", "--out", "d.json"]);
    let svg = fs::read_to_string(d.join("fig.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).expect("well-formed svg");
    let bars: Vec<[String; 4]> = doc
        .descendants()
        .filter(|n| n.has_attribute("data-term"))
        .map(|n| {
            ["data-term", "data-value", "data-ci-low", "data-ci-high"].map(|a| n.attribute(a).unwrap().to_string())
        })
        .collect();
    let csv = fs::read_to_string(d.join("fig.csv")).unwrap();
    let rows: Vec<[String; 4]> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            [f[0], f[1], f[2], f[3]].map(String::from)
        })
        .collect();
    assert_eq!(bars, rows);
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().all(|r| !r[2].is_empty() && !r[3].is_empty()));
    assert!(svg.contains("#4C72B0") && svg.contains("#DD8452"));
}

#[test]
fn replicates_and_determinism() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    hiring(d, "2000");
    let args = ["decompose", "--data", "h.csv", "--bootstrap", "40", "--seed", "5", "--replicates-out", "r.csv"];
    let a = ok(d, &args).stdout;
    let reps = fs::read_to_string(d.join("r.csv")).unwrap();
    assert!(reps.starts_with("replicate,"));
    assert_eq!(reps.lines().count(), 41);
    let b = ok(d, &args).stdout;
    assert_eq!(normalize(&a), normalize(&b));
}

fn normalize(bytes: &[u8]) -> String {
    let mut v: Value = serde_json::from_slice(bytes).unwrap();
    v["diagnostics"]["generated_at"] = Value::String("<timestamp>".into());
    serde_json::to_string_pretty(&v).unwrap() + "\n"
}

#[test]
fn golden_report() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    hiring(d, "2000");
    let out = ok(d, &["decompose", "--data", "h.csv", "--nuisance", "frequency", "--bootstrap", "30", "--seed", "42"]);
    let got = normalize(&out.stdout);
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/decompose_hiring.json");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(golden.parent().unwrap()).unwrap();
        fs::write(&golden, &got).unwrap();
    }
    assert_eq!(got, fs::read_to_string(&golden).expect("golden file present"));
}

/// Synthetic file with the column layout of the public COMPAS export.
fn fake_compas(path: &Path, n: usize) {
    let mut state: u64 = 0x9E37_79B9_7F4A_7C15;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let races = ["African-American", "Caucasian", "Hispanic", "Other"];
    let mut s = String::from("id,name,sex,age,race,juv_fel_count,juv_misd_count,juv_other_count,priors_count,c_charge_degree,decile_score,two_year_recid\n");
    for i in 0..n {
        let race = races[(next() * 4.0) as usize];
        let nonwhite = race != "Caucasian";
        let sex = if next() < 0.8 { "Male" } else { "Female" };
        let age = 18 + (next() * 50.0) as u32;
        let juv = (next() < 0.1) as u32;
        let priors = (next() * next() * 15.0) as u32;
        let felony = next() < 0.6;
        let risk = 0.2 + 0.03 * priors as f64 + 0.1 * juv as f64 + 0.1 * u32::from(nonwhite) as f64 - 0.003 * (age - 18) as f64;
        let risk = risk.clamp(0.05, 0.95);
        let decile = ((risk * 10.0).ceil() as u32).clamp(1, 10);
        let y = (next() < risk) as u32;
        s.push_str(&format!(
            "{i},\"Doe, J{i}\",{sex},{age},{race},{juv},0,{},{priors},{},{decile},{y}\n",
            (next() < 0.05) as u32,
            if felony { "F" } else { "M" }
        ));
    }
    fs::write(path, s).unwrap();
}

#[test]
fn compas_config_runs_on_compas_layout() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fake_compas(&d.join("compas.csv"), 3000);
    let schema = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/compas.schema.json");
    let schema = schema.to_str().unwrap();
    ok(d, &["decompose", "--data", "compas.csv", "--schema", schema, "--mode", "cor1", "--bootstrap", "30", "--seed", "1", "--plot", "fig", "--out", "r.json"]);
    let r = json(d, "r.json");
    assert_eq!(r["decomposition"]["n"], 3000);
    // logistic nuisances: the identity holds only approximately
    assert!(r["decomposition"]["additivity_residual"].as_f64().unwrap().is_finite());
    assert_eq!(r["decomposition"]["terms"].as_array().unwrap().len(), 6);
    assert_eq!(r["diagnostics"]["nuisance"]["requested"], "auto");
    assert!(d.join("fig.svg").is_file());
}
