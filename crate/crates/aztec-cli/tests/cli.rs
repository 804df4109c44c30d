use std::path::Path;
use std::process::{Command, Output};

fn aztec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aztec")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

const LLN: &str = r#"
experiment = "lln"
m_list = [40, 80]
gammas = [0.5]
ks = [0, 1, 2]
seed = 3

[model]
variant = "deterministic"
beta = [0.5]
y = [0.0]
"#;

#[test]
fn selftest_passes() {
    let out = aztec(&["selftest"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("selftest PASS"));
}

#[test]
fn lln_writes_reports_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "lln.toml", LLN);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, threads) in [(&a, "1"), (&b, "2")] {
        let o = aztec(&["lln", "--config", &config, "--out", out.to_str().unwrap(), "--threads", threads]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).contains("6/6 rows within tolerance"));
    }
    let csv = std::fs::read(a.join("lln.csv")).unwrap();
    assert_eq!(csv, std::fs::read(b.join("lln.csv")).unwrap());
    assert!(String::from_utf8_lossy(&csv).starts_with("label,M,gamma1,gamma2,k,l,value,std_error,provenance,"));
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("lln.json")).unwrap()).unwrap();
    assert_eq!(summary["experiment"], "lln");
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn seed_override_changes_the_hash_only() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "lln.toml", LLN);
    let hash = |seed: &str| {
        let out = dir.path().join(seed);
        assert!(aztec(&["lln", "--config", &config, "--out", out.to_str().unwrap(), "--seed", seed]).status.success());
        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("lln.json")).unwrap()).unwrap();
        (v["config_hash"].as_str().unwrap().to_owned(), v["config"]["seed"].as_u64().unwrap())
    };
    let (h1, s1) = hash("1");
    let (h2, s2) = hash("2");
    assert_ne!(h1, h2);
    assert_eq!((s1, s2), (1, 2));
}

#[test]
fn bad_inputs_exit_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    // Unknown keys are rejected at the top level and inside the model table.
    for (name, text) in [("top.toml", format!("bogus = 1\n{LLN}")), ("model.toml", format!("{LLN}bogus = 1\n"))] {
        let o = aztec(&["lln", "--config", &write(dir.path(), name, &text)]);
        assert_eq!(o.status.code(), Some(2), "{name}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"), "{name}");
    }
    let lln = write(dir.path(), "lln.toml", LLN);
    let o = aztec(&["quenched", "--config", &lln]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not `quenched`"));
    // An i.i.d. environment has no regime-M limit.
    let iid = r#"
experiment = "annealed-sqrt"
m_list = [40]
gammas = [0.5]
ks = [1]
num_envs = 10

[model]
variant = "iid"

[model.law]
kind = "independent"
y = { kind = "point", value = 0.0 }
beta = { kind = "discrete", values = [0.3, 0.7], probs = [0.5, 0.5] }
"#;
    let mismatch = write(dir.path(), "m.toml", iid);
    let o = aztec(&["annealed", "--config", &mismatch, "--regime", "m"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        aztec::experiments::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert!(n >= 5);
}
