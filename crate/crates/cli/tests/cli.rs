use std::path::Path;
use std::process::{Command, Output};

fn dcmg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcmg"))
        .current_dir(dir)
        .env_remove("DCMG_OUT_DIR")
        .args(args)
        .output()
        .expect("spawn dcmg")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn exit_codes_follow_verdicts() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&dcmg(d.path(), &["simulate", "--case", "2+", "--strategy", "baseline"])), 2);
    assert_eq!(code(&dcmg(d.path(), &["simulate", "--case", "2+", "--strategy", "scheduled"])), 0);
    assert_eq!(code(&dcmg(d.path(), &["simulate", "--case", "2-"])), 0);
    let short = dcmg(d.path(), &["simulate", "--case", "2-", "--horizon", "2.05"]);
    assert_eq!(code(&short), 3, "{}", stdout(&short));
}

#[test]
fn usage_and_config_errors_exit_one() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&dcmg(d.path(), &["simulate", "--case", "nope"])), 1);
    assert_eq!(code(&dcmg(d.path(), &["simulate", "--frobnicate"])), 1);
    assert_eq!(code(&dcmg(d.path(), &["equilibria", "--mode", "7", "--pe", "0"])), 1);
    std::fs::write(d.path().join("bad.toml"), "[control]\nk_iv = 0.0\n").unwrap();
    let o = dcmg(d.path(), &["--config", "bad.toml", "table2"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("k_iv"));
    std::fs::write(d.path().join("typo.toml"), "[circuit]\ncbus = 0.01\n").unwrap();
    let o = dcmg(d.path(), &["--config", "typo.toml", "table2"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("circuit.cbus"));
    assert_eq!(code(&dcmg(d.path(), &["--help"])), 0);
}

#[test]
fn equilibria_examples() {
    let d = tempfile::tempdir().unwrap();
    let o = dcmg(d.path(), &["equilibria", "--mode", "3", "--pe", "0.1pu"]);
    assert_eq!(code(&o), 0);
    let s = stdout(&o);
    assert!(s.contains("SEP (2.0000, 109.2402)") && s.contains("UEP (2.0000, 0.7598)"), "{s}");
    let s = stdout(&dcmg(d.path(), &["equilibria", "--mode", "1", "--pe", "-1.2pu"]));
    assert!(s.contains("SEP (-24.0000, 120.0000)"), "{s}");
    let s = stdout(&dcmg(d.path(), &["equilibria", "--mode", "2", "--pe", "3.5pu"]));
    assert!(s.contains("no equilibria (discriminant < 0)"), "{s}");

    let o = dcmg(d.path(), &["equilibria", "--sweep", "-0.5pu:0.5pu:3"]);
    assert_eq!(code(&o), 0);
    let csv = read(d.path().join("out/equilibria/equilibria.csv"));
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "sigma,p_e,kind,S_v,v_bus,re1,im1,re2,im2");
    // CV modes give one point per load. Droop modes give two at +500 W and a single
    // positive-voltage root at 0 and -500 W.
    assert_eq!(lines.clone().count(), 3 * 2 + 2 * (1 + 1 + 2));
    for f in lines.next().unwrap().split(',').skip(3) {
        let mantissa = f.split('e').next().unwrap().trim_start_matches('-');
        assert_eq!(mantissa.chars().filter(char::is_ascii_digit).count(), 9, "{f}");
    }
}

#[test]
fn trajectory_columns() {
    let d = tempfile::tempdir().unwrap();
    dcmg(d.path(), &["--out-dir", "rom", "simulate", "--case", "6-"]);
    dcmg(d.path(), &["--out-dir", "full", "simulate", "--case", "6-", "--model", "full"]);
    let rom = read(d.path().join("rom/simulate/trajectory.csv"));
    let full = read(d.path().join("full/simulate/trajectory.csv"));
    assert_eq!(rom.lines().next().unwrap(), "t,sigma,S_v,v_bus,i_line,I_ref");
    assert_eq!(full.lines().next().unwrap(), "t,sigma,S_v,v_bus,i_line,I_ref,S_i,i_bat,v_bat");
    let last: Vec<f64> = rom.lines().last().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(last[1], 3.0);
    assert!((last[3] - 109.2402).abs() < 0.005 * 109.24, "{last:?}");
    let verdict = read(d.path().join("full/simulate/verdict.toml"));
    assert!(verdict.contains("outcome = \"Stable\"") && verdict.contains("model = \"full\""), "{verdict}");
}

#[test]
fn adhoc_step() {
    let d = tempfile::tempdir().unwrap();
    let o = dcmg(d.path(), &["simulate", "--from", "1", "--before", "-1200", "--after", "-0.5pu", "--t-step", "0.5"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).starts_with("adhoc baseline rom: Stable"));
}

#[test]
fn config_round_trip_is_hash_equal() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&dcmg(d.path(), &["config", "--out", "defaults.toml"])), 0);
    let a = stdout(&dcmg(d.path(), &["config"]));
    let b = stdout(&dcmg(d.path(), &["--config", "defaults.toml", "config"]));
    assert_eq!(a, b);
    assert!(a.contains("c_bus = 0.005") && a.contains("u_s = 50.0") && a.contains("v_min = 99.0"), "{a}");

    dcmg(d.path(), &["--out-dir", "x", "equilibria", "--pe", "0"]);
    dcmg(d.path(), &["--config", "defaults.toml", "--out-dir", "y", "equilibria", "--pe", "0"]);
    let hash = |p: &str| read(d.path().join(p)).lines().find(|l| l.starts_with("config_hash")).unwrap().to_string();
    assert_eq!(hash("x/equilibria/manifest.toml"), hash("y/equilibria/manifest.toml"));

    std::fs::write(d.path().join("c.toml"), "[circuit]\nc_bus = 0.02\n").unwrap();
    dcmg(d.path(), &["--config", "c.toml", "--out-dir", "z", "equilibria", "--pe", "0"]);
    assert_ne!(hash("x/equilibria/manifest.toml"), hash("z/equilibria/manifest.toml"));
}

#[test]
fn outputs_are_deterministic() {
    let d = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        assert_eq!(
            code(&dcmg(d.path(), &["--out-dir", out, "simulate", "--case", "5+", "--strategy", "scheduled"])),
            0
        );
        assert_eq!(
            code(&dcmg(d.path(), &["--out-dir", out, "roa", "--context", "mode3", "--pe", "0.1pu", "--grid", "12x10"])),
            0
        );
    }
    for f in
        ["simulate/trajectory.csv", "simulate/verdict.toml", "roa/branch_0.csv", "roa/grid.csv", "roa/grid.extent.toml"]
    {
        assert_eq!(
            std::fs::read(d.path().join("a").join(f)).unwrap(),
            std::fs::read(d.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let strip = |p: &str| -> String {
        read(d.path().join(p)).lines().filter(|l| !l.starts_with("created_unix") && !l.starts_with("args")).collect()
    };
    assert_eq!(strip("a/simulate/manifest.toml"), strip("b/simulate/manifest.toml"));
}

#[test]
fn out_dir_from_environment() {
    let d = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_dcmg"))
        .current_dir(d.path())
        .env("DCMG_OUT_DIR", "from_env")
        .args(["equilibria", "--pe", "0"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(d.path().join("from_env/equilibria/equilibria.csv").exists());
    assert!(!d.path().join("out").exists());
}

#[test]
fn roa_artifacts() {
    let d = tempfile::tempdir().unwrap();
    let o = dcmg(d.path(), &["roa", "--context", "mode1", "--pe", "-1.2pu", "--grid", "8x6", "--bbox", "-40,0,80,140"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("unbounded"));
    let grid = read(d.path().join("out/roa/grid.csv"));
    let rows: Vec<&str> = grid.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.split(',').all(|c| c == "1")), "{grid}");

    let o = dcmg(d.path(), &["roa", "--context", "baseline", "--pe", "0.1pu"]);
    assert_eq!(code(&o), 0);
    let b = read(d.path().join("out/roa/boundary.toml"));
    assert!(b.contains("seed = \"grazing (-14, 20)\""), "{b}");
    let branch = read(d.path().join("out/roa/branch_0.csv"));
    assert_eq!(branch.lines().next().unwrap(), "S_v,v_bus");
    assert!(branch.lines().count() > 10);
}

#[test]
fn table2_and_studies() {
    let d = tempfile::tempdir().unwrap();
    let o = dcmg(d.path(), &["table2"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("12/12 verdicts match"));
    assert_eq!(read(d.path().join("out/table2/table2.csv")).lines().count(), 13);
    assert_eq!(code(&dcmg(d.path(), &["table2", "--strategy", "scheduled"])), 2);

    let o = dcmg(d.path(), &["sweep", "--param", "cbus"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("1 Unstable->Stable, 0 Stable->Unstable"), "{}", stdout(&o));

    let o = dcmg(d.path(), &["diagnose", "--case", "5+"]);
    assert_eq!(code(&o), 2);
    assert!(stdout(&o).contains("deficit with falling v_bus: 2.0000 s"), "{}", stdout(&o));

    let o = dcmg(d.path(), &["critical", "--model", "rom", "--tol", "0.05"]);
    assert_eq!(code(&o), 0);
    let c = read(d.path().join("out/critical/critical.toml"));
    let crit: f64 = c.lines().find_map(|l| l.strip_prefix("critical_pu = ")).unwrap().parse().unwrap();
    let stable: f64 = c.lines().find_map(|l| l.strip_prefix("stable_pu = ")).unwrap().parse().unwrap();
    let unstable: f64 = c.lines().find_map(|l| l.strip_prefix("unstable_pu = ")).unwrap().parse().unwrap();
    assert!(stable < crit && crit < unstable && unstable - stable <= 0.05);
    assert_eq!(code(&dcmg(d.path(), &["critical", "--bracket", "3.5,4.0"])), 1);
}
