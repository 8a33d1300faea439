use std::path::Path;
use std::process::{Command, Output};

use pnb_cli::gap_percent;
use pnb_core::{evaluate_tour, load_csv, SolutionTrie, Tour};

fn pnb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pnb")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn gen(dir: &Path, n: usize, seed: u64) -> String {
    let path = dir.join(format!("n{n}s{seed}.csv"));
    let p = path.to_str().unwrap().to_owned();
    let o = pnb(&["gen", "--n", &n.to_string(), "--seed", &seed.to_string(), "-o", &p]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    p
}

/// Summary line value by key.
fn field<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find(|l| l.starts_with(key))
        .unwrap_or_else(|| panic!("no {key} in {text}"))[key.len()..]
        .trim()
}

#[test]
fn gen_writes_a_loadable_instance() {
    let dir = tempfile::tempdir().unwrap();
    let p = gen(dir.path(), 6, 3);
    assert_eq!(load_csv(&p).unwrap().n(), 6);

    let again = pnb(&["gen", "--n", "6", "--seed", "3", "-o", &p]);
    assert_eq!(again.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    let forced = pnb(&["gen", "--n", "6", "--seed", "3", "-o", &p, "--force"]);
    assert_eq!(forced.status.code(), Some(0));

    let zero = pnb(&["gen", "--n", "0", "-o", dir.path().join("z.csv").to_str().unwrap()]);
    assert_eq!(zero.status.code(), Some(1));
}

#[test]
fn eval_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let p = gen(dir.path(), 4, 8);
    let o = pnb(&["eval", "--instance", &p, "--tour", "0,2,4,1,3"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let printed: f64 = stdout(&o).trim().parse().unwrap();
    let model = load_csv(&p).unwrap().model();
    let want = evaluate_tour(&model, &Tour(vec![0, 2, 4, 1, 3]), &mut SolutionTrie::new(1)).unwrap();
    assert_eq!(printed, want);

    for bad in ["0,1,2,3", "0,1,2,3,3", "2,1,0,3,4"] {
        let o = pnb(&["eval", "--instance", &p, "--tour", bad]);
        assert_eq!(o.status.code(), Some(1), "{bad}");
    }
}

#[test]
fn bad_invocations_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let missing = missing.to_str().unwrap();
    for args in [
        vec!["solve"],
        vec!["solve", "--n", "4", "--dd-width", "0"],
        vec!["solve", "--n", "4", "--time-limit", "-1"],
        vec!["solve", "--n", "4", "--peel", "sideways"],
        vec!["solve", "--n", "4", "--instance", missing],
        vec!["solve", "--instance", missing],
        vec!["frobnicate"],
    ] {
        let o = pnb(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
    }
    assert_eq!(pnb(&["--help"]).status.code(), Some(0));
}

#[test]
fn small_solve_is_optimal_and_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let p = gen(dir.path(), 4, 2);
    let trace = dir.path().join("t.jsonl");
    let args = ["solve", "--instance", &p, "--trace-out", trace.to_str().unwrap()];
    let a = pnb(&args);
    assert_eq!(a.status.code(), Some(0), "{a:?}");
    let text = stdout(&a);
    assert_eq!(field(&text, "optimal"), "true");
    assert_eq!(field(&text, "gap (%)").parse::<f64>().unwrap(), 0.0);

    let tour = field(&text, "tour");
    let ub: f64 = field(&text, "ub").parse().unwrap();
    let model = load_csv(&p).unwrap().model();
    let cost = evaluate_tour(&model, &Tour::parse(tour).unwrap(), &mut SolutionTrie::new(1)).unwrap();
    assert!((cost - ub).abs() < 1e-6);

    let b = pnb(&args);
    let strip = |s: &str| s.lines().filter(|l| !l.starts_with("time")).collect::<Vec<_>>().join("\n");
    assert_eq!(strip(&text), strip(&stdout(&b)));

    let lines = std::fs::read_to_string(&trace).unwrap();
    assert!(lines.lines().count() >= 1);
    for l in lines.lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        for k in ["t_wall", "lb", "ub", "queue_len", "b_calls", "bprime_calls"] {
            assert!(v.get(k).is_some(), "{k} in {l}");
        }
    }
}

#[test]
fn records_format_is_json() {
    let o = pnb(&["solve", "--n", "3", "--seed", "5", "--format", "records"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["proven_optimal"], true);
    assert_eq!(v["lb"], v["ub"]);
    assert_eq!(v["config"]["peel"], "maximal");
}

#[test]
fn time_limit_leaves_a_gap() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let o = pnb(&["solve", "--n", "10", "--time-limit", "0.01", "--trace-out", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{o:?}");
    let text = stdout(&o);
    assert_eq!(field(&text, "optimal"), "false");
    let lb: f64 = field(&text, "lb").parse().unwrap();
    let ub: f64 = field(&text, "ub").parse().unwrap();
    assert!(lb <= ub);
    let records = std::fs::read_to_string(&trace).unwrap();
    assert!(records.lines().count() >= 1);
}

#[test]
fn gap_is_relative_to_the_upper_bound() {
    assert_eq!(gap_percent(90.0, 100.0), 10.0);
    assert_eq!(gap_percent(100.0, 100.0), 0.0);
    assert_eq!(gap_percent(101.0, 100.0), 0.0);
    assert_eq!(gap_percent(0.0, 50.0), 100.0);
}

#[test]
fn epoch_origin_shifts_absolute_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let rel = gen(dir.path(), 3, 4);
    let text = std::fs::read_to_string(&rel).unwrap();
    let mut shifted = String::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            shifted.push_str(line);
        } else {
            let (head, epoch) = line.rsplit_once(',').unwrap();
            let e: f64 = epoch.parse().unwrap();
            shifted.push_str(&format!("{head},{}", e + 60000.0));
        }
        shifted.push('\n');
    }
    let abs = dir.path().join("abs.csv");
    std::fs::write(&abs, shifted).unwrap();
    let abs = abs.to_str().unwrap();
    let a = stdout(&pnb(&["eval", "--instance", &rel, "--tour", "0,3,1,2"]));
    let b = stdout(&pnb(&["eval", "--instance", abs, "--tour", "0,3,1,2", "--epoch-origin", "60000"]));
    let c = stdout(&pnb(&["eval", "--instance", abs, "--tour", "0,3,1,2"]));
    assert_eq!(a, b);
    assert_ne!(a, c);
}
