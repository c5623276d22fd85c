use std::fs;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meanfield"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn last_row(csv: &str) -> Vec<f64> {
    csv.lines()
        .last()
        .unwrap()
        .split(',')
        .map(|f| f.parse().unwrap())
        .collect()
}

#[test]
fn help_lists_every_command_and_exits_zero() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in [
        "validate",
        "drift",
        "meandrift",
        "ode",
        "exact",
        "simulate",
        "compare",
        "chaos",
    ] {
        assert!(text.contains(cmd), "{cmd} missing from help");
        assert_eq!(run(&[cmd, "--help"]).status.code(), Some(0));
    }
    let simulate = String::from_utf8(run(&["simulate", "--help"]).stdout).unwrap();
    for flag in [
        "--model", "--out", "--N", "--init", "--t", "--reps", "--seed", "--mode", "--times", "--hist", "--ref",
    ] {
        assert!(simulate.contains(flag), "{flag} missing from simulate help");
    }
}

#[test]
fn usage_errors_exit_one() {
    for args in [
        &["frobnicate"][..],
        &["drift", "--N", "10"],
        &["drift", "--N", "10", "--m", "0.5"],
        &["simulate", "--N", "10", "--t", "5", "--mode", "slotted:0"],
        &["ode", "--variant", "sideways", "--t", "5"],
        &["compare", "--Ns", "0,5"],
    ] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", stderr(&out));
        assert!(stderr(&out).starts_with("error: usage: "), "{args:?}: {}", stderr(&out));
        assert!(out.stdout.is_empty());
    }
}

#[test]
fn model_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.pop");
    fs::write(&broken, "states = a, b\nrate a -> b : 1 + (m[a]\n").unwrap();
    let out = run(&[
        "drift",
        "--model",
        broken.to_str().unwrap(),
        "--N",
        "5",
        "--m",
        "0.5,0.5",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).starts_with("error: "));

    let fast = dir.path().join("fast.pop");
    fs::write(&fast, "states = a, b\nrate a -> b : 30\n").unwrap();
    let out = run(&[
        "simulate",
        "--model",
        fast.to_str().unwrap(),
        "--N",
        "5",
        "--t",
        "1",
        "--reps",
        "3",
        "--mode",
        "slotted:10",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("slot probability"));
}

#[test]
fn numerical_errors_exit_three() {
    let out = run(&["exact", "--N", "2000", "--t", "1", "--cap", "100"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).starts_with("error: state-space-too-large: "));
}

#[test]
fn drift_of_the_example() {
    let csv = stdout(&["drift", "--N", "10", "--m", "1,0"]);
    assert_eq!(csv.lines().next().unwrap(), "F_idle,F_backoff");
    let f = last_row(&csv);
    // p1 (1 - (1 - p1/2)^10)
    let flow = 0.008 * (1.0 - (1.0f64 - 0.004).powi(10));
    assert!((f[1] - flow).abs() < 1e-15 && (f[0] + flow).abs() < 1e-15, "{f:?}");

    let limit = last_row(&stdout(&["drift", "--m", "0.25,0.75"]));
    assert_eq!(limit, vec![-0.002, 0.002]);
}

#[test]
fn limit_ode_reaches_closed_form() {
    let csv = stdout(&["ode", "--variant", "limit", "--t", "1000", "--times", "500,1000"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t,phi_idle,phi_backoff");
    assert_eq!(lines.len(), 3);
    let row = last_row(&csv);
    assert_eq!(row[0], 1000.0);
    assert!((row[2] - (1.0 - (-8.0f64).exp())).abs() < 1e-6);
}

#[test]
fn exact_single_agent_with_distribution() {
    let csv = stdout(&["exact", "--N", "1", "--t", "1000", "--full"]);
    let sections: Vec<&str> = csv.split("\n\n").collect();
    assert_eq!(sections.len(), 2);
    let row = last_row(sections[0]);
    let (lambda, mu) = (3.2e-5, 0.04875);
    let p = lambda / (lambda + mu) * (1.0 - (-(lambda + mu) * 1000.0f64).exp());
    assert!((row[2] - p).abs() < 1e-9);
    assert!(sections[1].starts_with("n_idle,n_backoff,probability\n"));
}

#[test]
fn compare_sweep_has_one_row_per_population() {
    let ns = "1,2,5,10,20,50,100,200,400,800,1600";
    let csv = stdout(&["compare", "--Ns", ns]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "N,phi2_drift,phi2_meandrift,phi2_exact");
    assert_eq!(lines.len(), 12);
    for line in &lines[1..] {
        let cells: Vec<f64> = line.split(',').map(|f| f.parse().unwrap()).collect();
        assert!(cells[1..].iter().all(|v| (0.0..=1.0).contains(v)), "{line}");
    }
    let big = last_row(&csv);
    assert!((big[1] - big[3]).abs() <= 0.02, "N = 1600: {big:?}");
}

#[test]
fn simulate_writes_means_histograms_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let reference = dir.path().join("ref.csv");
    let out_file = dir.path().join("sim.csv");
    stdout(&[
        "ode",
        "--N",
        "20",
        "--t",
        "100",
        "--out",
        reference.to_str().unwrap(),
        "--points",
        "11",
    ]);
    let out = run(&[
        "simulate",
        "--N",
        "20",
        "--t",
        "100",
        "--reps",
        "300",
        "--seed",
        "4",
        "--points",
        "11",
        "--hist",
        "100,backoff",
        "--ref",
        reference.to_str().unwrap(),
        "--out",
        out_file.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(out.stdout.is_empty());
    let diagnostics = stderr(&out);
    assert!(
        diagnostics.contains("replications: 300 completed, 0 failed"),
        "{diagnostics}"
    );
    assert!(diagnostics.contains("mse_sup: "), "{diagnostics}");

    let csv = fs::read_to_string(out_file).unwrap();
    let sections: Vec<&str> = csv.split("\n\n").collect();
    assert_eq!(sections.len(), 2);
    let means: Vec<&str> = sections[0].lines().collect();
    assert_eq!(
        means[0],
        "t,mean_phi_idle,mean_phi_backoff,stderr_phi_idle,stderr_phi_backoff"
    );
    assert_eq!(means.len(), 12);
    let hist: Vec<&str> = sections[1].lines().collect();
    assert_eq!(hist[0], "t,state,k,count");
    let total: u64 = hist[1..]
        .iter()
        .map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(total, 300);
}

#[test]
fn output_file_matches_standard_output() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    let args = ["meandrift", "--N", "30", "--m", "0.7,0.3"];
    let printed = stdout(&args);
    let mut with_out = args.to_vec();
    with_out.extend(["--out", path.to_str().unwrap()]);
    assert!(stdout(&with_out).is_empty());
    assert_eq!(fs::read_to_string(path).unwrap(), printed);
}

#[test]
fn shipped_model_file_gives_builtin_results() {
    let model = concat!(env!("CARGO_MANIFEST_DIR"), "/../../models/saturated_channel.pop");
    let args = [
        "ode",
        "--variant",
        "meandrift",
        "--N",
        "10",
        "--t",
        "200",
        "--points",
        "5",
    ];
    let mut with_model = args.to_vec();
    with_model.extend(["--model", model]);
    assert_eq!(stdout(&args), stdout(&with_model));
}

#[test]
fn seeded_simulation_is_reproducible_and_seed_sensitive() {
    let args = ["simulate", "--N", "15", "--t", "300", "--reps", "100", "--points", "7"];
    let a = stdout(&[&args[..], &["--seed", "8"]].concat());
    let b = stdout(&[&args[..], &["--seed", "8"]].concat());
    let c = stdout(&[&args[..], &["--seed", "9"]].concat());
    assert_eq!(a, b);
    assert_ne!(a, c);
}
