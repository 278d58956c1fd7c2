use std::path::PathBuf;
use std::process::Command;

use diqkd::harness::io::{
    parse_bounds, parse_correlation_table, parse_finite_key, parse_ledger, parse_scan,
    write_bounds, write_correlation_table, write_finite_key, write_ledger, write_scan, BoundsRow,
};
use diqkd::harness::{self, report_value};
use diqkd::link::WindowCurvePoint;
use diqkd::protocol::{estimate_bell, tabulate, CorrelationTable, EventLedger, EventRecord};
use proptest::prelude::*;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn table_arg() -> String {
    data_dir()
        .join("paper_table1.csv")
        .to_string_lossy()
        .into_owned()
}

fn run(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("diqkd").chain(args.iter().copied());
    let code = harness::run(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

#[test]
fn analyze_golden_report() {
    let (code, out, _) = run(&["analyze", "--table", &table_arg()]);
    assert_eq!(code, 0);
    for (k, v) in [
        ("S", "2.57783"),
        ("sigma_S", "0.0754074"),
        ("E_20", "-0.598972"),
        ("E_21", "0.617866"),
        ("E_30", "-0.663594"),
        ("E_31", "-0.6974"),
        ("Q0", "0.078125"),
        ("Q1", "0.0776699"),
        ("Q", "0.077907"),
        ("rounds", "3342"),
    ] {
        assert_eq!(report_value(&out, k), Some(v), "{k}");
    }
    assert_eq!(report_value(&out, "seed"), Some("none"));
    assert_eq!(
        report_value(&out, "input.table.sha256").map(str::len),
        Some(64)
    );
    let (_, again, _) = run(&["analyze", "--table", &table_arg()]);
    assert_eq!(out, again);
}

#[test]
fn bundled_table_is_the_default() {
    let (_, explicit, _) = run(&["analyze", "--table", &table_arg()]);
    let (_, bundled, _) = run(&["analyze"]);
    assert_eq!(explicit, bundled);
}

#[test]
fn bayes_golden_report() {
    let (code, out, _) = run(&["bayes", "--table", &table_arg(), "--tail", "0.03"]);
    assert_eq!(code, 0);
    assert_eq!(report_value(&out, "s_min"), Some("2.42615"));
    assert_eq!(report_value(&out, "q0_max"), Some("0.105548"));
    assert_eq!(report_value(&out, "q1_max"), Some("0.106367"));
    assert_eq!(report_value(&out, "win_count"), Some("1355"));
    let (_, direct, _) = run(&["bayes", "--method", "direct"]);
    assert_eq!(report_value(&direct, "win_count"), Some("1357"));
    assert_eq!(run(&["bayes", "--tail", "0.7"]).0, 1);
    assert_eq!(run(&["bayes", "--method", "vote"]).0, 1);
}

#[test]
fn keyrate_report_is_labeled() {
    let (code, out, _) = run(&["keyrate", "--s", "2.578", "--q", "0.0779"]);
    assert_eq!(code, 0);
    assert_eq!(report_value(&out, "rate"), Some("0.157775"));
    assert_eq!(report_value(&out, "anchor.modeled_rate"), Some("0.07"));
    assert_eq!(
        report_value(&out, "anchor.label"),
        Some("paper-anchored model, not a security bound")
    );
    let (code, _, err) = run(&["keyrate", "--s", "3.0", "--q", "0.0"]);
    assert_eq!(code, 1);
    assert!(err.contains("Tsirelson"));
}

#[test]
fn finite_key_csv() {
    let (code, out, _) = run(&["finite-key", "--eps", "1e-5,1e-10"]);
    assert_eq!(code, 0);
    let rows = parse_finite_key(out.as_bytes()).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].0, 1e-5);
    assert!(rows[1].1 > rows[0].1);
    let (_, default_grid, _) = run(&["finite-key"]);
    assert_eq!(parse_finite_key(default_grid.as_bytes()).unwrap().len(), 12);
    assert_eq!(run(&["finite-key", "--s", "2.2", "--q", "0.2"]).0, 1);
}

#[test]
fn window_commands() {
    let (code, out, _) = run(&["window-scan", "--from", "740", "--to", "800", "--step", "5"]);
    assert_eq!(code, 0);
    let pts = parse_scan(out.as_bytes()).unwrap();
    assert_eq!(pts.len(), 13);
    assert!(pts.windows(2).all(|w| w[1].s_value >= w[0].s_value));
    let (code, out, _) = run(&["optimize-window"]);
    assert_eq!(code, 0);
    let t: f64 = report_value(&out, "t_s_ns").unwrap().parse().unwrap();
    assert!(t > 700.0 && t < 840.0);
    assert_eq!(run(&["window-scan", "--step", "0"]).0, 1);
}

#[test]
fn rate_budget_report() {
    let (code, out, _) = run(&["rate-budget"]);
    assert_eq!(code, 0);
    assert_eq!(
        report_value(&out, "expected_event_rate_hz"),
        Some("0.01274")
    );
    let (code, out, _) = run(&["rate-budget", "--heralds", "50", "--seed", "1"]);
    assert_eq!(code, 0);
    assert_eq!(report_value(&out, "seed"), Some("1"));
    assert!(report_value(&out, "simulated_mean_gap_s").is_some());
}

#[test]
fn simulate_is_deterministic_and_analyzable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let (ca, ra, _) = run(&[
        "simulate",
        "--seed",
        "7",
        "--rounds",
        "100",
        "--output",
        a.to_str().unwrap(),
    ]);
    let (cb, rb, _) = run(&[
        "simulate",
        "--seed",
        "7",
        "--rounds",
        "100",
        "--output",
        b.to_str().unwrap(),
    ]);
    assert_eq!((ca, cb), (0, 0));
    assert_eq!(ra, rb);
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    let ledger = parse_ledger(bytes.as_slice()).unwrap();
    assert_eq!(ledger.len(), 100);
    assert!(ledger
        .records()
        .windows(2)
        .all(|w| w[1].herald_time_ns > w[0].herald_time_ns));

    let (_, other, _) = run(&["simulate", "--seed", "8", "--rounds", "100"]);
    assert_ne!(String::from_utf8(bytes).unwrap(), other);

    let (code, report, _) = run(&["analyze", "--ledger", a.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(report_value(&report, "input.ledger.sha256").is_some());
}

#[test]
fn simulate_requires_seed() {
    let (code, _, err) = run(&["simulate", "--rounds", "10"]);
    assert_eq!(code, 1);
    assert!(err.contains("seed"));
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# test run\nseed = 11\nrounds = 20\n").unwrap();
    let (code, out, err) = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(parse_ledger(out.as_bytes()).unwrap().len(), 20);
    assert_eq!(report_value(&err, "seed"), Some("11"));
    assert!(report_value(&err, "input.config.sha256").is_some());
    let (_, out, err) = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "rounds=5",
        "--seed",
        "12",
    ]);
    assert_eq!(parse_ledger(out.as_bytes()).unwrap().len(), 5);
    assert_eq!(report_value(&err, "seed"), Some("12"));
    std::fs::write(&cfg, "seed = 11\nrounds == x\n").unwrap();
    let (code, _, err) = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("line 2"));
}

#[test]
fn exit_codes() {
    let (code, _, err) = run(&["frobnicate"]);
    assert_eq!(code, 1);
    assert!(err.contains("Usage"));
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("window-scan"));
    assert_eq!(run(&["analyze", "--table", "/nonexistent/table.csv"]).0, 1);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "x,y,n,n_same\n0,0,10,20\n").unwrap();
    let (code, _, err) = run(&["analyze", "--table", bad.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("n_same") || err.contains("missing"), "{err}");
}

#[test]
fn numeric_failure_exits_with_two() {
    // no contamination fraction can pull the unfiltered window down to S = 1
    let (code, _, err) = run(&["calibrate", "--s-full", "1.0"]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn binary_reports_usage_and_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_diqkd");
    let out = Command::new(bin).arg("nope").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = Command::new(bin)
        .args(["simulate", "--seed", "3", "--rounds", "10"])
        .output()
        .unwrap();
    let again = Command::new(bin)
        .args(["simulate", "--seed", "3", "--rounds", "10"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(out.stdout, again.stdout);
}

#[test]
fn data_dir_override() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = harness::reference_table().unwrap();
    t.n_same[2][1] = 300;
    let mut buf = Vec::new();
    write_correlation_table(&t, &mut buf).unwrap();
    std::fs::write(dir.path().join("paper_table1.csv"), &buf).unwrap();

    let bin = env!("CARGO_BIN_EXE_diqkd");
    let out = Command::new(bin)
        .arg("analyze")
        .env("DIQKD_DATA_DIR", dir.path())
        .output()
        .unwrap();
    let report = String::from_utf8(out.stdout).unwrap();
    let expected = estimate_bell(&t).unwrap().s_value;
    assert_eq!(
        report_value(&report, "S"),
        Some(harness::fmt_sig(expected).as_str())
    );

    // relative paths that do not exist fall back to the data directory
    let out = Command::new(bin)
        .args(["analyze", "--table", "data/paper_table1.csv"])
        .current_dir(std::env::temp_dir())
        .env("DIQKD_DATA_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), report);
}

fn table_strategy() -> impl Strategy<Value = CorrelationTable> {
    proptest::collection::vec((1u64..500, 0.0f64..=1.0), 8).prop_map(|cells| {
        let mut t = CorrelationTable::default();
        for (i, (n, f)) in cells.into_iter().enumerate() {
            t.n[i / 2][i % 2] = n;
            t.n_same[i / 2][i % 2] = (f * n as f64).floor() as u64;
        }
        t
    })
}

fn ledger_strategy() -> impl Strategy<Value = EventLedger> {
    proptest::collection::vec(
        (1u64..1000, 0u64..1_000_000, 0u8..4, 0u8..2, 0u8..2, 0u8..2),
        0..60,
    )
    .prop_map(|rows| {
        let mut l = EventLedger::new();
        let mut id = 0;
        for (step, t, x, y, a, b) in rows {
            id += step;
            l.append(EventRecord {
                round_id: id,
                herald_time_ns: t,
                x,
                y,
                a,
                b,
            })
            .unwrap();
        }
        l
    })
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        -1e3f64..1e3
    ]
}

proptest! {
    #[test]
    fn table_csv_round_trip(t in table_strategy()) {
        let mut buf = Vec::new();
        write_correlation_table(&t, &mut buf).unwrap();
        prop_assert_eq!(parse_correlation_table(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn ledger_csv_round_trip(l in ledger_strategy()) {
        let mut buf = Vec::new();
        write_ledger(&l, &mut buf).unwrap();
        prop_assert_eq!(parse_ledger(buf.as_slice()).unwrap(), l);
    }

    #[test]
    fn ledger_pipeline_matches_table_pipeline(l in ledger_strategy()) {
        let t = tabulate(&l);
        let dir = tempfile::tempdir().unwrap();
        let (lp, tp) = (dir.path().join("l.csv"), dir.path().join("t.csv"));
        write_ledger(&l, std::fs::File::create(&lp).unwrap()).unwrap();
        write_correlation_table(&t, std::fs::File::create(&tp).unwrap()).unwrap();
        let (cl, rl, _) = run(&["analyze", "--ledger", lp.to_str().unwrap()]);
        let (ct, rt, _) = run(&["analyze", "--table", tp.to_str().unwrap()]);
        prop_assert_eq!(cl, ct);
        for key in ["S", "sigma_S", "Q0", "Q1", "Q", "rounds"] {
            prop_assert_eq!(report_value(&rl, key), report_value(&rt, key));
        }
    }

    #[test]
    fn scan_csv_round_trip(rows in proptest::collection::vec((finite(), finite(), finite(), finite(), finite()), 0..20)) {
        let pts: Vec<WindowCurvePoint> = rows
            .into_iter()
            .map(|(a, b, c, d, e)| WindowCurvePoint { t_s_ns: a, s_value: b, qber: c, relative_rate: d, key_per_time: e })
            .collect();
        let mut buf = Vec::new();
        write_scan(&pts, &mut buf).unwrap();
        prop_assert_eq!(parse_scan(buf.as_slice()).unwrap(), pts);
    }

    #[test]
    fn bounds_csv_round_trip(rows in proptest::collection::vec((finite(), finite(), finite(), finite()), 0..10)) {
        let rows: Vec<BoundsRow> = rows
            .into_iter()
            .map(|(s_min, q0_max, q1_max, tail)| BoundsRow { s_min, q0_max, q1_max, tail })
            .collect();
        let mut buf = Vec::new();
        write_bounds(&rows, &mut buf).unwrap();
        prop_assert_eq!(parse_bounds(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn finite_key_csv_round_trip(rows in proptest::collection::vec((1e-300f64..1.0, any::<u64>()), 0..10)) {
        let mut buf = Vec::new();
        write_finite_key(&rows, &mut buf).unwrap();
        prop_assert_eq!(parse_finite_key(buf.as_slice()).unwrap(), rows);
    }
}
