mod support;

use std::path::Path;
use std::process::{Command, Output};

use support::fixture;
use volforge::arbitrage::arbitrage_report;
use volforge::market_data::{parse_quotes, to_price_grid, Format, QuoteSurface, StrikeUnion};

fn volforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_volforge"))
        .args(args)
        .output()
        .expect("spawn volforge")
}

fn volforge_threads(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_volforge"))
        .args(args)
        .env("VOLFORGE_THREADS", threads)
        .output()
        .expect("spawn volforge")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_csv(p: &Path) -> QuoteSurface {
    parse_quotes(std::fs::File::open(p).unwrap(), Format::Csv).unwrap()
}

fn arbitrage_free(q: &QuoteSurface) -> bool {
    arbitrage_report(&to_price_grid(q, StrikeUnion::PerExpiry).unwrap())
        .unwrap()
        .pass
}

const HEADER: &str = "expiry_years,strike,forward,discount,bid_iv,ask_iv,mid_iv\n";

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&volforge(&["--help"])), 0);
    assert_eq!(code(&volforge(&["fit", "--help"])), 0);
    assert_eq!(code(&volforge(&[])), 1);
    let sample = fixture("sample_quotes.csv");
    assert_eq!(code(&volforge(&["fit", "--input", s(&sample), "--model", "sabr"])), 1);
    assert_eq!(code(&volforge(&["fit", "--input", s(&sample)])), 1);
}

#[test]
fn missing_files_are_io_errors() {
    let o = volforge(&["ingest", "--input", "/nonexistent/quotes.csv"]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/quotes.csv"));
    let o = volforge(&["ingest", "--config", "/nonexistent/run.json"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn malformed_quotes_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, format!("{HEADER}1,100,100,1,0.25,0.2,\n")).unwrap();
    assert_eq!(code(&volforge(&["ingest", "--input", s(&bad)])), 1);
    std::fs::write(&bad, "strike,bid\n100,1\n").unwrap();
    assert_eq!(code(&volforge(&["ingest", "--input", s(&bad)])), 1);
}

#[test]
fn ingest_round_trips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("q.json");
    let sample = fixture("sample_quotes.csv");
    assert_eq!(
        code(&volforge(&["ingest", "--input", s(&sample), "--output", s(&json)])),
        0
    );
    let text = std::fs::read_to_string(&json).unwrap();
    assert!(text.trim_start().starts_with('{') || text.trim_start().starts_with('['));
    let back = parse_quotes(text.as_bytes(), Format::Json).unwrap();
    let orig = read_csv(&sample);
    assert_eq!(back.expiries.len(), orig.expiries.len());
    for (a, b) in back.expiries.iter().zip(&orig.expiries) {
        assert_eq!(a.quotes.len(), b.quotes.len());
    }
    let csv = dir.path().join("q.csv");
    assert_eq!(
        code(&volforge(&["ingest", "--input", s(&json), "--output", s(&csv)])),
        0
    );
    assert_eq!(read_csv(&csv).expiries.len(), orig.expiries.len());
}

#[test]
fn repair_removes_violations_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let (out, rep) = (dir.path().join("r.csv"), dir.path().join("r.json"));
    let input = fixture("violating_quotes.csv");
    assert!(!arbitrage_free(&read_csv(&input)));
    let o = volforge(&["repair", "--input", s(&input), "--output", s(&out), "--report", s(&rep)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&rep).unwrap()).unwrap();
    assert_eq!(report["repaired"], true);
    assert_eq!(report["after"]["pass"], true);
    assert!(arbitrage_free(&read_csv(&out)));

    let (out2, rep2) = (dir.path().join("r2.csv"), dir.path().join("r2.json"));
    let o = volforge(&["repair", "--input", s(&out), "--output", s(&out2), "--report", s(&rep2)]);
    assert_eq!(code(&o), 0);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&rep2).unwrap()).unwrap();
    assert_eq!(report["repaired"], false);

    // Without --report the summary goes to stderr.
    let o = volforge(&["repair", "--input", s(&input), "--output", s(&out2)]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("max_adjustment"));
}

#[test]
fn repair_infeasible_within_spread_exits_2() {
    // Total variance falls from 0.045 to 0.01 with one-bp bands.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cal.csv");
    let mut text = HEADER.to_string();
    for (t, v) in [(0.5, 0.3), (1.0, 0.1)] {
        for k in [90.0, 100.0, 110.0] {
            text.push_str(&format!("{t},{k},100,1,{},{},\n", v - 0.0001, v + 0.0001));
        }
    }
    std::fs::write(&path, text).unwrap();
    let o = volforge(&["repair", "--input", s(&path), "--output", s(&dir.path().join("o.csv"))]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn dumas_on_a_single_expiry_is_a_fit_failure() {
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one.csv");
    let text = std::fs::read_to_string(fixture("sample_quotes.csv")).unwrap();
    let lines: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with("0.25,") || l.starts_with("expiry"))
        .collect();
    assert!(lines.len() > 3);
    std::fs::write(&one, lines.join("\n") + "\n").unwrap();
    let o = volforge(&[
        "fit",
        "--input",
        s(&one),
        "--model",
        "dumas",
        "--output",
        s(&dir.path().join("h.json")),
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn fit_diagnose_export_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let sample = fixture("sample_quotes.csv");
    let (handle, details) = (dir.path().join("h.json"), dir.path().join("d.json"));
    let o = volforge(&[
        "fit",
        "--input",
        s(&sample),
        "--model",
        "svi",
        "--output",
        s(&handle),
        "--report",
        s(&details),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let d: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&details).unwrap()).unwrap();
    assert_eq!(d["slices"].as_array().unwrap().len(), 3);

    let diag = dir.path().join("diag.json");
    let o = volforge(&[
        "diagnose",
        "--input",
        s(&sample),
        "--surface",
        s(&handle),
        "--output",
        s(&diag),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let bundle: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&diag).unwrap()).unwrap();
    assert!(bundle.is_object());

    let grid = dir.path().join("grid.csv");
    let o = volforge(&["export", "--surface", s(&handle), "--tails", "--output", s(&grid)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&grid).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    assert!(rdr.headers().unwrap().len() >= 3);
    let rows = rdr.records().count();
    assert!(rows >= 3 * 2, "{rows}");

    let json = dir.path().join("grid.json");
    assert_eq!(
        code(&volforge(&["export", "--surface", s(&handle), "--output", s(&json)])),
        0
    );
    let _: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();

    let o = volforge(&["diagnose", "--input", s(&sample), "--surface", "/nonexistent/h.json"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn synth_reproduces_the_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let o = volforge(&[
        "synth",
        "--params",
        s(&fixture("bgm_params.json")),
        "--spec",
        s(&fixture("synth_spec.json")),
        "--output",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    // Same quotes up to implied-vol inversion noise.
    let (got, want) = (read_csv(&out), read_csv(&fixture("sample_quotes.csv")));
    assert_eq!(got.expiries.len(), want.expiries.len());
    for (a, b) in got.expiries.iter().zip(&want.expiries) {
        assert_eq!(a.expiry, b.expiry);
        assert_eq!(a.quotes.len(), b.quotes.len());
        for (qa, qb) in a.quotes.iter().zip(&b.quotes) {
            assert_eq!(qa.strike, qb.strike);
            assert!((qa.bid_iv - qb.bid_iv).abs() < 1e-12 && (qa.ask_iv - qb.ask_iv).abs() < 1e-12);
        }
    }
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    let out = dir.path().join("q.json");
    let cfg_text = serde_json::json!({
        "input": fixture("violating_quotes.csv"),
        "output": out,
    });
    std::fs::write(&cfg, cfg_text.to_string()).unwrap();
    assert_eq!(code(&volforge(&["ingest", "--config", s(&cfg)])), 0);
    assert!(out.exists());
    let flag_out = dir.path().join("flag.csv");
    assert_eq!(
        code(&volforge(&["ingest", "--config", s(&cfg), "--output", s(&flag_out)])),
        0
    );
    assert!(std::fs::read_to_string(&flag_out).unwrap().starts_with("expiry_years"));

    std::fs::write(&cfg, r#"{"no_such_key": 1}"#).unwrap();
    assert_eq!(code(&volforge(&["ingest", "--config", s(&cfg)])), 1);
}

#[test]
fn fits_are_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let sample = fixture("sample_quotes.csv");
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "3"].iter().enumerate() {
        let h = dir.path().join(format!("h{i}.json"));
        let o = volforge_threads(
            &[
                "fit",
                "--input",
                s(&sample),
                "--model",
                "mixture",
                "--seed",
                "11",
                "--output",
                s(&h),
            ],
            threads,
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(std::fs::read(&h).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}
