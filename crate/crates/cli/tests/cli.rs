use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn fixture(name: &str) -> String {
    fixtures().join(name).to_string_lossy().into_owned()
}

fn ctgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctgen"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A running `serve-toy` process, killed on drop.
struct Backend {
    child: Child,
    addr: String,
}

impl Backend {
    fn start(model: &str) -> Self {
        let mut child = Command::new(env!("CARGO_BIN_EXE_ctgen"))
            .args(["serve-toy", "--model", model, "--port", "0"])
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stderr.take().unwrap())
            .read_line(&mut line)
            .unwrap();
        let addr = line
            .trim()
            .strip_prefix("listening on ")
            .expect("address line")
            .to_string();
        Backend { child, addr }
    }
}

impl Drop for Backend {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn generate_args<'a>(prompts: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec!["generate", "--prompts", prompts, "--max-length", "24"];
    args.extend_from_slice(extra);
    args
}

#[test]
fn help_exits_zero() {
    for args in [&["--help"][..], &["generate", "--help"], &["--version"]] {
        let out = ctgen(args);
        assert_eq!(code(&out), 0, "{args:?}");
        assert!(!out.stdout.is_empty());
    }
    let help = String::from_utf8(ctgen(&["generate", "--help"]).stdout).unwrap();
    for flag in [
        "--model",
        "--endpoint",
        "--amateur",
        "--strategy",
        "--k",
        "--alpha",
        "--p",
        "--tau",
        "--amateur-temperature",
        "--prompts",
        "--max-length",
        "--seed",
        "--out",
        "--jobs",
    ] {
        assert!(help.contains(flag), "generate help lacks {flag}");
    }
}

#[test]
fn usage_errors_exit_one() {
    let prompts = fixture("prompts.jsonl");
    let model = fixture("expert.json");
    let cases: Vec<Vec<&str>> = vec![
        vec![],
        vec!["frobnicate"],
        generate_args(&prompts, &["--model", &model, "--strategy", "beam-search"]),
        generate_args(
            &prompts,
            &["--model", &model, "--strategy", "top-k", "--k", "many"],
        ),
        generate_args(&prompts, &["--strategy", "greedy"]),
        generate_args(
            &prompts,
            &["--model", &model, "--strategy", "contrastive-decoding"],
        ),
        generate_args(
            &prompts,
            &[
                "--model",
                &model,
                "--strategy",
                "contrastive-search",
                "--alpha",
                "1.5",
            ],
        ),
    ];
    for args in cases {
        let out = ctgen(&args);
        assert_eq!(code(&out), 1, "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn missing_file_exits_one_with_path() {
    let out = ctgen(&generate_args(
        "/nonexistent/prompts.jsonl",
        &["--model", &fixture("expert.json"), "--strategy", "greedy"],
    ));
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("/nonexistent/prompts.jsonl"));
    let out = ctgen(&["bench", "--config", "/nonexistent/bench.json"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("/nonexistent/bench.json"));
}

#[test]
fn unreachable_backend_exits_two() {
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let endpoint = format!("127.0.0.1:{port}");
    let out = ctgen(&generate_args(
        &fixture("prompts.jsonl"),
        &[
            "--endpoint",
            &endpoint,
            "--strategy",
            "greedy",
            "--timeout-ms",
            "2000",
        ],
    ));
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn port_in_use_exits_two() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let out = ctgen(&[
        "serve-toy",
        "--model",
        &fixture("expert.json"),
        "--port",
        &port,
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn greedy_output_is_deterministic() {
    let prompts = fixture("prompts.jsonl");
    let model = fixture("expert.json");
    let args = generate_args(
        &prompts,
        &["--model", &model, "--strategy", "greedy", "--seed", "1"],
    );
    let (a, b) = (ctgen(&args), ctgen(&args));
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(String::from_utf8(a.stdout).unwrap().lines().count(), 20);
}

#[test]
fn served_model_matches_in_process_generation() {
    let backend = Backend::start(&fixture("expert.json"));
    let prompts = fixture("prompts.jsonl");
    let model = fixture("expert.json");
    for strategy in ["contrastive-search", "nucleus"] {
        let local = ctgen(&generate_args(
            &prompts,
            &["--model", &model, "--strategy", strategy],
        ));
        let remote = ctgen(&generate_args(
            &prompts,
            &["--endpoint", &backend.addr, "--strategy", strategy],
        ));
        assert_eq!(code(&remote), 0, "{}", stderr(&remote));
        assert_eq!(local.stdout, remote.stdout, "{strategy}");
    }
}

#[test]
fn handshake_and_malformed_requests() {
    let backend = Backend::start(&fixture("expert.json"));
    let stream = TcpStream::connect(&backend.addr).unwrap();
    let mut writer = stream.try_clone().unwrap();
    let mut reader = BufReader::new(stream);
    let mut ask = |line: &str| -> serde_json::Value {
        writer.write_all(format!("{line}\n").as_bytes()).unwrap();
        let mut reply = String::new();
        reader.read_line(&mut reply).unwrap();
        serde_json::from_str(&reply).unwrap()
    };
    let hello = ask(r#"{"op":"hello"}"#);
    assert_eq!(hello["vocab_size"], 24);
    assert_eq!(hello["eod"], 0);
    assert_eq!(hello["dim"], 24);
    assert!(ask("not json").get("error").is_some());
    assert!(ask(r#"{"op":"step","tokens":[99]}"#).get("error").is_some());
    let step = ask(r#"{"op":"step","tokens":[3,4]}"#);
    assert_eq!(step["probs"].as_array().unwrap().len(), 24);
    assert_eq!(step["reprs"].as_array().unwrap().len(), 2);
}

fn write(dir: &Path, name: &str, content: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, content).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn pair_ingest_even_split_has_p_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut key = String::new();
    let mut verdicts = String::new();
    for row in 1..=10 {
        key.push_str(&format!(
            "{{\"row_id\":{row},\"prompt_id\":\"p{row}\",\"system_a\":\"cs\",\"system_b\":\"cd\",\"first_is_a\":{}}}\n",
            row % 2 == 0
        ));
        verdicts.push_str(&format!("{{\"row_id\":{row},\"verdict\":\"first\"}}\n"));
    }
    let key = write(dir.path(), "key.jsonl", &key);
    let verdicts = write(dir.path(), "verdicts.jsonl", &verdicts);
    let out = ctgen(&["pair-ingest", "--verdicts", &verdicts, "--key", &key]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["result"]["wins_a"], 5);
    assert_eq!(report["result"]["wins_b"], 5);
    assert_eq!(report["result"]["p_value"], 1.0);
    assert_eq!(report["result"]["significant"], false);

    let stray = write(
        dir.path(),
        "stray.jsonl",
        "{\"row_id\":77,\"verdict\":\"first\"}\n",
    );
    assert_eq!(
        code(&ctgen(&[
            "pair-ingest",
            "--verdicts",
            &stray,
            "--key",
            &key
        ])),
        1
    );
}

#[test]
fn export_then_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let prompts = fixture("prompts.jsonl");
    let model = fixture("expert.json");
    let a = dir.path().join("a.jsonl").to_string_lossy().into_owned();
    let b = dir.path().join("b.jsonl").to_string_lossy().into_owned();
    assert_eq!(
        code(&ctgen(&generate_args(
            &prompts,
            &[
                "--model",
                &model,
                "--strategy",
                "contrastive-search",
                "--out",
                &a
            ]
        ))),
        0
    );
    assert_eq!(
        code(&ctgen(&generate_args(
            &prompts,
            &["--model", &model, "--strategy", "greedy", "--out", &b]
        ))),
        0
    );
    let sheet = dir
        .path()
        .join("sheet.jsonl")
        .to_string_lossy()
        .into_owned();
    let key = dir.path().join("key.jsonl").to_string_lossy().into_owned();
    let out = ctgen(&[
        "pair-export",
        "--a",
        &a,
        "--b",
        &b,
        "--order-seed",
        "4",
        "--worksheet",
        &sheet,
        "--key",
        &key,
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let sheet_text = std::fs::read_to_string(&sheet).unwrap();
    assert_eq!(sheet_text.lines().count(), 20);
    assert!(!sheet_text.contains("greedy") && !sheet_text.contains("contrastive"));

    let verdicts: String = (1..=20)
        .map(|r| format!("{{\"row_id\":{r},\"verdict\":\"neutral\"}}\n"))
        .collect();
    let verdicts = write(dir.path(), "v.jsonl", &verdicts);
    // All-neutral input has no defined sign test.
    assert_eq!(
        code(&ctgen(&[
            "pair-ingest",
            "--verdicts",
            &verdicts,
            "--key",
            &key
        ])),
        1
    );

    let ids = write(dir.path(), "ids.txt", "p03\np99\n");
    let out = ctgen(&[
        "pair-export",
        "--a",
        &a,
        "--b",
        &b,
        "--prompt-ids",
        &ids,
        "--worksheet",
        &sheet,
        "--key",
        &key,
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("p99"));
}

#[test]
fn sweep_emits_nine_rows_plus_baselines() {
    let out = ctgen(&[
        "sweep",
        "--config",
        &fixture("bench.json"),
        "--k-min",
        "2",
        "--k-max",
        "10",
        "--alpha",
        "0.6",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.iter().filter(|r| r.starts_with("cs-k")).count(), 9);
    assert_eq!(rows.len(), 15);
}

#[test]
fn bench_and_metrics_leave_inputs_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let names = [
        "bench.json",
        "prompts.jsonl",
        "references.jsonl",
        "expert.json",
        "corpus.jsonl",
    ];
    let before: Vec<Vec<u8>> = names
        .iter()
        .map(|n| std::fs::read(fixtures().join(n)).unwrap())
        .collect();

    let report = dir
        .path()
        .join("report.json")
        .to_string_lossy()
        .into_owned();
    let table = dir.path().join("table.txt").to_string_lossy().into_owned();
    let out = ctgen(&[
        "bench",
        "--config",
        &fixture("bench.json"),
        "--out",
        &report,
        "--table",
        &table,
        "--jobs",
        "2",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let header: Vec<String> = std::fs::read_to_string(&table)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .split('|')
        .map(|c| c.trim().to_string())
        .collect();
    assert_eq!(header, ["Method", "div.(%)", "MAUVE(%)", "coh."]);

    let gen = dir.path().join("gen.jsonl").to_string_lossy().into_owned();
    ctgen(&generate_args(
        &fixture("prompts.jsonl"),
        &[
            "--model",
            &fixture("expert.json"),
            "--strategy",
            "typical",
            "--out",
            &gen,
        ],
    ));
    let out = ctgen(&[
        "metrics",
        "--continuations",
        &gen,
        "--references",
        &fixture("references.jsonl"),
        "--truncate",
        "128",
        "--scorer",
        &fixture("expert.json"),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let m: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(m["corpus"]["frontier"]["value"].as_f64().unwrap() > 0.0);
    assert!(m["corpus"]["coherence"].as_f64().unwrap() < 0.0);
    assert_eq!(m["settings"]["truncate"], 128);

    let after: Vec<Vec<u8>> = names
        .iter()
        .map(|n| std::fs::read(fixtures().join(n)).unwrap())
        .collect();
    assert_eq!(before, after);
}
