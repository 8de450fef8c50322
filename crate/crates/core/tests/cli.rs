use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_privspn");

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const TOY: &str =
    "spn v1\nvars 1\nscale 256\nroot S\nleaf X var=0 pos\nleaf NX var=0 neg\nsum S X:128 NX:128\n";

fn worked_example(dir: &Path) -> (String, Vec<String>) {
    let spn = write(
        dir,
        "w.spn",
        "spn v1\nvars 1\nscale 1000\nroot S\nleaf X var=0 pos\nleaf NX var=0 neg\nsum S X:500 NX:500\n",
    );
    let files = [(71, 256), (209, 786), (320, 1127)]
        .iter()
        .enumerate()
        .map(|(k, &(num, den))| {
            let rows = "1\n".repeat(num) + &"0\n".repeat(den - num);
            write(dir, &format!("w{}.csv", k + 1), &rows)
        })
        .collect();
    (spn, files)
}

fn path(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn validate_reports_statistics() {
    let o = run(&["validate", "--structure", &path(&data("example.spn"))]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("sum 5, product 3, leaf 4 (of 2 variables)"));
    let o = run(&["validate", "--structure", &path(&data("nltcs_scale.spn"))]);
    assert_eq!(code(&o), 0);
    let s = stdout(&o);
    assert!(s.contains("sum 13, product 26, leaf 74"), "{s}");
    assert!(s.contains("params 100, edges 112, layers 9"), "{s}");
}

#[test]
fn validate_failures() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(
        dir.path(),
        "bad.spn",
        "spn v1\nvars 1\nscale 2\nroot A\nmax A\n",
    );
    let o = run(&["validate", "--structure", &bad]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 5"));

    let incomplete = write(
        dir.path(),
        "inc.spn",
        "spn v1\nvars 2\nscale 10\nroot S\nleaf X var=0 pos\nleaf Y var=1 pos\nsum S X:5 Y:5\n",
    );
    let o = run(&["validate", "--structure", &incomplete]);
    assert_eq!(code(&o), 2);
    assert!(stdout(&o).contains("violation S"));

    let rows = write(dir.path(), "rows.csv", "1,1\n");
    let o = run(&[
        "validate",
        "--structure",
        &path(&data("example.spn")),
        "--data",
        &rows,
    ]);
    assert_eq!(code(&o), 2);
    assert!(stdout(&o).contains("1 selectivity violations"));

    assert_eq!(code(&run(&["validate", "--bogus"])), 1);
    assert_eq!(code(&run(&["validate"])), 1);
}

#[test]
fn oracle_and_exact_learning() {
    let dir = tempfile::tempdir().unwrap();
    let spn = write(dir.path(), "toy.spn", TOY);
    let rows = write(dir.path(), "toy.csv", "1\n1\n0\n");
    let o = run(&[
        "learn",
        "--mode",
        "oracle",
        "--structure",
        &spn,
        "--data",
        &rows,
    ]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("sum S scope=0 X:171 NX:85"));

    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = run(&[
            "learn",
            "--mode",
            "exact",
            "--structure",
            &spn,
            "--data",
            &rows,
            "--seed",
            "4",
            "--out",
            &path(&out),
            "--debug-reconstruct",
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("(tolerance 2)"));
        outputs.push(out);
    }
    for file in [
        "party1.shares",
        "party2.shares",
        "party3.shares",
        "report.json",
        "report.txt",
    ] {
        let a = std::fs::read(outputs[0].join(file)).unwrap();
        let b = std::fs::read(outputs[1].join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between runs");
    }
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(outputs[0].join("report.json")).unwrap()).unwrap();
    assert_eq!(report["parties"], 3);
    assert_eq!(
        report["predicted_messages"],
        report["traffic"]["total"]["messages"]
    );

    let shares: Vec<String> = (1..=3)
        .map(|k| path(&outputs[0].join(format!("party{k}.shares"))))
        .collect();
    let o = run(&[
        "infer",
        "--structure",
        &spn,
        "--shares",
        &shares[0],
        "--shares",
        &shares[1],
        "--shares",
        &shares[2],
        "--query",
        "0=1",
    ]);
    assert_eq!(code(&o), 0);
    let s = stdout(&o);
    let p: f64 = s
        .strip_prefix("Pr(x | e) = ")
        .and_then(|r| r.lines().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!((p - 171.0 / 256.0).abs() <= 4.0 / 256.0, "{s}");
}

#[test]
fn approximate_worked_example() {
    let dir = tempfile::tempdir().unwrap();
    let (spn, files) = worked_example(dir.path());
    let out = dir.path().join("shares");
    let o = run(&[
        "learn",
        "--mode",
        "approx",
        "--structure",
        &spn,
        "--data",
        &files[0],
        "--data",
        &files[1],
        "--data",
        &files[2],
        "--prime",
        "1048583",
        "--rho",
        "12",
        "--mask",
        "S:0=752508,776879,567779",
        "--out",
        &path(&out),
        "--debug-reconstruct",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("S 276 "));
    for (k, want) in [752600, 776968, 567874].iter().enumerate() {
        let text = std::fs::read_to_string(out.join(format!("party{}.shares", k + 1))).unwrap();
        assert!(text.contains(&format!("edge S X {want}\n")), "{text}");
    }

    // A party without rows cannot form its local fraction.
    let o = run(&[
        "learn",
        "--mode",
        "approx",
        "--structure",
        &spn,
        "--data",
        &files[0],
        "--data",
        &files[1],
        "--prime",
        "1048583",
        "--rho",
        "12",
    ]);
    assert_eq!(code(&o), 5);
}

#[test]
fn plaintext_inference() {
    let spn = path(&data("example.spn"));
    let p = |query: &str, evidence: &str| {
        let o = run(&[
            "infer",
            "--structure",
            &spn,
            "--query",
            query,
            "--evidence",
            evidence,
        ]);
        assert_eq!(code(&o), 0);
        stdout(&o)
    };
    assert!(p("0=1,1=1", "").starts_with("Pr(x | e) = 0.045000"));
    assert!(p("0=1", "").starts_with("Pr(x | e) = 0.330000"));
    assert!(p("", "").starts_with("Pr(x | e) = 1.000000"));
    assert!(p("0=1,1=0", "0=1,1=0").starts_with("Pr(x | e) = 1.000000"));

    let dir = tempfile::tempdir().unwrap();
    let zero = write(
        dir.path(),
        "z.spn",
        "spn v1\nvars 1\nscale 10\nroot S\nleaf X var=0 pos\nleaf NX var=0 neg\nsum S X:10 NX:0\n",
    );
    let o = run(&["infer", "--structure", &zero, "--evidence", "0=0"]);
    assert_eq!(code(&o), 5);
    assert!(String::from_utf8_lossy(&o.stderr).contains("undefined"));
    let o = run(&["infer", "--structure", &spn, "--query", "0=2"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn bench_counts_grow_with_parties() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("bench.json");
    let o = run(&[
        "bench",
        "--task",
        "infer",
        "--structures",
        &path(&data("example.spn")),
        "--party-counts",
        "3,5,7",
        "--out",
        &path(&json),
    ]);
    assert_eq!(code(&o), 0);
    let rows: Vec<serde_json::Value> =
        serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
    let messages: Vec<u64> = rows
        .iter()
        .map(|r| r["messages"].as_u64().unwrap())
        .collect();
    assert!(messages.windows(2).all(|w| w[0] < w[1]), "{messages:?}");
    for r in &rows {
        assert_eq!(r["messages"], r["predicted_messages"]);
    }
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let spn = write(dir.path(), "toy.spn", TOY);
    let rows = write(dir.path(), "toy.csv", "1\n0\n");
    let cfg = write(
        dir.path(),
        "run.toml",
        &format!("parties = 5\nseed = 3\nstructure = {spn:?}\ndata = [{rows:?}]\n"),
    );
    let report = |extra: &[&str]| {
        let out = dir.path().join("out");
        let mut args = vec!["--config", &cfg, "learn", "--out"];
        let out_s = path(&out);
        args.push(&out_s);
        args.extend_from_slice(extra);
        let o = run(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let v: serde_json::Value =
            serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
        v["parties"].as_u64().unwrap()
    };
    assert_eq!(report(&[]), 5);
    assert_eq!(report(&["--parties", "3"]), 3);

    let broken = write(dir.path(), "broken.toml", "parties = \"many\"\n");
    assert_eq!(code(&run(&["--config", &broken, "validate"])), 1);
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

fn manifest(dir: &Path, spn: &str, with_members: bool) -> String {
    let mut text = format!(
        "parties = 3\nseed = 11\ndivisor-bound = 256\ntimeout-ms = 3000\nstructure = {spn:?}\n[addresses]\nmanager = \"127.0.0.1:{}\"\nclient = \"127.0.0.1:{}\"\n",
        free_port(),
        free_port()
    );
    for k in 1..=3 {
        let port = if with_members { free_port() } else { 1 };
        text.push_str(&format!("{k} = \"127.0.0.1:{port}\"\n"));
    }
    write(dir, "session.toml", &text)
}

#[test]
fn distributed_learning_matches_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let spn = write(dir.path(), "toy.spn", TOY);
    let parts = [
        write(dir.path(), "d1.csv", "1\n1\n"),
        write(dir.path(), "d2.csv", "0\n"),
        write(dir.path(), "d3.csv", ""),
    ];
    let cfg = manifest(dir.path(), &spn, true);
    let out = path(&dir.path().join("dist"));
    let members: Vec<_> = (1..=3)
        .map(|k| {
            let party = k.to_string();
            Command::new(BIN)
                .args([
                    "--config",
                    &cfg,
                    "member",
                    "--party",
                    &party,
                    "--task",
                    "learn-exact",
                    "--data",
                    &parts[k - 1],
                    "--out",
                    &out,
                ])
                .stdout(Stdio::null())
                .spawn()
                .unwrap()
        })
        .collect();
    let o = run(&["--config", &cfg, "learn", "--mode", "exact", "--out", &out]);
    for mut m in members {
        assert!(m.wait().unwrap().success());
    }
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let sim = path(&dir.path().join("sim"));
    let o = run(&[
        "learn",
        "--mode",
        "exact",
        "--structure",
        &spn,
        "--data",
        &parts[0],
        "--data",
        &parts[1],
        "--data",
        &parts[2],
        "--seed",
        "11",
        "--divisor-bound",
        "256",
        "--out",
        &sim,
    ]);
    assert_eq!(code(&o), 0);
    for k in 1..=3 {
        let name = format!("party{k}.shares");
        assert_eq!(
            std::fs::read(Path::new(&out).join(&name)).unwrap(),
            std::fs::read(Path::new(&sim).join(&name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn unreachable_members_are_a_connectivity_failure() {
    let dir = tempfile::tempdir().unwrap();
    let spn = write(dir.path(), "toy.spn", TOY);
    let cfg = manifest(dir.path(), &spn, false);
    let o = run(&["--config", &cfg, "learn", "--mode", "exact"]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}
