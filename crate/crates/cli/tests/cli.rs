use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::Duration;

const BIN: &str = env!("CARGO_BIN_EXE_ppcf");

const SETTINGS: &str = "\
shards = 2
[mechanism]
flip_override = 0.0
s_t = 1.0
m = 5
buckets = 64
";

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("PPCF_SEED")
        .output()
        .unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("settings.toml"), SETTINGS).unwrap();
    std::fs::write(
        dir.path().join("words.tsv"),
        "# word\tcount\njuliet\t3\nromeo\t2\nnurse\t1\n",
    )
    .unwrap();
    dir
}

#[test]
fn help_lists_every_subcommand() {
    let out = Command::new(BIN).arg("--help").output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in ["build-dict", "serve", "ingest", "query", "bench"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn ingest_output_feeds_serve_on_stdin() {
    let dir = setup();
    let out = run(
        &[
            "build-dict",
            "--config",
            "settings.toml",
            "--out",
            "dict.bin",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = run(
        &[
            "ingest",
            "--dataset",
            "words.tsv",
            "--config",
            "settings.toml",
            "--dict",
            "dict.bin",
            "--clients",
            "100",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let requests = String::from_utf8(out.stdout).unwrap();
    assert_eq!(requests.lines().count(), 6);
    assert!(requests.lines().all(|l| l.starts_with("INGEST ")));

    let mut child = Command::new(BIN)
        .args(["serve", "--config", "settings.toml"])
        .current_dir(dir.path())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdin = child.stdin.take().unwrap();
    stdin.write_all(requests.as_bytes()).unwrap();
    stdin
        .write_all(b"QUERY juliet 1 5\nQUERY romeo 1 5\nQUERY tybalt 1 5\n")
        .unwrap();
    drop(stdin);
    let out = child.wait_with_output().unwrap();
    let lines: Vec<String> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    assert_eq!(lines.len(), 9);
    assert!(lines[..6].iter().all(|l| l == "OK 5 0"), "{lines:?}");
    assert_eq!(&lines[6..], ["COUNT 3 1", "COUNT 2 1", "COUNT 0 0"]);
}

#[test]
fn json_reports_are_one_object_per_line() {
    let dir = setup();
    let out = run(
        &[
            "ingest",
            "--dataset",
            "words.tsv",
            "--config",
            "settings.toml",
            "--format",
            "json",
            "--clients",
            "100",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for line in text.lines() {
        assert!(
            line.starts_with('{') && line.contains("\"records\""),
            "{line}"
        );
    }
}

#[test]
fn tcp_server_answers_ingest_and_query() {
    let dir = setup();
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let addr = format!("127.0.0.1:{port}");
    let mut server = Command::new(BIN)
        .args(["serve", "--config", "settings.toml", "--listen", &addr])
        .current_dir(dir.path())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    // Wait until the listener is up.
    let mut ready = String::new();
    BufReader::new(server.stderr.as_mut().unwrap())
        .read_line(&mut ready)
        .unwrap();
    assert!(ready.contains("listening"), "{ready}");

    let mut ok = false;
    for _ in 0..50 {
        let out = run(
            &[
                "ingest",
                "--dataset",
                "words.tsv",
                "--config",
                "settings.toml",
                "--clients",
                "100",
                "--server",
                &addr,
            ],
            dir.path(),
        );
        if out.status.success() {
            ok = true;
            break;
        }
        std::thread::sleep(Duration::from_millis(100));
    }
    assert!(ok, "ingest never reached the server");
    let out = run(
        &[
            "query", "juliet", "--server", &addr, "--s-t", "1", "--m", "5",
        ],
        dir.path(),
    );
    let _ = server.kill();
    let _ = server.wait();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        String::from_utf8(out.stdout).unwrap().trim(),
        "estimate=3 sim_max=1"
    );
}

#[test]
fn bench_writes_csvs_and_honours_seed_env() {
    let dir = setup();
    std::fs::write(
        dir.path().join("bench.toml"),
        "methods = [\"ppcf\", \"cms\"]\nepsilons = [6.0]\nsegments = [1, 5]\nqueries = 5\n\
         timing = false\nclients = 50\ndataset = \"words.tsv\"\n\
         [settings]\nt_cap = 2\n[settings.mechanism]\nbuckets = 64\nflip_override = 0.0\n",
    )
    .unwrap();
    let bench = |seed: &str, out: &str| {
        Command::new(BIN)
            .args(["bench", "--config", "bench.toml", "--out", out])
            .current_dir(dir.path())
            .env("PPCF_SEED", seed)
            .output()
            .unwrap()
    };
    let a = bench("7", "a");
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert!(bench("7", "b").status.success());
    for f in ["records.csv", "summary.csv", "config.toml"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(f)).unwrap(),
            std::fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let config = std::fs::read_to_string(dir.path().join("a/config.toml")).unwrap();
    assert!(config.contains("seed = 7"), "{config}");
    let summary = String::from_utf8(a.stdout).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2 * 2);

    let bad = bench("not-a-number", "c");
    assert!(!bad.status.success());
}

#[test]
fn missing_dataset_fails_cleanly() {
    let dir = setup();
    let out = run(&["ingest", "--dataset", "nope.tsv"], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("nope.tsv"), "{err}");
    assert!(!err.contains("panicked"));
}
