use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use ppcf::bench::{self, Corpus, ExperimentConfig};
use ppcf::client::ClientState;
use ppcf::ldp::{BucketDictionary, DictionaryMode};
use ppcf::method::{MethodRegistry, MethodSettings};
use ppcf::server::{self, ServerState};
use ppcf::{rng, Value};

#[derive(Parser)]
#[command(name = "ppcf", version, about = "Private fuzzy counting over streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sampled,
    Exhaustive,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    /// `INGEST <base64>` request lines, ready for `ppcf serve`.
    Requests,
    /// One JSON report per line with hex payloads.
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Build the artificial-filter dictionary clients sample from.
    BuildDict {
        /// Settings file (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "sampled")]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Answer the line protocol on stdin/stdout, or on a TCP address.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Address to listen on, e.g. 127.0.0.1:7878.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Simulate clients reporting every record of a dataset.
    Ingest {
        /// Word-count file (`word<TAB>count` or one word per line).
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dictionary built by `build-dict`; sampled on the fly otherwise.
        #[arg(long)]
        dict: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        clients: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Send reports to a running server instead of printing them.
        #[arg(long)]
        server: Option<String>,
        #[arg(long, value_enum, default_value = "requests")]
        format: ReportFormat,
    },
    /// Ask a running server for the fuzzy count of a value.
    Query {
        value: String,
        #[arg(long, default_value = "127.0.0.1:7878")]
        server: String,
        #[arg(long)]
        s_t: Option<f64>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run an experiment grid and write CSVs.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn settings(path: Option<&Path>) -> Result<MethodSettings> {
    match path {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(MethodSettings::from_toml(&text)?)
        }
        None => Ok(MethodSettings::default()),
    }
}

fn build_dict(config: Option<&Path>, mode: Mode, out: &Path) -> Result<()> {
    let s = settings(config)?;
    let mode = match mode {
        Mode::Sampled => DictionaryMode::Sampled,
        Mode::Exhaustive => DictionaryMode::Exhaustive,
    };
    let dict = BucketDictionary::build(
        s.mechanism.l,
        s.mechanism.buckets,
        s.t_cap,
        s.dictionary_seed,
        mode,
    )?;
    dict.save(out)?;
    eprintln!(
        "wrote {} filters over {} buckets to {}",
        dict.len(),
        dict.bucket_count(),
        out.display()
    );
    Ok(())
}

fn serve(config: Option<&Path>, listen: Option<&str>) -> Result<()> {
    let state = Arc::new(ServerState::new(&settings(config)?.server_config())?);
    match listen {
        Some(addr) => {
            eprintln!("listening on {addr}");
            server::serve(addr, state)?;
        }
        None => {
            let stdin = std::io::stdin();
            server::serve_connection(&state, stdin.lock(), std::io::stdout().lock())?;
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn ingest(
    dataset: &Path,
    config: Option<&Path>,
    dict: Option<&Path>,
    clients: u64,
    seed: u64,
    server: Option<&str>,
    format: ReportFormat,
) -> Result<()> {
    let s = settings(config)?;
    let dict = match dict {
        Some(p) => Arc::new(BucketDictionary::load(p)?),
        None => s.dictionary()?,
    };
    let counts = bench::load_word_counts(dataset)?;
    let corpus = Corpus::from_counts(&counts, clients, &mut rng::derive(seed, "corpus", 0))?;
    let mut rng = rng::derive(seed, "ingest", 0);
    let mut states = std::collections::HashMap::new();

    let mut conn = match server {
        Some(addr) => {
            let stream =
                TcpStream::connect(addr).with_context(|| format!("connecting to {addr}"))?;
            Some((BufReader::new(stream.try_clone()?), BufWriter::new(stream)))
        }
        None => None,
    };
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let (mut sent, mut skipped) = (0u64, 0u64);
    for record in &corpus.records {
        let state = match states.entry(record.client) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(e) => e.insert(ClientState::new(
                record.client,
                s.encoder.clone(),
                s.mechanism.clone(),
                Arc::clone(&dict),
            )?),
        };
        let Some(report) = state
            .submit(&Value::Text(record.value.clone()), &mut rng)?
            .into_report()
        else {
            skipped += 1;
            continue;
        };
        sent += 1;
        match (&mut conn, format) {
            (Some((reader, writer)), _) => {
                writeln!(writer, "{}", server::ingest_request(&report))?;
                writer.flush()?;
                let mut reply = String::new();
                reader.read_line(&mut reply)?;
                if !reply.starts_with("OK") {
                    bail!("server rejected report: {}", reply.trim());
                }
            }
            (None, ReportFormat::Requests) => writeln!(out, "{}", server::ingest_request(&report))?,
            (None, ReportFormat::Json) => writeln!(out, "{}", report.to_json_line())?,
        }
    }
    out.flush()?;
    eprintln!("{sent} reports, {skipped} repeats suppressed");
    Ok(())
}

fn query(
    value: &str,
    addr: &str,
    s_t: Option<f64>,
    m: Option<usize>,
    config: Option<&Path>,
) -> Result<()> {
    let s = settings(config)?;
    let s_t = s_t.unwrap_or(s.mechanism.s_t);
    let m = m.unwrap_or(s.mechanism.m);
    let stream = TcpStream::connect(addr).with_context(|| format!("connecting to {addr}"))?;
    let mut writer = BufWriter::new(stream.try_clone()?);
    writeln!(writer, "QUERY {value} {s_t} {m}")?;
    writer.flush()?;
    let mut reply = String::new();
    BufReader::new(stream).read_line(&mut reply)?;
    let reply = reply.trim();
    match reply.strip_prefix("COUNT ") {
        Some(rest) => {
            let (estimate, sim) = rest.split_once(' ').unwrap_or((rest, ""));
            println!("estimate={estimate} sim_max={sim}");
            Ok(())
        }
        None => bail!("server answered: {reply}"),
    }
}

fn run_bench(config: &Path, out: &Path) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(seed) = bench::seed_from_env()? {
        cfg.seed = seed;
    }
    let results = bench::run_experiment(&cfg, &MethodRegistry::default(), out)?;
    println!("method,epsilon,m,median_abs_error,median_truth");
    for row in &results.summary {
        println!(
            "{},{},{},{},{}",
            row.method, row.epsilon, row.m, row.median_abs_error, row.median_truth
        );
    }
    eprintln!("results in {}", out.display());
    Ok(())
}

fn main() -> Result<()> {
    match run(Cli::parse()) {
        // A closed stdout (e.g. piped into `head`) is not an error.
        Err(e)
            if e.downcast_ref::<std::io::Error>()
                .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe) =>
        {
            Ok(())
        }
        other => other,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildDict { config, mode, out } => build_dict(config.as_deref(), mode, &out),
        Command::Serve { config, listen } => serve(config.as_deref(), listen.as_deref()),
        Command::Ingest {
            dataset,
            config,
            dict,
            clients,
            seed,
            server,
            format,
        } => {
            let seed = bench::seed_from_env()?.unwrap_or(seed);
            ingest(
                &dataset,
                config.as_deref(),
                dict.as_deref(),
                clients,
                seed,
                server.as_deref(),
                format,
            )
        }
        Command::Query {
            value,
            server,
            s_t,
            m,
            config,
        } => query(&value, &server, s_t, m, config.as_deref()),
        Command::Bench { config, out } => run_bench(&config, &out),
    }
}
