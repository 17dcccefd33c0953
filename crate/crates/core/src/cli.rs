//! The `phg` command line.
//!
//! stdout carries tab-separated data only; diagnostics go to stderr.
//! Exit status is 0 on success, 1 on runtime failure and 2 on usage errors.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::evalharness::{evaluate_pairs, histogram, histogram_to_csv, parse_manifest, table_to_csv};
use crate::imaging::load_image_file;
use crate::phash::{pdq, Algorithm, PerceptualHash};
use crate::psi::{build_index_with_map, read_reverse_map, write_reverse_map, OprfKey, Ristretto255, TokenIndex};
use crate::service::{client_report, Coordinator, ProviderAgentConfig, ProviderEvent};

#[derive(Debug, Parser)]
#[command(name = "phg", version, about = "Perceptual hashing and private hash matching")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print `<file>\t<hash>[\t<quality>]` for each file.
    Hash {
        #[arg(long, default_value = "pdq")]
        algo: Algorithm,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Score a pair manifest and write table.csv plus one histogram per metric.
    Eval {
        /// CSV of `label,pathA,pathB`; relative paths resolve against its directory.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "ahash,pdq")]
        metrics: Vec<Algorithm>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
    /// Build a token index and reverse map, or generate a key with --gen-key.
    Ingest {
        #[arg(long)]
        gen_key: bool,
        #[arg(long)]
        key_file: PathBuf,
        /// Hash every image in this directory.
        #[arg(long, conflicts_with_all = ["hashes", "gen_key"])]
        dir: Option<PathBuf>,
        /// Read precomputed hash texts, one per line (output of `hash` is accepted too).
        #[arg(long, conflicts_with = "gen_key")]
        hashes: Option<PathBuf>,
        #[arg(long)]
        algo: Option<Algorithm>,
        #[arg(long, conflicts_with = "gen_key")]
        out: Option<PathBuf>,
        #[arg(long, conflicts_with = "gen_key")]
        map_out: Option<PathBuf>,
        /// Write nothing if any image fails to decode.
        #[arg(long)]
        strict: bool,
    },
    /// Run the coordinator.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7700")]
        listen: String,
        #[arg(long, env = "PHG_DATA_DIR", default_value = "phg-data")]
        data_dir: PathBuf,
    },
    /// Run a provider agent against a coordinator.
    Provider {
        #[arg(long)]
        connect: String,
        #[arg(long)]
        key_file: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        log: PathBuf,
        /// Defaults to `p-<key id>`.
        #[arg(long)]
        id: Option<String>,
    },
    /// Hash files locally and report them.
    Report {
        #[arg(long)]
        connect: String,
        #[arg(long, default_value = "pdq")]
        algo: Algorithm,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl<E: std::error::Error> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult = Result<ExitCode, Failure>;

fn runtime(msg: impl Into<String>) -> Failure {
    Failure::Runtime(msg.into())
}

/// Parses the process arguments and runs the chosen subcommand.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    run(cli)
}

pub fn run(cli: Cli) -> ExitCode {
    let result = match cli.command {
        Command::Hash { algo, files } => cmd_hash(algo, &files),
        Command::Eval {
            manifest,
            metrics,
            out,
            bins,
        } => cmd_eval(&manifest, &metrics, &out, bins),
        Command::Ingest {
            gen_key,
            key_file,
            dir,
            hashes,
            algo,
            out,
            map_out,
            strict,
        } => {
            if gen_key {
                cmd_gen_key(&key_file)
            } else {
                cmd_ingest(&key_file, dir.as_deref(), hashes.as_deref(), algo, out, map_out, strict)
            }
        }
        Command::Serve { listen, data_dir } => cmd_serve(&listen, &data_dir),
        Command::Provider {
            connect,
            key_file,
            index,
            map,
            log,
            id,
        } => cmd_provider(&connect, &key_file, &index, &map, log, id),
        Command::Report { connect, algo, files } => cmd_report(&connect, algo, &files),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn cmd_hash(algo: Algorithm, files: &[PathBuf]) -> CliResult {
    let lines: Vec<(String, bool)> = files
        .par_iter()
        .map(|path| {
            let name = path.display();
            match load_image_file(path) {
                Ok(img) => match algo {
                    Algorithm::Ahash64 => (format!("{name}\t{}", algo.hash(&img)), true),
                    Algorithm::Pdq256 => {
                        let r = pdq(&img);
                        (format!("{name}\t{}\t{}", r.hash, r.quality), true)
                    }
                },
                Err(e) => (format!("{name}\tERROR:{e}"), false),
            }
        })
        .collect();
    let mut out = io::stdout().lock();
    for (line, _) in &lines {
        writeln!(out, "{line}")?;
    }
    let ok = lines.iter().all(|(_, ok)| *ok);
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_eval(manifest: &Path, metrics: &[Algorithm], out: &Path, bins: usize) -> CliResult {
    if metrics.is_empty() {
        return Err(Failure::Usage("--metrics is empty".into()));
    }
    if bins == 0 {
        return Err(Failure::Usage("--bins must be positive".into()));
    }
    let text = fs::read_to_string(manifest).map_err(|e| runtime(format!("{}: {e}", manifest.display())))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let entries = parse_manifest(&text, base)?;
    if entries.is_empty() {
        return Err(runtime("no pairs"));
    }
    let pairs = entries
        .par_iter()
        .map(|e| {
            let load = |p: &Path| load_image_file(p).map_err(|err| format!("{}: {err}", p.display()));
            Ok((e.label.clone(), load(&e.a)?, load(&e.b)?))
        })
        .collect::<Result<Vec<_>, String>>()
        .map_err(Failure::Runtime)?;
    let mut unique = Vec::new();
    for m in metrics {
        if !unique.contains(m) {
            unique.push(*m);
        }
    }
    let table = evaluate_pairs(&pairs, &unique)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("table.csv"), table_to_csv(&table)?)?;
    for m in &unique {
        let hist = histogram(&table.scores(*m), bins)?;
        fs::write(out.join(format!("histogram_{m}.csv")), histogram_to_csv(&hist)?)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn load_key(path: &Path) -> Result<OprfKey<Ristretto255>, Failure> {
    let bytes = fs::read(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    OprfKey::from_bytes(&Ristretto255, &bytes).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn cmd_gen_key(path: &Path) -> CliResult {
    let key = OprfKey::generate(&Ristretto255, &mut rand::rngs::OsRng);
    fs::write(path, key.to_bytes(&Ristretto255))?;
    println!("{}", key.id());
    Ok(ExitCode::SUCCESS)
}

fn read_hash_list(path: &Path) -> Result<Vec<PerceptualHash>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let field = line.split('\t').nth(1).unwrap_or(line).trim();
            field
                .parse()
                .map_err(|e| runtime(format!("{}:{}: {e}", path.display(), n + 1)))
        })
        .collect()
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            files.push(entry.path());
        }
    }
    files.sort();
    Ok(files)
}

fn cmd_ingest(
    key_file: &Path,
    dir: Option<&Path>,
    hashes: Option<&Path>,
    algo: Option<Algorithm>,
    out: Option<PathBuf>,
    map_out: Option<PathBuf>,
    strict: bool,
) -> CliResult {
    let (Some(out), Some(map_out)) = (out, map_out) else {
        return Err(Failure::Usage("--out and --map-out are required".into()));
    };
    let mut failed = false;
    let (algorithm, set) = match (dir, hashes) {
        (Some(dir), None) => {
            let algo = algo.ok_or_else(|| Failure::Usage("--dir needs --algo".into()))?;
            let files = list_images(dir)?;
            let results: Vec<_> = files.par_iter().map(|p| (p, load_image_file(p))).collect();
            let mut set = Vec::with_capacity(results.len());
            for (path, r) in results {
                match r {
                    Ok(img) => set.push(algo.hash(&img)),
                    Err(e) => {
                        eprintln!("{}: {e}", path.display());
                        failed = true;
                    }
                }
            }
            if failed && strict {
                return Err(runtime("undecodable images; nothing written"));
            }
            (algo, set)
        }
        (None, Some(path)) => {
            let set = read_hash_list(path)?;
            let algorithm = match (algo, set.first()) {
                (Some(a), _) => a,
                (None, Some(h)) => h.algorithm(),
                (None, None) => return Err(Failure::Usage("empty hash list needs --algo".into())),
            };
            (algorithm, set)
        }
        _ => return Err(Failure::Usage("exactly one of --dir or --hashes is required".into())),
    };
    let key = load_key(key_file)?;
    let (index, map) = build_index_with_map(&Ristretto255, algorithm, &set, &key)?;
    fs::write(&out, index.to_bytes())?;
    let mut w = BufWriter::new(fs::File::create(&map_out)?);
    write_reverse_map(&mut w, &map)?;
    w.flush()?;
    println!("{}\t{}", out.display(), index.len());
    Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn tokio_runtime() -> Result<tokio::runtime::Runtime, Failure> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

async fn ctrl_c() {
    if tokio::signal::ctrl_c().await.is_err() {
        std::future::pending::<()>().await;
    }
}

fn cmd_serve(listen: &str, data_dir: &Path) -> CliResult {
    let coordinator = Coordinator::open(data_dir).map_err(|e| runtime(format!("{}: {e}", data_dir.display())))?;
    tokio_runtime()?.block_on(async {
        let listener = tokio::net::TcpListener::bind(listen)
            .await
            .map_err(|e| runtime(format!("{listen}: {e}")))?;
        println!("{}", listener.local_addr()?);
        io::stdout().flush()?;
        coordinator.serve(listener, ctrl_c()).await?;
        Ok(ExitCode::SUCCESS)
    })
}

fn cmd_provider(
    connect: &str,
    key_file: &Path,
    index: &Path,
    map: &Path,
    log: PathBuf,
    id: Option<String>,
) -> CliResult {
    let key = load_key(key_file)?;
    let bytes = fs::read(index).map_err(|e| runtime(format!("{}: {e}", index.display())))?;
    let index = TokenIndex::from_bytes(&bytes)?;
    let file = fs::File::open(map).map_err(|e| runtime(format!("{}: {e}", map.display())))?;
    let reverse_map = read_reverse_map(io::BufReader::new(file))?;
    let config = ProviderAgentConfig {
        provider_id: id.unwrap_or_else(|| format!("p-{}", key.id())),
        key,
        index: Arc::new(index),
        reverse_map: Arc::new(reverse_map),
        match_log: log,
        reconnect_delay: Duration::from_secs(1),
    };
    tokio_runtime()?.block_on(async {
        let (tx, mut rx) = tokio::sync::mpsc::unbounded_channel();
        let printer = tokio::spawn(async move {
            while let Some(event) = rx.recv().await {
                let line = match event {
                    ProviderEvent::Connected => "connected".to_owned(),
                    ProviderEvent::IndexUploaded { count } => format!("index_uploaded\t{count}"),
                    ProviderEvent::Matched(h) => format!("matched\t{}", h.len()),
                    ProviderEvent::Disconnected(_) => "disconnected".to_owned(),
                };
                let mut out = io::stdout().lock();
                let _ = writeln!(out, "{line}");
                let _ = out.flush();
            }
        });
        crate::service::provider_agent(connect, config, Some(tx), ctrl_c()).await?;
        let _ = printer.await;
        Ok(ExitCode::SUCCESS)
    })
}

fn cmd_report(connect: &str, algo: Algorithm, files: &[PathBuf]) -> CliResult {
    let hashes = files
        .par_iter()
        .map(|p| {
            load_image_file(p)
                .map(|img| algo.hash(&img))
                .map_err(|e| format!("{}: {e}", p.display()))
        })
        .collect::<Result<Vec<_>, String>>()
        .map_err(Failure::Runtime)?;
    let receipt = tokio_runtime()?.block_on(client_report(connect, &hashes)).map_err(|e| match e.code() {
        Some(code) => runtime(format!("code {code}: {e}")),
        None => runtime(e.to_string()),
    })?;
    println!("providers_contacted\t{}", receipt.providers_contacted);
    println!("tokens_sent\t{}", receipt.tokens_sent);
    Ok(ExitCode::SUCCESS)
}
