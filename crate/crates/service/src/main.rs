use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use cbir_core::aggregation::{multiscale_merge, Pooling};
use cbir_core::eval::{run_benchmark, BenchmarkReport};
use cbir_core::feedback::Method;
use cbir_core::io::{encode_descriptors, read_feature_maps, DescriptorBlock};
use cbir_core::synthetic;
use cbir_core::{Error, Result};
use cbir_service::config::{SimulateConfig, LISTEN_ENV};
use cbir_service::{router, AppState, Dataset, DatasetManifest, ServiceConfig, SessionStore};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cbir", version, about = "Content-based image retrieval with relevance feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset manifest and print its handle.
    Ingest {
        manifest: PathBuf,
    },
    /// Pool a feature-map container into a descriptor container.
    Pool {
        input: PathBuf,
        output: PathBuf,
        /// avg, max, pmp[:ratio], gem[:p], adacow or rmac[:scales]
        #[arg(long, default_value = "pmp:0.1")]
        pooling: Pooling,
        /// Consecutive maps per image; their descriptors are merged.
        #[arg(long, default_value_t = 1)]
        scales: usize,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, env = LISTEN_ENV)]
        listen: Option<String>,
        /// Extra manifests to ingest at startup.
        #[arg(long = "dataset")]
        datasets: Vec<PathBuf>,
        #[arg(long)]
        snapshot_dir: Option<PathBuf>,
    },
    /// Run a simulated feedback benchmark and write CSV/JSON.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        queries: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Paired t-tests between two benchmark reports for one method.
    Ttest {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value = "itml")]
        method: Method,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest { manifest } => {
            let ds = Dataset::ingest(&DatasetManifest::load(&manifest)?)?;
            println!("{}", serde_json::to_string_pretty(&ds.info()).map_err(|e| Error::Io(e.to_string()))?);
            Ok(())
        }
        Command::Pool { input, output, pooling, scales } => pool(input, output, pooling, scales),
        Command::Serve { config, listen, datasets, snapshot_dir } => {
            let mut cfg = match config {
                Some(p) => ServiceConfig::load(&p)?,
                None => ServiceConfig::default(),
            };
            if let Some(l) = listen {
                cfg.listen = l;
            }
            cfg.datasets.extend(datasets);
            if snapshot_dir.is_some() {
                cfg.snapshot_dir = snapshot_dir;
            }
            serve(cfg)
        }
        Command::Simulate { config, rounds, repetitions, seed, queries, methods, csv, json } => {
            let mut cfg = SimulateConfig::load(&config)?;
            let sim = &mut cfg.simulation;
            sim.rounds = rounds.unwrap_or(sim.rounds);
            sim.repetitions = repetitions.unwrap_or(sim.repetitions);
            sim.rng_seed = seed.unwrap_or(sim.rng_seed);
            if let Some(n) = queries {
                cfg.queries.count = Some(n);
            }
            if let Some(m) = methods {
                cfg.methods = m;
            }
            if csv.is_some() {
                cfg.output.csv = csv;
            }
            if json.is_some() {
                cfg.output.json = json;
            }
            cfg.validate()?;
            simulate(&cfg)
        }
        Command::Ttest { a, b, method } => {
            let read = |p: &PathBuf| -> Result<BenchmarkReport> {
                BenchmarkReport::from_json(&std::fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?)
            };
            let tests = read(&a)?.compare(&read(&b)?, method)?;
            println!("round,t,p,dof");
            for (round, t) in tests.iter().enumerate() {
                println!("{round},{:?},{:?},{}", t.t, t.p, t.dof);
            }
            Ok(())
        }
    }
}

fn pool(input: PathBuf, output: PathBuf, pooling: Pooling, scales: usize) -> Result<()> {
    if scales == 0 {
        return Err(Error::Validation("--scales must be at least 1".into()));
    }
    let file = std::fs::File::open(&input).map_err(|e| Error::Io(format!("{}: {e}", input.display())))?;
    let maps = read_feature_maps(std::io::BufReader::new(file))?;
    if maps.len() % scales != 0 {
        return Err(Error::Validation(format!("{} maps do not split into groups of {scales}", maps.len())));
    }
    let mut data = Vec::new();
    let mut dim = 0;
    for group in maps.chunks(scales) {
        let descs = group.iter().map(|fm| pooling.pool(fm)).collect::<Result<Vec<_>>>()?;
        let d = multiscale_merge(&descs)?;
        dim = d.dim();
        data.extend_from_slice(d.as_slice());
    }
    let block = DescriptorBlock::new(dim, data)?;
    std::fs::write(&output, encode_descriptors(&block))?;
    eprintln!("{} descriptors of dim {dim} written to {}", block.count(), output.display());
    Ok(())
}

fn simulate(cfg: &SimulateConfig) -> Result<()> {
    let (index, relevant) = match (&cfg.dataset, &cfg.synthetic) {
        (Some(manifest), _) => (Dataset::ingest(&DatasetManifest::load(manifest)?)?.index, None),
        (None, Some(s)) => {
            let corpus = synthetic::generate(s)?;
            (corpus.index()?, Some(corpus.relevant))
        }
        (None, None) => unreachable!("validated"),
    };
    let queries = cfg.query_specs(&index, relevant.as_deref())?;
    let report = run_benchmark(&index, &queries, &cfg.methods, &cfg.simulation)?;
    let csv = report.to_csv();
    match &cfg.output.csv {
        Some(p) => std::fs::write(p, &csv)?,
        None => print!("{csv}"),
    }
    if let Some(p) = &cfg.output.json {
        std::fs::write(p, report.to_json()?)?;
    }
    for e in &report.errors {
        eprintln!("warning: {}", serde_json::to_string(e).unwrap_or_default());
    }
    Ok(())
}

fn serve(cfg: ServiceConfig) -> Result<()> {
    let state = Arc::new(AppState::new(SessionStore::new(cfg.snapshot_dir.clone()), cfg.feedback.clone(), cfg.default_method));
    for m in &cfg.datasets {
        let (ds, _) = state.datasets.ingest(&DatasetManifest::load(m)?)?;
        eprintln!("dataset {} ({}) with {} items", ds.name, ds.handle, ds.index.len());
    }
    let skipped = state.sessions.restore(&state.datasets)?;
    for id in skipped {
        eprintln!("warning: snapshot {id} refers to a dataset that is not loaded");
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&cfg.listen).await?;
        eprintln!("listening on {}", listener.local_addr()?);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
