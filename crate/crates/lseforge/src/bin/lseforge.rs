use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lseforge::data::vocab_path;
use lseforge::gradhist::{classifier_gradient, grad_histogram};
use lseforge::model::Window;
use lseforge::sweep::{run_sweep, spearman_table, write_records, GridSpec};
use lseforge::train::EvalSet;
use lseforge::{
    load_split, DataSource, Error, InteractionLog, PoolExecutor, Precision, SamplerKind, SplitSpec, SyntheticConfig,
    TrainConfig, Trainer,
};
use lseforge_core::{
    cce_forward, ccem_forward, estimate_flops, peak_bytes, sample_uniform, Accountant, CceConfig, DenseMatrix, Env,
    LossBackend, MemoryModel, Rng,
};
use serde_json::json;

#[derive(Parser)]
#[command(name = "lseforge", version, about = "Memory-efficient cross-entropy training and benchmarks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train and print one JSON report per epoch.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Backend: ce, ce-, cce, cce-, bce.
        #[arg(long, default_value = "cce", value_parser = parse_backend)]
        backend: LossBackend,
        /// Softmax probabilities below this are skipped in the backward pass (cce only).
        #[arg(long, default_value_t = 0.0)]
        filter_eps: f64,
    },
    /// Run a hyperparameter grid; records go to CSV, the Spearman table to stdout.
    Sweep {
        /// TOML grid file.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Concurrent runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Histogram of |dL/dC| on one batch, after `--epochs` epochs of training.
    Gradhist {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value = "cce", value_parser = parse_backend)]
        backend: LossBackend,
        /// Scale of the loss gradient.
        #[arg(long, default_value_t = 1.0)]
        upstream: f64,
    },
    /// Train cce at several filter thresholds; CSV on stdout.
    FilterSweep {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 1e-8, 1e-6, 1e-4, 1e-2])]
        eps: Vec<f64>,
    },
    /// Predicted loss-layer memory of one configuration.
    Memory {
        #[arg(long, value_parser = parse_backend)]
        backend: LossBackend,
        /// Rows (bs * sl).
        #[arg(long)]
        n: usize,
        #[arg(long)]
        v: usize,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        ns: Option<usize>,
        #[arg(long, default_value_t = 4)]
        dtype_bytes: usize,
    },
    /// Time the cce and cce- forward kernels on random data.
    Bench {
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 50_000)]
        v: usize,
        #[arg(long, default_value_t = 32)]
        d: usize,
        #[arg(long, default_value_t = 255)]
        ns: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Interaction CSV with header user_id,item_id,timestamp.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    data: Option<PathBuf>,
    /// Generate a clustered synthetic log instead.
    #[arg(long)]
    synthetic: bool,
    /// Where to write the item vocabulary (default: next to the data file).
    #[arg(long, requires = "data")]
    vocab_out: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    items: usize,
    #[arg(long, default_value_t = 1000)]
    users: usize,
    #[arg(long, default_value_t = 25)]
    seq_len: usize,
    #[arg(long, default_value_t = 20)]
    clusters: usize,
    /// Probability that a synthetic step stays in the user's cluster.
    #[arg(long, default_value_t = 0.9)]
    in_cluster: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 32)]
    bs: usize,
    #[arg(long, default_value_t = 20)]
    sl: usize,
    /// Negatives per position (ce- and cce- only; default 63).
    #[arg(long)]
    ns: Option<usize>,
    #[arg(long, default_value_t = 2)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, value_enum, default_value_t = SamplerArg::Uniform)]
    sampler: SamplerArg,
    #[arg(long, value_enum, default_value_t = PrecisionArg::F32)]
    precision: PrecisionArg,
    #[arg(long, value_enum, default_value_t = EvalArg::Test)]
    eval: EvalArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerArg {
    Uniform,
    Popularity,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalArg {
    Valid,
    Test,
}

fn parse_backend(s: &str) -> Result<LossBackend, String> {
    LossBackend::parse(s).ok_or_else(|| format!("unknown backend {s:?} (expected ce, ce-, cce, cce-, bce)"))
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult = Result<(), Failure>;

impl TrainArgs {
    fn config(&self, backend: LossBackend, filter_eps: f64) -> Result<TrainConfig, Failure> {
        if self.ns.is_some() && !backend.samples() {
            return Err(Failure::Usage(format!("--ns does not apply to backend {backend}")));
        }
        let cfg = TrainConfig {
            backend,
            dim: self.dim,
            bs: self.bs,
            sl: self.sl,
            ns: self.ns.unwrap_or(63),
            epochs: self.epochs,
            lr: self.lr,
            seed: self.seed,
            filter_eps,
            sampler: match self.sampler {
                SamplerArg::Uniform => SamplerKind::Uniform,
                SamplerArg::Popularity => SamplerKind::Popularity,
            },
            precision: match self.precision {
                PrecisionArg::F32 => Precision::F32,
                PrecisionArg::F64 => Precision::F64,
            },
            eval_on: match self.eval {
                EvalArg::Valid => EvalSet::Valid,
                EvalArg::Test => EvalSet::Test,
            },
            ..TrainConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn check_input(path: &Path) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("data file not found: {}", path.display())))
    }
}

impl DataArgs {
    fn load(&self, seed: u64) -> Result<(InteractionLog, SplitSpec), Failure> {
        let source = match &self.data {
            Some(p) => {
                check_input(p)?;
                DataSource::Csv(p.clone())
            }
            None => DataSource::Synthetic(SyntheticConfig {
                n_items: self.items,
                n_users: self.users,
                seq_len: self.seq_len,
                n_clusters: self.clusters,
                in_cluster: self.in_cluster,
            }),
        };
        let (log, split) = load_split(&source, seed)?;
        if let Some(p) = &self.data {
            log.write_vocab(&self.vocab_out.clone().unwrap_or_else(|| vocab_path(p)))?;
        }
        Ok((log, split))
    }
}

fn print_json(out: &mut impl Write, v: &impl serde::Serialize) -> io::Result<()> {
    serde_json::to_writer(&mut *out, v).map_err(io::Error::other)?;
    writeln!(out)
}

fn cmd_train(data: &DataArgs, train: &TrainArgs, backend: LossBackend, filter_eps: f64) -> CliResult {
    let cfg = train.config(backend, filter_eps)?;
    if cfg.epochs == 0 {
        return Err(Failure::Usage("--epochs must be >= 1".into()));
    }
    let exec = PoolExecutor::from_env()?;
    let (log, split) = data.load(cfg.seed)?;
    let mut trainer = Trainer::new(cfg, &split, log.n_items)?;
    let mut io_err = None;
    exec.install(|| {
        trainer.run(&exec, |r| {
            let mut out = io::stdout().lock();
            if let Err(e) = print_json(&mut out, r).and_then(|_| out.flush()) {
                io_err.get_or_insert(e);
            }
        })
    })?;
    io_err.map_or(Ok(()), |e| Err(e.into()))
}

fn cmd_sweep(grid: &Path, out: &Path, jobs: usize) -> CliResult {
    check_input(grid)?;
    let text = std::fs::read_to_string(grid).map_err(|e| Failure::Runtime(format!("{}: {e}", grid.display())))?;
    let spec = GridSpec::parse(&text)?;
    let source = match &spec.data {
        Some(p) => {
            check_input(p)?;
            DataSource::Csv(p.clone())
        }
        None => DataSource::Synthetic(spec.synthetic),
    };
    let runs = spec.runs()?;
    let exec = PoolExecutor::from_env()?;
    let (log, split) = load_split(&source, spec.seed)?;
    let (records, failures) = exec.install(|| run_sweep(&runs, &split, log.n_items, jobs.max(1), &exec))?;
    let f = File::create(out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    write_records(&records, BufWriter::new(f))?;
    for f in &failures {
        eprintln!("run failed: {} bs={} sl={} ns={:?}: {}", f.backend, f.bs, f.sl, f.ns, f.error);
    }
    let summary = json!({
        "records": records.len(),
        "failures": failures,
        "spearman": spearman_table(&records),
    });
    print_json(&mut io::stdout().lock(), &summary)?;
    Ok(())
}

fn cmd_gradhist(data: &DataArgs, train: &TrainArgs, backend: LossBackend, upstream: f64) -> CliResult {
    let cfg = train.config(backend, 0.0)?;
    let precision = cfg.precision;
    let exec = PoolExecutor::from_env()?;
    let (log, split) = data.load(cfg.seed)?;
    let mut trainer = Trainer::new(cfg, &split, log.n_items)?;
    let epochs = trainer.cfg.epochs;
    exec.install(|| -> Result<(), Error> {
        for epoch in 1..=epochs {
            trainer.train_epoch(epoch, &exec)?;
        }
        Ok(())
    })?;
    let batch = &trainer.batches(epochs + 1)[0];
    let ws: Vec<&Window> = batch.iter().map(|&i| &trainer.windows[i]).collect();
    let g = classifier_gradient(&trainer.model, &ws, upstream, precision)?;
    let h = grad_histogram(g.data());
    let out = json!({
        "epochs_trained": epochs,
        "backend": backend.name(),
        "total": h.total,
        "below_fp16_min": h.below_fp16_min,
        "bins": h.bins,
    });
    print_json(&mut io::stdout().lock(), &out)?;
    Ok(())
}

fn cmd_filter_sweep(data: &DataArgs, train: &TrainArgs, eps: &[f64]) -> CliResult {
    let base = train.config(LossBackend::Cce, 0.0)?;
    if base.epochs == 0 {
        return Err(Failure::Usage("--epochs must be >= 1".into()));
    }
    let exec = PoolExecutor::from_env()?;
    let (log, split) = data.load(base.seed)?;
    let stdout = io::stdout();
    let mut w = csv::Writer::from_writer(stdout.lock());
    let csv_err = |e: csv::Error| Failure::Runtime(e.to_string());
    w.write_record(["filter_eps", "ndcg10", "wall_ms", "skipped_fraction"]).map_err(csv_err)?;
    for &e in eps {
        let cfg = TrainConfig { filter_eps: e, ..base.clone() };
        cfg.validate()?;
        let mut trainer = Trainer::new(cfg, &split, log.n_items)?;
        let reports = exec.install(|| trainer.run(&exec, |_| {}))?;
        let last = reports.last().expect("epochs >= 1");
        let wall: f64 = reports.iter().map(|r| r.wall_ms).sum();
        let skipped = reports.iter().filter_map(|r| r.skipped_fraction).sum::<f64>() / reports.len() as f64;
        w.write_record([e.to_string(), last.ndcg10.to_string(), format!("{wall:.3}"), skipped.to_string()])
            .map_err(csv_err)?;
        w.flush()?;
    }
    Ok(())
}

fn cmd_memory(backend: LossBackend, n: usize, v: usize, d: usize, ns: Option<usize>, dtype_bytes: usize) -> CliResult {
    let mut m = MemoryModel::new(backend, n, v, d).with_dtype_bytes(dtype_bytes);
    if let Some(ns) = ns {
        m = m.with_ns(ns);
    }
    let p = peak_bytes(&m).map_err(|e| Failure::Usage(e.to_string()))?;
    let f = estimate_flops(n, d, v, ns.unwrap_or(0), backend);
    let out = json!({
        "backend": backend.name(),
        "n": n, "v": v, "d": d, "ns": ns, "dtype_bytes": dtype_bytes,
        "retained_bytes": p.retained.to_string(),
        "scratch_bytes": p.scratch.to_string(),
        "full_logit_scalars": m.full_logit_scalars().to_string(),
        "forward_flops": f.forward.to_string(),
        "backward_flops": f.backward.to_string(),
    });
    print_json(&mut io::stdout().lock(), &out)?;
    Ok(())
}

fn cmd_bench(n: usize, v: usize, d: usize, ns: usize, seed: u64) -> CliResult {
    if n == 0 || v < 2 || d == 0 || ns >= v {
        return Err(Failure::Usage("bench needs n, d >= 1 and ns < v".into()));
    }
    let mut rng = Rng::new(seed);
    let e = DenseMatrix::<f32>::from_fn(n, d, |_, _| rng.uniform_f64(-1.0, 1.0) as f32);
    let c = DenseMatrix::<f32>::from_fn(d, v, |_, _| rng.uniform_f64(-1.0, 1.0) as f32);
    let x: Vec<usize> = (0..n).map(|_| rng.below(v)).collect();
    let inds = sample_uniform(&x, ns, v, &rng.fork(1)).map_err(Error::from)?;
    let exec = PoolExecutor::from_env()?;
    let cfg = CceConfig::default();
    let mut acct = Accountant::new();
    let t = Instant::now();
    cce_forward(&e, &c, &x, &cfg, &mut Env::new(&exec, &mut acct)).map_err(Error::from)?;
    let cce_ms = t.elapsed().as_secs_f64() * 1e3;
    let t = Instant::now();
    ccem_forward(&e, &c, &inds, &cfg, &mut Env::new(&exec, &mut acct)).map_err(Error::from)?;
    let ccem_ms = t.elapsed().as_secs_f64() * 1e3;
    let mut out = io::stdout().lock();
    for (b, ms) in [(LossBackend::Cce, cce_ms), (LossBackend::CceSampled, ccem_ms)] {
        let f = estimate_flops(n, d, v, ns, b);
        print_json(
            &mut out,
            &json!({"backend": b.name(), "n": n, "v": v, "d": d, "ns": ns,
                    "forward_ms": ms, "forward_flops": f.forward.to_string()}),
        )?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Train {
            data,
            train,
            backend,
            filter_eps,
        } => cmd_train(data, train, *backend, *filter_eps),
        Cmd::Sweep { grid, out, jobs } => cmd_sweep(grid, out, *jobs),
        Cmd::Gradhist {
            data,
            train,
            backend,
            upstream,
        } => cmd_gradhist(data, train, *backend, *upstream),
        Cmd::FilterSweep { data, train, eps } => cmd_filter_sweep(data, train, eps),
        Cmd::Memory {
            backend,
            n,
            v,
            d,
            ns,
            dtype_bytes,
        } => cmd_memory(*backend, *n, *v, *d, *ns, *dtype_bytes),
        Cmd::Bench { n, v, d, ns, seed } => cmd_bench(*n, *v, *d, *ns, *seed),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
