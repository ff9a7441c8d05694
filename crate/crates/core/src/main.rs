use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use specmap::codec::Codec;
use specmap::harness::{self, EvalSummary, ExperimentConfig, Method, SweepAxis, SweepSpec};
use specmap::radiomap::{load_dataset, sample_dataset, Dataset};
use specmap::training::{self, init_codebooks, train_stage1, train_stage2, tune_online};
use specmap::{Error, Result};

/// Desk-scale experiments for knowledge-enhanced spectrum map transmission.
///
/// Exit status: 0 on success, 2 for missing files, bad arguments or schema
/// violations, 3 for numerical failures.
#[derive(Parser)]
#[command(name = "specmap", version)]
struct Cli {
    /// Flat TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides `seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Writes `<out>/train` and `<out>/test` datasets.
    GenDataset {
        #[arg(long)]
        out: PathBuf,
    },
    /// Initializes a codec and trains encoder, codebooks and decoder.
    TrainStage1 {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint stem (`<stem>.params.json`, `<stem>.codec.json`, ...).
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Trains the index predictor of an existing checkpoint in place.
    TrainStage2 {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Unsupervised tuning on a stream of maps; writes a new checkpoint.
    TuneOnline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Scores a checkpoint: per-map CSV and aggregate JSON.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Link SNR in dB; `eval_snr_db` from the config otherwise.
        #[arg(long)]
        snr: Option<f64>,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Scores the IDW baseline through the same link and metrics.
    Idw {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        snr: Option<f64>,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Repeats evaluation along one axis and writes a CSV.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// snr, tau, n_win or n_tx.
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        #[arg(long, value_delimiter = ',', default_value = "codec,idw")]
        methods: Vec<Method>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Renders a sweep CSV as markdown.
    Report {
        #[arg(long)]
        input: PathBuf,
        /// Stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load(dir: &Path) -> Result<Dataset> {
    let ds = load_dataset(dir)?;
    info!("{}: {} maps", dir.display(), ds.records.len());
    Ok(ds)
}

fn same_grid(codec: &Codec, ds: &Dataset) -> Result<()> {
    if codec.grid() != ds.config.grid {
        return Err(Error::validation(format!(
            "checkpoint grid {:?} does not match dataset grid {:?}",
            codec.grid().blocks,
            ds.config.grid.blocks
        )));
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn emit(summary: &EvalSummary, csv: &Path, json: Option<&Path>) -> Result<()> {
    training::write_trace(csv, &summary.rows)?;
    if let Some(json) = json {
        #[derive(serde::Serialize)]
        struct Aggregate {
            method: Method,
            snr_db: f64,
            n_maps: usize,
            mse: f64,
            kmse: f64,
            rkmse: f64,
            link_error_rate: f64,
        }
        let agg = Aggregate {
            method: summary.method,
            snr_db: summary.snr_db,
            n_maps: summary.n_maps,
            mse: summary.mse,
            kmse: summary.kmse,
            rkmse: summary.rkmse,
            link_error_rate: summary.link_error_rate,
        };
        write_json(json, &agg)?;
    }
    info!(
        "{} @ {} dB: MSE {:.4}  KMSE {:.4}  RKMSE {:.4}  link errors {:.4}",
        summary.method, summary.snr_db, summary.mse, summary.kmse, summary.rkmse, summary.link_error_rate
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.cmd {
        Cmd::GenDataset { out } => {
            for (split, test) in [("train", false), ("test", true)] {
                let dir = out.join(split);
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                let ds = sample_dataset(&cfg.dataset(test)?, &dir)?;
                info!("wrote {} maps to {}", ds.records.len(), dir.display());
            }
        }
        Cmd::TrainStage1 { data, ckpt, trace } => {
            let ds = load(&data)?;
            let mut codec = Codec::new(cfg.codec(), ds.config.grid, cfg.seed)?;
            init_codebooks(&mut codec, &ds.records, cfg.seed)?;
            let log = train_stage1(&mut codec, &ds.records, &cfg.train())?;
            if let (Some(first), Some(last)) = (log.first(), log.last()) {
                info!("stage 1: loss {:.4} -> {:.4} over {} epochs", first.loss, last.loss, log.len());
            }
            if let Some(trace) = trace {
                training::write_trace(&trace, &log)?;
            }
            codec.save(&ckpt)?;
        }
        Cmd::TrainStage2 { data, ckpt, trace } => {
            let ds = load(&data)?;
            let mut codec = Codec::load(&ckpt)?;
            same_grid(&codec, &ds)?;
            let log = train_stage2(&mut codec, &ds.records, &cfg.stage2())?;
            if let Some(last) = log.last() {
                info!("stage 2: loss {:.4}, index accuracy {:.4}", last.loss, last.accuracy);
            }
            if let Some(trace) = trace {
                training::write_trace(&trace, &log)?;
            }
            codec.save(&ckpt)?;
        }
        Cmd::TuneOnline { data, ckpt, out, trace } => {
            let ds = load(&data)?;
            let mut codec = Codec::load(&ckpt)?;
            same_grid(&codec, &ds)?;
            let report = tune_online(&mut codec, &ds.records, &cfg.train())?;
            info!("online: {} steps, {} skipped without peaks", report.steps.len(), report.skipped);
            if let Some(trace) = trace {
                training::write_trace(&trace, &report.steps)?;
            }
            codec.save(&out)?;
        }
        Cmd::Evaluate { data, ckpt, snr, csv, json } => {
            let ds = load(&data)?;
            let codec = Codec::load(&ckpt)?;
            same_grid(&codec, &ds)?;
            let s = harness::evaluate_codec(&codec, &ds.records, &cfg, snr.unwrap_or(cfg.eval_snr_db), cfg.seed)?;
            emit(&s, &csv, json.as_deref())?;
        }
        Cmd::Idw { data, snr, csv, json } => {
            let ds = load(&data)?;
            let s = harness::evaluate_idw(&ds.records, &cfg, snr.unwrap_or(cfg.eval_snr_db), cfg.seed)?;
            emit(&s, &csv, json.as_deref())?;
        }
        Cmd::Sweep { data, ckpt, axis, values, repeats, methods, out } => {
            let ds = load(&data)?;
            let codec = Codec::load(&ckpt)?;
            same_grid(&codec, &ds)?;
            let spec = SweepSpec { axis, values, repeats, methods };
            let rows = harness::sweep(&codec, &ds.records, &cfg, &spec)?;
            harness::write_sweep_csv(&out, &rows)?;
            info!("wrote {} sweep rows to {}", rows.len(), out.display());
        }
        Cmd::Report { input, out } => {
            let md = harness::render_report(&harness::read_sweep_csv(&input)?);
            match out {
                Some(path) => std::fs::write(&path, md).map_err(|e| Error::io(&path, e))?,
                None => print!("{md}"),
            }
        }
    }
    Ok(())
}
