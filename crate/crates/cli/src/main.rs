use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use dml_twin::dataset::{generate_dataset, Dataset, Split};
use dml_twin::equalizer::{
    cross_evaluate, train_equalizer, Channel, EqRunConfig, EvalStream, FirEqualizer, Link,
};
use dml_twin::evaluation::{
    eye_diagram, gaussian_pulse_stream, ode_generation_seconds, run_rate_sweep, timing_report,
    write_sweep_csv, write_timing_csv, EyeSpec, SweepSpec,
};
use dml_twin::laser::LaserConfig;
use dml_twin::stimulus::{Scale, StimulusSpec};
use dml_twin::surrogates::{
    init_model, load_checkpoint, save_checkpoint, CheckpointMeta, ModelHyper, ModelKind,
};
use dml_twin::training::{evaluate, train_surrogate, TrainConfig, TrainHistory};
use dml_twin::Result;

#[derive(Parser)]
#[command(name = "dmltwin", version, about = "Digital twin of a directly modulated laser link")]
struct Cli {
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = ScaleArg::Desk)]
    scale: ScaleArg,
    /// Output file (or file prefix for multi-file outputs).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Paper,
    Desk,
}

impl From<ScaleArg> for Scale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Paper => Scale::Paper,
            ScaleArg::Desk => Scale::Desk,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
}

#[derive(Clone, Copy, ValueEnum)]
enum StreamArg {
    Training,
    HeldOut,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a training/validation data set at one symbol rate.
    GenerateData {
        /// Symbol rate as a fraction of f_R.
        #[arg(long)]
        rate: f64,
        /// Laser configuration (JSON); defaults to the reference laser.
        #[arg(long)]
        laser: Option<PathBuf>,
    },
    /// Train one surrogate and store its best checkpoint.
    Train {
        #[arg(long)]
        model: ModelKind,
        #[arg(long)]
        data: PathBuf,
        /// Training configuration (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// NRMSE of a checkpoint on a data split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Val)]
        split: SplitArg,
    },
    /// Train and score every (rate, model) cell.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        rates: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<ModelKind>>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long)]
        load_only: bool,
    },
    /// Train FIR taps through a surrogate checkpoint or the ODE channel.
    TrainEq {
        /// Checkpoint path or `ode`.
        #[arg(long)]
        channel: String,
        /// Data set whose framing (rate, filter, normalization) is used.
        #[arg(long)]
        data: PathBuf,
        /// Equalizer run configuration (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Test stored taps on another channel.
    CrossEval {
        #[arg(long)]
        eq: PathBuf,
        #[arg(long)]
        channel: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = StreamArg::HeldOut)]
        stream: StreamArg,
    },
    /// Eye diagram of a Gaussian-pulse 4PAM stream through a channel.
    Eye {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "ode")]
        channel: String,
        #[arg(long, default_value_t = 1024)]
        symbols: usize,
    },
    /// Per-epoch timing table against the ODE solver.
    Report {
        #[arg(long)]
        data: PathBuf,
        /// Training histories (JSON) written by `train`.
        #[arg(long, required = true, num_args = 1..)]
        history: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn out_or(cli_out: &Option<PathBuf>, default: &str) -> PathBuf {
    cli_out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn read_json<T: serde::de::DeserializeOwned>(p: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&std::fs::read(p)?)?)
}

fn channel(spec: &str) -> Result<Channel> {
    if spec == "ode" {
        return Ok(Channel::Ode);
    }
    Ok(Channel::Surrogate(Box::new(load_checkpoint(Path::new(spec))?.0)))
}

fn eq_config(path: &Option<PathBuf>, data: &Dataset, seed: u64) -> Result<EqRunConfig> {
    match path {
        Some(p) => read_json(p),
        None => Ok(EqRunConfig::new(data.spec.rate_fraction, seed)),
    }
}

fn run(cli: Cli) -> Result<()> {
    let scale: Scale = cli.scale.into();
    match &cli.cmd {
        Cmd::GenerateData { rate, laser } => {
            let laser = match laser {
                Some(p) => read_json(p)?,
                None => LaserConfig::default(),
            };
            let data = generate_dataset(&StimulusSpec::for_scale(scale, *rate, cli.seed), &laser)?;
            let out = out_or(&cli.out, "data.dtw");
            data.save(&out)?;
            println!("{} {}", out.display(), data.content_hash());
        }
        Cmd::Train {
            model,
            data,
            config,
            epochs,
        } => {
            let data = Dataset::load(data)?;
            let mut cfg = match config {
                Some(p) => read_json(p)?,
                None => TrainConfig::for_scale(scale, cli.seed),
            };
            if let Some(e) = epochs {
                cfg.epochs = *e;
            }
            let init = init_model(&ModelHyper::for_scale(*model, scale), cfg.seed)?;
            let trained = train_surrogate(&init, &data, &cfg)?;
            let h = &trained.history;
            let out = out_or(&cli.out, &format!("{model}.ckpt"));
            let meta = CheckpointMeta {
                train_config_hash: h.config_hash.clone(),
                dataset_hash: h.dataset_hash.clone(),
                epoch: h.best_epoch.unwrap_or(0),
                val_nrmse: h.best().map_or(f64::NAN, |b| b.val_nrmse),
            };
            save_checkpoint(&out, &trained.model, &meta)?;
            h.write_csv(&with_suffix(&out, ".history.csv"))?;
            std::fs::write(with_suffix(&out, ".history.json"), serde_json::to_vec(h)?)?;
            println!("{model} best epoch {} val_nrmse {}", meta.epoch, meta.val_nrmse);
        }
        Cmd::Eval { ckpt, data, split } => {
            let (model, _) = load_checkpoint(ckpt)?;
            let data = Dataset::load(data)?;
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Val => Split::Validation,
            };
            let v = evaluate(&model, &data, split)?;
            println!("{v}");
            if let Some(out) = &cli.out {
                let doc = json!({"model": model.hyper.kind, "nrmse": v, "dataset_hash": data.content_hash()});
                std::fs::write(out, serde_json::to_vec_pretty(&doc)?)?;
            }
        }
        Cmd::Sweep {
            rates,
            models,
            epochs,
            checkpoints,
            load_only,
        } => {
            let mut spec = SweepSpec::new(scale);
            spec.seeds = vec![cli.seed];
            if let Some(r) = rates {
                spec.rates = r.clone();
            }
            if let Some(m) = models {
                spec.models = m.clone();
            }
            spec.epochs = *epochs;
            spec.checkpoints = checkpoints.clone();
            spec.load_only = *load_only;
            let rows = run_rate_sweep(&spec, &LaserConfig::default())?;
            let out = out_or(&cli.out, "sweep.csv");
            write_sweep_csv(&out, &rows)?;
            println!("{} rows -> {}", rows.len(), out.display());
        }
        Cmd::TrainEq {
            channel: ch,
            data,
            config,
        } => {
            let data = Dataset::load(data)?;
            let cfg = eq_config(config, &data, cli.seed)?;
            let (eq, h) = train_equalizer(&channel(ch)?, &Link::from_dataset(&data), &cfg)?;
            let out = out_or(&cli.out, "eq.json");
            eq.save(&out)?;
            println!(
                "delay {} baseline {} final {}",
                eq.delay, h.baseline, h.final_loss
            );
        }
        Cmd::CrossEval {
            eq,
            channel: ch,
            data,
            config,
            stream,
        } => {
            let data = Dataset::load(data)?;
            let cfg = eq_config(config, &data, cli.seed)?;
            let eq = FirEqualizer::load(eq)?;
            let target = channel(ch)?;
            let which = match stream {
                StreamArg::Training => EvalStream::Training,
                StreamArg::HeldOut => EvalStream::HeldOut,
            };
            let v = cross_evaluate(&eq, &target, &Link::from_dataset(&data), &cfg, which)?;
            println!("channel,rate_fraction,tested_on,nrmse");
            println!("{},{:.2},{},{v}", eq.channel, cfg.rate_fraction, target.id());
        }
        Cmd::Eye {
            data,
            channel: ch,
            symbols,
        } => {
            let data = Dataset::load(data)?;
            let link = Link::from_dataset(&data);
            let x = gaussian_pulse_stream(&link, *symbols, cli.seed)?;
            let ch = channel(ch)?;
            let y = ch.respond(&link, &x)?;
            let eye = eye_diagram(&y, data.spec.sps, &EyeSpec::default())?;
            let out = out_or(&cli.out, "eye");
            eye.write_png(&with_suffix(&out, ".png"))?;
            let meta = json!({
                "channel": ch.id(),
                "rate_fraction": data.spec.rate_fraction,
                "seed": cli.seed,
                "dataset_hash": data.content_hash(),
            });
            eye.write_json(&with_suffix(&out, ".json"), meta)?;
            if let Some(r) = eye.rails() {
                println!("open eyes {} rail ratio {:.3}", r.open_eyes, r.fisher);
            }
        }
        Cmd::Report { data, history } => {
            let data = Dataset::load(data)?;
            let hs = history
                .iter()
                .map(|p| read_json::<TrainHistory>(p))
                .collect::<Result<Vec<_>>>()?;
            let ode = ode_generation_seconds(&data, Split::Validation)?;
            let rows = timing_report(&hs, ode)?;
            let out = out_or(&cli.out, "timing.csv");
            write_timing_csv(&out, &rows)?;
            for r in &rows {
                println!("{:>9} {:.4e} s", r.name, r.infer_s_per_epoch);
            }
        }
    }
    Ok(())
}
