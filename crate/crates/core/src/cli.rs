//! Command-line surface. Every run configuration key is also a flag; the
//! command line overrides `--config`, which overrides the defaults.
//!
//! Exit codes: 0 success, 1 check or metric failure, 2 usage or config
//! error, 3 I/O or format error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;

use crate::config::{parse_pairs, RunConfig};
use crate::error::{Error, Result};
use crate::nn::Checkpoint;
use crate::pipeline::data::{bouncing_dots, write_pgm_strip, Dataset, DotParams};
use crate::pipeline::experiment::{
    csv_row, load_or_generate, sample_clips, split_clips, sweep, sweep_csv, train_model, CSV_HEADER,
};
use crate::pipeline::metrics::evaluate;
use crate::verify::{report, run_all, VerifyOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

const PGM_SCALE: usize = 8;

macro_rules! key_flags {
    ($($key:ident),* $(,)?) => {
        /// One optional flag per configuration key.
        #[derive(Args, Debug, Clone, Default)]
        pub struct KeyFlags {
            $(
                #[arg(long = stringify!($key), value_name = "VALUE")]
                pub $key: Option<String>,
            )*
        }

        impl KeyFlags {
            pub const NAMES: &'static [&'static str] = &[$(stringify!($key)),*];

            pub fn pairs(&self) -> Vec<(&'static str, String)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$key {
                        out.push((stringify!($key), v.clone()));
                    }
                )*
                out
            }
        }
    };
}

key_flags!(
    task,
    coupling,
    n_frames,
    feature_dim,
    lowres_factor,
    count,
    val_count,
    eps,
    alpha,
    schedule,
    quadrature_nodes,
    horizon,
    steps,
    batch,
    lr,
    betas,
    weight_decay,
    ema,
    hidden,
    embed_width,
    n_sample_steps,
    seed,
    paths,
    dt,
    eps_grid,
    alpha_grid,
    log_every,
    data,
    pred,
    checkpoint,
    out,
    pgm_dir,
);

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// `key = value` file, one pair per line.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub keys: KeyFlags,
}

#[derive(Parser, Debug)]
#[command(name = "tcbm", version, about = "Time-correlated bridge matching for short sequences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a bouncing-dots dataset to `out`.
    GenData(Common),
    /// Check the closed forms against the simulation and dense oracles.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Scale the bridge cross-covariance (negative control).
        #[arg(long = "corrupt_cross", hide = true)]
        corrupt_cross: Option<f64>,
    },
    /// Train on the training split and write a checkpoint to `out`.
    Train(Common),
    /// Sample every clip of `data` with the EMA weights of `checkpoint`.
    Sample(Common),
    /// Score `pred` against `data` on the free frames.
    Metrics(Common),
    /// Train and evaluate over `eps_grid x alpha_grid`.
    Sweep(Common),
}

fn resolve(c: &Common) -> Result<RunConfig> {
    let file = match &c.config {
        Some(p) => parse_pairs(&std::fs::read_to_string(p)?)?,
        None => Vec::new(),
    };
    RunConfig::resolve(file, c.keys.pairs())
}

fn require<'a>(p: &'a Option<PathBuf>, key: &str, cmd: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("{cmd} needs `{key}`")))
}

/// `<path>.config.txt` next to an output.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".config.txt");
    PathBuf::from(s)
}

fn write_sidecar(out: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::write(sidecar_path(out), cfg.to_text())?;
    Ok(())
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::Format { .. } => EXIT_IO,
        Error::Config(_)
        | Error::InvalidDimension(_)
        | Error::Range(_)
        | Error::ArgumentOrder { .. }
        | Error::Contract(_)
        | Error::Window { .. } => EXIT_USAGE,
        _ => EXIT_FAILED,
    }
}

fn gen_data(cfg: &RunConfig) -> Result<i32> {
    let out = require(&cfg.out, "out", "gen-data")?;
    let task = cfg.task_config()?;
    let (ds, _) = bouncing_dots(cfg.count, task.clip_len(), task.feature_dim, DotParams::default(), cfg.seed)?;
    ds.save(out)?;
    write_sidecar(out, cfg)?;
    eprintln!("wrote {} clips of {} x {} to {}", ds.count(), ds.frames(), ds.d(), out.display());
    Ok(EXIT_OK)
}

fn verify(cfg: &RunConfig, corrupt_cross: Option<f64>) -> Result<i32> {
    let opts = VerifyOptions { cross_scale: corrupt_cross.unwrap_or(1.0) };
    let checks = run_all(cfg, opts)?;
    let text = report(&checks);
    print!("{text}");
    if let Some(out) = &cfg.out {
        std::fs::write(out, &text)?;
        write_sidecar(out, cfg)?;
    }
    Ok(if checks.iter().all(|c| c.passed) { EXIT_OK } else { EXIT_FAILED })
}

fn train(cfg: &RunConfig) -> Result<i32> {
    let out = require(&cfg.out, "out", "train")?;
    let ds = load_or_generate(cfg)?;
    let (clips, _) = split_clips(cfg, &ds)?;
    let (ck, _) = train_model(cfg, &clips, |step, loss| eprintln!("step {step} loss {loss:.6e}"))?;
    ck.save(out)?;
    write_sidecar(out, cfg)?;
    eprintln!("final loss {:.6e}, checkpoint {}", ck.last_loss, out.display());
    Ok(EXIT_OK)
}

fn sample(cfg: &RunConfig) -> Result<i32> {
    let ck_path = require(&cfg.checkpoint, "checkpoint", "sample")?;
    let out = require(&cfg.out, "out", "sample")?;
    let ck = Checkpoint::load(ck_path)?;
    let ds = load_or_generate(cfg)?;
    let model = ck.ema_model()?;
    let clips = ds.clips();
    let sampled = sample_clips(cfg, &model, &clips)?;
    Dataset::from_clips(&sampled)?.save(out)?;
    write_sidecar(out, cfg)?;
    if let Some(dir) = &cfg.pgm_dir {
        std::fs::create_dir_all(dir)?;
        for (i, c) in sampled.iter().enumerate() {
            write_pgm_strip(&dir.join(format!("clip_{i:04}.pgm")), c.view(), PGM_SCALE)?;
        }
    }
    eprintln!("sampled {} clips to {}", sampled.len(), out.display());
    Ok(EXIT_OK)
}

fn metrics(cfg: &RunConfig) -> Result<i32> {
    let pred_path = require(&cfg.pred, "pred", "metrics")?;
    let data_path = require(&cfg.data, "data", "metrics")?;
    let task = cfg.task_config()?;
    let pred = Dataset::load(pred_path)?.clips();
    let truth: Vec<Array2<f64>> = Dataset::load(data_path)?.clips();
    let loss = match &cfg.checkpoint {
        Some(p) => Checkpoint::load(p)?.last_loss,
        None => f32::NAN,
    };
    let (p, s) = evaluate(&task, &pred, &truth)?;
    let mut text = String::new();
    let _ = writeln!(text, "{CSV_HEADER}");
    let _ = writeln!(text, "{}", csv_row(cfg.seed, &cfg.task.to_string(), cfg.eps, cfg.alpha, &Ok((p, s, loss))));
    print!("{text}");
    if let Some(out) = &cfg.out {
        std::fs::write(out, &text)?;
        write_sidecar(out, cfg)?;
    }
    Ok(EXIT_OK)
}

fn run_sweep(cfg: &RunConfig) -> Result<i32> {
    let rows = sweep(cfg, |r| match &r.outcome {
        Ok((p, s, l)) => eprintln!("eps {} alpha {}: psnr {p:.3} ssim {s:.4} loss {l:.4e}", r.eps, r.alpha),
        Err(e) => eprintln!("eps {} alpha {}: failed: {e}", r.eps, r.alpha),
    })?;
    let text = sweep_csv(cfg, &rows);
    print!("{text}");
    if let Some(out) = &cfg.out {
        std::fs::write(out, &text)?;
        write_sidecar(out, cfg)?;
    }
    Ok(if rows.iter().all(|r| r.outcome.is_ok()) { EXIT_OK } else { EXIT_FAILED })
}

pub fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::GenData(c) => gen_data(&resolve(&c)?),
        Command::Verify { common, corrupt_cross } => verify(&resolve(&common)?, corrupt_cross),
        Command::Train(c) => train(&resolve(&c)?),
        Command::Sample(c) => sample(&resolve(&c)?),
        Command::Metrics(c) => metrics(&resolve(&c)?),
        Command::Sweep(c) => run_sweep(&resolve(&c)?),
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::KEYS;
    use clap::CommandFactory;

    #[test]
    fn flags_cover_every_key() {
        assert_eq!(KeyFlags::NAMES, KEYS);
        Cli::command().debug_assert();
    }

    #[test]
    fn command_line_overrides_file() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("run.cfg");
        std::fs::write(&f, "eps = 0.5\nseed = 3 # comment\n").unwrap();
        let cli = Cli::try_parse_from(["tcbm", "train", "--config", f.to_str().unwrap(), "--eps", "0.2"]).unwrap();
        let Command::Train(c) = cli.command else { panic!() };
        let cfg = resolve(&c).unwrap();
        assert_eq!((cfg.eps, cfg.seed), (0.2, 3));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(main_with(["tcbm", "bogus"]), EXIT_USAGE);
        assert_eq!(main_with(["tcbm", "gen-data", "--count", "0", "--out", "x"]), EXIT_USAGE);
        assert_eq!(main_with(["tcbm", "gen-data"]), EXIT_USAGE);
        assert_eq!(main_with(["tcbm", "metrics", "--pred", "/nonexistent/a", "--data", "/nonexistent/b"]), EXIT_IO);
    }

    #[test]
    fn sidecar_name() {
        assert_eq!(sidecar_path(Path::new("a/b.tcds")), PathBuf::from("a/b.tcds.config.txt"));
    }
}
