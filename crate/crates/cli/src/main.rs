use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use log::info;

use ttnheom::config::{Manifest, Overrides, RunSpec};
use ttnheom::propagate::{CheckpointPolicy, Propagator, Strategy};
use ttnheom::trajectory::{CsvSink, Trajectory};
use ttnheom::ttn::{read_checkpoint, TtnState};
use ttnheom::verify::{run_criteria, Suite, ALL, SMALL};

const TRAJECTORY: &str = "trajectory.csv";
const MANIFEST: &str = "manifest.json";
const CHECKPOINT: &str = "checkpoint.bin";

#[derive(Parser)]
#[command(name = "ttnheom", version, about = "Tree tensor network HEOM propagation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Propagate the model described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Continue a run from its checkpoint; the manifest next to it supplies the config.
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
        /// New end time in fs.
        #[arg(long)]
        t_end: Option<f64>,
    },
    /// Print the bath decomposition of a config.
    Features {
        #[arg(long)]
        config: PathBuf,
        /// Print the feature table as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run the acceptance checks.
    Verify {
        /// `small` skips the flagship run, `all` includes it.
        #[arg(long, default_value = "small")]
        suite: String,
        /// Comma-separated criterion ids, e.g. A1,A4.
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
        /// Flagship result directories for A8 (E = 0 and E = 5000).
        #[arg(long, num_args = 2)]
        flagship: Vec<PathBuf>,
    },
}

#[derive(Args, Default)]
struct OverrideArgs {
    /// direct, ps1, ps2 or mixed.
    #[arg(long)]
    propagator: Option<Strategy>,
    /// Uniform bond rank.
    #[arg(long)]
    rank: Option<usize>,
    /// Uniform hierarchy depth N.
    #[arg(long)]
    depth: Option<usize>,
    /// Projector-splitting step Δ in fs.
    #[arg(long)]
    dt: Option<f64>,
    /// Regularization ε of the single-hole densities.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    svd_tol: Option<f64>,
    /// Rank cap of PS2 and the mixed switch rank.
    #[arg(long)]
    max_rank: Option<usize>,
    /// End time in fs.
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    output: Option<PathBuf>,
}

impl From<OverrideArgs> for Overrides {
    fn from(a: OverrideArgs) -> Self {
        Overrides {
            strategy: a.propagator,
            rank: a.rank,
            depth: a.depth,
            delta: a.dt,
            epsilon: a.epsilon,
            svd_tol: a.svd_tol,
            max_rank: a.max_rank,
            t_end: a.t_end,
            output_dir: a.output,
        }
    }
}

/// Error plus the exit code it maps to.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, err: e.into() }
}

fn other(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, err: e.into() }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run { config, overrides } => cmd_run(&config, overrides.into()),
        Cmd::Resume { checkpoint, t_end } => cmd_resume(&checkpoint, t_end),
        Cmd::Features { config, json } => cmd_features(&config, json),
        Cmd::Verify { suite, only, flagship } => cmd_verify(&suite, &only, &flagship),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load_spec(config: &Path, o: &Overrides) -> CliResult<RunSpec> {
    let mut spec = RunSpec::load(config).map_err(config_err)?;
    spec.apply(o);
    spec.validate().map_err(config_err)?;
    // the manifest copy must not depend on where the config lived
    if let Some(p) = &spec.bath.feature_table {
        let abs = base_dir(config).join(p);
        spec.bath.feature_table = Some(abs.canonicalize().unwrap_or(abs));
    }
    Ok(spec)
}

fn cmd_run(config: &Path, o: Overrides) -> CliResult<u8> {
    let spec = load_spec(config, &o)?;
    let a = spec.assemble(&base_dir(config)).map_err(config_err)?;
    let state = a.initial_state(&spec).map_err(config_err)?;
    std::fs::create_dir_all(&spec.output_dir).with_context(|| format!("creating {}", spec.output_dir.display())).map_err(other)?;
    let sink = CsvSink::create(&spec.output_dir.join(TRAJECTORY), a.model.dim).map_err(other)?;
    let manifest = Manifest::new(&spec, &a);
    propagate(&spec, &a.generator, state, None, sink, manifest, 0.0, spec.schedule.t_end_fs)
}

fn cmd_resume(checkpoint: &Path, t_end: Option<f64>) -> CliResult<u8> {
    let dir = checkpoint.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut manifest = Manifest::read(&dir.join(MANIFEST)).with_context(|| format!("reading {}", dir.join(MANIFEST).display())).map_err(config_err)?;
    let mut spec = manifest.spec.clone();
    if let Some(t) = t_end {
        spec.schedule.t_end_fs = t;
    }
    // outputs stay next to the checkpoint
    spec.output_dir = dir.clone();
    let a = spec.assemble(&dir).map_err(config_err)?;
    let cp = read_checkpoint(checkpoint, a.topology.clone()).map_err(other)?;
    let phase: Strategy = cp.tag.parse().map_err(other)?;
    let t_cp = cp.state.time;
    info!("resuming at t = {t_cp:.3} fs in phase {phase:?}");

    let csv = dir.join(TRAJECTORY);
    let old = Trajectory::read_csv(&csv).map_err(other)?;
    let kept: Vec<_> = old.samples.into_iter().filter(|s| s.t < t_cp - 1e-9).collect();
    let wall0 = kept.last().map(|s| s.wall_ms).unwrap_or(0.0);
    let mut sink = CsvSink::create(&csv, a.model.dim).map_err(other)?;
    for s in &kept {
        sink.push(s).map_err(other)?;
    }
    manifest.spec = spec.clone();
    propagate(&spec, &a.generator, cp.state, Some(phase), sink, manifest, wall0, spec.schedule.t_end_fs)
}

#[allow(clippy::too_many_arguments)]
fn propagate(
    spec: &RunSpec,
    g: &ttnheom::SopGenerator,
    state: TtnState,
    phase: Option<Strategy>,
    mut sink: CsvSink,
    mut manifest: Manifest,
    wall0: f64,
    t_end: f64,
) -> CliResult<u8> {
    let dir = &spec.output_dir;
    let mpath = dir.join(MANIFEST);
    manifest.status = "running".into();
    manifest.write(&mpath).map_err(other)?;

    let dt = spec.schedule.output_dt_fs;
    let mut p = Propagator::new(g, state, spec.propagator.clone()).map_err(config_err)?;
    if let Some(ph) = phase {
        p.resume_phase(ph).map_err(config_err)?;
    }
    p.checkpoint = Some(CheckpointPolicy { path: dir.join(CHECKPOINT), every_secs: spec.schedule.checkpoint_every_s.unwrap_or(600.0) });

    let start = Instant::now();
    let mut res = Ok(());
    // an off-grid checkpoint time is first brought back onto the output grid
    let t0 = p.state.time;
    let k = (t0 / dt - 1e-9).ceil();
    let on_grid = (k * dt - t0).abs() < 1e-9 * dt.max(1.0);
    if !on_grid && phase.is_some() {
        res = p.advance((k * dt).min(t_end));
    }
    if res.is_ok() {
        res = p
            .run(t_end, dt, &mut |s, _| {
                let mut s = s.clone();
                s.wall_ms += wall0;
                info!("t = {:.2} fs, purity {:.6}, max rank {}, {:.1} s", s.t, s.purity(), s.max_rank(), start.elapsed().as_secs_f64());
                sink.push(&s)
            })
            .map(|_| ());
    }
    drop(sink);
    manifest.switched_at_fs = p.switched_at.or(manifest.switched_at_fs);
    manifest.truncation_weight = manifest.truncation_weight.max(p.truncation);
    for f in [TRAJECTORY, CHECKPOINT] {
        let path = dir.join(f);
        if path.is_file() {
            manifest.add_output(&path).map_err(other)?;
        }
    }
    match res {
        Ok(()) => {
            manifest.status = "complete".into();
            manifest.write(&mpath).map_err(other)?;
            info!("done in {:.1} s, outputs in {}", start.elapsed().as_secs_f64(), dir.display());
            Ok(0)
        }
        Err(e) => {
            manifest.status = format!("aborted at t = {:.4} fs: {e}", p.state.time);
            manifest.write(&mpath).map_err(other)?;
            Err(Failure { code: 3, err: anyhow!(e).context("propagation aborted; partial trajectory and checkpoint kept") })
        }
    }
}

fn cmd_features(config: &Path, json: bool) -> CliResult<u8> {
    let spec = load_spec(config, &Overrides::default())?;
    let a = spec.assemble(&base_dir(config)).map_err(config_err)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&a.features.to_table()).map_err(other)?);
        return Ok(0);
    }
    println!("T = {} K, {} Padé terms, K = {}", a.features.temperature, a.features.n_pade, a.features.len());
    println!("{:>3} {:>26} {:>26} {:>26} {:>10} {:>12}", "k", "c_k [cm^-2]", "c̄_k [cm^-2]", "γ_k [cm^-1]", "coupling", "|z_k|");
    for (k, (f, z)) in a.features.features.iter().zip(&a.space.metric_z).enumerate() {
        println!(
            "{k:>3} {:>12.4e} {:>+12.4e}i {:>12.4e} {:>+12.4e}i {:>12.4e} {:>+12.4e}i {:>10} {:>12.4e}",
            f.c.re, f.c.im, f.c_bar.re, f.c_bar.im, f.gamma_exp.re, f.gamma_exp.im, f.coupling_id, z.norm()
        );
    }
    Ok(0)
}

fn cmd_verify(suite: &str, only: &[String], flagship: &[PathBuf]) -> CliResult<u8> {
    let ids: Vec<&str> = if !only.is_empty() {
        only.iter().map(String::as_str).collect()
    } else {
        match suite {
            "small" => SMALL.to_vec(),
            "all" => ALL.to_vec(),
            s => return Err(config_err(anyhow!("unknown suite '{s}' (small or all)"))),
        }
    };
    let mut s = Suite::new();
    if let [a, b] = flagship {
        s.flagship_dirs = Some((a.clone(), b.clone()));
    }
    let out = run_criteria(&ids, &mut s, &mut |o| {
        println!("{}", o.line());
        for n in &o.notes {
            println!("    {n}");
        }
    });
    Ok(if out.iter().all(|o| o.pass == Some(true)) { 0 } else { 1 })
}
