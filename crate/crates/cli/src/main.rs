use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use imooe::autograd::Tensor;
use imooe::datasets::{generate, read_dataset, GenerateConfig, Split, SystemId};
use imooe::evaluation::{id_ood_fit, report, FitPoint, MetricsReport};
use imooe::model::Checkpoint;
use imooe::recipe::{run_recipe, ExperimentRecipe, Scale};
use imooe::training::{train, TrainConfig};

mod plot;

#[derive(Parser)]
#[command(name = "imooe", version, about = "Multi-environment PDE forecasting with masked operator experts")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Id,
    Ood,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalSplit {
    Train,
    Id,
    Ood,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a dataset split.
    Generate {
        #[arg(long)]
        system: String,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
        #[arg(long, default_value_t = 16)]
        envs: usize,
        /// Trajectories per environment.
        #[arg(long, default_value_t = 8)]
        traj: usize,
        #[arg(long, default_value_t = 64)]
        res: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory; `all` writes train/, id/ and ood/ beneath it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a frozen checkpoint on one split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        split: EvalSplit,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tables, plots and the ID-OOD fit from evaluation reports.
    Report {
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        plots: PathBuf,
        /// With --data, renders a showcase of one forecast.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        env: usize,
        #[arg(long, default_value_t = 0)]
        traj: usize,
    },
    /// Declarative experiments.
    Recipe {
        #[command(subcommand)]
        cmd: RecipeCmd,
    },
}

#[derive(Subcommand)]
enum RecipeCmd {
    Run {
        recipe: PathBuf,
        #[arg(long)]
        workdir: PathBuf,
        #[arg(long, default_value = "desk")]
        scale: String,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if std::env::var("IMOOE_DETERMINISTIC").is_ok_and(|v| v == "1") {
        std::env::set_var("RAYON_NUM_THREADS", "1");
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Generate { system, split, envs, traj, res, seed, out } => {
            let system: SystemId = system.parse()?;
            let splits: Vec<Split> = match split {
                SplitArg::Train => vec![Split::TrainId],
                SplitArg::Id => vec![Split::TestId],
                SplitArg::Ood => vec![Split::TestOod],
                SplitArg::All => Split::ALL.to_vec(),
            };
            let nested = matches!(split, SplitArg::All);
            for s in splits {
                let dir = if nested { out.join(s.dir_name()) } else { out.clone() };
                let cfg = GenerateConfig { system, split: s, n_envs: envs, n_traj: traj, resolution: res, seed };
                let m = generate(&cfg, &dir).with_context(|| format!("generating {} split into {}", s.dir_name(), dir.display()))?;
                println!("{}: {} environments x {} trajectories -> {}", s.dir_name(), m.environments.len(), traj, dir.display());
            }
        }
        Cmd::Train { config, data, out, resume } => {
            let cfg = TrainConfig::load(&config).with_context(|| format!("reading {}", config.display()))?;
            let data_dir = data.or_else(|| cfg.train_data.clone()).context("no training data: pass --data or set train_data")?;
            let ds = read_dataset(&data_dir).with_context(|| format!("reading {}", data_dir.display()))?;
            let ck = resume.as_ref().map(Checkpoint::load).transpose().context("loading resume checkpoint")?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            fs::write(out.join("config.toml"), cfg.to_toml())?;
            let outcome = train(&cfg, &ds, Some(&out), ck.as_ref())?;
            if let Some(last) = outcome.history.last() {
                println!("epoch {} step {} total {:.4e} pred {:.4e}", last.epoch, last.step, last.total, last.pred);
            }
            if let Some(val_dir) = &cfg.val_data {
                let val = read_dataset(val_dir)?;
                let r = report(&outcome.checkpoint, &val)?;
                r.save(out.join("validation.json"))?;
            }
            if let Some(p) = outcome.checkpoint_path {
                println!("checkpoint: {}", p.display());
            }
        }
        Cmd::Eval { ckpt, data, split, out } => {
            let ck = Checkpoint::load(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
            let ds = read_dataset(&data).with_context(|| format!("reading {}", data.display()))?;
            let want = match split {
                EvalSplit::Train => Split::TrainId,
                EvalSplit::Id => Split::TestId,
                EvalSplit::Ood => Split::TestOod,
            };
            if ds.manifest.split != want {
                bail!("{} holds the {} split, not {}", data.display(), ds.manifest.split.dir_name(), want.dir_name());
            }
            let r = report(&ck, &ds)?;
            r.save(&out)?;
            for (split, metrics) in &r.aggregates {
                if let Some(a) = metrics.get("nmse") {
                    println!("{split}: nMSE {:.4e} ± {:.2e} over {} environments", a.mean, a.std, r.records.len());
                }
            }
        }
        Cmd::Report { inputs, plots, ckpt, data, env, traj } => {
            fs::create_dir_all(&plots)?;
            write_report_outputs(&inputs, &plots)?;
            match (ckpt, data) {
                (Some(c), Some(d)) => showcase(&c, &d, env, traj, &plots)?,
                (None, None) => {}
                _ => bail!("--ckpt and --data must be given together"),
            }
        }
        Cmd::Recipe { cmd: RecipeCmd::Run { recipe, workdir, scale } } => {
            let r = ExperimentRecipe::load(&recipe).with_context(|| format!("reading {}", recipe.display()))?;
            let scale: Scale = scale.parse()?;
            let s = run_recipe(&r, scale, &workdir)?;
            print!("{}", s.table_csv());
            if let Some(v) = &s.verdict {
                println!(
                    "verdict: {} ≤ {} in {}/{} seeds (need {}) -> {}",
                    v.rule.arm_a,
                    v.rule.arm_b,
                    v.wins,
                    v.per_seed.len(),
                    v.rule.min_wins,
                    if v.passed { "PASS" } else { "FAIL" }
                );
            }
        }
    }
    Ok(())
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or("report".into(), |s| s.to_string_lossy().into_owned())
}

fn write_report_outputs(inputs: &[PathBuf], plots: &Path) -> Result<()> {
    let mut by_dir: BTreeMap<PathBuf, MetricsReport> = BTreeMap::new();
    for p in inputs {
        let r = MetricsReport::load(p).with_context(|| format!("reading {}", p.display()))?;
        let tag = p.parent().map(Path::to_path_buf).unwrap_or_default();
        let name = format!("{}_{}", tag.file_name().map_or("run".into(), |s| s.to_string_lossy().into_owned()), stem(p));
        fs::write(plots.join(format!("{name}.csv")), r.to_csv())?;
        fs::write(plots.join(format!("{name}_summary.csv")), r.summary_csv())?;
        let merged = match by_dir.remove(&tag) {
            Some(prev) => prev.merge(r),
            None => r,
        };
        by_dir.insert(tag, merged);
    }
    let points: Vec<FitPoint> = by_dir
        .iter()
        .filter_map(|(tag, r)| {
            let id = r.aggregate("id", "nmse")?;
            let ood = r.aggregate("ood", "nmse")?;
            Some(FitPoint { run_tag: tag.display().to_string(), id_error: id.mean, ood_error: ood.mean })
        })
        .collect();
    if points.len() >= 2 {
        match id_ood_fit(&points) {
            Ok(fit) => {
                fs::write(plots.join("id_ood_fit.json"), serde_json::to_string_pretty(&fit)?)?;
                plot::scatter_with_line(&fit, &plots.join("id_ood.png"))?;
                println!("ID-OOD fit: slope {:.4} intercept {:.4e} r2 {:.4}", fit.slope, fit.intercept, fit.r2);
            }
            Err(e) => log::warn!("skipping ID-OOD fit: {e}"),
        }
    }
    Ok(())
}

/// Truth, forecast and error of channel 0 at the last forecast frame.
fn showcase(ckpt: &Path, data: &Path, env: usize, traj: usize, plots: &Path) -> Result<()> {
    let ck = Checkpoint::load(ckpt)?;
    let ds = read_dataset(data)?;
    if env >= ds.n_envs() || traj >= ds.n_traj(env) {
        bail!("no trajectory {traj} in environment {env}");
    }
    let model = ck.model::<f64>()?;
    let l = &ds.manifest.layout;
    let w = model.config.expert.window;
    let (c, h, wd) = (l.channels, l.height, l.width);
    let norm = &ck.meta.norm;
    let u = ds.trajectory(env, traj);
    let mut hist = Vec::with_capacity(w * c * h * wd);
    for t in 0..w {
        for ch in 0..c {
            hist.extend(u.slice(ndarray::s![t, ch, .., ..]).iter().map(|v| (*v as f64 - norm.mean[ch]) / norm.std[ch]));
        }
    }
    let cond = ck.meta.cond.encode(&ds.manifest.environments[env]);
    let steps = l.n_t - w;
    let frames = model.predict(&Tensor::new(vec![1, w * c, h, wd], hist), &Tensor::new(vec![1, cond.len()], cond), steps)?;
    let last = frames.last().context("empty forecast")?;
    let pred: Vec<f64> = last.data()[..h * wd].iter().map(|v| v * norm.std[0] + norm.mean[0]).collect();
    let truth: Vec<f64> = u.slice(ndarray::s![l.n_t - 1, 0, .., ..]).iter().map(|v| *v as f64).collect();
    let err: Vec<f64> = pred.iter().zip(&truth).map(|(a, b)| a - b).collect();
    let out = plots.join(format!("showcase_env{env}_traj{traj}.png"));
    plot::field_panels(&[&truth, &pred, &err], h, wd, &out)?;
    println!("showcase: {}", out.display());
    Ok(())
}
