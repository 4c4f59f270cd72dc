mod config;
mod run_dir;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use emcomm_annotate::{AppState, HumanProvider};
use emcomm_core::envs::EnvKind;
use emcomm_core::keywords::{pruning_curve, Cutoff};
use emcomm_core::training::{
    Ablation, AnnotationProvider, MetricsRow, OracleProvider, RunManifest, TrainConfig, Trainer,
};
use log::{error, info};
use serde::Serialize;

use config::{usage, UsageError};
use run_dir::RunDir;

#[derive(Parser)]
#[command(name = "emcomm", version, about = "Train speaker/listener agents that talk in natural language")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML config; defaults apply to every missing key.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override a config key, e.g. `--set rounds=500 --set speaker.l_max=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<TrainConfig> {
        config::load(self.config.as_deref(), &self.overrides, self.seed)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Pretrain the speaker's language model on the synthetic corpus.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain, then train with the oracle annotator or a live one.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, conflicts_with = "serve", required_unless_present = "serve")]
        oracle: bool,
        /// Serve the annotation API on this address and wait for a human.
        #[arg(long, value_name = "ADDR")]
        serve: Option<String>,
    },
    /// One oracle run per (mode, seed).
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "full,reward_only,supervised_only,mi_only")]
        modes: Vec<String>,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// One oracle run per entropy threshold (nats per message).
    Thresholds {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Success and message length after pruning low-MI words.
    PruneCurve {
        #[arg(long)]
        run: PathBuf,
        /// Ascending nats values and/or `median`.
        #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.05,0.1,0.5,median")]
        cutoffs: Vec<String>,
        #[arg(long)]
        checkpoint: Option<usize>,
        /// Defaults to `pruning_curve.csv` inside the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy evaluation of a saved checkpoint; prints JSON.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        checkpoint: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            eprintln!("error: {e:#}");
            if is_config_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<UsageError>().is_some()
            || matches!(c.downcast_ref::<emcomm_core::Error>(), Some(emcomm_core::Error::Config(_)))
    })
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Pretrain { cfg, out } => pretrain(cfg.load()?, &out),
        Cmd::Train { cfg, out, serve, .. } => {
            let cfg = cfg.load()?;
            match serve {
                Some(addr) => train_served(cfg, &out, &addr).map(|_| ()),
                None => train_oracle(cfg, &out).map(|_| ()),
            }
        }
        Cmd::Ablate { cfg, modes, seeds, out } => ablate(cfg.load()?, &modes, seeds, &out),
        Cmd::Thresholds { cfg, values, seeds, out } => thresholds(cfg.load()?, &values, seeds, &out),
        Cmd::PruneCurve {
            run,
            cutoffs,
            checkpoint,
            out,
        } => prune_curve(&run, &cutoffs, checkpoint, out),
        Cmd::Eval { run, checkpoint } => eval(&run, checkpoint),
    }
}

fn pretrain(cfg: TrainConfig, out: &Path) -> Result<()> {
    let mut trainer = Trainer::new(cfg.clone())?;
    let dir = RunDir::create(out)?;
    dir.write_manifest(&RunManifest::new(&cfg, "none"))?;
    let means = trainer.pretrain()?;
    let mut csv = String::from("epoch,mean_token_ce\n");
    for (i, m) in means.iter().enumerate() {
        csv.push_str(&format!("{},{m}\n", i + 1));
    }
    std::fs::write(dir.file("pretrain.csv"), csv)?;
    dir.save_checkpoint("pretrained", &trainer.checkpoint())?;
    info!("pretraining written to {}", dir.path.display());
    Ok(())
}

/// Pretrains and trains into a fresh run directory, logging metrics,
/// annotations and checkpoints at every evaluation.
fn train_into(
    mut trainer: Trainer,
    dir: &RunDir,
    provider: &mut dyn AnnotationProvider,
    provider_name: &str,
    server: Option<&AppState>,
) -> Result<Vec<MetricsRow>> {
    let manifest = RunManifest::new(&trainer.cfg, provider_name);
    dir.write_manifest(&manifest)?;
    dir.start_metrics()?;
    trainer.pretrain()?;
    if let Some(st) = server {
        st.set_manifest(manifest);
        st.set_snapshot(trainer.speaker.clone(), trainer.listener.clone());
    }
    let result = trainer.run(provider, |t, row| -> Result<()> {
        dir.append_metrics(row)?;
        dir.append_annotations(&t.drain_records())?;
        dir.save_checkpoint(&RunDir::round_name(row.round), &t.checkpoint())?;
        if let Some(st) = server {
            st.set_metrics(row.clone());
            st.set_snapshot(t.speaker.clone(), t.listener.clone());
        }
        Ok(())
    });
    if result.is_err() {
        dir.append_annotations(&trainer.drain_records())?;
        dir.save_checkpoint("last_good", &trainer.checkpoint())?;
    }
    result
}

fn train_oracle(cfg: TrainConfig, out: &Path) -> Result<Vec<MetricsRow>> {
    let trainer = Trainer::new(cfg)?;
    let dir = RunDir::create(out)?;
    train_into(trainer, &dir, &mut OracleProvider, "oracle", None)
}

fn train_served(cfg: TrainConfig, out: &Path, addr: &str) -> Result<Vec<MetricsRow>> {
    let listener = std::net::TcpListener::bind(addr).map_err(|e| usage(format!("cannot listen on {addr}: {e}")))?;
    listener.set_nonblocking(true)?;
    let timeout = Duration::from_secs(cfg.annotation_timeout_secs);
    let seed = cfg.seed;
    let trainer = Trainer::new(cfg)?;
    let dir = RunDir::create(out)?;
    let state = Arc::new(AppState::new(
        trainer.test_scenes().to_vec(),
        Some(dir.file("human_eval.jsonl")),
        seed,
    ));
    let server_state = Arc::clone(&state);
    let rt = tokio::runtime::Runtime::new()?;
    let tokio_listener = {
        let _guard = rt.enter();
        tokio::net::TcpListener::from_std(listener)?
    };
    info!("annotation API listening on http://{addr}/api/v1/");
    rt.spawn(async move {
        if let Err(e) = emcomm_annotate::serve(tokio_listener, server_state).await {
            error!("annotation server stopped: {e}");
        }
    });
    let mut provider = HumanProvider {
        slot: Arc::clone(&state.slot),
        timeout,
    };
    train_into(trainer, &dir, &mut provider, "human", Some(&state))
}

fn final_row(rows: &[MetricsRow]) -> Result<&MetricsRow> {
    rows.last().context("run produced no metrics")
}

fn ablate(base: TrainConfig, modes: &[String], seeds: u64, out: &Path) -> Result<()> {
    let modes: Vec<Ablation> = modes
        .iter()
        .map(|m| Ablation::parse(m).map_err(|e| usage(e.to_string())))
        .collect::<Result<_>>()?;
    let root = RunDir::create(out)?;
    let mut summary = String::from("mode,seed,final_success_rate,final_bleu\n");
    let mut table = Vec::new();
    for mode in &modes {
        let mut finals = Vec::new();
        for k in 0..seeds {
            let cfg = TrainConfig {
                ablation: *mode,
                seed: base.seed + k,
                ..base.clone()
            };
            let seed = cfg.seed;
            info!("ablation {} seed {seed}", mode.name());
            let rows = train_oracle(cfg, &root.path.join(mode.name()).join(format!("seed_{seed}")))?;
            let last = final_row(&rows)?;
            summary.push_str(&format!("{},{seed},{},{}\n", mode.name(), last.success_rate, last.bleu));
            finals.push(last.success_rate);
        }
        table.push((mode.name(), finals.iter().sum::<f64>() / finals.len().max(1) as f64));
    }
    std::fs::write(root.file("summary.csv"), summary)?;
    println!("mode,mean_final_success_rate");
    for (name, mean) in table {
        println!("{name},{mean}");
    }
    Ok(())
}

fn thresholds(base: TrainConfig, values: &[f64], seeds: u64, out: &Path) -> Result<()> {
    let root = RunDir::create(out)?;
    let mut summary = String::from("t_h,seed,final_success_rate,final_bleu,annotations_used\n");
    for &t_h in values {
        for k in 0..seeds {
            let cfg = TrainConfig {
                t_h,
                seed: base.seed + k,
                ..base.clone()
            };
            let seed = cfg.seed;
            let rows = train_oracle(cfg, &root.path.join(format!("t_h_{t_h}")).join(format!("seed_{seed}")))?;
            let last = final_row(&rows)?;
            summary.push_str(&format!(
                "{t_h},{seed},{},{},{}\n",
                last.success_rate, last.bleu, last.annotations_used
            ));
        }
    }
    std::fs::write(root.file("summary.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn restore(run: &Path, checkpoint: Option<usize>) -> Result<(Trainer, String)> {
    let dir = RunDir::open(run)?;
    let manifest = dir.manifest()?;
    let mut trainer = Trainer::new(manifest.config)?;
    let (name, ckpt) = dir.load_checkpoint(checkpoint)?;
    trainer.load_checkpoint(&ckpt)?;
    Ok((trainer, name))
}

fn parse_cutoffs(raw: &[String]) -> Result<Vec<Cutoff>> {
    let mut out = Vec::with_capacity(raw.len());
    let mut last = f64::NEG_INFINITY;
    for r in raw {
        if r.trim() == "median" {
            out.push(Cutoff::Median);
            continue;
        }
        let c: f64 = r
            .trim()
            .parse()
            .map_err(|_| usage(format!("cutoff `{r}` is neither a number nor `median`")))?;
        if c < last {
            return Err(usage("numeric cutoffs must be ascending"));
        }
        last = c;
        out.push(Cutoff::Fixed(c));
    }
    Ok(out)
}

fn prune_curve(run: &Path, cutoffs: &[String], checkpoint: Option<usize>, out: Option<PathBuf>) -> Result<()> {
    let cutoffs = parse_cutoffs(cutoffs)?;
    let (trainer, _) = restore(run, checkpoint)?;
    if trainer.cfg.env != EnvKind::Refgame {
        return Err(usage("pruning curves are defined for the referential game"));
    }
    let out = out.unwrap_or_else(|| run.join("pruning_curve.csv"));
    if out.exists() {
        return Err(usage(format!("{} already exists; refusing to overwrite", out.display())));
    }
    let points = pruning_curve(&trainer.speaker, &trainer.listener, trainer.eval_states(), &cutoffs)?;
    let mut csv = String::from("cutoff,mean_length,success_rate\n");
    for p in points {
        let c = match p.cutoff {
            Cutoff::Fixed(c) => c.to_string(),
            Cutoff::Median => "median".to_string(),
        };
        csv.push_str(&format!("{c},{},{}\n", p.mean_length, p.success_rate));
    }
    std::fs::write(&out, &csv)?;
    print!("{csv}");
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput {
    checkpoint: String,
    episodes: usize,
    success_rate: f64,
    bleu: f64,
    mean_entropy: f64,
    mean_mi: f64,
    mean_return: f64,
}

fn eval(run: &Path, checkpoint: Option<usize>) -> Result<()> {
    let (mut trainer, name) = restore(run, checkpoint)?;
    let r = trainer.evaluate()?;
    let out = EvalOutput {
        checkpoint: name,
        episodes: r.episodes,
        success_rate: r.success_rate,
        bleu: r.bleu,
        mean_entropy: r.mean_entropy,
        mean_mi: r.mean_mi,
        mean_return: r.mean_return,
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}
