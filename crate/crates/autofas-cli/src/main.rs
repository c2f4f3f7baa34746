//! Pipeline driver: data generation, latency profiling, search, evaluation,
//! and report rendering, all off a versioned TOML run config.
//!
//! Exit codes: 0 ok, 2 config/input problem, 3 numeric divergence, 4 missing
//! latency table entry.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use autofas_core::checkpoint::{load_checkpoint, save_checkpoint};
use autofas_core::config::{load_run_config, save_run_config, RunConfig, SYNTHETIC_TABLE};
use autofas_core::data::{generate, read_dataset, write_dataset, Dataset, FeatureSpec};
use autofas_core::error::Error;
use autofas_core::eval::{auc, recall_alignment};
use autofas_core::latency::{
    profile_latency_table, read_latency_table, synthetic_latency_table, write_latency_table,
    LatencyTable,
};
use autofas_core::optim::ParamStore;
use autofas_core::report::{
    build_report, read_report, render_report, write_metrics_csv, write_report,
    write_trajectory_csv,
};
use autofas_core::search::{query_groups, run_search};
use autofas_core::supernet::write_selection;
use autofas_core::teacher::{MaskMode, Teacher, TeacherConfig};

#[derive(Parser)]
#[command(name = "autofas", version, about = "Joint feature and architecture selection for pre-ranking models")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic click dataset plus a ground-truth sidecar.
    GenData {
        /// Run config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Profile MLP shapes on this machine and emit a latency table.
    Profile {
        #[arg(long)]
        config: PathBuf,
        /// Wall-clock samples per shape (median is kept).
        #[arg(long, default_value_t = 31)]
        repetitions: usize,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run warmup, joint search, derivation, retraining, and evaluation.
    Search {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Comma-separated seeds; one full run (and report) per seed.
        #[arg(long)]
        seeds: Option<String>,
        /// Ablations: `no-gradient-block` and/or `masked-kd`.
        #[arg(long)]
        ablate: Vec<String>,
    },
    /// Score a checkpointed model on a dataset and emit a metrics CSV.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Model checkpoint to score.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset base path; defaults to the config's dataset.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Teacher checkpoint for recall alignment; the model is compared
        /// against itself (recall 1) when absent.
        #[arg(long)]
        teacher_checkpoint: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Render a search report as human-readable text.
    Report {
        #[arg(long)]
        report: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Diverged { .. } => 3,
                Error::MissingLatencyEntry { .. } => 4,
                _ => 2,
            })
        }
    }
}

/// --out-dir flag beats the AUTOFAS_OUT_DIR variable beats the config.
fn resolve_out_dir(cfg: &RunConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("AUTOFAS_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| cfg.output_dir.clone())
}

fn load_or_generate_dataset(cfg: &RunConfig) -> Result<Dataset, Error> {
    match &cfg.dataset_path {
        Some(base) => read_dataset(base),
        None => Ok(generate(&cfg.dataset)?.0),
    }
}

fn load_table(cfg: &RunConfig, input_width: usize) -> Result<LatencyTable, Error> {
    if cfg.latency_table == SYNTHETIC_TABLE {
        Ok(synthetic_latency_table(&cfg.supernet, input_width))
    } else {
        read_latency_table(Path::new(&cfg.latency_table))
    }
}

/// Rebuild a model from a checkpoint's tensor names: `t.emb.<id>` fixes the
/// feature subset, `t.l<i>.w` shapes fix the tower.
fn model_from_checkpoint(store: &ParamStore, features: &[FeatureSpec]) -> Result<Teacher, Error> {
    let mut ids: Vec<usize> = store
        .names()
        .filter_map(|n| n.strip_prefix("t.emb."))
        .map(|id| {
            id.parse()
                .map_err(|_| Error::Config(format!("bad embedding name t.emb.{id}")))
        })
        .collect::<Result<_, _>>()?;
    ids.sort_unstable();
    let selected: Vec<FeatureSpec> = features
        .iter()
        .filter(|f| ids.binary_search(&f.id).is_ok())
        .cloned()
        .collect();
    if selected.len() != ids.len() {
        return Err(Error::Config(
            "checkpoint references features missing from the dataset".into(),
        ));
    }
    let mut tower = Vec::new();
    for i in 0.. {
        let name = format!("t.l{i}.w");
        if !store.contains(&name) {
            break;
        }
        tower.push(store.get(&name).shape[1]);
    }
    Ok(Teacher::new(selected, TeacherConfig { tower }))
}

fn parse_seeds(cfg_seed: u64, seeds: Option<&str>) -> Result<Vec<u64>, Error> {
    match seeds {
        None => Ok(vec![cfg_seed]),
        Some(s) => s
            .split(',')
            .filter(|p| !p.is_empty())
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad seed {p:?}")))
            })
            .collect(),
    }
}

fn run(cmd: Cmd) -> Result<(), Error> {
    match cmd {
        Cmd::GenData { config, out_dir } => {
            let cfg = load_run_config(&config)?;
            let out = resolve_out_dir(&cfg, out_dir);
            fs::create_dir_all(&out)?;
            let (dataset, planted) = generate(&cfg.dataset)?;
            let base = out.join("dataset");
            write_dataset(&base, &dataset)?;
            let sidecar: String = planted
                .iter()
                .map(|id| format!("{id}\n"))
                .collect();
            fs::write(out.join("planted.txt"), sidecar)?;
            println!(
                "wrote {} examples, {} features to {}",
                dataset.examples.len(),
                dataset.num_features(),
                base.display()
            );
            Ok(())
        }
        Cmd::Profile {
            config,
            repetitions,
            out_dir,
        } => {
            let cfg = load_run_config(&config)?;
            let out = resolve_out_dir(&cfg, out_dir);
            fs::create_dir_all(&out)?;
            let input_width = load_or_generate_dataset(&cfg)?.input_width();
            let table = profile_latency_table(&cfg.supernet, input_width, repetitions)?;
            let path = out.join("latency.tsv");
            write_latency_table(&path, &table)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Cmd::Search {
            config,
            out_dir,
            seeds,
            ablate,
        } => {
            let mut cfg = load_run_config(&config)?;
            for a in &ablate {
                match a.as_str() {
                    "no-gradient-block" => cfg.search.gradient_block = false,
                    "masked-kd" => cfg.search.teacher_masked_kd = true,
                    other => {
                        return Err(Error::Config(format!(
                            "unknown ablation {other:?} (expected no-gradient-block or masked-kd)"
                        )))
                    }
                }
            }
            let out = resolve_out_dir(&cfg, out_dir);
            fs::create_dir_all(&out)?;
            let dataset = load_or_generate_dataset(&cfg)?;
            let table = load_table(&cfg, dataset.input_width())?;
            let seeds = parse_seeds(cfg.search.seed, seeds.as_deref())?;
            let many = seeds.len() > 1;
            save_run_config(&out.join("config.toml"), &cfg)?;
            for seed in seeds {
                let mut search = cfg.search.clone();
                search.seed = seed;
                let outcome = run_search(&dataset, &cfg.teacher, &cfg.supernet, &search, &table)?;
                let suffix = if many {
                    format!("_seed{seed}")
                } else {
                    String::new()
                };
                let report = build_report(&outcome, &cfg.teacher, &cfg.supernet, &search);
                write_report(&out.join(format!("report{suffix}.toml")), &report)?;
                write_trajectory_csv(
                    &out.join(format!("trajectory{suffix}.csv")),
                    &outcome.trajectory,
                )?;
                write_selection(&out.join(format!("arch{suffix}.tsv")), &outcome.selection)?;
                save_checkpoint(
                    &out.join(format!("search{suffix}.ckpt")),
                    &outcome.search_store,
                )?;
                save_checkpoint(
                    &out.join(format!("derived{suffix}.ckpt")),
                    &outcome.derived_store,
                )?;
                println!(
                    "seed {seed}: retrain AUC {:.4}, recall {:.4}, {} features, arch {}",
                    outcome.retrain_auc,
                    outcome.recall,
                    outcome.selection.feature_ids.len(),
                    outcome
                        .selection
                        .layer_widths()
                        .iter()
                        .map(|w| w.to_string())
                        .collect::<Vec<_>>()
                        .join("-")
                );
            }
            Ok(())
        }
        Cmd::Eval {
            config,
            checkpoint,
            data,
            teacher_checkpoint,
            out_dir,
        } => {
            let cfg = load_run_config(&config)?;
            let out = resolve_out_dir(&cfg, out_dir);
            fs::create_dir_all(&out)?;
            let dataset = match data {
                Some(base) => read_dataset(&base)?,
                None => load_or_generate_dataset(&cfg)?,
            };
            let store = load_checkpoint(&checkpoint)?;
            let model = model_from_checkpoint(&store, &dataset.features)?;
            let scores = model.scores(&store, &dataset, MaskMode::None)?;
            let labels: Vec<u8> = dataset.examples.iter().map(|e| e.label).collect();
            let model_auc = auc(&scores, &labels)?;

            let teacher_scores = match teacher_checkpoint {
                Some(path) => {
                    let t_store = load_checkpoint(&path)?;
                    let t_model = model_from_checkpoint(&t_store, &dataset.features)?;
                    t_model.scores(&t_store, &dataset, MaskMode::None)?
                }
                None => scores.clone(),
            };
            let groups = query_groups(&dataset, &scores, &teacher_scores);
            let smallest = groups.iter().map(|g| g.labels.len()).min().unwrap_or(0);
            let m = cfg.search.recall_m.min(smallest);
            let k = cfg.search.recall_k.min(m);
            let recall = recall_alignment(&groups, k, m)?;

            let path = out.join("metrics.csv");
            write_metrics_csv(
                &path,
                &[
                    ("auc".into(), "model".into(), model_auc),
                    ("recall".into(), "alignment".into(), recall),
                ],
            )?;
            println!("auc {model_auc:.4}, recall {recall:.4} -> {}", path.display());
            Ok(())
        }
        Cmd::Report { report } => {
            let r = read_report(&report)?;
            print!("{}", render_report(&r));
            Ok(())
        }
    }
}
