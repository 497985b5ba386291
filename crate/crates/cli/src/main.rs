//! Command-line driver: dataset generation, individual model training, and
//! the full experiment pipeline. Every run echoes its resolved config and a
//! content hash of its artifacts into the output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use switchpred_core::e2e::{train as e2e_train, E2EModel};
use switchpred_core::hybrid_eval::{
    default_methods, export_scatter, run_experiment, Method, RunConfig,
};
use switchpred_core::planner::irl_train;
use switchpred_core::scenario::{
    build_experiment, derive_seed, generate_map, read_dataset_jsonl, write_dataset_jsonl,
    ExperimentId, ExperimentSpec, World,
};
use switchpred_core::switchers::{classifier_train, gan_train, train_ensemble};
use switchpred_core::types::{center_on_target, Split, Trajectory};

#[derive(Parser)]
#[command(name = "switchpred", about = "Trajectory prediction with learned fallback switching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test datasets for one experiment.
    Gen {
        #[arg(long, value_parser = parse_experiment_id)]
        experiment: Option<ExperimentId>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train one component on a generated dataset directory.
    Train {
        /// One of: e2e, irl, ensemble, gan, classifier.
        #[arg(long)]
        what: String,
        #[arg(long)]
        out: PathBuf,
        /// Dataset directory (defaults to --out).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Full pipeline: generate, train, tune, evaluate, report.
    Experiment {
        #[arg(long, value_parser = parse_experiment_id)]
        id: Option<ExperimentId>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated method list, e.g. always0,oracle,bayes30.
        #[arg(long)]
        methods: Option<String>,
    },
}

fn parse_experiment_id(s: &str) -> std::result::Result<ExperimentId, String> {
    s.parse()
}

/// Optional config file; flags override its fields.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct FileConfig {
    spec: Option<ExperimentSpec>,
    run: Option<RunConfig>,
    methods: Option<Vec<String>>,
}

fn load_file_config(path: &Option<PathBuf>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

/// Resolve the experiment spec from config file and flags. The config file
/// wins on structure; --seed always overrides; an --experiment flag that
/// contradicts the config's id is an error.
fn resolve_spec(
    file: &FileConfig,
    id_flag: Option<ExperimentId>,
    seed_flag: Option<u64>,
) -> Result<ExperimentSpec> {
    let mut spec = match (&file.spec, id_flag) {
        (Some(s), Some(id)) if s.id != id => {
            bail!("config file sets experiment {} but the flag says {}", s.id, id)
        }
        (Some(s), _) => s.clone(),
        (None, id) => {
            ExperimentSpec::default_for(id.unwrap_or(ExperimentId::I), seed_flag.unwrap_or(0))
        }
    };
    if let Some(seed) = seed_flag {
        spec.seed = seed;
        if let Some(noise) = &mut spec.noise {
            noise.seed = seed;
        }
    }
    Ok(spec)
}

fn resolve_methods(file: &FileConfig, flag: &Option<String>) -> Result<Vec<Method>> {
    let names: Vec<String> = match (flag, &file.methods) {
        (Some(list), _) => list.split(',').map(|s| s.trim().to_string()).collect(),
        (None, Some(list)) => list.clone(),
        (None, None) => return Ok(default_methods()),
    };
    names
        .iter()
        .map(|n| n.parse::<Method>().map_err(Into::into))
        .collect()
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Echo the fully-resolved configuration into the output directory.
fn write_config_echo(out: &Path, value: &serde_json::Value) -> Result<()> {
    let path = out.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_manifest(out: &Path, manifest: &serde_json::Value) -> Result<()> {
    let path = out.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(manifest)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_loss_csv(path: &Path, losses: &[f64]) -> Result<()> {
    let mut text = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        text.push_str(&format!("{i},{l}\n"));
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_gen(
    id: Option<ExperimentId>,
    seed: Option<u64>,
    out: &Path,
    config: &Option<PathBuf>,
) -> Result<()> {
    let file = load_file_config(config)?;
    let spec = resolve_spec(&file, id, seed)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let data = build_experiment(&spec)?;
    let mut hashes = BTreeMap::new();
    for (name, ds) in [
        ("train.jsonl", &data.train),
        ("val.jsonl", &data.val),
        ("test.jsonl", &data.test),
    ] {
        let path = out.join(name);
        write_dataset_jsonl(&path, ds)?;
        hashes.insert(name.to_string(), sha256_file(&path)?);
    }

    write_config_echo(out, &serde_json::json!({ "spec": spec }))?;
    write_manifest(
        out,
        &serde_json::json!({
            "spec": spec,
            "seed": spec.seed,
            "train_maps": data.train.segments.iter().map(|s| s.scene.map_id.clone())
                .collect::<std::collections::BTreeSet<_>>(),
            "test_maps": data.test.segments.iter().map(|s| s.scene.map_id.clone())
                .collect::<std::collections::BTreeSet<_>>(),
            "noise": spec.noise,
            "counts": spec.counts,
            "sha256": hashes,
        }),
    )?;
    println!(
        "gen: wrote {} train / {} val / {} test segments to {}",
        data.train.segments.len(),
        data.val.segments.len(),
        data.test.segments.len(),
        out.display()
    );
    Ok(())
}

/// Rebuild the worlds a generated dataset refers to, from the manifest's
/// spec echo.
fn worlds_from_manifest(data_dir: &Path) -> Result<(ExperimentSpec, Vec<World>)> {
    let path = data_dir.join("manifest.json");
    let text = fs::read_to_string(&path)
        .with_context(|| format!("expected dataset manifest at {}", path.display()))?;
    let manifest: serde_json::Value = serde_json::from_str(&text)?;
    let spec: ExperimentSpec = serde_json::from_value(
        manifest
            .get("spec")
            .cloned()
            .context("manifest has no spec")?,
    )?;
    let mut worlds: Vec<World> = Vec::new();
    for m in spec.train_maps.iter().chain(&spec.test_maps) {
        let w = generate_map(m, spec.seed);
        if !worlds.iter().any(|x| x.map_id == w.map_id) {
            worlds.push(w);
        }
    }
    Ok((spec, worlds))
}

fn cmd_train(
    what: &str,
    out: &Path,
    data_dir: &Path,
    seed: Option<u64>,
    config: &Option<PathBuf>,
) -> Result<()> {
    let file = load_file_config(config)?;
    let mut run = file.run.clone().unwrap_or_default();
    if let Some(seed) = seed {
        run.e2e.seed = derive_seed(seed, 0x10);
        run.irl.seed = derive_seed(seed, 0x11);
        run.gan.seed = derive_seed(seed, 0x12);
        run.classifier.seed = derive_seed(seed, 0x13);
    }
    let train_path = data_dir.join("train.jsonl");
    if !train_path.exists() {
        bail!("expected dataset at {}; run gen first", train_path.display());
    }
    let train_data = read_dataset_jsonl(&train_path, Split::Train, train_path.display().to_string())?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let mut artifacts: Vec<PathBuf> = Vec::new();
    match what {
        "e2e" => {
            let model = e2e_train(&train_data, &run.e2e)?;
            let bin = out.join("e2e.bin");
            model.save_binary(&bin)?;
            let csv = out.join("e2e_loss.csv");
            write_loss_csv(&csv, &model.epoch_losses)?;
            artifacts.extend([bin, csv]);
        }
        "irl" => {
            let (_, worlds) = worlds_from_manifest(data_dir)?;
            let result = irl_train(&train_data, &worlds, &run.plan, &run.irl)?;
            let json = out.join("irl_weights.json");
            result.weights.save_json(&json)?;
            let csv = out.join("irl_loss.csv");
            write_loss_csv(&csv, &result.loss_history)?;
            artifacts.extend([json, csv]);
        }
        "ensemble" => {
            let ensemble = train_ensemble(&train_data, &run.e2e)?;
            for (i, member) in ensemble.members.iter().enumerate() {
                let bin = out.join(format!("ensemble_{i}.bin"));
                member.save_binary(&bin)?;
                artifacts.push(bin);
            }
        }
        "gan" => {
            let histories: Vec<Trajectory> = train_data
                .segments
                .iter()
                .map(|s| center_on_target(&s.scene).target_history)
                .collect();
            let pair = gan_train(&histories, &run.gan)?;
            let bin = out.join("gan.bin");
            pair.save_binary(&bin)?;
            artifacts.push(bin);
        }
        "classifier" => {
            let e2e_path = out.join("e2e.bin");
            if !e2e_path.exists() {
                bail!(
                    "classifier training needs the e2e model at {}; run train --what e2e first",
                    e2e_path.display()
                );
            }
            let model = E2EModel::load_binary(&e2e_path)?;
            let (_, worlds) = worlds_from_manifest(data_dir)?;
            let clf = classifier_train(&model, &train_data, &worlds, &run.classifier)?;
            let bin = out.join("classifier.bin");
            clf.save_binary(&bin)?;
            artifacts.push(bin);
        }
        other => bail!("unknown --what '{other}' (expected e2e, irl, ensemble, gan, classifier)"),
    }

    let mut hashes = BTreeMap::new();
    for p in &artifacts {
        hashes.insert(
            p.file_name().unwrap().to_string_lossy().to_string(),
            sha256_file(p)?,
        );
    }
    // Namespaced per component so a shared out dir keeps its dataset
    // manifest intact.
    let echo = serde_json::json!({ "what": what, "run": run, "seed": seed, "data": data_dir });
    let path = out.join(format!("{what}_config.json"));
    fs::write(&path, serde_json::to_string_pretty(&echo)?)
        .with_context(|| format!("writing {}", path.display()))?;
    let manifest = serde_json::json!({ "what": what, "seed": seed, "sha256": hashes });
    let path = out.join(format!("{what}_manifest.json"));
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("writing {}", path.display()))?;
    println!("train {what}: wrote {} artifacts to {}", artifacts.len(), out.display());
    Ok(())
}

fn cmd_experiment(
    id: Option<ExperimentId>,
    seed: Option<u64>,
    out: &Path,
    config: &Option<PathBuf>,
    methods_flag: &Option<String>,
) -> Result<()> {
    let file = load_file_config(config)?;
    let spec = resolve_spec(&file, id, seed)?;
    let run = file.run.clone().unwrap_or_default();
    let methods = resolve_methods(&file, methods_flag)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let report = run_experiment(&spec, &run, &methods)?;

    let report_path = out.join("report.json");
    report.save_json(&report_path)?;
    let table = report.render_table();
    let table_path = out.join("report.txt");
    fs::write(&table_path, &table).with_context(|| format!("writing {}", table_path.display()))?;
    let mut artifacts = vec![report_path, table_path];
    for method in &methods {
        let path = out.join(format!("scatter_{method}.csv"));
        export_scatter(&report, &method.to_string(), &path)?;
        artifacts.push(path);
    }

    let mut hashes = BTreeMap::new();
    for p in &artifacts {
        hashes.insert(
            p.file_name().unwrap().to_string_lossy().to_string(),
            sha256_file(p)?,
        );
    }
    let method_names: Vec<String> = methods.iter().map(|m| m.to_string()).collect();
    write_config_echo(
        out,
        &serde_json::json!({ "spec": spec, "run": run, "methods": method_names }),
    )?;
    write_manifest(
        out,
        &serde_json::json!({
            "experiment": spec.id.to_string(),
            "seed": spec.seed,
            "train_maps": spec.train_maps,
            "test_maps": spec.test_maps,
            "methods": method_names,
            "thresholds": report.thresholds,
            "sha256": hashes,
        }),
    )?;
    print!("{table}");
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen {
            experiment,
            seed,
            out,
            config,
        } => cmd_gen(experiment, seed, &out, &config),
        Command::Train {
            what,
            out,
            data,
            seed,
            config,
        } => {
            let data_dir = data.unwrap_or_else(|| out.clone());
            cmd_train(&what, &out, &data_dir, seed, &config)
        }
        Command::Experiment {
            id,
            seed,
            out,
            config,
            methods,
        } => cmd_experiment(id, seed, &out, &config, &methods),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
