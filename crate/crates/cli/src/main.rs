//! `auscult` — acoustic COVID screening pipeline CLI.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use auscult::audio;
use auscult::dataset::{self, Category, FoldAssignment, ManifestEntry, SynthConfig};
use auscult::features::{
    build_mel_filterbank, extract_features, read_feature_file, write_feature_file, FeatureMatrix,
};
use auscult::inference::{
    self, ensemble_score, read_score_csv, score_file, write_score_csv, ScoreRecord,
};
use auscult::metrics;
use auscult::model::NetworkParams;
use auscult::portal::{read_label_csv, Track};
use auscult::training::{self, Hyperparams};

use auscult_cli::http;
use auscult_cli::portal_config::PortalConfig;

#[derive(Parser)]
#[command(name = "auscult", version, about = "Acoustic COVID screening pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Audio file utilities
    Audio {
        #[command(subcommand)]
        command: AudioCommand,
    },
    /// Feature extraction
    Features {
        #[command(subcommand)]
        command: FeaturesCommand,
    },
    /// Manifests, folds, statistics and the synthetic corpus
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Train one fold of one sound category
    Train(TrainArgs),
    /// Score files with one model or a five-fold ensemble
    Infer(InferArgs),
    /// Fuse per-category scores into subject-level scores
    Fuse(FuseArgs),
    /// Pool several submissions (min-max normalize, then average)
    Pool(PoolArgs),
    /// Evaluate a score file against labels
    Evaluate(EvaluateArgs),
    /// Submission scoring portal
    Portal {
        #[command(subcommand)]
        command: PortalCommand,
    },
}

#[derive(Subcommand)]
enum AudioCommand {
    /// Print duration, sample rate and peak amplitude
    Inspect { path: PathBuf },
}

#[derive(Subcommand)]
enum FeaturesCommand {
    /// Extract feature files for every manifest entry
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory for .feat files
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Generate a synthetic corpus with labels
    Synth {
        #[arg(long)]
        subjects: usize,
        #[arg(long, default_value_t = 0.2)]
        positive_fraction: f64,
        /// Class separation in octaves of spectral-envelope shift
        #[arg(long, default_value_t = 0.3)]
        separation: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign subjects to the five stratified validation folds
    Folds {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print class statistics
    Stats {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory of .feat files from `features extract`
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    category: Category,
    #[arg(long)]
    fold: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint output path
    #[arg(long)]
    out: PathBuf,
    /// Fold CSV; omitted folds are regenerated from the seed
    #[arg(long)]
    folds: Option<PathBuf>,
    /// key=value hyperparameter file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Per-epoch log CSV
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    category: Category,
    /// One checkpoint for a single model, five for a fold ensemble
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    breathing: PathBuf,
    #[arg(long)]
    cough: PathBuf,
    #[arg(long)]
    speech: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PoolArgs {
    /// Score CSVs to pool; repeat the flag
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    scores: PathBuf,
    /// file_id,label CSV with labels in {0,1}
    #[arg(long)]
    labels: PathBuf,
}

#[derive(Subcommand)]
enum PortalCommand {
    /// Serve the portal over local HTTP
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8000)]
        port: u16,
    },
    /// Submit a score file offline (registers the team if new)
    Submit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        team: String,
        #[arg(long)]
        track: Track,
        #[arg(long)]
        scores: PathBuf,
    },
    /// Print the leaderboard for a track
    Board {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        track: Track,
    },
    /// Print a team's submission history
    History {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        team: String,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Audio {
            command: AudioCommand::Inspect { path },
        } => {
            let clip = audio::load_audio(&path)?;
            println!(
                "{}: {:.3} s at {} Hz, peak {:.4}",
                clip.source_id,
                clip.duration_secs(),
                clip.sample_rate,
                clip.peak()
            );
        }
        Command::Features {
            command: FeaturesCommand::Extract { manifest, out },
        } => extract_command(&manifest, &out)?,
        Command::Dataset { command } => dataset_command(command)?,
        Command::Train(args) => train_command(args)?,
        Command::Infer(args) => infer_command(args)?,
        Command::Fuse(args) => fuse_command(args)?,
        Command::Pool(args) => {
            let mut submissions = Vec::new();
            for path in &args.inputs {
                submissions.push(read_score_csv(path)?);
            }
            let pooled = inference::pool_submissions(&submissions)?;
            write_score_csv(&args.out, &pooled)?;
            println!("pooled {} submissions -> {}", submissions.len(), args.out.display());
        }
        Command::Evaluate(args) => {
            let scores = read_score_csv(&args.scores)?;
            let labels = read_label_csv(&args.labels)?;
            let result = metrics::evaluate(&scores, &labels)?;
            println!("{}", serde_json::to_string(&result)?);
        }
        Command::Portal { command } => portal_command(command)?,
    }
    Ok(())
}

fn extract_command(manifest: &Path, out: &Path) -> Result<()> {
    let parsed = dataset::parse_manifest(manifest)?;
    for r in &parsed.rejected {
        eprintln!("rejected {} (line {}): {}", r.file_id, r.line, r.reason);
    }
    std::fs::create_dir_all(out)?;
    let fb = build_mel_filterbank();
    for entry in &parsed.entries {
        let clip = audio::load_audio(&entry.path)?;
        let clip = audio::preprocess(&clip)
            .with_context(|| format!("pre-processing '{}'", entry.file_id))?;
        let feat = extract_features(&clip, &fb)
            .with_context(|| format!("extracting '{}'", entry.file_id))?;
        write_feature_file(out.join(format!("{}.feat", entry.file_id)), &feat)?;
    }
    println!(
        "extracted {} feature files ({} rejected rows) -> {}",
        parsed.entries.len(),
        parsed.rejected.len(),
        out.display()
    );
    Ok(())
}

fn dataset_command(command: DatasetCommand) -> Result<()> {
    match command {
        DatasetCommand::Synth {
            subjects,
            positive_fraction,
            separation,
            seed,
            out,
        } => {
            let entries = dataset::synth_corpus(
                &SynthConfig {
                    n_subjects: subjects,
                    positive_fraction,
                    separation,
                    seed,
                },
                &out,
            )?;
            println!(
                "wrote {} recordings and manifest.csv -> {}",
                entries.len(),
                out.display()
            );
        }
        DatasetCommand::Folds { manifest, seed, out } => {
            let parsed = dataset::parse_manifest(&manifest)?;
            let folds = dataset::make_folds(&parsed.entries, seed)?;
            folds.write_csv(&out)?;
            println!("assigned {} subjects -> {}", folds.len(), out.display());
        }
        DatasetCommand::Stats { manifest } => {
            let parsed = dataset::parse_manifest(&manifest)?;
            print!("{}", dataset::class_stats(&parsed.entries));
        }
    }
    Ok(())
}

fn load_features_for<'a>(
    dir: &Path,
    entries: impl Iterator<Item = &'a ManifestEntry>,
) -> Result<HashMap<String, FeatureMatrix>> {
    let mut feats = HashMap::new();
    for entry in entries {
        let path = dir.join(format!("{}.feat", entry.file_id));
        let feat = read_feature_file(&path)
            .with_context(|| format!("feature file '{}'", path.display()))?;
        feats.insert(entry.file_id.clone(), feat);
    }
    Ok(feats)
}

fn train_command(args: TrainArgs) -> Result<()> {
    let parsed = dataset::parse_manifest(&args.manifest)?;
    if args.fold >= dataset::N_FOLDS {
        bail!("fold {} out of range 0..{}", args.fold, dataset::N_FOLDS);
    }
    let folds = match &args.folds {
        Some(path) => FoldAssignment::read_csv(path)?,
        None => dataset::make_folds(&parsed.entries, args.seed)?,
    };
    let hp = match &args.config {
        Some(path) => Hyperparams::from_kv_text(&std::fs::read_to_string(path)?)?,
        None => Hyperparams::default(),
    };

    let (train_entries, val_entries) =
        dataset::split_for_fold(&parsed.entries, &folds, args.fold, args.category);
    if train_entries.is_empty() || val_entries.is_empty() {
        bail!(
            "fold {} has {} train / {} val files for '{}'",
            args.fold,
            train_entries.len(),
            val_entries.len(),
            args.category
        );
    }
    let feats = load_features_for(
        &args.features,
        train_entries.iter().chain(val_entries.iter()).copied(),
    )?;
    let with_labels = |list: &[&ManifestEntry]| -> Vec<(&FeatureMatrix, u8)> {
        list.iter()
            .map(|e| (&feats[&e.file_id], e.label.expect("labeled split").as_u8()))
            .collect()
    };
    let train_set = with_labels(&train_entries);
    let val_set = with_labels(&val_entries);

    // distinct training stream per fold, same fold assignment per seed
    let outcome = training::train_fold(
        &train_set,
        &val_set,
        &hp,
        args.seed.wrapping_add(args.fold as u64),
    )?;
    outcome.params.save(&args.out)?;
    if let Some(log_path) = &args.log {
        training::write_epoch_log(log_path, &outcome.log)?;
    }
    println!(
        "fold {} '{}': best val auc {:.4} at epoch {} -> {}",
        args.fold,
        args.category,
        outcome.best_val_auc,
        outcome.best_epoch,
        args.out.display()
    );
    Ok(())
}

fn infer_command(args: InferArgs) -> Result<()> {
    if args.checkpoints.len() != 1 && args.checkpoints.len() != inference::ENSEMBLE_SIZE {
        bail!(
            "expected 1 or {} checkpoints, got {}",
            inference::ENSEMBLE_SIZE,
            args.checkpoints.len()
        );
    }
    let models: Vec<NetworkParams> = args
        .checkpoints
        .iter()
        .map(NetworkParams::load)
        .collect::<Result<_, _>>()?;
    let parsed = dataset::parse_manifest(&args.manifest)?;
    let entries: Vec<&ManifestEntry> = parsed
        .entries
        .iter()
        .filter(|e| e.category == args.category)
        .collect();
    if entries.is_empty() {
        bail!("manifest has no '{}' entries", args.category);
    }
    let feats = load_features_for(&args.features, entries.iter().copied())?;

    let mut records = Vec::with_capacity(entries.len());
    for entry in &entries {
        let feat = &feats[&entry.file_id];
        let record = if models.len() == 1 {
            score_file(&models[0], feat)?
        } else {
            ensemble_score(&models, feat)?
        };
        records.push(record);
    }
    write_score_csv(&args.out, &records)?;
    println!(
        "scored {} '{}' files with {} model(s) -> {}",
        records.len(),
        args.category,
        models.len(),
        args.out.display()
    );
    Ok(())
}

fn fuse_command(args: FuseArgs) -> Result<()> {
    let parsed = dataset::parse_manifest(&args.manifest)?;
    let mut csvs: BTreeMap<Category, HashMap<String, f64>> = BTreeMap::new();
    for (category, path) in [
        (Category::Breathing, &args.breathing),
        (Category::Cough, &args.cough),
        (Category::Speech, &args.speech),
    ] {
        let map = read_score_csv(path)?
            .into_iter()
            .map(|r| (r.file_id, r.probability))
            .collect();
        csvs.insert(category, map);
    }

    let mut per_subject: BTreeMap<String, BTreeMap<Category, f64>> = BTreeMap::new();
    for entry in &parsed.entries {
        let Some(score) = csvs[&entry.category].get(&entry.file_id) else {
            bail!(
                "score file for '{}' is missing '{}'",
                entry.category,
                entry.file_id
            );
        };
        per_subject
            .entry(entry.subject_id.clone())
            .or_default()
            .insert(entry.category, *score);
    }

    let mut fused: Vec<ScoreRecord> = Vec::with_capacity(per_subject.len());
    for (subject, scores) in &per_subject {
        fused.push(inference::fuse_categories(subject, scores)?);
    }
    write_score_csv(&args.out, &fused)?;
    println!("fused {} subjects -> {}", fused.len(), args.out.display());
    Ok(())
}

fn portal_command(command: PortalCommand) -> Result<()> {
    match command {
        PortalCommand::Serve { config, port } => {
            let service = PortalConfig::load(&config)?.into_service()?;
            tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()?
                .block_on(http::serve(service, port))?;
        }
        PortalCommand::Submit {
            config,
            team,
            track,
            scores,
        } => {
            let mut service = PortalConfig::load(&config)?.into_service()?;
            service.register(&team);
            let csv = std::fs::read_to_string(&scores)?;
            let now = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0);
            match service.submit(&team, track, &csv, now) {
                Ok(outcome) => println!("{}", serde_json::to_string(&outcome)?),
                Err(err) => {
                    eprintln!("rejected: {err}");
                    std::process::exit(1);
                }
            }
        }
        PortalCommand::Board { config, track } => {
            let service = PortalConfig::load(&config)?.into_service()?;
            println!("{}", serde_json::to_string(&service.leaderboard(track))?);
        }
        PortalCommand::History { config, team } => {
            let service = PortalConfig::load(&config)?.into_service()?;
            let rows: Vec<_> = service.history(&team).into_iter().cloned().collect();
            println!("{}", serde_json::to_string(&rows)?);
        }
    }
    Ok(())
}
