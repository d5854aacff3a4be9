//! Command-line front end: `propose`, `train`, `inspect`, `synth` and
//! `eval` subcommands over a single TOML config with flag overrides.
//!
//! Exit codes: 0 success, 2 config error, 3 I/O error, 4 contract
//! violation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::classify::{
    inspect, render_report, train_bd, train_dc, DcScope, InspectConfig, LabelSet, Provenance,
};
use crate::config::PipelineConfig;
use crate::embedding::{embed_all, FeatureVector};
use crate::error::{Error, Result};
use crate::eval::{format_metric, match_report, metrics, ConfusionCounts};
use crate::forest::ForestModel;
use crate::imaging::{load_gray, save_png, GrayImage};
use crate::pipeline::{crops_for_regions, stage_one};
use crate::proposals::{write_proposals, Crop, Region};
use crate::semisup::{cluster_filter, pseudo_labels, FilterParams, FilterTrace};
use crate::synth::{generate_corpus, GroundTruth, Profile};

#[derive(Debug, Parser)]
#[command(
    name = "glass-inspect",
    version,
    about = "Micro-scale localization and classification of glass surface regions"
)]
pub struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Master seed override.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for per-image work (0 = one per core).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stage I only: write a proposals file and crop PNGs per image.
    Propose {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Convert multi-channel input with the standard luminance weights.
        #[arg(long)]
        luma: bool,
        /// Skip writing crop PNGs.
        #[arg(long)]
        no_crops: bool,
        /// Input images (PNG or PGM).
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Train the BD and DC classifiers from a crops directory and a label
    /// file.
    Train {
        /// Directory of 224x224 crop PNGs (from `propose`).
        #[arg(long)]
        crops: PathBuf,
        /// CSV of human labels: crop_id,class_name.
        #[arg(long)]
        labels: PathBuf,
        /// Output directory for bd.model.json, dc.model.json and
        /// filter_trace.json.
        #[arg(long)]
        out: PathBuf,
        /// Clusters per filtering round.
        #[arg(long)]
        k: Option<usize>,
        /// Clusters kept per filtering round.
        #[arg(long)]
        keep: Option<usize>,
        /// Absolute per-round drop threshold.
        #[arg(long)]
        drop_threshold: Option<usize>,
        /// Drop labeled defects along with their clusters.
        #[arg(long)]
        strict_drop: bool,
        /// External ONNX embedding model; omit for the baseline
        /// descriptor.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the full pipeline on one image and write the report JSON.
    Inspect {
        #[arg(long)]
        bd: PathBuf,
        #[arg(long)]
        dc: PathBuf,
        /// Report output path.
        #[arg(long)]
        out: PathBuf,
        /// Also write an annotated PNG.
        #[arg(long)]
        render: Option<PathBuf>,
        /// External ONNX embedding model.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Which crops the six-class stage runs on: all | defects-only.
        #[arg(long)]
        dc_scope: Option<String>,
        #[arg(long)]
        luma: bool,
        image: PathBuf,
    },
    /// Generate a seeded synthetic corpus with ground truth.
    Synth {
        /// Profile: clean | dust | scratch | pit_crack.
        #[arg(long)]
        profile: String,
        /// Number of image+truth pairs.
        #[arg(long)]
        n: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 384)]
        width: u32,
        #[arg(long, default_value_t = 512)]
        height: u32,
    },
    /// Score report JSONs against ground truth and write a metrics CSV.
    Eval {
        /// Directory of <id>.report.json files.
        #[arg(long)]
        reports: PathBuf,
        /// Directory of <id>.json ground-truth files.
        #[arg(long)]
        truth: PathBuf,
        /// IoU threshold for matching.
        #[arg(long, default_value_t = 0.3)]
        iou: f64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        config.jobs = jobs;
    }
    config.validate()?;
    Ok(config)
}

fn source_id_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".to_string())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Runs one parsed command; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    let threads = if config.jobs == 0 { None } else { Some(config.jobs) };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli, config))
}

fn dispatch(cli: Cli, mut config: PipelineConfig) -> Result<()> {
    match cli.command {
        Command::Propose {
            out,
            luma,
            no_crops,
            images,
        } => cmd_propose(&config, &out, luma, !no_crops, &images),
        Command::Train {
            crops,
            labels,
            out,
            k,
            keep,
            drop_threshold,
            strict_drop,
            model,
        } => {
            if let Some(k) = k {
                config.semisup.k = k;
            }
            if let Some(keep) = keep {
                config.semisup.keep_count = keep;
            }
            if drop_threshold.is_some() {
                config.semisup.drop_threshold = drop_threshold;
            }
            if strict_drop {
                config.semisup.strict_drop = true;
            }
            if model.is_some() {
                config.embedding.model = model;
            }
            config.validate()?;
            let outputs = train_from_crops(&crops, &labels, &config)?;
            ensure_dir(&out)?;
            crate::forest::save(&outputs.bd, &out.join("bd.model.json"))?;
            crate::forest::save(&outputs.dc, &out.join("dc.model.json"))?;
            let trace_path = out.join("filter_trace.json");
            std::fs::write(&trace_path, outputs.trace.to_json())
                .map_err(|e| Error::io(&trace_path, e))?;
            println!(
                "trained BD on {} pseudo-labels ({} defect) and DC on {} human labels in {} rounds",
                outputs.pseudo.len(),
                outputs.pseudo.iter().filter(|&&d| d).count(),
                outputs.human_label_count,
                outputs.trace.rounds.len()
            );
            Ok(())
        }
        Command::Inspect {
            bd,
            dc,
            out,
            render,
            model,
            dc_scope,
            luma,
            image,
        } => {
            if model.is_some() {
                config.embedding.model = model;
            }
            if let Some(scope) = dc_scope {
                config.dc_scope = DcScope::parse(&scope)?;
            }
            config.validate()?;
            cmd_inspect(&config, &bd, &dc, &image, luma, &out, render.as_deref())
        }
        Command::Synth {
            profile,
            n,
            out,
            width,
            height,
        } => {
            let profile = Profile::parse(&profile)?;
            let manifest = generate_corpus(profile, n, config.seed, width, height, &out)?;
            println!(
                "wrote {} {} pairs under {}",
                manifest.items.len(),
                profile.name(),
                out.display()
            );
            Ok(())
        }
        Command::Eval {
            reports,
            truth,
            iou,
            out,
        } => cmd_eval(&reports, &truth, iou, &out),
    }
}

fn cmd_propose(
    config: &PipelineConfig,
    out: &Path,
    luma: bool,
    write_crops: bool,
    images: &[PathBuf],
) -> Result<()> {
    use rayon::prelude::*;

    ensure_dir(out)?;
    let crops_dir = out.join("crops");
    if write_crops {
        ensure_dir(&crops_dir)?;
    }
    let results: Vec<Result<(String, usize)>> = images
        .par_iter()
        .map(|path| {
            let source_id = source_id_of(path);
            let img = load_gray(path, luma)?;
            let regions = stage_one(&img, &source_id, &config.stage_one)?;
            write_proposals(&regions, &out.join(format!("{source_id}.proposals.txt")))?;
            if write_crops {
                let crops = crops_for_regions(&img, &regions)?;
                for (i, crop) in crops.iter().enumerate() {
                    save_png(
                        &crop.pixels,
                        &crops_dir.join(format!("{}.png", Crop::id(&source_id, i))),
                    )?;
                }
            }
            Ok((source_id, regions.len()))
        })
        .collect();
    for r in results {
        let (source_id, count) = r?;
        println!("{source_id}: {count} proposals");
    }
    Ok(())
}

/// Outputs of the training command.
pub struct TrainOutputs {
    pub bd: ForestModel,
    pub dc: ForestModel,
    pub trace: FilterTrace,
    pub pseudo: Vec<bool>,
    pub human_label_count: usize,
}

/// Reads every crop PNG under `crops_dir` (sorted by id), embeds them,
/// runs the cluster filter with the labeled subset, and trains BD on the
/// resulting pseudo-labels and DC on the human labels.
pub fn train_from_crops(
    crops_dir: &Path,
    labels_path: &Path,
    config: &PipelineConfig,
) -> Result<TrainOutputs> {
    let labels = LabelSet::read_csv(labels_path)?;
    let (ids, crops) = read_crop_dir(crops_dir)?;
    if crops.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no crop PNGs found under {}",
            crops_dir.display()
        )));
    }
    for id in labels.entries.keys() {
        if !ids.contains(id) {
            return Err(Error::InvalidArgument(format!(
                "label file references unknown crop {id:?}"
            )));
        }
    }

    let provider = config.provider()?;
    let features = embed_all(&crops, provider.as_ref(), config.embedding.cache.as_deref())?;

    let index_of: BTreeMap<&String, usize> =
        ids.iter().enumerate().map(|(i, id)| (id, i)).collect();
    let label_indices: BTreeMap<usize, crate::classify::RegionClass> = labels
        .entries
        .iter()
        .map(|(id, &class)| (index_of[id], class))
        .collect();

    let filter_params = FilterParams {
        k: config.semisup.k,
        keep_count: config.semisup.keep_count,
        drop_threshold: config.semisup.resolve_drop_threshold(features.len()),
        seed: config.seed,
        strict_drop: config.semisup.strict_drop,
        kmeans_max_iter: config.semisup.kmeans_max_iter,
    };
    let trace = cluster_filter(&features, &label_indices, &filter_params)?;
    let pseudo = pseudo_labels(&trace, &label_indices);

    let bd = train_bd(&features, &pseudo, &config.forest.params(config.seed.wrapping_add(1)))?;
    let feature_map: BTreeMap<String, FeatureVector> = ids
        .iter()
        .cloned()
        .zip(features.iter().cloned())
        .collect();
    let dc = train_dc(
        &labels,
        &feature_map,
        &config.forest.params(config.seed.wrapping_add(2)),
    )?;

    Ok(TrainOutputs {
        bd,
        dc,
        trace,
        pseudo,
        human_label_count: labels.entries.len(),
    })
}

/// Loads `<id>.png` crops sorted by id.
fn read_crop_dir(dir: &Path) -> Result<(Vec<String>, Vec<Crop>)> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            ids.push(source_id_of(&path));
        }
    }
    ids.sort_unstable();
    let mut crops = Vec::with_capacity(ids.len());
    for id in &ids {
        let img = load_gray(&dir.join(format!("{id}.png")), false)?;
        if img.width() != crate::proposals::CROP_SIDE || img.height() != crate::proposals::CROP_SIDE
        {
            return Err(Error::InvalidArgument(format!(
                "crop {id} is {}x{}, expected {0}x{0}",
                crate::proposals::CROP_SIDE,
                img.width(),
            )));
        }
        crops.push(Crop {
            origin: Region {
                bbox: crate::imaging::BBox::new(0, 0, img.width(), img.height()),
                score: 0.0,
                area: 0,
                source_id: id.clone(),
            },
            pad: (0, 0),
            pixels: img,
        });
    }
    Ok((ids, crops))
}

fn cmd_inspect(
    config: &PipelineConfig,
    bd_path: &Path,
    dc_path: &Path,
    image_path: &Path,
    luma: bool,
    out: &Path,
    render: Option<&Path>,
) -> Result<()> {
    let bd = crate::forest::load(bd_path)?;
    let dc = crate::forest::load(dc_path)?;
    let provider = config.provider()?;
    let img = load_gray(image_path, luma)?;
    let report = inspect(
        &img,
        &source_id_of(image_path),
        &bd,
        &dc,
        &InspectConfig {
            stage_one: config.stage_one.clone(),
            dc_scope: config.dc_scope,
            provider: provider.as_ref(),
            cache_dir: config.embedding.cache.as_deref(),
        },
    )?;
    std::fs::write(out, report.to_json()).map_err(|e| Error::io(out, e))?;
    if let Some(render_path) = render {
        let annotated = render_report(&img, &report);
        annotated
            .save_with_format(render_path, image::ImageFormat::Png)
            .map_err(|e| Error::Load(format!("{}: {e}", render_path.display())))?;
    }
    println!("{}: {} findings", report.source_id, report.findings.len());
    Ok(())
}

fn cmd_eval(reports_dir: &Path, truth_dir: &Path, iou: f64, out: &Path) -> Result<()> {
    use rayon::prelude::*;

    let mut ids = Vec::new();
    for entry in std::fs::read_dir(reports_dir).map_err(|e| Error::io(reports_dir, e))? {
        let entry = entry.map_err(|e| Error::io(reports_dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(".report.json") {
            ids.push(id.to_string());
        }
    }
    if ids.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no *.report.json files under {}",
            reports_dir.display()
        )));
    }
    ids.sort_unstable();

    let rows: Vec<Result<(String, ConfusionCounts)>> = ids
        .par_iter()
        .map(|id| {
            let report_path = reports_dir.join(format!("{id}.report.json"));
            let text =
                std::fs::read_to_string(&report_path).map_err(|e| Error::io(&report_path, e))?;
            let report = crate::classify::InspectionReport::from_json(&text)?;
            let truth = GroundTruth::read(&truth_dir.join(format!("{id}.json")))?;
            let result = match_report(&report, &truth, iou)?;
            Ok((id.clone(), result.counts))
        })
        .collect();

    let mut csv = String::from(
        "sample,tp,fn,tn,fp,sensitivity,specificity,precision,overall_accuracy\n",
    );
    let mut total = ConfusionCounts::default();
    for row in rows {
        let (id, counts) = row?;
        total.add(&counts);
        csv.push_str(&format_row(&id, &counts)?);
    }
    csv.push_str(&format_row("all", &total)?);
    std::fs::write(out, csv).map_err(|e| Error::io(out, e))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn format_row(id: &str, counts: &ConfusionCounts) -> Result<String> {
    let m = if counts.total() == 0 {
        crate::eval::MetricSet {
            sensitivity: None,
            specificity: None,
            precision: None,
            accuracy: None,
        }
    } else {
        metrics(counts)?
    };
    Ok(format!(
        "{id},{},{},{},{},{},{},{},{}\n",
        counts.tp,
        counts.fn_,
        counts.tn,
        counts.fp,
        format_metric(m.sensitivity),
        format_metric(m.specificity),
        format_metric(m.precision),
        format_metric(m.accuracy),
    ))
}
