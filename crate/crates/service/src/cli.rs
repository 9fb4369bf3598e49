//! `dermtriage` command line. Every verb prints JSON on stdout.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use dermtriage_core::classify::{
    compute_metrics, train_baseline, BaselineClassifier, BaselineTrainConfig, ClassTaxonomy, LesionClassifier,
    ProbabilityTable,
};
use dermtriage_core::datastore::{
    export_dataset, import_dataset, quality_filter_dataset, split_dataset, ColumnMapping, Dataset, SplitRatios,
};
use dermtriage_core::ensemble::{train_fusion, EnsembleInput, FusionTrainConfig};
use dermtriage_core::imaging::synth::skin_texture;
use dermtriage_core::imaging::{center_square_crop, roi_crop, ImageBuffer, RoiCircle};
use dermtriage_core::quality::{default_distortion_grid, train_quality_model, QualityModel, QualityTrainConfig};
use dermtriage_core::workflow::CaseStore;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crate::config::Config;
use crate::registry::{model_name, version_of, ModelRegistry};
use crate::service::{decode_image, CaptureMeta, Service};

#[derive(Debug, Parser)]
#[command(name = "dermtriage", version, about = "Lesion image capture, quality gating, triage and dataset tools")]
pub struct Cli {
    /// TOML config file; `DERMTRIAGE_*` variables override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Directory holding the manifest and the images it references.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Manifest file name inside the directory.
    #[arg(long)]
    pub manifest: Option<String>,
    /// Column mapping for foreign manifests, e.g. `diagnostic=dx,image_path=file`.
    #[arg(long)]
    pub map: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        storage_dir: Option<PathBuf>,
    },
    /// Train the four-indicator quality model on clean images.
    TrainQuality {
        #[arg(long)]
        out: PathBuf,
        /// Directory of clean PNG/JPEG images; synthetic textures otherwise.
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        synthetic: usize,
        #[arg(long, default_value_t = 64)]
        side: u32,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a baseline lesion classifier on a labelled dataset.
    TrainBaseline {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the fusion head on member outputs over a held-out dataset.
    TrainFusion {
        #[command(flatten)]
        data: DatasetArgs,
        /// Member classifier files, in registry order.
        #[arg(long, value_delimiter = ',')]
        members: Vec<PathBuf>,
        /// Member probability tables (`image_id,<class>...`) instead of model files.
        #[arg(long, value_delimiter = ',')]
        tables: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Load a labelled dataset into the case store.
    Import {
        #[command(flatten)]
        data: DatasetArgs,
        /// Provenance recorded on each imported case.
        #[arg(long, default_value = "import")]
        source: String,
    },
    /// Write labelled cases as a manifest plus images.
    Export {
        #[arg(long)]
        out: PathBuf,
    },
    /// Drop images the quality gate rejects.
    Filter {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the configured quality model.
        #[arg(long)]
        quality_model: Option<PathBuf>,
        /// Removal report, one `image_id,reasons` line per image.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Lesion-grouped train/val/test split.
    Split {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.8,0.1,0.1")]
        ratios: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Metrics of a prediction table against a dataset's labels.
    Eval {
        #[command(flatten)]
        data: DatasetArgs,
        /// `image_id,<class>...` probabilities; the argmax is the prediction.
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Run the configured ensemble on one image.
    Predict {
        #[arg(long)]
        image: PathBuf,
        /// `cx,cy,r` on the center crop; the whole image is the ROI otherwise.
        #[arg(long, value_delimiter = ',')]
        roi: Option<Vec<f64>>,
    },
    /// Case operations against the store directory, mirroring the HTTP API.
    #[command(subcommand)]
    Case(CaseCommand),
}

#[derive(Debug, Subcommand)]
pub enum CaseCommand {
    /// POST /cases
    Create { body: String },
    /// GET /cases/{id}
    Show { id: String },
    /// POST /cases/{id}/captures
    Capture {
        id: String,
        image: PathBuf,
        metadata: String,
        #[arg(long)]
        idempotency_key: Option<String>,
    },
    /// POST /cases/{id}/annotation
    Annotate { id: String, body: String },
    /// POST /cases/{id}/annotation/revision
    Revise { id: String, body: String },
    /// POST /cases/{id}/predict
    Predict { id: String },
    /// POST /cases/{id}/feedback
    Feedback { id: String, body: String },
    /// POST /cases/{id}/flag
    Flag { id: String },
    /// POST /cases/{id}/biopsy-order
    OrderBiopsy { id: String, body: String },
    /// POST /cases/{id}/histopathology
    Histopathology { id: String, body: String },
    /// POST /cases/{id}/close
    Close { id: String, body: String },
    /// GET /review/queue
    Queue {
        #[arg(long)]
        state: Option<String>,
    },
    /// GET /summary
    Summary,
    /// GET /export, written to a file.
    Archive { out: PathBuf },
}

fn print(value: &impl Serialize) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn parse_body<T: DeserializeOwned>(text: &str) -> anyhow::Result<T> {
    serde_json::from_str(text).context("request body is not valid JSON for this operation")
}

fn load_dataset(args: &DatasetArgs, taxonomy: &ClassTaxonomy) -> anyhow::Result<Dataset> {
    let mapping = match &args.map {
        Some(spec) => ColumnMapping::parse(spec)?,
        None => ColumnMapping::identity(),
    };
    let out = import_dataset(&args.dataset, args.manifest.as_deref(), &mapping, taxonomy)
        .with_context(|| format!("loading dataset {}", args.dataset.display()))?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    for s in &out.skipped {
        eprintln!("skipped line {}: {}", s.line, s.reason);
    }
    Ok(out.dataset)
}

fn read_images(dir: &Path) -> anyhow::Result<Vec<ImageBuffer>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            decode_image(&bytes).map_err(|e| anyhow!("{}: {}", p.display(), e.message))
        })
        .collect()
}

fn save_text(path: &Path, text: &str) -> anyhow::Result<String> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(version_of(text))
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = Config::load_with_env(cli.config.as_deref())?;
    let taxonomy = cfg.taxonomy.taxonomy();
    match cli.command {
        Command::Serve { bind, storage_dir } => {
            if let Some(b) = bind {
                cfg.bind = b;
            }
            if let Some(d) = storage_dir {
                cfg.storage_dir = d;
            }
            serve(cfg)
        }
        Command::TrainQuality {
            out,
            images,
            synthetic,
            side,
            epochs,
            seed,
        } => {
            let corpus = match &images {
                Some(dir) => read_images(dir)?,
                None => (0..synthetic as u64).map(|s| skin_texture(seed.wrapping_add(s), side)).collect(),
            };
            let mut tc = QualityTrainConfig {
                seed,
                ..Default::default()
            };
            if let Some(t) = cfg.thresholds {
                tc.thresholds = t;
            }
            if let Some(e) = epochs {
                tc.epochs = e;
            }
            let trained = train_quality_model(&corpus, &default_distortion_grid(), &tc)?;
            let version = save_text(&out, &trained.model.to_text())?;
            print(&json!({
                "out": out,
                "version": version,
                "images": corpus.len(),
                "initial_loss": trained.log.initial_loss,
                "final_loss": trained.log.final_loss(),
            }))
        }
        Command::TrainBaseline {
            data,
            out,
            epochs,
            lr,
            seed,
        } => {
            let dataset = load_dataset(&data, &taxonomy)?;
            let mut tc = BaselineTrainConfig {
                seed,
                ..Default::default()
            };
            if let Some(e) = epochs {
                tc.epochs = e;
            }
            if let Some(l) = lr {
                tc.learning_rate = l;
            }
            let (clf, log) = train_baseline(&dataset.labeled_images()?, &taxonomy, &tc)?;
            let version = save_text(&out, &clf.to_text())?;
            print(&json!({
                "out": out,
                "name": model_name(&out),
                "version": version,
                "images": dataset.len(),
                "initial_loss": log.initial_loss,
                "final_loss": log.final_loss(),
            }))
        }
        Command::TrainFusion {
            data,
            members,
            tables,
            out,
            epochs,
            seed,
        } => {
            let dataset = load_dataset(&data, &taxonomy)?;
            let samples = fusion_samples(&dataset, &taxonomy, &members, &tables)?;
            let names: Vec<String> = if members.is_empty() { &tables } else { &members }
                .iter()
                .map(|p| model_name(p))
                .collect();
            let mut fc = FusionTrainConfig {
                seed,
                ..Default::default()
            };
            if let Some(e) = epochs {
                fc.epochs = e;
            }
            let (model, log) = train_fusion(&samples, Some(names.clone()), &fc)?;
            let version = save_text(&out, &model.to_text())?;
            print(&json!({
                "out": out,
                "version": version,
                "members": names,
                "samples": samples.len(),
                "initial_loss": log.initial_loss,
                "final_loss": log.final_loss(),
            }))
        }
        Command::Import { data, source } => {
            let dataset = load_dataset(&data, &taxonomy)?;
            let mut store = CaseStore::open(&cfg.storage_dir, taxonomy.clone(), cfg.store_config()?)?;
            let before = store.len();
            let skipped = dataset.materialize_cases(&mut store, &source)?;
            let skipped: Vec<_> = skipped
                .into_iter()
                .map(|(id, reason)| json!({"image_id": id, "reason": reason}))
                .collect();
            print(&json!({
                "imported": store.len() - before,
                "skipped": skipped,
                "cases": store.len(),
            }))
        }
        Command::Export { out } => {
            let store = CaseStore::open(&cfg.storage_dir, taxonomy, cfg.store_config()?)?;
            let dataset = Dataset::from_cases(&store)?;
            let manifest = export_dataset(&dataset, &out)?;
            print(&json!({"manifest": manifest, "images": dataset.len()}))
        }
        Command::Filter {
            data,
            out,
            quality_model,
            report,
        } => {
            let path = quality_model
                .or_else(|| cfg.models.quality.clone())
                .ok_or_else(|| anyhow!("no quality model: pass --quality-model or configure models.quality"))?;
            let mut model = QualityModel::load(&path)?;
            if let Some(t) = cfg.thresholds {
                model = model.with_thresholds(t)?;
            }
            let dataset = load_dataset(&data, &taxonomy)?;
            let outcome = quality_filter_dataset(&dataset, &model);
            if !outcome.kept.is_empty() {
                export_dataset(&outcome.kept, &out)?;
            }
            if let Some(r) = &report {
                save_text(r, &outcome.report())?;
            }
            print(&json!({
                "kept": outcome.kept.len(),
                "removed": outcome.removed,
                "out": out,
            }))
        }
        Command::Split {
            data,
            out,
            ratios,
            seed,
        } => {
            let [train, val, test]: [f64; 3] = ratios
                .try_into()
                .map_err(|_| anyhow!("--ratios takes three values"))?;
            let dataset = load_dataset(&data, &taxonomy)?;
            let split = split_dataset(&dataset, SplitRatios { train, val, test }, seed)?;
            let mut sizes = serde_json::Map::new();
            for (name, part) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
                if !part.is_empty() {
                    export_dataset(part, out.join(name))?;
                }
                sizes.insert(name.into(), part.len().into());
            }
            let mut assignments = String::from("image_id,partition\n");
            for (id, part) in split.assignments() {
                assignments.push_str(&format!("{id},{part}\n"));
            }
            save_text(&out.join("assignments.csv"), &assignments)?;
            print(&json!({"sizes": sizes, "out": out}))
        }
        Command::Eval { data, predictions } => {
            let dataset = load_dataset(&data, &taxonomy)?;
            let table = ProbabilityTable::read(&predictions)?;
            if table.n_classes() != taxonomy.len() {
                bail!(
                    "prediction table has {} classes, the taxonomy has {}",
                    table.n_classes(),
                    taxonomy.len()
                );
            }
            let mut preds = Vec::new();
            let mut labels = Vec::new();
            let mut missing = Vec::new();
            for row in dataset.rows() {
                match table.get(&row.image_id) {
                    Some(p) => {
                        preds.push(p.argmax());
                        labels.push(taxonomy.index_of(&row.diagnostic)?);
                    }
                    None => missing.push(row.image_id.clone()),
                }
            }
            if !missing.is_empty() {
                bail!("{} images have no prediction, first: {}", missing.len(), missing[0]);
            }
            let report = compute_metrics(&preds, &labels, taxonomy.len())?;
            print(&json!({
                "images": preds.len(),
                "classes": taxonomy.names().collect::<Vec<_>>(),
                "metrics": report,
            }))
        }
        Command::Predict { image, roi } => {
            let bytes = std::fs::read(&image).with_context(|| format!("reading {}", image.display()))?;
            let img = decode_image(&bytes).map_err(|e| anyhow!(e.message))?;
            let store_cfg = cfg.store_config()?;
            let input = match roi {
                Some(v) => {
                    let [center_x, center_y, radius]: [f64; 3] =
                        v.try_into().map_err(|_| anyhow!("--roi takes cx,cy,r"))?;
                    let crop = center_square_crop(&img, store_cfg.crop)?;
                    let circle = RoiCircle {
                        center_x,
                        center_y,
                        radius,
                    };
                    roi_crop(&crop, circle, store_cfg.roi_padding)?
                }
                None => img,
            };
            let models = ModelRegistry::load(&cfg.models, &taxonomy, cfg.thresholds)?;
            let out = models.classify(&input)?;
            let class_index = out.fusion.as_ref().map_or(out.vote, |f| f.argmax());
            let risk = taxonomy.risk_of_index(class_index)?;
            print(&json!({
                "members": out.members,
                "vote": out.vote,
                "fusion": out.fusion,
                "class_index": class_index,
                "label": taxonomy.name(class_index)?,
                "risk": risk,
                "binary_risk": risk.binary(),
                "model_version": out.model_version,
            }))
        }
        Command::Case(cmd) => {
            let svc = Service::from_config(&cfg)?;
            run_case(&svc, cmd)
        }
    }
}

fn fusion_samples(
    dataset: &Dataset,
    taxonomy: &ClassTaxonomy,
    members: &[PathBuf],
    tables: &[PathBuf],
) -> anyhow::Result<Vec<(EnsembleInput, usize)>> {
    if members.is_empty() == tables.is_empty() {
        bail!("pass exactly one of --members or --tables");
    }
    let mut samples = Vec::with_capacity(dataset.len());
    if !members.is_empty() {
        let clfs = members
            .iter()
            .map(|p| BaselineClassifier::load(p).with_context(|| format!("loading {}", p.display())))
            .collect::<anyhow::Result<Vec<_>>>()?;
        for item in dataset.items() {
            let probs = clfs
                .iter()
                .map(|c| c.predict(&item.image))
                .collect::<dermtriage_core::Result<Vec<_>>>()?;
            samples.push((EnsembleInput::new(probs)?, taxonomy.index_of(&item.row.diagnostic)?));
        }
    } else {
        let tabs = tables
            .iter()
            .map(|p| ProbabilityTable::read(p).with_context(|| format!("loading {}", p.display())))
            .collect::<anyhow::Result<Vec<_>>>()?;
        for row in dataset.rows() {
            let probs = tabs
                .iter()
                .zip(tables)
                .map(|(t, p)| {
                    t.get(&row.image_id)
                        .cloned()
                        .ok_or_else(|| anyhow!("{} has no row for {}", p.display(), row.image_id))
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            samples.push((EnsembleInput::new(probs)?, taxonomy.index_of(&row.diagnostic)?));
        }
    }
    Ok(samples)
}

fn run_case(svc: &Service, cmd: CaseCommand) -> anyhow::Result<()> {
    let result = match cmd {
        CaseCommand::Create { body } => svc.create_case(parse_body(&body)?).map(|r| json!(r)),
        CaseCommand::Show { id } => svc.get_case(&id).map(|r| json!(r)),
        CaseCommand::Capture {
            id,
            image,
            metadata,
            idempotency_key,
        } => {
            let bytes = std::fs::read(&image).with_context(|| format!("reading {}", image.display()))?;
            let meta: CaptureMeta = parse_body(&metadata)?;
            svc.submit_capture(&id, &bytes, meta, idempotency_key.as_deref())
                .map(|r| json!(r))
        }
        CaseCommand::Annotate { id, body } => svc.annotate(&id, parse_body(&body)?).map(|r| json!(r)),
        CaseCommand::Revise { id, body } => svc.revise_annotation(&id, parse_body(&body)?).map(|r| json!(r)),
        CaseCommand::Predict { id } => svc.predict_case(&id).map(|r| json!(r)),
        CaseCommand::Feedback { id, body } => svc.record_feedback(&id, parse_body(&body)?).map(|r| json!(r)),
        CaseCommand::Flag { id } => svc.flag(&id).map(|r| json!(r)),
        CaseCommand::OrderBiopsy { id, body } => svc.order_biopsy(&id, parse_body(&body)?).map(|r| json!(r)),
        CaseCommand::Histopathology { id, body } => {
            svc.attach_histopathology(&id, parse_body(&body)?).map(|r| json!(r))
        }
        CaseCommand::Close { id, body } => svc.close(&id, parse_body(&body)?).map(|r| json!(r)),
        CaseCommand::Queue { state } => svc.review_queue(state.as_deref()).map(|r| json!(r)),
        CaseCommand::Summary => svc.summary().map(|r| json!(r)),
        CaseCommand::Archive { out } => svc.export_archive().and_then(|bytes| {
            std::fs::write(&out, &bytes)
                .map_err(|e| crate::ApiError::internal(format!("writing {}: {e}", out.display())))?;
            Ok(json!({"out": out, "bytes": bytes.len()}))
        }),
    };
    match result {
        Ok(v) => print(&v),
        Err(e) => {
            print(&e)?;
            Err(anyhow!("{}", e))
        }
    }
}

fn serve(cfg: Config) -> anyhow::Result<()> {
    let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).try_init();
    let svc = Arc::new(Service::from_config(&cfg)?);
    let info = svc.model_info();
    tracing::info!(
        storage = %cfg.storage_dir.display(),
        classifiers = info.classifiers.len(),
        fusion = info.fusion.is_some(),
        quality = info.quality.is_some(),
        "store opened"
    );
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&cfg.bind)
            .await
            .with_context(|| format!("binding {}", cfg.bind))?;
        let addr = listener.local_addr()?;
        println!("listening on http://{addr}");
        std::io::stdout().flush()?;
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        crate::http::serve(listener, svc, cfg.max_upload_bytes, shutdown).await?;
        Ok(())
    })
}
