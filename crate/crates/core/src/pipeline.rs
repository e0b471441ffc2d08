//! Config-driven experiments: generate, train, decode and evaluate into one
//! directory named after the seed and the config hash.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decode::{decode_entries, write_scores, ConstraintSpec, Vocabulary, DEFAULT_PROMPT};
use crate::detsim::{
    class_counts, generate_dataset, read_dataset, DatasetEntry, DetectorGeometry, DiffusionModel, GenerationSpec,
    GeneratorConfig,
};
use crate::evalx::{
    emit_report, evaluate_model, generalization_eval, MetricsReport, PredictionRecord, ReportFormat, ResolutionMode,
};
use crate::model::{build_model, Model, ModelConfig};
use crate::trainer::{
    save_checkpoint, split_dataset, split_sizes, train_with, EpochRecord, SampleValidator, Samples, Split,
    TrainConfig, TrainHistory,
};
use crate::NUM_CLASSES;

/// Overrides the default output root for `run`.
pub const OUT_ROOT_ENV: &str = "NUPIX_OUT_ROOT";
pub const DEFAULT_OUT_ROOT: &str = "runs";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid experiment config:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
}

impl PipelineError {
    fn stage(stage: &'static str) -> impl FnOnce(Box<dyn std::error::Error>) -> Self {
        move |e| Self::Stage {
            stage,
            message: e.to_string(),
        }
    }
}

fn at<T, E: std::error::Error + 'static>(stage: &'static str, r: Result<T, E>) -> Result<T, PipelineError> {
    r.map_err(|e| PipelineError::stage(stage)(Box::new(e)))
}

fn io_at<T>(stage: &'static str, path: &Path, r: std::io::Result<T>) -> Result<T, PipelineError> {
    r.map_err(|e| PipelineError::Stage {
        stage,
        message: format!("{}: {e}", path.display()),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Priors {
    pub nue_cc: f64,
    pub numu_cc: f64,
    pub nc: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            nue_cc: 1.0,
            numu_cc: 1.0,
            nc: 1.0,
        }
    }
}

impl Priors {
    pub fn as_array(&self) -> [f64; NUM_CLASSES] {
        [self.nue_cc, self.numu_cc, self.nc]
    }
}

/// Optional replacements for the default detector geometry.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extent: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anode_x: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cathode_x: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub voxel_pitch_mm: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pixel_pitch_mm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub events: usize,
    pub priors: Priors,
    /// Pixel map side length; also sets the model input size.
    pub image_size: usize,
    pub calibration_events: usize,
    pub percentile: f64,
    pub geometry: GeometryOverrides,
    pub generator: GeneratorConfig,
    pub diffusion: DiffusionModel,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            events: 3600,
            priors: Priors::default(),
            image_size: 64,
            calibration_events: 1000,
            percentile: 99.5,
            geometry: GeometryOverrides::default(),
            generator: GeneratorConfig::default(),
            diffusion: DiffusionModel::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeSection {
    pub temperature: f64,
    pub beam_width: usize,
}

impl Default for DecodeSection {
    fn default() -> Self {
        Self {
            temperature: crate::decode::DEFAULT_TEMPERATURE,
            beam_width: crate::decode::DEFAULT_BEAM_WIDTH,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub downsample: Vec<usize>,
    pub mode: ResolutionMode,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            downsample: vec![1, 2],
            mode: ResolutionMode::Rerender,
        }
    }
}

/// One experiment. The global seed drives generation, the split, weight
/// initialisation and batch order; `train.seed` and `model.init_seed` are
/// overwritten by it, as is `model.input_size` by `dataset.image_size`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeSection,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    /// The desk experiment: 3,600 balanced events at 64 x 64, split
    /// 3000/300/300.
    fn default() -> Self {
        let mut cfg = Self {
            seed: 1,
            dataset: DatasetSection::default(),
            model: ModelConfig::desk(),
            train: TrainConfig {
                split: crate::trainer::SplitFractions {
                    train: 10.0 / 12.0,
                    val: 1.0 / 12.0,
                    test: 1.0 / 12.0,
                },
                ..TrainConfig::desk()
            },
            decode: DecodeSection::default(),
            eval: EvalSection::default(),
        };
        cfg.resolve();
        cfg
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Parse(e.to_string()))?;
        cfg.resolve();
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            PipelineError::Parse(m) => PipelineError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Propagates the global seed and image size into the sections.
    pub fn resolve(&mut self) {
        self.train.seed = self.seed;
        self.model.init_seed = self.seed;
        self.model.input_size = self.dataset.image_size;
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises to toml")
    }

    pub fn geometry(&self) -> Result<DetectorGeometry, crate::detsim::DetsimError> {
        let base = DetectorGeometry::default();
        let o = &self.dataset.geometry;
        DetectorGeometry::new(
            o.extent.unwrap_or(base.extent),
            o.anode_x.clone().unwrap_or(base.anode_x),
            o.cathode_x.clone().unwrap_or(base.cathode_x),
            o.voxel_pitch_mm.unwrap_or(base.voxel_pitch_mm),
            o.pixel_pitch_mm.unwrap_or(base.pixel_pitch_mm),
            self.dataset.image_size,
        )
    }

    pub fn generation_spec(&self) -> Result<GenerationSpec, crate::detsim::DetsimError> {
        Ok(GenerationSpec {
            seed: self.seed,
            events: self.dataset.events,
            priors: self.dataset.priors.as_array(),
            calibration_events: self.dataset.calibration_events,
            percentile: self.dataset.percentile,
            generator: self.dataset.generator.clone(),
            diffusion: self.dataset.diffusion,
            geometry: self.geometry()?,
        })
    }

    /// Every violation across all sections.
    pub fn violations(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let d = &self.dataset;
        if d.events == 0 {
            errs.push("dataset.events: must be positive".into());
        }
        let p = d.priors.as_array();
        if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            errs.push(format!("dataset.priors: entries must be finite and non-negative, got {p:?}"));
        } else if p.iter().sum::<f64>() <= 0.0 {
            errs.push("dataset.priors: priors sum to 0".into());
        }
        if d.calibration_events == 0 {
            errs.push("dataset.calibration_events: must be positive".into());
        }
        if !(d.percentile > 0.0 && d.percentile <= 100.0) {
            errs.push(format!("dataset.percentile: must lie in (0, 100], got {}", d.percentile));
        }
        match self.geometry() {
            Err(e) => errs.push(format!("dataset.geometry: {e}")),
            Ok(g) => {
                if let Err(e) = d.generator.validate(&g) {
                    errs.push(format!("dataset.generator: {e}"));
                }
            }
        }
        if let Err(e) = d.diffusion.validate() {
            errs.push(format!("dataset.diffusion: {e}"));
        }
        if let Err(crate::model::ModelError::Config(list)) = self.model.validate() {
            errs.extend(list.into_iter().map(|m| format!("model: {m}")));
        }
        errs.extend(self.train.violations().into_iter().map(|m| format!("train: {m}")));
        if d.events > 0 && self.train.split.violations().is_empty() {
            if let Err(e) = split_sizes(d.events, self.train.split) {
                errs.push(format!("train.split: {e}"));
            }
        }
        if !(self.decode.temperature > 0.0 && self.decode.temperature.is_finite()) {
            errs.push(format!("decode.temperature: must be positive, got {}", self.decode.temperature));
        }
        if self.decode.beam_width == 0 {
            errs.push("decode.beam_width: must be at least 1".into());
        }
        if self.eval.downsample.is_empty() {
            errs.push("eval.downsample: list at least one factor".into());
        }
        for &f in &self.eval.downsample {
            if f == 0 || d.image_size % f != 0 {
                errs.push(format!("eval.downsample: factor {f} does not divide image size {}", d.image_size));
            } else if self.eval.mode == ResolutionMode::Direct && f != 1 {
                errs.push(format!(
                    "eval.downsample: factor {f} needs mode = \"rerender\" for a {0}x{0} model",
                    d.image_size
                ));
            }
        }
        errs
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let errs = self.violations();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::Config(errs))
        }
    }

    /// Digest of the resolved config.
    pub fn config_hash(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("config serialises");
        u64::from_le_bytes(Sha256::digest(&json)[..8].try_into().expect("8 bytes"))
    }

    pub fn run_dir_name(&self) -> String {
        format!("seed{}-{:016x}", self.seed, self.config_hash())
    }
}

/// `--out-root`, then the environment, then `runs`.
pub fn resolve_out_root(cli: Option<&Path>) -> PathBuf {
    cli.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT))
}

/// Human-readable plan without running anything.
pub fn describe(cfg: &ExperimentConfig) -> Result<String, PipelineError> {
    cfg.validate()?;
    let counts = at("describe", class_counts(cfg.dataset.events, cfg.dataset.priors.as_array()))?;
    let (tr, va, te) = at("describe", split_sizes(cfg.dataset.events, cfg.train.split))?;
    let model = at("describe", Model::new(cfg.model.clone()))?;
    let mut s = String::new();
    use std::fmt::Write as _;
    writeln!(s, "run directory: {}", cfg.run_dir_name()).unwrap();
    writeln!(
        s,
        "dataset: {} events (nue_cc {}, numu_cc {}, nc {}), {}x{} pixel maps",
        cfg.dataset.events, counts[0], counts[1], counts[2], cfg.dataset.image_size, cfg.dataset.image_size
    )
    .unwrap();
    writeln!(s, "split: train {tr} / val {va} / test {te}").unwrap();
    writeln!(
        s,
        "model: input {}x{}, {} parameters, shared branch {}",
        cfg.model.input_size,
        cfg.model.input_size,
        model.parameter_count(),
        cfg.model.shared_branch
    )
    .unwrap();
    writeln!(
        s,
        "train: lr {}, batch {}, max epochs {}, patience {}",
        cfg.train.lr, cfg.train.batch_size, cfg.train.max_epochs, cfg.train.patience
    )
    .unwrap();
    writeln!(s, "decode: temperature {}, beam width {}", cfg.decode.temperature, cfg.decode.beam_width).unwrap();
    writeln!(s, "eval: downsample factors {:?}, mode {:?}", cfg.eval.downsample, cfg.eval.mode).unwrap();
    writeln!(s, "\nresolved config:\n{}", cfg.to_toml()).unwrap();
    Ok(s)
}

/// Model trained on the train split with validation-based early stopping.
pub struct TrainOutput {
    pub model: Model,
    pub history: TrainHistory,
    pub split: Split,
}

pub fn train_stage(
    entries: &[DatasetEntry],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutput, PipelineError> {
    let classes: Vec<_> = entries.iter().map(|e| e.record.class).collect();
    let split = at("train", split_dataset(&classes, train_cfg.split, train_cfg.seed))?;
    let model = at("train", build_model(model_cfg, model_cfg.init_seed))?;
    let train_set = Samples::from_entries(entries, &split.train);
    let mut validator = SampleValidator(Samples::from_entries(entries, &split.val));
    let (model, history) = at("train", train_with(model, &train_set, &mut validator, train_cfg, on_epoch))?;
    Ok(TrainOutput { model, history, split })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationResult {
    pub factor: usize,
    pub accuracy: f64,
    pub macro_auc: f64,
    /// Accuracy minus the factor-1 accuracy.
    pub accuracy_delta: f64,
}

/// Deterministic outcome of a run; written to `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_dir: String,
    pub events: usize,
    pub split_sizes: [usize; 3],
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub test: MetricsScalars,
    pub decoded: MetricsScalars,
    pub generalization: Vec<GeneralizationResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsScalars {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl MetricsScalars {
    fn of(r: &MetricsReport) -> Self {
        let s = r.scalars();
        Self {
            names: s.iter().map(|p| p.0.to_string()).collect(),
            values: s.iter().map(|p| p.1).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }
}

/// Where each artifact of a run lives.
#[derive(Clone, Debug)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("model.ckpt")
    }
    pub fn arch(&self) -> PathBuf {
        self.root.join("arch.toml")
    }
    pub fn history(&self) -> PathBuf {
        self.root.join("history.jsonl")
    }
    pub fn split(&self) -> PathBuf {
        self.root.join("split.json")
    }
    pub fn scores(&self) -> PathBuf {
        self.root.join("scores.tsv")
    }
    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.json")
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
}

fn emit_all(report: &MetricsReport, dir: &Path) -> Result<(), PipelineError> {
    for f in ReportFormat::ALL {
        at("eval", emit_report(report, dir, f))?;
    }
    Ok(())
}

/// Runs every stage. The config is validated before anything is written.
pub fn run_pipeline(
    cfg: &ExperimentConfig,
    out_root: &Path,
    log: &mut dyn FnMut(&str),
) -> Result<(RunSummary, RunLayout), PipelineError> {
    cfg.validate()?;
    let layout = RunLayout {
        root: out_root.join(cfg.run_dir_name()),
    };
    io_at("gen", &layout.root, fs::create_dir_all(&layout.root))?;
    io_at("gen", &layout.config(), fs::write(layout.config(), cfg.to_toml()))?;

    let t = Instant::now();
    let spec = at("gen", cfg.generation_spec())?;
    if layout.data().exists() {
        io_at("gen", &layout.data(), fs::remove_dir_all(layout.data()))?;
    }
    let summary = at("gen", generate_dataset(&spec, layout.data()))?;
    log(&format!(
        "gen: {} events {:?} in {:.1}s",
        summary.events,
        summary.class_counts,
        t.elapsed().as_secs_f64()
    ));
    let (_, entries) = at("gen", read_dataset(layout.data()))?;

    let t = Instant::now();
    let out = train_stage(&entries, &cfg.model, &cfg.train, &mut |r| {
        log(&format!(
            "train: epoch {:3} train loss {:.4} val loss {:.4} val acc {:.3} ({:.1}s)",
            r.epoch, r.train_loss, r.val_loss, r.val_accuracy, r.seconds
        ))
    })?;
    at("train", save_checkpoint(&out.model, layout.checkpoint()))?;
    io_at("train", &layout.arch(), fs::write(layout.arch(), out.model.config().to_toml()))?;
    at("train", out.history.write_jsonl(layout.history()))?;
    let split_json = serde_json::to_string(&out.split).expect("split serialises");
    io_at("train", &layout.split(), fs::write(layout.split(), split_json))?;
    log(&format!(
        "train: best epoch {} of {} in {:.1}s",
        out.history.best_epoch,
        out.history.stopped_epoch,
        t.elapsed().as_secs_f64()
    ));

    let test: Vec<DatasetEntry> = out.split.test.iter().map(|&i| entries[i].clone()).collect();
    let t = Instant::now();
    let vocab = Vocabulary::standard();
    let constraint = at("decode", ConstraintSpec::standard(&vocab))?;
    let prompt = at("decode", vocab.encode(DEFAULT_PROMPT))?;
    let scores = at(
        "decode",
        decode_entries(
            &out.model,
            &test,
            &vocab,
            &constraint,
            &prompt,
            cfg.decode.temperature,
            cfg.decode.beam_width,
        ),
    )?;
    at("decode", write_scores(layout.scores(), &scores))?;
    log(&format!("decode: {} events in {:.1}s", scores.len(), t.elapsed().as_secs_f64()));

    let t = Instant::now();
    let (_, base) = at("eval", evaluate_model(&out.model, &test, "test"))?;
    emit_all(&base, &layout.report("report"))?;
    let decoded_records: Vec<PredictionRecord> = scores.iter().map(PredictionRecord::from).collect();
    let decoded = at("eval", MetricsReport::build("test-decoded", &decoded_records, 1))?;
    emit_all(&decoded, &layout.report("report-decoded"))?;
    let mut generalization = Vec::new();
    for &factor in &cfg.eval.downsample {
        let (_, r) = at(
            "eval",
            generalization_eval(&out.model, &test, factor, cfg.eval.mode, &format!("test-downsample{factor}")),
        )?;
        if factor != 1 {
            emit_all(&r, &layout.report(&format!("report-downsample{factor}")))?;
        }
        generalization.push(GeneralizationResult {
            factor,
            accuracy: r.aggregates.accuracy,
            macro_auc: r.macro_auc,
            accuracy_delta: r.aggregates.accuracy - base.aggregates.accuracy,
        });
    }
    log(&format!("eval: done in {:.1}s", t.elapsed().as_secs_f64()));

    let run = RunSummary {
        run_dir: cfg.run_dir_name(),
        events: entries.len(),
        split_sizes: [out.split.train.len(), out.split.val.len(), out.split.test.len()],
        best_epoch: out.history.best_epoch,
        stopped_epoch: out.history.stopped_epoch,
        test: MetricsScalars::of(&base),
        decoded: MetricsScalars::of(&decoded),
        generalization,
    };
    let json = serde_json::to_string_pretty(&run).expect("summary serialises");
    io_at("eval", &layout.summary(), fs::write(layout.summary(), json))?;
    Ok((run, layout))
}
