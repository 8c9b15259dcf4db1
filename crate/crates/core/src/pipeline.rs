//! File-based orchestration of the full workflow.
//!
//! Stages run in order `synth → preprocess → pretrain → extract-features →
//! motion-features → transfer-fit → stage → eval`. Each reads and writes
//! files under the output directory and records the SHA-256 of its inputs
//! and outputs, together with a hash of the configuration it depends on, in
//! `manifest.json`. A stage whose record still matches is skipped.
//!
//! Layout (`night_000` etc. name the nights):
//!
//! | stage | writes |
//! |---|---|
//! | synth | `synth/<night>.{ecg,thor,hr,br}.sig`, `synth/<night>.hypnogram.csv` (5-class), `synth/<night>.cfg` (provenance), `synth/masks/*.mask`, optionally `synth/<night>.flow` |
//! | preprocess | `preprocess/<night>.{heart,breath}.sig` |
//! | pretrain | `pretrain/model.ckpt`, `pretrain/history.csv` |
//! | extract-features | `features/<night>.features.csv`, `features/<night>.direct.csv` |
//! | motion-features | `motion/<night>.motion.csv` |
//! | transfer-fit | `transfer/forest.bin`, `transfer/columns.txt` |
//! | stage | `stage/<night>.csv` for test nights |
//! | eval | `eval/report.json` |
//!
//! Nights are split by index into training, validation and test sets, in
//! that order. When no flow file was written the motion stage regenerates
//! the synthetic flow from the night's provenance file.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ConfigFile;
use crate::forest::{Dataset, Forest, ForestConfig};
use crate::metrics::{evaluate, map_stages, EvalReport, Hypnogram, Strategy};
use crate::model::{patchify, InputMode, Model, ModelConfig, PatchedInputs};
use crate::motion::{
    build_feature_grid, FeatureSelection, FlowFile, FlowSource, MaskSet, MotionGrid,
};
use crate::signal::io::{read_signal, write_signal, SignalFormat};
use crate::synth::{generate_night, synthetic_masks, SynthConfig};
use crate::tiling::{infer_long, DEFAULT_STEP_EPOCHS};
use crate::train::{train, Recording, TrainConfig};
use crate::transfer::{design_columns, features_from_csv, features_to_csv, transfer_dataset};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Synth,
    Preprocess,
    Pretrain,
    ExtractFeatures,
    MotionFeatures,
    TransferFit,
    Stage,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Synth,
        Stage::Preprocess,
        Stage::Pretrain,
        Stage::ExtractFeatures,
        Stage::MotionFeatures,
        Stage::TransferFit,
        Stage::Stage,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Preprocess => "preprocess",
            Stage::Pretrain => "pretrain",
            Stage::ExtractFeatures => "extract-features",
            Stage::MotionFeatures => "motion-features",
            Stage::TransferFit => "transfer-fit",
            Stage::Stage => "stage",
            Stage::Eval => "eval",
        }
    }

    /// Parses `all` or a comma-separated list of stage names.
    pub fn parse_list(text: &str) -> Result<Vec<Stage>> {
        if text.trim().eq_ignore_ascii_case("all") {
            return Ok(Stage::ALL.to_vec());
        }
        let mut stages = text
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Stage>>>()?;
        stages.sort();
        stages.dedup();
        Ok(stages)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s || st.name().replace('-', "_") == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

/// Every setting the pipeline depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    pub stages: Vec<Stage>,
    pub strategy: Strategy,
    pub val_nights: usize,
    pub test_nights: usize,
    /// Tiling step for whole-night inference.
    pub step_epochs: usize,
    pub use_motion: bool,
    /// Store synthetic flow fields on disk instead of regenerating them.
    pub write_flow: bool,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub motion: FeatureSelection,
    pub forest: ForestConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let strategy = Strategy::FourClass;
        Self {
            out_dir: PathBuf::from("artifacts"),
            stages: Stage::ALL.to_vec(),
            strategy,
            val_nights: 2,
            test_nights: 4,
            step_epochs: DEFAULT_STEP_EPOCHS,
            use_motion: true,
            write_flow: false,
            synth: SynthConfig::default(),
            model: ModelConfig {
                n_classes: strategy.n_classes(),
                ..Default::default()
            },
            train: TrainConfig::default(),
            motion: FeatureSelection::default(),
            forest: ForestConfig::default(),
        }
    }
}

const PIPELINE_KEYS: [&str; 8] = [
    "out_dir",
    "stages",
    "strategy",
    "val_nights",
    "test_nights",
    "step_epochs",
    "use_motion",
    "write_flow",
];

impl PipelineConfig {
    /// Reads `[pipeline]`, `[synth]`, `[model]`, `[train]`, `[motion]` and
    /// `[forest]`. The class count follows the strategy and the model's
    /// sequence length follows `[train] seq_len`.
    pub fn from_config(cfg: &ConfigFile) -> Result<Self> {
        let mut c = Self::default();
        cfg.check_known("pipeline", &PIPELINE_KEYS)?;
        if let Some(dir) = cfg.raw("pipeline", "out_dir") {
            c.out_dir = PathBuf::from(dir);
        }
        if let Some(list) = cfg.raw("pipeline", "stages") {
            c.stages = Stage::parse_list(list)?;
        }
        cfg.read_into("pipeline", "strategy", &mut c.strategy)?;
        cfg.read_into("pipeline", "val_nights", &mut c.val_nights)?;
        cfg.read_into("pipeline", "test_nights", &mut c.test_nights)?;
        cfg.read_into("pipeline", "step_epochs", &mut c.step_epochs)?;
        cfg.read_into("pipeline", "use_motion", &mut c.use_motion)?;
        cfg.read_into("pipeline", "write_flow", &mut c.write_flow)?;
        c.synth = SynthConfig::from_config(cfg, "synth")?;
        c.model = ModelConfig::from_config(cfg, "model")?;
        c.train = TrainConfig::from_config(cfg, "train")?;
        c.motion = FeatureSelection::from_config(cfg, "motion")?;
        c.forest = ForestConfig::from_config(cfg, "forest")?;
        c.sync();
        c.validate()?;
        Ok(c)
    }

    /// Loads a config file; a relative `out_dir` is taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut c = Self::from_config(&ConfigFile::load(path)?)?;
        if c.out_dir.is_relative() {
            if let Some(parent) = path.parent() {
                c.out_dir = parent.join(&c.out_dir);
            }
        }
        Ok(c)
    }

    pub fn write_config(&self, cfg: &mut ConfigFile) {
        cfg.set("pipeline", "out_dir", self.out_dir.display());
        cfg.set(
            "pipeline",
            "stages",
            self.stages
                .iter()
                .map(|s| s.name())
                .collect::<Vec<_>>()
                .join(","),
        );
        cfg.set("pipeline", "strategy", self.strategy);
        cfg.set("pipeline", "val_nights", self.val_nights);
        cfg.set("pipeline", "test_nights", self.test_nights);
        cfg.set("pipeline", "step_epochs", self.step_epochs);
        cfg.set("pipeline", "use_motion", self.use_motion);
        cfg.set("pipeline", "write_flow", self.write_flow);
        self.synth.write_config(cfg, "synth");
        self.model.write_config(cfg, "model");
        self.train.write_config(cfg, "train");
        self.motion.write_config(cfg, "motion");
        self.forest.write_config(cfg, "forest");
    }

    /// Re-derives the settings that follow from others.
    pub fn sync(&mut self) {
        self.model.n_classes = self.strategy.n_classes();
        self.model.seq_len = self.train.seq_len;
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.motion.validate()?;
        if self.model.n_classes != self.strategy.n_classes()
            || self.model.seq_len != self.train.seq_len
        {
            return Err(Error::Config(
                "model settings out of sync; call `sync`".into(),
            ));
        }
        if self.val_nights == 0
            || self.test_nights == 0
            || self.val_nights + self.test_nights >= self.synth.n_nights
        {
            return Err(Error::Config(format!(
                "{} nights cannot be split into training, {} validation and {} test nights",
                self.synth.n_nights, self.val_nights, self.test_nights
            )));
        }
        if self.step_epochs == 0 || self.step_epochs > self.train.seq_len {
            return Err(Error::Config(format!(
                "step_epochs must lie in 1..={}",
                self.train.seq_len
            )));
        }
        Ok(())
    }

    pub fn train_nights(&self) -> std::ops::Range<usize> {
        0..self.synth.n_nights - self.val_nights - self.test_nights
    }

    pub fn val_range(&self) -> std::ops::Range<usize> {
        let t = self.train_nights().end;
        t..t + self.val_nights
    }

    pub fn test_range(&self) -> std::ops::Range<usize> {
        self.synth.n_nights - self.test_nights..self.synth.n_nights
    }

    /// Nights the transfer head is fitted on.
    pub fn fit_range(&self) -> std::ops::Range<usize> {
        0..self.val_range().end
    }
}

pub fn night_name(i: usize) -> String {
    format!("night_{i:03}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            tool: "sleepstage".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            stages: BTreeMap::new(),
        }
    }
}

impl Manifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn load(out_dir: &Path) -> Result<Self> {
        let path = out_dir.join(Self::FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        let m: Manifest = serde_json::from_slice(&fs::read(&path)?)?;
        Ok(m)
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        fs::write(
            out_dir.join(Self::FILE),
            serde_json::to_string_pretty(self)? + "\n",
        )?;
        Ok(())
    }
}

/// `report.json`: transfer-head and direct-apply agreement on the test nights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub strategy: String,
    pub n_classes: usize,
    pub input_mode: String,
    pub use_motion: bool,
    pub test_nights: Vec<String>,
    pub transfer: EvalReport,
    pub direct: EvalReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    UpToDate,
}

/// Inputs, outputs and configuration fingerprint of one stage.
struct Plan {
    inputs: Vec<(PathBuf, Stage)>,
    outputs: Vec<PathBuf>,
    config: String,
    seeds: BTreeMap<String, u64>,
}

/// Runs the pipeline with its output directory and manifest.
pub struct Pipeline {
    pub config: PipelineConfig,
    manifest: Manifest,
}

fn section_text(write: impl FnOnce(&mut ConfigFile)) -> String {
    let mut c = ConfigFile::default();
    write(&mut c);
    c.to_text()
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        fs::create_dir_all(&config.out_dir)?;
        let manifest = Manifest::load(&config.out_dir)?;
        Ok(Self { config, manifest })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.config.out_dir.join(rel)
    }

    fn nights(&self) -> Vec<String> {
        (0..self.config.synth.n_nights).map(night_name).collect()
    }

    fn mode(&self) -> InputMode {
        self.config.model.input_mode
    }

    /// Raw signal names needed by the configured input mode.
    fn raw_channels(&self) -> (&'static str, &'static str) {
        let m = self.mode();
        (
            if m.heart_is_rate() { "hr" } else { "ecg" },
            if m.breath_is_rate() { "br" } else { "thor" },
        )
    }

    fn plan(&self, stage: Stage) -> Plan {
        let c = &self.config;
        let nights = self.nights();
        let split = format!(
            "val_nights={} test_nights={} n_nights={}",
            c.val_nights, c.test_nights, c.synth.n_nights
        );
        let mut seeds = BTreeMap::new();
        let (inputs, outputs, config): (Vec<(PathBuf, Stage)>, Vec<PathBuf>, String) = match stage {
            Stage::Synth => {
                seeds.insert("synth".into(), c.synth.seed);
                let mut out = Vec::new();
                for n in &nights {
                    for ext in [
                        "ecg.sig",
                        "thor.sig",
                        "hr.sig",
                        "br.sig",
                        "hypnogram.csv",
                        "cfg",
                    ] {
                        out.push(PathBuf::from(format!("synth/{n}.{ext}")));
                    }
                    if c.write_flow {
                        out.push(PathBuf::from(format!("synth/{n}.flow")));
                    }
                }
                for r in ["H", "B", "O"] {
                    out.push(PathBuf::from(format!("synth/masks/{r}.mask")));
                }
                (
                    vec![],
                    out,
                    section_text(|f| c.synth.write_config(f, "synth"))
                        + &format!("write_flow={}", c.write_flow),
                )
            }
            Stage::Preprocess => {
                let (h, b) = self.raw_channels();
                let inputs = nights
                    .iter()
                    .flat_map(|n| [format!("synth/{n}.{h}.sig"), format!("synth/{n}.{b}.sig")])
                    .map(|p| (PathBuf::from(p), Stage::Synth))
                    .collect();
                let outputs = nights
                    .iter()
                    .flat_map(|n| {
                        [
                            format!("preprocess/{n}.heart.sig"),
                            format!("preprocess/{n}.breath.sig"),
                        ]
                    })
                    .map(PathBuf::from)
                    .collect();
                (inputs, outputs, format!("input_mode={}", self.mode()))
            }
            Stage::Pretrain => {
                seeds.insert("train".into(), c.train.seed);
                let mut inputs = Vec::new();
                for i in c.fit_range() {
                    let n = &nights[i];
                    inputs.push((
                        PathBuf::from(format!("preprocess/{n}.heart.sig")),
                        Stage::Preprocess,
                    ));
                    inputs.push((
                        PathBuf::from(format!("preprocess/{n}.breath.sig")),
                        Stage::Preprocess,
                    ));
                    inputs.push((
                        PathBuf::from(format!("synth/{n}.hypnogram.csv")),
                        Stage::Synth,
                    ));
                }
                let cfg = section_text(|f| {
                    c.model.write_config(f, "model");
                    c.train.write_config(f, "train");
                });
                (
                    inputs,
                    vec!["pretrain/model.ckpt".into(), "pretrain/history.csv".into()],
                    format!("{cfg}strategy={}\n{split}", c.strategy),
                )
            }
            Stage::ExtractFeatures => {
                let mut inputs = vec![(PathBuf::from("pretrain/model.ckpt"), Stage::Pretrain)];
                let mut outputs = Vec::new();
                for n in &nights {
                    inputs.push((
                        PathBuf::from(format!("preprocess/{n}.heart.sig")),
                        Stage::Preprocess,
                    ));
                    inputs.push((
                        PathBuf::from(format!("preprocess/{n}.breath.sig")),
                        Stage::Preprocess,
                    ));
                    outputs.push(PathBuf::from(format!("features/{n}.features.csv")));
                    outputs.push(PathBuf::from(format!("features/{n}.direct.csv")));
                }
                (inputs, outputs, format!("step_epochs={}", c.step_epochs))
            }
            Stage::MotionFeatures => {
                let mut inputs: Vec<(PathBuf, Stage)> = ["H", "B", "O"]
                    .iter()
                    .map(|r| (PathBuf::from(format!("synth/masks/{r}.mask")), Stage::Synth))
                    .collect();
                let mut outputs = Vec::new();
                for n in &nights {
                    inputs.push((PathBuf::from(format!("synth/{n}.cfg")), Stage::Synth));
                    inputs.push((
                        PathBuf::from(format!("synth/{n}.hypnogram.csv")),
                        Stage::Synth,
                    ));
                    if c.write_flow {
                        inputs.push((PathBuf::from(format!("synth/{n}.flow")), Stage::Synth));
                    }
                    outputs.push(PathBuf::from(format!("motion/{n}.motion.csv")));
                }
                (
                    inputs,
                    outputs,
                    section_text(|f| c.motion.write_config(f, "motion")),
                )
            }
            Stage::TransferFit => {
                seeds.insert("forest".into(), c.forest.seed);
                let mut inputs = Vec::new();
                for i in c.fit_range() {
                    let n = &nights[i];
                    inputs.push((
                        PathBuf::from(format!("features/{n}.features.csv")),
                        Stage::ExtractFeatures,
                    ));
                    inputs.push((
                        PathBuf::from(format!("synth/{n}.hypnogram.csv")),
                        Stage::Synth,
                    ));
                    if c.use_motion {
                        inputs.push((
                            PathBuf::from(format!("motion/{n}.motion.csv")),
                            Stage::MotionFeatures,
                        ));
                    }
                }
                let cfg = section_text(|f| c.forest.write_config(f, "forest"));
                (
                    inputs,
                    vec!["transfer/forest.bin".into(), "transfer/columns.txt".into()],
                    format!(
                        "{cfg}strategy={}\nuse_motion={}\n{split}",
                        c.strategy, c.use_motion
                    ),
                )
            }
            Stage::Stage => {
                let mut inputs = vec![(PathBuf::from("transfer/forest.bin"), Stage::TransferFit)];
                let mut outputs = Vec::new();
                for i in c.test_range() {
                    let n = &nights[i];
                    inputs.push((
                        PathBuf::from(format!("features/{n}.features.csv")),
                        Stage::ExtractFeatures,
                    ));
                    if c.use_motion {
                        inputs.push((
                            PathBuf::from(format!("motion/{n}.motion.csv")),
                            Stage::MotionFeatures,
                        ));
                    }
                    outputs.push(PathBuf::from(format!("stage/{n}.csv")));
                }
                (
                    inputs,
                    outputs,
                    format!(
                        "strategy={}\nuse_motion={}\n{split}",
                        c.strategy, c.use_motion
                    ),
                )
            }
            Stage::Eval => {
                let mut inputs = Vec::new();
                for i in c.test_range() {
                    let n = &nights[i];
                    inputs.push((PathBuf::from(format!("stage/{n}.csv")), Stage::Stage));
                    inputs.push((
                        PathBuf::from(format!("features/{n}.direct.csv")),
                        Stage::ExtractFeatures,
                    ));
                    inputs.push((
                        PathBuf::from(format!("synth/{n}.hypnogram.csv")),
                        Stage::Synth,
                    ));
                }
                (
                    inputs,
                    vec!["eval/report.json".into()],
                    format!("strategy={}\n{split}", c.strategy),
                )
            }
        };
        Plan {
            inputs,
            outputs,
            config: sha256_hex(config.as_bytes()),
            seeds,
        }
    }

    fn input_hashes(&self, plan: &Plan) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for (rel, producer) in &plan.inputs {
            let path = self.path(rel);
            if !path.exists() {
                return Err(Error::MissingArtifact {
                    path,
                    stage: producer.name().into(),
                });
            }
            out.insert(rel.display().to_string(), hash_file(&path)?);
        }
        Ok(out)
    }

    fn up_to_date(
        &self,
        stage: Stage,
        plan: &Plan,
        inputs: &BTreeMap<String, String>,
    ) -> Result<bool> {
        let Some(rec) = self.manifest.stages.get(stage.name()) else {
            return Ok(false);
        };
        if rec.config_hash != plan.config
            || &rec.inputs != inputs
            || rec.outputs.len() != plan.outputs.len()
        {
            return Ok(false);
        }
        for rel in &plan.outputs {
            let path = self.path(rel);
            match rec.outputs.get(&rel.display().to_string()) {
                Some(h) if path.exists() && *h == hash_file(&path)? => {}
                _ => return Ok(false),
            }
        }
        Ok(true)
    }

    /// Runs one stage unless its manifest record is still current.
    pub fn run_stage(&mut self, stage: Stage, force: bool) -> Result<StageStatus> {
        let plan = self.plan(stage);
        let inputs = self.input_hashes(&plan)?;
        if !force && self.up_to_date(stage, &plan, &inputs)? {
            log::info!("{stage}: up to date");
            return Ok(StageStatus::UpToDate);
        }
        log::info!("{stage}: running");
        match stage {
            Stage::Synth => self.synth()?,
            Stage::Preprocess => self.preprocess()?,
            Stage::Pretrain => self.pretrain()?,
            Stage::ExtractFeatures => self.extract_features()?,
            Stage::MotionFeatures => self.motion_features()?,
            Stage::TransferFit => self.transfer_fit()?,
            Stage::Stage => self.stage()?,
            Stage::Eval => self.eval()?,
        }
        let mut outputs = BTreeMap::new();
        for rel in &plan.outputs {
            outputs.insert(rel.display().to_string(), hash_file(&self.path(rel))?);
        }
        self.manifest.stages.insert(
            stage.name().into(),
            StageRecord {
                config_hash: plan.config,
                seeds: plan.seeds,
                inputs,
                outputs,
            },
        );
        self.manifest.save(&self.config.out_dir)?;
        Ok(StageStatus::Ran)
    }

    /// Runs the configured stages in order.
    pub fn run(&mut self, force: bool) -> Result<Vec<(Stage, StageStatus)>> {
        let stages = self.config.stages.clone();
        stages
            .into_iter()
            .map(|s| Ok((s, self.run_stage(s, force)?)))
            .collect()
    }

    fn dir(&self, name: &str) -> Result<PathBuf> {
        let d = self.path(name);
        fs::create_dir_all(&d)?;
        Ok(d)
    }

    fn reference(&self, night: &str) -> Result<Hypnogram> {
        let five = Hypnogram::from_csv(
            &fs::read_to_string(self.path(format!("synth/{night}.hypnogram.csv")))?,
            Strategy::FiveClass,
        )?;
        map_stages(&five, self.config.strategy)
    }

    fn synth(&self) -> Result<()> {
        let dir = self.dir("synth")?;
        let cfg = &self.config.synth;
        synthetic_masks().save_dir(&dir.join("masks"))?;
        (0..cfg.n_nights)
            .into_par_iter()
            .try_for_each(|i| -> Result<()> {
                let night = generate_night(cfg, i)?;
                let n = night_name(i);
                for (sig, ext) in [
                    (&night.ecg, "ecg"),
                    (&night.thor, "thor"),
                    (&night.hr, "hr"),
                    (&night.br, "br"),
                ] {
                    write_signal(
                        &dir.join(format!("{n}.{ext}.sig")),
                        sig,
                        SignalFormat::Binary,
                    )?;
                }
                fs::write(
                    dir.join(format!("{n}.hypnogram.csv")),
                    night.hypnogram.to_csv(),
                )?;
                let mut prov = ConfigFile::default();
                cfg.write_config(&mut prov, "synth");
                prov.set("night", "index", i);
                prov.set("night", "seed", night.seed);
                fs::write(dir.join(format!("{n}.cfg")), prov.to_text())?;
                if self.config.write_flow {
                    crate::motion::write_flow(
                        &dir.join(format!("{n}.flow")),
                        &mut night.flow.clone(),
                    )?;
                }
                Ok(())
            })
    }

    fn preprocess(&self) -> Result<()> {
        let dir = self.dir("preprocess")?;
        let (h, b) = self.raw_channels();
        self.nights().par_iter().try_for_each(|n| -> Result<()> {
            let heart = read_signal(&self.path(format!("synth/{n}.{h}.sig")))?;
            let breath = read_signal(&self.path(format!("synth/{n}.{b}.sig")))?;
            let heart = if h == "ecg" {
                crate::signal::derive_heart_waveform(&heart)?
            } else {
                heart
            };
            let breath = if b == "thor" {
                crate::signal::derive_breathing_waveform(&breath)?
            } else {
                breath
            };
            write_signal(
                &dir.join(format!("{n}.heart.sig")),
                &heart,
                SignalFormat::Binary,
            )?;
            write_signal(
                &dir.join(format!("{n}.breath.sig")),
                &breath,
                SignalFormat::Binary,
            )?;
            Ok(())
        })
    }

    fn inputs(&self, night: &str) -> Result<PatchedInputs> {
        let heart = read_signal(&self.path(format!("preprocess/{night}.heart.sig")))?;
        let breath = read_signal(&self.path(format!("preprocess/{night}.breath.sig")))?;
        patchify(&heart, &breath, self.mode())
    }

    fn recordings(&self, range: std::ops::Range<usize>) -> Result<Vec<Recording>> {
        let five = Strategy::FiveClass;
        range
            .map(|i| {
                let n = night_name(i);
                let hyp = Hypnogram::from_csv(
                    &fs::read_to_string(self.path(format!("synth/{n}.hypnogram.csv")))?,
                    five,
                )?;
                Recording::new(n, self.inputs(&night_name(i))?, &hyp, self.config.strategy)
            })
            .collect()
    }

    fn pretrain(&self) -> Result<()> {
        let dir = self.dir("pretrain")?;
        let c = &self.config;
        let train_set = self.recordings(c.train_nights())?;
        let val_set = self.recordings(c.val_range())?;
        let model = Model::<f32>::new(c.model.clone(), c.train.seed)?;
        let outcome = train(model, &train_set, &val_set, &c.train)?;
        outcome.model.save(&dir.join("model.ckpt"))?;
        fs::write(dir.join("history.csv"), outcome.history.to_csv())?;
        Ok(())
    }

    fn extract_features(&self) -> Result<()> {
        let dir = self.dir("features")?;
        let model = Model::<f32>::load(&self.path("pretrain/model.ckpt"))?;
        if model.config.input_mode != self.mode()
            || model.config.n_classes != self.config.strategy.n_classes()
        {
            return Err(Error::Config(
                "checkpoint does not match the configured input mode and strategy".into(),
            ));
        }
        for n in self.nights() {
            let inputs = self.inputs(&n)?;
            let long = infer_long(&model, &inputs, self.config.step_epochs)?;
            fs::write(
                dir.join(format!("{n}.features.csv")),
                features_to_csv(&long.features()),
            )?;
            let direct = Hypnogram::new(long.classes(), self.config.strategy)?;
            fs::write(dir.join(format!("{n}.direct.csv")), direct.to_csv())?;
        }
        Ok(())
    }

    fn motion_features(&self) -> Result<()> {
        let dir = self.dir("motion")?;
        let masks = MaskSet::load_dir(&self.path("synth/masks"))?;
        self.nights().par_iter().try_for_each(|n| -> Result<()> {
            let n_epochs = Hypnogram::from_csv(
                &fs::read_to_string(self.path(format!("synth/{n}.hypnogram.csv")))?,
                Strategy::FiveClass,
            )?
            .len();
            let flow_path = self.path(format!("synth/{n}.flow"));
            let mut source: Box<dyn FlowSource> = if flow_path.exists() {
                Box::new(FlowFile::open(&flow_path)?)
            } else {
                let prov = ConfigFile::load(&self.path(format!("synth/{n}.cfg")))?;
                let cfg = SynthConfig::from_config(&prov, "synth")?;
                let index: usize = prov
                    .get("night", "index")?
                    .ok_or_else(|| Error::Config(format!("{n}.cfg has no [night] index")))?;
                Box::new(generate_night(&cfg, index)?.flow)
            };
            let grid = build_feature_grid(source.as_mut(), &masks, n_epochs, &self.config.motion)?;
            fs::write(dir.join(format!("{n}.motion.csv")), grid.to_csv())?;
            Ok(())
        })
    }

    fn transfer_data(&self, night: &str) -> Result<(ndarray::Array2<f32>, Option<MotionGrid>)> {
        let z = features_from_csv(&fs::read_to_string(
            self.path(format!("features/{night}.features.csv")),
        )?)?;
        let motion = if self.config.use_motion {
            Some(MotionGrid::from_csv(&fs::read_to_string(
                self.path(format!("motion/{night}.motion.csv")),
            )?)?)
        } else {
            None
        };
        Ok((z, motion))
    }

    fn transfer_fit(&self) -> Result<()> {
        let dir = self.dir("transfer")?;
        let mut parts = Vec::new();
        let mut columns = Vec::new();
        for i in self.config.fit_range() {
            let n = night_name(i);
            let (z, motion) = self.transfer_data(&n)?;
            columns = design_columns(z.nrows(), motion.as_ref());
            parts.push(transfer_dataset(&z, motion.as_ref(), &self.reference(&n)?)?);
        }
        let data = Dataset::concat(&parts.iter().collect::<Vec<_>>())?;
        let forest = Forest::fit(&data, &self.config.forest)?;
        forest.save(&dir.join("forest.bin"))?;
        fs::write(dir.join("columns.txt"), columns.join("\n") + "\n")?;
        Ok(())
    }

    fn stage(&self) -> Result<()> {
        let dir = self.dir("stage")?;
        let forest = Forest::load(&self.path("transfer/forest.bin"))?;
        for i in self.config.test_range() {
            let n = night_name(i);
            let (z, motion) = self.transfer_data(&n)?;
            let x = crate::transfer::design_matrix(&z, motion.as_ref())?;
            let h = Hypnogram::new(forest.predict_rows(&x)?, self.config.strategy)?;
            fs::write(dir.join(format!("{n}.csv")), h.to_csv())?;
        }
        Ok(())
    }

    fn eval(&self) -> Result<()> {
        let dir = self.dir("eval")?;
        let s = self.config.strategy;
        let mut transfer = Vec::new();
        let mut direct = Vec::new();
        let mut names = Vec::new();
        for i in self.config.test_range() {
            let n = night_name(i);
            let reference = self.reference(&n)?;
            let staged =
                Hypnogram::from_csv(&fs::read_to_string(self.path(format!("stage/{n}.csv")))?, s)?;
            let d = Hypnogram::from_csv(
                &fs::read_to_string(self.path(format!("features/{n}.direct.csv")))?,
                s,
            )?;
            transfer.push((reference.clone(), staged));
            direct.push((reference, d));
            names.push(n);
        }
        let report = PipelineReport {
            strategy: s.name().into(),
            n_classes: s.n_classes(),
            input_mode: self.mode().name().into(),
            use_motion: self.config.use_motion,
            test_nights: names,
            transfer: evaluate(&transfer, s)?,
            direct: evaluate(&direct, s)?,
        };
        fs::write(
            dir.join("report.json"),
            serde_json::to_string_pretty(&report)? + "\n",
        )?;
        Ok(())
    }
}

/// Loads `report.json` from an output directory.
pub fn load_report(out_dir: &Path) -> Result<PipelineReport> {
    let path = out_dir.join("eval/report.json");
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path,
            stage: Stage::Eval.name().into(),
        });
    }
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_lists_parse_in_order() {
        assert_eq!(Stage::parse_list("all").unwrap(), Stage::ALL.to_vec());
        assert_eq!(
            Stage::parse_list("eval, synth,transfer_fit").unwrap(),
            vec![Stage::Synth, Stage::TransferFit, Stage::Eval]
        );
        assert!(Stage::parse_list("synth,render").is_err());
    }

    #[test]
    fn splits_partition_the_nights() {
        let mut c = PipelineConfig::default();
        c.synth.n_nights = 20;
        assert_eq!(
            (c.train_nights(), c.val_range(), c.test_range()),
            (0..14, 14..16, 16..20)
        );
        c.test_nights = 18;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_round_trips() {
        let mut c = PipelineConfig {
            strategy: Strategy::WakeNremRem,
            use_motion: false,
            ..Default::default()
        };
        c.train.seq_len = 120;
        c.step_epochs = 30;
        c.sync();
        let mut f = ConfigFile::default();
        c.write_config(&mut f);
        assert_eq!(PipelineConfig::from_config(&f).unwrap(), c);
        f.set("pipeline", "colour", "blue");
        assert!(PipelineConfig::from_config(&f).is_err());
    }

    #[test]
    fn missing_upstream_names_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = PipelineConfig {
            out_dir: dir.path().to_path_buf(),
            ..Default::default()
        };
        c.synth.n_nights = 8;
        let mut p = Pipeline::new(c).unwrap();
        match p.run_stage(Stage::Pretrain, false) {
            Err(Error::MissingArtifact { stage, .. }) => assert_eq!(stage, "preprocess"),
            other => panic!("{other:?}"),
        }
        match p.run_stage(Stage::Eval, false) {
            Err(Error::MissingArtifact { stage, .. }) => assert_eq!(stage, "stage"),
            other => panic!("{other:?}"),
        }
    }
}
