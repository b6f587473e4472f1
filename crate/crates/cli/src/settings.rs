//! Flag / config-file / default resolution.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::CommandFactory;
use vistrack::config::FlagConfig;
use vistrack::io::{read_json, read_jsonl, read_manifest};
use vistrack::pipeline::FilterSettings;
use vistrack::pmf::KRule;
use vistrack::synth::{SynthConfig, CLASSES_FILE, DETECTIONS_FILE, GROUND_TRUTH_FILE, MANIFEST_FILE};
use vistrack::tracking::{BaselineConfig, TrackerConfig};
use vistrack::{ClassEmbeddingTable, DetectionRecord, GroundTruthRecord, Manifest};

use crate::{Cli, FilterArgs, Inputs, Preset, Shared, Stage, TrackArgs};

pub struct Settings {
    pub file: FlagConfig,
}

impl Settings {
    /// Loads `--config` and rejects keys that are not flags of `subcommand`.
    pub fn load(shared: &Shared, subcommand: &str) -> Result<Self> {
        let file = match &shared.config {
            Some(path) => FlagConfig::load(path).with_context(|| format!("loading config {}", path.display()))?,
            None => FlagConfig::default(),
        };
        if subcommand != "synth" {
            let cmd = Cli::command();
            let sub = cmd
                .find_subcommand(subcommand)
                .expect("subcommand is registered");
            let allowed: Vec<&str> = sub
                .get_arguments()
                .filter_map(|a| a.get_long())
                .filter(|l| *l != "config")
                .collect();
            file.check_keys(&allowed)?;
        }
        Ok(Settings { file })
    }

    pub fn pick<T: serde::de::DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(self.file.pick(flag, key, default)?)
    }

    pub fn switch(&self, flag: bool, key: &str) -> Result<bool> {
        Ok(flag || self.file.get::<bool>(key)?.unwrap_or(false))
    }

    pub fn path(&self, flag: &Option<PathBuf>, key: &str) -> Result<Option<PathBuf>> {
        Ok(match flag {
            Some(p) => Some(p.clone()),
            None => self.file.get(key)?,
        })
    }

    pub fn jobs(&self, shared: &Shared) -> Result<Option<usize>> {
        let jobs = self.file.pick(shared.jobs.map(Some), "jobs", None)?;
        if jobs == Some(0) {
            bail!("--jobs must be at least 1");
        }
        Ok(jobs)
    }

    pub fn stage(&self, flag: Option<Stage>) -> Result<Stage> {
        if let Some(s) = flag {
            return Ok(s);
        }
        match self.file.get::<String>("stage")? {
            None => Ok(Stage::All),
            Some(s) => clap::ValueEnum::from_str(&s, true).map_err(|_| anyhow::anyhow!("config: unknown stage `{s}`")),
        }
    }

    pub fn filter(&self, a: &FilterArgs) -> Result<FilterSettings> {
        let d = FilterSettings::default();
        Ok(FilterSettings {
            objectness_min: self.pick(a.objectness_min, "objectness-min", d.objectness_min)?,
            class_score_min: self.pick(a.class_score_min, "class-score-min", d.class_score_min)?,
            tau: Some(self.pick(a.tau, "tau", d.tau.unwrap_or(0.7))?),
            k_rule: KRule {
                divisor: self.pick(a.pmf_cluster_divisor, "pmf-cluster-divisor", d.k_rule.divisor)?,
                max_k: self.pick(a.pmf_max_k, "pmf-max-k", d.k_rule.max_k)?,
            },
            seed: self.pick(a.seed, "seed", d.seed)?,
        })
    }

    pub fn tracker(&self, a: &TrackArgs) -> Result<TrackerConfig> {
        let d = TrackerConfig::default();
        Ok(TrackerConfig {
            num_slots: self.pick(a.num_slots, "num-slots", d.num_slots)?,
            lambda: self.pick(a.lambda, "lambda", d.lambda)?,
            top_k: self.pick(a.top_k, "top-k", d.top_k)?,
            hold_last_embedding: self.pick(a.hold_last_embedding, "hold-last-embedding", d.hold_last_embedding)?,
        })
    }

    pub fn baseline(&self, a: &TrackArgs) -> Result<BaselineConfig> {
        let d = BaselineConfig::default();
        Ok(BaselineConfig {
            appearance_weight: self.pick(a.appearance_weight, "appearance-weight", d.appearance_weight)?,
            iou_weight: self.pick(a.iou_weight, "iou-weight", d.iou_weight)?,
            max_age: self.pick(a.max_age, "max-age", d.max_age)?,
            max_cost: self.pick(a.max_cost, "max-cost", d.max_cost)?,
            top_k: self.pick(a.top_k, "top-k", d.top_k)?,
        })
    }

    pub fn inputs(&self, inputs: &Inputs) -> Result<InputPaths> {
        Ok(InputPaths {
            dataset: self.path(&inputs.dataset, "dataset")?,
            manifest: self.path(&inputs.manifest, "manifest")?,
            detections: self.path(&inputs.detections, "detections")?,
            classes: self.path(&inputs.classes, "classes")?,
            ground_truth: self.path(&inputs.ground_truth, "ground-truth")?,
        })
    }

    /// Preset fields overlaid with the config file's generator fields.
    pub fn synth_config(&self, preset: Option<Preset>) -> Result<SynthConfig> {
        let preset = match preset {
            Some(p) => p,
            None => match self.file.get::<String>("preset")? {
                None => Preset::Default,
                Some(s) => clap::ValueEnum::from_str(&s, true).map_err(|_| anyhow::anyhow!("config: unknown preset `{s}`"))?,
            },
        };
        let base = match preset {
            Preset::Default => SynthConfig::default(),
            Preset::Noiseless => SynthConfig::noiseless(),
            Preset::NoisyLabels => SynthConfig::noisy_labels(),
            Preset::Occlusion => SynthConfig::occlusion(),
        };
        let serde_json::Value::Object(mut fields) = serde_json::to_value(base)? else {
            unreachable!("struct serializes to an object")
        };
        let overrides = self.file.without(&["seed", "out", "jobs", "preset"]);
        for key in overrides.keys() {
            let field = key.replace('-', "_");
            if !fields.contains_key(&field) {
                bail!("config: unknown generator field `{key}`");
            }
            fields.insert(field, overrides.get::<serde_json::Value>(key)?.unwrap_or_default());
        }
        serde_json::from_value(serde_json::Value::Object(fields)).context("config: bad generator field")
    }
}

pub struct InputPaths {
    dataset: Option<PathBuf>,
    manifest: Option<PathBuf>,
    detections: Option<PathBuf>,
    classes: Option<PathBuf>,
    ground_truth: Option<PathBuf>,
}

impl InputPaths {
    fn resolve(&self, explicit: &Option<PathBuf>, flag: &str, default_name: &str) -> Result<PathBuf> {
        match (explicit, &self.dataset) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(dir)) => Ok(dir.join(default_name)),
            (None, None) => bail!("missing --{flag} (or --dataset)"),
        }
    }

    pub fn manifest(&self) -> Result<Manifest> {
        let path = self.resolve(&self.manifest, "manifest", MANIFEST_FILE)?;
        read_manifest(&path).with_context(|| format!("reading manifest {}", path.display()))
    }

    pub fn detections(&self) -> Result<Vec<DetectionRecord>> {
        let path = self.resolve(&self.detections, "detections", DETECTIONS_FILE)?;
        read_records(&path, "detections")
    }

    pub fn classes(&self) -> Result<ClassEmbeddingTable> {
        let path = self.resolve(&self.classes, "classes", CLASSES_FILE)?;
        read_json(&path).with_context(|| format!("reading class table {}", path.display()))
    }

    pub fn ground_truth(&self) -> Result<Vec<GroundTruthRecord>> {
        let path = self.resolve(&self.ground_truth, "ground-truth", GROUND_TRUTH_FILE)?;
        read_records(&path, "ground truth")
    }

    /// Ground truth when given explicitly or present in `--dataset`.
    pub fn optional_ground_truth(&self) -> Result<Option<Vec<GroundTruthRecord>>> {
        match (&self.ground_truth, &self.dataset) {
            (Some(_), _) => self.ground_truth().map(Some),
            (None, Some(dir)) if dir.join(GROUND_TRUTH_FILE).exists() => self.ground_truth().map(Some),
            _ => Ok(None),
        }
    }
}

pub fn read_records<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<Vec<T>> {
    read_jsonl(path).with_context(|| format!("reading {what} {}", path.display()))
}
