use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use morphprobe::morphdata::{Feature, FeatureSchema, Language, SamplingConfig};
use morphprobe::probes::{KMeansConfig, ProbeTask, SuiteConfig, TrainConfig};

/// Which agree builder to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgreeKind {
    /// Subject noun + verb.
    Pair,
    /// Det-Adj-Noun subject + verb.
    Rich,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundlePaths {
    pub pretrained: Option<PathBuf>,
    pub random: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2: f64,
    pub kmeans_restarts: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            l2: t.l2,
            kmeans_restarts: KMeansConfig::default().restarts,
        }
    }
}

fn default_tasks() -> Vec<ProbeTask> {
    ProbeTask::ALL.to_vec()
}

fn default_layers() -> Vec<usize> {
    (0..=12).collect()
}

fn default_target() -> usize {
    SamplingConfig::default().target_per_value
}

fn default_split() -> f64 {
    SamplingConfig::default().split
}

fn default_agree_cap() -> usize {
    2000
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// One experiment, read from a TOML file. Relative paths are resolved
/// against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub language: String,
    /// JSON schema replacing the built-in one for `language`.
    #[serde(default)]
    pub schema: Option<PathBuf>,
    pub treebanks: Vec<PathBuf>,
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    #[serde(default)]
    pub bundles: Option<BundlePaths>,
    #[serde(default)]
    pub features: Vec<Feature>,
    #[serde(default = "default_tasks")]
    pub tasks: Vec<ProbeTask>,
    #[serde(default = "default_layers")]
    pub layers: Vec<usize>,
    /// Extra probe runs restricted to these ambiguity-degree sets.
    #[serde(default)]
    pub ambiguity_filters: Vec<BTreeSet<usize>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_target")]
    pub target_per_value: usize,
    #[serde(default = "default_split")]
    pub split: f64,
    #[serde(default = "default_agree_cap")]
    pub agree_cap: usize,
    /// Defaults to `pair` for English and `rich` otherwise.
    #[serde(default)]
    pub agree_kind: Option<AgreeKind>,
    /// Use this agree CSV instead of the one `build-datasets` writes.
    #[serde(default)]
    pub agree_dataset: Option<PathBuf>,
    /// Permutation p-values for correlations over few features.
    #[serde(default)]
    pub exact_p: bool,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config = Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve(base);
        Ok(config)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.treebanks.iter_mut().for_each(fix);
        self.schema.iter_mut().for_each(fix);
        self.lexicon.iter_mut().for_each(fix);
        self.agree_dataset.iter_mut().for_each(fix);
        if let Some(b) = &mut self.bundles {
            b.pretrained.iter_mut().for_each(fix);
            b.random.iter_mut().for_each(fix);
        }
        fix(&mut self.out);
    }

    /// Canonical text of the effective configuration; its digest goes into
    /// every manifest.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn schema(&self) -> Result<FeatureSchema> {
        match &self.schema {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading schema {}", path.display()))?;
                Ok(FeatureSchema::from_json(&text)?)
            }
            None => Ok(FeatureSchema::builtin(self.language.parse::<Language>()?)),
        }
    }

    /// Configured features, checked against the schema.
    pub fn features(&self, schema: &FeatureSchema) -> Result<Vec<Feature>> {
        if self.features.is_empty() {
            bail!("no features configured");
        }
        for f in &self.features {
            if schema.values(*f).is_none() {
                bail!("feature {f} is not part of the {} schema", schema.language);
            }
        }
        Ok(self.features.clone())
    }

    pub fn agree_kind(&self) -> AgreeKind {
        self.agree_kind.unwrap_or(if self.language.eq_ignore_ascii_case("English") { AgreeKind::Pair } else { AgreeKind::Rich })
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig { target_per_value: self.target_per_value, split: self.split, seed: self.seed }
    }

    pub fn suite(&self, ambiguity_filter: Option<BTreeSet<usize>>) -> SuiteConfig {
        let train = TrainConfig {
            learning_rate: self.train.learning_rate,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            l2: self.train.l2,
            ..TrainConfig::default()
        };
        let kmeans = KMeansConfig { restarts: self.train.kmeans_restarts, ..KMeansConfig::default() };
        SuiteConfig {
            language: self.language.clone(),
            tasks: self.tasks.clone(),
            layers: self.layers.clone(),
            ambiguity_filter,
            seed: self.seed,
            train,
            kmeans,
        }
    }

    pub fn bundle(&self, which: Variant) -> Option<&Path> {
        let b = self.bundles.as_ref()?;
        match which {
            Variant::Pretrained => b.pretrained.as_deref(),
            Variant::Random => b.random.as_deref(),
        }
    }

    /// Checks everything that does not depend on earlier pipeline stages.
    pub fn validate(&self) -> Result<()> {
        let schema = self.schema()?;
        schema.validate()?;
        self.features(&schema)?;
        if !(self.split > 0.0 && self.split < 1.0) {
            bail!("split must lie strictly between 0 and 1, got {}", self.split);
        }
        if self.target_per_value == 0 {
            bail!("target_per_value must be positive");
        }
        if self.tasks.is_empty() {
            bail!("no probe tasks configured");
        }
        let mut paths: Vec<&Path> = self.treebanks.iter().map(PathBuf::as_path).collect();
        paths.extend(self.lexicon.as_deref());
        paths.extend(self.agree_dataset.as_deref());
        paths.extend(self.bundle(Variant::Pretrained));
        paths.extend(self.bundle(Variant::Random));
        let missing: Vec<String> = paths.iter().filter(|p| !p.exists()).map(|p| p.display().to_string()).collect();
        if !missing.is_empty() {
            bail!("missing input files: {}", missing.join(", "));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Pretrained,
    Random,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Pretrained => "pretrained",
            Variant::Random => "random",
        }
    }
}
