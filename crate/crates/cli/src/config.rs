//! The run configuration: a TOML file, overridden by command-line flags.

use std::path::{Path, PathBuf};

use airrag::{
    actions::{ActionConfig, Mode, NPreset, PromptTemplates},
    clients::HttpConfig,
    eval::PipelineConfig,
    tree::SearchConfig,
    verify::VerificationMethod,
};
use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Deterministic in-process model over a simulated world.
    #[default]
    Scripted,
    /// Chat-completions, embedding and retrieval services over HTTP.
    Http,
}

/// Upper bound for `jobs`.
pub const MAX_JOBS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: Mode,
    pub rollouts: u32,
    pub n_preset: NPreset,
    pub q_div: bool,
    pub l_max: u64,
    pub k_docs: usize,
    pub seed: u64,
    pub method: VerificationMethod,
    pub backend: Backend,
    /// Overrides every action's sampling temperature.
    pub temperature: Option<f64>,
    pub exploration_weight: f64,
    pub max_depth: usize,
    pub max_qt_ra_iterations: usize,
    /// Parallel questions during `eval` and `synth`.
    pub jobs: usize,
    /// World file for the scripted backend; the built-in bridge world if unset.
    pub world: Option<PathBuf>,
    /// Corpus file (`doc_id<TAB>text`) served by the in-memory retriever.
    /// With the HTTP backend and no corpus, retrieval goes over HTTP.
    pub corpus: Option<PathBuf>,
    /// Directory with `say.txt`, `qt.txt`, `ra.txt`, `sa.txt` and optional
    /// `<action>.examples.txt` files.
    pub templates_dir: Option<PathBuf>,
    /// External candidate answers for blender mode.
    pub candidates: Vec<String>,
    pub dataset: Option<PathBuf>,
    /// Evaluate a fixed-seed subset of this many questions.
    pub limit: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub tree_out: Option<PathBuf>,
    pub http: HttpConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let search = SearchConfig::default();
        let actions = ActionConfig::default();
        Self {
            mode: Mode::Full,
            rollouts: search.rollouts,
            n_preset: NPreset::UniformN1,
            q_div: false,
            l_max: search.l_max,
            k_docs: actions.docs_per_retrieval,
            seed: 0,
            method: VerificationMethod::Jcd,
            backend: Backend::Scripted,
            temperature: None,
            exploration_weight: search.exploration_weight,
            max_depth: actions.max_depth,
            max_qt_ra_iterations: actions.max_qt_ra_iterations,
            jobs: std::thread::available_parallelism().map_or(1, |n| n.get().min(8)),
            world: None,
            corpus: None,
            templates_dir: None,
            candidates: Vec::new(),
            dataset: None,
            limit: None,
            out_dir: None,
            tree_out: None,
            http: HttpConfig::default(),
        }
    }
}

/// Flags shared by every subcommand. Each one mirrors a config-file key.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML config file; flags override its values.
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub rollouts: Option<u32>,
    #[arg(long, value_parser = parse_preset)]
    pub n_preset: Option<NPreset>,
    /// Raise top-p and temperature to 1 for SAY and QT.
    #[arg(long)]
    pub q_div: Option<bool>,
    #[arg(long)]
    pub l_max: Option<u64>,
    #[arg(long)]
    pub k_docs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_method)]
    pub method: Option<VerificationMethod>,
    #[arg(long, value_enum)]
    pub backend: Option<Backend>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub exploration_weight: Option<f64>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub max_qt_ra_iterations: Option<usize>,
    #[arg(long, short = 'j')]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub world: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub templates_dir: Option<PathBuf>,
    /// External candidate answer for blender mode (repeatable).
    #[arg(long = "candidate")]
    pub candidates: Vec<String>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub tree_out: Option<PathBuf>,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

fn parse_preset(s: &str) -> Result<NPreset, String> {
    s.parse()
}

fn parse_method(s: &str) -> Result<VerificationMethod, String> {
    s.parse()
}

impl ConfigArgs {
    /// File values (or defaults), then flag overrides, then validation.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    cfg.$field = v;
                }
            )*};
        }
        take!(mode, rollouts, n_preset, q_div, l_max, k_docs, seed, method, backend, exploration_weight, max_depth, max_qt_ra_iterations, jobs);
        macro_rules! take_opt {
            ($($field:ident),*) => {$(
                if self.$field.is_some() {
                    cfg.$field = self.$field.clone();
                }
            )*};
        }
        take_opt!(temperature, world, corpus, templates_dir, dataset, limit, out_dir, tree_out);
        if !self.candidates.is_empty() {
            cfg.candidates = self.candidates.clone();
        }
        if let Some(url) = &self.base_url {
            cfg.http.base_url = url.clone();
        }
        if let Some(model) = &self.model {
            cfg.http.model = model.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn load_file(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.jobs == 0 || self.jobs > MAX_JOBS {
            bail!("jobs must be in 1..={MAX_JOBS}, got {}", self.jobs);
        }
        if self.limit == Some(0) {
            bail!("limit must be positive");
        }
        self.pipeline_without_templates()
            .search
            .validate()
            .map_err(|e| anyhow::anyhow!("invalid config: {e}"))
    }

    fn pipeline_without_templates(&self) -> PipelineConfig {
        let mut actions = ActionConfig::with_preset(self.n_preset, self.q_div);
        if let Some(t) = self.temperature {
            actions = actions.with_temperature(t);
        }
        actions.mode = self.mode;
        actions.docs_per_retrieval = self.k_docs;
        actions.max_depth = self.max_depth;
        actions.max_qt_ra_iterations = self.max_qt_ra_iterations;
        PipelineConfig {
            search: SearchConfig {
                rollouts: self.rollouts,
                exploration_weight: self.exploration_weight,
                actions,
                l_max: self.l_max,
                rng_seed: self.seed,
            },
            method: self.method,
            seed: self.seed,
            candidates: self.candidates.clone(),
        }
    }

    /// The library-level pipeline this configuration describes.
    pub fn pipeline(&self) -> Result<PipelineConfig> {
        let mut pipeline = self.pipeline_without_templates();
        if let Some(dir) = &self.templates_dir {
            pipeline.search.actions.templates = PromptTemplates::load_dir(dir)
                .with_context(|| format!("loading templates from {}", dir.display()))?;
        }
        Ok(pipeline)
    }

    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "rollouts = 7\nmode = \"lite\"\n[http]\nmodel = \"m\"\n").unwrap();
        let args = ConfigArgs {
            config: Some(path.clone()),
            rollouts: Some(2),
            ..Default::default()
        };
        let cfg = args.resolve().unwrap();
        assert_eq!((cfg.rollouts, cfg.mode, cfg.http.model.as_str()), (2, Mode::Lite, "m"));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "rollout = 7\n").unwrap();
        assert!(load_file(&path).is_err());
        let args = ConfigArgs { rollouts: Some(0), ..Default::default() };
        assert!(args.resolve().is_err());
        let args = ConfigArgs { jobs: Some(0), ..Default::default() };
        assert!(args.resolve().is_err());
    }

    #[test]
    fn default_roundtrips_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), cfg);
    }
}
