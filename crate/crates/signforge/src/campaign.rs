//! Campaign orchestration: one TOML config drives five commands
//! (gen-scenes, dict, optimize, eval, export) that persist their artifacts
//! under an output directory, append a run ledger, and share a query cache.
//!
//! Reproducibility contract: given identical config, seed, and a warm
//! cache, every command writes byte-identical artifacts (the ledger is a
//! log, not an artifact). The effective config is digested after CLI
//! overrides, so the digest changes exactly when semantic content does.

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use std::error::Error as StdError;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};

use crate::ceopt::{
    optimize, CandidatePoint, CeError, CellPartition, CeSettings, Coordinate, SearchSpace,
};
use crate::dictgen::{generate_dictionary, DictGenConfig, DictGenError, NaiveTheta};
use crate::domain::{
    Dictionary, DictionaryEntry, DomainError, Image, LabelSpace, PixelRect, Scenario, Split,
    TargetPrompt,
};
use crate::eval::{
    benign_label, compute_asr, render_report, report_records, transfer_eval, EvalError, EvalResult,
};
use crate::objective::{objective_score, ObjectiveError, QueryHarness};
use crate::oracle::{
    CachedOracle, HttpOracle, HttpOracleConfig, Oracle, OracleError, ScriptedOracle,
    SimulatedOracle,
};
use crate::render::{
    natural_canvas, rasterize_sign_layers, AttackParams, PlacementSpec, RenderError, SignSpec,
};
use crate::scenegen::{
    generate_synthetic_scene, simulate_trajectory, split_counts, NoiseModel, SceneGenError,
    SceneObject, SceneSpec, TrajectoryModel,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_ORACLE: i32 = 3;
pub const EXIT_BUDGET: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{action} {path}: {source}")]
    Io {
        action: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("could not parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{what} not found at {path}; {hint}")]
    MissingArtifact {
        what: &'static str,
        path: PathBuf,
        hint: &'static str,
    },
    #[error("output directory is locked by {path}; remove the file if no other run is active")]
    Locked { path: PathBuf },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    SceneGen(#[from] SceneGenError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    DictGen(#[from] DictGenError),
    #[error(transparent)]
    CeOpt(#[from] CeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn objective_exit_code(e: &ObjectiveError) -> i32 {
    match e {
        ObjectiveError::Oracle { .. } => EXIT_ORACLE,
        _ => EXIT_VALIDATION,
    }
}

impl CliError {
    /// Distinct process exit codes: validation failures, oracle failures,
    /// and budget exhaustion are distinguishable to scripts.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Oracle(_) => EXIT_ORACLE,
            CliError::Objective(e) => objective_exit_code(e),
            CliError::DictGen(DictGenError::AttackerLlm(_)) => EXIT_ORACLE,
            CliError::DictGen(DictGenError::Scoring(e)) => objective_exit_code(e),
            CliError::Eval(EvalError::AllRunsFailed { .. }) => EXIT_ORACLE,
            CliError::CeOpt(CeError::Evaluation(source)) => source
                .downcast_ref::<ObjectiveError>()
                .map_or(EXIT_VALIDATION, objective_exit_code),
            _ => EXIT_VALIDATION,
        }
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    Simulated,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackerKind {
    Scripted,
    Remote,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSection {
    pub name: String,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynonymRule {
    pub label: String,
    pub forms: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelsSection {
    pub decisions: Vec<String>,
    #[serde(default)]
    pub synonyms: Vec<SynonymRule>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSection {
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeywordRule {
    pub word: String,
    pub label: String,
}

fn default_min_contrast() -> f64 {
    4.5
}

fn default_min_area_fraction() -> f64 {
    0.005
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    pub kind: OracleKind,
    /// Legibility thresholds for the simulated oracle.
    #[serde(default = "default_min_contrast")]
    pub min_contrast: f64,
    #[serde(default = "default_min_area_fraction")]
    pub min_area_fraction: f64,
    /// Sign keywords and the decision each one triggers; also shipped to
    /// the oracle as scene metadata.
    #[serde(default)]
    pub keywords: Vec<KeywordRule>,
    /// Remote endpoint settings; required when kind = "remote". The API
    /// key itself always comes from the named environment variable.
    #[serde(default)]
    pub remote: Option<HttpOracleConfig>,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection {
            kind: OracleKind::Simulated,
            min_contrast: default_min_contrast(),
            min_area_fraction: default_min_area_fraction(),
            keywords: Vec::new(),
            remote: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerSection {
    pub kind: AttackerKind,
    /// Scripted replies, cycled in order; required when kind = "scripted".
    #[serde(default)]
    pub replies: Vec<String>,
    #[serde(default)]
    pub remote: Option<HttpOracleConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionarySection {
    pub k: usize,
    pub max_words: usize,
    /// Attacker-LLM call budget; defaults to 3k.
    #[serde(default)]
    pub proposal_budget: Option<usize>,
    pub task_summary: String,
    pub vehicle_characteristics: String,
    pub objective: String,
    pub capabilities: String,
}

fn default_max_iterations() -> u32 {
    30
}

fn default_n_s() -> usize {
    20
}

fn default_n_bar_s() -> usize {
    5
}

fn default_rho_smooth() -> f64 {
    0.3
}

fn default_epsilon_floor() -> f64 {
    1e-3
}

fn default_color_bins() -> usize {
    8
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(default = "default_max_iterations")]
    pub max_iterations: u32,
    #[serde(default = "default_n_s")]
    pub n_s: usize,
    #[serde(default = "default_n_bar_s")]
    pub n_bar_s: usize,
    #[serde(default = "default_rho_smooth")]
    pub rho_smooth: f64,
    #[serde(default = "default_epsilon_floor")]
    pub epsilon_floor: f64,
    /// Cells per RGB channel coordinate.
    #[serde(default = "default_color_bins")]
    pub color_bins: usize,
    /// Stop as soon as every known scenario flips.
    #[serde(default = "default_true")]
    pub stop_at_perfect: bool,
    #[serde(default)]
    pub max_evaluations: Option<u64>,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            max_iterations: default_max_iterations(),
            n_s: default_n_s(),
            n_bar_s: default_n_bar_s(),
            rho_smooth: default_rho_smooth(),
            epsilon_floor: default_epsilon_floor(),
            color_bins: default_color_bins(),
            stop_at_perfect: true,
            max_evaluations: None,
        }
    }
}

fn default_font_scale() -> u32 {
    1
}

fn default_blend_weight() -> f64 {
    1.0
}

fn default_placement_scale() -> f64 {
    1.0
}

/// Fixed perceptual attributes; the optimizer searches phrase and colors.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    #[serde(default = "default_font_scale")]
    pub font_scale: u32,
    #[serde(default = "default_blend_weight")]
    pub blend_weight: f64,
    #[serde(default = "default_placement_scale")]
    pub scale: f64,
    #[serde(default)]
    pub rotation: f64,
    #[serde(default)]
    pub translation: [f64; 2],
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            font_scale: 1,
            blend_weight: 1.0,
            scale: 1.0,
            rotation: 0.0,
            translation: [0.0, 0.0],
        }
    }
}

fn default_known_manifest() -> PathBuf {
    PathBuf::from("scenes/known.json")
}

fn default_transfer_manifest() -> PathBuf {
    PathBuf::from("scenes/transfer.json")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenariosSection {
    /// Relative paths resolve against the output directory.
    #[serde(default = "default_known_manifest")]
    pub known_manifest: PathBuf,
    #[serde(default = "default_transfer_manifest")]
    pub transfer_manifest: PathBuf,
}

impl Default for ScenariosSection {
    fn default() -> Self {
        ScenariosSection {
            known_manifest: default_known_manifest(),
            transfer_manifest: default_transfer_manifest(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectRule {
    pub name: String,
    pub center: [f64; 2],
    pub size: [f64; 2],
    pub color: [u8; 3],
    #[serde(default)]
    pub attack_surface: bool,
    #[serde(default)]
    pub occupants: u32,
    #[serde(default)]
    pub occupant_color: [u8; 3],
}

fn identity_rows() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

fn default_count() -> usize {
    20
}

fn default_known_ratio() -> f64 {
    0.8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSection {
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_known_ratio")]
    pub known_ratio: f64,
    #[serde(default)]
    pub tilt_std: f64,
    pub frame_width: u32,
    pub frame_height: u32,
    pub background: [u8; 3],
    pub reference_altitude: f64,
    pub pixels_per_meter: f64,
    pub min_altitude: f64,
    pub x0: [f64; 3],
    #[serde(default = "identity_rows")]
    pub a: [[f64; 3]; 3],
    #[serde(default)]
    pub b: [[f64; 3]; 3],
    #[serde(default)]
    pub mu: [f64; 3],
    #[serde(default)]
    pub sigma: [[f64; 3]; 3],
    pub benign_label: String,
    pub target_label: String,
    pub objects: Vec<ObjectRule>,
}

fn default_width_mm() -> f64 {
    210.0
}

fn default_height_mm() -> f64 {
    297.0
}

fn default_dpi() -> u32 {
    300
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportSection {
    #[serde(default = "default_width_mm")]
    pub width_mm: f64,
    #[serde(default = "default_height_mm")]
    pub height_mm: f64,
    #[serde(default = "default_dpi")]
    pub dpi: u32,
}

impl Default for ExportSection {
    fn default() -> Self {
        ExportSection {
            width_mm: default_width_mm(),
            height_mm: default_height_mm(),
            dpi: default_dpi(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub campaign: CampaignSection,
    pub labels: LabelsSection,
    pub prompt: PromptSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub attacker_llm: Option<AttackerSection>,
    #[serde(default)]
    pub dictionary: Option<DictionarySection>,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub scenarios: ScenariosSection,
    #[serde(default)]
    pub generation: Option<GenerationSection>,
    #[serde(default)]
    pub export: ExportSection,
}

/// Hex SHA-256 of the effective config's canonical JSON form. Stable
/// under TOML comments and key order; sensitive to any value change.
pub fn config_digest(config: &CampaignConfig) -> String {
    let canonical = serde_json::to_vec(config).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(&canonical);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

// ---------------------------------------------------------------------------
// CLI surface
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(
    name = "signforge",
    version,
    about = "Synthesize and evaluate sign attacks against vision-language deciders"
)]
pub struct CliArgs {
    /// Campaign config file.
    #[arg(long, global = true, default_value = "campaign.toml")]
    pub config: PathBuf,
    /// Override the campaign seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override the oracle query cache directory.
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    /// Override the configured oracle backend.
    #[arg(long, global = true, value_enum)]
    pub oracle: Option<OracleKind>,
    /// Print progress details to stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate camera poses and write annotated synthetic scenarios.
    GenScenes,
    /// Build the phrase dictionary with the attacker LLM loop.
    Dict,
    /// Search phrase + colors for the highest-scoring attack.
    Optimize,
    /// Measure baseline, known-split, and held-out success rates.
    Eval,
    /// Render the optimized sign alone at print resolution.
    Export {
        /// Dots per inch of the printable raster.
        #[arg(long)]
        dpi: Option<u32>,
        /// Physical page width in millimeters.
        #[arg(long)]
        width_mm: Option<f64>,
        /// Physical page height in millimeters.
        #[arg(long)]
        height_mm: Option<f64>,
    },
}

// ---------------------------------------------------------------------------
// Context and shared plumbing
// ---------------------------------------------------------------------------

struct Context {
    config: CampaignConfig,
    digest: String,
    out_dir: PathBuf,
    cache_dir: PathBuf,
    verbosity: u8,
    space: LabelSpace,
    prompt: TargetPrompt,
    keywords: Vec<(String, String)>,
}

impl Context {
    fn prepare(args: &CliArgs) -> Result<Context, CliError> {
        let text = fs::read_to_string(&args.config).map_err(|source| {
            if source.kind() == std::io::ErrorKind::NotFound {
                CliError::MissingArtifact {
                    what: "campaign config",
                    path: args.config.clone(),
                    hint: "pass --config or create the file",
                }
            } else {
                CliError::Io {
                    action: "reading",
                    path: args.config.clone(),
                    source,
                }
            }
        })?;
        let mut config: CampaignConfig =
            toml::from_str(&text).map_err(|e| CliError::Parse {
                path: args.config.clone(),
                message: e.to_string(),
            })?;
        // CLI overrides land in the config before digesting, so the digest
        // names the campaign actually run.
        if let Some(seed) = args.seed {
            config.campaign.seed = seed;
        }
        if let Some(kind) = args.oracle {
            config.oracle.kind = kind;
        }
        validate_config(&config)?;
        let digest = config_digest(&config);

        let config_dir = args
            .config
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let out_dir = if config.campaign.output_dir.is_absolute() {
            config.campaign.output_dir.clone()
        } else {
            config_dir.join(&config.campaign.output_dir)
        };
        fs::create_dir_all(&out_dir).map_err(|source| CliError::Io {
            action: "creating",
            path: out_dir.clone(),
            source,
        })?;
        let cache_dir = args
            .cache_dir
            .clone()
            .unwrap_or_else(|| out_dir.join("cache"));

        let synonyms: Vec<(String, Vec<String>)> = config
            .labels
            .synonyms
            .iter()
            .map(|rule| (rule.label.clone(), rule.forms.clone()))
            .collect();
        let space = LabelSpace::new(&config.labels.decisions, &synonyms)?;
        let prompt = TargetPrompt::new(config.prompt.text.clone())?;
        let keywords: Vec<(String, String)> = config
            .oracle
            .keywords
            .iter()
            .map(|rule| (rule.word.clone(), rule.label.clone()))
            .collect();
        Ok(Context {
            config,
            digest,
            out_dir,
            cache_dir,
            verbosity: args.verbose,
            space,
            prompt,
            keywords,
        })
    }

    fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.out_dir.join(path)
        }
    }

    fn vlog(&self, message: &str) {
        if self.verbosity > 0 {
            eprintln!("[signforge] {message}");
        }
    }
}

fn validate_config(config: &CampaignConfig) -> Result<(), CliError> {
    if config.campaign.name.trim().is_empty() {
        return Err(CliError::Config("campaign.name must be non-empty".into()));
    }
    let opt = &config.optimizer;
    if opt.n_bar_s >= opt.n_s {
        return Err(CliError::Config(format!(
            "optimizer.n_bar_s ({}) must be smaller than optimizer.n_s ({})",
            opt.n_bar_s, opt.n_s
        )));
    }
    if let Some(dict) = &config.dictionary {
        if dict.k == 0 {
            return Err(CliError::Config("dictionary.k must be >= 1".into()));
        }
    }
    if config.oracle.kind == OracleKind::Remote && config.oracle.remote.is_none() {
        return Err(CliError::Config(
            "oracle.kind = \"remote\" needs an [oracle.remote] table".into(),
        ));
    }
    Ok(())
}

/// Builds the target oracle behind the shared query cache.
fn build_oracle(ctx: &Context) -> Result<CachedOracle, CliError> {
    let inner: Box<dyn Oracle> = match ctx.config.oracle.kind {
        OracleKind::Simulated => Box::new(SimulatedOracle::new(
            ctx.config.oracle.min_contrast,
            ctx.config.oracle.min_area_fraction,
        )?),
        OracleKind::Remote => {
            let remote = ctx
                .config
                .oracle
                .remote
                .clone()
                .expect("validated at prepare");
            Box::new(HttpOracle::new(remote)?)
        }
    };
    Ok(CachedOracle::new(inner, Some(ctx.cache_dir.clone()))?)
}

/// Builds the attacker LLM. The scripted backend never goes through the
/// cache: it cycles stateful replies, and caching would pin the loop to
/// its first answer.
fn build_attacker(ctx: &Context) -> Result<Box<dyn Oracle>, CliError> {
    let section = ctx.config.attacker_llm.as_ref().ok_or_else(|| {
        CliError::Config("the dict command needs an [attacker_llm] section".into())
    })?;
    match section.kind {
        AttackerKind::Scripted => Ok(Box::new(ScriptedOracle::new(
            "scripted-attacker",
            section.replies.clone(),
        )?)),
        AttackerKind::Remote => {
            let remote = section.remote.clone().ok_or_else(|| {
                CliError::Config(
                    "attacker_llm.kind = \"remote\" needs an [attacker_llm.remote] table".into(),
                )
            })?;
            let http = HttpOracle::new(remote)?;
            Ok(Box::new(CachedOracle::new(
                Box::new(http),
                Some(ctx.cache_dir.clone()),
            )?))
        }
    }
}

struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    fn acquire(out_dir: &Path) -> Result<LockGuard, CliError> {
        let path = out_dir.join(".signforge.lock");
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(LockGuard { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(CliError::Locked { path })
            }
            Err(source) => Err(CliError::Io {
                action: "locking",
                path,
                source,
            }),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Default)]
struct CommandReport {
    exit_code: i32,
    artifacts: Vec<PathBuf>,
    warnings: Vec<String>,
    oracle_queries: u64,
    cache_hits: u64,
    attacker_queries: u64,
}

#[derive(Debug, Serialize)]
struct LedgerRecord<'a> {
    command: &'a str,
    config_digest: &'a str,
    oracle_queries: u64,
    cache_hits: u64,
    attacker_queries: u64,
    wall_time_ms: u128,
    exit_code: i32,
    artifacts: Vec<String>,
    warnings: &'a [String],
}

fn append_ledger(ctx: &Context, record: &LedgerRecord) -> Result<(), CliError> {
    use std::io::Write;
    let path = ctx.out_dir.join("ledger.jsonl");
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|source| CliError::Io {
            action: "opening",
            path: path.clone(),
            source,
        })?;
    let line = serde_json::to_string(record).expect("ledger record serializes");
    writeln!(file, "{line}").map_err(|source| CliError::Io {
        action: "writing",
        path,
        source,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| CliError::Io {
            action: "creating",
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| CliError::Io {
        action: "writing",
        path: path.to_path_buf(),
        source,
    })
}

fn read_to_string(what: &'static str, path: &Path, hint: &'static str) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingArtifact {
                what,
                path: path.to_path_buf(),
                hint,
            }
        } else {
            CliError::Io {
                action: "reading",
                path: path.to_path_buf(),
                source,
            }
        }
    })
}

// ---------------------------------------------------------------------------
// Scenario manifests
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    /// PNG path relative to the manifest file.
    image: String,
    placement_region: PixelRect,
    benign_label: String,
    target_label: String,
    split: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    scenarios: Vec<ManifestEntry>,
}

fn split_to_str(split: Split) -> &'static str {
    match split {
        Split::Known => "known",
        Split::Transferability => "transferability",
    }
}

fn split_from_str(text: &str) -> Result<Split, CliError> {
    match text {
        "known" => Ok(Split::Known),
        "transferability" => Ok(Split::Transferability),
        other => Err(CliError::Config(format!(
            "unknown split tag {other:?}; expected \"known\" or \"transferability\""
        ))),
    }
}

fn write_manifest(
    path: &Path,
    scenarios: &[Scenario],
    image_paths: &[String],
) -> Result<(), CliError> {
    let entries: Vec<ManifestEntry> = scenarios
        .iter()
        .zip(image_paths)
        .map(|(s, image)| ManifestEntry {
            id: s.id.clone(),
            image: image.clone(),
            placement_region: s.placement_region,
            benign_label: s.benign_label.as_str().to_owned(),
            target_label: s.target_label.as_str().to_owned(),
            split: split_to_str(s.split).to_owned(),
        })
        .collect();
    let manifest = Manifest { scenarios: entries };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_bytes(path, json.as_bytes())
}

fn load_manifest(
    path: &Path,
    space: &LabelSpace,
    hint: &'static str,
) -> Result<Vec<Scenario>, CliError> {
    let text = read_to_string("scenario manifest", path, hint)?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut scenarios = Vec::with_capacity(manifest.scenarios.len());
    for entry in manifest.scenarios {
        let image_path = base.join(&entry.image);
        let image = Image::load_png(&image_path)?;
        let scenario = Scenario::new(
            entry.id,
            Arc::new(image),
            entry.placement_region,
            space.require(&entry.benign_label)?,
            space.require(&entry.target_label)?,
            split_from_str(&entry.split)?,
        )?;
        scenarios.push(scenario);
    }
    Ok(scenarios)
}

// ---------------------------------------------------------------------------
// Dictionary artifact (TSV: phrase, score, round)
// ---------------------------------------------------------------------------

pub fn dictionary_tsv(dictionary: &Dictionary) -> String {
    let mut out = String::from("phrase\tscore\tround\n");
    for entry in dictionary.entries() {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            entry.phrase, entry.score, entry.round
        ));
    }
    out
}

pub fn parse_dictionary_tsv(text: &str) -> Result<Dictionary, CliError> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(phrase), Some(score), Some(round)) =
            (fields.next(), fields.next(), fields.next())
        else {
            return Err(CliError::Config(format!(
                "dictionary line {} has fewer than 3 tab-separated fields",
                i + 1
            )));
        };
        let score: f64 = score.parse().map_err(|_| {
            CliError::Config(format!("dictionary line {}: bad score {score:?}", i + 1))
        })?;
        let round: u32 = round.parse().map_err(|_| {
            CliError::Config(format!("dictionary line {}: bad round {round:?}", i + 1))
        })?;
        entries.push(DictionaryEntry {
            phrase: phrase.to_owned(),
            score,
            round,
        });
    }
    Ok(Dictionary::new(entries)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct DictionaryMeta {
    config_digest: String,
    k: usize,
    proposals_used: usize,
    budget_exhausted: bool,
}

// ---------------------------------------------------------------------------
// Attack artifact
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct AttackArtifact {
    pub params: AttackParams,
    pub best_score: f64,
    /// Number of known scenarios, i.e. the maximum possible score.
    pub max_score: f64,
    pub evaluations: u64,
    pub truncated: bool,
    pub seed: u64,
}

/// Search space: coordinate 0 picks the phrase, 1..=3 the letter RGB,
/// 4..=6 the background RGB.
fn build_search_space(k: usize, color_bins: usize) -> Result<SearchSpace, CliError> {
    let mut coordinates = vec![Coordinate::Categorical { size: k }];
    coordinates.extend(std::iter::repeat_n(
        Coordinate::BoundedInteger {
            lo: 0,
            hi: 255,
            bins: color_bins,
        },
        6,
    ));
    Ok(SearchSpace::new(coordinates)?)
}

fn point_to_params(
    point: &CandidatePoint,
    dictionary: &Dictionary,
    attack: &AttackSection,
) -> Result<AttackParams, CliError> {
    let values = &point.values;
    if values.len() != 7 {
        return Err(CliError::Config(format!(
            "candidate point has {} coordinates, expected 7",
            values.len()
        )));
    }
    let vp_index = values[0] as usize;
    let phrase = dictionary.phrase(vp_index).ok_or_else(|| {
        CliError::Config(format!("candidate phrase index {vp_index} out of range"))
    })?;
    let channel = |v: i64| v.clamp(0, 255) as u8;
    let letter = crate::domain::Rgb([channel(values[1]), channel(values[2]), channel(values[3])]);
    let background =
        crate::domain::Rgb([channel(values[4]), channel(values[5]), channel(values[6])]);
    let sign = SignSpec::new(phrase, letter, background, attack.font_scale)?;
    let placement = PlacementSpec::new(
        attack.scale,
        attack.rotation,
        (attack.translation[0], attack.translation[1]),
    )?;
    Ok(AttackParams::new(
        vp_index,
        sign,
        placement,
        attack.blend_weight,
    )?)
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn matrix(rows: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::new(
        rows[0][0], rows[0][1], rows[0][2],
        rows[1][0], rows[1][1], rows[1][2],
        rows[2][0], rows[2][1], rows[2][2],
    )
}

fn rgb(c: [u8; 3]) -> crate::domain::Rgb {
    crate::domain::Rgb(c)
}

fn cmd_gen_scenes(ctx: &Context) -> Result<CommandReport, CliError> {
    let gen = ctx.config.generation.as_ref().ok_or_else(|| {
        CliError::Config("the gen-scenes command needs a [generation] section".into())
    })?;
    if gen.count == 0 {
        return Err(CliError::Config("generation.count must be >= 1".into()));
    }
    let objects: Vec<SceneObject> = gen
        .objects
        .iter()
        .map(|o| SceneObject {
            name: o.name.clone(),
            center: (o.center[0], o.center[1]),
            size: (o.size[0], o.size[1]),
            color: rgb(o.color),
            attack_surface: o.attack_surface,
            occupants: o.occupants,
            occupant_color: rgb(o.occupant_color),
        })
        .collect();
    let spec = SceneSpec::new(
        gen.frame_width,
        gen.frame_height,
        rgb(gen.background),
        gen.reference_altitude,
        gen.pixels_per_meter,
        gen.min_altitude,
        objects,
        ctx.space.require(&gen.benign_label)?,
        ctx.space.require(&gen.target_label)?,
    )?;
    let model = TrajectoryModel::new(
        matrix(&gen.a),
        matrix(&gen.b),
        Vector3::new(gen.x0[0], gen.x0[1], gen.x0[2]),
        gen.count,
    )?;
    let noise = NoiseModel::new(
        Vector3::new(gen.mu[0], gen.mu[1], gen.mu[2]),
        matrix(&gen.sigma),
    )?;
    let seed = ctx.config.campaign.seed;
    let poses = simulate_trajectory(&model, &noise, gen.tilt_std, seed)?;
    let (known_count, _) = split_counts(gen.count, gen.known_ratio)?;

    let scenes_dir = ctx.out_dir.join("scenes");
    let images_dir = scenes_dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|source| CliError::Io {
        action: "creating",
        path: images_dir.clone(),
        source,
    })?;

    let mut report = CommandReport::default();
    let mut known = Vec::new();
    let mut transfer = Vec::new();
    let mut known_images = Vec::new();
    let mut transfer_images = Vec::new();
    let mut clamped = 0usize;
    for (i, pose) in poses.iter().enumerate() {
        let id = format!("scene-{i:03}");
        let split = if i < known_count {
            Split::Known
        } else {
            Split::Transferability
        };
        // Per-scene occupant jitter stream: offset the campaign seed by
        // the scene index.
        let outcome =
            generate_synthetic_scene(&spec, pose, seed.wrapping_add(i as u64), &id, split)?;
        if outcome.clamped {
            clamped += 1;
        }
        let image_rel = format!("images/{id}.png");
        outcome.scenario.image.save_png(&images_dir.join(format!("{id}.png")))?;
        match split {
            Split::Known => {
                known.push(outcome.scenario);
                known_images.push(image_rel);
            }
            Split::Transferability => {
                transfer.push(outcome.scenario);
                transfer_images.push(image_rel);
            }
        }
    }
    if clamped > 0 {
        report.warnings.push(format!(
            "{clamped} of {} poses projected the attack surface out of frame; rendered clamped fallback poses",
            gen.count
        ));
    }

    let known_path = ctx.resolve(&ctx.config.scenarios.known_manifest);
    let transfer_path = ctx.resolve(&ctx.config.scenarios.transfer_manifest);
    write_manifest(&known_path, &known, &known_images)?;
    write_manifest(&transfer_path, &transfer, &transfer_images)?;
    println!(
        "generated {} scenarios: {} known, {} transferability",
        gen.count,
        known.len(),
        transfer.len()
    );
    report.artifacts = vec![known_path, transfer_path, images_dir];
    Ok(report)
}

fn cmd_dict(ctx: &Context) -> Result<CommandReport, CliError> {
    let section = ctx
        .config
        .dictionary
        .as_ref()
        .ok_or_else(|| CliError::Config("the dict command needs a [dictionary] section".into()))?;
    let tsv_path = ctx.out_dir.join("dictionary.tsv");
    let meta_path = ctx.out_dir.join("dictionary.meta.json");

    // A dictionary built under this exact config is current; reuse it
    // without spending any oracle or attacker calls.
    if let (Ok(meta_text), true) = (fs::read_to_string(&meta_path), tsv_path.exists()) {
        if let Ok(meta) = serde_json::from_str::<DictionaryMeta>(&meta_text) {
            if meta.config_digest == ctx.digest {
                let dictionary = parse_dictionary_tsv(&read_to_string(
                    "dictionary",
                    &tsv_path,
                    "run the dict command first",
                )?)?;
                println!(
                    "dictionary up to date ({} entries); skipping regeneration",
                    dictionary.len()
                );
                let mut report = CommandReport {
                    artifacts: vec![tsv_path, meta_path],
                    ..CommandReport::default()
                };
                if meta.budget_exhausted {
                    report.warnings.push(format!(
                        "existing dictionary is partial: {} of {} entries before the proposal budget ran out",
                        dictionary.len(),
                        meta.k
                    ));
                    report.exit_code = EXIT_BUDGET;
                }
                return Ok(report);
            }
        }
    }

    let known_path = ctx.resolve(&ctx.config.scenarios.known_manifest);
    let known = load_manifest(&known_path, &ctx.space, "run the gen-scenes command first")?;
    let attacker = build_attacker(ctx)?;
    let oracle = build_oracle(ctx)?;
    let harness = QueryHarness::new(&oracle, &ctx.prompt, &ctx.space, &ctx.keywords)?;
    let dict_config = DictGenConfig {
        max_words: section.max_words,
        proposal_budget: section.proposal_budget,
        naive: NaiveTheta::default(),
        task_summary: section.task_summary.clone(),
        vehicle_characteristics: section.vehicle_characteristics.clone(),
        attacker_objective: section.objective.clone(),
        attacker_capabilities: section.capabilities.clone(),
    };
    ctx.vlog(&format!(
        "generating dictionary: k={} over {} known scenarios",
        section.k,
        known.len()
    ));
    let outcome = generate_dictionary(section.k, &known, attacker.as_ref(), &harness, &dict_config)?;

    write_bytes(&tsv_path, dictionary_tsv(&outcome.dictionary).as_bytes())?;
    let meta = DictionaryMeta {
        config_digest: ctx.digest.clone(),
        k: section.k,
        proposals_used: outcome.proposals_used,
        budget_exhausted: outcome.budget_exhausted,
    };
    write_bytes(
        &meta_path,
        serde_json::to_string_pretty(&meta).expect("meta serializes").as_bytes(),
    )?;

    println!(
        "dictionary: {} entries in {} proposals",
        outcome.dictionary.len(),
        outcome.proposals_used
    );
    let mut report = CommandReport {
        artifacts: vec![tsv_path, meta_path],
        oracle_queries: oracle.live_queries(),
        cache_hits: oracle.cache_hits(),
        attacker_queries: outcome.proposals_used as u64,
        ..CommandReport::default()
    };
    if outcome.budget_exhausted {
        report.warnings.push(format!(
            "proposal budget exhausted: collected {} of {} requested phrases",
            outcome.dictionary.len(),
            section.k
        ));
        report.exit_code = EXIT_BUDGET;
    }
    Ok(report)
}

fn cmd_optimize(ctx: &Context) -> Result<CommandReport, CliError> {
    let tsv_path = ctx.out_dir.join("dictionary.tsv");
    let dictionary = parse_dictionary_tsv(&read_to_string(
        "dictionary",
        &tsv_path,
        "run the dict command first",
    )?)?;
    let known_path = ctx.resolve(&ctx.config.scenarios.known_manifest);
    let known = load_manifest(&known_path, &ctx.space, "run the gen-scenes command first")?;
    let oracle = build_oracle(ctx)?;
    let harness = QueryHarness::new(&oracle, &ctx.prompt, &ctx.space, &ctx.keywords)?;

    let opt = &ctx.config.optimizer;
    let space = build_search_space(dictionary.len(), opt.color_bins)?;
    let partition = CellPartition::regular(&space);
    let settings = CeSettings {
        max_iterations: opt.max_iterations,
        n_s: opt.n_s,
        n_bar_s: opt.n_bar_s,
        seed: ctx.config.campaign.seed,
        rho_smooth: opt.rho_smooth,
        epsilon_floor: opt.epsilon_floor,
        target_score: opt.stop_at_perfect.then_some(known.len() as f64),
        max_evaluations: opt.max_evaluations,
    };
    let attack = &ctx.config.attack;
    let objective = |point: &CandidatePoint| -> Result<f64, CeError> {
        let pi = point_to_params(point, &dictionary, attack)
            .map_err(|e| CeError::Evaluation(Box::new(e)))?;
        let score = objective_score(&pi, &known, &harness, &dictionary)
            .map_err(|e| CeError::Evaluation(Box::new(e)))?;
        Ok(score as f64)
    };
    ctx.vlog(&format!(
        "optimizing over {} phrases x colors, {} scenarios, {} iterations max",
        dictionary.len(),
        known.len(),
        settings.max_iterations
    ));
    let outcome = optimize(&space, &partition, &objective, &settings)?;

    let params = point_to_params(&outcome.best_point, &dictionary, attack)?;
    let artifact = AttackArtifact {
        params,
        best_score: outcome.best_score,
        max_score: known.len() as f64,
        evaluations: outcome.evaluations,
        truncated: outcome.truncated,
        seed: ctx.config.campaign.seed,
    };
    let attack_path = ctx.out_dir.join("attack.json");
    write_bytes(
        &attack_path,
        serde_json::to_string_pretty(&artifact).expect("artifact serializes").as_bytes(),
    )?;
    let trace_path = ctx.out_dir.join("trace.json");
    write_bytes(
        &trace_path,
        serde_json::to_string_pretty(&outcome.trace).expect("trace serializes").as_bytes(),
    )?;

    println!(
        "best attack: \"{}\" scoring {}/{} after {} evaluations{}",
        artifact.params.sign.text,
        artifact.best_score,
        artifact.max_score,
        artifact.evaluations,
        if artifact.truncated { " (budget truncated)" } else { "" }
    );
    Ok(CommandReport {
        artifacts: vec![attack_path, trace_path],
        oracle_queries: oracle.live_queries(),
        cache_hits: oracle.cache_hits(),
        ..CommandReport::default()
    })
}

fn load_attack(ctx: &Context) -> Result<AttackArtifact, CliError> {
    let path = ctx.out_dir.join("attack.json");
    let text = read_to_string("attack artifact", &path, "run the optimize command first")?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path,
        message: e.to_string(),
    })
}

fn cmd_eval(ctx: &Context) -> Result<CommandReport, CliError> {
    let artifact = load_attack(ctx)?;
    let dictionary = parse_dictionary_tsv(&read_to_string(
        "dictionary",
        &ctx.out_dir.join("dictionary.tsv"),
        "run the dict command first",
    )?)?;
    let known = load_manifest(
        &ctx.resolve(&ctx.config.scenarios.known_manifest),
        &ctx.space,
        "run the gen-scenes command first",
    )?;
    let transfer = load_manifest(
        &ctx.resolve(&ctx.config.scenarios.transfer_manifest),
        &ctx.space,
        "run the gen-scenes command first",
    )?;
    for t in &transfer {
        if known.iter().any(|k| k.id == t.id) {
            return Err(CliError::Config(format!(
                "scenario id {:?} appears in both splits",
                t.id
            )));
        }
    }
    let oracle = build_oracle(ctx)?;
    let harness = QueryHarness::new(&oracle, &ctx.prompt, &ctx.space, &ctx.keywords)?;
    let name = ctx.config.campaign.name.as_str();

    let baseline = compute_asr(None, &known, &harness, &dictionary, name)?;
    let known_result = compute_asr(Some(&artifact.params), &known, &harness, &dictionary, name)?;
    let transfer_outcome = transfer_eval(
        &artifact.params,
        &known_result,
        &transfer,
        &harness,
        &dictionary,
    )?;
    let results: Vec<EvalResult> = vec![
        baseline,
        transfer_outcome.known,
        transfer_outcome.transfer,
    ];

    let table = render_report(&results);
    let report_path = ctx.out_dir.join("report.txt");
    write_bytes(&report_path, table.as_bytes())?;
    let records_path = ctx.out_dir.join("report.jsonl");
    write_bytes(&records_path, report_records(&results).as_bytes())?;
    print!("{table}");
    Ok(CommandReport {
        artifacts: vec![report_path, records_path],
        oracle_queries: oracle.live_queries(),
        cache_hits: oracle.cache_hits(),
        ..CommandReport::default()
    })
}

/// Millimeters to pixels at a print resolution.
pub fn page_pixels(mm: f64, dpi: u32) -> Result<u32, CliError> {
    if dpi == 0 {
        return Err(CliError::Config("export.dpi must be >= 1".into()));
    }
    if !(mm.is_finite() && mm > 0.0) {
        return Err(CliError::Config(format!(
            "page dimension must be positive, got {mm} mm"
        )));
    }
    let px = (mm * dpi as f64 / 25.4).round();
    if px < 1.0 || px > u32::MAX as f64 {
        return Err(CliError::Config(format!(
            "page dimension {mm} mm at {dpi} dpi is out of range"
        )));
    }
    Ok(px as u32)
}

fn cmd_export(
    ctx: &Context,
    dpi: Option<u32>,
    width_mm: Option<f64>,
    height_mm: Option<f64>,
) -> Result<CommandReport, CliError> {
    let artifact = load_attack(ctx)?;
    let dpi = dpi.unwrap_or(ctx.config.export.dpi);
    let width_mm = width_mm.unwrap_or(ctx.config.export.width_mm);
    let height_mm = height_mm.unwrap_or(ctx.config.export.height_mm);
    let page_w = page_pixels(width_mm, dpi)?;
    let page_h = page_pixels(height_mm, dpi)?;

    // Print the sign as large as the page allows: pick the biggest font
    // scale whose snug canvas still fits.
    let text = &artifact.params.sign.text;
    let (w1, h1) = natural_canvas(text, 1);
    let fit = (page_w / w1).min(page_h / h1);
    if fit == 0 {
        return Err(CliError::Config(format!(
            "sign needs {w1}x{h1} px minimum but the page is only {page_w}x{page_h} px"
        )));
    }
    let sign_spec = SignSpec::new(
        text,
        artifact.params.sign.letter_color,
        artifact.params.sign.background_color,
        fit,
    )?;
    let (canvas_w, canvas_h) = natural_canvas(text, fit);
    let raster = rasterize_sign_layers(&sign_spec, canvas_w, canvas_h)?;

    let mut page = Image::filled(page_w, page_h, artifact.params.sign.background_color)?;
    let offset_x = (page_w - canvas_w) / 2;
    let offset_y = (page_h - canvas_h) / 2;
    for y in 0..canvas_h {
        for x in 0..canvas_w {
            page.set_pixel(offset_x + x, offset_y + y, raster.image.pixel(x, y));
        }
    }
    let out_path = ctx.out_dir.join("export").join("sign.png");
    if let Some(parent) = out_path.parent() {
        fs::create_dir_all(parent).map_err(|source| CliError::Io {
            action: "creating",
            path: parent.to_path_buf(),
            source,
        })?;
    }
    page.save_png(&out_path)?;
    println!(
        "exported \"{}\" at {page_w}x{page_h} px ({width_mm}x{height_mm} mm @ {dpi} dpi), glyph scale {fit}",
        text
    );
    Ok(CommandReport {
        artifacts: vec![out_path],
        ..CommandReport::default()
    })
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

fn print_error(e: &CliError) {
    eprintln!("error: {e}");
    let mut source = e.source();
    while let Some(s) = source {
        eprintln!("  caused by: {s}");
        source = s.source();
    }
}

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::GenScenes => "gen-scenes",
        Command::Dict => "dict",
        Command::Optimize => "optimize",
        Command::Eval => "eval",
        Command::Export { .. } => "export",
    }
}

/// Runs one command end to end and returns the process exit code.
pub fn run(args: CliArgs) -> i32 {
    let started = Instant::now();
    let ctx = match Context::prepare(&args) {
        Ok(ctx) => ctx,
        Err(e) => {
            print_error(&e);
            return e.exit_code();
        }
    };
    let _lock = match LockGuard::acquire(&ctx.out_dir) {
        Ok(lock) => lock,
        Err(e) => {
            print_error(&e);
            return e.exit_code();
        }
    };
    ctx.vlog(&format!(
        "campaign {:?} digest {} -> {}",
        ctx.config.campaign.name,
        &ctx.digest[..12],
        ctx.out_dir.display()
    ));
    let result = match &args.command {
        Command::GenScenes => cmd_gen_scenes(&ctx),
        Command::Dict => cmd_dict(&ctx),
        Command::Optimize => cmd_optimize(&ctx),
        Command::Eval => cmd_eval(&ctx),
        Command::Export {
            dpi,
            width_mm,
            height_mm,
        } => cmd_export(&ctx, *dpi, *width_mm, *height_mm),
    };
    let wall_time_ms = started.elapsed().as_millis();
    match result {
        Ok(report) => {
            for warning in &report.warnings {
                eprintln!("warning: {warning}");
            }
            let record = LedgerRecord {
                command: command_name(&args.command),
                config_digest: &ctx.digest,
                oracle_queries: report.oracle_queries,
                cache_hits: report.cache_hits,
                attacker_queries: report.attacker_queries,
                wall_time_ms,
                exit_code: report.exit_code,
                artifacts: report
                    .artifacts
                    .iter()
                    .map(|p| p.display().to_string())
                    .collect(),
                warnings: &report.warnings,
            };
            if let Err(e) = append_ledger(&ctx, &record) {
                print_error(&e);
                return e.exit_code();
            }
            report.exit_code
        }
        Err(e) => {
            print_error(&e);
            let record = LedgerRecord {
                command: command_name(&args.command),
                config_digest: &ctx.digest,
                oracle_queries: 0,
                cache_hits: 0,
                attacker_queries: 0,
                wall_time_ms,
                exit_code: e.exit_code(),
                artifacts: Vec::new(),
                warnings: &[],
            };
            let _ = append_ledger(&ctx, &record);
            e.exit_code()
        }
    }
}

/// Establishes each scenario's no-attack decision by repeated queries;
/// exposed for campaign debugging and the optional live smoke check.
pub fn benign_labels_for(
    scenarios: &[Scenario],
    harness: &QueryHarness,
    runs: u32,
) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::with_capacity(scenarios.len());
    for scenario in scenarios {
        let report = benign_label(scenario, harness, runs)?;
        out.push((scenario.id.clone(), report.mode_label));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Rgb;

    const MINIMAL: &str = r#"
        [campaign]
        name = "demo"
        output_dir = "out"
        seed = 7

        [labels]
        decisions = ["brake", "proceed"]

        [prompt]
        text = "Brake or proceed?"
    "#;

    fn parse(text: &str) -> CampaignConfig {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let config = parse(MINIMAL);
        assert_eq!(config.campaign.seed, 7);
        assert_eq!(config.optimizer.max_iterations, 30);
        assert_eq!(config.optimizer.n_s, 20);
        assert_eq!(config.optimizer.n_bar_s, 5);
        assert_eq!(config.attack.blend_weight, 1.0);
        assert_eq!(config.export.dpi, 300);
        assert!(config.generation.is_none());
        assert!(validate_config(&config).is_ok());
    }

    #[test]
    fn digest_ignores_formatting_but_tracks_semantics() {
        let a = parse(MINIMAL);
        // Same content, different comments/whitespace/key order.
        let b = parse(
            r#"
            # a comment
            [labels]
            decisions = ["brake", "proceed"]
            [campaign]
            seed = 7
            output_dir = "out"
            name = "demo"
            [prompt]
            text = "Brake or proceed?"
        "#,
        );
        assert_eq!(config_digest(&a), config_digest(&b));

        let mut c = parse(MINIMAL);
        c.campaign.seed = 8;
        assert_ne!(config_digest(&a), config_digest(&c));

        let mut d = parse(MINIMAL);
        d.oracle.kind = OracleKind::Remote;
        assert_ne!(config_digest(&a), config_digest(&d));
    }

    #[test]
    fn unknown_keys_and_bad_settings_are_rejected() {
        assert!(toml::from_str::<CampaignConfig>(&format!("{MINIMAL}\n[campaign2]\nx = 1")).is_err());
        let mut config = parse(MINIMAL);
        config.optimizer.n_bar_s = config.optimizer.n_s;
        assert!(matches!(
            validate_config(&config),
            Err(CliError::Config(_))
        ));
        let mut config = parse(MINIMAL);
        config.oracle.kind = OracleKind::Remote;
        assert!(validate_config(&config).is_err());
    }

    #[test]
    fn manifests_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let space = LabelSpace::new(&["brake", "proceed"], &[] as &[(&str, Vec<String>)]).unwrap();
        let scenario = Scenario::new(
            "scene-000",
            Arc::new(Image::filled(64, 48, Rgb([9, 9, 9])).unwrap()),
            PixelRect::new(10, 10, 20, 15).unwrap(),
            space.require("brake").unwrap(),
            space.require("proceed").unwrap(),
            Split::Known,
        )
        .unwrap();
        let manifest_path = dir.path().join("known.json");
        scenario
            .image
            .save_png(&dir.path().join("scene-000.png"))
            .unwrap();
        write_manifest(&manifest_path, &[scenario.clone()], &["scene-000.png".into()]).unwrap();
        let loaded = load_manifest(&manifest_path, &space, "hint").unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].id, "scene-000");
        assert_eq!(loaded[0].placement_region, scenario.placement_region);
        assert_eq!(loaded[0].split, Split::Known);
        assert_eq!(loaded[0].image.digest_hex(), scenario.image.digest_hex());

        let missing = load_manifest(&dir.path().join("absent.json"), &space, "hint");
        assert!(matches!(missing, Err(CliError::MissingArtifact { .. })));
    }

    #[test]
    fn dictionary_tsv_round_trips() {
        let dictionary = Dictionary::new(vec![
            DictionaryEntry {
                phrase: "proceed onward".into(),
                score: 0.3333333333333333,
                round: 0,
            },
            DictionaryEntry {
                phrase: "go now".into(),
                score: 1.0,
                round: 1,
            },
        ])
        .unwrap();
        let tsv = dictionary_tsv(&dictionary);
        let parsed = parse_dictionary_tsv(&tsv).unwrap();
        assert_eq!(parsed.entries(), dictionary.entries());
        assert!(tsv.starts_with("phrase\tscore\tround\n"));

        assert!(parse_dictionary_tsv("phrase\tscore\tround\nonly-two\tfields\n").is_err());
        assert!(parse_dictionary_tsv("phrase\tscore\tround\nx\tnot-a-number\t0\n").is_err());
    }

    #[test]
    fn candidate_points_map_to_attack_params() {
        let dictionary = Dictionary::new(vec![
            DictionaryEntry {
                phrase: "proceed onward".into(),
                score: 1.0,
                round: 0,
            },
            DictionaryEntry {
                phrase: "go now".into(),
                score: 0.5,
                round: 1,
            },
        ])
        .unwrap();
        let attack = AttackSection::default();
        let point = CandidatePoint {
            values: vec![1, 10, 20, 30, 250, 240, 230],
        };
        let params = point_to_params(&point, &dictionary, &attack).unwrap();
        assert_eq!(params.vp_index, 1);
        assert_eq!(params.sign.text, "go now");
        assert_eq!(params.sign.letter_color, Rgb([10, 20, 30]));
        assert_eq!(params.sign.background_color, Rgb([250, 240, 230]));
        assert_eq!(params.blend_weight, 1.0);

        let bad = CandidatePoint {
            values: vec![9, 0, 0, 0, 0, 0, 0],
        };
        assert!(point_to_params(&bad, &dictionary, &attack).is_err());
    }

    #[test]
    fn search_space_covers_phrases_and_two_color_triples() {
        let space = build_search_space(10, 8).unwrap();
        assert_eq!(space.coordinates().len(), 7);
        assert_eq!(space.cardinality(), 10u128 * 256u128.pow(6));
    }

    #[test]
    fn page_pixel_arithmetic_matches_print_conventions() {
        assert_eq!(page_pixels(210.0, 300).unwrap(), 2480);
        assert_eq!(page_pixels(297.0, 300).unwrap(), 3508);
        assert!(matches!(
            page_pixels(210.0, 0),
            Err(CliError::Config(_))
        ));
        assert!(page_pixels(-1.0, 300).is_err());
        assert!(page_pixels(0.0, 300).is_err());
    }

    #[test]
    fn lock_guard_excludes_concurrent_runs() {
        let dir = tempfile::tempdir().unwrap();
        let lock = LockGuard::acquire(dir.path()).unwrap();
        assert!(matches!(
            LockGuard::acquire(dir.path()),
            Err(CliError::Locked { .. })
        ));
        drop(lock);
        assert!(LockGuard::acquire(dir.path()).is_ok());
    }

    #[test]
    fn exit_codes_distinguish_failure_classes() {
        let validation = CliError::Config("x".into());
        assert_eq!(validation.exit_code(), EXIT_VALIDATION);
        let oracle = CliError::Oracle(OracleError::Transport {
            provider: "p".into(),
            attempts: 1,
            message: "down".into(),
        });
        assert_eq!(oracle.exit_code(), EXIT_ORACLE);
        let nested = CliError::CeOpt(CeError::Evaluation(Box::new(ObjectiveError::Oracle {
            scenario_id: "s".into(),
            source: OracleError::Transport {
                provider: "p".into(),
                attempts: 1,
                message: "down".into(),
            },
        })));
        assert_eq!(nested.exit_code(), EXIT_ORACLE);
        let nested_validation =
            CliError::CeOpt(CeError::Evaluation(Box::new(ObjectiveError::NoScenarios)));
        assert_eq!(nested_validation.exit_code(), EXIT_VALIDATION);
    }
}
