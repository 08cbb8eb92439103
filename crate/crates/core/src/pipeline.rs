//! End-to-end scorecard workflow behind the `train`, `evaluate` and
//! `gen-synth` commands: load, align, split, WOE fit and screening,
//! training in one of three modes, evaluation and report files.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{align, load_csv, split, ColumnKind, PartyView, Role, Schema, SplitSpec};
use crate::fedproto::{
    audit_privacy, check_flow, run_threaded, setup, PrivacyContext, ProtocolConfig,
};
use crate::lrbc::{
    kkt_residual, predict_proba, train_centralized, BoxBounds, LabeledBatch, LossKind, StopReason,
    TrainConfig, Weights,
};
use crate::matrix::Matrix;
use crate::metrics::{ks, roc_auc, scored, write_ks, write_roc};
use crate::sampling::{guest_initial_weights, host_initial_weights};
use crate::synth::{self, SynthSpec};
use crate::woe::{
    fit_view, screen, transform, WoePipeline, WoeTable, DEFAULT_IV_THRESHOLD, DEFAULT_MAX_BINS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Host, guest and coordinator run the encrypted protocol.
    Federated,
    /// Plaintext training on the joined features (reference).
    Centralized,
    /// Plaintext training on host features only (no enrichment).
    HostOnly,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Federated => "federated",
            Mode::Centralized => "centralized",
            Mode::HostOnly => "host-only",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "federated" => Ok(Mode::Federated),
            "centralized" => Ok(Mode::Centralized),
            "host-only" => Ok(Mode::HostOnly),
            other => Err(format!(
                "unknown mode {other:?}; expected federated, centralized or host-only"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Config,
    Load,
    Align,
    Split,
    Woe,
    Train,
    Evaluate,
    Report,
    Synth,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Config => "config",
            Phase::Load => "load",
            Phase::Align => "align",
            Phase::Split => "split",
            Phase::Woe => "woe",
            Phase::Train => "train",
            Phase::Evaluate => "evaluate",
            Phase::Report => "report",
            Phase::Synth => "gen-synth",
        })
    }
}

type BoxError = Box<dyn std::error::Error + Send + Sync>;

/// A failure tagged with the workflow phase it happened in.
#[derive(Debug, Error)]
#[error("[{phase}] {source}")]
pub struct PipelineError {
    pub phase: Phase,
    #[source]
    pub source: BoxError,
}

impl PipelineError {
    pub fn new(phase: Phase, message: impl Into<String>) -> Self {
        Self {
            phase,
            source: message.into().into(),
        }
    }
}

trait InPhase<T> {
    fn in_phase(self, phase: Phase) -> Result<T, PipelineError>;
}

impl<T, E: Into<BoxError>> InPhase<T> for Result<T, E> {
    fn in_phase(self, phase: Phase) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError {
            phase,
            source: e.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub host_csv: PathBuf,
    pub host_schema: PathBuf,
    pub guest_csv: PathBuf,
    pub guest_schema: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let s = SplitSpec::default();
        Self {
            fraction: s.train_fraction,
            seed: s.seed,
            stratified: s.stratified,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WoeConfig {
    pub max_bins: usize,
    pub iv_threshold: f64,
}

impl Default for WoeConfig {
    fn default() -> Self {
        Self {
            max_bins: DEFAULT_MAX_BINS,
            iv_threshold: DEFAULT_IV_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub mode: Mode,
    pub eta: f64,
    pub batch_size: usize,
    pub tol_loss: f64,
    pub tol_w: f64,
    pub max_iter: usize,
    pub key_bits: u64,
    pub master_seed: u64,
    /// Loss for the plaintext modes; federated training is always Taylor.
    pub loss: LossKind,
    pub timeout_secs: u64,
    /// Derive key and encryption randomness from `master_seed` so repeated
    /// runs write identical transcripts. Disable to draw from the OS.
    pub seeded_crypto: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            mode: Mode::Federated,
            eta: t.eta,
            batch_size: t.batch_size,
            tol_loss: t.tol_loss,
            tol_w: t.tol_w,
            max_iter: t.max_iter,
            key_bits: ProtocolConfig::DEFAULT_KEY_BITS,
            master_seed: t.seed,
            loss: LossKind::Taylor,
            timeout_secs: ProtocolConfig::DEFAULT_TIMEOUT.as_secs(),
            seeded_crypto: true,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            eta: self.eta,
            batch_size: self.batch_size,
            tol_loss: self.tol_loss,
            tol_w: self.tol_w,
            max_iter: self.max_iter,
            seed: self.master_seed,
            loss: self.loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub woe: WoeConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub key_bits: Option<u64>,
    pub max_iter: Option<usize>,
    pub eta: Option<f64>,
}

impl RunConfig {
    /// Parses TOML; relative paths are taken relative to `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut config: RunConfig = toml::from_str(text).in_phase(Phase::Config)?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.data.host_csv);
        resolve(&mut config.data.host_schema);
        resolve(&mut config.data.guest_csv);
        resolve(&mut config.data.guest_schema);
        resolve(&mut config.output.dir);
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::new(Phase::Config, format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), PipelineError> {
        if let Some(m) = o.mode {
            self.train.mode = m;
        }
        if let Some(s) = o.seed {
            self.train.master_seed = s;
        }
        if let Some(d) = &o.out {
            self.output.dir = d.clone();
        }
        if let Some(k) = o.key_bits {
            self.train.key_bits = k;
        }
        if let Some(m) = o.max_iter {
            self.train.max_iter = m;
        }
        if let Some(e) = o.eta {
            self.train.eta = e;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::new(Phase::Config, m));
        if !(self.split.fraction > 0.0 && self.split.fraction < 1.0) {
            return bad(format!(
                "split.fraction {} must lie in (0, 1)",
                self.split.fraction
            ));
        }
        if self.woe.iv_threshold.is_nan() || self.woe.iv_threshold < 0.0 {
            return bad(format!(
                "woe.iv_threshold {} must be >= 0",
                self.woe.iv_threshold
            ));
        }
        if self.woe.max_bins == 0 {
            return bad("woe.max_bins must be at least 1".into());
        }
        self.train.train_config().validate().in_phase(Phase::Config)
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.split.fraction,
            seed: self.split.seed,
            stratified: self.split.stratified,
        }
    }
}

/// One row of the variable screening table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningRow {
    pub name: String,
    pub party: Role,
    pub data_type: ColumnKind,
    pub missing_rate_pct: f64,
    pub iv: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub party: Role,
    pub coefficient: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Performance {
    pub auc: f64,
    pub ks: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub stop: StopReason,
    pub iterations: usize,
    pub final_loss: f64,
    /// Projected-gradient residual on the full training split.
    pub kkt_residual: f64,
    pub max_sign_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSummary {
    pub messages: usize,
    pub bytes: usize,
    pub flow_conforms: bool,
    pub privacy_violations: usize,
}

/// The model file: coefficients over WOE variables plus the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub mode: Mode,
    pub intercept: f64,
    pub coefficients: Vec<Coefficient>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorecardReport {
    pub mode: Mode,
    pub train_rows: usize,
    pub test_rows: usize,
    pub coefficients: Vec<Coefficient>,
    pub intercept: f64,
    pub train: Performance,
    pub test: Performance,
    /// Every fitted variable, IV descending.
    pub screening: Vec<ScreeningRow>,
    pub training: TrainingSummary,
    pub protocol: Option<ProtocolSummary>,
}

impl ScorecardReport {
    /// Fixed-column text report.
    pub fn to_text(&self, iv_threshold: f64) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scorecard report");
        let _ = writeln!(s, "mode            {}", self.mode);
        let _ = writeln!(s, "train rows      {}", self.train_rows);
        let _ = writeln!(s, "test rows       {}", self.test_rows);
        let t = &self.training;
        let _ = writeln!(
            s,
            "stop            {} after {} iterations",
            stop_name(t.stop),
            t.iterations
        );
        let _ = writeln!(s, "final loss      {:.6}", t.final_loss);
        let _ = writeln!(s, "kkt residual    {:.3e}", t.kkt_residual);
        if let Some(p) = &self.protocol {
            let _ = writeln!(
                s,
                "transcript      {} messages, {} bytes, flow {}, privacy violations {}",
                p.messages,
                p.bytes,
                if p.flow_conforms { "ok" } else { "FAILED" },
                p.privacy_violations
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "variable screening (IV descending, threshold {iv_threshold})"
        );
        let _ = writeln!(
            s,
            "{:<24} {:<6} {:<12} {:>9} {:>9} {:>8}",
            "variable", "party", "type", "missing%", "IV", "selected"
        );
        for r in &self.screening {
            let _ = writeln!(
                s,
                "{:<24} {:<6} {:<12} {:>9.2} {:>9.4} {:>8}",
                r.name,
                r.party.to_string(),
                kind_name(r.data_type),
                r.missing_rate_pct,
                r.iv,
                if r.selected { "yes" } else { "no" }
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "scorecard");
        let _ = writeln!(s, "{:<28} {:<6} {:>12}", "variable", "party", "coefficient");
        for c in &self.coefficients {
            let _ = writeln!(
                s,
                "{:<28} {:<6} {:>12.6}",
                format!("{}_woe", c.name),
                c.party.to_string(),
                c.coefficient
            );
        }
        let _ = writeln!(s, "{:<28} {:<6} {:>12.6}", "intercept", "", self.intercept);
        let _ = writeln!(s);
        let _ = writeln!(s, "performance");
        let _ = writeln!(s, "{:<6} {:>8} {:>8}", "split", "AUC", "KS");
        for (name, p) in [("train", self.train), ("test", self.test)] {
            let _ = writeln!(s, "{:<6} {:>8.4} {:>8.4}", name, p.auc, p.ks);
        }
        s
    }
}

fn stop_name(s: StopReason) -> &'static str {
    match s {
        StopReason::LossPlateau => "loss_plateau",
        StopReason::WeightsStalled => "weights_stalled",
        StopReason::MaxIter => "max_iter",
    }
}

fn kind_name(k: ColumnKind) -> &'static str {
    match k {
        ColumnKind::Numeric => "numeric",
        ColumnKind::Categorical => "categorical",
        ColumnKind::Label => "label",
        ColumnKind::Id => "id",
    }
}

/// Aligned views for both parties.
fn load_aligned(data: &DataConfig) -> Result<(PartyView, PartyView), PipelineError> {
    let hs = Schema::load(&data.host_schema).in_phase(Phase::Load)?;
    let gs = Schema::load(&data.guest_schema).in_phase(Phase::Load)?;
    let host = load_csv(&data.host_csv, Role::Host, &hs).in_phase(Phase::Load)?;
    let guest = load_csv(&data.guest_csv, Role::Guest, &gs).in_phase(Phase::Load)?;
    log::info!(
        "loaded {} host rows and {} guest rows",
        host.len(),
        guest.len()
    );
    let (a, b) = align(&host, &guest).in_phase(Phase::Align)?;
    log::info!("{} rows after alignment", a.len());
    Ok((a, b))
}

fn labels_of(view: &PartyView) -> &[u8] {
    view.labels.as_deref().expect("guest views carry labels")
}

/// WOE features of both splits after fitting and screening on train.
pub struct PreparedData {
    pub host_tables: Vec<WoeTable>,
    pub guest_tables: Vec<WoeTable>,
    pub screening: Vec<ScreeningRow>,
    pub train_host: Matrix,
    pub train_guest: Matrix,
    pub test_host: Matrix,
    pub test_guest: Matrix,
    pub train_labels: Vec<u8>,
    pub test_labels: Vec<u8>,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

pub fn prepare(config: &RunConfig) -> Result<PreparedData, PipelineError> {
    let (host, guest) = load_aligned(&config.data)?;
    let parts = split(&host, &guest, &config.split_spec()).in_phase(Phase::Split)?;
    let (train_a, train_b) = &parts.train;
    let (test_a, test_b) = &parts.test;
    let labels = labels_of(train_b);

    // The orchestrator hands training labels to the host's binning step;
    // the host's view itself never carries them.
    let host_all = fit_view(train_a, labels, config.woe.max_bins).in_phase(Phase::Woe)?;
    let guest_all = fit_view(train_b, labels, config.woe.max_bins).in_phase(Phase::Woe)?;
    let threshold = config.woe.iv_threshold;
    let kept: BTreeSet<String> = screen(&host_all, threshold)
        .into_iter()
        .chain(screen(&guest_all, threshold))
        .collect();

    let mut screening: Vec<ScreeningRow> = host_all
        .iter()
        .map(|t| (Role::Host, t))
        .chain(guest_all.iter().map(|t| (Role::Guest, t)))
        .map(|(party, t)| ScreeningRow {
            name: t.variable.clone(),
            party,
            data_type: t.kind,
            missing_rate_pct: 100.0 * t.missing_rate,
            iv: t.iv,
            selected: kept.contains(&t.variable),
        })
        .collect();
    screening.sort_by(|a, b| b.iv.total_cmp(&a.iv).then_with(|| a.name.cmp(&b.name)));

    let host_tables: Vec<WoeTable> = host_all
        .into_iter()
        .filter(|t| kept.contains(&t.variable))
        .collect();
    let guest_tables: Vec<WoeTable> = guest_all
        .into_iter()
        .filter(|t| kept.contains(&t.variable))
        .collect();
    log::info!(
        "kept {} host and {} guest variables at IV > {threshold}",
        host_tables.len(),
        guest_tables.len()
    );
    let woe =
        |v: &PartyView, t: &[WoeTable]| transform(v, t).map(|m| m.values).in_phase(Phase::Woe);
    Ok(PreparedData {
        train_host: woe(train_a, &host_tables)?,
        train_guest: woe(train_b, &guest_tables)?,
        test_host: woe(test_a, &host_tables)?,
        test_guest: woe(test_b, &guest_tables)?,
        train_labels: labels.to_vec(),
        test_labels: labels_of(test_b).to_vec(),
        train_ids: train_a.ids.clone(),
        test_ids: test_a.ids.clone(),
        host_tables,
        guest_tables,
        screening,
    })
}

/// Result of the training step.
pub struct FittedModel {
    pub weights: Weights,
    pub coefficients: Vec<Coefficient>,
    pub stop: StopReason,
    pub iterations: usize,
    pub final_loss: f64,
    pub protocol: Option<ProtocolSummary>,
    /// Canonically ordered delivery log (federated mode only).
    pub transcript: Option<crate::fedproto::Transcript>,
}

fn named(tables: &[WoeTable], party: Role, w: &[f64]) -> Vec<Coefficient> {
    tables
        .iter()
        .zip(w)
        .map(|(t, &coefficient)| Coefficient {
            name: t.variable.clone(),
            party,
            coefficient,
        })
        .collect()
}

/// Feature matrix a model of `mode` scores.
fn model_matrix(mode: Mode, host: &Matrix, guest: &Matrix) -> Matrix {
    match mode {
        Mode::HostOnly => host.clone(),
        _ => host.hconcat(guest),
    }
}

pub fn fit_model(config: &RunConfig, data: &PreparedData) -> Result<FittedModel, PipelineError> {
    let t = &config.train;
    let (na, nb) = (data.train_host.cols(), data.train_guest.cols());
    let seed = t.master_seed;
    match t.mode {
        Mode::Centralized | Mode::HostOnly => {
            let x = model_matrix(t.mode, &data.train_host, &data.train_guest);
            let batch = LabeledBatch::from_binary(x, &data.train_labels).in_phase(Phase::Train)?;
            let mut w0 = host_initial_weights(na, seed);
            if t.mode == Mode::Centralized {
                w0.extend(guest_initial_weights(nb, seed));
            }
            let bounds = BoxBounds::nonnegative(w0.len());
            let out = train_centralized(
                &batch,
                &t.train_config(),
                &bounds,
                Some(Weights::new(w0, 0.0)),
            )
            .in_phase(Phase::Train)?;
            let mut coefficients = named(&data.host_tables, Role::Host, &out.weights.w[..na]);
            if t.mode == Mode::Centralized {
                coefficients.extend(named(&data.guest_tables, Role::Guest, &out.weights.w[na..]));
            }
            Ok(FittedModel {
                coefficients,
                stop: out.stop,
                iterations: out.iterations,
                final_loss: *out.losses.last().expect("at least one loss"),
                weights: out.weights,
                protocol: None,
                transcript: None,
            })
        }
        Mode::Federated => {
            let mut pc = ProtocolConfig::new(TrainConfig {
                loss: LossKind::Taylor,
                ..t.train_config()
            })
            .with_key_bits(t.key_bits);
            pc.timeout = Duration::from_secs(t.timeout_secs);
            if t.seeded_crypto {
                pc = pc.with_crypto_seed(seed);
            }
            let parties = setup(
                &pc,
                data.train_host.clone(),
                data.train_guest.clone(),
                &data.train_labels,
            )
            .in_phase(Phase::Train)?;
            log::info!("running federated training with {}-bit keys", t.key_bits);
            let out = match run_threaded(parties, pc.timeout) {
                Ok(out) => out,
                Err(failure) => {
                    log::error!("partial transcript:\n{}", failure.transcript.dump());
                    return Err(failure).in_phase(Phase::Train);
                }
            };
            let flow = check_flow(&out.transcript);
            let key = out.parties.coordinator.private_key();
            let secrets = key.secret_bytes();
            let mut sensitive: Vec<f64> = data
                .host_tables
                .iter()
                .chain(&data.guest_tables)
                .flat_map(|t| t.bins.iter().map(|b| b.woe))
                .collect();
            sensitive.extend([0.5, -0.5]);
            let privacy = audit_privacy(
                &out.transcript,
                &PrivacyContext {
                    public_key: key.public_key(),
                    secrets: &secrets,
                    rows: data.train_labels.len(),
                    host_dim: na,
                    sensitive_values: &sensitive,
                },
            );
            for v in &privacy.violations {
                log::error!("privacy audit: {v}");
            }
            if let Err(e) = &flow {
                log::error!("flow check: {e}");
            }
            let protocol = ProtocolSummary {
                messages: out.transcript.len(),
                bytes: out.transcript.total_bytes(),
                flow_conforms: flow.is_ok(),
                privacy_violations: privacy.violations.len(),
            };
            let mut coefficients = named(&data.host_tables, Role::Host, out.host_weights());
            coefficients.extend(named(
                &data.guest_tables,
                Role::Guest,
                &out.guest_weights().w,
            ));
            Ok(FittedModel {
                weights: out.combined_weights(),
                coefficients,
                stop: out.stop(),
                iterations: out.iterations(),
                final_loss: *out.losses().last().expect("at least one loss"),
                protocol: Some(protocol),
                transcript: Some(out.transcript.canonicalized()),
            })
        }
    }
}

fn probabilities(weights: &Weights, x: &Matrix) -> Result<Vec<f64>, PipelineError> {
    x.iter_rows()
        .map(|r| predict_proba(weights, r).in_phase(Phase::Evaluate))
        .collect()
}

fn performance(
    weights: &Weights,
    x: &Matrix,
    labels: &[u8],
) -> Result<
    (
        Performance,
        crate::metrics::RocResult,
        crate::metrics::KsResult,
    ),
    PipelineError,
> {
    let samples = scored(&probabilities(weights, x)?, labels).in_phase(Phase::Evaluate)?;
    let roc = roc_auc(&samples).in_phase(Phase::Evaluate)?;
    let k = ks(&samples).in_phase(Phase::Evaluate)?;
    Ok((
        Performance {
            auc: roc.auc,
            ks: k.statistic,
        },
        roc,
        k,
    ))
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    fs::write(path, text)
        .map_err(|e| PipelineError::new(Phase::Report, format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path, phase: Phase) -> Result<(), PipelineError> {
    fs::create_dir_all(dir)
        .map_err(|e| PipelineError::new(phase, format!("{}: {e}", dir.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report types serialize") + "\n"
}

pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_JSON: &str = "report.json";
pub const WEIGHTS_JSON: &str = "weights.json";
pub const WOE_HOST_JSON: &str = "woe_host.json";
pub const WOE_GUEST_JSON: &str = "woe_guest.json";
pub const TRANSCRIPT_JSONL: &str = "transcript.jsonl";
pub const TRAIN_IDS: &str = "train_ids.txt";
pub const TEST_IDS: &str = "test_ids.txt";

pub struct TrainRun {
    pub report: ScorecardReport,
    pub files: Vec<PathBuf>,
}

/// Full training workflow; writes every artifact into the output directory.
pub fn cmd_train(config: &RunConfig) -> Result<TrainRun, PipelineError> {
    config.validate()?;
    let data = prepare(config)?;
    let model = fit_model(config, &data)?;
    let mode = config.train.mode;

    let train_x = model_matrix(mode, &data.train_host, &data.train_guest);
    let test_x = model_matrix(mode, &data.test_host, &data.test_guest);
    let (train_perf, roc_train, ks_train) =
        performance(&model.weights, &train_x, &data.train_labels)?;
    let (test_perf, roc_test, ks_test) = performance(&model.weights, &test_x, &data.test_labels)?;

    let full = LabeledBatch::from_binary(train_x, &data.train_labels).in_phase(Phase::Train)?;
    let loss = match mode {
        Mode::Federated => LossKind::Taylor,
        _ => config.train.loss,
    };
    let kkt = kkt_residual(
        &model.weights,
        &full,
        &BoxBounds::nonnegative(model.weights.dim()),
        loss,
    )
    .in_phase(Phase::Train)?;

    let report = ScorecardReport {
        mode,
        train_rows: data.train_labels.len(),
        test_rows: data.test_labels.len(),
        coefficients: model.coefficients.clone(),
        intercept: model.weights.b,
        train: train_perf,
        test: test_perf,
        screening: data.screening.clone(),
        training: TrainingSummary {
            stop: model.stop,
            iterations: model.iterations,
            final_loss: model.final_loss,
            kkt_residual: kkt.residual,
            max_sign_violation: kkt.max_sign_violation(),
        },
        protocol: model.protocol.clone(),
    };

    let dir = &config.output.dir;
    create_dir(dir, Phase::Report)?;
    let mut files = Vec::new();
    let mut emit = |name: &str, text: String| -> Result<(), PipelineError> {
        let path = dir.join(name);
        write_text(&path, &text)?;
        files.push(path);
        Ok(())
    };
    emit(REPORT_TXT, report.to_text(config.woe.iv_threshold))?;
    emit(REPORT_JSON, to_json(&report))?;
    emit(
        WEIGHTS_JSON,
        to_json(&ModelFile {
            mode,
            intercept: model.weights.b,
            coefficients: model.coefficients.clone(),
        }),
    )?;
    emit(
        WOE_HOST_JSON,
        WoePipeline {
            tables: data.host_tables.clone(),
        }
        .to_json()
            + "\n",
    )?;
    emit(
        WOE_GUEST_JSON,
        WoePipeline {
            tables: data.guest_tables.clone(),
        }
        .to_json()
            + "\n",
    )?;
    emit(TRAIN_IDS, data.train_ids.join("\n") + "\n")?;
    emit(TEST_IDS, data.test_ids.join("\n") + "\n")?;
    for (name, roc) in [("roc_train.txt", &roc_train), ("roc_test.txt", &roc_test)] {
        let path = dir.join(name);
        write_roc(&path, roc).in_phase(Phase::Report)?;
        files.push(path);
    }
    for (name, k) in [("ks_train.txt", &ks_train), ("ks_test.txt", &ks_test)] {
        let path = dir.join(name);
        write_ks(&path, k).in_phase(Phase::Report)?;
        files.push(path);
    }
    if let Some(t) = &model.transcript {
        let path = dir.join(TRANSCRIPT_JSONL);
        t.save_json_lines(&path).in_phase(Phase::Report)?;
        files.push(path);
    }
    log::info!(
        "train AUC {:.4} KS {:.4}, test AUC {:.4} KS {:.4}",
        train_perf.auc,
        train_perf.ks,
        test_perf.auc,
        test_perf.ks
    );
    Ok(TrainRun { report, files })
}

/// Inputs of `evaluate`: a trained model directory and data to score.
#[derive(Debug, Clone)]
pub struct EvaluateArgs {
    pub model_dir: PathBuf,
    pub data: DataConfig,
    /// Restrict scoring to the ids listed one per line.
    pub ids: Option<PathBuf>,
    pub out: PathBuf,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub rows: usize,
    pub auc: f64,
    pub ks: f64,
    pub ks_threshold: f64,
}

fn tables_for(
    coefficients: &[Coefficient],
    party: Role,
    pipeline: &WoePipeline,
) -> Result<Vec<WoeTable>, PipelineError> {
    coefficients
        .iter()
        .filter(|c| c.party == party)
        .map(|c| {
            pipeline.table(&c.name).cloned().ok_or_else(|| {
                PipelineError::new(
                    Phase::Evaluate,
                    format!("no {party} WOE table for model variable {:?}", c.name),
                )
            })
        })
        .collect()
}

/// Scores data with a saved model and writes its ROC/KS curves and summary.
pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<EvalReport, PipelineError> {
    let read = |name: &str| {
        let path = args.model_dir.join(name);
        fs::read_to_string(&path)
            .map_err(|e| PipelineError::new(Phase::Load, format!("{}: {e}", path.display())))
    };
    let model: ModelFile = serde_json::from_str(&read(WEIGHTS_JSON)?).in_phase(Phase::Load)?;
    let woe_host = WoePipeline::from_json(&read(WOE_HOST_JSON)?).in_phase(Phase::Load)?;
    let woe_guest = WoePipeline::from_json(&read(WOE_GUEST_JSON)?).in_phase(Phase::Load)?;
    let host_tables = tables_for(&model.coefficients, Role::Host, &woe_host)?;
    let guest_tables = tables_for(&model.coefficients, Role::Guest, &woe_guest)?;

    let (mut host, mut guest) = load_aligned(&args.data)?;
    if let Some(path) = &args.ids {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::new(Phase::Load, format!("{}: {e}", path.display())))?;
        let wanted: BTreeSet<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        let rows: Vec<usize> = (0..host.len())
            .filter(|&i| wanted.contains(host.ids[i].as_str()))
            .collect();
        if rows.len() != wanted.len() {
            return Err(PipelineError::new(
                Phase::Align,
                format!(
                    "{} listed ids are not in both data sets",
                    wanted.len() - rows.len()
                ),
            ));
        }
        host = host.select_rows(&rows);
        guest = guest.select_rows(&rows);
    }
    let xa = transform(&host, &host_tables).in_phase(Phase::Woe)?.values;
    let xb = transform(&guest, &guest_tables)
        .in_phase(Phase::Woe)?
        .values;
    let x = xa.hconcat(&xb);
    let coefs: Vec<f64> = model
        .coefficients
        .iter()
        .filter(|c| c.party == Role::Host)
        .chain(model.coefficients.iter().filter(|c| c.party == Role::Guest))
        .map(|c| c.coefficient)
        .collect();
    let weights = Weights::new(coefs, model.intercept);
    let (perf, roc, k) = performance(&weights, &x, labels_of(&guest))?;

    create_dir(&args.out, Phase::Report)?;
    write_roc(&args.out.join(format!("roc_{}.txt", args.name)), &roc).in_phase(Phase::Report)?;
    write_ks(&args.out.join(format!("ks_{}.txt", args.name)), &k).in_phase(Phase::Report)?;
    let report = EvalReport {
        name: args.name.clone(),
        rows: x.rows(),
        auc: perf.auc,
        ks: perf.ks,
        ks_threshold: k.argmax_threshold,
    };
    write_text(
        &args.out.join(format!("{}.json", args.name)),
        &to_json(&report),
    )?;
    Ok(report)
}

pub const RUN_TOML: &str = "run.toml";

/// Generates a synthetic data set plus a ready-to-run `run.toml`.
pub fn cmd_gen_synth(spec: &SynthSpec, out: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let data = synth::generate(spec).in_phase(Phase::Synth)?;
    let mut files = synth::write_dataset(&data, out).in_phase(Phase::Synth)?;
    let config = RunConfig {
        data: DataConfig {
            host_csv: synth::HOST_CSV.into(),
            host_schema: synth::HOST_SCHEMA.into(),
            guest_csv: synth::GUEST_CSV.into(),
            guest_schema: synth::GUEST_SCHEMA.into(),
        },
        split: SplitConfig::default(),
        woe: WoeConfig::default(),
        train: TrainSection::default(),
        output: OutputConfig { dir: "run".into() },
    };
    let path = out.join(RUN_TOML);
    write_text(&path, &config.to_toml())?;
    files.push(path);
    Ok(files)
}
