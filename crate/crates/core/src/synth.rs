//! Synthetic vertically partitioned credit data with known truth.
//!
//! Features follow a two-class Gaussian model with a shared covariance:
//! `x | y ~ N(y * delta, Sigma)` with `delta = Sigma * beta`, so the posterior
//! log-odds are exactly `beta^T x + c`. Informative features of one party are
//! equicorrelated; noise features and the two parties are independent. Each
//! informative feature's marginal log-odds is linear with slope
//! `delta_j / Sigma_jj`, so on the WOE scale its true coefficient is
//! `beta_j * Sigma_jj / delta_j`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{Column, ColumnKind, DataError, PartyView, Role};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    /// Rows shared by both parties.
    pub n_samples: usize,
    pub host_informative: usize,
    pub guest_informative: usize,
    /// Pure-noise features added to each party.
    pub noise_features: usize,
    pub seed: u64,
    /// Share of defaults.
    pub prevalence: f64,
    /// Squared Mahalanobis separation contributed by each party's features.
    pub host_signal: f64,
    pub guest_signal: f64,
    /// Correlation between informative features of the same party.
    pub correlation: f64,
    /// Missing share in the first host informative feature.
    pub missing_rate: f64,
    /// Extra ids per party (relative to `n_samples`) that the other party lacks.
    pub unmatched_fraction: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_samples: 5000,
            host_informative: 4,
            guest_informative: 3,
            noise_features: 1,
            seed: 7,
            prevalence: 0.3,
            host_signal: 0.55,
            guest_signal: 0.65,
            correlation: 0.3,
            missing_rate: 0.1,
            unmatched_fraction: 0.02,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Spec(m.into()));
        if self.n_samples < 100 {
            return bad("n_samples must be at least 100");
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return bad("prevalence must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.correlation) {
            return bad("correlation must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad("missing_rate must lie in [0, 1)");
        }
        if !(self.host_signal >= 0.0 && self.guest_signal >= 0.0) {
            return bad("signal strengths must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.unmatched_fraction) {
            return bad("unmatched_fraction must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFeature {
    pub name: String,
    pub role: Role,
    pub informative: bool,
    pub kind: ColumnKind,
    /// Coefficient on the latent Gaussian feature.
    pub beta: f64,
    /// Expected coefficient on the feature's WOE.
    pub woe_coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SynthSpec,
    pub features: Vec<TruthFeature>,
}

impl GroundTruth {
    pub fn woe_coefficient(&self, name: &str) -> Option<f64> {
        self.features
            .iter()
            .find(|f| f.name == name)
            .map(|f| f.woe_coefficient)
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub host: PartyView,
    pub guest: PartyView,
    pub truth: GroundTruth,
}

/// Output file names inside a generated directory.
pub const HOST_CSV: &str = "host.csv";
pub const GUEST_CSV: &str = "guest.csv";
pub const HOST_SCHEMA: &str = "host_schema.toml";
pub const GUEST_SCHEMA: &str = "guest_schema.toml";
pub const TRUTH_JSON: &str = "truth.json";
pub const ID_COLUMN: &str = "id";
pub const LABEL_COLUMN: &str = "default";

const REGIONS: [&str; 5] = ["north", "south", "east", "west", "central"];
const REGION_CUTS: [f64; 4] = [-0.84, -0.25, 0.25, 0.84];

/// How a latent value is written out. All maps are monotone, so binning
/// sees the same ordering.
#[derive(Clone, Copy)]
enum Shape {
    Plain,
    Amount,
    Reversed,
    Region,
}

struct PartyPlan {
    names: Vec<String>,
    shapes: Vec<Shape>,
    /// Class shift `delta_j`; zero for noise.
    shift: Vec<f64>,
    informative: usize,
}

fn party_plan(
    role: Role,
    informative: usize,
    noise: usize,
    signal: f64,
    rho: f64,
) -> (PartyPlan, Vec<TruthFeature>) {
    let prefix = match role {
        Role::Host => "h",
        Role::Guest => "g",
    };
    let raw: Vec<f64> = (1..=informative).map(|j| j as f64).collect();
    let sum: f64 = raw.iter().sum();
    let sq: f64 = raw.iter().map(|b| b * b).sum();
    let denom = (1.0 - rho) * sq + rho * sum * sum;
    let scale = if denom > 0.0 {
        (signal / denom).sqrt()
    } else {
        0.0
    };
    let beta: Vec<f64> = raw.iter().map(|b| b * scale).collect();
    let beta_sum: f64 = beta.iter().sum();

    let mut plan = PartyPlan {
        names: Vec::new(),
        shapes: Vec::new(),
        shift: Vec::new(),
        informative,
    };
    let mut truth = Vec::new();
    for (j, &b) in beta.iter().enumerate() {
        let delta = (1.0 - rho) * b + rho * beta_sum;
        let shape = if role == Role::Guest && informative >= 2 && j + 1 == informative {
            Shape::Region
        } else {
            [Shape::Plain, Shape::Amount, Shape::Reversed][j % 3]
        };
        let name = format!("{prefix}_inf_{}", j + 1);
        let kind = match shape {
            Shape::Region => ColumnKind::Categorical,
            _ => ColumnKind::Numeric,
        };
        truth.push(TruthFeature {
            name: name.clone(),
            role,
            informative: true,
            kind,
            beta: b,
            woe_coefficient: b / delta,
        });
        plan.names.push(name);
        plan.shapes.push(shape);
        plan.shift.push(delta);
    }
    for j in 0..noise {
        let name = format!("{prefix}_noise_{}", j + 1);
        truth.push(TruthFeature {
            name: name.clone(),
            role,
            informative: false,
            kind: ColumnKind::Numeric,
            beta: 0.0,
            woe_coefficient: 0.0,
        });
        plan.names.push(name);
        plan.shapes.push(Shape::Plain);
        plan.shift.push(0.0);
    }
    (plan, truth)
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn latent_row<R: Rng>(plan: &PartyPlan, y: u8, rho: f64, rng: &mut R) -> Vec<f64> {
    let common: f64 = rng.sample(StandardNormal);
    (0..plan.names.len())
        .map(|j| {
            let e: f64 = rng.sample(StandardNormal);
            let base = if j < plan.informative {
                rho.sqrt() * common + (1.0 - rho).sqrt() * e
            } else {
                e
            };
            base + y as f64 * plan.shift[j]
        })
        .collect()
}

enum Cell {
    Num(Option<f64>),
    Cat(Option<String>),
}

fn render(shape: Shape, x: f64) -> Cell {
    match shape {
        Shape::Plain => Cell::Num(Some(round4(x))),
        Shape::Amount => Cell::Num(Some((1000.0 * (0.5 * x).exp()).round())),
        Shape::Reversed => Cell::Num(Some(round4(10.0 - 2.0 * x))),
        Shape::Region => {
            let bucket = REGION_CUTS.iter().filter(|&&c| x >= c).count();
            Cell::Cat(Some(REGIONS[bucket].to_string()))
        }
    }
}

fn build_view(
    role: Role,
    plan: &PartyPlan,
    ids: Vec<String>,
    rows: Vec<Vec<Cell>>,
    labels: Option<Vec<u8>>,
) -> PartyView {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    let columns = (0..plan.names.len())
        .map(|j| match plan.shapes[j] {
            Shape::Region => Column::Categorical(
                order
                    .iter()
                    .map(|&i| match &rows[i][j] {
                        Cell::Cat(v) => v.clone(),
                        Cell::Num(_) => None,
                    })
                    .collect(),
            ),
            _ => Column::Numeric(
                order
                    .iter()
                    .map(|&i| match &rows[i][j] {
                        Cell::Num(v) => *v,
                        Cell::Cat(_) => None,
                    })
                    .collect(),
            ),
        })
        .collect();
    PartyView {
        role,
        id_column: ID_COLUMN.into(),
        ids: order.iter().map(|&i| ids[i].clone()).collect(),
        feature_names: plan.names.clone(),
        columns,
        label_column: labels.as_ref().map(|_| LABEL_COLUMN.to_string()),
        labels: labels.map(|l| order.iter().map(|&i| l[i]).collect()),
    }
}

/// Draws a data set; identical specs give identical data.
pub fn generate(spec: &SynthSpec) -> Result<SynthData, SynthError> {
    spec.validate()?;
    let rho = spec.correlation;
    let (host_plan, mut truth) = party_plan(
        Role::Host,
        spec.host_informative,
        spec.noise_features,
        spec.host_signal,
        rho,
    );
    let (guest_plan, guest_truth) = party_plan(
        Role::Guest,
        spec.guest_informative,
        spec.noise_features,
        spec.guest_signal,
        rho,
    );
    truth.extend(guest_truth);

    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let extra = (spec.n_samples as f64 * spec.unmatched_fraction).round() as usize;
    let total_ids = spec.n_samples + 2 * extra;
    let mut numbers: Vec<usize> = (0..total_ids).collect();
    numbers.shuffle(&mut rng);
    let ids: Vec<String> = numbers.iter().map(|n| format!("C{n:07}")).collect();

    let mut host_rows = Vec::new();
    let mut host_ids = Vec::new();
    let mut guest_rows = Vec::new();
    let mut guest_ids = Vec::new();
    let mut labels = Vec::new();
    let render_row = |plan: &PartyPlan, latent: &[f64]| -> Vec<Cell> {
        latent
            .iter()
            .zip(&plan.shapes)
            .map(|(&x, &s)| render(s, x))
            .collect()
    };
    for (i, id) in ids.iter().enumerate() {
        let y = rng.gen_bool(spec.prevalence) as u8;
        let host_latent = latent_row(&host_plan, y, rho, &mut rng);
        let guest_latent = latent_row(&guest_plan, y, rho, &mut rng);
        let missing = rng.gen_bool(spec.missing_rate);
        let in_host = i < spec.n_samples + extra;
        let in_guest = i < spec.n_samples || i >= spec.n_samples + extra;
        if in_host {
            let mut row = render_row(&host_plan, &host_latent);
            if missing && host_plan.informative > 0 {
                row[0] = Cell::Num(None);
            }
            host_rows.push(row);
            host_ids.push(id.clone());
        }
        if in_guest {
            guest_rows.push(render_row(&guest_plan, &guest_latent));
            guest_ids.push(id.clone());
            labels.push(y);
        }
    }
    Ok(SynthData {
        host: build_view(Role::Host, &host_plan, host_ids, host_rows, None),
        guest: build_view(
            Role::Guest,
            &guest_plan,
            guest_ids,
            guest_rows,
            Some(labels),
        ),
        truth: GroundTruth {
            spec: spec.clone(),
            features: truth,
        },
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), SynthError> {
    fs::write(path, text).map_err(|source| SynthError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes both CSVs, their schemas and `truth.json` into `dir`.
pub fn write_dataset(data: &SynthData, dir: &Path) -> Result<Vec<PathBuf>, SynthError> {
    fs::create_dir_all(dir).map_err(|source| SynthError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let paths: BTreeMap<&str, PathBuf> =
        [HOST_CSV, GUEST_CSV, HOST_SCHEMA, GUEST_SCHEMA, TRUTH_JSON]
            .into_iter()
            .map(|f| (f, dir.join(f)))
            .collect();
    data.host.save_csv(&paths[HOST_CSV])?;
    data.guest.save_csv(&paths[GUEST_CSV])?;
    write_file(&paths[HOST_SCHEMA], &data.host.schema().to_toml())?;
    write_file(&paths[GUEST_SCHEMA], &data.guest.schema().to_toml())?;
    let truth = serde_json::to_string_pretty(&data.truth).expect("truth serializes");
    write_file(&paths[TRUTH_JSON], &(truth + "\n"))?;
    Ok(paths.into_values().collect())
}
