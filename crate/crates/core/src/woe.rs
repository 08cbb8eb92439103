//! Weight-of-evidence binning and information-value screening.
//!
//! Sign convention: bads (label 1) in the numerator, so a positive WOE marks
//! a bin riskier than the population and risk-aligned coefficients are
//! non-negative.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{read_to_string, Column, ColumnKind, DataError, PartyView};
use crate::matrix::Matrix;

pub const DEFAULT_MAX_BINS: usize = 10;
pub const DEFAULT_IV_THRESHOLD: f64 = 0.02;

#[derive(Debug, Error)]
pub enum WoeError {
    #[error("variable {0:?}: labels must contain both classes")]
    SingleClass(String),
    #[error("variable {variable:?}: {values} values but {labels} labels")]
    Length {
        variable: String,
        values: usize,
        labels: usize,
    },
    #[error("variable {variable:?}: category {category:?} has no {missing_class}; group it with a similar category before fitting")]
    CategoryZeroCount {
        variable: String,
        category: String,
        missing_class: &'static str,
    },
    #[error("variable {variable:?}: the missing-value group has no {missing_class}; impute or drop the missing rows")]
    MissingGroupZeroCount {
        variable: String,
        missing_class: &'static str,
    },
    #[error("variable {variable:?}: non-missing values contain no {missing_class}")]
    NumericZeroCount {
        variable: String,
        missing_class: &'static str,
    },
    #[error("max_bins must be at least 1")]
    MaxBins,
    #[error("no column named {0:?} in the data")]
    MissingColumn(String),
    #[error("variable {variable:?}: table is {table:?} but data column is {data:?}")]
    KindMismatch {
        variable: String,
        table: ColumnKind,
        data: ColumnKind,
    },
    #[error("io: {0}")]
    Data(#[from] DataError),
    #[error("woe table file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum BinDefinition {
    /// Half-open `[lower, upper)`; `None` is unbounded.
    Numeric {
        lower: Option<f64>,
        upper: Option<f64>,
    },
    Categories {
        values: Vec<String>,
    },
    Missing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub definition: BinDefinition,
    pub bad_count: u64,
    pub good_count: u64,
    pub woe: f64,
}

impl Bin {
    pub fn total(&self) -> u64 {
        self.bad_count + self.good_count
    }

    pub fn bad_rate(&self) -> f64 {
        self.bad_count as f64 / self.total() as f64
    }

    fn contains(&self, x: f64) -> bool {
        match &self.definition {
            BinDefinition::Numeric { lower, upper } => {
                lower.is_none_or(|l| x >= l) && upper.is_none_or(|u| x < u)
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WoeTable {
    pub variable: String,
    pub kind: ColumnKind,
    pub bins: Vec<Bin>,
    pub iv: f64,
    pub missing_rate: f64,
    pub total_bad: u64,
    pub total_good: u64,
}

/// `ln((bad / total_bad) / (good / total_good))`.
pub fn woe_value(bad: u64, good: u64, total_bad: u64, total_good: u64) -> f64 {
    ((bad as f64 / total_bad as f64) / (good as f64 / total_good as f64)).ln()
}

impl WoeTable {
    /// Index of the bin a raw value falls into, if any.
    pub fn bin_index_numeric(&self, x: Option<f64>) -> Option<usize> {
        match x {
            None => self
                .bins
                .iter()
                .position(|b| b.definition == BinDefinition::Missing),
            Some(v) => self.bins.iter().position(|b| b.contains(v)),
        }
    }

    pub fn bin_index_category(&self, x: Option<&str>) -> Option<usize> {
        match x {
            None => self
                .bins
                .iter()
                .position(|b| b.definition == BinDefinition::Missing),
            Some(v) => self.bins.iter().position(|b| match &b.definition {
                BinDefinition::Categories { values } => values.iter().any(|c| c == v),
                _ => false,
            }),
        }
    }

    pub fn has_missing_group(&self) -> bool {
        self.bins
            .iter()
            .any(|b| b.definition == BinDefinition::Missing)
    }

    /// Recomputes every bin's WOE from its counts.
    pub fn refresh_woe(&mut self) {
        for b in &mut self.bins {
            b.woe = woe_value(b.bad_count, b.good_count, self.total_bad, self.total_good);
        }
    }
}

/// `sum_i (Bad_i / sum Bad - Good_i / sum Good) * WOE_i`, stored on the table.
pub fn compute_iv(table: &mut WoeTable) -> f64 {
    let (tb, tg) = (table.total_bad as f64, table.total_good as f64);
    table.iv = table
        .bins
        .iter()
        .map(|b| (b.bad_count as f64 / tb - b.good_count as f64 / tg) * b.woe)
        .sum();
    table.iv
}

/// Fits bins for one variable and computes WOE and IV.
///
/// Numeric columns start from equal-frequency cut points; adjacent bins are
/// merged until every bin holds both classes. Categories get one bin each,
/// and missing values form their own group.
pub fn fit_bins(
    variable: &str,
    values: &Column,
    labels: &[u8],
    max_bins: usize,
) -> Result<WoeTable, WoeError> {
    if max_bins == 0 {
        return Err(WoeError::MaxBins);
    }
    if values.len() != labels.len() {
        return Err(WoeError::Length {
            variable: variable.into(),
            values: values.len(),
            labels: labels.len(),
        });
    }
    let total_bad = labels.iter().filter(|&&l| l == 1).count() as u64;
    let total_good = labels.len() as u64 - total_bad;
    if total_bad == 0 || total_good == 0 {
        return Err(WoeError::SingleClass(variable.into()));
    }

    let mut bins = match values {
        Column::Numeric(v) => numeric_bins(variable, v, labels, max_bins)?,
        Column::Categorical(v) => categorical_bins(variable, v, labels)?,
    };

    let missing: Vec<usize> = (0..labels.len())
        .filter(|&i| match values {
            Column::Numeric(v) => v[i].is_none(),
            Column::Categorical(v) => v[i].is_none(),
        })
        .collect();
    if !missing.is_empty() {
        let bad = missing.iter().filter(|&&i| labels[i] == 1).count() as u64;
        let good = missing.len() as u64 - bad;
        if let Some(missing_class) = zero_class(bad, good) {
            return Err(WoeError::MissingGroupZeroCount {
                variable: variable.into(),
                missing_class,
            });
        }
        bins.push(Bin {
            definition: BinDefinition::Missing,
            bad_count: bad,
            good_count: good,
            woe: 0.0,
        });
    }

    let mut table = WoeTable {
        variable: variable.into(),
        kind: values.kind(),
        bins,
        iv: 0.0,
        missing_rate: missing.len() as f64 / labels.len() as f64,
        total_bad,
        total_good,
    };
    table.refresh_woe();
    compute_iv(&mut table);
    Ok(table)
}

fn zero_class(bad: u64, good: u64) -> Option<&'static str> {
    if bad == 0 {
        Some("bads (label 1)")
    } else if good == 0 {
        Some("goods (label 0)")
    } else {
        None
    }
}

fn numeric_bins(
    variable: &str,
    values: &[Option<f64>],
    labels: &[u8],
    max_bins: usize,
) -> Result<Vec<Bin>, WoeError> {
    let mut present: Vec<(f64, u8)> = values
        .iter()
        .zip(labels)
        .filter_map(|(v, &l)| v.map(|x| (x, l)))
        .collect();
    if present.is_empty() {
        return Ok(Vec::new());
    }
    present.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = present.len();

    let mut cuts: Vec<f64> = Vec::new();
    for j in 1..max_bins {
        let c = present[j * n / max_bins].0;
        if c > present[0].0 && cuts.last().is_none_or(|&last| c > last) {
            cuts.push(c);
        }
    }

    // counts[k] covers [cuts[k-1], cuts[k]).
    let mut counts = vec![(0u64, 0u64); cuts.len() + 1];
    let mut k = 0;
    for &(x, l) in &present {
        while k < cuts.len() && x >= cuts[k] {
            k += 1;
        }
        if l == 1 {
            counts[k].0 += 1;
        } else {
            counts[k].1 += 1;
        }
    }

    while counts.len() > 1 {
        let Some(i) = counts.iter().position(|&(b, g)| b == 0 || g == 0) else {
            break;
        };
        let j = if i == 0 {
            1
        } else if i + 1 == counts.len() {
            i - 1
        } else {
            let left = counts[i - 1].0 + counts[i - 1].1;
            let right = counts[i + 1].0 + counts[i + 1].1;
            if left < right {
                i - 1
            } else {
                i + 1
            }
        };
        let (lo, hi) = (i.min(j), i.max(j));
        counts[lo].0 += counts[hi].0;
        counts[lo].1 += counts[hi].1;
        counts.remove(hi);
        // The cut separating lo and hi is cuts[lo].
        cuts.remove(lo);
    }
    if let Some(missing_class) = zero_class(counts[0].0, counts[0].1) {
        return Err(WoeError::NumericZeroCount {
            variable: variable.into(),
            missing_class,
        });
    }

    Ok(counts
        .iter()
        .enumerate()
        .map(|(k, &(bad, good))| Bin {
            definition: BinDefinition::Numeric {
                lower: k.checked_sub(1).map(|p| cuts[p]),
                upper: cuts.get(k).copied(),
            },
            bad_count: bad,
            good_count: good,
            woe: 0.0,
        })
        .collect())
}

fn categorical_bins(
    variable: &str,
    values: &[Option<String>],
    labels: &[u8],
) -> Result<Vec<Bin>, WoeError> {
    let mut counts: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for (v, &l) in values.iter().zip(labels) {
        if let Some(c) = v {
            let e = counts.entry(c.as_str()).or_default();
            if l == 1 {
                e.0 += 1;
            } else {
                e.1 += 1;
            }
        }
    }
    counts
        .into_iter()
        .map(|(category, (bad, good))| {
            if let Some(missing_class) = zero_class(bad, good) {
                return Err(WoeError::CategoryZeroCount {
                    variable: variable.into(),
                    category: category.into(),
                    missing_class,
                });
            }
            Ok(Bin {
                definition: BinDefinition::Categories {
                    values: vec![category.to_owned()],
                },
                bad_count: bad,
                good_count: good,
                woe: 0.0,
            })
        })
        .collect()
}

/// Names of variables with IV strictly above `threshold`, highest IV first.
pub fn screen(tables: &[WoeTable], threshold: f64) -> Vec<String> {
    let mut kept: Vec<&WoeTable> = tables.iter().filter(|t| t.iv > threshold).collect();
    kept.sort_by(|a, b| {
        b.iv.total_cmp(&a.iv)
            .then_with(|| a.variable.cmp(&b.variable))
    });
    kept.into_iter().map(|t| t.variable.clone()).collect()
}

/// Fits a table for every feature of a labeled view.
pub fn fit_view(
    view: &PartyView,
    labels: &[u8],
    max_bins: usize,
) -> Result<Vec<WoeTable>, WoeError> {
    view.feature_names
        .iter()
        .zip(&view.columns)
        .map(|(name, col)| fit_bins(name, col, labels, max_bins))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WoeMatrix {
    pub names: Vec<String>,
    pub values: Matrix,
    /// Values that matched no fitted bin and were mapped to WOE 0.
    pub unseen: usize,
}

/// Replaces raw values by their bin's WOE, one output column per table.
pub fn transform(view: &PartyView, tables: &[WoeTable]) -> Result<WoeMatrix, WoeError> {
    let rows = view.len();
    let mut unseen = 0;
    let mut columns = Vec::with_capacity(tables.len());
    for table in tables {
        let col = view
            .column(&table.variable)
            .ok_or_else(|| WoeError::MissingColumn(table.variable.clone()))?;
        if col.kind() != table.kind {
            return Err(WoeError::KindMismatch {
                variable: table.variable.clone(),
                table: table.kind,
                data: col.kind(),
            });
        }
        let mut out = Vec::with_capacity(rows);
        for i in 0..rows {
            let idx = match col {
                Column::Numeric(v) => table.bin_index_numeric(v[i]),
                Column::Categorical(v) => table.bin_index_category(v[i].as_deref()),
            };
            out.push(match idx {
                Some(k) => table.bins[k].woe,
                None => {
                    unseen += 1;
                    0.0
                }
            });
        }
        columns.push(out);
    }
    if unseen > 0 {
        log::warn!("{unseen} values fell outside fitted bins and were mapped to WOE 0");
    }
    Ok(WoeMatrix {
        names: tables.iter().map(|t| t.variable.clone()).collect(),
        values: Matrix::from_columns(&columns, rows),
        unseen,
    })
}

/// Persisted set of fitted tables for one party.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WoePipeline {
    pub tables: Vec<WoeTable>,
}

impl WoePipeline {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("woe tables serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, WoeError> {
        serde_json::from_str(text).map_err(|e| WoeError::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, WoeError> {
        Self::from_json(&read_to_string(path)?)
    }

    pub fn table(&self, variable: &str) -> Option<&WoeTable> {
        self.tables.iter().find(|t| t.variable == variable)
    }
}
