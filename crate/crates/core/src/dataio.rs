//! Per-party CSV ingestion, sample-ID alignment and seeded train/test splits.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: label {value:?} is not binary (expected 0 or 1)")]
    NonBinaryLabel { line: u64, value: String },
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("role violation: {0}")]
    Role(String),
    #[error("schema: {0}")]
    Schema(String),
    #[error("the two parties share no sample ids")]
    EmptyIntersection,
    #[error("views are not aligned: {0}")]
    Misaligned(String),
    #[error("invalid split: {0}")]
    Split(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Party A: features only.
    Host,
    /// Party B: features and labels.
    Guest,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Host => "host",
            Role::Guest => "guest",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Label,
    Id,
}

/// Column name to kind. Column order comes from the CSV header.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Schema {
    pub columns: BTreeMap<String, ColumnKind>,
}

impl Schema {
    pub fn from_toml(text: &str) -> Result<Self, DataError> {
        toml::from_str(text).map_err(|e| DataError::Schema(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        Self::from_toml(&read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn kind(&self, column: &str) -> Option<ColumnKind> {
        self.columns.get(column).copied()
    }
}

/// Raw column values; `None` is the missing marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Column {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> ColumnKind {
        match self {
            Column::Numeric(_) => ColumnKind::Numeric,
            Column::Categorical(_) => ColumnKind::Categorical,
        }
    }

    pub fn missing_count(&self) -> usize {
        match self {
            Column::Numeric(v) => v.iter().filter(|x| x.is_none()).count(),
            Column::Categorical(v) => v.iter().filter(|x| x.is_none()).count(),
        }
    }

    pub fn select(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&i| v[i]).collect()),
            Column::Categorical(v) => {
                Column::Categorical(rows.iter().map(|&i| v[i].clone()).collect())
            }
        }
    }

    fn cell(&self, row: usize) -> String {
        match self {
            Column::Numeric(v) => v[row].map(|x| x.to_string()).unwrap_or_default(),
            Column::Categorical(v) => v[row].clone().unwrap_or_default(),
        }
    }
}

/// One party's vertical slice of the data set.
#[derive(Debug, Clone, PartialEq)]
pub struct PartyView {
    pub role: Role,
    pub id_column: String,
    /// Unique, sorted ascending.
    pub ids: Vec<String>,
    pub feature_names: Vec<String>,
    pub columns: Vec<Column>,
    /// Present iff `role == Guest`.
    pub label_column: Option<String>,
    pub labels: Option<Vec<u8>>,
}

impl PartyView {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.feature_names
            .iter()
            .position(|n| n == name)
            .map(|j| &self.columns[j])
    }

    /// Rows in the given order; callers keep the id ordering invariant.
    pub fn select_rows(&self, rows: &[usize]) -> PartyView {
        PartyView {
            role: self.role,
            id_column: self.id_column.clone(),
            ids: rows.iter().map(|&i| self.ids[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            label_column: self.label_column.clone(),
            labels: self
                .labels
                .as_ref()
                .map(|l| rows.iter().map(|&i| l[i]).collect()),
        }
    }

    pub fn schema(&self) -> Schema {
        let mut columns = BTreeMap::new();
        columns.insert(self.id_column.clone(), ColumnKind::Id);
        for (name, col) in self.feature_names.iter().zip(&self.columns) {
            columns.insert(name.clone(), col.kind());
        }
        if let Some(label) = &self.label_column {
            columns.insert(label.clone(), ColumnKind::Label);
        }
        Schema { columns }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![self.id_column.clone()];
        header.extend(self.feature_names.iter().cloned());
        header.extend(self.label_column.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut record = vec![self.ids[i].clone()];
            record.extend(self.columns.iter().map(|c| c.cell(i)));
            if let Some(labels) = &self.labels {
                record.push(labels[i].to_string());
            }
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| DataError::Io {
            path: "<writer>".into(),
            source: e,
        })?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), DataError> {
        let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub(crate) fn read_to_string(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn load_csv(path: &Path, role: Role, schema: &Schema) -> Result<PartyView, DataError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    read_csv(file, role, schema)
}

/// Parses a party CSV. Empty cells become the missing marker.
pub fn read_csv<R: Read>(reader: R, role: Role, schema: &Schema) -> Result<PartyView, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();

    let Some(id_column) = header.first().cloned() else {
        return Err(DataError::Schema("empty header".into()));
    };
    if schema.kind(&id_column) != Some(ColumnKind::Id) {
        return Err(DataError::Schema(format!(
            "first column {id_column:?} must be declared as id"
        )));
    }
    let mut kinds = Vec::with_capacity(header.len());
    for name in &header {
        let kind = schema
            .kind(name)
            .ok_or_else(|| DataError::Schema(format!("column {name:?} is not in the schema")))?;
        kinds.push(kind);
    }
    for name in schema.columns.keys() {
        if !header.contains(name) {
            return Err(DataError::Schema(format!(
                "schema column {name:?} not found in file"
            )));
        }
    }
    let label_positions: Vec<usize> = (0..kinds.len())
        .filter(|&j| kinds[j] == ColumnKind::Label)
        .collect();
    if kinds.iter().filter(|k| **k == ColumnKind::Id).count() != 1 {
        return Err(DataError::Schema(
            "exactly one id column is required".into(),
        ));
    }
    let label_pos = match (role, label_positions.as_slice()) {
        (Role::Host, []) => None,
        (Role::Host, _) => {
            return Err(DataError::Role(
                "host data must not carry a label column".into(),
            ))
        }
        (Role::Guest, [p]) => Some(*p),
        (Role::Guest, []) => {
            return Err(DataError::Role(
                "guest schema must name a label column".into(),
            ))
        }
        (Role::Guest, _) => return Err(DataError::Schema("more than one label column".into())),
    };

    let feature_pos: Vec<usize> = (1..kinds.len())
        .filter(|&j| matches!(kinds[j], ColumnKind::Numeric | ColumnKind::Categorical))
        .collect();
    let mut columns: Vec<Column> = feature_pos
        .iter()
        .map(|&j| match kinds[j] {
            ColumnKind::Numeric => Column::Numeric(Vec::new()),
            _ => Column::Categorical(Vec::new()),
        })
        .collect();
    let mut ids = Vec::new();
    let mut labels = Vec::new();

    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let id = record[0].to_owned();
        if id.is_empty() {
            return Err(DataError::Malformed {
                line,
                message: "empty sample id".into(),
            });
        }
        ids.push(id);
        for (col, &j) in columns.iter_mut().zip(&feature_pos) {
            let cell = &record[j];
            match col {
                Column::Numeric(v) => v.push(if cell.is_empty() {
                    None
                } else {
                    let x: f64 = cell.trim().parse().map_err(|_| DataError::Malformed {
                        line,
                        message: format!("column {:?}: {cell:?} is not numeric", header[j]),
                    })?;
                    if !x.is_finite() {
                        return Err(DataError::Malformed {
                            line,
                            message: format!("column {:?}: non-finite value", header[j]),
                        });
                    }
                    Some(x)
                }),
                Column::Categorical(v) => v.push((!cell.is_empty()).then(|| cell.to_owned())),
            }
        }
        if let Some(p) = label_pos {
            labels.push(parse_label(&record[p], line)?);
        }
    }

    let mut seen = HashSet::with_capacity(ids.len());
    for id in &ids {
        if !seen.insert(id.as_str()) {
            return Err(DataError::DuplicateId(id.clone()));
        }
    }

    let view = PartyView {
        role,
        id_column,
        ids,
        feature_names: feature_pos.iter().map(|&j| header[j].clone()).collect(),
        columns,
        label_column: label_pos.map(|p| header[p].clone()),
        labels: label_pos.map(|_| labels),
    };
    let mut order: Vec<usize> = (0..view.len()).collect();
    order.sort_by(|&a, &b| view.ids[a].cmp(&view.ids[b]));
    Ok(view.select_rows(&order))
}

fn parse_label(cell: &str, line: u64) -> Result<u8, DataError> {
    match cell.trim().parse::<f64>() {
        Ok(0.0) => Ok(0),
        Ok(1.0) => Ok(1),
        _ => Err(DataError::NonBinaryLabel {
            line,
            value: cell.to_owned(),
        }),
    }
}

/// Restricts both views to their common sample ids, in identical order.
pub fn align(a: &PartyView, b: &PartyView) -> Result<(PartyView, PartyView), DataError> {
    let (mut ia, mut ib) = (Vec::new(), Vec::new());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a.ids[i].cmp(&b.ids[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                ia.push(i);
                ib.push(j);
                i += 1;
                j += 1;
            }
        }
    }
    if ia.is_empty() {
        return Err(DataError::EmptyIntersection);
    }
    Ok((a.select_rows(&ia), b.select_rows(&ib)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    /// Split each label class separately.
    #[serde(default)]
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            seed: 42,
            stratified: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitViews {
    pub train: (PartyView, PartyView),
    pub test: (PartyView, PartyView),
}

/// Seeded shuffle then prefix cut; both parties get the same partition.
pub fn split(a: &PartyView, b: &PartyView, spec: &SplitSpec) -> Result<SplitViews, DataError> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(DataError::Split(format!(
            "train fraction {} outside (0, 1)",
            spec.train_fraction
        )));
    }
    if a.ids != b.ids {
        return Err(DataError::Misaligned(
            "split requires identical id lists; call align first".into(),
        ));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let (mut train, mut test) = if spec.stratified {
        let labels = a
            .labels
            .as_ref()
            .or(b.labels.as_ref())
            .ok_or_else(|| DataError::Split("stratification needs labels".into()))?;
        let mut train = Vec::new();
        let mut test = Vec::new();
        for class in [0u8, 1u8] {
            let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
            let (tr, te) = shuffle_cut(rows, spec.train_fraction, &mut rng);
            train.extend(tr);
            test.extend(te);
        }
        (train, test)
    } else {
        shuffle_cut((0..a.len()).collect(), spec.train_fraction, &mut rng)
    };
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitViews {
        train: (a.select_rows(&train), b.select_rows(&train)),
        test: (a.select_rows(&test), b.select_rows(&test)),
    })
}

fn shuffle_cut(
    mut rows: Vec<usize>,
    fraction: f64,
    rng: &mut ChaCha20Rng,
) -> (Vec<usize>, Vec<usize>) {
    rows.shuffle(rng);
    let cut = (fraction * rows.len() as f64).round() as usize;
    let test = rows.split_off(cut.min(rows.len()));
    (rows, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn guest_schema() -> Schema {
        Schema::from_toml(
            r#"
            [columns]
            id = "id"
            x = "numeric"
            city = "categorical"
            bad = "label"
            "#,
        )
        .unwrap()
    }

    fn host_schema() -> Schema {
        Schema::from_toml("[columns]\nid = \"id\"\nz = \"numeric\"\n").unwrap()
    }

    #[test]
    fn parses_guest_csv() {
        let csv = "id,x,city,bad\nu1,0.5,paris,1\nu2,,rome,0\nu3,2,,0\n";
        let v = read_csv(csv.as_bytes(), Role::Guest, &guest_schema()).unwrap();
        assert_eq!(v.labels, Some(vec![1, 0, 0]));
        assert_eq!(v.feature_names, vec!["x", "city"]);
        assert_eq!(
            v.columns[0],
            Column::Numeric(vec![Some(0.5), None, Some(2.0)])
        );
        assert_eq!(
            v.columns[1],
            Column::Categorical(vec![Some("paris".into()), Some("rome".into()), None])
        );
    }

    #[test]
    fn host_with_label_is_rejected() {
        let csv = "id,x,city,bad\nu1,0.5,paris,1\n";
        let err = read_csv(csv.as_bytes(), Role::Host, &guest_schema()).unwrap_err();
        assert!(matches!(err, DataError::Role(_)));
    }

    #[test]
    fn duplicate_id_is_named() {
        let csv = "id,z\nu7,1\nu3,2\nu7,3\n";
        let err = read_csv(csv.as_bytes(), Role::Host, &host_schema()).unwrap_err();
        assert!(err.to_string().contains("u7"), "{err}");
    }

    #[test]
    fn non_binary_label_rejected() {
        let csv = "id,x,city,bad\nu1,0.5,paris,2\n";
        let err = read_csv(csv.as_bytes(), Role::Guest, &guest_schema()).unwrap_err();
        assert!(matches!(err, DataError::NonBinaryLabel { .. }));
    }

    #[test]
    fn malformed_numeric_rejected() {
        let csv = "id,z\nu1,abc\n";
        let err = read_csv(csv.as_bytes(), Role::Host, &host_schema()).unwrap_err();
        assert!(matches!(err, DataError::Malformed { line: 2, .. }), "{err}");
        let ragged = "id,z\nu1,1,2\n";
        assert!(read_csv(ragged.as_bytes(), Role::Host, &host_schema()).is_err());
    }

    #[test]
    fn ids_are_sorted_on_load() {
        let csv = "id,z\nc,3\na,1\nb,2\n";
        let v = read_csv(csv.as_bytes(), Role::Host, &host_schema()).unwrap();
        assert_eq!(v.ids, vec!["a", "b", "c"]);
        assert_eq!(
            v.columns[0],
            Column::Numeric(vec![Some(1.0), Some(2.0), Some(3.0)])
        );
    }

    fn host_ids(ids: &[&str]) -> PartyView {
        let body: String = ids.iter().map(|i| format!("{i},1\n")).collect();
        read_csv(
            format!("id,z\n{body}").as_bytes(),
            Role::Host,
            &host_schema(),
        )
        .unwrap()
    }

    #[test]
    fn align_cases() {
        let a = host_ids(&["1", "2", "3"]);
        let b = host_ids(&["2", "3", "4"]);
        let (x, y) = align(&a, &b).unwrap();
        assert_eq!(x.ids, vec!["2", "3"]);
        assert_eq!(y.ids, x.ids);

        let (x, _) = align(&a, &a).unwrap();
        assert_eq!(x, a);

        let c = host_ids(&["7", "8"]);
        assert!(matches!(align(&a, &c), Err(DataError::EmptyIntersection)));
    }

    #[test]
    fn split_rounding_and_determinism() {
        let ids: Vec<String> = (0..10).map(|i| format!("{i:02}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let a = host_ids(&refs);
        let spec = SplitSpec::default();
        let s = split(&a, &a, &spec).unwrap();
        assert_eq!(s.train.0.len(), 7);
        assert_eq!(s.test.0.len(), 3);
        assert_eq!(split(&a, &a, &spec).unwrap(), s);
    }

    #[test]
    fn split_rejects_misaligned() {
        let a = host_ids(&["1", "2"]);
        let b = host_ids(&["1", "3"]);
        assert!(matches!(
            split(&a, &b, &SplitSpec::default()),
            Err(DataError::Misaligned(_))
        ));
    }
}
