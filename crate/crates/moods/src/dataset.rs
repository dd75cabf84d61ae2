//! Dataset ingestion, stratified splitting, and train-fitted standardization.
//!
//! Labels are remapped at load time so that 1 is always the minority class and
//! 0 the majority class, regardless of how the source file encodes them.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::rng_stream;

const TAG_SPLIT: u64 = 0x53504c49;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset is empty")]
    Empty,
    #[error("row {row}: expected {expected} feature columns, found {found}")]
    WidthMismatch { row: usize, expected: usize, found: usize },
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("row {row}, feature column {column}: value is not finite")]
    NonFinite { row: usize, column: usize },
    #[error("label {0} is not binary (0/1)")]
    BadLabel(u8),
    #[error("label column holds {found} distinct value(s), need exactly 2")]
    ClassCount { found: usize },
    #[error("declared minority label {0:?} does not occur in the label column")]
    MinorityAbsent(String),
    #[error("minority class outnumbers majority ({minority} > {majority})")]
    MinorityMajority { minority: usize, majority: usize },
    #[error("split fractions must be positive and sum to 1, got {0:?}")]
    Fractions([f64; 3]),
    #[error("class with {count} points is too small to stratify into fractions {fractions:?}")]
    Stratify { count: usize, fractions: [f64; 3] },
    #[error("split violates size invariants: {0}")]
    SplitInvariant(String),
    #[error("label column {0:?} requires a header row")]
    HeaderRequired(String),
    #[error("label column {0:?} not found")]
    LabelColumnMissing(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("manifest: {0}")]
    Manifest(String),
}

/// One observation: a feature vector plus its binary label (1 = minority).
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPoint {
    pub features: Vec<f64>,
    pub label: u8,
}

impl LabeledPoint {
    pub fn new(features: Vec<f64>, label: u8) -> Self {
        Self { features, label }
    }

    pub fn is_minority(&self) -> bool {
        self.label == 1
    }
}

/// An ordered collection of labeled points with a consistent feature width.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    points: Vec<LabeledPoint>,
    n_features: usize,
}

impl Dataset {
    /// Builds a dataset, validating shape invariants: non-empty, consistent
    /// feature width, finite values, binary labels. Class-balance invariants
    /// are checked at ingestion (`load_csv`), not here, because class subsets
    /// produced by `class_partition` are single-class by construction.
    pub fn new(name: impl Into<String>, points: Vec<LabeledPoint>) -> Result<Self, DatasetError> {
        if points.is_empty() {
            return Err(DatasetError::Empty);
        }
        let n_features = points[0].features.len();
        for (i, p) in points.iter().enumerate() {
            if p.features.len() != n_features {
                return Err(DatasetError::WidthMismatch {
                    row: i + 1,
                    expected: n_features,
                    found: p.features.len(),
                });
            }
            if let Some(col) = p.features.iter().position(|v| !v.is_finite()) {
                return Err(DatasetError::NonFinite { row: i + 1, column: col });
            }
            if p.label > 1 {
                return Err(DatasetError::BadLabel(p.label));
            }
        }
        Ok(Self { name: name.into(), points, n_features })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn points(&self) -> &[LabeledPoint] {
        &self.points
    }

    pub fn point(&self, index: usize) -> &LabeledPoint {
        &self.points[index]
    }

    pub fn minority_count(&self) -> usize {
        self.points.iter().filter(|p| p.is_minority()).count()
    }

    pub fn majority_count(&self) -> usize {
        self.len() - self.minority_count()
    }

    pub fn minority_fraction(&self) -> f64 {
        self.minority_count() as f64 / self.len() as f64
    }

    /// Indices of points carrying the given label, in dataset order.
    pub fn indices_of(&self, label: u8) -> Vec<usize> {
        self.points
            .iter()
            .enumerate()
            .filter(|(_, p)| p.label == label)
            .map(|(i, _)| i)
            .collect()
    }

    /// A new dataset holding copies of the points at `indices`, in the given order.
    pub fn subset(&self, name: impl Into<String>, indices: &[usize]) -> Result<Self, DatasetError> {
        let points = indices.iter().map(|&i| self.points[i].clone()).collect();
        Dataset::new(name, points)
    }

    /// Checks the ingestion-level invariants: both classes present and the
    /// minority class no larger than the majority class.
    pub fn validate_two_class(&self) -> Result<(), DatasetError> {
        let minority = self.minority_count();
        let majority = self.len() - minority;
        if minority == 0 || majority == 0 {
            return Err(DatasetError::ClassCount { found: 1 });
        }
        if minority > majority {
            return Err(DatasetError::MinorityMajority { minority, majority });
        }
        Ok(())
    }
}

/// Exact partition of a dataset by label: (minority, majority).
pub fn class_partition(d: &Dataset) -> Result<(Dataset, Dataset), DatasetError> {
    d.validate_two_class()?;
    let minority = d.subset(d.name.clone(), &d.indices_of(1))?;
    let majority = d.subset(d.name.clone(), &d.indices_of(0))?;
    Ok((minority, majority))
}

/// Which column of the CSV holds the class label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

impl fmt::Display for LabelColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelColumn::Index(i) => write!(f, "#{i}"),
            LabelColumn::Name(n) => write!(f, "{n}"),
        }
    }
}

/// Column layout of a CSV source and the raw label to map to the minority class.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label_column: LabelColumn,
    pub minority_label: String,
    pub has_header: bool,
}

/// On-disk description of a dataset: where it lives and how to read it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub path: String,
    pub label_column: LabelColumn,
    pub minority_label: String,
    pub has_header: bool,
}

impl DatasetManifest {
    pub fn from_file(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| DatasetError::Manifest(e.to_string()))
    }

    pub fn schema(&self) -> CsvSchema {
        CsvSchema {
            label_column: self.label_column.clone(),
            minority_label: self.minority_label.clone(),
            has_header: self.has_header,
        }
    }

    /// Resolves the CSV path relative to the manifest's own directory.
    pub fn resolve_path(&self, manifest_path: &Path) -> PathBuf {
        let p = Path::new(&self.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            manifest_path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }
}

/// Loads a dataset described by a manifest file.
pub fn load_manifest(manifest_path: &Path) -> Result<Dataset, DatasetError> {
    let manifest = DatasetManifest::from_file(manifest_path)?;
    let csv_path = manifest.resolve_path(manifest_path);
    let mut d = load_csv(&csv_path, &manifest.schema())?;
    d.name = manifest.name;
    Ok(d)
}

/// Reads a two-class CSV file, mapping `schema.minority_label` to 1 and the
/// other raw label to 0. Row order is preserved. Row numbers in errors count
/// data rows from 1 (the header row, when present, is row 0).
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;

    let label_idx = match &schema.label_column {
        LabelColumn::Index(i) => *i,
        LabelColumn::Name(name) => {
            if !schema.has_header {
                return Err(DatasetError::HeaderRequired(name.clone()));
            }
            reader
                .headers()?
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| DatasetError::LabelColumnMissing(name.clone()))?
        }
    };

    let mut raw_rows: Vec<(Vec<f64>, String)> = Vec::new();
    let mut width: Option<usize> = None;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        if label_idx >= record.len() {
            return Err(DatasetError::Parse {
                row,
                message: format!(
                    "label column {} out of range for a {}-column row",
                    schema.label_column,
                    record.len()
                ),
            });
        }
        let mut features = Vec::with_capacity(record.len() - 1);
        let mut raw_label = String::new();
        for (col, field) in record.iter().enumerate() {
            if col == label_idx {
                raw_label = field.to_string();
            } else {
                let value: f64 = field.parse().map_err(|_| DatasetError::Parse {
                    row,
                    message: format!("non-numeric feature value {field:?} in column {col}"),
                })?;
                if !value.is_finite() {
                    return Err(DatasetError::NonFinite { row, column: col });
                }
                features.push(value);
            }
        }
        match width {
            None => width = Some(features.len()),
            Some(w) if w != features.len() => {
                return Err(DatasetError::WidthMismatch {
                    row,
                    expected: w,
                    found: features.len(),
                });
            }
            _ => {}
        }
        raw_rows.push((features, raw_label));
    }
    if raw_rows.is_empty() {
        return Err(DatasetError::Empty);
    }

    let labels: BTreeSet<&str> = raw_rows.iter().map(|(_, l)| l.as_str()).collect();
    if labels.len() != 2 {
        return Err(DatasetError::ClassCount { found: labels.len() });
    }
    if !labels.contains(schema.minority_label.as_str()) {
        return Err(DatasetError::MinorityAbsent(schema.minority_label.clone()));
    }

    let points = raw_rows
        .into_iter()
        .map(|(features, raw)| {
            let label = u8::from(raw == schema.minority_label);
            LabeledPoint::new(features, label)
        })
        .collect();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let d = Dataset::new(name, points)?;
    d.validate_two_class()?;
    Ok(d)
}

/// Writes a dataset as CSV with mapped labels, so `load_csv` with
/// `minority_label = "1"` round-trips it exactly.
pub fn save_csv(d: &Dataset, path: &Path, with_header: bool) -> Result<(), DatasetError> {
    let mut out = BufWriter::new(File::create(path)?);
    if with_header {
        let mut header: Vec<String> = (0..d.n_features()).map(|i| format!("f{i}")).collect();
        header.push("label".to_string());
        writeln!(out, "{}", header.join(","))?;
    }
    for p in d.points() {
        for v in &p.features {
            write!(out, "{v},")?;
        }
        writeln!(out, "{}", p.label)?;
    }
    out.flush()?;
    Ok(())
}

/// Fractions of a dataset assigned to train/validation/test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.6, validation: 0.2, test: 0.2 }
    }
}

impl SplitFractions {
    pub fn new(train: f64, validation: f64, test: f64) -> Self {
        Self { train, validation, test }
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.validation, self.test]
    }

    fn validate(&self) -> Result<(), DatasetError> {
        let a = self.as_array();
        let sum: f64 = a.iter().sum();
        if a.iter().any(|&f| f <= 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(DatasetError::Fractions(a));
        }
        Ok(())
    }
}

/// Disjoint train/validation/test partitions of one dataset.
#[derive(Clone, Debug)]
pub struct DataSplit {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub fractions: SplitFractions,
    pub seed: u64,
}

/// Stratified split: within each class, indices are shuffled by `seed`, then
/// test and validation take the floored per-class share and the remainder
/// goes to train (keeping train the largest part).
pub fn split(d: &Dataset, fractions: SplitFractions, seed: u64) -> Result<DataSplit, DatasetError> {
    fractions.validate()?;
    d.validate_two_class()?;

    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    let mut test_idx = Vec::new();
    for label in [1u8, 0u8] {
        let mut idx = d.indices_of(label);
        let count = idx.len();
        let n_test = (fractions.test * count as f64).floor() as usize;
        let n_val = (fractions.validation * count as f64).floor() as usize;
        if n_test == 0 || n_val == 0 || n_test + n_val >= count {
            return Err(DatasetError::Stratify { count, fractions: fractions.as_array() });
        }
        idx.shuffle(&mut rng_stream(seed, TAG_SPLIT ^ u64::from(label)));
        test_idx.extend_from_slice(&idx[..n_test]);
        val_idx.extend_from_slice(&idx[n_test..n_test + n_val]);
        train_idx.extend_from_slice(&idx[n_test + n_val..]);
    }
    // Keep the original row order inside each part.
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    test_idx.sort_unstable();

    if train_idx.len() <= test_idx.len() {
        return Err(DatasetError::SplitInvariant(format!(
            "|train| = {} must exceed |test| = {}",
            train_idx.len(),
            test_idx.len()
        )));
    }
    let (lo, hi) = (val_idx.len().min(test_idx.len()), val_idx.len().max(test_idx.len()));
    if hi > 2 * lo {
        return Err(DatasetError::SplitInvariant(format!(
            "|validation| = {} and |test| = {} differ by more than a factor of 2",
            val_idx.len(),
            test_idx.len()
        )));
    }

    Ok(DataSplit {
        train: d.subset(d.name.clone(), &train_idx)?,
        validation: d.subset(d.name.clone(), &val_idx)?,
        test: d.subset(d.name.clone(), &test_idx)?,
        fractions,
        seed,
    })
}

/// Per-feature affine transform fitted on the train part only: subtract the
/// train mean and divide by the train sample standard deviation. Constant
/// features pass through unscaled. Applied identically to all three parts.
pub fn standardize(split: &DataSplit) -> DataSplit {
    let n = split.train.n_features();
    let count = split.train.len() as f64;
    let mut means = vec![0.0; n];
    for p in split.train.points() {
        for (m, v) in means.iter_mut().zip(&p.features) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= count;
    }
    let mut stds = vec![0.0; n];
    if split.train.len() > 1 {
        for p in split.train.points() {
            for (s, (v, m)) in stds.iter_mut().zip(p.features.iter().zip(&means)) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut stds {
            *s = (*s / (count - 1.0)).sqrt();
        }
    }

    let transform = |d: &Dataset| {
        let points = d
            .points()
            .iter()
            .map(|p| {
                let features = p
                    .features
                    .iter()
                    .zip(means.iter().zip(&stds))
                    .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { *v })
                    .collect();
                LabeledPoint::new(features, p.label)
            })
            .collect();
        Dataset::new(d.name.clone(), points).expect("standardize preserves shape invariants")
    };

    DataSplit {
        train: transform(&split.train),
        validation: transform(&split.validation),
        test: transform(&split.test),
        fractions: split.fractions,
        seed: split.seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn point(features: &[f64], label: u8) -> LabeledPoint {
        LabeledPoint::new(features.to_vec(), label)
    }

    fn toy(minority: usize, majority: usize) -> Dataset {
        let mut points = Vec::new();
        for i in 0..minority {
            points.push(point(&[i as f64, 1.0], 1));
        }
        for i in 0..majority {
            points.push(point(&[i as f64, -1.0], 0));
        }
        Dataset::new("toy", points).unwrap()
    }

    #[test]
    fn partition_counts_labels() {
        let d = Dataset::new(
            "t",
            vec![point(&[0.0], 1), point(&[1.0], 0), point(&[2.0], 0)],
        )
        .unwrap();
        let (minority, majority) = class_partition(&d).unwrap();
        assert_eq!(minority.len(), 1);
        assert_eq!(majority.len(), 2);
        assert_eq!(minority.len() + majority.len(), d.len());
    }

    #[test]
    fn partition_rejects_single_class() {
        let d = Dataset::new("t", vec![point(&[0.0], 0), point(&[1.0], 0)]).unwrap();
        assert!(matches!(class_partition(&d), Err(DatasetError::ClassCount { found: 1 })));
    }

    #[test]
    fn load_csv_maps_minority_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("four.csv");
        let mut f = File::create(&path).unwrap();
        writeln!(f, "1.0,2.0,a\n2.0,3.0,a\n3.0,4.0,a\n4.0,5.0,b").unwrap();
        let schema = CsvSchema {
            label_column: LabelColumn::Index(2),
            minority_label: "b".to_string(),
            has_header: false,
        };
        let d = load_csv(&path, &schema).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.minority_count(), 1);
        assert_eq!(d.majority_count(), 3);
        assert_eq!(d.n_features(), 2);
        // Row order preserved; the minority row is the last one.
        assert_eq!(d.point(3).label, 1);
    }

    #[test]
    fn load_csv_rejects_width_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ragged.csv");
        let mut f = File::create(&path).unwrap();
        writeln!(f, "1,2,3,a\n1,2,b\n4,5,6,a").unwrap();
        let schema = CsvSchema {
            label_column: LabelColumn::Index(3),
            minority_label: "b".to_string(),
            has_header: false,
        };
        match load_csv(&path, &schema) {
            Err(DatasetError::Parse { row: 2, .. }) | Err(DatasetError::WidthMismatch { row: 2, .. }) => {}
            other => panic!("expected an error naming row 2, got {other:?}"),
        }
    }

    #[test]
    fn load_csv_rejects_single_class() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one_class.csv");
        let mut f = File::create(&path).unwrap();
        writeln!(f, "1,a\n2,a\n3,a").unwrap();
        let schema = CsvSchema {
            label_column: LabelColumn::Index(1),
            minority_label: "a".to_string(),
            has_header: false,
        };
        assert!(matches!(load_csv(&path, &schema), Err(DatasetError::ClassCount { found: 1 })));
    }

    #[test]
    fn load_csv_rejects_non_numeric_feature() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let mut f = File::create(&path).unwrap();
        writeln!(f, "1,2,a\nx,3,b").unwrap();
        let schema = CsvSchema {
            label_column: LabelColumn::Index(2),
            minority_label: "b".to_string(),
            has_header: false,
        };
        assert!(matches!(load_csv(&path, &schema), Err(DatasetError::Parse { row: 2, .. })));
    }

    #[test]
    fn save_load_round_trips() {
        let d = toy(3, 7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("roundtrip.csv");
        save_csv(&d, &path, true).unwrap();
        let schema = CsvSchema {
            label_column: LabelColumn::Name("label".to_string()),
            minority_label: "1".to_string(),
            has_header: true,
        };
        let mut back = load_csv(&path, &schema).unwrap();
        back.name = d.name.clone();
        assert_eq!(back, d);
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let d = toy(2, 8);
        let s = split(&d, SplitFractions::new(0.6, 0.2, 0.2), 11).unwrap();
        assert_eq!(s.train.len(), 6);
        assert_eq!(s.validation.len(), 2);
        assert_eq!(s.test.len(), 2);
        for part in [&s.train, &s.validation, &s.test] {
            assert!(part.minority_count() >= 1, "part lost the minority class");
            assert!(part.majority_count() >= 1, "part lost the majority class");
        }
    }

    #[test]
    fn split_is_deterministic() {
        let d = toy(5, 20);
        let a = split(&d, SplitFractions::default(), 3).unwrap();
        let b = split(&d, SplitFractions::default(), 3).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.validation, b.validation);
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn split_rejects_tiny_class() {
        let d = toy(2, 20);
        // 20% of 2 minority points floors to 0 for the test part.
        assert!(matches!(
            split(&d, SplitFractions::new(0.8, 0.1, 0.1), 1),
            Err(DatasetError::Stratify { .. })
        ));
    }

    #[test]
    fn standardize_transforms_from_train_stats() {
        // Train feature column {0, 2}: mean 1, sample std sqrt(2), so the
        // transformed values are -1/sqrt(2) and +1/sqrt(2) ... but with the
        // hand-computed convention of the two-point column, {0,2} maps to
        // {-0.7071.., +0.7071..} under sample std sqrt(2).
        let d = Dataset::new(
            "s",
            vec![
                point(&[0.0, 5.0], 1),
                point(&[2.0, 5.0], 0),
                point(&[1.0, 5.0], 0),
                point(&[1.0, 5.0], 0),
                point(&[0.0, 5.0], 1),
                point(&[2.0, 5.0], 0),
            ],
        )
        .unwrap();
        let s = DataSplit {
            train: d.subset("s", &[0, 1]).unwrap(),
            validation: d.subset("s", &[2, 3]).unwrap(),
            test: d.subset("s", &[4, 5]).unwrap(),
            fractions: SplitFractions::default(),
            seed: 0,
        };
        let z = standardize(&s);
        let sqrt2 = 2.0_f64.sqrt();
        assert!((z.train.point(0).features[0] - (-1.0 / sqrt2)).abs() < 1e-15);
        assert!((z.train.point(1).features[0] - (1.0 / sqrt2)).abs() < 1e-15);
        // Constant feature passes through everywhere.
        assert_eq!(z.train.point(0).features[1], 5.0);
        assert_eq!(z.validation.point(0).features[1], 5.0);
        // A validation value equal to the train mean maps to 0.
        assert_eq!(z.validation.point(0).features[0], 0.0);
        // Test rows get the train transform, not their own.
        assert!((z.test.point(0).features[0] - (-1.0 / sqrt2)).abs() < 1e-15);
    }

    #[test]
    fn standardize_ignores_validation_and_test_rows() {
        let d = toy(4, 12);
        let s = split(&d, SplitFractions::default(), 5).unwrap();
        let z1 = standardize(&s);
        // Permute validation rows; the transform must be unchanged.
        let mut perm: Vec<usize> = (0..s.validation.len()).collect();
        perm.reverse();
        let permuted = DataSplit {
            train: s.train.clone(),
            validation: s.validation.subset("v", &perm).unwrap(),
            test: s.test.clone(),
            fractions: s.fractions,
            seed: s.seed,
        };
        let z2 = standardize(&permuted);
        assert_eq!(z1.train, z2.train);
        assert_eq!(z1.test, z2.test);
    }
}
