//! CSV ingestion, min-max scaling and supervised-set construction.

use std::collections::HashMap;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Which columns of a CSV file to read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub timestamp_col: String,
    pub target_col: String,
    #[serde(default)]
    pub feature_cols: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
}

/// Time-indexed target series plus named feature columns of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesFrame {
    pub timestamps: Vec<NaiveDateTime>,
    pub target: Column,
    pub features: Vec<Column>,
}

impl TimeSeriesFrame {
    pub fn new(
        timestamps: Vec<NaiveDateTime>,
        target: Column,
        features: Vec<Column>,
    ) -> Result<Self> {
        let n = timestamps.len();
        if target.values.len() != n || features.iter().any(|c| c.values.len() != n) {
            return Err(Error::Integrity("columns differ in length".into()));
        }
        if timestamps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Integrity(
                "timestamps must be strictly increasing".into(),
            ));
        }
        for c in std::iter::once(&target).chain(&features) {
            if let Some(i) = c.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::Integrity(format!(
                    "non-finite value in column {} at row {i}",
                    c.name
                )));
            }
        }
        Ok(Self {
            timestamps,
            target,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn feature(&self, name: &str) -> Option<&Column> {
        self.features.iter().find(|c| c.name == name)
    }

    fn columns_mut(&mut self) -> impl Iterator<Item = &mut Column> {
        std::iter::once(&mut self.target).chain(self.features.iter_mut())
    }

    /// Writes the frame back out as CSV with the timestamp first.
    pub fn to_csv(&self, timestamp_col: &str) -> String {
        let mut s = String::from(timestamp_col);
        for c in std::iter::once(&self.target).chain(&self.features) {
            s.push(',');
            s.push_str(&c.name);
        }
        s.push('\n');
        for i in 0..self.len() {
            s.push_str(&format_timestamp(&self.timestamps[i]));
            for c in std::iter::once(&self.target).chain(&self.features) {
                s.push_str(&format!(",{}", c.values[i]));
            }
            s.push('\n');
        }
        s
    }
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S").to_string()
}

/// Parses the ISO-8601 forms seen in practice: RFC 3339 with offset
/// (converted to UTC), naive date-times with `T` or space, and bare dates.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<TimeSeriesFrame> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

/// Reads a frame from any CSV source. Rows are returned sorted by timestamp.
pub fn read_csv<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<TimeSeriesFrame> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("unreadable header: {e}")))?
        .clone();
    let index: HashMap<&str, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim(), i))
        .collect();
    let find = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Schema(format!("column '{name}' not found in header")))
    };
    let ts_idx = find(&schema.timestamp_col)?;
    let target_idx = find(&schema.target_col)?;
    let feature_idx = schema
        .feature_cols
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;

    let mut rows: Vec<(NaiveDateTime, f64, Vec<f64>)> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse {
                row: line,
                detail: e.to_string(),
            }
        })?;
        let line = record
            .position()
            .map_or(rows.len() + 2, |p| p.line() as usize);
        let cell = |i: usize, name: &str| -> Result<f64> {
            let raw = record.get(i).unwrap_or("").trim();
            if raw.is_empty() {
                return Err(Error::Integrity(format!(
                    "missing value for '{name}' at line {line}"
                )));
            }
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row: line,
                detail: format!("'{raw}' in column '{name}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Integrity(format!(
                    "non-finite value '{raw}' for '{name}' at line {line}"
                )));
            }
            Ok(v)
        };
        let raw_ts = record.get(ts_idx).unwrap_or("");
        let ts = parse_timestamp(raw_ts).ok_or_else(|| Error::Parse {
            row: line,
            detail: format!("'{raw_ts}' is not an ISO-8601 timestamp"),
        })?;
        let target = cell(target_idx, &schema.target_col)?;
        let feats = feature_idx
            .iter()
            .zip(&schema.feature_cols)
            .map(|(&i, name)| cell(i, name))
            .collect::<Result<Vec<_>>>()?;
        rows.push((ts, target, feats));
    }
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Integrity(format!(
            "duplicate timestamp {}",
            format_timestamp(&w[0].0)
        )));
    }

    let mut features: Vec<Column> = schema
        .feature_cols
        .iter()
        .map(|name| Column {
            name: name.clone(),
            values: Vec::with_capacity(rows.len()),
        })
        .collect();
    let mut timestamps = Vec::with_capacity(rows.len());
    let mut target = Column {
        name: schema.target_col.clone(),
        values: Vec::with_capacity(rows.len()),
    };
    for (ts, y, feats) in rows {
        timestamps.push(ts);
        target.values.push(y);
        for (c, v) in features.iter_mut().zip(feats) {
            c.values.push(v);
        }
    }
    TimeSeriesFrame::new(timestamps, target, features)
}

/// Observed range of one column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

impl ColumnRange {
    pub fn fit(name: &str, values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyData(format!("column {name} is empty")));
        }
        let (min, max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        Ok(Self {
            name: name.to_string(),
            min,
            max,
        })
    }

    fn span(&self) -> f64 {
        self.max - self.min
    }

    /// Maps into `[0, 1]`; a constant column maps to 0.
    pub fn apply(&self, x: f64) -> f64 {
        let span = self.span();
        if span > 0.0 {
            (x - self.min) / span
        } else {
            0.0
        }
    }

    pub fn invert(&self, z: f64) -> f64 {
        self.min + z * self.span()
    }
}

/// Per-column min-max scaler, target first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub columns: Vec<ColumnRange>,
}

impl Scaler {
    pub fn fit(frame: &TimeSeriesFrame) -> Result<Self> {
        if frame.is_empty() {
            return Err(Error::EmptyData(
                "cannot fit a scaler on an empty frame".into(),
            ));
        }
        let columns = std::iter::once(&frame.target)
            .chain(&frame.features)
            .map(|c| ColumnRange::fit(&c.name, &c.values))
            .collect::<Result<_>>()?;
        Ok(Self { columns })
    }

    pub fn column(&self, name: &str) -> Result<&ColumnRange> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::Schema(format!("scaler has no column '{name}'")))
    }

    fn map_frame(
        &self,
        frame: &TimeSeriesFrame,
        f: impl Fn(&ColumnRange, f64) -> f64,
    ) -> Result<TimeSeriesFrame> {
        let mut out = frame.clone();
        for c in out.columns_mut() {
            let range = self.column(&c.name)?;
            c.values.iter_mut().for_each(|v| *v = f(range, *v));
        }
        Ok(out)
    }

    pub fn apply(&self, frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
        self.map_frame(frame, ColumnRange::apply)
    }

    pub fn invert(&self, frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
        self.map_frame(frame, ColumnRange::invert)
    }
}

/// Feature matrix `x`, targets `y` and the frame row each target came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedSet {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub feature_names: Vec<String>,
    pub source_rows: Vec<usize>,
}

impl SupervisedSet {
    pub fn new(
        x: Matrix,
        y: Vec<f64>,
        feature_names: Vec<String>,
        source_rows: Vec<usize>,
    ) -> Result<Self> {
        if x.rows() != y.len() || source_rows.len() != y.len() {
            return Err(Error::Shape(format!(
                "{} feature rows for {} targets",
                x.rows(),
                y.len()
            )));
        }
        if feature_names.len() != x.cols() {
            return Err(Error::Shape(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                x.cols()
            )));
        }
        Ok(Self {
            x,
            y,
            feature_names,
            source_rows,
        })
    }

    pub fn empty(feature_names: Vec<String>) -> Self {
        Self {
            x: Matrix::zeros(0, feature_names.len()),
            y: Vec::new(),
            feature_names,
            source_rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            x: self.x.slice_rows(start, end),
            y: self.y[start..end].to_vec(),
            feature_names: self.feature_names.clone(),
            source_rows: self.source_rows[start..end].to_vec(),
        }
    }

    /// Sample standard deviation of every feature column.
    pub fn feature_std(&self) -> Vec<f64> {
        let n = self.len();
        (0..self.n_features())
            .map(|c| {
                if n < 2 {
                    return 0.0;
                }
                let col = self.x.column(c);
                let mean = col.iter().sum::<f64>() / n as f64;
                let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
                (ss / (n - 1) as f64).sqrt()
            })
            .collect()
    }
}

/// Sliding windows over a single series. Columns run oldest to newest and are
/// named `lag_L … lag_1`, so `lag_1` is the most recent observation.
pub fn make_lag_windows(target: &[f64], lag: usize, horizon: usize) -> Result<SupervisedSet> {
    if lag == 0 || horizon == 0 {
        return Err(Error::Config("lag and horizon must both be >= 1".into()));
    }
    if target.len() < lag + horizon {
        return Err(Error::InsufficientData(format!(
            "{} observations cannot form a window of {lag} lags at horizon {horizon}",
            target.len()
        )));
    }
    let n = target.len() - lag - horizon + 1;
    let mut data = Vec::with_capacity(n * lag);
    let mut y = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        data.extend_from_slice(&target[i..i + lag]);
        let t = i + lag + horizon - 1;
        y.push(target[t]);
        rows.push(t);
    }
    let names = (1..=lag).rev().map(|k| format!("lag_{k}")).collect();
    SupervisedSet::new(Matrix::from_vec(n, lag, data)?, y, names, rows)
}

/// NWP features at row `i` paired with the target at row `i + alignment`.
pub fn make_nwp_set(
    frame: &TimeSeriesFrame,
    feature_columns: &[String],
    alignment: usize,
) -> Result<SupervisedSet> {
    if feature_columns.is_empty() {
        return Err(Error::Schema("no NWP feature columns selected".into()));
    }
    let cols = feature_columns
        .iter()
        .map(|name| {
            frame
                .feature(name)
                .ok_or_else(|| Error::Schema(format!("unknown feature column '{name}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    if frame.len() <= alignment {
        return Err(Error::InsufficientData(format!(
            "{} rows cannot be aligned with offset {alignment}",
            frame.len()
        )));
    }
    let n = frame.len() - alignment;
    let d = cols.len();
    let mut x = Matrix::zeros(n, d);
    for (j, c) in cols.iter().enumerate() {
        for i in 0..n {
            x.set(i, j, c.values[i]);
        }
    }
    let y = frame.target.values[alignment..].to_vec();
    let rows = (alignment..frame.len()).collect();
    SupervisedSet::new(x, y, feature_columns.to_vec(), rows)
}

/// Contiguous train/validation/test slices of sizes `⌊n·train⌋`, `⌊n·val⌋`
/// and the remainder.
pub fn chronological_split(
    set: &SupervisedSet,
    train: f64,
    val: f64,
    test: f64,
) -> Result<(SupervisedSet, SupervisedSet, SupervisedSet)> {
    if !(train > 0.0 && val > 0.0 && test > 0.0) {
        return Err(Error::Config("split ratios must be positive".into()));
    }
    if (train + val + test - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios sum to {}, expected 1",
            train + val + test
        )));
    }
    let n = set.len();
    // the nudge keeps 0.8·10 from flooring to 7 through representation error
    let n_train = (n as f64 * train + 1e-9).floor() as usize;
    let n_val = (n as f64 * val + 1e-9).floor() as usize;
    let n_test = n.saturating_sub(n_train + n_val);
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::InsufficientData(format!(
            "{n} samples give a {n_train}/{n_val}/{n_test} split"
        )));
    }
    Ok((
        set.slice(0, n_train),
        set.slice(n_train, n_train + n_val),
        set.slice(n_train + n_val, n),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(features: &[&str]) -> CsvSchema {
        CsvSchema {
            timestamp_col: "time".into(),
            target_col: "power".into(),
            feature_cols: features.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn reads_well_formed_csv() {
        let csv = "time,power,ws\n2024-01-01T00:00:00,1.0,5\n2024-01-01T01:00:00,2.0,6\n2024-01-01 02:00,3.0,7\n";
        let f = read_csv(csv.as_bytes(), &schema(&["ws"])).unwrap();
        assert_eq!(f.len(), 3);
        assert_eq!(f.target.values, vec![1.0, 2.0, 3.0]);
        assert_eq!(f.feature("ws").unwrap().values, vec![5.0, 6.0, 7.0]);
    }

    #[test]
    fn missing_target_column_is_schema_error() {
        let csv = "time,ws\n2024-01-01,1\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &schema(&[])),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn rows_are_sorted() {
        let csv = "time,power\n2024-01-03,3\n2024-01-01,1\n2024-01-02,2\n";
        let f = read_csv(csv.as_bytes(), &schema(&[])).unwrap();
        assert_eq!(f.target.values, vec![1.0, 2.0, 3.0]);
        assert!(f.timestamps.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn bad_cells_are_reported() {
        let dup = "time,power\n2024-01-01,1\n2024-01-01,2\n";
        assert!(matches!(
            read_csv(dup.as_bytes(), &schema(&[])),
            Err(Error::Integrity(_))
        ));
        let nan = "time,power\n2024-01-01,NaN\n";
        assert!(matches!(
            read_csv(nan.as_bytes(), &schema(&[])),
            Err(Error::Integrity(_))
        ));
        let empty = "time,power\n2024-01-01,\n";
        assert!(matches!(
            read_csv(empty.as_bytes(), &schema(&[])),
            Err(Error::Integrity(_))
        ));
        let junk = "time,power\n2024-01-01,1\n2024-01-02,abc\n";
        match read_csv(junk.as_bytes(), &schema(&[])) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
        let bad_ts = "time,power\nyesterday,1\n";
        assert!(matches!(
            read_csv(bad_ts.as_bytes(), &schema(&[])),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn timestamp_forms() {
        let a = parse_timestamp("2024-05-01T12:30:00Z").unwrap();
        let b = parse_timestamp("2024-05-01T14:30:00+02:00").unwrap();
        assert_eq!(a, b);
        assert_eq!(parse_timestamp("2024-05-01 12:30").unwrap(), a);
        assert!(parse_timestamp("2024-05-01").is_some());
    }

    #[test]
    fn scaler_examples() {
        let r = ColumnRange::fit("a", &[2.0, 4.0]).unwrap();
        assert_eq!((r.apply(2.0), r.apply(4.0)), (0.0, 1.0));
        let c = ColumnRange::fit("c", &[5.0, 5.0]).unwrap();
        assert_eq!((c.apply(5.0), c.apply(5.0)), (0.0, 0.0));
        assert!(matches!(
            ColumnRange::fit("e", &[]),
            Err(Error::EmptyData(_))
        ));
    }

    #[test]
    fn lag_window_examples() {
        let s: Vec<f64> = (1..=6).map(f64::from).collect();
        let w = make_lag_windows(&s, 3, 1).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w.x.row(0), &[1.0, 2.0, 3.0]);
        assert_eq!(w.y[0], 4.0);
        assert_eq!(w.feature_names, vec!["lag_3", "lag_2", "lag_1"]);

        let w = make_lag_windows(&s, 3, 2).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w.x.row(0), &[1.0, 2.0, 3.0]);
        assert_eq!(w.y[0], 5.0);

        assert!(matches!(
            make_lag_windows(&[1.0, 2.0, 3.0], 48, 1),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn nwp_set_examples() {
        let names = ["WS10", "WD10", "WS100", "WD100"];
        let n = 5;
        let frame = TimeSeriesFrame::new(
            (0..n)
                .map(|i| {
                    NaiveDate::from_ymd_opt(2024, 1, 1 + i as u32)
                        .unwrap()
                        .and_hms_opt(0, 0, 0)
                        .unwrap()
                })
                .collect(),
            Column {
                name: "power".into(),
                values: (0..n).map(|i| i as f64).collect(),
            },
            names
                .iter()
                .enumerate()
                .map(|(k, nm)| Column {
                    name: nm.to_string(),
                    values: (0..n).map(|i| (10 * k + i) as f64).collect(),
                })
                .collect(),
        )
        .unwrap();
        let cols: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        let set = make_nwp_set(&frame, &cols, 0).unwrap();
        assert_eq!(set.n_features(), 4);
        assert_eq!(set.feature_names, cols);
        assert_eq!(set.len(), n);
        assert_eq!(set.x.row(2), &[2.0, 12.0, 22.0, 32.0]);
        assert_eq!(set.y[2], 2.0);

        assert!(matches!(
            make_nwp_set(&frame, &[], 0),
            Err(Error::Schema(_))
        ));
        assert!(matches!(
            make_nwp_set(&frame, &["nope".to_string()], 0),
            Err(Error::Schema(_))
        ));
    }

    fn seq_set(n: usize) -> SupervisedSet {
        let x = Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        SupervisedSet::new(
            x,
            (0..n).map(|i| i as f64).collect(),
            vec!["i".into()],
            (0..n).collect(),
        )
        .unwrap()
    }

    #[test]
    fn split_sizes() {
        for (n, sizes) in [
            (10, (8, 1, 1)),
            (100, (80, 10, 10)),
            (1003, (802, 100, 101)),
        ] {
            let (a, b, c) = chronological_split(&seq_set(n), 0.8, 0.1, 0.1).unwrap();
            assert_eq!((a.len(), b.len(), c.len()), sizes);
            assert!(a.source_rows.last() < b.source_rows.first());
            assert!(b.source_rows.last() < c.source_rows.first());
        }
        assert!(matches!(
            chronological_split(&seq_set(2), 0.8, 0.1, 0.1),
            Err(Error::InsufficientData(_))
        ));
        assert!(chronological_split(&seq_set(10), 0.8, 0.1, 0.2).is_err());
    }
}
