//! Datasets with missing covariates, missingness patterns and CSV I/O.
//!
//! A covariate cell is either `Some(value)` or `None`. There is no sentinel
//! payload, so a missing value can never take part in arithmetic by accident.
//! The missingness mask of a row is derived from which cells are `None`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of covariates a bitmask pattern can describe.
pub const MAX_COLUMNS: usize = 63;

pub const DEFAULT_NA_TOKEN: &str = "NA";

/// Missingness pattern of a record: bit `j` is set when covariate `j` is missing.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct PatternId(pub u64);

impl PatternId {
    pub const COMPLETE: PatternId = PatternId(0);

    pub fn from_mask(mask_row: &[bool]) -> Self {
        pattern_of(mask_row)
    }

    pub fn of_record(values: &[Option<f64>]) -> Self {
        values
            .iter()
            .enumerate()
            .fold(PatternId(0), |acc, (j, v)| {
                if v.is_none() {
                    PatternId(acc.0 | (1 << j))
                } else {
                    acc
                }
            })
    }

    /// Pattern with every one of `p` covariates missing.
    pub fn all_missing(p: usize) -> Self {
        if p == 0 {
            PatternId(0)
        } else {
            PatternId(u64::MAX >> (64 - p))
        }
    }

    pub fn is_missing(self, j: usize) -> bool {
        self.0 >> j & 1 == 1
    }

    pub fn is_complete(self) -> bool {
        self.0 == 0
    }

    pub fn observed_columns(self, p: usize) -> Vec<usize> {
        observed_columns(self, p)
    }

    pub fn missing_columns(self, p: usize) -> Vec<usize> {
        (0..p).filter(|&j| self.is_missing(j)).collect()
    }

    pub fn n_observed(self, p: usize) -> usize {
        p - self.n_missing()
    }

    pub fn n_missing(self) -> usize {
        self.0.count_ones() as usize
    }

    /// True when every covariate observed in `self` is also observed in `other`.
    pub fn observed_subset_of(self, other: PatternId) -> bool {
        // observed(self) ⊆ observed(other)  ⇔  missing(other) ⊆ missing(self)
        other.0 & !self.0 == 0
    }

    pub fn mask(self, p: usize) -> Vec<bool> {
        (0..p).map(|j| self.is_missing(j)).collect()
    }
}

impl fmt::Display for PatternId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub fn pattern_of(mask_row: &[bool]) -> PatternId {
    debug_assert!(mask_row.len() <= MAX_COLUMNS);
    PatternId(
        mask_row
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .fold(0u64, |acc, (j, _)| acc | (1 << j)),
    )
}

pub fn observed_columns(id: PatternId, p: usize) -> Vec<usize> {
    (0..p).filter(|&j| !id.is_missing(j)).collect()
}

/// Response vector, covariates with missing cells, and column names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    response_name: String,
    col_names: Vec<String>,
    y: Vec<f64>,
    /// Row-major `n × p`.
    cells: Vec<Option<f64>>,
}

impl Dataset {
    pub fn new(
        response_name: impl Into<String>,
        col_names: Vec<String>,
        y: Vec<f64>,
        rows: Vec<Vec<Option<f64>>>,
    ) -> Result<Self> {
        let p = col_names.len();
        if p > MAX_COLUMNS {
            return Err(Error::TooManyColumns(p));
        }
        if rows.len() != y.len() {
            return Err(Error::Dimension(format!(
                "{} responses for {} covariate rows",
                y.len(),
                rows.len()
            )));
        }
        let mut cells = Vec::with_capacity(rows.len() * p);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != p {
                return Err(Error::Dimension(format!(
                    "row {i} has {} cells, expected {p}",
                    row.len()
                )));
            }
            cells.extend(row);
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::MissingResponse { row: i });
        }
        Ok(Self {
            response_name: response_name.into(),
            col_names,
            y,
            cells,
        })
    }

    /// Build from a complete covariate matrix and a mask; masked cells are dropped.
    pub fn from_masked(
        response_name: impl Into<String>,
        col_names: Vec<String>,
        y: Vec<f64>,
        x: &[Vec<f64>],
        mask: &[Vec<bool>],
    ) -> Result<Self> {
        if x.len() != mask.len() {
            return Err(Error::Dimension("x and mask row counts differ".into()));
        }
        let rows = x
            .iter()
            .zip(mask)
            .map(|(xr, mr)| {
                if xr.len() != mr.len() {
                    return Err(Error::Dimension("x and mask widths differ".into()));
                }
                Ok(xr
                    .iter()
                    .zip(mr)
                    .map(|(&v, &m)| if m { None } else { Some(v) })
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(response_name, col_names, y, rows)
    }

    /// Default names `x1..xp` and response `y`.
    pub fn with_default_names(y: Vec<f64>, rows: Vec<Vec<Option<f64>>>, p: usize) -> Result<Self> {
        Self::new("y", default_names(p), y, rows)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.col_names.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn col_names(&self) -> &[String] {
        &self.col_names
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    pub fn row(&self, i: usize) -> &[Option<f64>] {
        let p = self.p();
        &self.cells[i * p..(i + 1) * p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Option<f64>]> + '_ {
        (0..self.n()).map(move |i| self.row(i))
    }

    pub fn value(&self, i: usize, j: usize) -> Option<f64> {
        self.cells[i * self.p() + j]
    }

    pub fn is_missing(&self, i: usize, j: usize) -> bool {
        self.value(i, j).is_none()
    }

    pub fn mask_row(&self, i: usize) -> Vec<bool> {
        self.row(i).iter().map(Option::is_none).collect()
    }

    pub fn pattern(&self, i: usize) -> PatternId {
        PatternId::of_record(self.row(i))
    }

    pub fn missing_count(&self, j: usize) -> usize {
        (0..self.n()).filter(|&i| self.is_missing(i, j)).count()
    }

    /// Columns with at least one missing cell, ascending.
    pub fn columns_with_missing(&self) -> Vec<usize> {
        (0..self.p()).filter(|&j| self.missing_count(j) > 0).collect()
    }

    pub fn observed_values(&self, j: usize) -> Vec<f64> {
        (0..self.n()).filter_map(|i| self.value(i, j)).collect()
    }

    /// Rows `indices` in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let p = self.p();
        let mut cells = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            cells.extend_from_slice(self.row(i));
        }
        Dataset {
            response_name: self.response_name.clone(),
            col_names: self.col_names.clone(),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            cells,
        }
    }

    /// Copy with every response shifted by `f(row)`.
    pub fn map_response(&self, mut f: impl FnMut(usize, f64, &[Option<f64>]) -> f64) -> Dataset {
        let mut out = self.clone();
        for i in 0..self.n() {
            out.y[i] = f(i, self.y[i], self.row(i));
        }
        out
    }
}

pub fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

/// Rows grouped by missingness pattern.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PatternIndex {
    groups: BTreeMap<PatternId, Vec<usize>>,
}

impl PatternIndex {
    pub fn groups(&self) -> &BTreeMap<PatternId, Vec<usize>> {
        &self.groups
    }

    pub fn get(&self, id: PatternId) -> Option<&[usize]> {
        self.groups.get(&id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn total_rows(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (PatternId, &[usize])> + '_ {
        self.groups.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn from_patterns(patterns: impl IntoIterator<Item = PatternId>) -> Self {
        let mut groups: BTreeMap<PatternId, Vec<usize>> = BTreeMap::new();
        for (i, id) in patterns.into_iter().enumerate() {
            groups.entry(id).or_default().push(i);
        }
        Self { groups }
    }
}

pub fn partition(ds: &Dataset) -> PatternIndex {
    PatternIndex::from_patterns((0..ds.n()).map(|i| ds.pattern(i)))
}

/// Format with 17 significant digits, `%.17g` style, which round-trips every `f64`.
pub fn format_g17(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{}", trim_zeros(mantissa.to_string()), exp)
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn parse_cell(path: &Path, row: usize, cell: &str, na_token: &str) -> Result<Option<f64>> {
    let cell = cell.trim();
    if cell == na_token {
        return Ok(None);
    }
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(Some)
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            row,
            message: format!("non-numeric cell `{cell}`"),
        })
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Read a CSV with a header row; `response` names the response column and all
/// other columns are covariates in file order. Data rows are numbered from 1.
pub fn load_csv(path: impl AsRef<Path>, response: &str, na_token: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(csv_err(path))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(csv_err(path))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let response_idx = headers
        .iter()
        .position(|h| h == response)
        .ok_or_else(|| Error::UnknownColumn(response.to_string()))?;
    let col_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != response_idx)
        .map(|(_, h)| h.clone())
        .collect();
    if col_names.len() > MAX_COLUMNS {
        return Err(Error::TooManyColumns(col_names.len()));
    }
    let mut y = Vec::new();
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row_no = r + 1;
        let record = record.map_err(csv_err(path))?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row: row_no,
                message: format!("{} fields, expected {}", record.len(), headers.len()),
            });
        }
        let mut row = Vec::with_capacity(col_names.len());
        for (k, cell) in record.iter().enumerate() {
            let v = parse_cell(path, row_no, cell, na_token)?;
            if k == response_idx {
                y.push(v.ok_or(Error::MissingResponse { row: row_no })?);
            } else {
                row.push(v);
            }
        }
        rows.push(row);
    }
    Dataset::new(response, col_names, y, rows)
}

/// Covariate records read by column name, for prediction inputs that may lack
/// a response column. Extra columns are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordTable {
    pub records: Vec<Vec<Option<f64>>>,
    /// Values of `response` when the file has that column.
    pub response: Option<Vec<Option<f64>>>,
}

pub fn load_records(
    path: impl AsRef<Path>,
    columns: &[String],
    response: Option<&str>,
    na_token: &str,
) -> Result<RecordTable> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(csv_err(path))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(csv_err(path))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let positions = columns
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| Error::UnknownColumn(c.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let response_pos = response.and_then(|r| headers.iter().position(|h| h == r));
    let mut records = Vec::new();
    let mut resp = response_pos.map(|_| Vec::new());
    for (r, record) in reader.records().enumerate() {
        let row_no = r + 1;
        let record = record.map_err(csv_err(path))?;
        let row = positions
            .iter()
            .map(|&k| parse_cell(path, row_no, record.get(k).unwrap_or(""), na_token))
            .collect::<Result<Vec<_>>>()?;
        records.push(row);
        if let (Some(k), Some(out)) = (response_pos, resp.as_mut()) {
            out.push(parse_cell(path, row_no, record.get(k).unwrap_or(""), na_token)?);
        }
    }
    Ok(RecordTable {
        records,
        response: resp,
    })
}

/// Write the response first, then covariates, with `na_token` for missing cells.
pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>, na_token: &str) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec![ds.response_name().to_string()];
    header.extend(ds.col_names().iter().cloned());
    writer.write_record(&header).map_err(csv_err(path))?;
    for i in 0..ds.n() {
        let mut rec = vec![format_g17(ds.y()[i])];
        rec.extend(ds.row(i).iter().map(|v| match v {
            Some(v) => format_g17(*v),
            None => na_token.to_string(),
        }));
        writer.write_record(&rec).map_err(csv_err(path))?;
    }
    writer.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn pattern_ids_follow_mask_bits() {
        assert_eq!(pattern_of(&[false, false]), PatternId(0));
        assert_eq!(pattern_of(&[true, false]), PatternId(1));
        assert_eq!(pattern_of(&[true, true]), PatternId(3));
        assert_eq!(PatternId::all_missing(2), PatternId(3));
        assert_eq!(PatternId::of_record(&[None, Some(1.0)]), PatternId(1));
    }

    #[test]
    fn observed_columns_cases() {
        assert_eq!(observed_columns(PatternId(1), 2), vec![1]);
        assert_eq!(observed_columns(PatternId(0), 4), vec![0, 1, 2, 3]);
        assert!(observed_columns(PatternId::all_missing(3), 3).is_empty());
    }

    #[test]
    fn subset_relation() {
        // pattern 1 observes {x2}; complete observes everything
        assert!(PatternId(1).observed_subset_of(PatternId(0)));
        assert!(!PatternId(0).observed_subset_of(PatternId(1)));
        assert!(PatternId(3).observed_subset_of(PatternId(2)));
        assert!(!PatternId(1).observed_subset_of(PatternId(2)));
    }

    #[test]
    fn partition_groups_rows() {
        let ds = Dataset::with_default_names(
            vec![1.0, 2.0, 3.0, 4.0],
            vec![
                vec![Some(1.0), Some(1.0)],
                vec![Some(2.0), Some(1.0)],
                vec![None, Some(1.0)],
                vec![Some(1.0), None],
            ],
            2,
        )
        .unwrap();
        let idx = partition(&ds);
        let sizes: Vec<usize> = idx.iter().map(|(_, r)| r.len()).collect();
        assert_eq!(sizes, vec![2, 1, 1]);
        assert_eq!(idx.get(PatternId(0)).unwrap(), &[0, 1]);
        assert_eq!(idx.total_rows(), 4);
    }

    #[test]
    fn partition_degenerate_cases() {
        let ds = Dataset::with_default_names(
            vec![1.0, 2.0],
            vec![vec![Some(1.0)], vec![Some(2.0)]],
            1,
        )
        .unwrap();
        let idx = partition(&ds);
        assert_eq!(idx.len(), 1);
        assert_eq!(idx.get(PatternId(0)).unwrap().len(), 2);

        let empty = Dataset::with_default_names(vec![], vec![], 3).unwrap();
        assert!(partition(&empty).is_empty());
    }

    #[test]
    fn load_csv_sets_mask() {
        let f = write_tmp("y,x1,x2\n1,2,3\n4,NA,6\n7,8,9\n");
        let ds = load_csv(f.path(), "y", "NA").unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.col_names(), &["x1".to_string(), "x2".to_string()]);
        let missing: usize = (0..3).map(|i| ds.mask_row(i).iter().filter(|m| **m).count()).sum();
        assert_eq!(missing, 1);
        assert!(ds.is_missing(1, 0));
    }

    #[test]
    fn load_csv_response_column_anywhere() {
        let f = write_tmp("x1,y,x2\n2,1,3\n");
        let ds = load_csv(f.path(), "y", "NA").unwrap();
        assert_eq!(ds.y(), &[1.0]);
        assert_eq!(ds.row(0), &[Some(2.0), Some(3.0)]);
    }

    #[test]
    fn load_csv_missing_response_names_row() {
        let f = write_tmp("y,x1\n1,2\nNA,3\n");
        match load_csv(f.path(), "y", "NA") {
            Err(Error::MissingResponse { row }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn load_csv_rejects_garbage_cells() {
        let f = write_tmp("y,x1\n1,abc\n");
        assert!(matches!(
            load_csv(f.path(), "y", "NA"),
            Err(Error::Parse { row: 1, .. })
        ));
        assert!(load_csv("/nonexistent/file.csv", "y", "NA").is_err());
    }

    #[test]
    fn custom_na_token() {
        let f = write_tmp("y,x1\n1,.\n");
        let ds = load_csv(f.path(), "y", ".").unwrap();
        assert!(ds.is_missing(0, 0));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = Dataset::with_default_names(
            vec![0.1 + 0.2, -1.0e-300, 123456789.123456789],
            vec![
                vec![Some(std::f64::consts::PI), None],
                vec![None, Some(1.0 / 3.0)],
                vec![Some(-2.5e17), Some(7.0)],
            ],
            2,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        save_csv(&ds, &path, "NA").unwrap();
        let back = load_csv(&path, "y", "NA").unwrap();
        assert_eq!(back, ds);
        save_csv(&back, &path, "NA").unwrap();
        assert_eq!(load_csv(&path, "y", "NA").unwrap(), ds);
    }

    #[test]
    fn g17_formatting() {
        assert_eq!(format_g17(1.0), "1");
        assert_eq!(format_g17(0.5), "0.5");
        assert_eq!(format_g17(0.1), "0.10000000000000001");
        assert_eq!(format_g17(1e-7), "9.9999999999999995e-8");
        for v in [0.1 + 0.2, 1e300, -3.75e-12, 12345.678] {
            assert_eq!(format_g17(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn load_records_by_name() {
        let f = write_tmp("x2,x1,other\n1,NA,9\n3,4,9\n");
        let t = load_records(f.path(), &["x1".into(), "x2".into()], Some("y"), "NA").unwrap();
        assert_eq!(t.records, vec![vec![None, Some(1.0)], vec![Some(4.0), Some(3.0)]]);
        assert!(t.response.is_none());
        assert!(load_records(f.path(), &["x3".into()], None, "NA").is_err());
    }
}
