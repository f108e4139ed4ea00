//! Sparse nonnegative data, label files and count smoothing.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::divergence::Divergence;
use crate::error::{Error, Result};
use crate::sparse::{SparsePoint, SparseVec};

/// On-disk layouts accepted by [`load_bow`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BowFormat {
    /// Three header lines (N, d, NNZ) followed by `docID termID count`
    /// triples, 1-indexed.
    UciBow,
    /// One comma-separated row of reals per line.
    DenseCsv,
}

impl FromStr for BowFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uci-bow" => Ok(BowFormat::UciBow),
            "dense-csv" => Ok(BowFormat::DenseCsv),
            _ => Err(Error::Unknown {
                what: "data format",
                name: s.to_string(),
            }),
        }
    }
}

/// N×d nonnegative matrix stored by sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    n_cols: usize,
    rows: Vec<SparseVec>,
    ids: Vec<String>,
}

impl DataMatrix {
    pub fn new(n_cols: usize, rows: Vec<SparseVec>, ids: Vec<String>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if n_cols == 0 {
            return Err(Error::InvalidArgument("data must have at least one column".into()));
        }
        if ids.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                got: ids.len(),
            });
        }
        for (i, row) in rows.iter().enumerate() {
            let sorted = row.idx.windows(2).all(|w| w[0] < w[1]);
            let in_bounds = row.idx.last().is_none_or(|&j| (j as usize) < n_cols);
            if !sorted || !in_bounds {
                return Err(Error::InvalidArgument(format!(
                    "row {i}: column indices must be strictly increasing and below {n_cols}"
                )));
            }
            if let Some(v) = row.val.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidArgument(format!(
                    "row {i}: stored values must be positive and finite, got {v}"
                )));
            }
        }
        Ok(DataMatrix { n_cols, rows, ids })
    }

    /// Rows numbered "1".."N".
    pub fn with_default_ids(n_cols: usize, rows: Vec<SparseVec>) -> Result<Self> {
        let ids = (1..=rows.len()).map(|i| i.to_string()).collect();
        Self::new(n_cols, rows, ids)
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut sparse = Vec::with_capacity(rows.len());
        for row in rows {
            if row.len() != n_cols {
                return Err(Error::DimensionMismatch {
                    expected: n_cols,
                    got: row.len(),
                });
            }
            let mut v = SparseVec::new();
            for (j, &x) in row.iter().enumerate() {
                if x != 0.0 {
                    v.push(j, x);
                }
            }
            sparse.push(v);
        }
        Self::with_default_ids(n_cols, sparse)
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &SparseVec {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[SparseVec] {
        &self.rows
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(SparseVec::nnz).sum()
    }

    pub fn dense_row(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols];
        for (j, v) in self.rows[i].iter() {
            out[j] = v;
        }
        out
    }

    /// Keeps the rows listed in `keep`, in that order.
    pub fn select_rows(&self, keep: &[usize]) -> Result<DataMatrix> {
        DataMatrix::new(
            self.n_cols,
            keep.iter().map(|&i| self.rows[i].clone()).collect(),
            keep.iter().map(|&i| self.ids[i].clone()).collect(),
        )
    }
}

pub fn load_bow(path: &Path, format: BowFormat) -> Result<DataMatrix> {
    let reader = BufReader::new(File::open(path)?);
    match format {
        BowFormat::UciBow => read_uci_bow(reader, path),
        BowFormat::DenseCsv => read_dense_csv(reader, path),
    }
}

fn read_uci_bow(reader: impl BufRead, path: &Path) -> Result<DataMatrix> {
    let mut lines = reader.lines().enumerate().map(|(k, l)| (k + 1, l));
    let mut header = [0usize; 3];
    for (slot, name) in header.iter_mut().zip(["N", "d", "NNZ"]) {
        let (lineno, line) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 0, format!("missing header line {name}")))?;
        let line = line?;
        *slot = line
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("header {name} is not an integer: '{line}'")))?;
    }
    let [n, d, nnz] = header;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut entries: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut seen = 0usize;
    for (lineno, line) in lines {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let (doc, term, count) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), Some(c), None) => (a, b, c),
            _ => return Err(Error::parse(path, lineno, "expected 'docID termID count'")),
        };
        let doc: usize = doc
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad docID '{doc}'")))?;
        let term: usize = term
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad termID '{term}'")))?;
        let count: f64 = count
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad count '{count}'")))?;
        if doc == 0 || doc > n {
            return Err(Error::parse(path, lineno, format!("docID {doc} outside 1..={n}")));
        }
        if term == 0 || term > d {
            return Err(Error::parse(path, lineno, format!("termID {term} outside 1..={d}")));
        }
        if !(count >= 0.0 && count.is_finite()) {
            return Err(Error::parse(path, lineno, format!("count must be nonnegative, got {count}")));
        }
        seen += 1;
        if count > 0.0 {
            entries[doc - 1].push((term - 1, count));
        }
    }
    if seen != nnz {
        return Err(Error::parse(
            path,
            0,
            format!("header declares {nnz} entries but the body has {seen}"),
        ));
    }
    let mut rows = Vec::with_capacity(n);
    for (i, mut row) in entries.into_iter().enumerate() {
        row.sort_by_key(|&(j, _)| j);
        if let Some(w) = row.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::parse(
                path,
                0,
                format!("duplicate entry for docID {} termID {}", i + 1, w[0].0 + 1),
            ));
        }
        let mut v = SparseVec::with_capacity(row.len());
        for (j, c) in row {
            v.push(j, c);
        }
        rows.push(v);
    }
    DataMatrix::with_default_ids(d, rows)
}

fn read_dense_csv(reader: impl BufRead, path: &Path) -> Result<DataMatrix> {
    let mut rows = Vec::new();
    let mut width = None;
    for (k, line) in reader.lines().enumerate() {
        let lineno = k + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut v = SparseVec::new();
        let mut count = 0;
        for (j, field) in line.split(',').enumerate() {
            let x: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad number '{field}'")))?;
            if !(x >= 0.0 && x.is_finite()) {
                return Err(Error::parse(path, lineno, format!("values must be nonnegative, got {x}")));
            }
            if x != 0.0 {
                v.push(j, x);
            }
            count += 1;
        }
        match width {
            None => width = Some(count),
            Some(w) if w != count => {
                return Err(Error::parse(path, lineno, format!("expected {w} columns, found {count}")))
            }
            _ => {}
        }
        rows.push(v);
    }
    match width {
        None => Err(Error::EmptyDataset),
        Some(d) => DataMatrix::with_default_ids(d, rows),
    }
}

/// Writes `data` in the uci-bow layout. Row ids are not stored; rows are
/// numbered by position.
pub fn write_bow(data: &DataMatrix, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", data.n_rows())?;
    writeln!(w, "{}", data.n_cols())?;
    writeln!(w, "{}", data.nnz())?;
    for (i, row) in data.rows().iter().enumerate() {
        for (j, c) in row.iter() {
            writeln!(w, "{} {} {}", i + 1, j + 1, c)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Class assignments for a subset of row ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelSet {
    pub assignments: BTreeMap<String, usize>,
    /// Class names, indexed by class id.
    pub classes: Vec<String>,
}

impl LabelSet {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.assignments.get(id).copied()
    }

    /// Labels aligned with the rows of `data`; unlabeled rows map to `None`.
    /// Fails if the label set names an id absent from `data`.
    pub fn align(&self, data: &DataMatrix) -> Result<Vec<Option<usize>>> {
        let index: BTreeMap<&str, usize> = data.ids().iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        if let Some(id) = self.assignments.keys().find(|id| !index.contains_key(id.as_str())) {
            return Err(Error::InvalidArgument(format!("label refers to unknown row id '{id}'")));
        }
        Ok(data.ids().iter().map(|id| self.get(id)).collect())
    }
}

pub fn load_labels(path: &Path) -> Result<LabelSet> {
    let reader = BufReader::new(File::open(path)?);
    let mut set = LabelSet::default();
    let mut class_of: BTreeMap<String, usize> = BTreeMap::new();
    for (k, line) in reader.lines().enumerate() {
        let lineno = k + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let (id, label) = trimmed
            .split_once(',')
            .ok_or_else(|| Error::parse(path, lineno, "expected 'id,label'"))?;
        let (id, label) = (id.trim(), label.trim());
        let class = *class_of.entry(label.to_string()).or_insert_with(|| {
            set.classes.push(label.to_string());
            set.classes.len() - 1
        });
        match set.assignments.get(id) {
            Some(&prev) if prev != class => {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("id '{id}' relabeled from '{}' to '{label}'", set.classes[prev]),
                ))
            }
            Some(_) => {}
            None => {
                set.assignments.insert(id.to_string(), class);
            }
        }
    }
    Ok(set)
}

/// Writes "id,label" lines in the row order of `ids`, skipping unlabeled ids.
pub fn write_labels(labels: &LabelSet, ids: &[String], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for id in ids {
        if let Some(c) = labels.get(id) {
            writeln!(w, "{},{}", id, labels.classes[c])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Logical view of `base + epsilon` on every coordinate. Never densified.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedMatrix {
    pub base: DataMatrix,
    pub epsilon: f64,
}

pub fn smooth(data: DataMatrix, epsilon: f64) -> SmoothedMatrix {
    SmoothedMatrix { base: data, epsilon }
}

impl SmoothedMatrix {
    pub fn n_rows(&self) -> usize {
        self.base.n_rows()
    }

    pub fn n_cols(&self) -> usize {
        self.base.n_cols()
    }

    pub fn point(&self, i: usize) -> SparsePoint {
        let row = self.base.row(i);
        SparsePoint {
            base: self.epsilon,
            coords: SparseVec {
                idx: row.idx.clone(),
                val: row.val.iter().map(|c| c + self.epsilon).collect(),
            },
        }
    }

    pub fn points(&self) -> Vec<SparsePoint> {
        (0..self.n_rows()).map(|i| self.point(i)).collect()
    }

    pub fn dense_row(&self, i: usize) -> Vec<f64> {
        let mut out = self.base.dense_row(i);
        out.iter_mut().for_each(|v| *v += self.epsilon);
        out
    }

    /// Checks every logical coordinate against the divergence domain,
    /// naming the first offending (row, column).
    pub fn check_domain(&self, div: &Divergence) -> Result<()> {
        if div.dim() != self.n_cols() {
            return Err(Error::DimensionMismatch {
                expected: div.dim(),
                got: self.n_cols(),
            });
        }
        let g = div.generator();
        let fill_ok = g.contains(self.epsilon);
        for (i, row) in self.base.rows().iter().enumerate() {
            if !fill_ok && row.nnz() < self.n_cols() {
                let col = (0..self.n_cols())
                    .zip(row.idx.iter().map(|&j| j as usize).chain(std::iter::repeat(usize::MAX)))
                    .find(|(j, s)| j != s)
                    .map_or(0, |(j, _)| j);
                return Err(Error::RowDomain {
                    kind: g.name(),
                    row: i,
                    col,
                    value: self.epsilon,
                });
            }
            for (j, c) in row.iter() {
                let v = c + self.epsilon;
                if !g.contains(v) {
                    return Err(Error::RowDomain {
                        kind: g.name(),
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
            if div.kind() == crate::divergence::DivergenceKind::Kl {
                g.check_point(&self.dense_row(i)).map_err(|e| match e {
                    Error::NotOnSimplex { .. } => Error::InvalidArgument(format!("row {i}: {e}")),
                    other => other,
                })?;
            }
        }
        Ok(())
    }
}

/// Median Euclidean distance over `pairs` seeded random row pairs.
pub fn median_pair_distance(data: &SmoothedMatrix, pairs: usize, seed: u64) -> f64 {
    let n = data.n_rows();
    if n < 2 {
        return 1.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = data.points();
    let mut dists: Vec<f64> = (0..pairs)
        .map(|_| {
            let a = rng.random_range(0..n);
            let mut b = rng.random_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            let mut acc = 0.0;
            crate::sparse::for_each_union(&points[a], &points[b], |_, x, y| acc += (x - y) * (x - y));
            acc.sqrt()
        })
        .collect();
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let m = if dists.len().is_multiple_of(2) {
        0.5 * (dists[mid - 1] + dists[mid])
    } else {
        dists[mid]
    };
    if m > 0.0 {
        m
    } else {
        1.0
    }
}
