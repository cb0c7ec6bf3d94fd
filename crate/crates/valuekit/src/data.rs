//! Instance keys, gold/probability tables, label derivation, and alignment.
//!
//! Tables are tab-separated UTF-8 with a single header row and no quoting,
//! the distribution format of the sentence-level value corpus. Lines starting
//! with `#` ahead of the header are tool comments and are skipped. Everything
//! here is immutable after construction and safe to share across workers.

use crate::error::{Error, Result};
use crate::num::{from_f64, Scalar};
use crate::values::{ValueTaxonomy, NUM_VALUES, PRESENCE_COLUMN};
use crate::Prob;
use sha2::{Digest, Sha256};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const TEXT_ID_COLUMN: &str = "Text-ID";
pub const SENTENCE_ID_COLUMN: &str = "Sentence-ID";

/// (text id, sentence id) pair naming one instance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SentenceKey {
    pub text_id: String,
    pub sentence_id: String,
}

impl SentenceKey {
    pub fn new(text_id: impl Into<String>, sentence_id: impl Into<String>) -> Result<Self> {
        let key = SentenceKey {
            text_id: text_id.into(),
            sentence_id: sentence_id.into(),
        };
        if key.text_id.is_empty() || key.sentence_id.is_empty() {
            return Err(Error::InvalidArgument(
                "sentence key components must be non-empty".into(),
            ));
        }
        Ok(key)
    }
}

impl fmt::Display for SentenceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.text_id, self.sentence_id)
    }
}

/// Dense row-major 0/1 matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl BinaryMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        BinaryMatrix {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<u8>>, cols: usize) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * cols);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Misalignment(format!(
                    "row {} has {} columns, expected {}",
                    i,
                    row.len(),
                    cols
                )));
            }
            for (j, v) in row.into_iter().enumerate() {
                if v > 1 {
                    return Err(Error::InvalidArgument(format!(
                        "row {i}, column {j}: non-binary value {v}"
                    )));
                }
                data.push(v);
            }
        }
        Ok(BinaryMatrix { rows: n, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: u8) {
        debug_assert!(v <= 1);
        self.data[row * self.cols + col] = v;
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[u8] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn column(&self, col: usize) -> impl Iterator<Item = u8> + '_ {
        (0..self.rows).map(move |i| self.get(i, col))
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }
}

/// One instance of the raw two-flag stance annotation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawStanceRecord {
    pub key: SentenceKey,
    attained: [u8; NUM_VALUES],
    constrained: [u8; NUM_VALUES],
}

impl RawStanceRecord {
    pub fn new(key: SentenceKey, attained: [u8; NUM_VALUES], constrained: [u8; NUM_VALUES]) -> Result<Self> {
        for (v, (&a, &c)) in attained.iter().zip(constrained.iter()).enumerate() {
            if a > 1 || c > 1 {
                return Err(Error::InvalidArgument(format!(
                    "key {key}, value column {v}: stance flags must be 0/1, got attained={a} constrained={c}",
                    key = key
                )));
            }
        }
        Ok(RawStanceRecord {
            key,
            attained,
            constrained,
        })
    }

    pub fn attained(&self) -> &[u8; NUM_VALUES] {
        &self.attained
    }

    pub fn constrained(&self) -> &[u8; NUM_VALUES] {
        &self.constrained
    }
}

/// Collapses the two stance flags into one binary label per value:
/// active iff attained or constrained (or both).
pub fn collapse_stance(record: &RawStanceRecord) -> [u8; NUM_VALUES] {
    let mut labels = [0u8; NUM_VALUES];
    for v in 0..NUM_VALUES {
        labels[v] = u8::from(record.attained[v] + record.constrained[v] > 0);
    }
    labels
}

/// Row-wise OR over the value columns.
pub fn derive_presence(labels: &BinaryMatrix) -> Vec<u8> {
    (0..labels.rows())
        .map(|i| u8::from(labels.row(i).contains(&1)))
        .collect()
}

/// Per-instance gold labels for the 19 values plus the derived presence bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldMatrix {
    pub keys: Vec<SentenceKey>,
    pub labels: BinaryMatrix,
    pub presence: Vec<u8>,
}

impl GoldMatrix {
    /// Builds a gold matrix, deriving presence from the labels.
    pub fn from_labels(keys: Vec<SentenceKey>, labels: BinaryMatrix) -> Result<Self> {
        check_keys_unique(&keys)?;
        if keys.len() != labels.rows() || labels.cols() != NUM_VALUES {
            return Err(Error::Misalignment(format!(
                "gold labels must be {}x{}, got {}x{}",
                keys.len(),
                NUM_VALUES,
                labels.rows(),
                labels.cols()
            )));
        }
        let presence = derive_presence(&labels);
        Ok(GoldMatrix {
            keys,
            labels,
            presence,
        })
    }

    /// Builds a gold matrix with an explicit presence column, which must be
    /// consistent with the labels.
    pub fn with_presence(keys: Vec<SentenceKey>, labels: BinaryMatrix, presence: Vec<u8>) -> Result<Self> {
        let gold = GoldMatrix::from_labels(keys, labels)?;
        if gold.presence != presence {
            let row = gold
                .presence
                .iter()
                .zip(presence.iter())
                .position(|(a, b)| a != b)
                .unwrap_or(0);
            return Err(Error::InvalidArgument(format!(
                "presence column inconsistent with labels at row {row} (key {})",
                gold.keys[row]
            )));
        }
        Ok(gold)
    }

    pub fn n(&self) -> usize {
        self.keys.len()
    }

    /// Presence bits as an n x 1 matrix, for the binary presence task.
    pub fn presence_matrix(&self) -> BinaryMatrix {
        BinaryMatrix {
            rows: self.presence.len(),
            cols: 1,
            data: self.presence.clone(),
        }
    }

    /// Content digest; label files and in-memory fixtures with identical
    /// contents hash identically.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for key in &self.keys {
            h.update(key.text_id.as_bytes());
            h.update([0x1f]);
            h.update(key.sentence_id.as_bytes());
            h.update([0x1e]);
        }
        h.update(self.labels.data());
        h.update(&self.presence);
        hex(&h.finalize())
    }
}

/// Per-instance probabilities: 19 value columns or one presence column.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix<S: Scalar = Prob> {
    pub keys: Vec<SentenceKey>,
    pub model_name: String,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> ProbMatrix<S> {
    pub fn new(keys: Vec<SentenceKey>, cols: usize, data: Vec<S>, model_name: impl Into<String>) -> Result<Self> {
        check_keys_unique(&keys)?;
        if cols != 1 && cols != NUM_VALUES {
            return Err(Error::InvalidArgument(format!(
                "probability tables have 1 or {NUM_VALUES} columns, got {cols}"
            )));
        }
        if data.len() != keys.len() * cols {
            return Err(Error::Misalignment(format!(
                "expected {} probabilities, got {}",
                keys.len() * cols,
                data.len()
            )));
        }
        for (idx, &p) in data.iter().enumerate() {
            if !(p >= S::zero() && p <= S::one()) {
                return Err(Error::InvalidArgument(format!(
                    "row {}, column {}: probability {} outside [0,1]",
                    idx / cols,
                    idx % cols,
                    p
                )));
            }
        }
        Ok(ProbMatrix {
            keys,
            model_name: model_name.into(),
            cols,
            data,
        })
    }

    pub fn n(&self) -> usize {
        self.keys.len()
    }

    pub fn k(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> S {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[S] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    /// Same keys and shape, new cell values.
    pub fn with_data(&self, data: Vec<S>, model_name: impl Into<String>) -> Result<Self> {
        ProbMatrix::new(self.keys.clone(), self.cols, data, model_name)
    }
}

/// Probabilities and gold labels on an identical key sequence.
#[derive(Debug, Clone)]
pub struct AlignedPair<S: Scalar = Prob> {
    probs: ProbMatrix<S>,
    gold: GoldMatrix,
}

impl<S: Scalar> AlignedPair<S> {
    pub fn probs(&self) -> &ProbMatrix<S> {
        &self.probs
    }

    pub fn gold(&self) -> &GoldMatrix {
        &self.gold
    }

    pub fn n(&self) -> usize {
        self.gold.n()
    }

    pub fn into_parts(self) -> (ProbMatrix<S>, GoldMatrix) {
        (self.probs, self.gold)
    }
}

/// Merges predictions with gold labels on the sentence key, reordering the
/// prediction rows into gold order. Every key must appear in both tables.
pub fn align<S: Scalar>(probs: ProbMatrix<S>, gold: GoldMatrix) -> Result<AlignedPair<S>> {
    if probs.n() == 0 || gold.n() == 0 {
        return Err(Error::InvalidArgument(
            "alignment requires non-empty tables".into(),
        ));
    }
    let mut by_key: HashMap<&SentenceKey, usize> = HashMap::with_capacity(probs.n());
    for (i, key) in probs.keys.iter().enumerate() {
        by_key.insert(key, i);
    }
    let mut missing = Vec::new();
    let mut order = Vec::with_capacity(gold.n());
    for key in &gold.keys {
        match by_key.remove(key) {
            Some(i) => order.push(i),
            None => missing.push(key.to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::KeyMismatch(format!(
            "{} gold key(s) absent from predictions: {}",
            missing.len(),
            preview(&missing)
        )));
    }
    if !by_key.is_empty() {
        let extra: Vec<String> = by_key.keys().map(|k| k.to_string()).collect();
        return Err(Error::KeyMismatch(format!(
            "{} prediction key(s) absent from gold: {}",
            extra.len(),
            preview(&extra)
        )));
    }
    let cols = probs.k();
    let mut data = Vec::with_capacity(gold.n() * cols);
    for &i in &order {
        data.extend_from_slice(probs.row(i));
    }
    let reordered = ProbMatrix {
        keys: gold.keys.clone(),
        model_name: probs.model_name.clone(),
        cols,
        data,
    };
    Ok(AlignedPair {
        probs: reordered,
        gold,
    })
}

fn preview(items: &[String]) -> String {
    const SHOW: usize = 5;
    if items.len() <= SHOW {
        items.join(", ")
    } else {
        format!("{}, ...", items[..SHOW].join(", "))
    }
}

fn check_keys_unique(keys: &[SentenceKey]) -> Result<()> {
    let mut seen: HashSet<&SentenceKey> = HashSet::with_capacity(keys.len());
    for key in keys {
        if !seen.insert(key) {
            return Err(Error::KeyMismatch(format!("duplicate key {key}")));
        }
    }
    Ok(())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of a file's raw bytes, for run manifests.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex(&Sha256::digest(&bytes)))
}

// ---------------------------------------------------------------------------
// TSV ingestion and emission
// ---------------------------------------------------------------------------

/// How to treat the presence column of a gold file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PresenceMode {
    /// Error when the stored presence bit disagrees with the OR of the labels.
    #[default]
    Strict,
    /// Recompute presence from the labels and report a warning per row.
    Lenient,
}

struct TsvReader {
    path: String,
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
}

impl TsvReader {
    fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::parse(&path.display().to_string(), "open", e.to_string()))?;
        Ok(TsvReader {
            path: path.display().to_string(),
            lines: BufReader::new(file).lines(),
            line_no: 0,
        })
    }

    /// Next non-comment line, or None at EOF.
    fn next_line(&mut self) -> Result<Option<(usize, String)>> {
        loop {
            match self.lines.next() {
                None => return Ok(None),
                Some(line) => {
                    let line = line?;
                    self.line_no += 1;
                    if line.starts_with('#') {
                        continue;
                    }
                    return Ok(Some((self.line_no, line)));
                }
            }
        }
    }

    fn header(&mut self) -> Result<(usize, Vec<String>)> {
        match self.next_line()? {
            Some((no, line)) => Ok((no, line.split('\t').map(|s| s.to_string()).collect())),
            None => Err(Error::parse(&self.path, "line 1", "missing header row")),
        }
    }
}

fn expect_header(path: &str, line_no: usize, got: &[String], want: &[String]) -> Result<()> {
    if got.len() != want.len() {
        return Err(Error::parse(
            path,
            format!("line {line_no}"),
            format!("expected {} columns, got {}", want.len(), got.len()),
        ));
    }
    for (i, (g, w)) in got.iter().zip(want.iter()).enumerate() {
        if g != w {
            return Err(Error::parse(
                path,
                format!("line {line_no}, column {}", i + 1),
                format!("expected column '{w}', got '{g}'"),
            ));
        }
    }
    Ok(())
}

fn parse_binary_cell(path: &str, line_no: usize, column: &str, cell: &str) -> Result<u8> {
    match cell {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::parse(
            path,
            format!("line {line_no}, column '{column}'"),
            format!("non-binary value '{other}'"),
        )),
    }
}

fn split_row<'a>(path: &str, line_no: usize, line: &'a str, want: usize) -> Result<Vec<&'a str>> {
    let cells: Vec<&str> = line.split('\t').collect();
    if cells.len() != want {
        return Err(Error::parse(
            path,
            format!("line {line_no}"),
            format!("expected {want} cells, got {}", cells.len()),
        ));
    }
    Ok(cells)
}

fn parse_key(path: &str, line_no: usize, cells: &[&str]) -> Result<SentenceKey> {
    SentenceKey::new(cells[0], cells[1]).map_err(|_| {
        Error::parse(
            path,
            format!("line {line_no}"),
            "empty Text-ID or Sentence-ID",
        )
    })
}

/// Loads a gold label table. Returns the matrix plus any lenient-mode
/// warnings (empty in strict mode, which instead fails fast).
pub fn load_gold(path: &Path, taxonomy: &ValueTaxonomy, mode: PresenceMode) -> Result<(GoldMatrix, Vec<String>)> {
    let mut reader = TsvReader::open(path)?;
    let (hline, header) = reader.header()?;
    let mut want: Vec<String> = vec![TEXT_ID_COLUMN.into(), SENTENCE_ID_COLUMN.into()];
    want.extend(taxonomy.names().iter().cloned());
    want.push(PRESENCE_COLUMN.into());
    expect_header(&reader.path, hline, &header, &want)?;

    let mut keys = Vec::new();
    let mut rows = Vec::new();
    let mut stored_presence = Vec::new();
    while let Some((line_no, line)) = reader.next_line()? {
        let cells = split_row(&reader.path, line_no, &line, want.len())?;
        keys.push(parse_key(&reader.path, line_no, &cells)?);
        let mut row = Vec::with_capacity(NUM_VALUES);
        for v in 0..NUM_VALUES {
            row.push(parse_binary_cell(
                &reader.path,
                line_no,
                taxonomy.name(v),
                cells[2 + v],
            )?);
        }
        stored_presence.push((
            line_no,
            parse_binary_cell(&reader.path, line_no, PRESENCE_COLUMN, cells[2 + NUM_VALUES])?,
        ));
        rows.push(row);
    }

    let labels = BinaryMatrix::from_rows(rows, NUM_VALUES)?;
    let derived = derive_presence(&labels);
    let mut warnings = Vec::new();
    for (i, (&(line_no, stored), &want_bit)) in stored_presence.iter().zip(derived.iter()).enumerate() {
        if stored != want_bit {
            match mode {
                PresenceMode::Strict => {
                    return Err(Error::parse(
                        &reader.path,
                        format!("line {line_no}, column '{PRESENCE_COLUMN}'"),
                        format!(
                            "presence={stored} inconsistent with value labels (key {})",
                            keys[i]
                        ),
                    ));
                }
                PresenceMode::Lenient => warnings.push(format!(
                    "{}: line {line_no}: presence={stored} recomputed to {want_bit} (key {})",
                    reader.path, keys[i]
                )),
            }
        }
    }
    let gold = GoldMatrix::from_labels(keys, labels)?;
    Ok((gold, warnings))
}

/// Writes a gold table; `comment` lines (without the leading `#`) go first.
pub fn write_gold(path: &Path, gold: &GoldMatrix, taxonomy: &ValueTaxonomy, comments: &[String]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    write!(w, "{TEXT_ID_COLUMN}\t{SENTENCE_ID_COLUMN}")?;
    for name in taxonomy.names() {
        write!(w, "\t{name}")?;
    }
    writeln!(w, "\t{PRESENCE_COLUMN}")?;
    for (i, key) in gold.keys.iter().enumerate() {
        write!(w, "{}\t{}", key.text_id, key.sentence_id)?;
        for &v in gold.labels.row(i) {
            write!(w, "\t{v}")?;
        }
        writeln!(w, "\t{}", gold.presence[i])?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a probability table; `expected_k`, when given, must match the file.
pub fn load_probs<S: Scalar>(
    path: &Path,
    expected_k: Option<usize>,
    taxonomy: &ValueTaxonomy,
    model_name: &str,
) -> Result<ProbMatrix<S>> {
    let mut reader = TsvReader::open(path)?;
    let (hline, header) = reader.header()?;
    let k = match header.len() {
        3 => 1,
        n if n == 2 + NUM_VALUES => NUM_VALUES,
        n => {
            return Err(Error::parse(
                &reader.path,
                format!("line {hline}"),
                format!("expected 3 or {} columns, got {n}", 2 + NUM_VALUES),
            ))
        }
    };
    if let Some(want_k) = expected_k {
        if want_k != k {
            return Err(Error::parse(
                &reader.path,
                format!("line {hline}"),
                format!("expected {want_k} probability column(s), found {k}"),
            ));
        }
    }
    let mut want: Vec<String> = vec![TEXT_ID_COLUMN.into(), SENTENCE_ID_COLUMN.into()];
    if k == 1 {
        want.push(PRESENCE_COLUMN.into());
    } else {
        want.extend(taxonomy.names().iter().cloned());
    }
    expect_header(&reader.path, hline, &header, &want)?;

    let mut keys = Vec::new();
    let mut data: Vec<S> = Vec::new();
    while let Some((line_no, line)) = reader.next_line()? {
        let cells = split_row(&reader.path, line_no, &line, want.len())?;
        keys.push(parse_key(&reader.path, line_no, &cells)?);
        for (j, cell) in cells[2..].iter().enumerate() {
            let column = &want[2 + j];
            let p: f64 = cell.parse().map_err(|_| {
                Error::parse(
                    &reader.path,
                    format!("line {line_no}, column '{column}'"),
                    format!("not a number: '{cell}'"),
                )
            })?;
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::parse(
                    &reader.path,
                    format!("line {line_no}, column '{column}'"),
                    format!("probability {p} outside [0,1]"),
                ));
            }
            data.push(from_f64(p));
        }
    }
    ProbMatrix::new(keys, k, data, model_name)
}

pub fn write_probs<S: Scalar>(
    path: &Path,
    probs: &ProbMatrix<S>,
    taxonomy: &ValueTaxonomy,
    comments: &[String],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    write!(w, "{TEXT_ID_COLUMN}\t{SENTENCE_ID_COLUMN}")?;
    if probs.k() == 1 {
        writeln!(w, "\t{PRESENCE_COLUMN}")?;
    } else {
        for name in taxonomy.names() {
            write!(w, "\t{name}")?;
        }
        writeln!(w)?;
    }
    for (i, key) in probs.keys.iter().enumerate() {
        write!(w, "{}\t{}", key.text_id, key.sentence_id)?;
        for &p in probs.row(i) {
            write!(w, "\t{p}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes binarized predictions in the gold/probability grid layout
/// (19 value columns, 0/1 cells, no presence column).
pub fn write_predictions(
    path: &Path,
    keys: &[SentenceKey],
    preds: &BinaryMatrix,
    taxonomy: &ValueTaxonomy,
    comments: &[String],
) -> Result<()> {
    if keys.len() != preds.rows() || preds.cols() != NUM_VALUES {
        return Err(Error::Misalignment(format!(
            "predictions must be {}x{NUM_VALUES}, got {}x{}",
            keys.len(),
            preds.rows(),
            preds.cols()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    write!(w, "{TEXT_ID_COLUMN}\t{SENTENCE_ID_COLUMN}")?;
    for name in taxonomy.names() {
        write!(w, "\t{name}")?;
    }
    writeln!(w)?;
    for (i, key) in keys.iter().enumerate() {
        write!(w, "{}\t{}", key.text_id, key.sentence_id)?;
        for &v in preds.row(i) {
            write!(w, "\t{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a raw stance table: per value, `<value>:attained` and
/// `<value>:constrained` flag columns.
pub fn load_stance(path: &Path, taxonomy: &ValueTaxonomy) -> Result<Vec<RawStanceRecord>> {
    let mut reader = TsvReader::open(path)?;
    let (hline, header) = reader.header()?;
    let mut want: Vec<String> = vec![TEXT_ID_COLUMN.into(), SENTENCE_ID_COLUMN.into()];
    for name in taxonomy.names() {
        want.push(format!("{name}:attained"));
        want.push(format!("{name}:constrained"));
    }
    expect_header(&reader.path, hline, &header, &want)?;

    let mut records = Vec::new();
    let mut seen: HashSet<SentenceKey> = HashSet::new();
    while let Some((line_no, line)) = reader.next_line()? {
        let cells = split_row(&reader.path, line_no, &line, want.len())?;
        let key = parse_key(&reader.path, line_no, &cells)?;
        if !seen.insert(key.clone()) {
            return Err(Error::parse(
                &reader.path,
                format!("line {line_no}"),
                format!("duplicate key {key}"),
            ));
        }
        let mut attained = [0u8; NUM_VALUES];
        let mut constrained = [0u8; NUM_VALUES];
        for v in 0..NUM_VALUES {
            attained[v] = parse_binary_cell(&reader.path, line_no, &want[2 + 2 * v], cells[2 + 2 * v])?;
            constrained[v] =
                parse_binary_cell(&reader.path, line_no, &want[3 + 2 * v], cells[3 + 2 * v])?;
        }
        records.push(RawStanceRecord::new(key, attained, constrained)?);
    }
    Ok(records)
}

/// Collapses stance records into a gold matrix (labels by stance collapse,
/// presence by row-wise OR).
pub fn stance_to_gold(records: &[RawStanceRecord]) -> Result<GoldMatrix> {
    let keys: Vec<SentenceKey> = records.iter().map(|r| r.key.clone()).collect();
    let rows: Vec<Vec<u8>> = records.iter().map(|r| collapse_stance(r).to_vec()).collect();
    GoldMatrix::from_labels(keys, BinaryMatrix::from_rows(rows, NUM_VALUES)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::NamedTempFile;

    fn key(t: &str, s: &str) -> SentenceKey {
        SentenceKey::new(t, s).unwrap()
    }

    fn tax() -> ValueTaxonomy {
        ValueTaxonomy::default()
    }

    fn gold_file(rows: &[(&str, &str, Vec<u8>, u8)]) -> NamedTempFile {
        let mut f = NamedTempFile::new().unwrap();
        let mut header = format!("{TEXT_ID_COLUMN}\t{SENTENCE_ID_COLUMN}");
        for name in tax().names() {
            header.push('\t');
            header.push_str(name);
        }
        header.push_str(&format!("\t{PRESENCE_COLUMN}"));
        writeln!(f, "{header}").unwrap();
        for (t, s, labels, presence) in rows {
            let cells: Vec<String> = labels.iter().map(|v| v.to_string()).collect();
            writeln!(f, "{t}\t{s}\t{}\t{presence}", cells.join("\t")).unwrap();
        }
        f.flush().unwrap();
        f
    }

    fn one_hot(v: usize) -> Vec<u8> {
        let mut row = vec![0u8; NUM_VALUES];
        row[v] = 1;
        row
    }

    #[test]
    fn collapse_stance_matches_indicator() {
        let mut attained = [0u8; NUM_VALUES];
        let mut constrained = [0u8; NUM_VALUES];
        attained[0] = 1;
        constrained[2] = 1;
        attained[3] = 1;
        constrained[3] = 1;
        let rec = RawStanceRecord::new(key("t", "1"), attained, constrained).unwrap();
        let labels = collapse_stance(&rec);
        assert_eq!(labels[0], 1); // attained only
        assert_eq!(labels[1], 0); // neither
        assert_eq!(labels[2], 1); // constrained only
        assert_eq!(labels[3], 1); // both saturate to 1
    }

    #[test]
    fn stance_record_rejects_non_binary_flags() {
        let mut attained = [0u8; NUM_VALUES];
        attained[5] = 2;
        let err = RawStanceRecord::new(key("t", "1"), attained, [0u8; NUM_VALUES]).unwrap_err();
        assert!(err.to_string().contains("column 5"));
    }

    #[test]
    fn derive_presence_is_row_or() {
        let m = BinaryMatrix::from_rows(
            vec![vec![0u8; NUM_VALUES], one_hot(4), {
                let mut r = one_hot(1);
                r[7] = 1;
                r
            }],
            NUM_VALUES,
        )
        .unwrap();
        assert_eq!(derive_presence(&m), vec![0, 1, 1]);
    }

    #[test]
    fn load_gold_empty_file_gives_empty_matrix() {
        let f = gold_file(&[]);
        let (gold, warnings) = load_gold(f.path(), &tax(), PresenceMode::Strict).unwrap();
        assert_eq!(gold.n(), 0);
        assert!(warnings.is_empty());
    }

    #[test]
    fn load_gold_strict_rejects_presence_mismatch() {
        let f = gold_file(&[("t1", "1", one_hot(3), 0)]);
        let err = load_gold(f.path(), &tax(), PresenceMode::Strict).unwrap_err();
        assert!(err.to_string().contains("presence=0"), "{err}");
    }

    #[test]
    fn load_gold_lenient_recomputes_and_warns() {
        let f = gold_file(&[("t1", "1", one_hot(3), 0), ("t1", "2", vec![0; NUM_VALUES], 0)]);
        let (gold, warnings) = load_gold(f.path(), &tax(), PresenceMode::Lenient).unwrap();
        assert_eq!(gold.presence, vec![1, 0]);
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn load_gold_rejects_non_binary_cell_with_location() {
        let mut f = NamedTempFile::new().unwrap();
        let mut header = format!("{TEXT_ID_COLUMN}\t{SENTENCE_ID_COLUMN}");
        for name in tax().names() {
            header.push('\t');
            header.push_str(name);
        }
        writeln!(f, "{header}\t{PRESENCE_COLUMN}").unwrap();
        let mut cells = vec!["0"; NUM_VALUES];
        cells[2] = "2";
        writeln!(f, "t1\t1\t{}\t0", cells.join("\t")).unwrap();
        f.flush().unwrap();
        let err = load_gold(f.path(), &tax(), PresenceMode::Strict).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("Stimulation"), "{msg}");
    }

    #[test]
    fn load_gold_rejects_duplicate_keys() {
        let f = gold_file(&[("t1", "1", one_hot(0), 1), ("t1", "1", one_hot(0), 1)]);
        let err = load_gold(f.path(), &tax(), PresenceMode::Strict).unwrap_err();
        assert!(err.to_string().contains("duplicate key"), "{err}");
    }

    #[test]
    fn gold_round_trips_bit_exact() {
        let gold = GoldMatrix::from_labels(
            vec![key("a", "1"), key("a", "2"), key("b", "1")],
            BinaryMatrix::from_rows(vec![one_hot(0), vec![0; NUM_VALUES], one_hot(18)], NUM_VALUES).unwrap(),
        )
        .unwrap();
        let f = NamedTempFile::new().unwrap();
        write_gold(f.path(), &gold, &tax(), &["roundtrip test".into()]).unwrap();
        let (back, _) = load_gold(f.path(), &tax(), PresenceMode::Strict).unwrap();
        assert_eq!(back, gold);
    }

    #[test]
    fn load_probs_validates_range_and_arity() {
        let mut f = NamedTempFile::new().unwrap();
        writeln!(f, "{TEXT_ID_COLUMN}\t{SENTENCE_ID_COLUMN}\t{PRESENCE_COLUMN}").unwrap();
        writeln!(f, "t1\t1\t0.5").unwrap();
        writeln!(f, "t1\t2\t1.2").unwrap();
        f.flush().unwrap();
        let err = load_probs::<f64>(f.path(), Some(1), &tax(), "m").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains("1.2"), "{msg}");
        let err = load_probs::<f64>(f.path(), Some(NUM_VALUES), &tax(), "m").unwrap_err();
        assert!(err.to_string().contains("probability column"), "{err}");
    }

    #[test]
    fn probs_round_trip_preserves_values() {
        let probs = ProbMatrix::<f64>::new(
            vec![key("a", "1"), key("b", "2")],
            1,
            vec![0.29, 0.123456789012345],
            "m",
        )
        .unwrap();
        let f = NamedTempFile::new().unwrap();
        write_probs(f.path(), &probs, &tax(), &[]).unwrap();
        let back = load_probs::<f64>(f.path(), Some(1), &tax(), "m").unwrap();
        assert_eq!(back.data(), probs.data());
    }

    #[test]
    fn align_reorders_to_gold_order() {
        let gold = GoldMatrix::from_labels(
            vec![key("a", "1"), key("a", "2"), key("b", "1")],
            BinaryMatrix::from_rows(vec![one_hot(0), one_hot(1), one_hot(2)], NUM_VALUES).unwrap(),
        )
        .unwrap();
        // Predictions in reversed key order.
        let mut data = Vec::new();
        for p in [0.3f64, 0.2, 0.1] {
            data.extend(std::iter::repeat_n(p, NUM_VALUES));
        }
        let probs = ProbMatrix::new(
            vec![key("b", "1"), key("a", "2"), key("a", "1")],
            NUM_VALUES,
            data,
            "m",
        )
        .unwrap();
        let pair = align(probs, gold).unwrap();
        assert_eq!(pair.probs().keys, pair.gold().keys);
        assert_eq!(pair.probs().get(0, 0), 0.1);
        assert_eq!(pair.probs().get(1, 0), 0.2);
        assert_eq!(pair.probs().get(2, 0), 0.3);

        // Idempotent: aligning the already-aligned pair changes nothing.
        let (probs2, gold2) = pair.clone().into_parts();
        let again = align(probs2, gold2).unwrap();
        assert_eq!(again.probs().data(), pair.probs().data());
    }

    #[test]
    fn align_reports_missing_keys() {
        let gold = GoldMatrix::from_labels(
            vec![key("a", "1"), key("a", "2")],
            BinaryMatrix::from_rows(vec![one_hot(0), one_hot(1)], NUM_VALUES).unwrap(),
        )
        .unwrap();
        let probs =
            ProbMatrix::new(vec![key("a", "1")], NUM_VALUES, vec![0.5; NUM_VALUES], "m").unwrap();
        let err = align(probs, gold).unwrap_err();
        assert!(err.to_string().contains("(a, 2)"), "{err}");
    }

    #[test]
    fn stance_file_round_trip_to_gold() {
        let mut f = NamedTempFile::new().unwrap();
        let mut header = format!("{TEXT_ID_COLUMN}\t{SENTENCE_ID_COLUMN}");
        for name in tax().names() {
            header.push_str(&format!("\t{name}:attained\t{name}:constrained"));
        }
        writeln!(f, "{header}").unwrap();
        let mut cells = vec!["0"; 2 * NUM_VALUES];
        cells[0] = "1"; // value 0 attained
        cells[5] = "1"; // value 2 constrained
        writeln!(f, "t1\t1\t{}", cells.join("\t")).unwrap();
        f.flush().unwrap();
        let records = load_stance(f.path(), &tax()).unwrap();
        let gold = stance_to_gold(&records).unwrap();
        assert_eq!(gold.labels.get(0, 0), 1);
        assert_eq!(gold.labels.get(0, 2), 1);
        assert_eq!(gold.labels.get(0, 1), 0);
        assert_eq!(gold.presence, vec![1]);
    }
}
