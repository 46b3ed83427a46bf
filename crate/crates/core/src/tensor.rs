//! Sparse response tensors: (subject, item, format) -> correct.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed;

/// Which stimuli accompany a question: `(s_image, s_text)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Format {
    pub image: bool,
    pub text: bool,
}

impl Format {
    pub const NONE: Format = Format::new(false, false);
    pub const TEXT: Format = Format::new(false, true);
    pub const IMAGE: Format = Format::new(true, false);
    pub const FULL: Format = Format::new(true, true);
    /// All four formats in `(0,0), (0,1), (1,0), (1,1)` order.
    pub const ALL: [Format; 4] = [Format::NONE, Format::TEXT, Format::IMAGE, Format::FULL];

    pub const fn new(image: bool, text: bool) -> Self {
        Format { image, text }
    }

    pub fn from_flags(s_image: u8, s_text: u8) -> Result<Self> {
        match (s_image, s_text) {
            (0 | 1, 0 | 1) => Ok(Format::new(s_image == 1, s_text == 1)),
            _ => Err(Error::invalid(format!(
                "format flags must be 0 or 1, got ({s_image}, {s_text})"
            ))),
        }
    }

    pub fn flags(self) -> (u8, u8) {
        (self.image as u8, self.text as u8)
    }

    /// Dense code in `0..4`.
    pub fn code(self) -> u8 {
        (self.image as u8) << 1 | self.text as u8
    }

    /// Activation vector `[1, s_image, s_text, s_image * s_text]`.
    pub fn active<F: Scalar>(self) -> [F; 4] {
        let (i, t) = (self.image, self.text);
        let f = |b: bool| if b { F::one() } else { F::zero() };
        [F::one(), f(i), f(t), f(i && t)]
    }

    /// Signed indicator vector `[1, -s_image, -s_text, -s_image * s_text]`.
    pub fn signed<F: Scalar>(self) -> [F; 4] {
        let [one, i, t, c] = self.active::<F>();
        [one, -i, -t, -c]
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (i, t) = self.flags();
        write!(f, "({i},{t})")
    }
}

impl FromStr for Format {
    type Err = Error;

    /// Parses `"1,1"`, `"(1,1)"` or `"11"`.
    fn from_str(s: &str) -> Result<Self> {
        let digits: Vec<u8> = s
            .chars()
            .filter(|c| !matches!(c, '(' | ')' | ',' | ' '))
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                _ => Err(Error::invalid(format!("bad format `{s}`"))),
            })
            .collect::<Result<_>>()?;
        match digits.as_slice() {
            [i, t] => Format::from_flags(*i, *t),
            _ => Err(Error::invalid(format!("bad format `{s}`"))),
        }
    }
}

/// Item quality used by the contamination experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityLabel {
    Original,
    /// Image, text and options drawn from unrelated questions.
    LowA,
    /// Image swapped.
    LowB,
    /// Text swapped.
    LowC,
}

impl QualityLabel {
    pub fn is_low_quality(self) -> bool {
        self != QualityLabel::Original
    }
}

/// Item id of `item` shown at format `s` in an expanded tensor, e.g.
/// `q0001@10` for image only.
pub fn expanded_item_id(item: &str, s: Format) -> String {
    let (i, t) = s.flags();
    format!("{item}@{i}{t}")
}

/// One observed cell. Subject and item are indices into the owning tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResponseRecord {
    pub subject: usize,
    pub item: usize,
    pub format: Format,
    pub correct: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResponseTensor {
    records: Vec<ResponseRecord>,
    subjects: Vec<String>,
    items: Vec<String>,
    subject_index: HashMap<String, usize>,
    item_index: HashMap<String, usize>,
    labels: Option<IndexMap<String, QualityLabel>>,
}

/// Accumulates records; index lists follow first appearance.
#[derive(Debug, Default)]
pub struct TensorBuilder {
    tensor: ResponseTensor,
    seen: HashSet<(usize, usize, u8)>,
}

impl TensorBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn intern(ids: &mut Vec<String>, index: &mut HashMap<String, usize>, id: &str) -> usize {
        if let Some(&i) = index.get(id) {
            return i;
        }
        let i = ids.len();
        ids.push(id.to_owned());
        index.insert(id.to_owned(), i);
        i
    }

    /// Registers a subject without any record (keeps index order stable).
    pub fn add_subject(&mut self, id: &str) -> usize {
        let t = &mut self.tensor;
        Self::intern(&mut t.subjects, &mut t.subject_index, id)
    }

    pub fn add_item(&mut self, id: &str) -> usize {
        let t = &mut self.tensor;
        Self::intern(&mut t.items, &mut t.item_index, id)
    }

    pub fn push(&mut self, subject: &str, item: &str, format: Format, correct: bool) -> Result<()> {
        let si = self.add_subject(subject);
        let ii = self.add_item(item);
        if !self.seen.insert((si, ii, format.code())) {
            let (s_image, s_text) = format.flags();
            return Err(Error::DuplicateRecord {
                subject: subject.to_owned(),
                item: item.to_owned(),
                s_image,
                s_text,
            });
        }
        self.tensor.records.push(ResponseRecord {
            subject: si,
            item: ii,
            format,
            correct,
        });
        Ok(())
    }

    pub fn labels(mut self, labels: Option<IndexMap<String, QualityLabel>>) -> Self {
        self.tensor.labels = labels;
        self
    }

    pub fn build(self) -> ResponseTensor {
        self.tensor
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    #[serde(alias = "subject_id")]
    subject: String,
    #[serde(alias = "item_id")]
    item: String,
    s_image: u8,
    s_text: u8,
    correct: u8,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    item: String,
    quality: QualityLabel,
}

/// On-disk encoding of a response file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FileFormat {
    Jsonl,
    Csv,
}

impl FileFormat {
    /// Guesses from the extension; anything but `.csv` is JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => FileFormat::Csv,
            _ => FileFormat::Jsonl,
        }
    }
}

impl ResponseTensor {
    pub fn builder() -> TensorBuilder {
        TensorBuilder::new()
    }

    pub fn records(&self) -> &[ResponseRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn subjects(&self) -> &[String] {
        &self.subjects
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn subject_index(&self, id: &str) -> Option<usize> {
        self.subject_index.get(id).copied()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_index.get(id).copied()
    }

    pub fn labels(&self) -> Option<&IndexMap<String, QualityLabel>> {
        self.labels.as_ref()
    }

    pub fn with_labels(mut self, labels: IndexMap<String, QualityLabel>) -> Self {
        self.labels = Some(labels);
        self
    }

    pub fn subject_id(&self, rec: &ResponseRecord) -> &str {
        &self.subjects[rec.subject]
    }

    pub fn item_id(&self, rec: &ResponseRecord) -> &str {
        &self.items[rec.item]
    }

    /// Looks up a single cell.
    pub fn response(&self, subject: &str, item: &str, format: Format) -> Option<bool> {
        let (si, ii) = (self.subject_index(subject)?, self.item_index(item)?);
        self.records
            .iter()
            .find(|r| r.subject == si && r.item == ii && r.format == format)
            .map(|r| r.correct)
    }

    /// Map `(item, format) -> correct` for one subject.
    pub fn responses_of(&self, subject: &str) -> HashMap<(String, Format), bool> {
        let Some(si) = self.subject_index(subject) else {
            return HashMap::new();
        };
        self.records
            .iter()
            .filter(|r| r.subject == si)
            .map(|r| ((self.items[r.item].clone(), r.format), r.correct))
            .collect()
    }

    /// New tensor holding the records accepted by `keep`, re-indexed in
    /// first-appearance order. Labels are carried over unchanged.
    pub fn filter(&self, mut keep: impl FnMut(&ResponseRecord) -> bool) -> ResponseTensor {
        let mut b = TensorBuilder::new();
        for r in &self.records {
            if keep(r) {
                b.push(&self.subjects[r.subject], &self.items[r.item], r.format, r.correct)
                    .expect("source tensor keys are unique");
            }
        }
        b.labels(self.labels.clone()).build()
    }

    /// Treats every (item, format) pair as its own item shown at the full
    /// format, so single-format models can still see format effects. Item
    /// ids become [`expanded_item_id`]; labels follow their source item.
    /// Record order is preserved.
    pub fn expand_formats(&self) -> ResponseTensor {
        let mut b = TensorBuilder::new();
        for r in &self.records {
            let id = expanded_item_id(&self.items[r.item], r.format);
            b.push(&self.subjects[r.subject], &id, Format::FULL, r.correct)
                .expect("source tensor keys are unique");
        }
        let labels = self.labels.as_ref().map(|l| {
            l.iter()
                .flat_map(|(id, &q)| Format::ALL.iter().map(move |&s| (expanded_item_id(id, s), q)))
                .collect()
        });
        b.labels(labels).build()
    }

    /// Reads a response file.
    pub fn load(path: impl AsRef<Path>, format: FileFormat) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let mut b = TensorBuilder::new();
        let mut push = |row: Row, line: usize| -> Result<()> {
            let fmt = Format::from_flags(row.s_image, row.s_text).map_err(|e| Error::Parse {
                row: line,
                message: e.to_string(),
            })?;
            let correct = match row.correct {
                0 => false,
                1 => true,
                v => {
                    return Err(Error::Parse {
                        row: line,
                        message: format!("correct must be 0 or 1, got {v}"),
                    })
                }
            };
            b.push(&row.subject, &row.item, fmt, correct)
        };
        match format {
            FileFormat::Jsonl => {
                for (n, line) in reader.lines().enumerate() {
                    let line = line.map_err(|e| Error::io(path, e))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let row: Row = serde_json::from_str(&line).map_err(|e| Error::Parse {
                        row: n + 1,
                        message: e.to_string(),
                    })?;
                    push(row, n + 1)?;
                }
            }
            FileFormat::Csv => {
                let mut rdr = csv::Reader::from_reader(reader);
                for (n, row) in rdr.deserialize::<Row>().enumerate() {
                    // header is row 1
                    let row = row.map_err(|e| Error::Parse {
                        row: n + 2,
                        message: e.to_string(),
                    })?;
                    push(row, n + 2)?;
                }
            }
        }
        Ok(b.build())
    }

    pub fn save(&self, path: impl AsRef<Path>, format: FileFormat) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let rows = self.records.iter().map(|r| {
            let (s_image, s_text) = r.format.flags();
            Row {
                subject: self.subjects[r.subject].clone(),
                item: self.items[r.item].clone(),
                s_image,
                s_text,
                correct: r.correct as u8,
            }
        });
        match format {
            FileFormat::Jsonl => {
                let mut w = BufWriter::new(file);
                for row in rows {
                    serde_json::to_writer(&mut w, &row)?;
                    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
                }
                w.flush().map_err(|e| Error::io(path, e))?;
            }
            FileFormat::Csv => {
                let mut w = csv::Writer::from_writer(file);
                for row in rows {
                    w.serialize(row)?;
                }
                w.flush().map_err(|e| Error::io(path, e))?;
            }
        }
        Ok(())
    }

    /// Holds out whole items: `val_count` items for validation and
    /// `test_count` for test, chosen by a seeded shuffle.
    pub fn split(
        &self,
        val_count: usize,
        test_count: usize,
        seed: u64,
    ) -> Result<(ResponseTensor, ResponseTensor, ResponseTensor)> {
        let n = self.items.len();
        if val_count + test_count > 0 && val_count + test_count >= n {
            return Err(Error::invalid(format!(
                "val_count + test_count = {} must be below the item count {n}",
                val_count + test_count
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::rng_for(seed, &[seed::STREAM_SPLIT]));
        let mut part = vec![0u8; n];
        for &i in &order[..val_count] {
            part[i] = 1;
        }
        for &i in &order[val_count..val_count + test_count] {
            part[i] = 2;
        }
        Ok((
            self.filter(|r| part[r.item] == 0),
            self.filter(|r| part[r.item] == 1),
            self.filter(|r| part[r.item] == 2),
        ))
    }

    /// Cell-level holdout: a seeded random `val_frac` of all cells goes to
    /// validation, `test_frac` to test and the rest stays in training.
    /// Cells that would leave a subject or item without any training cell
    /// are kept in training, so held-out parts can fall slightly short.
    pub fn mask_cells(
        &self,
        val_frac: f64,
        test_frac: f64,
        seed: u64,
    ) -> Result<(ResponseTensor, ResponseTensor, ResponseTensor)> {
        let part = self.mask_assignment(val_frac, test_frac, seed)?;
        self.partition(&part)
    }

    /// Part per record (0 train, 1 validation, 2 test) as drawn by
    /// [`mask_cells`](Self::mask_cells).
    pub fn mask_assignment(&self, val_frac: f64, test_frac: f64, seed: u64) -> Result<Vec<u8>> {
        if !(0.0..=1.0).contains(&val_frac)
            || !(0.0..=1.0).contains(&test_frac)
            || val_frac + test_frac >= 1.0
        {
            return Err(Error::invalid(format!(
                "mask fractions ({val_frac}, {test_frac}) must be non-negative and sum below 1"
            )));
        }
        let n = self.records.len();
        let n_val = (val_frac * n as f64).round() as usize;
        let n_test = (test_frac * n as f64).round() as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::rng_for(seed, &[seed::STREAM_MASK]));
        let mut part = vec![0u8; n];
        for &i in &order[..n_val] {
            part[i] = 1;
        }
        for &i in &order[n_val..n_val + n_test] {
            part[i] = 2;
        }
        // a subject or item with no training cell could not be scored
        let mut subj_train = vec![0usize; self.subjects.len()];
        let mut item_train = vec![0usize; self.items.len()];
        for (r, _) in self.records.iter().zip(&part).filter(|(_, p)| **p == 0) {
            subj_train[r.subject] += 1;
            item_train[r.item] += 1;
        }
        for &i in &order {
            let r = &self.records[i];
            if part[i] != 0 && (subj_train[r.subject] == 0 || item_train[r.item] == 0) {
                part[i] = 0;
                subj_train[r.subject] += 1;
                item_train[r.item] += 1;
            }
        }
        Ok(part)
    }

    /// Splits records by a per-record part label (0, 1 or 2).
    pub fn partition(&self, part: &[u8]) -> Result<(ResponseTensor, ResponseTensor, ResponseTensor)> {
        if part.len() != self.records.len() {
            return Err(Error::DimensionMismatch {
                expected: self.records.len(),
                got: part.len(),
            });
        }
        let pick = |which: u8| {
            let mut k = 0;
            self.filter(|_| {
                let p = part[k];
                k += 1;
                p == which
            })
        };
        Ok((pick(0), pick(1), pick(2)))
    }

    /// Keeps each cell independently with probability `density`.
    pub fn sparsify(&self, density: f64, seed: u64) -> Result<ResponseTensor> {
        use rand::Rng;
        if !(density > 0.0 && density <= 1.0) {
            return Err(Error::invalid(format!("density {density} outside (0, 1]")));
        }
        let mut rng = seed::rng_for(seed, &[seed::STREAM_MASK]);
        Ok(self.filter(|_| rng.gen::<f64>() < density))
    }

    /// Per-subject and per-item accuracy over full-format records.
    pub fn summarize(&self) -> Summary {
        let mut subj: IndexMap<usize, (usize, usize)> = IndexMap::new();
        let mut item: IndexMap<usize, (usize, usize)> = IndexMap::new();
        for r in self.records.iter().filter(|r| r.format == Format::FULL) {
            let e = subj.entry(r.subject).or_default();
            e.0 += r.correct as usize;
            e.1 += 1;
            let e = item.entry(r.item).or_default();
            e.0 += r.correct as usize;
            e.1 += 1;
        }
        let table = |m: IndexMap<usize, (usize, usize)>, ids: &[String]| {
            let mut rows: Vec<Accuracy> = m
                .into_iter()
                .map(|(i, (c, n))| Accuracy {
                    id: ids[i].clone(),
                    index: i,
                    correct: c,
                    total: n,
                    accuracy: c as f64 / n as f64,
                })
                .collect();
            rows.sort_by_key(|r| r.index);
            rows
        };
        Summary {
            subjects: table(subj, &self.subjects),
            items: table(item, &self.items),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Accuracy {
    pub id: String,
    #[serde(skip)]
    pub index: usize,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Summary {
    pub subjects: Vec<Accuracy>,
    pub items: Vec<Accuracy>,
}

/// Reads an item-metadata file (`{"item": .., "quality": ..}` per line, or CSV).
pub fn load_labels(path: impl AsRef<Path>) -> Result<IndexMap<String, QualityLabel>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = IndexMap::new();
    match FileFormat::from_path(path) {
        FileFormat::Jsonl => {
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let row: LabelRow = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    row: n + 1,
                    message: e.to_string(),
                })?;
                out.insert(row.item, row.quality);
            }
        }
        FileFormat::Csv => {
            for (n, row) in csv::Reader::from_reader(file).deserialize::<LabelRow>().enumerate() {
                let row = row.map_err(|e| Error::Parse {
                    row: n + 2,
                    message: e.to_string(),
                })?;
                out.insert(row.item, row.quality);
            }
        }
    }
    Ok(out)
}

pub fn save_labels(path: impl AsRef<Path>, labels: &IndexMap<String, QualityLabel>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (item, &quality) in labels {
        serde_json::to_writer(
            &mut w,
            &LabelRow {
                item: item.clone(),
                quality,
            },
        )?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
