//! Shot-file ingestion, dataset assembly and canonical result persistence.
//!
//! Native shot files start with a `# n_qubits=<N> circuit=<id>` header.
//! `BitstringCounts` files then hold one `<bitstring>,<count>` per line;
//! `ShotList` files hold one measured bitstring per line. Other lines
//! starting with `#` and blank lines are ignored.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, ParseErrorKind, Result};
use crate::estimator::MeasurementRecord;
use crate::orderstat::Dims;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotFormat {
    BitstringCounts,
    ShotList,
}

impl FromStr for ShotFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "counts" | "bitstring-counts" => Ok(Self::BitstringCounts),
            "shots" | "shot-list" => Ok(Self::ShotList),
            other => Err(Error::Config(format!("unknown shot format `{other}` (counts|shots)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Entries {
    /// Bitstring and count, in file order.
    Counts(Vec<(String, u64)>),
    /// Measured bitstrings, in file order.
    Shots(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawShotFile {
    pub format: ShotFormat,
    pub circuit_id: String,
    pub n_qubits: u32,
    pub entries: Entries,
}

impl RawShotFile {
    pub fn total_shots(&self) -> u64 {
        match &self.entries {
            Entries::Counts(c) => c.iter().map(|(_, n)| n).sum(),
            Entries::Shots(s) => s.len() as u64,
        }
    }
}

/// Reads and validates one shot file.
pub fn ingest(path: &Path, format: ShotFormat) -> Result<RawShotFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_shot_file(&text, path, format)
}

/// Parses shot-file text; `path` only labels diagnostics.
pub fn parse_shot_file(text: &str, path: &Path, format: ShotFormat) -> Result<RawShotFile> {
    let err = |line: usize, kind: ParseErrorKind| Error::Parse {
        path: path.to_owned(),
        line,
        kind,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let Some((header_line, header)) = lines.next() else {
        return Err(Error::EmptyFile { path: path.to_owned() });
    };
    let (n_qubits, circuit_id) = parse_header(header).map_err(|kind| err(header_line, kind))?;
    let width = n_qubits as usize;

    let mut counts: Vec<(String, u64)> = Vec::new();
    let mut shots: Vec<String> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (line, content) in lines {
        if content.starts_with('#') {
            continue;
        }
        match format {
            ShotFormat::BitstringCounts => {
                let Some((bits, count)) = content.split_once(',') else {
                    return Err(err(line, ParseErrorKind::Malformed(content.to_owned())));
                };
                let bits = bits.trim();
                check_bitstring(bits, width).map_err(|k| err(line, k))?;
                let count = count.trim();
                let value: i64 = count
                    .parse()
                    .map_err(|_| err(line, ParseErrorKind::BadCount(count.to_owned())))?;
                if value <= 0 {
                    return Err(err(line, ParseErrorKind::NonPositiveCount(value)));
                }
                if seen.insert(bits.to_owned(), line).is_some() {
                    return Err(err(line, ParseErrorKind::DuplicateBitstring(bits.to_owned())));
                }
                counts.push((bits.to_owned(), value as u64));
            }
            ShotFormat::ShotList => {
                check_bitstring(content, width).map_err(|k| err(line, k))?;
                shots.push(content.to_owned());
            }
        }
    }

    let entries = match format {
        ShotFormat::BitstringCounts => Entries::Counts(counts),
        ShotFormat::ShotList => Entries::Shots(shots),
    };
    let raw = RawShotFile {
        format,
        circuit_id,
        n_qubits,
        entries,
    };
    if raw.total_shots() == 0 {
        return Err(Error::EmptyFile { path: path.to_owned() });
    }
    Ok(raw)
}

fn parse_header(line: &str) -> std::result::Result<(u32, String), ParseErrorKind> {
    let Some(body) = line.strip_prefix('#') else {
        return Err(ParseErrorKind::MissingHeader);
    };
    let mut n_qubits = None;
    let mut circuit = None;
    for token in body.split_whitespace() {
        match token.split_once('=') {
            Some(("n_qubits", v)) => n_qubits = v.parse::<u32>().ok().filter(|&n| n >= 1),
            Some(("circuit", v)) if !v.is_empty() => circuit = Some(v.to_owned()),
            _ => {}
        }
    }
    match (n_qubits, circuit) {
        (Some(n), Some(c)) => Ok((n, c)),
        _ if !body.contains("n_qubits=") => Err(ParseErrorKind::MissingHeader),
        _ => Err(ParseErrorKind::BadHeader(line.to_owned())),
    }
}

fn check_bitstring(bits: &str, width: usize) -> std::result::Result<(), ParseErrorKind> {
    if !bits.bytes().all(|b| b == b'0' || b == b'1') {
        return Err(ParseErrorKind::BitstringAlphabet(bits.to_owned()));
    }
    if bits.len() != width {
        return Err(ParseErrorKind::BitstringWidth {
            expected: width,
            found: bits.len(),
        });
    }
    Ok(())
}

/// Reads a headerless file of one bitstring per line, such as a plain
/// export of measured samples, supplying the header fields by hand.
pub fn ingest_headerless(path: &Path, n_qubits: u32, circuit_id: &str) -> Result<RawShotFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let with_header = format!("# n_qubits={n_qubits} circuit={circuit_id}\n{text}");
    parse_shot_file(&with_header, path, ShotFormat::ShotList).map_err(|e| match e {
        // Line numbers refer to the original file, which has no header line.
        Error::Parse { path, line, kind } => Error::Parse {
            path,
            line: line - 1,
            kind,
        },
        other => other,
    })
}

/// Aggregates shots per bitstring, ranks them and keeps the top `k`.
///
/// Equal counts keep the order in which their bitstrings first appeared.
/// When fewer than `k` distinct bitstrings exist the record is shorter and
/// flagged as truncated.
pub fn to_record(raw: &RawShotFile, k: usize) -> Result<MeasurementRecord> {
    if k == 0 {
        return Err(Error::Config("top-K must be at least 1".into()));
    }
    let ranked = ranked_bitstrings(raw);
    let truncated = ranked.len() < k;
    if truncated {
        log::warn!(
            "circuit `{}`: only {} distinct bitstrings, fewer than the requested {k}",
            raw.circuit_id,
            ranked.len()
        );
    }
    let counts = ranked.iter().take(k).map(|(_, c)| *c).collect();
    Ok(MeasurementRecord::new(raw.circuit_id.clone(), raw.total_shots(), counts)?.with_truncated(truncated))
}

/// Distinct bitstrings with their counts, highest first, ties first-seen.
pub fn ranked_bitstrings(raw: &RawShotFile) -> Vec<(String, u64)> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut agg: Vec<(String, u64)> = Vec::new();
    let pairs: Box<dyn Iterator<Item = (&str, u64)>> = match &raw.entries {
        Entries::Counts(c) => Box::new(c.iter().map(|(b, n)| (b.as_str(), *n))),
        Entries::Shots(s) => Box::new(s.iter().map(|b| (b.as_str(), 1))),
    };
    for (bits, n) in pairs {
        match index.get(bits) {
            Some(&i) => agg[i].1 += n,
            None => {
                index.insert(bits, agg.len());
                agg.push((bits.to_owned(), n));
            }
        }
    }
    agg.sort_by(|a, b| b.1.cmp(&a.1));
    agg
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDigest {
    pub path: String,
    pub sha256: String,
}

/// Records sharing one dimension, with the digests of the files they came
/// from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub dims: Dims,
    pub records: Vec<MeasurementRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub provenance: Vec<SourceDigest>,
}

impl Dataset {
    pub fn new(dims: Dims, records: Vec<MeasurementRecord>, provenance: Vec<SourceDigest>) -> Result<Self> {
        let ds = Self {
            dims,
            records,
            provenance,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for r in &self.records {
            r.validate()?;
            if !ids.insert(r.circuit_id()) {
                return Err(Error::Config(format!("duplicate circuit id `{}`", r.circuit_id())));
            }
        }
        Ok(())
    }

    /// Parses several shot files in parallel into one dataset.
    pub fn from_files(paths: &[PathBuf], format: ShotFormat, k: usize) -> Result<Self> {
        let parsed: Vec<(RawShotFile, SourceDigest)> = paths
            .par_iter()
            .map(|p| {
                let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
                let text = String::from_utf8(bytes.clone()).map_err(|_| Error::Parse {
                    path: p.clone(),
                    line: 0,
                    kind: ParseErrorKind::Malformed("file is not valid UTF-8".into()),
                })?;
                let raw = parse_shot_file(&text, p, format)?;
                Ok((raw, digest(p, &bytes)))
            })
            .collect::<Result<_>>()?;
        Self::from_raw(parsed, k)
    }

    pub fn from_raw(parsed: Vec<(RawShotFile, SourceDigest)>, k: usize) -> Result<Self> {
        let Some(first) = parsed.first() else {
            return Err(Error::Config("no input files".into()));
        };
        let n = first.0.n_qubits;
        let mut records = Vec::with_capacity(parsed.len());
        let mut provenance = Vec::with_capacity(parsed.len());
        for (raw, d) in parsed {
            if raw.n_qubits != n {
                return Err(Error::Config(format!(
                    "{}: n_qubits={} differs from {n} in the first file",
                    d.path, raw.n_qubits
                )));
            }
            records.push(to_record(&raw, k)?);
            provenance.push(d);
        }
        Self::new(Dims::new(n)?, records, provenance)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ds: Self = serde_json::from_str(&text)?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

pub fn digest(path: &Path, bytes: &[u8]) -> SourceDigest {
    let hash = Sha256::digest(bytes);
    SourceDigest {
        path: path.display().to_string(),
        sha256: hash.iter().map(|b| format!("{b:02x}")).collect(),
    }
}

/// Significant digits kept for floats in persisted output.
pub const FLOAT_DIGITS: usize = 12;

/// Rounds to 12 significant digits and prints the shortest form that reads
/// back to that value. Non-finite values print as `nan`, `inf`, `-inf`.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let rounded: f64 = format!("{v:.prec$e}", prec = FLOAT_DIGITS - 1)
        .parse()
        .expect("formatted float parses");
    let s = format!("{rounded:?}");
    if s == "-0.0" {
        "0.0".into()
    } else {
        s
    }
}

/// Canonical JSON: sorted keys, two-space indentation, floats at 12
/// significant digits, non-finite floats as `null`.
pub fn to_canonical_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&v, 0, &mut out);
    out.push('\n');
    Ok(out)
}

fn write_value(v: &Value, depth: usize, out: &mut String) {
    let indent = |d: usize, out: &mut String| out.extend(std::iter::repeat_n("  ", d));
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => match (n.as_u64(), n.as_i64(), n.as_f64()) {
            (Some(u), _, _) => out.push_str(&u.to_string()),
            (_, Some(i), _) => out.push_str(&i.to_string()),
            (_, _, Some(f)) if f.is_finite() => out.push_str(&format_float(f)),
            _ => out.push_str("null"),
        },
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                indent(depth + 1, out);
                write_value(item, depth + 1, out);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            indent(depth, out);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, key) in keys.iter().enumerate() {
                indent(depth + 1, out);
                out.push_str(&Value::String((*key).clone()).to_string());
                out.push_str(": ");
                write_value(&map[*key], depth + 1, out);
                out.push_str(if i + 1 < keys.len() { ",\n" } else { "\n" });
            }
            indent(depth, out);
            out.push('}');
        }
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = to_canonical_json(value)?;
    write_bytes(path, text.as_bytes())
}

/// A CSV table whose header is part of the output contract.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Self::Float(v)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Self::Int(v as i64)
    }
}

impl From<u32> for Cell {
    fn from(v: u32) -> Self {
        Self::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Self::Text(v.to_string())
    }
}

impl Table {
    pub fn new(header: Vec<&'static str>) -> Self {
        Self { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Numeric(format!("csv encoding: {e}"));
        w.write_record(&self.header).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|c| match c {
                Cell::Int(i) => i.to_string(),
                Cell::Float(f) => format_float(*f),
                Cell::Text(s) => s.clone(),
            }))
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Numeric(format!("csv encoding: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_bytes(path, self.to_csv()?.as_bytes())
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, format: ShotFormat) -> Result<RawShotFile> {
        parse_shot_file(text, Path::new("t.txt"), format)
    }

    fn kind(e: Error) -> (usize, ParseErrorKind) {
        match e {
            Error::Parse { line, kind, .. } => (line, kind),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn counts_file() {
        let raw = parse("# n_qubits=4 circuit=c7\n0110,4821\n# note\n\n1111,3\n", ShotFormat::BitstringCounts).unwrap();
        assert_eq!(raw.circuit_id, "c7");
        assert_eq!(raw.n_qubits, 4);
        assert_eq!(
            raw.entries,
            Entries::Counts(vec![("0110".into(), 4821), ("1111".into(), 3)])
        );
        assert_eq!(raw.total_shots(), 4824);
    }

    #[test]
    fn distinct_errors() {
        let bc = ShotFormat::BitstringCounts;
        let (line, k) = kind(parse("# n_qubits=4 circuit=a\n0110,2\n01a0,3\n", bc).unwrap_err());
        assert_eq!((line, k.code()), (3, "E_ALPHABET"));
        let (_, k) = kind(parse("# n_qubits=4 circuit=a\n011,2\n", bc).unwrap_err());
        assert_eq!(k, ParseErrorKind::BitstringWidth { expected: 4, found: 3 });
        let (_, k) = kind(parse("# n_qubits=4 circuit=a\n0110,-2\n", bc).unwrap_err());
        assert_eq!(k, ParseErrorKind::NonPositiveCount(-2));
        let (_, k) = kind(parse("# n_qubits=4 circuit=a\n0110,x\n", bc).unwrap_err());
        assert_eq!(k.code(), "E_COUNT");
        let (line, k) = kind(parse("# n_qubits=4 circuit=a\n0110,2\n0110,5\n", bc).unwrap_err());
        assert_eq!((line, k.code()), (3, "E_DUPLICATE"));
        let (_, k) = kind(parse("0110,2\n", bc).unwrap_err());
        assert_eq!(k, ParseErrorKind::MissingHeader);
        let (_, k) = kind(parse("# n_qubits=x circuit=a\n", bc).unwrap_err());
        assert_eq!(k.code(), "E_HEADER");
        assert!(matches!(parse("", bc), Err(Error::EmptyFile { .. })));
        assert!(matches!(parse("# n_qubits=4 circuit=a\n", bc), Err(Error::EmptyFile { .. })));
    }

    #[test]
    fn stable_tie_order() {
        let raw = parse("# n_qubits=1 circuit=a\n0,5\n1,9\n", ShotFormat::BitstringCounts).unwrap();
        let raw = RawShotFile {
            entries: Entries::Counts(vec![("a".into(), 5), ("b".into(), 9), ("c".into(), 5)]),
            ..raw
        };
        let ranked = ranked_bitstrings(&raw);
        assert_eq!(ranked[0], ("b".into(), 9));
        assert_eq!(ranked[1], ("a".into(), 5));
        let rec = to_record(&raw, 2).unwrap();
        assert_eq!(rec.counts(), &[9, 5]);
        assert!(!rec.truncated());
    }

    #[test]
    fn shot_list_truncation() {
        let raw = parse("# n_qubits=2 circuit=s\n00\n01\n00\n11\n00\n01\n", ShotFormat::ShotList).unwrap();
        let rec = to_record(&raw, 5).unwrap();
        assert_eq!(rec.shots(), 6);
        assert_eq!(rec.counts(), &[3, 2, 1]);
        assert!(rec.truncated());
    }

    #[test]
    fn float_formatting() {
        assert_eq!(format_float(0.1), "0.1");
        assert_eq!(format_float(1.0), "1.0");
        assert_eq!(format_float(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_float(2.0 / 3.0 * 1e-9), "6.66666666667e-10");
        assert_eq!(format_float(-0.0), "0.0");
        assert_eq!(format_float(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn canonical_json_sorts_and_nulls() {
        let v = serde_json::json!({"b": 1, "a": [0.5, 1e-3], "c": {"z": null, "y": "q"}});
        let text = to_canonical_json(&v).unwrap();
        assert_eq!(
            text,
            "{\n  \"a\": [\n    0.5,\n    0.001\n  ],\n  \"b\": 1,\n  \"c\": {\n    \"y\": \"q\",\n    \"z\": null\n  }\n}\n"
        );
        #[derive(Serialize)]
        struct W {
            w: f64,
        }
        assert_eq!(to_canonical_json(&W { w: f64::NAN }).unwrap(), "{\n  \"w\": null\n}\n");
    }

    #[test]
    fn csv_table() {
        let mut t = Table::new(vec!["f", "loglik"]);
        t.push(vec![0.0.into(), f64::NEG_INFINITY.into()]);
        t.push(vec![0.5.into(), (-1.25).into()]);
        assert_eq!(t.to_csv().unwrap(), "f,loglik\n0.0,-inf\n0.5,-1.25\n");
    }
}
