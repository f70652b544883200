//! Little-endian binary formats.
//!
//! - `SPRE` embeddings: header `{version, N, d, num_classes}` as u32, then N
//!   records `{id: u64, observed: u32, true: u32, d x f32}`. An unknown true
//!   label is stored as `u32::MAX`.
//! - `SPRB` buffer snapshots: the same layout with one f32 clean posterior
//!   appended to every record.
//! - `SPRW` network weights: `{version, layers}` as u32, a table of
//!   `(in, out)` u32 pairs, then per layer `in * out` f64 weights
//!   (row-major, one row per output) followed by `out` f64 biases.

use std::fs;
use std::path::Path;

use spr_core::encoder::Dense;
use spr_core::{AdjacencyMatrix, Classifier, Dataset, EncoderParams, PurifiedEntry, Sample};

use crate::error::{CliError, FormatError, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"SPRE";
pub const SNAPSHOT_MAGIC: &[u8; 4] = b"SPRB";
pub const WEIGHTS_MAGIC: &[u8; 4] = b"SPRW";
pub const VERSION: u32 = 1;
pub const UNKNOWN_LABEL: u32 = u32::MAX;

const HEADER_LEN: u64 = 20;

/// Cursor that reports the byte offset of every failure.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        let left = self.bytes.len() - self.pos;
        if left < n {
            return Err(FormatError::new(
                self.offset(),
                format!("truncated {what}: need {n} bytes, {left} left"),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32, FormatError> {
        let at = self.offset();
        let v = f32::from_le_bytes(self.take(4, what)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(FormatError::new(at, format!("{what} is {v}")));
        }
        Ok(v)
    }

    fn f64(&mut self, what: &str) -> Result<f64, FormatError> {
        let at = self.offset();
        let v = f64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(FormatError::new(at, format!("{what} is {v}")));
        }
        Ok(v)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<(), FormatError> {
        if self.bytes.is_empty() {
            return Err(FormatError::new(0, "file is empty"));
        }
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(FormatError::new(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        let at = self.offset();
        let version = self.u32("version")?;
        if version != VERSION {
            return Err(FormatError::new(at, format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<(), FormatError> {
        if self.pos != self.bytes.len() {
            return Err(FormatError::new(
                self.offset(),
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

struct Header {
    n: usize,
    dim: usize,
    num_classes: usize,
}

fn read_header(r: &mut Reader<'_>, magic: &[u8; 4], extra: u64) -> Result<Header, FormatError> {
    r.magic(magic)?;
    let n = r.u32("sample count")? as usize;
    let at = r.offset();
    let dim = r.u32("feature dimension")? as usize;
    if dim == 0 {
        return Err(FormatError::new(at, "feature dimension is 0"));
    }
    let at = r.offset();
    let num_classes = r.u32("class count")? as usize;
    if num_classes == 0 {
        return Err(FormatError::new(at, "class count is 0"));
    }
    // Reject a size mismatch up front so a short file names its real length.
    let record = 16 + 4 * dim as u64 + extra;
    let expected = HEADER_LEN + n as u64 * record;
    let actual = r.bytes.len() as u64;
    if actual < expected {
        let whole = (actual - HEADER_LEN) / record;
        return Err(FormatError::new(
            HEADER_LEN + whole * record,
            format!("truncated: header declares {n} records of {record} bytes, file holds {whole}"),
        ));
    }
    Ok(Header { n, dim, num_classes })
}

fn read_record(r: &mut Reader<'_>, h: &Header) -> Result<Sample, FormatError> {
    let id = r.u64("id")?;
    let at = r.offset();
    let observed = r.u32("observed label")?;
    if observed as usize >= h.num_classes {
        return Err(FormatError::new(
            at,
            format!("observed label {observed} >= class count {}", h.num_classes),
        ));
    }
    let at = r.offset();
    let truth = r.u32("true label")?;
    let true_label = if truth == UNKNOWN_LABEL {
        None
    } else if (truth as usize) < h.num_classes {
        Some(truth as usize)
    } else {
        return Err(FormatError::new(
            at,
            format!("true label {truth} >= class count {}", h.num_classes),
        ));
    };
    let features = (0..h.dim)
        .map(|_| r.f32("feature").map(f64::from))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Sample {
        id,
        features,
        observed_label: observed as usize,
        true_label,
        task_id: 0,
    })
}

fn to_u32(v: usize, what: &str, at: u64) -> Result<u32, FormatError> {
    u32::try_from(v).map_err(|_| FormatError::new(at, format!("{what} {v} does not fit in u32")))
}

fn write_header(out: &mut Vec<u8>, magic: &[u8; 4], n: usize, dim: usize, classes: usize) -> Result<(), FormatError> {
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (v, what) in [
        (n, "sample count"),
        (dim, "feature dimension"),
        (classes, "class count"),
    ] {
        let at = out.len() as u64;
        out.extend_from_slice(&to_u32(v, what, at)?.to_le_bytes());
    }
    Ok(())
}

fn write_record(out: &mut Vec<u8>, s: &Sample, dim: usize, classes: usize) -> Result<(), FormatError> {
    let at = out.len() as u64;
    if s.features.len() != dim {
        return Err(FormatError::new(
            at,
            format!("sample {} has {} features, expected {dim}", s.id, s.features.len()),
        ));
    }
    if s.observed_label >= classes || s.true_label.is_some_and(|t| t >= classes) {
        return Err(FormatError::new(
            at,
            format!("sample {} has a label outside 0..{classes}", s.id),
        ));
    }
    out.extend_from_slice(&s.id.to_le_bytes());
    out.extend_from_slice(&(s.observed_label as u32).to_le_bytes());
    let truth = s.true_label.map_or(UNKNOWN_LABEL, |t| t as u32);
    out.extend_from_slice(&truth.to_le_bytes());
    for &x in &s.features {
        let v = x as f32;
        if !v.is_finite() {
            return Err(FormatError::new(
                out.len() as u64,
                format!("sample {} feature {x} is not a finite f32", s.id),
            ));
        }
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

/// Serializes samples as `SPRE`. Features are narrowed to f32.
pub fn encode_embeddings(data: &Dataset) -> Result<Vec<u8>, FormatError> {
    let record = 16 + 4 * data.feature_dim;
    let mut out = Vec::with_capacity(HEADER_LEN as usize + data.samples.len() * record);
    write_header(
        &mut out,
        EMBEDDING_MAGIC,
        data.samples.len(),
        data.feature_dim,
        data.num_classes,
    )?;
    for s in &data.samples {
        write_record(&mut out, s, data.feature_dim, data.num_classes)?;
    }
    Ok(out)
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<Dataset, FormatError> {
    let mut r = Reader::new(bytes);
    let h = read_header(&mut r, EMBEDDING_MAGIC, 0)?;
    let samples = (0..h.n)
        .map(|_| read_record(&mut r, &h))
        .collect::<Result<Vec<_>, _>>()?;
    r.finish()?;
    Ok(Dataset {
        samples,
        num_classes: h.num_classes,
        feature_dim: h.dim,
    })
}

/// A decoded buffer snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub entries: Vec<PurifiedEntry>,
    pub num_classes: usize,
    pub feature_dim: usize,
}

pub fn encode_snapshot<'a>(
    entries: impl IntoIterator<Item = &'a PurifiedEntry>,
    num_classes: usize,
    feature_dim: usize,
) -> Result<Vec<u8>, FormatError> {
    let entries: Vec<&PurifiedEntry> = entries.into_iter().collect();
    let mut out = Vec::new();
    write_header(&mut out, SNAPSHOT_MAGIC, entries.len(), feature_dim, num_classes)?;
    for e in entries {
        write_record(&mut out, &e.sample, feature_dim, num_classes)?;
        if !(0.0..=1.0).contains(&e.clean_posterior) {
            return Err(FormatError::new(
                out.len() as u64,
                format!(
                    "posterior {} of sample {} is outside [0, 1]",
                    e.clean_posterior, e.sample.id
                ),
            ));
        }
        out.extend_from_slice(&(e.clean_posterior as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<Snapshot, FormatError> {
    let mut r = Reader::new(bytes);
    let h = read_header(&mut r, SNAPSHOT_MAGIC, 4)?;
    let mut entries = Vec::with_capacity(h.n);
    for _ in 0..h.n {
        let sample = read_record(&mut r, &h)?;
        let at = r.offset();
        let p = r.f32("posterior")?;
        if !(0.0..=1.0).contains(&p) {
            return Err(FormatError::new(at, format!("posterior {p} is outside [0, 1]")));
        }
        entries.push(PurifiedEntry {
            sample,
            clean_posterior: f64::from(p),
        });
    }
    r.finish()?;
    Ok(Snapshot {
        entries,
        num_classes: h.num_classes,
        feature_dim: h.dim,
    })
}

pub fn encode_layers(layers: &[Dense]) -> Result<Vec<u8>, FormatError> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(layers.len(), "layer count", 8)?.to_le_bytes());
    for l in layers {
        let at = out.len() as u64;
        out.extend_from_slice(&to_u32(l.in_dim, "layer input", at)?.to_le_bytes());
        out.extend_from_slice(&to_u32(l.out_dim, "layer output", at + 4)?.to_le_bytes());
    }
    for l in layers {
        if l.weight.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
            return Err(FormatError::new(
                out.len() as u64,
                "layer buffers disagree with its shape",
            ));
        }
        for v in l.weight.iter().chain(&l.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_layers(bytes: &[u8]) -> Result<Vec<Dense>, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(WEIGHTS_MAGIC)?;
    let count = r.u32("layer count")? as usize;
    let mut shapes = Vec::new();
    for _ in 0..count {
        let at = r.offset();
        let (i, o) = (r.u32("layer input")? as usize, r.u32("layer output")? as usize);
        if i == 0 || o == 0 {
            return Err(FormatError::new(at, format!("layer shape {i}x{o} is empty")));
        }
        shapes.push((i, o));
    }
    let needed: u64 = shapes.iter().map(|&(i, o)| 8 * (i as u64 * o as u64 + o as u64)).sum();
    let left = (bytes.len() - r.pos) as u64;
    if left < needed {
        return Err(FormatError::new(
            r.offset() + left,
            format!("truncated: layers need {needed} bytes, {left} present"),
        ));
    }
    let mut layers = Vec::with_capacity(count);
    for (in_dim, out_dim) in shapes {
        let weight = (0..in_dim * out_dim)
            .map(|_| r.f64("weight"))
            .collect::<Result<Vec<_>, _>>()?;
        let bias = (0..out_dim).map(|_| r.f64("bias")).collect::<Result<Vec<_>, _>>()?;
        layers.push(Dense {
            in_dim,
            out_dim,
            weight,
            bias,
        });
    }
    r.finish()?;
    Ok(layers)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn format_err(path: &Path) -> impl FnOnce(FormatError) -> CliError + '_ {
    move |source| CliError::Format {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn load_embeddings(path: &Path) -> Result<Dataset> {
    decode_embeddings(&read(path)?).map_err(format_err(path))
}

pub fn save_embeddings(path: &Path, data: &Dataset) -> Result<()> {
    write_file(path, &encode_embeddings(data).map_err(format_err(path))?)
}

pub fn load_snapshot(path: &Path) -> Result<Snapshot> {
    decode_snapshot(&read(path)?).map_err(format_err(path))
}

pub fn load_encoder(path: &Path) -> Result<EncoderParams> {
    let layers = decode_layers(&read(path)?).map_err(format_err(path))?;
    EncoderParams::from_layers(layers).map_err(|e| CliError::config(path, e.to_string()))
}

pub fn load_classifier(path: &Path) -> Result<Classifier> {
    let layers = decode_layers(&read(path)?).map_err(format_err(path))?;
    Classifier::from_layers(layers).map_err(|e| CliError::config(path, e.to_string()))
}

pub fn save_layers(path: &Path, layers: &[Dense]) -> Result<()> {
    write_file(path, &encode_layers(layers).map_err(format_err(path))?)
}

/// Plain-text matrix dump: `n` on the first line, then one row per line.
pub fn matrix_to_text(m: &AdjacencyMatrix) -> String {
    let n = m.n();
    let mut s = format!("{n}\n");
    for i in 0..n {
        let cells: Vec<String> = (0..n).map(|j| format!("{:?}", m.get(i, j))).collect();
        s.push_str(&cells.join(" "));
        s.push('\n');
    }
    s
}

pub fn matrix_from_text(text: &str) -> std::result::Result<AdjacencyMatrix, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let n: usize = lines
        .next()
        .ok_or("empty matrix dump")?
        .trim()
        .parse()
        .map_err(|e| format!("line 1: bad size: {e}"))?;
    let mut data = Vec::with_capacity(n * n);
    for (i, line) in lines.enumerate() {
        let row = line
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| format!("line {}: {e}", i + 2))?;
        if row.len() != n {
            return Err(format!("line {}: {} values, expected {n}", i + 2, row.len()));
        }
        data.extend(row);
    }
    AdjacencyMatrix::from_rows(n, data).map_err(|e| e.to_string())
}
