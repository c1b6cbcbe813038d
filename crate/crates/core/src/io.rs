//! File formats: PTAG1 binary and CSV tag files, histogram CSV with a JSON
//! sidecar, and model-curve CSV.
//!
//! PTAG1 layout (all little-endian):
//!
//! ```text
//! 0   magic        b"PTAG1\0\0\0"
//! 8   version      u32 = 1
//! 12  resolution   u32 (ps)
//! 16  duration     u64 (ps)
//! 24  n_records    u64
//! 32  records      n x { timestamp_ps u64, channel u16, 6 zero bytes }
//! ```
//!
//! Neither tag format has room for channel labels (and CSV carries no
//! metadata at all), so writers also emit `<path>.meta.json` holding
//! resolution, duration and labels. Readers use it when present.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timetag::{first_unsorted, CorrelationHistogram, HistogramSpec, TagStream, TimeTag};

pub const PTAG_MAGIC: [u8; 8] = *b"PTAG1\0\0\0";
pub const PTAG_VERSION: u32 = 1;
pub const PTAG_HEADER_LEN: u64 = 32;
pub const PTAG_RECORD_LEN: u64 = 16;
const CSV_TAG_HEADER: &str = "channel,timestamp_ps";
const CSV_HIST_HEADER: &str = "delay_ps,counts";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagFormat {
    Binary,
    Csv,
}

impl TagFormat {
    /// `.csv` means CSV, anything else PTAG1.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => TagFormat::Csv,
            _ => TagFormat::Binary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct TagMeta {
    resolution_ps: u32,
    duration_ps: u64,
    #[serde(default)]
    channel_labels: BTreeMap<u16, String>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn read_meta(path: &Path) -> Result<Option<TagMeta>> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&side)?;
    Ok(Some(serde_json::from_str(&text)?))
}

fn parse_err(offset: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

pub fn read_tag_file(path: &Path, format: TagFormat) -> Result<TagStream> {
    let meta = read_meta(path)?;
    let file = File::open(path)?;
    let len = file.metadata()?.len();
    let reader = BufReader::with_capacity(1 << 20, file);
    match format {
        TagFormat::Binary => read_binary(reader, len, meta),
        TagFormat::Csv => read_csv(reader, meta),
    }
}

fn finish_stream(
    tags: Vec<TimeTag>,
    resolution: u32,
    duration: Option<u64>,
    meta: Option<TagMeta>,
) -> Result<TagStream> {
    if let Some(index) = first_unsorted(&tags) {
        return Err(Error::Ordering { index });
    }
    let max_ts = tags.last().map_or(0, |t| t.timestamp_ps);
    let labels = meta.map(|m| m.channel_labels).unwrap_or_default();
    let duration = duration.unwrap_or(max_ts);
    TagStream::with_metadata(tags, resolution, duration, labels)
}

fn read_binary<R: Read>(mut reader: R, file_len: u64, meta: Option<TagMeta>) -> Result<TagStream> {
    let mut header = [0u8; PTAG_HEADER_LEN as usize];
    reader.read_exact(&mut header).map_err(|_| {
        parse_err(
            0,
            format!("file is {file_len} bytes, shorter than the 32-byte header"),
        )
    })?;
    if header[..8] != PTAG_MAGIC {
        return Err(parse_err(0, "bad magic, expected PTAG1"));
    }
    let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if version != PTAG_VERSION {
        return Err(parse_err(
            8,
            format!("unsupported format version {version}"),
        ));
    }
    let resolution = u32::from_le_bytes(header[12..16].try_into().unwrap());
    if resolution == 0 {
        return Err(parse_err(12, "resolution_ps must be positive"));
    }
    let duration = u64::from_le_bytes(header[16..24].try_into().unwrap());
    let n = u64::from_le_bytes(header[24..32].try_into().unwrap());

    let expected = n
        .checked_mul(PTAG_RECORD_LEN)
        .and_then(|b| b.checked_add(PTAG_HEADER_LEN))
        .ok_or_else(|| parse_err(24, format!("record count {n} overflows")))?;
    if file_len < expected {
        let complete = (file_len - PTAG_HEADER_LEN) / PTAG_RECORD_LEN;
        return Err(parse_err(
            PTAG_HEADER_LEN + complete * PTAG_RECORD_LEN,
            format!("truncated: header announces {n} records, file holds {complete}"),
        ));
    }
    if file_len > expected {
        return Err(parse_err(expected, "trailing bytes after the last record"));
    }

    let mut tags = Vec::with_capacity(n as usize);
    let mut rec = [0u8; PTAG_RECORD_LEN as usize];
    for i in 0..n {
        let offset = PTAG_HEADER_LEN + i * PTAG_RECORD_LEN;
        reader
            .read_exact(&mut rec)
            .map_err(|e| parse_err(offset, format!("record {i}: {e}")))?;
        if rec[10..].iter().any(|&b| b != 0) {
            return Err(parse_err(
                offset + 10,
                format!("record {i}: reserved bytes not zero"),
            ));
        }
        tags.push(TimeTag {
            timestamp_ps: u64::from_le_bytes(rec[..8].try_into().unwrap()),
            channel: u16::from_le_bytes(rec[8..10].try_into().unwrap()),
        });
    }
    // A zero duration in the header means "not recorded".
    let duration = (duration != 0 || tags.is_empty()).then_some(duration);
    finish_stream(tags, resolution, duration, meta)
}

fn read_csv<R: BufRead>(mut reader: R, meta: Option<TagMeta>) -> Result<TagStream> {
    let mut line = String::new();
    let mut offset = 0u64;
    let n = reader.read_line(&mut line)?;
    if line.trim_end_matches(['\n', '\r']) != CSV_TAG_HEADER {
        return Err(parse_err(
            0,
            format!("expected header \"{CSV_TAG_HEADER}\""),
        ));
    }
    offset += n as u64;

    let mut tags = Vec::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        let record = line.trim_end_matches(['\n', '\r']);
        if !record.is_empty() {
            tags.push(parse_csv_tag(record, offset)?);
        }
        offset += n as u64;
    }
    let (resolution, duration) = match &meta {
        Some(m) => (m.resolution_ps, Some(m.duration_ps)),
        None => (1, None),
    };
    finish_stream(tags, resolution, duration, meta)
}

fn parse_csv_tag(record: &str, offset: u64) -> Result<TimeTag> {
    let (ch, ts) = record
        .split_once(',')
        .ok_or_else(|| parse_err(offset, "expected two comma-separated fields"))?;
    let channel = ch
        .trim()
        .parse::<u16>()
        .map_err(|e| parse_err(offset, format!("channel \"{ch}\": {e}")))?;
    let ts_offset = offset + ch.len() as u64 + 1;
    let timestamp_ps = ts
        .trim()
        .parse::<u64>()
        .map_err(|e| parse_err(ts_offset, format!("timestamp \"{ts}\": {e}")))?;
    Ok(TimeTag {
        timestamp_ps,
        channel,
    })
}

pub fn write_tag_file(stream: &TagStream, path: &Path, format: TagFormat) -> Result<()> {
    let mut w = BufWriter::with_capacity(1 << 20, File::create(path)?);
    match format {
        TagFormat::Binary => {
            w.write_all(&PTAG_MAGIC)?;
            w.write_all(&PTAG_VERSION.to_le_bytes())?;
            w.write_all(&stream.resolution_ps().to_le_bytes())?;
            w.write_all(&stream.duration_ps().to_le_bytes())?;
            w.write_all(&(stream.len() as u64).to_le_bytes())?;
            let mut rec = [0u8; PTAG_RECORD_LEN as usize];
            for t in stream.tags() {
                rec[..8].copy_from_slice(&t.timestamp_ps.to_le_bytes());
                rec[8..10].copy_from_slice(&t.channel.to_le_bytes());
                w.write_all(&rec)?;
            }
        }
        TagFormat::Csv => {
            writeln!(w, "{CSV_TAG_HEADER}")?;
            for t in stream.tags() {
                writeln!(w, "{},{}", t.channel, t.timestamp_ps)?;
            }
        }
    }
    w.flush()?;
    let meta = TagMeta {
        resolution_ps: stream.resolution_ps(),
        duration_ps: stream.duration_ps(),
        channel_labels: stream.channel_labels().clone(),
    };
    std::fs::write(
        sidecar_path(path),
        serde_json::to_string_pretty(&meta)? + "\n",
    )?;
    Ok(())
}

/// JSON sidecar stored next to a histogram CSV as `<csv>.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramSidecar {
    pub spec: HistogramSpec,
    pub n_a: u64,
    pub n_b: u64,
    pub total_pairs: u64,
}

pub fn histogram_sidecar_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_histogram_csv(hist: &CorrelationHistogram, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{CSV_HIST_HEADER}")?;
    for (i, c) in hist.counts.iter().enumerate() {
        writeln!(w, "{},{}", hist.spec.bin_center(i), c)?;
    }
    w.flush()?;
    let side = HistogramSidecar {
        spec: hist.spec,
        n_a: hist.n_a,
        n_b: hist.n_b,
        total_pairs: hist.total_pairs,
    };
    std::fs::write(
        histogram_sidecar_path(path),
        serde_json::to_string_pretty(&side)? + "\n",
    )?;
    Ok(())
}

/// Reads a histogram CSV. Bin geometry comes from the JSON sidecar when it
/// exists; otherwise it is inferred from evenly spaced bin centers.
pub fn read_histogram_csv(path: &Path) -> Result<CorrelationHistogram> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.split_inclusive('\n');
    let header = lines.next().unwrap_or("");
    if header.trim_end_matches(['\n', '\r']) != CSV_HIST_HEADER {
        return Err(parse_err(
            0,
            format!("expected header \"{CSV_HIST_HEADER}\""),
        ));
    }
    let mut offset = header.len() as u64;
    let mut centers = Vec::new();
    let mut counts = Vec::new();
    for line in lines {
        let record = line.trim_end_matches(['\n', '\r']);
        if !record.is_empty() {
            let (d, c) = record
                .split_once(',')
                .ok_or_else(|| parse_err(offset, "expected two comma-separated fields"))?;
            let d: f64 = d
                .trim()
                .parse()
                .map_err(|e| parse_err(offset, format!("delay \"{d}\": {e}")))?;
            let c: u64 = c
                .trim()
                .parse()
                .map_err(|e| parse_err(offset, format!("count \"{c}\": {e}")))?;
            centers.push(d);
            counts.push(c);
        }
        offset += line.len() as u64;
    }

    let side_path = histogram_sidecar_path(path);
    if side_path.exists() {
        let side: HistogramSidecar = serde_json::from_str(&std::fs::read_to_string(&side_path)?)?;
        let mut hist = CorrelationHistogram::from_counts(side.spec, counts, side.n_a, side.n_b)?;
        if hist.total_pairs != side.total_pairs {
            return Err(parse_err(
                0,
                "counts do not sum to the sidecar's total_pairs",
            ));
        }
        hist.total_pairs = side.total_pairs;
        return Ok(hist);
    }

    if centers.len() < 2 {
        return Err(parse_err(
            offset,
            "need at least two bins to infer geometry without a sidecar",
        ));
    }
    let width = centers[1] - centers[0];
    let spec = HistogramSpec::new(
        width.round() as i64,
        (centers[0] - width / 2.0).round() as i64,
        (centers[centers.len() - 1] + width / 2.0).round() as i64,
    )
    .map_err(|e| parse_err(0, format!("cannot infer bin geometry: {e}")))?;
    for (i, &c) in centers.iter().enumerate() {
        if (spec.bin_center(i) - c).abs() > 1e-6 {
            return Err(parse_err(
                0,
                format!("bin {i} center {c} breaks uniform spacing"),
            ));
        }
    }
    CorrelationHistogram::from_counts(spec, counts, 0, 0)
}

/// Writes `delay_ps,model_value` rows for plot overlays.
pub fn write_model_curve(path: &Path, points: impl IntoIterator<Item = (f64, f64)>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "delay_ps,model_value")?;
    for (d, v) in points {
        writeln!(w, "{d},{v:e}")?;
    }
    w.flush()?;
    Ok(())
}
