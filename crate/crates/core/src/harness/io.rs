//! File formats and atomic persistence.
//!
//! Trace CSV: a header `t,s_0,s_1,...` with the arc positions, then one row
//! per time sample, complex values written as `re+imj`.
//!
//! Trace binary (little endian): magic `IMTR`, `u32` version 1, `u64` time
//! count, `u64` arc count, then `f64` times, `f64` arc positions, `f64` arc
//! weights, and the values as `(re, im)` pairs in time-major order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forward::BoundaryTrace;
use crate::identify::{SampleStatus, SpatialImage, SpectralSample};
use crate::model::C64;

const MAGIC: &[u8; 4] = b"IMTR";
const BINARY_VERSION: u32 = 1;

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn format_complex(z: C64) -> String {
    let sign = if z.im.is_sign_negative() { "" } else { "+" };
    format!("{:?}{sign}{:?}j", z.re, z.im)
}

pub fn parse_complex(s: &str) -> Result<C64> {
    let bad = || Error::Config(format!("malformed complex value {s:?}"));
    let body = s.trim().strip_suffix('j').ok_or_else(bad)?;
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&i| (bytes[i] == b'+' || bytes[i] == b'-') && !matches!(bytes[i - 1], b'e' | b'E'))
        .ok_or_else(bad)?;
    let re = body[..split].parse::<f64>().map_err(|_| bad())?;
    let im = body[split..].parse::<f64>().map_err(|_| bad())?;
    Ok(C64::new(re, im))
}

pub fn trace_to_csv(trace: &BoundaryTrace) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    header.extend(trace.arc.iter().map(|s| format!("{s:?}")));
    w.write_record(&header)?;
    for n in 0..trace.n_times() {
        let mut rec = vec![format!("{:?}", trace.times[n])];
        rec.extend(trace.row(n).iter().map(|z| format_complex(*z)));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Arc weights recovered from positions: half the gap to each neighbor, the
/// wrap-around gap taken equal to the first one.
fn arc_weights(arc: &[f64]) -> Vec<f64> {
    let m = arc.len();
    if m < 2 {
        return vec![1.0; m];
    }
    let gaps: Vec<f64> = (0..m)
        .map(|k| if k + 1 < m { arc[k + 1] - arc[k] } else { arc[1] - arc[0] })
        .collect();
    (0..m).map(|k| 0.5 * (gaps[(k + m - 1) % m] + gaps[k])).collect()
}

pub fn trace_from_csv(bytes: &[u8]) -> Result<BoundaryTrace> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = r.headers()?.clone();
    if header.get(0) != Some("t") || header.len() < 2 {
        return Err(Error::Config("trace CSV header must be t followed by arc positions".into()));
    }
    let arc: Vec<f64> = header
        .iter()
        .skip(1)
        .map(|s| s.parse::<f64>().map_err(|_| Error::Config(format!("bad arc position {s:?}"))))
        .collect::<Result<_>>()?;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != arc.len() + 1 {
            return Err(Error::Config(format!(
                "line {}: expected {} fields, found {}",
                line + 2,
                arc.len() + 1,
                rec.len()
            )));
        }
        times.push(rec[0].parse::<f64>().map_err(|_| Error::Config(format!("line {}: bad time", line + 2)))?);
        for f in rec.iter().skip(1) {
            values.push(parse_complex(f).map_err(|e| Error::Config(format!("line {}: {e}", line + 2)))?);
        }
    }
    if times.len() < 2 {
        return Err(Error::Config("trace needs at least two time samples".into()));
    }
    let weights = arc_weights(&arc);
    Ok(BoundaryTrace {
        times,
        arc,
        weights,
        values,
    })
}

pub fn write_trace_csv(path: &Path, trace: &BoundaryTrace) -> Result<()> {
    write_atomic(path, &trace_to_csv(trace)?)
}

pub fn read_trace_csv(path: &Path) -> Result<BoundaryTrace> {
    trace_from_csv(&fs::read(path)?)
}

pub fn trace_to_binary(trace: &BoundaryTrace) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * (trace.times.len() + 2 * trace.arc.len() + 2 * trace.values.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    out.extend_from_slice(&(trace.times.len() as u64).to_le_bytes());
    out.extend_from_slice(&(trace.arc.len() as u64).to_le_bytes());
    for v in trace.times.iter().chain(&trace.arc).chain(&trace.weights) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for z in &trace.values {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    out
}

pub fn trace_from_binary(bytes: &[u8]) -> Result<BoundaryTrace> {
    let bad = |m: &str| Error::Config(format!("binary trace: {m}"));
    if bytes.len() < 24 || &bytes[..4] != MAGIC {
        return Err(bad("missing header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != BINARY_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let nt = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let na = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes")) as usize;
    let floats = nt
        .checked_add(2 * na)
        .and_then(|a| nt.checked_mul(na).and_then(|b| b.checked_mul(2)).and_then(|b| a.checked_add(b)))
        .ok_or_else(|| bad("sizes overflow"))?;
    if bytes.len() != 24 + 8 * floats {
        return Err(bad("length does not match the header"));
    }
    let mut it = bytes[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
    let times = take(nt);
    let arc = take(na);
    let weights = take(na);
    let raw = take(2 * nt * na);
    let values = raw.chunks_exact(2).map(|c| C64::new(c[0], c[1])).collect();
    Ok(BoundaryTrace {
        times,
        arc,
        weights,
        values,
    })
}

/// Picks the format from the extension: `.bin` is binary, anything else CSV.
pub fn write_trace(path: &Path, trace: &BoundaryTrace) -> Result<()> {
    if path.extension().is_some_and(|e| e == "bin") {
        write_atomic(path, &trace_to_binary(trace))
    } else {
        write_trace_csv(path, trace)
    }
}

pub fn read_trace(path: &Path) -> Result<BoundaryTrace> {
    let bytes = fs::read(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "bin") {
        trace_from_binary(&bytes)
    } else {
        trace_from_csv(&bytes)
    }
}

fn status_label(s: &SampleStatus) -> String {
    match s {
        SampleStatus::Ok => "ok".into(),
        SampleStatus::Origin => "origin".into(),
        SampleStatus::Mirrored => "mirrored".into(),
        SampleStatus::Failed(why) => format!("failed: {why}"),
    }
}

pub fn spectrum_to_csv(samples: &[SpectralSample]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["eta_x", "eta_y", "re", "im", "status"])?;
    for s in samples {
        w.write_record([
            format!("{:?}", s.eta[0]),
            format!("{:?}", s.eta[1]),
            format!("{:?}", s.value.re),
            format!("{:?}", s.value.im),
            status_label(&s.status),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn image_to_csv(img: &SpatialImage) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "y", "re", "im", "abs"])?;
    for iy in 0..img.ny() {
        for ix in 0..img.nx() {
            let v = img.at(ix, iy);
            w.write_record([
                format!("{:?}", img.xs[ix]),
                format!("{:?}", img.ys[iy]),
                format!("{:?}", v.re),
                format!("{:?}", v.im),
                format!("{:?}", v.norm()),
            ])?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.display().to_string(),
            sha256: sha256_hex(&fs::read(path)?),
        })
    }
}

/// Provenance record written next to every output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub arguments: Vec<String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub seed: Option<u64>,
    pub workers: usize,
    pub started_unix: u64,
    pub elapsed_seconds: f64,
}

impl Manifest {
    pub fn new(command: &str, arguments: Vec<String>, seed: Option<u64>, workers: usize) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            arguments,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed,
            workers,
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            elapsed_seconds: 0.0,
        }
    }

    /// `<output>.manifest.json`.
    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        output.with_file_name(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_trace() -> BoundaryTrace {
        let mut t = BoundaryTrace::zeros(vec![0.0, 0.5, 1.0], vec![0.05, 0.15, 0.25, 0.35], vec![0.1; 4]);
        for (i, v) in t.values.iter_mut().enumerate() {
            *v = C64::new(i as f64 * 0.1 - 0.3, -1e-17 * i as f64);
        }
        t
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let t = sample_trace();
        let back = trace_from_csv(&trace_to_csv(&t).unwrap()).unwrap();
        assert_eq!(back.times, t.times);
        assert_eq!(back.arc, t.arc);
        assert_eq!(back.values, t.values);
        for (a, b) in back.weights.iter().zip(&t.weights) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let t = sample_trace();
        assert_eq!(trace_from_binary(&trace_to_binary(&t)).unwrap(), t);
        let mut bytes = trace_to_binary(&t);
        bytes.pop();
        assert!(trace_from_binary(&bytes).is_err());
    }

    #[test]
    fn complex_strings() {
        assert_eq!(format_complex(C64::new(1.5, -2.0)), "1.5-2.0j");
        assert_eq!(parse_complex("1e-5+3e+2j").unwrap(), C64::new(1e-5, 300.0));
        assert_eq!(parse_complex("-0.0-1.0j").unwrap(), C64::new(-0.0, -1.0));
        assert!(parse_complex("1.0").is_err());
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    proptest! {
        #[test]
        fn complex_format_round_trips(re in proptest::num::f64::NORMAL, im in proptest::num::f64::NORMAL) {
            let z = C64::new(re, im);
            prop_assert_eq!(parse_complex(&format_complex(z)).unwrap(), z);
        }
    }
}
