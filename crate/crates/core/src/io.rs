//! File formats: scan CSV, TUM pose lists, model text and sweep CSV.

use crate::model::{GaussianModel, ModelError};
use crate::scan::{RadarPoint, Scan};
use crate::se3::Pose;
use crate::sweep::TrialRecord;
use nalgebra::{Quaternion, Vector3};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> IoError {
    IoError::Parse { path: path.display().to_string(), line, msg: msg.into() }
}

#[derive(Debug, Serialize, Deserialize)]
struct ScanRow {
    x: f64,
    y: f64,
    z: f64,
    doppler: f64,
    rcs: f64,
}

/// `scan_<index>.csv`.
pub fn scan_file_name(index: usize) -> String {
    format!("scan_{index}.csv")
}

pub fn write_scan<W: Write>(writer: W, scan: &Scan) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    for p in &scan.points {
        w.serialize(ScanRow { x: p.position.x, y: p.position.y, z: p.position.z, doppler: p.doppler, rcs: p.rcs })?;
    }
    if scan.points.is_empty() {
        w.write_record(["x", "y", "z", "doppler", "rcs"])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a scan; `path` only labels errors.
pub fn read_scan<R: Read>(reader: R, path: &Path, timestamp: f64) -> Result<Scan, IoError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["x", "y", "z", "doppler", "rcs"] {
        return Err(parse_err(path, 1, "header must be x,y,z,doppler,rcs"));
    }
    let mut points = Vec::new();
    for (i, row) in r.deserialize::<ScanRow>().enumerate() {
        let row = row?;
        let p = RadarPoint::new(Vector3::new(row.x, row.y, row.z), row.doppler, row.rcs)
            .map_err(|e| parse_err(path, i + 2, e.to_string()))?;
        points.push(p);
    }
    Ok(Scan::new(points, timestamp))
}

pub fn save_scan(path: &Path, scan: &Scan) -> Result<(), IoError> {
    write_scan(fs::File::create(path)?, scan)
}

pub fn load_scan(path: &Path, timestamp: f64) -> Result<Scan, IoError> {
    read_scan(BufReader::new(fs::File::open(path)?), path, timestamp)
}

/// `scan_<index>.csv` files in `dir`, sorted by index.
pub fn list_scans(dir: &Path) -> Result<Vec<(usize, PathBuf)>, IoError> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let index = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("scan_"))
            .and_then(|n| n.strip_suffix(".csv"))
            .and_then(|n| n.parse::<usize>().ok());
        if let Some(i) = index {
            found.push((i, path));
        }
    }
    found.sort();
    Ok(found)
}

/// One `timestamp tx ty tz qx qy qz qw` line per pose.
pub fn write_poses<W: Write>(mut writer: W, poses: &[(f64, Pose)]) -> Result<(), IoError> {
    for (ts, pose) in poses {
        let t = pose.translation();
        let q = pose.rotation().quaternion();
        writeln!(writer, "{} {} {} {} {} {} {} {}", ts, t.x, t.y, t.z, q.i, q.j, q.k, q.w)?;
    }
    Ok(())
}

/// Parses a TUM trajectory. Blank lines and `#` comments are skipped;
/// quaternions are renormalized.
pub fn read_poses<R: BufRead>(reader: R, path: &Path) -> Result<Vec<(f64, Pose)>, IoError> {
    let mut poses = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let body = line.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = body
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| parse_err(path, i + 1, format!("{e}")))?;
        if v.len() != 8 {
            return Err(parse_err(path, i + 1, format!("expected 8 fields, got {}", v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(parse_err(path, i + 1, "non-finite value"));
        }
        let q = Quaternion::new(v[7], v[4], v[5], v[6]);
        if q.norm() < 1e-12 {
            return Err(parse_err(path, i + 1, "zero quaternion"));
        }
        poses.push((v[0], Pose::new(q, Vector3::new(v[1], v[2], v[3]))));
    }
    Ok(poses)
}

pub fn save_poses(path: &Path, poses: &[(f64, Pose)]) -> Result<(), IoError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write_poses(&mut f, poses)?;
    f.flush()?;
    Ok(())
}

pub fn load_poses(path: &Path) -> Result<Vec<(f64, Pose)>, IoError> {
    read_poses(BufReader::new(fs::File::open(path)?), path)
}

pub fn save_model(path: &Path, model: &GaussianModel) -> Result<(), IoError> {
    fs::write(path, model.to_text())?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<GaussianModel, IoError> {
    Ok(GaussianModel::from_text(&fs::read_to_string(path)?)?)
}

pub fn write_records<W: Write>(writer: W, records: &[TrialRecord]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(reader: R) -> Result<Vec<TrialRecord>, IoError> {
    let mut r = csv::Reader::from_reader(reader);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}
