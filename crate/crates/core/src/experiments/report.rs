//! CSV output for sweeps, cuts and bound curves.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{CutPoint, DetectionRow, RmseRow};
use crate::crb::CrbPoint;
use crate::error::Result;

fn write_rows<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_rmse_csv(rows: &[RmseRow], path: &Path) -> Result<()> {
    write_rows(rows, path)
}

pub fn read_rmse_csv(path: &Path) -> Result<Vec<RmseRow>> {
    read_rows(path)
}

pub fn write_detection_csv(rows: &[DetectionRow], path: &Path) -> Result<()> {
    write_rows(rows, path)
}

pub fn read_detection_csv(path: &Path) -> Result<Vec<DetectionRow>> {
    read_rows(path)
}

pub fn write_cut_csv(rows: &[CutPoint], path: &Path) -> Result<()> {
    write_rows(rows, path)
}

pub fn read_cut_csv(path: &Path) -> Result<Vec<CutPoint>> {
    read_rows(path)
}

pub fn write_crb_csv(rows: &[CrbPoint], path: &Path) -> Result<()> {
    write_rows(rows, path)
}

pub fn read_crb_csv(path: &Path) -> Result<Vec<CrbPoint>> {
    read_rows(path)
}
