use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::{Error, Result};

/// One CG3D step. A loss is absent on steps where it was not computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub loss_3d: Option<f32>,
    pub loss_p: Option<f32>,
    pub lr_3d: f64,
    pub lr_p: f64,
}

pub const LOG_HEADER: &str = "step,loss_3d,loss_p,lr_3d,lr_p";

fn opt(v: Option<f32>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV text; floats use the shortest representation that round-trips.
pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.step, opt(r.loss_3d), opt(r.loss_p), r.lr_3d, r.lr_p);
    }
    out
}

pub fn parse_log(text: &str) -> Result<Vec<LogRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(LOG_HEADER) {
        return Err(Error::format(0, "training log header mismatch"));
    }
    let parse_opt = |s: &str| -> Result<Option<f32>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| Error::format(0, format!("bad loss `{s}`")))
        }
    };
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(Error::format(0, format!("bad log line `{l}`")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::format(0, format!("bad number `{s}`")));
            Ok(LogRow {
                step: f[0].parse().map_err(|_| Error::format(0, format!("bad step `{}`", f[0])))?,
                loss_3d: parse_opt(f[1])?,
                loss_p: parse_opt(f[2])?,
                lr_3d: num(f[3])?,
                lr_p: num(f[4])?,
            })
        })
        .collect()
}

pub fn write_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    fs::write(path, log_to_csv(rows)).map_err(|e| Error::io(path, e))
}

/// Mean of the first and last `window` present values of a loss column.
pub fn smoothed_ends(values: &[f32], window: usize) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let w = window.min(values.len()).max(1);
    let mean = |s: &[f32]| s.iter().map(|&v| v as f64).sum::<f64>() / s.len() as f64;
    Some((mean(&values[..w]), mean(&values[values.len() - w..])))
}
