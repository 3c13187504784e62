//! Plot-ready CSV tables and atomic run directories.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::flow::{LocalErrorRow, Trajectory};
use crate::harness::{NtkCheckRow, RobustnessPoint, SweepResult};
use crate::metrics::MetricsSnapshot;

/// Models with at most this many parameters also get a `params.csv`.
pub const PARAMS_CSV_MAX: usize = 16;

/// Shortest decimal that round-trips to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

/// Trajectory table. Accuracy and `E_mu` columns appear only when every row defines them.
pub fn trajectory_csv(t: &Trajectory) -> String {
    let all = |f: fn(&crate::flow::TrajectoryRow) -> bool| !t.rows.is_empty() && t.rows.iter().all(f);
    let train = all(|r| r.train_accuracy.is_some());
    let test = all(|r| r.test_accuracy.is_some());
    let reg = all(|r| r.regularized_loss.is_some());
    let mut header = vec![
        "iteration",
        "physical_time",
        "E",
        "R_IG",
        "lambda",
        "E_modified",
        "slope",
        "param_norm",
    ];
    if train {
        header.push("train_accuracy");
    }
    if test {
        header.push("test_accuracy");
    }
    if reg {
        header.push("E_mu");
    }
    let rows = t.rows.iter().map(|r| {
        let snap = MetricsSnapshot::from_gradient_norm_sq(r.loss, r.slope * r.slope, t.param_count, t.h);
        let mut v = vec![
            r.iteration.to_string(),
            num(r.time),
            num(r.loss),
            num(r.r_ig),
            num(snap.lambda),
            num(r.loss + snap.lambda * r.r_ig),
            num(r.slope),
            num(r.param_norm),
        ];
        if train {
            v.push(opt(r.train_accuracy));
        }
        if test {
            v.push(opt(r.test_accuracy));
        }
        if reg {
            v.push(opt(r.regularized_loss));
        }
        v
    });
    table(&header, rows)
}

/// `iteration, theta_0, …` for small models whose rows carry parameters.
pub fn params_csv(t: &Trajectory) -> Option<String> {
    if t.param_count > PARAMS_CSV_MAX || t.rows.is_empty() || t.rows.iter().any(|r| r.params.is_none()) {
        return None;
    }
    let names: Vec<String> = (0..t.param_count).map(|i| format!("theta_{i}")).collect();
    let mut header = vec!["iteration"];
    header.extend(names.iter().map(String::as_str));
    let rows = t.rows.iter().map(|r| {
        let mut v = vec![r.iteration.to_string()];
        v.extend(r.params.as_ref().into_iter().flat_map(|p| p.as_slice().iter().map(|&x| num(x))));
        v
    });
    Some(table(&header, rows))
}

pub fn sweep_csv(s: &SweepResult) -> String {
    let header = [
        "h",
        "width",
        "m",
        "lambda",
        "stop_iteration",
        "E",
        "R_IG",
        "slope",
        "train_acc",
        "test_acc",
        "excluded",
        "exclusion_reason",
    ];
    let rows = s.records.iter().map(|r| {
        vec![
            num(r.h),
            r.width.to_string(),
            r.m.to_string(),
            num(r.lambda),
            r.stop_iteration.to_string(),
            opt(r.loss),
            opt(r.r_ig),
            opt(r.slope),
            opt(r.train_accuracy),
            opt(r.test_accuracy),
            (!r.is_included()).to_string(),
            r.exclusion.map(|e| e.as_str().to_owned()).unwrap_or_default(),
        ]
    });
    table(&header, rows)
}

pub fn order_csv(rows: &[LocalErrorRow]) -> String {
    table(
        &["h", "error_exact", "error_modified"],
        rows.iter().map(|r| vec![num(r.h), num(r.error_exact), num(r.error_modified)]),
    )
}

pub fn robustness_csv(points: &[RobustnessPoint]) -> String {
    table(
        &["sigma", "realizations", "accuracy_mean", "accuracy_std", "slope_mean", "slope_std"],
        points.iter().map(|p| {
            vec![
                num(p.sigma),
                p.realizations.to_string(),
                num(p.accuracy_mean),
                num(p.accuracy_std),
                num(p.slope_mean),
                num(p.slope_std),
            ]
        }),
    )
}

pub fn ntk_csv(rows: &[NtkCheckRow]) -> String {
    table(
        &["instance", "feature_map", "n", "c", "m", "h", "E", "E_modified_direct", "E_modified_kernel", "rel_error"],
        rows.iter().map(|r| {
            let map = match r.feature_map {
                crate::model::FeatureMap::Linear { .. } => "linear",
                crate::model::FeatureMap::Tanh { .. } => "tanh",
            };
            vec![
                r.instance.to_string(),
                map.to_owned(),
                r.n.to_string(),
                r.c.to_string(),
                r.m.to_string(),
                num(r.h),
                num(r.loss),
                num(r.direct),
                num(r.kernel),
                num(r.rel_error),
            ]
        }),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputEntry {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Files of one run, written together or not at all.
#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(String, Vec<u8>)>,
}

impl OutputSet {
    pub fn add(&mut self, name: impl Into<String>, contents: impl Into<Vec<u8>>) {
        self.files.push((name.into(), contents.into()));
    }

    pub fn entries(&self) -> Vec<OutputEntry> {
        self.files
            .iter()
            .map(|(name, bytes)| OutputEntry {
                file: name.clone(),
                bytes: bytes.len(),
                sha256: sha256_hex(bytes),
            })
            .collect()
    }

    /// Writes every file into `dir` via temporary files and renames. On any
    /// failure the files already placed by this call are removed.
    pub fn commit(&self, dir: &Path) -> crate::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
        let mut placed = Vec::new();
        for (name, bytes) in &self.files {
            match write_atomic(dir, name, bytes) {
                Ok(p) => placed.push(p),
                Err(e) => {
                    for p in &placed {
                        let _ = fs::remove_file(p);
                    }
                    return Err(e);
                }
            }
        }
        Ok(placed)
    }
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> crate::Result<PathBuf> {
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, &target)
    })();
    match result {
        Ok(()) => Ok(target),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(crate::Error::io(&target, e))
        }
    }
}

/// Renders the summary line printed after a run.
pub fn summary_line(pairs: &[(&str, String)]) -> String {
    let mut s = String::new();
    for (i, (k, v)) in pairs.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{k}={v}");
    }
    s
}
