use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::mean_std;
use crate::error::{Error, Result};

/// Trailing moving average, valid positions only (`len - window + 1` points).
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || xs.len() < window {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(xs.len() - window + 1);
    let mut sum: f64 = xs[..window].iter().sum();
    out.push(sum / window as f64);
    for i in window..xs.len() {
        sum += xs[i] - xs[i - window];
        out.push(sum / window as f64);
    }
    out
}

fn read_curve(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Other(format!("{}: {e}", path.display())))?;
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| Error::Other(format!("{}: {e}", path.display())))?;
            rec.get(1)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::Other(format!("{}: bad curve row", path.display())))
        })
        .collect()
}

/// Relative paths of every curve file under a seed directory.
fn curve_files(seed_dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut walk = vec![seed_dir.to_path_buf()];
    while let Some(d) = walk.pop() {
        let Ok(rd) = std::fs::read_dir(&d) else { continue };
        for e in rd.flatten() {
            let p = e.path();
            if p.is_dir() {
                walk.push(p);
            } else if p.to_string_lossy().ends_with("_curve.csv") {
                out.push(p.strip_prefix(seed_dir).expect("under seed dir").to_path_buf());
            }
        }
    }
    out
}

/// Smooths every training curve found under `dir/seed_*` and writes one CSV
/// per curve into `dir/report/` with per-seed columns and a mean ± std band.
/// Returns the written files.
pub fn report(dir: &Path, window: usize) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut seeds: Vec<(String, PathBuf)> = rd
        .flatten()
        .filter(|e| e.path().is_dir())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.starts_with("seed_").then(|| (name, e.path()))
        })
        .collect();
    seeds.sort();
    if seeds.is_empty() {
        return Err(Error::Other(format!("no seed_* directories under {}", dir.display())));
    }
    let mut curves: BTreeMap<PathBuf, Vec<(String, Vec<f64>)>> = BTreeMap::new();
    for (name, path) in &seeds {
        for rel in curve_files(path) {
            let smoothed = moving_average(&read_curve(&path.join(&rel))?, window);
            curves.entry(rel).or_default().push((name.clone(), smoothed));
        }
    }
    let out_dir = dir.join("report");
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let mut written = Vec::new();
    for (rel, per_seed) in curves {
        let len = per_seed.iter().map(|(_, c)| c.len()).min().unwrap_or(0);
        let stem = rel.to_string_lossy().replace(['/', '\\'], "__");
        let path = out_dir.join(stem);
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Other(e.to_string()))?;
        let mut header = vec!["episode".to_string()];
        header.extend(per_seed.iter().map(|(n, _)| n.clone()));
        header.extend(["mean", "lower", "upper"].map(String::from));
        w.write_record(&header).map_err(|e| Error::Other(e.to_string()))?;
        for i in 0..len {
            let vals: Vec<f64> = per_seed.iter().map(|(_, c)| c[i]).collect();
            let (m, s) = mean_std(&vals);
            let mut row = vec![(i + window - 1).to_string()];
            row.extend(vals.iter().map(f64::to_string));
            row.extend([m, m - s, m + s].map(|x| x.to_string()));
            w.write_record(&row).map_err(|e| Error::Other(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
