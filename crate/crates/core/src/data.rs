//! Dataset ingestion, standardization, splitting and synthetic generators.

use crate::nn::{forward, NetworkParams, NetworkShape, Sample};
use crate::pwp::PwlActivation;
use crate::train::init_params;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("empty file")]
    EmptyFile,
    #[error("row {line}: column {column} is not numeric: {cell:?}")]
    MalformedCell {
        line: usize,
        column: usize,
        cell: String,
    },
    #[error("row {line}: missing column {column}")]
    MissingColumn { line: usize, column: usize },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("dimension {dim} has zero variance")]
    ZeroVariance { dim: usize },
    #[error("sidecar parse error: {0}")]
    Sidecar(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    TeacherPwl,
    Terrain,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Csv(PathBuf),
    Synthetic { kind: SyntheticKind, seed: u64 },
}

/// Per-dimension (mean, stddev) pairs used by `standardize`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub x: Vec<(f64, f64)>,
    pub y: Vec<(f64, f64)>,
}

impl Standardization {
    /// Maps a standardized sample back to raw units.
    pub fn destandardize(&self, sample: &Sample) -> Sample {
        let x = sample
            .x
            .iter()
            .zip(&self.x)
            .map(|(v, &(m, s))| v * s + m)
            .collect();
        let y = sample
            .y
            .iter()
            .zip(&self.y)
            .map(|(v, &(m, s))| v * s + m)
            .collect();
        Sample { x, y }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub standardization: Option<Standardization>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Parses comma-separated decimal rows; `x_columns`/`y_columns` select fields.
pub fn load_csv(
    path: &Path,
    x_columns: &[usize],
    y_columns: &[usize],
    has_header: bool,
) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => DataError::Io {
                path: path.to_path_buf(),
                source: std::io::Error::other(e.to_string()),
            },
            _ => DataError::Csv(e),
        })?;
    let mut samples = Vec::new();
    let first_data_line = if has_header { 2 } else { 1 };
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = first_data_line + i;
        let cell = |col: usize| -> Result<f64, DataError> {
            let raw = record
                .get(col)
                .ok_or(DataError::MissingColumn { line, column: col })?;
            raw.parse::<f64>().map_err(|_| DataError::MalformedCell {
                line,
                column: col,
                cell: raw.to_string(),
            })
        };
        let x: Vec<f64> = x_columns.iter().map(|&c| cell(c)).collect::<Result<_, _>>()?;
        let y: Vec<f64> = y_columns.iter().map(|&c| cell(c)).collect::<Result<_, _>>()?;
        samples.push(Sample { x, y });
    }
    if samples.is_empty() {
        return Err(DataError::EmptyFile);
    }
    Ok(Dataset {
        samples,
        standardization: None,
        provenance: Provenance::Csv(path.to_path_buf()),
    })
}

fn column_stats(values: impl Iterator<Item = f64>, n: usize) -> (f64, f64) {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut vals = Vec::with_capacity(n);
    for v in values {
        vals.push(v);
    }
    for &v in &vals {
        sum += v;
    }
    let mean = sum / n as f64;
    for &v in &vals {
        sum_sq += (v - mean) * (v - mean);
    }
    (mean, (sum_sq / n as f64).sqrt())
}

/// Shifts and scales every input and output dimension to empirical mean 0 and
/// variance 1, retaining the constants for the inverse transform.
pub fn standardize(dataset: &Dataset) -> Result<Dataset, DataError> {
    let n = dataset.samples.len();
    if n < 2 {
        return Err(DataError::TooFewSamples { needed: 2, got: n });
    }
    let d_in = dataset.samples[0].x.len();
    let d_out = dataset.samples[0].y.len();
    let mut x_stats = Vec::with_capacity(d_in);
    for d in 0..d_in {
        let (m, s) = column_stats(dataset.samples.iter().map(|smp| smp.x[d]), n);
        if s == 0.0 {
            return Err(DataError::ZeroVariance { dim: d });
        }
        x_stats.push((m, s));
    }
    let mut y_stats = Vec::with_capacity(d_out);
    for d in 0..d_out {
        let (m, s) = column_stats(dataset.samples.iter().map(|smp| smp.y[d]), n);
        if s == 0.0 {
            return Err(DataError::ZeroVariance { dim: d_in + d });
        }
        y_stats.push((m, s));
    }
    let samples = dataset
        .samples
        .iter()
        .map(|smp| Sample {
            x: smp
                .x
                .iter()
                .zip(&x_stats)
                .map(|(v, &(m, s))| (v - m) / s)
                .collect(),
            y: smp
                .y
                .iter()
                .zip(&y_stats)
                .map(|(v, &(m, s))| (v - m) / s)
                .collect(),
        })
        .collect();
    Ok(Dataset {
        samples,
        standardization: Some(Standardization {
            x: x_stats,
            y: y_stats,
        }),
        provenance: dataset.provenance.clone(),
    })
}

/// Seeded permutation; first 80% train, rest validation.
pub fn split_80_20(s: usize, seed: u64) -> Result<Split, DataError> {
    if s < 5 {
        return Err(DataError::TooFewSamples { needed: 5, got: s });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x5011_7000);
    let mut perm: Vec<usize> = (0..s).collect();
    perm.shuffle(&mut rng);
    let n_train = (0.8 * s as f64).round() as usize;
    Ok(Split {
        train_indices: perm[..n_train].to_vec(),
        val_indices: perm[n_train..].to_vec(),
    })
}

const TEACHER_HIDDEN: usize = 32;

/// The hidden network behind `SyntheticKind::TeacherPwl`, reconstructible from
/// the seed so realizability can be checked.
pub fn teacher_network(d_in: usize, seed: u64) -> (NetworkShape, NetworkParams) {
    let shape = NetworkShape::new(d_in, TEACHER_HIDDEN, 1, PwlActivation::leaky_hard_tanh(0.01));
    let params = init_params(&shape, seed ^ 0x7e4c_8e52_1d0b_90a1);
    (shape, params)
}

const TERRAIN_WAVES: usize = 8;
const TERRAIN_NOISE: f64 = 0.01;

/// Triangle wave with period 1 and range [-1, 1].
fn triangle(u: f64) -> f64 {
    let frac = u - (u + 0.5).floor();
    1.0 - 4.0 * frac.abs()
}

/// Deterministic synthetic datasets: a realizable teacher network, or a rugged
/// non-realizable terrain built from triangle waves of random projections.
pub fn synthetic_rugged(kind: SyntheticKind, s: usize, d_in: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0xda7a);
    let samples = match kind {
        SyntheticKind::TeacherPwl => {
            let (shape, params) = teacher_network(d_in, seed);
            (0..s)
                .map(|_| {
                    let x: Vec<f64> = (0..d_in).map(|_| rng.random_range(-2.0..2.0)).collect();
                    let y = forward(&shape, &params, &x).expect("teacher dimensions match");
                    Sample { x, y }
                })
                .collect()
        }
        SyntheticKind::Terrain => {
            let mut dirs = Vec::with_capacity(TERRAIN_WAVES);
            for k in 0..TERRAIN_WAVES {
                let mut dir: Vec<f64> = (0..d_in)
                    .map(|_| {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        g
                    })
                    .collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                dir.iter_mut().for_each(|v| *v /= norm);
                let freq = rng.random_range(0.5..4.0);
                let phase = rng.random_range(0.0..1.0);
                let amp = rng.random_range(0.5..1.0) / (k + 1) as f64;
                dirs.push((dir, freq, phase, amp));
            }
            (0..s)
                .map(|_| {
                    let x: Vec<f64> = (0..d_in).map(|_| rng.random_range(-2.0..2.0)).collect();
                    let mut y = 0.0;
                    for (dir, freq, phase, amp) in &dirs {
                        let proj: f64 = dir.iter().zip(&x).map(|(d, xi)| d * xi).sum();
                        y += amp * triangle(freq * proj + phase);
                    }
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    y += TERRAIN_NOISE * noise;
                    Sample { x, y: vec![y] }
                })
                .collect()
        }
    };
    Dataset {
        samples,
        standardization: None,
        provenance: Provenance::Synthetic { kind, seed },
    }
}

/// Writes the dataset back to CSV (x columns then y columns) plus a sidecar
/// `<path>.std` holding the standardization constants, when present.
pub fn save_cache(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut body = String::new();
    for smp in &dataset.samples {
        let cells: Vec<String> = smp
            .x
            .iter()
            .chain(&smp.y)
            .map(|v| format!("{:.16e}", v))
            .collect();
        body.push_str(&cells.join(","));
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|e| DataError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    if let Some(std) = &dataset.standardization {
        let mut side = String::new();
        for (label, stats) in [("x", &std.x), ("y", &std.y)] {
            for (d, (m, s)) in stats.iter().enumerate() {
                let _ = writeln!(side, "{label}{d} {m:.16e} {s:.16e}");
            }
        }
        let side_path = sidecar_path(path);
        std::fs::write(&side_path, side).map_err(|e| DataError::Io {
            path: side_path,
            source: e,
        })?;
    }
    Ok(())
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".std");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::loss;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_csv_basic() {
        let f = write_temp("1,2,3\n4,5,6\n7,8,9\n");
        let ds = load_csv(f.path(), &[0, 1], &[2], false).unwrap();
        assert_eq!(ds.samples.len(), 3);
        assert_eq!(ds.samples[0].x, vec![1.0, 2.0]);
        assert_eq!(ds.samples[0].y, vec![3.0]);
    }

    #[test]
    fn load_csv_skips_header() {
        let f = write_temp("a,b,c\n1,2,3\n");
        let ds = load_csv(f.path(), &[0], &[2], true).unwrap();
        assert_eq!(ds.samples.len(), 1);
        assert_eq!(ds.samples[0].y, vec![3.0]);
    }

    #[test]
    fn load_csv_reports_bad_cell_position() {
        let f = write_temp("1,2,3\n4,oops,6\n");
        let err = load_csv(f.path(), &[0, 1], &[2], false).unwrap_err();
        match err {
            DataError::MalformedCell { line, column, cell } => {
                assert_eq!((line, column), (2, 1));
                assert_eq!(cell, "oops");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn load_csv_missing_column_and_empty() {
        let f = write_temp("1,2\n");
        assert!(matches!(
            load_csv(f.path(), &[0], &[5], false),
            Err(DataError::MissingColumn { line: 1, column: 5 })
        ));
        let f = write_temp("");
        assert!(matches!(
            load_csv(f.path(), &[0], &[1], false),
            Err(DataError::EmptyFile)
        ));
    }

    #[test]
    fn standardize_gives_zero_mean_unit_variance() {
        let ds = synthetic_rugged(SyntheticKind::Terrain, 500, 2, 3);
        let std = standardize(&ds).unwrap();
        let n = std.samples.len() as f64;
        for d in 0..2 {
            let mean: f64 = std.samples.iter().map(|s| s.x[d]).sum::<f64>() / n;
            let var: f64 = std.samples.iter().map(|s| s.x[d] * s.x[d]).sum::<f64>() / n
                - mean * mean;
            assert!(mean.abs() <= 1e-12);
            assert!((var - 1.0).abs() <= 1e-9);
        }
        let mean_y: f64 = std.samples.iter().map(|s| s.y[0]).sum::<f64>() / n;
        assert!(mean_y.abs() <= 1e-12);
    }

    #[test]
    fn standardize_is_idempotent_up_to_float_noise() {
        let ds = synthetic_rugged(SyntheticKind::Terrain, 200, 2, 4);
        let once = standardize(&ds).unwrap();
        let twice = standardize(&once).unwrap();
        for (a, b) in once.samples.iter().zip(&twice.samples) {
            for (u, v) in a.x.iter().zip(&b.x) {
                assert!((u - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn standardize_round_trips_through_inverse() {
        let ds = synthetic_rugged(SyntheticKind::Terrain, 100, 3, 5);
        let std = standardize(&ds).unwrap();
        let constants = std.standardization.as_ref().unwrap();
        for (raw, s) in ds.samples.iter().zip(&std.samples) {
            let back = constants.destandardize(s);
            for (u, v) in raw.x.iter().zip(&back.x).chain(raw.y.iter().zip(&back.y)) {
                assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0));
            }
        }
    }

    #[test]
    fn standardize_rejects_zero_variance() {
        let ds = Dataset {
            samples: vec![
                Sample {
                    x: vec![1.0],
                    y: vec![1.0],
                },
                Sample {
                    x: vec![1.0],
                    y: vec![2.0],
                },
            ],
            standardization: None,
            provenance: Provenance::Synthetic {
                kind: SyntheticKind::Terrain,
                seed: 0,
            },
        };
        assert!(matches!(
            standardize(&ds),
            Err(DataError::ZeroVariance { dim: 0 })
        ));
    }

    #[test]
    fn split_80_20_shape_and_determinism() {
        let split = split_80_20(10, 1).unwrap();
        assert_eq!(split.train_indices.len(), 8);
        assert_eq!(split.val_indices.len(), 2);
        assert_eq!(split, split_80_20(10, 1).unwrap());
        assert!(split_80_20(4, 1).is_err());

        for s in [5usize, 17, 100, 333] {
            let split = split_80_20(s, 9).unwrap();
            let mut all: Vec<usize> = split
                .train_indices
                .iter()
                .chain(&split.val_indices)
                .copied()
                .collect();
            all.sort_unstable();
            assert_eq!(all, (0..s).collect::<Vec<_>>());
        }
    }

    #[test]
    fn teacher_dataset_is_realizable() {
        let ds = synthetic_rugged(SyntheticKind::TeacherPwl, 64, 2, 11);
        let (shape, params) = teacher_network(2, 11);
        let l = loss(&shape, &params, &ds.samples).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn synthetic_is_deterministic() {
        for kind in [SyntheticKind::TeacherPwl, SyntheticKind::Terrain] {
            let a = synthetic_rugged(kind, 32, 2, 21);
            let b = synthetic_rugged(kind, 32, 2, 21);
            assert_eq!(a.samples, b.samples);
        }
    }

    #[test]
    fn terrain_slice_is_rugged() {
        let ds = standardize(&synthetic_rugged(SyntheticKind::Terrain, 512, 2, 31)).unwrap();
        let shape = NetworkShape::new(2, 16, 1, PwlActivation::leaky_hard_tanh(0.01));
        let params = init_params(&shape, 77);
        // Slices along a dead unit are flat, so take the most rugged of a
        // few first-layer slices.
        let grid = 2000;
        let mut most_extrema = 0;
        for row in 0..4 {
            let pref = crate::nn::ParamRef {
                kind: crate::nn::ParamKind::W1,
                row,
                col: 0,
            };
            let mut values = Vec::with_capacity(grid + 1);
            let mut probe = params.clone();
            for g in 0..=grid {
                let theta = -6.0 + 12.0 * g as f64 / grid as f64;
                probe.set(pref, theta);
                values.push(loss(&shape, &probe, &ds.samples).unwrap());
            }
            let mut extrema = 0;
            for w in values.windows(3) {
                if (w[1] - w[0]) * (w[2] - w[1]) < 0.0 {
                    extrema += 1;
                }
            }
            most_extrema = most_extrema.max(extrema);
        }
        assert!(most_extrema >= TERRAIN_WAVES, "only {most_extrema} extrema");
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.csv");
        let ds = standardize(&synthetic_rugged(SyntheticKind::Terrain, 20, 2, 41)).unwrap();
        save_cache(&ds, &path).unwrap();
        let loaded = load_csv(&path, &[0, 1], &[2], false).unwrap();
        for (a, b) in ds.samples.iter().zip(&loaded.samples) {
            assert_eq!(a, b);
        }
        assert!(sidecar_path(&path).exists());
    }
}
