//! CSV records plus a TOML companion holding generator settings, split and
//! scaling.
//!
//! The CSV has a header `f000,…,f499,class` and one row per record. Values are
//! written in shortest round-trip form so a reload is bit-identical.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    DatasetError, Dataset, DipoleMode, FeatureScaling, GeneratorConfig, LabeledSignal, LevelBand,
    Result, SplitAssignment, Subset, NUM_CLASSES,
};
use crate::fsutil::write_atomic;
use crate::physics::{PhotonSource, TauWindow};

const FORMAT: &str = "etpa-dataset-v1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    format: String,
    n_records: usize,
    n_features: usize,
    generator: GeneratorMeta,
    split: Option<SplitMeta>,
    scaling: Option<ScalingMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorMeta {
    band_low_nm: f64,
    band_high_nm: f64,
    step_nm: f64,
    lambda_signal_nm: f64,
    lambda_idler_nm: f64,
    te_fs: f64,
    area_um2: f64,
    per_class: usize,
    n_samples: usize,
    tau_start_fs: f64,
    tau_end_fs: f64,
    seed: u64,
    dipoles: String,
    noise_std: f64,
    peak_normalize: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitMeta {
    /// One character per record: t(rain), v(alidation), s (test).
    assignment: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScalingMeta {
    min: Vec<f64>,
    max: Vec<f64>,
}

/// `data.csv` → `data.meta.toml`.
pub fn metadata_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.toml")
}

fn feature_header(n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len().max(3);
    (0..n)
        .map(|j| format!("f{j:0width$}"))
        .chain(std::iter::once("class".to_string()))
        .collect()
}

fn to_meta(ds: &Dataset) -> Metadata {
    let c = &ds.config;
    Metadata {
        format: FORMAT.to_string(),
        n_records: ds.records.len(),
        n_features: ds.n_features(),
        generator: GeneratorMeta {
            band_low_nm: c.band.low(),
            band_high_nm: c.band.high(),
            step_nm: c.band.step(),
            lambda_signal_nm: c.source.lambda_signal(),
            lambda_idler_nm: c.source.lambda_idler(),
            te_fs: c.source.entanglement_time(),
            area_um2: c.source.interaction_area(),
            per_class: c.per_class,
            n_samples: c.n_samples,
            tau_start_fs: c.window.start,
            tau_end_fs: c.window.end,
            seed: c.seed,
            dipoles: c.dipoles.as_str().to_string(),
            noise_std: c.noise_std,
            peak_normalize: c.peak_normalize,
        },
        split: ds.split.as_ref().map(|s| SplitMeta {
            assignment: s.tags().iter().map(Subset::tag).collect(),
        }),
        scaling: ds.scaling.as_ref().map(|s| ScalingMeta {
            min: s.min.clone(),
            max: s.max.clone(),
        }),
    }
}

/// Write the CSV and its metadata companion, each atomically.
pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let n = ds.n_features();
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(feature_header(n))?;
        let mut row: Vec<String> = Vec::with_capacity(n + 1);
        for r in &ds.records {
            row.clear();
            row.extend(r.features.iter().map(|v| v.to_string()));
            row.push(r.class_index.to_string());
            out.write_record(&row)?;
        }
        out.flush()
    })?;
    let meta = toml::to_string(&to_meta(ds)).map_err(|e| DatasetError::Metadata {
        path: metadata_path(path).display().to_string(),
        reason: e.to_string(),
    })?;
    write_atomic(&metadata_path(path), |w| w.write_all(meta.as_bytes()))?;
    Ok(())
}

fn read_records(path: &Path, n_features: usize) -> Result<Vec<LabeledSignal>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| DatasetError::Malformed {
            line: 0,
            reason: e.to_string(),
        })?;
    let mut records = Vec::new();
    let expected_header = feature_header(n_features);
    for (i, row) in rdr.records().enumerate() {
        let line = i + 1;
        let row = row.map_err(|e| DatasetError::Malformed {
            line,
            reason: e.to_string(),
        })?;
        if line == 1 {
            if row.len() != expected_header.len() {
                return Err(DatasetError::FeatureCount {
                    line,
                    expected: n_features,
                    found: row.len().saturating_sub(1),
                });
            }
            if row.iter().ne(expected_header.iter().map(String::as_str)) {
                return Err(DatasetError::Malformed {
                    line,
                    reason: "unexpected header".into(),
                });
            }
            continue;
        }
        if row.len() != n_features + 1 {
            return Err(DatasetError::FeatureCount {
                line,
                expected: n_features,
                found: row.len().saturating_sub(1),
            });
        }
        let label = &row[n_features];
        let class_index = match label.trim().parse::<u8>() {
            Ok(c) if (1..=NUM_CLASSES as u8).contains(&c) => c,
            _ => {
                return Err(DatasetError::UnknownClass {
                    line,
                    label: label.to_string(),
                })
            }
        };
        let features = row
            .iter()
            .take(n_features)
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| DatasetError::Malformed {
                    line,
                    reason: format!("bad number {s:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        records.push(LabeledSignal {
            features,
            class_index,
        });
    }
    Ok(records)
}

fn meta_error(path: &Path, reason: impl ToString) -> DatasetError {
    DatasetError::Metadata {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

/// Load a dataset written by [`write_dataset`].
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mpath = metadata_path(path);
    let text = fs::read_to_string(&mpath)?;
    let meta: Metadata = toml::from_str(&text).map_err(|e| meta_error(&mpath, e))?;
    if meta.format != FORMAT {
        return Err(meta_error(&mpath, format!("unknown format {:?}", meta.format)));
    }
    let g = &meta.generator;
    let band = LevelBand::new(g.band_low_nm, g.band_high_nm, g.step_nm)?;
    let source = PhotonSource::new(g.lambda_signal_nm, g.lambda_idler_nm, g.te_fs, g.area_um2)
        .map_err(|e| meta_error(&mpath, e))?;
    let window = TauWindow::new(g.tau_start_fs, g.tau_end_fs).map_err(|e| meta_error(&mpath, e))?;
    let dipoles = DipoleMode::parse(&g.dipoles)
        .ok_or_else(|| meta_error(&mpath, format!("unknown dipole mode {:?}", g.dipoles)))?;
    if g.n_samples != meta.n_features {
        return Err(meta_error(&mpath, "n_samples and n_features disagree"));
    }
    let config = GeneratorConfig {
        band,
        source,
        per_class: g.per_class,
        n_samples: g.n_samples,
        window,
        seed: g.seed,
        dipoles,
        noise_std: g.noise_std,
        peak_normalize: g.peak_normalize,
    };

    let records = read_records(path, meta.n_features)?;
    if records.len() != meta.n_records {
        return Err(meta_error(
            &mpath,
            format!("expects {} records, CSV has {}", meta.n_records, records.len()),
        ));
    }
    let split = match meta.split {
        Some(s) => {
            let tags = s
                .assignment
                .chars()
                .map(|c| {
                    Subset::from_tag(c)
                        .ok_or_else(|| meta_error(&mpath, format!("bad split tag {c:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if tags.len() != records.len() {
                return Err(meta_error(&mpath, "split length differs from record count"));
            }
            Some(SplitAssignment::from_tags(tags))
        }
        None => None,
    };
    let scaling = match meta.scaling {
        Some(s) => {
            if s.min.len() != meta.n_features || s.max.len() != meta.n_features {
                return Err(meta_error(&mpath, "scaling length differs from feature count"));
            }
            Some(FeatureScaling {
                min: s.min,
                max: s.max,
            })
        }
        None => None,
    };
    Ok(Dataset {
        config,
        records,
        split,
        scaling,
    })
}

impl From<csv::Error> for DatasetError {
    fn from(e: csv::Error) -> Self {
        DatasetError::Malformed {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            reason: e.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_dataset, DEFAULT_RATIOS};

    fn small() -> Dataset {
        let cfg = GeneratorConfig {
            per_class: 6,
            n_samples: 30,
            ..GeneratorConfig::default()
        };
        let mut ds = generate_dataset(&cfg).unwrap();
        ds.split_with_seed(DEFAULT_RATIOS, 9).unwrap();
        ds
    }

    #[test]
    fn header_names() {
        let h = feature_header(500);
        assert_eq!(h[0], "f000");
        assert_eq!(h[499], "f499");
        assert_eq!(h[500], "class");
        assert_eq!(feature_header(1001)[7], "f0007");
    }

    #[test]
    fn write_then_read_is_equal() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let ds = small();
        write_dataset(&ds, &p).unwrap();
        assert!(metadata_path(&p).exists());
        let back = read_dataset(&p).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn line_count_is_records_plus_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let ds = small();
        write_dataset(&ds, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), ds.len() + 1);
    }

    fn corrupt(edit: impl Fn(&str) -> String) -> DatasetError {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        write_dataset(&small(), &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        fs::write(&p, edit(&text)).unwrap();
        read_dataset(&p).unwrap_err()
    }

    #[test]
    fn class_five_is_a_label_error() {
        let err = corrupt(|t| {
            let mut lines: Vec<String> = t.lines().map(String::from).collect();
            let l = &mut lines[2];
            let cut = l.rfind(',').unwrap();
            l.truncate(cut);
            l.push_str(",5");
            lines.join("\n") + "\n"
        });
        assert!(matches!(err, DatasetError::UnknownClass { line: 3, .. }), "{err}");
    }

    #[test]
    fn short_row_is_a_feature_count_error() {
        let err = corrupt(|t| {
            let mut lines: Vec<String> = t.lines().map(String::from).collect();
            let l = &mut lines[4];
            let cut = l.find(',').unwrap();
            *l = l[cut + 1..].to_string();
            lines.join("\n") + "\n"
        });
        assert!(
            matches!(err, DatasetError::FeatureCount { line: 5, expected: 30, found: 29 }),
            "{err}"
        );
    }

    #[test]
    fn garbage_number_is_malformed() {
        let err = corrupt(|t| {
            let mut lines: Vec<String> = t.lines().map(str::to_string).collect();
            let rest = lines[1].split_once(',').unwrap().1.to_string();
            lines[1] = format!("zz,{rest}");
            lines.join("\n")
        });
        assert!(matches!(err, DatasetError::Malformed { .. }), "{err}");
    }

    #[test]
    fn missing_metadata_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        write_dataset(&small(), &p).unwrap();
        fs::remove_file(metadata_path(&p)).unwrap();
        assert!(matches!(read_dataset(&p), Err(DatasetError::Io(_))));
    }
}
