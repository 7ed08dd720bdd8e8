use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::output::{create_csv, finish, fmt_na, fmt_opt, open_csv};
use super::{ExperimentConfig, ExperimentError, Manifest};
use crate::model::ModelVariant;
use crate::scoring::{median, relative_score, LossSpec, Period, ScoreRecord};

/// Display limits of the relative-score histogram.
pub const HISTOGRAM_LIMIT: f64 = 0.5;
pub const HISTOGRAM_BIN_WIDTH: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeScore {
    pub basin_id: String,
    pub model: String,
    pub loss_kind: String,
    pub level: Option<f64>,
    pub relative_score: f64,
}

/// Median over basins for one (model, loss) cell; `None` when no basin qualifies.
#[derive(Debug, Clone, PartialEq)]
pub struct MedianCell {
    pub model: String,
    pub loss: LossSpec,
    pub median: Option<f64>,
    pub n_basins: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub model: String,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub basin_id: String,
    pub model: String,
    pub loss_kind: String,
    pub level: Option<f64>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SummaryTables {
    pub relative: Vec<RelativeScore>,
    pub median_relative: Vec<MedianCell>,
    pub median_coverage: Vec<MedianCell>,
    pub histogram: Vec<HistogramBin>,
    pub exclusions: Vec<Exclusion>,
}

impl SummaryTables {
    pub fn median_relative_of(&self, model: ModelVariant, loss: &LossSpec) -> Option<&MedianCell> {
        self.median_relative
            .iter()
            .find(|c| c.model == model.name() && c.loss == *loss)
    }

    pub fn median_coverage_of(&self, model: ModelVariant, loss: &LossSpec) -> Option<&MedianCell> {
        self.median_coverage
            .iter()
            .find(|c| c.model == model.name() && c.loss == *loss)
    }
}

fn n_bins() -> usize {
    (2.0 * HISTOGRAM_LIMIT / HISTOGRAM_BIN_WIDTH).round() as usize
}

fn bin_index(v: f64) -> usize {
    let k = ((v + HISTOGRAM_LIMIT) / HISTOGRAM_BIN_WIDTH).floor();
    (k.max(0.0) as usize).min(n_bins() - 1)
}

/// Validation-period summaries against `benchmark`. Cells are keyed by model
/// and loss; rows outside `models`/`losses` are ignored. The result does not
/// depend on the order of `records`.
pub fn summarize(
    records: &[ScoreRecord],
    benchmark: ModelVariant,
    models: &[ModelVariant],
    losses: &[LossSpec],
) -> SummaryTables {
    let key = |r: &ScoreRecord| r.loss_spec().ok().filter(|l| losses.contains(l));
    // basin -> (model, loss) -> record, BTreeMap so iteration is sorted
    let mut by_basin: BTreeMap<&str, Vec<(&str, LossSpec, &ScoreRecord)>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.period == Period::Validation) {
        if let Some(l) = key(r) {
            by_basin.entry(&r.basin_id).or_default().push((&r.model, l, r));
        }
    }

    let mut tables = SummaryTables::default();
    for (&basin, rows) in &by_basin {
        for &model in models.iter().filter(|m| **m != benchmark) {
            for loss in losses {
                let find = |m: ModelVariant| {
                    rows.iter()
                        .find(|(name, l, _)| *name == m.name() && l == loss)
                        .map(|(_, _, r)| *r)
                };
                let Some(own) = find(model) else { continue };
                let exclude = |reason: String| Exclusion {
                    basin_id: basin.to_string(),
                    model: model.name().to_string(),
                    loss_kind: loss.kind().to_string(),
                    level: loss.level(),
                    reason,
                };
                let Some(bench) = find(benchmark) else {
                    tables.exclusions.push(exclude("no benchmark score".into()));
                    continue;
                };
                match relative_score(bench.avg_score, own.avg_score) {
                    Ok(rel) => tables.relative.push(RelativeScore {
                        basin_id: basin.to_string(),
                        model: model.name().to_string(),
                        loss_kind: loss.kind().to_string(),
                        level: loss.level(),
                        relative_score: rel,
                    }),
                    Err(e) => {
                        log::warn!("basin {basin} {model} {loss}: excluded ({e})");
                        tables.exclusions.push(exclude(e.to_string()));
                    }
                }
            }
        }
    }

    for &model in models {
        for loss in losses {
            let values: Vec<f64> = if model == benchmark {
                Vec::new()
            } else {
                tables
                    .relative
                    .iter()
                    .filter(|r| r.model == model.name() && r.loss_kind == loss.kind() && r.level == loss.level())
                    .map(|r| r.relative_score)
                    .collect()
            };
            if model != benchmark {
                tables.median_relative.push(MedianCell {
                    model: model.name().into(),
                    loss: *loss,
                    median: median(&values),
                    n_basins: values.len(),
                });
            }
            let cov: Vec<f64> = by_basin
                .values()
                .flat_map(|rows| rows.iter())
                .filter(|(name, l, _)| *name == model.name() && l == loss)
                .map(|(_, _, r)| r.coverage)
                .filter(|c| c.is_finite())
                .collect();
            tables.median_coverage.push(MedianCell {
                model: model.name().into(),
                loss: *loss,
                median: median(&cov),
                n_basins: cov.len(),
            });
        }
    }

    for &model in models.iter().filter(|m| **m != benchmark) {
        let mut counts = vec![0usize; n_bins()];
        for r in tables
            .relative
            .iter()
            .filter(|r| r.model == model.name() && r.loss_kind == "quantile")
        {
            counts[bin_index(r.relative_score)] += 1;
        }
        for (k, count) in counts.into_iter().enumerate() {
            tables.histogram.push(HistogramBin {
                model: model.name().into(),
                lower: -HISTOGRAM_LIMIT + k as f64 * HISTOGRAM_BIN_WIDTH,
                upper: -HISTOGRAM_LIMIT + (k + 1) as f64 * HISTOGRAM_BIN_WIDTH,
                count,
            });
        }
    }
    tables
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>, ExperimentError> {
    let mut rdr = open_csv(path)?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| ExperimentError::Data(format!("{}: {e}", path.display()))))
        .collect()
}

/// Writes the summary tables into `dir`; returns the files written.
pub fn write_summary(dir: &Path, hash: &str, tables: &SummaryTables) -> Result<Vec<PathBuf>, ExperimentError> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let path = dir.join("relative_scores.csv");
    let mut w = create_csv(&path, hash)?;
    w.write_record(["basin_id", "model", "loss_kind", "level", "relative_score"])?;
    for r in &tables.relative {
        w.write_record(&[
            r.basin_id.clone(),
            r.model.clone(),
            r.loss_kind.clone(),
            fmt_opt(r.level),
            r.relative_score.to_string(),
        ])?;
    }
    finish(w)?;
    written.push(path);

    for (name, cells, value) in [
        ("median_relative.csv", &tables.median_relative, "median_relative_score"),
        ("median_coverage.csv", &tables.median_coverage, "median_coverage"),
    ] {
        let path = dir.join(name);
        let mut w = create_csv(&path, hash)?;
        w.write_record(["model", "loss_kind", "level", value, "n_basins"])?;
        for c in cells {
            w.write_record(&[
                c.model.clone(),
                c.loss.kind().to_string(),
                fmt_opt(c.loss.level()),
                fmt_na(c.median),
                c.n_basins.to_string(),
            ])?;
        }
        finish(w)?;
        written.push(path);
    }

    let path = dir.join("histogram.csv");
    let mut w = create_csv(&path, hash)?;
    w.write_record(["model", "bin_lower", "bin_upper", "count"])?;
    for b in &tables.histogram {
        w.write_record(&[b.model.clone(), b.lower.to_string(), b.upper.to_string(), b.count.to_string()])?;
    }
    finish(w)?;
    written.push(path);

    let path = dir.join("exclusions.csv");
    let mut w = create_csv(&path, hash)?;
    w.write_record(["basin_id", "model", "loss_kind", "level", "reason"])?;
    for e in &tables.exclusions {
        w.write_record(&[
            e.basin_id.clone(),
            e.model.clone(),
            e.loss_kind.clone(),
            fmt_opt(e.level),
            e.reason.clone(),
        ])?;
    }
    finish(w)?;
    written.push(path);
    Ok(written)
}

pub(super) fn load_run(run_dir: &Path) -> Result<(Manifest, ExperimentConfig, SummaryTables), ExperimentError> {
    let manifest = Manifest::load(run_dir)?;
    let config = manifest.config.clone();
    let records = read_scores(&run_dir.join("scores.csv"))?;
    let tables = summarize(&records, config.benchmark, &config.variants, &config.loss_specs());
    Ok((manifest, config, tables))
}

/// Reads `scores.csv` from a run directory and writes `summary/*.csv`.
pub fn summarize_run(run_dir: &Path) -> Result<SummaryTables, ExperimentError> {
    let (manifest, _, tables) = load_run(run_dir)?;
    write_summary(&run_dir.join("summary"), &manifest.manifest_hash, &tables)?;
    Ok(tables)
}
