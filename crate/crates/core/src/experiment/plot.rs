use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use super::output::{create_csv, finish, fmt_opt, open_csv};
use super::summary::{load_run, write_summary};
use super::{column_name, ExperimentError, PairedScore, SimulationTable};
use crate::model::ModelVariant;
use crate::scoring::{LossSpec, Period};

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSelection {
    pub basin: String,
    pub from: NaiveDate,
    pub to: NaiveDate,
    /// Defaults to the run's benchmark variant.
    pub model: Option<ModelVariant>,
}

/// Writes plot-ready tables under `<run_dir>/plot`:
/// `hydrograph_<basin>_<model>.csv` for the selected window, `scatter.csv`
/// with paired validation scores, and the histogram, heatmap and coverage
/// tables. The selection is checked before anything is written.
pub fn emit_plot_data(run_dir: &Path, selection: &PlotSelection) -> Result<Vec<PathBuf>, ExperimentError> {
    let (manifest, config, tables) = load_run(run_dir)?;
    let model = selection.model.unwrap_or(config.benchmark);
    if !config.variants.contains(&model) {
        return Err(ExperimentError::Selection(format!("model {model} was not part of the run")));
    }
    if !manifest.basins.contains(&selection.basin) {
        return Err(ExperimentError::Selection(format!("unknown basin {}", selection.basin)));
    }
    if selection.from > selection.to {
        return Err(ExperimentError::Selection(format!(
            "empty window {} .. {}",
            selection.from, selection.to
        )));
    }
    let sims = SimulationTable::load(run_dir, &selection.basin)?;
    let (Some(first), Some(last)) = (sims.dates.first(), sims.dates.last()) else {
        return Err(ExperimentError::Selection(format!("no simulated days for {}", selection.basin)));
    };
    if selection.from < *first || selection.to > *last {
        return Err(ExperimentError::Selection(format!(
            "window {} .. {} outside the simulated range {first} .. {last}",
            selection.from, selection.to
        )));
    }
    let quantiles: Vec<LossSpec> = config
        .loss_specs()
        .into_iter()
        .filter(|l| matches!(l, LossSpec::Quantile(_)))
        .collect();
    let columns: Vec<&[f64]> = quantiles
        .iter()
        .map(|l| {
            let name = column_name(model, l);
            sims.column(&name)
                .ok_or_else(|| ExperimentError::Data(format!("simulation column {name} missing")))
        })
        .collect::<Result<_, _>>()?;
    let rows: Vec<usize> = (0..sims.dates.len())
        .filter(|&i| sims.dates[i] >= selection.from && sims.dates[i] <= selection.to)
        .collect();
    if rows.is_empty() {
        return Err(ExperimentError::Selection("selection contains no days".into()));
    }

    let hash = &manifest.manifest_hash;
    let dir = run_dir.join("plot");
    let mut written = Vec::new();

    let path = dir.join(format!("hydrograph_{}_{}.csv", selection.basin, model.name()));
    let mut w = create_csv(&path, hash)?;
    let mut header = vec!["date".to_string(), "q_obs".to_string()];
    header.extend(quantiles.iter().map(LossSpec::label));
    w.write_record(&header)?;
    for &i in &rows {
        let mut row = vec![sims.dates[i].format("%Y-%m-%d").to_string(), fmt_opt(sims.q_obs[i])];
        row.extend(columns.iter().map(|c| c[i].to_string()));
        w.write_record(&row)?;
    }
    finish(w)?;
    written.push(path);

    let paired_path = run_dir.join("paired_scores.csv");
    let paired: Vec<PairedScore> = open_csv(&paired_path)?
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| ExperimentError::Data(format!("{}: {e}", paired_path.display())))?;
    let path = dir.join("scatter.csv");
    let mut w = create_csv(&path, hash)?;
    w.write_record([
        "basin_id",
        "model",
        "level",
        "score_quantile_calibrated",
        "score_squared_error_calibrated",
    ])?;
    for p in paired.iter().filter(|p| p.period == Period::Validation) {
        w.write_record(&[
            p.basin_id.clone(),
            p.model.clone(),
            p.level.to_string(),
            p.score_quantile_calibrated.to_string(),
            p.score_squared_error_calibrated.to_string(),
        ])?;
    }
    finish(w)?;
    written.push(path);

    written.extend(write_summary(&dir, hash, &tables)?);
    Ok(written)
}
