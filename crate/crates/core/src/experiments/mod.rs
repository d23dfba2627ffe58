//! Experiment presets and the run driver behind the command-line tool.
//!
//! Output layout for a preset (or a single custom run, under `custom/`):
//!
//! ```text
//! <out>/<preset>/<run_id>.csv
//! <out>/<preset>/summary.json
//! <out>/<preset>/mse.svg
//! <out>/<preset>/ma_e.svg
//! ```

mod config;
mod plot;
mod presets;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

pub use config::ConfigOverrides;
pub use plot::{emit_plot, render_svg, series_from_records, Metric, Series, CLIP_MAX};
pub use presets::{find_preset, preset_catalog, ExperimentPreset, PresetRun, RunDelta};

use crate::error::{Error, Result};
use crate::trainer::{read_csv, CsvSink, RunSummary, TrainConfig, Trainer};

/// Frames used for the post-training inference evaluation.
pub const EVAL_FRAMES: usize = 10_000;

/// Reduced schedule used unless full scale is requested.
pub const CI_EPOCHS: usize = 15;
pub const CI_UPDATES: usize = 400;

/// Base configuration at the reduced (`full_scale = false`) or full
/// training schedule.
pub fn base_config(full_scale: bool) -> TrainConfig {
    let cfg = TrainConfig::default();
    if full_scale {
        cfg
    } else {
        TrainConfig {
            epochs: CI_EPOCHS,
            updates_per_epoch: CI_UPDATES,
            ..cfg
        }
    }
}

/// Trains one configuration, streaming its CSV into `dir`.
pub fn execute_run(cfg: TrainConfig, dir: &Path) -> Result<RunSummary> {
    let path = dir.join(format!("{}.csv", cfg.run_id));
    let mut sink = CsvSink::new(BufWriter::new(File::create(&path)?))?;
    let mut trainer = Trainer::new(cfg)?;
    let mut summary = trainer.run(&mut sink)?;
    sink.into_inner()?;
    if summary.epochs_completed > 0 {
        fn finite(v: f64) -> Option<f64> {
            v.is_finite().then_some(v)
        }
        summary.eval_mse = finite(trainer.evaluate(EVAL_FRAMES)?);
        summary.eval_mse_noise = trainer.evaluate_noisy(EVAL_FRAMES)?.and_then(finite);
    }
    Ok(summary)
}

/// Runs every configuration (up to `jobs` at a time), then writes the
/// summary and both plots. Summaries come back in input order. Runs that
/// never finished an epoch are left out of the plots.
pub fn run_group(configs: Vec<TrainConfig>, dir: &Path, jobs: usize) -> Result<Vec<RunSummary>> {
    if configs.is_empty() {
        return Err(Error::Config("nothing to run".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for c in &configs {
        c.validate()?;
        if !seen.insert(c.run_id.clone()) {
            return Err(Error::Config(format!("duplicate run id '{}'", c.run_id)));
        }
    }
    fs::create_dir_all(dir)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let summaries: Vec<RunSummary> = pool.install(|| {
        use rayon::prelude::*;
        configs
            .into_par_iter()
            .map(|cfg| execute_run(cfg, dir))
            .collect::<Result<Vec<_>>>()
    })?;

    write_summary(&dir.join("summary.json"), &summaries)?;
    // Runs aborted during their first epoch have nothing to plot.
    let plotted: Vec<RunSummary> = summaries
        .iter()
        .filter(|s| s.epochs_completed > 0)
        .cloned()
        .collect();
    if !plotted.is_empty() {
        let csvs = csv_paths(dir, &plotted);
        emit_plot(&csvs, Metric::Mse, false, &dir.join("mse.svg"))?;
        emit_plot(&csvs, Metric::MaE, true, &dir.join("ma_e.svg"))?;
    }
    Ok(summaries)
}

/// Runs a named preset into `<out>/<preset>/`.
pub fn run_preset(
    preset: &ExperimentPreset,
    base: &TrainConfig,
    out: &Path,
    jobs: usize,
) -> Result<Vec<RunSummary>> {
    run_group(preset.configs(base)?, &out.join(preset.name), jobs)
}

fn csv_paths(dir: &Path, summaries: &[RunSummary]) -> Vec<PathBuf> {
    summaries
        .iter()
        .map(|s| dir.join(format!("{}.csv", s.run_id)))
        .collect()
}

pub fn write_summary(path: &Path, summaries: &[RunSummary]) -> Result<()> {
    let text = serde_json::to_string_pretty(summaries)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<RunSummary>> {
    let file = File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// Rebuilds summaries from the CSVs in `dir` for the run ids listed in
/// `dir/summary.json`.
pub fn summaries_from_csv(dir: &Path) -> Result<Vec<RunSummary>> {
    read_summary(&dir.join("summary.json"))?
        .iter()
        .map(|s| {
            let path = dir.join(format!("{}.csv", s.run_id));
            let records = read_csv(BufReader::new(File::open(path)?))?;
            RunSummary::from_records(&s.run_id, &records)
        })
        .collect()
}
