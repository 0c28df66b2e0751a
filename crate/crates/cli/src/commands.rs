use std::cmp::Ordering;
use std::fmt;
use std::path::Path;
use std::time::Instant;

use dualsched::metrics::DEFAULT_PEAK;
use dualsched::predictor::record_trace;
use dualsched::{
    ddim_roundtrip, dual_roundtrip, edit_by_prompt_swap, Condition, DualTimeGrid, MetricReport, NoisePredictor,
};
use serde::{Serialize, Serializer};

use crate::config::{dual_grid_for, Axis, Experiment, ExperimentConfig, PredictorConfig};
use crate::error::CliError;

/// Row key: a sample index, or `"mean"` for aggregate rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SampleId {
    Index(usize),
    Mean,
}

impl Serialize for SampleId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            SampleId::Index(i) => s.serialize_u64(*i as u64),
            SampleId::Mean => s.serialize_str("mean"),
        }
    }
}

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleId::Index(i) => write!(f, "{i}"),
            SampleId::Mean => f.write_str("mean"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ddim,
    Dual,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconstructRow {
    pub sample_id: SampleId,
    pub guidance_scale: f64,
    pub method: Method,
    pub mse: f64,
    pub psnr_db: f64,
    pub ssim: Option<f64>,
    pub max_abs_gap: f64,
    pub runtime_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IrreversibilityRow {
    pub sample_id: SampleId,
    pub guidance_scale: f64,
    pub ddim_gap: f64,
    pub dual_grid_gap: f64,
    pub dual_grid_gap_relative: f64,
    pub dual_z0_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub axis: Axis,
    pub value: f64,
    pub t0: usize,
    pub stride: usize,
    pub steps: usize,
    pub aux_offset: usize,
    pub guidance_scale: f64,
    pub grid_gap_max: f64,
    pub grid_gap_relative_max: f64,
    pub mean_mse: f64,
    pub mean_psnr_db: f64,
    pub mean_ssim: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EditRow {
    pub sample_id: SampleId,
    pub guidance_scale: f64,
    pub source_condition: String,
    pub target_condition: String,
    pub dist_source_mean: f64,
    pub dist_target_mean: f64,
    /// 1 when the edit ended closer to the target mean; a fraction on mean rows.
    pub closer_to_target: f64,
    pub control_psnr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EditedLatent {
    pub sample_id: usize,
    pub guidance_scale: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EditedLatents {
    pub shape: Vec<usize>,
    pub source_condition: Condition,
    pub target_condition: Condition,
    pub entries: Vec<EditedLatent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditReport {
    pub rows: Vec<EditRow>,
    pub edited: EditedLatents,
}

/// Runs `body` against the experiment's predictor, recording every call to
/// `outputs.trace` when that is set.
fn with_predictor<R>(
    exp: &Experiment,
    body: impl FnOnce(&dyn NoisePredictor) -> Result<R, CliError>,
) -> Result<R, CliError> {
    let Some(path) = exp.config.outputs.trace.clone() else {
        return body(exp.model.predictor());
    };
    let mut failure = None;
    let (out, trace) = record_trace(exp.model.predictor(), exp.config.schedule, |rec| {
        body(rec).map(Some).or_else(|e| {
            failure = Some(e);
            Ok(None)
        })
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    trace.write(&path)?;
    Ok(out.expect("set whenever no failure was recorded"))
}

fn by_scale(a: f64, b: f64) -> Ordering {
    a.total_cmp(&b)
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn mean_opt(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.into_iter().collect();
    v.filter(|v| !v.is_empty()).map(mean)
}

fn sorted_scales(exp: &Experiment) -> Vec<f64> {
    let mut scales = exp.config.guidance.scales.clone();
    scales.sort_by(|a, b| by_scale(*a, *b));
    scales.dedup();
    scales
}

/// DDIM and dual round trips for every sample and guidance scale.
pub fn run_reconstruct(config: &ExperimentConfig) -> Result<Vec<ReconstructRow>, CliError> {
    let exp = Experiment::new(config.clone())?;
    let cond = exp.source_condition();
    let scales = sorted_scales(&exp);
    let mut rows = with_predictor(&exp, |p| {
        let mut rows = Vec::new();
        for (i, z0) in exp.samples.iter().enumerate() {
            for &w in &scales {
                let g = exp.guidance(w, cond)?;
                let start = Instant::now();
                let recon = ddim_roundtrip(&exp.schedule, &exp.ddim_grid, p, &g, z0)?;
                let m = MetricReport::compare(z0, &recon, DEFAULT_PEAK)?;
                rows.push(reconstruct_row(i, w, Method::Ddim, &m, start));
                let start = Instant::now();
                let report = dual_roundtrip(&exp.schedule, &exp.dual_grid, p, &g, z0)?;
                rows.push(reconstruct_row(i, w, Method::Dual, &report.metrics, start));
            }
        }
        Ok(rows)
    })?;
    rows.sort_by(|a, b| {
        a.sample_id
            .cmp(&b.sample_id)
            .then(by_scale(a.guidance_scale, b.guidance_scale))
            .then(a.method.cmp(&b.method))
    });
    let mut means = Vec::new();
    for &w in &scales {
        for method in [Method::Ddim, Method::Dual] {
            let group: Vec<&ReconstructRow> = rows
                .iter()
                .filter(|r| r.method == method && r.guidance_scale == w)
                .collect();
            means.push(ReconstructRow {
                sample_id: SampleId::Mean,
                guidance_scale: w,
                method,
                mse: mean(group.iter().map(|r| r.mse)),
                psnr_db: mean(group.iter().map(|r| r.psnr_db)),
                ssim: mean_opt(group.iter().map(|r| r.ssim)),
                max_abs_gap: mean(group.iter().map(|r| r.max_abs_gap)),
                runtime_ms: mean(group.iter().map(|r| r.runtime_ms)),
            });
        }
    }
    rows.extend(means);
    Ok(rows)
}

fn reconstruct_row(i: usize, w: f64, method: Method, m: &MetricReport, start: Instant) -> ReconstructRow {
    ReconstructRow {
        sample_id: SampleId::Index(i),
        guidance_scale: w,
        method,
        mse: m.mse,
        psnr_db: m.psnr_db,
        ssim: m.ssim,
        max_abs_gap: m.max_abs_gap,
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
    }
}

/// DDIM round-trip gap next to the dual grid gap, per sample and scale.
pub fn run_irreversibility(config: &ExperimentConfig) -> Result<Vec<IrreversibilityRow>, CliError> {
    let exp = Experiment::new(config.clone())?;
    let cond = exp.source_condition();
    let scales = sorted_scales(&exp);
    let mut rows = with_predictor(&exp, |p| {
        let mut rows = Vec::new();
        for (i, z0) in exp.samples.iter().enumerate() {
            for &w in &scales {
                let g = exp.guidance(w, cond)?;
                let ddim_gap = ddim_roundtrip(&exp.schedule, &exp.ddim_grid, p, &g, z0)?.max_abs_diff(z0)?;
                let report = dual_roundtrip(&exp.schedule, &exp.dual_grid, p, &g, z0)?;
                rows.push(IrreversibilityRow {
                    sample_id: SampleId::Index(i),
                    guidance_scale: w,
                    ddim_gap,
                    dual_grid_gap: report.grid_gap,
                    dual_grid_gap_relative: report.grid_gap_relative,
                    dual_z0_gap: report.z0_gap,
                });
            }
        }
        Ok(rows)
    })?;
    for &w in &scales {
        let group: Vec<&IrreversibilityRow> = rows.iter().filter(|r| r.guidance_scale == w).collect();
        let row = IrreversibilityRow {
            sample_id: SampleId::Mean,
            guidance_scale: w,
            ddim_gap: mean(group.iter().map(|r| r.ddim_gap)),
            dual_grid_gap: mean(group.iter().map(|r| r.dual_grid_gap)),
            dual_grid_gap_relative: mean(group.iter().map(|r| r.dual_grid_gap_relative)),
            dual_z0_gap: mean(group.iter().map(|r| r.dual_z0_gap)),
        };
        rows.push(row);
    }
    Ok(rows)
}

/// Grid for one ablation value.
///
/// The steps axis keeps `t0` and shrinks the stride so the top time stays at
/// or below the configured one; the auxiliary offset follows the config.
pub fn ablation_grid(config: &ExperimentConfig, axis: Axis, value: f64) -> Result<DualTimeGrid, CliError> {
    let g = &config.grid;
    match axis {
        Axis::Tau => dual_grid_for(g.t0, g.stride, g.steps, Some(value), None),
        Axis::Steps => {
            let steps = value as usize;
            let top = g.t0 + (g.steps - 1) * g.stride;
            let stride = if steps <= 1 {
                g.stride
            } else {
                (top - g.t0) / (steps - 1)
            };
            dual_grid_for(g.t0, stride, steps, g.tau_fraction, g.aux_offset)
        }
    }
}

/// Dual round trips for each value on one ablation axis.
///
/// Returns every row; rows with `passed == false` exceeded the tolerance.
pub fn run_ablate(config: &ExperimentConfig, axis: Option<Axis>) -> Result<Vec<AblationRow>, CliError> {
    let exp = Experiment::new(config.clone())?;
    let axis = axis.unwrap_or(config.ablation.axis);
    let values: Vec<f64> = match axis {
        Axis::Tau => config.ablation.tau_values.clone(),
        Axis::Steps => config.ablation.steps_values.iter().map(|&s| s as f64).collect(),
    };
    let mut grids = Vec::with_capacity(values.len());
    for &v in &values {
        let grid = ablation_grid(config, axis, v)?;
        grid.check(&exp.schedule)
            .map_err(|e| CliError::config(format!("ablation grid: {e}")))?;
        grids.push(grid);
    }
    let cond = exp.source_condition();
    let scales = sorted_scales(&exp);
    let tolerance = config.ablation.tolerance;
    with_predictor(&exp, |p| {
        let mut rows = Vec::new();
        for (&value, grid) in values.iter().zip(&grids) {
            for &w in &scales {
                let g = exp.guidance(w, cond)?;
                let reports = exp
                    .samples
                    .iter()
                    .map(|z0| dual_roundtrip(&exp.schedule, grid, p, &g, z0))
                    .collect::<Result<Vec<_>, _>>()?;
                let rel = reports.iter().map(|r| r.grid_gap_relative).fold(0.0, f64::max);
                rows.push(AblationRow {
                    axis,
                    value,
                    t0: grid.t0(),
                    stride: grid.stride(),
                    steps: grid.steps(),
                    aux_offset: grid.aux_offset(),
                    guidance_scale: w,
                    grid_gap_max: reports.iter().map(|r| r.grid_gap).fold(0.0, f64::max),
                    grid_gap_relative_max: rel,
                    mean_mse: mean(reports.iter().map(|r| r.metrics.mse)),
                    mean_psnr_db: mean(reports.iter().map(|r| r.metrics.psnr_db)),
                    mean_ssim: mean_opt(reports.iter().map(|r| r.metrics.ssim)),
                    passed: rel <= tolerance,
                });
            }
        }
        Ok(rows)
    })
}

/// Inverts under the source condition and samples under the target.
///
/// Needs the mixture predictor, whose component means give the distances.
pub fn run_edit(config: &ExperimentConfig) -> Result<EditReport, CliError> {
    if !matches!(config.predictor, PredictorConfig::Mixture { .. }) {
        return Err(CliError::config("edit needs predictor.kind = \"mixture\""));
    }
    let target = config
        .guidance
        .target_condition
        .ok_or_else(|| CliError::config("edit needs guidance.target_condition"))?;
    let exp = Experiment::new(config.clone())?;
    let gmm = exp.model.mixture().expect("mixture predictor");
    let source = exp.source_condition();
    let target = Condition::from(target);
    let source_mean = gmm.mean(source).map_err(|e| CliError::config(e.to_string()))?;
    let target_mean = gmm.mean(target).map_err(|e| CliError::config(e.to_string()))?;
    let scales = sorted_scales(&exp);
    let (mut rows, entries) = with_predictor(&exp, |p| {
        let mut rows = Vec::new();
        let mut entries = Vec::new();
        for (i, z0) in exp.samples.iter().enumerate() {
            for &w in &scales {
                let g_src = exp.guidance(w, source)?;
                let g_tgt = exp.guidance(w, target)?;
                let edited = edit_by_prompt_swap(&exp.schedule, &exp.dual_grid, p, &g_src, &g_tgt, z0)?;
                let control = dual_roundtrip(&exp.schedule, &exp.dual_grid, p, &g_src, z0)?;
                let ds = edited.distance(&source_mean)?;
                let dt = edited.distance(&target_mean)?;
                rows.push(EditRow {
                    sample_id: SampleId::Index(i),
                    guidance_scale: w,
                    source_condition: source.to_string(),
                    target_condition: target.to_string(),
                    dist_source_mean: ds,
                    dist_target_mean: dt,
                    closer_to_target: if dt < ds { 1.0 } else { 0.0 },
                    control_psnr_db: control.metrics.psnr_db,
                });
                entries.push(EditedLatent {
                    sample_id: i,
                    guidance_scale: w,
                    values: edited.into_values(),
                });
            }
        }
        Ok((rows, entries))
    })?;
    for &w in &scales {
        let group: Vec<&EditRow> = rows.iter().filter(|r| r.guidance_scale == w).collect();
        let row = EditRow {
            sample_id: SampleId::Mean,
            guidance_scale: w,
            source_condition: source.to_string(),
            target_condition: target.to_string(),
            dist_source_mean: mean(group.iter().map(|r| r.dist_source_mean)),
            dist_target_mean: mean(group.iter().map(|r| r.dist_target_mean)),
            closer_to_target: mean(group.iter().map(|r| r.closer_to_target)),
            control_psnr_db: mean(group.iter().map(|r| r.control_psnr_db)),
        };
        rows.push(row);
    }
    Ok(EditReport {
        rows,
        edited: EditedLatents {
            shape: exp.config.data.shape.clone(),
            source_condition: source,
            target_condition: target,
            entries,
        },
    })
}

/// Writes rows with a header line to `path`, or to stdout when `None`.
pub fn write_csv<T: Serialize>(rows: &[T], path: Option<&Path>) -> Result<(), CliError> {
    match path {
        Some(path) => {
            let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
            write_rows(csv::Writer::from_writer(file), rows)
        }
        None => write_rows(csv::Writer::from_writer(std::io::stdout().lock()), rows),
    }
}

fn write_rows<W: std::io::Write, T: Serialize>(mut w: csv::Writer<W>, rows: &[T]) -> Result<(), CliError> {
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| CliError::io("csv output", e))?;
    Ok(())
}

pub fn write_edited(edited: &EditedLatents, path: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(edited).expect("edited latents serialize");
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
