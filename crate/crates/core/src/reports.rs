//! Report records and the published-measurement consistency check.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perf_model::{CostBreakdown, CostMode};
use crate::planner::{PlanResult, SweepRow};
use crate::simulator::SimResult;
use crate::speedup::{invert_alpha_from_omega, SpeedupReport};

pub const MEASURED_ROW_HEADER: [&str; 13] = [
    "target",
    "draft",
    "task",
    "gpu",
    "prefill",
    "bsz",
    "gamma",
    "gamma_t_d_ms",
    "t_v_ms",
    "omega",
    "t_ar_ms",
    "t_sd_ms",
    "speedup",
];

pub const SWEEP_HEADER: &str =
    "batch,seqlen,t_target_ms,t_draft_ms,t_select_ms,t_verify_ms,v_ratio,d_ratio,omega,speedup";

pub const BREAKDOWN_HEADER: &str = "batch,seqlen,mode,param_load_ms,kv_load_ms,act_load_ms,compute_ms,total_ms";

pub const RESIDUAL_HEADER: &str = "line,target,draft,task,gpu,prefill,bsz,gamma,omega,implied_alpha,\
t_sd_ms,t_sd_pred_ms,t_sd_residual,speedup,x_pred_reported,x_reported_residual,x_pred_formula,\
x_formula_residual,within_1pct,within_10pct";

/// Tolerance on `t_ar / t_sd` against the published speedup.
pub const SPEEDUP_TOLERANCE: f64 = 0.01;
/// Tolerance on `(gamma * T_D + T_V) / omega` against the published T_SD.
pub const T_SD_TOLERANCE: f64 = 0.10;

/// One measured speculative decoding configuration with per-cycle timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredRow {
    pub target: String,
    pub draft: String,
    pub task: String,
    pub gpu: String,
    pub prefill: u64,
    pub bsz: u64,
    pub gamma: u32,
    /// Total drafting time of one cycle.
    pub gamma_t_d_ms: f64,
    pub t_v_ms: f64,
    pub omega: f64,
    pub t_ar_ms: f64,
    pub t_sd_ms: f64,
    pub speedup: f64,
}

impl MeasuredRow {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let times = [
            ("gamma_t_d_ms", self.gamma_t_d_ms),
            ("t_v_ms", self.t_v_ms),
            ("t_ar_ms", self.t_ar_ms),
            ("t_sd_ms", self.t_sd_ms),
            ("speedup", self.speedup),
        ];
        if let Some((name, v)) = times.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(format!("{name} must be > 0, got {v}"));
        }
        if self.gamma == 0 {
            return Err("gamma must be >= 1".into());
        }
        if !(self.omega >= 1.0 && self.omega <= f64::from(self.gamma) + 1.0) {
            return Err(format!("omega {} outside [1, gamma + 1]", self.omega));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

/// Rows that parsed and validated, keyed by line, plus one error per
/// rejected line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeasuredRows {
    pub rows: Vec<(u64, MeasuredRow)>,
    pub errors: Vec<RowError>,
}

impl MeasuredRows {
    pub fn from_reader(reader: impl Read, source: &str) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let header = csv.headers()?.clone();
        if header.iter().ne(MEASURED_ROW_HEADER.iter().copied()) {
            return Err(Error::Table {
                path: source.into(),
                line: 1,
                message: format!("expected header `{}`", MEASURED_ROW_HEADER.join(",")),
            });
        }
        let mut out = MeasuredRows::default();
        for record in csv.records() {
            let record = match record {
                Ok(r) => r,
                Err(e) => {
                    let line = e.position().map_or(0, |p| p.line());
                    out.errors.push(RowError {
                        line,
                        message: e.to_string(),
                    });
                    continue;
                }
            };
            let line = record.position().map_or(0, |p| p.line());
            let parsed = if record.len() != header.len() {
                Err(format!("expected {} fields, found {}", header.len(), record.len()))
            } else {
                record
                    .deserialize::<MeasuredRow>(Some(&header))
                    .map_err(|e| e.to_string())
                    .and_then(|row| row.validate().map(|()| row))
            };
            match parsed {
                Ok(row) => out.rows.push((line, row)),
                Err(message) => out.errors.push(RowError { line, message }),
            }
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_reader(File::open(path)?, &path.display().to_string())
    }
}

/// Arithmetic consistency of one published row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowCheck {
    pub line: u64,
    pub row: MeasuredRow,
    pub implied_alpha: f64,
    pub t_sd_pred_ms: f64,
    pub t_sd_residual: f64,
    pub x_pred_reported: f64,
    pub x_reported_residual: f64,
    pub x_pred_formula: f64,
    pub x_formula_residual: f64,
}

impl RowCheck {
    pub fn within_1pct(&self) -> bool {
        self.x_reported_residual.abs() <= SPEEDUP_TOLERANCE
    }

    pub fn within_10pct(&self) -> bool {
        self.t_sd_residual.abs() <= T_SD_TOLERANCE
    }
}

fn rel(pred: f64, published: f64) -> f64 {
    pred / published - 1.0
}

pub fn check_row(line: u64, row: &MeasuredRow) -> Result<RowCheck> {
    let t_sd_pred_ms = (row.gamma_t_d_ms + row.t_v_ms) / row.omega;
    let x_pred_reported = row.t_ar_ms / row.t_sd_ms;
    let x_pred_formula = row.t_ar_ms / t_sd_pred_ms;
    Ok(RowCheck {
        line,
        row: row.clone(),
        implied_alpha: invert_alpha_from_omega(row.gamma, row.omega)?,
        t_sd_pred_ms,
        t_sd_residual: rel(t_sd_pred_ms, row.t_sd_ms),
        x_pred_reported,
        x_reported_residual: rel(x_pred_reported, row.speedup),
        x_pred_formula,
        x_formula_residual: rel(x_pred_formula, row.speedup),
    })
}

pub fn write_residuals(out: &mut impl Write, checks: &[RowCheck]) -> Result<()> {
    writeln!(out, "{RESIDUAL_HEADER}")?;
    let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for c in checks {
        let r = &c.row;
        csv.write_record([
            c.line.to_string(),
            r.target.clone(),
            r.draft.clone(),
            r.task.clone(),
            r.gpu.clone(),
            r.prefill.to_string(),
            r.bsz.to_string(),
            r.gamma.to_string(),
            r.omega.to_string(),
            c.implied_alpha.to_string(),
            r.t_sd_ms.to_string(),
            c.t_sd_pred_ms.to_string(),
            c.t_sd_residual.to_string(),
            r.speedup.to_string(),
            c.x_pred_reported.to_string(),
            c.x_reported_residual.to_string(),
            c.x_pred_formula.to_string(),
            c.x_formula_residual.to_string(),
            c.within_1pct().to_string(),
            c.within_10pct().to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

/// Cost components in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakdownReport {
    pub hw: String,
    pub model: String,
    pub batch: u64,
    pub seqlen: u64,
    pub mode: CostMode,
    pub param_load_ms: f64,
    pub kv_load_ms: f64,
    pub act_load_ms: f64,
    pub compute_ms: f64,
    pub total_ms: f64,
}

impl BreakdownReport {
    pub fn new(hw: &str, model: &str, batch: u64, seqlen: u64, cost: &CostBreakdown) -> Self {
        let ms = cost.to_millis();
        Self {
            hw: hw.into(),
            model: model.into(),
            batch,
            seqlen,
            mode: ms.mode,
            param_load_ms: ms.param_load_s,
            kv_load_ms: ms.kv_load_s,
            act_load_ms: ms.act_load_s,
            compute_ms: ms.compute_s,
            total_ms: ms.total_s,
        }
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.batch,
            self.seqlen,
            self.mode.label(),
            self.param_load_ms,
            self.kv_load_ms,
            self.act_load_ms,
            self.compute_ms,
            self.total_ms
        )
    }
}

/// [`SpeedupReport`] with times in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpeedupReportMs {
    pub t_target_ms: f64,
    pub t_draft_ms: f64,
    pub t_select_ms: f64,
    pub t_verify_ms: f64,
    pub t_sd_avg_ms: f64,
    pub gamma: u32,
    pub alpha: f64,
    pub omega: f64,
    pub v_ratio: f64,
    pub d_ratio: f64,
    pub speedup: f64,
}

impl From<&SpeedupReport> for SpeedupReportMs {
    fn from(r: &SpeedupReport) -> Self {
        Self {
            t_target_ms: r.t_target_s * 1e3,
            t_draft_ms: r.t_draft_s * 1e3,
            t_select_ms: r.t_select_s * 1e3,
            t_verify_ms: r.t_verify_s * 1e3,
            t_sd_avg_ms: r.t_sd_avg_s * 1e3,
            gamma: r.gamma,
            alpha: r.alpha,
            omega: r.omega,
            v_ratio: r.verify_ratio(),
            d_ratio: r.draft_ratio(),
            speedup: r.speedup,
        }
    }
}

pub fn write_sweep(out: &mut impl Write, rows: &[SweepRow]) -> Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for row in rows {
        let r = SpeedupReportMs::from(&row.report);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            row.batch,
            row.seqlen,
            r.t_target_ms,
            r.t_draft_ms,
            r.t_select_ms,
            r.t_verify_ms,
            r.v_ratio,
            r.d_ratio,
            r.omega,
            r.speedup
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanReport {
    pub method_tag: String,
    pub kv_budget: Option<u64>,
    pub gamma: u32,
    pub alpha: f64,
    pub report: SpeedupReportMs,
}

impl From<&PlanResult> for PlanReport {
    fn from(p: &PlanResult) -> Self {
        Self {
            method_tag: p.method_tag.clone(),
            kv_budget: p.kv_budget,
            gamma: p.gamma,
            alpha: p.alpha,
            report: (&p.report).into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimTrial {
    pub seed: u64,
    pub total_tokens: u64,
    pub total_steps: u64,
    pub uncapped_steps: u64,
    pub misaligned_steps: u64,
    pub model_time_ms: f64,
    pub empirical_omega: f64,
    pub empirical_speedup: f64,
    pub per_seq_tokens: Vec<u64>,
}

impl SimTrial {
    pub fn new(seed: u64, r: &SimResult) -> Self {
        Self {
            seed,
            total_tokens: r.total_tokens,
            total_steps: r.total_steps,
            uncapped_steps: r.uncapped_steps,
            misaligned_steps: r.misaligned_steps,
            model_time_ms: r.model_time_s * 1e3,
            empirical_omega: r.empirical_omega,
            empirical_speedup: r.empirical_speedup,
            per_seq_tokens: r.per_seq_tokens.clone(),
        }
    }
}

/// Trial means next to the closed-form prediction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub trials: Vec<SimTrial>,
    pub empirical_omega: f64,
    pub analytic_omega: f64,
    pub omega_rel_dev: f64,
    pub empirical_speedup: f64,
    /// Evaluated at the mid-generation context.
    pub analytic_speedup: f64,
    pub analytic_seqlen: u64,
    pub speedup_rel_dev: f64,
}

impl SimReport {
    pub fn new(trials: Vec<SimTrial>, analytic: &SpeedupReport, analytic_seqlen: u64) -> Self {
        let n = trials.len() as f64;
        let empirical_omega = trials.iter().map(|t| t.empirical_omega).sum::<f64>() / n;
        let empirical_speedup = trials.iter().map(|t| t.empirical_speedup).sum::<f64>() / n;
        Self {
            trials,
            empirical_omega,
            analytic_omega: analytic.omega,
            omega_rel_dev: rel(empirical_omega, analytic.omega),
            empirical_speedup,
            analytic_speedup: analytic.speedup,
            analytic_seqlen,
            speedup_rel_dev: rel(empirical_speedup, analytic.speedup),
        }
    }
}
