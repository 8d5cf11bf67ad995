//! Versioned JSON run reports and trajectory tables.

use std::fs;
use std::path::Path;

use anyhow::Context;
use bregman_dc::data::ProblemInstance;
use bregman_dc::ibpdca::{InvariantLog, IterRecord, SolveStatus};
use bregman_dc::methods::TimedRun;
use serde::{Deserialize, Serialize};

use crate::config::ProblemKind;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceInfo {
    pub m: usize,
    pub n: usize,
    pub s: usize,
    pub seed: u64,
}

impl From<&ProblemInstance> for InstanceInfo {
    fn from(inst: &ProblemInstance) -> Self {
        Self {
            m: inst.rows(),
            n: inst.cols(),
            s: inst.s,
            seed: inst.seed,
        }
    }
}

/// Problem parameters actually used for the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub kappa: Option<f64>,
    pub sigma: Option<f64>,
    pub max_iter: usize,
}

/// Everything a run produced. `time`, `t0` and the trajectory's `elapsed`
/// are the only fields that differ between identical invocations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub report_version: u32,
    pub problem: ProblemKind,
    pub method: String,
    pub instance: InstanceInfo,
    pub params: RunParams,
    pub status: SolveStatus,
    pub initial_obj: f64,
    pub obj: f64,
    pub feas: f64,
    pub rec: Option<f64>,
    pub outer_iter: usize,
    pub ssn_iter: usize,
    pub cert_constructions: usize,
    pub unit_step_fraction: Option<f64>,
    /// Solver seconds.
    pub time: f64,
    /// Initializer seconds.
    pub t0: f64,
    pub invariants: InvariantLog,
    #[serde(default)]
    pub trajectory: Vec<IterRecord>,
    #[serde(default)]
    pub x_final: Vec<f64>,
}

impl RunReport {
    pub fn new(
        problem: ProblemKind,
        inst: &ProblemInstance,
        params: RunParams,
        run: TimedRun,
        with_trajectory: bool,
    ) -> Self {
        let r = run.report;
        Self {
            report_version: REPORT_VERSION,
            problem,
            method: r.method.clone(),
            instance: inst.into(),
            params,
            status: r.status,
            initial_obj: r.initial_objective,
            obj: r.final_objective,
            feas: r.final_feas,
            rec: inst.recovery_error(&r.x_final),
            outer_iter: r.outer_iters,
            ssn_iter: r.inner_iters,
            cert_constructions: r.cert_constructions,
            unit_step_fraction: r.unit_step_fraction(),
            time: r.wall_time,
            t0: run.t0,
            invariants: r.invariants,
            x_final: if with_trajectory { r.x_final.as_slice().to_vec() } else { Vec::new() },
            trajectory: if with_trajectory { r.trajectory } else { Vec::new() },
        }
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let report: RunReport = crate::config::read_json(path)?;
        if report.report_version != REPORT_VERSION {
            anyhow::bail!(
                "{}: unsupported report_version {} (expected {REPORT_VERSION})",
                path.display(),
                report.report_version
            );
        }
        Ok(report)
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    /// Per-iteration rows: `k,objective,feas,d_fwd,d_bwd,sc_lhs,sc_rhs,delta_norm,delta_scalar,inner_iters,cert_constructions,floor_accepted,stationarity,elapsed`.
    pub fn write_trajectory_csv(&self, path: &Path) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record([
            "k",
            "objective",
            "feas",
            "d_fwd",
            "d_bwd",
            "sc_lhs",
            "sc_rhs",
            "delta_norm",
            "delta_scalar",
            "inner_iters",
            "cert_constructions",
            "floor_accepted",
            "stationarity",
            "elapsed",
        ])?;
        for t in &self.trajectory {
            w.write_record([
                t.k.to_string(),
                format!("{:e}", t.objective),
                format!("{:e}", t.feas),
                format!("{:e}", t.d_fwd),
                format!("{:e}", t.d_bwd),
                format!("{:e}", t.sc_lhs),
                format!("{:e}", t.sc_rhs),
                format!("{:e}", t.delta_norm),
                format!("{:e}", t.delta_scalar),
                t.inner_iters.to_string(),
                t.cert_constructions.to_string(),
                t.floor_accepted.to_string(),
                t.stationarity.map(|s| format!("{s:e}")).unwrap_or_default(),
                format!("{:.6}", t.elapsed),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
