//! JSON, text and plot-data renderings of the three report types.

use std::fmt::Write as _;

use balancekit::balance::BalanceReport;
use balancekit::effects::{Diagnostics, EffectEstimate, Estimand};
use balancekit::nuisance::{OutcomeKind, PropensityKind, SelectionKind, UndersmoothDiagnostics};
use balancekit::pipeline::Analysis;
use balancekit::sim::{EstimatorSummary, MonteCarloResult};
use serde::Serialize;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct EstimateRow {
    pub estimator: &'static str,
    pub estimand: Estimand,
    pub point: f64,
    pub se: f64,
    pub ci_95: [f64; 2],
    pub dcar_residual: Option<f64>,
    pub eif_mean: f64,
    pub diagnostics: Diagnostics,
}

impl From<&EffectEstimate> for EstimateRow {
    fn from(e: &EffectEstimate) -> Self {
        Self {
            estimator: e.estimator.name(),
            estimand: e.estimand,
            point: e.point,
            se: e.se,
            ci_95: [e.ci_95.0, e.ci_95.1],
            dcar_residual: e.diagnostics.dcar_residual,
            eif_mean: e.diagnostics.eif_mean,
            diagnostics: e.diagnostics.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct PropensitySummary {
    pub kind: PropensityKind,
    pub selection: SelectionKind,
    pub lambda: f64,
    pub truncation: f64,
    pub n_clamped: usize,
    pub basis_columns: Option<usize>,
    pub undersmoothing: Option<UndersmoothDiagnostics>,
}

#[derive(Debug, Serialize)]
pub struct OutcomeSummary {
    pub kind: OutcomeKind,
    pub arm_specific: bool,
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct DataSummary {
    pub n: usize,
    pub p: usize,
    pub n_treated: usize,
    pub covariates: Vec<String>,
    pub response_bounds: Option<(f64, f64)>,
}

#[derive(Debug, Serialize)]
pub struct EstimateReport {
    pub schema_version: u32,
    pub report: &'static str,
    pub seed: u64,
    pub data: DataSummary,
    pub propensity: Option<PropensitySummary>,
    pub outcome: Option<OutcomeSummary>,
    pub estimates: Vec<EstimateRow>,
    pub balance: Option<BalanceReport>,
}

#[derive(Debug, Serialize)]
pub struct BalanceFile<'a> {
    pub schema_version: u32,
    pub report: &'static str,
    pub seed: u64,
    pub data: DataSummary,
    pub propensity: Option<PropensitySummary>,
    #[serde(flatten)]
    pub balance: &'a BalanceReport,
}

#[derive(Debug, Serialize)]
pub struct SimulateReport<'a> {
    pub schema_version: u32,
    pub report: &'static str,
    #[serde(flatten)]
    pub result: &'a MonteCarloResult,
}

pub fn data_summary(analysis: &Analysis) -> DataSummary {
    let d = &analysis.data;
    DataSummary {
        n: d.n(),
        p: d.p(),
        n_treated: d.n_treated(),
        covariates: d.covariate_names().to_vec(),
        response_bounds: d.response_bounds(),
    }
}

pub fn propensity_summary(analysis: &Analysis) -> Option<PropensitySummary> {
    analysis.propensity.as_ref().map(|e| PropensitySummary {
        kind: e.kind,
        selection: e.selection,
        lambda: e.lambda_selected,
        truncation: e.truncation_delta,
        n_clamped: e.n_clamped,
        basis_columns: e.basis.as_ref().map(|b| b.n_columns()),
        undersmoothing: e.undersmoothing.clone(),
    })
}

pub fn estimate_report(analysis: &Analysis, seed: u64) -> EstimateReport {
    EstimateReport {
        schema_version: SCHEMA_VERSION,
        report: "estimate",
        seed,
        data: data_summary(analysis),
        propensity: propensity_summary(analysis),
        outcome: analysis.outcome.as_ref().map(|q| OutcomeSummary {
            kind: q.kind,
            arm_specific: q.arm_specific,
            lambdas: q.lambdas.clone(),
        }),
        estimates: analysis.estimates.iter().map(EstimateRow::from).collect(),
        balance: analysis.balance.clone(),
    }
}

fn opt(v: Option<f64>, width: usize) -> String {
    match v {
        Some(v) => format!("{v:>width$.6}"),
        None => format!("{:>width$}", "n/a"),
    }
}

fn estimand_name(e: Estimand) -> &'static str {
    match e {
        Estimand::Treated => "treated",
        Estimand::Control => "control",
        Estimand::Ate => "ate",
    }
}

pub fn estimate_text(report: &EstimateReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "n = {}, treated = {}, estimand = {}",
        report.data.n,
        report.data.n_treated,
        estimand_name(
            report
                .estimates
                .first()
                .map(|e| e.estimand)
                .unwrap_or(Estimand::Treated)
        )
    );
    let _ = writeln!(
        out,
        "{:<10}  {:>12}  {:>12}  {:>12}  {:>12}  {:>12}  {:>10}",
        "estimator", "point", "se", "ci_low", "ci_high", "dcar", "eif_mean"
    );
    for e in &report.estimates {
        let _ = writeln!(
            out,
            "{:<10}  {:>12.6}  {:>12.6}  {:>12.6}  {:>12.6}  {}  {:>10.2e}",
            e.estimator,
            e.point,
            e.se,
            e.ci_95[0],
            e.ci_95[1],
            opt(e.dcar_residual, 12),
            e.eif_mean
        );
        for w in &e.diagnostics.warnings {
            let _ = writeln!(out, "  warning ({}): {w}", e.estimator);
        }
    }
    if let Some(b) = &report.balance {
        let _ = writeln!(out);
        out.push_str(&b.to_text());
    }
    out
}

/// Forest-plot data: one row per estimator.
pub fn estimate_plot_csv(report: &EstimateReport) -> String {
    let mut out = String::from("estimator,point,ci_low,ci_high\n");
    for e in &report.estimates {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            e.estimator, e.point, e.ci_95[0], e.ci_95[1]
        );
    }
    out
}

/// Balance-plot data: one row per direction.
pub fn balance_plot_csv(report: &BalanceReport) -> String {
    let mut out = String::from("direction,residual,statistic,p_value,rejected\n");
    for d in &report.directions {
        let name = if d.name.contains([',', '"']) {
            format!("\"{}\"", d.name.replace('"', "\"\""))
        } else {
            d.name.clone()
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            name, d.residual, d.statistic, d.p_value, d.rejected
        );
    }
    out
}

fn summary_line(out: &mut String, s: &EstimatorSummary) {
    let _ = writeln!(
        out,
        "{:<24}  {:>10.5}  {:>10.5}  {}  {}  {:>8.3}  {:>10.5}",
        s.label,
        s.tau0,
        s.bias,
        opt(s.variance, 10),
        opt(s.n_variance, 10),
        s.coverage,
        s.mean_se
    );
}

pub fn simulate_text(result: &MonteCarloResult) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "dgp {}, n = {}, reps = {} ({} failed), seed = {}",
        result.dgp, result.n, result.reps, result.failures, result.seed
    );
    let _ = writeln!(
        out,
        "{:<24}  {:>10}  {:>10}  {:>10}  {:>10}  {:>8}  {:>10}",
        "estimator", "tau0", "bias", "variance", "n*var", "coverage", "mean_se"
    );
    for s in &result.estimators {
        summary_line(&mut out, s);
    }
    for b in &result.balance {
        let _ = writeln!(
            out,
            "balance {}: family rejection rate {:.4}",
            b.analysis, b.family_rejection_rate
        );
    }
    for m in &result.failure_messages {
        let _ = writeln!(out, "failure: {m}");
    }
    out
}
