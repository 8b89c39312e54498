//! Report types and their JSON and CSV serialization.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nlmc_core::montecarlo::{CltReport, LlnReport};
use nlmc_core::{IbragimovLinnikReport, InvariantResult, MinorizationReport, MixingProfile, RateFit, VarianceReport};
use serde::Serialize;

use crate::run::{Command, RunError};
use crate::spec::ChainSpec;

pub const SCHEMA_VERSION: u32 = 1;

pub const REPORT_FILE: &str = "report.json";
pub const ERROR_FILE: &str = "error.json";
pub const FLOW_TV_FILE: &str = "flow_tv.csv";
pub const KERNEL_RATIO_FILE: &str = "kernel_ratio.csv";
pub const BETA_FILE: &str = "beta.csv";
pub const SAMPLES_FILE: &str = "samples.csv";

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: Command,
    pub kernel_family: &'static str,
    pub kernel_id: String,
    /// The effective spec, defaults and command-line overrides included.
    pub spec: ChainSpec,
    pub hypotheses: Hypotheses,
    pub conclusions: Conclusions,
    pub verdict: Verdict,
    /// Wall-clock seconds per stage; the only field that varies between identical runs.
    pub timings: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Hypotheses {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub minorization: Option<MinorizationReport<f64>>,
    /// Smallest entry of `P^π`; informational, the verdict uses the global bound.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub minorization_at_invariant: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub invariant: Option<InvariantResult<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate: Option<RateSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel_ratio: Option<RatioSection>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateSection {
    pub flow_steps: usize,
    pub final_tv: f64,
    /// First step whose distance to `π` is at the round-off floor, if reached.
    pub floor_step: Option<usize>,
    pub fit: Option<RateFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RatioSection {
    pub c: f64,
    #[serde(rename = "lnK")]
    pub ln_k: f64,
    pub min_invariant_entry: f64,
    pub checked_from: usize,
    pub checked_steps: usize,
    pub violations: usize,
    pub first_violation: Option<usize>,
    pub max_gap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Conclusions {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance: Option<VarianceSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mixing: Option<MixingSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clt: Option<CltSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lln: Option<LlnReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSection>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceSection {
    pub report: VarianceReport<f64>,
    pub tail_geometric: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MixingSection {
    pub profile: MixingProfile<f64>,
    pub ibragimov_linnik: IbragimovLinnikReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct CltSection {
    pub sigma2: f64,
    pub report: Option<CltReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleSection {
    pub n: usize,
    pub m: usize,
    pub atoms: usize,
    pub sup_gap: Option<f64>,
    pub threshold: f64,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Verdict {
    pub hypotheses: BTreeMap<String, bool>,
    pub conclusions: BTreeMap<String, bool>,
    pub passed: bool,
    pub exit_code: i32,
}

impl Verdict {
    pub fn finish(&mut self) {
        let hyp = self.hypotheses.values().all(|&b| b);
        let con = self.conclusions.values().all(|&b| b);
        self.passed = hyp && con;
        self.exit_code = if !hyp {
            2
        } else if !con {
            3
        } else {
            0
        };
    }
}

/// Plot-ready tables produced alongside the JSON report.
#[derive(Debug, Clone, Default)]
pub struct Tables {
    pub flow_tv: Vec<FlowTvRow>,
    pub kernel_ratio: Vec<RatioRow>,
    pub beta: Vec<BetaRow>,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowTvRow {
    pub step: usize,
    pub tv: f64,
    pub envelope: Option<f64>,
    pub in_window: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RatioRow {
    pub step: usize,
    pub ratio_gap: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BetaRow {
    pub n: usize,
    pub beta: f64,
    pub alpha_upper: f64,
    pub il_partial_sum: f64,
}

#[derive(Serialize)]
struct SampleRow {
    index: usize,
    value: f64,
}

fn output_error(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Output {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| output_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| output_error(path, e))?;
    }
    w.flush().map_err(|e| output_error(path, e))
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), RunError> {
    let file = File::create(path).map_err(|e| output_error(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| output_error(path, e))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| output_error(path, e))
}

/// Writes the report and every non-empty table into `dir`, creating it if needed.
pub fn write_outputs(dir: &Path, report: &RunReport, tables: &Tables) -> Result<(), RunError> {
    std::fs::create_dir_all(dir).map_err(|e| output_error(dir, e))?;
    write_json(&dir.join(REPORT_FILE), report)?;
    if !tables.flow_tv.is_empty() {
        write_csv(&dir.join(FLOW_TV_FILE), &tables.flow_tv)?;
    }
    if !tables.kernel_ratio.is_empty() {
        write_csv(&dir.join(KERNEL_RATIO_FILE), &tables.kernel_ratio)?;
    }
    if !tables.beta.is_empty() {
        write_csv(&dir.join(BETA_FILE), &tables.beta)?;
    }
    if !tables.samples.is_empty() {
        let rows = tables
            .samples
            .iter()
            .enumerate()
            .map(|(index, &value)| SampleRow { index, value });
        write_csv(&dir.join(SAMPLES_FILE), rows)?;
    }
    Ok(())
}
