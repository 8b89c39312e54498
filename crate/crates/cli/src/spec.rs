//! Chain specification files.
//!
//! A spec is a JSON document. Matrices are nested arrays of rows; polynomial
//! coefficient blocks are flat row-major arrays over `(x, y, z_1, .., z_d)`.
//! Every run parameter is optional and defaulted; [`parse_spec`] returns the
//! spec with all defaults filled in so that reports echo them.

use std::path::Path;

use nlmc_core::montecarlo::{CltThresholds, TestFunction};
use nlmc_core::{Kernel, Matrix, Measure, Observable, PolynomialBlock, StateSpace};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row sums may miss 1 by this much.
pub const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid `{field}`: {message}")]
    Semantic { field: String, message: String },
}

impl SpecError {
    fn semantic(field: impl Into<String>, message: impl Into<String>) -> Self {
        SpecError::Semantic {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub states: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    pub kernel: KernelSpec,
    /// Initial law; uniform when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
    pub observable: Vec<f64>,
    #[serde(default)]
    pub run: RunParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Constant {
        matrix: Vec<Vec<f64>>,
    },
    AffineMixture {
        base: Vec<Vec<f64>>,
        feedback: Vec<Vec<f64>>,
        lambda: f64,
    },
    Polynomial {
        constant: Vec<Vec<f64>>,
        #[serde(default)]
        blocks: Vec<BlockSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub degree: usize,
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunParams {
    pub seed: u64,
    /// Trajectory length for the CLT and LLN checks.
    pub n: usize,
    /// Number of trajectories.
    pub m: usize,
    pub flow_steps: usize,
    pub invariant_tolerance: f64,
    pub invariant_max_iters: usize,
    pub damping: f64,
    pub grid_resolution: usize,
    pub extra_samples: usize,
    pub tail_tolerance: f64,
    pub k_cap: usize,
    pub beta_n_max: usize,
    pub zeta: f64,
    pub ks_max: f64,
    pub g_gap_max: f64,
    pub degenerate_abs: f64,
    pub lln_c: f64,
    pub oracle_n: usize,
    pub oracle_m: usize,
    pub oracle_gap_max: f64,
    pub test_functions: Vec<TestFunction>,
}

impl Default for RunParams {
    fn default() -> Self {
        let clt = CltThresholds::default();
        Self {
            seed: 1,
            n: 10_000,
            m: 10_000,
            flow_steps: 200,
            invariant_tolerance: 1e-14,
            invariant_max_iters: 100_000,
            damping: 1.0,
            grid_resolution: 20,
            extra_samples: 1_000,
            tail_tolerance: 1e-12,
            k_cap: 100_000,
            beta_n_max: 50,
            zeta: 1.0,
            ks_max: clt.ks_max,
            g_gap_max: clt.g_gap_max,
            degenerate_abs: clt.degenerate_abs,
            lln_c: 10.0,
            oracle_n: 12,
            oracle_m: 100_000,
            oracle_gap_max: 0.01,
            test_functions: TestFunction::default_catalog(),
        }
    }
}

impl RunParams {
    pub fn clt_thresholds(&self) -> CltThresholds {
        CltThresholds {
            ks_max: self.ks_max,
            g_gap_max: self.g_gap_max,
            degenerate_abs: self.degenerate_abs,
        }
    }

    fn validate(&self) -> Result<(), SpecError> {
        let positive_counts = [
            ("n", self.n),
            ("m", self.m),
            ("flow_steps", self.flow_steps),
            ("invariant_max_iters", self.invariant_max_iters),
            ("grid_resolution", self.grid_resolution),
            ("k_cap", self.k_cap),
            ("beta_n_max", self.beta_n_max),
            ("oracle_n", self.oracle_n),
            ("oracle_m", self.oracle_m),
        ];
        for (name, v) in positive_counts {
            if v == 0 {
                return Err(SpecError::semantic(format!("run.{name}"), "must be at least 1"));
            }
        }
        let positive_reals = [
            ("invariant_tolerance", self.invariant_tolerance),
            ("tail_tolerance", self.tail_tolerance),
            ("zeta", self.zeta),
            ("ks_max", self.ks_max),
            ("g_gap_max", self.g_gap_max),
            ("degenerate_abs", self.degenerate_abs),
            ("lln_c", self.lln_c),
            ("oracle_gap_max", self.oracle_gap_max),
        ];
        for (name, v) in positive_reals {
            if !(v.is_finite() && v > 0.0) {
                return Err(SpecError::semantic(
                    format!("run.{name}"),
                    format!("must be finite and positive, got {v}"),
                ));
            }
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(SpecError::semantic(
                "run.damping",
                format!("must lie in (0, 1], got {}", self.damping),
            ));
        }
        Ok(())
    }
}

/// Validated core objects built from a spec.
#[derive(Debug, Clone)]
pub struct Chain {
    pub kernel: Kernel,
    pub mu0: Measure,
    pub observable: Observable,
}

/// Reads, parses and validates a spec file, filling in defaults.
pub fn parse_spec(path: &Path) -> Result<ChainSpec, SpecError> {
    let text = std::fs::read_to_string(path).map_err(|e| SpecError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_spec_str(&text)
}

pub fn parse_spec_str(text: &str) -> Result<ChainSpec, SpecError> {
    let mut spec: ChainSpec = serde_json::from_str(text).map_err(|e| SpecError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    spec.build()?;
    if spec.initial.is_none() {
        spec.initial = Some(vec![1.0 / spec.states as f64; spec.states]);
    }
    Ok(spec)
}

fn check_matrix(field: &str, rows: &[Vec<f64>], n: usize) -> Result<Matrix, SpecError> {
    if rows.len() != n {
        return Err(SpecError::semantic(
            field,
            format!("expected {n} rows, found {}", rows.len()),
        ));
    }
    for (i, row) in rows.iter().enumerate() {
        let at = format!("{field}[{i}]");
        if row.len() != n {
            return Err(SpecError::semantic(
                at,
                format!("row {i} has {} entries, expected {n}", row.len()),
            ));
        }
        if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(SpecError::semantic(
                at,
                format!("row {i} has entry {v}; entries must be finite and >= 0"),
            ));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(SpecError::semantic(at, format!("row {i} sums to {sum}, not 1")));
        }
    }
    Matrix::from_rows(rows.to_vec()).map_err(|e| SpecError::semantic(field, e.to_string()))
}

impl ChainSpec {
    /// Validates the spec and constructs the kernel, initial law and observable.
    pub fn build(&self) -> Result<Chain, SpecError> {
        let n = self.states;
        let space = match &self.labels {
            Some(labels) => {
                if labels.len() != n {
                    return Err(SpecError::semantic(
                        "labels",
                        format!("expected {n} labels, found {}", labels.len()),
                    ));
                }
                StateSpace::with_labels(labels.clone())
            }
            None => StateSpace::new(n),
        }
        .map_err(|e| SpecError::semantic("states", e.to_string()))?;

        let kernel = match &self.kernel {
            KernelSpec::Constant { matrix } => {
                let a = check_matrix("kernel.matrix", matrix, n)?;
                Kernel::constant(space, a)
            }
            KernelSpec::AffineMixture { base, feedback, lambda } => {
                let a = check_matrix("kernel.base", base, n)?;
                let q = check_matrix("kernel.feedback", feedback, n)?;
                if !(0.0..=1.0).contains(lambda) {
                    return Err(SpecError::semantic(
                        "kernel.lambda",
                        format!("must lie in [0, 1], got {lambda}"),
                    ));
                }
                Kernel::affine_mixture(space, a, q, *lambda)
            }
            KernelSpec::Polynomial { constant, blocks } => {
                if constant.len() != n || constant.iter().any(|r| r.len() != n) {
                    return Err(SpecError::semantic("kernel.constant", format!("must be {n}x{n}")));
                }
                let mut core_blocks = Vec::with_capacity(blocks.len());
                for (b, block) in blocks.iter().enumerate() {
                    let expected = n.pow(2 + block.degree as u32);
                    if block.degree == 0 || block.coefficients.len() != expected {
                        return Err(SpecError::semantic(
                            format!("kernel.blocks[{b}]"),
                            format!(
                                "degree {} needs degree >= 1 and {expected} coefficients, found {}",
                                block.degree,
                                block.coefficients.len()
                            ),
                        ));
                    }
                    core_blocks.push(PolynomialBlock {
                        degree: block.degree,
                        coefficients: block.coefficients.clone(),
                    });
                }
                Kernel::polynomial(space, constant.concat(), core_blocks)
            }
        }
        .map_err(|e| SpecError::semantic("kernel", e.to_string()))?;

        let mu0 = match &self.initial {
            Some(w) => {
                if w.len() != n {
                    return Err(SpecError::semantic(
                        "initial",
                        format!("expected {n} weights, found {}", w.len()),
                    ));
                }
                let sum: f64 = w.iter().sum();
                if w.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(SpecError::semantic("initial", "must be a probability vector"));
                }
                Measure::new(w).map_err(|e| SpecError::semantic("initial", e.to_string()))?
            }
            None => Measure::uniform(n),
        };

        if self.observable.len() != n {
            return Err(SpecError::semantic(
                "observable",
                format!("expected {n} values, found {}", self.observable.len()),
            ));
        }
        let observable = Observable::new("f", self.observable.clone())
            .map_err(|e| SpecError::semantic("observable", e.to_string()))?;
        self.run.validate()?;
        Ok(Chain {
            kernel,
            mu0,
            observable,
        })
    }
}
