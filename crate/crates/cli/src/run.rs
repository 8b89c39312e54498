//! Subcommand orchestration.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use nlmc_core::montecarlo::{
    cdf_sup_gap, clt_statistic, clt_verify, exact_sn_distribution, lln_verify, sample_batch, CltTarget, RngPolicy,
    ENUMERATION_LIMIT,
};
use nlmc_core::{
    asymptotic_variance, beta_mixing_profile, find_invariant_with, fit_rate, ibragimov_linnik_check, iterate_law,
    kernel_ratio_bounds, minorization_bound, stationary_mean, Error, InvariantError, InvariantOptions, Kernel, Measure,
    Observable, Scalar, VarianceError,
};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::report::{
    write_outputs, BetaRow, CltSection, Conclusions, FlowTvRow, Hypotheses, MixingSection, OracleSection, RateSection,
    RatioRow, RatioSection, RunReport, Tables, VarianceSection, Verdict, SCHEMA_VERSION,
};
use crate::spec::{ChainSpec, SpecError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Minorization, invariant measure, convergence rate and kernel-ratio bound.
    Hypotheses,
    /// Asymptotic variance of the stationary copy.
    Variance,
    /// β-mixing profile and the Ibragimov–Linnik conditions.
    Mixing,
    /// Monte Carlo check of the central limit theorem.
    Clt,
    /// Monte Carlo check of the law of large numbers.
    Lln,
    /// Exact enumeration of `S_n/√n` against Monte Carlo.
    Oracle,
    /// Everything above.
    All,
}

impl Command {
    fn wants(self, other: Command) -> bool {
        self == Command::All || self == other
    }
}

/// Failures that prevent a run from producing verdicts.
#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("{stage}: {source}")]
    Core {
        stage: &'static str,
        #[source]
        source: Error,
    },
    #[error("cannot write {path}: {message}")]
    Output { path: String, message: String },
    #[error("invalid arguments: {0}")]
    Usage(String),
}

impl RunError {
    pub fn kind(&self) -> &'static str {
        match self {
            RunError::Spec(SpecError::Io { .. }) => "io",
            RunError::Spec(SpecError::Syntax { .. }) => "syntax",
            RunError::Spec(SpecError::Semantic { .. }) => "semantic",
            RunError::Core { .. } => "numerical",
            RunError::Output { .. } => "output",
            RunError::Usage(_) => "usage",
        }
    }

    /// Machine-readable error object.
    pub fn to_json(&self) -> serde_json::Value {
        let mut error = json!({ "kind": self.kind(), "message": self.to_string() });
        match self {
            RunError::Spec(SpecError::Io { path, .. }) | RunError::Output { path, .. } => {
                error["path"] = json!(path);
            }
            RunError::Spec(SpecError::Syntax { line, column, .. }) => {
                error["line"] = json!(line);
                error["column"] = json!(column);
            }
            RunError::Spec(SpecError::Semantic { field, .. }) => {
                error["field"] = json!(field);
            }
            RunError::Core { stage, .. } => {
                error["stage"] = json!(stage);
            }
            RunError::Usage(_) => {}
        }
        json!({ "schema_version": SCHEMA_VERSION, "error": error })
    }
}

fn core(stage: &'static str) -> impl FnOnce(Error) -> RunError {
    move |source| RunError::Core { stage, source }
}

struct Stopwatch(BTreeMap<String, f64>);

impl Stopwatch {
    fn time<R>(&mut self, stage: &str, f: impl FnOnce() -> R) -> R {
        let t = Instant::now();
        let r = f();
        self.0.insert(stage.to_string(), t.elapsed().as_secs_f64());
        r
    }
}

/// Runs `command` on `spec`, returning the report and plot tables.
pub fn execute(command: Command, spec: &ChainSpec) -> Result<(RunReport, Tables), RunError> {
    let start = Instant::now();
    let chain = spec.build()?;
    let (kernel, mu0, f) = (&chain.kernel, &chain.mu0, &chain.observable);
    let params = &spec.run;
    let mut clock = Stopwatch(BTreeMap::new());
    let mut hyp = Hypotheses::default();
    let mut con = Conclusions::default();
    let mut verdict = Verdict::default();
    let mut tables = Tables::default();

    let mut opts = InvariantOptions::new(params.invariant_tolerance, params.invariant_max_iters);
    opts.damping = params.damping;
    let invariant = clock.time("invariant", || match find_invariant_with(kernel, &opts) {
        Ok(r) => Ok(r),
        Err(InvariantError::NotConverged(partial)) => Ok(*partial),
        Err(InvariantError::Kernel(e)) => Err(core("invariant")(e)),
    })?;
    let pi = invariant.pi.clone();
    let converged = invariant.converged;

    if command.wants(Command::Hypotheses) {
        let minor = clock.time("minorization", || {
            minorization_bound(kernel, params.grid_resolution, params.extra_samples, params.seed)
        });
        let minor = minor.map_err(core("minorization"))?;
        verdict
            .hypotheses
            .insert("minorization".into(), minor.lower_bound_estimate > 0.0);
        verdict
            .hypotheses
            .insert("invariant".into(), converged && invariant.unique_within_tolerance);
        hyp.minorization = Some(minor);
        hyp.minorization_at_invariant = Some(kernel.evaluate(&pi).map_err(core("minorization"))?.min_entry().0);
        if converged {
            clock.time("rate", || {
                rate_hypotheses(kernel, mu0, &pi, params.flow_steps, &mut hyp, &mut verdict, &mut tables)
            })?;
        }
    } else {
        verdict.hypotheses.insert("invariant_converged".into(), converged);
    }
    hyp.invariant = Some(invariant);

    if converged {
        let p_pi = kernel.evaluate(&pi).map_err(core("invariant"))?;
        let center = stationary_mean(&pi, f).map_err(core("invariant"))?;
        let policy = RngPolicy::new(params.seed);

        if command.wants(Command::Variance) || command.wants(Command::Clt) {
            let section = clock.time("variance", || {
                match asymptotic_variance(&p_pi, &pi, f, params.tail_tolerance, params.k_cap) {
                    Ok(report) => Ok(VarianceSection {
                        report,
                        tail_geometric: true,
                    }),
                    Err(VarianceError::TailNotGeometric(report)) => Ok(VarianceSection {
                        report: *report,
                        tail_geometric: false,
                    }),
                    Err(VarianceError::Invalid(e)) => Err(core("variance")(e)),
                }
            })?;
            if command.wants(Command::Variance) {
                verdict.conclusions.insert("variance".into(), section.tail_geometric);
            }
            con.variance = Some(section);
        }

        if command.wants(Command::Mixing) {
            let section = clock.time("mixing", || -> Result<MixingSection, RunError> {
                let profile =
                    beta_mixing_profile(&p_pi, &pi, params.beta_n_max, params.zeta).map_err(core("mixing"))?;
                let ibragimov_linnik = ibragimov_linnik_check(&profile, f).map_err(core("mixing"))?;
                Ok(MixingSection {
                    profile,
                    ibragimov_linnik,
                })
            })?;
            verdict
                .conclusions
                .insert("beta_summable".into(), section.profile.summable_diagnostic);
            verdict
                .conclusions
                .insert("ibragimov_linnik".into(), section.ibragimov_linnik.holds);
            let p = &section.profile;
            tables.beta = (0..p.beta.len())
                .map(|i| BetaRow {
                    n: i + 1,
                    beta: p.beta[i],
                    alpha_upper: p.alpha_upper[i],
                    il_partial_sum: p.il_partial_sums[i],
                })
                .collect();
            con.mixing = Some(section);
        }

        if command.wants(Command::Clt) {
            let sigma2 = con.variance.as_ref().map_or(0.0, |v| v.report.sigma2);
            let target = CltTarget { center, sigma2 };
            let outcome = clock.time("clt", || {
                clt_verify(
                    kernel,
                    mu0,
                    f,
                    target,
                    params.n,
                    params.m,
                    &params.test_functions,
                    params.clt_thresholds(),
                    &policy,
                )
            });
            let section = match outcome {
                Ok(mut report) => {
                    tables.samples = std::mem::take(&mut report.samples);
                    CltSection {
                        sigma2,
                        report: Some(report),
                        failure: None,
                    }
                }
                Err(e @ Error::DegenerateRequiresExactZero { .. }) => CltSection {
                    sigma2,
                    report: None,
                    failure: Some(e.to_string()),
                },
                Err(e) => return Err(core("clt")(e)),
            };
            verdict
                .conclusions
                .insert("clt".into(), section.report.as_ref().is_some_and(|r| r.passed));
            con.clt = Some(section);
        }

        if command.wants(Command::Lln) {
            let report = clock
                .time("lln", || {
                    lln_verify(kernel, mu0, f, center, params.n, params.m, params.lln_c, &policy)
                })
                .map_err(core("lln"))?;
            verdict.conclusions.insert("lln".into(), report.passed);
            con.lln = Some(report);
        }

        if command.wants(Command::Oracle) {
            let section = clock.time("oracle", || oracle(command, kernel, mu0, f, center, spec, &policy))?;
            if let Some(gap) = section.sup_gap {
                verdict.conclusions.insert("oracle".into(), gap <= section.threshold);
            }
            con.oracle = Some(section);
        }
    }

    verdict.finish();
    clock.0.insert("total".into(), start.elapsed().as_secs_f64());
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        command,
        kernel_family: kernel.family().name(),
        kernel_id: format!("{:016x}", kernel.id()),
        spec: spec.clone(),
        hypotheses: hyp,
        conclusions: con,
        verdict,
        timings: clock.0,
    };
    Ok((report, tables))
}

fn rate_hypotheses(
    kernel: &Kernel,
    mu0: &Measure,
    pi: &Measure,
    flow_steps: usize,
    hyp: &mut Hypotheses,
    verdict: &mut Verdict,
    tables: &mut Tables,
) -> Result<(), RunError> {
    let flow = iterate_law(kernel, mu0, flow_steps)
        .and_then(|fl| fl.with_invariant(pi))
        .map_err(core("rate"))?;
    let tv = flow.tv_to_invariant.clone().unwrap_or_default();
    let floor_step = tv.iter().position(|&d| d <= f64::TV_FLOOR);
    let (fit, note) = match fit_rate(&flow, pi) {
        Ok(fit) => (Some(fit), None),
        Err(e @ Error::InsufficientDecay { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(core("rate")(e)),
    };
    // A flow that hits the floor before a line can be fitted converges faster than any exponential.
    let fast = fit.is_none() && floor_step.is_some();
    verdict
        .hypotheses
        .insert("exponential_rate".into(), fit.is_some() || fast);
    tables.flow_tv = tv
        .iter()
        .enumerate()
        .map(|(step, &d)| FlowTvRow {
            step,
            tv: d,
            envelope: fit.as_ref().map(|f| f.envelope(step)),
            in_window: fit.as_ref().is_some_and(|f| step >= f.window.0 && step <= f.window.1),
        })
        .collect();

    let ratio = match &fit {
        Some(fit) => {
            let min_entry = kernel.evaluate(pi).map_err(core("kernel_ratio"))?.min_entry().0;
            let ln_k = fit.kernel_ratio_intercept(min_entry);
            match kernel_ratio_bounds(kernel, &flow, pi, fit.c, ln_k) {
                Ok(rep) => {
                    tables.kernel_ratio = rep
                        .steps
                        .iter()
                        .map(|s| RatioRow {
                            step: s.step,
                            ratio_gap: s.ratio_gap,
                            bound: s.bound,
                            holds: s.holds,
                        })
                        .collect();
                    let checked = &rep.steps[fit.window.0..];
                    Some(RatioSection {
                        c: fit.c,
                        ln_k,
                        min_invariant_entry: min_entry,
                        checked_from: fit.window.0,
                        checked_steps: checked.len(),
                        violations: checked.iter().filter(|s| !s.holds).count(),
                        first_violation: checked.iter().find(|s| !s.holds).map(|s| s.step),
                        max_gap: checked.iter().fold(0.0, |a, s| a.max(s.ratio_gap)),
                        note: None,
                    })
                }
                Err(e @ Error::ZeroInvariantEntry { .. }) => Some(RatioSection {
                    c: fit.c,
                    ln_k,
                    min_invariant_entry: min_entry,
                    checked_from: fit.window.0,
                    checked_steps: 0,
                    violations: 0,
                    first_violation: None,
                    max_gap: f64::INFINITY,
                    note: Some(e.to_string()),
                }),
                Err(e) => return Err(core("kernel_ratio")(e)),
            }
        }
        None => None,
    };
    let ratio_ok = match &ratio {
        Some(r) => r.note.is_none() && r.violations == 0,
        None => fast,
    };
    verdict.hypotheses.insert("kernel_ratio_bound".into(), ratio_ok);
    hyp.rate = Some(RateSection {
        flow_steps,
        final_tv: tv.last().copied().unwrap_or(0.0),
        floor_step,
        fit,
        note,
    });
    hyp.kernel_ratio = ratio;
    Ok(())
}

fn oracle(
    command: Command,
    kernel: &Kernel,
    mu0: &Measure,
    f: &Observable,
    center: f64,
    spec: &ChainSpec,
    policy: &RngPolicy,
) -> Result<OracleSection, RunError> {
    let (n, m) = (spec.run.oracle_n, spec.run.oracle_m);
    let mut section = OracleSection {
        n,
        m,
        atoms: 0,
        sup_gap: None,
        threshold: spec.run.oracle_gap_max,
        skipped: None,
    };
    let paths = (kernel.size() as f64).powi(n as i32);
    if command == Command::All && paths > ENUMERATION_LIMIT {
        section.skipped = Some(format!(
            "{paths:e} paths exceed the enumeration limit {ENUMERATION_LIMIT:e}"
        ));
        return Ok(section);
    }
    let atoms = exact_sn_distribution(kernel, mu0, f, center, n).map_err(core("oracle"))?;
    let batch = sample_batch(kernel, mu0, n - 1, m, policy).map_err(core("oracle"))?;
    let samples = (0..batch.trajectories)
        .map(|i| clt_statistic(batch.trajectory(i), f, center))
        .collect::<Result<Vec<f64>, Error>>()
        .map_err(core("oracle"))?;
    section.atoms = atoms.len();
    section.sup_gap = Some(cdf_sup_gap(&samples, &atoms));
    Ok(section)
}

/// Executes `command` and writes the report and tables into `out`.
pub fn run(command: Command, spec: &ChainSpec, out: &Path) -> Result<RunReport, RunError> {
    let (report, tables) = execute(command, spec)?;
    write_outputs(out, &report, &tables)?;
    Ok(report)
}
