//! Command implementations with a CI-scriptable exit-code contract:
//! 0 ok; 2 parse/config; 3 flow-invertibility assumption; 4 LMI infeasible;
//! 5 set-enclosure failure; 6 certificate/model mismatch.

use std::path::Path;

use petc_core::analysis::{certify_trace, lyapunov_w, transmission_stats};
use petc_core::etcsim::{simulate, time_triggered_baseline};
use petc_core::lmidesign::{
    bits_for_bound, bound_mmu, bound_mx, line_search_varrho, render_report, select_eta_min,
    varrho_bar, verify_certificate, DesignCertificate, DesignParams, LmiContext, SolveOpts,
    VerifyReport,
};
use petc_core::numkernel::spectral_norm;
use petc_core::riccati::{build_hamiltonian, solve_p, RiccatiSolution};
use petc_core::sysmodel::{AugmentedSystem, ThetaAllocation};
use petc_core::Error as CoreError;

use crate::config::WorkbenchConfig;
use crate::export::{render_summary, write_report, write_trace_csv, RunReport};
use crate::persist::{load_certificate, model_hash, save_certificate};

#[derive(Debug)]
pub enum CliError {
    /// Unreadable, unparsable, or internally inconsistent inputs.
    Parse(String),
    /// Flow-block invertibility fails on the sampling interval.
    Assumption(String),
    /// No feasible point in the requested `ϱ` range.
    Infeasible(String),
    /// Inner sublevel set does not fit inside the target set.
    Enclosure(String),
    /// Certificate does not belong to the supplied model.
    Mismatch(String),
    /// Anything else (numerical breakdown, IO on outputs).
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Assumption(_) => 3,
            CliError::Infeasible(_) => 4,
            CliError::Enclosure(_) => 5,
            CliError::Mismatch(_) => 6,
            CliError::Other(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Parse(m)
            | CliError::Assumption(m)
            | CliError::Infeasible(m)
            | CliError::Enclosure(m)
            | CliError::Mismatch(m)
            | CliError::Other(m) => m,
        }
    }
}

fn core_err(context: &str, e: CoreError) -> CliError {
    match e {
        CoreError::AssumptionViolated { r, rcond } => CliError::Assumption(format!(
            "{context}: flow block ill-conditioned at r={r:.6} (rcond {rcond:.3e})"
        )),
        CoreError::GainBound {
            gamma_sq,
            lambda_max,
        } => CliError::Parse(format!(
            "{context}: gain bound requires gamma^2 > lambda_max(DtD), got {gamma_sq:.6} vs {lambda_max:.6}"
        )),
        other => CliError::Other(format!("{context}: {other:?}")),
    }
}

fn load_config(path: &Path) -> Result<(WorkbenchConfig, AugmentedSystem), CliError> {
    let cfg = WorkbenchConfig::load(path).map_err(CliError::Parse)?;
    let aug = cfg.build_model().map_err(CliError::Parse)?;
    Ok((cfg, aug))
}

/// Design pipeline: Riccati machinery, `ϱ` line search, threshold sizing and
/// worst-case bounds, then self-verification. Writes the certificate file.
pub fn cmd_design(config_path: &Path, out_path: &Path) -> Result<DesignCertificate, CliError> {
    let (cfg, aug) = load_config(config_path)?;
    let d = &cfg.design;
    let theta = ThetaAllocation::new(d.theta.clone())
        .map_err(|e| CliError::Parse(format!("design.theta: {e:?}")))?;
    if theta.len() != aug.dims.n_u() {
        return Err(CliError::Parse(format!(
            "design.theta has {} entries for {} channels",
            theta.len(),
            aug.dims.n_u()
        )));
    }

    let ham = build_hamiltonian(&aug, d.rho, d.gamma).map_err(|e| core_err("design", e))?;
    let ctx = LmiContext::new(&aug, &ham, d.h, &theta, d.grid_n)
        .map_err(|e| core_err("design", e))?;

    let opts = SolveOpts {
        max_iters: d.max_iters,
        ..SolveOpts::default()
    };
    let outcome = line_search_varrho(&ctx, (d.varrho_range[0], d.varrho_range[1]), d.varrho_steps, &opts)
        .map_err(|e| core_err("line search", e))?
        .map_err(|diag| {
            CliError::Infeasible(format!(
                "no feasible varrho in [{:.4}, {:.4}] over {} grid points",
                d.varrho_range[0],
                d.varrho_range[1],
                diag.len()
            ))
        })?;

    let sol = solve_p(&ham, &outcome.point.p_h, d.h, d.grid_n)
        .map_err(|e| core_err("Riccati solve", e))?;
    let vb = varrho_bar(&aug, &theta, outcome.varrho).map_err(|e| core_err("varrho_bar", e))?;

    // threshold floor and target level: derive the one the config leaves out
    let (eta_min, a_level) = match (d.eta_min, d.a_level) {
        (Some(eta), Some(level)) => {
            let inner = sol.lambda_hi * vb * vb * eta * eta;
            if inner > level * (1.0 + 1e-9) {
                return Err(CliError::Enclosure(format!(
                    "inner level {inner:.6e} exceeds target level {level:.6e}"
                )));
            }
            (eta, level)
        }
        (None, Some(level)) => {
            let eta = select_eta_min(sol.lambda_hi, vb, level)
                .map_err(|e| core_err("eta_min selection", e))?;
            (eta, level)
        }
        (Some(eta), None) => (eta, sol.lambda_hi * vb * vb * eta * eta),
        (None, None) => unreachable!("rejected at parse time"),
    };

    let params = DesignParams {
        h: d.h,
        rho: d.rho,
        gamma: d.gamma,
        mu: d.mu,
        theta: theta.clone(),
        varrho: outcome.varrho,
        eta_min,
        a_level,
    };
    params
        .validate()
        .map_err(|e| CliError::Parse(format!("design parameters: {e:?}")))?;

    // worst-case bounds for the scenario in this config
    let (w0, w_inf) = scenario_budget(&cfg, &aug, &sol, &params, vb)?;
    let cd = spectral_norm(&aug.cd_concat()).map_err(|e| core_err("bounds", e))?;
    let m_bar_x = bound_mx(
        cd, &theta, sol.lambda_hi, sol.lambda_lo, vb, d.rho, eta_min, w0, w_inf,
    );
    let m_bar_mu = bound_mmu(
        cd,
        d.mu,
        outcome.varrho,
        sol.lambda_hi,
        sol.lambda_lo,
        vb,
        d.rho,
        eta_min,
        w0,
        w_inf,
    );

    let cert = DesignCertificate {
        params,
        p_h: outcome.point.p_h.clone(),
        eps: outcome.point.eps,
        grid_n: d.grid_n,
        lambda_hi: sol.lambda_hi,
        lambda_lo: sol.lambda_lo,
        p0: sol.p0().clone(),
        varrho_bar: vb,
        cd_norm: cd,
        m_bar_x,
        m_bar_mu,
        margins: outcome.point.margins,
    };

    let report = verify_certificate(&cert, &aug).map_err(|e| core_err("verification", e))?;
    if let Some(fail) = report.first_failure() {
        let msg = format!(
            "self-verification failed at '{}' (margin {:.3e})",
            fail.name, fail.margin
        );
        return Err(if fail.name == "inner-set-enclosure" {
            CliError::Enclosure(msg)
        } else {
            CliError::Other(msg)
        });
    }

    save_certificate(out_path, &cert, &aug).map_err(CliError::Other)?;
    Ok(cert)
}

/// `W(ξ(0), 0)` of the configured scenario plus the disturbance sup-norm,
/// the two inputs of the worst-case bounds.
fn scenario_budget(
    cfg: &WorkbenchConfig,
    aug: &AugmentedSystem,
    sol: &RiccatiSolution,
    params: &DesignParams,
    vb: f64,
) -> Result<(f64, f64), CliError> {
    let init = cfg.initial_state(aug).map_err(CliError::Parse)?;
    let inner = sol.lambda_hi * vb * vb * params.eta_min * params.eta_min;
    let xi0 = petc_core::etcsim::SimState {
        xi_p: init.xi_p.clone(),
        xi_c: init.xi_c.clone(),
        y_hat: init.y_hat.clone(),
        v_hat: init.v_hat.clone(),
        eta: params.eta_min,
        tau: 0.0,
        t: 0.0,
    }
    .xi();
    let w0 = lyapunov_w(&xi0, 0.0, sol, inner).map_err(|e| core_err("bounds", e))?;
    let w_inf = cfg.disturbance().linf_norm(aug.dims.n_w);
    Ok((w0, w_inf))
}

pub struct SimulateOutput {
    pub report: RunReport,
    pub summary: String,
}

/// Simulate the configured scenario under the certificate, write the trace
/// CSV and the run report, and return the report.
pub fn cmd_simulate(
    config_path: &Path,
    cert_path: &Path,
    trace_path: &Path,
    report_path: &Path,
    include_flow: bool,
) -> Result<SimulateOutput, CliError> {
    let (cfg, aug) = load_config(config_path)?;
    let file = load_certificate(cert_path).map_err(CliError::Parse)?;
    if file.model_hash != model_hash(&aug) {
        return Err(CliError::Mismatch(format!(
            "certificate was built for model {}, config hashes to {}",
            file.model_hash,
            model_hash(&aug)
        )));
    }
    let cert = file.certificate;
    let sol = cert.riccati(&aug).map_err(|e| core_err("simulate", e))?;

    let w = cfg.disturbance();
    let init = cfg.initial_state(&aug).map_err(CliError::Parse)?;
    let trace = simulate(
        &aug,
        &cert.params,
        &w,
        cfg.simulation.duration,
        cfg.simulation.substeps,
        &init,
    )
    .map_err(|e| core_err("simulate", e))?;
    let baseline = time_triggered_baseline(
        &aug,
        &cert.params,
        &w,
        cfg.simulation.duration,
        cfg.simulation.substeps,
        &init,
    )
    .map_err(|e| core_err("baseline", e))?;

    let certification =
        certify_trace(&trace, &cert, &aug, &sol).map_err(|e| core_err("certify", e))?;
    let transmissions =
        transmission_stats(&trace, &baseline).map_err(|e| core_err("stats", e))?;
    let report = RunReport {
        certification,
        transmissions,
    };

    write_trace_csv(trace_path, &trace, &aug, &cert, &sol, include_flow)
        .map_err(CliError::Other)?;
    write_report(report_path, &report).map_err(CliError::Other)?;
    let summary = render_summary(&report);
    Ok(SimulateOutput { report, summary })
}

pub struct VerifyOutput {
    pub report: VerifyReport,
    pub rendered: String,
}

/// Re-check every certificate invariant against the configured model.
pub fn cmd_verify(cert_path: &Path, config_path: &Path) -> Result<VerifyOutput, CliError> {
    let (_cfg, aug) = load_config(config_path)?;
    let file = load_certificate(cert_path).map_err(CliError::Parse)?;
    if file.model_hash != model_hash(&aug) {
        return Err(CliError::Mismatch(format!(
            "certificate was built for model {}, config hashes to {}",
            file.model_hash,
            model_hash(&aug)
        )));
    }
    let report =
        verify_certificate(&file.certificate, &aug).map_err(|e| core_err("verify", e))?;
    let rendered = render_report(&report);
    if let Some(fail) = report.first_failure() {
        let msg = format!("verification failed at '{}': margin {:.3e}", fail.name, fail.margin);
        return Err(match fail.name {
            "inner-set-enclosure" => CliError::Enclosure(msg),
            "assumption-1-rcond" => CliError::Assumption(msg),
            _ => CliError::Infeasible(msg),
        });
    }
    Ok(VerifyOutput { report, rendered })
}

pub struct BoundsOutput {
    pub m_bar_x: f64,
    pub bits_x: u32,
    pub m_bar_mu: u32,
    pub rendered: String,
}

/// Worst-case step count, its bit width, and worst-case zoom level for a
/// given initial energy `W(0)` and disturbance sup-norm.
pub fn cmd_bounds(cert_path: &Path, w0: f64, w_inf: f64) -> Result<BoundsOutput, CliError> {
    let file = load_certificate(cert_path).map_err(CliError::Parse)?;
    let cert = &file.certificate;
    let p = &cert.params;
    let cd = cert.cd_norm;
    let m_bar_x = bound_mx(
        cd,
        &p.theta,
        cert.lambda_hi,
        cert.lambda_lo,
        cert.varrho_bar,
        p.rho,
        p.eta_min,
        w0,
        w_inf,
    );
    let bits_x = bits_for_bound(m_bar_x);
    let m_bar_mu = bound_mmu(
        cd,
        p.mu,
        p.varrho,
        cert.lambda_hi,
        cert.lambda_lo,
        cert.varrho_bar,
        p.rho,
        p.eta_min,
        w0,
        w_inf,
    );
    let rendered = format!(
        "m_bar_x  {m_bar_x:.6e}  ({bits_x} bits)\nm_bar_mu {m_bar_mu}\n"
    );
    Ok(BoundsOutput {
        m_bar_x,
        bits_x,
        m_bar_mu,
        rendered,
    })
}
