//! Trace CSV export and run-report serialization.

use petc_core::analysis::{
    lyapunov_v, lyapunov_w, PerformanceReport, SetSpec, TransmissionStats,
};
use petc_core::etcsim::Trace;
use petc_core::lmidesign::DesignCertificate;
use petc_core::riccati::RiccatiSolution;
use petc_core::sysmodel::AugmentedSystem;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

pub const TRACE_CSV_VERSION: &str = "petc-trace v1";

/// Everything a run produces besides the trace itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub certification: PerformanceReport,
    pub transmissions: TransmissionStats,
}

/// Render the trace as CSV. One row per sample instant pre- and post-jump;
/// flow sub-samples are included when `include_flow` is set. The header is
/// fixed and versioned via a leading comment line.
pub fn render_trace_csv(
    trace: &Trace,
    aug: &AugmentedSystem,
    cert: &DesignCertificate,
    sol: &RiccatiSolution,
) -> Result<String, String> {
    render_trace_csv_opts(trace, aug, cert, sol, false)
}

pub fn render_trace_csv_opts(
    trace: &Trace,
    aug: &AugmentedSystem,
    cert: &DesignCertificate,
    sol: &RiccatiSolution,
    include_flow: bool,
) -> Result<String, String> {
    let spec = SetSpec::from_certificate(cert).map_err(|e| format!("certificate: {e:?}"))?;
    let n_xi = aug.dims.n_xi();
    let n_u = aug.dims.n_u();
    let n_z = aug.c_bar.rows();
    let n_w = aug.dims.n_w;
    let n_s = trace.substeps;

    let mut out = String::new();
    let _ = writeln!(out, "# {TRACE_CSV_VERSION}");
    out.push_str("t,tau,phase");
    for i in 0..n_xi {
        let _ = write!(out, ",xi_{i}");
    }
    out.push_str(",eta");
    for i in 0..n_u {
        let _ = write!(out, ",event_{i}");
    }
    for i in 0..n_u {
        let _ = write!(out, ",m_{i}");
    }
    for i in 0..n_u {
        let _ = write!(out, ",bits_{i}");
    }
    out.push_str(",V,W");
    for i in 0..n_z {
        let _ = write!(out, ",z_{i}");
    }
    for i in 0..n_w {
        let _ = write!(out, ",w_{i}");
    }
    out.push('\n');

    let mut emit = |t: f64,
                    tau: f64,
                    phase: &str,
                    xi: &[f64],
                    eta: f64,
                    events: &[(u8, u64, u32)],
                    w: &[f64]|
     -> Result<(), String> {
        let v = lyapunov_v(xi, tau, sol).map_err(|e| format!("trace row: {e:?}"))?;
        let wl = lyapunov_w(xi, tau, sol, spec.inner_level)
            .map_err(|e| format!("trace row: {e:?}"))?;
        let mut z = aug.c_bar.mul_vec(xi);
        for (zi, di) in z.iter_mut().zip(aug.d_bar.mul_vec(w)) {
            *zi += di;
        }
        let _ = write!(out, "{t:.17e},{tau:.17e},{phase}");
        for x in xi {
            let _ = write!(out, ",{x:.17e}");
        }
        let _ = write!(out, ",{eta:.17e}");
        for (flag, _, _) in events {
            let _ = write!(out, ",{flag}");
        }
        for (_, m, _) in events {
            let _ = write!(out, ",{m}");
        }
        for (_, _, bits) in events {
            let _ = write!(out, ",{bits}");
        }
        let _ = write!(out, ",{v:.17e},{wl:.17e}");
        for zi in &z {
            let _ = write!(out, ",{zi:.17e}");
        }
        for wi in w {
            let _ = write!(out, ",{wi:.17e}");
        }
        out.push('\n');
        Ok(())
    };

    let idle = vec![(0u8, 0u64, 0u32); n_u];
    for (k, sample) in trace.samples.iter().enumerate() {
        let seg = &trace.flow[k * n_s..(k + 1) * n_s];
        if include_flow {
            for p in seg {
                emit(p.t, p.tau, "flow", &p.xi, trace_eta_at(trace, k), &idle, &p.w)?;
            }
        }
        // events of this instant are reported on the pre row
        let mut per_channel = idle.clone();
        for rec in &sample.records {
            per_channel[rec.channel] = (1, rec.m, rec.bits);
        }
        let w_last = &seg[n_s - 1].w;
        emit(
            sample.t,
            trace.h,
            "pre",
            &sample.pre.xi(),
            sample.pre.eta,
            &per_channel,
            w_last,
        )?;
        emit(
            sample.t,
            0.0,
            "post",
            &sample.post.xi(),
            sample.post.eta,
            &idle,
            w_last,
        )?;
    }
    Ok(out)
}

fn trace_eta_at(trace: &Trace, period: usize) -> f64 {
    if period == 0 {
        trace.initial.eta
    } else {
        trace.samples[period - 1].post.eta
    }
}

pub fn write_trace_csv(
    path: &Path,
    trace: &Trace,
    aug: &AugmentedSystem,
    cert: &DesignCertificate,
    sol: &RiccatiSolution,
    include_flow: bool,
) -> Result<(), String> {
    let csv = render_trace_csv_opts(trace, aug, cert, sol, include_flow)?;
    std::fs::write(path, csv).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

pub fn write_report(path: &Path, report: &RunReport) -> Result<(), String> {
    let json = serde_json::to_string_pretty(report).map_err(|e| format!("report: {e}"))?;
    std::fs::write(path, json).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

/// Human-readable run summary for stdout.
pub fn render_summary(report: &RunReport) -> String {
    let c = &report.certification;
    let s = &report.transmissions;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "certified: {} (jump {} / flow {} / landing {} violations, ledger {})",
        c.certified(),
        c.jump_violations.count,
        c.flow_violations.count,
        c.landing_violations.count,
        if c.ledger_ok { "ok" } else { "VIOLATED" }
    );
    let _ = writeln!(
        out,
        "output energy {:.6e} of budget {:.6e}",
        c.z_integral, c.gain_budget
    );
    let _ = writeln!(
        out,
        "transmissions: {} of {} baseline ({:.2}% reduction)",
        s.transmissions, s.baseline_transmissions, s.reduction_percent
    );
    let max_gap = s.max_inter_event.iter().cloned().fold(0.0f64, f64::max);
    let _ = writeln!(
        out,
        "max inter-event {:.4} s; max m {}; m<=8 {:.2}%; m<=128 {:.2}%",
        max_gap, s.max_m, s.share_m_le_8, s.share_m_le_128
    );
    out.push_str("bits histogram:\n");
    for (bits, count) in &s.bits_histogram {
        let _ = writeln!(out, "  {bits:>3} bits: {count}");
    }
    out
}
