//! Trace analysis: Lyapunov evaluation along the sampled Riccati solution,
//! deadzone performance signals, certification of simulated runs against a
//! design certificate, and transmission statistics.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::lmidesign::DesignCertificate;
use crate::matrix::{vec_norm, Matrix};
use crate::numkernel::{spectral_norm, sym_eig};
use crate::riccati::{RiccatiSolution, TOL_RIC};
use crate::sysmodel::{delta_bar, jump_matrix, AugmentedSystem, EventIndexSet};
use crate::etcsim::Trace;

/// Target set and derived inner sublevel set.
#[derive(Debug, Clone, Copy)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SetSpec {
    /// Level `c` of the target set `{(x,r) : xᵀP(r)x ≤ c}`.
    pub level_c: f64,
    /// Level `λ̄ϱ̄²η_min²` of the inner set.
    pub inner_level: f64,
}

impl SetSpec {
    pub fn new(level_c: f64, inner_level: f64) -> Result<Self> {
        if !(level_c > 0.0 && inner_level > 0.0) {
            return Err(Error::OutOfRange {
                context: "set levels",
                value: level_c.min(inner_level),
            });
        }
        if inner_level > level_c * (1.0 + 1e-9) {
            return Err(Error::ConsistencyCheck {
                context: "inner set not enclosed in target set",
                residual: inner_level - level_c,
                tolerance: 1e-9 * level_c,
            });
        }
        Ok(SetSpec {
            level_c,
            inner_level,
        })
    }

    pub fn from_certificate(cert: &DesignCertificate) -> Result<Self> {
        SetSpec::new(cert.params.a_level, cert.inner_level())
    }
}

/// `V(x, r) = xᵀP(r)x`.
pub fn lyapunov_v(x: &[f64], r: f64, sol: &RiccatiSolution) -> Result<f64> {
    let p = sol.p_interp(r)?;
    Ok(p.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum())
}

/// `W(x, r) = max{V(x, r) − inner_level, 0}`.
pub fn lyapunov_w(x: &[f64], r: f64, sol: &RiccatiSolution, inner_level: f64) -> Result<f64> {
    Ok((lyapunov_v(x, r, sol)? - inner_level).max(0.0))
}

/// Performance signals `(z̃, z_target, z_inner)`: the raw linear output, and
/// its copies zeroed inside the target set and inside the inner set.
pub fn z_signals(
    aug: &AugmentedSystem,
    sol: &RiccatiSolution,
    spec: &SetSpec,
    x: &[f64],
    r: f64,
    w: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let mut z = aug.c_bar.mul_vec(x);
    for (zi, di) in z.iter_mut().zip(aug.d_bar.mul_vec(w)) {
        *zi += di;
    }
    let v = lyapunov_v(x, r, sol)?;
    let z_target = if v <= spec.level_c {
        vec![0.0; z.len()]
    } else {
        z.clone()
    };
    let z_inner = if v <= spec.inner_level {
        vec![0.0; z.len()]
    } else {
        z.clone()
    };
    Ok((z, z_target, z_inner))
}

/// Count and worst excess of a monotonicity check.
#[derive(Debug, Clone, Copy, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ViolationStats {
    pub count: usize,
    pub worst: f64,
}

impl ViolationStats {
    fn record(&mut self, excess: f64) {
        if excess > 0.0 {
            self.count += 1;
            self.worst = self.worst.max(excess);
        }
    }
}

/// Certification summary of one simulated run.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PerformanceReport {
    /// `∫ z_targetᵀ z_target dt` (deadzoned output energy).
    pub z_integral: f64,
    /// `∫ wᵀw dt` over the applied disturbance.
    pub w_integral: f64,
    /// `W` at the initial state.
    pub w0: f64,
    /// `γ²(W(t₀) + ∫wᵀw)`, the energy budget the run must respect.
    pub gain_budget: f64,
    pub ledger_ok: bool,
    /// Jump non-increase of `V` on samples with `|ξ| > ϱη`.
    pub jump_violations: ViolationStats,
    /// Integrated flow inequality for `W` outside the inner set.
    pub flow_violations: ViolationStats,
    /// Jumps departing from the inner set must land in it.
    pub landing_violations: ViolationStats,
    pub bits_histogram: BTreeMap<u32, u64>,
    /// Largest transmission gap per channel, boundaries included.
    pub max_inter_event: Vec<f64>,
    pub max_m: u64,
    /// Transmissions whose step count exceeded the certificate bound.
    pub mx_exceedances: usize,
    /// Samples whose zoom level exceeded the certificate bound.
    pub mmu_exceedances: usize,
}

impl PerformanceReport {
    pub fn certified(&self) -> bool {
        self.ledger_ok
            && self.jump_violations.count == 0
            && self.flow_violations.count == 0
            && self.landing_violations.count == 0
    }
}

/// Check a simulated trace against the guarantees its certificate promises.
/// Violations are reported, not thrown.
pub fn certify_trace(
    trace: &Trace,
    cert: &DesignCertificate,
    aug: &AugmentedSystem,
    sol: &RiccatiSolution,
) -> Result<PerformanceReport> {
    let spec = SetSpec::from_certificate(cert)?;
    let p = &cert.params;
    let n_s = trace.substeps;
    if trace.flow.len() != trace.samples.len() * n_s + 1 {
        return Err(Error::DimMismatch {
            context: "trace flow layout",
            expected: (trace.samples.len() * n_s + 1, 0),
            got: (trace.flow.len(), 0),
        });
    }
    let h = trace.h;
    let dt = h / n_s as f64;
    let gamma_sq = p.gamma * p.gamma;
    let p_scale = sol.p_h().norm_fro().max(sol.p0().norm_fro());
    let slack_of = |x_sq: f64| 10.0 * TOL_RIC * p_scale * x_sq + 1e-14;
    // The synthesis accepts the jump condition up to a scale-relative
    // tolerance, so the contraction `V⁺ ≤ V` is only guaranteed up to the
    // spectral deficit of the induced two-block form
    //   M = [εI − P(0), −εJ̄; −εJ̄ᵀ, P(h) + εJ̄ᵀJ̄ − ε(|Δ̄|²/ϱ²)I]:
    // every jump with `|ξ| > ϱη` satisfies
    //   V_pre − V_post ≥ λ_min(M)·(|ξ_pre|² + |ξ_post|²).
    // Grant exactly that deficit per checked jump.
    let jump_deficit = {
        let n = aug.dims.n_xi();
        let full = EventIndexSet::full(aug.dims.n_u());
        let j_full = jump_matrix(aug, &full);
        let d_norm = spectral_norm(&delta_bar(aug, &full, &p.theta))?;
        let ratio = d_norm * d_norm / (p.varrho * p.varrho);
        let eye = Matrix::identity(n);
        let tl = (&eye.scale(cert.eps) - sol.p0()).symmetrize();
        let tr = j_full.scale(-cert.eps);
        let br = (&(sol.p_h() + &(&j_full.transpose() * &j_full).scale(cert.eps))
            - &eye.scale(cert.eps * ratio))
            .symmetrize();
        let mut m = Matrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = tl[(i, j)];
                m[(i, n + j)] = tr[(i, j)];
                m[(n + i, j)] = tr[(j, i)];
                m[(n + i, n + j)] = br[(i, j)];
            }
        }
        // grant at most the deficit a certificate within the synthesis
        // tolerance can carry; a corrupted certificate gets no extra leeway
        let cap = crate::lmidesign::FEAS_TOL_REL * (1.0 + m.norm_fro());
        (-sym_eig(&m)?.lambda_min()).max(0.0).min(cap)
    };

    let mut jump_violations = ViolationStats::default();
    let mut flow_violations = ViolationStats::default();
    let mut landing_violations = ViolationStats::default();
    let mut z_integral = 0.0;
    let mut w_integral = 0.0;

    // integrand at one flow point with its frozen disturbance
    let point_values = |x: &[f64], r: f64, w: &[f64]| -> Result<(f64, f64, f64)> {
        let (z_tilde, z_target, _) = z_signals(aug, sol, &spec, x, r, w)?;
        let w_part = lyapunov_w(x, r, sol, spec.inner_level)?;
        let zt_sq: f64 = z_tilde.iter().map(|v| v * v).sum();
        let za_sq: f64 = z_target.iter().map(|v| v * v).sum();
        Ok((w_part, zt_sq, za_sq))
    };

    for (k, sample) in trace.samples.iter().enumerate() {
        // per-period flow segment: substep starts plus the pre-jump endpoint
        let seg = &trace.flow[k * n_s..(k + 1) * n_s];
        let pre_xi = sample.pre.xi();
        for j in 0..n_s {
            let (x0, r0, w_j) = (&seg[j].xi, seg[j].tau, &seg[j].w);
            let (x1, r1) = if j + 1 < n_s {
                (&seg[j + 1].xi, seg[j + 1].tau)
            } else {
                (&pre_xi, h)
            };
            let w_sq: f64 = w_j.iter().map(|v| v * v).sum();
            let (w_a, zt_a, za_a) = point_values(x0, r0, w_j)?;
            let (w_b, zt_b, za_b) = point_values(x1, r1, w_j)?;

            z_integral += 0.5 * dt * (za_a + za_b);
            w_integral += dt * w_sq;

            // flow inequality, integrated: only when both endpoints are
            // strictly outside the inner set
            if w_a > 0.0 && w_b > 0.0 {
                let lhs = w_b - w_a;
                let rhs = 0.5
                    * dt
                    * ((-2.0 * p.rho * w_a - zt_a / gamma_sq + w_sq)
                        + (-2.0 * p.rho * w_b - zt_b / gamma_sq + w_sq));
                let x_sq = vec_norm(x0) * vec_norm(x0);
                let x1_sq = vec_norm(x1) * vec_norm(x1);
                flow_violations.record(lhs - rhs - slack_of(x_sq.max(x1_sq)));
            }
        }

        // jump checks on the sample itself
        let post_xi = sample.post.xi();
        let v_pre = lyapunov_v(&pre_xi, h, sol)?;
        let v_post = lyapunov_v(&post_xi, 0.0, sol)?;
        let xi_norm = vec_norm(&pre_xi);
        if xi_norm > p.varrho * sample.pre.eta {
            let post_sq = {
                let n = vec_norm(&post_xi);
                n * n
            };
            let allowance = jump_deficit * (xi_norm * xi_norm + post_sq);
            jump_violations.record(v_post - v_pre - allowance - slack_of(xi_norm * xi_norm));
        }
        if v_pre <= spec.inner_level {
            let post_norm = vec_norm(&post_xi);
            landing_violations
                .record(v_post - spec.inner_level - slack_of(post_norm * post_norm));
        }
    }

    let w0 = lyapunov_w(&trace.initial.xi(), 0.0, sol, spec.inner_level)?;
    let gain_budget = gamma_sq * (w0 + w_integral);
    let ledger_ok = z_integral <= gain_budget + slack_of(1.0) * trace.duration().max(1.0);

    // per-trace transmission accounting
    let mut bits_histogram = BTreeMap::new();
    let mut max_m = 0u64;
    let mut mx_exceedances = 0usize;
    let mut mmu_exceedances = 0usize;
    let mut last_event = vec![0.0f64; trace.n_u];
    let mut max_gap = vec![0.0f64; trace.n_u];
    for sample in &trace.samples {
        for rec in &sample.records {
            *bits_histogram.entry(rec.bits).or_insert(0) += 1;
            max_m = max_m.max(rec.m);
            if (rec.m as f64) > cert.m_bar_x {
                mx_exceedances += 1;
            }
            let i = rec.channel;
            max_gap[i] = max_gap[i].max(rec.t - last_event[i]);
            last_event[i] = rec.t;
        }
        if sample.n_mu > cert.m_bar_mu {
            mmu_exceedances += 1;
        }
    }
    let end = trace.duration();
    for i in 0..trace.n_u {
        max_gap[i] = max_gap[i].max(end - last_event[i]);
    }

    Ok(PerformanceReport {
        z_integral,
        w_integral,
        w0,
        gain_budget,
        ledger_ok,
        jump_violations,
        flow_violations,
        landing_violations,
        bits_histogram,
        max_inter_event: max_gap,
        max_m,
        mx_exceedances,
        mmu_exceedances,
    })
}

/// Transmission statistics relative to the all-transmit baseline.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TransmissionStats {
    pub transmissions: u64,
    pub baseline_transmissions: u64,
    /// `1 − transmissions/baseline`, in percent.
    pub reduction_percent: f64,
    pub max_inter_event: Vec<f64>,
    pub bits_histogram: BTreeMap<u32, u64>,
    /// Share of transmissions with `m ≤ 8` and `m ≤ 128`, in percent.
    pub share_m_le_8: f64,
    pub share_m_le_128: f64,
    pub max_m: u64,
}

pub fn transmission_stats(trace: &Trace, baseline: &Trace) -> Result<TransmissionStats> {
    if (trace.duration() - baseline.duration()).abs() > 1e-9
        || (trace.h - baseline.h).abs() > 1e-15
    {
        return Err(Error::DimMismatch {
            context: "trace/baseline horizon",
            expected: (baseline.sample_count(), 0),
            got: (trace.sample_count(), 0),
        });
    }
    let transmissions = trace.transmissions();
    let baseline_transmissions =
        baseline.sample_count() as u64 * baseline.n_u as u64;
    let reduction_percent = if baseline_transmissions == 0 {
        0.0
    } else {
        (1.0 - transmissions as f64 / baseline_transmissions as f64) * 100.0
    };

    let mut bits_histogram = BTreeMap::new();
    let mut max_m = 0u64;
    let (mut le8, mut le128, mut total) = (0u64, 0u64, 0u64);
    let mut last_event = vec![0.0f64; trace.n_u];
    let mut max_gap = vec![0.0f64; trace.n_u];
    for sample in &trace.samples {
        for rec in &sample.records {
            *bits_histogram.entry(rec.bits).or_insert(0) += 1;
            max_m = max_m.max(rec.m);
            total += 1;
            if rec.m <= 8 {
                le8 += 1;
            }
            if rec.m <= 128 {
                le128 += 1;
            }
            let i = rec.channel;
            max_gap[i] = max_gap[i].max(rec.t - last_event[i]);
            last_event[i] = rec.t;
        }
    }
    let end = trace.duration();
    for i in 0..trace.n_u {
        max_gap[i] = max_gap[i].max(end - last_event[i]);
    }
    let pct = |n: u64| {
        if total == 0 {
            0.0
        } else {
            n as f64 / total as f64 * 100.0
        }
    };

    Ok(TransmissionStats {
        transmissions,
        baseline_transmissions,
        reduction_percent,
        max_inter_event: max_gap,
        share_m_le_8: pct(le8),
        share_m_le_128: pct(le128),
        bits_histogram,
        max_m,
    })
}
