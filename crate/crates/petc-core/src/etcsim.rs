//! Closed-loop simulator: exact ZOH flow between samples, per-channel event
//! evaluation, zoom quantization, atomic jumps, threshold updates, and the
//! all-transmit baseline.
//!
//! The jump is atomic: events and quantization use pre-jump values, `ξ_c⁺`
//! uses the post-update `ŷ`, and `v̂⁺` uses the pre-jump `ξ_c` and `ŷ`.
//! A sequential in-place update gets this wrong.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::lmidesign::{bits_for_count, DesignParams};
use crate::matrix::{vec_norm, Matrix};
use crate::numkernel::expm;
use crate::sysmodel::{AugmentedSystem, EventIndexSet, PlantModel, ThetaAllocation};

/// Default number of flow substeps per sampling period.
pub const DEFAULT_SUBSTEPS: usize = 16;

/// Full simulation state between or at samples.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimState {
    pub xi_p: Vec<f64>,
    pub xi_c: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub v_hat: Vec<f64>,
    /// Global threshold; never below the configured minimum.
    pub eta: f64,
    /// Time since the last sample, in `[0, h]`.
    pub tau: f64,
    /// Absolute time (s).
    pub t: f64,
}

impl SimState {
    /// Concatenated state `ξ = [ξ_p; ξ_c; ŷ; v̂]`.
    pub fn xi(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(
            self.xi_p.len() + self.xi_c.len() + self.y_hat.len() + self.v_hat.len(),
        );
        out.extend_from_slice(&self.xi_p);
        out.extend_from_slice(&self.xi_c);
        out.extend_from_slice(&self.y_hat);
        out.extend_from_slice(&self.v_hat);
        out
    }

    /// The controller-side vector `ξ' = [ξ_c; ŷ; v̂]`.
    pub fn xi_prime(&self) -> Vec<f64> {
        let mut out =
            Vec::with_capacity(self.xi_c.len() + self.y_hat.len() + self.v_hat.len());
        out.extend_from_slice(&self.xi_c);
        out.extend_from_slice(&self.y_hat);
        out.extend_from_slice(&self.v_hat);
        out
    }
}

/// Exogenous disturbance.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum DisturbanceSignal {
    Zero,
    /// `a·sin(2π f t)` on `[t_a, t_b]`, zero outside; applied to every
    /// disturbance component.
    WindowedSine {
        amplitude: f64,
        frequency_hz: f64,
        window: (f64, f64),
    },
    /// Sample-and-hold table starting at `t0` with spacing `dt`; the last
    /// value extends to infinity, zero before `t0`.
    PiecewiseConstant {
        t0: f64,
        dt: f64,
        values: Vec<Vec<f64>>,
    },
}

impl DisturbanceSignal {
    pub fn eval(&self, t: f64, n_w: usize) -> Vec<f64> {
        match self {
            DisturbanceSignal::Zero => vec![0.0; n_w],
            DisturbanceSignal::WindowedSine {
                amplitude,
                frequency_hz,
                window,
            } => {
                if t >= window.0 && t <= window.1 {
                    let v = amplitude
                        * libm::sin(2.0 * core::f64::consts::PI * frequency_hz * t);
                    vec![v; n_w]
                } else {
                    vec![0.0; n_w]
                }
            }
            DisturbanceSignal::PiecewiseConstant { t0, dt, values } => {
                if values.is_empty() || t < *t0 {
                    return vec![0.0; n_w];
                }
                let idx = (libm::floor((t - t0) / dt) as usize).min(values.len() - 1);
                let mut v = values[idx].clone();
                v.resize(n_w, 0.0);
                v
            }
        }
    }

    /// Supremum of `|w(t)|` over all `t` (per the signal's own structure).
    pub fn linf_norm(&self, n_w: usize) -> f64 {
        match self {
            DisturbanceSignal::Zero => 0.0,
            DisturbanceSignal::WindowedSine { amplitude, .. } => {
                amplitude.abs() * libm::sqrt(n_w as f64)
            }
            DisturbanceSignal::PiecewiseConstant { values, .. } => values
                .iter()
                .map(|v| vec_norm(v))
                .fold(0.0, f64::max),
        }
    }
}

/// Which side of the loop a channel belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ChannelKind {
    Sensor,
    Actuator,
}

/// One transmitted quantizer update.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EventRecord {
    pub t: f64,
    pub channel: usize,
    pub kind: ChannelKind,
    pub m: u64,
    pub sign: i8,
    pub bits: u32,
}

/// Snapshot of a sample instant: state just before (`τ = h`) and just after
/// (`τ = 0`) the jump.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SampleSnapshot {
    pub t: f64,
    pub pre: SimState,
    pub post: SimState,
    pub events: EventIndexSet,
    pub records: Vec<EventRecord>,
    pub n_mu: u32,
}

/// A flow sub-sample; `w` is the value frozen over the substep starting here.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FlowPoint {
    pub t: f64,
    pub tau: f64,
    pub xi: Vec<f64>,
    pub w: Vec<f64>,
}

/// Deterministic simulation output.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Trace {
    pub h: f64,
    pub substeps: usize,
    pub initial: SimState,
    pub initial_n_mu: u32,
    pub samples: Vec<SampleSnapshot>,
    pub flow: Vec<FlowPoint>,
    /// Channel count of the model, the per-sample baseline transmission count.
    pub n_u: usize,
}

impl Trace {
    pub fn transmissions(&self) -> u64 {
        self.samples.iter().map(|s| s.events.len() as u64).sum()
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    pub fn duration(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }
}

/// Per-channel squared thresholds `η_i = θ_i²η²`.
pub fn local_thresholds(eta: f64, theta: &ThetaAllocation) -> Vec<f64> {
    theta.weights().iter().map(|&w| w * w * eta * eta).collect()
}

/// Pre-jump channel signals: `u = [y; v]` with `y = C_pξ_p`,
/// `v = C_cξ_c + D_cŷ`, and the held vector `û = [ŷ; v̂]`.
fn channel_signals(state: &SimState, aug: &AugmentedSystem) -> (Vec<f64>, Vec<f64>) {
    let y = aug.plant.c.mul_vec(&state.xi_p);
    let mut v = aug.ctrl.c.mul_vec(&state.xi_c);
    for (vi, di) in v.iter_mut().zip(aug.ctrl.d.mul_vec(&state.y_hat)) {
        *vi += di;
    }
    let mut u = y;
    u.extend_from_slice(&v);
    let mut u_hat = state.y_hat.clone();
    u_hat.extend_from_slice(&state.v_hat);
    (u, u_hat)
}

/// Channels whose held value drifted at least one quantum:
/// `𝒥 = {i : |û^i − u^i| ≥ θ_iη}` (closed inequality).
pub fn evaluate_events(
    state: &SimState,
    aug: &AugmentedSystem,
    theta: &ThetaAllocation,
) -> EventIndexSet {
    let (u, u_hat) = channel_signals(state, aug);
    let mut set = EventIndexSet::empty(aug.dims.n_u());
    for (i, &w) in theta.weights().iter().enumerate() {
        if (u_hat[i] - u[i]).abs() >= w * state.eta {
            set.insert(i);
        }
    }
    set
}

/// Zoom-quantizer update of one triggered channel with quantum `q`:
/// `û⁺ = û − sign(û−u)·m·q`, `m = ⌊|û−u|/q⌋`.
pub fn quantize_update(u_hat_prev: f64, u: f64, q: f64) -> (f64, u64, i8) {
    debug_assert!(q > 0.0 && (u_hat_prev - u).abs() >= q);
    let diff = u_hat_prev - u;
    let m = libm::floor(diff.abs() / q) as u64;
    let sign: i8 = if diff >= 0.0 { 1 } else { -1 };
    let u_hat_new = u_hat_prev - sign as f64 * m as f64 * q;
    (u_hat_new, m, sign)
}

/// Threshold update `η⁺ = μ^{−n_μ}η_min`,
/// `n_μ = max{0, ⌈−log_μ(|ξ'|/(ϱη_min)) − 1⌉}`.
pub fn threshold_update(xi_prime: &[f64], mu: f64, eta_min: f64, varrho: f64) -> (f64, u32) {
    debug_assert!(mu > 0.0 && mu < 1.0 && eta_min > 0.0 && varrho > 0.0);
    let norm = vec_norm(xi_prime);
    if norm <= 0.0 {
        return (eta_min, 0);
    }
    let raw = -libm::log(norm / (varrho * eta_min)) / libm::log(mu) - 1.0;
    let n_mu = if raw <= 0.0 {
        0
    } else {
        libm::ceil(raw) as u32
    };
    (libm::pow(mu, -(n_mu as f64)) * eta_min, n_mu)
}

/// Exact one-substep ZOH propagator for the held-input plant:
/// `ξ_p⁺ = Φξ_p + Ψb` with `Φ = e^{A_p δ}`, `Ψ = ∫₀^δ e^{A_p s} ds`.
struct HeldFlow {
    phi: Matrix,
    psi: Matrix,
    dt: f64,
}

impl HeldFlow {
    fn new(plant: &PlantModel, dt: f64) -> Result<Self> {
        let n_p = plant.a.rows();
        let mut block = Matrix::zeros(2 * n_p, 2 * n_p);
        block.set_block(0, 0, &plant.a);
        block.set_block(0, n_p, &Matrix::identity(n_p));
        let e = expm(&block, dt)?;
        Ok(HeldFlow {
            phi: e.block(0, 0, n_p, n_p),
            psi: e.block(0, n_p, n_p, n_p),
            dt,
        })
    }
}

/// Flow the state over one full period `[t, t+h]` with `v̂` held and `w`
/// frozen at each substep midpoint. Returns the advanced state (`τ = h`) and
/// the flow sub-samples, one at each substep start.
pub fn flow_step(
    state: &SimState,
    plant: &PlantModel,
    w: &DisturbanceSignal,
    h: f64,
    substeps: usize,
) -> Result<(SimState, Vec<FlowPoint>)> {
    if substeps == 0 {
        return Err(Error::OutOfRange {
            context: "flow substeps",
            value: 0.0,
        });
    }
    if !(h > 0.0) {
        return Err(Error::OutOfRange {
            context: "sampling interval h",
            value: h,
        });
    }
    let n_w = plant.e.cols();
    let dt = h / substeps as f64;
    let op = HeldFlow::new(plant, dt)?;
    let bv = plant.b.mul_vec(&state.v_hat);

    let mut s = state.clone();
    let mut points = Vec::with_capacity(substeps);
    for k in 0..substeps {
        let t_mid = state.t + (k as f64 + 0.5) * dt;
        let w_mid = w.eval(t_mid, n_w);
        points.push(FlowPoint {
            t: s.t,
            tau: s.tau,
            xi: s.xi(),
            w: w_mid.clone(),
        });
        let mut b = plant.e.mul_vec(&w_mid);
        for (bi, &vi) in b.iter_mut().zip(&bv) {
            *bi += vi;
        }
        let mut next = op.phi.mul_vec(&s.xi_p);
        for (ni, pi) in next.iter_mut().zip(op.psi.mul_vec(&b)) {
            *ni += pi;
        }
        s.xi_p = next;
        s.t = state.t + (k + 1) as f64 * op.dt;
        s.tau = state.tau + (k + 1) as f64 * op.dt;
    }
    // land exactly on the sample
    s.t = state.t + h;
    s.tau = state.tau + h;
    Ok((s, points))
}

/// Atomic jump at a sample instant (`τ = h`). Returns the post-jump state
/// (`τ` reset to 0), the triggered set, transmission records, and the zoom
/// level of the threshold update.
pub fn jump(
    state: &SimState,
    aug: &AugmentedSystem,
    params: &DesignParams,
) -> (SimState, EventIndexSet, Vec<EventRecord>, u32) {
    let d = &aug.dims;
    let theta = &params.theta;
    let (u, _) = channel_signals(state, aug);
    let events = evaluate_events(state, aug, theta);

    let mut y_hat_new = state.y_hat.clone();
    let mut v_hat_new = state.v_hat.clone();
    let mut records = Vec::new();
    for i in events.iter() {
        let q = theta.weights()[i] * state.eta;
        let (kind, held) = if i < d.n_y {
            (ChannelKind::Sensor, &mut y_hat_new[i])
        } else {
            (ChannelKind::Actuator, &mut v_hat_new[i - d.n_y])
        };
        let (updated, m, sign) = quantize_update(*held, u[i], q);
        *held = updated;
        records.push(EventRecord {
            t: state.t,
            channel: i,
            kind,
            m,
            sign,
            bits: bits_for_count(m),
        });
    }

    // ξ_c⁺ from the post-update ŷ
    let mut xi_c_new = aug.ctrl.a.mul_vec(&state.xi_c);
    for (ci, bi) in xi_c_new.iter_mut().zip(aug.ctrl.b.mul_vec(&y_hat_new)) {
        *ci += bi;
    }

    let mut post = SimState {
        xi_p: state.xi_p.clone(),
        xi_c: xi_c_new,
        y_hat: y_hat_new,
        v_hat: v_hat_new,
        eta: state.eta,
        tau: 0.0,
        t: state.t,
    };
    let (eta_plus, n_mu) = threshold_update(
        &post.xi_prime(),
        params.mu,
        params.eta_min,
        params.varrho,
    );
    post.eta = eta_plus;
    (post, events, records, n_mu)
}

/// Initial loop state; `η(0)` is assigned by the simulator itself.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InitialState {
    pub xi_p: Vec<f64>,
    pub xi_c: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub v_hat: Vec<f64>,
}

impl InitialState {
    /// Holds initialized consistently with the state: `ŷ = C_pξ_p`,
    /// `v̂ = C_cξ_c + D_cŷ`.
    pub fn hold_consistent(aug: &AugmentedSystem, xi_p: Vec<f64>, xi_c: Vec<f64>) -> Self {
        let y_hat = aug.plant.c.mul_vec(&xi_p);
        let mut v_hat = aug.ctrl.c.mul_vec(&xi_c);
        for (vi, di) in v_hat.iter_mut().zip(aug.ctrl.d.mul_vec(&y_hat)) {
            *vi += di;
        }
        InitialState {
            xi_p,
            xi_c,
            y_hat,
            v_hat,
        }
    }

    pub fn origin(aug: &AugmentedSystem) -> Self {
        let d = &aug.dims;
        InitialState {
            xi_p: vec![0.0; d.n_p],
            xi_c: vec![0.0; d.n_c],
            y_hat: vec![0.0; d.n_y],
            v_hat: vec![0.0; d.n_v],
        }
    }

    fn check(&self, aug: &AugmentedSystem) -> Result<()> {
        let d = &aug.dims;
        if self.xi_p.len() != d.n_p
            || self.xi_c.len() != d.n_c
            || self.y_hat.len() != d.n_y
            || self.v_hat.len() != d.n_v
        {
            return Err(Error::DimMismatch {
                context: "initial state",
                expected: (d.n_p + d.n_c, d.n_y + d.n_v),
                got: (
                    self.xi_p.len() + self.xi_c.len(),
                    self.y_hat.len() + self.v_hat.len(),
                ),
            });
        }
        Ok(())
    }
}

/// Run the event-triggered loop for `duration` seconds (whole periods only).
/// Deterministic: identical inputs give bit-identical traces.
pub fn simulate(
    aug: &AugmentedSystem,
    params: &DesignParams,
    w: &DisturbanceSignal,
    duration: f64,
    substeps: usize,
    init: &InitialState,
) -> Result<Trace> {
    params.validate()?;
    init.check(aug)?;
    let h = params.h;
    let periods = libm::floor(duration / h + 1e-9) as usize;

    let mut state = SimState {
        xi_p: init.xi_p.clone(),
        xi_c: init.xi_c.clone(),
        y_hat: init.y_hat.clone(),
        v_hat: init.v_hat.clone(),
        eta: params.eta_min,
        tau: 0.0,
        t: 0.0,
    };
    // the threshold mechanism also defines η(0), from ξ'(0)
    let (eta0, initial_n_mu) =
        threshold_update(&state.xi_prime(), params.mu, params.eta_min, params.varrho);
    state.eta = eta0;
    let initial = state.clone();

    let mut samples = Vec::with_capacity(periods);
    let mut flow = Vec::with_capacity(periods * substeps + 1);
    for k in 0..periods {
        let (pre, mut points) = flow_step(&state, &aug.plant, w, h, substeps)?;
        // exact sample time, immune to accumulated rounding
        let mut pre = pre;
        pre.t = (k + 1) as f64 * h;
        pre.tau = h;
        flow.append(&mut points);
        let (post, events, records, n_mu) = jump(&pre, aug, params);
        samples.push(SampleSnapshot {
            t: pre.t,
            pre,
            post: post.clone(),
            events,
            records,
            n_mu,
        });
        state = post;
    }
    // closing flow point so quadrature covers the full horizon
    flow.push(FlowPoint {
        t: state.t,
        tau: state.tau,
        xi: state.xi(),
        w: w.eval(state.t, aug.dims.n_w),
    });

    Ok(Trace {
        h,
        substeps,
        initial,
        initial_n_mu,
        samples,
        flow,
        n_u: aug.dims.n_u(),
    })
}

/// Reference mechanism: every channel transmits its exact value at every
/// sample; no quantization, threshold pinned at its minimum.
pub fn time_triggered_baseline(
    aug: &AugmentedSystem,
    params: &DesignParams,
    w: &DisturbanceSignal,
    duration: f64,
    substeps: usize,
    init: &InitialState,
) -> Result<Trace> {
    params.validate()?;
    init.check(aug)?;
    let h = params.h;
    let periods = libm::floor(duration / h + 1e-9) as usize;
    let full = EventIndexSet::full(aug.dims.n_u());

    let mut state = SimState {
        xi_p: init.xi_p.clone(),
        xi_c: init.xi_c.clone(),
        y_hat: init.y_hat.clone(),
        v_hat: init.v_hat.clone(),
        eta: params.eta_min,
        tau: 0.0,
        t: 0.0,
    };
    let initial = state.clone();

    let mut samples = Vec::with_capacity(periods);
    let mut flow = Vec::with_capacity(periods * substeps + 1);
    for k in 0..periods {
        let (mut pre, mut points) = flow_step(&state, &aug.plant, w, h, substeps)?;
        pre.t = (k + 1) as f64 * h;
        pre.tau = h;
        flow.append(&mut points);

        // exact transmission, same atomic ordering as the quantized jump
        let (u, _) = channel_signals(&pre, aug);
        let y_hat_new = u[..aug.dims.n_y].to_vec();
        let v_hat_new = u[aug.dims.n_y..].to_vec();
        let mut xi_c_new = aug.ctrl.a.mul_vec(&pre.xi_c);
        for (ci, bi) in xi_c_new.iter_mut().zip(aug.ctrl.b.mul_vec(&y_hat_new)) {
            *ci += bi;
        }
        let post = SimState {
            xi_p: pre.xi_p.clone(),
            xi_c: xi_c_new,
            y_hat: y_hat_new,
            v_hat: v_hat_new,
            eta: params.eta_min,
            tau: 0.0,
            t: pre.t,
        };
        samples.push(SampleSnapshot {
            t: pre.t,
            pre,
            post: post.clone(),
            events: full.clone(),
            records: Vec::new(),
            n_mu: 0,
        });
        state = post;
    }
    flow.push(FlowPoint {
        t: state.t,
        tau: state.tau,
        xi: state.xi(),
        w: w.eval(state.t, aug.dims.n_w),
    });

    Ok(Trace {
        h,
        substeps,
        initial,
        initial_n_mu: 0,
        samples,
        flow,
        n_u: aug.dims.n_u(),
    })
}
