//! Jump-LMI assembly and feasibility, threshold sizing, and the worst-case
//! bit/zoom bounds; emits and re-verifies design certificates.
//!
//! The feasibility problem is affine in the decision pair `(P(h), ε)`; it is
//! solved by projected subgradient ascent on the minimum-eigenvalue margin of
//! the most violated constraint, followed by a scale-down pass that shrinks
//! the certificate towards small `λ̄`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::numkernel::{psd_project, spectral_norm, sym_eig};
use crate::riccati::{
    self, build_hamiltonian, check_assumption1, flow, solve_p, Assumption1Report, FlowBlocks,
    HamiltonianSystem, RiccatiSolution,
};
use crate::sysmodel::{delta_bar, jump_matrix, AugmentedSystem, EventIndexSet, ThetaAllocation};

/// Maximum channel count for exact subset enumeration.
pub const MAX_ENUM_CHANNELS: usize = 16;
/// Interior slack the solver targets, relative to each block's norm.
pub const SLACK_REL: f64 = 1e-8;
/// Feasibility tolerance for the assembled jump LMI, relative to its
/// Frobenius norm. The assembled matrix mixes `P`-scale and `ε`-scale blocks,
/// so its eigenvalues are only meaningful to roughly this relative accuracy;
/// the same tolerance is applied on re-verification.
pub const FEAS_TOL_REL: f64 = 1e-6;
/// Relative floor kept on `λ_min(P(h))`: positive definite, but near-singular
/// terminal conditions are accepted.
pub const P_FLOOR_REL: f64 = 1e-12;
/// Lower bound kept on the scalar multiplier `ε`.
pub const MARGIN_EPS: f64 = 1e-8;

/// Fixed design parameters of one synthesis run.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DesignParams {
    /// Sampling interval (s).
    pub h: f64,
    /// Flow decay rate `ρ > 0`.
    pub rho: f64,
    /// L2-gain target `γ`.
    pub gamma: f64,
    /// Zoom factor `μ ∈ (0, 1)`.
    pub mu: f64,
    /// Per-channel threshold weights.
    pub theta: ThetaAllocation,
    /// Threshold-comparison gain `ϱ > 0`.
    pub varrho: f64,
    /// Minimum global threshold.
    pub eta_min: f64,
    /// Performance-set level `c` of the target set.
    pub a_level: f64,
}

impl DesignParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) {
            return Err(Error::OutOfRange {
                context: "sampling interval h",
                value: self.h,
            });
        }
        if !(self.rho > 0.0) {
            return Err(Error::OutOfRange {
                context: "decay rate rho",
                value: self.rho,
            });
        }
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(Error::OutOfRange {
                context: "zoom factor mu",
                value: self.mu,
            });
        }
        if !(self.varrho > 0.0 && self.varrho.is_finite()) {
            return Err(Error::OutOfRange {
                context: "threshold gain varrho",
                value: self.varrho,
            });
        }
        if !(self.eta_min > 0.0) {
            return Err(Error::OutOfRange {
                context: "eta_min",
                value: self.eta_min,
            });
        }
        if !(self.a_level > 0.0) {
            return Err(Error::OutOfRange {
                context: "performance level c",
                value: self.a_level,
            });
        }
        Ok(())
    }
}

/// Precomputed flow quantities at `r = h` used by the jump LMI.
#[derive(Debug, Clone)]
pub struct LmiContext {
    pub s_bar: Matrix,
    pub f11_inv: Matrix,
    /// Constant part of `F̃2`: `sym(F21(h)F11⁻¹(h))`.
    pub f2_const: Matrix,
    /// Jump map of the full index set, `J_𝒥̄`.
    pub j_full: Matrix,
    /// `|Δ̄_𝒥̄|`.
    pub delta_full_norm: f64,
    /// Full flow blocks at `r = h`, kept for the backward Riccati map.
    pub flow_h: FlowBlocks,
    pub assumption: Assumption1Report,
    pub n_xi: usize,
}

impl LmiContext {
    pub fn new(
        aug: &AugmentedSystem,
        ham: &HamiltonianSystem,
        h: f64,
        theta: &ThetaAllocation,
        grid_n: usize,
    ) -> Result<Self> {
        let assumption = check_assumption1(ham, h, grid_n)?;
        if !assumption.ok {
            return Err(Error::AssumptionViolated {
                r: assumption.worst_r,
                rcond: assumption.worst_rcond,
            });
        }
        let f_h = flow(ham, h)?;
        let s_bar = riccati::compute_sbar(&f_h)?;
        let f11_inv = f_h.f11.inverse()?;
        let f2_const = (&f_h.f21 * &f11_inv).symmetrize();
        let full = EventIndexSet::full(aug.dims.n_u());
        let j_full = jump_matrix(aug, &full);
        let delta_full_norm = spectral_norm(&delta_bar(aug, &full, theta))?;
        Ok(LmiContext {
            s_bar,
            f11_inv,
            f2_const,
            j_full,
            delta_full_norm,
            flow_h: f_h,
            assumption,
            n_xi: aug.dims.n_xi(),
        })
    }

    fn f_tilde2(&self, p: &Matrix) -> Matrix {
        (&(&self.f11_inv.transpose() * &(p * &self.f11_inv)) + &self.f2_const).symmetrize()
    }
}

/// Assemble the 4x4-block jump LMI for decision pair `(P(h), ε)`.
pub fn assemble_lmi(
    ctx: &LmiContext,
    varrho: f64,
    p_h: &Matrix,
    eps: f64,
) -> Result<Matrix> {
    if !(varrho > 0.0) {
        return Err(Error::OutOfRange {
            context: "varrho",
            value: varrho,
        });
    }
    let n = ctx.n_xi;
    if p_h.rows() != n || p_h.cols() != n {
        return Err(Error::DimMismatch {
            context: "assemble_lmi P(h)",
            expected: (n, n),
            got: (p_h.rows(), p_h.cols()),
        });
    }
    let p = p_h.symmetrize();
    let f1 = &ctx.f11_inv.transpose() * &(&p * &ctx.s_bar);
    let f3 = &Matrix::identity(n) - &(&ctx.s_bar.transpose() * &(&p * &ctx.s_bar));
    let f2 = ctx.f_tilde2(&p);
    let ratio = ctx.delta_full_norm * ctx.delta_full_norm / (varrho * varrho);
    let tail = &(&p + &(&ctx.j_full.transpose() * &ctx.j_full).scale(eps))
        - &Matrix::identity(n).scale(eps * ratio);

    let mut m = Matrix::zeros(4 * n, 4 * n);
    m.set_block(0, 0, &Matrix::identity(n).scale(eps));
    m.set_block(0, n, &f1);
    m.set_block(n, 0, &f1.transpose());
    m.set_block(0, 2 * n, &f2);
    m.set_block(2 * n, 0, &f2.transpose());
    m.set_block(0, 3 * n, &ctx.j_full.scale(-eps));
    m.set_block(3 * n, 0, &ctx.j_full.transpose().scale(-eps));
    m.set_block(n, n, &f3.symmetrize());
    m.set_block(2 * n, 2 * n, &f2);
    m.set_block(3 * n, 3 * n, &tail.symmetrize());
    Ok(m)
}

/// A feasible decision pair with the eigenvalue margins it achieved.
#[derive(Debug, Clone)]
pub struct FeasiblePoint {
    pub p_h: Matrix,
    pub eps: f64,
    pub margins: FeasibilityMargins,
}

/// Smallest eigenvalues of the constraints at a candidate point.
#[derive(Debug, Clone, Copy)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeasibilityMargins {
    pub lmi: f64,
    pub p_pos: f64,
    pub schur: f64,
    pub eps: f64,
}

impl FeasibilityMargins {
    pub fn all_nonnegative(&self, tol: f64) -> bool {
        self.lmi >= -tol && self.p_pos >= -tol && self.schur >= -tol && self.eps >= -tol
    }
}

/// Solver options for [`solve_feasibility`].
#[derive(Debug, Clone)]
pub struct SolveOpts {
    pub max_iters: usize,
    /// Warm-start decision pair.
    pub warm_start: Option<(Matrix, f64)>,
    /// Shrink the found point towards small `‖P‖` afterwards.
    pub shrink: bool,
}

impl Default for SolveOpts {
    fn default() -> Self {
        SolveOpts {
            max_iters: 600,
            warm_start: None,
            shrink: true,
        }
    }
}

/// Cold-start heuristic. In the large-`ϱ`, large-`ε` limit the LMI reduces to
/// `P ⪰ MᵀPM + J̄ᵀF̃2cJ̄` with `M = F11⁻¹J̄`, a discrete Lyapunov condition;
/// its fixed point (when the iteration converges) is an interior candidate
/// that only needs a matching `ε`, chosen here by a coarse sweep.
fn stein_start(ctx: &LmiContext, varrho: f64) -> Result<(Matrix, f64)> {
    let n = ctx.n_xi;
    let m = &ctx.f11_inv * &ctx.j_full;
    let q0 = (&ctx.j_full.transpose() * &(&ctx.f2_const * &ctx.j_full)).symmetrize();
    let delta = 0.05 * (1.0 + q0.norm_fro());
    let q = &q0 + &Matrix::identity(n).scale(delta);
    let mut p = q.clone();
    let cap = 1e9 * q.norm_fro().max(1.0);
    let mut converged = false;
    for _ in 0..20_000 {
        let next = (&(&m.transpose() * &(&p * &m)) + &q).symmetrize();
        let diff = (&next - &p).norm_fro();
        p = next;
        if diff < 1e-13 * p.norm_fro() {
            converged = true;
            break;
        }
        if !p.is_finite() || p.norm_fro() > cap {
            break;
        }
    }
    if !converged {
        // non-contractive period map: fall back to a bare scaled identity
        let c0 = 1.0 / (1.0 + spectral_norm(&ctx.f2_const)?);
        return Ok((Matrix::identity(n).scale(c0), 1.0));
    }
    // keep the Schur condition interior
    let shh = spectral_norm(&(&ctx.s_bar.transpose() * &(&p * &ctx.s_bar)))?;
    if shh >= 0.5 {
        p = p.scale(0.5 / shh);
    }
    // sweep ε over a coarse logarithmic grid, keep the best worst-margin
    let f2_top = sym_eig(&ctx.f_tilde2(&p))?.lambda_max().max(MARGIN_EPS);
    let mut best = (1.0, f64::NEG_INFINITY);
    for k in 0..8 {
        let eps = f2_top * libm::pow(4.0, k as f64 - 1.0);
        let eval = eval_constraints(ctx, varrho, &p, eps)?;
        let worst = (0..3)
            .map(|k| eval.min_eig[k] - eval.slack[k])
            .fold(f64::INFINITY, f64::min);
        if worst > best.1 {
            best = (eps, worst);
        }
    }
    Ok((p, best.0))
}

/// Backward Riccati map `P(h) ↦ P(0)` through the flow blocks at `h`.
fn riccati_map(ctx: &LmiContext, p: &Matrix) -> Result<Matrix> {
    let num = &ctx.flow_h.f21 + &(&ctx.flow_h.f22 * p);
    let den = &ctx.flow_h.f11 + &(&ctx.flow_h.f12 * p);
    Ok((&num * &den.inverse()?).symmetrize())
}

/// Fixed point of the per-period map `P(h) ↦ J̄ᵀP(0)J̄`, the exact large-`ϱ`
/// limit of the jump LMI. When the closed loop admits a certificate at all,
/// this lands on (or next to) the boundary of the feasible set.
fn riccati_start(ctx: &LmiContext) -> Result<Option<Matrix>> {
    let n = ctx.n_xi;
    let jt = ctx.j_full.transpose();
    let mut p = Matrix::identity(n);
    for _ in 0..5_000 {
        let p0 = match riccati_map(ctx, &p) {
            Ok(p0) => p0,
            Err(_) => return Ok(None),
        };
        let floor = 1e-9 * p.norm_fro().max(1.0);
        let next =
            (&(&jt * &(&p0 * &ctx.j_full)) + &Matrix::identity(n).scale(floor)).symmetrize();
        let diff = (&next - &p).norm_fro();
        p = next;
        if diff < 1e-13 * p.norm_fro() {
            return Ok(Some(p));
        }
        if !p.is_finite() || p.norm_fro() > 1e9 {
            return Ok(None);
        }
    }
    Ok(None)
}

/// Pick `ε` on a logarithmic grid by the best worst-margin at fixed `P`.
fn eps_sweep(ctx: &LmiContext, varrho: f64, p: &Matrix) -> Result<f64> {
    let scale = p.norm_fro().max(MARGIN_EPS);
    let mut best = (scale, f64::NEG_INFINITY);
    for k in 0..40 {
        let eps = scale * 1e-2 * libm::pow(1.6, k as f64);
        let eval = eval_constraints(ctx, varrho, p, eps)?;
        let worst = (0..3)
            .map(|j| eval.min_eig[j] - eval.slack[j])
            .fold(f64::INFINITY, f64::min);
        if worst > best.1 {
            best = (eps, worst);
        }
    }
    Ok(best.0)
}

/// Linearization of the jump LMI around the decision pair: offset `A(0, 0)`
/// and the images of a basis of symmetric `P` directions plus the `ε`
/// direction, with the Gram matrix of the lifted least-squares system.
struct AffineLift {
    a0: Matrix,
    basis_p: Vec<Matrix>,
    images: Vec<Matrix>,
    gram: Matrix,
    n: usize,
}

impl AffineLift {
    fn new(ctx: &LmiContext, varrho: f64) -> Result<AffineLift> {
        let n = ctx.n_xi;
        let a0 = assemble_lmi(ctx, varrho, &Matrix::zeros(n, n), 0.0)?;
        let mut basis_p = Vec::new();
        for i in 0..n {
            for j in i..n {
                let mut b = Matrix::zeros(n, n);
                b[(i, j)] = 1.0;
                b[(j, i)] = 1.0;
                if i == j {
                    b[(i, i)] = 1.0;
                }
                basis_p.push(b);
            }
        }
        let mut images: Vec<Matrix> = basis_p
            .iter()
            .map(|b| Ok(&assemble_lmi(ctx, varrho, b, 0.0)? - &a0))
            .collect::<Result<_>>()?;
        images.push(&assemble_lmi(ctx, varrho, &Matrix::zeros(n, n), 1.0)? - &a0);

        let dot = |a: &Matrix, b: &Matrix| -> f64 {
            a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
        };
        let dim = images.len();
        let mut gram = Matrix::zeros(dim, dim);
        for a in 0..dim {
            for b in a..dim {
                let mut g = dot(&images[a], &images[b]);
                // proximity part of the lifted metric: the (P, ε) coordinates
                if a < dim - 1 && b < dim - 1 {
                    g += dot(&basis_p[a], &basis_p[b]);
                } else if a == dim - 1 && b == dim - 1 {
                    g += 1.0;
                }
                gram[(a, b)] = g;
                gram[(b, a)] = g;
            }
        }
        Ok(AffineLift {
            a0,
            basis_p,
            images,
            gram,
            n,
        })
    }

    /// Least-squares projection onto the graph of the affine map: find the
    /// `(P, ε)` whose lifted image `(A(P,ε), P, ε)` is closest to
    /// `(y, q, e)`.
    fn project(&self, y: &Matrix, q: &Matrix, e: f64) -> Result<(Matrix, f64)> {
        let dim = self.images.len();
        let resid = y - &self.a0;
        let dot = |a: &Matrix, b: &Matrix| -> f64 {
            a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
        };
        let mut rhs = vec![0.0; dim];
        for k in 0..dim {
            rhs[k] = dot(&self.images[k], &resid);
            if k < dim - 1 {
                rhs[k] += dot(&self.basis_p[k], q);
            } else {
                rhs[k] += e;
            }
        }
        let c = self.gram.solve(&Matrix::column(&rhs))?;
        let mut p = Matrix::zeros(self.n, self.n);
        for (k, b) in self.basis_p.iter().enumerate() {
            for i in 0..self.n {
                for j in 0..self.n {
                    p[(i, j)] += c[(k, 0)] * b[(i, j)];
                }
            }
        }
        Ok((p.symmetrize(), c[(dim - 1, 0)]))
    }
}

/// Alternating projections between the lifted PSD cone (with interior
/// margins) and the graph of the affine constraint map. Converges into the
/// feasible set when it has interior; used to close small residual gaps the
/// cold start leaves.
fn projection_refine(
    ctx: &LmiContext,
    varrho: f64,
    mut p: Matrix,
    mut eps: f64,
    max_iters: usize,
) -> Result<(Matrix, f64)> {
    let lift = AffineLift::new(ctx, varrho)?;
    for _ in 0..max_iters {
        let eval = eval_constraints(ctx, varrho, &p, eps)?;
        if eval.interior() && eps >= MARGIN_EPS {
            break;
        }
        let x = assemble_lmi(ctx, varrho, &p, eps)?;
        // aim past the verification slack so the limit point is interior
        let sigma_x = 3.0 * SLACK_REL * (1.0 + x.norm_fro());
        let sigma_p = 3.0 * SLACK_REL * (1.0 + p.norm_fro());
        let y = &psd_project(&(&x - &Matrix::identity(x.rows()).scale(sigma_x)), 0.0)?
            + &Matrix::identity(x.rows()).scale(sigma_x);
        let q = &psd_project(&(&p - &Matrix::identity(ctx.n_xi).scale(sigma_p)), 0.0)?
            + &Matrix::identity(ctx.n_xi).scale(sigma_p);
        let (p_next, eps_next) = lift.project(&y, &q, eps.max(MARGIN_EPS))?;
        p = p_next;
        eps = eps_next.max(MARGIN_EPS);
        if !p.is_finite() || !eps.is_finite() {
            return Err(Error::NonFinite {
                context: "projection refinement",
            });
        }
    }
    Ok((p, eps))
}

struct ConstraintEval {
    /// index 0: LMI, 1: P, 2: Schur
    min_eig: [f64; 3],
    /// Acceptance floor per constraint: a point is feasible when every
    /// `min_eig[k] >= slack[k]`. Positive for the side conditions (interior
    /// slack demanded), negative for the assembled LMI (scale-relative
    /// tolerance granted).
    slack: [f64; 3],
    /// Interior target the solver polishes towards before settling for the
    /// acceptance floor; strictly positive for every constraint.
    aim: [f64; 3],
    vec: [Vec<f64>; 3],
}

impl ConstraintEval {
    fn interior(&self) -> bool {
        (0..3).all(|k| self.min_eig[k] >= self.aim[k])
    }

    /// Worst gap to the acceptance floor; positive means feasible.
    fn worst_gap(&self) -> f64 {
        (0..3)
            .map(|k| self.min_eig[k] - self.slack[k])
            .fold(f64::INFINITY, f64::min)
    }
}

fn eval_constraints(
    ctx: &LmiContext,
    varrho: f64,
    p: &Matrix,
    eps: f64,
) -> Result<ConstraintEval> {
    let n = ctx.n_xi;
    let lmi = assemble_lmi(ctx, varrho, p, eps)?;
    let schur = (&Matrix::identity(n) - &(&ctx.s_bar.transpose() * &(p * &ctx.s_bar))).symmetrize();
    let mats = [&lmi, p, &schur];
    let mut min_eig = [0.0; 3];
    let mut slack = [0.0; 3];
    let mut aim = [0.0; 3];
    let mut vecs: [Vec<f64>; 3] = [vec![], vec![], vec![]];
    for (k, m) in mats.iter().enumerate() {
        let eig = sym_eig(m)?;
        min_eig[k] = eig.lambda_min();
        let scale = 1.0 + m.norm_fro();
        (slack[k], aim[k]) = match k {
            0 => (-FEAS_TOL_REL * scale, SLACK_REL * scale),
            1 => (P_FLOOR_REL * scale, P_FLOOR_REL * scale),
            _ => (SLACK_REL * scale, SLACK_REL * scale),
        };
        let col = eig.values.len() - 1;
        vecs[k] = (0..m.rows()).map(|i| eig.vectors[(i, col)]).collect();
    }
    Ok(ConstraintEval {
        min_eig,
        slack,
        aim,
        vec: vecs,
    })
}

/// Subgradient of `λ_min` of constraint `k` with respect to `(P, ε)`.
fn subgradient(
    ctx: &LmiContext,
    varrho: f64,
    k: usize,
    v: &[f64],
) -> (Matrix, f64) {
    let n = ctx.n_xi;
    match k {
        0 => {
            let v1 = &v[..n];
            let v2 = &v[n..2 * n];
            let v3 = &v[2 * n..3 * n];
            let v4 = &v[3 * n..];
            let a1 = ctx.f11_inv.mul_vec(v1);
            let a3 = ctx.f11_inv.mul_vec(v3);
            let sv2 = ctx.s_bar.mul_vec(v2);
            let mut g = Matrix::zeros(n, n);
            let add_outer = |g: &mut Matrix, x: &[f64], y: &[f64], w: f64| {
                for i in 0..n {
                    for j in 0..n {
                        g[(i, j)] += w * x[i] * y[j];
                    }
                }
            };
            // 2 v1ᵀ F11⁻ᵀ P S̄ v2
            add_outer(&mut g, &a1, &sv2, 2.0);
            // −v2ᵀ S̄ᵀ P S̄ v2
            add_outer(&mut g, &sv2, &sv2, -1.0);
            // 2 v1ᵀ F11⁻ᵀ P F11⁻¹ v3 and v3ᵀ F11⁻ᵀ P F11⁻¹ v3
            add_outer(&mut g, &a1, &a3, 2.0);
            add_outer(&mut g, &a3, &a3, 1.0);
            // v4ᵀ P v4
            add_outer(&mut g, v4, v4, 1.0);
            let g = g.symmetrize();

            let jv4 = ctx.j_full.mul_vec(v4);
            let ratio = ctx.delta_full_norm * ctx.delta_full_norm / (varrho * varrho);
            let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
            let g_eps = dot(v1, v1) - 2.0 * dot(v1, &jv4) + dot(&jv4, &jv4) - ratio * dot(v4, v4);
            (g, g_eps)
        }
        1 => {
            let mut g = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    g[(i, j)] = v[i] * v[j];
                }
            }
            (g, 0.0)
        }
        _ => {
            let sv = ctx.s_bar.mul_vec(v);
            let mut g = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    g[(i, j)] = -sv[i] * sv[j];
                }
            }
            (g, 0.0)
        }
    }
}

/// Search for `(P(h), ε)` making the jump LMI and its side conditions hold
/// with interior slack. Returns `None` when the iteration budget runs out
/// without a verified point (heuristic solver: no infeasibility certificate).
pub fn solve_feasibility(
    ctx: &LmiContext,
    varrho: f64,
    opts: &SolveOpts,
) -> Result<Option<FeasiblePoint>> {
    Ok(solve_tracked(ctx, varrho, opts)?.0)
}

/// Same as [`solve_feasibility`] but also returns the last iterate, feasible
/// or not, so a caller scanning a parameter grid can warm-start from it.
fn solve_tracked(
    ctx: &LmiContext,
    varrho: f64,
    opts: &SolveOpts,
) -> Result<(Option<FeasiblePoint>, (Matrix, f64))> {
    let (mut p, mut eps) = match &opts.warm_start {
        Some((p0, e0)) => (p0.symmetrize(), (*e0).max(MARGIN_EPS)),
        None => match riccati_start(ctx)? {
            Some(p0) => {
                let eps0 = eps_sweep(ctx, varrho, &p0)?;
                (p0, eps0)
            }
            None => stein_start(ctx, varrho)?,
        },
    };

    // close any residual gap by alternating projections before polishing
    {
        let eval = eval_constraints(ctx, varrho, &p, eps)?;
        if !eval.interior() {
            let (p_r, eps_r) = projection_refine(ctx, varrho, p.clone(), eps, opts.max_iters)?;
            p = p_r;
            eps = eps_r;
        }
    }

    // best-so-far iterate by worst gap to the acceptance floor
    let mut best: Option<(f64, Matrix, f64)> = None;
    for _ in 0..opts.max_iters {
        let eval = eval_constraints(ctx, varrho, &p, eps)?;
        if eps >= MARGIN_EPS {
            let gap = eval.worst_gap();
            if best.as_ref().map_or(true, |(g, _, _)| gap > *g) {
                best = Some((gap, p.clone(), eps));
            }
            if eval.interior() {
                break;
            }
        }
        // most violated constraint relative to its interior target
        let mut worst = 0;
        let mut worst_gap = f64::INFINITY;
        for k in 0..3 {
            let gap = eval.min_eig[k] - eval.aim[k];
            if gap < worst_gap {
                worst_gap = gap;
                worst = k;
            }
        }
        let (g_p, g_eps) = subgradient(ctx, varrho, worst, &eval.vec[worst]);
        let g_fro = g_p.norm_fro();
        let g_norm_sq = g_fro * g_fro + g_eps * g_eps;
        if g_norm_sq < 1e-300 {
            break;
        }
        // Polyak step towards a point just past the interior target
        let target = 2.0 * eval.aim[worst];
        let step = (target - eval.min_eig[worst]) / g_norm_sq;
        p = (&p + &g_p.scale(step)).symmetrize();
        eps = (eps + step * g_eps).max(MARGIN_EPS);
    }

    // settle for the tolerance floor if the interior target was out of reach
    if let Some((gap, p_best, eps_best)) = best {
        if gap >= 0.0 {
            let point = if opts.shrink {
                shrink_point(ctx, varrho, p_best, eps_best)?
            } else {
                let margins = margins_at(ctx, varrho, &p_best, eps_best)?;
                FeasiblePoint {
                    p_h: p_best,
                    eps: eps_best,
                    margins,
                }
            };
            let state = (point.p_h.clone(), point.eps);
            return Ok((Some(point), state));
        }
    }
    Ok((None, (p, eps)))
}

fn margins_at(ctx: &LmiContext, varrho: f64, p: &Matrix, eps: f64) -> Result<FeasibilityMargins> {
    let eval = eval_constraints(ctx, varrho, p, eps)?;
    Ok(FeasibilityMargins {
        lmi: eval.min_eig[0],
        p_pos: eval.min_eig[1],
        schur: eval.min_eig[2],
        eps,
    })
}

/// Scale `(P, ε)` down while all constraints keep their interior slack;
/// smaller `‖P‖` keeps `λ̄` (and with it the inner set level) small.
fn shrink_point(
    ctx: &LmiContext,
    varrho: f64,
    mut p: Matrix,
    mut eps: f64,
) -> Result<FeasiblePoint> {
    for _ in 0..60 {
        let p_try = p.scale(0.5);
        let eps_try = (eps * 0.5).max(MARGIN_EPS);
        let eval = eval_constraints(ctx, varrho, &p_try, eps_try)?;
        // don't shrink a near-singular terminal condition further: the
        // spectral summaries λ̄/λ̲ lose accuracy as λ_min(P) approaches the
        // floor, and the worst-case bounds are scale-invariant anyway
        let conditioned = eval.min_eig[1] >= 1e-8 * (1.0 + p_try.norm_fro());
        let ok = conditioned && (0..3).all(|k| eval.min_eig[k] >= eval.slack[k]);
        if !ok {
            break;
        }
        p = p_try;
        eps = eps_try;
    }
    let margins = margins_at(ctx, varrho, &p, eps)?;
    Ok(FeasiblePoint { p_h: p, eps, margins })
}

/// Outcome of the line search over `ϱ`.
#[derive(Debug, Clone)]
pub struct LineSearchOutcome {
    pub varrho: f64,
    pub point: FeasiblePoint,
    /// Per-grid-point `(ϱ, feasible)` diagnostics up to and including the hit.
    pub diagnostics: Vec<(f64, bool)>,
}

/// Scan a geometric `ϱ` grid in ascending order and return the first
/// (smallest) feasible point. Subsequent grid points warm-start from the
/// previous solver state through `opts`.
pub fn line_search_varrho(
    ctx: &LmiContext,
    range: (f64, f64),
    steps: usize,
    opts: &SolveOpts,
) -> Result<core::result::Result<LineSearchOutcome, Vec<(f64, bool)>>> {
    let (lo, hi) = range;
    if !(lo > 0.0 && hi >= lo) || steps == 0 {
        return Err(Error::OutOfRange {
            context: "varrho search range",
            value: lo,
        });
    }
    let mut diagnostics = Vec::with_capacity(steps);
    let mut local = opts.clone();
    for j in 0..steps {
        let t = if steps == 1 {
            0.0
        } else {
            j as f64 / (steps - 1) as f64
        };
        let varrho = lo * libm::pow(hi / lo, t);
        let (found, last) = solve_tracked(ctx, varrho, &local)?;
        match found {
            Some(point) => {
                diagnostics.push((varrho, true));
                return Ok(Ok(LineSearchOutcome {
                    varrho,
                    point,
                    diagnostics,
                }));
            }
            None => {
                diagnostics.push((varrho, false));
                // carry the iterate into the next grid point
                local.warm_start = Some(last);
            }
        }
    }
    Ok(Err(diagnostics))
}

/// `ϱ̄ = max over all channel subsets of |J_𝒥|ϱ + |Δ̄_𝒥|`, by exact
/// enumeration of the `2^{n_u}` subsets.
pub fn varrho_bar(
    aug: &AugmentedSystem,
    theta: &ThetaAllocation,
    varrho: f64,
) -> Result<f64> {
    let n_u = aug.dims.n_u();
    if n_u > MAX_ENUM_CHANNELS {
        return Err(Error::TooManyChannels {
            n_u,
            limit: MAX_ENUM_CHANNELS,
        });
    }
    let mut best = 0.0f64;
    for bits in 0..(1u32 << n_u) {
        let set = EventIndexSet::from_bits(bits, n_u)?;
        let jn = spectral_norm(&jump_matrix(aug, &set))?;
        let dn = spectral_norm(&delta_bar(aug, &set, theta))?;
        best = best.max(jn * varrho + dn);
    }
    Ok(best)
}

/// Largest `η_min` keeping the inner Lyapunov sublevel set inside the target
/// set: `λ̄ ϱ̄² η_min² ≤ c`.
pub fn select_eta_min(lambda_hi: f64, varrho_bar: f64, level_c: f64) -> Result<f64> {
    if !(level_c > 0.0) {
        return Err(Error::OutOfRange {
            context: "performance level c",
            value: level_c,
        });
    }
    Ok(libm::sqrt(level_c / (lambda_hi * varrho_bar * varrho_bar)))
}

/// The shared square-root factor of both worst-case bounds.
fn bound_sqrt_factor(
    lambda_hi: f64,
    lambda_lo: f64,
    varrho_bar: f64,
    rho: f64,
    eta_min: f64,
    w0: f64,
    w_inf: f64,
) -> f64 {
    let e2 = eta_min * eta_min;
    libm::sqrt(
        w0 / (e2 * lambda_lo)
            + w_inf * w_inf / (2.0 * rho * e2 * lambda_lo)
            + lambda_hi * varrho_bar * varrho_bar / lambda_lo,
    )
}

/// Worst-case quantization step count `m̄_x` over all channels.
pub fn bound_mx(
    cd_norm: f64,
    theta: &ThetaAllocation,
    lambda_hi: f64,
    lambda_lo: f64,
    varrho_bar: f64,
    rho: f64,
    eta_min: f64,
    w0: f64,
    w_inf: f64,
) -> f64 {
    let factor = bound_sqrt_factor(lambda_hi, lambda_lo, varrho_bar, rho, eta_min, w0, w_inf);
    (1.0 + cd_norm) / theta.min_weight() * factor
}

/// Worst-case zoom level `m̄_μ`, rounded up to an integer.
pub fn bound_mmu(
    cd_norm: f64,
    mu: f64,
    varrho: f64,
    lambda_hi: f64,
    lambda_lo: f64,
    varrho_bar: f64,
    rho: f64,
    eta_min: f64,
    w0: f64,
    w_inf: f64,
) -> u32 {
    let factor = bound_sqrt_factor(lambda_hi, lambda_lo, varrho_bar, rho, eta_min, w0, w_inf);
    let arg = (1.0 + cd_norm) / varrho * factor;
    if arg <= 0.0 {
        return 0;
    }
    let raw = -libm::log(arg) / libm::log(mu);
    if raw <= 0.0 {
        0
    } else {
        libm::ceil(raw) as u32
    }
}

/// Bits needed to transmit a step count `m` (sign bit included).
pub fn bits_for_count(m: u64) -> u32 {
    if m <= 1 {
        1
    } else {
        let ceil_log2 = 64 - (m - 1).leading_zeros() as u32;
        ceil_log2 + 1
    }
}

/// Same mapping for a real-valued worst-case bound.
pub fn bits_for_bound(m: f64) -> u32 {
    if m <= 1.0 {
        1
    } else {
        libm::ceil(libm::log2(m)) as u32 + 1
    }
}

/// The verifiable output of the design pipeline.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DesignCertificate {
    pub params: DesignParams,
    pub p_h: Matrix,
    pub eps: f64,
    /// Grid intervals used for the Riccati evaluation.
    pub grid_n: usize,
    pub lambda_hi: f64,
    pub lambda_lo: f64,
    pub p0: Matrix,
    pub varrho_bar: f64,
    /// `‖[C D]‖₂` of the model, kept so the bit/zoom bounds can be
    /// re-evaluated from the certificate alone.
    pub cd_norm: f64,
    pub m_bar_x: f64,
    pub m_bar_mu: u32,
    pub margins: FeasibilityMargins,
}

impl DesignCertificate {
    /// Inner sublevel-set value `λ̄ ϱ̄² η_min²`.
    pub fn inner_level(&self) -> f64 {
        self.lambda_hi * self.varrho_bar * self.varrho_bar * self.params.eta_min * self.params.eta_min
    }

    /// Re-solve the sampled Riccati flow this certificate summarizes.
    pub fn riccati(&self, aug: &AugmentedSystem) -> Result<RiccatiSolution> {
        let ham = build_hamiltonian(aug, self.params.rho, self.params.gamma)?;
        solve_p(&ham, &self.p_h, self.params.h, self.grid_n)
    }
}

/// One line of a verification report.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub margin: f64,
    pub ok: bool,
}

/// Full hypothesis recheck of a certificate against a model.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }

    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.ok)
    }
}

/// Recompute every eigenvalue condition and hypothesis behind a certificate.
/// Failures are reported, not thrown; only structural errors (dimension
/// mismatch, singular flow) surface as `Err`.
pub fn verify_certificate(cert: &DesignCertificate, aug: &AugmentedSystem) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    let p = &cert.params;
    let mut push = |name: &'static str, margin: f64| {
        checks.push(Check {
            name,
            margin,
            ok: margin >= 0.0,
        });
    };

    push("rho-positive", p.rho);
    push("mu-in-unit-interval", (p.mu).min(1.0 - p.mu));
    let dtd = &aug.d_bar.transpose() * &aug.d_bar;
    // strict: γ must be positive and γ² must exceed λ_max(D̄ᵀD̄)
    let mut gain_margin = if p.gamma > 0.0 {
        p.gamma * p.gamma - sym_eig(&dtd)?.lambda_max()
    } else {
        -1.0
    };
    if gain_margin == 0.0 {
        gain_margin = -f64::MIN_POSITIVE;
    }
    push("gain-bound", gain_margin);
    if gain_margin < 0.0 {
        return Ok(VerifyReport { checks });
    }

    let ham = build_hamiltonian(aug, p.rho, p.gamma)?;
    let assumption = check_assumption1(&ham, p.h, cert.grid_n)?;
    push(
        "assumption-1-rcond",
        assumption.worst_rcond - assumption.rcond_min,
    );
    if !assumption.ok {
        return Ok(VerifyReport { checks });
    }

    let ctx = LmiContext::new(aug, &ham, p.h, &p.theta, cert.grid_n)?;
    let tol = |m: &Matrix| 1e-9 * (1.0 + m.norm_fro());

    let p_eig = sym_eig(&cert.p_h)?;
    push("p-terminal-positive", p_eig.lambda_min());
    let schur =
        (&Matrix::identity(ctx.n_xi) - &(&ctx.s_bar.transpose() * &(&cert.p_h * &ctx.s_bar)))
            .symmetrize();
    push("schur-positive", sym_eig(&schur)?.lambda_min() + tol(&schur));
    let lmi = assemble_lmi(&ctx, p.varrho, &cert.p_h, cert.eps)?;
    // same scale-relative tolerance the solver accepts feasibility under
    push(
        "jump-lmi",
        sym_eig(&lmi)?.lambda_min() + FEAS_TOL_REL * (1.0 + lmi.norm_fro()),
    );
    push("eps-positive", cert.eps);

    // spectral summary consistency
    let riccati_ok = cert.riccati(aug);
    match riccati_ok {
        Ok(sol) => {
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
            push("lambda-hi-consistent", 1e-6 - rel(cert.lambda_hi, sol.lambda_hi));
            push("lambda-lo-consistent", 1e-6 - rel(cert.lambda_lo, sol.lambda_lo));
        }
        Err(_) => push("riccati-resolve", -1.0),
    }

    let vb = varrho_bar(aug, &p.theta, p.varrho)?;
    push(
        "varrho-bar-consistent",
        1e-6 - (vb - cert.varrho_bar).abs() / vb.max(1e-300),
    );
    let cd = spectral_norm(&aug.cd_concat())?;
    push(
        "cd-norm-consistent",
        1e-6 - (cd - cert.cd_norm).abs() / cd.max(1e-300),
    );

    // enclosure of the inner sublevel set in the target set
    let inner = cert.lambda_hi * cert.varrho_bar * cert.varrho_bar * p.eta_min * p.eta_min;
    push("inner-set-enclosure", p.a_level * (1.0 + 1e-9) - inner);

    Ok(VerifyReport { checks })
}

/// Human-readable rendering of a verification report.
pub fn render_report(report: &VerifyReport) -> String {
    use core::fmt::Write;
    let mut out = String::new();
    for c in &report.checks {
        let _ = writeln!(
            out,
            "{:<24} {} (margin {:+.3e})",
            c.name,
            if c.ok { "ok" } else { "FAIL" },
            c.margin
        );
    }
    out
}
