//! Hamiltonian flow machinery for the sampled Riccati solution `P(r)` on
//! `[0, h]`, the invertibility check of the flow block `F11(r)`, and the
//! factor `S̄` with `S̄S̄ᵀ = −F11⁻¹(h)F12(h)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::numkernel::{expm, psd_factor, rcond_spectral, sym_eig};
use crate::sysmodel::AugmentedSystem;

/// Relative tolerance for the finite-difference Riccati residual.
pub const TOL_RIC: f64 = 1e-5;
/// Relative tolerance for the two-formula cross-check of `P(0)`.
pub const TOL_P0: f64 = 1e-8;
/// Reciprocal condition number below which `F11(r)` counts as singular.
pub const RCOND_MIN: f64 = 1e-8;
/// Default number of grid intervals on `[0, h]`.
pub const DEFAULT_GRID: usize = 64;

/// The Hamiltonian matrix `H` with its blocks, the feedthrough factor
/// `M = (I − γ⁻²D̄ᵀD̄)⁻¹`, and the design rates `(ρ, γ)`.
#[derive(Debug, Clone)]
pub struct HamiltonianSystem {
    pub h_mat: Matrix,
    pub m_mat: Matrix,
    pub rho: f64,
    pub gamma: f64,
    pub n_xi: usize,
}

/// Blocks of `F(r) = e^{−Hr}` partitioned at `n_ξ`.
#[derive(Debug, Clone)]
pub struct FlowBlocks {
    pub f11: Matrix,
    pub f12: Matrix,
    pub f21: Matrix,
    pub f22: Matrix,
}

impl FlowBlocks {
    fn split(f: &Matrix, n: usize) -> FlowBlocks {
        FlowBlocks {
            f11: f.block(0, 0, n, n),
            f12: f.block(0, n, n, n),
            f21: f.block(n, 0, n, n),
            f22: f.block(n, n, n, n),
        }
    }
}

/// Build the Hamiltonian matrix for decay rate `ρ > 0` and gain target `γ`
/// with `γ² > λ_max(D̄ᵀD̄)`.
pub fn build_hamiltonian(aug: &AugmentedSystem, rho: f64, gamma: f64) -> Result<HamiltonianSystem> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::OutOfRange {
            context: "decay rate rho",
            value: rho,
        });
    }
    let n = aug.dims.n_xi();
    let n_w = aug.dims.n_w;
    let n_z = aug.dims.n_z;
    let gamma_sq = gamma * gamma;
    let dtd = &aug.d_bar.transpose() * &aug.d_bar;
    let lambda_max = sym_eig(&dtd)?.lambda_max();
    if !(gamma_sq > lambda_max) {
        return Err(Error::GainBound {
            gamma_sq,
            lambda_max,
        });
    }

    // M = (I − γ⁻² D̄ᵀD̄)⁻¹
    let m_mat = (&Matrix::identity(n_w) - &dtd.scale(1.0 / gamma_sq)).inverse()?;

    let bm = &aug.b_bar * &m_mat;
    let h11 = &(&aug.a_bar + &Matrix::identity(n).scale(rho))
        + &(&bm * &(&aug.d_bar.transpose() * &aug.c_bar)).scale(1.0 / gamma_sq);
    let h12 = &bm * &aug.b_bar.transpose();
    // H21 = −C̄ᵀ(γ²I − D̄D̄ᵀ)⁻¹C̄
    let ddt = &aug.d_bar * &aug.d_bar.transpose();
    let inner = (&Matrix::identity(n_z).scale(gamma_sq) - &ddt).inverse()?;
    let h21 = (&aug.c_bar.transpose() * &(&inner * &aug.c_bar)).scale(-1.0);
    let h22 = h11.transpose().scale(-1.0);

    let mut h_mat = Matrix::zeros(2 * n, 2 * n);
    h_mat.set_block(0, 0, &h11);
    h_mat.set_block(0, n, &h12.symmetrize());
    h_mat.set_block(n, 0, &h21.symmetrize());
    h_mat.set_block(n, n, &h22);

    Ok(HamiltonianSystem {
        h_mat,
        m_mat,
        rho,
        gamma,
        n_xi: n,
    })
}

/// Blocks of the flow `F(r) = e^{−Hr}` for `r ≥ 0`.
pub fn flow(ham: &HamiltonianSystem, r: f64) -> Result<FlowBlocks> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::OutOfRange {
            context: "flow time r",
            value: r,
        });
    }
    let f = expm(&ham.h_mat, -r)?;
    Ok(FlowBlocks::split(&f, ham.n_xi))
}

/// Report of the flow-block invertibility sweep on `[0, h]`.
#[derive(Debug, Clone)]
pub struct Assumption1Report {
    pub ok: bool,
    pub worst_r: f64,
    pub worst_rcond: f64,
    pub rcond_min: f64,
}

/// Check invertibility of `F11(r)` on a uniform grid over `[0, h]` via the
/// reciprocal spectral condition number.
pub fn check_assumption1(ham: &HamiltonianSystem, h: f64, n_grid: usize) -> Result<Assumption1Report> {
    if n_grid < 2 {
        return Err(Error::OutOfRange {
            context: "assumption-1 grid density",
            value: n_grid as f64,
        });
    }
    let mut worst_r = 0.0;
    let mut worst = f64::INFINITY;
    for j in 0..=n_grid {
        let r = h * j as f64 / n_grid as f64;
        let blocks = flow(ham, r)?;
        let rc = rcond_spectral(&blocks.f11)?;
        if rc < worst {
            worst = rc;
            worst_r = r;
        }
    }
    Ok(Assumption1Report {
        ok: worst > RCOND_MIN,
        worst_r,
        worst_rcond: worst,
        rcond_min: RCOND_MIN,
    })
}

/// `S̄` with `S̄S̄ᵀ = −F11⁻¹(h)F12(h)`; a non-PSD right-hand side means the
/// flow-invertibility hypothesis (or an upstream one) fails.
pub fn compute_sbar(flow_at_h: &FlowBlocks) -> Result<Matrix> {
    let prod = flow_at_h.f11.solve(&flow_at_h.f12)?.scale(-1.0);
    psd_factor(&prod.symmetrize())
}

/// Sampled Riccati solution on `[0, h]`.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub h: f64,
    pub grid: Vec<f64>,
    pub p_grid: Vec<Matrix>,
    pub s_bar: Matrix,
    pub lambda_hi: f64,
    pub lambda_lo: f64,
}

impl RiccatiSolution {
    pub fn p_at_grid(&self, j: usize) -> &Matrix {
        &self.p_grid[j]
    }

    pub fn p0(&self) -> &Matrix {
        &self.p_grid[0]
    }

    pub fn p_h(&self) -> &Matrix {
        &self.p_grid[self.p_grid.len() - 1]
    }

    /// `P(r)` by entrywise linear interpolation between grid points.
    pub fn p_interp(&self, r: f64) -> Result<Matrix> {
        if !(r >= -1e-12 && r <= self.h + 1e-12) {
            return Err(Error::OutOfRange {
                context: "P(r) interpolation point",
                value: r,
            });
        }
        let r = r.clamp(0.0, self.h);
        let n = self.grid.len() - 1;
        let pos = r / self.h * n as f64;
        let j = (pos as usize).min(n - 1);
        let t = pos - j as f64;
        Ok(&self.p_grid[j].scale(1.0 - t) + &self.p_grid[j + 1].scale(t))
    }
}

/// Evaluate `P(r)` on a uniform grid through the Hamiltonian flow
/// representation, cross-checking `P(0)` against the closed form.
///
/// `P(r) = (F21(h−r) + F22(h−r)P(h)) (F11(h−r) + F12(h−r)P(h))⁻¹`.
pub fn solve_p(
    ham: &HamiltonianSystem,
    p_h: &Matrix,
    h: f64,
    n_grid: usize,
) -> Result<RiccatiSolution> {
    let n = ham.n_xi;
    if p_h.rows() != n || p_h.cols() != n {
        return Err(Error::DimMismatch {
            context: "terminal P(h)",
            expected: (n, n),
            got: (p_h.rows(), p_h.cols()),
        });
    }
    let p_h = p_h.symmetrize();
    if sym_eig(&p_h)?.lambda_min() <= 0.0 {
        return Err(Error::NotPsd {
            min_eig: sym_eig(&p_h)?.lambda_min(),
        });
    }
    let f_h = flow(ham, h)?;
    let s_bar = compute_sbar(&f_h)?;
    // factorization hypothesis: I − S̄ᵀP(h)S̄ ≻ 0
    let schur = &Matrix::identity(n) - &(&s_bar.transpose() * &(&p_h * &s_bar));
    if sym_eig(&schur)?.lambda_min() <= 0.0 {
        return Err(Error::NotPsd {
            min_eig: sym_eig(&schur)?.lambda_min(),
        });
    }

    let mut grid = vec![0.0; n_grid + 1];
    let mut p_grid = Vec::with_capacity(n_grid + 1);
    for j in 0..=n_grid {
        let r = h * j as f64 / n_grid as f64;
        grid[j] = r;
        let p = if j == n_grid {
            p_h.clone()
        } else {
            let f = flow(ham, h - r)?;
            let num = &f.f21 + &(&f.f22 * &p_h);
            let den = &f.f11 + &(&f.f12 * &p_h);
            // P = num · den⁻¹  ⇔  denᵀ Pᵀ = numᵀ
            den.transpose().solve(&num.transpose())?.transpose().symmetrize()
        };
        if sym_eig(&p)?.lambda_min() <= 0.0 {
            return Err(Error::NotPsd {
                min_eig: sym_eig(&p)?.lambda_min(),
            });
        }
        p_grid.push(p);
    }

    // Independent closed form for P(0):
    // F21F11⁻¹ + F11⁻ᵀ(P + PS̄(I−S̄ᵀPS̄)⁻¹S̄ᵀP)F11⁻¹, all at r = h.
    let f11_inv = f_h.f11.inverse()?;
    let sp = &s_bar.transpose() * &p_h;
    let core = &p_h + &(&(&p_h * &s_bar) * &schur.solve(&sp)?);
    let p0_closed =
        (&(&f_h.f21 * &f11_inv) + &(&f11_inv.transpose() * &(&core * &f11_inv))).symmetrize();
    let residual = (&p_grid[0] - &p0_closed).norm_fro() / p0_closed.norm_fro().max(1e-300);
    if residual > TOL_P0 {
        return Err(Error::ConsistencyCheck {
            context: "P(0) flow vs closed form",
            residual,
            tolerance: TOL_P0,
        });
    }

    let mut lambda_hi = f64::NEG_INFINITY;
    let mut lambda_lo = f64::INFINITY;
    for p in &p_grid {
        let eig = sym_eig(p)?;
        lambda_hi = lambda_hi.max(eig.lambda_max());
        lambda_lo = lambda_lo.min(eig.lambda_min());
    }

    Ok(RiccatiSolution {
        h,
        grid,
        p_grid,
        s_bar,
        lambda_hi,
        lambda_lo,
    })
}

/// Extremal eigenvalues `(λ̄, λ̲)` of `P(r)` over the grid.
pub fn lambda_bounds(sol: &RiccatiSolution) -> (f64, f64) {
    (sol.lambda_hi, sol.lambda_lo)
}

/// Right-hand side of the Riccati differential equation,
/// `−ĀᵀP − PĀ − 2ρP − γ⁻²C̄ᵀC̄ − GᵀMG` with `G = B̄ᵀP + γ⁻²D̄ᵀC̄`.
pub fn riccati_rhs(aug: &AugmentedSystem, ham: &HamiltonianSystem, p: &Matrix) -> Matrix {
    let gamma_sq = ham.gamma * ham.gamma;
    let g = &(&aug.b_bar.transpose() * p)
        + &(&aug.d_bar.transpose() * &aug.c_bar).scale(1.0 / gamma_sq);
    let ctc = &aug.c_bar.transpose() * &aug.c_bar;
    let at_p = &aug.a_bar.transpose() * p;
    let term = &(&(&at_p + &(p * &aug.a_bar)) + &p.scale(2.0 * ham.rho))
        + &(&ctc.scale(1.0 / gamma_sq) + &(&g.transpose() * &(&ham.m_mat * &g)));
    term.scale(-1.0)
}
