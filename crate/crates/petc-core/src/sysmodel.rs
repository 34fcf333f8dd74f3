//! Plant/controller models and the structured matrices of the impulsive
//! closed-loop model.
//!
//! State ordering throughout is `ξ = [ξ_p; ξ_c; ŷ; v̂]` and channels are
//! ordered sensors first, actuators second: `u = [yᵀ vᵀ]ᵀ`.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Normalization tolerance for the channel weight vector.
pub const TOL_THETA: f64 = 1e-9;

/// Continuous-time LTI plant `ξ̇_p = A_p ξ_p + B_p v̂ + E w`, `y = C_p ξ_p`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlantModel {
    pub a: Matrix,
    pub b: Matrix,
    pub e: Matrix,
    pub c: Matrix,
}

/// Discrete-time controller `ξ_c⁺ = A_c ξ_c + B_c ŷ`, `v = C_c ξ_c + D_c ŷ`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ControllerModel {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
}

/// Per-channel threshold weights with `|θ| = 1`.
///
/// The raw input is kept; the normalized copy is what every computation uses.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ThetaAllocation {
    raw: Vec<f64>,
    normalized: Vec<f64>,
}

impl ThetaAllocation {
    pub fn new(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Invalid(format!("theta must be non-empty")));
        }
        if raw.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Invalid(format!(
                "theta entries must be finite and positive: {raw:?}"
            )));
        }
        let norm = crate::matrix::vec_norm(&raw);
        let normalized = raw.iter().map(|v| v / norm).collect();
        Ok(ThetaAllocation { raw, normalized })
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn weights(&self) -> &[f64] {
        &self.normalized
    }

    pub fn len(&self) -> usize {
        self.normalized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normalized.is_empty()
    }

    pub fn min_weight(&self) -> f64 {
        self.normalized.iter().fold(f64::INFINITY, |a, &v| a.min(v))
    }
}

/// Dimension record of the augmented system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dims {
    pub n_p: usize,
    pub n_c: usize,
    pub n_y: usize,
    pub n_v: usize,
    pub n_w: usize,
    pub n_z: usize,
}

impl Dims {
    pub fn n_u(&self) -> usize {
        self.n_y + self.n_v
    }

    pub fn n_xi(&self) -> usize {
        self.n_p + self.n_c + self.n_y + self.n_v
    }
}

/// Index set `𝒥 ⊆ {0..n_u}` of channels that triggered, as a bit set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EventIndexSet {
    bits: u32,
    n_u: usize,
}

impl EventIndexSet {
    pub fn empty(n_u: usize) -> Self {
        EventIndexSet { bits: 0, n_u }
    }

    pub fn full(n_u: usize) -> Self {
        debug_assert!(n_u <= 32);
        EventIndexSet {
            bits: if n_u == 32 { u32::MAX } else { (1 << n_u) - 1 },
            n_u,
        }
    }

    pub fn from_bits(bits: u32, n_u: usize) -> Result<Self> {
        let full = Self::full(n_u);
        if bits & !full.bits != 0 {
            return Err(Error::IndexOutOfRange {
                index: 31 - bits.leading_zeros() as usize,
                limit: n_u,
            });
        }
        Ok(EventIndexSet { bits, n_u })
    }

    pub fn insert(&mut self, i: usize) {
        debug_assert!(i < self.n_u);
        self.bits |= 1 << i;
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.n_u && self.bits & (1 << i) != 0
    }

    pub fn complement(&self) -> Self {
        EventIndexSet {
            bits: Self::full(self.n_u).bits & !self.bits,
            n_u: self.n_u,
        }
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn len(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_u).filter(move |&i| self.contains(i))
    }
}

/// The augmented impulsive model: flow matrices `Ā, B̄`, performance matrices
/// `C̄, D̄`, the output maps `C = blkdiag(C_p, C_c)`, `D = [[0,0],[D_c,0]]`,
/// and the underlying plant/controller (needed for jump-map assembly).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AugmentedSystem {
    pub a_bar: Matrix,
    pub b_bar: Matrix,
    pub c_bar: Matrix,
    pub d_bar: Matrix,
    /// `C`: maps `[ξ_p; ξ_c]` to `u = [y; v]`.
    pub c_out: Matrix,
    /// `D`: maps `[ŷ; v̂]` to the feedthrough part of `u`.
    pub d_out: Matrix,
    pub plant: PlantModel,
    pub ctrl: ControllerModel,
    pub dims: Dims,
}

fn check_dims(
    context: &'static str,
    m: &Matrix,
    rows: usize,
    cols: usize,
) -> Result<()> {
    if m.rows() != rows || m.cols() != cols {
        return Err(Error::DimMismatch {
            context,
            expected: (rows, cols),
            got: (m.rows(), m.cols()),
        });
    }
    m.require_finite(context)
}

/// Assemble the augmented system from plant, controller and performance
/// matrices `(C̄, D̄)`.
pub fn build_augmented(
    plant: &PlantModel,
    ctrl: &ControllerModel,
    c_bar: &Matrix,
    d_bar: &Matrix,
) -> Result<AugmentedSystem> {
    let n_p = plant.a.rows();
    let n_y = plant.c.rows();
    let n_v = plant.b.cols();
    let n_w = plant.e.cols();
    let n_c = ctrl.a.rows();
    let n_z = c_bar.rows();
    let dims = Dims {
        n_p,
        n_c,
        n_y,
        n_v,
        n_w,
        n_z,
    };
    let n_xi = dims.n_xi();

    check_dims("plant A_p", &plant.a, n_p, n_p)?;
    check_dims("plant B_p", &plant.b, n_p, n_v)?;
    check_dims("plant E", &plant.e, n_p, n_w)?;
    check_dims("plant C_p", &plant.c, n_y, n_p)?;
    check_dims("controller A_c", &ctrl.a, n_c, n_c)?;
    check_dims("controller B_c", &ctrl.b, n_c, n_y)?;
    check_dims("controller C_c", &ctrl.c, n_v, n_c)?;
    check_dims("controller D_c", &ctrl.d, n_v, n_y)?;
    check_dims("performance C_bar", c_bar, n_z, n_xi)?;
    check_dims("performance D_bar", d_bar, n_z, n_w)?;

    // Ā: only the plant row is nonzero.
    let mut a_bar = Matrix::zeros(n_xi, n_xi);
    a_bar.set_block(0, 0, &plant.a);
    a_bar.set_block(0, n_p + n_c + n_y, &plant.b);

    // B̄ = [Eᵀ 0 0 0]ᵀ
    let mut b_bar = Matrix::zeros(n_xi, n_w);
    b_bar.set_block(0, 0, &plant.e);

    let n_u = dims.n_u();
    let mut c_out = Matrix::zeros(n_u, n_p + n_c);
    c_out.set_block(0, 0, &plant.c);
    c_out.set_block(n_y, n_p, &ctrl.c);

    let mut d_out = Matrix::zeros(n_u, n_u);
    d_out.set_block(n_y, 0, &ctrl.d);

    Ok(AugmentedSystem {
        a_bar,
        b_bar,
        c_bar: c_bar.clone(),
        d_bar: d_bar.clone(),
        c_out,
        d_out,
        plant: plant.clone(),
        ctrl: ctrl.clone(),
        dims,
    })
}

impl AugmentedSystem {
    /// Implementation output `u = [y; v]` as a function of the full state.
    pub fn output(&self, xi: &[f64]) -> Vec<f64> {
        let d = &self.dims;
        let mut u = self.c_out.mul_vec(&xi[..d.n_p + d.n_c]);
        let feed = self.d_out.mul_vec(&xi[d.n_p + d.n_c..]);
        for (a, b) in u.iter_mut().zip(feed) {
            *a += b;
        }
        u
    }

    /// Spectral-norm argument `[C D]` used by the bit/zoom bounds.
    pub fn cd_concat(&self) -> Matrix {
        Matrix::hstack(&self.c_out, &self.d_out).expect("row counts match by construction")
    }
}

/// `Γ_𝒥 = diag(γ¹, …, γ^{n_u})`: one on triggered channels, zero elsewhere.
pub fn gamma_matrix(set: &EventIndexSet) -> Matrix {
    let n_u = set.n_u();
    let mut g = Matrix::zeros(n_u, n_u);
    for i in set.iter() {
        g[(i, i)] = 1.0;
    }
    g
}

fn gamma_blocks(set: &EventIndexSet, dims: &Dims) -> (Matrix, Matrix) {
    let g = gamma_matrix(set);
    (
        g.block(0, 0, dims.n_y, dims.n_y),
        g.block(dims.n_y, dims.n_y, dims.n_v, dims.n_v),
    )
}

/// The jump map `J_𝒥` of the impulsive model.
///
/// Row semantics: `ξ_c⁺` uses the post-update `ŷ`, while `v̂⁺` uses the
/// pre-jump `ξ_c` and `ŷ`. The simulator's atomic jump must match this.
pub fn jump_matrix(aug: &AugmentedSystem, set: &EventIndexSet) -> Matrix {
    let d = &aug.dims;
    let (gy, gv) = gamma_blocks(set, d);
    let iy = Matrix::identity(d.n_y);
    let iv = Matrix::identity(d.n_v);
    let n_xi = d.n_xi();
    let (o_p, o_c, o_y) = (0, d.n_p, d.n_p + d.n_c);
    let o_v = o_y + d.n_y;

    let mut j = Matrix::zeros(n_xi, n_xi);
    j.set_block(o_p, o_p, &Matrix::identity(d.n_p));
    j.set_block(o_c, o_p, &(&(&aug.ctrl.b * &gy) * &aug.plant.c));
    j.set_block(o_c, o_c, &aug.ctrl.a);
    j.set_block(o_c, o_y, &(&aug.ctrl.b * &(&iy - &gy)));
    j.set_block(o_y, o_p, &(&gy * &aug.plant.c));
    j.set_block(o_y, o_y, &(&iy - &gy));
    j.set_block(o_v, o_c, &(&gv * &aug.ctrl.c));
    j.set_block(o_v, o_y, &(&gv * &aug.ctrl.d));
    j.set_block(o_v, o_v, &(&iv - &gv));
    j
}

fn theta_columns(theta: &ThetaAllocation, dims: &Dims) -> (Matrix, Matrix) {
    let w = theta.weights();
    (
        Matrix::column(&w[..dims.n_y]),
        Matrix::column(&w[dims.n_y..]),
    )
}

/// The quantization-error injection column `Δ_𝒥` for given per-channel
/// normalized errors `ε ∈ (−1, 1)`.
pub fn delta_matrix(
    aug: &AugmentedSystem,
    set: &EventIndexSet,
    eps_y: &[f64],
    eps_v: &[f64],
    theta: &ThetaAllocation,
) -> Result<Matrix> {
    let d = &aug.dims;
    for &e in eps_y.iter().chain(eps_v.iter()) {
        if !(e > -1.0 && e < 1.0) {
            return Err(Error::OutOfRange {
                context: "delta_matrix epsilon",
                value: e,
            });
        }
    }
    if eps_y.len() != d.n_y || eps_v.len() != d.n_v || theta.len() != d.n_u() {
        return Err(Error::DimMismatch {
            context: "delta_matrix epsilon/theta lengths",
            expected: (d.n_y, d.n_v),
            got: (eps_y.len(), eps_v.len()),
        });
    }
    Ok(delta_column(aug, set, eps_y, eps_v, theta))
}

/// `Δ̄_𝒥`: the error column with every `ε` replaced by the identity.
pub fn delta_bar(aug: &AugmentedSystem, set: &EventIndexSet, theta: &ThetaAllocation) -> Matrix {
    let d = &aug.dims;
    let ones_y = alloc::vec![1.0; d.n_y];
    let ones_v = alloc::vec![1.0; d.n_v];
    delta_column(aug, set, &ones_y, &ones_v, theta)
}

fn delta_column(
    aug: &AugmentedSystem,
    set: &EventIndexSet,
    eps_y: &[f64],
    eps_v: &[f64],
    theta: &ThetaAllocation,
) -> Matrix {
    let d = &aug.dims;
    let (gy, gv) = gamma_blocks(set, d);
    let (th_y, th_v) = theta_columns(theta, d);
    let ey = Matrix::diag(eps_y);
    let ev = Matrix::diag(eps_v);
    let y_part = &(&gy * &ey) * &th_y;
    let v_part = &(&gv * &ev) * &th_v;

    let mut col = Matrix::zeros(d.n_xi(), 1);
    col.set_block(d.n_p, 0, &(&aug.ctrl.b * &y_part));
    col.set_block(d.n_p + d.n_c, 0, &y_part);
    col.set_block(d.n_p + d.n_c + d.n_y, 0, &v_part);
    col
}

/// The quadratic form `Q_i` of the set-membership event condition:
/// `ξᵀQ_iξ = (û^i_prev − u^i)²` for channel `i` (0-based).
pub fn q_matrix(aug: &AugmentedSystem, channel: usize) -> Result<Matrix> {
    let d = &aug.dims;
    let n_u = d.n_u();
    if channel >= n_u {
        return Err(Error::IndexOutOfRange {
            index: channel,
            limit: n_u,
        });
    }
    let mut single = EventIndexSet::empty(n_u);
    single.insert(channel);
    let gamma = gamma_matrix(&single);

    let c = &aug.c_out;
    let dd = &aug.d_out;
    let ct_g = &c.transpose() * &gamma;
    let d_minus_i = dd - &Matrix::identity(n_u);

    let n_pc = d.n_p + d.n_c;
    let mut q = Matrix::zeros(d.n_xi(), d.n_xi());
    q.set_block(0, 0, &(&ct_g * c));
    // û−u = (I−D)û − C·[ξ_p;ξ_c], so the cross block is CᵀΓ(D−I)
    q.set_block(0, n_pc, &(&ct_g * &d_minus_i));
    q.set_block(n_pc, 0, &(&d_minus_i.transpose() * &(&gamma * c)));
    q.set_block(
        n_pc,
        n_pc,
        &(&(&d_minus_i.transpose() * &gamma) * &d_minus_i),
    );
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn scalar_system() -> (PlantModel, ControllerModel) {
        let plant = PlantModel {
            a: Matrix::diag(&[2.0]),
            b: Matrix::diag(&[3.0]),
            e: Matrix::diag(&[1.0]),
            c: Matrix::diag(&[1.5]),
        };
        let ctrl = ControllerModel {
            a: Matrix::diag(&[0.5]),
            b: Matrix::diag(&[0.25]),
            c: Matrix::diag(&[-1.0]),
            d: Matrix::diag(&[-0.5]),
        };
        (plant, ctrl)
    }

    fn random_system(rng: &mut impl Rng, n_p: usize, n_c: usize, n_y: usize, n_v: usize) -> AugmentedSystem {
        let rand_mat = |rng: &mut dyn rand::RngCore, r: usize, c: usize| {
            let mut m = Matrix::zeros(r, c);
            for i in 0..r {
                for j in 0..c {
                    m[(i, j)] = rng.gen_range(-1.0..1.0);
                }
            }
            m
        };
        let plant = PlantModel {
            a: rand_mat(rng, n_p, n_p),
            b: rand_mat(rng, n_p, n_v),
            e: rand_mat(rng, n_p, 1),
            c: rand_mat(rng, n_y, n_p),
        };
        let ctrl = ControllerModel {
            a: rand_mat(rng, n_c, n_c),
            b: rand_mat(rng, n_c, n_y),
            c: rand_mat(rng, n_v, n_c),
            d: rand_mat(rng, n_v, n_y),
        };
        let n_xi = n_p + n_c + n_y + n_v;
        let c_bar = rand_mat(rng, 1, n_xi);
        let d_bar = Matrix::zeros(1, 1);
        build_augmented(&plant, &ctrl, &c_bar, &d_bar).unwrap()
    }

    #[test]
    fn theta_normalizes_and_keeps_raw() {
        let t = ThetaAllocation::new(vec![0.34, 0.11, 0.23, 0.91]).unwrap();
        assert_eq!(t.raw()[3], 0.91);
        let norm = crate::matrix::vec_norm(t.weights());
        assert!((norm - 1.0).abs() < TOL_THETA);
    }

    #[test]
    fn theta_rejects_nonpositive() {
        assert!(ThetaAllocation::new(vec![0.5, 0.0]).is_err());
        assert!(ThetaAllocation::new(vec![0.5, -0.1]).is_err());
    }

    #[test]
    fn augmented_scalar_block_pattern() {
        let (plant, ctrl) = scalar_system();
        let c_bar = Matrix::zeros(1, 4);
        let d_bar = Matrix::zeros(1, 1);
        let aug = build_augmented(&plant, &ctrl, &c_bar, &d_bar).unwrap();
        // row 1 = [A_p, 0, 0, B_p], all other rows zero
        assert_eq!(aug.a_bar[(0, 0)], 2.0);
        assert_eq!(aug.a_bar[(0, 3)], 3.0);
        assert_eq!(aug.a_bar[(0, 1)], 0.0);
        for i in 1..4 {
            for j in 0..4 {
                assert_eq!(aug.a_bar[(i, j)], 0.0);
            }
        }
        // B̄ top block = E
        assert_eq!(aug.b_bar[(0, 0)], 1.0);
        for i in 1..4 {
            assert_eq!(aug.b_bar[(i, 0)], 0.0);
        }
    }

    #[test]
    fn augmented_dim_mismatch_names_block() {
        let (plant, mut ctrl) = scalar_system();
        ctrl.b = Matrix::zeros(1, 2);
        let err = build_augmented(&plant, &ctrl, &Matrix::zeros(1, 4), &Matrix::zeros(1, 1))
            .unwrap_err();
        match err {
            Error::DimMismatch { context, .. } => assert_eq!(context, "controller B_c"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn batch_reactor_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let aug = random_system(&mut rng, 4, 2, 2, 2);
        assert_eq!(aug.dims.n_xi(), 10);
        assert_eq!(aug.dims.n_u(), 4);
    }

    #[test]
    fn gamma_matrix_cases() {
        let empty = EventIndexSet::empty(4);
        assert_eq!(gamma_matrix(&empty).norm_fro(), 0.0);
        let full = EventIndexSet::full(4);
        assert_eq!(gamma_matrix(&full), Matrix::identity(4));
        let mut j = EventIndexSet::empty(4);
        j.insert(0);
        j.insert(2);
        assert_eq!(gamma_matrix(&j), Matrix::diag(&[1.0, 0.0, 1.0, 0.0]));
    }

    #[test]
    fn gamma_complement_partition() {
        for bits in 0..16u32 {
            let j = EventIndexSet::from_bits(bits, 4).unwrap();
            let sum = &gamma_matrix(&j) + &gamma_matrix(&j.complement());
            assert_eq!(sum, Matrix::identity(4));
        }
    }

    #[test]
    fn jump_matrix_held_and_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let aug = random_system(&mut rng, 3, 2, 2, 1);
        let d = aug.dims;
        let xi: Vec<f64> = (0..d.n_xi()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xi_p = &xi[..d.n_p];
        let xi_c = &xi[d.n_p..d.n_p + d.n_c];
        let y_hat = &xi[d.n_p + d.n_c..d.n_p + d.n_c + d.n_y];
        let v_hat = &xi[d.n_p + d.n_c + d.n_y..];

        // J = ∅: hold everything, controller still steps
        let j0 = jump_matrix(&aug, &EventIndexSet::empty(d.n_u()));
        let out = j0.mul_vec(&xi);
        for i in 0..d.n_p {
            assert!((out[i] - xi_p[i]).abs() < 1e-14);
        }
        let mut xc_next = aug.ctrl.a.mul_vec(xi_c);
        let by = aug.ctrl.b.mul_vec(y_hat);
        for (a, b) in xc_next.iter_mut().zip(by) {
            *a += b;
        }
        for i in 0..d.n_c {
            assert!((out[d.n_p + i] - xc_next[i]).abs() < 1e-14);
        }
        for i in 0..d.n_y {
            assert!((out[d.n_p + d.n_c + i] - y_hat[i]).abs() < 1e-14);
        }
        for i in 0..d.n_v {
            assert!((out[d.n_p + d.n_c + d.n_y + i] - v_hat[i]).abs() < 1e-14);
        }

        // J = full: ŷ⁺ = C_p ξ_p, v̂⁺ = C_c ξ_c + D_c ŷ (pre-jump ŷ)
        let jf = jump_matrix(&aug, &EventIndexSet::full(d.n_u()));
        let out = jf.mul_vec(&xi);
        let y_new = aug.plant.c.mul_vec(xi_p);
        for i in 0..d.n_y {
            assert!((out[d.n_p + d.n_c + i] - y_new[i]).abs() < 1e-14);
        }
        let mut v_new = aug.ctrl.c.mul_vec(xi_c);
        let dy = aug.ctrl.d.mul_vec(y_hat);
        for (a, b) in v_new.iter_mut().zip(dy) {
            *a += b;
        }
        for i in 0..d.n_v {
            assert!((out[d.n_p + d.n_c + d.n_y + i] - v_new[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn delta_zero_epsilon_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let aug = random_system(&mut rng, 2, 2, 2, 2);
        let theta = ThetaAllocation::new(vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let col = delta_matrix(
            &aug,
            &EventIndexSet::full(4),
            &[0.0, 0.0],
            &[0.0, 0.0],
            &theta,
        )
        .unwrap();
        assert_eq!(col.norm_fro(), 0.0);
    }

    #[test]
    fn delta_rejects_out_of_range_epsilon() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let aug = random_system(&mut rng, 2, 2, 2, 2);
        let theta = ThetaAllocation::new(vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        assert!(delta_matrix(
            &aug,
            &EventIndexSet::full(4),
            &[1.0, 0.0],
            &[0.0, 0.0],
            &theta
        )
        .is_err());
    }

    #[test]
    fn delta_bar_block_expansion() {
        // hand-expanded block product for J = ∅ (complement pattern is empty,
        // so Δ̄_∅ = 0) and for a sensor-only set
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let aug = random_system(&mut rng, 2, 2, 2, 1);
        let theta = ThetaAllocation::new(vec![0.6, 0.3, 0.74]).unwrap();
        let d = aug.dims;

        let empty = delta_bar(&aug, &EventIndexSet::empty(3), &theta);
        assert_eq!(empty.norm_fro(), 0.0);

        let mut j = EventIndexSet::empty(3);
        j.insert(0); // first sensor channel
        let col = delta_bar(&aug, &j, &theta);
        let w = theta.weights();
        // ŷ block: Γ^y Θ_y = [θ_0, 0]
        assert!((col[(d.n_p + d.n_c, 0)] - w[0]).abs() < 1e-14);
        assert_eq!(col[(d.n_p + d.n_c + 1, 0)], 0.0);
        // ξ_c block: B_c Γ^y Θ_y = B_c [θ_0; 0]
        let bc = &aug.ctrl.b;
        for i in 0..d.n_c {
            assert!((col[(d.n_p + i, 0)] - bc[(i, 0)] * w[0]).abs() < 1e-14);
        }
        // plant and v̂ blocks zero
        for i in 0..d.n_p {
            assert_eq!(col[(i, 0)], 0.0);
        }
        assert_eq!(col[(d.n_p + d.n_c + d.n_y, 0)], 0.0);
    }

    #[test]
    fn delta_bar_additive_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let aug = random_system(&mut rng, 3, 2, 2, 2);
        let theta = ThetaAllocation::new(vec![0.4, 0.3, 0.2, 0.7]).unwrap();
        let full = delta_bar(&aug, &EventIndexSet::full(4), &theta);
        for bits in 0..16u32 {
            let j = EventIndexSet::from_bits(bits, 4).unwrap();
            let sum = &delta_bar(&aug, &j, &theta) + &delta_bar(&aug, &j.complement(), &theta);
            assert!((&sum - &full).norm_fro() < 1e-14);
        }
    }

    #[test]
    fn q_matrix_is_event_expression() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let aug = random_system(&mut rng, 3, 2, 2, 2);
            let d = aug.dims;
            let xi: Vec<f64> = (0..d.n_xi()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let u = aug.output(&xi);
            let u_hat = &xi[d.n_p + d.n_c..];
            for i in 0..d.n_u() {
                let q = q_matrix(&aug, i).unwrap();
                let qx = q.mul_vec(&xi);
                let quad: f64 = xi.iter().zip(&qx).map(|(a, b)| a * b).sum();
                let resid = u_hat[i] - u[i];
                let want = resid * resid;
                assert!(
                    (quad - want).abs() <= 1e-12 * want.max(1.0),
                    "channel {i}: {quad} vs {want}"
                );
            }
        }
    }

    #[test]
    fn q_matrix_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let aug = random_system(&mut rng, 3, 2, 2, 2);
        for i in 0..4 {
            let q = q_matrix(&aug, i).unwrap();
            assert!((&q - &q.transpose()).norm_fro() < 1e-13);
            let eig = crate::numkernel::sym_eig(&q).unwrap();
            assert!(eig.lambda_min() >= -1e-10);
        }
    }

    #[test]
    fn q_matrix_index_out_of_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let aug = random_system(&mut rng, 2, 1, 1, 1);
        assert!(q_matrix(&aug, 2).is_err());
    }
}
