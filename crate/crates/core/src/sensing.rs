//! CRB of the target frequency angle estimated at the semi-passive IRS.
//!
//! The echo model is `Y = beta * A(mu_T) X + noise` with
//! `A(mu) = a_s(mu) a_B^H`, where the BS-side row `a_B^H` sums the
//! reflections of all IRSs towards the target and the semi-passive site's
//! departure angle is `mu` itself.

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;

use crate::error::{IsacError, Result};
use crate::geometry::{steering, steering_derivative_norm_sq, ula, ula_derivative, CMatrix, CVector};
use crate::linalg::{check_covariance, quad_form};
use crate::phases::PhaseShifts;
use crate::scenario::ScenarioConfig;

const DEGENERATE: f64 = 1e-300;
const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct SensingMatrices {
    pub a_mat: CMatrix,
    pub a_dot_mat: CMatrix,
    /// Per-site reflection gains towards the target.
    pub gamma_s: Vec<Complex64>,
    /// Derivative of the semi-passive site's reflection gain.
    pub gamma_tilde_1: Complex64,
    /// Column vector `a_B`, so that `A = a_s a_B^H`.
    pub beam: CVector,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherBlocks {
    pub f_mu_mu: f64,
    pub f_mu_beta: [f64; 2],
    pub f_beta_beta: [[f64; 2]; 2],
}

impl FisherBlocks {
    /// Information left about the angle once the reflection coefficient is
    /// marginalized out.
    pub fn schur_complement(&self) -> f64 {
        let fbb = Matrix2::new(
            self.f_beta_beta[0][0],
            self.f_beta_beta[0][1],
            self.f_beta_beta[1][0],
            self.f_beta_beta[1][1],
        );
        let f = Vector2::new(self.f_mu_beta[0], self.f_mu_beta[1]);
        match fbb.try_inverse() {
            Some(inv) => self.f_mu_mu - (f.transpose() * inv * f)[(0, 0)],
            None => self.f_mu_mu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrbMethod {
    GeneralThm1,
    SpecialProp2,
    AlignedClosedForm,
    NumericOracle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrbReport {
    /// Lower bound on the variance of the angle estimate; `+inf` when the
    /// echo carries no information.
    pub crb: f64,
    pub method: CrbMethod,
    pub blocks: Option<FisherBlocks>,
}

impl CrbReport {
    pub fn crb_db(&self) -> f64 {
        crate::to_db(self.crb)
    }
}

/// Reflection gains `gamma_k = q_s,k^H v_k` towards the target.
pub fn sensing_gammas(scenario: &ScenarioConfig, phases: &PhaseShifts) -> Result<Vec<Complex64>> {
    phases.check_shape(scenario)?;
    Ok(scenario
        .sites
        .iter()
        .zip(&phases.vectors)
        .enumerate()
        .map(|(k, (s, v))| {
            let out = if k == 0 { scenario.mu_target } else { s.mu_it_d };
            reflection(s.n_elements, s.mu_bi_a, out, v)
        })
        .collect())
}

/// `b^H(mu_out) diag(v) b(mu_in)`.
fn reflection(n: usize, mu_in: f64, mu_out: f64, v: &CVector) -> Complex64 {
    let incoming = ula(n, mu_in);
    let outgoing = ula(n, mu_out);
    outgoing.iter().zip(v.iter()).zip(incoming.iter()).map(|((o, vn), i)| o.conj() * vn * i).sum()
}

/// Column `a_B = sum_k rho_BI,k conj(gamma_k) a_B(mu_BI,k^D)`.
pub fn sensing_beam(scenario: &ScenarioConfig, phases: &PhaseShifts) -> Result<CVector> {
    let gammas = sensing_gammas(scenario, phases)?;
    let mut beam = CVector::zeros(scenario.m_t);
    for (s, g) in scenario.sites.iter().zip(&gammas) {
        beam += ula(scenario.m_t, s.mu_bi_d) * (g.conj() * s.rho_bi);
    }
    Ok(beam)
}

/// Per-watt echo gains `M_t rho_BI,k^2 |gamma_k|^2` of the streams sent along
/// each BS-IRS direction (orthogonal candidate geometry assumed).
pub fn sensing_gains(scenario: &ScenarioConfig, phases: &PhaseShifts) -> Result<Vec<f64>> {
    let gammas = sensing_gammas(scenario, phases)?;
    Ok(scenario
        .sites
        .iter()
        .zip(&gammas)
        .map(|(s, g)| scenario.m_t as f64 * s.rho_bi * s.rho_bi * g.norm_sqr())
        .collect())
}

pub fn sensing_matrices(scenario: &ScenarioConfig, phases: &PhaseShifts) -> Result<SensingMatrices> {
    let gamma_s = sensing_gammas(scenario, phases)?;
    let beam = sensing_beam(scenario, phases)?;
    let first = &scenario.sites[0];
    let v1 = &phases.vectors[0];
    let d_out = ula_derivative(first.n_elements, scenario.mu_target);
    let incoming = ula(first.n_elements, first.mu_bi_a);
    let gamma_tilde_1: Complex64 =
        d_out.iter().zip(v1.iter()).zip(incoming.iter()).map(|((d, vn), i)| d.conj() * vn * i).sum();

    let a_s = ula(scenario.n_r, scenario.mu_target);
    let a_s_dot = ula_derivative(scenario.n_r, scenario.mu_target);
    let row = beam.adjoint();
    let a_mat = &a_s * &row;
    let cross_row = ula(scenario.m_t, first.mu_bi_d).adjoint() * (gamma_tilde_1 * first.rho_bi);
    let a_dot_mat = &a_s_dot * &row + &a_s * cross_row;
    Ok(SensingMatrices { a_mat, a_dot_mat, gamma_s, gamma_tilde_1, beam })
}

/// `Tr(X R Y^H)`.
fn trace_xry(x: &CMatrix, r: &CMatrix, y: &CMatrix) -> Complex64 {
    (x * r).iter().zip(y.iter()).map(|(a, b)| a * b.conj()).sum()
}

fn check_budget(scenario: &ScenarioConfig, r_x: &CMatrix) -> Result<()> {
    check_covariance(r_x, scenario.m_t)?;
    let used = r_x.trace().re;
    if used > scenario.p_max * (1.0 + 1e-9) {
        return Err(IsacError::BudgetExceeded { used, budget: scenario.p_max });
    }
    Ok(())
}

fn fisher_scale(scenario: &ScenarioConfig) -> f64 {
    2.0 * scenario.t_symbols as f64 / scenario.sigma2_s
}

fn crb_from_blocks(blocks: FisherBlocks, method: CrbMethod) -> CrbReport {
    let info = blocks.schur_complement();
    let crb = if info > DEGENERATE { 1.0 / info } else { f64::INFINITY };
    CrbReport { crb, method, blocks: Some(blocks) }
}

/// CRB for an arbitrary transmit covariance and arbitrary phases.
pub fn crb_general(scenario: &ScenarioConfig, phases: &PhaseShifts, r_x: &CMatrix) -> Result<CrbReport> {
    check_budget(scenario, r_x)?;
    let m = sensing_matrices(scenario, phases)?;
    let tr_dd = trace_xry(&m.a_dot_mat, r_x, &m.a_dot_mat).re;
    let tr_da = trace_xry(&m.a_dot_mat, r_x, &m.a_mat);
    let tr_aa = trace_xry(&m.a_mat, r_x, &m.a_mat).re;

    let beta2 = scenario.beta_tilde_sq;
    let denom = if tr_aa > DEGENERATE { tr_dd - tr_da.norm_sqr() / tr_aa } else { tr_dd };
    let c = fisher_scale(scenario);
    let beta = beta2.sqrt();
    let blocks = FisherBlocks {
        f_mu_mu: c * beta2 * tr_dd,
        f_mu_beta: [c * beta * tr_da.re, c * beta * tr_da.im],
        f_beta_beta: [[c * tr_aa, 0.0], [0.0, c * tr_aa]],
    };
    let info = c * beta2 * denom;
    let crb = if info > DEGENERATE && denom > DEGENERATE { 1.0 / info } else { f64::INFINITY };
    Ok(CrbReport { crb, method: CrbMethod::GeneralThm1, blocks: Some(blocks) })
}

/// CRB with the semi-passive IRS steered at the target, which removes the
/// coupling between angle and reflection coefficient. The passive sites keep
/// the supplied phases.
pub fn crb_special(scenario: &ScenarioConfig, phases_passive: &PhaseShifts, r_x: &CMatrix) -> Result<CrbReport> {
    check_budget(scenario, r_x)?;
    let phases = phases_passive.clone().with_sirs_sensing(scenario);
    let beam = sensing_beam(scenario, &phases)?;
    let echo = quad_form(r_x, &beam).max(0.0);
    let c = fisher_scale(scenario);
    let deriv = steering_derivative_norm_sq(scenario.n_r);
    let blocks = FisherBlocks {
        f_mu_mu: c * scenario.beta_tilde_sq * deriv * echo,
        f_mu_beta: [0.0, 0.0],
        f_beta_beta: [[c * scenario.n_r as f64 * echo, 0.0], [0.0, c * scenario.n_r as f64 * echo]],
    };
    Ok(crb_from_blocks(blocks, CrbMethod::SpecialProp2))
}

/// Closed-form CRB with all sites steered at the target and the whole budget
/// on the sensing beam, for orthogonal candidate geometry.
pub fn crb_aligned(scenario: &ScenarioConfig) -> CrbReport {
    let gain: f64 = scenario
        .sites
        .iter()
        .map(|s| s.rho_bi * s.rho_bi * (s.n_elements as f64).powi(2))
        .sum();
    let info = fisher_scale(scenario)
        * scenario.beta_tilde_sq
        * scenario.p_max
        * steering_derivative_norm_sq(scenario.n_r)
        * scenario.m_t as f64
        * gain;
    let crb = if info > DEGENERATE { 1.0 / info } else { f64::INFINITY };
    CrbReport { crb, method: CrbMethod::AlignedClosedForm, blocks: None }
}

/// Large-array scaling law over the first `k` sites with `N` split equally:
/// `6 sigma_s^2 K^3 / (T |beta|^2 pi^2 (N_r^3 - N_r) M_t P N^2 sum rho_BI^2)`.
pub fn crb_asymptotic(scenario: &ScenarioConfig, k: usize) -> Result<f64> {
    if scenario.n_r < 2 {
        return Err(IsacError::InvalidArgument(format!(
            "asymptotic CRB needs at least 2 sensors, got {}",
            scenario.n_r
        )));
    }
    if k == 0 || k > scenario.sites.len() {
        return Err(IsacError::InvalidArgument(format!(
            "K = {k} outside 1..={}",
            scenario.sites.len()
        )));
    }
    let nr = scenario.n_r as f64;
    let n = scenario.n_total as f64;
    let kk = k as f64;
    let sum_rho: f64 = scenario.sites[..k].iter().map(|s| s.rho_bi * s.rho_bi).sum();
    let denom = scenario.t_symbols as f64
        * scenario.beta_tilde_sq
        * std::f64::consts::PI.powi(2)
        * (nr.powi(3) - nr)
        * scenario.m_t as f64
        * scenario.p_max
        * n
        * n
        * sum_rho;
    if denom <= DEGENERATE {
        return Ok(f64::INFINITY);
    }
    Ok(6.0 * scenario.sigma2_s * kk.powi(3) / denom)
}

/// `A(mu)` assembled link by link from the BS-IRS channels `G_k`, with the
/// semi-passive site re-radiating towards `mu`.
fn echo_matrix(scenario: &ScenarioConfig, phases: &PhaseShifts, mu: f64) -> Result<CMatrix> {
    let mut row = CMatrix::zeros(1, scenario.m_t);
    for (k, (s, v)) in scenario.sites.iter().zip(&phases.vectors).enumerate() {
        let g = steering(s.n_elements, s.mu_bi_a)? * steering(scenario.m_t, s.mu_bi_d)?.adjoint()
            * Complex64::from(s.rho_bi);
        let out = steering(s.n_elements, if k == 0 { mu } else { s.mu_it_d })?;
        let theta = CMatrix::from_diagonal(v);
        row += out.adjoint() * theta * g;
    }
    Ok(steering(scenario.n_r, mu)? * row)
}

/// Independent CRB: the echo matrix is built directly from the link model,
/// its angle derivative is taken by central differences, and the CRB is the
/// inverse Schur complement of the 3x3 Fisher matrix over
/// `(mu, Re beta, Im beta)`.
pub fn crb_numeric_oracle(scenario: &ScenarioConfig, phases: &PhaseShifts, r_x: &CMatrix) -> Result<CrbReport> {
    check_budget(scenario, r_x)?;
    phases.check_shape(scenario)?;
    let mu = scenario.mu_target;
    let a = echo_matrix(scenario, phases, mu)?;
    let plus = echo_matrix(scenario, phases, mu + FD_STEP)?;
    let minus = echo_matrix(scenario, phases, mu - FD_STEP)?;
    let a_dot = (plus - minus).unscale(2.0 * FD_STEP);

    let beta = scenario.beta_tilde_sq.sqrt();
    let j = Complex64::new(0.0, 1.0);
    let derivs = [&a_dot * Complex64::from(beta), a.clone(), &a * j];
    let c = fisher_scale(scenario);
    let mut f = [[0.0f64; 3]; 3];
    for l in 0..3 {
        for m in 0..3 {
            f[l][m] = c * trace_xry(&derivs[l], r_x, &derivs[m]).re;
        }
    }
    let blocks = FisherBlocks {
        f_mu_mu: f[0][0],
        f_mu_beta: [f[0][1], f[0][2]],
        f_beta_beta: [[f[1][1], f[1][2]], [f[2][1], f[2][2]]],
    };
    Ok(crb_from_blocks(blocks, CrbMethod::NumericOracle))
}

/// Rank-one covariance `P a_B a_B^H / ||a_B||^2` that maximizes the echo power.
pub fn sensing_covariance(scenario: &ScenarioConfig, phases: &PhaseShifts) -> Result<CMatrix> {
    let beam = sensing_beam(scenario, phases)?;
    let norm2 = beam.norm_squared();
    if !(norm2 > 0.0) {
        return Err(IsacError::InvalidArgument("sensing beam vanishes for these phases".into()));
    }
    Ok(&beam * beam.adjoint() * Complex64::from(scenario.p_max / norm2))
}

/// Echo power `a_B^H R a_B` reaching the target.
pub fn echo_power(scenario: &ScenarioConfig, phases: &PhaseShifts, r_x: &CMatrix) -> Result<f64> {
    let beam = sensing_beam(scenario, phases)?;
    Ok(quad_form(r_x, &beam))
}
