//! Uniform linear array responses, LoS path loss, and the orthogonal
//! IRS deployment candidate set.
//!
//! All angles are frequency angles `mu = sin(theta)` for half-wavelength
//! element spacing. Array responses are centered, so element `m` of an
//! `M`-element array carries phase `pi * (m - (M - 1) / 2) * mu`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{IsacError, Result};
use crate::phases::PhaseShifts;
use crate::scenario::ScenarioConfig;

pub type CVector = DVector<Complex64>;
pub type CMatrix = DMatrix<Complex64>;

#[inline]
fn centered_index(m: usize, count: usize) -> f64 {
    m as f64 - (count as f64 - 1.0) / 2.0
}

/// Centered ULA response; callers guarantee `count >= 1`.
pub(crate) fn ula(count: usize, x: f64) -> CVector {
    CVector::from_iterator(
        count,
        (0..count).map(|m| Complex64::from_polar(1.0, PI * centered_index(m, count) * x)),
    )
}

pub(crate) fn ula_derivative(count: usize, x: f64) -> CVector {
    CVector::from_iterator(
        count,
        (0..count).map(|m| {
            let w = PI * centered_index(m, count);
            Complex64::new(0.0, w) * Complex64::from_polar(1.0, w * x)
        }),
    )
}

/// Array response `a(x)` of a `count`-element ULA.
pub fn steering(count: usize, x: f64) -> Result<CVector> {
    if count == 0 {
        return Err(IsacError::InvalidArgument("steering vector needs at least one element".into()));
    }
    if !x.is_finite() {
        return Err(IsacError::InvalidArgument(format!("frequency angle must be finite, got {x}")));
    }
    Ok(ula(count, x))
}

/// Elementwise derivative `da(x)/dx` of [`steering`].
pub fn steering_derivative(count: usize, x: f64) -> Result<CVector> {
    steering(count, x)?;
    Ok(ula_derivative(count, x))
}

/// `||da/dx||^2 = pi^2 (M^3 - M) / 12`, independent of `x`.
pub fn steering_derivative_norm_sq(count: usize) -> f64 {
    let m = count as f64;
    PI * PI * (m * m * m - m) / 12.0
}

/// Amplitude factor `rho = sqrt(K0 * d^-alpha)` of the distance-based path-loss model.
pub fn path_loss_amplitude(distance: f64, alpha: f64, k0_db: f64) -> Result<f64> {
    if !(distance > 0.0) || !distance.is_finite() {
        return Err(IsacError::InvalidArgument(format!("distance must be positive, got {distance}")));
    }
    let k0 = 10f64.powf(k0_db / 10.0);
    Ok((k0 * distance.powf(-alpha)).sqrt())
}

/// Evenly spaced frequency angles `(2k - (k_max - 1)) / count` for `k < k_max`.
fn spaced_angles(count: usize, k_max: usize) -> impl Iterator<Item = f64> {
    (0..k_max).map(move |k| (2.0 * k as f64 - (k_max as f64 - 1.0)) / count as f64)
}

/// BS-side departure / CU-side arrival angle pairs whose pairwise differences
/// are integer multiples of `2 / m_t` and `2 / m_r`, so the normalized BS and
/// CU responses of distinct sites are mutually orthogonal.
pub fn candidate_angles(m_t: usize, m_r: usize, k_max: usize) -> Result<Vec<(f64, f64)>> {
    if m_t == 0 || m_r == 0 {
        return Err(IsacError::InvalidArgument("antenna counts must be positive".into()));
    }
    let limit = m_t.min(m_r);
    if k_max > limit {
        return Err(IsacError::InvalidArgument(format!(
            "at most min(m_t, m_r) = {limit} orthogonal sites exist, requested {k_max}"
        )));
    }
    Ok(spaced_angles(m_t, k_max).zip(spaced_angles(m_r, k_max)).collect())
}

/// Largest cross inner product between normalized BS (resp. CU) responses of
/// distinct sites. Zero for a single site.
pub fn verify_orthogonality(scenario: &ScenarioConfig) -> f64 {
    let bs: Vec<CVector> = scenario
        .sites
        .iter()
        .map(|s| ula(scenario.m_t, s.mu_bi_d).unscale((scenario.m_t as f64).sqrt()))
        .collect();
    let cu: Vec<CVector> = scenario
        .sites
        .iter()
        .map(|s| ula(scenario.m_r, s.mu_iu_a).unscale((scenario.m_r as f64).sqrt()))
        .collect();
    let mut worst = 0.0f64;
    for k in 0..bs.len() {
        for i in 0..bs.len() {
            if k == i {
                continue;
            }
            worst = worst.max(bs[k].dotc(&bs[i]).norm()).max(cu[k].dotc(&cu[i]).norm());
        }
    }
    worst
}

/// Cascade vector `q` with entries `conj(b_n(mu_in)) * b_n(mu_out)`, so that
/// `b^H(mu_out) diag(v) b(mu_in) = q^H v`.
pub fn cascade_vector(count: usize, mu_in: f64, mu_out: f64) -> CVector {
    let incoming = ula(count, mu_in);
    let outgoing = ula(count, mu_out);
    incoming.zip_map(&outgoing, |a, b| a.conj() * b)
}

/// BS-to-CU channel `H_c = sum_k H_{r,k} Theta_k G_k`, assembled from the
/// individual LoS links.
pub fn effective_channel(scenario: &ScenarioConfig, phases: &PhaseShifts) -> Result<CMatrix> {
    phases.check_shape(scenario)?;
    let mut h = CMatrix::zeros(scenario.m_r, scenario.m_t);
    for (site, v) in scenario.sites.iter().zip(&phases.vectors) {
        let n = site.n_elements;
        // G_k = rho_BI b(mu_BI^A) a_B^H(mu_BI^D)
        let g = ula(n, site.mu_bi_a) * ula(scenario.m_t, site.mu_bi_d).adjoint() * Complex64::from(site.rho_bi);
        // H_r,k = rho_IU a_U(mu_IU^A) b^H(mu_IU^D)
        let hr = ula(scenario.m_r, site.mu_iu_a) * ula(n, site.mu_iu_d).adjoint() * Complex64::from(site.rho_iu);
        let theta = CMatrix::from_diagonal(v);
        h += hr * theta * g;
    }
    Ok(h)
}
