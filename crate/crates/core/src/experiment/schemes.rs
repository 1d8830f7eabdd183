//! Reference transmission designs compared against the optimized one.

use num_complex::Complex64;

use crate::comm::{achievable_rate, comm_only_optimum, transmit_covariance};
use crate::error::{IsacError, Result};
use crate::geometry::{effective_channel, ula, CMatrix};
use crate::phases::PhaseShifts;
use crate::power::Regime;
use crate::scenario::ScenarioConfig;
use crate::sensing::{crb_general, sensing_covariance, FisherBlocks};

/// Rate and CRB of one design on one scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub rate: f64,
    pub crb: f64,
    pub regime: Option<Regime>,
    pub k_used: usize,
    pub feasible: bool,
}

impl Outcome {
    pub fn infeasible(crb: f64, k_used: usize) -> Outcome {
        Outcome { rate: f64::NAN, crb, regime: None, k_used, feasible: false }
    }
}

fn meets(crb: f64, epsilon: Option<f64>) -> bool {
    match epsilon {
        Some(eps) => crb <= eps * (1.0 + 1e-9),
        None => crb.is_finite(),
    }
}

/// Rate of a covariance whose whole power is treated as data.
fn full_covariance_outcome(
    scenario: &ScenarioConfig,
    phases: &PhaseShifts,
    r_x: &CMatrix,
    epsilon: Option<f64>,
) -> Result<Outcome> {
    let crb = crb_general(scenario, phases, r_x)?.crb;
    let h = effective_channel(scenario, phases)?;
    let rate = achievable_rate(&h, r_x, scenario.sigma2_c)?;
    Ok(Outcome { rate, crb, regime: None, k_used: scenario.k(), feasible: meets(crb, epsilon) })
}

/// Target-aligned phases with all power on the echo-maximizing beam.
pub fn sensing_oriented(scenario: &ScenarioConfig, epsilon: Option<f64>) -> Result<Outcome> {
    let phases = PhaseShifts::sensing_aligned(scenario);
    let r_x = sensing_covariance(scenario, &phases)?;
    full_covariance_outcome(scenario, &phases, &r_x, epsilon)
}

/// CU-aligned phases with water-filling over the IRS subchannels.
pub fn comm_oriented(scenario: &ScenarioConfig, epsilon: Option<f64>) -> Result<Outcome> {
    let (phases, alloc, rate) = comm_only_optimum(scenario)?;
    let r_x = transmit_covariance(scenario, &phases, &alloc)?;
    let crb = crb_general(scenario, &phases, &r_x)?.crb;
    Ok(Outcome { rate, crb, regime: Some(Regime::CommWaterfill), k_used: scenario.k(), feasible: meets(crb, epsilon) })
}

/// Target-aligned phases with full power towards the semi-passive IRS only.
pub fn max_eigenmode(scenario: &ScenarioConfig, epsilon: Option<f64>) -> Result<Outcome> {
    let phases = PhaseShifts::sensing_aligned(scenario);
    let a = ula(scenario.m_t, scenario.sites[0].mu_bi_d);
    let r_x = &a * a.adjoint() * Complex64::from(scenario.p_max / scenario.m_t as f64);
    full_covariance_outcome(scenario, &phases, &r_x, epsilon)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeSwitching {
    /// Share of the frame spent on the sensing-oriented design.
    pub sensing_fraction: f64,
    pub rate: f64,
    pub crb: f64,
    pub feasible: bool,
}

fn blend(comm: &FisherBlocks, sensing: &FisherBlocks, tau: f64) -> FisherBlocks {
    let mix = |c: f64, s: f64| (1.0 - tau) * c + tau * s;
    FisherBlocks {
        f_mu_mu: mix(comm.f_mu_mu, sensing.f_mu_mu),
        f_mu_beta: [mix(comm.f_mu_beta[0], sensing.f_mu_beta[0]), mix(comm.f_mu_beta[1], sensing.f_mu_beta[1])],
        f_beta_beta: [
            [
                mix(comm.f_beta_beta[0][0], sensing.f_beta_beta[0][0]),
                mix(comm.f_beta_beta[0][1], sensing.f_beta_beta[0][1]),
            ],
            [
                mix(comm.f_beta_beta[1][0], sensing.f_beta_beta[1][0]),
                mix(comm.f_beta_beta[1][1], sensing.f_beta_beta[1][1]),
            ],
        ],
    }
}

/// Time sharing between the communication- and sensing-oriented designs.
/// Both phases observe the same target over their share of the `T`
/// snapshots, so their Fisher information adds with weights `1 - tau` and
/// `tau`; data is only sent in the communication share. The smallest `tau`
/// meeting `CRB <= epsilon` is found by bisection.
pub fn time_switching(scenario: &ScenarioConfig, epsilon: f64) -> Result<TimeSwitching> {
    if !(epsilon > 0.0) {
        return Err(IsacError::InvalidArgument(format!("CRB target must be positive, got {epsilon}")));
    }
    let (phases_c, alloc_c, rate_c) = comm_only_optimum(scenario)?;
    let comm = crb_general(scenario, &phases_c, &transmit_covariance(scenario, &phases_c, &alloc_c)?)?;
    let phases_s = PhaseShifts::sensing_aligned(scenario);
    let sensing = crb_general(scenario, &phases_s, &sensing_covariance(scenario, &phases_s)?)?;
    let (fc, fs) = match (comm.blocks, sensing.blocks) {
        (Some(c), Some(s)) => (c, s),
        _ => return Err(IsacError::Solver("Fisher blocks unavailable".into())),
    };
    let info = |tau: f64| blend(&fc, &fs, tau).schur_complement();
    let need = 1.0 / epsilon;
    let crb_at = |tau: f64| {
        let i = info(tau);
        if i > 0.0 {
            1.0 / i
        } else {
            f64::INFINITY
        }
    };
    if info(0.0) >= need {
        return Ok(TimeSwitching { sensing_fraction: 0.0, rate: rate_c, crb: crb_at(0.0), feasible: true });
    }
    if info(1.0) < need {
        return Ok(TimeSwitching { sensing_fraction: 1.0, rate: 0.0, crb: crb_at(1.0), feasible: false });
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            break;
        }
        if info(mid) >= need {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(TimeSwitching { sensing_fraction: hi, rate: (1.0 - hi) * rate_c, crb: crb_at(hi), feasible: true })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Layout, SystemParams};
    use crate::sensing::crb_aligned;
    use approx::assert_relative_eq;

    fn scenario(k: usize) -> ScenarioConfig {
        let t = Layout::default().build(&SystemParams::default()).unwrap();
        t.select(&(0..k).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_site_schemes_share_the_crb() {
        let s = scenario(1);
        let a = sensing_oriented(&s, None).unwrap();
        let b = comm_oriented(&s, None).unwrap();
        let c = max_eigenmode(&s, None).unwrap();
        assert_relative_eq!(a.crb, b.crb, max_relative = 1e-9);
        assert_relative_eq!(a.crb, c.crb, max_relative = 1e-9);
        assert_relative_eq!(a.crb, crb_aligned(&s).crb, max_relative = 1e-9);
    }

    #[test]
    fn sensing_oriented_is_best_for_sensing() {
        let s = scenario(4);
        let a = sensing_oriented(&s, None).unwrap();
        let b = comm_oriented(&s, None).unwrap();
        let c = max_eigenmode(&s, None).unwrap();
        assert!(a.crb < b.crb && a.crb < c.crb);
        assert!(b.rate > a.rate);
    }

    #[test]
    fn time_switching_matches_additive_information() {
        let s = scenario(8);
        let c = comm_oriented(&s, None).unwrap();
        let x = sensing_oriented(&s, None).unwrap();
        let eps = 1.0 / (0.3 / c.crb + 0.7 / x.crb);
        let ts = time_switching(&s, eps).unwrap();
        // aligned semi-passive phases decouple the angle from the gain, so
        // the information is a plain weighted sum
        let tau = (1.0 / eps - 1.0 / c.crb) / (1.0 / x.crb - 1.0 / c.crb);
        assert_relative_eq!(ts.sensing_fraction, tau, max_relative = 1e-9);
        assert_relative_eq!(ts.rate, (1.0 - tau) * c.rate, max_relative = 1e-9);
        assert!(ts.crb <= eps * (1.0 + 1e-9));

        let loose = time_switching(&s, c.crb * 2.0).unwrap();
        assert_eq!(loose.sensing_fraction, 0.0);
        assert_relative_eq!(loose.rate, c.rate);
        let impossible = time_switching(&s, x.crb * 0.5).unwrap();
        assert!(!impossible.feasible);
    }
}
