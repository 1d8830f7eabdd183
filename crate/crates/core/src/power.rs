//! Sensing-constrained power allocation over orthogonal IRS subchannels.
//!
//! Problem: maximize `sum_k log2(1 + c_k p_k)` subject to
//! `sum_k s_k p_k + S p_s >= Gamma`, `sum_k p_k + p_s <= P`, all powers
//! nonnegative. `c_k` is the per-watt SNR of stream `k`, `s_k` its per-watt
//! echo gain at the target and `S` the echo gain of the dedicated sensing
//! beam. Multipliers are reported in nats.
//!
//! The optimum falls in exactly one of three regimes:
//! * sensing beam active (`p_s > 0`, echo constraint tight, multi-level
//!   water-filling),
//! * plain water-filling (echo constraint slack),
//! * both constraints tight with `p_s = 0`.

use serde::{Deserialize, Serialize};

use crate::comm::{subchannel_gains, sum_rate, waterfill};
use crate::error::{IsacError, Result};
use crate::geometry::steering_derivative_norm_sq;
use crate::phases::PhaseShifts;
use crate::scenario::ScenarioConfig;
use crate::sensing::sensing_gains;

/// Relative size below which a water-filling argument counts as zero.
const ZERO_POWER: f64 = 1e-15;
const BISECTION_STEPS: usize = 400;
/// Relative shortfall of the echo power still counted as meeting the
/// requirement.
pub(crate) const ECHO_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    /// Data-stream powers, one per site (W).
    pub p_c: Vec<f64>,
    /// Dedicated sensing-beam power (W).
    pub p_s: f64,
}

impl PowerAllocation {
    pub fn total(&self) -> f64 {
        self.p_c.iter().sum::<f64>() + self.p_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    SensingActive,
    CommWaterfill,
    DualConstrained,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::SensingActive => "sensing_active",
            Regime::CommWaterfill => "comm_waterfill",
            Regime::DualConstrained => "dual_constrained",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktCertificate {
    pub regime: Regime,
    /// Multiplier of the echo-power constraint.
    pub mu_star: f64,
    /// Multiplier of the total-power constraint.
    pub lambda_star: f64,
    /// Multiplier of `p_s >= 0`.
    pub nu_star: f64,
    /// Echo power minus the requirement.
    pub sensing_slack: f64,
    /// Budget minus the power used.
    pub power_slack: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensingRequirement {
    pub epsilon: f64,
    pub gamma_s: f64,
}

/// Echo-power threshold equivalent to `CRB <= epsilon` when the semi-passive
/// IRS is steered at the target.
pub fn gamma_from_epsilon(scenario: &ScenarioConfig, epsilon: f64) -> Result<SensingRequirement> {
    if !(epsilon > 0.0) {
        return Err(IsacError::InvalidArgument(format!("CRB target must be positive, got {epsilon}")));
    }
    let denom = 2.0
        * scenario.t_symbols as f64
        * scenario.beta_tilde_sq
        * steering_derivative_norm_sq(scenario.n_r)
        * epsilon;
    if !(denom > 0.0) {
        return Err(IsacError::InvalidArgument(
            "target echo carries no angle information (zero reflection gain or sensor derivative)".into(),
        ));
    }
    Ok(SensingRequirement { epsilon, gamma_s: scenario.sigma2_s / denom })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationProblem {
    /// Per-watt SNR `c_k` of each data stream.
    pub snr: Vec<f64>,
    /// Per-watt echo gain `s_k` of each data stream.
    pub sensing: Vec<f64>,
    /// Per-watt echo gain `S` of the dedicated sensing beam.
    pub beam_gain: f64,
    pub p_max: f64,
    pub gamma_s: f64,
}

/// Multipliers and powers found for a candidate regime.
struct Candidate {
    p: Vec<f64>,
    p_s: f64,
    mu: f64,
    lambda: f64,
    nu: f64,
}

/// Geometric bisection for an increasing function: returns the upper end
/// of the final bracket, where `f >= 0`.
fn log_bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..BISECTION_STEPS {
        let mid = (lo * hi).sqrt();
        if !(mid > lo && mid < hi) {
            break;
        }
        if f(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

impl AllocationProblem {
    /// Coefficients of co-located CU and target with every site aligned.
    pub fn colocated(scenario: &ScenarioConfig, gamma_s: f64) -> AllocationProblem {
        let mt = scenario.m_t as f64;
        let mr = scenario.m_r as f64;
        let snr: Vec<f64> = scenario
            .sites
            .iter()
            .map(|s| mt * mr * s.rho_c().powi(2) * (s.n_elements as f64).powi(2) / scenario.sigma2_c)
            .collect();
        let sensing: Vec<f64> = scenario
            .sites
            .iter()
            .map(|s| mt * s.rho_bi.powi(2) * (s.n_elements as f64).powi(2))
            .collect();
        AllocationProblem {
            beam_gain: sensing.iter().sum(),
            snr,
            sensing,
            p_max: scenario.p_max,
            gamma_s,
        }
    }

    /// Coefficients for arbitrary (relaxed or unit-modulus) phases.
    pub fn from_phases(scenario: &ScenarioConfig, phases: &PhaseShifts, gamma_s: f64) -> Result<AllocationProblem> {
        let snr = subchannel_gains(scenario, phases)?.snr_per_watt(scenario.sigma2_c);
        let sensing = sensing_gains(scenario, phases)?;
        Ok(AllocationProblem {
            beam_gain: sensing.iter().sum(),
            snr,
            sensing,
            p_max: scenario.p_max,
            gamma_s,
        })
    }

    /// Largest echo power reachable within the budget.
    pub fn max_echo(&self) -> f64 {
        self.p_max * self.beam_gain
    }

    /// Whether the requirement is reachable, up to rounding.
    pub fn is_reachable(&self) -> bool {
        self.max_echo() >= self.gamma_s * (1.0 - ECHO_RTOL)
    }

    pub fn echo(&self, alloc: &PowerAllocation) -> f64 {
        self.sensing.iter().zip(&alloc.p_c).map(|(s, p)| s * p).sum::<f64>() + self.beam_gain * alloc.p_s
    }

    /// Sum rate in bits/s/Hz.
    pub fn objective(&self, alloc: &PowerAllocation) -> f64 {
        sum_rate(&self.snr, &alloc.p_c)
    }

    fn is_live(&self, k: usize) -> bool {
        self.snr[k] > 0.0
    }

    fn clip(&self, x: f64) -> f64 {
        if x > ZERO_POWER * self.p_max {
            x
        } else {
            0.0
        }
    }

    /// Stream powers of the sensing-active regime at multiplier `mu`.
    fn sensing_active_powers(&self, mu: f64) -> Vec<f64> {
        (0..self.snr.len())
            .map(|k| {
                if !self.is_live(k) {
                    return 0.0;
                }
                let d = self.beam_gain - self.sensing[k];
                self.clip(1.0 / (mu * d) - 1.0 / self.snr[k])
            })
            .collect()
    }

    /// Root of the echo equation with the sensing beam absorbing the leftover
    /// power. `None` when a live stream is as good for sensing as the beam
    /// itself, in which case a positive beam power is never optimal.
    fn sensing_active_root(&self) -> Option<(f64, Vec<f64>)> {
        let s = self.beam_gain;
        let live: Vec<usize> = (0..self.snr.len()).filter(|&k| self.is_live(k)).collect();
        if live.is_empty() {
            return Some((0.0, vec![0.0; self.snr.len()]));
        }
        if live.iter().any(|&k| s - self.sensing[k] <= ZERO_POWER * s) {
            return None;
        }
        let g = |mu: f64| {
            let p = self.sensing_active_powers(mu);
            let used: f64 = (0..p.len()).map(|k| p[k] * (s - self.sensing[k])).sum();
            self.p_max * s - used - self.gamma_s
        };
        let hi = live
            .iter()
            .map(|&k| self.snr[k] / (s - self.sensing[k]))
            .fold(0.0, f64::max);
        let mut lo = hi;
        let mut found = false;
        for _ in 0..4000 {
            lo *= 0.5;
            if g(lo) < 0.0 {
                found = true;
                break;
            }
        }
        if !found {
            return None;
        }
        let mu = log_bisect(lo, hi, g);
        Some((mu, self.sensing_active_powers(mu)))
    }

    /// Budget left for the sensing beam at the sensing-active root; positive
    /// exactly when the dedicated beam is switched on. `-inf` when no root
    /// exists.
    pub fn activation_margin(&self) -> f64 {
        if !(self.gamma_s > 0.0) {
            return f64::NEG_INFINITY;
        }
        match self.sensing_active_root() {
            Some((_, p)) => self.p_max - p.iter().sum::<f64>(),
            None => f64::NEG_INFINITY,
        }
    }

    fn try_sensing_active(&self) -> Option<Candidate> {
        let (mu, p) = self.sensing_active_root()?;
        let used: f64 = p.iter().sum();
        if used >= self.p_max {
            return None;
        }
        Some(Candidate { p_s: self.p_max - used, p, mu, lambda: mu * self.beam_gain, nu: 0.0 })
    }

    fn try_waterfill(&self) -> Option<Candidate> {
        let (p, level) = waterfill(&self.snr, self.p_max);
        let echo: f64 = self.sensing.iter().zip(&p).map(|(s, x)| s * x).sum();
        // a phase update can leave the requirement tight at the water-filling
        // point, where rounding alone decides the comparison
        if echo < self.gamma_s * (1.0 - ECHO_RTOL) {
            return None;
        }
        let lambda = level.map_or(0.0, |w| 1.0 / w);
        Some(Candidate { p, p_s: 0.0, mu: 0.0, lambda, nu: lambda })
    }

    /// Powers with both constraints tight and `p_s = 0` at echo multiplier
    /// `mu`; the budget multiplier is found by bisection.
    fn dual_powers(&self, mu: f64, s_max: f64, c_max: f64) -> (Vec<f64>, f64) {
        let powers = |t: f64| -> Vec<f64> {
            (0..self.snr.len())
                .map(|k| {
                    if !self.is_live(k) {
                        return 0.0;
                    }
                    self.clip(1.0 / (t + mu * (s_max - self.sensing[k])) - 1.0 / self.snr[k])
                })
                .collect()
        };
        let excess = |t: f64| self.p_max - powers(t).iter().sum::<f64>();
        let hi = c_max;
        let mut lo = hi;
        for _ in 0..4000 {
            lo *= 0.5;
            if excess(lo) < 0.0 {
                break;
            }
        }
        let t = log_bisect(lo, hi, excess);
        (powers(t), t + mu * s_max)
    }

    fn try_dual(&self, lambda_wf: f64) -> Result<Candidate> {
        let live: Vec<usize> = (0..self.snr.len()).filter(|&k| self.is_live(k)).collect();
        let s_max = live.iter().map(|&k| self.sensing[k]).fold(0.0, f64::max);
        let c_max = live.iter().map(|&k| self.snr[k]).fold(0.0, f64::max);
        if live.is_empty() || !(s_max > 0.0) {
            return Err(IsacError::Solver("no stream can carry echo power".into()));
        }
        let echo = |mu: f64| {
            let (p, _) = self.dual_powers(mu, s_max, c_max);
            self.sensing.iter().zip(&p).map(|(s, x)| s * x).sum::<f64>()
        };
        // With the requirement exactly at one stream's full-power echo the
        // target is met only up to rounding.
        let target = self.gamma_s * (1.0 - ECHO_RTOL);
        let mut hi = (lambda_wf / s_max).max(f64::MIN_POSITIVE);
        let mut reached = false;
        for _ in 0..2000 {
            if echo(hi) >= target {
                reached = true;
                break;
            }
            hi *= 2.0;
        }
        if !reached {
            return Err(IsacError::Solver("echo requirement unreachable with the beam switched off".into()));
        }
        let mut lo = 0.0;
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if !(mid > lo && mid < hi) {
                break;
            }
            if echo(mid) >= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let mu = hi;
        let (p, lambda) = self.dual_powers(mu, s_max, c_max);
        let mut nu = lambda - mu * self.beam_gain;
        if nu < -1e-9 * lambda {
            return Err(IsacError::Consistency(format!(
                "dual-constrained solution has negative beam multiplier {nu:.3e}"
            )));
        }
        nu = nu.max(0.0);
        Ok(Candidate { p, p_s: 0.0, mu, lambda, nu })
    }

    fn finish(&self, c: Candidate, regime: Regime) -> (PowerAllocation, KktCertificate) {
        let alloc = PowerAllocation { p_c: c.p, p_s: c.p_s };
        let cert = KktCertificate {
            regime,
            mu_star: c.mu,
            lambda_star: c.lambda,
            nu_star: c.nu,
            sensing_slack: self.echo(&alloc) - self.gamma_s,
            power_slack: self.p_max - alloc.total(),
        };
        (alloc, cert)
    }

    /// Optimal allocation and its KKT certificate. The regimes are tested in
    /// the order sensing-active, plain water-filling, dual-constrained.
    pub fn solve(&self) -> Result<(PowerAllocation, KktCertificate)> {
        if self.snr.len() != self.sensing.len() {
            return Err(IsacError::DimensionMismatch("snr and sensing gains differ in length".into()));
        }
        if !(self.p_max > 0.0) {
            return Err(IsacError::InvalidArgument("power budget must be positive".into()));
        }
        if !self.is_reachable() {
            return Err(IsacError::Infeasible { required: self.gamma_s, achievable: self.max_echo() });
        }
        if self.gamma_s > 0.0 {
            if let Some(c) = self.try_sensing_active() {
                return Ok(self.finish(c, Regime::SensingActive));
            }
        }
        let lambda_wf = match self.try_waterfill() {
            Some(c) => return Ok(self.finish(c, Regime::CommWaterfill)),
            None => {
                let (_, level) = waterfill(&self.snr, self.p_max);
                level.map_or(1.0, |w| 1.0 / w)
            }
        };
        let c = self.try_dual(lambda_wf)?;
        Ok(self.finish(c, Regime::DualConstrained))
    }

    /// Largest violation of the KKT conditions: stationarity relative to the
    /// budget multiplier, primal feasibility relative to the constraint
    /// levels, complementary slackness relative to `lambda * P`.
    pub fn kkt_residual(&self, alloc: &PowerAllocation, cert: &KktCertificate) -> f64 {
        let lambda = cert.lambda_star.max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        for k in 0..self.snr.len() {
            let marginal = self.snr[k] / (1.0 + self.snr[k] * alloc.p_c[k]) + cert.mu_star * self.sensing[k] - cert.lambda_star;
            if alloc.p_c[k] > 0.0 {
                worst = worst.max(marginal.abs() / lambda);
            } else {
                worst = worst.max(marginal.max(0.0) / lambda);
            }
        }
        let beam = cert.mu_star * self.beam_gain - cert.lambda_star + cert.nu_star;
        worst = worst.max(beam.abs() / lambda);
        worst = worst.max(cert.nu_star * alloc.p_s / (lambda * self.p_max));
        if alloc.p_c.iter().any(|p| *p < 0.0) || alloc.p_s < 0.0 || cert.mu_star < 0.0 || cert.nu_star < 0.0 {
            worst = worst.max(1.0);
        }
        let echo = self.echo(alloc);
        if self.gamma_s > 0.0 {
            worst = worst.max((self.gamma_s - echo).max(0.0) / self.gamma_s);
        }
        worst = worst.max((self.p_max - alloc.total()).abs() / self.p_max);
        worst = worst.max(cert.mu_star * (echo - self.gamma_s).abs() / (lambda * self.p_max));
        worst
    }
}

/// Optimal powers for co-located CU and target with every IRS aligned.
pub fn solve_colocated(scenario: &ScenarioConfig, gamma_s: f64) -> Result<(PowerAllocation, KktCertificate)> {
    if !scenario.is_colocated() {
        return Err(IsacError::InvalidArgument(
            "closed-form allocation needs the CU and the target at the same angle from every IRS".into(),
        ));
    }
    AllocationProblem::colocated(scenario, gamma_s).solve()
}

/// Budget left for the dedicated sensing beam in the co-located problem.
pub fn activation_margin(scenario: &ScenarioConfig, gamma_s: f64) -> Result<f64> {
    let problem = AllocationProblem::colocated(scenario, gamma_s);
    if !problem.is_reachable() {
        return Err(IsacError::Infeasible { required: gamma_s, achievable: problem.max_echo() });
    }
    Ok(problem.activation_margin())
}

/// Element-count threshold above which equal-split, aligned deployment over
/// the first `k` sites is solved by water-filling with every stream on.
#[derive(Debug, Clone, PartialEq)]
pub struct LargeArrayThreshold {
    pub n_threshold: f64,
    /// Deviation of each `1 / rho_c,k^2` from its mean.
    pub xi: Vec<f64>,
}

fn inverse_gain_deviation(scenario: &ScenarioConfig, k: usize) -> Result<Vec<f64>> {
    if k == 0 || k > scenario.sites.len() {
        return Err(IsacError::InvalidArgument(format!("K = {k} outside 1..={}", scenario.sites.len())));
    }
    let inv: Vec<f64> = scenario.sites[..k].iter().map(|s| 1.0 / s.rho_c().powi(2)).collect();
    if inv.iter().any(|x| !x.is_finite()) {
        return Err(IsacError::InvalidArgument("every site needs a positive cascade gain".into()));
    }
    let mean = inv.iter().sum::<f64>() / k as f64;
    Ok(inv.iter().map(|x| x - mean).collect())
}

pub fn large_array_threshold(scenario: &ScenarioConfig, gamma_s: f64, k: usize) -> Result<LargeArrayThreshold> {
    let xi = inverse_gain_deviation(scenario, k)?;
    let kk = k as f64;
    let mt = scenario.m_t as f64;
    let mr = scenario.m_r as f64;
    let sigma2 = scenario.sigma2_c;
    let p = scenario.p_max;
    let sites = &scenario.sites[..k];
    let sum_rho: f64 = sites.iter().map(|s| s.rho_bi.powi(2)).sum();
    let weighted: f64 = sites.iter().zip(&xi).map(|(s, x)| x * s.rho_bi.powi(2)).sum();
    let xi_max = xi.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let sensing = (kk.powi(3) * (gamma_s + sigma2 / mr * weighted) / (p * mt * sum_rho)).max(0.0).sqrt();
    let activity = (kk.powi(3) * xi_max * sigma2 / (p * mt * mr)).sqrt();
    Ok(LargeArrayThreshold { n_threshold: sensing.max(activity), xi })
}

/// Water-filling powers of the large-array regime:
/// `p_k = P / K - K^2 sigma^2 xi_k / (M_t M_r N^2)`.
pub fn large_array_powers(scenario: &ScenarioConfig, k: usize, n: f64) -> Result<Vec<f64>> {
    let xi = inverse_gain_deviation(scenario, k)?;
    let kk = k as f64;
    let scale = kk * kk * scenario.sigma2_c / (scenario.m_t as f64 * scenario.m_r as f64 * n * n);
    Ok(xi.iter().map(|x| scenario.p_max / kk - scale * x).collect())
}

/// Sum rate with equal power over the first `k` sites and `n` elements split
/// equally: `sum_k log2(1 + P rho_BI^2 rho_IU^2 M_t M_r N^2 / (K^3 sigma^2))`.
pub fn asymptotic_rate(scenario: &ScenarioConfig, k: usize, n: f64) -> Result<f64> {
    if k == 0 || k > scenario.sites.len() {
        return Err(IsacError::InvalidArgument(format!("K = {k} outside 1..={}", scenario.sites.len())));
    }
    let kk = k as f64;
    let mtmr = scenario.m_t as f64 * scenario.m_r as f64;
    Ok(scenario.sites[..k]
        .iter()
        .map(|s| (scenario.p_max * s.rho_c().powi(2) * mtmr * n * n / (kk.powi(3) * scenario.sigma2_c)).ln_1p())
        .sum::<f64>()
        / std::f64::consts::LN_2)
}
