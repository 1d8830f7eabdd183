//! Communication rate: log-det capacity, per-subchannel rates of the
//! orthogonal multi-IRS channel and water-filling.

use nalgebra::Cholesky;
use num_complex::Complex64;

use crate::error::{IsacError, Result};
use crate::geometry::{cascade_vector, ula, CMatrix};
use crate::linalg::check_covariance;
use crate::phases::PhaseShifts;
use crate::power::PowerAllocation;
use crate::scenario::ScenarioConfig;

/// `log2 det(I + H R H^H / sigma2)`.
pub fn achievable_rate(h: &CMatrix, r_c: &CMatrix, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(IsacError::InvalidArgument(format!("noise power must be positive, got {sigma2}")));
    }
    check_covariance(r_c, h.ncols())?;
    let m = h.nrows();
    let gram = h * r_c * h.adjoint() * Complex64::from(1.0 / sigma2);
    let hermitian = (&gram + gram.adjoint()).unscale(2.0) + CMatrix::identity(m, m);
    let chol = Cholesky::new(hermitian)
        .ok_or_else(|| IsacError::Solver("log-det matrix is not positive definite".into()))?;
    let l = chol.l();
    let nats: f64 = (0..m).map(|i| 2.0 * l[(i, i)].re.ln()).sum();
    Ok(nats / std::f64::consts::LN_2)
}

/// Per-subchannel power gains `|Upsilon_k|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubchannelGains {
    pub gains: Vec<f64>,
}

impl SubchannelGains {
    /// Gains divided by the noise power: SNR per watt on each stream.
    pub fn snr_per_watt(&self, sigma2: f64) -> Vec<f64> {
        self.gains.iter().map(|g| g / sigma2).collect()
    }
}

/// `|Upsilon_k|^2 = M_t M_r rho_c,k^2 |q_c,k^H v_k|^2`.
pub fn subchannel_gains(scenario: &ScenarioConfig, phases: &PhaseShifts) -> Result<SubchannelGains> {
    phases.check_shape(scenario)?;
    let scale = (scenario.m_t * scenario.m_r) as f64;
    Ok(SubchannelGains {
        gains: scenario
            .sites
            .iter()
            .zip(&phases.vectors)
            .map(|(s, v)| {
                let q = cascade_vector(s.n_elements, s.mu_bi_a, s.mu_iu_d);
                scale * s.rho_c().powi(2) * q.dotc(v).norm_sqr()
            })
            .collect(),
    })
}

fn check_allocation(scenario: &ScenarioConfig, alloc: &PowerAllocation) -> Result<()> {
    if alloc.p_c.len() != scenario.sites.len() {
        return Err(IsacError::DimensionMismatch(format!(
            "{} stream powers for {} sites",
            alloc.p_c.len(),
            scenario.sites.len()
        )));
    }
    if alloc.p_c.iter().chain([&alloc.p_s]).any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(IsacError::InvalidArgument("powers must be nonnegative and finite".into()));
    }
    let used = alloc.total();
    if used > scenario.p_max * (1.0 + 1e-12) {
        return Err(IsacError::BudgetExceeded { used, budget: scenario.p_max });
    }
    Ok(())
}

/// Sum of per-stream rates; the dedicated sensing power carries no data.
pub fn rate_from_allocation(scenario: &ScenarioConfig, phases: &PhaseShifts, alloc: &PowerAllocation) -> Result<f64> {
    check_allocation(scenario, alloc)?;
    let gains = subchannel_gains(scenario, phases)?;
    Ok(sum_rate(&gains.snr_per_watt(scenario.sigma2_c), &alloc.p_c))
}

/// `sum_k log2(1 + c_k p_k)`.
pub fn sum_rate(snr_per_watt: &[f64], powers: &[f64]) -> f64 {
    snr_per_watt.iter().zip(powers).map(|(c, p)| (c * p).ln_1p()).sum::<f64>() / std::f64::consts::LN_2
}

/// Transmit covariance `sum_k p_k a~_k a~_k^H + p_s a_B a_B^H / ||a_B||^2`,
/// with `a~_k` the normalized BS response towards site `k`.
pub fn transmit_covariance(scenario: &ScenarioConfig, phases: &PhaseShifts, alloc: &PowerAllocation) -> Result<CMatrix> {
    check_allocation(scenario, alloc)?;
    let mut r = comm_covariance(scenario, &alloc.p_c);
    if alloc.p_s > 0.0 {
        let r_s = crate::sensing::sensing_covariance(scenario, phases)?;
        r += r_s * Complex64::from(alloc.p_s / scenario.p_max);
    }
    Ok(r)
}

/// Data covariance `sum_k p_k a~_k a~_k^H`.
pub fn comm_covariance(scenario: &ScenarioConfig, powers: &[f64]) -> CMatrix {
    let mut r = CMatrix::zeros(scenario.m_t, scenario.m_t);
    let norm = scenario.m_t as f64;
    for (s, p) in scenario.sites.iter().zip(powers) {
        let a = ula(scenario.m_t, s.mu_bi_d);
        r += &a * a.adjoint() * Complex64::from(p / norm);
    }
    r
}

/// Water-filling over streams with per-watt SNRs `snr`: `p_k = (w - 1/c_k)^+`
/// with `sum p_k = budget`. Returns the powers and the water level `w`
/// (`None` when no stream has positive gain). A stream whose floor equals
/// the level stays off.
pub fn waterfill(snr: &[f64], budget: f64) -> (Vec<f64>, Option<f64>) {
    let mut order: Vec<usize> = (0..snr.len()).filter(|&k| snr[k] > 0.0).collect();
    if order.is_empty() || !(budget > 0.0) {
        return (vec![0.0; snr.len()], None);
    }
    order.sort_by(|&a, &b| snr[b].partial_cmp(&snr[a]).unwrap().then(a.cmp(&b)));
    let mut level = 0.0;
    let mut floors = 0.0;
    let mut active = 0;
    for (m, &k) in order.iter().enumerate() {
        let floor = 1.0 / snr[k];
        let candidate = (budget + floors + floor) / (m + 1) as f64;
        if m > 0 && candidate <= floor {
            break;
        }
        floors += floor;
        level = candidate;
        active = m + 1;
    }
    let mut p = vec![0.0; snr.len()];
    for &k in &order[..active] {
        p[k] = (level - 1.0 / snr[k]).max(0.0);
    }
    (p, Some(level))
}

/// Communication-only optimum: phases aligned to every BS-IRS-CU cascade and
/// water-filling over the resulting subchannels.
pub fn comm_only_optimum(scenario: &ScenarioConfig) -> Result<(PhaseShifts, PowerAllocation, f64)> {
    let phases = PhaseShifts::comm_aligned(scenario);
    let snr = subchannel_gains(scenario, &phases)?.snr_per_watt(scenario.sigma2_c);
    let (p_c, _) = waterfill(&snr, scenario.p_max);
    let rate = sum_rate(&snr, &p_c);
    Ok((phases, PowerAllocation { p_c, p_s: 0.0 }, rate))
}

/// Least-squares slope of the water-filled rate against `log2 P` over a grid
/// of transmit powers, for fixed phases.
pub fn multiplexing_dof(scenario: &ScenarioConfig, phases: &PhaseShifts, power_grid: &[f64]) -> Result<f64> {
    if power_grid.len() < 2 {
        return Err(IsacError::InvalidArgument("slope fit needs at least two powers".into()));
    }
    if power_grid.iter().any(|p| !(*p > 0.0)) {
        return Err(IsacError::InvalidArgument("grid powers must be positive".into()));
    }
    let snr = subchannel_gains(scenario, phases)?.snr_per_watt(scenario.sigma2_c);
    let points: Vec<(f64, f64)> = power_grid
        .iter()
        .map(|&p| {
            let (alloc, _) = waterfill(&snr, p);
            (p.log2(), sum_rate(&snr, &alloc))
        })
        .collect();
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(IsacError::InvalidArgument("power grid must contain distinct values".into()));
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{effective_channel, verify_orthogonality};
    use crate::scenario::{Layout, SystemParams};
    use crate::synthetic::random_colocated;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn default_scenario(k: usize) -> ScenarioConfig {
        let s = Layout::default().build(&SystemParams::default()).unwrap();
        s.select(&(0..k).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn zero_covariance_gives_zero_rate() {
        let s = default_scenario(2);
        let h = effective_channel(&s, &PhaseShifts::comm_aligned(&s)).unwrap();
        let r = CMatrix::zeros(s.m_t, s.m_t);
        assert_eq!(achievable_rate(&h, &r, s.sigma2_c).unwrap(), 0.0);
    }

    #[test]
    fn non_psd_covariance_rejected() {
        let s = default_scenario(1);
        let h = effective_channel(&s, &PhaseShifts::comm_aligned(&s)).unwrap();
        let r = -CMatrix::identity(s.m_t, s.m_t);
        assert!(matches!(achievable_rate(&h, &r, s.sigma2_c), Err(IsacError::NotPsd(_))));
    }

    #[test]
    fn single_site_rank_one_rate() {
        let s = default_scenario(1);
        let phases = PhaseShifts::comm_aligned(&s);
        let h = effective_channel(&s, &phases).unwrap();
        let p = 0.3;
        let r = comm_covariance(&s, &[p]);
        let site = &s.sites[0];
        let snr = p * (s.m_t * s.m_r) as f64 * site.rho_c().powi(2) * (site.n_elements as f64).powi(2) / s.sigma2_c;
        assert_relative_eq!(achievable_rate(&h, &r, s.sigma2_c).unwrap(), (1.0 + snr).log2(), max_relative = 1e-10);

        let sv = h.clone().svd(false, false).singular_values;
        let expected = ((s.m_t * s.m_r) as f64).sqrt() * site.rho_c() * site.n_elements as f64;
        assert_relative_eq!(sv[0], expected, max_relative = 1e-10);
        assert!(sv[1] < 1e-10 * sv[0]);
    }

    #[test]
    fn zero_path_loss_gives_zero_channel() {
        let mut s = default_scenario(2);
        for site in &mut s.sites {
            site.rho_iu = 0.0;
        }
        let h = effective_channel(&s, &PhaseShifts::comm_aligned(&s)).unwrap();
        assert!(h.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn singular_values_match_subchannel_gains() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for k in [2usize, 4, 8] {
            let s = default_scenario(k);
            assert!(verify_orthogonality(&s) < 1e-12);
            let phases = PhaseShifts::random(&s, &mut rng);
            let h = effective_channel(&s, &phases).unwrap();
            let mut sv: Vec<f64> = h.svd(false, false).singular_values.iter().cloned().collect();
            sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let mut g: Vec<f64> = subchannel_gains(&s, &phases).unwrap().gains.iter().map(|x| x.sqrt()).collect();
            g.sort_by(|a, b| b.partial_cmp(a).unwrap());
            for i in 0..k {
                assert_relative_eq!(sv[i], g[i], max_relative = 1e-10);
            }
            for extra in &sv[k..] {
                assert!(*extra < 1e-10 * sv[0]);
            }
        }
    }

    #[test]
    fn diagonalized_rate_matches_logdet() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = default_scenario(4);
        let phases = PhaseShifts::random(&s, &mut rng);
        let p: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..0.25)).collect();
        let alloc = PowerAllocation { p_c: p.clone(), p_s: 0.0 };
        let h = effective_channel(&s, &phases).unwrap();
        let logdet = achievable_rate(&h, &comm_covariance(&s, &p), s.sigma2_c).unwrap();
        let closed = rate_from_allocation(&s, &phases, &alloc).unwrap();
        assert_relative_eq!(logdet, closed, max_relative = 1e-10);
    }

    #[test]
    fn allocation_rate_edge_cases() {
        let s = default_scenario(8);
        let phases = PhaseShifts::comm_aligned(&s);
        let zero = PowerAllocation { p_c: vec![0.0; 8], p_s: 0.0 };
        assert_eq!(rate_from_allocation(&s, &phases, &zero).unwrap(), 0.0);
        let eq = PowerAllocation { p_c: vec![s.p_max / 8.0; 8], p_s: 0.0 };
        let half = PowerAllocation { p_c: vec![s.p_max / 16.0; 8], p_s: 0.0 };
        let r_eq = rate_from_allocation(&s, &phases, &eq).unwrap();
        assert!(r_eq.is_finite() && r_eq > 0.0);
        assert!(r_eq > rate_from_allocation(&s, &phases, &half).unwrap());
        let over = PowerAllocation { p_c: vec![s.p_max / 4.0; 8], p_s: 0.0 };
        assert!(matches!(rate_from_allocation(&s, &phases, &over), Err(IsacError::BudgetExceeded { .. })));
    }

    #[test]
    fn waterfill_cases() {
        let (p, w) = waterfill(&[5.0, 5.0, 5.0], 3.0);
        assert_eq!(p, vec![1.0, 1.0, 1.0]);
        assert_relative_eq!(w.unwrap(), 1.2);
        let (p, _) = waterfill(&[100.0, 1e-3], 1.0);
        assert_eq!(p[1], 0.0);
        assert_relative_eq!(p[0], 1.0);
        let (p, w) = waterfill(&[0.0, 0.0], 1.0);
        assert_eq!(p, vec![0.0, 0.0]);
        assert!(w.is_none());
        // floor exactly at the level stays off
        let (p, _) = waterfill(&[1.0, 0.5], 1.0);
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn waterfill_kkt_and_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let sys = SystemParams { n_total: 120, ..SystemParams::default() };
        for k in 1..=3usize {
            for _ in 0..3 {
                let s = random_colocated(&mut rng, &sys, k);
                let (phases, alloc, rate) = comm_only_optimum(&s).unwrap();
                let snr = subchannel_gains(&s, &phases).unwrap().snr_per_watt(s.sigma2_c);
                let (_, level) = waterfill(&snr, s.p_max);
                let level = level.unwrap();
                assert_relative_eq!(alloc.p_c.iter().sum::<f64>(), s.p_max, max_relative = 1e-12);
                for (c, p) in snr.iter().zip(&alloc.p_c) {
                    if *p > 0.0 {
                        assert!((level - 1.0 / c - p).abs() <= 1e-9 * s.p_max);
                    } else {
                        assert!(level <= 1.0 / c);
                    }
                }
                let best = grid_best(&snr, s.p_max, 1e-4);
                assert!(rate >= best - 1e-6, "rate {rate} < grid {best}");
            }
        }
    }

    fn grid_best(snr: &[f64], budget: f64, frac: f64) -> f64 {
        let step = budget * frac;
        let n = (1.0 / frac).round() as usize;
        match snr.len() {
            1 => sum_rate(snr, &[budget]),
            2 => (0..=n).map(|i| sum_rate(snr, &[i as f64 * step, budget - i as f64 * step])).fold(f64::MIN, f64::max),
            _ => {
                let mut best = f64::MIN;
                for i in 0..=n {
                    for j in 0..=(n - i) {
                        let p = [i as f64 * step, j as f64 * step, budget - (i + j) as f64 * step];
                        best = best.max(sum_rate(snr, &p));
                    }
                }
                best
            }
        }
    }

    #[test]
    fn rate_is_concave_in_powers() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let snr = [300.0, 50.0, 1200.0];
        for _ in 0..200 {
            let a: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..1.0)).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            assert!(sum_rate(&snr, &mid) >= 0.5 * (sum_rate(&snr, &a) + sum_rate(&snr, &b)) - 1e-12);
        }
    }

    #[test]
    fn dof_slope_counts_streams() {
        let grid: Vec<f64> = (0..=6).map(|i| crate::dbm_to_watts(40.0 + 10.0 * i as f64)).collect();
        for k in [1usize, 4] {
            let s = default_scenario(k);
            let slope = multiplexing_dof(&s, &PhaseShifts::comm_aligned(&s), &grid).unwrap();
            assert!((slope - k as f64).abs() < 0.05 * k as f64, "K={k}: slope {slope}");
        }
        let mut s = default_scenario(4);
        s.sites[3].rho_iu = 0.0;
        let slope = multiplexing_dof(&s, &PhaseShifts::comm_aligned(&s), &grid).unwrap();
        assert!((slope - 3.0).abs() < 0.15, "dead subchannel slope {slope}");
        assert!(multiplexing_dof(&s, &PhaseShifts::comm_aligned(&s), &grid[..1]).is_err());
    }

    #[test]
    fn equal_gains_share_power_equally() {
        let s = crate::synthetic::symmetric_colocated(&SystemParams::default(), 4, 1e-4, 3e-4);
        let (_, alloc, _) = comm_only_optimum(&s).unwrap();
        for p in alloc.p_c {
            assert_relative_eq!(p, s.p_max / 4.0, max_relative = 1e-12);
        }
    }
}
