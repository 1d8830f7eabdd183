//! Seeded synthetic scenarios for sweeps, baselines and randomized checks.

use rand::Rng;

use crate::geometry::candidate_angles;
use crate::scenario::{IrsSite, ScenarioConfig, SystemParams};

/// Shape of a randomly drawn scenario.
#[derive(Debug, Clone, Copy)]
pub struct RandomShape {
    pub k: usize,
    pub per_site: usize,
    pub m_t: usize,
    pub m_r: usize,
    pub n_r: usize,
}

fn random_angle<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.gen_range(-0.95..0.95)
}

/// Amplitude factor drawn log-uniformly between 1e-4 and 1e-3.
fn random_rho<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    10f64.powf(rng.gen_range(-4.0..-3.0))
}

/// Scenario with arbitrary (not necessarily orthogonal) angles, for checks
/// that only rely on the channel model.
pub fn random_scenario<R: Rng + ?Sized>(rng: &mut R, shape: RandomShape) -> ScenarioConfig {
    let sites: Vec<IrsSite> = (0..shape.k)
        .map(|k| IrsSite {
            n_elements: shape.per_site,
            mu_bi_d: random_angle(rng),
            mu_bi_a: random_angle(rng),
            mu_iu_d: random_angle(rng),
            mu_iu_a: random_angle(rng),
            mu_it_d: random_angle(rng),
            rho_bi: random_rho(rng),
            rho_iu: random_rho(rng),
            rho_it: random_rho(rng),
            is_semi_passive: k == 0,
        })
        .collect();
    let rho_ts = sites[0].rho_it;
    let max_it = sites.iter().map(|s| s.rho_it).fold(0.0, f64::max);
    ScenarioConfig {
        m_t: shape.m_t,
        m_r: shape.m_r,
        n_r: shape.n_r,
        n_total: shape.k * shape.per_site,
        mu_target: sites[0].mu_it_d,
        sites,
        p_max: 1.0,
        sigma2_c: 1e-11,
        sigma2_s: 1e-14,
        t_symbols: 256,
        beta_tilde_sq: rho_ts * rho_ts * max_it * max_it,
        rho_ts,
    }
}

fn colocated_from_rhos(system: &SystemParams, rhos: &[(f64, f64)], angle_seed: &[f64]) -> ScenarioConfig {
    let k = rhos.len();
    let pairs = candidate_angles(system.m_t, system.m_r, k).expect("k within candidate limit");
    let sites: Vec<IrsSite> = pairs
        .iter()
        .zip(rhos)
        .zip(angle_seed.chunks(2))
        .enumerate()
        .map(|(idx, ((&(mu_bi_d, mu_iu_a), &(rho_bi, rho_iu)), a))| IrsSite {
            n_elements: system.n_total / k,
            mu_bi_d,
            mu_bi_a: a[0],
            mu_iu_d: a[1],
            mu_iu_a,
            mu_it_d: a[1],
            rho_bi,
            rho_iu,
            rho_it: rho_iu,
            is_semi_passive: idx == 0,
        })
        .collect();
    let rho_ts = sites[0].rho_it;
    let max_it = sites.iter().map(|s| s.rho_it).fold(0.0, f64::max);
    ScenarioConfig {
        m_t: system.m_t,
        m_r: system.m_r,
        n_r: system.n_r,
        n_total: system.n_total,
        mu_target: sites[0].mu_it_d,
        sites,
        p_max: system.p_max,
        sigma2_c: system.sigma2_c,
        sigma2_s: system.sigma2_s,
        t_symbols: system.t_symbols,
        beta_tilde_sq: system.beta_sq * rho_ts * rho_ts * max_it * max_it,
        rho_ts,
    }
}

/// Orthogonal co-located scenario with `k` sites and random path losses.
/// Requires `k <= min(m_t, m_r)` and `k | n_total`.
pub fn random_colocated<R: Rng + ?Sized>(rng: &mut R, system: &SystemParams, k: usize) -> ScenarioConfig {
    let rhos: Vec<(f64, f64)> = (0..k).map(|_| (random_rho(rng), random_rho(rng))).collect();
    let angles: Vec<f64> = (0..2 * k).map(|_| random_angle(rng)).collect();
    colocated_from_rhos(system, &rhos, &angles)
}

/// Orthogonal co-located scenario where every site has the same path losses.
pub fn symmetric_colocated(system: &SystemParams, k: usize, rho_bi: f64, rho_iu: f64) -> ScenarioConfig {
    let angles: Vec<f64> = (0..2 * k).map(|i| -0.6 + 0.1 * i as f64).collect();
    colocated_from_rhos(system, &vec![(rho_bi, rho_iu); k], &angles)
}

/// Orthogonal scenario whose target is seen from every IRS at a different
/// angle than the CU, with its own random path losses.
pub fn random_separated<R: Rng + ?Sized>(rng: &mut R, system: &SystemParams, k: usize) -> ScenarioConfig {
    let mut s = random_colocated(rng, system, k);
    for site in &mut s.sites {
        site.mu_it_d = random_angle(rng);
        site.rho_it = random_rho(rng);
    }
    let rho_ts = s.sites[0].rho_it;
    let max_it = s.sites.iter().map(|x| x.rho_it).fold(0.0, f64::max);
    s.mu_target = s.sites[0].mu_it_d;
    s.rho_ts = rho_ts;
    s.beta_tilde_sq = system.beta_sq * rho_ts * rho_ts * max_it * max_it;
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn synthetic_scenarios_validate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shape = RandomShape { k: 4, per_site: 16, m_t: 8, m_r: 4, n_r: 6 };
        random_scenario(&mut rng, shape).validate().unwrap();
        let sys = SystemParams { n_total: 120, ..SystemParams::default() };
        let s = random_colocated(&mut rng, &sys, 3);
        s.validate().unwrap();
        assert!(s.is_colocated());
        let s = symmetric_colocated(&sys, 4, 1e-4, 3e-4);
        s.validate().unwrap();
        assert!(crate::geometry::verify_orthogonality(&s) < 1e-12);
        let s = random_separated(&mut rng, &sys, 3);
        s.validate().unwrap();
        assert!(!s.is_colocated());
    }
}
