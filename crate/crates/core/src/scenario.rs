//! Scenario description: antenna counts, noise levels, power budget and the
//! per-IRS link parameters.

use serde::{Deserialize, Serialize};

use crate::error::{IsacError, Result};
use crate::geometry::{candidate_angles, path_loss_amplitude};

/// One IRS site, described by the frequency angles of its three links and
/// the matching amplitude path-loss factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrsSite {
    pub n_elements: usize,
    /// BS-side departure angle (seen from the BS array).
    pub mu_bi_d: f64,
    /// BS-side arrival angle (seen from the IRS).
    pub mu_bi_a: f64,
    /// CU-side departure angle (seen from the IRS).
    pub mu_iu_d: f64,
    /// CU-side arrival angle (seen from the CU array).
    pub mu_iu_a: f64,
    /// Target-side departure angle (seen from the IRS).
    pub mu_it_d: f64,
    pub rho_bi: f64,
    pub rho_iu: f64,
    pub rho_it: f64,
    pub is_semi_passive: bool,
}

impl IrsSite {
    /// Combined BS-IRS-CU amplitude factor.
    pub fn rho_c(&self) -> f64 {
        self.rho_bi * self.rho_iu
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub m_t: usize,
    pub m_r: usize,
    /// Receive sensors on the semi-passive IRS.
    pub n_r: usize,
    /// Total IRS element budget.
    pub n_total: usize,
    /// Sites in deployment order; the semi-passive one comes first.
    pub sites: Vec<IrsSite>,
    pub p_max: f64,
    pub sigma2_c: f64,
    pub sigma2_s: f64,
    pub t_symbols: usize,
    pub beta_tilde_sq: f64,
    pub rho_ts: f64,
    pub mu_target: f64,
}

fn angle_ok(x: f64) -> bool {
    x.is_finite() && (-1.0..=1.0).contains(&x)
}

impl ScenarioConfig {
    /// Collects every violated invariant instead of stopping at the first.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [("m_t", self.m_t), ("m_r", self.m_r), ("n_r", self.n_r), ("n_total", self.n_total), ("t_symbols", self.t_symbols)] {
            if v == 0 {
                out.push(format!("{name} must be positive"));
            }
        }
        for (name, v) in [("p_max", self.p_max), ("sigma2_c", self.sigma2_c), ("sigma2_s", self.sigma2_s)] {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("{name} must be a positive finite power, got {v}"));
            }
        }
        if !(self.beta_tilde_sq >= 0.0 && self.beta_tilde_sq.is_finite()) {
            out.push(format!("beta_tilde_sq must be nonnegative, got {}", self.beta_tilde_sq));
        }
        if !(self.rho_ts >= 0.0 && self.rho_ts.is_finite()) {
            out.push(format!("rho_ts must be nonnegative, got {}", self.rho_ts));
        }
        if !angle_ok(self.mu_target) {
            out.push(format!("mu_target must lie in [-1, 1], got {}", self.mu_target));
        }
        if self.sites.is_empty() {
            out.push("at least one IRS site is required".into());
        }
        let mut used = 0usize;
        for (k, s) in self.sites.iter().enumerate() {
            used += s.n_elements;
            if s.n_elements == 0 {
                out.push(format!("site {k}: n_elements must be positive"));
            }
            for (name, x) in [
                ("mu_bi_d", s.mu_bi_d),
                ("mu_bi_a", s.mu_bi_a),
                ("mu_iu_d", s.mu_iu_d),
                ("mu_iu_a", s.mu_iu_a),
                ("mu_it_d", s.mu_it_d),
            ] {
                if !angle_ok(x) {
                    out.push(format!("site {k}: {name} must lie in [-1, 1], got {x}"));
                }
            }
            for (name, x) in [("rho_bi", s.rho_bi), ("rho_iu", s.rho_iu), ("rho_it", s.rho_it)] {
                if !(x >= 0.0 && x.is_finite()) {
                    out.push(format!("site {k}: {name} must be nonnegative, got {x}"));
                }
            }
            if s.is_semi_passive && k != 0 {
                out.push(format!("site {k}: the semi-passive IRS must be listed first"));
            }
        }
        if used > self.n_total {
            out.push(format!("sites use {used} elements but the budget is {}", self.n_total));
        }
        let semi = self.sites.iter().filter(|s| s.is_semi_passive).count();
        if !self.sites.is_empty() && semi != 1 {
            out.push(format!("exactly one semi-passive IRS is required, found {semi}"));
        }
        if let Some(first) = self.sites.first() {
            if first.is_semi_passive && (first.mu_it_d - self.mu_target).abs() > 1e-12 {
                out.push(format!(
                    "mu_target ({}) must equal the semi-passive site's target angle ({})",
                    self.mu_target, first.mu_it_d
                ));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(IsacError::InvalidScenario(v))
        }
    }

    pub fn k(&self) -> usize {
        self.sites.len()
    }

    /// Co-located CU and target: every IRS sees both at the same angle.
    pub fn is_colocated(&self) -> bool {
        self.sites.iter().all(|s| (s.mu_iu_d - s.mu_it_d).abs() <= 1e-12)
    }

    /// Sub-scenario over the given site indices with the element budget split
    /// equally among them.
    pub fn select(&self, indices: &[usize]) -> Result<ScenarioConfig> {
        if indices.is_empty() {
            return Err(IsacError::InvalidArgument("site selection is empty".into()));
        }
        let k = indices.len();
        if !self.n_total.is_multiple_of(k) {
            return Err(IsacError::InvalidArgument(format!(
                "N = {} is not divisible by K = {k}",
                self.n_total
            )));
        }
        let mut sites = Vec::with_capacity(k);
        for (pos, &i) in indices.iter().enumerate() {
            let site = self
                .sites
                .get(i)
                .ok_or_else(|| IsacError::InvalidArgument(format!("site index {i} out of range")))?;
            if indices[..pos].contains(&i) {
                return Err(IsacError::InvalidArgument(format!("site index {i} selected twice")));
            }
            let mut s = site.clone();
            s.n_elements = self.n_total / k;
            sites.push(s);
        }
        let out = ScenarioConfig { sites, ..self.clone() };
        out.validate()?;
        Ok(out)
    }

    /// Same sites with a different total element budget, split equally.
    pub fn with_total_elements(&self, n_total: usize) -> Result<ScenarioConfig> {
        let mut out = self.clone();
        out.n_total = n_total;
        let all: Vec<usize> = (0..self.k()).collect();
        out.select(&all)
    }
}

/// Global system parameters that do not depend on the IRS placement.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams {
    pub m_t: usize,
    pub m_r: usize,
    pub n_r: usize,
    pub n_total: usize,
    pub t_symbols: usize,
    pub p_max: f64,
    pub sigma2_c: f64,
    pub sigma2_s: f64,
    /// Target reflection coefficient power `|beta|^2`.
    pub beta_sq: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        SystemParams {
            m_t: 32,
            m_r: 8,
            n_r: 8,
            n_total: 800,
            t_symbols: 256,
            p_max: 1.0,
            sigma2_c: 1e-11,
            sigma2_s: 1e-14,
            beta_sq: 1.0,
        }
    }
}

/// Planar placement of BS, CU and target. IRS sites are put on the rays
/// leaving the BS at the candidate departure angles, where those rays first
/// meet a circle of `ring_radius` around the CU. All arrays are ULAs along
/// the y axis, so a frequency angle is the y component of the unit vector
/// pointing at the other end of the link.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub bs: [f64; 2],
    pub cu: [f64; 2],
    pub target: [f64; 2],
    pub ring_radius: f64,
    pub k0_db: f64,
    pub alpha: f64,
    pub candidates: usize,
}

impl Default for Layout {
    fn default() -> Self {
        Layout {
            bs: [0.0, 0.0],
            cu: [100.0, 0.0],
            target: [100.0, 0.0],
            ring_radius: 30.0,
            k0_db: -40.0,
            alpha: 2.0,
            candidates: 8,
        }
    }
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm(a: [f64; 2]) -> f64 {
    a[0].hypot(a[1])
}

/// y-component of the unit vector from `from` towards `to`.
fn frequency_angle(from: [f64; 2], to: [f64; 2]) -> f64 {
    let d = sub(to, from);
    d[1] / norm(d)
}

impl Layout {
    /// IRS positions for every candidate BS departure angle.
    pub fn site_positions(&self, m_t: usize, m_r: usize) -> Result<Vec<[f64; 2]>> {
        let pairs = candidate_angles(m_t, m_r, self.candidates)?;
        let to_cu = sub(self.cu, self.bs);
        let dist_cu = norm(to_cu);
        pairs
            .iter()
            .map(|&(mu, _)| {
                // Ray direction: departure angle measured from the array
                // broadside (x axis), so u_y = mu.
                let ux = (1.0 - mu * mu).sqrt();
                let u = [ux, mu];
                let along = u[0] * to_cu[0] + u[1] * to_cu[1];
                let disc = along * along - dist_cu * dist_cu + self.ring_radius * self.ring_radius;
                if disc < 0.0 {
                    return Err(IsacError::InvalidArgument(format!(
                        "the ray at departure angle {mu:.4} misses the ring of radius {} m around the CU",
                        self.ring_radius
                    )));
                }
                let t = along - disc.sqrt();
                if t <= 0.0 {
                    return Err(IsacError::InvalidArgument(format!(
                        "ring of radius {} m encloses the BS",
                        self.ring_radius
                    )));
                }
                Ok([self.bs[0] + t * u[0], self.bs[1] + t * u[1]])
            })
            .collect()
    }

    /// Full candidate scenario: one site per candidate angle pair, site 0
    /// semi-passive, element budget split equally (rounded down when the
    /// candidate count does not divide it).
    pub fn build(&self, system: &SystemParams) -> Result<ScenarioConfig> {
        let pairs = candidate_angles(system.m_t, system.m_r, self.candidates)?;
        let positions = self.site_positions(system.m_t, system.m_r)?;
        let per_site = (system.n_total / self.candidates.max(1)).max(1);
        let mut sites = Vec::with_capacity(pairs.len());
        for (k, (&(mu_bi_d, mu_iu_a), &pos)) in pairs.iter().zip(&positions).enumerate() {
            let d_bi = norm(sub(pos, self.bs));
            let d_iu = norm(sub(self.cu, pos));
            let d_it = norm(sub(self.target, pos));
            sites.push(IrsSite {
                n_elements: per_site,
                mu_bi_d,
                mu_bi_a: frequency_angle(pos, self.bs),
                mu_iu_d: frequency_angle(pos, self.cu),
                mu_iu_a,
                mu_it_d: frequency_angle(pos, self.target),
                rho_bi: path_loss_amplitude(d_bi, self.alpha, self.k0_db)?,
                rho_iu: path_loss_amplitude(d_iu, self.alpha, self.k0_db)?,
                rho_it: path_loss_amplitude(d_it, self.alpha, self.k0_db)?,
                is_semi_passive: k == 0,
            });
        }
        let rho_ts = sites[0].rho_it;
        let max_rho_it = sites.iter().map(|s| s.rho_it).fold(0.0, f64::max);
        let scenario = ScenarioConfig {
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
            beta_tilde_sq: system.beta_sq * rho_ts * rho_ts * max_rho_it * max_rho_it,
            rho_ts,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}
