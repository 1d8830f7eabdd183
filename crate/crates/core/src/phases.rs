//! IRS reflection coefficients `v_k = diag(Theta_k)`.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{IsacError, Result};
use crate::geometry::{cascade_vector, CVector};
use crate::scenario::ScenarioConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseShifts {
    pub vectors: Vec<CVector>,
}

/// Unit-modulus vector with the phases of `q`; zero entries map to 1.
pub(crate) fn unit_phases(q: &CVector) -> CVector {
    q.map(|z| {
        let r = z.norm();
        if r > 0.0 {
            z / r
        } else {
            Complex64::new(1.0, 0.0)
        }
    })
}

impl PhaseShifts {
    pub fn check_shape(&self, scenario: &ScenarioConfig) -> Result<()> {
        if self.vectors.len() != scenario.sites.len() {
            return Err(IsacError::DimensionMismatch(format!(
                "{} phase vectors for {} sites",
                self.vectors.len(),
                scenario.sites.len()
            )));
        }
        for (k, (v, s)) in self.vectors.iter().zip(&scenario.sites).enumerate() {
            if v.len() != s.n_elements {
                return Err(IsacError::DimensionMismatch(format!(
                    "site {k}: phase vector has {} entries, IRS has {} elements",
                    v.len(),
                    s.n_elements
                )));
            }
        }
        Ok(())
    }

    /// Phases that coherently combine each BS-IRS-CU cascade.
    pub fn comm_aligned(scenario: &ScenarioConfig) -> PhaseShifts {
        PhaseShifts {
            vectors: scenario
                .sites
                .iter()
                .map(|s| unit_phases(&cascade_vector(s.n_elements, s.mu_bi_a, s.mu_iu_d)))
                .collect(),
        }
    }

    /// Phases that coherently combine each BS-IRS-target cascade.
    pub fn sensing_aligned(scenario: &ScenarioConfig) -> PhaseShifts {
        PhaseShifts {
            vectors: scenario
                .sites
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    let out = if k == 0 { scenario.mu_target } else { s.mu_it_d };
                    unit_phases(&cascade_vector(s.n_elements, s.mu_bi_a, out))
                })
                .collect(),
        }
    }

    /// Replaces the semi-passive site's phases by the target-aligned ones,
    /// which also zero the derivative cross term of the sensing model.
    pub fn with_sirs_sensing(mut self, scenario: &ScenarioConfig) -> PhaseShifts {
        if let Some(first) = scenario.sites.first() {
            if !self.vectors.is_empty() {
                self.vectors[0] = unit_phases(&cascade_vector(first.n_elements, first.mu_bi_a, scenario.mu_target));
            }
        }
        self
    }

    pub fn uniform(scenario: &ScenarioConfig) -> PhaseShifts {
        PhaseShifts {
            vectors: scenario
                .sites
                .iter()
                .map(|s| CVector::from_element(s.n_elements, Complex64::new(1.0, 0.0)))
                .collect(),
        }
    }

    /// Independent uniformly distributed phases.
    pub fn random<R: Rng + ?Sized>(scenario: &ScenarioConfig, rng: &mut R) -> PhaseShifts {
        PhaseShifts {
            vectors: scenario
                .sites
                .iter()
                .map(|s| {
                    CVector::from_iterator(
                        s.n_elements,
                        (0..s.n_elements).map(|_| Complex64::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU))),
                    )
                })
                .collect(),
        }
    }

    pub fn is_unit_modulus(&self, tol: f64) -> bool {
        self.vectors.iter().flat_map(|v| v.iter()).all(|z| (z.norm() - 1.0).abs() <= tol)
    }

    /// Largest entry magnitude over all sites.
    pub fn max_modulus(&self) -> f64 {
        self.vectors.iter().flat_map(|v| v.iter()).map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Keeps the phase of every entry and restores unit magnitude.
    pub fn project_unit_modulus(&self) -> PhaseShifts {
        PhaseShifts { vectors: self.vectors.iter().map(unit_phases).collect() }
    }
}
