//! Choice of which candidate IRS sites to deploy.
//!
//! Every subset of the candidate set that contains the semi-passive site is
//! given the whole element budget (split equally), its phases and powers are
//! optimized under the CRB requirement, and the subset with the highest rate
//! wins.

use rayon::prelude::*;

use crate::comm::transmit_covariance;
use crate::error::{IsacError, Result};
use crate::phases::PhaseShifts;
use crate::power::{gamma_from_epsilon, solve_colocated, AllocationProblem, PowerAllocation, Regime};
use crate::sca::{optimize_with_restarts, ScaOptions};
use crate::scenario::ScenarioConfig;
use crate::sensing::{crb_aligned, crb_general};

/// Relative gap below which two rates count as tied.
const RATE_TIE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode {
    /// CU and target co-located: aligned phases and the closed-form powers.
    CoLocated,
    /// Arbitrary target direction: alternating SCA.
    General,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions {
    /// Evaluate one subset per size when every candidate has the same path
    /// losses.
    pub symmetry_shortcut: bool,
    pub sca: ScaOptions,
    /// Restrict the subset sizes; `None` tries all of them.
    pub k_values: Option<Vec<usize>>,
    /// Random SCA restarts per subset (general mode), drawn from `seed`.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { symmetry_shortcut: true, sca: ScaOptions::default(), k_values: None, restarts: 0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub phases: PhaseShifts,
    pub alloc: PowerAllocation,
    pub regime: Regime,
}

/// Result of optimizing one subset of candidate sites.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetOutcome {
    pub sites: Vec<usize>,
    pub feasible: bool,
    /// Rate in bits/s/Hz; NaN when the CRB requirement cannot be met.
    pub rate: f64,
    /// CRB of the returned design, or the smallest CRB the subset can reach
    /// when it is infeasible.
    pub crb: f64,
    pub design: Option<Design>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeploymentResult {
    pub chosen_sites: Vec<usize>,
    pub k_chosen: usize,
    pub rate: f64,
    pub crb_achieved: f64,
    pub feasible: bool,
    /// Best subset of every evaluated size, ordered by size.
    pub per_k_best: Vec<SubsetOutcome>,
    /// Sizes that do not divide the element budget.
    pub skipped_k: Vec<usize>,
    /// Whether only one subset per size was evaluated.
    pub symmetry_shortcut: bool,
    pub subsets_evaluated: usize,
    pub design: Option<Design>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TradeoffPoint {
    pub epsilon: f64,
    pub inv_epsilon: f64,
    pub rate: f64,
    pub k_chosen: usize,
    pub feasible: bool,
}

/// All candidates share the same path losses, so equal-size subsets are
/// equivalent.
pub fn is_symmetric(template: &ScenarioConfig) -> bool {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
    let first = &template.sites[0];
    template
        .sites
        .iter()
        .all(|s| close(s.rho_bi, first.rho_bi) && close(s.rho_iu, first.rho_iu) && close(s.rho_it, first.rho_it))
}

/// Size-`k` subsets of `0..n` containing site 0, in lexicographic order.
pub fn anchored_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn extend(start: usize, n: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < left {
                break;
            }
            cur.push(i);
            extend(i + 1, n, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k == 0 || k > n {
        return out;
    }
    let mut cur = vec![0];
    extend(1, n, k - 1, &mut cur, &mut out);
    out
}

fn infeasible(sites: &[usize], scenario: &ScenarioConfig) -> SubsetOutcome {
    SubsetOutcome { sites: sites.to_vec(), feasible: false, rate: f64::NAN, crb: crb_aligned(scenario).crb, design: None }
}

/// Optimizes one subset of the template's candidates for the requirement
/// `CRB <= epsilon`.
pub fn evaluate_subset(
    template: &ScenarioConfig,
    sites: &[usize],
    epsilon: f64,
    mode: SearchMode,
    options: &SearchOptions,
) -> Result<SubsetOutcome> {
    let scenario = template.select(sites)?;
    let gamma = gamma_from_epsilon(&scenario, epsilon)?.gamma_s;
    let (phases, alloc, regime) = match mode {
        SearchMode::CoLocated => {
            if !scenario.is_colocated() {
                return Err(IsacError::InvalidArgument(
                    "co-located search needs the CU and the target at the same angle from every IRS".into(),
                ));
            }
            match solve_colocated(&scenario, gamma) {
                Ok((alloc, cert)) => (PhaseShifts::comm_aligned(&scenario), alloc, cert.regime),
                Err(IsacError::Infeasible { .. }) => return Ok(infeasible(sites, &scenario)),
                Err(e) => return Err(e),
            }
        }
        SearchMode::General => {
            match optimize_with_restarts(&scenario, gamma, &options.sca, options.restarts, options.seed) {
                Ok(state) => (state.phases, state.alloc, state.certificate.regime),
                Err(IsacError::Infeasible { .. }) => return Ok(infeasible(sites, &scenario)),
                Err(e) => return Err(e),
            }
        }
    };
    let rate = AllocationProblem::from_phases(&scenario, &phases, gamma)?.objective(&alloc);
    let r_x = transmit_covariance(&scenario, &phases, &alloc)?;
    let crb = crb_general(&scenario, &phases, &r_x)?.crb;
    Ok(SubsetOutcome {
        sites: sites.to_vec(),
        feasible: crb <= epsilon * (1.0 + 1e-9),
        rate,
        crb,
        design: Some(Design { phases, alloc, regime }),
    })
}

/// `a` beats `b`: feasible first, then higher rate; ties keep `b`, which
/// comes earlier in (size, lexicographic) order.
fn better(a: &SubsetOutcome, b: &SubsetOutcome) -> bool {
    match (a.feasible, b.feasible) {
        (true, false) => true,
        (false, true) => false,
        (true, true) => a.rate > b.rate + RATE_TIE * b.rate.abs(),
        (false, false) => a.crb < b.crb,
    }
}

fn pick_best(outcomes: &[SubsetOutcome]) -> Option<&SubsetOutcome> {
    let mut best: Option<&SubsetOutcome> = None;
    for o in outcomes {
        if best.is_none_or(|b| better(o, b)) {
            best = Some(o);
        }
    }
    best
}

/// Rate-maximizing deployment meeting `CRB <= epsilon`.
pub fn search(
    template: &ScenarioConfig,
    epsilon: f64,
    mode: SearchMode,
    options: &SearchOptions,
) -> Result<DeploymentResult> {
    if template.sites.is_empty() {
        return Err(IsacError::InvalidArgument("candidate set is empty".into()));
    }
    let n = template.sites.len();
    let shortcut = options.symmetry_shortcut && is_symmetric(template);
    let sizes: Vec<usize> = match &options.k_values {
        Some(ks) => ks.iter().copied().filter(|&k| k >= 1 && k <= n).collect(),
        None => (1..=n).collect(),
    };
    let mut skipped_k = Vec::new();
    let mut jobs = Vec::new();
    for &k in &sizes {
        if !template.n_total.is_multiple_of(k) {
            skipped_k.push(k);
            continue;
        }
        let mut subsets = anchored_subsets(n, k);
        if shortcut {
            subsets.truncate(1);
        }
        jobs.extend(subsets);
    }
    let outcomes: Vec<SubsetOutcome> = jobs
        .par_iter()
        .map(|sites| evaluate_subset(template, sites, epsilon, mode, options))
        .collect::<Result<_>>()?;

    let mut per_k_best = Vec::new();
    for &k in &sizes {
        let group: Vec<SubsetOutcome> = outcomes.iter().filter(|o| o.sites.len() == k).cloned().collect();
        if let Some(b) = pick_best(&group) {
            per_k_best.push(b.clone());
        }
    }
    let best = pick_best(&per_k_best).cloned();
    let result = match best {
        Some(b) if b.feasible => DeploymentResult {
            k_chosen: b.sites.len(),
            chosen_sites: b.sites,
            rate: b.rate,
            crb_achieved: b.crb,
            feasible: true,
            per_k_best,
            skipped_k,
            symmetry_shortcut: shortcut,
            subsets_evaluated: outcomes.len(),
            design: b.design,
        },
        other => DeploymentResult {
            chosen_sites: Vec::new(),
            k_chosen: 0,
            rate: f64::NAN,
            crb_achieved: other.map_or(f64::INFINITY, |b| b.crb),
            feasible: false,
            per_k_best,
            skipped_k,
            symmetry_shortcut: shortcut,
            subsets_evaluated: outcomes.len(),
            design: None,
        },
    };
    Ok(result)
}

/// Best rate for each CRB requirement of a decreasing grid.
pub fn tradeoff_curve(
    template: &ScenarioConfig,
    epsilon_grid: &[f64],
    mode: SearchMode,
    options: &SearchOptions,
) -> Result<Vec<TradeoffPoint>> {
    if epsilon_grid.iter().any(|e| !(*e > 0.0)) {
        return Err(IsacError::InvalidArgument("CRB requirements must be positive".into()));
    }
    if epsilon_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(IsacError::InvalidArgument("CRB requirements must be strictly decreasing".into()));
    }
    epsilon_grid
        .iter()
        .map(|&epsilon| {
            let r = search(template, epsilon, mode, options)?;
            Ok(TradeoffPoint {
                epsilon,
                inv_epsilon: 1.0 / epsilon,
                rate: if r.feasible { r.rate } else { 0.0 },
                k_chosen: r.k_chosen,
                feasible: r.feasible,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm::comm_only_optimum;
    use crate::scenario::{Layout, SystemParams};
    use crate::synthetic::{random_separated, symmetric_colocated};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn default_template() -> ScenarioConfig {
        Layout::default().build(&SystemParams::default()).unwrap()
    }

    #[test]
    fn subsets_contain_site_zero() {
        let all: usize = (1..=8).map(|k| anchored_subsets(8, k).len()).sum();
        assert_eq!(all, 128);
        let twos = anchored_subsets(4, 2);
        assert_eq!(twos, vec![vec![0, 1], vec![0, 2], vec![0, 3]]);
        assert!(anchored_subsets(3, 4).is_empty());
        assert_eq!(anchored_subsets(5, 1), vec![vec![0]]);
    }

    #[test]
    fn loose_requirement_deploys_every_candidate() {
        let t = default_template();
        let r = search(&t, 1.0, SearchMode::CoLocated, &SearchOptions::default()).unwrap();
        assert!(r.feasible);
        assert_eq!(r.k_chosen, 8);
        // 800 elements cannot be split over 3, 6 or 7 sites
        assert_eq!(r.skipped_k, vec![3, 6, 7]);
        assert_eq!(r.subsets_evaluated, 128 - 21 - 21 - 7);
        let divisible = t.with_total_elements(840).unwrap();
        let r840 = search(&divisible, 1.0, SearchMode::CoLocated, &SearchOptions::default()).unwrap();
        assert_eq!(r840.subsets_evaluated, 128);
        assert!(!r.symmetry_shortcut);
        let (_, _, best) = comm_only_optimum(&t).unwrap();
        assert!((r.rate - best).abs() < 1e-9 * best);
        assert!(r.crb_achieved <= 1.0);
    }

    #[test]
    fn tight_requirement_prefers_few_sites() {
        let t = default_template();
        let loose = search(&t, 1.0, SearchMode::CoLocated, &SearchOptions::default()).unwrap();
        let aligned_single = crb_aligned(&t.select(&[0]).unwrap()).crb;
        let r = search(&t, aligned_single * 1.05, SearchMode::CoLocated, &SearchOptions::default()).unwrap();
        assert!(r.feasible);
        assert!(r.k_chosen < loose.k_chosen, "chose {}", r.k_chosen);
        assert!(r.crb_achieved <= aligned_single * 1.05 * (1.0 + 1e-9));
    }

    #[test]
    fn impossible_requirement_is_flagged() {
        let t = default_template();
        let best = crb_aligned(&t.select(&[0]).unwrap()).crb;
        let r = search(&t, best * 0.5, SearchMode::CoLocated, &SearchOptions::default()).unwrap();
        assert!(!r.feasible);
        assert!(r.chosen_sites.is_empty());
        assert!(r.per_k_best.iter().all(|o| !o.feasible));
    }

    #[test]
    fn single_site_matches_inner_solver() {
        let t = default_template();
        let eps = 2.0 * crb_aligned(&t.select(&[0]).unwrap()).crb;
        let opts = SearchOptions { k_values: Some(vec![1]), ..SearchOptions::default() };
        let r = search(&t, eps, SearchMode::CoLocated, &opts).unwrap();
        let single = t.select(&[0]).unwrap();
        let gamma = gamma_from_epsilon(&single, eps).unwrap().gamma_s;
        let (alloc, _) = solve_colocated(&single, gamma).unwrap();
        let rate = AllocationProblem::colocated(&single, gamma).objective(&alloc);
        assert_eq!(r.chosen_sites, vec![0]);
        assert!((r.rate - rate).abs() < 1e-12);
    }

    #[test]
    fn indivisible_sizes_are_skipped() {
        let t = default_template().with_total_elements(600).unwrap();
        let r = search(&t, 1.0, SearchMode::CoLocated, &SearchOptions::default()).unwrap();
        assert_eq!(r.skipped_k, vec![7]);
        assert_eq!(t.n_total, 600);
        assert!(r.per_k_best.iter().all(|o| o.sites.len() != 7));
    }

    #[test]
    fn symmetric_candidates_use_the_shortcut() {
        let sys = SystemParams { n_total: 240, ..SystemParams::default() };
        let t = symmetric_colocated(&sys, 4, 1e-4, 3e-4);
        let full = search(&t, 1e-3, SearchMode::CoLocated, &SearchOptions { symmetry_shortcut: false, ..SearchOptions::default() }).unwrap();
        let fast = search(&t, 1e-3, SearchMode::CoLocated, &SearchOptions::default()).unwrap();
        assert!(fast.symmetry_shortcut && !full.symmetry_shortcut);
        assert_eq!(fast.subsets_evaluated, 4);
        assert_eq!(full.subsets_evaluated, 8);
        assert!((fast.rate - full.rate).abs() < 1e-9 * full.rate);
        assert_eq!(fast.k_chosen, full.k_chosen);
    }

    #[test]
    fn best_rate_dominates_fixed_sizes() {
        let t = default_template();
        let eps = 3.0 * crb_aligned(&t.select(&[0]).unwrap()).crb;
        let r = search(&t, eps, SearchMode::CoLocated, &SearchOptions::default()).unwrap();
        for o in r.per_k_best.iter().filter(|o| o.feasible) {
            assert!(r.rate >= o.rate);
            assert!(o.crb <= eps * (1.0 + 1e-9));
        }
    }

    #[test]
    fn colocated_mode_rejects_separated_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sys = SystemParams { m_t: 8, m_r: 4, n_r: 4, n_total: 24, ..SystemParams::default() };
        let t = random_separated(&mut rng, &sys, 2);
        assert!(search(&t, 1.0, SearchMode::CoLocated, &SearchOptions::default()).is_err());
        let r = search(&t, 1.0, SearchMode::General, &SearchOptions::default()).unwrap();
        assert!(r.feasible);
    }

    #[test]
    fn tradeoff_is_non_increasing() {
        let t = default_template();
        let base = crb_aligned(&t.select(&[0]).unwrap()).crb;
        let grid: Vec<f64> = (0..8).map(|i| base * 1e3 / 4f64.powi(i)).collect();
        let curve = tradeoff_curve(&t, &grid, SearchMode::CoLocated, &SearchOptions::default()).unwrap();
        for w in curve.windows(2) {
            assert!(w[1].rate <= w[0].rate * (1.0 + 1e-12));
        }
        assert!(tradeoff_curve(&t, &[1.0, 2.0], SearchMode::CoLocated, &SearchOptions::default()).is_err());
        assert!(tradeoff_curve(&t, &[-1.0], SearchMode::CoLocated, &SearchOptions::default()).is_err());
    }
}
