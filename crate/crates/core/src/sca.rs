//! Alternating optimization of IRS phases and powers when the CU and the
//! target are seen from the IRSs at different angles.
//!
//! Each round maximizes a concave minorant of the sum rate over relaxed
//! phases (entries in the closed unit disc), with the echo-power constraint
//! replaced by its tangent lower bound, and then re-solves the power
//! allocation exactly for the new phases. The relaxed phases are finally
//! projected back to unit modulus.

use log::{debug, warn};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{IsacError, Result};
use crate::geometry::{cascade_vector, CMatrix, CVector};
use crate::phases::{unit_phases, PhaseShifts};
use crate::comm::waterfill;
use crate::power::{AllocationProblem, KktCertificate, PowerAllocation, ECHO_RTOL};
use crate::scenario::ScenarioConfig;
use crate::sensing::sensing_gains;

const INNER_MAX_ITER: usize = 500;
const INNER_TOL: f64 = 1e-8;
const ASCENT_SLACK: f64 = 1e-9;
const MODULUS_SLACK: f64 = 1e-12;

/// Rank-one forms `Q = q q^H` of every site, stored through their vectors:
/// `v^H Q v = |q^H v|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForms {
    /// BS-IRS-CU cascades.
    pub q_c: Vec<CVector>,
    /// BS-IRS-target cascades.
    pub q_s: Vec<CVector>,
}

impl QuadraticForms {
    pub fn comm_matrix(&self, k: usize) -> CMatrix {
        &self.q_c[k] * self.q_c[k].adjoint()
    }

    pub fn sensing_matrix(&self, k: usize) -> CMatrix {
        &self.q_s[k] * self.q_s[k].adjoint()
    }
}

pub fn build_quadratic_forms(scenario: &ScenarioConfig) -> QuadraticForms {
    let q_c = scenario
        .sites
        .iter()
        .map(|s| cascade_vector(s.n_elements, s.mu_bi_a, s.mu_iu_d))
        .collect();
    let q_s = scenario
        .sites
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let out = if k == 0 { scenario.mu_target } else { s.mu_it_d };
            cascade_vector(s.n_elements, s.mu_bi_a, out)
        })
        .collect();
    QuadraticForms { q_c, q_s }
}

/// Tangent lower bound `g(v) = offset + 2 Re(slope^H v)` of `v^H Q v`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMinorant {
    pub offset: f64,
    pub slope: CVector,
}

impl AffineMinorant {
    pub fn eval(&self, v: &CVector) -> f64 {
        self.offset + 2.0 * self.slope.dotc(v).re
    }

    /// Gradient with respect to the real and imaginary parts of `v`, packed
    /// as a complex vector.
    pub fn gradient(&self) -> CVector {
        self.slope.scale(2.0)
    }
}

/// Tangent of the convex quadratic `v^H Q v` at `anchor`.
pub fn sca_linearize(q: &CMatrix, anchor: &CVector) -> Result<AffineMinorant> {
    if q.nrows() != anchor.len() || q.ncols() != anchor.len() {
        return Err(IsacError::DimensionMismatch(format!(
            "form is {}x{}, anchor has {} entries",
            q.nrows(),
            q.ncols(),
            anchor.len()
        )));
    }
    let slope = q * anchor;
    let offset = -anchor.dotc(&slope).re;
    Ok(AffineMinorant { offset, slope })
}

/// [`sca_linearize`] for `Q = q q^H` without forming the matrix.
pub fn rank_one_minorant(q: &CVector, anchor: &CVector) -> AffineMinorant {
    let z = q.dotc(anchor);
    AffineMinorant { offset: -z.norm_sqr(), slope: q * z }
}

fn disc(z: Complex64) -> Complex64 {
    let r = z.norm();
    if r > 1.0 {
        z / r
    } else {
        z
    }
}

fn inner(a: &[CVector], b: &[CVector]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dotc(y).re).sum()
}

fn norm_sq(a: &[CVector]) -> f64 {
    a.iter().map(|x| x.norm_squared()).sum()
}

/// Phase subproblem at a fixed anchor and fixed powers: maximize
/// `sum_k log2(1 + alpha_k g_k(v_k))` over discs, subject to
/// `sum_k Re(a_k^H v_k) >= rhs`.
struct LinearizedProblem {
    weights: Vec<f64>,
    comm: Vec<AffineMinorant>,
    sense_dir: Vec<CVector>,
    sense_rhs: f64,
    constrained: bool,
}

impl LinearizedProblem {
    fn new(
        scenario: &ScenarioConfig,
        forms: &QuadraticForms,
        alloc: &PowerAllocation,
        anchor: &[CVector],
        gamma_s: f64,
    ) -> LinearizedProblem {
        let mt = scenario.m_t as f64;
        let mr = scenario.m_r as f64;
        let mut weights = Vec::with_capacity(anchor.len());
        let mut comm = Vec::with_capacity(anchor.len());
        let mut sense_dir = Vec::with_capacity(anchor.len());
        let mut sense_rhs = gamma_s;
        for (k, site) in scenario.sites.iter().enumerate() {
            weights.push(alloc.p_c[k] * mt * mr * site.rho_c().powi(2) / scenario.sigma2_c);
            comm.push(rank_one_minorant(&forms.q_c[k], &anchor[k]));
            let w = mt * site.rho_bi.powi(2) * (alloc.p_c[k] + alloc.p_s);
            let z = forms.q_s[k].dotc(&anchor[k]);
            sense_rhs += w * z.norm_sqr();
            sense_dir.push(&forms.q_s[k] * (z * (2.0 * w)));
        }
        LinearizedProblem { weights, comm, sense_dir, sense_rhs, constrained: gamma_s > 0.0 }
    }

    /// Linearized rate in bits; `-inf` outside the logarithm's domain.
    fn objective(&self, v: &[CVector]) -> f64 {
        let mut total = 0.0;
        for ((w, g), vk) in self.weights.iter().zip(&self.comm).zip(v) {
            if *w == 0.0 {
                continue;
            }
            let arg = w * g.eval(vk);
            if !(arg > -1.0) {
                return f64::NEG_INFINITY;
            }
            total += arg.ln_1p();
        }
        total / std::f64::consts::LN_2
    }

    fn gradient(&self, v: &[CVector]) -> Vec<CVector> {
        self.weights
            .iter()
            .zip(&self.comm)
            .zip(v)
            .map(|((w, g), vk)| {
                let scale = w / (1.0 + w * g.eval(vk)) / std::f64::consts::LN_2;
                g.gradient().scale(scale)
            })
            .collect()
    }

    fn sensing_lhs(&self, v: &[CVector]) -> f64 {
        inner(&self.sense_dir, v)
    }

    fn shifted(&self, y: &[CVector], tau: f64) -> Vec<CVector> {
        y.iter()
            .zip(&self.sense_dir)
            .map(|(yk, ak)| yk.zip_map(ak, |yn, an| disc(yn + an * tau)))
            .collect()
    }

    /// Largest value of the linearized echo over the discs, attained by
    /// [`Self::restoration`].
    fn sensing_reach(&self) -> f64 {
        self.sense_dir.iter().map(crate::linalg::l1_norm).sum()
    }

    /// Maximizer of the linearized echo over the discs; entries that do not
    /// affect it are taken from `fallback`.
    fn restoration(&self, fallback: &[CVector]) -> Vec<CVector> {
        self.sense_dir
            .iter()
            .zip(fallback)
            .map(|(ak, fk)| ak.zip_map(fk, |an, fn_| if an.norm() > 0.0 { an / an.norm() } else { disc(fn_) }))
            .collect()
    }

    /// Euclidean projection onto discs intersected with the echo halfspace;
    /// `None` when the intersection is empty. The halfspace multiplier is
    /// bracketed and bisected, keeping the feasible end.
    fn project(&self, y: &[CVector]) -> Option<Vec<CVector>> {
        let base = self.shifted(y, 0.0);
        if !self.constrained || self.sensing_lhs(&base) >= self.sense_rhs {
            return Some(base);
        }
        if self.sensing_reach() < self.sense_rhs {
            return None;
        }
        let a_max = self
            .sense_dir
            .iter()
            .flat_map(|a| a.iter())
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        let mut hi = 1.0 / a_max;
        let mut bracketed = false;
        for _ in 0..200 {
            if self.sensing_lhs(&self.shifted(y, hi)) >= self.sense_rhs {
                bracketed = true;
                break;
            }
            hi *= 2.0;
        }
        if !bracketed {
            return Some(self.restoration(y));
        }
        let mut lo = 0.0;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if !(mid > lo && mid < hi) {
                break;
            }
            if self.sensing_lhs(&self.shifted(y, mid)) >= self.sense_rhs {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(self.shifted(y, hi))
    }

    /// Projected gradient ascent with backtracking from a feasible start.
    fn ascend(&self, start: Vec<CVector>) -> Vec<CVector> {
        let mut v = start;
        let mut f = self.objective(&v);
        let mut eta = {
            let g = norm_sq(&self.gradient(&v)).sqrt();
            if g > 0.0 {
                1.0 / g
            } else {
                return v;
            }
        };
        let mut scale = None;
        for _ in 0..INNER_MAX_ITER {
            let grad = self.gradient(&v);
            let g_norm = norm_sq(&grad).sqrt();
            let scale = *scale.get_or_insert(g_norm.max(1e-300));
            let mut accepted = None;
            while eta > 1e-300 {
                let trial: Vec<CVector> = v.iter().zip(&grad).map(|(vk, gk)| vk + gk.scale(eta)).collect();
                let Some(cand) = self.project(&trial) else { break };
                let step: Vec<CVector> = cand.iter().zip(&v).map(|(c, x)| c - x).collect();
                let fc = self.objective(&cand);
                let model = f + inner(&grad, &step) - norm_sq(&step) / (2.0 * eta);
                if fc.is_finite() && fc >= model && fc >= f {
                    accepted = Some((cand, fc, norm_sq(&step).sqrt() / eta));
                    break;
                }
                eta *= 0.5;
            }
            let Some((cand, fc, pg)) = accepted else { break };
            v = cand;
            f = fc;
            if pg <= INNER_TOL * scale {
                break;
            }
            eta *= 2.0;
        }
        v
    }
}

/// One SCA phase update at fixed powers. Returns relaxed phases whose rate
/// (with the exact quadratics) is at least the anchor's.
pub fn phase_subproblem(
    scenario: &ScenarioConfig,
    forms: &QuadraticForms,
    alloc: &PowerAllocation,
    anchor: &PhaseShifts,
    gamma_s: f64,
) -> Result<PhaseShifts> {
    anchor.check_shape(scenario)?;
    if anchor.max_modulus() > 1.0 + MODULUS_SLACK {
        return Err(IsacError::InvalidArgument(format!(
            "anchor entry of modulus {:.6} lies outside the unit disc",
            anchor.max_modulus()
        )));
    }
    if alloc.p_c.len() != scenario.k() {
        return Err(IsacError::DimensionMismatch(format!(
            "{} stream powers for {} sites",
            alloc.p_c.len(),
            scenario.k()
        )));
    }
    let mut problem = LinearizedProblem::new(scenario, forms, alloc, &anchor.vectors, gamma_s);
    // With the requirement at the largest reachable echo, rounding alone can
    // put the anchor just outside the halfspace; keep it as the start.
    let at_anchor = problem.sensing_lhs(&anchor.vectors);
    if at_anchor < problem.sense_rhs && at_anchor >= problem.sense_rhs - ECHO_RTOL * gamma_s {
        problem.sense_rhs = at_anchor;
    }
    let start = if !problem.constrained || problem.sensing_lhs(&anchor.vectors) >= problem.sense_rhs {
        anchor.vectors.clone()
    } else {
        match problem.project(&anchor.vectors) {
            Some(v) => v,
            None => {
                warn!("linearized echo constraint infeasible at the anchor, restoring feasibility");
                return Ok(PhaseShifts { vectors: problem.restoration(&anchor.vectors) });
            }
        }
    };
    Ok(PhaseShifts { vectors: problem.ascend(start) })
}

/// Exact power allocation for fixed phases.
pub fn power_subproblem(
    scenario: &ScenarioConfig,
    phases: &PhaseShifts,
    gamma_s: f64,
) -> Result<(PowerAllocation, KktCertificate)> {
    AllocationProblem::from_phases(scenario, phases, gamma_s)?.solve()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaOptions {
    pub max_iter: usize,
    /// Stop once a round improves the rate by less than this (bits/s/Hz).
    pub tol: f64,
}

impl Default for ScaOptions {
    fn default() -> Self {
        ScaOptions { max_iter: 200, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaState {
    /// Unit-modulus phases after the final projection.
    pub phases: PhaseShifts,
    pub alloc: PowerAllocation,
    pub certificate: KktCertificate,
    /// Rate at the returned point (bits/s/Hz).
    pub objective: f64,
    /// Rate of the last relaxed iterate, before projection.
    pub pre_projection_objective: f64,
    pub iteration: usize,
    pub converged: bool,
    /// Rate after initialization and after every round.
    pub history: Vec<f64>,
}

fn reachable(scenario: &ScenarioConfig, phases: &PhaseShifts, gamma_s: f64) -> Result<bool> {
    Ok(AllocationProblem::from_phases(scenario, phases, gamma_s)?.is_reachable())
}

/// Communication-aligned phases when they can meet the echo requirement at
/// full power, sensing-aligned phases otherwise.
pub fn default_init(scenario: &ScenarioConfig, gamma_s: f64) -> Result<PhaseShifts> {
    let comm = PhaseShifts::comm_aligned(scenario);
    if reachable(scenario, &comm, gamma_s)? {
        Ok(comm)
    } else {
        Ok(PhaseShifts::sensing_aligned(scenario))
    }
}

/// Starting points for [`optimize_with_restarts`]: CU-aligned phases pulled
/// towards the target until plain water-filling meets the echo requirement,
/// splits with the 1, 2, 4, ... strongest echo paths steered at the target
/// and the rest at the CU, and target-aligned phases. Duplicates are dropped, so co-located
/// scenarios get a single start.
pub fn structured_inits(scenario: &ScenarioConfig, gamma_s: f64) -> Result<Vec<PhaseShifts>> {
    let comm = PhaseShifts::comm_aligned(scenario);
    let sensing = PhaseShifts::sensing_aligned(scenario);
    let waterfill_meets = |p: &PhaseShifts| -> Result<bool> {
        let problem = AllocationProblem::from_phases(scenario, p, gamma_s)?;
        let (powers, _) = waterfill(&problem.snr, problem.p_max);
        Ok(problem.echo(&PowerAllocation { p_c: powers, p_s: 0.0 }) >= gamma_s)
    };
    let mut candidates = Vec::with_capacity(3);
    if waterfill_meets(&sensing)? {
        candidates.push(blend_until(&comm, &sensing, waterfill_meets)?);
    } else {
        candidates.push(restore_unit_modulus(scenario, comm.clone(), gamma_s)?);
    }
    // split starts: the m strongest echo paths on the target, the rest on
    // the CU, semi-passive site first
    let gains = sensing_gains(scenario, &sensing)?;
    let mut order: Vec<usize> = (1..scenario.k()).collect();
    order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]));
    order.insert(0, 0);
    let mut m = 1;
    while m < scenario.k() {
        let mut split = comm.clone();
        for &k in &order[..m] {
            split.vectors[k] = sensing.vectors[k].clone();
        }
        candidates.push(restore_unit_modulus(scenario, split, gamma_s)?);
        m *= 2;
    }
    candidates.push(sensing);
    let mut out: Vec<PhaseShifts> = Vec::with_capacity(candidates.len());
    for c in candidates {
        let seen = out.iter().any(|o| {
            o.vectors.iter().zip(&c.vectors).all(|(a, b)| (a - b).camax() <= 1e-12)
        });
        if !seen {
            out.push(c);
        }
    }
    Ok(out)
}

/// Rotates every entry of `from` towards `to` by the fraction `t` of the
/// shorter arc between them.
fn blend_phases(from: &PhaseShifts, to: &PhaseShifts, t: f64) -> PhaseShifts {
    PhaseShifts {
        vectors: from
            .vectors
            .iter()
            .zip(&to.vectors)
            .map(|(a, b)| a.zip_map(b, |x, y| x * Complex64::from_polar(1.0, t * (y / x).arg())))
            .collect(),
    }
}

/// Pulls unit-modulus phases towards the sensing-aligned ones just far
/// enough for the echo requirement to become reachable.
fn restore_unit_modulus(scenario: &ScenarioConfig, phases: PhaseShifts, gamma_s: f64) -> Result<PhaseShifts> {
    let target = PhaseShifts::sensing_aligned(scenario);
    if !reachable(scenario, &target, gamma_s)? {
        let best = AllocationProblem::from_phases(scenario, &target, gamma_s)?.max_echo();
        return Err(IsacError::Infeasible { required: gamma_s, achievable: best });
    }
    blend_until(&phases, &target, |p| reachable(scenario, p, gamma_s))
}

/// Smallest blend of `from` towards `to` passing `accept`, assuming `to`
/// passes and acceptance is monotone along the blend.
fn blend_until(
    from: &PhaseShifts,
    to: &PhaseShifts,
    accept: impl Fn(&PhaseShifts) -> Result<bool>,
) -> Result<PhaseShifts> {
    if accept(from)? {
        return Ok(from.clone());
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if accept(&blend_phases(from, to, mid))? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    debug!("phases moved {hi:.3e} of the way to the target alignment");
    Ok(blend_phases(from, to, hi))
}

/// Alternates phase and power updates from `init` until a round gains less
/// than `options.tol`, then projects to unit modulus.
pub fn optimize(scenario: &ScenarioConfig, gamma_s: f64, init: &PhaseShifts, options: &ScaOptions) -> Result<ScaState> {
    scenario.validate()?;
    init.check_shape(scenario)?;
    let mut phases = if init.max_modulus() <= 1.0 + MODULUS_SLACK && reachable(scenario, init, gamma_s)? {
        init.clone()
    } else {
        debug!("initial phases cannot meet the echo requirement, starting from sensing alignment");
        PhaseShifts::sensing_aligned(scenario)
    };
    let forms = build_quadratic_forms(scenario);
    let problem = AllocationProblem::from_phases(scenario, &phases, gamma_s)?;
    let (mut alloc, _) = problem.solve()?;
    let mut objective = problem.objective(&alloc);
    let mut history = vec![objective];
    let mut converged = false;
    let mut iteration = 0;

    while iteration < options.max_iter {
        iteration += 1;
        let next = phase_subproblem(scenario, &forms, &alloc, &phases, gamma_s)?;
        let problem = AllocationProblem::from_phases(scenario, &next, gamma_s)?;
        let (next_alloc, _) = problem.solve()?;
        let next_objective = problem.objective(&next_alloc);
        if next_objective < objective - ASCENT_SLACK * objective.abs().max(1.0) {
            return Err(IsacError::Consistency(format!(
                "SCA round {iteration} lowered the rate from {objective:.12} to {next_objective:.12}"
            )));
        }
        let gain = next_objective - objective;
        phases = next;
        alloc = next_alloc;
        objective = next_objective;
        history.push(objective);
        if gain < options.tol {
            converged = true;
            break;
        }
    }

    let pre_projection_objective = objective;
    let projected = restore_unit_modulus(scenario, phases.project_unit_modulus(), gamma_s)?;
    let problem = AllocationProblem::from_phases(scenario, &projected, gamma_s)?;
    let (alloc, certificate) = problem.solve()?;
    let objective = problem.objective(&alloc);
    debug!(
        "SCA finished after {iteration} rounds; projection changed the rate by {:.3e}",
        objective - pre_projection_objective
    );
    Ok(ScaState {
        phases: projected,
        alloc,
        certificate,
        objective,
        pre_projection_objective,
        iteration,
        converged,
        history,
    })
}

/// Runs [`optimize`] from every structured start and from `restarts`
/// random phase draws, keeping the best final rate.
pub fn optimize_with_restarts(
    scenario: &ScenarioConfig,
    gamma_s: f64,
    options: &ScaOptions,
    restarts: usize,
    seed: u64,
) -> Result<ScaState> {
    let mut inits = structured_inits(scenario, gamma_s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    inits.extend((0..restarts).map(|_| PhaseShifts::random(scenario, &mut rng)));
    let mut best: Option<ScaState> = None;
    let mut failure = None;
    for init in &inits {
        match optimize(scenario, gamma_s, init, options) {
            Ok(state) => {
                if best.as_ref().is_none_or(|b| state.objective > b.objective) {
                    best = Some(state);
                }
            }
            // a start can end on the feasibility boundary, or trip a
            // consistency check, where the others succeed
            Err(e) => {
                match e {
                    IsacError::Infeasible { .. } => debug!("SCA start dropped: {e}"),
                    _ => warn!("SCA start dropped: {e}"),
                }
                failure = Some(e);
            }
        }
    }
    match (best, failure) {
        (Some(state), _) => Ok(state),
        (None, Some(e)) => Err(e),
        (None, None) => Err(IsacError::Solver("no SCA starting point".into())),
    }
}

/// Unit-modulus alignment `q / |q|` of a cascade, the maximizer of
/// `|q^H v|` over unit-modulus `v`.
pub fn aligned_with(q: &CVector) -> CVector {
    unit_phases(q)
}
