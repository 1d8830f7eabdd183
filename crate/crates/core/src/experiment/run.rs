//! Sweep orchestration: one row per scheme and sweep point.

use log::warn;
use rayon::prelude::*;

use crate::comm::{comm_only_optimum, multiplexing_dof};
use crate::deployment::{anchored_subsets, evaluate_subset, search, SearchMode, SearchOptions};
use crate::error::{IsacError, Result};
use crate::phases::PhaseShifts;
use crate::sca::ScaOptions;
use crate::scenario::ScenarioConfig;
use crate::sensing::crb_aligned;
use crate::{dbm_to_watts, to_db};

use super::config::{ExperimentConfig, ExperimentName, ExperimentSpec, ModeSetting, Scheme, Sweep};
use super::schemes::{comm_oriented, max_eigenmode, sensing_oriented, time_switching, Outcome};

/// One CSV line.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub scheme: String,
    pub sweep_value: f64,
    pub rate_bits: f64,
    pub crb_linear: f64,
    pub crb_db: f64,
    pub regime: String,
    pub k_used: usize,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DofFit {
    pub k: usize,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub dof_fits: Vec<DofFit>,
    pub search_mode: SearchMode,
}

struct Context {
    template: ScenarioConfig,
    mode: SearchMode,
    search: SearchOptions,
}

impl Context {
    /// Candidate template with a different element budget; sites are only
    /// ever used through `select`, which re-splits the budget.
    fn with_elements(&self, n_total: usize) -> ScenarioConfig {
        ScenarioConfig { n_total, ..self.template.clone() }
    }

    /// The first `k` candidates, semi-passive site included.
    fn first_sites(&self, n_total: usize, k: usize) -> Result<ScenarioConfig> {
        self.with_elements(n_total).select(&(0..k).collect::<Vec<_>>())
    }

    fn all_indices(&self) -> Vec<usize> {
        (0..self.template.k()).collect()
    }
}

fn make_row(name: ExperimentName, scheme: Scheme, sweep_value: f64, o: &Outcome) -> ResultRow {
    ResultRow {
        experiment: name.to_string(),
        scheme: scheme.to_string(),
        sweep_value,
        rate_bits: o.rate,
        crb_linear: o.crb,
        crb_db: to_db(o.crb),
        regime: o.regime.map_or("none", |r| r.as_str()).to_string(),
        k_used: o.k_used,
        feasible: o.feasible,
    }
}

/// Errors at a sweep point are reported in the row instead of aborting.
fn settle(name: ExperimentName, scheme: Scheme, sweep_value: f64, k_hint: usize, r: Result<Outcome>) -> ResultRow {
    match r {
        Ok(o) => make_row(name, scheme, sweep_value, &o),
        Err(e) => {
            warn!("{name}/{scheme} at {sweep_value}: {e}");
            make_row(name, scheme, sweep_value, &Outcome::infeasible(f64::NAN, k_hint))
        }
    }
}

/// Full search restricted to the given sizes.
fn searched(ctx: &Context, template: &ScenarioConfig, epsilon: f64, k_values: Option<Vec<usize>>) -> Result<Outcome> {
    let options = SearchOptions { k_values, ..ctx.search.clone() };
    let r = search(template, epsilon, ctx.mode, &options)?;
    if r.feasible {
        let regime = r.design.as_ref().map(|d| d.regime);
        Ok(Outcome { rate: r.rate, crb: r.crb_achieved, regime, k_used: r.k_chosen, feasible: true })
    } else {
        Ok(Outcome::infeasible(r.crb_achieved, 0))
    }
}

/// Time switching on the best deployment among the given sizes.
fn time_switching_best(template: &ScenarioConfig, epsilon: f64, sizes: &[usize]) -> Result<Outcome> {
    let mut best: Option<Outcome> = None;
    let mut best_crb = f64::INFINITY;
    for &k in sizes {
        if !template.n_total.is_multiple_of(k) {
            continue;
        }
        for sites in anchored_subsets(template.k(), k) {
            let s = template.select(&sites)?;
            let ts = time_switching(&s, epsilon)?;
            best_crb = best_crb.min(ts.crb);
            if ts.feasible && best.is_none_or(|b| ts.rate > b.rate) {
                best = Some(Outcome { rate: ts.rate, crb: ts.crb, regime: None, k_used: k, feasible: true });
            }
        }
    }
    Ok(best.unwrap_or_else(|| Outcome::infeasible(best_crb, 0)))
}

fn baseline(scheme: Scheme, s: &ScenarioConfig, epsilon: Option<f64>) -> Result<Outcome> {
    match scheme {
        Scheme::SensingOriented => sensing_oriented(s, epsilon),
        Scheme::CommOriented => comm_oriented(s, epsilon),
        Scheme::MaxEigenmode => max_eigenmode(s, epsilon),
        _ => Err(IsacError::InvalidArgument(format!("{scheme} is not a fixed-design baseline"))),
    }
}

fn crb_rows(ctx: &Context, spec: &ExperimentSpec, points: &[(usize, usize, f64)]) -> Vec<ResultRow> {
    points
        .par_iter()
        .map(|&(n, k, sweep_value)| {
            let scenario = ctx.first_sites(n, k);
            spec.schemes
                .iter()
                .map(|&scheme| {
                    let r = match &scenario {
                        Ok(s) => baseline(scheme, s, None),
                        Err(e) => Err(IsacError::InvalidArgument(e.to_string())),
                    };
                    settle(spec.name, scheme, sweep_value, k, r)
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .concat()
}

/// Rate-oriented sweep point: `n` elements, requirement `epsilon`, and the
/// subset sizes the proposed design may use.
fn rate_point(
    ctx: &Context,
    spec: &ExperimentSpec,
    n: usize,
    epsilon: f64,
    sizes: &[usize],
    sweep_value: f64,
) -> Vec<ResultRow> {
    let template = ctx.with_elements(n);
    let largest = *sizes.iter().max().unwrap_or(&1);
    spec.schemes
        .iter()
        .map(|&scheme| {
            let r = match scheme {
                Scheme::Proposed if sizes.len() == 1 && sizes[0] == template.k() => {
                    let all = ctx.all_indices();
                    evaluate_subset(&template, &all, epsilon, ctx.mode, &ctx.search).map(|o| {
                        if o.feasible {
                            Outcome {
                                rate: o.rate,
                                crb: o.crb,
                                regime: o.design.map(|d| d.regime),
                                k_used: all.len(),
                                feasible: true,
                            }
                        } else {
                            Outcome::infeasible(o.crb, 0)
                        }
                    })
                }
                Scheme::Proposed => searched(ctx, &template, epsilon, Some(sizes.to_vec())),
                Scheme::FixedK(k) => searched(ctx, &template, epsilon, Some(vec![k])),
                Scheme::TimeSwitching => time_switching_best(&template, epsilon, sizes),
                other => ctx.first_sites(n, largest).and_then(|s| baseline(other, &s, Some(epsilon))),
            };
            settle(spec.name, scheme, sweep_value, largest, r)
        })
        .collect()
}

fn run_experiment(ctx: &Context, spec: &ExperimentSpec, n_total: usize, fits: &mut Vec<DofFit>) -> Result<Vec<ResultRow>> {
    let rows = match &spec.sweep {
        Sweep::SiteCount { k_grid } => {
            let points: Vec<_> = k_grid.iter().map(|&k| (n_total, k, k as f64)).collect();
            crb_rows(ctx, spec, &points)
        }
        Sweep::ElementCount { n_grid, k_values } => {
            let points: Vec<_> = k_values
                .iter()
                .flat_map(|&k| n_grid.iter().map(move |&n| (n, k, n as f64)))
                .collect();
            crb_rows(ctx, spec, &points)
        }
        Sweep::InverseCrb { inv_crb_db } => {
            let all = ctx.template.k();
            inv_crb_db
                .par_iter()
                .map(|&x| rate_point(ctx, spec, n_total, 10f64.powf(-x / 10.0), &[all], x))
                .collect::<Vec<_>>()
                .concat()
        }
        Sweep::SiteCountAtCrb { k_grid, epsilon } => k_grid
            .par_iter()
            .map(|&k| rate_point(ctx, spec, n_total, *epsilon, &[k], k as f64))
            .collect::<Vec<_>>()
            .concat(),
        Sweep::ElementCountAtCrb { n_grid, epsilon } => {
            let sizes: Vec<usize> = (1..=ctx.template.k()).collect();
            n_grid
                .par_iter()
                .map(|&n| rate_point(ctx, spec, n, *epsilon, &sizes, n as f64))
                .collect::<Vec<_>>()
                .concat()
        }
        Sweep::Power { k_values, p_grid_dbm } => {
            let mut rows = Vec::new();
            for &k in k_values {
                let base = ctx.first_sites(n_total, k)?;
                let powers: Vec<f64> = p_grid_dbm.iter().map(|&p| dbm_to_watts(p)).collect();
                let phases = PhaseShifts::comm_aligned(&base);
                fits.push(DofFit { k, slope: multiplexing_dof(&base, &phases, &powers)? });
                for (&dbm, &w) in p_grid_dbm.iter().zip(&powers) {
                    for &scheme in &spec.schemes {
                        let s = ScenarioConfig { p_max: w, ..base.clone() };
                        let r = comm_only_optimum(&s).map(|(_, _, rate)| Outcome {
                            rate,
                            crb: crb_aligned(&s).crb,
                            regime: None,
                            k_used: k,
                            feasible: true,
                        });
                        let r = r.and_then(|o| comm_oriented(&s, None).map(|c| Outcome { crb: c.crb, regime: c.regime, ..o }));
                        rows.push(settle(spec.name, scheme, dbm, k, r));
                    }
                }
            }
            rows
        }
    };
    Ok(rows)
}

/// Runs every configured experiment in order. Rows are ordered by
/// experiment, sweep point and scheme regardless of how the sweep points
/// were scheduled.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput> {
    let template = config.layout.build(&config.system)?;
    let mode = match config.mode {
        ModeSetting::CoLocated => SearchMode::CoLocated,
        ModeSetting::General => SearchMode::General,
        ModeSetting::Auto if template.is_colocated() => SearchMode::CoLocated,
        ModeSetting::Auto => SearchMode::General,
    };
    let search = SearchOptions {
        symmetry_shortcut: config.symmetry_shortcut,
        sca: ScaOptions { max_iter: config.sca_max_iter, tol: config.sca_tol },
        k_values: None,
        restarts: config.sca_restarts,
        seed: config.seed,
    };
    let ctx = Context { template, mode, search };
    let mut rows = Vec::new();
    let mut dof_fits = Vec::new();
    for spec in &config.experiments {
        rows.extend(run_experiment(&ctx, spec, config.system.n_total, &mut dof_fits)?);
    }
    Ok(RunOutput { rows, dof_fits, search_mode: mode })
}
