use std::io::Write;
use std::time::Instant;

use isac_core::comm::{comm_only_optimum, multiplexing_dof, sum_rate};
use isac_core::experiment::{parse_config, run, write_csv};
use isac_core::geometry::verify_orthogonality;
use isac_core::power::{large_array_powers, large_array_threshold, solve_colocated, AllocationProblem};
use isac_core::sca::{default_init, optimize, ScaOptions};
use isac_core::sensing::{crb_aligned, crb_general, crb_numeric_oracle};
use isac_core::synthetic::{random_colocated, random_scenario, random_separated, symmetric_colocated, RandomShape};
use isac_core::{dbm_to_watts, to_db, CMatrix, Layout, PhaseShifts, Regime, ScenarioConfig, SystemParams};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: u32, title: &str, ok: bool, detail: &str) {
    let line = format!("{} criterion {id:02} {title}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    std::io::stdout().write_all(line.as_bytes()).unwrap();
    assert!(ok, "criterion {id} failed: {detail}");
}

fn default_template() -> ScenarioConfig {
    Layout::default().build(&SystemParams::default()).unwrap()
}

fn first_sites(template: &ScenarioConfig, n_total: usize, k: usize) -> ScenarioConfig {
    ScenarioConfig { n_total, ..template.clone() }.select(&(0..k).collect::<Vec<_>>()).unwrap()
}

#[test]
fn criterion_01_crb_matches_numeric_oracle() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut count = 0;
    for seed in 0..60u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = [1, 2, 4][seed as usize % 3];
        let shape = RandomShape {
            k,
            per_site: rng.gen_range(1..=64 / k),
            m_t: rng.gen_range(2..=8),
            m_r: 4,
            n_r: rng.gen_range(2..=8),
        };
        let s = random_scenario(&mut rng, shape);
        let phases = PhaseShifts::random(&s, &mut rng);
        let a = CMatrix::from_fn(s.m_t, s.m_t, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let r = &a * a.adjoint();
        let r = &r * Complex64::from(s.p_max / r.trace().re);
        let exact = crb_general(&s, &phases, &r).unwrap().crb;
        let oracle = crb_numeric_oracle(&s, &phases, &r).unwrap().crb;
        worst = worst.max((exact - oracle).abs() / oracle.abs());
        count += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        "closed-form CRB vs finite-difference oracle",
        worst < 1e-6 && secs < 10.0,
        &format!("{count} scenarios, worst relative gap {worst:.2e}, {secs:.2}s"),
    );
}

#[test]
fn criterion_02_crb_drops_20_db_over_a_decade_of_elements() {
    let t = default_template();
    let small = crb_aligned(&first_sites(&t, 100, 1)).crb;
    let large = crb_aligned(&first_sites(&t, 1000, 1)).crb;
    let drop = to_db(small) - to_db(large);
    report(
        2,
        "CRB reduction from N = 100 to N = 1000",
        (drop - 20.0).abs() <= 0.1,
        &format!("{:.3} dB -> {:.3} dB, drop {drop:.4} dB", to_db(small), to_db(large)),
    );
}

#[test]
fn criterion_03_more_sites_worsen_the_crb() {
    let t = default_template();
    let crbs: Vec<f64> = [1, 2, 4, 8].iter().map(|&k| crb_aligned(&first_sites(&t, 800, k)).crb).collect();
    let increasing = crbs.windows(2).all(|w| w[1] > w[0]);

    // Echo gain f = sum rho_k^2 N_k^2: merging any two sites into the
    // stronger one raises f, and the best equal split over K sites falls
    // with K.
    let mut merge_ok = true;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rho: Vec<f64> = (0..8).map(|_| 10f64.powf(rng.gen_range(-4.0..-2.0))).collect();
        let n = 840.0;
        let f = |sites: &[usize], k: usize| sites.iter().take(k).map(|&i| rho[i].powi(2)).sum::<f64>() * (n / k as f64).powi(2);
        let mut order: Vec<usize> = (0..8).collect();
        order.sort_by(|&a, &b| rho[b].total_cmp(&rho[a]));
        let best: Vec<f64> = [1, 2, 4, 8].iter().map(|&k| f(&order, k)).collect();
        merge_ok &= best.windows(2).all(|w| w[1] < w[0]);
        for _ in 0..20 {
            let i = rng.gen_range(0..8);
            let j = (i + rng.gen_range(1..8)) % 8;
            let (ni, nj) = (rng.gen_range(1.0..400.0), rng.gen_range(1.0..400.0));
            let split = rho[i].powi(2) * ni * ni + rho[j].powi(2) * nj * nj;
            let merged = rho[i].max(rho[j]).powi(2) * (ni + nj).powi(2);
            merge_ok &= merged > split;
        }
    }
    let db: Vec<String> = crbs.iter().map(|c| format!("{:.2}", to_db(*c))).collect();
    report(
        3,
        "CRB increasing in K at N = 800, merge argument on 20 seeds",
        increasing && merge_ok,
        &format!("CRB(dB) for K = 1,2,4,8: [{}], merge checks {}", db.join(", "), if merge_ok { "hold" } else { "violated" }),
    );
}

/// Best rate over a grid of the first K - 1 stream powers (step `step`);
/// the last stream takes the largest power the echo requirement allows out
/// of what is left, and the dedicated beam gets the remainder.
fn grid_oracle(problem: &AllocationProblem, step: f64) -> f64 {
    let k = problem.snr.len();
    let p = problem.p_max;
    let s_beam = problem.beam_gain;
    let last = k - 1;
    let mut best = f64::NEG_INFINITY;
    let mut powers = vec![0.0; k];
    let levels = (p / step).round() as usize;
    let mut idx = vec![0usize; last];
    loop {
        let used: f64 = idx.iter().map(|&i| i as f64 * step).sum();
        if used <= p * (1.0 + 1e-12) {
            for (slot, &i) in powers.iter_mut().zip(&idx) {
                *slot = i as f64 * step;
            }
            let rest = (p - used).max(0.0);
            let echo_fixed: f64 = (0..last).map(|m| problem.sensing[m] * powers[m]).sum();
            // echo = fixed + s_last x + S (rest - x) must reach gamma
            let slack = echo_fixed + s_beam * rest - problem.gamma_s;
            if slack >= 0.0 {
                let drop = s_beam - problem.sensing[last];
                let x = if drop > 0.0 { (slack / drop).min(rest) } else { rest };
                powers[last] = x;
                best = best.max(sum_rate(&problem.snr, &powers));
            }
        }
        // odometer over the grid
        let mut d = 0;
        loop {
            if d == last {
                return best;
            }
            idx[d] += 1;
            if idx[d] <= levels {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

#[test]
fn criterion_04_power_allocation_beats_grid_search() {
    let start = Instant::now();
    let system = SystemParams { n_total: 120, ..SystemParams::default() };
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_kkt = 0.0f64;
    let mut regimes = std::collections::BTreeSet::new();
    for k in [2usize, 3] {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 * k as u64 + seed);
            let s = random_colocated(&mut rng, &system, k);
            let max = AllocationProblem::colocated(&s, 0.0).max_echo();
            let gamma = max * rng.gen_range(0.0..0.95);
            let problem = AllocationProblem::colocated(&s, gamma);
            let (alloc, cert) = solve_colocated(&s, gamma).unwrap();
            regimes.insert(cert.regime.as_str());
            worst_kkt = worst_kkt.max(problem.kkt_residual(&alloc, &cert));
            let oracle = grid_oracle(&problem, 5e-4 * s.p_max);
            worst_gap = worst_gap.max(oracle - problem.objective(&alloc));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        4,
        "closed-form allocation vs grid oracle, K = 2 and 3",
        worst_gap <= 1e-6 && worst_kkt < 1e-8 && secs < 60.0,
        &format!(
            "20 instances, max(oracle - solver) {worst_gap:.2e} bits, max KKT residual {worst_kkt:.2e}, regimes {regimes:?}, {secs:.1}s"
        ),
    );
}

fn roman(r: Regime) -> &'static str {
    match r {
        Regime::SensingActive => "I",
        Regime::CommWaterfill => "II",
        Regime::DualConstrained => "III",
    }
}

#[test]
fn criterion_05_regimes_follow_the_requirement() {
    let t = default_template();
    let s = first_sites(&t, 800, 4);
    let max = AllocationProblem::colocated(&s, 0.0).max_echo();
    let solve = |g: f64| {
        let problem = AllocationProblem::colocated(&s, g);
        let (alloc, cert) = problem.solve().unwrap();
        (cert.regime, problem.objective(&alloc), problem.activation_margin())
    };
    let grid: Vec<f64> = (0..=2000).map(|i| max * i as f64 / 2000.0).collect();
    let mut margin_ok = true;
    for &g in &grid {
        let (regime, _, margin) = solve(g);
        margin_ok &= (margin > 0.0) == (regime == Regime::SensingActive);
    }

    // Walk every boundary, including regimes narrower than a grid cell, and
    // compare the objective on both sides of each.
    let mut sequence = vec![solve(grid[0]).0];
    let mut max_jump = 0.0f64;
    let mut margin_at_switch = f64::NAN;
    for w in grid.windows(2) {
        let mut left = w[0];
        let end = solve(w[1]).0;
        loop {
            let ra = solve(left).0;
            if ra == end {
                break;
            }
            let (mut lo, mut hi) = (left, w[1]);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if !(mid > lo && mid < hi) {
                    break;
                }
                if solve(mid).0 == ra {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let (below, above) = (solve(lo), solve(hi));
            max_jump = max_jump.max((below.1 - above.1).abs());
            if above.0 == Regime::SensingActive {
                // margin must change sign across the same pair of points
                margin_ok &= below.2 <= 0.0 && above.2 > 0.0;
                margin_at_switch = above.2;
            }
            sequence.push(above.0);
            left = hi;
        }
    }
    let names: Vec<&str> = sequence.iter().map(|r| roman(*r)).collect();
    let order_ok = names == ["II", "III", "I"] || names == ["II", "I"];
    report(
        5,
        "regime sequence, continuity and activation margin",
        order_ok && max_jump < 1e-6 && margin_ok,
        &format!(
            "sequence {}, largest jump at a boundary {max_jump:.2e} bits, margin just past the switch {margin_at_switch:.2e} W, sign agreement {margin_ok}",
            names.join(" -> ")
        ),
    );
}

#[test]
fn criterion_06_large_array_threshold() {
    let system = SystemParams::default();
    let k = 4;
    let (rho_bi, rho_iu) = (1e-3, 2e-3);
    let base = symmetric_colocated(&system, k, rho_bi, rho_iu);
    // requirement whose threshold sits near 400 elements in total
    let target_n = 401.3;
    let gamma = target_n * target_n * base.p_max * base.m_t as f64 * k as f64 * rho_bi * rho_bi / (k as f64).powi(3);
    let threshold = large_array_threshold(&base, gamma, k).unwrap().n_threshold;
    let at = |per_site: usize| base.with_total_elements(per_site * k).unwrap();
    let holds = |per_site: usize| {
        let s = at(per_site);
        // too few elements can leave the requirement out of reach entirely
        let Ok((alloc, cert)) = solve_colocated(&s, gamma) else { return false };
        let closed = large_array_powers(&s, k, (per_site * k) as f64).unwrap();
        cert.regime == Regime::CommWaterfill
            && alloc.p_c.iter().all(|p| *p > 0.0)
            && alloc.p_c.iter().zip(&closed).all(|(a, b)| (a - b).abs() <= 1e-9 * s.p_max)
    };
    // bisection on the per-site element count
    let (mut lo, mut hi) = (1usize, 10_000usize);
    let ends_ok = !holds(lo) && holds(hi);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if holds(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let found = (hi * k) as f64;
    let within = (found - threshold).abs() <= k as f64 && found >= threshold;
    report(
        6,
        "all-stream water-filling threshold on a symmetric instance",
        ends_ok && within,
        &format!("analytic N = {threshold:.3}, smallest valid N on the K-multiple grid = {found} (step {k})"),
    );
}

#[test]
fn criterion_07_sca_sanity() {
    let start = Instant::now();
    let system = SystemParams { n_total: 96, ..SystemParams::default() };
    let options = ScaOptions::default();
    let mut worst_colocated = 0.0f64;
    let mut worst_comm = 0.0f64;
    let mut worst_drop = 0.0f64;
    let mut runs = 0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = [2, 3, 4][seed as usize % 3];
        let colocated = random_colocated(&mut rng, &system, k);
        let separated = random_separated(&mut rng, &system, k);

        let max = AllocationProblem::colocated(&colocated, 0.0).max_echo();
        let gamma = max * rng.gen_range(0.05..0.9);
        let state = optimize(&colocated, gamma, &default_init(&colocated, gamma).unwrap(), &options).unwrap();
        let closed = AllocationProblem::colocated(&colocated, gamma);
        let (alloc, _) = solve_colocated(&colocated, gamma).unwrap();
        worst_colocated = worst_colocated.max((state.objective - closed.objective(&alloc)).abs());

        let zero = optimize(&separated, 0.0, &default_init(&separated, 0.0).unwrap(), &options).unwrap();
        worst_comm = worst_comm.max((zero.objective - comm_only_optimum(&separated).unwrap().2).abs());

        let sep_max =
            AllocationProblem::from_phases(&separated, &PhaseShifts::sensing_aligned(&separated), 0.0).unwrap().max_echo();
        let sep_gamma = sep_max * rng.gen_range(0.05..0.5);
        let sep = optimize(&separated, sep_gamma, &default_init(&separated, sep_gamma).unwrap(), &options).unwrap();
        for st in [&state, &zero, &sep] {
            for w in st.history.windows(2) {
                worst_drop = worst_drop.max((w[0] - w[1]) / w[0].abs().max(1.0));
            }
            runs += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        7,
        "alternating optimizer sanity",
        worst_colocated <= 1e-4 && worst_comm <= 1e-4 && worst_drop <= 1e-9 && secs < 60.0,
        &format!(
            "co-located gap {worst_colocated:.2e} bits, zero-requirement gap {worst_comm:.2e} bits, largest history drop {worst_drop:.2e} over {runs} runs, {secs:.1}s"
        ),
    );
}

#[test]
fn criterion_08_multiplexing_slope_equals_site_count() {
    let t = default_template();
    let powers: Vec<f64> = (0..=12).map(|i| dbm_to_watts(40.0 + 5.0 * i as f64)).collect();
    let mut ok = true;
    let mut parts = Vec::new();
    for k in [1usize, 4, 8] {
        let s = first_sites(&t, 800, k);
        let slope = multiplexing_dof(&s, &PhaseShifts::comm_aligned(&s), &powers).unwrap();
        ok &= (slope - k as f64).abs() <= 0.05 * k as f64;
        parts.push(format!("K = {k}: {slope:.4}"));
    }
    report(8, "rate slope against log2 P over 40..100 dBm", ok, &parts.join(", "));
}

#[test]
fn criterion_09_candidate_sites_are_orthogonal() {
    let t = default_template();
    let worst = verify_orthogonality(&t);
    report(
        9,
        "cross inner products of the 8 candidate directions (M_t = 32, M_r = 8)",
        worst < 1e-12,
        &format!("largest {worst:.2e}"),
    );
}

#[test]
fn criterion_10_tradeoff_shape() {
    let curve = |n_total: usize| {
        let overrides = vec![
            "experiment.name=rate_vs_inv_crb".to_string(),
            format!("system.n_total={n_total}"),
            "experiment.rate_vs_inv_crb.inv_crb_db=[14.0, 16.0, 18.0, 20.0, 22.0, 24.0, 26.0, 28.0, 30.0, 32.0, 34.0, 36.0, 38.0, 40.0]".to_string(),
            "experiment.rate_vs_inv_crb.schemes=[\"proposed\"]".to_string(),
        ];
        let config = parse_config("", "acceptance", &overrides).unwrap();
        let rows = run(&config).unwrap().rows;
        let template = config.layout.build(&config.system).unwrap();
        let plateau = comm_only_optimum(&template).unwrap().2;
        (rows, plateau)
    };
    let mut ok = true;
    let mut parts = Vec::new();
    let mut ends = Vec::new();
    for n in [400usize, 800] {
        let (rows, plateau) = curve(n);
        let feasible: Vec<_> = rows.iter().filter(|r| r.feasible).collect();
        let monotone = feasible.windows(2).all(|w| w[1].rate_bits <= w[0].rate_bits * (1.0 + 1e-9));
        let starts_flat = (feasible[0].rate_bits - plateau).abs() <= 1e-9 * plateau;
        let end = feasible
            .iter()
            .filter(|r| r.rate_bits >= plateau * (1.0 - 1e-9))
            .map(|r| r.sweep_value)
            .fold(f64::NEG_INFINITY, f64::max);
        let drops = feasible.last().is_some_and(|r| r.rate_bits < plateau * (1.0 - 1e-3));
        ok &= monotone && starts_flat && drops;
        ends.push(end);
        parts.push(format!(
            "N = {n}: plateau {plateau:.3} bits up to 1/CRB = {end} dB, non-increasing {monotone}, {} feasible points",
            feasible.len()
        ));
    }
    ok &= ends[1] > ends[0];
    report(10, "rate vs 1/CRB tradeoff shape", ok, &parts.join("; "));
}

#[test]
fn criterion_11_identical_runs_give_identical_bytes() {
    let config = parse_config("", "acceptance", &["experiment.seed=7".to_string()]).unwrap();
    let render = || {
        let out = run(&config).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &out.rows).unwrap();
        (buf, out.rows.len())
    };
    let (a, rows) = render();
    let (b, _) = render();
    let names: Vec<&str> = config.experiments.iter().map(|e| e.name.as_str()).collect();
    report(
        11,
        "byte-identical CSV across two runs of every default experiment",
        a == b && !a.is_empty(),
        &format!("{} experiments ({}), {rows} rows, {} bytes", names.len(), names.join(", "), a.len()),
    );
}
