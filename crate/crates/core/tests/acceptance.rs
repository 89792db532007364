//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line with the measured statistic against its pinned
//! threshold. Run with `cargo test --test acceptance -- --nocapture`.

use nalgebra::DVector;

use climens_core::covariance::{bessel_k1, whittle_correlation};
use climens_core::diagnostics::{
    default_monitors, gaussian_block_battery, geweke_design, geweke_priors, geweke_test,
    scalar_conditional_battery, GewekeConfig, OracleConfig,
};
use climens_core::model::{ModelVariant, PriorConfig};
use climens_core::sampler::{run_chain, ChainConfig, ChainOutput, FaultInjection};
use climens_core::simulate::{self, SimulationDesign};
use climens_core::summarize::{coverage_score, multi_model_mean, summarize};


fn report(criterion: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("{verdict} {criterion}: {detail}");
    assert!(pass, "{criterion}: {detail}");
}

/// Criterion 1: every scalar full conditional matches a brute-force grid
/// of the joint density (KS < 0.02 for conjugate draws, TV < 0.05 for
/// Metropolis chains; 10^4 draws on an n = 4, M = 3 instance).
#[test]
fn criterion_1_scalar_conditional_oracles() {
    let cfg = OracleConfig { seed: 2024, ..OracleConfig::default() };
    let rep = scalar_conditional_battery(&cfg).expect("battery runs");
    let mut worst = ("", 0.0f64, 0.0f64);
    for o in &rep.outcomes {
        println!(
            "  criterion 1 detail: {:12} {:3} = {:.4} (limit {:.2})",
            o.name, o.kind, o.statistic, o.threshold
        );
        if o.statistic / o.threshold > worst.1 {
            worst = (o.kind, o.statistic / o.threshold, o.statistic);
        }
    }
    report(
        "criterion 1 (conditional-density oracle battery)",
        rep.all_pass(),
        &format!(
            "{} conditionals checked; worst margin {:.2} of limit ({} = {:.4})",
            rep.outcomes.len(),
            worst.1,
            worst.0,
            worst.2
        ),
    );
}

/// Criterion 2: every Gaussian block's conditional (mean, precision)
/// equals the gradient / negative Hessian of the joint log-density at
/// three random points, relative error < 1e-6.
#[test]
fn criterion_2_gaussian_block_checks() {
    let rep = gaussian_block_battery(7).expect("battery runs");
    let worst = rep
        .outcomes
        .iter()
        .map(|o| o.statistic)
        .fold(0.0f64, f64::max);
    for o in &rep.outcomes {
        println!("  criterion 2 detail: {:10} rel err = {:.3e}", o.name, o.statistic);
    }
    report(
        "criterion 2 (Gaussian-block gradient/Hessian checks)",
        rep.all_pass(),
        &format!("{} blocks, worst relative error {:.3e} (limit 1e-6)", rep.outcomes.len(), worst),
    );
}

/// Criterion 3: getting-it-right on a 3x3-grid, M = 2 design with 10^4
/// rounds: at least 95% of the monitored statistics within |z| < 3, and a
/// seeded fault (halved tau_W rate) detected with some |z| > 5.
#[test]
fn criterion_3_getting_it_right() {
    let design = geweke_design();
    let monitors = default_monitors(2);
    assert!(monitors.len() >= 12);

    let cfg = GewekeConfig { rounds: 10_000, seed: 31, ..GewekeConfig::default() };
    let rep = geweke_test(&design, &geweke_priors(), &cfg, &monitors).expect("geweke runs");
    for m in &rep.monitors {
        println!("  criterion 3 detail: {:14} z = {:+.2}", m.name, m.z);
    }
    let frac = rep.pass_fraction();
    report(
        "criterion 3a (getting-it-right pass fraction)",
        frac >= 0.95,
        &format!(
            "{}/{} monitors within |z| < 3 (max |z| = {:.2}, 10^4 rounds)",
            rep.monitors.iter().filter(|m| m.pass).count(),
            rep.monitors.len(),
            rep.max_abs_z()
        ),
    );

    let fault_cfg = GewekeConfig {
        rounds: 10_000,
        seed: 37,
        fault: FaultInjection::HalveTauWRate,
        ..GewekeConfig::default()
    };
    let bad = geweke_test(&design, &geweke_priors(), &fault_cfg, &monitors).expect("geweke runs");
    report(
        "criterion 3b (fault detection power)",
        bad.max_abs_z() > 5.0,
        &format!("halved tau_W rate yields max |z| = {:.1} (needs > 5)", bad.max_abs_z()),
    );
}

fn desk_chain_config(seed: u64, variant: ModelVariant) -> ChainConfig {
    ChainConfig {
        iterations: 5_000,
        burn_in: 2_000,
        thin: 1,
        seed,
        variant,
        ..ChainConfig::default()
    }
}

struct ReplicateOutcome {
    rmse_posterior: f64,
    rmse_mmm: f64,
    chain: ChainOutput,
    truth_y_f: DVector<f64>,
    beta_mean: f64,
}

fn fit_replicates(
    design_for: impl Fn(u64) -> SimulationDesign + Sync,
    variant: ModelVariant,
    replicates: usize,
    seed_base: u64,
) -> Vec<ReplicateOutcome> {
    let indices: Vec<u64> = (0..replicates as u64).collect();
    indices
        .iter()
        .map(|&r| {
            let design = design_for(seed_base + r);
            let (data, truth) = simulate::generate(&design).expect("generation");
            let out = run_chain(
                &data,
                desk_chain_config((seed_base + r) ^ 0xabc, variant),
                PriorConfig::default(),
            )
            .expect("chain runs");
            let s = summarize(&out).expect("summary");
            let (_, mmm_f) = multi_model_mean(&data);
            let n = data.n_sites() as f64;
            let rmse =
                |a: &DVector<f64>| ((a - &truth.latent.y_f).norm_squared() / n).sqrt();
            ReplicateOutcome {
                rmse_posterior: rmse(&s.y_f.mean),
                rmse_mmm: rmse(&mmm_f),
                beta_mean: s.beta.mean,
                chain: out,
                truth_y_f: truth.latent.y_f.clone(),
            }
        })
        .collect()
}

/// Criteria 4 and 5 share the same 20 replicates: the full model must beat
/// the multi-model mean on RMSE in at least 80% of replicates and reach
/// aggregate 90%-interval coverage in [0.80, 0.97]; the white-noise/no-V
/// variant fitted to the same data must lose at least 5 points of
/// coverage.
#[test]
fn criterion_4_and_5_desk_scale_replication() {
    let replicates = 20;
    let design_for = |seed: u64| simulate::desk_design(8, 6, 3, 3).with_seed(seed);

    let full = fit_replicates(design_for, ModelVariant::Full, replicates, 50_000);

    let wins =
        full.iter().filter(|r| r.rmse_posterior < r.rmse_mmm).count();
    let win_rate = wins as f64 / replicates as f64;
    report(
        "criterion 4a (posterior beats multi-model mean)",
        win_rate >= 0.80,
        &format!("RMSE(posterior) < RMSE(MMM) in {wins}/{replicates} replicates"),
    );

    let pairs: Vec<(&ChainOutput, &DVector<f64>)> =
        full.iter().map(|r| (&r.chain, &r.truth_y_f)).collect();
    let coverage = coverage_score(&pairs, 0.90).expect("coverage");
    report(
        "criterion 4b (aggregate 90% coverage)",
        (0.80..=0.97).contains(&coverage.aggregate),
        &format!("aggregate coverage {:.3} over {replicates} replicates (band [0.80, 0.97])", coverage.aggregate),
    );

    // Criterion 5: same datasets, simplest-variant inference.
    let simplest = fit_replicates(design_for, ModelVariant::Simplest, replicates, 50_000);
    let pairs_s: Vec<(&ChainOutput, &DVector<f64>)> =
        simplest.iter().map(|r| (&r.chain, &r.truth_y_f)).collect();
    let coverage_s = coverage_score(&pairs_s, 0.90).expect("coverage");
    let drop = coverage.aggregate - coverage_s.aggregate;
    report(
        "criterion 5 (variant degradation)",
        drop >= 0.05,
        &format!(
            "simplest-variant coverage {:.3} vs full {:.3} (drop {:.1} points, needs >= 5)",
            coverage_s.aggregate,
            coverage.aggregate,
            100.0 * drop
        ),
    );
}

/// Criterion 6: with archive-patterned run counts (M = 10 preserving the
/// one-run-dominated profile) and N = 2, the full model still beats the
/// multi-model mean in at least 70% of replicates. The direction of the
/// regression-coefficient bias is reported, not gated.
#[test]
fn criterion_6_archive_sized_robustness() {
    let replicates = 20;
    // Run-count profile patterned on the archive: 6 of 10 models have a
    // single run; totals dominated by a few large ensembles.
    let profile = [10usize, 6, 5, 3, 1, 1, 1, 1, 1, 1];
    let design_for = move |seed: u64| {
        let mut d = simulate::desk_design(8, 10, 1, 2).with_seed(seed);
        d.runs_h = profile.to_vec();
        d.runs_f = profile.to_vec();
        d
    };

    let outcomes = fit_replicates(design_for, ModelVariant::Full, replicates, 60_005);
    let wins = outcomes.iter().filter(|r| r.rmse_posterior < r.rmse_mmm).count();
    let win_rate = wins as f64 / replicates as f64;

    let beta_under =
        outcomes.iter().filter(|r| r.beta_mean < 2.0).count();
    println!(
        "  criterion 6 note: posterior mean of the regression coefficient fell below the true value in {beta_under}/{replicates} replicates (informational; underestimation expected)"
    );

    report(
        "criterion 6 (archive-sized robustness)",
        win_rate >= 0.70,
        &format!("RMSE(posterior) < RMSE(MMM) in {wins}/{replicates} replicates (needs >= 70%)"),
    );
}

/// Criterion 7: numerics. K1 within 1e-8 absolute of the frozen
/// high-precision table on 100 log-spaced points; the kernel is exactly 1
/// at distance zero; seeded chains are bit-identical across runs.
#[test]
fn criterion_7_numerics() {
    let mut worst = 0.0f64;
    for &(x, want) in k1_reference::K1_TABLE {
        let got = bessel_k1(x).expect("in domain");
        worst = worst.max((got - want).abs());
    }
    report(
        "criterion 7a (Bessel K1 vs high-precision table)",
        worst <= 1e-8,
        &format!("max |error| = {worst:.3e} over {} points (limit 1e-8)", k1_reference::K1_TABLE.len()),
    );

    let exact_one = (1..=50).all(|i| {
        whittle_correlation(0.0, i as f64 * 0.17).expect("valid range") == 1.0
    });
    report(
        "criterion 7b (kernel at zero distance)",
        exact_one,
        "whittle_correlation(0, gamma) == 1.0 exactly for all tested ranges",
    );

    let design = simulate::desk_design(3, 2, 2, 2).with_seed(77);
    let (data, _) = simulate::generate(&design).expect("generation");
    let cfg = ChainConfig {
        iterations: 120,
        burn_in: 40,
        thin: 2,
        seed: 4242,
        ..ChainConfig::default()
    };
    let a = run_chain(&data, cfg.clone(), PriorConfig::default()).expect("chain");
    let b = run_chain(&data, cfg, PriorConfig::default()).expect("chain");
    report(
        "criterion 7c (bit-identical seeded chains)",
        a == b,
        "two runs with the same seed produced identical stored draws",
    );
}
