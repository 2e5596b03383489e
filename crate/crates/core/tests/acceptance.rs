//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints one `PASS`/`FAIL` line, then exits non-zero if any failed.

use std::panic::{self, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use factorbl_core::allocate::{gmv_closed_form, solve_constrained, Objective};
use factorbl_core::backtest::{
    audit_no_lookahead, run_dynamic_bl, run_static, static_bl_weights, DynamicSetup, StaticSetup,
};
use factorbl_core::blacklitterman::{
    build_views, equilibrium_prior, posterior_returns, posterior_weights, printed_example_views, scenario_aversion,
    AversionSource, ViewKind, ViewSet, STATIC_TAU,
};
use factorbl_core::covariance::{
    constant_correlation_target, estimate, ledoit_wolf_intensity, sample_cov_matrix, shrink_towards, EstimatorChoice,
};
use factorbl_core::report::{cumulative_chart, render_svg, weight_path_chart};
use factorbl_core::robustness::{default_multipliers, volatility_sweep, weight_paths, OmegaMode};
use factorbl_core::synthetic::synthetic_panel;
use factorbl_core::viewgen::SequenceModel;
use factorbl_core::viewgen::{build_dataset, LstmViewGenerator};
use factorbl_core::{
    BacktestLedger, CovEstimate, FactorUniverse, MarketCapWeights, MomentEstimate, ReturnPanel, RiskAversion, RowRange,
    Scheme, ViewModelConfig, WeightVector,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `A A' / n + ridge I` with `A` standard normal times `scale`.
fn random_spd(rng: &mut ChaCha8Rng, n: usize, scale: f64, ridge: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| normal(rng) * scale);
    let s = &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * ridge;
    (&s + s.transpose()) * 0.5
}

fn quad(w: &[f64], s: &DMatrix<f64>) -> f64 {
    let n = w.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            total += w[i] * s[(i, j)] * w[j];
        }
    }
    total
}

fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

// 1 ----------------------------------------------------------------------

/// Best GMV point on the 1e-3 simplex grid, refined from a 0.02 grid through a 0.005 grid.
fn grid_gmv(s: &DMatrix<f64>) -> Vec<f64> {
    let n = s.nrows();
    const UNITS: i64 = 1000;
    let value = |k: &[i64]| {
        let w: Vec<f64> = k.iter().map(|&v| v as f64 / UNITS as f64).collect();
        quad(&w, s)
    };
    // Enumerates points `center + step * d` with |d_i| <= radius on the first n-1 coordinates.
    fn search(
        n: usize,
        center: &[i64],
        step: i64,
        radius: i64,
        value: &dyn Fn(&[i64]) -> f64,
        best: &mut (f64, Vec<i64>),
    ) {
        let mut d = vec![-radius; n - 1];
        loop {
            let mut k: Vec<i64> = (0..n - 1).map(|i| center[i] + step * d[i]).collect();
            let last = UNITS - k.iter().sum::<i64>();
            if k.iter().all(|&v| (0..=UNITS).contains(&v)) && (0..=UNITS).contains(&last) {
                k.push(last);
                let v = value(&k);
                if v < best.0 {
                    *best = (v, k);
                }
            }
            let mut i = 0;
            loop {
                if i == n - 1 {
                    return;
                }
                d[i] += 1;
                if d[i] <= radius {
                    break;
                }
                d[i] = -radius;
                i += 1;
            }
        }
    }
    let mut best = (f64::INFINITY, vec![0; n]);
    // The 0.02 grid over the whole simplex: all coordinates in 0..=50 steps.
    search(n, &vec![500; n], 20, 25, &value, &mut best);
    let coarse = best.1.clone();
    search(n, &coarse, 5, 8, &value, &mut best);
    let medium = best.1.clone();
    search(n, &medium, 1, 10, &value, &mut best);
    best.1.iter().map(|&v| v as f64 / UNITS as f64).collect()
}

fn allocator_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_gap = f64::NEG_INFINITY;
    let mut interior = 0;
    let mut worst_grid = 0.0_f64;
    for instance in 0..200 {
        let n = 3 + instance % 3;
        let s = random_spd(&mut rng, n, 0.1, 0.002);
        let mu = DVector::from_fn(n, |_, _| rng.random_range(-0.01..0.03));
        let lambda = rng.random_range(0.5..5.0);
        let sigma = CovEstimate::from_matrix(s.clone());
        let moments = MomentEstimate::from_vector(mu.clone());
        let (gmv, _) = solve_constrained(Objective::Gmv, &sigma, None).map_err(|e| e.to_string())?;
        let (mkw, _) =
            solve_constrained(Objective::Markowitz { lambda }, &sigma, Some(&moments)).map_err(|e| e.to_string())?;
        for w in [&gmv, &mkw] {
            ensure(w.is_feasible(1e-12), || {
                format!("instance {instance}: infeasible {:?}", w.weights)
            })?;
        }
        let gmv_value = quad(gmv.weights.as_slice(), &s);
        let mkw_value = lambda * quad(mkw.weights.as_slice(), &s) - mkw.weights.dot(&mu);

        let (mut best_gmv, mut best_mkw) = (f64::INFINITY, f64::INFINITY);
        let mut point = vec![0.0; n];
        for _ in 0..100_000 {
            let mut total = 0.0;
            for p in point.iter_mut() {
                let u: f64 = rng.random::<f64>();
                *p = -(1.0 - u).ln();
                total += *p;
            }
            point.iter_mut().for_each(|p| *p /= total);
            let q = quad(&point, &s);
            let ret: f64 = point.iter().zip(mu.iter()).map(|(a, b)| a * b).sum();
            best_gmv = best_gmv.min(q);
            best_mkw = best_mkw.min(lambda * q - ret);
        }
        worst_gap = worst_gap.max(gmv_value - best_gmv).max(mkw_value - best_mkw);
        ensure(gmv_value <= best_gmv + 1e-8, || {
            format!("instance {instance}: GMV {gmv_value:e} > random best {best_gmv:e}")
        })?;
        ensure(mkw_value <= best_mkw + 1e-8, || {
            format!("instance {instance}: Markowitz {mkw_value:e} > random best {best_mkw:e}")
        })?;

        let closed = gmv_closed_form(&sigma).map_err(|e| e.to_string())?;
        if closed.weights.iter().all(|&w| w > 0.01) {
            interior += 1;
            let grid = grid_gmv(&s);
            let diff = closed
                .weights
                .iter()
                .zip(&grid)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst_grid = worst_grid.max(diff);
            ensure(diff <= 2e-3, || {
                format!("instance {instance}: closed-form GMV off the grid optimum by {diff}")
            })?;
        }
    }
    ensure(interior >= 20, || format!("only {interior} interior GMV instances"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "200 instances, worst objective gap to random best {worst_gap:.2e}; {interior} interior GMV grid checks, worst weight diff {worst_grid:.1e}"
    ))
}

// 2 ----------------------------------------------------------------------

fn random_views(rng: &mut ChaCha8Rng, s: &DMatrix<f64>, k: usize, tau: f64) -> ViewSet {
    let n = s.nrows();
    let p = DMatrix::from_fn(k, n, |_, _| normal(rng));
    let base = &p * s * tau * p.transpose();
    let omega = DMatrix::from_diagonal(&DVector::from_fn(k, |i, _| base[(i, i)] * rng.random_range(0.2..5.0)));
    ViewSet {
        q: DVector::from_fn(k, |_, _| rng.random_range(-0.02..0.04)),
        p,
        omega,
        tau,
        kinds: vec![ViewKind::Global; k],
    }
}

fn bl_algebraic_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0_f64;
    let mut worst_displayed = 0.0_f64;
    for instance in 0..500 {
        let n = rng.random_range(2..=10);
        let k = rng.random_range(1..=4.min(n));
        let s = random_spd(&mut rng, n, 0.15, 0.01);
        let tau = rng.random_range(0.01..1.0);
        let views = random_views(&mut rng, &s, k, tau);
        let pi = DVector::from_fn(n, |_, _| rng.random_range(-0.01..0.03));
        let sigma = CovEstimate::from_matrix(s.clone());
        let library = posterior_returns(&pi, &sigma, &views).map_err(|e| format!("instance {instance}: {e}"))?;

        let ts = &s * tau;
        let middle = (&views.p * &ts * views.p.transpose() + &views.omega)
            .try_inverse()
            .ok_or("singular view block")?;
        let alternate = &pi + &ts * views.p.transpose() * middle * (&views.q - &views.p * &pi);

        let ts_inv = ts.clone().try_inverse().ok_or("singular tau sigma")?;
        let omega_inv = views.omega.clone().try_inverse().ok_or("singular omega")?;
        let precision = &ts_inv + views.p.transpose() * &omega_inv * &views.p;
        let displayed = precision.try_inverse().ok_or("singular posterior precision")?
            * (&ts_inv * &pi + views.p.transpose() * &omega_inv * &views.q);

        let diff = max_abs_diff(&library, &alternate);
        worst = worst.max(diff);
        worst_displayed = worst_displayed.max(max_abs_diff(&displayed, &alternate));
        ensure(diff < 1e-8, || {
            format!("instance {instance} (N={n}, K={k}): forms differ by {diff:e}")
        })?;
    }
    ensure(worst_displayed < 1e-8, || {
        format!("hand-built forms differ by {worst_displayed:e}")
    })?;
    Ok(format!(
        "500 instances, library vs alternate form max diff {worst:.1e} (hand-built pair {worst_displayed:.1e})"
    ))
}

// 3 ----------------------------------------------------------------------

fn bl_limits() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_loose, mut worst_tight) = (0.0_f64, 0.0_f64);
    for instance in 0..100 {
        let n = rng.random_range(2..=10);
        let s = random_spd(&mut rng, n, 0.15, 0.01);
        let sigma = CovEstimate::from_matrix(s.clone());
        let tau = rng.random_range(0.01..1.0);
        let pi = DVector::from_fn(n, |_, _| rng.random_range(-0.01..0.03));

        let none = posterior_returns(&pi, &sigma, &ViewSet::empty(n, tau)).map_err(|e| e.to_string())?;
        ensure(none == pi, || {
            format!("instance {instance}: K=0 posterior differs from the prior")
        })?;

        let k = rng.random_range(1..=4.min(n));
        let mut loose = random_views(&mut rng, &s, k, tau);
        loose.omega *= 1e12;
        let mu = posterior_returns(&pi, &sigma, &loose).map_err(|e| e.to_string())?;
        let gap = max_abs_diff(&mu, &pi);
        worst_loose = worst_loose.max(gap);
        ensure(gap < 1e-6, || {
            format!("instance {instance}: huge Omega leaves a gap of {gap:e}")
        })?;

        let tight = ViewSet {
            p: DMatrix::identity(n, n),
            q: DVector::from_fn(n, |_, _| rng.random_range(-0.02..0.04)),
            omega: DMatrix::identity(n, n) * 1e-12,
            tau,
            kinds: vec![ViewKind::Absolute; n],
        };
        tight.validate().map_err(|e| e.to_string())?;
        let mu = posterior_returns(&pi, &sigma, &tight).map_err(|e| e.to_string())?;
        let gap = max_abs_diff(&mu, &tight.q);
        worst_tight = worst_tight.max(gap);
        ensure(gap < 1e-6, || {
            format!("instance {instance}: certain views miss Q by {gap:e}")
        })?;
    }
    Ok(format!(
        "100 instances: K=0 exact; Omega x 1e12 gap {worst_loose:.1e}; P=I, Omega=1e-12 gap {worst_tight:.1e}"
    ))
}

// 4 ----------------------------------------------------------------------

fn synthetic_800() -> &'static ReturnPanel {
    static PANEL: OnceLock<ReturnPanel> = OnceLock::new();
    PANEL.get_or_init(|| synthetic_panel(&FactorUniverse::default_universe(), 800, 42))
}

fn lambda_ratios() -> Outcome {
    // Printed us_growth weights under the Kelly, average and averse scenarios.
    let (kelly, average, averse) = (17_107.41, 76.37, 28.51);
    let half = 0.005;
    let lo = (kelly - half) / (average + half);
    let hi = (kelly + half) / (average - half);
    ensure((lo..=hi).contains(&224.0), || {
        format!("printed ratio interval [{lo}, {hi}] excludes 224")
    })?;
    let lo = (average - half) / (averse + half);
    let hi = (average + half) / (averse - half);
    ensure((lo..=hi).contains(&(3.0 / 1.12)), || {
        format!("printed ratio interval [{lo}, {hi}] excludes 3/1.12")
    })?;

    let panel = synthetic_800();
    let window = panel.full_range();
    let caps = MarketCapWeights::bundled();
    let sigma = estimate(panel, window, EstimatorChoice::Sample).map_err(|e| e.to_string())?;
    let views =
        build_views(&printed_example_views(), panel.universe(), &sigma, STATIC_TAU).map_err(|e| e.to_string())?;
    let weights = |kind| -> Result<DVector<f64>, String> {
        let lambda = scenario_aversion(kind, None).map_err(|e| e.to_string())?;
        let bl = static_bl_weights(panel, window, &caps, Some(&views), EstimatorChoice::Sample, lambda)
            .map_err(|e| e.to_string())?;
        Ok(bl.posterior_weights.weights)
    };
    let w_kelly = weights(AversionSource::NearKelly)?;
    let w_average = weights(AversionSource::Average)?;
    let w_averse = weights(AversionSource::Averse)?;
    let mut worst = (0.0_f64, 0.0_f64);
    for i in 0..w_kelly.len() {
        let r1 = w_kelly[i] / w_average[i];
        let r2 = w_average[i] / w_averse[i];
        worst.0 = worst.0.max((r1 - 224.0).abs());
        worst.1 = worst.1.max((r2 - 3.0 / 1.12).abs());
    }
    ensure(worst.0 <= 1e-6 && worst.1 <= 1e-6, || format!("ratio errors {worst:?}"))?;
    Ok(format!(
        "Kelly/average max error {:.1e}, average/averse max error {:.1e}; printed table ratios consistent",
        worst.0, worst.1
    ))
}

// 5 ----------------------------------------------------------------------

fn inverse_pair() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0_f64;
    for instance in 0..100 {
        let n = rng.random_range(2..=20);
        let s = CovEstimate::from_matrix(random_spd(&mut rng, n, 0.3, 0.05));
        let w = WeightVector::new(DVector::from_fn(n, |_, _| normal(&mut rng)), Scheme::Equal, false);
        let lambda = RiskAversion::custom(rng.random_range(0.05..6.0)).map_err(|e| e.to_string())?;
        let pi = equilibrium_prior(&w, &s, lambda).map_err(|e| e.to_string())?;
        let back = posterior_weights(&pi, &s, lambda).map_err(|e| e.to_string())?;
        let diff = max_abs_diff(&back.weights, &w.weights);
        worst = worst.max(diff);
        ensure(diff < 1e-10, || {
            format!("instance {instance}: round trip error {diff:e}")
        })?;
    }
    Ok(format!("100 instances, max round-trip error {worst:.1e}"))
}

// 6 ----------------------------------------------------------------------

fn sequence_model_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let samples: Vec<(DMatrix<f64>, usize)> = (0..4)
        .map(|i| (DMatrix::from_fn(3, 2, |_, _| normal(&mut rng) * 0.01), i % 2))
        .collect();
    let refs: Vec<(&DMatrix<f64>, usize)> = samples.iter().map(|(f, l)| (f, *l)).collect();
    let model = SequenceModel::init(2, 4, 2, 100.0, 17);
    let (_, analytic) = model.loss_and_gradient(&refs).map_err(|e| e.to_string())?;
    let flat = model.to_flat();
    let mut probe = model.clone();
    // Smaller steps lose the difference quotient to cancellation on near-zero gradients.
    let step = 1e-5;
    let mut worst = 0.0_f64;
    for k in 0..flat.len() {
        let mut p = flat.clone();
        p[k] += step;
        probe.set_flat(&p).map_err(|e| e.to_string())?;
        let up = probe.loss(&refs).map_err(|e| e.to_string())?;
        p[k] -= 2.0 * step;
        probe.set_flat(&p).map_err(|e| e.to_string())?;
        let down = probe.loss(&refs).map_err(|e| e.to_string())?;
        let numeric = (up - down) / (2.0 * step);
        let rel = (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    ensure(worst < 1e-4, || format!("max relative gradient error {worst:e}"))?;

    // Separable toy: the label is the factor carrying a steady positive drift.
    let start = Instant::now();
    let toy = |rng: &mut ChaCha8Rng, count: usize| -> Vec<(DMatrix<f64>, usize)> {
        (0..count)
            .map(|i| {
                let label = i % 3;
                let features =
                    DMatrix::from_fn(10, 3, |_, c| normal(rng) * 0.004 + if c == label { 0.006 } else { 0.0 });
                (features, label)
            })
            .collect()
    };
    let train = toy(&mut rng, 90);
    let test = toy(&mut rng, 90);
    let train_refs: Vec<(&DMatrix<f64>, usize)> = train.iter().map(|(f, l)| (f, *l)).collect();
    let mut toy_model = SequenceModel::init(3, 8, 3, 100.0, 42);
    let epochs = 200;
    toy_model.fit(&train_refs, epochs, 0.05).map_err(|e| e.to_string())?;
    let mut correct = 0;
    for (features, label) in &test {
        if toy_model.predict(features).map_err(|e| e.to_string())? == *label {
            correct += 1;
        }
    }
    let accuracy = correct as f64 / test.len() as f64;
    let elapsed = start.elapsed();
    ensure(accuracy >= 0.95, || {
        format!("held-out toy accuracy {accuracy:.3} after {epochs} epochs")
    })?;
    ensure(elapsed < Duration::from_secs(30), || {
        format!("toy training took {elapsed:?}")
    })?;
    Ok(format!(
        "{} parameters, max relative gradient error {worst:.1e}; toy held-out accuracy {:.1}% after {epochs} epochs in {:.1}s",
        flat.len(),
        accuracy * 100.0,
        elapsed.as_secs_f64()
    ))
}

// 7 and 11 ---------------------------------------------------------------

/// The full-size rolling backtest on the 800-day panel, run once and timed.
fn full_dynamic_run() -> &'static Result<(BacktestLedger, Duration), String> {
    static RUN: OnceLock<Result<(BacktestLedger, Duration), String>> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let ledger =
            run_dynamic_bl(synthetic_800(), &DynamicSetup::default(), &LstmViewGenerator).map_err(|e| e.to_string())?;
        Ok((ledger, start.elapsed()))
    })
}

fn no_lookahead() -> Outcome {
    let (ledger, _) = full_dynamic_run().as_ref().map_err(Clone::clone)?;
    let panel = synthetic_800();
    let setup = DynamicSetup::default();
    let expected_rounds = (800 - setup.round_rows()) / setup.model.window + 1;
    ensure(ledger.rounds.len() == expected_rounds, || {
        format!("{} rounds, expected {expected_rounds}", ledger.rounds.len())
    })?;
    let dates = panel.dates();
    for (r, meta) in ledger.rounds.iter().enumerate() {
        let s = r * setup.model.window;
        let training_end = s + setup.model.training_rows();
        let invest = RowRange::new(training_end, training_end + setup.model.window);
        ensure(
            meta.invest_start == dates[invest.start] && meta.invest_end == dates[invest.end - 1],
            || format!("round {r}: metadata invest window does not match the row layout"),
        )?;
        let first_invested = ledger
            .records
            .iter()
            .filter(|rec| rec.date >= meta.invest_start && rec.date <= meta.invest_end)
            .map(|rec| rec.date)
            .min()
            .ok_or_else(|| format!("round {r}: no invested records"))?;
        let last_label = meta
            .last_label_date
            .ok_or_else(|| format!("round {r}: no training label recorded"))?;
        ensure(last_label < first_invested, || {
            format!("round {r}: label date {last_label} not before first invested date {first_invested}")
        })?;
        ensure(
            meta.training_end < first_invested && meta.estimation_end < first_invested,
            || {
                format!(
                    "round {r}: inputs reach {} / {}",
                    meta.training_end, meta.estimation_end
                )
            },
        )?;
    }
    let audit = audit_no_lookahead(ledger);
    ensure(audit.iter().all(|a| a.passed), || {
        "library audit flagged a round".into()
    })?;
    Ok(format!(
        "{} rounds audited from metadata, all label dates precede investment",
        ledger.rounds.len()
    ))
}

// 8 ----------------------------------------------------------------------

fn dataset_shape() -> Outcome {
    let config = ViewModelConfig::default();
    ensure(
        (config.sequence_length, config.window, config.train_span) == (126, 10, 504),
        || "defaults differ from L=126, window=10, span=504".into(),
    )?;
    let panel = synthetic_800();
    let span = RowRange::new(0, config.training_rows());
    let samples = build_dataset(panel, span, &config).map_err(|e| e.to_string())?;
    let shapes_ok = samples.iter().all(|s| s.features.shape() == (126, 20));
    ensure(samples.len() == 50 && shapes_ok, || {
        format!(
            "{} samples, first shape {:?}",
            samples.len(),
            samples.first().map(|s| s.features.shape())
        )
    })?;
    let stride_ok = samples
        .windows(2)
        .all(|w| w[1].label_rows.start - w[0].label_rows.start == config.window);
    ensure(stride_ok, || "samples are not spaced by the window".into())?;
    Ok(format!("{} x {} x {}", samples.len(), 126, 20))
}

// 9 ----------------------------------------------------------------------

fn shrinkage_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_diag = 0.0_f64;
    let mut worst_target = 0.0_f64;
    let mut intensities = Vec::new();
    for instance in 0..200 {
        let n = rng.random_range(2..=10);
        let t = [3, 5, 20, 60, 250][instance % 5];
        let common = rng.random_range(0.0..1.5);
        let heavy = instance % 4 == 0;
        let mut x = DMatrix::zeros(t, n);
        for r in 0..t {
            let f = normal(&mut rng);
            for c in 0..n {
                let e = if heavy {
                    normal(&mut rng) / rng.random_range(0.05_f64..1.0).sqrt()
                } else {
                    normal(&mut rng)
                };
                x[(r, c)] = (common * f + e) * 0.01 * (1.0 + c as f64);
            }
        }
        let s = sample_cov_matrix(&x);
        ensure(shrink_towards(&s, 0.0) == s, || {
            format!("instance {instance}: delta=0 not exact")
        })?;
        let target = constant_correlation_target(&s);
        ensure(shrink_towards(&s, 1.0) == target, || {
            format!("instance {instance}: delta=1 not exact")
        })?;

        let sd: Vec<f64> = (0..n).map(|i| s[(i, i)].sqrt()).collect();
        let mut rsum = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                rsum += s[(i, j)] / (sd[i] * sd[j]);
            }
        }
        let rbar = rsum / (n * (n - 1) / 2) as f64;
        let oracle = DMatrix::from_fn(n, n, |i, j| if i == j { s[(i, i)] } else { rbar * sd[i] * sd[j] });
        worst_target = worst_target.max((&oracle - &target).amax() / s.amax());

        let delta: f64 = rng.random_range(0.0..1.0);
        let blended = shrink_towards(&s, delta);
        worst_diag = worst_diag.max((blended.diagonal() - s.diagonal()).amax());
        let intensity = ledoit_wolf_intensity(&x);
        ensure((0.0..=1.0).contains(&intensity), || {
            format!("instance {instance}: intensity {intensity}")
        })?;
        intensities.push(intensity);
    }
    ensure(worst_diag <= 1e-12, || format!("diagonal moved by {worst_diag:e}"))?;
    ensure(worst_target <= 1e-12, || {
        format!("target differs from the oracle by {worst_target:e}")
    })?;
    let (lo, hi) = intensities
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    Ok(format!(
        "200 instances: endpoints exact, diag drift {worst_diag:.1e}, target oracle {worst_target:.1e}, intensity range [{lo:.3}, {hi:.3}]"
    ))
}

// 10 ---------------------------------------------------------------------

fn scale_invariance() -> Outcome {
    let multipliers = default_multipliers();
    ensure(multipliers.len() == 21, || format!("{} multipliers", multipliers.len()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0_f64;
    for instance in 0..20 {
        let n = rng.random_range(3..=20);
        let s = CovEstimate::from_matrix(random_spd(&mut rng, n, 0.1, 0.001));
        let base = gmv_closed_form(&s).map_err(|e| e.to_string())?;
        for &m in &multipliers {
            let scaled = gmv_closed_form(&s.scaled(m)).map_err(|e| e.to_string())?;
            worst = worst.max(max_abs_diff(&scaled.weights, &base.weights));
        }
        let views = ViewSet::one_hot(rng.random_range(0..n), 0.01, &s, STATIC_TAU).map_err(|e| e.to_string())?;
        let lambda = RiskAversion::custom(2.0).map_err(|e| e.to_string())?;
        let sweep = volatility_sweep(
            gmv_closed_form,
            &s,
            &views,
            lambda,
            lambda,
            &multipliers,
            OmegaMode::Recompute,
        )
        .map_err(|e| e.to_string())?;
        for w in &sweep.prior_weights {
            worst = worst.max(max_abs_diff(w, &base.weights));
        }
        ensure(worst < 1e-10, || {
            format!("instance {instance}: GMV weights moved by {worst:e}")
        })?;
    }
    Ok(format!(
        "20 covariances x 21 multipliers, max GMV weight change {worst:.1e}"
    ))
}

// 11 ---------------------------------------------------------------------

fn wealth_identity(ledger: &BacktestLedger) -> Result<f64, String> {
    let mut worst = 0.0_f64;
    for series in ledger.series() {
        let path = ledger.wealth(&series);
        let mut wealth = 1.0;
        ensure(path.first() == Some(&1.0), || {
            format!("{series}: wealth does not start at 1")
        })?;
        for (rec, w) in ledger.records_for(&series).zip(path.iter().skip(1)) {
            wealth *= 1.0 + rec.realized_period_return;
            worst = worst.max((wealth - w).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("wealth identity off by {worst:e}"))?;
    Ok(worst)
}

/// CSV and SVG bytes of a ledger: the ledger table, the wealth chart and every weight-path chart.
fn artifacts(ledger: &BacktestLedger) -> Result<Vec<Vec<u8>>, String> {
    let mut csv = Vec::new();
    ledger.write_csv(&mut csv).map_err(|e| e.to_string())?;
    let mut out = vec![csv];
    out.push(
        render_svg(&cumulative_chart(ledger, "wealth", "wealth.svg".into()))
            .map_err(|e| e.to_string())?
            .into_bytes(),
    );
    for path in weight_paths(ledger) {
        let spec = weight_path_chart(&path, &ledger.factor_names, "weights.svg".into());
        out.push(render_svg(&spec).map_err(|e| e.to_string())?.into_bytes());
    }
    Ok(out)
}

fn accounting_and_determinism() -> Outcome {
    let panel = synthetic_800();
    let caps = MarketCapWeights::bundled();
    let mut schemes = Scheme::table_order(2.0);
    schemes.push(Scheme::BlackLitterman { lambda: 1.12 });
    let setup = StaticSetup {
        schemes,
        views: None,
        caps: Some(&caps),
        estimator: EstimatorChoice::Sample,
        constrained: true,
    };
    let static_ledger = run_static(panel, &setup).map_err(|e| e.to_string())?;
    // Each daily record must equal the held weights times that day's factor returns.
    let mut worst_return = 0.0_f64;
    for rec in &static_ledger.records {
        let row = panel
            .dates()
            .iter()
            .position(|d| *d == rec.date)
            .ok_or("record date not in panel")?;
        let expected: f64 = (0..panel.n_factors())
            .map(|f| rec.weights.weights[f] * panel.factor_return(row, f))
            .sum();
        worst_return = worst_return.max((expected - rec.realized_period_return).abs());
    }
    ensure(worst_return <= 1e-15, || {
        format!("realized returns off by {worst_return:e}")
    })?;
    let static_gap = wealth_identity(&static_ledger)?;

    let (dynamic, elapsed) = full_dynamic_run().as_ref().map_err(Clone::clone)?;
    let dynamic_gap = wealth_identity(dynamic)?;
    ensure(*elapsed < Duration::from_secs(300), || {
        format!("full dynamic backtest took {elapsed:?}")
    })?;

    let again = run_static(panel, &setup).map_err(|e| e.to_string())?;
    ensure(artifacts(&static_ledger)? == artifacts(&again)?, || {
        "static artifacts differ between runs".into()
    })?;
    let small = DynamicSetup {
        model: ViewModelConfig {
            sequence_length: 30,
            train_span: 120,
            window: 10,
            hidden_size: 8,
            epochs: 5,
            ..ViewModelConfig::default()
        },
        ..DynamicSetup::default()
    };
    let short = synthetic_panel(&FactorUniverse::default_universe(), 260, 7);
    let first = run_dynamic_bl(&short, &small, &LstmViewGenerator).map_err(|e| e.to_string())?;
    let second = run_dynamic_bl(&short, &small, &LstmViewGenerator).map_err(|e| e.to_string())?;
    ensure(artifacts(&first)? == artifacts(&second)?, || {
        "dynamic artifacts differ between runs".into()
    })?;
    Ok(format!(
        "wealth identity gaps {static_gap:.1e} (static) / {dynamic_gap:.1e} (dynamic); reruns byte-identical; full {}-round dynamic run {:.1}s",
        dynamic.rounds.len(),
        elapsed.as_secs_f64()
    ))
}

// 12 ---------------------------------------------------------------------

fn printed_view_fixture() -> Outcome {
    let fifth = 1.0 / 5.0;
    #[rustfmt::skip]
    let printed = DMatrix::from_row_slice(3, 20, &[
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, fifth, fifth, fifth, fifth, fifth, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
    ]);
    let universe = FactorUniverse::default_universe();
    let sigma = CovEstimate::from_matrix(DMatrix::identity(20, 20) * 1e-4);
    let views = build_views(&printed_example_views(), &universe, &sigma, STATIC_TAU).map_err(|e| e.to_string())?;
    ensure(views.p == printed, || format!("P differs:\n{}", views.p))?;
    ensure(views.q.as_slice() == [0.01, 0.01, 0.02], || {
        format!("q = {:?}", views.q.as_slice())
    })?;
    Ok("P (3 x 20) and q = (0.01, 0.01, 0.02) match exactly".into())
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("allocator-oracle agreement", allocator_oracle),
        ("Black-Litterman algebraic oracle", bl_algebraic_oracle),
        ("Black-Litterman limits", bl_limits),
        ("risk-aversion weight ratios", lambda_ratios),
        ("reverse-optimization inverse pair", inverse_pair),
        ("sequence-model gradient check and toy training", sequence_model_checks),
        ("no-look-ahead audit", no_lookahead),
        ("dataset shape", dataset_shape),
        ("shrinkage properties", shrinkage_properties),
        ("scale invariance", scale_invariance),
        ("accounting and determinism", accounting_and_determinism),
        ("printed view matrix", printed_view_fixture),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
