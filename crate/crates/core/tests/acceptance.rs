//! Acceptance criteria. Every test prints one `PASS`/`FAIL` line to stderr
//! (written directly, so it shows even when libtest captures output).
//!
//! Criterion 6 trains three generators for 20k iterations each. It runs
//! only when `REGIONNORM_FULL_BUDGET=1`; alternatively
//! `REGIONNORM_TREND_CSV=<ablation.csv>` checks the table of a finished run
//! of `configs/desk_trend.txt`. Otherwise it reports `SKIP`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use regionnorm::inpaintnet::{
    checkpoint, discriminator_loss, generator_adv_loss, AdvKind, Architecture, Generator, GeneratorConfig,
};
use regionnorm::masks::CoverageInterval;
use regionnorm::metrics::{gaussian_taps, psnr, ssim, Image};
use regionnorm::norm::{
    batch_norm, instance_norm, region_normalize, rn_b_forward, rn_l_forward, shift_report, spatial_response,
    threshold_mask, BnMode, RnlWeights, RunningStats, DEFAULT_EPS,
};
use regionnorm::pipeline::{
    run_ablation, run_eval, run_train, DataSource, EvalOptions, EvalOutcome, ExperimentConfig, MaskMode,
    SyntheticDatasetSpec, SyntheticKind,
};
use regionnorm::tensor::gradcheck::{check_gradients, GradCheckConfig, GradCheckReport};
use regionnorm::tensor::RegionSelector;
use regionnorm::{RegionMask, Result, Shape, Tape, Tensor, Var};

fn report(id: u32, name: &str, passed: bool, detail: &str) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    let line = format!("[acceptance] criterion {id} ({name}): {verdict} - {detail}\n");
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(passed, "criterion {id} ({name}) failed: {detail}");
}

fn skip(id: u32, name: &str, why: &str) {
    let line = format!("[acceptance] criterion {id} ({name}): SKIP - {why}\n");
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

// ---------------------------------------------------------------- inputs

fn randn(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

/// Moves every value at least `margin` away from `kink`.
fn away_from(t: &Tensor<f64>, kink: f64, margin: f64) -> Tensor<f64> {
    t.map(|v| {
        let d = v - kink;
        if d.abs() >= margin {
            v
        } else if d >= 0.0 {
            kink + margin + d
        } else {
            kink - margin + d
        }
    })
}

/// Binary mask with both regions present.
fn random_mask(h: usize, w: usize, rng: &mut ChaCha8Rng) -> RegionMask {
    loop {
        let p = rng.gen_range(0.2..0.8);
        let bits: Vec<u8> = (0..h * w).map(|_| u8::from(rng.gen_bool(p))).collect();
        if bits.contains(&0) && bits.contains(&1) {
            return RegionMask::from_bits(h, w, bits).unwrap();
        }
    }
}

/// Channel values at least 0.1 apart at every pixel, so no finite-difference
/// step swaps a channel max-pool argmax.
fn spaced_channels(s: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut data = vec![0.0; s.numel()];
    for n in 0..s.n {
        for i in 0..s.plane() {
            let mut levels: Vec<f64> = (0..s.c).map(|c| c as f64 * 0.3 - 0.45).collect();
            for c in (1..s.c).rev() {
                levels.swap(c, rng.gen_range(0..=c));
            }
            for c in 0..s.c {
                data[(n * s.c + c) * s.plane() + i] = levels[c] + rng.gen_range(-0.1..0.1);
            }
        }
    }
    Tensor::from_vec(s, data).unwrap()
}

/// Weighted sum with fixed random weights; plain sums of normalized
/// outputs are constant and would make the check vacuous.
fn project<'t>(y: Var<'t, f64>, weights: &Tensor<f64>) -> Result<Var<'t, f64>> {
    y.mul(y.tape().constant(weights.clone()))?.sum()
}

// ------------------------------------------------------ criterion 1

const SEEDS: u64 = 20;

struct OpSummary {
    name: &'static str,
    seeds: u64,
    checked: usize,
    max_rel: f64,
    failure: Option<String>,
}

fn run_op(name: &'static str, mut case: impl FnMut(&mut ChaCha8Rng) -> Result<GradCheckReport>) -> OpSummary {
    let mut s = OpSummary {
        name,
        seeds: 0,
        checked: 0,
        max_rel: 0.0,
        failure: None,
    };
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        match case(&mut rng) {
            Ok(r) => {
                s.seeds += 1;
                s.checked += r.checked;
                s.max_rel = s.max_rel.max(r.max_rel_err);
                if !r.passed() && s.failure.is_none() {
                    s.failure = Some(format!("seed {seed}: {} failures, worst {:?}", r.failures, r.worst));
                }
            }
            Err(e) => {
                s.failure.get_or_insert(format!("seed {seed}: {e}"));
            }
        }
    }
    s
}

fn cfg() -> GradCheckConfig {
    GradCheckConfig::default()
}

/// RN-L weights whose response map has a gap of at least `margin` around
/// the threshold, so finite-difference steps never flip a mask bit.
fn rnl_case(rng: &mut ChaCha8Rng, margin: f64) -> (Vec<Tensor<f64>>, f64) {
    loop {
        let x = spaced_channels(Shape::new(2, 3, 5, 5), rng);
        let inputs = vec![
            x,
            Tensor::randn(Shape::new(1, 2, 3, 3), 0.7, rng),
            Tensor::randn(Shape::scalar(), 0.3, rng),
            Tensor::randn(Shape::new(1, 1, 3, 3), 0.5, rng),
            Tensor::randn(Shape::scalar(), 0.3, rng).map(|v| v + 1.0),
            Tensor::randn(Shape::new(1, 1, 3, 3), 0.5, rng),
            Tensor::randn(Shape::scalar(), 0.3, rng),
        ];
        let tape = Tape::new();
        let v: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let response = spatial_response(v[0], v[1], v[2]).unwrap().value();
        let mut sorted = response.to_f64_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let best = (n / 5..4 * n / 5)
            .map(|i| (sorted[i + 1] - sorted[i], 0.5 * (sorted[i + 1] + sorted[i])))
            .max_by(|a, b| a.0.total_cmp(&b.0));
        if let Some((gap, t)) = best {
            if gap / 2.0 > margin && t > 0.0 && t < 1.0 {
                return (inputs, t);
            }
        }
    }
}

#[test]
fn criterion_1_gradient_suite() {
    let start = Instant::now();
    let mut ops = Vec::new();

    ops.push(run_op("conv2d", |rng| {
        let (stride, pad, dil) = (rng.gen_range(1..=2), rng.gen_range(0..=2), rng.gen_range(1..=2));
        let x = randn(Shape::new(2, 2, 6, 6), rng);
        let w = randn(Shape::new(3, 2, 3, 3), rng);
        let b = randn(Shape::new(1, 3, 1, 1), rng);
        let p = {
            let t = Tape::new();
            let y = t.constant(x.clone()).conv2d(t.constant(w.clone()), None, stride, pad, dil)?;
            randn(y.shape(), rng)
        };
        check_gradients(&[x, w, b], cfg(), |_, v| project(v[0].conv2d(v[1], Some(v[2]), stride, pad, dil)?, &p))
    }));
    ops.push(run_op("conv_transpose2d", |rng| {
        let (stride, pad) = (rng.gen_range(1..=2), rng.gen_range(0..=1));
        let x = randn(Shape::new(2, 3, 4, 4), rng);
        let w = randn(Shape::new(3, 2, 4, 4), rng);
        let b = randn(Shape::new(1, 2, 1, 1), rng);
        let p = {
            let t = Tape::new();
            let y = t.constant(x.clone()).conv_transpose2d(t.constant(w.clone()), None, stride, pad)?;
            randn(y.shape(), rng)
        };
        check_gradients(&[x, w, b], cfg(), |_, v| project(v[0].conv_transpose2d(v[1], Some(v[2]), stride, pad)?, &p))
    }));
    ops.push(run_op("channel_max_pool", |rng| {
        let x = spaced_channels(Shape::new(2, 4, 4, 4), rng);
        let p = randn(Shape::new(2, 1, 4, 4), rng);
        check_gradients(&[x], cfg(), |_, v| project(v[0].channel_max_pool()?, &p))
    }));
    ops.push(run_op("channel_avg_pool", |rng| {
        let x = randn(Shape::new(2, 3, 4, 4), rng);
        let p = randn(Shape::new(2, 1, 4, 4), rng);
        check_gradients(&[x], cfg(), |_, v| project(v[0].channel_avg_pool()?, &p))
    }));
    ops.push(run_op("concat_channels", |rng| {
        let a = randn(Shape::new(2, 1, 3, 3), rng);
        let b = randn(Shape::new(2, 2, 3, 3), rng);
        let p = randn(Shape::new(2, 3, 3, 3), rng);
        check_gradients(&[a, b], cfg(), |_, v| project(Var::concat_channels(&[v[0], v[1]])?, &p))
    }));
    ops.push(run_op("add/sub/mul (broadcast)", |rng| {
        let x = randn(Shape::new(2, 3, 3, 3), rng);
        let y = randn(Shape::new(1, 3, 1, 1), rng);
        let z = randn(Shape::new(2, 1, 3, 3), rng);
        let p = randn(Shape::new(2, 3, 3, 3), rng);
        check_gradients(&[x, y, z], cfg(), |_, v| project(v[0].add(v[1])?.mul(v[2])?.sub(v[1])?, &p))
    }));
    ops.push(run_op("scale/add_scalar/neg", |rng| {
        let x = randn(Shape::new(1, 2, 3, 3), rng);
        let p = randn(x.shape(), rng);
        check_gradients(&[x], cfg(), |_, v| project(v[0].scale(-1.7)?.add_scalar(0.3)?.neg()?, &p))
    }));
    ops.push(run_op("relu", |rng| {
        let x = away_from(&randn(Shape::new(2, 2, 4, 4), rng), 0.0, 0.01);
        let p = randn(x.shape(), rng);
        check_gradients(&[x], cfg(), |_, v| project(v[0].relu()?, &p))
    }));
    ops.push(run_op("leaky_relu", |rng| {
        let x = away_from(&randn(Shape::new(2, 2, 4, 4), rng), 0.0, 0.01);
        let p = randn(x.shape(), rng);
        check_gradients(&[x], cfg(), |_, v| project(v[0].leaky_relu(0.2)?, &p))
    }));
    ops.push(run_op("abs", |rng| {
        let x = away_from(&randn(Shape::new(2, 2, 4, 4), rng), 0.0, 0.01);
        let p = randn(x.shape(), rng);
        check_gradients(&[x], cfg(), |_, v| project(v[0].abs()?, &p))
    }));
    ops.push(run_op("sigmoid", |rng| {
        let x = randn(Shape::new(2, 2, 4, 4), rng);
        let p = randn(x.shape(), rng);
        check_gradients(&[x], cfg(), |_, v| project(v[0].sigmoid()?, &p))
    }));
    ops.push(run_op("tanh", |rng| {
        let x = randn(Shape::new(2, 2, 4, 4), rng);
        let p = randn(x.shape(), rng);
        check_gradients(&[x], cfg(), |_, v| project(v[0].tanh()?, &p))
    }));
    ops.push(run_op("softplus", |rng| {
        let x = randn(Shape::new(2, 2, 4, 4), rng);
        let p = randn(x.shape(), rng);
        check_gradients(&[x], cfg(), |_, v| project(v[0].softplus()?, &p))
    }));
    ops.push(run_op("sum/mean", |rng| {
        let x = randn(Shape::new(2, 2, 3, 3), rng);
        check_gradients(&[x], cfg(), |_, v| v[0].mul(v[0])?.mean()?.add(v[0].sum()?))
    }));
    ops.push(run_op("masked_moments", |rng| {
        let x = randn(Shape::new(2, 3, 4, 4), rng);
        let masks = vec![random_mask(4, 4, rng), random_mask(4, 4, rng)];
        let sel = if rng.gen_bool(0.5) { RegionSelector::Inside } else { RegionSelector::Outside };
        let (pm, pv) = (randn(Shape::new(2, 3, 1, 1), rng), randn(Shape::new(2, 3, 1, 1), rng));
        check_gradients(&[x], cfg(), |_, v| {
            let (m, var) = v[0].masked_moments(&masks, sel)?;
            project(m, &pm)?.add(project(var, &pv)?)
        })
    }));
    ops.push(run_op("region_normalize", |rng| {
        let x = randn(Shape::new(2, 3, 5, 5), rng);
        let masks = vec![random_mask(5, 5, rng), random_mask(5, 5, rng)];
        let p = randn(x.shape(), rng);
        check_gradients(&[x], cfg(), |_, v| project(region_normalize(v[0], &masks, DEFAULT_EPS)?.0, &p))
    }));
    ops.push(run_op("rn_b_forward", |rng| {
        let x = randn(Shape::new(2, 3, 5, 5), rng);
        let g = randn(Shape::new(2, 3, 1, 1), rng);
        let b = randn(Shape::new(2, 3, 1, 1), rng);
        let masks = vec![random_mask(5, 5, rng)];
        let p = randn(x.shape(), rng);
        check_gradients(&[x, g, b], cfg(), |_, v| project(rn_b_forward(v[0], &masks, v[1], v[2], DEFAULT_EPS)?, &p))
    }));
    ops.push(run_op("rn_l_forward (mask-stability guard)", |rng| {
        let (inputs, t) = rnl_case(rng, 1e-2);
        let p = randn(inputs[0].shape(), rng);
        check_gradients(&inputs, cfg(), |_, v| {
            let w = RnlWeights {
                response_weight: v[1],
                response_bias: v[2],
                gamma_weight: v[3],
                gamma_bias: v[4],
                beta_weight: v[5],
                beta_bias: v[6],
            };
            project(rn_l_forward(v[0], &w, t, false, DEFAULT_EPS)?.0, &p)
        })
    }));
    ops.push(run_op("instance_norm", |rng| {
        let x = randn(Shape::new(2, 3, 4, 4), rng);
        let g = randn(Shape::new(1, 3, 1, 1), rng);
        let b = randn(Shape::new(1, 3, 1, 1), rng);
        let p = randn(x.shape(), rng);
        check_gradients(&[x, g, b], cfg(), |_, v| project(instance_norm(v[0], v[1], v[2], DEFAULT_EPS)?, &p))
    }));
    ops.push(run_op("batch_norm (train)", |rng| {
        let x = randn(Shape::new(3, 2, 3, 3), rng);
        let g = randn(Shape::new(1, 2, 1, 1), rng);
        let b = randn(Shape::new(1, 2, 1, 1), rng);
        let p = randn(x.shape(), rng);
        check_gradients(&[x, g, b], cfg(), |_, v| {
            let mut rs = RunningStats::new(2);
            project(batch_norm(v[0], v[1], v[2], DEFAULT_EPS, &mut rs, BnMode::Train)?, &p)
        })
    }));
    ops.push(run_op("l1_loss", |rng| {
        let target = randn(Shape::new(2, 3, 4, 4), rng);
        let diff = away_from(&randn(target.shape(), rng), 0.0, 0.01);
        let pred = Tensor::from_vec(
            target.shape(),
            target.data().iter().zip(diff.data()).map(|(a, b)| a + b).collect(),
        )?;
        check_gradients(&[pred, target], cfg(), |_, v| v[0].l1_loss(v[1]))
    }));
    ops.push(run_op("composite", |rng| {
        let x = randn(Shape::new(2, 3, 4, 4), rng);
        let original = randn(x.shape(), rng);
        let masks = vec![random_mask(4, 4, rng), random_mask(4, 4, rng)];
        let p = randn(x.shape(), rng);
        check_gradients(&[x], cfg(), |_, v| project(v[0].composite_with(&original, &masks)?, &p))
    }));
    for kind in [AdvKind::Hinge, AdvKind::NonSaturating] {
        let name = if kind == AdvKind::Hinge { "hinge losses" } else { "non-saturating losses" };
        ops.push(run_op(name, |rng| {
            let real = away_from(&away_from(&randn(Shape::new(2, 1, 3, 3), rng), 1.0, 0.01), -1.0, 0.01);
            let fake = away_from(&away_from(&randn(Shape::new(2, 1, 3, 3), rng), 1.0, 0.01), -1.0, 0.01);
            check_gradients(&[real, fake], cfg(), |_, v| {
                discriminator_loss(kind, v[0], v[1])?.add(generator_adv_loss(kind, v[1])?)
            })
        }));
    }

    let elapsed = start.elapsed();
    let failures: Vec<String> = ops
        .iter()
        .filter_map(|o| o.failure.as_ref().map(|f| format!("{}: {f}", o.name)))
        .collect();
    let all_seeds = ops.iter().all(|o| o.seeds >= SEEDS);
    let max_rel = ops.iter().map(|o| o.max_rel).fold(0.0, f64::max);
    let checked: usize = ops.iter().map(|o| o.checked).sum();
    let ok = failures.is_empty() && all_seeds && within(elapsed, 300.0);
    report(
        1,
        "gradient suite",
        ok,
        &format!(
            "{} ops x {SEEDS} seeds, {checked} elements, max rel err {max_rel:.2e} (< 1e-6, floor 1e-9), {:.1}s (< 300s){}",
            ops.len(),
            elapsed.as_secs_f64(),
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    );
}

// ------------------------------------------------------ criterion 2

#[test]
fn criterion_2_moment_shift_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for _ in 0..1000 {
        let (h, w) = (rng.gen_range(2..12), rng.gen_range(2..12));
        let plane: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.0..255.0)).collect();
        let mask = random_mask(h, w, &mut rng);
        let fill = rng.gen_range(0.0..=255.0);
        let r = shift_report(&plane, &mask, fill).unwrap();
        // oracle: moments of the filled map computed here from scratch
        let filled: Vec<f64> = plane
            .iter()
            .zip(mask.bits())
            .map(|(&v, &b)| if b == 1 { v } else { fill })
            .collect();
        let n = filled.len() as f64;
        let mean = filled.iter().sum::<f64>() / n;
        let sd = (filled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        for err in [
            (r.mu2_analytic - mean).abs(),
            (r.sigma2_analytic - sd).abs(),
            (r.mu2_empirical - mean).abs(),
            (r.sigma2_empirical - sd).abs(),
        ] {
            worst = worst.max(err);
        }
        cases += 1;
    }
    let example = RegionMask::from_bits(2, 2, vec![1, 1, 1, 0]).unwrap();
    let r = shift_report(&[0.0, 0.0, 0.0, 7.0], &example, 255.0).unwrap();
    let example_ok = r.mu2_analytic == 63.75
        && r.mu2_empirical == 63.75
        && (r.sigma2_analytic.powi(2) - 12192.1875).abs() < 1e-9
        && (r.sigma2_empirical.powi(2) - 12192.1875).abs() < 1e-9;
    let elapsed = start.elapsed();
    report(
        2,
        "moment-shift oracle",
        worst < 1e-9 && example_ok && within(elapsed, 10.0),
        &format!(
            "{cases} triples, max |analytic - empirical| {worst:.2e} (< 1e-9); worked example mu2={} sigma2^2={:.4}; {:.2}s (< 10s)",
            r.mu2_analytic,
            r.sigma2_analytic.powi(2),
            elapsed.as_secs_f64()
        ),
    );
}

// ------------------------------------------------------ criterion 3

#[test]
fn criterion_3_degeneracy() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let s = Shape::new(rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(2..9), rng.gen_range(2..9));
        let x = Tensor::<f64>::randn(s, rng.gen_range(0.1..10.0), &mut rng);
        let tape = Tape::new();
        let xv = tape.constant(x);
        let (rn, _) = region_normalize(xv, &[RegionMask::ones(s.h, s.w)], DEFAULT_EPS).unwrap();
        let ones = tape.constant(Tensor::ones(Shape::new(1, s.c, 1, 1)));
        let zeros = tape.constant(Tensor::zeros(Shape::new(1, s.c, 1, 1)));
        let inn = instance_norm(xv, ones, zeros, DEFAULT_EPS).unwrap();
        worst = worst.max(rn.value().max_abs_diff(&inn.value()));
    }
    let elapsed = start.elapsed();
    report(
        3,
        "RN with one region equals IN",
        worst < 1e-6 && within(elapsed, 10.0),
        &format!("100 tensors, max elementwise diff {worst:.2e} (< 1e-6), {:.2}s (< 10s)", elapsed.as_secs_f64()),
    );
}

// ------------------------------------------------------ criterion 4

#[test]
fn criterion_4_region_decoupling() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut violations = 0;
    for case in 0..100 {
        let s = Shape::new(rng.gen_range(1..3), rng.gen_range(1..5), rng.gen_range(3..9), rng.gen_range(3..9));
        let x = Tensor::<f64>::randn(s, 1.0, &mut rng);
        let masks: Vec<RegionMask> = (0..s.n).map(|_| random_mask(s.h, s.w, &mut rng)).collect();
        let gamma = Tensor::<f64>::randn(Shape::new(2, s.c, 1, 1), 1.0, &mut rng);
        let beta = Tensor::<f64>::randn(Shape::new(2, s.c, 1, 1), 1.0, &mut rng);
        let run = |x: &Tensor<f64>| {
            let t = Tape::new();
            rn_b_forward(t.constant(x.clone()), &masks, t.constant(gamma.clone()), t.constant(beta.clone()), DEFAULT_EPS)
                .unwrap()
                .value()
        };
        let base = run(&x);
        // alternate: perturb holes and check valid pixels, then the reverse
        let perturbed_bit = (case % 2) as u8;
        let mut data = x.data().to_vec();
        for (i, v) in data.iter_mut().enumerate() {
            let n = i / (s.c * s.plane());
            if masks[n].bits()[i % s.plane()] == perturbed_bit {
                *v += rng.gen_range(-5.0..5.0);
            }
        }
        let moved = run(&Tensor::from_vec(s, data).unwrap());
        for i in 0..s.numel() {
            let n = i / (s.c * s.plane());
            if masks[n].bits()[i % s.plane()] != perturbed_bit && base.data()[i].to_bits() != moved.data()[i].to_bits() {
                violations += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    report(
        4,
        "region decoupling",
        violations == 0 && within(elapsed, 10.0),
        &format!(
            "100 cases (holes perturbed in 50, valid pixels in 50), {violations} untouched pixels changed, {:.2}s (< 10s)",
            elapsed.as_secs_f64()
        ),
    );
}

// ------------------------------------------------------ criterion 5

#[test]
fn criterion_5_shift_monotonicity() {
    let start = Instant::now();
    let n = 1000;
    let (mu, sigma, fill) = (80.0, 20.0, 255.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut shifts = Vec::new();
    for k in 1..=6 {
        let n_m = n * k / 10;
        let n_u = n - n_m;
        // known region standardized to exactly (mu, sigma)
        let raw: Vec<f64> = (0..n_u).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = raw.iter().sum::<f64>() / n_u as f64;
        let sd = (raw.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n_u as f64).sqrt();
        let mut plane: Vec<f64> = raw.iter().map(|v| mu + sigma * (v - m) / sd).collect();
        plane.extend(std::iter::repeat_n(0.0, n_m));
        let bits: Vec<u8> = (0..n).map(|i| u8::from(i < n_u)).collect();
        let mask = RegionMask::from_bits(1, n, bits).unwrap();
        let r = shift_report(&plane, &mask, fill).unwrap();
        shifts.push((r.mu2_analytic - r.mu_3u).abs());
    }
    let increasing = shifts.windows(2).all(|w| w[1] > w[0]);
    let elapsed = start.elapsed();
    let listed: Vec<String> = shifts.iter().map(|s| format!("{s:.2}")).collect();
    report(
        5,
        "shift monotonicity",
        increasing && within(elapsed, 1.0),
        &format!(
            "|mu2 - mu_3u| over n_m/n = 0.1..0.6: [{}], strictly increasing: {increasing}, {:.3}s (< 1s)",
            listed.join(", "),
            elapsed.as_secs_f64()
        ),
    );
}

// ------------------------------------------------------ criterion 6

fn trend_verdict(rows: &[(String, f64)]) -> (bool, String) {
    let get = |name: &str| rows.iter().find(|(a, _)| a == name).map(|(_, p)| *p);
    match (get("arch5"), get("baseline"), get("bn")) {
        (Some(rn), Some(inn), Some(bn)) => (
            rn >= inn + 0.2 && rn >= bn,
            format!(
                "eval PSNR arch5 {rn:.3} dB, baseline (IN) {inn:.3} dB, BN {bn:.3} dB; need arch5 >= IN + 0.2 ({:+.3}) and arch5 >= BN ({:+.3})",
                rn - inn,
                rn - bn
            ),
        ),
        _ => (false, "ablation table lacks arch5, baseline or bn".into()),
    }
}

fn read_ablation(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push((rec[0].to_string(), rec[4].parse().unwrap_or(f64::NAN)));
    }
    Ok(out)
}

#[test]
fn criterion_6_desk_scale_training_trend() {
    let name = "desk-scale training trend";
    if std::env::var("REGIONNORM_FULL_BUDGET").as_deref() == Ok("1") {
        let start = Instant::now();
        let mut cfg = ExperimentConfig::load(repo_root().join("configs/desk_trend.txt")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        cfg.output_dir = dir.path().to_path_buf();
        let archs = [Architecture::Arch5, Architecture::Baseline, Architecture::Bn];
        let rows = run_ablation(&cfg, &archs, "ablation.csv").unwrap();
        let rows: Vec<(String, f64)> = rows.iter().map(|r| (r.architecture.name().to_string(), r.psnr)).collect();
        let (ok, detail) = trend_verdict(&rows);
        report(6, name, ok, &format!("{detail}; {:.0}s", start.elapsed().as_secs_f64()));
    } else if let Ok(path) = std::env::var("REGIONNORM_TREND_CSV") {
        let rows = read_ablation(Path::new(&path)).unwrap();
        let (ok, detail) = trend_verdict(&rows);
        report(6, name, ok, &format!("{detail} (from {path})"));
    } else {
        skip(
            6,
            name,
            "3 x 20k iterations; set REGIONNORM_FULL_BUDGET=1 to train, or REGIONNORM_TREND_CSV to check a finished run",
        );
    }
}

// ------------------------------------------------------ criterion 7

#[test]
fn criterion_7_threshold_sweep() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let gcfg = GeneratorConfig {
        base_channels: 8,
        image_size: 32,
        resblock_count: 2,
        ..Architecture::Arch5.config()
    };
    gcfg.validate().unwrap();
    let mut generator = Generator::<f32>::new(gcfg, 7).unwrap();
    // make the first RN-L response non-trivial so thresholds bite
    let spec = SyntheticDatasetSpec { count: 4, size: 32, kind: SyntheticKind::Mixed, seed: 7 };
    {
        use regionnorm::tensor::Module;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for p in generator.params_mut() {
            if p.name().ends_with("response.weight") {
                let v = Tensor::randn(p.value().shape(), 0.5, &mut rng);
                p.set_value(v).unwrap();
            }
        }
    }
    let ckpt = dir.path().join("fixed.ckpt");
    checkpoint::save(&generator, &ckpt).unwrap();
    let ckpt_bytes = std::fs::read(&ckpt).unwrap();
    let thresholds = vec![0.5, 0.6, 0.7, 0.8, 0.9];
    let sweep = |out: &str| {
        let opts = EvalOptions {
            checkpoint: ckpt.clone(),
            data: DataSource::Synthetic(spec),
            mask_mode: MaskMode::Irregular,
            mask_dir: None,
            intervals: vec![CoverageInterval::new(0.2, 0.3).unwrap()],
            mask_seed: 1,
            thresholds: Some(thresholds.clone()),
            out: dir.path().join(out),
        };
        match run_eval(&opts).unwrap() {
            EvalOutcome::Sweep(rows) => rows,
            EvalOutcome::Metrics(_) => unreachable!(),
        }
    };
    let rows = sweep("a.csv");
    let _ = sweep("b.csv");
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    let csv_rows = String::from_utf8(a.clone()).unwrap().lines().count() - 1;
    let complete = csv_rows == 5 && rows.iter().all(|r| r.psnr.is_finite() && r.ssim.is_finite() && r.l1.is_finite());
    let deterministic = a == b;
    let untouched = std::fs::read(&ckpt).unwrap() == ckpt_bytes;

    // fixed response map: coverage of the thresholded mask against t
    let mut g = checkpoint::load::<f32>(&ckpt).unwrap();
    let img = spec.image(0);
    let out = g.infer(&img, &[RegionMask::ones(32, 32)]).unwrap();
    let response = &out.diagnostics[0].rnl.response;
    let coverage: Vec<f64> = thresholds
        .iter()
        .map(|&t| threshold_mask(response, t).unwrap()[0].coverage_ratio())
        .collect();
    let fixed_monotone = coverage.windows(2).all(|w| w[1] >= w[0]) && coverage[4] > coverage[0];
    let sweep_monotone = rows.windows(2).all(|w| w[1].rnl_coverage_first >= w[0].rnl_coverage_first);
    let elapsed = start.elapsed();
    let cov: Vec<String> = coverage.iter().map(|c| format!("{c:.3}")).collect();
    report(
        7,
        "threshold sweep harness",
        complete && deterministic && untouched && fixed_monotone && sweep_monotone && within(elapsed, 300.0),
        &format!(
            "{csv_rows} rows, byte-identical rerun: {deterministic}, checkpoint untouched: {untouched}, coverage at t=0.5..0.9 [{}] monotone: {fixed_monotone}, {:.1}s (< 300s)",
            cov.join(", "),
            elapsed.as_secs_f64()
        ),
    );
}

// ------------------------------------------------------ criterion 8

/// Direct windowed double loop, written independently of the library.
fn ssim_reference(a: &Image, b: &Image) -> f64 {
    let (x, y) = (a.luma(), b.luma());
    let g = gaussian_taps(11, 1.5);
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let w = a.width;
    let mut total = 0.0;
    let mut count = 0.0;
    for top in 0..=a.height - 11 {
        for left in 0..=a.width - 11 {
            let mut s = [0.0f64; 5];
            for i in 0..11 {
                for j in 0..11 {
                    let k = g[i] * g[j];
                    let (p, q) = (x[(top + i) * w + left + j], y[(top + i) * w + left + j]);
                    s[0] += k * p;
                    s[1] += k * q;
                    s[2] += k * p * p;
                    s[3] += k * q * q;
                    s[4] += k * p * q;
                }
            }
            let (mx, my) = (s[0], s[1]);
            let (vx, vy, cov) = (s[2] - mx * mx, s[3] - my * my, s[4] - mx * my);
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1.0;
        }
    }
    total / count
}

#[test]
fn criterion_8_ssim_and_psnr_oracles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let mut img = || Image::new(16, 16, 3, (0..768).map(|_| rng.gen_range(0.0..255.0)).collect()).unwrap();
        let (a, b) = (img(), img());
        worst = worst.max((ssim(&a, &b).unwrap() - ssim_reference(&a, &b)).abs());
    }
    let flat = |v: f64| Image::new(16, 16, 3, vec![v; 768]).unwrap();
    let p16 = psnr(&flat(100.0), &flat(116.0)).unwrap();
    let p255 = psnr(&flat(0.0), &flat(255.0)).unwrap();
    let elapsed = start.elapsed();
    report(
        8,
        "SSIM and PSNR oracles",
        worst < 1e-6 && (p16 - 24.048).abs() < 1e-3 && p255.abs() < 1e-3 && within(elapsed, 10.0),
        &format!(
            "50 pairs, max |fast - brute force| {worst:.2e} (< 1e-6); PSNR diff 16 = {p16:.4} dB, diff 255 = {p255:.4} dB; {:.2}s (< 10s)",
            elapsed.as_secs_f64()
        ),
    );
}

// ------------------------------------------------------ criterion 9

#[test]
fn criterion_9_training_determinism() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let mut cfg = ExperimentConfig::parse(
            "architecture=arch5\nbase_channels=16\nresblock_count=2\nsynthetic_count=60\neval_count=10\niterations=500\nadv_weight=0.1\nseed=9\nmask_seed=9\neval_every=250\n",
        )
        .unwrap();
        cfg.output_dir = dir.path().join(name);
        run_train(&cfg).unwrap();
        let read = |f: &str| std::fs::read(cfg.output_dir.join(f)).unwrap();
        (read("metrics.csv"), read("final.ckpt"), read("training_curve.csv"))
    };
    let a = run("a");
    let b = run("b");
    let same = a == b;
    let elapsed = start.elapsed();
    report(
        9,
        "training determinism",
        same && within(elapsed, 600.0),
        &format!(
            "two 500-iteration runs (64px, base 16, 2 resblocks, adversarial on): metrics.csv, checkpoint and curve byte-identical: {same} ({} + {} bytes), {:.0}s (< 600s)",
            a.0.len(),
            a.1.len(),
            elapsed.as_secs_f64()
        ),
    );
}
