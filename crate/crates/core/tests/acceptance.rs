//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on failure.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use meterread::ctc::{brute_force_prob, ctc_loss, softmax, Label, ProbMatrix};
use meterread::geometry::{offsets_to_homography, solve_dlt, Correspondence, Homography, Quad};
use meterread::image::{BinaryMask, ImageBuffer, Point2, ScoreMap};
use meterread::losses::{
    bce_on_selection, component_loss, dice_loss, mse_offsets, ohem_selection, DEFAULT_LAMBDA,
    DEFAULT_NEG_RATIO,
};
use meterread::metrics::{avg_reference_error, avg_relative_error, EvalRecord};
use meterread::pipeline::{run_scene, PipelineConfig, SceneInput};
use meterread::postproc::{blobs, hough_line, thin};
use meterread::reading::compute_reading;
use meterread::synthmeter::{random_spec, render, SpecRanges};
use meterread::warp::warp_image;
use meterread::QuadOffsets;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn synthetic_end_to_end() -> Outcome {
    let start = Instant::now();
    let cfg = PipelineConfig::default();
    let ranges = SpecRanges::default();
    let mut errs = Vec::new();
    for seed in 0..200u64 {
        let spec = random_spec(seed, &ranges).expect("spec");
        let scene = render(&spec).expect("render");
        let input = SceneInput::from_synth(format!("scene_{seed}"), &scene);
        match run_scene(&input, &cfg) {
            Ok(r) => errs.push(relative(r.value, scene.annotation.true_reading)),
            Err(e) => return outcome(false, format!("seed {seed}: {e}")),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let mean = errs.iter().sum::<f64>() / errs.len() as f64 * 100.0;
    let max = errs.iter().cloned().fold(0.0, f64::max) * 100.0;
    outcome(
        mean < 0.5 && max < 2.0 && secs < 30.0,
        format!("200 scenes: mean {mean:.4}% (< 0.5), max {max:.4}% (< 2), {secs:.2} s (< 30)"),
    )
}

fn alignment_round_trip() -> Outcome {
    let cfg = PipelineConfig::default();
    let ranges = SpecRanges::distorted(0.15);
    let mut errs = Vec::new();
    let mut worst_h: f64 = 0.0;
    for seed in 10_000..10_100u64 {
        let spec = random_spec(seed, &ranges).expect("spec");
        let scene = render(&spec).expect("render");
        let ann = &scene.annotation;
        let recovered =
            offsets_to_homography(ann.image_size, ann.image_size, &ann.offsets).expect("dlt");
        worst_h = worst_h.max(recovered.max_abs_diff(&ann.h_gt));
        let input = SceneInput::from_synth(format!("scene_{seed}"), &scene);
        match run_scene(&input, &cfg) {
            Ok(r) => errs.push(relative(r.value, ann.true_reading)),
            Err(e) => return outcome(false, format!("seed {seed}: {e}")),
        }
    }
    let mean = errs.iter().sum::<f64>() / errs.len() as f64 * 100.0;
    outcome(
        mean < 1.0 && worst_h <= 1e-9,
        format!(
            "100 distorted scenes: mean {mean:.4}% (< 1), max |H - h_gt| {worst_h:.2e} (<= 1e-9)"
        ),
    )
}

fn random_quad(r: &mut ChaCha8Rng, jitter: f64) -> [Point2; 4] {
    loop {
        let base = [(0.0, 0.0), (100.0, 0.0), (100.0, 100.0), (0.0, 100.0)];
        let q = base.map(|(x, y)| {
            Point2::new(
                x + r.random_range(-jitter..jitter),
                y + r.random_range(-jitter..jitter),
            )
        });
        if Quad::new(q).is_ok() {
            return q;
        }
    }
}

fn dlt_exactness() -> Outcome {
    let mut r = rng(1);
    let instances: Vec<[Correspondence; 4]> = (0..1000)
        .map(|_| {
            let src = random_quad(&mut r, 30.0);
            let dst = random_quad(&mut r, 30.0);
            std::array::from_fn(|i| Correspondence::new(src[i], dst[i]))
        })
        .collect();
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for corrs in &instances {
        let h = match solve_dlt(corrs) {
            Ok(h) => h,
            Err(e) => return outcome(false, format!("solve failed: {e}")),
        };
        for c in corrs {
            worst = worst.max(h.project(c.src).expect("finite").distance(c.dst));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-9 && secs < 1.0,
        format!("1000 instances: max residual {worst:.2e} px (< 1e-9), {secs:.3} s (< 1)"),
    )
}

fn warp_identity() -> Outcome {
    let mut r = rng(2);
    for i in 0..50 {
        let (w, h) = (r.random_range(1..40), r.random_range(1..40));
        let c = if r.random_bool(0.5) { 1 } else { 3 };
        let data = (0..w * h * c).map(|_| r.random_range(0.0..=1.0)).collect();
        let img = ImageBuffer::new(w, h, c, data).expect("image");
        let out = warp_image(&img, &Homography::identity(), w, h).expect("warp");
        if out.data() != img.data() {
            return outcome(false, format!("image {i} ({w}x{h}x{c}) differs"));
        }
    }
    outcome(true, "50 images bit-identical")
}

fn random_probs(r: &mut ChaCha8Rng, t: usize, c: usize) -> ProbMatrix {
    let rows = (0..t)
        .map(|_| {
            softmax(
                &(0..c)
                    .map(|_| r.random_range(-3.0..3.0))
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    ProbMatrix::new(rows).expect("rows sum to one")
}

fn random_label(r: &mut ChaCha8Rng, t: usize, c: usize, blank: usize) -> Label {
    loop {
        let len = r.random_range(1..=t);
        let idx: Vec<usize> = (0..len)
            .map(|_| {
                let k = r.random_range(0..c - 1);
                if k >= blank {
                    k + 1
                } else {
                    k
                }
            })
            .collect();
        let label = Label::new(idx, blank).expect("label");
        if label.min_timesteps() <= t {
            return label;
        }
    }
}

/// Every non-blank label of length 1..=max_len over the classes except `blank`.
fn all_labels(c: usize, blank: usize, max_len: usize) -> Vec<Label> {
    let symbols: Vec<usize> = (0..c).filter(|&k| k != blank).collect();
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for prefix in &frontier {
            for &s in &symbols {
                let mut v = prefix.clone();
                v.push(s);
                out.push(Label::new(v.clone(), blank).expect("label"));
                next.push(v);
            }
        }
        frontier = next;
    }
    out
}

fn ctc_oracle() -> Outcome {
    let mut r = rng(3);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let t = r.random_range(1..=6);
        let c = r.random_range(2..=5);
        let blank = r.random_range(0..c);
        let probs = random_probs(&mut r, t, c);
        let label = random_label(&mut r, t, c, blank);
        let loss = ctc_loss(&probs, &label, blank).expect("feasible");
        let brute = brute_force_prob(&probs, &label, blank).expect("small");
        worst = worst.max(((-loss.value).exp() - brute).abs());
    }
    let mut worst_partition: f64 = 0.0;
    for _ in 0..50 {
        let t = r.random_range(1..=4);
        let c = r.random_range(2..=5);
        let blank = r.random_range(0..c);
        let probs = random_probs(&mut r, t, c);
        let mut total: f64 = (0..t).map(|i| probs.get(i, blank)).product();
        for label in all_labels(c, blank, t) {
            total += brute_force_prob(&probs, &label, blank).expect("small");
        }
        worst_partition = worst_partition.max((total - 1.0).abs());
    }
    outcome(
        worst < 1e-9 && worst_partition < 1e-9,
        format!(
            "500 instances: max |p - brute| {worst:.2e} (< 1e-9); partition max |sum - 1| {worst_partition:.2e} (< 1e-9)"
        ),
    )
}

const FD_STEP: f64 = 1e-4;

/// Largest per-entry `|a − n| / max(|a|, |n|, 1e-8)` against central differences.
fn fd_check(x: &[f64], analytic: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut buf = x.to_vec();
    for i in 0..x.len() {
        buf[i] = x[i] + FD_STEP;
        let up = f(&buf);
        buf[i] = x[i] - FD_STEP;
        let down = f(&buf);
        buf[i] = x[i];
        let n = (up - down) / (2.0 * FD_STEP);
        let a = analytic[i];
        worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-8));
    }
    worst
}

fn map(v: &[f64]) -> ScoreMap {
    ScoreMap::new(4, 4, v.to_vec()).expect("4x4")
}

fn random_mask(r: &mut ChaCha8Rng) -> BinaryMask {
    loop {
        let bits: Vec<bool> = (0..16).map(|_| r.random_bool(0.4)).collect();
        if bits.iter().any(|&b| b) {
            return BinaryMask::new(4, 4, bits).expect("4x4");
        }
    }
}

fn gradients() -> Outcome {
    let mut r = rng(4);
    let mut worst = [0.0f64; 5];
    for _ in 0..20 {
        let pred: Vec<f64> = (0..8).map(|_| r.random_range(-20.0..20.0)).collect();
        let gt = QuadOffsets::from_slice(
            &(0..8)
                .map(|_| r.random_range(-20.0..20.0))
                .collect::<Vec<_>>(),
        );
        let l = mse_offsets(&QuadOffsets::from_slice(&pred), &gt);
        worst[0] = worst[0].max(fd_check(&pred, &l.grad, |x| {
            mse_offsets(&QuadOffsets::from_slice(x), &gt).value
        }));

        let p: Vec<f64> = (0..16).map(|_| r.random_range(0.05..0.95)).collect();
        let g = ScoreMap::from_mask(&random_mask(&mut r));
        let l = dice_loss(&map(&p), &g).expect("dice");
        worst[1] = worst[1].max(fd_check(&p, &l.grad, |x| {
            dice_loss(&map(x), &g).expect("dice").value
        }));

        let pk: Vec<f64> = (0..16).map(|_| r.random_range(0.05..0.95)).collect();
        let gk = ScoreMap::from_mask(&random_mask(&mut r));
        let both: Vec<f64> = p.iter().chain(&pk).copied().collect();
        let joint = |x: &[f64]| {
            component_loss(
                &dice_loss(&map(&x[..16]), &g).expect("dice"),
                &dice_loss(&map(&x[16..]), &gk).expect("dice"),
                DEFAULT_LAMBDA,
            )
            .expect("lambda")
        };
        worst[2] = worst[2].max(fd_check(&both, &joint(&both).grad, |x| joint(x).value));

        let mask = random_mask(&mut r);
        let sel = ohem_selection(&map(&p), &mask, DEFAULT_NEG_RATIO).expect("selection");
        let l = bce_on_selection(&map(&p), &mask, &sel).expect("bce");
        worst[3] = worst[3].max(fd_check(&p, &l.grad, |x| {
            bce_on_selection(&map(x), &mask, &sel).expect("bce").value
        }));

        let c = 5;
        let blank = c - 1;
        let logits: Vec<f64> = (0..4 * c).map(|_| r.random_range(-2.0..2.0)).collect();
        let label = random_label(&mut r, 4, c, blank);
        let loss_of = |z: &[f64]| {
            let rows: Vec<Vec<f64>> = z.chunks(c).map(softmax).collect();
            ctc_loss(&ProbMatrix::new(rows.clone()).expect("rows"), &label, blank)
                .map(|l| (l, rows))
        };
        let (l, rows) = loss_of(&logits).expect("ctc");
        // chain rule through the row softmax
        let mut dz = Vec::with_capacity(logits.len());
        for (t, y) in rows.iter().enumerate() {
            let g = &l.grad[t * c..(t + 1) * c];
            let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
            dz.extend(y.iter().zip(g).map(|(yk, gk)| yk * (gk - dot)));
        }
        worst[4] = worst[4].max(fd_check(&logits, &dz, |z| loss_of(z).expect("ctc").0.value));
    }
    let names = [
        "mse_offsets",
        "dice_loss",
        "component_loss",
        "ohem_bce",
        "ctc_loss",
    ];
    let detail = names
        .iter()
        .zip(worst)
        .map(|(n, w)| format!("{n} {w:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        worst.iter().all(|&w| w < 1e-4),
        format!("20 instances each, max rel error (< 1e-4): {detail}"),
    )
}

fn random_blob_mask(r: &mut ChaCha8Rng) -> BinaryMask {
    let (w, h) = (32usize, 32usize);
    let mut m = BinaryMask::empty(w, h);
    for _ in 0..r.random_range(1..=4) {
        let (cx, cy) = (r.random_range(0.0..32.0), r.random_range(0.0..32.0));
        let (rx, ry) = (r.random_range(1.5..9.0), r.random_range(1.5..9.0));
        let ellipse = r.random_bool(0.5);
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
                let inside = if ellipse {
                    dx * dx + dy * dy <= 1.0
                } else {
                    dx.abs() <= 1.0 && dy.abs() <= 1.0
                };
                if inside {
                    m.set(x, y, true);
                }
            }
        }
    }
    m
}

fn thinning_idempotence() -> Outcome {
    let mut r = rng(5);
    for i in 0..100 {
        let once = thin(&random_blob_mask(&mut r));
        if thin(&once) != once {
            return outcome(false, format!("mask {i} changed on second pass"));
        }
    }
    outcome(true, "100 random blob masks")
}

fn hough_recovery() -> Outcome {
    let mut r = rng(6);
    // a digital segment of length L fits every line within about 1/L rad, so
    // the lines span a 128-px canvas to keep that below the bin width
    let n = 128usize;
    let (mut worst_theta, mut worst_rho) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let theta = r.random_range(0.0..std::f64::consts::PI);
        let p = Point2::new(r.random_range(32.0..96.0), r.random_range(32.0..96.0));
        let (s, c) = theta.sin_cos();
        let rho = p.x * c + p.y * s;
        let mut m = BinaryMask::empty(n, n);
        for i in 0..n {
            let t = i as f64;
            let (x, y) = if c.abs() >= s.abs() {
                ((rho - t * s) / c, t)
            } else {
                (t, (rho - t * c) / s)
            };
            let (x, y) = (x.round(), y.round());
            if (0.0..n as f64).contains(&x) && (0.0..n as f64).contains(&y) {
                m.set(x as usize, y as usize, true);
            }
        }
        let line = hough_line(&m, 180, 1.0).expect("line");
        let mut d = (line.theta - theta).abs();
        let flipped = d > std::f64::consts::FRAC_PI_2;
        if flipped {
            d = std::f64::consts::PI - d;
        }
        let rho_err = if flipped {
            (line.rho + rho).abs()
        } else {
            (line.rho - rho).abs()
        };
        worst_theta = worst_theta.max(d.to_degrees());
        worst_rho = worst_rho.max(rho_err);
    }
    outcome(
        worst_theta <= 1.0 && worst_rho <= 1.5,
        format!("100 lines across a 128-px canvas: max angle error {worst_theta:.3} deg (<= 1), max rho error {worst_rho:.3} px (<= 1.5)"),
    )
}

fn symmetric_centroids() -> Outcome {
    let mut r = rng(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        // centers on the integer or half-integer grid keep the shape symmetric
        let cx = r.random_range(20..80) as f64 + if r.random_bool(0.5) { 0.5 } else { 0.0 };
        let cy = r.random_range(20..80) as f64 + if r.random_bool(0.5) { 0.5 } else { 0.0 };
        let (rx, ry) = (r.random_range(1.0..15.0), r.random_range(1.0..15.0));
        let disk = r.random_bool(0.5);
        let mut m = BinaryMask::empty(100, 100);
        for y in 0..100 {
            for x in 0..100 {
                let (dx, dy) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
                let inside = if disk {
                    dx * dx + dy * dy <= 1.0
                } else {
                    dx.abs() <= 1.0 && dy.abs() <= 1.0
                };
                if inside {
                    m.set(x, y, true);
                }
            }
        }
        let b = blobs(&m);
        if b.len() != 1 {
            return outcome(false, format!("expected one blob, found {}", b.len()));
        }
        worst = worst.max(b[0].centroid.distance(Point2::new(cx, cy)));
    }
    outcome(
        worst <= 1e-12,
        format!("100 shapes: max centroid error {worst:.1e} (<= 1e-12)"),
    )
}

fn angle_method() -> Outcome {
    let exact = compute_reading(45.0, 90.0, 3.0) == Ok(1.5);
    let mut r = rng(8);
    let mut failures = 0usize;
    for i in 0..1000 {
        let a2 = r.random_range(1.0..359.0);
        let a1 = r.random_range(0.0..a2);
        let n = r.random_range(0.1..1000.0);
        let base = compute_reading(a1, a2, n).expect("valid");
        // powers of two scale exactly; other factors stay within a few ulps
        let homogeneous = if i % 2 == 0 {
            let s = 2f64.powi(r.random_range(-10..=10));
            compute_reading(a1, a2, s * n).expect("valid") == s * base
        } else {
            let s = r.random_range(0.01..100.0);
            let scaled = compute_reading(a1, a2, s * n).expect("valid");
            (scaled - s * base).abs() <= 4.0 * f64::EPSILON * (s * base).abs()
        };
        let a1b = r.random_range(a1..=a2);
        let monotone = compute_reading(a1b, a2, n).expect("valid") >= base;
        if !(homogeneous && monotone) {
            failures += 1;
        }
    }
    outcome(
        exact && failures == 0,
        format!("(45, 90, 3.0) -> 1.5 bit-exact: {exact}; 1000 homogeneity/monotonicity cases, {failures} failures"),
    )
}

fn error_metrics() -> Outcome {
    let rec = [EvalRecord {
        predicted: 1.1,
        ground_truth: 1.0,
        range: 2.0,
    }];
    let rel = avg_relative_error(&rec).expect("valid");
    let refe = avg_reference_error(&rec).expect("valid");
    outcome(
        rel == 10.0 && refe == 5.0,
        format!("(1.1, 1.0, R=2.0): rel {rel}%, ref {refe}% (exactly 10 and 5)"),
    )
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .expect("dir")
        .map(|e| {
            let p = e.expect("entry").path();
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            (name, std::fs::read(&p).expect("file"))
        })
        .collect();
    out.sort();
    out
}

fn cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().expect("tempdir");
    let run = |sub: &str| {
        Command::new(env!("CARGO_BIN_EXE_meterread"))
            .args(["synth", "--count", "3", "--seed", "7", "--out"])
            .arg(tmp.path().join(sub))
            .status()
            .expect("spawn")
            .success()
    };
    if !(run("a") && run("b")) {
        return outcome(false, "synth exited with an error");
    }
    let (a, b) = (
        tree_bytes(&tmp.path().join("a")),
        tree_bytes(&tmp.path().join("b")),
    );
    outcome(
        a == b && a.len() == 15,
        format!(
            "synth --count 3 --seed 7 twice: {} files, identical: {}",
            a.len(),
            a == b
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 12] = [
        ("synthetic end-to-end", synthetic_end_to_end),
        ("alignment round-trip", alignment_round_trip),
        ("DLT exactness", dlt_exactness),
        ("warp identity bit-exactness", warp_identity),
        ("CTC oracle equivalence", ctc_oracle),
        ("gradient verification", gradients),
        ("thinning idempotence", thinning_idempotence),
        ("Hough line recovery", hough_recovery),
        ("symmetric blob centroids", symmetric_centroids),
        ("angle-method exactness", angle_method),
        ("error-metric exactness", error_metrics),
        ("CLI determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
