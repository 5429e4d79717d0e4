//! Acceptance criteria 1-9. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nitex::bake::{
    blend_weighted, iterative_bake, BakeConfig, BakeContext, OracleUncertainty, RenderProvider, ViewContribution,
    ZeroUncertainty,
};
use nitex::camera::{canonical_candidates, make_view, view_weight, FramingConfig, ViewScore};
use nitex::errsim::{compare_over_seeds, psnr};
use nitex::fixtures;
use nitex::image::Image;
use nitex::kernels::{self, NoiseTensor, TokenMatrix};
use nitex::pbrtex::{decode_mr, encode_mr, rectify_mr};
use nitex::uncertainty::{mean_ssim, ssim_map, SsimConfig, UncertaintyMap};
use nitex::viewsel::{pick_best, score_candidates, SelectionState, Strategy, UqScore};

/// Texture detail of the bake fixtures.
const DETAIL: f64 = 4.0;
const TEXTURE_SEED: u64 = 7;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

fn criterion_1() -> Outcome {
    const MIN_PSNR: f64 = 35.0;
    const MAX_SECONDS: f64 = 60.0;
    let mut parts = Vec::new();
    let mut ok = true;
    for name in ["sphere", "cloth"] {
        let mesh = fixtures::by_name(name).unwrap();
        let tex = fixtures::ground_truth_textures(&mesh, 512, DETAIL, TEXTURE_SEED).unwrap();
        let provider = RenderProvider {
            mesh: &mesh,
            textures: &tex,
        };
        let uq = OracleUncertainty {
            ground_truth: tex.albedo.clone(),
            ssim: SsimConfig::default(),
        };
        let cfg = BakeConfig {
            max_views: 10,
            ..Default::default()
        };
        let t0 = Instant::now();
        let r = single_threaded(|| iterative_bake(&mesh, &canonical_candidates(), &provider, &uq, &cfg).unwrap());
        let secs = t0.elapsed().as_secs_f64();
        let p = psnr(&r.raw_albedo, &tex.albedo, Some(&r.coverage)).unwrap();
        ok &= p >= MIN_PSNR && secs < MAX_SECONDS;
        parts.push(format!("{name} {p:.2} dB in {secs:.1} s ({} views)", r.views_used.len()));
    }
    outcome(ok, format!("{}; need >= {MIN_PSNR} dB, < {MAX_SECONDS} s", parts.join(", ")))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ladder = ViewScore::ALL.map(|s| s.value());
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let k = rng.random_range(1..=6);
        let mut contribs = Vec::new();
        let mut weights = Vec::new();
        for j in 0..k {
            let p = rng.random::<f64>();
            // at least one covering view per case
            let covered = j == 0 || rng.random_bool(0.7);
            let mut c = ViewContribution::new(j as u32, Image::filled(1, 1, 1, p), vec![covered]);
            c.set_uncertainty(&UncertaintyMap {
                resolution: 1,
                values: vec![rng.random_range(0.0..0.99)],
            })
            .unwrap();
            contribs.push(c);
            weights.push(ladder[rng.random_range(0..ladder.len())]);
        }
        let t = blend_weighted(&contribs, &weights, 0.0).unwrap().values.get(0, 0, 0);
        let vals: Vec<f64> = contribs.iter().filter(|c| c.covered[0]).map(|c| c.values.get(0, 0, 0)).collect();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max(lo - t).max(t - hi);
    }
    let mut a = ViewContribution::new(0, Image::filled(1, 1, 1, 1.0), vec![true]);
    let mut b = ViewContribution::new(1, Image::filled(1, 1, 1, 0.0), vec![true]);
    a.set_uncertainty(&UncertaintyMap { resolution: 1, values: vec![0.0] }).unwrap();
    b.set_uncertainty(&UncertaintyMap { resolution: 1, values: vec![0.5] }).unwrap();
    let ex = blend_weighted(&[a, b], &[1.0, 1.0], 1e-6).unwrap().values.get(0, 0, 0);
    let ok = worst <= 1e-9 && (ex - 2.0 / 3.0).abs() <= 1e-6;
    outcome(
        ok,
        format!("hull violation {worst:.1e} (<= 1e-9); worked example {ex:.7} (0.6667 +- 1e-6)"),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = SsimConfig::default();
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let ch = if i % 2 == 0 { 1 } else { 3 };
        let n = 32 * 32 * ch;
        let a = Image::from_vec(32, 32, ch, (0..n).map(|_| rng.random()).collect()).unwrap();
        let s = rng.random_range(0.05..0.6);
        let b = Image::from_vec(
            32,
            32,
            ch,
            a.data().iter().map(|v| (v + s * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0)).collect(),
        )
        .unwrap();
        let fast = ssim_map(&a, &b, None, &cfg).unwrap();
        let slow = common::brute_ssim(&a, &b, &cfg);
        worst = fast.iter().zip(&slow).fold(worst, |w, (f, s)| w.max((f - s).abs()));
    }
    let x = Image::from_vec(32, 32, 3, (0..32 * 32 * 3).map(|_| rng.random()).collect()).unwrap();
    let self_dev = (mean_ssim(&x, &x, None, &cfg).unwrap() - 1.0).abs();
    let c1 = cfg.c1();
    let constant = mean_ssim(&Image::filled(16, 16, 1, 0.0), &Image::filled(16, 16, 1, 1.0), None, &cfg).unwrap();
    let const_dev = (constant - c1 / (1.0 + c1)).abs();
    let ok = worst <= 1e-6 && self_dev <= 1e-9 && const_dev <= 1e-8 && (constant - 9.999e-5).abs() < 1e-8;
    outcome(
        ok,
        format!(
            "fast vs brute {worst:.1e} (<= 1e-6); |SSIM(x,x)-1| {self_dev:.1e} (<= 1e-9); constant {constant:.4e} off by {const_dev:.1e} (<= 1e-8)"
        ),
    )
}

fn criterion_4() -> Outcome {
    let ladder: BTreeSet<u64> = ViewScore::ALL.iter().map(|s| s.value().to_bits()).collect();
    let pool = canonical_candidates();
    let weights: Vec<(u32, f64)> = pool.iter().map(|v| (v.id, view_weight(v).value())).collect();
    let in_ladder = weights.iter().all(|(_, w)| ladder.contains(&w.to_bits()));
    let full: Vec<u32> = weights.iter().filter(|(_, w)| *w == 1.0).map(|(id, _)| *id).collect();
    // every rung is reachable from the angle binning
    let rungs: BTreeSet<u64> = [0.0, 30.0, 60.0, 120.0, 150.0]
        .iter()
        .map(|&d| ViewScore::from_angle(d).value().to_bits())
        .collect();
    let mut observed: Vec<f64> = weights.iter().map(|(_, w)| *w).collect();
    observed.sort_by(|a, b| b.total_cmp(a));
    observed.dedup();
    let ok = in_ladder && full == [0, 1] && rungs == ladder;
    outcome(
        ok,
        format!(
            "pool weights {observed:?} all in ladder; weight-1 views {full:?}; angle binning reaches all 5 rungs; pool distances to the nearer of front/back stay <= 90 deg, so 0.125 and 0.1 never occur"
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut r_ok, mut worst, mut rect_ok) = (true, 0.0f64, true);
    for _ in 0..1000 {
        let (w, h) = (rng.random_range(1..12), rng.random_range(1..12));
        let n = w * h;
        let rough = Image::from_vec(w, h, 1, (0..n).map(|_| rng.random()).collect()).unwrap();
        let metal = Image::from_vec(w, h, 1, (0..n).map(|_| rng.random()).collect()).unwrap();
        let mut fg: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
        fg[0] = true;
        let enc = encode_mr(&rough, &metal, &fg).unwrap();
        r_ok &= enc.pixels.iter().zip(&fg).all(|(p, &f)| !f || p[0] == 255);
        let (r2, m2) = decode_mr(&enc);
        for i in (0..n).filter(|&i| fg[i]) {
            worst = worst
                .max((r2.data()[i] - rough.data()[i]).abs())
                .max((m2.data()[i] - metal.data()[i]).abs());
        }
        let target = encode_mr(
            &Image::from_vec(w, h, 1, (0..n).map(|_| rng.random()).collect()).unwrap(),
            &metal,
            &fg,
        )
        .unwrap();
        let out = &rectify_mr(&enc, std::slice::from_ref(&target)).unwrap()[0];
        let fg_px: BTreeSet<[u8; 3]> = out.pixels.iter().zip(&fg).filter(|(_, &f)| f).map(|(p, _)| *p).collect();
        rect_ok &= fg_px.len() == 1;
        rect_ok &= out.pixels.iter().zip(&target.pixels).zip(&fg).all(|((a, b), &f)| f || a == b);
    }
    let ok = r_ok && worst <= 1.0 / 510.0 + 1e-12 && rect_ok;
    outcome(
        ok,
        format!(
            "R=255 on foreground: {r_ok}; round-trip error {worst:.5} (<= {:.5}); rectify background identical and foreground constant: {rect_ok}",
            1.0 / 510.0
        ),
    )
}

/// Scores by direct enumeration of every footprint texel.
fn oracle_argmax(state: &SelectionState, strategy: Strategy) -> u32 {
    let mut best: Option<(u32, f64)> = None;
    for (&id, fp) in &state.candidate_footprints {
        if state.used.contains(&id) {
            continue;
        }
        let mut s = 0.0;
        for &t in fp {
            let t = t as usize;
            s += match strategy {
                Strategy::Uq if state.coverage[t] => state.residual_uncertainty.values[t],
                Strategy::Uq => 1.0,
                Strategy::Coverage => f64::from(u8::from(!state.coverage[t])),
            };
        }
        if strategy == Strategy::Uq && !fp.is_empty() {
            s /= fp.len() as f64;
        }
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((id, s));
        }
    }
    best.unwrap().0
}

fn criterion_6() -> Outcome {
    // hand-built: 12 texels, texels 0-5 covered with known uncertainty
    let footprints: BTreeMap<u32, Vec<u32>> = [
        (0, vec![0, 1, 2]),
        (1, vec![3, 4, 5, 6]),
        (2, vec![6, 7, 8, 9, 10, 11]),
        (3, vec![2, 3]),
        (4, vec![5, 6, 7]),
    ]
    .into_iter()
    .collect();
    let mut coverage = vec![false; 12];
    coverage[..6].iter_mut().for_each(|c| *c = true);
    let mut u = vec![0.0; 12];
    u[..6].copy_from_slice(&[0.1, 0.2, 0.9, 0.8, 0.3, 0.4]);
    let hand = SelectionState {
        residual_uncertainty: UncertaintyMap { resolution: 1, values: u },
        coverage,
        candidate_footprints: footprints,
        used: vec![0],
    };
    // uq means: v1 (0.8+0.3+0.4+1)/4 = 0.625, v2 1.0, v3 (0.9+0.8)/2 = 0.85, v4 (0.4+1+1)/3 = 0.8
    // cvg counts: v1 1, v2 6, v3 0, v4 2
    let pick = |s: &SelectionState, st| pick_best(&score_candidates(s, st, UqScore::Mean).unwrap()).unwrap().view_id;
    let mut hand_ok = pick(&hand, Strategy::Uq) == 2 && pick(&hand, Strategy::Coverage) == 2;
    let mut hand2 = hand.clone();
    hand2.used.push(2);
    hand_ok &= pick(&hand2, Strategy::Uq) == 3 && pick(&hand2, Strategy::Coverage) == 4;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut random_ok = true;
    for _ in 0..200 {
        let n = rng.random_range(5..60);
        let fps = (0..rng.random_range(2..10))
            .map(|id| {
                let mut fp: Vec<u32> = (0..n as u32).filter(|_| rng.random_bool(0.3)).collect();
                fp.dedup();
                (id, fp)
            })
            .collect();
        let state = SelectionState {
            residual_uncertainty: UncertaintyMap {
                resolution: 1,
                values: (0..n).map(|_| rng.random()).collect(),
            },
            coverage: (0..n).map(|_| rng.random_bool(0.5)).collect(),
            candidate_footprints: fps,
            used: vec![],
        };
        for st in [Strategy::Uq, Strategy::Coverage] {
            random_ok &= pick(&state, st) == oracle_argmax(&state, st);
        }
    }

    let mesh = fixtures::by_name("cloth").unwrap();
    let tex = fixtures::ground_truth_textures(&mesh, 512, DETAIL, TEXTURE_SEED).unwrap();
    let provider = RenderProvider {
        mesh: &mesh,
        textures: &tex,
    };
    let greedy_cfg = BakeConfig {
        strategy: Strategy::Coverage,
        max_views: 10,
        exhaust_views: true,
        ..Default::default()
    };
    let greedy = iterative_bake(&mesh, &canonical_candidates(), &provider, &ZeroUncertainty, &greedy_cfg).unwrap();
    let fc = FramingConfig::default();
    // front, back, left, right, top, bottom
    let six: Vec<_> = [(0.0, 0.0), (180.0, 0.0), (90.0, 0.0), (270.0, 0.0), (0.0, 90.0), (0.0, -90.0)]
        .iter()
        .enumerate()
        .map(|(i, &(az, el))| {
            let mut v = make_view(az, el, &fc).unwrap();
            v.id = i as u32;
            v
        })
        .collect();
    let fixed_cfg = BakeConfig {
        max_views: 6,
        ..greedy_cfg.clone()
    };
    let fixed = iterative_bake(&mesh, &six, &provider, &ZeroUncertainty, &fixed_cfg).unwrap();
    let (g, f) = (greedy.uncovered_fraction(), fixed.uncovered_fraction());
    let ok = hand_ok && random_ok && g <= f && fixed.views_used.len() == 6 && greedy.views_used.len() == 10;
    outcome(
        ok,
        format!(
            "hand-enumerated argmax: {hand_ok}; exhaustive oracle on 200 random states: {random_ok}; cloth uncovered coverage-10 {g:.5} <= fixed-6 {f:.5}"
        ),
    )
}

fn criterion_7() -> Outcome {
    let mesh = fixtures::by_name("cloth").unwrap();
    let cfg = BakeConfig::default();
    let tex = fixtures::ground_truth_textures(&mesh, cfg.resolution, DETAIL, TEXTURE_SEED).unwrap();
    let ctx = BakeContext::new(&mesh, &canonical_candidates(), &cfg).unwrap();
    let report = compare_over_seeds(&ctx, &tex, &[0, 1, 2, 3, 4], &cfg).unwrap();
    let med = |s: Strategy| {
        report
            .summary
            .iter()
            .find(|x| x.strategy == s)
            .unwrap()
            .median_worst_view_psnr
    };
    let (uq, cvg) = (med(Strategy::Uq), med(Strategy::Coverage));
    let runs_ok = report.runs.len() == 10 && report.runs.iter().all(|r| r.views_used.len() == 10);
    outcome(
        uq >= cvg && runs_ok,
        format!("median worst-view PSNR uq {uq:.3} dB vs coverage {cvg:.3} dB over 5 seeds (need uq >= coverage)"),
    )
}

fn nitex(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_nitex"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

/// Relative path to file bytes; the manifest's wall-clock field is dropped.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let mut bytes = std::fs::read(&p).unwrap();
            if p.file_name().is_some_and(|n| n == "run_manifest.json") {
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                v.as_object_mut().unwrap().remove("wall_clock_seconds");
                bytes = serde_json::to_vec(&v).unwrap();
            }
            out.insert(p.strip_prefix(root).unwrap().to_path_buf(), bytes);
        }
    }
    out
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name);
    let s = |p: &PathBuf| p.to_str().unwrap().to_owned();
    let mut ok = true;
    let mut notes = Vec::new();
    for (cmd, extra) in [
        ("bake", vec!["--fixture", "cloth", "--resolution", "256"]),
        ("compare", vec!["--fixture", "sphere", "--resolution", "64", "--seeds", "5"]),
    ] {
        let runs = [("a", "1"), ("b", "1"), ("c", "8")];
        let mut trees = Vec::new();
        for (tag, threads) in runs {
            let out = d(&format!("{cmd}_{tag}"));
            let mut args = vec!["--threads", threads, cmd];
            args.extend(&extra);
            let o = s(&out);
            args.extend(["--out", o.as_str()]);
            ok &= nitex(&args);
            trees.push(tree(&out));
        }
        let same = !trees[0].is_empty() && trees.iter().all(|t| *t == trees[0]);
        ok &= same;
        notes.push(format!("{cmd}: {} files identical across 2 runs and threads 1/8: {same}", trees[0].len()));
    }
    outcome(ok, notes.join("; "))
}

fn criterion_8() -> Outcome {
    let checks = kernels::selftest(8);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    // extra sweep over shapes on top of the built-in checks
    let mut worst_sum: f64 = 0.0;
    let mut hull = true;
    for _ in 0..200 {
        let (nq, nk, d, dv) = (rng.random_range(1..6), rng.random_range(1..9), rng.random_range(1..17), rng.random_range(1..6));
        let mut mat = |r: usize, c: usize| TokenMatrix::new(r, c, (0..r * c).map(|_| rng.random_range(-4.0..4.0)).collect()).unwrap();
        let (q, k, v) = (mat(nq, d), mat(nk, d), mat(nk, dv));
        let w = kernels::attention_weights(&q, &k).unwrap();
        for r in 0..nq {
            worst_sum = worst_sum.max((w.row(r).iter().sum::<f64>() - 1.0).abs());
        }
        let out = kernels::mcaa_attention(&q, &k, &v).unwrap();
        for r in 0..nq {
            for c in 0..dv {
                let col = (0..nk).map(|j| v.get(j, c));
                let lo = col.clone().fold(f64::INFINITY, f64::min);
                let hi = col.fold(f64::NEG_INFINITY, f64::max);
                hull &= out.get(r, c) >= lo - 1e-9 && out.get(r, c) <= hi + 1e-9;
            }
        }
    }
    let t = |n: usize, rng: &mut ChaCha8Rng| NoiseTensor::new(vec![n], (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let (e, em, ea) = (t(64, &mut rng), t(64, &mut rng), t(64, &mut rng));
    let l1 = kernels::loss_l1(&e, &em, &ea).unwrap();
    let split = kernels::loss_l2(&e, &em, 1.0).unwrap() + kernels::loss_l2(&e, &ea, 1.0).unwrap();
    let grad = kernels::loss_l2_grad(&e, &ea, 2.0).unwrap();
    let fd_worst = (0..64)
        .map(|i| (kernels::finite_difference(&e, &ea, 2.0, i, 1e-5) - grad[i]).abs())
        .fold(0.0, f64::max);
    let lin = kernels::loss_l2(&e, &ea, 2.0).unwrap() == 2.0 * kernels::loss_l2(&e, &ea, 1.0).unwrap();
    let built_in = checks.iter().all(|c| c.passed);
    let ok = built_in && worst_sum <= 1e-9 && hull && (l1 - split).abs() <= 1e-9 && fd_worst <= 1e-5 && lin;
    outcome(
        ok,
        format!(
            "selftest {}/{}; softmax sum dev {worst_sum:.1e}; convex hull {hull}; |L1 - sum L2| {:.1e}; FD grad dev {fd_worst:.1e}; alpha=2 exact {lin}",
            checks.iter().filter(|c| c.passed).count(),
            checks.len(),
            (l1 - split).abs()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("round-trip bake fidelity", criterion_1),
        ("blending formula", criterion_2),
        ("SSIM oracle equivalence", criterion_3),
        ("view weight schedule", criterion_4),
        ("MR encoding", criterion_5),
        ("selection metrics", criterion_6),
        ("strategy comparison", criterion_7),
        ("kernel invariants", criterion_8),
        ("determinism", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let o = f();
        let took = Duration::from_secs_f64(t0.elapsed().as_secs_f64());
        println!(
            "criterion {} {}: {} ({}) [{:.1?}]",
            i + 1,
            name,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            took
        );
        failed += usize::from(!o.passed);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
