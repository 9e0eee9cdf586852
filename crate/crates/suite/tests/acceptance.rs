//! Headless acceptance run: one PASS/FAIL line per criterion.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use autopreview::engine::{rollout_log, Attached};
use autopreview::formats::{self, ClipManifest};
use autopreview_core::autopilot::{BrandPreset, BrandRegistry};
use autopreview_core::delegate::{
    class_weights, collect_dataset, fidelity, fidelity_on_clips, train_delegate, weighted_objective, LabeledFrame,
    LearnedDelegate, RuleDelegate, TrainConfig, FEATURE_COUNT,
};
use autopreview_core::rollout::Scenario;
use autopreview_core::study::stats::{hedges_g, mann_whitney_u, UMethod};
use autopreview_core::study::{build_report, clip_manifest_hash, make_clips, ScenarioClip};
use autopreview_suite::Verdicts;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// SHA-256 of the BrandA, seed 7, 120 s trajectory log, as written by
/// `autopreview rollout --brand BrandA --seed 7 --duration 120`.
const GOLDEN_ROLLOUT_SHA256: &str = "d6503e7a86ab7462029d70409266f03adbf5c0b751ebf0c329ec1fe6ec721a57";

fn brand(name: &str) -> BrandPreset {
    BrandRegistry::builtin().get(name).cloned().expect("built-in brand")
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../autopreview/tests/fixtures")
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// The eight quiz clips every clip-based criterion shares.
fn held_out_clips() -> Vec<ScenarioClip> {
    let pool: Vec<u64> = (1000..1030).collect();
    make_clips(&brand("BrandA"), &pool, 8, 0, &Scenario::default()).expect("clips")
}

fn determinism() -> (bool, String) {
    let scenario = Scenario::with_duration(120.0);
    let b = brand("BrandA");
    let t0 = Instant::now();
    let (first, ..) = rollout_log(7, &b, &scenario, &mut []).expect("rollout");
    let elapsed = t0.elapsed().as_secs_f64();
    let (second, ..) = rollout_log(7, &b, &scenario, &mut []).expect("rollout");
    let digest = sha256_hex(first.as_bytes());
    let pass = first == second && digest == GOLDEN_ROLLOUT_SHA256 && elapsed < 5.0;
    (
        pass,
        format!(
            "two runs identical={}, sha256 {digest} {} pinned digest, {elapsed:.3} s for 120 s simulated (limit 5 s)",
            first == second,
            if digest == GOLDEN_ROLLOUT_SHA256 { "matches" } else { "differs from" }
        ),
    )
}

fn non_execution() -> (bool, String) {
    let scenario = Scenario::default();
    let target = brand("BrandB");
    let watchers: Vec<Attached> = ["BrandA", "BrandB", "BrandC"].iter().map(|n| Attached::rule(brand(n))).collect();
    let mut identical = 0;
    let mut notes = 0;
    for seed in 0..10 {
        let (bare, ..) = rollout_log(seed, &target, &scenario, &mut []).expect("rollout");
        let (watched, _, n) = rollout_log(seed, &target, &scenario, &mut watchers.clone()).expect("rollout");
        identical += usize::from(bare == watched);
        notes += n.len();
    }
    (
        identical == 10,
        format!("{identical}/10 seeds bit-identical with 0 vs 3 delegates ({notes} notifications emitted meanwhile)"),
    )
}

fn oracle_fidelity(clips: &[ScenarioClip]) -> (bool, String) {
    let b = brand("BrandA");
    let rule = RuleDelegate::new(b.params.clone());
    let on_clips = fidelity_on_clips(&rule, &b, clips, &Scenario::default()).expect("fidelity");
    let full = fidelity(&rule, &b, &(100..110).collect::<Vec<_>>(), &Scenario::default()).expect("fidelity");
    let perfect = |r: &autopreview_core::delegate::FidelityReport| {
        r.frame_agreement == 1.0 && r.event_precision == 1.0 && r.event_recall == 1.0 && r.event_timing_mae_s == Some(0.0)
    };
    (
        perfect(&on_clips) && perfect(&full),
        format!(
            "clips: agreement {} precision {} recall {} mae {:?} over {} events; 10 full rollouts: agreement {} mae {:?}",
            on_clips.frame_agreement,
            on_clips.event_precision,
            on_clips.event_recall,
            on_clips.event_timing_mae_s,
            on_clips.truth_events,
            full.frame_agreement,
            full.event_timing_mae_s
        ),
    )
}

fn learned_fidelity(clips: &[ScenarioClip]) -> (bool, String) {
    let b = brand("BrandA");
    let train_seeds: Vec<u64> = (0..20).collect();
    let frames = collect_dataset(&b, &train_seeds, &Scenario::with_duration(120.0)).expect("dataset");
    let t0 = Instant::now();
    let outcome = train_delegate(&frames, &TrainConfig::default(), &b.name).expect("training");
    let train_s = t0.elapsed().as_secs_f64();
    let delegate = LearnedDelegate::new(outcome.model).expect("valid model");
    let r = fidelity_on_clips(&delegate, &b, clips, &Scenario::default()).expect("fidelity");
    let mae_ok = r.event_timing_mae_s.is_some_and(|m| m <= 0.5);
    let pass = r.frame_agreement >= 0.90 && mae_ok && train_s <= 60.0;
    (
        pass,
        format!(
            "frame agreement {:.3} (need >= 0.90), event timing mae {} (need <= 0.5 s), {}/{} events matched, training {train_s:.2} s on {} frames (limit 60 s)",
            r.frame_agreement,
            r.event_timing_mae_s.map_or("none: no matched events".to_string(), |m| format!("{m:.3} s")),
            r.matched_events,
            r.truth_events,
            frames.len()
        ),
    )
}

fn gradient_check() -> (bool, String) {
    let b = brand("BrandA");
    let frames = collect_dataset(&b, &[40, 41], &Scenario::with_duration(120.0)).expect("dataset");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let batch: Vec<LabeledFrame> = (0..64).map(|_| frames[rng.gen_range(0..frames.len())].clone()).collect();
        let mut w = [[0.0; FEATURE_COUNT]; 3];
        let mut bias = [0.0; 3];
        w.iter_mut().flatten().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        bias.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let cw = class_weights(&batch);
        let lambda = TrainConfig::default().lambda;
        let (_, grad) = weighted_objective(&w, &bias, &batch, &cw, lambda);
        let eps = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        for c in 0..3 {
            for j in 0..FEATURE_COUNT {
                let (mut up, mut down) = (w, w);
                up[c][j] += eps;
                down[c][j] -= eps;
                let num = (weighted_objective(&up, &bias, &batch, &cw, lambda).0
                    - weighted_objective(&down, &bias, &batch, &cw, lambda).0)
                    / (2.0 * eps);
                worst = worst.max(rel(grad.weights[c][j], num));
            }
            let (mut up, mut down) = (bias, bias);
            up[c] += eps;
            down[c] -= eps;
            let num = (weighted_objective(&w, &up, &batch, &cw, lambda).0
                - weighted_objective(&w, &down, &batch, &cw, lambda).0)
                / (2.0 * eps);
            worst = worst.max(rel(grad.bias[c], num));
        }
    }
    (worst <= 1e-5, format!("max relative error {worst:.2e} over 5 batches of 64 frames (limit 1e-5)"))
}

/// Two-sided exact p by brute force over every relabeling.
fn brute_force_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (n, na) = (pooled.len(), a.len());
    let pairs = (na * (n - na)) as f64;
    let u_of = |ga: &[f64], gb: &[f64]| -> f64 {
        let mut u: f64 = 0.0;
        for x in ga {
            for y in gb {
                u += if x > y {
                    1.0
                } else if x == y {
                    0.5
                } else {
                    0.0
                };
            }
        }
        u.min(pairs - u)
    };
    let observed = u_of(a, b);
    let (mut total, mut extreme) = (0u32, 0u32);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != na {
            continue;
        }
        let ga: Vec<f64> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| pooled[i]).collect();
        let gb: Vec<f64> = (0..n).filter(|i| mask >> i & 1 == 0).map(|i| pooled[i]).collect();
        total += 1;
        extreme += u32::from(u_of(&ga, &gb) <= observed);
    }
    extreme as f64 / total as f64
}

fn statistics_oracles() -> (bool, String) {
    let g = hedges_g(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).expect("hedges");
    let g_ok = (g + 0.8).abs() <= 1e-12;
    let mw = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]).expect("mwu");
    let p_ok = mw.method == UMethod::Exact && (mw.p_value - 1.0 / 3.0).abs() <= 1e-12;

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut enum_ok = 0;
    for _ in 0..50 {
        let n = rng.gen_range(2..=10);
        let na = rng.gen_range(1..n);
        let mut draw = |k: usize| (0..k).map(|_| rng.gen_range(0..7) as f64 * 0.5).collect::<Vec<_>>();
        let (a, b) = (draw(na), draw(n - na));
        let r = mann_whitney_u(&a, &b).expect("mwu");
        enum_ok += usize::from(r.method == UMethod::Exact && (r.p_value - brute_force_p(&a, &b)).abs() <= 1e-12);
    }

    let mut partition_ok = 0;
    for _ in 0..10_000 {
        let na = rng.gen_range(1..=15);
        let nb = rng.gen_range(1..=15);
        let mut draw = |k: usize| (0..k).map(|_| (rng.gen_range(-20..20) as f64) * 0.1).collect::<Vec<_>>();
        let (a, b) = (draw(na), draw(nb));
        let r = mann_whitney_u(&a, &b).expect("mwu");
        partition_ok += usize::from(r.u_a + r.u_b == (na * nb) as f64);
    }
    (
        g_ok && p_ok && enum_ok == 50 && partition_ok == 10_000,
        format!(
            "hedges_g {g} (want -0.8), exact p {} (want 1/3), {enum_ok}/50 exact p equal brute force, {partition_ok}/10000 U_a + U_b = n_a n_b",
            mw.p_value
        ),
    )
}

fn study_pipeline() -> (bool, String) {
    let fx = fixtures();
    let records = formats::parse_records(&fx.join("synthetic.csv")).expect("fixture records");
    let manifest = formats::load_clips_dir(&fx.join("clips")).expect("fixture clips");
    let oracle: serde_json::Value =
        serde_json::from_slice(&std::fs::read(fx.join("synthetic_expected.json")).expect("oracle")).expect("json");
    let report = build_report(&records, &[], &manifest.clips).expect("report");

    // (got, want) for every number the oracle pins down.
    let mut pairs: Vec<(Option<f64>, Option<f64>)> = Vec::new();
    for g in &report.groups {
        let want = &oracle["groups"][g.group.as_str()];
        pairs.push((Some(g.unweighted_error_s), want["unweighted_error_s"].as_f64()));
        pairs.push((g.weighted_error_s, want["weighted_error_s"].as_f64()));
    }
    for (between, key) in [(&report.unweighted_error, "unweighted_error"), (&report.weighted_error, "weighted_error")] {
        let want = &oracle[key];
        let b = between.as_ref();
        pairs.push((b.and_then(|b| b.hedges_g), want["hedges_g"].as_f64()));
        pairs.push((b.map(|b| b.u_statistic), want["u_statistic"].as_f64()));
        pairs.push((b.map(|b| b.p_value), want["p_value"].as_f64()));
    }
    let missing = pairs.iter().filter(|(g, w)| g.is_none() || w.is_none()).count();
    let worst = pairs
        .iter()
        .filter_map(|&(g, w)| Some((g? - w?).abs()))
        .fold(0.0, f64::max);
    let b = report.unweighted_error.as_ref();
    (
        worst <= 1e-9 && missing == 0 && report.groups.len() == 2,
        format!(
            "max deviation from oracle {worst:.1e} (limit 1e-9), g_s {:?}, U {:?}, p {:?}",
            b.and_then(|b| b.hedges_g),
            b.map(|b| b.u_statistic),
            b.map(|b| b.p_value)
        ),
    )
}

fn aggressiveness() -> (bool, String) {
    let scenario = Scenario::with_duration(120.0);
    let mut means = Vec::new();
    for agg in [0.2, 0.5, 0.8] {
        let b = BrandPreset::new(format!("agg{agg}"), agg).expect("preset");
        let total: usize = (0..20)
            .map(|seed| rollout_log(seed, &b, &scenario, &mut []).expect("rollout").1.lane_changes)
            .sum();
        means.push(total as f64 / 20.0);
    }
    (
        means[0] < means[1] && means[1] < means[2],
        format!("mean lane changes over 20 seeds: 0.2 -> {}, 0.5 -> {}, 0.8 -> {}", means[0], means[1], means[2]),
    )
}

fn clip_instrument(clips: &[ScenarioClip]) -> (bool, String) {
    let b = brand("BrandA");
    let scenario = Scenario::default();
    let logs: Vec<String> = clips
        .iter()
        .map(|c| rollout_log(c.seed, &b, &scenario, &mut []).expect("rollout").0)
        .collect();
    let manifest = ClipManifest {
        clip_manifest_hash: clip_manifest_hash(clips),
        brand: b.name.clone(),
        window_seed: 0,
        scenario,
        clips: clips.to_vec(),
    };
    let dir = tempfile::tempdir().expect("tempdir");
    let out = dir.path().join("clips");
    formats::write_clips_dir(&out, &manifest, &logs).expect("write clips");
    let checks = formats::validate_clips_dir(&out).expect("validate");
    let valid = checks.iter().filter(|c| c.ok && c.events == 1 && c.ticks == 50).count();
    let five_s = clips.iter().all(|c| (c.duration_s - 5.0).abs() < 1e-12);
    (
        checks.len() == 8 && valid == 8 && five_s,
        format!(
            "{} clips written, {valid} re-scanned with exactly one event in [1, 4] s, t_gt = {:?}",
            checks.len(),
            checks.iter().map(|c| (c.t_gt * 10.0).round() / 10.0).collect::<Vec<_>>()
        ),
    )
}

fn main() -> ExitCode {
    let mut v = Verdicts::new();
    let clips = held_out_clips();
    let (p, d) = determinism();
    v.record("determinism", p, d);
    let (p, d) = non_execution();
    v.record("non-execution", p, d);
    let (p, d) = oracle_fidelity(&clips);
    v.record("oracle delegate fidelity", p, d);
    let (p, d) = learned_fidelity(&clips);
    v.record("learned delegate fidelity", p, d);
    let (p, d) = gradient_check();
    v.record("gradient check", p, d);
    let (p, d) = statistics_oracles();
    v.record("statistics oracles", p, d);
    let (p, d) = study_pipeline();
    v.record("study pipeline replication", p, d);
    let (p, d) = aggressiveness();
    v.record("aggressiveness ordering", p, d);
    let (p, d) = clip_instrument(&clips);
    v.record("clip instrument", p, d);
    v.finish()
}
