//! Acceptance suite: one PASS/FAIL line per criterion.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use reasoner_core::action::{blend_actions, Action, ActionBounds};
use reasoner_core::bench::{generate_demos, Bench, RunConfig};
use reasoner_core::error::Result;
use reasoner_core::policy::{Policy, PolicyHandle};
use reasoner_core::prior::{fit_kde, top_k_near, BandwidthRule, SamplePool};
use reasoner_core::reward::{fit_reward, nearest_frame, predict_reward, progress_labels, LabeledFrame};
use reasoner_core::search::{aggregate_value, run_search, ucb_score, SearchConfig, Tree, WorldModel};
use reasoner_core::world::{reset, TabletopModel, TaskSpec};

struct Report {
    lines: Vec<(bool, String)>,
}

impl Report {
    fn record(&mut self, id: u32, name: &str, started: Instant, checks: Vec<(bool, String)>) {
        let ok = checks.iter().all(|c| c.0);
        let detail: Vec<String> = checks
            .iter()
            .map(|(p, d)| if *p { d.clone() } else { format!("FAILED {d}") })
            .collect();
        let line = format!(
            "[{}] {id}. {name} ({:.1}s): {}",
            if ok { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64(),
            detail.join("; ")
        );
        println!("{line}");
        self.lines.push((ok, line));
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Scalar world used by the tree-level checks: the state is a position.
struct Line;

impl WorldModel for Line {
    type State = f64;
    fn transition(&self, s: &f64, a: &[f64]) -> Result<f64> {
        Ok(s + a.iter().sum::<f64>())
    }
}

fn hash_reward(s: &f64) -> Result<f64> {
    let x = (s * 12.9898).sin() * 43758.5453;
    Ok(x - x.floor())
}

/// From-scratch value recomputation: leaves keep their creation count and
/// reward, inner nodes aggregate their children. Returns the worst deviation.
fn recompute_deviation<S: Clone>(tree: &Tree<S>) -> f64 {
    let nodes = tree.nodes();
    let mut n = vec![0u64; nodes.len()];
    let mut q = vec![0.0; nodes.len()];
    // children always have larger ids than their parent
    for id in (0..nodes.len()).rev() {
        let node = &nodes[id];
        let kids: Vec<usize> = node.children.iter().copied().filter(|&c| nodes[c].is_simulated()).collect();
        if kids.is_empty() {
            n[id] = node.prior_visits;
            q[id] = node.reward;
        } else {
            let total: u64 = kids.iter().map(|&c| n[c]).sum();
            let weighted: f64 = kids.iter().map(|&c| n[c] as f64 * q[c]).sum();
            n[id] = total;
            q[id] = (total as f64 * node.reward + weighted) / (2 * total) as f64;
        }
    }
    let mut worst: f64 = 0.0;
    for (id, node) in nodes.iter().enumerate() {
        if !node.is_simulated() {
            continue;
        }
        if n[id] != node.visits {
            return f64::INFINITY;
        }
        worst = worst.max((q[id] - node.value).abs());
    }
    worst
}

fn random_tree(rng: &mut ChaCha8Rng) -> Tree<f64> {
    let mut tree = Tree::new(0.0, vec![0.0], hash_reward(&0.0).unwrap(), rng.random());
    let expansions = rng.random_range(1..12);
    for _ in 0..expansions {
        let open: Vec<usize> = (0..tree.len())
            .filter(|&i| tree.node(i).is_simulated() && !tree.node(i).is_expanded())
            .collect();
        let at = open[rng.random_range(0..open.len())];
        let m = rng.random_range(1..6);
        let actions: Vec<Vec<f64>> = (0..m).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
        let weights: Vec<u64> = (0..m).map(|_| rng.random_range(1..20)).collect();
        let kids = tree.add_children(at, actions, &weights).unwrap();
        for k in kids {
            tree.simulate(k, &Line, &hash_reward).unwrap();
            tree.backpropagate(k);
        }
    }
    tree
}

fn criterion_1(report: &mut Report) {
    let t = Instant::now();
    let mut checks = Vec::new();

    let v = Action::new([0.04, 0.0, 0.0], 0.0).unwrap();
    let r = Action::new([0.0, 0.02, 0.0], 0.0).unwrap();
    let b = blend_actions(&v, &r, 0.6).unwrap();
    let want = [0.6 * 0.04, 0.4 * 0.02, 0.0];
    let ok = (0..3).all(|i| close(b.delta[i], want[i], 1e-9)) && close(b.delta[0], 0.024, 1e-9) && close(b.delta[1], 0.008, 1e-9);
    checks.push((ok, format!("blend delta {:?}", b.delta)));

    let h = 0.3;
    let single = fit_kde(&vec![vec![0.2, -0.1, 0.4]; 3], BandwidthRule::Fixed(h)).unwrap();
    let peak = (2.0 * PI).powf(-1.5) * h.powi(-3);
    let d = single.density(&[0.2, -0.1, 0.4]).unwrap();
    checks.push((close(d, peak, 1e-9 * peak.max(1.0)), format!("kde peak {d:.9}")));
    let two = fit_kde(&[vec![-1.0], vec![1.0]], BandwidthRule::Fixed(1.0)).unwrap();
    let phi1 = (-0.5f64).exp() / (2.0 * PI).sqrt();
    let d0 = two.density(&[0.0]).unwrap();
    checks.push((close(d0, phi1, 1e-9) && close(d0, 0.2420, 1e-4), format!("kde two-point {d0:.6}")));

    let q = aggregate_value(0.5, 2, &[(2, 1.0)]);
    checks.push((close(q, 0.75, 1e-9), format!("backprop {q}")));
    let c = FRAC_1_SQRT_2;
    let s1 = ucb_score(0.6, 9, 8, c);
    let s2 = ucb_score(0.5, 9, 1, c);
    let w1 = 0.6 + c * ((9f64).ln() / 9.0).sqrt();
    let w2 = 0.5 + c * ((9f64).ln() / 2.0).sqrt();
    let ok = close(s1, w1, 1e-9) && close(s2, w2, 1e-9) && close(s1, 0.9494, 1e-4) && close(s2, 1.2411, 1e-4);
    checks.push((ok, format!("ucb {s1:.4} vs {s2:.4}")));

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        worst = worst.max(recompute_deviation(&random_tree(&mut rng)));
    }
    checks.push((worst <= 1e-12, format!("100 random trees max dev {worst:.1e}")));
    report.record(1, "equation exactness", t, checks);
}

fn brute_k_nearest(anchor: &[f64], cands: &[Vec<f64>], k: usize) -> Vec<usize> {
    let dist = |c: &Vec<f64>| c.iter().zip(anchor).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let mut taken = vec![false; cands.len()];
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<(f64, usize)> = None;
        for (i, c) in cands.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let d = dist(c);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
        let (_, i) = best.unwrap();
        taken[i] = true;
        out.push(i);
    }
    out
}

fn criterion_2(report: &mut Report) {
    let t = Instant::now();
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);

    let mut mismatches = 0;
    for _ in 0..1000 {
        let dim = rng.random_range(1..6);
        let n = rng.random_range(1..80);
        let k = rng.random_range(1..=n);
        // a coarse grid makes distance ties common
        let grid = rng.random_bool(0.5);
        let draw = |rng: &mut ChaCha8Rng| -> f64 {
            if grid {
                rng.random_range(-3i32..=3) as f64 * 0.5
            } else {
                rng.random_range(-1.0..1.0)
            }
        };
        let anchor: Vec<f64> = (0..dim).map(|_| draw(&mut rng)).collect();
        let cands: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| draw(&mut rng)).collect()).collect();
        let pool = SamplePool::new(anchor.clone(), cands.clone(), None).unwrap();
        if top_k_near(&pool, k).unwrap() != brute_k_nearest(&anchor, &cands, k) {
            mismatches += 1;
        }
    }
    checks.push((mismatches == 0, format!("top-k mismatches {mismatches}/1000")));

    // k = 2, depth 1: the answer is the better of the two simulated children
    let bounds = ActionBounds::new(vec![-5.0], vec![5.0]).unwrap();
    let cfg = SearchConfig {
        k: 2,
        pool_size: 16,
        max_depth: 1,
        ..Default::default()
    };
    let mut wrong = 0;
    for trial in 0..300u64 {
        let table: Vec<f64> = (0..41).map(|_| rng.random_range(0.0..1.0)).collect();
        let reward = |s: &f64| -> Result<f64> {
            let i = ((s + 4.0) * 5.0).round().clamp(0.0, 40.0) as usize;
            Ok(table[i])
        };
        let pts: Vec<Vec<f64>> = (0..3).map(|_| vec![rng.random_range(-1.5..1.5)]).collect();
        let prior = fit_kde(&pts, BandwidthRule::Fixed(0.3)).unwrap();
        let start: f64 = rng.random_range(-1.0..1.0);
        let proposal = rng.random_range(-1.5..1.5);
        let out = run_search(&start, &[proposal], &prior, &Line, &reward, &cfg, &bounds, trial).unwrap();
        let cands: Vec<f64> = out.trace.nodes[1..].iter().map(|n| n.action[0]).collect();
        let scores: Vec<f64> = cands.iter().map(|a| reward(&(start + a)).unwrap()).collect();
        let pick = if scores[1] > scores[0] { 1 } else { 0 };
        if cands[0] != proposal || out.action[0] != cands[pick] {
            wrong += 1;
        }
    }
    checks.push((wrong == 0, format!("k=2 depth=1 enumeration mismatches {wrong}/300")));

    let bank: Vec<LabeledFrame> = (0..200)
        .map(|i| LabeledFrame {
            features: (0..6).map(|_| rng.random_range(0i32..4) as f64).collect(),
            label: i as f64 / 199.0,
        })
        .collect();
    let mut bad = 0;
    for _ in 0..1000 {
        let q: Vec<f64> = (0..6).map(|_| rng.random_range(0i32..4) as f64 + rng.random_range(-0.5..0.5)).collect();
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, f) in bank.iter().enumerate() {
            let d: f64 = f.features.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        if nearest_frame(&bank, &q).unwrap() != best {
            bad += 1;
        }
    }
    checks.push((bad == 0, format!("nearest-frame mismatches {bad}/1000")));
    report.record(2, "oracle equivalence", t, checks);
}

fn criterion_3(report: &mut Report) {
    let t = Instant::now();
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    // midpoint quadrature over a box covering +-6h of every point
    let pts: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)]).collect();
    let h = 0.15;
    let prior = fit_kde(&pts, BandwidthRule::Fixed(h)).unwrap();
    let lo: Vec<f64> = (0..2).map(|d| pts.iter().map(|p| p[d]).fold(f64::INFINITY, f64::min) - 6.0 * h).collect();
    let hi: Vec<f64> = (0..2).map(|d| pts.iter().map(|p| p[d]).fold(f64::NEG_INFINITY, f64::max) + 6.0 * h).collect();
    let m = 300;
    let (dx, dy) = ((hi[0] - lo[0]) / m as f64, (hi[1] - lo[1]) / m as f64);
    let mut mass = 0.0;
    for i in 0..m {
        for j in 0..m {
            let x = lo[0] + (i as f64 + 0.5) * dx;
            let y = lo[1] + (j as f64 + 0.5) * dy;
            mass += prior.density(&[x, y]).unwrap() * dx * dy;
        }
    }
    checks.push(((mass - 1.0).abs() <= 0.02, format!("2-D mass {mass:.5}")));

    let pts1 = vec![vec![-1.0], vec![0.3], vec![0.5], vec![2.0]];
    let h1 = 0.4;
    let p1 = fit_kde(&pts1, BandwidthRule::Fixed(h1)).unwrap();
    let n = 100_000;
    let samples = p1.sample(n, 99, None).unwrap();
    let edges: Vec<f64> = (0..=40).map(|i| -2.5 + i as f64 * 0.15).collect();
    let cdf = |x: f64| -> f64 {
        pts1.iter()
            .map(|p| Normal::new(p[0], h1).unwrap().cdf(x))
            .sum::<f64>()
            / pts1.len() as f64
    };
    // outer bins are open-ended
    let mut probs = Vec::new();
    let mut counts = vec![0usize; edges.len() + 1];
    probs.push(cdf(edges[0]));
    for w in edges.windows(2) {
        probs.push(cdf(w[1]) - cdf(w[0]));
    }
    probs.push(1.0 - cdf(*edges.last().unwrap()));
    for s in &samples {
        let bin = edges.partition_point(|&e| e <= s[0]);
        counts[bin] += 1;
    }
    let stat: f64 = counts
        .iter()
        .zip(&probs)
        .map(|(&c, &p)| {
            let e = p * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let pval = 1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat);
    checks.push((pval > 0.01, format!("1-D chi-square p = {pval:.3}")));

    let (eta, steps, runs) = (0.004, 64, 1000);
    let obs = reset(&TaskSpec::stack(), 0).unwrap();
    let mut norms = Vec::with_capacity(runs);
    for r in 0..runs as u64 {
        let mut p = PolicyHandle::drift(eta, 0.0, 17, 1).unwrap();
        p.reset(r);
        for _ in 0..steps {
            p.propose(&obs).unwrap();
        }
        let b = p.bias();
        norms.push((b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt());
    }
    let expected = eta * (steps as f64).sqrt();
    let mean = norms.iter().sum::<f64>() / runs as f64;
    let rms = (norms.iter().map(|x| x * x).sum::<f64>() / runs as f64).sqrt();
    let ok = (mean / expected - 1.0).abs() <= 0.3 && (rms / expected - 1.0).abs() <= 0.3;
    checks.push((ok, format!("drift mean/eta*sqrt(t) = {:.3}, rms ratio {:.3}", mean / expected, rms / expected)));
    report.record(3, "statistics", t, checks);
}

fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn criterion_4(report: &mut Report, bench: &Bench) {
    let t = Instant::now();
    let mut checks = Vec::new();

    let labels = progress_labels(10).unwrap();
    checks.push((labels[5] == 5.0 / 9.0, format!("10-frame label[5] = {}", labels[5])));

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dim = 21;
    let psi: Vec<f64> = (0..=dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let data: Vec<LabeledFrame> = (0..300)
        .map(|_| {
            let f: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..1.0)).collect();
            let y = f.iter().zip(&psi).map(|(a, b)| a * b).sum::<f64>() + psi[dim];
            LabeledFrame { features: f, label: y }
        })
        .collect();
    let fit = fit_reward("stack", &data, 0.0).unwrap();
    let err = fit.model.weights.iter().zip(&psi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    checks.push((err <= 1e-8, format!("planted recovery err {err:.1e}")));

    let held_out = generate_demos(&bench.config().task, 50, 0xfeed).unwrap().kept;
    let model = &bench.artifacts().reward;
    let mut rhos = Vec::new();
    let mut rising = 0;
    for traj in held_out.iter().take(50) {
        let r: Vec<f64> = traj.observations().map(|o| predict_reward(model, o).unwrap()).collect();
        let idx: Vec<f64> = (0..r.len()).map(|i| i as f64).collect();
        rhos.push(spearman(&r, &idx));
        if r.last() > r.first() {
            rising += 1;
        }
    }
    let mean = rhos.iter().sum::<f64>() / rhos.len() as f64;
    let min = rhos.iter().cloned().fold(f64::INFINITY, f64::min);
    checks.push((
        mean >= 0.9 && rhos.len() >= 45,
        format!("Spearman over {} held-out demos: mean {mean:.3}, min {min:.3}", rhos.len()),
    ));
    let frac = rising as f64 / rhos.len() as f64;
    checks.push((frac >= 0.95, format!("final > first reward in {:.0}%", 100.0 * frac)));
    report.record(4, "reward shaping", t, checks);
}

fn main() {
    let mut report = Report { lines: Vec::new() };
    criterion_1(&mut report);
    criterion_2(&mut report);
    criterion_3(&mut report);

    let config = RunConfig::default();
    let bench = Bench::prepare(config.clone()).unwrap();
    criterion_4(&mut report, &bench);

    let t = Instant::now();
    let main_run = bench.run_benchmark().unwrap();
    let base = main_run.arm("baseline").unwrap().success_rate;
    let reasoner = main_run.arm("reasoner").unwrap().success_rate;
    let gap = reasoner - base;
    report.record(
        5,
        "stack benchmark, 200 paired seeds, alpha 0.6",
        t,
        vec![(
            gap >= 0.05 && main_run.arms[0].n == 200,
            format!("baseline {base:.3}, reasoner {reasoner:.3}, gap {gap:+.3} (need >= +0.05)"),
        )],
    );

    let t = Instant::now();
    let sweep = bench.sweep_alpha(&[0.0, 0.2, 0.4, 0.6, 0.8, 1.0]).unwrap();
    let rate = |name: &str| sweep.arm(name).unwrap().success_rate;
    let (lo, hi) = (rate("alpha=0"), rate("alpha=1"));
    let interior: Vec<(String, f64)> = ["alpha=0.2", "alpha=0.4", "alpha=0.6", "alpha=0.8"]
        .iter()
        .map(|n| (n.to_string(), rate(n)))
        .collect();
    let dominating = interior.iter().any(|(_, r)| *r >= lo && *r >= hi);
    let same = |a: &str, b: &str| {
        serde_json::to_string(&sweep.arm(a).unwrap().episodes).unwrap()
            == serde_json::to_string(&sweep.arm(b).unwrap().episodes).unwrap()
    };
    let grid: Vec<String> = sweep.arms[1..].iter().map(|a| format!("{:.3}", a.success_rate)).collect();
    report.record(
        6,
        "alpha sweep",
        t,
        vec![
            (dominating, format!("rates [{}] over alpha 0..1", grid.join(", "))),
            (same("alpha=1", "baseline"), "alpha=1 seed-identical to baseline".into()),
        ],
    );

    let t = Instant::now();
    let abl = bench.ablate_sampling().unwrap();
    let kde = abl.arm("kde").unwrap().success_rate;
    let noise = abl.arm("noise").unwrap().success_rate;
    report.record(
        7,
        "sampling ablation",
        t,
        vec![(kde >= noise - 0.02, format!("kde {kde:.3}, noise {noise:.3} (need kde >= noise - 0.02)"))],
    );

    let t = Instant::now();
    let mut checks = Vec::new();
    let small = RunConfig {
        n_episodes: 24,
        ..config.clone()
    };
    let one = Bench::prepare(small.clone()).unwrap().with_threads(Some(1));
    let many = Bench::prepare(small.clone()).unwrap().with_threads(Some(4));
    let a = one.run_benchmark().unwrap().to_json().unwrap();
    let b = many.run_benchmark().unwrap().to_json().unwrap();
    checks.push((a == b, "benchmark report, 1 vs 4 workers".into()));
    let a = one.sweep_alpha(&[0.3, 0.7]).unwrap().to_json().unwrap();
    let b = many.sweep_alpha(&[0.3, 0.7]).unwrap().to_json().unwrap();
    checks.push((a == b, "alpha sweep report, 1 vs 4 workers".into()));
    let a = serde_json::to_string(&main_run.arms).unwrap();
    let b = serde_json::to_string(&bench.run_benchmark().unwrap().arms).unwrap();
    checks.push((a == b, "full benchmark rerun".into()));
    let obs = reset(&config.task, 5).unwrap();
    let proposal = [0.01, -0.02, 0.0, 0.0];
    let model = TabletopModel::exact();
    let search = |seed| {
        run_search(
            &obs,
            &proposal,
            &bench.artifacts().prior,
            &model,
            &bench.artifacts().reward,
            &config.search,
            &ActionBounds::for_chunk(1),
            seed,
        )
        .unwrap()
    };
    let (s1, s2) = (search(8), search(8));
    let t1 = serde_json::to_string(&s1.trace).unwrap();
    checks.push((t1 == serde_json::to_string(&s2.trace).unwrap() && s1.action == s2.action, "search trace rerun".into()));
    report.record(8, "determinism", t, checks);

    let failed = report.lines.iter().filter(|l| !l.0).count();
    println!("{} of {} criteria passed", report.lines.len() - failed, report.lines.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
