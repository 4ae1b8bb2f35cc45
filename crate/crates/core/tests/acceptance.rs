//! End-to-end acceptance checks. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion:
//!
//! ```text
//! cargo test --release -p retecs --test acceptance
//! ```
//!
//! The Paint Control check reads the public ABB log from
//! `$RETECS_PAINTCONTROL` or `crates/core/data/paintcontrol.csv`.

use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use retecs::approx::{fit_tree, Experience, NeuralModel, Node, TreeParams};
use retecs::dataset::{load_dataset, synth_generate, write_canonical};
use retecs::evaluation::trend_fit;
use retecs::experiment::run_experiment_on;
use retecs::rewards::{reward_failure_count, reward_test_case_failure, reward_time_ranked};
use retecs::*;

type Outcome = std::result::Result<String, String>;

fn id(i: usize) -> TestId {
    TestId::new(format!("t{i}")).unwrap()
}

fn cycle_of(failed: &[bool]) -> CiCycle {
    let records = failed
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let s = if f { Status::Failed } else { Status::Passed };
            TestCaseRecord::new(id(i), 1.0, s, 0).unwrap()
        })
        .collect();
    CiCycle::new(0, records).unwrap()
}

fn schedule_of(order: &[usize], pool: usize) -> Schedule {
    Schedule::new(order.iter().map(|&i| id(i)).collect(), pool).unwrap()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                go(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// NAPFD straight from its definition over index lists.
fn napfd_oracle(failed: &[bool], order: &[usize]) -> f64 {
    let total = failed.iter().filter(|&&f| f).count();
    if total == 0 {
        return 1.0;
    }
    let ranks: Vec<usize> = order
        .iter()
        .enumerate()
        .filter(|(_, &t)| failed[t])
        .map(|(k, _)| k + 1)
        .collect();
    if ranks.is_empty() {
        return 0.0;
    }
    let n = order.len() as f64;
    let m = ranks.len() as f64;
    let p = m / total as f64;
    p - ranks.iter().sum::<usize>() as f64 / (m * n) + p / (2.0 * n)
}

fn criterion_napfd() -> Outcome {
    let (mut checked, mut maxima) = (0usize, 0usize);
    for n in 1..=6 {
        let perms = permutations(n);
        for mask in 0u32..(1 << n) {
            let failed: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            let cycle = cycle_of(&failed);
            let total = cycle.failure_count();
            for k in 0..=n {
                let mut best = f64::NEG_INFINITY;
                for perm in &perms {
                    let order = &perm[..k];
                    let got =
                        napfd(&schedule_of(order, n), &cycle, total).map_err(|e| e.to_string())?;
                    let want = napfd_oracle(&failed, order);
                    if (got - want).abs() > 1e-12 {
                        return Err(format!(
                            "n={n} mask={mask:b} order={order:?}: {got} vs {want}"
                        ));
                    }
                    best = best.max(got);
                    checked += 1;
                }
                // Maximality only holds when the schedule has room for every failure.
                if k < total {
                    continue;
                }
                let mut first: Vec<usize> = (0..n).collect();
                first.sort_by_key(|&i| !failed[i]);
                let v = napfd(&schedule_of(&first[..k], n), &cycle, total).unwrap();
                maxima += 1;
                if (v - best).abs() > 1e-12 {
                    return Err(format!(
                        "failures-first {v} below maximum {best} (n={n} mask={mask:b} k={k})"
                    ));
                }
            }
        }
    }
    Ok(format!("{checked} schedules, {maxima} maxima"))
}

/// Rewards straight from their definitions over index lists.
fn rewards_oracle(failed: &[bool], order: &[usize]) -> [Vec<f64>; 3] {
    let n = failed.len();
    let f = order.iter().filter(|&&t| failed[t]).count() as f64;
    let mut fc = vec![0.0; n];
    let mut tc = vec![0.0; n];
    let mut tr = vec![0.0; n];
    for (k, &t) in order.iter().enumerate() {
        fc[t] = f;
        tc[t] = if failed[t] { 1.0 } else { 0.0 };
        let status = if failed[t] { 0.0 } else { 1.0 };
        let later = order[k + 1..].iter().filter(|&&u| failed[u]).count() as f64;
        tr[t] = f - status * later;
    }
    [fc, tc, tr]
}

fn rewards_match(failed: &[bool], order: &[usize]) -> std::result::Result<(), String> {
    let cycle = cycle_of(failed);
    let s = schedule_of(order, failed.len());
    let want = rewards_oracle(failed, order);
    let got = [
        reward_failure_count(&cycle, &s),
        reward_test_case_failure(&cycle, &s),
        reward_time_ranked(&cycle, &s),
    ];
    for (name, (g, w)) in ["failcount", "tcfail", "timerank"]
        .iter()
        .zip(got.iter().zip(&want))
    {
        let g = g.as_ref().map_err(|e| e.to_string())?;
        if g.per_test.len() != failed.len() {
            return Err(format!(
                "{name}: {} entries for {} tests",
                g.per_test.len(),
                failed.len()
            ));
        }
        for (i, &expected) in w.iter().enumerate() {
            if g.get(&id(i)) != Some(expected) {
                return Err(format!(
                    "{name} on {failed:?} / {order:?}: t{i} got {:?}, want {expected}",
                    g.get(&id(i))
                ));
            }
        }
    }
    Ok(())
}

fn criterion_rewards() -> Outcome {
    let expect = |rf: fn(&CiCycle, &Schedule) -> retecs::Result<RewardAssignment>,
                  failed: &[bool],
                  order: &[usize],
                  want: &[f64]|
     -> std::result::Result<(), String> {
        let r =
            rf(&cycle_of(failed), &schedule_of(order, failed.len())).map_err(|e| e.to_string())?;
        let got: Vec<f64> = (0..failed.len()).map(|i| r.get(&id(i)).unwrap()).collect();
        if got == want {
            Ok(())
        } else {
            Err(format!("{failed:?} / {order:?}: {got:?}, want {want:?}"))
        }
    };
    let (t, f) = (true, false);
    // 3 failures among 5 scheduled, 2 unscheduled
    expect(
        reward_failure_count,
        &[t, f, t, f, t, f, f],
        &[0, 1, 2, 3, 4],
        &[3., 3., 3., 3., 3., 0., 0.],
    )?;
    expect(reward_failure_count, &[f, f, f], &[0, 1], &[0., 0., 0.])?;
    expect(reward_failure_count, &[t], &[0], &[1.])?;
    expect(reward_test_case_failure, &[t, f, t], &[0, 1], &[1., 0., 0.])?;
    expect(
        reward_time_ranked,
        &[f, t, t, f],
        &[0, 1, 2, 3],
        &[0., 2., 2., 2.],
    )?;
    expect(reward_time_ranked, &[f, f, f], &[0, 1, 2], &[0., 0., 0.])?;
    expect(reward_time_ranked, &[t], &[0], &[1.])?;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let n = rng.random_range(1..=15);
        let failed: Vec<bool> = (0..n).map(|_| rng.random_bool(0.35)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order.truncate(rng.random_range(0..=n));
        rewards_match(&failed, &order)?;
    }
    Ok("worked examples + 1000 random instances".into())
}

fn random_batch(rng: &mut ChaCha8Rng, dim: usize, n: usize) -> Vec<Experience> {
    (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
            Experience::new(
                FeatureVector::from_input(&x).unwrap(),
                rng.random_range(-1.0..2.0),
            )
            .unwrap()
        })
        .collect()
}

fn gradient_check() -> std::result::Result<[usize; 4], String> {
    const EPS: f64 = 1e-5;
    const TOL: f64 = 1e-4;
    let dim = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut checked, mut kinks, mut tiny, mut zeros) = (0, 0, 0, 0);
    for layers in 1..=3 {
        for width in [12, 32, 64, 100] {
            let hidden = vec![width; layers];
            let mut model = NeuralModel::new(dim, &hidden, &mut rng).map_err(|e| e.to_string())?;
            let batch = random_batch(&mut rng, dim, 16);
            let (_, grad) = model.gradient(&batch).map_err(|e| e.to_string())?;
            let base = model.params();
            let loss_at = |m: &mut NeuralModel, i: usize, delta: f64| {
                let mut p = base.clone();
                p[i] += delta;
                m.set_params(&p).unwrap();
                m.loss(&batch).unwrap()
            };
            let picks = rand::seq::index::sample(&mut rng, base.len(), base.len().min(250));
            for i in picks {
                let plus = loss_at(&mut model, i, EPS);
                let minus = loss_at(&mut model, i, -EPS);
                let mid = loss_at(&mut model, i, 0.0);
                let (right, left) = ((plus - mid) / EPS, (mid - minus) / EPS);
                // One-sided slopes disagreeing means a ReLU switched inside the stencil.
                if (right - left).abs() > 1e-3 * right.abs().max(left.abs()).max(1e-6) {
                    kinks += 1;
                    continue;
                }
                let numeric = (plus - minus) / (2.0 * EPS);
                let scale = grad[i].abs().max(numeric.abs());
                // Central differences cannot resolve below the loss's rounding error.
                let floor = 10.0 * f64::EPSILON * mid.abs().max(1.0) / EPS;
                if scale == 0.0 {
                    zeros += 1;
                } else if TOL * scale < floor {
                    tiny += 1;
                }
                if (grad[i] - numeric).abs() > (TOL * scale).max(floor) {
                    return Err(format!(
                        "{layers}x{width} param {i}: analytic {} vs numeric {numeric}",
                        grad[i]
                    ));
                }
                checked += 1;
            }
            model.set_params(&base).unwrap();
        }
    }
    Ok([checked, kinks, zeros, tiny])
}

fn gini(pos: usize, n: usize) -> f64 {
    let p = pos as f64 / n as f64;
    1.0 - p * p - (1.0 - p) * (1.0 - p)
}

/// Best root split by trying every feature and every midpoint.
fn root_split_oracle(xs: &[Vec<f64>], ys: &[bool]) -> Option<(usize, f64)> {
    let n = ys.len();
    let pos = ys.iter().filter(|&&y| y).count();
    if pos == 0 || pos == n {
        return None;
    }
    let parent = gini(pos, n);
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..xs[0].len() {
        let mut vals: Vec<f64> = xs.iter().map(|x| x[f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let thr = (w[0] + w[1]) / 2.0;
            let (mut ln, mut lp, mut rn, mut rp) = (0, 0, 0, 0);
            for (x, &y) in xs.iter().zip(ys) {
                if x[f] <= thr {
                    ln += 1;
                    lp += y as usize;
                } else {
                    rn += 1;
                    rp += y as usize;
                }
            }
            let gain = parent - (ln as f64 * gini(lp, ln) + rn as f64 * gini(rp, rn)) / n as f64;
            if best.is_none_or(|(_, _, g)| gain > g + 1e-12) {
                best = Some((f, thr, gain));
            }
        }
    }
    best.map(|(f, t, _)| (f, t))
}

fn tree_root_check() -> std::result::Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params = TreeParams {
        max_depth: Some(1),
        min_samples_split: 2,
        ..Default::default()
    };
    for trial in 0..2000 {
        let n = rng.random_range(1..=8);
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..3)
                    .map(|_| f64::from(rng.random_range(0u8..4)) / 4.0)
                    .collect()
            })
            .collect();
        let ys: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let batch: Vec<Experience> = xs
            .iter()
            .zip(&ys)
            .map(|(x, &y)| {
                Experience::new(
                    FeatureVector::from_input(x).unwrap(),
                    if y { 1.0 } else { 0.0 },
                )
                .unwrap()
            })
            .collect();
        let model = fit_tree(&batch, &params).map_err(|e| e.to_string())?;
        let got = match model.root() {
            Node::Leaf { .. } => None,
            Node::Split {
                feature, threshold, ..
            } => Some((*feature, *threshold)),
        };
        let want = root_split_oracle(&xs, &ys);
        if got != want {
            return Err(format!(
                "trial {trial} ({xs:?}, {ys:?}): {got:?} vs {want:?}"
            ));
        }
    }
    Ok(2000)
}

fn criterion_approximators() -> Outcome {
    let [checked, kinks, zeros, tiny] = gradient_check()?;
    let trees = tree_root_check()?;
    Ok(format!(
        "{checked} gradient entries ({zeros} exactly zero, {tiny} below rounding floor, \
         {kinks} kink crossings skipped), {trees} root splits"
    ))
}

fn learnability_dataset() -> Dataset {
    synth_generate(&SynthConfig {
        test_count: 100,
        cycle_count: 300,
        always_fail_fraction: 0.2,
        noise_flip_probability: 0.02,
        ..Default::default()
    })
    .unwrap()
}

fn criterion_learnability() -> Outcome {
    let ds = learnability_dataset();
    let run = |agent| {
        let cfg = ExperimentConfig {
            agent,
            iterations: 10,
            ..Default::default()
        };
        run_experiment_on(&cfg, &ds).map_err(|e| e.to_string())
    };
    let network = run(AgentKind::Network)?;
    let random = run(AgentKind::Random)?;
    let late = network.mean.mean_over(200..300).unwrap();
    let late_random = random.mean.mean_over(200..300).unwrap();
    let slope = trend_fit(&network.mean).map_err(|e| e.to_string())?.slope;
    let detail = format!("late mean {late:.4}, random {late_random:.4}, slope {slope:.2e}");
    if late >= 0.75 && late - late_random >= 0.2 && slope > 0.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn paint_control_path() -> PathBuf {
    std::env::var_os("RETECS_PAINTCONTROL")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/paintcontrol.csv"))
}

fn criterion_paint_control() -> Outcome {
    let path = paint_control_path();
    if !path.exists() {
        return Err(format!("dataset not found at {}", path.display()));
    }
    let ds = load_dataset(&path, LogFormat::Abb).map_err(|e| e.to_string())?;
    let s = ds.stats();
    let pct = (s.failed_fraction * 10000.0).round() / 100.0;
    if (s.distinct_tests, s.commit_count, s.execution_count) != (114, 312, 25594) || pct != 19.36 {
        return Err(format!(
            "stats {} / {} / {} / {pct}%",
            s.distinct_tests, s.commit_count, s.execution_count
        ));
    }
    let cfg = ExperimentConfig {
        agent: AgentKind::Network,
        agent_config: AgentConfig {
            history_length: 4,
            reward: RewardFunction::TestCaseFailure,
            ..Default::default()
        },
        iterations: 30,
        ..Default::default()
    };
    let r = run_experiment_on(&cfg, &ds).map_err(|e| e.to_string())?;
    let n = r.mean.len();
    let first = r.mean.mean_over(0..60).unwrap();
    let last = r.mean.mean_over(n - 60..n).unwrap();
    let slope = trend_fit(&r.mean).map_err(|e| e.to_string())?.slope;
    let detail = format!("stats match, slope {slope:.2e}, first 60 {first:.4}, last 60 {last:.4}");
    if slope > 0.0 && last >= first {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn retecs(args: &[&str]) -> std::result::Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_retecs"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "retecs {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn write_synth(dir: &std::path::Path, cycles: usize) -> PathBuf {
    let path = dir.join("synth.csv");
    let ds = synth_generate(&SynthConfig {
        cycle_count: cycles,
        ..Default::default()
    })
    .unwrap();
    let mut buf = Vec::new();
    write_canonical(&ds, &mut buf).unwrap();
    std::fs::write(&path, buf).unwrap();
    path
}

fn criterion_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = write_synth(dir.path(), 60);
    let data = data.to_str().unwrap();
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        retecs(&[
            "run",
            "--dataset",
            data,
            "--agent",
            "network",
            "--iterations",
            "4",
            "--seed",
            "17",
            "--out",
            out.to_str().unwrap(),
        ])?;
        outputs.push(std::fs::read(out.join("results.csv")).map_err(|e| e.to_string())?);
    }
    if outputs[0] == outputs[1] {
        Ok(format!("{} identical bytes", outputs[0].len()))
    } else {
        Err("results.csv differs between runs".into())
    }
}

fn criterion_compare() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = write_synth(dir.path(), 300);
    let out = dir.path().join("cmp");
    retecs(&[
        "compare",
        "--dataset",
        data.to_str().unwrap(),
        "--agent",
        "tree",
        "--baseline",
        "network",
        "--iterations",
        "10",
        "--out",
        out.to_str().unwrap(),
    ])?;
    let text =
        std::fs::read_to_string(out.join("diff_network-tcfail.csv")).map_err(|e| e.to_string())?;
    let rows = text.lines().count() - 1;
    if rows == 10 {
        Ok(format!("{rows} grouped rows"))
    } else {
        Err(format!("{rows} grouped rows, expected 10"))
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome, Duration); 7] = [
        (
            "napfd oracle equivalence",
            criterion_napfd,
            Duration::from_secs(10),
        ),
        ("reward oracles", criterion_rewards, Duration::from_secs(5)),
        (
            "approximator numerics",
            criterion_approximators,
            Duration::from_secs(30),
        ),
        (
            "synthetic learnability",
            criterion_learnability,
            Duration::from_secs(180),
        ),
        (
            "paint control replication",
            criterion_paint_control,
            Duration::from_secs(600),
        ),
        (
            "determinism",
            criterion_determinism,
            Duration::from_secs(60),
        ),
        (
            "tree vs network comparison",
            criterion_compare,
            Duration::from_secs(600),
        ),
    ];
    let mut failures = 0;
    for (k, (name, check, limit)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(d) if elapsed > limit => Err(format!("{d}; took {elapsed:.1?}, limit {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail}; {elapsed:.1?})", k + 1),
            Err(detail) => {
                failures += 1;
                println!("criterion {} {name}: FAIL ({detail}; {elapsed:.1?})", k + 1);
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
