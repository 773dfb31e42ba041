//! Acceptance suite: one pass/fail line per criterion, non-zero exit on failure.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use rand::Rng;

use chanalloc::agent::{LinkParams, LinkState};
use chanalloc::assignment::{brute_force_optimal, for_each_assignment, is_injective, solve_optimal};
use chanalloc::experiment::{run_experiment, run_replications, Algorithm, Auto, ExperimentConfig};
use chanalloc::medium::{resolve_contention, Action, ContentionEntry, Medium};
use chanalloc::model::{QosModel, RewardSampler, SamplerKind};
use chanalloc::rng::{replication_seed, stream_rng, Stream};
use chanalloc::runner::{
    auction_iteration_bound, exploration_errors, min_explore_len, run_auction, run_simulation, AuctionMode, SimConfig,
};
use chanalloc::trace::Trace;

/// Ledger conservation over every trace produced by the suite.
#[derive(Default)]
struct Conservation {
    traces: usize,
    violations: usize,
    worst: f64,
}

static LEDGER: Mutex<Conservation> = Mutex::new(Conservation {
    traces: 0,
    violations: 0,
    worst: 0.0,
});

fn audit(trace: &Trace) {
    let expected = trace.horizon as f64 * trace.optimal_sum;
    let rel = (trace.total_reward + trace.final_regret() - expected).abs() / expected.abs().max(1.0);
    let mut l = LEDGER.lock().unwrap();
    l.traces += 1;
    l.worst = l.worst.max(rel);
    if rel > 1e-9 {
        l.violations += 1;
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn eps_for(k: usize, delta_min: f64) -> f64 {
    0.9 * delta_min / (4.0 * k as f64)
}

fn link_params(model: &QosModel, eps: f64, b0: u32) -> LinkParams {
    LinkParams {
        n_links: model.n_links(),
        n_channels: model.n_channels(),
        delta_min: model.delta_min(),
        q_min: model.q_min(),
        q_max: model.q_max(),
        eps,
        b0,
    }
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut agree = 0;
    for i in 0..1000u64 {
        let n = 2 + (i % 6) as usize;
        let k = n + ((i / 6) % 4) as usize;
        let m = 2 + ((i / 24) % 5) as usize;
        let d = [0.25, 0.5, 1.0][(i % 3) as usize];
        let model = QosModel::random(i, n, k, m, d).unwrap();
        let q = model.rows();
        let h = solve_optimal(&q).unwrap();
        let b = brute_force_optimal(&q).unwrap();
        if model.to_grid(h.value) == model.to_grid(b.value) && h.channel_of == b.channel_of {
            agree += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        agree == 1000 && secs < 10.0,
        format!("{agree}/1000 identical values and assignments in {secs:.2} s (limit 10 s)"),
    )
}

fn auction_convergence() -> Outcome {
    let example = auction_iteration_bound(2, 2, 0.1, 1.0, 0.5).floor();
    let mut ok = 0;
    let mut worst_ratio = 0.0f64;
    for i in 0..100u64 {
        let n = 2 + (i % 5) as usize;
        let model = QosModel::random(1000 + i, n, n, 4, 1.0).unwrap();
        let eps = eps_for(n, model.delta_min());
        let params = link_params(&model, eps, 30);
        let mut links: Vec<LinkState> = (0..n).map(|id| LinkState::new(id, params, i).unwrap()).collect();
        for (id, l) in links.iter_mut().enumerate() {
            l.load_estimates(model.row(id));
        }
        let bound = auction_iteration_bound(n, n, eps, model.q_max(), model.delta_min());
        let report = run_auction(&mut links, n, bound.floor() as u64).unwrap();
        let best = solve_optimal(&model.rows()).unwrap();
        let value: f64 = report.assignment.iter().enumerate().map(|(id, &c)| if c == 0 { 0.0 } else { model.mean(id, c) }).sum();
        if let Some(iters) = report.iterations_to_assign {
            worst_ratio = worst_ratio.max(iters as f64 / bound);
            if iters as f64 <= bound
                && is_injective(&report.assignment)
                && model.to_grid(value) == model.to_grid(best.value)
            {
                ok += 1;
            }
        }
    }
    outcome(
        ok == 100 && example == 45.0,
        format!("{ok}/100 optimal within the iteration bound (max iterations/bound {worst_ratio:.4}); bound for K=N=2, ε=0.1, Q_M=1, Δ_min=0.5 is {example}"),
    )
}

fn perturbation_invariance() -> Outcome {
    let mut rng = stream_rng(404, Stream::Instance);
    let (mut tested, mut same, mut seed) = (0, 0, 0u64);
    while tested < 1000 {
        seed += 1;
        let n = 2 + (seed % 5) as usize;
        let k = n + (seed % 3) as usize;
        let model = QosModel::random(seed, n, k, 4, 0.5).unwrap();
        let q = model.rows();
        let best = brute_force_optimal(&q).unwrap();
        let mut optimal_count = 0;
        for_each_assignment(&q, k, |_, v| {
            if model.to_grid(v) == model.to_grid(best.value) {
                optimal_count += 1;
            }
        });
        if optimal_count != 1 {
            continue;
        }
        tested += 1;
        let zmax = 0.99 * 3.0 * model.delta_min() / (8.0 * n as f64);
        let umax = model.delta_min() / (8.0 * n as f64);
        let extreme = tested % 2 == 0;
        let perturbed: Vec<Vec<f64>> = q
            .iter()
            .map(|row| {
                row.iter()
                    .map(|v| {
                        let z = if extreme {
                            if rng.random::<bool>() { zmax } else { -zmax }
                        } else {
                            rng.random_range(-zmax..=zmax)
                        };
                        v + z + rng.random_range(-umax..=umax)
                    })
                    .collect()
            })
            .collect();
        if brute_force_optimal(&perturbed).unwrap().channel_of == best.channel_of {
            same += 1;
        }
    }
    outcome(same == 1000, format!("{same}/1000 unique-optimum instances keep their argmax (half at extreme ±z)"))
}

fn no_bid_ties() -> Outcome {
    let mut ties = 0;
    let mut bids_seen = 0usize;
    for i in 0..10_000u64 {
        let n = 2 + (i % 4) as usize;
        // few ladder levels: many equal means across links
        let model = QosModel::random(50_000 + i, n, n, 2, 1.0).unwrap();
        let params = link_params(&model, eps_for(n, 1.0), 8);
        let mut links: Vec<LinkState> = (0..n).map(|id| LinkState::new(id, params, i).unwrap()).collect();
        for (id, l) in links.iter_mut().enumerate() {
            l.load_estimates(model.row(id));
        }
        let report = run_auction(&mut links, n, 10_000).unwrap();
        let mut owner: HashMap<u64, usize> = HashMap::new();
        for (link, bid) in &report.bids {
            bids_seen += 1;
            if let Some(&other) = owner.get(&bid.price.to_bits()) {
                if other != *link {
                    ties += 1;
                }
            }
            owner.insert(bid.price.to_bits(), *link);
        }
    }
    outcome(ties == 0, format!("{ties} exact ties among {bids_seen} bids over 10000 initializations"))
}

fn bits_stabilize() -> Outcome {
    let packets = 16u32;
    let (c1, auction) = (200u64, 200u64);
    let horizon: u64 = (1..=packets).map(|k| c1 + auction + (1u64 << k)).sum();
    let run = |sampler: SamplerKind, i: u64| {
        let n = 2 + (i % 9) as usize;
        let model = QosModel::random(7_000 + i, n, n, 4, 1.0).unwrap();
        let cfg = SimConfig {
            model,
            sampler,
            sampler_spread: 0.5,
            explore_len: c1,
            auction: AuctionMode::Practical { slots: auction },
            c2: 1,
            b0: 8,
            eps: eps_for(n, 1.0),
            horizon,
            seed: i,
            record_links: false,
        };
        let trace = run_simulation(&cfg).unwrap();
        audit(&trace);
        let b: Vec<u32> = trace.packets.iter().map(|p| p.bits).collect();
        let l = b.len();
        let monotone = b.windows(2).all(|w| w[0] <= w[1]);
        (monotone, monotone && l >= 3 && b[l - 3] == b[l - 1])
    };
    let mut monotone = 0;
    let mut settled = 0;
    for i in 0..100 {
        let (m, s) = run(SamplerKind::Deterministic, i);
        monotone += usize::from(m);
        settled += usize::from(s);
    }
    let noisy = (0..100).filter(|&i| run(SamplerKind::UniformBand, i).1).count();

    // two links bidding into one coarse cell on the same channel
    let model = QosModel::new(vec![1.0, 2.0, 3.0, 4.0], 1.0, vec![vec![4.0, 1.0], vec![4.0, 1.0]]).unwrap();
    let params = link_params(&model, 0.1, 2);
    let mut links: Vec<LinkState> = (0..2).map(|id| LinkState::new(id, params, 1).unwrap()).collect();
    for (id, l) in links.iter_mut().enumerate() {
        l.load_estimates(model.row(id));
    }
    let report = run_auction(&mut links, 2, 50).unwrap();
    for l in links.iter_mut() {
        l.end_packet();
    }
    let step = links.iter().all(|l| l.bits() == 3) && report.quantization_collisions >= 1;
    outcome(
        settled == 100 && monotone == 100 && step,
        format!(
            "exact rewards: {monotone}/100 non-decreasing, {settled}/100 constant over the final 3 of {packets} packets; \
             same-cell pair: b 2 -> {} after {} collision(s); (info) uniform-band rewards: {noisy}/100 constant",
            links[0].bits(),
            report.quantization_collisions
        ),
    )
}

fn exploration_error_rate() -> Outcome {
    let reps = 500u64;
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, m, sampler) in [("M=2", 2usize, SamplerKind::UniformBand), ("M=3 two-point", 3, SamplerKind::TwoPoint)] {
        let c1 = min_explore_len(2, 2, (m - 1) as f64);
        let mut failures = [0u32; 9];
        for rep in 0..reps {
            let seed = replication_seed(55, rep);
            let model = QosModel::random(seed, 2, 2, m, 1.0).unwrap();
            let cfg = SimConfig {
                model,
                sampler,
                sampler_spread: 1.0,
                explore_len: c1,
                auction: AuctionMode::Theory,
                c2: 1,
                b0: 8,
                eps: eps_for(2, 1.0),
                horizon: 1,
                seed,
                record_links: false,
            };
            let errs = exploration_errors(&cfg, 8).unwrap();
            for (k, e) in errs.iter().enumerate() {
                if *e > 3.0 / 16.0 {
                    failures[k + 1] += 1;
                }
            }
        }
        let mut freqs = Vec::new();
        for (k, &fails) in failures.iter().enumerate().skip(4).take(5) {
            let bound = 12.0 * (-(k as f64)).exp();
            let freq = f64::from(fails) / reps as f64;
            pass &= freq <= bound;
            freqs.push(format!("k={k}: {freq:.3}≤{bound:.3}"));
        }
        parts.push(format!("{label} (c_1={c1}) {}", freqs.join(", ")));
    }
    pass &= min_explore_len(2, 2, 1.0) == 162;
    outcome(pass, parts.join("; "))
}

fn regret_shape() -> Outcome {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::new(10, 10);
    cfg.horizon = 100_000;
    cfg.explore_len = Auto::Value(800);
    cfg.auction_slots = 500;
    cfg.reps = 100;
    cfg.write_traces = false;
    let on_trace = |_: u64, t: &Trace| {
        audit(t);
        Ok(())
    };
    let a = run_replications(&cfg, &on_trace).unwrap();
    cfg.algorithm = Algorithm::Random;
    let r = run_replications(&cfg, &on_trace).unwrap();
    let secs = start.elapsed().as_secs_f64();

    let conv_a = a.converged_by_packet_2 >= 0.9;
    let first = a.replications.iter().filter_map(|x| x.convergence_packet).max().unwrap_or(1);
    let mut incs = Vec::new();
    let mut prev = 0.0;
    for &(k, _, mean, _) in &a.packet_means {
        if k >= first {
            incs.push(mean - prev);
        }
        prev = mean;
    }
    let shape_b = !incs.is_empty() && incs.windows(2).all(|w| w[1] <= 1.1 * w[0]);
    let fa = a.replications.iter().map(|x| x.final_regret).sum::<f64>() / 100.0;
    let fr = r.replications.iter().map(|x| x.final_regret).sum::<f64>() / 100.0;
    let ratio = fr / fa;
    let wins = a
        .replications
        .iter()
        .zip(&r.replications)
        .filter(|(x, y)| x.final_regret < y.final_regret)
        .count();
    let max_step = incs.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
    outcome(
        conv_a && shape_b && ratio >= 10.0 && secs < 300.0,
        format!(
            "(a) {:.0}% converged by packet 2; (b) {} increments from packet {first}, max ratio {max_step:.3} (≤1.1); \
             (c) random/protocol final regret {ratio:.2} (≥10), paired wins {wins}/100; (info) log-fit R² {:.4} vs linear {:.4}, random linear R² {:.6}; {secs:.1} s (limit 300 s)",
            100.0 * a.converged_by_packet_2,
            incs.len(),
            a.log_fit.map_or(f64::NAN, |f| f.r2),
            a.linear_fit.map_or(f64::NAN, |f| f.r2),
            r.linear_fit.map_or(f64::NAN, |f| f.r2),
        ),
    )
}

fn ledger_conservation() -> Outcome {
    let l = LEDGER.lock().unwrap();
    outcome(
        l.traces > 0 && l.violations == 0,
        format!("{} traces audited, {} violations, worst relative error {:.2e}", l.traces, l.violations, l.worst),
    )
}

fn information_hygiene() -> Outcome {
    let mut rng = stream_rng(909, Stream::Instance);
    let mut violations = 0;
    for scenario in 0..1000u64 {
        let n = 2 + rng.random_range(0..5usize);
        let k = n + rng.random_range(0..4usize);
        let model = QosModel::random(scenario, n, k, 4, 1.0).unwrap();
        let sampler = RewardSampler::new(SamplerKind::UniformBand, 0.5, &model);
        let me = rng.random_range(0..n);
        let my_ch = rng.random_range(1..=k);
        let others_ch = |rng: &mut rand_chacha::ChaCha8Rng| loop {
            let c = rng.random_range(1..=k);
            if c != my_ch || k == 1 {
                break c;
            }
        };

        // data slot: rebuild everything off my channel, keep the same number of
        // other transmitters on it but relabel who they are
        let mut random_action = |rng: &mut rand_chacha::ChaCha8Rng, on_mine: bool| {
            let c = if on_mine { my_ch } else { others_ch(rng) };
            match rng.random_range(0..3) {
                0 => Action::Transmit(c),
                1 => Action::Sense(c),
                _ if on_mine => Action::Transmit(c),
                _ => Action::Idle,
            }
        };
        let mine = if rng.random::<bool>() { Action::Transmit(my_ch) } else { Action::Sense(my_ch) };
        let sharers = rng.random_range(0..n);
        let build = |rng: &mut rand_chacha::ChaCha8Rng, f: &mut dyn FnMut(&mut rand_chacha::ChaCha8Rng, bool) -> Action| {
            let mut others: Vec<usize> = (0..n).filter(|&x| x != me).collect();
            // random subset of the other links shares my channel
            for i in (1..others.len()).rev() {
                others.swap(i, rng.random_range(0..=i));
            }
            let mut actions = vec![Action::Idle; n];
            actions[me] = mine;
            for (j, &o) in others.iter().enumerate() {
                actions[o] = if j < sharers.min(others.len()) { Action::Transmit(my_ch) } else { f(rng, false) };
            }
            actions
        };
        let a1 = build(&mut rng, &mut random_action);
        let a2 = build(&mut rng, &mut random_action);
        let observe = |actions: &[Action]| {
            let mut medium = Medium::new(sampler.clone(), n, k, scenario);
            let (_, obs) = medium.resolve_data_slot(actions).unwrap();
            let o = obs[me];
            (o.channel, o.eta, o.busy, o.reward.to_bits())
        };
        if k > 1 && observe(&a1) != observe(&a2) {
            violations += 1;
        }

        // contention window: same back-offs on my channel under new owners,
        // arbitrary activity elsewhere
        let bits = 3;
        let my_backoff = rng.random_range(0..=8u64);
        let on_mine: Vec<u64> = (0..sharers.min(n - 1)).map(|_| rng.random_range(0..=8u64)).collect();
        let window = |rng: &mut rand_chacha::ChaCha8Rng| {
            let mut others: Vec<usize> = (0..n).filter(|&x| x != me).collect();
            for i in (1..others.len()).rev() {
                others.swap(i, rng.random_range(0..=i));
            }
            let mut entries = vec![ContentionEntry { link: me, channel: my_ch, backoff: my_backoff }];
            for (j, &o) in others.iter().enumerate() {
                if j < on_mine.len() {
                    entries.push(ContentionEntry { link: o, channel: my_ch, backoff: on_mine[j] });
                } else if k > 1 && rng.random::<bool>() {
                    entries.push(ContentionEntry { link: o, channel: others_ch(rng), backoff: rng.random_range(0..=8) });
                }
            }
            for i in (1..entries.len()).rev() {
                entries.swap(i, rng.random_range(0..=i));
            }
            resolve_contention(&entries, n, k, bits).unwrap().observations[me]
        };
        if window(&mut rng) != window(&mut rng) {
            violations += 1;
        }
    }
    outcome(violations == 0, format!("{violations} violations over 1000 randomized scenarios (data slot and contention window)"))
}

fn dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .filter(|(name, _)| name != "config.txt")
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(4, 5);
    cfg.horizon = 20_000;
    cfg.reps = 4;
    cfg.seed = 2024;
    cfg.sampler = SamplerKind::TruncatedBell;
    let mut runs = Vec::new();
    for (name, workers) in [("first", "1"), ("second", "3")] {
        std::env::set_var(chanalloc::experiment::WORKERS_ENV, workers);
        cfg.out = tmp.path().join(name);
        run_experiment(&cfg).unwrap();
        runs.push(dir_files(&cfg.out));
    }
    std::env::remove_var(chanalloc::experiment::WORKERS_ENV);
    let identical = runs[0] == runs[1];
    let traces = runs[0].iter().filter(|(n, _)| n.starts_with("trace_")).count();
    for rep in 0..cfg.reps {
        let (_, t) = chanalloc::experiment::run_replication(&cfg, rep).unwrap();
        audit(&t);
    }
    outcome(
        identical && traces == 4,
        format!("{} output files ({traces} traces) bit-identical across two runs with 1 and 3 workers", runs[0].len()),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("oracle equivalence", oracle_equivalence),
        ("auction convergence within the iteration bound", auction_convergence),
        ("perturbation invariance of the optimum", perturbation_invariance),
        ("no tied bids between links", no_bid_ties),
        ("back-off bits settle", bits_stabilize),
        ("exploration error rate", exploration_error_rate),
        ("regret shape at N=K=10", regret_shape),
        ("ledger conservation", ledger_conservation),
        ("information hygiene", information_hygiene),
        ("determinism", determinism),
    ];
    // conservation is audited over the traces of every other criterion
    let order = [0, 1, 2, 3, 4, 5, 6, 8, 9, 7];
    let mut results: Vec<Option<Outcome>> = (0..criteria.len()).map(|_| None).collect();
    for &i in &order {
        results[i] = Some((criteria[i].1)());
    }
    let mut passed = 0;
    for (i, (name, _)) in criteria.iter().enumerate() {
        let o = results[i].as_ref().unwrap();
        passed += usize::from(o.pass);
        println!("criterion {:>2} [{}] {name}: {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {passed}/{} criteria passed", criteria.len());
    if passed != criteria.len() {
        std::process::exit(1);
    }
}
