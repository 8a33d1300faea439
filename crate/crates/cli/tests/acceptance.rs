//! End-to-end acceptance suite. Each criterion prints one PASS or FAIL line;
//! the process fails if any criterion fails.

use std::collections::{BTreeSet, HashSet};
use std::f64::consts::{PI, TAU};
use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use pnb_cli::{cmd_solve, gap_percent, Format, PeelArg, QueueArg, SolveArgs};
use pnb_core::builder::{build_initial, build_structure, weight_phase_one, weight_phase_two};
use pnb_core::diagram::Label;
use pnb_core::instance::SplitMix64;
use pnb_core::orbital::{self, cross, norm, sub, Constants, Vec3};
use pnb_core::{
    evaluate_tour, generate, BoundIntervalTree, BoundMemo, Diagram, NodeId, PeelAndBound, PhaseTwoMode,
    SolutionTrie, SolverConfig, Tour, TransferModel,
};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(rest: &mut Vec<usize>, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest.is_empty() {
            out.push(cur.clone());
            return;
        }
        for i in 0..rest.len() {
            let x = rest.remove(i);
            cur.push(x);
            rec(rest, cur, out);
            cur.pop();
            rest.insert(i, x);
        }
    }
    let mut out = Vec::new();
    rec(&mut (1..=n).collect(), &mut Vec::new(), &mut out);
    out
}

fn with_earth(p: &[usize]) -> Tour {
    let mut s = vec![0];
    s.extend_from_slice(p);
    Tour(s)
}

/// Cost of every permutation on a private trie.
fn all_costs(model: &TransferModel) -> Vec<(Vec<usize>, f64)> {
    let mut trie = SolutionTrie::new(1);
    permutations(model.asteroid_count())
        .into_iter()
        .map(|p| {
            let c = evaluate_tour(model, &with_earth(&p), &mut trie).unwrap();
            (p, c)
        })
        .collect()
}

fn solve_args(n: usize, seed: u64) -> SolveArgs {
    SolveArgs {
        instance: None,
        n: Some(n),
        seed,
        epoch_origin: 0.0,
        dd_width: 2048,
        search_width: 400,
        multi: 1,
        peel: PeelArg::Maximal,
        queue: QueueArg::WorstBound,
        time_limit: None,
        est_eat: false,
        trace_out: None,
        format: Format::Text,
    }
}

fn oracle_equivalence() -> Check {
    let start = Instant::now();
    let mut worst_search = 0.0f64;
    for n in 4..=6 {
        for seed in 1..=20 {
            let s = cmd_solve(&solve_args(n, seed)).map_err(|e| e.to_string())?;
            ensure!(s.proven_optimal, "n={n} seed={seed}: not proven optimal");
            let model = generate(n, seed).unwrap().model();
            let best = all_costs(&model).into_iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
            ensure!(s.ub.to_bits() == best.to_bits(), "n={n} seed={seed}: solver {} vs enumeration {best}", s.ub);
            let replay = evaluate_tour(&model, &Tour::parse(&s.tour).unwrap(), &mut SolutionTrie::new(1)).unwrap();
            ensure!(replay.to_bits() == best.to_bits(), "n={n} seed={seed}: reported tour costs {replay}");
            ensure!(s.gap_percent == 0.0, "n={n} seed={seed}: gap {}", s.gap_percent);
            ensure!(
                s.max_search_evaluations <= 400 * (n as u64 - 1),
                "n={n} seed={seed}: a search made {} calls",
                s.max_search_evaluations
            );
            ensure!(s.post_build_relaxed_calls == 0, "n={n} seed={seed}: relaxed calls after construction");
            worst_search = worst_search.max(s.max_search_evaluations as f64 / (n - 1) as f64);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 300.0, "60 instances took {secs:.0} s");
    Ok(format!("60 instances bit-identical to enumeration in {secs:.0} s"))
}

fn construction_call_budget() -> Check {
    let mut notes = Vec::new();
    for n in [5u64, 10] {
        let model = generate(n as usize, 42).unwrap().model();
        let mut memo = BoundMemo::new(1);
        let (_, r) = build_initial(&model, &mut memo, PhaseTwoMode::Naive).map_err(|e| e.to_string())?;
        let (one, two) = (n * n - n, n * n * n - 2 * n * n + n);
        ensure!(r.phase1_relaxed_calls == one, "n={n}: phase one made {} relaxed calls", r.phase1_relaxed_calls);
        ensure!(r.phase2_calls == two, "n={n}: phase two made {} relaxed calls", r.phase2_calls);
        ensure!(model.counts().b_relaxed == one + two, "n={n}: counter reads {}", model.counts().b_relaxed);
        ensure!(r.root_calls == n, "n={n}: {} root legs", r.root_calls);

        let model = generate(n as usize, 42).unwrap().model();
        let mut memo = BoundMemo::new(1);
        let (_, r) = build_initial(&model, &mut memo, PhaseTwoMode::Incumbent).map_err(|e| e.to_string())?;
        ensure!(r.phase2_calls + r.phase2_pruned == two, "n={n}: default phase two covers {} pairs", r.phase2_calls + r.phase2_pruned);
        notes.push(format!("n={n}: {one} + {two}"));
    }
    Ok(notes.join(", "))
}

fn frozen_relaxed_calls() -> Check {
    let mut checked = 0;
    for (n, seed) in [(5, 1), (5, 2), (6, 3), (6, 4)] {
        let model = generate(n, seed).unwrap().model();
        let mut solver = PeelAndBound::new(&model, SolverConfig::default()).map_err(|e| e.to_string())?;
        let after_build = model.counts().b_relaxed;
        while solver.step().is_some() {
            ensure!(model.counts().b_relaxed == after_build, "n={n} seed={seed}: relaxed call during the loop");
            ensure!(
                model.counts().b == solver.memo().trie.evaluations(),
                "n={n} seed={seed}: black box called outside the trie"
            );
        }
        ensure!(model.counts().b_capped == 0, "capped calls without est-eat");
        let (tour, _) = solver.incumbent();
        let tour = tour.clone();
        let mut trie = solver.memo().trie.clone();
        let before = model.counts().b;
        for p in permutations(n).into_iter().take(24).map(|p| with_earth(&p)).chain([tour]) {
            let _ = evaluate_tour(&model, &p, &mut trie);
        }
        let seen = model.counts().b;
        for p in permutations(n).into_iter().take(24).map(|p| with_earth(&p)) {
            let _ = evaluate_tour(&model, &p, &mut trie);
        }
        ensure!(model.counts().b == seen, "re-evaluating seen tours made calls");
        ensure!(seen >= before, "counter went backwards");
        checked += 1;
    }
    Ok(format!("{checked} solves, relaxed counter frozen after construction"))
}

fn trace_monotonicity() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let mut notes = Vec::new();
    for seed in [42, 7] {
        let path = dir.path().join(format!("trace{seed}.jsonl"));
        let mut args = solve_args(10, seed);
        args.time_limit = Some(60.0);
        args.trace_out = Some(path.clone());
        let s = cmd_solve(&args).map_err(|e| e.to_string())?;
        let text = std::fs::read_to_string(&path).unwrap();
        let recs: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        ensure!(!recs.is_empty(), "seed={seed}: empty trace");
        let (mut lb, mut ub) = (f64::NEG_INFINITY, f64::INFINITY);
        for r in &recs {
            let (l, u) = (r["lb"].as_f64().unwrap(), r["ub"].as_f64().unwrap());
            ensure!(l >= lb, "seed={seed}: lb fell from {lb} to {l}");
            ensure!(u <= ub, "seed={seed}: ub rose from {ub} to {u}");
            ensure!(l <= u, "seed={seed}: lb {l} above ub {u}");
            (lb, ub) = (l, u);
        }
        ensure!(s.ub == ub && s.lb >= lb && s.lb <= s.ub, "seed={seed}: summary disagrees with trace");
        let gap = 100.0 * (s.ub - s.lb) / s.ub;
        ensure!((s.gap_percent - gap).abs() <= 1e-12 && s.gap_percent >= 0.0, "seed={seed}: gap {}", s.gap_percent);
        ensure!(s.gap_percent == gap_percent(s.lb, s.ub), "seed={seed}: gap formula");
        ensure!(s.max_search_evaluations <= 400 * 9, "seed={seed}: search made {} calls", s.max_search_evaluations);
        ensure!(s.post_build_relaxed_calls == 0, "seed={seed}: relaxed calls after construction");
        notes.push(format!("seed {seed}: {} records, lb {:.2} ub {:.2} gap {:.2}%", recs.len(), s.lb, s.ub, s.gap_percent));
    }
    Ok(notes.join("; "))
}

fn restart_monotonicity() -> Check {
    let model = generate(10, 11).unwrap().model();
    let mut rng = SplitMix64::new(2024);
    for q in 0..100 {
        let from = (rng.next_u64() % 11) as usize;
        let to = 1 + ((from + 1 + (rng.next_u64() % 10) as usize) % 11).max(1) - 1;
        let to = if to == from || to == 0 { 1 + from % 10 } else { to };
        let eta = rng.uniform(0.0, 3000.0);
        let mut prev = f64::INFINITY;
        for k in 1..=5 {
            let z = model.black_box(&model.query(from, to, eta).multi(k)).map_err(|e| e.to_string())?.z;
            ensure!(z <= prev, "query {q} ({from}->{to} at {eta}): multi={k} gives {z} > {prev}");
            prev = z;
        }
    }
    Ok("100 queries, multi 1..5".into())
}

fn kepler_accuracy() -> Check {
    let mut rng = SplitMix64::new(5);
    let mut worst = 0.0f64;
    for _ in 0..100_000 {
        let m = rng.uniform(-PI, PI);
        let e = rng.uniform(0.0, 0.99);
        let ecc = orbital::solve_kepler(m, e).map_err(|e| e.to_string())?;
        worst = worst.max((ecc - e * ecc.sin() - m).abs());
    }
    ensure!(worst <= 1e-12, "worst residual {worst:e}");
    Ok(format!("worst residual {worst:.1e}"))
}

fn point(r: f64, lon: f64, lat: f64) -> Vec3 {
    [r * lat.cos() * lon.cos(), r * lat.cos() * lon.sin(), r * lat.sin()]
}

fn lambert_accuracy() -> Check {
    let au = Constants::AU_KM;
    let mut rng = SplitMix64::new(6);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let lon = rng.uniform(0.0, TAU);
        let r1 = point(rng.uniform(0.5, 4.0) * au, lon, rng.uniform(-0.3, 0.3));
        let r2 = point(rng.uniform(0.5, 4.0) * au, lon + rng.uniform(0.05, TAU - 0.05), rng.uniform(-0.3, 0.3));
        let tof = rng.uniform(20.0, 900.0) * Constants::DAY_SECONDS;
        let sol = orbital::lambert(&r1, &r2, tof, true).map_err(|e| e.to_string())?;
        let (r, _) = orbital::propagate_cartesian(&r1, &sol.v_depart, tof)
            .map_err(|e| format!("{e} for r1={r1:?} v={:?} tof={tof}", sol.v_depart))?;
        worst = worst.max(norm(&sub(&r, &r2)) / norm(&r2));
        ensure!(cross(&r1, &sol.v_depart)[2] > 0.0, "retrograde solution");
    }
    ensure!(worst <= 1e-6, "worst relative defect {worst:e}");

    let mu = Constants::MU_SUN;
    let (ra, rb) = (au, 1.524 * au);
    let a = 0.5 * (ra + rb);
    let tof = PI * (a.powi(3) / mu).sqrt();
    let ang = PI - 1e-7;
    let sol = orbital::lambert(&[ra, 0.0, 0.0], &[rb * ang.cos(), rb * ang.sin(), 0.0], tof, true)
        .map_err(|e| e.to_string())?;
    let vp = (mu * (2.0 / ra - 1.0 / a)).sqrt();
    let va = (mu * (2.0 / rb - 1.0 / a)).sqrt();
    let hd = ((norm(&sol.v_depart) - vp) / vp).abs().max(((norm(&sol.v_arrive) - va) / va).abs());
    ensure!(hd <= 1e-6, "Hohmann speeds off by {hd:e}");
    Ok(format!("worst defect {worst:.1e}, Hohmann {hd:.1e}"))
}

fn interval_tree() -> Check {
    let mut rng = SplitMix64::new(8);
    let mut tree = BoundIntervalTree::new();
    let mut stored: Vec<(f64, f64, f64)> = Vec::new();
    let mut queries = 0;
    let grid = |rng: &mut SplitMix64| (rng.next_u64() % 60) as f64 * 0.5;
    for i in 0..10_000 {
        let (a, b) = (grid(&mut rng), grid(&mut rng));
        let (lo, hi) = (a.min(b), a.max(b));
        if rng.next_u64() % 2 == 0 {
            let z = (rng.next_u64() % 50) as f64;
            ensure!(tree.insert(lo, hi, z), "op {i}: insert refused");
            stored.push((lo, hi, z));
        } else {
            queries += 1;
            let want = stored.iter().filter(|e| e.0 <= lo && e.1 >= hi).map(|e| e.2).reduce(f64::max);
            ensure!(tree.query(lo, hi) == want, "op {i}: query [{lo}, {hi}] disagrees with scan");
        }
    }
    ensure!(tree.check_invariants(), "balance or augmentation broken");
    Ok(format!("{queries} queries over {} entries", stored.len()))
}

fn trie_calls() -> Check {
    let model = generate(6, 13).unwrap().model();
    let mut trie = SolutionTrie::new(1);
    let mut rng = SplitMix64::new(77);
    let mut prefixes = HashSet::new();
    for k in 0..1000 {
        let mut p: Vec<usize> = (1..=6).collect();
        for i in (1..p.len()).rev() {
            p.swap(i, (rng.next_u64() % (i as u64 + 1)) as usize);
        }
        for j in 1..=p.len() {
            prefixes.insert(p[..j].to_vec());
        }
        evaluate_tour(&model, &with_earth(&p), &mut trie).unwrap();
        ensure!(model.counts().b as usize == prefixes.len(), "tour {k}: {} calls for {} prefixes", model.counts().b, prefixes.len());
    }
    Ok(format!("{} distinct prefixes, {} calls", prefixes.len(), model.counts().b))
}

fn encoded(d: &Diagram) -> BTreeSet<Vec<Label>> {
    d.encoded_permutations()
}

fn exact_nodes(d: &Diagram) -> Vec<NodeId> {
    (1..=d.n()).flat_map(|i| d.layer(i).to_vec()).filter(|&u| d.node(u).exact).collect()
}

fn dd_structure() -> Check {
    let mut rounds = 0;
    for (n, seed) in [(3, 1), (4, 2), (4, 5), (5, 3)] {
        let model = generate(n, seed).unwrap().model();
        let costs = all_costs(&model);
        let everything: BTreeSet<Vec<Label>> = costs.iter().map(|c| c.0.clone()).collect();
        let opt = costs.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        let improving = |inc: f64| costs.iter().filter(move |c| c.1 <= inc).map(|c| c.0.clone());

        // unfiltered weighting keeps every permutation
        let mut memo = BoundMemo::new(1);
        let mut d = build_structure(n, model.tau_max(), model.t_max()).unwrap();
        ensure!(encoded(&d) == everything, "n={n}: bare structure");
        weight_phase_one(&mut d, &model, &mut memo);
        ensure!(encoded(&d) == everything, "n={n}: after phase one");
        weight_phase_two(&mut d, &model, &mut memo, f64::INFINITY, PhaseTwoMode::Naive);
        ensure!(encoded(&d) == everything, "n={n}: after phase two");
        ensure!(d.v_star() <= opt, "n={n}: bound {} above optimum {opt}", d.v_star());

        // splits preserve the permutation set
        let mut rng = SplitMix64::new(seed);
        for _ in 0..40 {
            let layer = 1 + (rng.next_u64() as usize % n);
            let nodes = d.layer(layer).to_vec();
            let u = nodes[rng.next_u64() as usize % nodes.len()];
            let phi = 1 + (rng.next_u64() as usize % n);
            d.split_node(u, phi, f64::INFINITY);
            ensure!(encoded(&d) == everything, "n={n}: split of layer {layer} on {phi} changed the set");
            ensure!(d.v_star() <= opt, "n={n}: bound above optimum after split");
            rounds += 1;
        }

        // peeling partitions it
        for u in exact_nodes(&d) {
            let (p, r) = d.peel(u, f64::INFINITY).map_err(|e| e.to_string())?;
            let (pp, rp) = (encoded(&p), encoded(&r));
            ensure!(pp.is_disjoint(&rp), "n={n}: peel overlaps");
            let union: BTreeSet<_> = pp.union(&rp).cloned().collect();
            ensure!(union == everything, "n={n}: peel lost permutations");
            rounds += 1;
        }

        // with the incumbent filter, no tour at or below it is lost
        let mut memo = BoundMemo::new(1);
        let (mut d, report) = build_initial(&model, &mut memo, PhaseTwoMode::Incumbent).map_err(|e| e.to_string())?;
        let inc = report.initial_ub;
        let keep: BTreeSet<_> = improving(inc).collect();
        ensure!(encoded(&d).is_superset(&keep), "n={n}: initial diagram dropped an improving tour");
        d.refine(&memo, inc, 64, None);
        ensure!(encoded(&d).is_superset(&keep), "n={n}: refinement dropped an improving tour");
        ensure!(d.is_empty() || d.v_star() <= opt + 1e-9 || opt >= inc, "n={n}: refined bound above optimum");
        for u in exact_nodes(&d) {
            let (p, r) = d.peel(u, inc).map_err(|e| e.to_string())?;
            let (pp, rp) = (encoded(&p), encoded(&r));
            ensure!(pp.is_disjoint(&rp), "n={n}: filtered peel overlaps");
            ensure!(keep.iter().all(|s| pp.contains(s) || rp.contains(s)), "n={n}: filtered peel lost a tour");
            rounds += 1;
        }
    }
    Ok(format!("{rounds} split and peel checks by enumeration"))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("kepler residual", kepler_accuracy),
        ("lambert and hohmann accuracy", lambert_accuracy),
        ("restart monotonicity", restart_monotonicity),
        ("interval tree vs scan", interval_tree),
        ("trie one call per prefix", trie_calls),
        ("dd structural properties", dd_structure),
        ("construction call budget", construction_call_budget),
        ("no relaxed calls after construction", frozen_relaxed_calls),
        ("oracle equivalence", oracle_equivalence),
        ("bound trace monotonicity", trace_monotonicity),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(note) => println!("PASS {name} ({secs:.1} s): {note}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1} s): {why}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
