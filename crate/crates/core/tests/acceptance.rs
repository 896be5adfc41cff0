//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fail.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wswor::apps::{hh_query, recovered, HhConfig, L1Config, L1Tracker, ResidualVector};
use wswor::bits::{derive_seed, BitSource, ReplayBits, RngBits};
use wswor::key::{gen_key, key_exceeds};
use wswor::oracle::{
    centralized_key_sampler, chi_square_gof, chi_square_two_sample, exact_swor_distribution,
    exp_sum_tail_check, pool_categories, pool_counts,
};
use wswor::protocol::{CoordinatorVariant, SworFactory};
use wswor::simnet::{run, run_probed, Partitioner, SimConfig};
use wswor::streams::{
    from_weights, gen_epoch_lower, gen_hh_lower, gen_skewed_giants, gen_zipf, unit,
};
use wswor::swr::SwrFactory;
use wswor::{ItemId, WeightedItem};

const ALPHA: f64 = 0.001;
const VALIDATION: [f64; 6] = [1.0, 2.0, 3.0, 4.0, 5.0, 100.0];
const PROBES: [usize; 3] = [2, 4, 6];
const RUNS: u64 = 200_000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Sorted 0-based stream positions of a sample whose ids are `1..`.
fn positions(sample: &[(ItemId, f64)]) -> Vec<usize> {
    let mut v: Vec<usize> = sample.iter().map(|(id, _)| id.token as usize - 1).collect();
    v.sort_unstable();
    v
}

/// Tallies per probe, keyed by the exact distribution's category order.
struct Tally {
    cats: Vec<Vec<BTreeMap<Vec<usize>, usize>>>,
    probs: Vec<Vec<f64>>,
    counts: Vec<Vec<u64>>,
}

impl Tally {
    fn new(weights: &[f64], s: usize, probes: &[usize]) -> Tally {
        let mut cats = Vec::new();
        let mut probs = Vec::new();
        for &t in probes {
            let d = exact_swor_distribution(&weights[..t], s).unwrap();
            let index: BTreeMap<Vec<usize>, usize> =
                d.probs.keys().cloned().enumerate().map(|(i, k)| (k, i)).collect();
            probs.push(d.probs.values().copied().collect());
            cats.push(vec![index]);
        }
        let counts = probs.iter().map(|p: &Vec<f64>| vec![0; p.len()]).collect();
        Tally { cats, probs, counts }
    }

    fn add(&mut self, probe: usize, set: &[usize]) {
        let i = *self.cats[probe][0]
            .get(set)
            .unwrap_or_else(|| panic!("sample {set:?} has zero probability"));
        self.counts[probe][i] += 1;
    }
}

fn a1_a2() -> (Outcome, Outcome) {
    let stream = from_weights(&VALIDATION).unwrap();
    let factory = SworFactory::new(2);
    let mut dist = Tally::new(&VALIDATION, 2, &PROBES);
    let mut central = Tally::new(&VALIDATION, 2, &PROBES);
    for trial in 0..RUNS {
        let cfg = SimConfig::new(3, trial);
        let (_, res) = run_probed(&stream, &cfg, &factory, &PROBES).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(trial, 0xCE47));
        for (p, sample) in res.iter().enumerate() {
            dist.add(p, &positions(sample));
            let mut c = centralized_key_sampler(&VALIDATION[..PROBES[p]], 2, &mut rng);
            c.sort_unstable();
            central.add(p, &c);
        }
    }
    let alpha = ALPHA / PROBES.len() as f64;
    let mut ok1 = true;
    let mut ok2 = true;
    let mut d1 = Vec::new();
    let mut d2 = Vec::new();
    for p in 0..PROBES.len() {
        let (map, buckets) = pool_categories(&dist.probs[p], RUNS);
        let obs = pool_counts(&dist.counts[p], &map, buckets.len());
        let r = chi_square_gof(&obs, &buckets, alpha).unwrap();
        ok1 &= r.pass;
        d1.push(format!("t={} chi2={:.2}/{:.2} dof={}", PROBES[p], r.statistic, r.critical, r.dof));
        let cen = pool_counts(&central.counts[p], &map, buckets.len());
        let r = chi_square_two_sample(&obs, &cen, alpha).unwrap();
        ok2 &= r.pass;
        d2.push(format!("t={} chi2={:.2}/{:.2} dof={}", PROBES[p], r.statistic, r.critical, r.dof));
    }
    (outcome(ok1, d1.join("; ")), outcome(ok2, d2.join("; ")))
}

fn a3() -> Outcome {
    let mut ratios = Vec::new();
    let mut sublinear = None;
    let mut detail = Vec::new();
    for &k in &[4usize, 16, 64] {
        for &s in &[4usize, 16] {
            for &n in &[10_000usize, 100_000, 1_000_000] {
                let trials = if n >= 1_000_000 { 3 } else { 5 };
                let stream = unit(n);
                let factory = SworFactory::new(s);
                let mut total = 0u64;
                for trial in 0..trials {
                    let cfg = SimConfig::new(k, trial);
                    let out = run(&stream, &cfg, &factory).unwrap();
                    total += out.ledger.total();
                }
                let mean = total as f64 / trials as f64;
                let bound = k as f64 * (n as f64 / s as f64).ln() / (1.0 + k as f64 / s as f64).ln();
                let ratio = mean / bound;
                ratios.push(ratio);
                detail.push(format!("({k},{s},{n})={ratio:.2}"));
                if k == 16 && s == 16 && n == 1_000_000 {
                    sublinear = Some(mean);
                }
            }
        }
    }
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    let sub = sublinear.unwrap();
    let pass = hi / lo <= 8.0 && sub <= 1e5;
    outcome(
        pass,
        format!(
            "band [{lo:.2}, {hi:.2}] spread {:.2}; k=s=16 n=1e6 mean total {sub:.0}; cells {}",
            hi / lo,
            detail.join(" ")
        ),
    )
}

fn a4() -> Outcome {
    let cfg = HhConfig::new(0.1, 0.2).unwrap();
    let n = 10_000 + 102;
    let probes = [n / 3, 2 * n / 3, n];
    let factory = cfg.factory();
    let trials = 300u64;
    let mut full = [0u32; 3];
    let mut worst_size = 0;
    let mut qual_sizes = [0usize; 3];
    for trial in 0..trials {
        let stream = gen_skewed_giants(2, 1e6, 100, 100.0, n, trial).unwrap();
        let sim = SimConfig::new(8, trial);
        let (_, res) = run_probed(&stream, &sim, &factory, &probes).unwrap();
        for (p, &t) in probes.iter().enumerate() {
            let out = hh_query(&res[p], &cfg);
            worst_size = worst_size.max(out.len());
            let q: Vec<ItemId> = ResidualVector::from_prefix(&stream[..t])
                .residual_heavy(cfg.epsilon)
                .into_iter()
                .map(|i| stream[i].id)
                .collect();
            qual_sizes[p] = qual_sizes[p].max(q.len());
            if recovered(&out, &q) == q.len() {
                full[p] += 1;
            }
        }
    }
    let need = ((1.0 - cfg.delta) * trials as f64).ceil() as u32;
    let pass = full.iter().all(|&f| f >= need) && worst_size <= cfg.cap;
    outcome(
        pass,
        format!(
            "full recall in {full:?} of {trials} (need {need}) at t={probes:?}; max |Q|={qual_sizes:?}; max output {worst_size} <= {}",
            cfg.cap
        ),
    )
}

fn a5() -> Outcome {
    let cfg = L1Config::new(0.2, 0.2).unwrap();
    let n = 10_000;
    let stream = unit(n);
    let trials = 300u64;
    let mut good = 0;
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let mut tr = L1Tracker::new(cfg, SimConfig::new(4, trial)).unwrap();
        for (i, it) in stream.iter().enumerate() {
            let it = WeightedItem { site: i % 4, ..*it };
            tr.on_item(&it).unwrap();
        }
        let est = tr.estimate().unwrap();
        let rel = (est - n as f64).abs() / n as f64;
        worst = worst.max(rel);
        if rel <= cfg.epsilon {
            good += 1;
        }
    }
    let need = ((1.0 - cfg.delta) * trials as f64).ceil() as u32;
    let mut tails = Vec::new();
    let mut tails_ok = true;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (s, eps) in [(500, 0.1), (500, 0.3), (1000, 0.2)] {
        let c = exp_sum_tail_check(s, eps, 100_000, &mut rng).unwrap();
        tails_ok &= c.passes();
        tails.push(format!("({s},{eps}) {:.4}<={:.4}", c.rate, c.bound));
    }
    outcome(
        good >= need && tails_ok,
        format!(
            "s={} ell={} within eps in {good}/{trials} (need {need}), worst relerr {worst:.3}; tails {}",
            cfg.s,
            cfg.ell,
            tails.join(" ")
        ),
    )
}

fn a6() -> Outcome {
    let stream = from_weights(&[1.0, 2.0, 3.0]).unwrap();
    let mut pass = true;
    let mut detail = Vec::new();
    for s in [1usize, 4] {
        let factory = SwrFactory::new(s);
        let mut hit = vec![0u64; s];
        let mut pair = vec![vec![0u64; s]; s];
        for trial in 0..RUNS {
            let out = run(&stream, &SimConfig::new(2, trial), &factory).unwrap();
            let slots = out.coordinator.query_slots().unwrap();
            let ind: Vec<bool> = slots.iter().map(|(id, _)| id.token == 3).collect();
            for a in 0..s {
                hit[a] += ind[a] as u64;
                for b in a + 1..s {
                    pair[a][b] += (ind[a] && ind[b]) as u64;
                }
            }
        }
        let n = RUNS as f64;
        for (a, &h) in hit.iter().enumerate() {
            let p = h as f64 / n;
            pass &= (p - 0.5).abs() <= 0.01;
            detail.push(format!("s={s} slot{a} {p:.4}"));
        }
        for a in 0..s {
            for b in a + 1..s {
                let pa = hit[a] as f64 / n;
                let pb = hit[b] as f64 / n;
                let pab = pair[a][b] as f64 / n;
                let cov = pab - pa * pb;
                // Variance of the centered product of two indicators.
                let var = pab * (1.0 - pa) * (1.0 - pb) - cov * cov
                    + (pa - pab) * (1.0 - pa) * pb
                    + (pb - pab) * pa * (1.0 - pb)
                    + (1.0 - pa - pb + pab) * pa * pb;
                let sd = (var.max(0.0) / n).sqrt();
                pass &= cov.abs() <= 3.0 * sd;
                detail.push(format!("cov{a}{b} {cov:+.5} (3sd {:.5})", 3.0 * sd));
            }
        }
    }
    outcome(pass, detail.join(" "))
}

fn a7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let pairs = 100_000;
    let mut mismatches = 0;
    let mut bits = 0u64;
    for _ in 0..pairs {
        let w = 10f64.powf(rng.gen_range(0.0..6.0));
        let thr = if rng.gen_bool(0.05) {
            0.0
        } else {
            w * 10f64.powf(rng.gen_range(-3.0..3.0))
        };
        let mut src = RngBits::from_seed(rng.gen());
        let recorded: Vec<bool> = (0..256).map(|_| src.next_bit()).collect();
        let mut lazy_src = ReplayBits::new(recorded.clone());
        let (exceeds, lazy) = key_exceeds(w, thr, &mut lazy_src);
        bits += lazy.bits_consumed() as u64;
        let completed = lazy.complete(w, &mut lazy_src);
        let full = gen_key(w, &mut ReplayBits::new(recorded));
        if exceeds != (full.value > thr) || completed.value != full.value {
            mismatches += 1;
        }
    }
    let mean = bits as f64 / pairs as f64;
    outcome(
        mismatches == 0 && mean <= 8.0,
        format!("{mismatches} mismatches over {pairs} pairs; mean bits {mean:.3}"),
    )
}

fn a8() -> Outcome {
    let mut problems = Vec::new();
    let full = SworFactory::new(2);
    let tops = SworFactory::new(2).with_variant(CoordinatorVariant::TopS);
    let stream = from_weights(&VALIDATION).unwrap();
    for trial in 0..2_000u64 {
        let cfg = SimConfig::new(3, trial).with_transcript();
        let (a, qa) = run_probed(&stream, &cfg, &full, &PROBES).unwrap();
        let (b, qb) = run_probed(&stream, &cfg, &full, &PROBES).unwrap();
        let (c, qc) = run_probed(&stream, &cfg, &tops, &PROBES).unwrap();
        if a.transcript != b.transcript || qa != qb {
            problems.push(format!("A1 seed {trial}: rerun differs"));
        }
        if qa != qc || a.ledger != c.ledger || a.transcript != c.transcript {
            problems.push(format!("A1 seed {trial}: variants differ"));
        }
    }
    let mut cells = 0;
    for &k in &[4usize, 16, 64] {
        for &s in &[4usize, 16] {
            for &n in &[10_000usize, 100_000, 1_000_000] {
                let stream = unit(n);
                let transcript = n <= 10_000;
                let mut cfg = SimConfig::new(k, 1);
                cfg.record_transcript = transcript;
                let a = run(&stream, &cfg, &SworFactory::new(s)).unwrap();
                let c = run(
                    &stream,
                    &cfg,
                    &SworFactory::new(s).with_variant(CoordinatorVariant::TopS),
                )
                .unwrap();
                use wswor::simnet::Coordinator;
                if a.ledger != c.ledger || a.coordinator.query().unwrap() != c.coordinator.query().unwrap() {
                    problems.push(format!("A3 cell ({k},{s},{n}): variants differ"));
                }
                if transcript {
                    let b = run(&stream, &cfg, &SworFactory::new(s)).unwrap();
                    if a.transcript != b.transcript || a.transcript != c.transcript {
                        problems.push(format!("A3 cell ({k},{s},{n}): transcripts differ"));
                    }
                }
                cells += 1;
            }
        }
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!("2000 A1 seeds and {cells} A3 cells identical across reruns and variants")
        } else {
            problems.join("; ")
        },
    )
}

fn fuzz_stream(rng: &mut ChaCha8Rng, k: usize) -> Vec<WeightedItem> {
    let n = rng.gen_range(1..1500);
    let seed = rng.gen();
    match rng.gen_range(0..6) {
        0 => unit(n),
        1 => gen_zipf(n, rng.gen_range(0.6..2.0), seed).unwrap(),
        2 => {
            let n = n.max(30);
            gen_skewed_giants(2, 1e6, 20, 100.0, n, seed).unwrap()
        }
        3 => gen_hh_lower(rng.gen_range(0.05..0.5), n.min(300)).unwrap(),
        4 => gen_epoch_lower(k.max(2), rng.gen_range(1..4), seed).unwrap(),
        _ => {
            let w: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.gen_range(0.0..9.0))).collect();
            from_weights(&w).unwrap()
        }
    }
}

fn a9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut failures = Vec::new();
    let parts = [
        Partitioner::RoundRobin,
        Partitioner::SingleSite,
        Partitioner::Random,
        Partitioner::AdversarialEpoch,
    ];
    for run_id in 0..1000u64 {
        let k = rng.gen_range(1..=24);
        let s = rng.gen_range(1..=24);
        let stream = fuzz_stream(&mut rng, k);
        let part = parts[rng.gen_range(0..parts.len())];
        let cfg = SimConfig::new(k, run_id)
            .with_partitioner(part)
            .with_transcript()
            .with_invariants();
        let factory = SworFactory::new(s);
        match run(&stream, &cfg, &factory) {
            Ok(out) => {
                if let Err(e) = check_run(&out, s, &stream) {
                    failures.push(format!("run {run_id}: {e}"));
                }
            }
            Err(e) => failures.push(format!("run {run_id}: {e}")),
        }
        if run_id % 4 == 0 {
            let ints: Vec<f64> = stream.iter().map(|it| it.weight.round().min(1e6)).collect();
            let swr_stream = from_weights(&ints).unwrap();
            if let Err(e) = run(&swr_stream, &cfg, &SwrFactory::new(s)) {
                failures.push(format!("swr run {run_id}: {e}"));
            }
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "1000 SWOR and 250 SWR fuzz runs clean".into()
        } else {
            failures.into_iter().take(5).collect::<Vec<_>>().join("; ")
        },
    )
}

fn check_run(
    out: &wswor::simnet::RunOutput<SworFactory>,
    s: usize,
    stream: &[WeightedItem],
) -> Result<(), String> {
    out.ledger.check().map_err(|e| e.to_string())?;
    out.transcript.check_fifo().map_err(|e| e.to_string())?;
    let c = &out.coordinator;
    if c.sample_len() > s {
        return Err(format!("|S| = {} > s = {s}", c.sample_len()));
    }
    let q = c.query_sample();
    if q.len() != s.min(stream.len()) {
        return Err(format!("query returned {} items", q.len()));
    }
    let r = c.params().r;
    let cap = 4 * r * s as u64;
    let mut early: BTreeMap<u32, u64> = BTreeMap::new();
    for rec in out.transcript.records().map_err(|e| e.to_string())? {
        if rec.kind == "early" {
            let j = wswor::key::level_of(rec.w.unwrap(), r).unwrap();
            *early.entry(j).or_default() += 1;
        }
    }
    for (&j, &n) in &early {
        let sat = c.is_saturated(j);
        if (sat && n != cap) || (!sat && n >= cap) {
            return Err(format!("level {j}: {n} early messages, saturated {sat}, 4rs {cap}"));
        }
    }
    for (i, site) in out.sites.iter().enumerate() {
        if site.threshold() > c.threshold() {
            return Err(format!("site {i} threshold above coordinator"));
        }
        for &j in early.keys() {
            if site.is_saturated(j) != c.is_saturated(j) {
                return Err(format!("site {i} disagrees on level {j}"));
            }
        }
    }
    Ok(())
}

fn line(name: &str, secs: f64, o: &Outcome) {
    let verdict = if o.pass { "PASS" } else { "FAIL" };
    println!("{name} {verdict} ({secs:.1}s) {}", o.detail);
}

/// `ACCEPTANCE_ONLY=A3,A6` restricts the run to the listed criteria.
fn selected(name: &str) -> bool {
    match std::env::var("ACCEPTANCE_ONLY") {
        Ok(list) => list.split(',').any(|n| n.trim().eq_ignore_ascii_case(name)),
        Err(_) => true,
    }
}

fn main() {
    let mut all = true;
    if selected("A1") || selected("A2") {
        let t = Instant::now();
        let (o1, o2) = a1_a2();
        let secs = t.elapsed().as_secs_f64();
        for (name, o) in [("A1", o1), ("A2", o2)] {
            all &= o.pass;
            line(name, secs, &o);
        }
    }
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("A3", a3),
        ("A4", a4),
        ("A5", a5),
        ("A6", a6),
        ("A7", a7),
        ("A8", a8),
        ("A9", a9),
    ];
    for (name, f) in criteria {
        if !selected(name) {
            continue;
        }
        let t = Instant::now();
        let o = f();
        all &= o.pass;
        line(name, t.elapsed().as_secs_f64(), &o);
    }
    if !all {
        std::process::exit(1);
    }
}
