use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use wswor::apps::{hh_query, recovered, HhConfig, L1Config, L1Tracker, ResidualVector, ELL_WARN};
use wswor::bits::derive_seed;
use wswor::oracle::{
    chi_square_gof, exact_swor_distribution, exact_swr_marginal, pool_categories, pool_counts,
    ChiSquare,
};
use wswor::protocol::SworFactory;
use wswor::simnet::{partition, run, run_probed, MessageLedger, Partitioner, SimConfig};
use wswor::streams::{from_weights, unit, write_stream};
use wswor::swr::SwrFactory;
use wswor::{ItemId, ProtocolParams, WeightedItem};

use crate::{
    variant_name, CliError, CliResult, ScalingArgs, SimArgs, StreamArgs, TrackArgs, ValidateArgs,
};

type Pairs = Vec<(&'static str, String)>;

/// `# key=value` lines, one per resolved setting.
fn header(command: &str, pairs: &[(&str, String)]) -> String {
    let mut h = format!("# command={command}\n");
    for (k, v) in pairs {
        let _ = writeln!(h, "# {k}={v}");
    }
    h
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => {
            use std::io::Write;
            std::io::stdout().lock().write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad {what} entry {x:?}")))
        })
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Runs `f` for trials `0..trials`, in order. With `threads > 0` the trials
/// run on a pool of that size and results are still returned in trial order.
fn run_trials<T, F>(threads: usize, trials: u64, f: F) -> CliResult<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> CliResult<T> + Sync + Send,
{
    if threads == 0 {
        return (0..trials).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    pool.install(|| (0..trials).into_par_iter().map(&f).collect())
}

fn check_trials(trials: u64) -> CliResult<()> {
    if trials == 0 {
        return Err(CliError::Usage("--trials must be >= 1".into()));
    }
    Ok(())
}

/// Probe times from `--probes`, or ten evenly spaced points ending at `n`.
fn probes(arg: Option<&str>, n: usize) -> CliResult<Vec<usize>> {
    if n == 0 {
        return Err(CliError::Usage("stream is empty".into()));
    }
    let p = match arg {
        Some(s) => parse_list(s, "probe")?,
        None => {
            let mut p: Vec<usize> = (1..=10).map(|i| (n * i).div_ceil(10)).collect();
            p.dedup();
            p
        }
    };
    if let Some(&t) = p.iter().find(|&&t| t == 0 || t > n) {
        return Err(CliError::Usage(format!("probe {t} outside 1..={n}")));
    }
    Ok(p)
}

fn stream_for(stream: &StreamArgs, sim: &SimConfig) -> CliResult<(Vec<WeightedItem>, Pairs)> {
    let (spec, pairs) = stream.resolve(sim.k, sim.seed)?;
    sim.validate()?;
    Ok((spec.generate()?, pairs))
}

pub(crate) fn simulate(
    stream: &StreamArgs,
    sim: &SimArgs,
    s: usize,
    transcript: Option<&Path>,
    out: Option<&Path>,
) -> CliResult<()> {
    let mut cfg = sim.config(stream);
    cfg.record_transcript = transcript.is_some();
    let (items, mut pairs) = stream_for(stream, &cfg)?;
    let params = ProtocolParams::new(s, cfg.k)?;
    pairs.extend(sim.describe(&cfg));
    pairs.push(("s", s.to_string()));
    pairs.push(("r", params.r.to_string()));
    if let Some(p) = transcript {
        pairs.push(("transcript", p.display().to_string()));
    }
    let factory = SworFactory::new(s).with_variant(sim.variant.into());
    let res = run(&items, &cfg, &factory)?;
    res.ledger.check()?;
    let head = header("simulate", &pairs);
    if let Some(p) = transcript {
        std::fs::write(p, format!("{head}{}", res.transcript.as_str()))?;
    }
    let mut text = head;
    let _ = writeln!(text, "{}", MessageLedger::CSV_HEADER);
    let _ = writeln!(text, "{}", res.ledger.csv_row(s, params.r, res.total_weight, res.items));
    emit(out, &text)
}

pub(crate) fn gen_stream(
    stream: &StreamArgs,
    k: usize,
    seed: u64,
    partitioner: Option<Partitioner>,
    out: Option<&Path>,
) -> CliResult<()> {
    let sim = SimArgs {
        k,
        seed,
        partitioner,
        delivery: 1,
        variant: crate::Variant::Full,
        check_invariants: false,
    };
    let cfg = sim.config(stream);
    let (items, mut pairs) = stream_for(stream, &cfg)?;
    let items = partition(&items, &cfg)?;
    pairs.push(("k", k.to_string()));
    pairs.push(("seed", seed.to_string()));
    pairs.push(("partitioner", cfg.partitioner.to_string()));
    pairs.push(("items", items.len().to_string()));
    emit(out, &(header("gen-stream", &pairs) + &write_stream(&items)))
}

/// Writes the test table and fails the command if any probe rejects.
fn finish_validation(
    command: &str,
    pairs: &[(&str, String)],
    rows: &[(usize, usize, ChiSquare)],
    out: Option<&Path>,
) -> CliResult<()> {
    let mut text = header(command, pairs);
    text.push_str("t,categories,dof,statistic,critical,pass\n");
    for (t, cats, r) in rows {
        let _ = writeln!(
            text,
            "{t},{cats},{},{:.6},{:.6},{}",
            r.dof, r.statistic, r.critical, r.pass
        );
    }
    emit(out, &text)?;
    let failed: Vec<String> = rows.iter().filter(|r| !r.2.pass).map(|r| r.0.to_string()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("rejected at t = {}", failed.join(","))))
    }
}

struct Validation {
    weights: Vec<f64>,
    s: usize,
    probes: Vec<usize>,
    pairs: Pairs,
}

impl ValidateArgs {
    fn resolve(&self, weights: &str, s: usize) -> CliResult<Validation> {
        check_trials(self.trials)?;
        if !(self.significance > 0.0 && self.significance < 1.0) {
            return Err(CliError::Usage("--significance must lie in (0, 1)".into()));
        }
        let weights: Vec<f64> = parse_list(self.weights.as_deref().unwrap_or(weights), "weight")?;
        let s = self.s.unwrap_or(s);
        let probes = match &self.probes {
            Some(p) => probes(Some(p), weights.len())?,
            None => probes(Some(&weights.len().to_string()), weights.len())?,
        };
        let pairs = vec![
            ("weights", join(&weights)),
            ("s", s.to_string()),
            ("k", self.k.to_string()),
            ("seed", self.seed.to_string()),
            ("trials", self.trials.to_string()),
            ("probes", join(&probes)),
            ("significance", self.significance.to_string()),
        ];
        Ok(Validation {
            weights,
            s,
            probes,
            pairs,
        })
    }
}

fn sorted_positions(sample: &[(ItemId, f64)]) -> Vec<usize> {
    let mut v: Vec<usize> = sample.iter().map(|(id, _)| id.token as usize - 1).collect();
    v.sort_unstable();
    v
}

pub(crate) fn validate_swor(a: &ValidateArgs) -> CliResult<()> {
    let v = a.resolve("1,2,3,4,5,100", 2)?;
    let stream = from_weights(&v.weights)?;
    let dists = v
        .probes
        .iter()
        .map(|&t| exact_swor_distribution(&v.weights[..t], v.s))
        .collect::<wswor::Result<Vec<_>>>()?;
    let factory = SworFactory::new(v.s);
    let samples = run_trials(a.threads, a.trials, |trial| {
        let cfg = SimConfig::new(a.k, derive_seed(a.seed, trial));
        let (_, res) = run_probed(&stream, &cfg, &factory, &v.probes)?;
        Ok(res.iter().map(|r| sorted_positions(r)).collect::<Vec<_>>())
    })?;
    let alpha = a.significance / v.probes.len() as f64;
    let mut rows = Vec::new();
    for (p, d) in dists.iter().enumerate() {
        let index: BTreeMap<&Vec<usize>, usize> = d.probs.keys().zip(0..).collect();
        let mut counts = vec![0u64; index.len()];
        for trial in &samples {
            let i = index.get(&trial[p]).ok_or_else(|| {
                wswor::Error::Protocol(format!("sample {:?} has zero probability", trial[p]))
            })?;
            counts[*i] += 1;
        }
        let probs: Vec<f64> = d.probs.values().copied().collect();
        let (map, buckets) = pool_categories(&probs, a.trials);
        let r = chi_square_gof(&pool_counts(&counts, &map, buckets.len()), &buckets, alpha)?;
        rows.push((v.probes[p], buckets.len(), r));
    }
    finish_validation("validate-swor", &v.pairs, &rows, a.out.as_deref())
}

pub(crate) fn validate_swr(a: &ValidateArgs) -> CliResult<()> {
    let v = a.resolve("1,2,3", 4)?;
    let stream = from_weights(&v.weights)?;
    let factory = SwrFactory::new(v.s);
    let picks = run_trials(a.threads, a.trials, |trial| {
        let cfg = SimConfig::new(a.k, derive_seed(a.seed, trial));
        let (_, res) = run_probed(&stream, &cfg, &factory, &v.probes)?;
        Ok(res
            .iter()
            .map(|slots| slots.iter().map(|(id, _)| id.token as usize - 1).collect::<Vec<_>>())
            .collect::<Vec<_>>())
    })?;
    let alpha = a.significance / v.probes.len() as f64;
    let mut rows = Vec::new();
    for (p, &t) in v.probes.iter().enumerate() {
        // Slots are independent, so every slot pick is one observation.
        let mut counts = vec![0u64; t];
        for trial in &picks {
            for &i in &trial[p] {
                counts[i] += 1;
            }
        }
        let r = chi_square_gof(&counts, &exact_swr_marginal(&v.weights[..t]), alpha)?;
        rows.push((t, t, r));
    }
    finish_validation("validate-swr", &v.pairs, &rows, a.out.as_deref())
}

struct Tracking {
    items: Vec<WeightedItem>,
    base: SimConfig,
    probes: Vec<usize>,
    pairs: Pairs,
}

impl TrackArgs {
    fn resolve(&self) -> CliResult<Tracking> {
        check_trials(self.trials)?;
        let base = self.sim.config(&self.stream);
        let (items, mut pairs) = stream_for(&self.stream, &base)?;
        let probes = probes(self.probes.as_deref(), items.len())?;
        pairs.extend(self.sim.describe(&base));
        pairs.push(("epsilon", self.epsilon.to_string()));
        pairs.push(("delta", self.delta.to_string()));
        pairs.push(("trials", self.trials.to_string()));
        pairs.push(("probes", join(&probes)));
        Ok(Tracking {
            items,
            base,
            probes,
            pairs,
        })
    }
}

fn trial_config(base: &SimConfig, trial: u64) -> SimConfig {
    SimConfig {
        seed: derive_seed(base.seed, trial),
        ..base.clone()
    }
}

pub(crate) fn track_hh(a: &TrackArgs) -> CliResult<()> {
    let cfg = HhConfig::new(a.epsilon, a.delta)?;
    let mut t = a.resolve()?;
    t.pairs.push(("s", cfg.s.to_string()));
    t.pairs.push(("cap", cfg.cap.to_string()));
    let qualifying: Vec<Vec<ItemId>> = t
        .probes
        .iter()
        .map(|&p| {
            ResidualVector::from_prefix(&t.items[..p])
                .residual_heavy(cfg.epsilon)
                .into_iter()
                .map(|i| t.items[i].id)
                .collect()
        })
        .collect();
    let factory = cfg.factory().with_variant(a.sim.variant.into());
    let found = run_trials(a.threads, a.trials, |trial| {
        let (_, res) = run_probed(&t.items, &trial_config(&t.base, trial), &factory, &t.probes)?;
        Ok(res
            .iter()
            .zip(&qualifying)
            .map(|(sample, q)| recovered(&hh_query(sample, &cfg), q))
            .collect::<Vec<_>>())
    })?;
    let mut text = header("track-hh", &t.pairs);
    text.push_str("trial,t,qualifying,recovered,recall\n");
    for (trial, row) in found.iter().enumerate() {
        for (p, &got) in row.iter().enumerate() {
            let q = qualifying[p].len();
            let recall = if q == 0 { 1.0 } else { got as f64 / q as f64 };
            let _ = writeln!(text, "{trial},{},{q},{got},{recall:.6}", t.probes[p]);
        }
    }
    emit(a.out.as_deref(), &text)
}

pub(crate) fn track_l1(a: &TrackArgs) -> CliResult<()> {
    let cfg = L1Config::new(a.epsilon, a.delta)?;
    if cfg.ell > ELL_WARN {
        eprintln!(
            "wswor: warning: {} copies per item (above {ELL_WARN}); this run will be slow",
            cfg.ell
        );
    }
    let mut t = a.resolve()?;
    t.pairs.push(("s", cfg.s.to_string()));
    t.pairs.push(("ell", cfg.ell.to_string()));
    let variant = a.sim.variant.into();
    let rows = run_trials(a.threads, a.trials, |trial| {
        let sim = trial_config(&t.base, trial);
        let items = partition(&t.items, &sim)?;
        let mut tracker = L1Tracker::with_variant(cfg, sim, variant)?;
        let mut total = 0.0;
        let mut row = Vec::with_capacity(t.probes.len());
        for (i, it) in items.iter().enumerate() {
            tracker.on_item(it)?;
            total += it.weight;
            if t.probes.contains(&(i + 1)) {
                row.push((i + 1, total, tracker.estimate()?));
            }
        }
        Ok(row)
    })?;
    let mut text = header("track-l1", &t.pairs);
    text.push_str("trial,t,W,West,relerr\n");
    for (trial, row) in rows.iter().enumerate() {
        for &(at, w, est) in row {
            let _ = writeln!(text, "{trial},{at},{w},{est:.6},{:.6}", (est - w).abs() / w);
        }
    }
    emit(a.out.as_deref(), &text)
}

pub(crate) fn msg_scaling(a: &ScalingArgs) -> CliResult<()> {
    check_trials(a.trials)?;
    let ks: Vec<usize> = parse_list(&a.ks, "k")?;
    let ss: Vec<usize> = parse_list(&a.ss, "s")?;
    let ns: Vec<usize> = parse_list(&a.ns, "n")?;
    if ks.contains(&0) || ss.contains(&0) {
        return Err(CliError::Usage("k and s must be >= 1".into()));
    }
    if let Some(n) = ns.iter().find(|&&n| ss.iter().any(|&s| n <= s)) {
        return Err(CliError::Usage(format!("n = {n} must exceed every s")));
    }
    let pairs = vec![
        ("ks", join(&ks)),
        ("ss", join(&ss)),
        ("ns", join(&ns)),
        ("trials", a.trials.to_string()),
        ("seed", a.seed.to_string()),
        ("variant", variant_name(a.variant).to_string()),
        ("partitioner", Partitioner::RoundRobin.to_string()),
    ];
    let mut text = header("msg-scaling", &pairs);
    text.push_str("k,s,W,mean_total,bound,ratio\n");
    for &k in &ks {
        for &s in &ss {
            let factory = SworFactory::new(s).with_variant(a.variant.into());
            for &n in &ns {
                let stream = unit(n);
                let totals = run_trials(a.threads, a.trials, |trial| {
                    let cfg = SimConfig::new(k, derive_seed(a.seed, trial));
                    Ok(run(&stream, &cfg, &factory)?.ledger.total())
                })?;
                let mean = totals.iter().sum::<u64>() as f64 / a.trials as f64;
                let (kf, sf) = (k as f64, s as f64);
                let bound = kf * (n as f64 / sf).ln() / (1.0 + kf / sf).ln();
                let _ = writeln!(text, "{k},{s},{n},{mean:.3},{bound:.3},{:.6}", mean / bound);
            }
        }
    }
    emit(a.out.as_deref(), &text)
}
