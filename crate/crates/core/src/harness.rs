//! Experiment drivers behind the command-line interface: training runs,
//! evaluation, baselines and parameter sweeps, all writing versioned CSV.
//!
//! Every CSV row carries the schema version, a hash of the configuration and
//! the seed. Files are written to a temporary sibling and renamed into place,
//! so a failed command never leaves a half-written file behind.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::agent::{evaluate_policy, train, EpisodeLog, Td3Agent};
use crate::channel::{draw_channels, ChannelSet};
use crate::cmat::dot;
use crate::env::{action_len, score_decision, state_len, AllocationDecision};
use crate::error::{Error, Result};
use crate::precode::{random_phase_decision, Precoder};
use crate::ris::composite_rows;
use crate::rng::{substream, Domain};
use crate::scenario::{geometry, noise_power, CblMode, Config, RisMode, ScenarioConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// First 16 hex digits of the SHA-256 of the canonical TOML rendering.
pub fn config_hash(cfg: &Config) -> String {
    hex::encode(Sha256::digest(cfg.to_toml().as_bytes()))[..16].to_string()
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Domain(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Baselines and learners that can be compared on shared channel draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Comparator {
    Td3,
    Td3EqualCbl,
    ZfRandomPhase,
    Mmse,
    ShannonIdeal,
}

impl Comparator {
    pub const ALL: [Comparator; 5] = [
        Comparator::Td3,
        Comparator::Td3EqualCbl,
        Comparator::ZfRandomPhase,
        Comparator::Mmse,
        Comparator::ShannonIdeal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Comparator::Td3 => "td3",
            Comparator::Td3EqualCbl => "td3_equal_cbl",
            Comparator::ZfRandomPhase => "zf_random_phase",
            Comparator::Mmse => "mmse",
            Comparator::ShannonIdeal => "shannon_ideal",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, Comparator::Td3 | Comparator::Td3EqualCbl)
    }
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Comparator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Comparator::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::config("scheme", format!("unknown scheme `{s}`")))
    }
}

/// Score of one scheme on one evaluation realization.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizationScore {
    pub realization: usize,
    /// Finite-blocklength objective in bits.
    pub fbl: f64,
    /// `sum_k c_k log2(1 + sinr_k)` of the same decision.
    pub shannon: f64,
    /// Largest interference-to-signal power ratio over actuators.
    pub leakage: f64,
}

impl RealizationScore {
    /// The value a scheme reports: the Shannon sum for the ideal reference,
    /// the finite-blocklength objective otherwise.
    pub fn reported(&self, c: Comparator) -> f64 {
        if c == Comparator::ShannonIdeal {
            self.shannon
        } else {
            self.fbl
        }
    }
}

fn leakage(ch: &ChannelSet, d: &AllocationDecision) -> Result<f64> {
    let g = composite_rows(&d.ris, ch)?;
    let mut worst: f64 = 0.0;
    for (k, gk) in g.iter().enumerate() {
        let signal = dot(gk, &d.bf.w[k]).norm_sqr();
        let interference: f64 = d
            .bf
            .w
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k)
            .map(|(_, wi)| dot(gk, wi).norm_sqr())
            .sum();
        if signal > 0.0 {
            worst = worst.max(interference / signal);
        } else if interference > 0.0 {
            worst = f64::INFINITY;
        }
    }
    Ok(worst)
}

/// Configuration with unit-amplitude reflection.
pub fn ideal_variant(cfg: &Config) -> Config {
    let mut c = cfg.clone();
    c.scenario.beta_min = 1.0;
    c.scenario.ris_mode = RisMode::Ideal;
    c
}

/// Random-phase linear precoding on evaluation realizations `0..n` of `seed`.
pub fn baseline_scores(
    cfg: &ScenarioConfig,
    precoder: Precoder,
    seed: u64,
    n: usize,
) -> Result<Vec<RealizationScore>> {
    let geom = geometry(cfg)?;
    (0..n)
        .map(|i| {
            let ch = draw_channels(cfg, &geom, &mut substream(seed, Domain::EvalChannel, i as u64))?;
            let d = random_phase_decision(cfg, &ch, precoder, &mut substream(seed, Domain::EvalAux, i as u64))?;
            let s = score_decision(cfg, &ch, &d)?;
            Ok(RealizationScore {
                realization: i,
                fbl: s.fbl,
                shannon: s.shannon,
                leakage: leakage(&ch, &d)?,
            })
        })
        .collect()
}

/// Trains an agent on `cfg` and returns it with its episode logs.
pub fn train_agent(
    cfg: &Config,
    seed: u64,
    on_episode: impl FnMut(&EpisodeLog),
) -> Result<(Td3Agent, Vec<EpisodeLog>)> {
    cfg.validate()?;
    let sc = &cfg.scenario;
    let mut agent = Td3Agent::new(
        state_len(sc),
        action_len(sc),
        &cfg.learn,
        &mut substream(seed, Domain::Init, 0),
    )?;
    let logs = train(&mut agent, sc, &cfg.learn, seed, on_episode)?;
    Ok((agent, logs))
}

/// Greedy evaluation of a trained agent on realizations `0..n` of `seed`.
pub fn agent_scores(
    agent: &Td3Agent,
    cfg: &Config,
    seed: u64,
    n: usize,
) -> Result<Vec<RealizationScore>> {
    let sc = &cfg.scenario;
    let geom = geometry(sc)?;
    evaluate_policy(agent, sc, cfg.learn.cbl_mode, seed, n, cfg.learn.eval_steps)?
        .into_iter()
        .map(|r| {
            let ch = draw_channels(sc, &geom, &mut substream(seed, Domain::EvalChannel, r.realization as u64))?;
            Ok(RealizationScore {
                realization: r.realization,
                fbl: r.fbl,
                shannon: r.shannon,
                leakage: leakage(&ch, &r.decision)?,
            })
        })
        .collect()
}

/// Scores of one comparator on realizations `0..n` of `seed`. Learned
/// comparators train first with the same seed; the Shannon reference uses
/// unit-amplitude reflection and a TD3 agent trained on that surface.
pub fn comparator_scores(cfg: &Config, comparator: Comparator, seed: u64, n: usize) -> Result<Vec<RealizationScore>> {
    match comparator {
        Comparator::ZfRandomPhase => baseline_scores(&cfg.scenario, Precoder::ZeroForcing, seed, n),
        Comparator::Mmse => baseline_scores(
            &cfg.scenario,
            Precoder::Mmse {
                sigma2: noise_power(&cfg.scenario),
            },
            seed,
            n,
        ),
        Comparator::Td3 | Comparator::Td3EqualCbl | Comparator::ShannonIdeal => {
            let mut c = match comparator {
                Comparator::ShannonIdeal => ideal_variant(cfg),
                _ => cfg.clone(),
            };
            if comparator == Comparator::Td3EqualCbl {
                c.learn.cbl_mode = CblMode::Equal;
            }
            let (agent, _) = train_agent(&c, seed, |_| {})?;
            agent_scores(&agent, &c, seed, n)
        }
    }
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

/// Files written by a training run.
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub train_csv: PathBuf,
    pub eval_csv: PathBuf,
    pub checkpoint: PathBuf,
    pub config: PathBuf,
    pub mean_eval: f64,
}

const TRAIN_HEADER: [&str; 11] = [
    "schema_version",
    "config_hash",
    "seed",
    "episode",
    "mean_reward_bits",
    "mean_spectral",
    "critic_loss_1",
    "critic_loss_2",
    "actor_updates",
    "eval_bits",
    "eval_spectral",
];

const EVAL_HEADER: [&str; 9] = [
    "schema_version",
    "config_hash",
    "seed",
    "scheme",
    "realization",
    "fbl_bits",
    "fbl_spectral",
    "shannon_bits",
    "leakage",
];

fn eval_rows(hash: &str, seed: u64, scheme: &str, total_c: f64, scores: &[RealizationScore]) -> Vec<Vec<String>> {
    scores
        .iter()
        .map(|s| {
            vec![
                SCHEMA_VERSION.to_string(),
                hash.to_string(),
                seed.to_string(),
                scheme.to_string(),
                s.realization.to_string(),
                s.fbl.to_string(),
                (s.fbl / total_c).to_string(),
                s.shannon.to_string(),
                s.leakage.to_string(),
            ]
        })
        .collect()
}

fn with_seed(cfg: &Config, seed: u64) -> Config {
    let mut c = cfg.clone();
    c.scenario.seed = seed;
    c
}

/// Trains, then writes `train.csv`, `eval.csv`, `checkpoint.bin` and `config.toml` into `out`.
pub fn cmd_train(cfg: &Config, seed: u64, out: &Path) -> Result<TrainOutputs> {
    let cfg = with_seed(cfg, seed);
    cfg.validate()?;
    let hash = config_hash(&cfg);
    let total_c = cfg.scenario.total_blocklength as f64;
    let started = Instant::now();
    let (agent, logs) = train_agent(&cfg, seed, |_| {})?;
    let rows: Vec<Vec<String>> = logs
        .iter()
        .map(|l| {
            vec![
                SCHEMA_VERSION.to_string(),
                hash.clone(),
                seed.to_string(),
                l.episode.to_string(),
                l.mean_objective.to_string(),
                (l.mean_objective / total_c).to_string(),
                fmt_opt(l.critic_loss.map(|c| c.0)),
                fmt_opt(l.critic_loss.map(|c| c.1)),
                l.actor_updates.to_string(),
                fmt_opt(l.eval),
                fmt_opt(l.eval.map(|e| e / total_c)),
            ]
        })
        .collect();
    let scores = agent_scores(&agent, &cfg, seed, cfg.learn.eval_realizations)?;
    let mut ckpt = Vec::new();
    agent.save(&mut ckpt)?;

    let outputs = TrainOutputs {
        train_csv: out.join("train.csv"),
        eval_csv: out.join("eval.csv"),
        checkpoint: out.join("checkpoint.bin"),
        config: out.join("config.toml"),
        mean_eval: mean_std(&scores.iter().map(|s| s.fbl).collect::<Vec<_>>()).0,
    };
    write_atomic(&outputs.train_csv, &csv_bytes(&TRAIN_HEADER, &rows)?)?;
    write_atomic(
        &outputs.eval_csv,
        &csv_bytes(&EVAL_HEADER, &eval_rows(&hash, seed, "td3", total_c, &scores))?,
    )?;
    write_atomic(&outputs.checkpoint, &ckpt)?;
    write_atomic(&outputs.config, format!("# config_hash = {hash}\n{}", cfg.to_toml()).as_bytes())?;
    eprintln!("wall-clock: {:.1} s", started.elapsed().as_secs_f64());
    Ok(outputs)
}

/// Loads a checkpoint and writes the greedy evaluation to `out/eval.csv`.
pub fn cmd_evaluate(cfg: &Config, seed: u64, checkpoint: &Path, out: &Path) -> Result<Vec<RealizationScore>> {
    let cfg = with_seed(cfg, seed);
    cfg.validate()?;
    let sc = &cfg.scenario;
    let mut agent = Td3Agent::new(state_len(sc), action_len(sc), &cfg.learn, &mut substream(seed, Domain::Init, 0))?;
    agent.load(&mut fs::File::open(checkpoint)?)?;
    let scores = agent_scores(&agent, &cfg, seed, cfg.learn.eval_realizations)?;
    let hash = config_hash(&cfg);
    let rows = eval_rows(&hash, seed, "td3", sc.total_blocklength as f64, &scores);
    write_atomic(&out.join("eval.csv"), &csv_bytes(&EVAL_HEADER, &rows)?)?;
    Ok(scores)
}

/// Summary statistics of a baseline run.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSummary {
    pub mean: f64,
    pub std: f64,
    pub scores: Vec<RealizationScore>,
}

/// Non-learning schemes evaluated on `realizations` draws; writes
/// `baseline_<scheme>.csv` with one row per realization and a summary row.
pub fn cmd_baseline(
    cfg: &Config,
    scheme: Comparator,
    realizations: usize,
    seed: u64,
    out: &Path,
) -> Result<BaselineSummary> {
    let cfg = with_seed(cfg, seed);
    cfg.validate()?;
    let scores = match scheme {
        Comparator::ZfRandomPhase | Comparator::Mmse => comparator_scores(&cfg, scheme, seed, realizations)?,
        Comparator::ShannonIdeal => baseline_scores(&ideal_variant(&cfg).scenario, Precoder::ZeroForcing, seed, realizations)?,
        other => {
            return Err(Error::config(
                "scheme",
                format!("`{other}` is learned; use the train or sweep command"),
            ))
        }
    };
    let values: Vec<f64> = scores.iter().map(|s| s.reported(scheme)).collect();
    let (mean, std) = mean_std(&values);
    let hash = config_hash(&cfg);
    let total_c = cfg.scenario.total_blocklength as f64;
    let mut rows = eval_rows(&hash, seed, scheme.name(), total_c, &scores);
    for (row, v) in rows.iter_mut().zip(&values) {
        row.push(v.to_string());
    }
    rows.push(vec![
        SCHEMA_VERSION.to_string(),
        hash,
        seed.to_string(),
        scheme.name().to_string(),
        "mean".into(),
        String::new(),
        (mean / total_c).to_string(),
        String::new(),
        String::new(),
        mean.to_string(),
    ]);
    rows.push({
        let mut r = rows.last().expect("pushed").clone();
        r[4] = "std".into();
        r[6] = (std / total_c).to_string();
        r[9] = std.to_string();
        r
    });
    let mut header = EVAL_HEADER.to_vec();
    header.push("reported_bits");
    write_atomic(&out.join(format!("baseline_{}.csv", scheme.name())), &csv_bytes(&header, &rows)?)?;
    Ok(BaselineSummary { mean, std, scores })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    PTotal,
    N,
    CTotal,
    BetaMin,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::PTotal => "p_total",
            SweepParam::N => "N",
            SweepParam::CTotal => "C_total",
            SweepParam::BetaMin => "beta_min",
        }
    }

    /// Returns `cfg` with the swept parameter set to `v`.
    pub fn apply(self, cfg: &Config, v: f64) -> Result<Config> {
        let mut c = cfg.clone();
        let integral = |what: &str| {
            if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as u32)
            } else {
                Err(Error::config(what, format!("needs a positive integer, got {v}")))
            }
        };
        match self {
            SweepParam::PTotal => c.scenario.p_total = v,
            SweepParam::N => c.scenario.set_ris_elements(integral("N")? as usize),
            SweepParam::CTotal => c.scenario.set_total_blocklength(integral("C_total")?),
            SweepParam::BetaMin => c.scenario.beta_min = v,
        }
        c.validate()?;
        Ok(c)
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p_total" => Ok(SweepParam::PTotal),
            "N" | "n" => Ok(SweepParam::N),
            "C_total" | "c_total" => Ok(SweepParam::CTotal),
            "beta_min" => Ok(SweepParam::BetaMin),
            other => Err(Error::config("sweep-param", format!("unknown sweep parameter `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub reps: usize,
    pub comparators: Vec<Comparator>,
}

impl SweepSpec {
    pub fn validate(&self, base: &Config) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::config("values", "at least one value is required"));
        }
        if self.reps == 0 {
            return Err(Error::config("reps", "must be positive"));
        }
        if self.comparators.is_empty() {
            return Err(Error::config("comparators", "at least one comparator is required"));
        }
        for &v in &self.values {
            self.param.apply(base, v)?;
        }
        Ok(())
    }
}

/// One `(value, repetition, comparator)` cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub rep: usize,
    pub comparator: Comparator,
    pub seed: u64,
    pub mean_bits: f64,
    pub std_bits: f64,
    pub mean_shannon: f64,
    pub total_c: f64,
}

const SWEEP_HEADER: [&str; 13] = [
    "schema_version",
    "config_hash",
    "seed",
    "param",
    "value",
    "rep",
    "comparator",
    "cell_seed",
    "mean_bits",
    "std_bits",
    "mean_spectral",
    "mean_shannon_bits",
    "status",
];

/// Worker count from `RISURLLC_WORKERS`, default 1.
pub fn worker_count() -> usize {
    std::env::var("RISURLLC_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

fn run_cell(base: &Config, spec: &SweepSpec, value: f64, rep: usize, comparator: Comparator, seed: u64) -> Result<SweepRow> {
    let cfg = spec.param.apply(base, value)?;
    let cell_seed = seed.wrapping_add(rep as u64);
    let n = cfg.learn.eval_realizations;
    let scores = comparator_scores(&cfg, comparator, cell_seed, n)?;
    let reported: Vec<f64> = scores.iter().map(|s| s.reported(comparator)).collect();
    let (mean_bits, std_bits) = mean_std(&reported);
    let mean_shannon = mean_std(&scores.iter().map(|s| s.shannon).collect::<Vec<_>>()).0;
    Ok(SweepRow {
        value,
        rep,
        comparator,
        seed: cell_seed,
        mean_bits,
        std_bits,
        mean_shannon,
        total_c: cfg.scenario.total_blocklength as f64,
    })
}

/// Runs every cell, writes `sweep_<param>.csv` plus one plot-data file per
/// comparator, and returns the rows in `(value, rep, comparator)` order.
/// On a failed cell the finished rows are still written, followed by a row
/// marked `failed`, and the error is returned.
pub fn cmd_sweep(base: &Config, spec: &SweepSpec, seed: u64, out: &Path) -> Result<Vec<SweepRow>> {
    let base = with_seed(base, seed);
    base.validate()?;
    spec.validate(&base)?;
    let hash = config_hash(&base);
    let cells: Vec<(f64, usize, Comparator)> = spec
        .values
        .iter()
        .flat_map(|&v| (0..spec.reps).flat_map(move |r| spec.comparators.iter().map(move |&c| (v, r, c))))
        .collect();

    let results: Mutex<Vec<Option<Result<SweepRow>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let failed = AtomicUsize::new(usize::MAX);
    std::thread::scope(|scope| {
        for _ in 0..worker_count().min(cells.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= cells.len() || failed.load(Ordering::SeqCst) < i {
                    break;
                }
                let (v, r, c) = cells[i];
                let res = run_cell(&base, spec, v, r, c, seed);
                if res.is_err() {
                    failed.fetch_min(i, Ordering::SeqCst);
                }
                results.lock().expect("no poisoned workers")[i] = Some(res);
            });
        }
    });

    let results = results.into_inner().expect("workers joined");
    let mut rows = Vec::new();
    let mut csv_rows = Vec::new();
    let mut error = None;
    for ((v, r, c), res) in cells.iter().zip(results) {
        let prefix = vec![
            SCHEMA_VERSION.to_string(),
            hash.clone(),
            seed.to_string(),
            spec.param.name().to_string(),
            v.to_string(),
            r.to_string(),
            c.name().to_string(),
        ];
        match res {
            Some(Ok(row)) => {
                let mut line = prefix;
                line.extend([
                    row.seed.to_string(),
                    row.mean_bits.to_string(),
                    row.std_bits.to_string(),
                    (row.mean_bits / row.total_c).to_string(),
                    row.mean_shannon.to_string(),
                    "ok".to_string(),
                ]);
                csv_rows.push(line);
                rows.push(row);
            }
            Some(Err(e)) => {
                let mut line = prefix;
                line.extend([String::new(), String::new(), String::new(), String::new(), String::new()]);
                line.push(format!("failed: {e}"));
                csv_rows.push(line);
                error = Some(e);
                break;
            }
            None => break,
        }
    }
    write_atomic(
        &out.join(format!("sweep_{}.csv", spec.param.name())),
        &csv_bytes(&SWEEP_HEADER, &csv_rows)?,
    )?;
    if let Some(e) = error {
        return Err(e);
    }
    for &c in &spec.comparators {
        let mut text = format!(
            "# schema_version={SCHEMA_VERSION} config_hash={hash} seed={seed} param={} comparator={c}\n# x mean_bits std_bits\n",
            spec.param.name()
        );
        for &v in &spec.values {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.comparator == c && r.value == v)
                .map(|r| r.mean_bits)
                .collect();
            let (m, s) = mean_std(&vals);
            text.push_str(&format!("{v} {m} {s}\n"));
        }
        write_atomic(&out.join(format!("plot_{}_{}.dat", spec.param.name(), c.name())), text.as_bytes())?;
    }
    Ok(rows)
}
