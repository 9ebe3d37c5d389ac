//! Config-driven experiment runner.
//!
//! A run is described by one flat JSON object ([`ExperimentConfig`]). Every
//! mode produces a CSV table with a fixed header, preceded by a `#` manifest
//! line; some modes also write sidecar tables next to the main output.
//! Trial `t` uses the seed `SplitMix64::derive(seed, t)`, and trials are
//! evaluated in parallel but written in trial order, so identical configs give
//! byte-identical files (bench timings aside).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx::{fit_low_rank_svd, quantize_int4, random_low_rank, ApproxScorer, QuantizedLowRank};
use crate::bench::{run_gather_sweep, GatherBenchConfig, DEFAULT_MAX_BYTES};
use crate::distributed::{da_topk, shard};
use crate::error::{HireError, Result};
use crate::ffn::{
    ffn_common_path, ffn_dense, ffn_group_sparse, ffn_topk, per_sample_groups, CommonPathFFN, GroupIndexSet,
    GroupedFFN,
};
use crate::hire::{hire_topk, select_candidates, softmax_topk, CandidateSet, HireConfig};
use crate::instance::{gaussian_matrix, gaussian_vector, gen_instance, Instance, Spectrum};
use crate::io;
use crate::linalg::{exact_topk, topk_select, ActivationKind, ScoreMatrix, TopKSet};
use crate::metrics::{histogram, overlap_ratio, param_bytes, recall, RecallReport};
use crate::rng::SplitMix64;

pub const DEFAULT_KPRIME_SWEEP: [usize; 6] = [32, 64, 128, 256, 384, 512];
pub const DEFAULT_G_SWEEP: [usize; 7] = [1, 2, 4, 8, 16, 32, 64];
const HISTOGRAM_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    SoftmaxTopk,
    HireTopk,
    Ffn,
    Distributed,
    BenchGather,
    KprimeSweep,
    ProjectionAblation,
    Overlap,
    Cost,
}

impl Mode {
    pub fn name(self) -> String {
        serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default()
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| HireError::config("mode", format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerChoice {
    Exact,
    LowRank,
    #[default]
    Quantized,
    LowRankQuantized,
    RandomLowRank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    #[default]
    RandomGaussian,
    Decaying,
    Files,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub mode: Option<Mode>,
    pub d: usize,
    pub l: usize,
    /// Hidden units for `overlap`, and for `ffn` when `m2` is unset.
    pub m: usize,
    pub g: usize,
    pub m1: usize,
    pub m2: Option<usize>,
    pub k: usize,
    pub k_prime: usize,
    pub k_prime_sweep: Option<Vec<usize>>,
    pub rank: usize,
    pub scorer: ScorerChoice,
    pub phi: ActivationKind,
    pub shards: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub trials: usize,
    pub source: Source,
    pub matrix_path: Option<PathBuf>,
    pub vector_path: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Relative noise added to the shared input in `overlap`.
    pub noise: f32,
    pub g_sweep: Option<Vec<usize>>,
    pub total_vectors: usize,
    pub fraction_selected: f64,
    pub repeats: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: None,
            d: 64,
            l: 4096,
            m: 256,
            g: 8,
            m1: 0,
            m2: None,
            k: 32,
            k_prime: 128,
            k_prime_sweep: None,
            rank: 8,
            scorer: ScorerChoice::Quantized,
            phi: ActivationKind::Identity,
            shards: 1,
            n_samples: 4,
            seed: 0,
            trials: 10,
            source: Source::RandomGaussian,
            matrix_path: None,
            vector_path: None,
            out: None,
            noise: 0.5,
            g_sweep: None,
            total_vectors: 16_384,
            fraction_selected: 0.1,
            repeats: 7,
        }
    }
}

fn require(cond: bool, field: &str, message: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(HireError::config(field, message))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { "<root>".to_owned() } else { path };
            HireError::config(field, e.into_inner().to_string())
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn sparse_units(&self) -> usize {
        self.m2.unwrap_or(self.m)
    }

    pub fn sweep(&self) -> Vec<usize> {
        self.k_prime_sweep
            .clone()
            .unwrap_or_else(|| DEFAULT_KPRIME_SWEEP.to_vec())
    }

    fn uses_files(&self) -> bool {
        self.source == Source::Files
    }

    /// Checks everything the chosen mode needs; returns the mode.
    pub fn validate(&self) -> Result<Mode> {
        let mode = self.mode.ok_or_else(|| HireError::config("mode", "missing"))?;
        require(self.out.is_some(), "out", "missing output path")?;
        if self.uses_files() {
            require(self.matrix_path.is_some(), "matrix_path", "required when source is files")?;
            if mode != Mode::Cost && mode != Mode::BenchGather {
                require(self.vector_path.is_some(), "vector_path", "required when source is files")?;
            }
        } else {
            require(self.d >= 1, "d", "must be at least 1")?;
            require(self.l >= 1, "l", "must be at least 1")?;
            require(self.trials >= 1, "trials", "must be at least 1")?;
        }
        let low_rank = matches!(
            self.scorer,
            ScorerChoice::LowRank | ScorerChoice::LowRankQuantized | ScorerChoice::RandomLowRank
        );
        match mode {
            Mode::SoftmaxTopk | Mode::HireTopk | Mode::Distributed => {
                require(self.k >= 1, "k", "must be at least 1")?;
                require(self.k_prime >= self.k, "k_prime", "must be at least k")?;
                if mode == Mode::SoftmaxTopk {
                    require(self.phi == ActivationKind::Identity, "phi", "softmax-topk needs identity")?;
                }
                if mode == Mode::Distributed {
                    require(self.shards >= 1, "shards", "must be at least 1")?;
                    require(self.k % self.shards == 0, "k", "must be divisible by shards")?;
                    require(self.k_prime % self.shards == 0, "k_prime", "must be divisible by shards")?;
                    if !self.uses_files() {
                        require(self.shards <= self.l, "shards", "must not exceed l")?;
                        require(self.k / self.shards <= self.l / self.shards, "k", "per-shard quota exceeds shard width")?;
                    }
                }
                if low_rank && !self.uses_files() {
                    require((1..=self.d.min(self.l)).contains(&self.rank), "rank", "must be in 1..=min(d, l)")?;
                }
            }
            Mode::KprimeSweep => {
                require(self.k >= 1, "k", "must be at least 1")?;
                require(self.sweep().iter().all(|&v| v >= 1), "k_prime_sweep", "entries must be at least 1")?;
                if low_rank && !self.uses_files() {
                    require((1..=self.d.min(self.l)).contains(&self.rank), "rank", "must be in 1..=min(d, l)")?;
                }
            }
            Mode::ProjectionAblation => {
                require(self.k >= 1, "k", "must be at least 1")?;
                require(self.k_prime >= self.k, "k_prime", "must be at least k")?;
                if !self.uses_files() {
                    require((1..=self.d.min(self.l)).contains(&self.rank), "rank", "must be in 1..=min(d, l)")?;
                }
            }
            Mode::Ffn | Mode::Overlap => {
                let m = if mode == Mode::Ffn { self.sparse_units() } else { self.m };
                let m_field = if mode == Mode::Ffn && self.m2.is_some() { "m2" } else { "m" };
                require(self.g >= 1, "g", "must be at least 1")?;
                if !self.uses_files() {
                    require(m >= self.g && m % self.g == 0, m_field, "must be a positive multiple of g")?;
                    require(self.k_prime <= m, "k_prime", format!("must not exceed {m_field}"))?;
                    if low_rank {
                        require((1..=self.d.min(m)).contains(&self.rank), "rank", "must be in 1..=min(d, m)")?;
                    }
                }
                require(self.k >= 1 && self.k % self.g == 0, "k", "must be a positive multiple of g")?;
                require(self.k_prime % self.g == 0, "k_prime", "must be a multiple of g")?;
                require(self.k_prime >= self.k, "k_prime", "must be at least k")?;
                if mode == Mode::Overlap {
                    require(self.n_samples >= 1, "n_samples", "must be at least 1")?;
                    require(self.noise.is_finite() && self.noise >= 0.0, "noise", "must be finite and non-negative")?;
                }
            }
            Mode::BenchGather => {
                let gs = self.g_sweep.clone().unwrap_or_else(|| DEFAULT_G_SWEEP.to_vec());
                require(
                    gs.iter().all(|&g| g >= 1 && self.total_vectors % g == 0),
                    "g_sweep",
                    "every group size must divide total_vectors",
                )?;
                require(
                    self.fraction_selected > 0.0 && self.fraction_selected <= 1.0,
                    "fraction_selected",
                    "must be in (0, 1]",
                )?;
                require(self.repeats >= 3, "repeats", "must be at least 3")?;
            }
            Mode::Cost => {}
        }
        Ok(mode)
    }

    /// One `#`-prefixed line naming the mode, seed, sizes and crate version.
    pub fn manifest(&self, mode: Mode) -> String {
        format!(
            "# hire {} mode={} seed={} d={} l={} m={} g={} m1={} m2={} k={} k_prime={} rank={} scorer={} phi={} shards={} n_samples={} trials={} source={}",
            env!("CARGO_PKG_VERSION"),
            mode.name(),
            self.seed,
            self.d,
            self.l,
            self.m,
            self.g,
            self.m1,
            self.sparse_units(),
            self.k,
            self.k_prime,
            self.rank,
            serde_json::to_value(self.scorer).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default(),
            self.phi.name(),
            self.shards,
            self.n_samples,
            self.trials,
            serde_json::to_value(self.source).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default(),
        )
    }
}

// ── Output tables ────────────────────────────────────────────────────────────

pub const TOPK_HEADER: &str = "trial,rank,index,value";
pub const SOFTMAX_HEADER: &str = "trial,rank,index,probability,logit";
pub const COMM_HEADER: &str = "trial,shard,candidates,bytes_gathered";
pub const SWEEP_HEADER: &str = "k_prime,recall,intersection_k,top1_agree";
pub const ABLATION_HEADER: &str = "instance,recall_svd,recall_random";
pub const FFN_HEADER: &str = "trial,variant,rel_err,units_used";
pub const OVERLAP_HEADER: &str = "trial,union_groups,overlap_ratio";
pub const HISTOGRAM_HEADER: &str = "bin_lo,bin_hi,count";
pub const BENCH_HEADER: &str = "g,bytes,sparse_ns,dense_ns,efficiency_paper,efficiency_ratio";
pub const COST_HEADER: &str = "method,bytes";

#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: &'static str,
    pub rows: Vec<String>,
}

impl CsvTable {
    fn new(header: &'static str) -> Self {
        Self {
            header,
            rows: Vec::new(),
        }
    }

    pub fn render(&self, manifest: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{manifest}");
        let _ = writeln!(s, "{}", self.header);
        for r in &self.rows {
            let _ = writeln!(s, "{r}");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub mode: Mode,
    pub main: CsvTable,
    /// `(suffix, table)`: written to `<out stem>.<suffix>.csv`.
    pub sidecars: Vec<(&'static str, CsvTable)>,
}

/// `results.csv` + `comm` → `results.comm.csv`.
pub fn sidecar_path(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}.csv"))
}

/// Validate, execute and write all tables. Returns the paths written.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let output = execute(cfg)?;
    let out = cfg.out.as_ref().expect("validated");
    let manifest = cfg.manifest(output.mode);
    let mut written = vec![out.clone()];
    fs::write(out, output.main.render(&manifest))?;
    for (suffix, table) in &output.sidecars {
        let path = sidecar_path(out, suffix);
        fs::write(&path, table.render(&manifest))?;
        written.push(path);
    }
    Ok(written)
}

/// Validate and compute all tables without writing them.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let mode = cfg.validate()?;
    let (main, sidecars) = match mode {
        Mode::HireTopk => (run_hire(cfg)?, vec![]),
        Mode::SoftmaxTopk => (run_softmax(cfg)?, vec![]),
        Mode::Distributed => {
            let (top, comm) = run_distributed(cfg)?;
            (top, vec![("comm", comm)])
        }
        Mode::KprimeSweep => (run_kprime_sweep(cfg)?, vec![]),
        Mode::ProjectionAblation => (run_projection_ablation(cfg)?, vec![]),
        Mode::Ffn => (run_ffn(cfg)?, vec![]),
        Mode::Overlap => {
            let (ratios, hist) = run_overlap(cfg)?;
            (ratios, vec![("hist", hist)])
        }
        Mode::BenchGather => (run_bench(cfg)?, vec![]),
        Mode::Cost => (run_cost(cfg)?, vec![]),
    };
    Ok(RunOutput { mode, main, sidecars })
}

// ── Instances and scorers ────────────────────────────────────────────────────

fn trial_seed(cfg: &ExperimentConfig, trial: usize) -> u64 {
    SplitMix64::derive(cfg.seed, trial as u64)
}

/// `(trial seed, instance)` per trial, in trial order.
fn instances(cfg: &ExperimentConfig) -> Result<Vec<(u64, Instance)>> {
    if cfg.uses_files() {
        let z = io::load_matrix(cfg.matrix_path.as_ref().expect("validated"))?;
        let x = io::load_vector(cfg.vector_path.as_ref().expect("validated"))?;
        return Ok(vec![(trial_seed(cfg, 0), Instance { z, x })]);
    }
    let spectrum = match cfg.source {
        Source::Decaying => Spectrum::Decaying,
        _ => Spectrum::Flat,
    };
    (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let seed = trial_seed(cfg, t);
            Ok((seed, gen_instance(cfg.d, cfg.l, seed, spectrum)?))
        })
        .collect()
}

/// Build the configured approximation of `z`. `seed` only matters for the
/// random projection.
pub fn build_scorer(z: &ScoreMatrix, choice: ScorerChoice, rank: usize, seed: u64) -> Result<ApproxScorer> {
    Ok(match choice {
        ScorerChoice::Exact => ApproxScorer::ExactCopy(z.clone()),
        ScorerChoice::Quantized => ApproxScorer::Quantized(quantize_int4(z)),
        ScorerChoice::LowRank => ApproxScorer::LowRank(fit_low_rank_svd(z, rank)?),
        ScorerChoice::LowRankQuantized => {
            ApproxScorer::LowRankQuantized(QuantizedLowRank::from_low_rank(&fit_low_rank_svd(z, rank)?))
        }
        ScorerChoice::RandomLowRank => ApproxScorer::LowRank(random_low_rank(z, rank, SplitMix64::derive(seed, 1))?),
    })
}

fn push_topk(table: &mut CsvTable, trial: usize, top: &TopKSet) {
    for (rank, e) in top.entries.iter().enumerate() {
        table.rows.push(format!("{trial},{rank},{},{}", e.index, e.value));
    }
}

fn hire_config(cfg: &ExperimentConfig, phi: ActivationKind) -> Result<HireConfig> {
    HireConfig::new(cfg.k, cfg.k_prime, phi)
}

// ── Modes ────────────────────────────────────────────────────────────────────

fn run_hire(cfg: &ExperimentConfig) -> Result<CsvTable> {
    let hc = hire_config(cfg, cfg.phi)?;
    let results: Vec<TopKSet> = instances(cfg)?
        .par_iter()
        .map(|(seed, inst)| {
            let a = build_scorer(&inst.z, cfg.scorer, cfg.rank, *seed)?;
            Ok(hire_topk(&inst.x, &inst.z, &a, &hc)?.0)
        })
        .collect::<Result<_>>()?;
    let mut table = CsvTable::new(TOPK_HEADER);
    for (t, top) in results.iter().enumerate() {
        push_topk(&mut table, t, top);
    }
    Ok(table)
}

fn run_softmax(cfg: &ExperimentConfig) -> Result<CsvTable> {
    let hc = hire_config(cfg, ActivationKind::Identity)?;
    let results: Vec<_> = instances(cfg)?
        .par_iter()
        .map(|(seed, inst)| {
            let a = build_scorer(&inst.z, cfg.scorer, cfg.rank, *seed)?;
            Ok(softmax_topk(&inst.z, &inst.x, &a, &hc)?.0)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = CsvTable::new(SOFTMAX_HEADER);
    for (t, dist) in results.iter().enumerate() {
        for (rank, e) in dist.entries.iter().enumerate() {
            table
                .rows
                .push(format!("{t},{rank},{},{},{}", e.index, e.probability, e.logit));
        }
    }
    Ok(table)
}

fn run_distributed(cfg: &ExperimentConfig) -> Result<(CsvTable, CsvTable)> {
    let hc = hire_config(cfg, cfg.phi)?;
    let results: Vec<_> = instances(cfg)?
        .par_iter()
        .map(|(seed, inst)| {
            let a = build_scorer(&inst.z, cfg.scorer, cfg.rank, *seed)?;
            da_topk(&shard(&inst.z, &a, cfg.shards)?, &inst.x, &hc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut top_table = CsvTable::new(TOPK_HEADER);
    let mut comm_table = CsvTable::new(COMM_HEADER);
    for (t, (top, comm)) in results.iter().enumerate() {
        push_topk(&mut top_table, t, top);
        let per_candidate = comm.bytes_gathered / comm.candidates_per_shard.iter().sum::<usize>().max(1);
        for (s, &c) in comm.candidates_per_shard.iter().enumerate() {
            comm_table.rows.push(format!("{t},{s},{c},{}", c * per_candidate));
        }
    }
    Ok((top_table, comm_table))
}

/// Recall of the top-`k'` candidates of `approx` for each `k'`.
pub fn recall_sweep(approx: &[f32], exact: &TopKSet, sweep: &[usize], origin: crate::approx::ScorerKind) -> Result<Vec<RecallReport>> {
    sweep
        .iter()
        .map(|&kp| {
            let top = topk_select(approx, kp)?;
            let candidates = CandidateSet {
                indices: top.sorted_indices(),
                origin,
                clamped: top.clamped,
            };
            Ok(recall(&candidates, exact))
        })
        .collect()
}

fn run_kprime_sweep(cfg: &ExperimentConfig) -> Result<CsvTable> {
    let sweep = cfg.sweep();
    let per_trial: Vec<Vec<RecallReport>> = instances(cfg)?
        .par_iter()
        .map(|(seed, inst)| {
            let a = build_scorer(&inst.z, cfg.scorer, cfg.rank, *seed)?;
            let approx = a.approx_scores(&inst.x, cfg.phi)?;
            let exact = exact_topk(&inst.z, &inst.x, cfg.k, cfg.phi)?;
            recall_sweep(&approx, &exact, &sweep, a.kind())
        })
        .collect::<Result<_>>()?;
    let n = per_trial.len() as f64;
    let mut table = CsvTable::new(SWEEP_HEADER);
    for (i, kp) in sweep.iter().enumerate() {
        let (mut r, mut inter, mut top1) = (0.0, 0.0, 0.0);
        for reports in &per_trial {
            r += reports[i].recall;
            inter += reports[i].intersection_k as f64;
            top1 += f64::from(u8::from(reports[i].top1_agree));
        }
        table
            .rows
            .push(format!("{kp},{:.6},{:.4},{:.4}", r / n, inter / n, top1 / n));
    }
    Ok(table)
}

/// Recall at `(k, k')` of an SVD fit and of a random projection of equal rank.
pub fn projection_recalls(inst: &Instance, rank: usize, k: usize, k_prime: usize, phi: ActivationKind, seed: u64) -> Result<(f64, f64)> {
    let exact = exact_topk(&inst.z, &inst.x, k, phi)?;
    let fitted = ApproxScorer::LowRank(fit_low_rank_svd(&inst.z, rank)?);
    let random = ApproxScorer::LowRank(random_low_rank(&inst.z, rank, SplitMix64::derive(seed, 1))?);
    let r_fit = recall(&select_candidates(&fitted, &inst.x, k_prime, phi)?, &exact).recall;
    let r_rand = recall(&select_candidates(&random, &inst.x, k_prime, phi)?, &exact).recall;
    Ok((r_fit, r_rand))
}

fn run_projection_ablation(cfg: &ExperimentConfig) -> Result<CsvTable> {
    let pairs: Vec<(f64, f64)> = instances(cfg)?
        .par_iter()
        .map(|(seed, inst)| projection_recalls(inst, cfg.rank, cfg.k, cfg.k_prime, cfg.phi, *seed))
        .collect::<Result<_>>()?;
    let mut table = CsvTable::new(ABLATION_HEADER);
    for (t, (a, b)) in pairs.iter().enumerate() {
        table.rows.push(format!("{t},{a:.6},{b:.6}"));
    }
    Ok(table)
}

fn relative_error(got: &[f32], reference: &[f32]) -> f64 {
    let num: f64 = got
        .iter()
        .zip(reference)
        .map(|(a, b)| ((*a as f64) - (*b as f64)).powi(2))
        .sum();
    let den: f64 = reference.iter().map(|&b| (b as f64).powi(2)).sum();
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// Random layer of `m` units: Gaussian `U` and `V` drawn column-major in that order.
pub fn random_ffn(d: usize, m: usize, g: usize, phi: ActivationKind, rng: &mut SplitMix64) -> Result<GroupedFFN> {
    let u = gaussian_matrix(d, m, rng)?;
    let v = gaussian_matrix(d, m, rng)?;
    GroupedFFN::new(u, v, g, phi)
}

fn ffn_instances(cfg: &ExperimentConfig) -> Result<Vec<(u64, CommonPathFFN, Vec<f32>)>> {
    if cfg.uses_files() {
        let c = io::load(cfg.matrix_path.as_ref().expect("validated"), |r| io::read_common_path(r, cfg.phi))?;
        let x = io::load_vector(cfg.vector_path.as_ref().expect("validated"))?;
        return Ok(vec![(trial_seed(cfg, 0), c, x.into_inner())]);
    }
    (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let seed = trial_seed(cfg, t);
            let mut rng = SplitMix64::new(seed);
            let sparse = random_ffn(cfg.d, cfg.sparse_units(), cfg.g, cfg.phi, &mut rng)?;
            let dense = if cfg.m1 > 0 {
                Some(random_ffn(cfg.d, cfg.m1, 1, cfg.phi, &mut rng)?)
            } else {
                None
            };
            let x = gaussian_vector(cfg.d, &mut rng);
            Ok((seed, CommonPathFFN::new(dense, sparse)?, x))
        })
        .collect()
}

fn run_ffn(cfg: &ExperimentConfig) -> Result<CsvTable> {
    let rows: Vec<Vec<String>> = ffn_instances(cfg)?
        .par_iter()
        .enumerate()
        .map(|(t, (seed, c, x))| {
            let f = c.sparse_part();
            let a = build_scorer(f.u(), cfg.scorer, cfg.rank, *seed)?;
            let dense = ffn_dense(f, x)?;
            let topk = ffn_topk(f, x, cfg.k)?;
            let (gs, groups) = ffn_group_sparse(f, x, &a, cfg.k, cfg.k_prime)?;
            let mut rows = vec![
                format!("{t},dense,{:.6e},{}", 0.0, f.m()),
                format!("{t},topk,{:.6e},{}", relative_error(&topk, &dense), cfg.k),
                format!("{t},group-sparse,{:.6e},{}", relative_error(&gs, &dense), groups.len() * f.g()),
            ];
            if let Some(common) = c.dense_part() {
                let cp = ffn_common_path(c, x, &a, cfg.k, cfg.k_prime)?;
                let full: Vec<f32> = ffn_dense(common, x)?.iter().zip(&dense).map(|(p, q)| p + q).collect();
                rows.push(format!(
                    "{t},common-path,{:.6e},{}",
                    relative_error(&cp, &full),
                    common.m() + groups.len() * f.g()
                ));
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let mut table = CsvTable::new(FFN_HEADER);
    table.rows = rows.into_iter().flatten().collect();
    Ok(table)
}

/// Per-sample group selections for `n_samples` noisy copies of one input.
pub fn correlated_selections(
    f: &GroupedFFN,
    a: &ApproxScorer,
    base: &[f32],
    n_samples: usize,
    noise: f32,
    k: usize,
    k_prime: usize,
    rng: &mut SplitMix64,
) -> Result<Vec<GroupIndexSet>> {
    let xs: Vec<Vec<f32>> = (0..n_samples)
        .map(|_| base.iter().map(|&b| b + noise * rng.gaussian_f32()).collect())
        .collect();
    per_sample_groups(f, &xs, a, k, k_prime)
}

fn run_overlap(cfg: &ExperimentConfig) -> Result<(CsvTable, CsvTable)> {
    let rows: Vec<(usize, f64)> = (0..cfg.trials.max(1))
        .into_par_iter()
        .map(|t| {
            let seed = trial_seed(cfg, t);
            let mut rng = SplitMix64::new(seed);
            let (f, base) = if cfg.uses_files() {
                let f = io::load(cfg.matrix_path.as_ref().expect("validated"), |r| io::read_ffn(r, cfg.phi))?;
                let x = io::load_vector(cfg.vector_path.as_ref().expect("validated"))?;
                (f, x.into_inner())
            } else {
                let f = random_ffn(cfg.d, cfg.m, cfg.g, cfg.phi, &mut rng)?;
                let x = gaussian_vector(cfg.d, &mut rng);
                (f, x)
            };
            let a = build_scorer(f.u(), cfg.scorer, cfg.rank, seed)?;
            let sets = correlated_selections(&f, &a, &base, cfg.n_samples, cfg.noise, cfg.k, cfg.k_prime, &mut rng)?;
            let ratio = overlap_ratio(&sets, cfg.k / cfg.g)?;
            Ok((GroupIndexSet::union(&sets).len(), ratio))
        })
        .collect::<Result<_>>()?;
    let mut table = CsvTable::new(OVERLAP_HEADER);
    for (t, (u, r)) in rows.iter().enumerate() {
        table.rows.push(format!("{t},{u},{r:.6}"));
    }
    let lo = 1.0 / cfg.n_samples as f64;
    let ratios: Vec<f64> = rows.iter().map(|(_, r)| *r).collect();
    let counts = histogram(&ratios, lo, 1.0, HISTOGRAM_BINS);
    let width = (1.0 - lo) / HISTOGRAM_BINS as f64;
    let mut hist = CsvTable::new(HISTOGRAM_HEADER);
    for (b, c) in counts.iter().enumerate() {
        let a = lo + b as f64 * width;
        hist.rows.push(format!("{a:.6},{:.6},{c}", a + width));
    }
    Ok((table, hist))
}

fn run_bench(cfg: &ExperimentConfig) -> Result<CsvTable> {
    let gs = cfg.g_sweep.clone().unwrap_or_else(|| DEFAULT_G_SWEEP.to_vec());
    let base = GatherBenchConfig {
        n_groups: 1,
        g: 1,
        d: cfg.d,
        fraction_selected: cfg.fraction_selected,
        repeats: cfg.repeats,
        seed: cfg.seed,
        max_bytes: DEFAULT_MAX_BYTES,
    };
    let results = run_gather_sweep(&base, cfg.total_vectors, &gs)?;
    let mut table = CsvTable::new(BENCH_HEADER);
    for r in &results {
        if !r.checksum_ok || r.sparse_bytes != r.dense_bytes {
            return Err(HireError::Verification(format!("gather at g = {} moved the wrong bytes", r.g)));
        }
        table.rows.push(format!(
            "{},{},{},{},{:.6},{:.6}",
            r.g, r.sparse_bytes, r.sparse_time, r.dense_time, r.efficiency_paper, r.efficiency_ratio
        ));
    }
    Ok(table)
}

fn run_cost(cfg: &ExperimentConfig) -> Result<CsvTable> {
    let (d, l) = if cfg.uses_files() {
        let z = io::load_matrix(cfg.matrix_path.as_ref().expect("validated"))?;
        (z.rows(), z.cols())
    } else {
        (cfg.d, cfg.l)
    };
    let report = param_bytes(d as u64, l as u64, cfg.rank as u64, cfg.k_prime as u64)?;
    let mut table = CsvTable::new(COST_HEADER);
    for (method, bytes) in report.rows() {
        table.rows.push(format!("{method},{bytes}"));
    }
    Ok(table)
}
