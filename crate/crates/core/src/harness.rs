//! Experiment orchestration behind the command-line tool: configuration,
//! single games, sweeps, verification suites and report files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{
    custom_schedule, fully_adaptive_schedule, geometric_schedule, multi_batch_schedule, AdversaryEnv,
    AdversaryMode, AdversaryState, CertificateFile, Commitment, Defeat, DimsSchedule,
};
use crate::error::{Error, Result};
use crate::geometry::{cross_singular_values, random_unit, sector_contains, Subspace};
use crate::learner::{BaselineKind, BaselineLearner, ExactSolverLearner};
use crate::mdp::{verify_realizability, Family, HardInstance, Sign};
use crate::packing::{budget_report, g_of_gamma, pigeonhole_select, BudgetReport, Packing, SearchBudget};
use crate::protocol::{
    default_probes, evaluate_bpi_soundness, evaluate_pe_soundness, run_protocol, Environment, FixedInstanceEnv,
    Learner, LearnerOutput, QueryMode, Transcript,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const CSV_SCHEMA_VERSION: u32 = 1;
pub const EXACT_SOLVER: &str = "exact_solver";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameMode {
    MultiBatch,
    FullyAdaptive,
    FixedInstance,
}

impl GameMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GameMode::MultiBatch => "multi_batch",
            GameMode::FullyAdaptive => "fully_adaptive",
            GameMode::FixedInstance => "fixed_instance",
        }
    }
}

impl std::str::FromStr for GameMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi_batch" => Ok(GameMode::MultiBatch),
            "fully_adaptive" => Ok(GameMode::FullyAdaptive),
            "fixed_instance" => Ok(GameMode::FixedInstance),
            _ => Err(Error::config("adversary_mode", format!("unknown mode {s:?}"))),
        }
    }
}

/// Where the per-round subspace dimensions come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `max(1, ⌊d/2^k⌋)`.
    #[default]
    Geometric,
    /// `2^{⌈N/4^k⌉}`.
    Theoretical,
    /// The `dims` field.
    Custom,
}

fn default_learner() -> String {
    "random_unit".into()
}

fn default_mode() -> GameMode {
    GameMode::FixedInstance
}

fn default_epsilon() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub d: usize,
    pub gamma: f64,
    #[serde(rename = "K", alias = "k")]
    pub k: usize,
    pub n_per_round: Vec<usize>,
    pub problem: Family,
    #[serde(default)]
    pub query_mode: QueryMode,
    #[serde(default = "default_learner")]
    pub learner_kind: String,
    #[serde(default = "default_mode")]
    pub adversary_mode: GameMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Soundness threshold for grading the learner.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub schedule: ScheduleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
    /// Candidate budget for each subspace search.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_budget: Option<usize>,
}

enum LearnerChoice {
    Baseline(BaselineKind),
    ExactSolver,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Applies `BATCHBOUND_SEED` and `BATCHBOUND_OUT` when set.
    pub fn apply_env_overrides(&mut self) -> Result<()> {
        if let Ok(seed) = std::env::var("BATCHBOUND_SEED") {
            self.seed = seed
                .trim()
                .parse()
                .map_err(|_| Error::config("BATCHBOUND_SEED", format!("not an unsigned integer: {seed:?}")))?;
        }
        if let Ok(out) = std::env::var("BATCHBOUND_OUT") {
            self.output_dir = Some(PathBuf::from(out));
        }
        Ok(())
    }

    fn learner_choice(&self) -> Result<LearnerChoice> {
        if self.learner_kind == EXACT_SOLVER {
            return Ok(LearnerChoice::ExactSolver);
        }
        self.learner_kind
            .parse()
            .map(LearnerChoice::Baseline)
            .map_err(|_| Error::config("learner_kind", format!("unknown learner {:?}", self.learner_kind)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::config("d", "must be at least 2"));
        }
        crate::mdp::check_gamma(self.gamma).map_err(|e| Error::config("gamma", e.to_string()))?;
        if self.k == 0 {
            return Err(Error::config("K", "must be at least 1"));
        }
        if self.n_per_round.len() != self.k {
            return Err(Error::config(
                "n_per_round",
                format!("has {} entries but K = {}", self.n_per_round.len(), self.k),
            ));
        }
        if self.n_per_round.contains(&0) {
            return Err(Error::config("n_per_round", "every count must be at least 1"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon", "must be positive"));
        }
        if self.search_budget == Some(0) {
            return Err(Error::config("search_budget", "must be positive"));
        }
        if let LearnerChoice::ExactSolver = self.learner_choice()? {
            if self.problem != Family::Pe {
                return Err(Error::config("learner_kind", "exact_solver solves PE problems only"));
            }
            if self.n_per_round.iter().any(|&n| n != 1) {
                return Err(Error::config("n_per_round", "exact_solver asks one query per round"));
            }
            if self.query_mode != QueryMode::PolicyFree {
                return Err(Error::config("query_mode", "exact_solver uses policy-free queries"));
            }
            if self.k > self.d {
                return Err(Error::config("K", "exact_solver needs at most d rounds"));
            }
        }
        if self.query_mode == QueryMode::PolicyInduced
            && self.problem == Family::Bpi
            && self.adversary_mode != GameMode::FixedInstance
        {
            return Err(Error::config(
                "query_mode",
                "policy-induced queries need public dynamics, which the BPI adversary does not have",
            ));
        }
        match (self.schedule, &self.dims) {
            (ScheduleKind::Custom, None) => return Err(Error::config("dims", "custom schedule needs dims")),
            (ScheduleKind::Custom, Some(dims)) => {
                custom_schedule(self.d, dims).map_err(|e| Error::config("dims", e.to_string()))?;
                if dims.len() != self.k && self.adversary_mode != GameMode::FullyAdaptive {
                    return Err(Error::config("dims", format!("needs K = {} entries", self.k)));
                }
            }
            (_, Some(_)) => return Err(Error::config("dims", "only used with schedule = \"custom\"")),
            _ => {}
        }
        Ok(())
    }

    /// Subspace dimensions for the adversary (or for the fixed instance's chain).
    pub fn dims_schedule(&self) -> Result<DimsSchedule> {
        if self.adversary_mode == GameMode::FullyAdaptive {
            return fully_adaptive_schedule(self.d);
        }
        match self.schedule {
            ScheduleKind::Geometric => geometric_schedule(self.d, self.k),
            ScheduleKind::Theoretical => multi_batch_schedule(self.d, self.k),
            ScheduleKind::Custom => custom_schedule(self.d, self.dims.as_deref().unwrap_or_default()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    LearnerSound,
    /// Graded against a fixed instance and found wrong.
    LearnerUnsound,
    Indistinguishable,
    AdversaryDefeated,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::LearnerSound => "learner_sound",
            Outcome::LearnerUnsound => "learner_unsound",
            Outcome::Indistinguishable => "indistinguishable",
            Outcome::AdversaryDefeated => "adversary_defeated",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub learner: String,
    pub outcome: Outcome,
    pub q_gap: Option<f64>,
    /// PE: largest `|Q − Q̂|` over the probes. BPI: suboptimality of the first action.
    pub max_error: Option<f64>,
    pub n_total: usize,
    pub rounds_played: usize,
    pub schedule: Option<DimsSchedule>,
    pub commitments: Vec<Commitment>,
    pub defeat: Option<Defeat>,
    pub budget_report: Option<BudgetReport>,
    pub timings: Timings,
}

/// Everything a game produces; the report plus the artifacts written next to it.
#[derive(Debug)]
pub struct GameResult {
    pub report: GameReport,
    pub transcript: Transcript,
    pub certificate: Option<CertificateFile>,
}

/// `max |Q − Q̂|` (PE) or the suboptimality (BPI) of `output` on `inst`.
pub fn grade(inst: &HardInstance, output: &LearnerOutput, eps: f64) -> Result<(f64, bool)> {
    match (inst.family(), output) {
        (Family::Pe, LearnerOutput::Linear(theta)) => {
            let theta = DVector::from_column_slice(theta);
            if theta.len() != inst.d() {
                return Err(Error::DimensionMismatch {
                    expected: inst.d(),
                    actual: theta.len(),
                });
            }
            let qhat = |a: &DVector<f64>| a.dot(&theta);
            let s = evaluate_pe_soundness(inst, &qhat, eps, &default_probes(inst))?;
            Ok((s.max_error, s.sound))
        }
        (Family::Pe, LearnerOutput::FirstAction(_)) => {
            Err(Error::Protocol("PE learners must output a linear estimate".into()))
        }
        (Family::Bpi, out) => {
            let a = match out {
                LearnerOutput::FirstAction(a) => DVector::from_column_slice(a),
                LearnerOutput::Linear(theta) => {
                    let t = DVector::from_column_slice(theta);
                    let n = t.norm();
                    if n > 0.0 { t / n } else { t }
                }
            };
            let s = evaluate_bpi_soundness(inst, &a, eps)?;
            Ok((s.suboptimality, s.sound))
        }
    }
}

fn build_learner(cfg: &ExperimentConfig) -> Result<Box<dyn Learner>> {
    Ok(match cfg.learner_choice()? {
        LearnerChoice::ExactSolver => Box::new(ExactSolverLearner::truncated(cfg.d, cfg.gamma, cfg.k)?),
        LearnerChoice::Baseline(kind) => Box::new(
            BaselineLearner::new(kind, cfg.d, cfg.problem, cfg.n_per_round.clone(), cfg.seed)?.with_mode(cfg.query_mode),
        ),
    })
}

/// Plays one game as configured. Files are written only by [`write_game`].
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<GameResult> {
    cfg.validate()?;
    let start = Instant::now();
    let schedule = cfg.dims_schedule()?;
    let mut learner = build_learner(cfg)?;
    let env_seed = cfg.seed.wrapping_add(0x5EED);
    let budget = SearchBudget(cfg.search_budget.unwrap_or(SearchBudget::default().0));

    let (transcript, outcome, q_gap, max_error, commitments, defeat, certificate) = match cfg.adversary_mode {
        GameMode::FixedInstance => {
            let mut rng = ChaCha8Rng::seed_from_u64(env_seed);
            let sign = if rng.random_bool(0.5) { Sign::Plus } else { Sign::Minus };
            let inst = HardInstance::random(cfg.problem, cfg.d, &schedule.dims, sign, cfg.gamma, &mut rng)?;
            let mut env = FixedInstanceEnv::new(inst.clone());
            let run = run_protocol(&mut env, learner.as_mut(), cfg.k, cfg.problem)?;
            let (err, sound) = grade(&inst, &run.output, cfg.epsilon)?;
            let outcome = if sound { Outcome::LearnerSound } else { Outcome::LearnerUnsound };
            (run.transcript, outcome, None, Some(err), Vec::new(), None, None)
        }
        GameMode::MultiBatch | GameMode::FullyAdaptive => {
            let mode = if cfg.adversary_mode == GameMode::MultiBatch {
                AdversaryMode::MultiBatch
            } else {
                AdversaryMode::FullyAdaptive
            };
            let state = AdversaryState::new(cfg.d, cfg.gamma, cfg.problem, mode, schedule.clone(), env_seed)?
                .with_budget(budget);
            let mut env = AdversaryEnv::new(state);
            let run = run_protocol(&mut env, learner.as_mut(), cfg.k, cfg.problem)?;
            let commitments = env.state().commitments().to_vec();
            let defeat = env.defeat().cloned();
            if let Some(cert) = env.certificate() {
                let mut worst: f64 = 0.0;
                for inst in [&cert.instance_plus, &cert.instance_minus] {
                    worst = worst.max(grade(inst, &run.output, cfg.epsilon)?.0);
                }
                let file = cert.to_file();
                (
                    run.transcript,
                    Outcome::Indistinguishable,
                    Some(cert.q_gap),
                    Some(worst),
                    commitments,
                    defeat,
                    Some(file),
                )
            } else {
                let inst = env
                    .conceded_instance()
                    .ok_or_else(|| Error::Invariant("adversary neither certified nor conceded".into()))?;
                let (err, sound) = grade(inst, &run.output, cfg.epsilon)?;
                let outcome = if sound { Outcome::LearnerSound } else { Outcome::AdversaryDefeated };
                (run.transcript, outcome, None, Some(err), commitments, defeat, None)
            }
        }
    };

    let n_total = transcript.n_total();
    let report = GameReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: cfg.clone(),
        learner: learner.name(),
        outcome,
        q_gap,
        max_error,
        n_total,
        rounds_played: transcript.k(),
        schedule: Some(schedule),
        commitments,
        defeat,
        budget_report: budget_report(cfg.d, cfg.k, cfg.gamma, Some(n_total as f64)).ok(),
        timings: Timings {
            total_ms: start.elapsed().as_secs_f64() * 1e3,
        },
    };
    Ok(GameResult {
        report,
        transcript,
        certificate,
    })
}

/// Writes `report.json`, `transcript.jsonl` and, when present, `certificate.json`.
pub fn write_game(dir: &Path, result: &GameResult) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let report = dir.join("report.json");
    fs::write(&report, serde_json::to_string_pretty(&result.report)?)?;
    written.push(report);
    let transcript = dir.join("transcript.jsonl");
    fs::write(&transcript, result.transcript.to_jsonl())?;
    written.push(transcript);
    if let Some(cert) = &result.certificate {
        let path = dir.join("certificate.json");
        fs::write(&path, serde_json::to_string_pretty(cert)?)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub d: Vec<usize>,
    #[serde(rename = "K", alias = "k")]
    pub k: Vec<usize>,
    /// Queries per round for baseline learners; the exact solver always asks one.
    pub n_per_round: usize,
    pub learners: Vec<String>,
    pub adversary_modes: Vec<GameMode>,
    pub gamma: f64,
    pub problem: Family,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_budget: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub schema_version: u32,
    pub d: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub n_per_round: usize,
    pub learner: String,
    pub adversary_mode: String,
    pub outcome: String,
    pub q_gap: Option<f64>,
    pub max_error: Option<f64>,
    pub n_total: usize,
}

impl SweepGrid {
    pub fn cells(&self) -> Vec<ExperimentConfig> {
        let mut out = Vec::new();
        for &d in &self.d {
            for &k in &self.k {
                for learner in &self.learners {
                    for &mode in &self.adversary_modes {
                        let n = if learner == EXACT_SOLVER { 1 } else { self.n_per_round };
                        out.push(ExperimentConfig {
                            d,
                            gamma: self.gamma,
                            k,
                            n_per_round: vec![n; k],
                            problem: self.problem,
                            query_mode: QueryMode::PolicyFree,
                            learner_kind: learner.clone(),
                            adversary_mode: mode,
                            seed: self.seed.wrapping_add(out.len() as u64),
                            output_dir: None,
                            epsilon: 1.0,
                            schedule: ScheduleKind::Geometric,
                            dims: None,
                            search_budget: self.search_budget,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Runs every cell of the grid on up to `jobs` threads; rows come back in grid order.
pub fn cmd_sweep(grid: &SweepGrid, jobs: usize) -> Result<Vec<SweepRow>> {
    let cells = grid.cells();
    if cells.is_empty() {
        return Err(Error::config("grid", "the sweep grid is empty"));
    }
    for c in &cells {
        c.validate()?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(e.to_string()))?;
    let results: Vec<Result<SweepRow>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cfg| {
                let r = cmd_simulate(cfg)?.report;
                Ok(SweepRow {
                    schema_version: CSV_SCHEMA_VERSION,
                    d: cfg.d,
                    k: cfg.k,
                    n_per_round: cfg.n_per_round[0],
                    learner: cfg.learner_kind.clone(),
                    adversary_mode: cfg.adversary_mode.as_str().into(),
                    outcome: r.outcome.as_str().into(),
                    q_gap: r.q_gap,
                    max_error: r.max_error,
                    n_total: r.n_total,
                })
            })
            .collect()
    });
    results.into_iter().collect()
}

pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: std::io::Read>(r: R) -> Result<Vec<SweepRow>> {
    csv::Reader::from_reader(r).deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyTarget {
    Realizability,
    Geometry,
    Packing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyParams {
    pub d: Vec<usize>,
    pub samples: usize,
    pub trials: usize,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for VerifyParams {
    fn default() -> Self {
        VerifyParams {
            d: vec![4],
            samples: 1000,
            trials: 1000,
            gamma: 0.9,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub total: usize,
    pub failures: usize,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub target: VerifyTarget,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
    pub pass: bool,
}

/// Runs a module's property checks with explicit counts and seeds.
pub fn cmd_verify(target: VerifyTarget, params: &VerifyParams) -> Result<VerifySummary> {
    crate::mdp::check_gamma(params.gamma).map_err(|e| Error::config("gamma", e.to_string()))?;
    if params.d.is_empty() || params.d.iter().any(|&d| d < 2) {
        return Err(Error::config("d", "dimensions must be at least 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let checks = match target {
        VerifyTarget::Realizability => verify_realizability_suite(params, &mut rng)?,
        VerifyTarget::Geometry => verify_geometry_suite(params, &mut rng)?,
        VerifyTarget::Packing => verify_packing_suite(params, &mut rng)?,
    };
    let pass = checks.iter().all(|c| c.failures == 0);
    Ok(VerifySummary {
        target,
        seed: params.seed,
        checks,
        pass,
    })
}

fn verify_realizability_suite(p: &VerifyParams, rng: &mut ChaCha8Rng) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for &d in &p.d {
        for family in [Family::Pe, Family::Bpi] {
            for sign in [Sign::Plus, Sign::Minus] {
                let dims = geometric_schedule(d, 2)?.dims;
                let inst = HardInstance::random(family, d, &dims, sign, p.gamma, rng)?;
                let rep = verify_realizability(&inst, p.samples, rng.random())?;
                out.push(CheckResult {
                    name: format!("realizability d={d} {family} sign={sign}"),
                    total: rep.samples,
                    failures: usize::from(!rep.pass),
                    detail: format!("max_residual={:e}", rep.max_residual),
                });
            }
        }
    }
    Ok(out)
}

fn verify_geometry_suite(p: &VerifyParams, rng: &mut ChaCha8Rng) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for &d in &p.d {
        // Chordal distance of two lines against a sweep over the plane they span.
        let mut chordal_fail = 0;
        for _ in 0..p.trials {
            let u = random_unit(d, rng);
            let v = random_unit(d, rng);
            let a = Subspace::line(&u)?;
            let b = Subspace::line(&v)?;
            let fast = crate::geometry::chordal_distance(&a, &b)?;
            // Distance from the unit point u to the line through v.
            let brute = (&u - v.dot(&u) * &v).norm();
            if (fast - brute).abs() > 1e-6 {
                chordal_fail += 1;
            }
        }
        out.push(CheckResult {
            name: format!("chordal distance d={d}"),
            total: p.trials,
            failures: chordal_fail,
            detail: "tolerance 1e-6".into(),
        });

        let mut sector_fail = 0;
        let mut skipped = 0;
        let grid = 2000;
        for _ in 0..p.trials {
            let m = rng.random_range(1..=2.min(d));
            let h = Subspace::random(d, m, rng)?;
            let x = rng.random_range(0.05..=1.0) * random_unit(d, rng);
            let brute = if m == 1 {
                (x.dot(&h.column(0)) / x.norm()).abs()
            } else {
                (0..grid)
                    .map(|i| {
                        let t = i as f64 * std::f64::consts::PI / grid as f64;
                        let u = t.cos() * h.column(0) + t.sin() * h.column(1);
                        (x.dot(&u) / x.norm()).abs()
                    })
                    .fold(0.0f64, f64::max)
            };
            let slack = 1.0 - (std::f64::consts::PI / grid as f64).cos();
            if (brute - p.gamma).abs() <= slack + 1e-12 {
                skipped += 1;
                continue;
            }
            if sector_contains(&h, p.gamma, &x) != (brute > p.gamma) {
                sector_fail += 1;
            }
        }
        out.push(CheckResult {
            name: format!("sector membership d={d}"),
            total: p.trials - skipped,
            failures: sector_fail,
            detail: format!("{skipped} cases within grid resolution of gamma skipped"),
        });
    }
    Ok(out)
}

/// Random lines or planes with pairwise `cos θ₁ < g(γ)`, built by rejection.
pub fn random_verified_packing(d: usize, m: usize, size: usize, gamma: f64, rng: &mut ChaCha8Rng) -> Result<Packing> {
    let g = g_of_gamma(gamma);
    let mut members: Vec<Subspace> = Vec::new();
    let mut attempts = 0;
    while members.len() < size {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::NotFound { dim: m, examined: attempts });
        }
        let cand = Subspace::random(d, m, rng)?;
        let ok = members
            .iter()
            .all(|s| cross_singular_values(s, &cand).map(|c| c[0] < g).unwrap_or(false));
        if ok {
            members.push(cand);
        }
    }
    Packing::new(gamma, members)
}

fn verify_packing_suite(p: &VerifyParams, rng: &mut ChaCha8Rng) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for &d in &p.d {
        let mut fail = 0;
        let mut total = 0;
        for _ in 0..p.trials {
            let m = if d >= 4 && rng.random_bool(0.5) { 2 } else { 1 };
            let n_queries = rng.random_range(1..=3);
            let Ok(packing) = random_verified_packing(d, m, n_queries + 1, p.gamma, rng) else {
                continue;
            };
            let queries: Vec<DVector<f64>> = (0..n_queries)
                .map(|_| rng.random_range(0.05..=1.0) * random_unit(d, rng))
                .collect();
            total += 1;
            match pigeonhole_select(&packing, &queries) {
                Ok(choice) => {
                    if queries.iter().any(|q| sector_contains(&choice.subspace, p.gamma, q)) {
                        fail += 1;
                    }
                }
                Err(_) => fail += 1,
            }
        }
        out.push(CheckResult {
            name: format!("pigeonhole selector d={d}"),
            total,
            failures: fail,
            detail: "every member checked against every query".into(),
        });
    }
    Ok(out)
}

/// Result of the exact solver on a committed PE instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub theta: Vec<f64>,
    pub queries: usize,
    pub max_error: f64,
}

/// `gamma` overrides the discount the solver assumes; by default it uses the instance's.
pub fn solve_instance(inst: &HardInstance, gamma: Option<f64>) -> Result<SolveReport> {
    if inst.family() != Family::Pe {
        return Err(Error::config("env", "the exact solver needs a PE instance"));
    }
    let mut env = FixedInstanceEnv::new(inst.clone());
    let mut learner = ExactSolverLearner::new(inst.d(), gamma.unwrap_or(inst.gamma()))?;
    let run = run_protocol(&mut env, &mut learner, inst.d(), Family::Pe)?;
    let (max_error, _) = grade(inst, &run.output, 1.0)?;
    let theta = match run.output {
        LearnerOutput::Linear(t) => t,
        LearnerOutput::FirstAction(_) => unreachable!("the solver outputs a linear estimate"),
    };
    Ok(SolveReport {
        theta,
        queries: run.transcript.n_total(),
        max_error,
    })
}

/// Used by tests and the CLI to run arbitrary environments without a config.
pub fn play(env: &mut dyn Environment, learner: &mut dyn Learner, k: usize, problem: Family) -> Result<Transcript> {
    Ok(run_protocol(env, learner, k, problem)?.transcript)
}
