//! The multi-batch query protocol: batches, feedback records, transcripts,
//! policy-induced expansion and soundness grading.

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BALL_TOL;
use crate::mdp::{Family, HardInstance, State, StateAction};

/// A deterministic state → action map.
pub type Policy = Arc<dyn Fn(&State) -> DVector<f64> + Send + Sync>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    #[default]
    PolicyFree,
    PolicyInduced,
}

/// `(s₀, π, c)`: every state-action pair visited in the first `c` steps of `π` from `s₀`.
#[derive(Clone)]
pub struct InducedQuery {
    pub start: State,
    pub policy: Policy,
    pub steps: usize,
}

impl fmt::Debug for InducedQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InducedQuery")
            .field("start", &self.start)
            .field("steps", &self.steps)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Debug)]
pub enum BatchQueries {
    PolicyFree(Vec<StateAction>),
    PolicyInduced(Vec<InducedQuery>),
}

impl BatchQueries {
    pub fn len(&self) -> usize {
        match self {
            BatchQueries::PolicyFree(q) => q.len(),
            BatchQueries::PolicyInduced(q) => q.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug)]
pub struct QueryBatch {
    pub round: usize,
    pub queries: BatchQueries,
}

impl QueryBatch {
    pub fn policy_free(round: usize, queries: Vec<StateAction>) -> Self {
        QueryBatch {
            round,
            queries: BatchQueries::PolicyFree(queries),
        }
    }

    pub fn policy_induced(round: usize, queries: Vec<InducedQuery>) -> Self {
        QueryBatch {
            round,
            queries: BatchQueries::PolicyInduced(queries),
        }
    }
}

/// The environment's answer to one state-action query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RecordRepr", into = "RecordRepr")]
pub struct FeedbackRecord {
    pub round: usize,
    pub query: StateAction,
    pub reward: f64,
    /// Support of the transition; a single point because every in-scope MDP is deterministic.
    pub successor: DVector<f64>,
    pub deterministic: bool,
    /// The target policy's action at the successor (PE problems only).
    pub policy_eval: Option<DVector<f64>>,
}

fn is_true(b: &bool) -> bool {
    *b
}

fn yes() -> bool {
    true
}

#[derive(Serialize, Deserialize)]
struct RecordRepr {
    round: usize,
    s: Option<Vec<f64>>,
    a: Vec<f64>,
    r: f64,
    s_next: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pi_eval: Option<Vec<f64>>,
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    deterministic: bool,
}

impl TryFrom<RecordRepr> for FeedbackRecord {
    type Error = Error;
    fn try_from(r: RecordRepr) -> Result<Self> {
        let d = r.a.len();
        let check = |v: &Vec<f64>| {
            if v.len() == d {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    expected: d,
                    actual: v.len(),
                })
            }
        };
        if let Some(s) = &r.s {
            check(s)?;
        }
        check(&r.s_next)?;
        if let Some(p) = &r.pi_eval {
            check(p)?;
        }
        Ok(FeedbackRecord {
            round: r.round,
            query: StateAction::new(
                r.s.map_or(State::Start, |s| State::Point(DVector::from_vec(s))),
                DVector::from_vec(r.a),
            ),
            reward: r.r,
            successor: DVector::from_vec(r.s_next),
            deterministic: r.deterministic,
            policy_eval: r.pi_eval.map(DVector::from_vec),
        })
    }
}

impl From<FeedbackRecord> for RecordRepr {
    fn from(f: FeedbackRecord) -> Self {
        RecordRepr {
            round: f.round,
            s: f.query.state.point().map(|p| p.as_slice().to_vec()),
            a: f.query.action.as_slice().to_vec(),
            r: f.reward,
            s_next: f.successor.as_slice().to_vec(),
            pi_eval: f.policy_eval.map(|p| p.as_slice().to_vec()),
            deterministic: f.deterministic,
        }
    }
}

impl FeedbackRecord {
    /// One JSON line, the unit of transcript comparison.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecords {
    pub round: usize,
    pub records: Vec<FeedbackRecord>,
}

/// All feedback received so far, grouped by round.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Transcript {
    rounds: Vec<RoundRecords>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_round(&mut self, round: usize, records: Vec<FeedbackRecord>) -> Result<()> {
        if round != self.rounds.len() + 1 {
            return Err(Error::Protocol(format!(
                "round {round} follows round {}",
                self.rounds.len()
            )));
        }
        if let Some(bad) = records.iter().find(|r| r.round != round) {
            return Err(Error::Protocol(format!(
                "record tagged round {} filed under round {round}",
                bad.round
            )));
        }
        self.rounds.push(RoundRecords { round, records });
        Ok(())
    }

    pub fn rounds(&self) -> &[RoundRecords] {
        &self.rounds
    }

    /// Number of rounds `K` played so far.
    pub fn k(&self) -> usize {
        self.rounds.len()
    }

    pub fn n_total(&self) -> usize {
        self.rounds.iter().map(|r| r.records.len()).sum()
    }

    pub fn records(&self) -> impl Iterator<Item = &FeedbackRecord> {
        self.rounds.iter().flat_map(|r| r.records.iter())
    }

    pub fn last_round(&self) -> Option<&RoundRecords> {
        self.rounds.last()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in self.records() {
            out.push_str(&r.to_json_line());
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut t = Transcript::new();
        let mut pending: Vec<FeedbackRecord> = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FeedbackRecord = serde_json::from_str(&line)?;
            if let Some(prev) = pending.last() {
                if prev.round != rec.round {
                    let round = prev.round;
                    t.push_round(round, std::mem::take(&mut pending))?;
                }
            }
            pending.push(rec);
        }
        if let Some(round) = pending.last().map(|r| r.round) {
            t.push_round(round, pending)?;
        }
        Ok(t)
    }

    pub fn from_jsonl(s: &str) -> Result<Self> {
        Self::read_jsonl(s.as_bytes())
    }
}

/// Something that answers queries: a fixed instance or a lazily committing adversary.
pub trait Environment {
    fn family(&self) -> Family;
    fn dim(&self) -> usize;
    fn gamma(&self) -> f64;

    /// Answers one round of policy-free queries.
    fn respond(&mut self, round: usize, queries: &[StateAction]) -> Result<Vec<FeedbackRecord>>;

    /// Successor under dynamics known to the learner, if the class has shared dynamics.
    fn public_successor(&self, sa: &StateAction) -> Option<DVector<f64>>;

    /// Answers policy-induced queries. The default expands them with the
    /// public dynamics and answers the resulting pairs as one batch.
    fn respond_induced(&mut self, round: usize, queries: &[InducedQuery]) -> Result<Vec<FeedbackRecord>> {
        let expanded = expand_policy_induced(|sa| self.public_successor(sa), queries)?;
        self.respond(round, &expanded)
    }

    /// Hands the target policy to the learner once all rounds are over.
    fn reveal_target_policy(&mut self) -> Result<Policy>;
}

/// Unrolls each `(s₀, π, c)` for `c` steps and returns the visited pairs,
/// deduplicated by exact equality and kept in first-visit order.
pub fn expand_policy_induced<F>(mut successor: F, queries: &[InducedQuery]) -> Result<Vec<StateAction>>
where
    F: FnMut(&StateAction) -> Option<DVector<f64>>,
{
    let mut out: Vec<StateAction> = Vec::new();
    for q in queries {
        if q.steps == 0 {
            return Err(Error::invalid("policy-induced queries need c >= 1"));
        }
        let mut state = q.start.clone();
        for step in 0..q.steps {
            let sa = StateAction::new(state.clone(), (q.policy)(&state));
            let next = if step + 1 < q.steps {
                Some(successor(&sa).ok_or_else(|| {
                    Error::Protocol("dynamics are not public; cannot expand policy-induced queries".into())
                })?)
            } else {
                None
            };
            if !out.contains(&sa) {
                out.push(sa);
            }
            match next {
                Some(n) => state = State::Point(n),
                None => break,
            }
        }
    }
    Ok(out)
}

/// Environment backed by a committed instance.
#[derive(Clone, Debug)]
pub struct FixedInstanceEnv {
    inst: HardInstance,
}

impl FixedInstanceEnv {
    pub fn new(inst: HardInstance) -> Self {
        FixedInstanceEnv { inst }
    }

    pub fn instance(&self) -> &HardInstance {
        &self.inst
    }
}

/// Feedback for one query against a committed instance.
pub fn instance_feedback(inst: &HardInstance, round: usize, sa: &StateAction) -> Result<FeedbackRecord> {
    let reward = inst.reward(sa)?;
    let successor = inst.successor(sa)?;
    let policy_eval = match inst.family() {
        Family::Pe => Some(inst.target_policy(&State::Point(successor.clone()))),
        Family::Bpi => None,
    };
    Ok(FeedbackRecord {
        round,
        query: sa.clone(),
        reward,
        successor,
        deterministic: true,
        policy_eval,
    })
}

impl Environment for FixedInstanceEnv {
    fn family(&self) -> Family {
        self.inst.family()
    }

    fn dim(&self) -> usize {
        self.inst.d()
    }

    fn gamma(&self) -> f64 {
        self.inst.gamma()
    }

    fn respond(&mut self, round: usize, queries: &[StateAction]) -> Result<Vec<FeedbackRecord>> {
        queries.iter().map(|sa| instance_feedback(&self.inst, round, sa)).collect()
    }

    fn public_successor(&self, sa: &StateAction) -> Option<DVector<f64>> {
        match self.inst.family() {
            Family::Pe => Some(sa.action.clone()),
            Family::Bpi => None,
        }
    }

    /// Rolls each trajectory forward with the instance's own transitions.
    fn respond_induced(&mut self, round: usize, queries: &[InducedQuery]) -> Result<Vec<FeedbackRecord>> {
        let mut out: Vec<FeedbackRecord> = Vec::new();
        for q in queries {
            if q.steps == 0 {
                return Err(Error::invalid("policy-induced queries need c >= 1"));
            }
            let mut state = q.start.clone();
            for _ in 0..q.steps {
                let sa = match (self.inst.family(), &state) {
                    (Family::Bpi, State::Point(p)) => StateAction::new(state.clone(), p.clone()),
                    _ => StateAction::new(state.clone(), (q.policy)(&state)),
                };
                let rec = instance_feedback(&self.inst, round, &sa)?;
                state = State::Point(rec.successor.clone());
                if !out.iter().any(|r| r.query == rec.query) {
                    out.push(rec);
                }
            }
        }
        Ok(out)
    }

    fn reveal_target_policy(&mut self) -> Result<Policy> {
        let inst = self.inst.clone();
        Ok(Arc::new(move |s: &State| inst.target_policy(s)))
    }
}

/// What a learner reports at the end of the game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerOutput {
    /// `Q̂(s̄, a) = aᵀθ̂`.
    Linear(Vec<f64>),
    /// The action `π̂(s̄)`; every other state has a single action.
    FirstAction(Vec<f64>),
}

pub trait Learner {
    fn name(&self) -> String;

    /// Chooses the round-`round` batch from everything observed so far.
    fn select_batch(&mut self, round: usize, history: &Transcript) -> Result<QueryBatch>;

    fn output(&mut self, history: &Transcript, target: &Policy) -> Result<LearnerOutput>;
}

pub struct ProtocolRun {
    pub transcript: Transcript,
    pub output: LearnerOutput,
    pub target: Policy,
}

impl fmt::Debug for ProtocolRun {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProtocolRun")
            .field("transcript", &self.transcript)
            .field("output", &self.output)
            .finish_non_exhaustive()
    }
}

fn check_queries(env: &dyn Environment, queries: &[StateAction]) -> Result<()> {
    for sa in queries {
        if sa.action.len() != env.dim() {
            return Err(Error::DimensionMismatch {
                expected: env.dim(),
                actual: sa.action.len(),
            });
        }
        if !(sa.action.norm() <= 1.0 + BALL_TOL) {
            return Err(Error::Protocol(format!(
                "query action has norm {} outside the unit ball",
                sa.action.norm()
            )));
        }
    }
    Ok(())
}

/// Plays `k` rounds between `learner` and `env`, then reveals the target
/// policy and collects the learner's output.
pub fn run_protocol(
    env: &mut dyn Environment,
    learner: &mut dyn Learner,
    k: usize,
    problem: Family,
) -> Result<ProtocolRun> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if env.family() != problem {
        return Err(Error::Protocol(format!(
            "{problem} problem played on a {} environment",
            env.family()
        )));
    }
    let mut transcript = Transcript::new();
    for round in 1..=k {
        let batch = learner.select_batch(round, &transcript)?;
        if batch.round != round {
            return Err(Error::Protocol(format!(
                "learner labelled its round-{round} batch as round {}",
                batch.round
            )));
        }
        if batch.queries.is_empty() {
            return Err(Error::Protocol(format!("learner emitted an empty batch in round {round}")));
        }
        let records = match &batch.queries {
            BatchQueries::PolicyFree(q) => {
                check_queries(env, q)?;
                env.respond(round, q)?
            }
            BatchQueries::PolicyInduced(q) => env.respond_induced(round, q)?,
        };
        transcript.push_round(round, records)?;
    }
    let target = env.reveal_target_policy()?;
    let output = learner.output(&transcript, &target)?;
    Ok(ProtocolRun {
        transcript,
        output,
        target,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeSoundness {
    pub max_error: f64,
    pub sound: bool,
}

/// `max_a |Q(s̄,a) − Q̂(a)|` over the probe actions; sound iff below `eps`.
pub fn evaluate_pe_soundness(
    inst: &HardInstance,
    qhat: &dyn Fn(&DVector<f64>) -> f64,
    eps: f64,
    probes: &[DVector<f64>],
) -> Result<PeSoundness> {
    if probes.is_empty() {
        return Err(Error::invalid("at least one probe action is required"));
    }
    let mut max_error: f64 = 0.0;
    for a in probes {
        let q = inst.true_q(&StateAction::at_start(a.clone()))?;
        max_error = max_error.max((q - qhat(a)).abs());
    }
    Ok(PeSoundness {
        max_error,
        sound: max_error < eps,
    })
}

/// Probe set used when grading against a known instance: `±w` plus the coordinate axes.
pub fn default_probes(inst: &HardInstance) -> Vec<DVector<f64>> {
    let d = inst.d();
    let mut probes = vec![inst.w().clone(), -inst.w()];
    probes.extend((0..d).map(|i| DVector::from_fn(d, |j, _| if i == j { 1.0 } else { 0.0 })));
    probes
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BpiSoundness {
    pub suboptimality: f64,
    pub sound: bool,
}

/// `V*(s̄) − V^π̂(s̄) = 1 − sign·aᵀw` for first action `a`; sound iff below `eps`.
pub fn evaluate_bpi_soundness(inst: &HardInstance, first_action: &DVector<f64>, eps: f64) -> Result<BpiSoundness> {
    let q = inst.true_q(&StateAction::at_start(first_action.clone()))?;
    let suboptimality = 1.0 - q;
    Ok(BpiSoundness {
        suboptimality,
        sound: suboptimality < eps,
    })
}

/// True iff the transcript used at most `alpha·d^T` queries.
pub fn sample_efficiency_check(t: &Transcript, d: usize, alpha: f64, big_t: u32) -> bool {
    is_sample_efficient(t.n_total(), d, alpha, big_t)
}

pub fn is_sample_efficient(n_total: usize, d: usize, alpha: f64, big_t: u32) -> bool {
    n_total as f64 <= alpha * (d as f64).powi(big_t as i32)
}
