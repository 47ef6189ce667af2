//! Learners: the exact `d`-query fully-adaptive PE solver and the baseline
//! batch learners used to drive the adversary.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{gram_schmidt, orthonormal_complement_basis, random_unit, UnitVector};
use crate::mdp::{Family, State, StateAction};
use crate::protocol::{
    FeedbackRecord, InducedQuery, Learner, LearnerOutput, Policy, QueryBatch, QueryMode, Transcript,
};

/// Smallest singular value below which the residual stack counts as dependent.
pub const INDEPENDENCE_TOL: f64 = 1e-9;
/// Largest condition number [`SolverState::solve`] accepts.
pub const MAX_CONDITION: f64 = 1e12;

/// Residuals `v_i = a_i − γ·π(s_i⁺)` and rewards collected so far.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverState {
    d: usize,
    gamma: f64,
    residuals: Vec<DVector<f64>>,
    rewards: Vec<f64>,
}

fn smallest_singular_value(rows: &[DVector<f64>]) -> f64 {
    let d = rows[0].len();
    let m = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    m.singular_values().iter().copied().fold(f64::INFINITY, f64::min)
}

impl SolverState {
    pub fn new(d: usize, gamma: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("d must be at least 1"));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::invalid(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        Ok(SolverState {
            d,
            gamma,
            residuals: Vec::new(),
            rewards: Vec::new(),
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of absorbed queries.
    pub fn k(&self) -> usize {
        self.residuals.len()
    }

    pub fn residuals(&self) -> &[DVector<f64>] {
        &self.residuals
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    /// First column of the orthonormal complement of the residuals (`e₁` when there are none).
    pub fn next_query(&self) -> Result<DVector<f64>> {
        if self.residuals.is_empty() {
            return Ok(UnitVector::basis(self.d, 0).into_inner());
        }
        match orthonormal_complement_basis(&self.residuals, self.d) {
            Ok(c) => Ok(c.column(0)),
            Err(Error::NoComplement(_)) => Err(Error::Invariant(format!(
                "{} residuals already span R^{}",
                self.residuals.len(),
                self.d
            ))),
            Err(e) => Err(e),
        }
    }

    /// Appends `v = a − γ·policy_eval` and `r`, refusing a residual that breaks independence.
    pub fn absorb(&mut self, action: &DVector<f64>, reward: f64, policy_eval: &DVector<f64>) -> Result<()> {
        for v in [action, policy_eval] {
            if v.len() != self.d {
                return Err(Error::DimensionMismatch {
                    expected: self.d,
                    actual: v.len(),
                });
            }
        }
        let v = action - self.gamma * policy_eval;
        let mut rows = self.residuals.clone();
        rows.push(v.clone());
        let sigma_min = if rows.len() > self.d { 0.0 } else { smallest_singular_value(&rows) };
        if !(sigma_min > INDEPENDENCE_TOL) {
            return Err(Error::IndependenceViolated {
                step: rows.len(),
                sigma_min,
            });
        }
        self.residuals.push(v);
        self.rewards.push(reward);
        Ok(())
    }

    pub fn absorb_feedback(&mut self, fb: &FeedbackRecord) -> Result<()> {
        let pe = fb
            .policy_eval
            .as_ref()
            .ok_or_else(|| Error::Protocol("the solver needs policy evaluations in its feedback".into()))?;
        self.absorb(&fb.query.action, fb.reward, pe)
    }

    /// Solves `Vθ = r`. With `k = d` this is the square system; with fewer
    /// residuals it returns the minimum-norm solution.
    pub fn solve(&self) -> Result<DVector<f64>> {
        let k = self.residuals.len();
        if k == 0 {
            return Ok(DVector::zeros(self.d));
        }
        let v = DMatrix::from_fn(k, self.d, |i, j| self.residuals[i][j]);
        let r = DVector::from_column_slice(&self.rewards);
        let svd = v.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        let cond = smax / smin;
        if !(cond <= MAX_CONDITION) {
            return Err(Error::IllConditioned(cond));
        }
        let theta = if k == self.d {
            v.clone()
                .qr()
                .solve(&r)
                .ok_or(Error::IllConditioned(f64::INFINITY))?
        } else {
            svd.solve(&r, 0.0).map_err(|e| Error::Invariant(e.to_string()))?
        };
        let misfit = (&v * &theta - &r).norm();
        if misfit > 1e-9 {
            return Err(Error::Invariant(format!("linear solve left residual {misfit:e}")));
        }
        Ok(theta)
    }
}

/// The fully-adaptive solver: one query per round, each orthogonal to all
/// previous residuals, and a linear solve at the end.
#[derive(Clone, Debug)]
pub struct ExactSolverLearner {
    state: SolverState,
    max_queries: usize,
    absorbed: usize,
}

impl ExactSolverLearner {
    pub fn new(d: usize, gamma: f64) -> Result<Self> {
        Self::truncated(d, gamma, d)
    }

    /// A solver that stops after `max_queries` queries.
    pub fn truncated(d: usize, gamma: f64, max_queries: usize) -> Result<Self> {
        Ok(ExactSolverLearner {
            state: SolverState::new(d, gamma)?,
            max_queries,
            absorbed: 0,
        })
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    fn catch_up(&mut self, history: &Transcript) -> Result<()> {
        let fresh: Vec<&FeedbackRecord> = history.records().skip(self.absorbed).collect();
        for fb in fresh {
            self.state.absorb_feedback(fb)?;
            self.absorbed += 1;
        }
        Ok(())
    }
}

impl Learner for ExactSolverLearner {
    fn name(&self) -> String {
        "exact_solver".into()
    }

    fn select_batch(&mut self, round: usize, history: &Transcript) -> Result<QueryBatch> {
        self.catch_up(history)?;
        if self.state.k() >= self.max_queries {
            return Err(Error::Protocol(format!(
                "solver already used its {} queries",
                self.max_queries
            )));
        }
        let a = self.state.next_query()?;
        Ok(QueryBatch::policy_free(round, vec![StateAction::at_start(a)]))
    }

    fn output(&mut self, history: &Transcript, _target: &Policy) -> Result<LearnerOutput> {
        self.catch_up(history)?;
        Ok(LearnerOutput::Linear(self.state.solve()?.as_slice().to_vec()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    RandomUnit,
    Coordinate,
    GreedyOrthogonal,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [
        BaselineKind::RandomUnit,
        BaselineKind::Coordinate,
        BaselineKind::GreedyOrthogonal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::RandomUnit => "random_unit",
            BaselineKind::Coordinate => "coordinate",
            BaselineKind::GreedyOrthogonal => "greedy_orthogonal",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown baseline learner {s:?}")))
    }
}

/// A non-adaptive-by-design batch learner whose output is always the zero estimate.
#[derive(Clone, Debug)]
pub struct BaselineLearner {
    kind: BaselineKind,
    d: usize,
    family: Family,
    n_per_round: Vec<usize>,
    mode: QueryMode,
    seed: u64,
}

impl BaselineLearner {
    /// `n_per_round[k-1]` queries in round `k`; the last entry repeats for later rounds.
    pub fn new(kind: BaselineKind, d: usize, family: Family, n_per_round: Vec<usize>, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("d must be at least 1"));
        }
        if n_per_round.is_empty() || n_per_round.contains(&0) {
            return Err(Error::invalid("every round needs at least one query"));
        }
        Ok(BaselineLearner {
            kind,
            d,
            family,
            n_per_round,
            mode: QueryMode::PolicyFree,
            seed,
        })
    }

    pub fn with_mode(mut self, mode: QueryMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn kind(&self) -> BaselineKind {
        self.kind
    }

    fn n_k(&self, round: usize) -> usize {
        *self
            .n_per_round
            .get(round - 1)
            .unwrap_or_else(|| self.n_per_round.last().expect("nonempty"))
    }

    fn rng(&self, round: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ (round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    fn coordinate(&self, round: usize, n: usize) -> Vec<DVector<f64>> {
        (0..n)
            .map(|i| UnitVector::basis(self.d, ((round - 1) * n + i) % self.d).into_inner())
            .collect()
    }

    /// The span of the previous round's revealed vectors.
    fn revealed_basis(&self, history: &Transcript) -> Vec<DVector<f64>> {
        let Some(last) = history.last_round() else {
            return Vec::new();
        };
        let revealed: Vec<DVector<f64>> = last
            .records
            .iter()
            .map(|r| match self.family {
                Family::Pe => r.policy_eval.clone().unwrap_or_else(|| r.successor.clone()),
                Family::Bpi => r.successor.clone(),
            })
            .collect();
        gram_schmidt(&[], &revealed)
    }

    pub fn actions(&self, round: usize, history: &Transcript) -> Vec<DVector<f64>> {
        let n = self.n_k(round);
        let mut rng = self.rng(round);
        match self.kind {
            BaselineKind::RandomUnit => (0..n).map(|_| random_unit(self.d, &mut rng)).collect(),
            BaselineKind::Coordinate => self.coordinate(round, n),
            BaselineKind::GreedyOrthogonal if round == 1 => self.coordinate(round, n),
            BaselineKind::GreedyOrthogonal => {
                let basis = self.revealed_basis(history);
                if basis.is_empty() {
                    return (0..n).map(|_| random_unit(self.d, &mut rng)).collect();
                }
                let span = DMatrix::from_columns(&basis);
                (0..n)
                    .map(|i| match basis.get(i) {
                        Some(b) => b.clone(),
                        None => &span * random_unit(basis.len(), &mut rng),
                    })
                    .collect()
            }
        }
    }
}

impl Learner for BaselineLearner {
    fn name(&self) -> String {
        self.kind.to_string()
    }

    fn select_batch(&mut self, round: usize, history: &Transcript) -> Result<QueryBatch> {
        let actions = self.actions(round, history);
        Ok(match self.mode {
            QueryMode::PolicyFree => QueryBatch::policy_free(round, actions.into_iter().map(StateAction::at_start).collect()),
            QueryMode::PolicyInduced => QueryBatch::policy_induced(
                round,
                actions
                    .into_iter()
                    .map(|a| {
                        // Play `a` at the start and keep playing the current state afterwards.
                        let policy: Policy = Arc::new(move |s: &State| match s {
                            State::Start => a.clone(),
                            State::Point(p) => p.clone(),
                        });
                        InducedQuery {
                            start: State::Start,
                            policy,
                            steps: 2,
                        }
                    })
                    .collect(),
            ),
        })
    }

    fn output(&mut self, _history: &Transcript, _target: &Policy) -> Result<LearnerOutput> {
        let zero = vec![0.0; self.d];
        Ok(match self.family {
            Family::Pe => LearnerOutput::Linear(zero),
            Family::Bpi => LearnerOutput::FirstAction(zero),
        })
    }
}
