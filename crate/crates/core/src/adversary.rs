//! The lazily committing adversary: each round it commits a subspace that
//! evades every query so far, answers from the committed prefix only, and at
//! the end picks `w` and exhibits the two sign-flipped instances.

use std::sync::Arc;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{restrict_and_lift, sector_contains, snap_unit, Subspace, UnitVector, BALL_TOL};
use crate::mdp::{Family, HardInstance, NestedChain, Sign, State, StateAction};
use crate::packing::{find_evading_subspace, Packing, SearchBudget, SearchRoute};
use crate::protocol::{
    evaluate_bpi_soundness, instance_feedback, Environment, FeedbackRecord, Policy, Transcript,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryMode {
    MultiBatch,
    FullyAdaptive,
}

/// Target dimensions of `B_1, …, B_K`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimsSchedule {
    pub dims: Vec<usize>,
    /// Set when the formula had to be clamped or stopped decreasing.
    pub clamped: bool,
}

/// `[d−1, d−2, …, 1]`: after query `k` the adversary keeps a `(d−k)`-dimensional complement.
pub fn fully_adaptive_schedule(d: usize) -> Result<DimsSchedule> {
    if d < 2 {
        return Err(Error::invalid(format!("fully adaptive play needs d >= 2, got {d}")));
    }
    Ok(DimsSchedule {
        dims: (1..d).rev().collect(),
        clamped: false,
    })
}

fn log2_floor(d: usize) -> u32 {
    usize::BITS - 1 - d.leading_zeros()
}

/// `dim B_k = 2^{⌈N/4^k⌉}` with `2^N ≤ d < 2^{N+1}`.
///
/// The exponent never drops below 1, so for large `K` the schedule stalls at
/// 2; that stall is reported through `clamped`.
pub fn multi_batch_schedule(d: usize, k: usize) -> Result<DimsSchedule> {
    if d < 2 || k == 0 {
        return Err(Error::invalid(format!("need d >= 2 and K >= 1, got d={d}, K={k}")));
    }
    let n = log2_floor(d) as u64;
    let mut dims = Vec::with_capacity(k);
    let mut clamped = false;
    for round in 1..=k {
        let denom = 4u64.checked_pow(round as u32);
        let exp = denom.map_or(1, |den| n.div_ceil(den).max(1));
        let dim = (1usize << exp).min(d);
        if dims.last().is_some_and(|&prev| dim >= prev) {
            clamped = true;
        }
        dims.push(dim);
    }
    Ok(DimsSchedule { dims, clamped })
}

/// `dims[k] = max(1, ⌊d/2^k⌋)`, the desk-scale default.
pub fn geometric_schedule(d: usize, k: usize) -> Result<DimsSchedule> {
    if d < 2 || k == 0 {
        return Err(Error::invalid(format!("need d >= 2 and K >= 1, got d={d}, K={k}")));
    }
    let mut clamped = false;
    let dims = (1..=k)
        .map(|round| {
            let raw = if round >= usize::BITS as usize { 0 } else { d >> round };
            if raw == 0 {
                clamped = true;
            }
            raw.max(1)
        })
        .collect();
    Ok(DimsSchedule { dims, clamped })
}

/// A user-supplied schedule; must strictly decrease and stay within `1..=d`.
pub fn custom_schedule(d: usize, dims: &[usize]) -> Result<DimsSchedule> {
    if dims.is_empty() {
        return Err(Error::invalid("schedule must have at least one round"));
    }
    if dims.iter().any(|&m| m == 0 || m > d) {
        return Err(Error::invalid(format!("schedule dims must lie in 1..={d}, got {dims:?}")));
    }
    if dims.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid(format!("schedule dims must strictly decrease, got {dims:?}")));
    }
    Ok(DimsSchedule {
        dims: dims.to_vec(),
        clamped: false,
    })
}

/// How one round's subspace was obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Commitment {
    pub round: usize,
    pub dim: usize,
    pub route: SearchRoute,
    pub examined: usize,
    pub max_cosine: f64,
}

#[derive(Clone, Debug)]
pub struct AdversaryState {
    d: usize,
    gamma: f64,
    family: Family,
    mode: AdversaryMode,
    schedule: Vec<usize>,
    chain: NestedChain,
    history: Transcript,
    budget: SearchBudget,
    rng: ChaCha8Rng,
    seed: u64,
    packing: Option<Packing>,
    commitments: Vec<Commitment>,
}

impl AdversaryState {
    pub fn new(
        d: usize,
        gamma: f64,
        family: Family,
        mode: AdversaryMode,
        schedule: DimsSchedule,
        seed: u64,
    ) -> Result<Self> {
        crate::mdp::check_gamma(gamma)?;
        if schedule.dims.is_empty() || schedule.dims.iter().any(|&m| m == 0 || m > d) {
            return Err(Error::invalid(format!("bad schedule {:?} for d={d}", schedule.dims)));
        }
        Ok(AdversaryState {
            d,
            gamma,
            family,
            mode,
            schedule: schedule.dims,
            chain: NestedChain::new(d),
            history: Transcript::new(),
            budget: SearchBudget::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            packing: None,
            commitments: Vec::new(),
        })
    }

    pub fn with_budget(mut self, budget: SearchBudget) -> Self {
        self.budget = budget;
        self
    }

    /// A packing consulted by the pigeonhole layer when its shape matches a round.
    pub fn with_packing(mut self, packing: Packing) -> Self {
        self.packing = Some(packing);
        self
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn mode(&self) -> AdversaryMode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn schedule(&self) -> &[usize] {
        &self.schedule
    }

    pub fn chain(&self) -> &NestedChain {
        &self.chain
    }

    pub fn history(&self) -> &Transcript {
        &self.history
    }

    pub fn commitments(&self) -> &[Commitment] {
        &self.commitments
    }

    pub fn committed_upto(&self) -> usize {
        self.chain.committed_upto()
    }

    fn queried_actions(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.history.records().map(|r| &r.query.action)
    }

    fn check_query(&self, sa: &StateAction) -> Result<()> {
        if sa.action.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                actual: sa.action.len(),
            });
        }
        if !(sa.action.norm() <= 1.0 + BALL_TOL) {
            return Err(Error::Protocol(format!("query norm {} outside the ball", sa.action.norm())));
        }
        if let (Family::Bpi, State::Point(s)) = (self.family, &sa.state) {
            if s != &sa.action {
                return Err(Error::Protocol("BPI non-start states have the single action a = s".into()));
            }
        }
        Ok(())
    }

    /// Feedback computable from `B_1..B_k` alone, for an action outside sector(B_k).
    fn committed_feedback(&self, round: usize, sa: &StateAction) -> FeedbackRecord {
        let subspaces = self.chain.subspaces();
        let shell = subspaces
            .iter()
            .rposition(|b| sector_contains(b, self.gamma, &sa.action))
            .map_or(0, |i| i + 1);
        let mapped = subspaces[shell].project(&sa.action).expect("dimension checked") / self.gamma;
        let (successor, policy_eval) = match self.family {
            Family::Pe => (sa.action.clone(), Some(mapped)),
            Family::Bpi => (mapped, None),
        };
        FeedbackRecord {
            round,
            query: sa.clone(),
            reward: 0.0,
            successor,
            deterministic: true,
            policy_eval,
        }
    }

    /// Commits `B_round` evading the new queries and answers them.
    pub fn respond_batch(&mut self, round: usize, queries: &[StateAction]) -> Result<Vec<FeedbackRecord>> {
        if round != self.committed_upto() + 1 {
            return Err(Error::Protocol(format!(
                "adversary expected round {}, got {round}",
                self.committed_upto() + 1
            )));
        }
        for sa in queries {
            self.check_query(sa)?;
        }
        let defeated = || Error::AdversaryDefeated {
            round,
            queries: queries.iter().map(|q| q.action.as_slice().to_vec()).collect(),
        };
        let outer = self.chain.innermost();
        let Some(&target) = self.schedule.get(round - 1) else {
            return Err(defeated());
        };
        let m = target.min(outer.dim());
        let points: Vec<DVector<f64>> = queries.iter().map(|q| q.action.clone()).collect();
        let budget = self.budget;
        let gamma = self.gamma;
        let packing = self.packing.as_ref();
        let rng = &mut self.rng;
        let mut found = None;
        let lifted = restrict_and_lift(&outer, &points, |inner| {
            let r = find_evading_subspace(inner, outer.dim(), m, gamma, budget, rng, packing)?;
            let h = r.subspace.clone();
            found = Some(r);
            Ok(h)
        });
        let next = match lifted {
            Ok(h) => h,
            Err(Error::NotFound { .. }) => return Err(defeated()),
            Err(e) => return Err(e),
        };
        let found = found.expect("search ran");
        for a in points.iter().chain(self.queried_actions()) {
            if sector_contains(&next, gamma, a) {
                return Err(Error::Invariant(format!("round {round}: a queried action lies in sector(B_{round})")));
            }
        }
        self.chain.push(next)?;
        self.commitments.push(Commitment {
            round,
            dim: m,
            route: found.route,
            examined: found.examined,
            max_cosine: found.max_cosine,
        });
        let records: Vec<FeedbackRecord> = queries.iter().map(|sa| self.committed_feedback(round, sa)).collect();
        self.history.push_round(round, records.clone())?;
        Ok(records)
    }

    /// Picks `w` as the first basis column of `B_K` and certifies that both
    /// signs reproduce the transcript.
    pub fn finalize(&self) -> Result<IndistinguishabilityCertificate> {
        let k = self.committed_upto();
        if k == 0 {
            return Err(Error::Protocol("cannot finalize before any round is committed".into()));
        }
        let innermost = self.chain.innermost();
        for a in self.queried_actions() {
            if sector_contains(&innermost, self.gamma, a) {
                return Err(Error::ConsistencyBreach(format!("a queried action lies in sector(B_{k})")));
            }
        }
        let w = UnitVector::new(snap_unit(&innermost.column(0)).ok_or(Error::ZeroVector)?)?;
        let mut chain = self.chain.clone();
        chain.close(w.clone())?;
        let plus = HardInstance::new(self.family, self.gamma, Sign::Plus, chain)?;
        let minus = plus.flipped();
        for inst in [&plus, &minus] {
            for rec in self.history.records() {
                let replay = instance_feedback(inst, rec.round, &rec.query)?;
                if replay != *rec || replay.to_json_line() != rec.to_json_line() {
                    return Err(Error::ConsistencyBreach(format!(
                        "round {} record for action {:?} differs under sign {}",
                        rec.round,
                        rec.query.action.as_slice(),
                        inst.sign()
                    )));
                }
            }
        }
        let replay_match = replay_transcript(&plus, &self.history)? == replay_transcript(&minus, &self.history)?;
        if !replay_match {
            return Err(Error::ConsistencyBreach("transcripts differ between signs".into()));
        }
        let at_w = StateAction::at_start(w.coords().clone());
        let q_gap = (plus.true_q(&at_w)? - minus.true_q(&at_w)?).abs();
        let v_gap = match self.family {
            Family::Bpi => Some(
                evaluate_bpi_soundness(&minus, w.coords(), 1.0)?.suboptimality
                    - evaluate_bpi_soundness(&plus, w.coords(), 1.0)?.suboptimality,
            ),
            Family::Pe => None,
        };
        Ok(IndistinguishabilityCertificate {
            instance_plus: plus,
            instance_minus: minus,
            transcript: self.history.clone(),
            q_gap,
            v_gap,
            replay_match,
            commitments: self.commitments.clone(),
        })
    }

    /// A committed instance consistent with every answer given so far, used
    /// when the adversary gives up: `w` is the first column of the innermost
    /// subspace and the sign is `+`.
    pub fn concede(&self) -> Result<HardInstance> {
        let mut chain = self.chain.clone();
        if chain.committed_upto() == 0 {
            chain.push(Subspace::full(self.d))?;
        }
        let w = UnitVector::new(snap_unit(&chain.innermost().column(0)).ok_or(Error::ZeroVector)?)?;
        chain.close(w)?;
        HardInstance::new(self.family, self.gamma, Sign::Plus, chain)
    }
}

/// Feedback a committed instance gives to every query of `t`, as JSON lines.
pub fn replay_transcript(inst: &HardInstance, t: &Transcript) -> Result<String> {
    let mut out = String::new();
    for rec in t.records() {
        out.push_str(&instance_feedback(inst, rec.round, &rec.query)?.to_json_line());
        out.push('\n');
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndistinguishabilityCertificate {
    pub instance_plus: HardInstance,
    pub instance_minus: HardInstance,
    pub transcript: Transcript,
    pub q_gap: f64,
    /// BPI only: difference in suboptimality of the first action `w` between the two signs.
    pub v_gap: Option<f64>,
    pub replay_match: bool,
    pub commitments: Vec<Commitment>,
}

/// The on-disk certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateFile {
    pub q_gap: f64,
    pub replay_match: bool,
    pub w: Vec<f64>,
    pub sign_pair: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_gap: Option<f64>,
    pub instance_plus: HardInstance,
    pub commitments: Vec<Commitment>,
}

impl IndistinguishabilityCertificate {
    pub fn w(&self) -> &DVector<f64> {
        self.instance_plus.w()
    }

    pub fn to_file(&self) -> CertificateFile {
        CertificateFile {
            q_gap: self.q_gap,
            replay_match: self.replay_match,
            w: self.w().as_slice().to_vec(),
            sign_pair: self.instance_minus == self.instance_plus.flipped(),
            v_gap: self.v_gap,
            instance_plus: self.instance_plus.clone(),
            commitments: self.commitments.clone(),
        }
    }
}

/// Environment wrapper around [`AdversaryState`]. When the search fails it
/// records the defeat, commits to [`AdversaryState::concede`] and answers
/// truthfully from then on.
#[derive(Clone, Debug)]
pub struct AdversaryEnv {
    state: AdversaryState,
    conceded: Option<HardInstance>,
    defeat: Option<Defeat>,
    certificate: Option<IndistinguishabilityCertificate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Defeat {
    pub round: usize,
    pub queries: usize,
}

impl AdversaryEnv {
    pub fn new(state: AdversaryState) -> Self {
        AdversaryEnv {
            state,
            conceded: None,
            defeat: None,
            certificate: None,
        }
    }

    pub fn state(&self) -> &AdversaryState {
        &self.state
    }

    pub fn defeat(&self) -> Option<&Defeat> {
        self.defeat.as_ref()
    }

    pub fn conceded_instance(&self) -> Option<&HardInstance> {
        self.conceded.as_ref()
    }

    pub fn certificate(&self) -> Option<&IndistinguishabilityCertificate> {
        self.certificate.as_ref()
    }
}

impl Environment for AdversaryEnv {
    fn family(&self) -> Family {
        self.state.family
    }

    fn dim(&self) -> usize {
        self.state.d
    }

    fn gamma(&self) -> f64 {
        self.state.gamma
    }

    fn respond(&mut self, round: usize, queries: &[StateAction]) -> Result<Vec<FeedbackRecord>> {
        if let Some(inst) = &self.conceded {
            return queries.iter().map(|sa| instance_feedback(inst, round, sa)).collect();
        }
        match self.state.respond_batch(round, queries) {
            Err(Error::AdversaryDefeated { round, queries: q }) => {
                self.defeat = Some(Defeat {
                    round,
                    queries: q.len(),
                });
                let inst = self.state.concede()?;
                let records = queries
                    .iter()
                    .map(|sa| instance_feedback(&inst, round, sa))
                    .collect();
                self.conceded = Some(inst);
                records
            }
            other => other,
        }
    }

    fn public_successor(&self, sa: &StateAction) -> Option<DVector<f64>> {
        match self.state.family {
            Family::Pe => Some(sa.action.clone()),
            Family::Bpi => None,
        }
    }

    fn reveal_target_policy(&mut self) -> Result<Policy> {
        let inst = match &self.conceded {
            Some(inst) => inst.clone(),
            None => {
                let cert = self.state.finalize()?;
                let inst = cert.instance_plus.clone();
                self.certificate = Some(cert);
                inst
            }
        };
        Ok(Arc::new(move |s: &State| inst.target_policy(s)))
    }
}
