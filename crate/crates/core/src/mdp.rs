//! The two hard MDP families: rewards, deterministic transitions, target
//! policies, closed-form action values and a realizability checker.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    cap_contains, gram_schmidt, random_unit, sector_contains, Subspace, UnitVector, BALL_TOL, ORTHO_TOL,
};
use crate::packing::GAMMA_MIN;

/// Tolerance on the Bellman residual accepted by [`verify_realizability`].
pub const REALIZABILITY_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    /// Shared dynamics `s⁺(a) = a`; the target policy carries the nested chain.
    #[serde(rename = "PE")]
    Pe,
    /// Single-action states; the transition function carries the nested chain.
    #[serde(rename = "BPI")]
    Bpi,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Pe => "PE",
            Family::Bpi => "BPI",
        })
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "PE" => Ok(Family::Pe),
            "BPI" => Ok(Family::Bpi),
            _ => Err(Error::invalid(format!("unknown family {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }

    /// `±x`, negating exactly.
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Sign::Plus => x,
            Sign::Minus => -x,
        }
    }
}

impl Serialize for Sign {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_i8(match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        })
    }
}

impl<'de> Deserialize<'de> for Sign {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match i8::deserialize(d)? {
            1 => Ok(Sign::Plus),
            -1 => Ok(Sign::Minus),
            other => Err(serde::de::Error::custom(format!("sign must be 1 or -1, got {other}"))),
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Plus => "+",
            Sign::Minus => "-",
        })
    }
}

/// A state: the distinguished start `s̄` or a point of the unit ball.
///
/// In the PE family `s̄` is the origin; in the BPI family it is a separate
/// symbol with the whole ball as its action set.
#[derive(Clone, Debug, PartialEq)]
pub enum State {
    Start,
    Point(DVector<f64>),
}

impl State {
    pub fn point(&self) -> Option<&DVector<f64>> {
        match self {
            State::Start => None,
            State::Point(p) => Some(p),
        }
    }

    pub fn is_start(&self) -> bool {
        matches!(self, State::Start)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateAction {
    pub state: State,
    pub action: DVector<f64>,
}

impl StateAction {
    pub fn new(state: State, action: DVector<f64>) -> Self {
        StateAction { state, action }
    }

    pub fn at_start(action: DVector<f64>) -> Self {
        StateAction {
            state: State::Start,
            action,
        }
    }
}

/// Nested subspaces `B₁ ⊇ B₂ ⊇ … ⊇ B_L`, optionally closed by a unit direction `w ∈ B_L`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChainRepr", into = "ChainRepr")]
pub struct NestedChain {
    d: usize,
    subspaces: Vec<Subspace>,
    w: Option<UnitVector>,
}

#[derive(Serialize, Deserialize)]
struct ChainRepr {
    ambient_dim: usize,
    subspaces: Vec<Subspace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    w: Option<UnitVector>,
    committed_upto: usize,
}

impl TryFrom<ChainRepr> for NestedChain {
    type Error = Error;
    fn try_from(r: ChainRepr) -> Result<Self> {
        if r.committed_upto != r.subspaces.len() {
            return Err(Error::invalid(format!(
                "committed_upto = {} but {} subspaces are listed",
                r.committed_upto,
                r.subspaces.len()
            )));
        }
        let mut chain = NestedChain::new(r.ambient_dim);
        for s in r.subspaces {
            chain.push(s)?;
        }
        if let Some(w) = r.w {
            chain.close(w)?;
        }
        Ok(chain)
    }
}

impl From<NestedChain> for ChainRepr {
    fn from(c: NestedChain) -> Self {
        ChainRepr {
            ambient_dim: c.d,
            committed_upto: c.subspaces.len(),
            subspaces: c.subspaces,
            w: c.w,
        }
    }
}

impl NestedChain {
    pub fn new(d: usize) -> Self {
        NestedChain {
            d,
            subspaces: Vec::new(),
            w: None,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.d
    }

    pub fn subspaces(&self) -> &[Subspace] {
        &self.subspaces
    }

    pub fn committed_upto(&self) -> usize {
        self.subspaces.len()
    }

    pub fn w(&self) -> Option<&UnitVector> {
        self.w.as_ref()
    }

    /// The innermost committed subspace, or `R^d` when nothing is committed.
    pub fn innermost(&self) -> Subspace {
        self.subspaces.last().cloned().unwrap_or_else(|| Subspace::full(self.d))
    }

    /// Commits the next subspace, which must lie inside the current innermost one.
    pub fn push(&mut self, next: Subspace) -> Result<()> {
        if self.w.is_some() {
            return Err(Error::Invariant("chain already closed by w".into()));
        }
        if next.ambient_dim() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                actual: next.ambient_dim(),
            });
        }
        if let Some(prev) = self.subspaces.last() {
            if !next.is_subspace_of(prev, ORTHO_TOL) {
                return Err(Error::Invariant(format!(
                    "B_{} is not contained in B_{}",
                    self.subspaces.len() + 1,
                    self.subspaces.len()
                )));
            }
        }
        self.subspaces.push(next);
        Ok(())
    }

    /// Fixes the final direction, which must be a unit vector of the innermost subspace.
    pub fn close(&mut self, w: UnitVector) -> Result<()> {
        if w.dim() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                actual: w.dim(),
            });
        }
        if !w.is_boundary() {
            return Err(Error::Invariant(format!("‖w‖ = {} is not 1", w.norm())));
        }
        let last = self
            .subspaces
            .last()
            .ok_or_else(|| Error::Invariant("cannot close an empty chain".into()))?;
        if !last.contains(&w, ORTHO_TOL) {
            return Err(Error::Invariant("w does not lie in the innermost subspace".into()));
        }
        self.w = Some(w);
        Ok(())
    }
}

/// Which piece of the state partition a point falls in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `sector(B_k) \ sector(B_{k+1})`, with `B₀ = R^d` and `B_{K+1} = ⟨w⟩`.
    Shell(usize),
    /// `sector(⟨w⟩)` minus both caps.
    Ring,
    /// `C_γ(w) ∪ C_γ(−w)`.
    Cap,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Branch::Shell(k) => write!(f, "shell_{k}"),
            Branch::Ring => f.write_str("ring"),
            Branch::Cap => f.write_str("cap"),
        }
    }
}

/// A fully committed instance `M_{w,±}` (PE) or `M_{H_w,±}` (BPI).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceRepr", into = "InstanceRepr")]
pub struct HardInstance {
    family: Family,
    gamma: f64,
    sign: Sign,
    chain: NestedChain,
    w: DVector<f64>,
    w_line: Subspace,
}

#[derive(Serialize, Deserialize)]
struct InstanceRepr {
    family: Family,
    gamma: f64,
    sign: Sign,
    chain: ChainRepr,
    w: UnitVector,
}

impl TryFrom<InstanceRepr> for HardInstance {
    type Error = Error;
    fn try_from(r: InstanceRepr) -> Result<Self> {
        let mut chain_repr = r.chain;
        if let Some(inner) = &chain_repr.w {
            if inner != &r.w {
                return Err(Error::invalid("chain.w disagrees with w"));
            }
        }
        chain_repr.w = Some(r.w);
        let chain = NestedChain::try_from(chain_repr)?;
        HardInstance::new(r.family, r.gamma, r.sign, chain)
    }
}

impl From<HardInstance> for InstanceRepr {
    fn from(inst: HardInstance) -> Self {
        let mut chain: ChainRepr = inst.chain.into();
        let w = chain.w.take().expect("instances are closed");
        InstanceRepr {
            family: inst.family,
            gamma: inst.gamma,
            sign: inst.sign,
            chain,
            w,
        }
    }
}

pub fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > GAMMA_MIN && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("gamma must lie in (√(3/4), 1), got {gamma}")))
    }
}

impl HardInstance {
    pub fn new(family: Family, gamma: f64, sign: Sign, chain: NestedChain) -> Result<Self> {
        check_gamma(gamma)?;
        let w = chain
            .w()
            .ok_or_else(|| Error::Invariant("instance chain has no final direction".into()))?
            .coords()
            .clone();
        let w_line = Subspace::line(&w)?;
        Ok(HardInstance {
            family,
            gamma,
            sign,
            chain,
            w,
            w_line,
        })
    }

    /// Random chain with `dim B_k = dims[k-1]`, each subspace Haar-random inside the previous one.
    pub fn random<R: Rng + ?Sized>(
        family: Family,
        d: usize,
        dims: &[usize],
        sign: Sign,
        gamma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::invalid("a chain needs at least one subspace"));
        }
        let mut chain = NestedChain::new(d);
        let mut outer = Subspace::full(d);
        for &m in dims {
            if m == 0 || m > outer.dim() {
                return Err(Error::invalid(format!(
                    "dims must be non-increasing within 1..={d}, got {dims:?}"
                )));
            }
            let inner = Subspace::random(outer.dim(), m, rng)?;
            let lifted = orthonormal_lift(&outer, &inner)?;
            chain.push(lifted.clone())?;
            outer = lifted;
        }
        let coords = random_unit(outer.dim(), rng);
        let w = UnitVector::new(outer.basis() * coords)?;
        chain.close(w)?;
        HardInstance::new(family, gamma, sign, chain)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn sign(&self) -> Sign {
        self.sign
    }

    pub fn chain(&self) -> &NestedChain {
        &self.chain
    }

    pub fn d(&self) -> usize {
        self.chain.ambient_dim()
    }

    /// Number of committed subspaces `K`.
    pub fn k(&self) -> usize {
        self.chain.committed_upto()
    }

    pub fn w(&self) -> &DVector<f64> {
        &self.w
    }

    /// The same chain and direction with the opposite reward sign.
    pub fn flipped(&self) -> HardInstance {
        HardInstance {
            sign: self.sign.flip(),
            ..self.clone()
        }
    }

    pub fn with_family(&self, family: Family) -> HardInstance {
        HardInstance {
            family,
            ..self.clone()
        }
    }

    fn in_caps(&self, x: &DVector<f64>) -> bool {
        let neg = -&self.w;
        cap_contains(&self.w, self.gamma, x).expect("w is a unit vector")
            || cap_contains(&neg, self.gamma, x).expect("w is a unit vector")
    }

    /// Classifies a point, testing the innermost piece first.
    pub fn classify(&self, x: &DVector<f64>) -> Branch {
        if self.in_caps(x) {
            return Branch::Cap;
        }
        if sector_contains(&self.w_line, self.gamma, x) {
            return Branch::Ring;
        }
        for (idx, b) in self.chain.subspaces().iter().enumerate().rev() {
            if sector_contains(b, self.gamma, x) {
                return Branch::Shell(idx + 1);
            }
        }
        Branch::Shell(0)
    }

    /// The subspace `B_{k+1}` used on shell `k`.
    fn shell_target(&self, k: usize) -> &Subspace {
        self.chain.subspaces().get(k).unwrap_or(&self.w_line)
    }

    /// Applies the three-case map shared by the PE target policy and the BPI transition.
    pub fn nested_map(&self, x: &DVector<f64>) -> DVector<f64> {
        match self.classify(x) {
            Branch::Cap => x.clone(),
            Branch::Ring => self.w_line.project(x).expect("dimension checked") / self.gamma,
            Branch::Shell(k) => self.shell_target(k).project(x).expect("dimension checked") / self.gamma,
        }
    }

    fn check_action(&self, sa: &StateAction) -> Result<()> {
        if sa.action.len() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                actual: sa.action.len(),
            });
        }
        if sa.action.norm() > 1.0 + BALL_TOL {
            return Err(Error::invalid(format!("action norm {} exceeds 1", sa.action.norm())));
        }
        if let State::Point(s) = &sa.state {
            if s.len() != self.d() {
                return Err(Error::DimensionMismatch {
                    expected: self.d(),
                    actual: s.len(),
                });
            }
            if self.family == Family::Bpi && s != &sa.action {
                return Err(Error::invalid("BPI non-start states have the single action a = s"));
            }
        }
        Ok(())
    }

    /// `±(1−γ)·aᵀw` inside the caps, `0` elsewhere.
    pub fn reward(&self, sa: &StateAction) -> Result<f64> {
        self.check_action(sa)?;
        Ok(self.reward_of(&sa.action))
    }

    pub(crate) fn reward_of(&self, a: &DVector<f64>) -> f64 {
        if self.in_caps(a) {
            self.sign.apply((1.0 - self.gamma) * a.dot(&self.w))
        } else {
            0.0
        }
    }

    /// Deterministic successor: `a` in the PE family, the nested map of `a` in the BPI family.
    pub fn successor(&self, sa: &StateAction) -> Result<DVector<f64>> {
        self.check_action(sa)?;
        Ok(self.successor_of(&sa.action))
    }

    pub(crate) fn successor_of(&self, a: &DVector<f64>) -> DVector<f64> {
        match self.family {
            Family::Pe => a.clone(),
            Family::Bpi => self.nested_map(a),
        }
    }

    /// The PE target policy `π_{H_w}`.
    pub fn target_policy_action(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        if self.family != Family::Pe {
            return Err(Error::invalid("the nested target policy belongs to the PE family"));
        }
        if s.len() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                actual: s.len(),
            });
        }
        Ok(self.nested_map(s))
    }

    /// The target policy of either family as a state → action map. For BPI it
    /// plays `0` at `s̄` and the forced action elsewhere.
    pub fn target_policy(&self, s: &State) -> DVector<f64> {
        match (self.family, s) {
            (Family::Pe, State::Start) => self.nested_map(&DVector::zeros(self.d())),
            (Family::Pe, State::Point(p)) => self.nested_map(p),
            (Family::Bpi, State::Start) => DVector::zeros(self.d()),
            (Family::Bpi, State::Point(p)) => p.clone(),
        }
    }

    /// `±aᵀw`.
    pub fn true_q(&self, sa: &StateAction) -> Result<f64> {
        self.check_action(sa)?;
        Ok(self.q_of(&sa.action))
    }

    pub(crate) fn q_of(&self, a: &DVector<f64>) -> f64 {
        self.sign.apply(a.dot(&self.w))
    }

    /// `(𝒯^π Q)(s,a) = r(s,a) + γ·Q(s', π(s'))`; BPI successors use their forced action.
    pub fn bellman_apply(
        &self,
        policy: &dyn Fn(&State) -> DVector<f64>,
        qfun: &dyn Fn(&StateAction) -> f64,
        sa: &StateAction,
    ) -> Result<f64> {
        self.check_action(sa)?;
        let next = self.successor_of(&sa.action);
        let next_action = match self.family {
            Family::Pe => policy(&State::Point(next.clone())),
            Family::Bpi => next.clone(),
        };
        let q_next = qfun(&StateAction::new(State::Point(next), next_action));
        Ok(self.reward_of(&sa.action) + self.gamma * q_next)
    }

    /// `Σ_{t<H} γ^t r_t` along the deterministic trajectory from `s0`.
    pub fn value_of_policy(
        &self,
        policy: &dyn Fn(&State) -> DVector<f64>,
        s0: &State,
        horizon: usize,
    ) -> Result<f64> {
        if horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        let a0 = match (self.family, s0) {
            (Family::Bpi, State::Point(p)) => p.clone(),
            _ => policy(s0),
        };
        self.rollout_q(policy, s0, &a0, horizon)
    }

    /// Truncated return of playing `a0` at `s0` and then following `policy`.
    pub fn rollout_q(
        &self,
        policy: &dyn Fn(&State) -> DVector<f64>,
        s0: &State,
        a0: &DVector<f64>,
        horizon: usize,
    ) -> Result<f64> {
        if horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        let mut sa = StateAction::new(s0.clone(), a0.clone());
        let mut total = 0.0;
        let mut discount = 1.0;
        for t in 0..horizon {
            total += discount * self.reward(&sa)?;
            if t + 1 == horizon {
                break;
            }
            let next = self.successor_of(&sa.action);
            let action = match self.family {
                Family::Pe => policy(&State::Point(next.clone())),
                Family::Bpi => next.clone(),
            };
            sa = StateAction::new(State::Point(next), action);
            discount *= self.gamma;
        }
        Ok(total)
    }
}

/// `⌈ln(1e-9)/ln γ⌉`, the rollout length whose tail falls below the checker tolerance.
pub fn default_horizon(gamma: f64) -> usize {
    (1e-9f64.ln() / gamma.ln()).ceil() as usize
}

fn orthonormal_lift(outer: &Subspace, inner: &Subspace) -> Result<Subspace> {
    let lifted: DMatrix<f64> = outer.basis() * inner.basis();
    let cols: Vec<DVector<f64>> = lifted.column_iter().map(|c| c.into_owned()).collect();
    Subspace::from_orthonormal(DMatrix::from_columns(&gram_schmidt(&[], &cols)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealizabilityReport {
    pub max_residual: f64,
    pub pass: bool,
    pub samples: usize,
    /// How many samples landed in each branch of the partition.
    pub branch_counts: BTreeMap<String, usize>,
}

/// A unit vector of `outer` orthogonal to `inner`, or `None` if `inner` fills `outer`.
fn unit_between<R: Rng + ?Sized>(outer: &Subspace, inner: &Subspace, rng: &mut R) -> Option<DVector<f64>> {
    if inner.dim() >= outer.dim() {
        return None;
    }
    for _ in 0..8 {
        let x = outer.basis() * random_unit(outer.dim(), rng);
        let r = &x - inner.project(&x).expect("shared ambient dim");
        let n = r.norm();
        if n > 1e-6 {
            return Some(r / n);
        }
    }
    None
}

/// Draws one action from the requested stratum. Strata: shells `0..=K`, the
/// ring, the `+w` cap and the `−w` cap.
fn sample_stratum<R: Rng + ?Sized>(inst: &HardInstance, stratum: usize, rng: &mut R) -> Option<DVector<f64>> {
    let k_len = inst.k();
    let gamma = inst.gamma;
    let full = Subspace::full(inst.d());
    let w = inst.w.clone();
    let radius = |rng: &mut R| if rng.random_bool(0.2) { 1.0 } else { rng.random_range(1e-3..=1.0) };
    match stratum {
        k if k <= k_len => {
            let outer = if k == 0 { &full } else { &inst.chain.subspaces()[k - 1] };
            let inner = inst.shell_target(k);
            let u = inner.basis() * random_unit(inner.dim(), rng);
            let v = unit_between(outer, inner, rng)?;
            let z = unit_between(&full, outer, rng);
            // cos t: share inside `outer`; cos s: share of that inside `inner`.
            let cos_t: f64 = if z.is_some() { rng.random_range(gamma..=1.0) } else { 1.0 };
            let max_cos_s = (gamma / cos_t).min(1.0);
            let cos_s = rng.random_range(-max_cos_s..=max_cos_s);
            let dir = cos_t * (cos_s * &u + (1.0 - cos_s * cos_s).sqrt() * v)
                + z.map_or_else(|| DVector::zeros(inst.d()), |z| (1.0 - cos_t * cos_t).sqrt() * z);
            Some(radius(rng) * dir)
        }
        k if k == k_len + 1 => {
            let z = unit_between(&full, &inst.w_line, rng);
            let cos_t: f64 = if z.is_some() { rng.random_range(gamma..=1.0) } else { 1.0 };
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let r = rng.random_range(1e-3..=gamma / cos_t);
            let dir = sign * cos_t * &w + z.map_or_else(|| DVector::zeros(inst.d()), |z| (1.0 - cos_t * cos_t).sqrt() * z);
            Some(r * dir)
        }
        _ => {
            let sign = if stratum == k_len + 2 { 1.0 } else { -1.0 };
            let z = unit_between(&full, &inst.w_line, rng);
            let cos_t: f64 = if z.is_some() { rng.random_range(gamma..=1.0) } else { 1.0 };
            let r = if rng.random_bool(0.2) { 1.0 } else { rng.random_range(gamma / cos_t..=1.0) };
            let dir = sign * cos_t * &w + z.map_or_else(|| DVector::zeros(inst.d()), |z| (1.0 - cos_t * cos_t).sqrt() * z);
            Some(r * dir)
        }
    }
}

/// Checks the Bellman fixed point of `±φᵀw` on samples spread over every branch.
pub fn verify_realizability(inst: &HardInstance, samples: usize, seed: u64) -> Result<RealizabilityReport> {
    if samples == 0 {
        return Err(Error::invalid("samples must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strata = inst.k() + 4;
    let q = |sa: &StateAction| inst.q_of(&sa.action);
    let policy = |s: &State| inst.target_policy(s);
    let mut max_residual: f64 = 0.0;
    let mut branch_counts = BTreeMap::new();
    let mut drawn = 0;
    let mut attempt = 0;
    while drawn < samples {
        let stratum = attempt % strata;
        attempt += 1;
        let a = match sample_stratum(inst, stratum, &mut rng) {
            Some(a) => a,
            // Empty stratum (equal consecutive dims) or a failed draw: fall back to the ball.
            None => rng.random_range(0.0..=1.0) * random_unit(inst.d(), &mut rng),
        };
        let a = if a.norm() > 1.0 { a.normalize() } else { a };
        let state = match inst.family {
            Family::Pe if rng.random_bool(0.5) => State::Point(random_unit(inst.d(), &mut rng)),
            Family::Bpi if rng.random_bool(0.5) => State::Point(a.clone()),
            _ => State::Start,
        };
        let sa = StateAction::new(state, a);
        let branch = inst.classify(&sa.action);
        *branch_counts.entry(branch.to_string()).or_insert(0) += 1;
        let lhs = inst.bellman_apply(&policy, &q, &sa)?;
        let residual = (lhs - q(&sa)).abs();
        if !residual.is_finite() {
            return Err(Error::Invariant(format!("non-finite Bellman residual at branch {branch}")));
        }
        max_residual = max_residual.max(residual);
        drawn += 1;
    }
    Ok(RealizabilityReport {
        max_residual,
        pass: max_residual <= REALIZABILITY_TOL,
        samples,
        branch_counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn e(d: usize, i: usize) -> DVector<f64> {
        UnitVector::basis(d, i).into_inner()
    }

    fn simple(family: Family, sign: Sign) -> HardInstance {
        let mut chain = NestedChain::new(3);
        chain.push(Subspace::coordinate(3, &[0, 1]).unwrap()).unwrap();
        chain.close(UnitVector::basis(3, 0)).unwrap();
        HardInstance::new(family, 0.9, sign, chain).unwrap()
    }

    #[test]
    fn reward_examples() {
        let plus = simple(Family::Pe, Sign::Plus);
        let minus = plus.flipped();
        let w = e(3, 0);
        assert_abs_diff_eq!(plus.reward(&StateAction::at_start(w.clone())).unwrap(), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(minus.reward(&StateAction::at_start(w.clone())).unwrap(), -0.1, epsilon = 1e-15);
        assert_eq!(plus.reward(&StateAction::at_start(e(3, 2))).unwrap(), 0.0);
        assert!(plus.reward(&StateAction::at_start(2.0 * w)).is_err());
    }

    #[test]
    fn successor_examples() {
        let pe = simple(Family::Pe, Sign::Plus);
        let a = DVector::from_vec(vec![0.3, 0.4, 0.0]);
        assert_eq!(pe.successor(&StateAction::at_start(a.clone())).unwrap(), a);

        let bpi = simple(Family::Bpi, Sign::Plus);
        let next = bpi.successor(&StateAction::at_start(e(3, 2))).unwrap();
        assert_eq!(next, DVector::zeros(3));
        assert_eq!(bpi.successor(&StateAction::at_start(e(3, 0))).unwrap(), e(3, 0));
        // Non-start BPI states only admit their own action.
        let bad = StateAction::new(State::Point(e(3, 1)), e(3, 0));
        assert!(bpi.successor(&bad).is_err());
    }

    #[test]
    fn target_policy_examples() {
        let pe = simple(Family::Pe, Sign::Plus);
        assert_eq!(pe.target_policy_action(&e(3, 2)).unwrap(), DVector::zeros(3));
        assert_eq!(pe.target_policy_action(&e(3, 0)).unwrap(), e(3, 0));
        let s = DVector::from_vec(vec![0.6, 0.0, 0.8]);
        assert_eq!(pe.classify(&s), Branch::Shell(0));
        let a = pe.target_policy_action(&s).unwrap();
        assert_abs_diff_eq!(a, DVector::from_vec(vec![0.6 / 0.9, 0.0, 0.0]), epsilon = 1e-15);
        assert!(simple(Family::Bpi, Sign::Plus).target_policy_action(&s).is_err());
    }

    #[test]
    fn classify_walks_inward() {
        let pe = simple(Family::Pe, Sign::Plus);
        // In B₁'s sector but not ⟨w⟩'s.
        let x = DVector::from_vec(vec![0.6, 0.8, 0.0]);
        assert_eq!(pe.classify(&x), Branch::Shell(1));
        assert_abs_diff_eq!(pe.nested_map(&x), DVector::from_vec(vec![0.6 / 0.9, 0.0, 0.0]), epsilon = 1e-15);
        // Short vector pointing along w: in the sector of ⟨w⟩ but outside the caps.
        assert_eq!(pe.classify(&DVector::from_vec(vec![0.5, 0.0, 0.0])), Branch::Ring);
        assert_eq!(pe.classify(&DVector::from_vec(vec![-0.95, 0.0, 0.0])), Branch::Cap);
        assert_eq!(pe.classify(&DVector::zeros(3)), Branch::Shell(0));
    }

    #[test]
    fn true_q_and_bellman_examples() {
        let plus = simple(Family::Pe, Sign::Plus);
        let minus = plus.flipped();
        let w = StateAction::at_start(e(3, 0));
        assert_eq!(plus.true_q(&w).unwrap(), 1.0);
        assert_eq!(minus.true_q(&w).unwrap(), -1.0);
        assert_eq!(plus.true_q(&StateAction::at_start(e(3, 1))).unwrap(), 0.0);

        let zero_q = |_: &StateAction| 0.0;
        let policy = |s: &State| plus.target_policy(s);
        assert_eq!(plus.bellman_apply(&policy, &zero_q, &StateAction::at_start(e(3, 2))).unwrap(), 0.0);
        assert_abs_diff_eq!(plus.bellman_apply(&policy, &zero_q, &w).unwrap(), 0.1, epsilon = 1e-15);
        let tq = |sa: &StateAction| plus.q_of(&sa.action);
        let x = StateAction::at_start(DVector::from_vec(vec![0.3, -0.5, 0.6]));
        assert_abs_diff_eq!(plus.bellman_apply(&policy, &tq, &x).unwrap(), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn sign_symmetry_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inst = HardInstance::random(Family::Pe, 6, &[4, 2], Sign::Plus, 0.9, &mut rng).unwrap();
        let neg = inst.flipped();
        for _ in 0..200 {
            let a = rng.random_range(0.0..=1.0) * random_unit(6, &mut rng);
            let sa = StateAction::at_start(a);
            assert_eq!(inst.reward(&sa).unwrap(), -neg.reward(&sa).unwrap());
            assert_eq!(inst.true_q(&sa).unwrap(), -neg.true_q(&sa).unwrap());
        }
        let sa = StateAction::at_start(inst.w().clone());
        assert_eq!(inst.reward(&sa).unwrap(), -neg.reward(&sa).unwrap());
    }

    #[test]
    fn realizability_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pe = HardInstance::random(Family::Pe, 3, &[2], Sign::Plus, 0.9, &mut rng).unwrap();
        let rep = verify_realizability(&pe, 1000, 1).unwrap();
        assert!(rep.pass, "{rep:?}");
        for key in ["shell_0", "shell_1", "ring", "cap"] {
            assert!(rep.branch_counts.get(key).copied().unwrap_or(0) > 0, "{key} missing: {rep:?}");
        }
        let bpi = HardInstance::random(Family::Bpi, 4, &[3, 2], Sign::Minus, 0.9, &mut rng).unwrap();
        let rep = verify_realizability(&bpi, 1000, 2).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.branch_counts.contains_key("shell_2"));
    }

    #[test]
    fn perturbed_w_is_rejected() {
        let pe = simple(Family::Pe, Sign::Plus);
        let json = serde_json::to_string(&pe).unwrap();
        let back: HardInstance = serde_json::from_str(&json).unwrap();
        assert_eq!(back, pe);
        let perturbed = json.replacen("\"w\":[1.0,0.0,0.0]", "\"w\":[0.9,0.0,0.0]", 1);
        assert_ne!(perturbed, json);
        assert!(serde_json::from_str::<HardInstance>(&perturbed).is_err());
    }

    #[test]
    fn rollout_examples() {
        let pe = simple(Family::Pe, Sign::Plus);
        let h = default_horizon(0.9);
        let policy = |s: &State| pe.target_policy(s);
        let v = pe.value_of_policy(&policy, &State::Start, h).unwrap();
        assert!(v.abs() <= 0.9f64.powi(h as i32));

        let bpi = simple(Family::Bpi, Sign::Plus);
        let first_w = |s: &State| if s.is_start() { e(3, 0) } else { bpi.target_policy(s) };
        let v = bpi.value_of_policy(&first_w, &State::Start, h).unwrap();
        assert!((v - 1.0).abs() <= 0.9f64.powi(h as i32));

        let v = bpi.rollout_q(&first_w, &State::Start, &e(3, 2), 1).unwrap();
        assert_eq!(v, 0.0);
    }
}
