//! Linear-algebra kernel: ball vectors, subspaces with orthonormal bases,
//! projections, hyperspherical caps and sectors, principal angles and the
//! chordal distance between subspaces.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack on ball membership, `‖x‖ ≤ 1 + BALL_TOL`.
pub const BALL_TOL: f64 = 1e-9;
/// Slack on orthonormality and containment checks.
pub const ORTHO_TOL: f64 = 1e-9;
/// Cosines within this distance of the threshold count as *outside* a cap or sector.
pub const THRESHOLD_TOL: f64 = 1e-12;
/// Relative residual below which a vector is treated as linearly dependent.
pub const DEPENDENT_TOL: f64 = 1e-10;

/// A point of the closed unit ball in `R^d`.
///
/// Doubles as a state, an action and a feature value on the hard classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct UnitVector(DVector<f64>);

impl UnitVector {
    pub fn new(coords: DVector<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("vector must have dimension >= 1"));
        }
        let norm = coords.norm();
        if !norm.is_finite() || norm > 1.0 + BALL_TOL {
            return Err(Error::invalid(format!(
                "vector norm {norm} outside the unit ball"
            )));
        }
        Ok(UnitVector(coords))
    }

    pub fn from_slice(coords: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(coords))
    }

    /// Standard basis vector `e_i` (zero-based index).
    pub fn basis(d: usize, i: usize) -> Self {
        let mut v = DVector::zeros(d);
        v[i] = 1.0;
        UnitVector(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    /// True when the vector sits on the unit sphere.
    pub fn is_boundary(&self) -> bool {
        (self.0.norm() - 1.0).abs() <= BALL_TOL
    }
}

impl std::ops::Deref for UnitVector {
    type Target = DVector<f64>;
    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for UnitVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        UnitVector::new(DVector::from_vec(v))
    }
}

impl From<UnitVector> for Vec<f64> {
    fn from(v: UnitVector) -> Vec<f64> {
        v.0.as_slice().to_vec()
    }
}

/// Modified Gram-Schmidt with a second re-orthogonalization pass.
///
/// Vectors whose residual falls below `DEPENDENT_TOL` times their own norm are
/// dropped as dependent. `seed` is an already-orthonormal set to orthogonalize
/// against; it is not part of the output.
pub fn gram_schmidt(seed: &[DVector<f64>], vectors: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = seed.to_vec();
    let start = basis.len();
    for v in vectors {
        let norm = v.norm();
        if norm == 0.0 || !norm.is_finite() {
            continue;
        }
        let mut r = v.clone();
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&r);
                r.axpy(-c, q, 1.0);
            }
        }
        let rn = r.norm();
        if rn > DEPENDENT_TOL * norm {
            basis.push(r / rn);
        }
    }
    basis.split_off(start)
}

/// Numerical rank of a set of vectors.
pub fn rank(vectors: &[DVector<f64>]) -> usize {
    gram_schmidt(&[], vectors).len()
}

/// Unit vector in the direction of `x`, or `None` for the zero vector.
pub fn normalized(x: &DVector<f64>) -> Option<DVector<f64>> {
    let n = x.norm();
    (n > 0.0).then(|| x / n)
}

fn nudge(x: f64, ulps: i32) -> f64 {
    let mut y = x;
    for _ in 0..ulps.unsigned_abs() {
        y = if ulps > 0 { y.next_up() } else { y.next_down() };
    }
    y
}

/// Rescales `x` to unit length and nudges coordinates by a few ulps until
/// `x·x` evaluates to exactly `1.0`, when such a nudge is found.
pub fn snap_unit(x: &DVector<f64>) -> Option<DVector<f64>> {
    let mut v = normalized(x)?;
    if v.dot(&v) == 1.0 {
        return Some(v);
    }
    // Largest coordinates first: re-solving a small one amplifies rounding error.
    let mut nonzero: Vec<usize> = (0..v.len()).filter(|&i| v[i] != 0.0).collect();
    nonzero.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()));
    const STEPS: [i32; 8] = [1, -1, 2, -2, 3, -3, 4, -4];
    // Solve for one coordinate given the others, then search a few ulps around it.
    for &i in &nonzero {
        let old = v[i];
        v[i] = 0.0;
        let rest = v.dot(&v);
        if rest < 1.0 {
            let target = (1.0 - rest).sqrt().copysign(old);
            for s in [0, 1, -1, 2, -2, 3, -3, 4, -4] {
                v[i] = nudge(target, s);
                if v.dot(&v) == 1.0 {
                    return Some(v);
                }
            }
        }
        v[i] = old;
    }
    let base = v.clone();
    for k in 0..32 {
        for scale in [1.0 + k as f64 * f64::EPSILON, 1.0 - k as f64 * f64::EPSILON] {
            v = &base * scale;
            for &i in &nonzero {
                let old = v[i];
                for s in STEPS {
                    v[i] = nudge(old, s);
                    if v.dot(&v) == 1.0 {
                        return Some(v);
                    }
                }
                v[i] = old;
            }
        }
    }
    v = base;
    for (pos, &i) in nonzero.iter().enumerate() {
        for &j in &nonzero[pos + 1..] {
            let (oi, oj) = (v[i], v[j]);
            for si in STEPS {
                for sj in STEPS {
                    v[i] = nudge(oi, si);
                    v[j] = nudge(oj, sj);
                    if v.dot(&v) == 1.0 {
                        return Some(v);
                    }
                }
            }
            v[i] = oi;
            v[j] = oj;
        }
    }
    Some(v)
}

/// An `m`-dimensional linear subspace of `R^d`, stored as a `d × m` matrix with
/// orthonormal columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SubspaceRepr", into = "SubspaceRepr")]
pub struct Subspace {
    basis: DMatrix<f64>,
}

/// JSON layout: the basis is a list of columns.
#[derive(Serialize, Deserialize)]
struct SubspaceRepr {
    ambient_dim: usize,
    dim: usize,
    basis: Vec<Vec<f64>>,
}

impl TryFrom<SubspaceRepr> for Subspace {
    type Error = Error;
    fn try_from(r: SubspaceRepr) -> Result<Self> {
        if r.basis.len() != r.dim {
            return Err(Error::invalid(format!(
                "subspace declares dim {} but lists {} columns",
                r.dim,
                r.basis.len()
            )));
        }
        let cols: Vec<DVector<f64>> = r
            .basis
            .into_iter()
            .map(|c| {
                if c.len() != r.ambient_dim {
                    Err(Error::DimensionMismatch {
                        expected: r.ambient_dim,
                        actual: c.len(),
                    })
                } else {
                    Ok(DVector::from_vec(c))
                }
            })
            .collect::<Result<_>>()?;
        if cols.is_empty() {
            return Err(Error::invalid("subspace must have dim >= 1"));
        }
        Subspace::from_orthonormal(DMatrix::from_columns(&cols))
    }
}

impl From<Subspace> for SubspaceRepr {
    fn from(s: Subspace) -> Self {
        SubspaceRepr {
            ambient_dim: s.ambient_dim(),
            dim: s.dim(),
            basis: s
                .basis
                .column_iter()
                .map(|c| c.iter().copied().collect())
                .collect(),
        }
    }
}

impl Subspace {
    /// Wraps a basis matrix after checking `BᵀB = I` entrywise within `ORTHO_TOL`.
    pub fn from_orthonormal(basis: DMatrix<f64>) -> Result<Self> {
        let (d, m) = basis.shape();
        if m == 0 || d == 0 || m > d {
            return Err(Error::invalid(format!(
                "subspace basis must be d x m with 1 <= m <= d, got {d} x {m}"
            )));
        }
        let gram = basis.transpose() * &basis;
        for i in 0..m {
            for j in 0..m {
                let target = if i == j { 1.0 } else { 0.0 };
                let err = (gram[(i, j)] - target).abs();
                if !(err <= ORTHO_TOL) {
                    return Err(Error::invalid(format!(
                        "basis columns not orthonormal: |(BᵀB)[{i},{j}] - {target}| = {err:e}"
                    )));
                }
            }
        }
        Ok(Subspace { basis })
    }

    fn from_columns_unchecked(cols: &[DVector<f64>]) -> Self {
        Subspace {
            basis: DMatrix::from_columns(cols),
        }
    }

    /// Span of arbitrary vectors in `R^d`; fails if they are all zero.
    pub fn span(vectors: &[DVector<f64>], d: usize) -> Result<Self> {
        for v in vectors {
            check_dim(d, v.len())?;
        }
        let cols = gram_schmidt(&[], vectors);
        if cols.is_empty() {
            return Err(Error::invalid("span of the given vectors is {0}"));
        }
        Ok(Self::from_columns_unchecked(&cols))
    }

    /// `R^d` itself with the standard basis.
    pub fn full(d: usize) -> Self {
        assert!(d >= 1, "ambient dimension must be >= 1");
        Subspace {
            basis: DMatrix::identity(d, d),
        }
    }

    /// Span of the standard basis vectors with the given zero-based indices.
    pub fn coordinate(d: usize, indices: &[usize]) -> Result<Self> {
        let cols: Vec<DVector<f64>> = indices
            .iter()
            .map(|&i| {
                if i >= d {
                    Err(Error::invalid(format!("coordinate index {i} >= {d}")))
                } else {
                    Ok(UnitVector::basis(d, i).into_inner())
                }
            })
            .collect::<Result<_>>()?;
        Self::span(&cols, d)
    }

    /// The line spanned by a nonzero vector.
    pub fn line(v: &DVector<f64>) -> Result<Self> {
        let u = normalized(v).ok_or(Error::ZeroVector)?;
        Ok(Self::from_columns_unchecked(&[u]))
    }

    /// Haar-distributed random subspace from an orthonormalized Gaussian matrix.
    pub fn random<R: Rng + ?Sized>(d: usize, m: usize, rng: &mut R) -> Result<Self> {
        if m == 0 || m > d {
            return Err(Error::invalid(format!("cannot draw a {m}-dim subspace of R^{d}")));
        }
        loop {
            let cols: Vec<DVector<f64>> = (0..m).map(|_| gaussian_vector(d, rng)).collect();
            let q = gram_schmidt(&[], &cols);
            if q.len() == m {
                return Ok(Self::from_columns_unchecked(&q));
            }
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn column(&self, i: usize) -> DVector<f64> {
        self.basis.column(i).into_owned()
    }

    pub fn columns(&self) -> Vec<DVector<f64>> {
        self.basis.column_iter().map(|c| c.into_owned()).collect()
    }

    /// Coordinates of the projection of `x` in this basis, `Bᵀx`.
    pub fn coordinates(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.ambient_dim(), x.len())?;
        Ok(self.basis.tr_mul(x))
    }

    /// Orthogonal projection `B(Bᵀx)`.
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.basis * self.coordinates(x)?)
    }

    /// Largest cosine between `x` and a vector of this subspace,
    /// `‖proj(x)‖ / ‖x‖`; zero for the zero vector.
    ///
    /// Panics on a dimension mismatch.
    pub fn max_cosine(&self, x: &DVector<f64>) -> f64 {
        assert_eq!(
            x.len(),
            self.ambient_dim(),
            "vector and subspace live in different ambient spaces"
        );
        let xn = x.norm();
        if xn == 0.0 {
            return 0.0;
        }
        self.basis.tr_mul(x).norm() / xn
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        match self.project(x) {
            Ok(p) => (p - x).norm() <= tol,
            Err(_) => false,
        }
    }

    /// True when every basis column of `self` lies in `other` within `tol`.
    pub fn is_subspace_of(&self, other: &Subspace, tol: f64) -> bool {
        self.ambient_dim() == other.ambient_dim()
            && self.dim() <= other.dim()
            && self.basis.column_iter().all(|c| other.contains(&c.into_owned(), tol))
    }

    /// The span of the first `m` basis columns.
    pub fn truncate(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.dim() {
            return Err(Error::invalid(format!(
                "cannot truncate a {}-dim subspace to dim {m}",
                self.dim()
            )));
        }
        Ok(Subspace {
            basis: self.basis.columns(0, m).into_owned(),
        })
    }
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        Err(Error::DimensionMismatch { expected, actual })
    } else {
        Ok(())
    }
}

pub(crate) fn gaussian_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Uniformly random point of the unit sphere.
pub fn random_unit<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    loop {
        if let Some(u) = normalized(&gaussian_vector(d, rng)) {
            return u;
        }
    }
}

/// Orthogonal projection of `x` onto `h`.
pub fn project(x: &DVector<f64>, h: &Subspace) -> Result<DVector<f64>> {
    h.project(x)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("gamma must lie in (0, 1), got {gamma}")))
    }
}

/// Membership in the cap `{x : xᵀw/‖w‖ > γ}`. `x` is *not* normalized.
pub fn cap_contains(w: &DVector<f64>, gamma: f64, x: &DVector<f64>) -> Result<bool> {
    check_gamma(gamma)?;
    check_dim(w.len(), x.len())?;
    let wn = w.norm();
    if wn == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(x.dot(w) / wn - gamma > THRESHOLD_TOL)
}

/// Membership in the two-sided sector of `h`: some unit `v ∈ h` has
/// `xᵀv/‖x‖ > γ`. The zero vector belongs to no sector.
///
/// Panics if `x` and `h` live in different ambient spaces.
pub fn sector_contains(h: &Subspace, gamma: f64, x: &DVector<f64>) -> bool {
    h.max_cosine(x) - gamma > THRESHOLD_TOL
}

/// Principal angles between two subspaces of equal dimension, ascending, in `[0, π/2]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrincipalAngles {
    pub angles: Vec<f64>,
}

impl PrincipalAngles {
    /// Cosine of the smallest angle: the largest cosine between any two vectors of the pair.
    pub fn max_cosine(&self) -> f64 {
        self.angles.first().map_or(0.0, |t| t.cos())
    }
}

/// Singular values of `AᵀB`, clamped to `[0, 1]`, sorted descending.
pub fn cross_singular_values(a: &Subspace, b: &Subspace) -> Result<Vec<f64>> {
    check_dim(a.ambient_dim(), b.ambient_dim())?;
    let m = a.basis.tr_mul(&b.basis);
    let mut sv: Vec<f64> = m
        .singular_values()
        .iter()
        .map(|s| s.clamp(0.0, 1.0))
        .collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    Ok(sv)
}

pub fn principal_angles(a: &Subspace, b: &Subspace) -> Result<PrincipalAngles> {
    check_dim(a.ambient_dim(), b.ambient_dim())?;
    check_dim(a.dim(), b.dim())?;
    let cosines = cross_singular_values(a, b)?;
    // acos is ill-conditioned near 1, so small angles come from the sines instead.
    let mut sines: Vec<f64> = residual(a, b).singular_values().iter().map(|s| s.clamp(0.0, 1.0)).collect();
    sines.sort_by(f64::total_cmp);
    let angles = cosines
        .iter()
        .zip(&sines)
        .map(|(&c, &s)| if c > std::f64::consts::FRAC_1_SQRT_2 { s.asin() } else { c.acos() })
        .collect();
    Ok(PrincipalAngles { angles })
}

/// `(I − AAᵀ)B`, whose singular values are the sines of the principal angles.
fn residual(a: &Subspace, b: &Subspace) -> DMatrix<f64> {
    b.basis() - a.basis() * (a.basis().transpose() * b.basis())
}

/// `sqrt(Σ sin² θ_i)` over the principal angles.
pub fn chordal_distance(a: &Subspace, b: &Subspace) -> Result<f64> {
    check_dim(a.ambient_dim(), b.ambient_dim())?;
    check_dim(a.dim(), b.dim())?;
    Ok(residual(a, b).norm())
}

/// Orthogonal complement of `span(vectors)` in `R^d`.
///
/// The basis is built by running Gram-Schmidt over `e_1, …, e_d` in order
/// against the span, so the result is deterministic.
pub fn orthonormal_complement_basis(vectors: &[DVector<f64>], d: usize) -> Result<Subspace> {
    for v in vectors {
        check_dim(d, v.len())?;
    }
    let span = gram_schmidt(&[], vectors);
    if span.len() >= d {
        return Err(Error::NoComplement(d));
    }
    let needed = d - span.len();
    let mut complement = Vec::with_capacity(needed);
    let mut all = span;
    for i in 0..d {
        if complement.len() == needed {
            break;
        }
        let e = UnitVector::basis(d, i).into_inner();
        if let Some(q) = gram_schmidt(&all, &[e]).pop() {
            all.push(q.clone());
            complement.push(q);
        }
    }
    Ok(Subspace::from_columns_unchecked(&complement))
}

/// Runs a subspace search inside `b` and lifts the result back into `R^d`.
///
/// Each point is replaced by the coordinates of its projection onto `b` in
/// `b`'s orthonormal basis; `inner_find` works in `R^{dim b}` and its result
/// `U` is lifted to `span(B·U) ⊆ b`.
pub fn restrict_and_lift<F>(b: &Subspace, points: &[DVector<f64>], inner_find: F) -> Result<Subspace>
where
    F: FnOnce(&[DVector<f64>]) -> Result<Subspace>,
{
    let inner_points: Vec<DVector<f64>> = points
        .iter()
        .map(|p| b.coordinates(p))
        .collect::<Result<_>>()?;
    let inner = inner_find(&inner_points)?;
    check_dim(b.dim(), inner.ambient_dim())?;
    let lifted = Subspace {
        basis: &b.basis * &inner.basis,
    };
    for c in lifted.basis.column_iter() {
        let c = c.into_owned();
        let gap = (b.project(&c)? - &c).norm();
        if gap > ORTHO_TOL {
            return Err(Error::Invariant(format!(
                "lifted column leaves the enclosing subspace by {gap:e}"
            )));
        }
    }
    Ok(lifted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn unit_vector_rejects_points_outside_ball() {
        assert!(UnitVector::from_slice(&[0.6, 0.8]).unwrap().is_boundary());
        assert!(UnitVector::from_slice(&[1.0, 0.1]).is_err());
        assert!(UnitVector::from_slice(&[]).is_err());
    }

    #[test]
    fn projection_examples() {
        let e1 = Subspace::coordinate(2, &[0]).unwrap();
        assert_eq!(project(&v(&[1.0, 0.0]), &e1).unwrap(), v(&[1.0, 0.0]));
        assert_eq!(project(&v(&[0.0, 1.0]), &e1).unwrap(), v(&[0.0, 0.0]));
        let plane = Subspace::coordinate(3, &[0, 1]).unwrap();
        let p = project(&v(&[0.6, 0.8, 0.0]), &plane).unwrap();
        assert_abs_diff_eq!(p, v(&[0.6, 0.8, 0.0]), epsilon = 1e-15);
        assert!(matches!(
            project(&v(&[1.0, 0.0, 0.0]), &e1),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cap_examples() {
        let e1 = v(&[1.0, 0.0]);
        assert!(cap_contains(&e1, 0.9, &e1).unwrap());
        assert!(!cap_contains(&e1, 0.9, &v(&[0.5, 0.0])).unwrap());
        assert!(!cap_contains(&e1, 0.9, &v(&[0.0, 1.0])).unwrap());
        assert!(matches!(
            cap_contains(&v(&[0.0, 0.0]), 0.9, &e1),
            Err(Error::ZeroVector)
        ));
        // Caps are not normalized by ‖x‖: a short vector along w is outside.
        assert!(!cap_contains(&e1, 0.9, &v(&[0.9, 0.0])).unwrap());
    }

    #[test]
    fn sector_examples() {
        let l1 = Subspace::coordinate(3, &[0]).unwrap();
        let p12 = Subspace::coordinate(3, &[0, 1]).unwrap();
        assert!(sector_contains(&l1, 0.9, &v(&[1.0, 0.0, 0.0])));
        assert!(!sector_contains(&p12, 0.9, &v(&[0.0, 0.0, 1.0])));
        assert!(!sector_contains(&l1, 0.9, &v(&[0.8, 0.6, 0.0])));
        // Sectors are normalized and two-sided.
        assert!(sector_contains(&l1, 0.9, &v(&[-0.1, 0.0, 0.0])));
        assert!(!sector_contains(&l1, 0.9, &v(&[0.0, 0.0, 0.0])));
    }

    #[test]
    fn sector_at_threshold_is_outside() {
        let l1 = Subspace::coordinate(2, &[0]).unwrap();
        let g: f64 = 0.9;
        let x = v(&[g, (1.0 - g * g).sqrt()]);
        assert!(!sector_contains(&l1, g, &x));
    }

    #[test]
    fn principal_angle_examples() {
        let a = Subspace::coordinate(2, &[0]).unwrap();
        let b = Subspace::coordinate(2, &[1]).unwrap();
        let c = Subspace::line(&v(&[1.0, 1.0])).unwrap();
        assert_abs_diff_eq!(principal_angles(&a, &a).unwrap().angles[0], 0.0, epsilon = 1e-7);
        assert_abs_diff_eq!(
            principal_angles(&a, &b).unwrap().angles[0],
            std::f64::consts::FRAC_PI_2,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            principal_angles(&a, &c).unwrap().angles[0],
            std::f64::consts::FRAC_PI_4,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(chordal_distance(&a, &a).unwrap(), 0.0, epsilon = 1e-7);
        assert_abs_diff_eq!(chordal_distance(&a, &b).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            chordal_distance(&a, &c).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-12
        );
        let p = Subspace::coordinate(2, &[0, 1]).unwrap();
        assert!(principal_angles(&a, &p).is_err());
    }

    #[test]
    fn principal_angles_are_sorted() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Subspace::random(6, 3, &mut rng).unwrap();
        let b = Subspace::random(6, 3, &mut rng).unwrap();
        let pa = principal_angles(&a, &b).unwrap();
        assert!(pa.angles.windows(2).all(|w| w[0] <= w[1]));
        assert!(pa.angles.iter().all(|t| (0.0..=std::f64::consts::FRAC_PI_2).contains(t)));
        let dc = chordal_distance(&a, &b).unwrap();
        assert_abs_diff_eq!(dc, chordal_distance(&b, &a).unwrap(), epsilon = 1e-12);
        assert!(dc <= 3f64.sqrt() + 1e-12);
    }

    #[test]
    fn complement_examples() {
        let c = orthonormal_complement_basis(&[v(&[1.0, 0.0, 0.0])], 3).unwrap();
        assert_eq!(c.dim(), 2);
        assert_abs_diff_eq!(c.column(0), v(&[0.0, 1.0, 0.0]), epsilon = 1e-15);
        assert_abs_diff_eq!(c.column(1), v(&[0.0, 0.0, 1.0]), epsilon = 1e-15);

        let full = orthonormal_complement_basis(&[], 2).unwrap();
        assert_eq!(full.dim(), 2);

        let s = 0.5f64.sqrt();
        let c = orthonormal_complement_basis(&[v(&[s, s, 0.0]), v(&[0.0, 0.0, 1.0])], 3).unwrap();
        assert_eq!(c.dim(), 1);
        // Row-reduction oracle: x1 + x2 = 0, x3 = 0  =>  x ∝ (1, -1, 0).
        let col = c.column(0);
        let expected = v(&[s, -s, 0.0]);
        assert!((&col - &expected).norm() < 1e-12 || (&col + &expected).norm() < 1e-12);

        assert!(matches!(
            orthonormal_complement_basis(&[v(&[1.0, 0.0]), v(&[0.0, 1.0])], 2),
            Err(Error::NoComplement(2))
        ));
    }

    #[test]
    fn restrict_and_lift_examples() {
        let b = Subspace::coordinate(3, &[0, 1]).unwrap();
        let lifted = restrict_and_lift(&b, &[v(&[0.0, 0.0, 1.0])], |pts| {
            assert_eq!(pts[0], v(&[0.0, 0.0]));
            Subspace::coordinate(2, &[0])
        })
        .unwrap();
        assert!(lifted.is_subspace_of(&b, 1e-12));

        let lifted = restrict_and_lift(&b, &[v(&[0.6, 0.0, 0.8])], |pts| {
            assert_abs_diff_eq!(pts[0], v(&[0.6, 0.0]), epsilon = 1e-15);
            Subspace::coordinate(2, &[1])
        })
        .unwrap();
        assert_abs_diff_eq!(lifted.column(0), v(&[0.0, 1.0, 0.0]), epsilon = 1e-15);

        let full = Subspace::full(3);
        let inner = Subspace::line(&v(&[1.0, 2.0, 2.0])).unwrap();
        let lifted = restrict_and_lift(&full, &[], |_| Ok(inner.clone())).unwrap();
        assert_abs_diff_eq!(lifted.basis(), inner.basis(), epsilon = 1e-15);

        let err = restrict_and_lift(&b, &[], |_| Err(Error::NotFound { dim: 1, examined: 0 }));
        assert!(matches!(err, Err(Error::NotFound { .. })));
    }

    #[test]
    fn subspace_json_layout_is_column_major() {
        let s = Subspace::coordinate(3, &[0, 2]).unwrap();
        let json = serde_json::to_value(&s).unwrap();
        assert_eq!(json["ambient_dim"], 3);
        assert_eq!(json["dim"], 2);
        assert_eq!(json["basis"][1], serde_json::json!([0.0, 0.0, 1.0]));
        let back: Subspace = serde_json::from_value(json).unwrap();
        assert_eq!(back, s);

        let bad = serde_json::json!({"ambient_dim": 2, "dim": 2, "basis": [[1.0, 0.0], [1.0, 0.0]]});
        assert!(serde_json::from_value::<Subspace>(bad).is_err());
    }

    #[test]
    fn snap_unit_hits_exact_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut exact = 0;
        for _ in 0..2000 {
            let d = rng.random_range(1..=32);
            let v = snap_unit(&gaussian_vector(d, &mut rng)).unwrap();
            assert!((v.norm() - 1.0).abs() < 1e-15);
            if v.dot(&v) == 1.0 {
                exact += 1;
            }
        }
        assert_eq!(exact, 2000);
    }
}
