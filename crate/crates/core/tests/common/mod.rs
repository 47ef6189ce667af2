#![allow(dead_code)]

use batchbound::geometry::{Subspace, UnitVector};
use batchbound::mdp::{Family, HardInstance, NestedChain, Sign};
use nalgebra::DVector;

pub fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

pub fn e(d: usize, i: usize) -> DVector<f64> {
    UnitVector::basis(d, i).into_inner()
}

/// `min_t ‖u − t·v‖` by ternary search; for unit `u`, `v` this is the sine of the angle between the lines.
pub fn line_distance_by_search(u: &DVector<f64>, v: &DVector<f64>) -> f64 {
    let f = |t: f64| (u - t * v).norm();
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    for _ in 0..200 {
        let a = lo + (hi - lo) / 3.0;
        let b = hi - (hi - lo) / 3.0;
        if f(a) < f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    f(0.5 * (lo + hi))
}

/// `max xᵀu/‖x‖` over `n` unit directions `u` of `H`, sampled uniformly on its
/// half circle (dim 2) or at `±h` (dim 1).
pub fn grid_max_cosine(h: &Subspace, x: &DVector<f64>, n: usize) -> f64 {
    let xn = x.norm();
    match h.dim() {
        1 => (x.dot(&h.column(0)) / xn).abs(),
        2 => {
            let a = x.dot(&h.column(0)) / xn;
            let b = x.dot(&h.column(1)) / xn;
            let step = std::f64::consts::PI / n as f64;
            (0..n)
                .map(|i| {
                    let t = i as f64 * step;
                    (a * t.cos() + b * t.sin()).abs()
                })
                .fold(0.0, f64::max)
        }
        m => panic!("grid oracle only handles dim 1 or 2, got {m}"),
    }
}

/// Instance with coordinate chain `B_i = span{e_0..e_{dims[i]-1}}` and the given `w`.
pub fn coordinate_instance(family: Family, gamma: f64, sign: Sign, dims: &[usize], w: &[f64]) -> HardInstance {
    let d = w.len();
    let mut chain = NestedChain::new(d);
    for &m in dims {
        chain.push(Subspace::coordinate(d, &(0..m).collect::<Vec<_>>()).unwrap()).unwrap();
    }
    chain.close(UnitVector::from_slice(w).unwrap()).unwrap();
    HardInstance::new(family, gamma, sign, chain).unwrap()
}

pub fn assert_close(a: &DVector<f64>, b: &DVector<f64>, tol: f64) {
    assert_eq!(a.len(), b.len());
    let diff = (a - b).amax();
    assert!(diff <= tol, "vectors differ by {diff:e}:\n{a}\n{b}");
}

/// `a × b` in R³.
pub fn cross(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    v(&[
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])
}
