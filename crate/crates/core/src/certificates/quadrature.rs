//! Gauss–Legendre nodes and weights, used for the θ-integrals of the
//! averaged Hessians.

use crate::scalar::{real, real_of_usize, Scalar};

/// Nodes and weights on [0, 1]; exact for polynomials of degree 2n − 1.
pub fn gauss_legendre_unit<R: Scalar>(n: usize) -> (Vec<R>, Vec<R>) {
    let (nodes, weights) = gauss_legendre::<R>(n);
    let half = real::<R>(0.5);
    (
        nodes.iter().map(|x| (*x + R::one()) * half).collect(),
        weights.iter().map(|w| *w * half).collect(),
    )
}

/// Nodes and weights on [−1, 1] by Newton iteration on the Legendre
/// recurrence, seeded with the Chebyshev-angle approximation.
pub fn gauss_legendre<R: Scalar>(n: usize) -> (Vec<R>, Vec<R>) {
    assert!(n >= 1, "quadrature order must be at least 1");
    let mut nodes = vec![R::zero(); n];
    let mut weights = vec![R::zero(); n];
    let nf = real_of_usize::<R>(n);
    let tol = R::default_epsilon() * real::<R>(8.0);
    for k in 0..(n + 1) / 2 {
        let kf = real_of_usize::<R>(k);
        let mut x = (R::pi() * (kf + real::<R>(0.75)) / (nf + real::<R>(0.5))).cos();
        let mut dp = R::one();
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative::<R>(n, x);
            dp = d;
            let delta = p / d;
            x -= delta;
            if delta.abs() <= tol * (R::one() + x.abs()) {
                break;
            }
        }
        let w = real::<R>(2.0) / ((R::one() - x * x) * dp * dp);
        nodes[k] = -x;
        nodes[n - 1 - k] = x;
        weights[k] = w;
        weights[n - 1 - k] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = R::zero();
        let (_, d) = legendre_with_derivative::<R>(n, R::zero());
        weights[n / 2] = real::<R>(2.0) / (d * d);
    }
    (nodes, weights)
}

fn legendre_with_derivative<R: Scalar>(n: usize, x: R) -> (R, R) {
    let mut p0 = R::one();
    let mut p1 = x;
    for k in 2..=n {
        let kf = real_of_usize::<R>(k);
        let p2 = ((real::<R>(2.0) * kf - R::one()) * x * p1 - (kf - R::one()) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (R::one(), R::zero());
    }
    if n == 1 {
        return (x, R::one());
    }
    let d = real_of_usize::<R>(n) * (x * p1 - p0) / (x * x - R::one());
    (p1, d)
}
