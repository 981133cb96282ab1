#![allow(dead_code)]

use waxkit::{CMatrix, C64};

pub fn one() -> C64 {
    C64::new(1.0, 0.0)
}

/// Places an identity of size `n` with its top-left corner at `(r, c)`.
fn put_identity(a: &mut CMatrix, r: usize, c: usize, n: usize) {
    for i in 0..n {
        a.set(r + i, c + i, one());
    }
}

/// The 100×61 sparse combiner with 158 ones for M=100, K=10, L=4.
pub fn sparse_example_a() -> CMatrix {
    let mut a = CMatrix::zeros(100, 61);
    put_identity(&mut a, 0, 0, 61);
    put_identity(&mut a, 61, 0, 39);
    put_identity(&mut a, 61, 39, 22);
    put_identity(&mut a, 83, 39, 17);
    for rep in 0..3 {
        put_identity(&mut a, 83 + 5 * rep, 56, 5);
    }
    put_identity(&mut a, 98, 56, 2);
    put_identity(&mut a, 98, 58, 2);
    a
}

pub fn count_ones(a: &CMatrix) -> usize {
    a.row_major().iter().filter(|z| **z == one()).count()
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    CMatrix::from_fn(a.rows() * b.rows(), a.cols() * b.cols(), |i, j| {
        a.get(i / b.rows(), j / b.cols()) * b.get(i % b.rows(), j % b.cols())
    })
}

pub fn hstack(a: &CMatrix, b: &CMatrix) -> CMatrix {
    assert_eq!(a.rows(), b.rows());
    CMatrix::from_fn(a.rows(), a.cols() + b.cols(), |i, j| {
        if j < a.cols() {
            a.get(i, j)
        } else {
            b.get(i, j - a.cols())
        }
    })
}

pub fn rank(m: &CMatrix) -> usize {
    waxkit::numeric_rank(m, None).unwrap()
}
