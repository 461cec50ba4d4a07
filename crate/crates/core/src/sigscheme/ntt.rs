//! Negacyclic number-theoretic transform over `Z_q[X]/(X^n + 1)`, q = 12289.
//!
//! Output is in bit-reversed evaluation order. The forward transform is
//! Cooley-Tukey, the inverse is Gentleman-Sande followed by scaling with `n^-1`.

use std::sync::OnceLock;

use super::params::MODULUS;

const Q: u32 = MODULUS;

#[inline]
fn mul(a: u32, b: u32) -> u32 {
    ((a as u64 * b as u64) % Q as u64) as u32
}

#[inline]
fn add(a: u32, b: u32) -> u32 {
    let s = a + b;
    if s >= Q {
        s - Q
    } else {
        s
    }
}

#[inline]
fn sub(a: u32, b: u32) -> u32 {
    if a >= b {
        a - b
    } else {
        a + Q - b
    }
}

pub(crate) fn pow_mod(mut base: u32, mut exp: u64) -> u32 {
    let mut acc = 1u32;
    base %= Q;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul(acc, base);
        }
        base = mul(base, base);
        exp >>= 1;
    }
    acc
}

/// Primitive 2048-th root of unity mod q; the degree-n transform evaluates
/// at odd powers of `ROOT_2048^(1024/n)`. Public keys are encoded in this
/// evaluation order, so the root is fixed rather than searched for.
pub(crate) const ROOT_2048: u32 = 7;

struct Tables {
    zetas: Vec<u32>,
    n_inv: u32,
}

impl Tables {
    fn build(logn: u32) -> Self {
        let n = 1usize << logn;
        let psi = pow_mod(ROOT_2048, (1024 / n) as u64);
        let zetas = (0..n)
            .map(|k| {
                let rev = (k as u32).reverse_bits() >> (32 - logn);
                pow_mod(psi, rev as u64)
            })
            .collect();
        let n_inv = pow_mod(n as u32, Q as u64 - 2);
        Tables { zetas, n_inv }
    }
}

fn tables(n: usize) -> &'static Tables {
    static T512: OnceLock<Tables> = OnceLock::new();
    static T1024: OnceLock<Tables> = OnceLock::new();
    match n {
        512 => T512.get_or_init(|| Tables::build(9)),
        1024 => T1024.get_or_init(|| Tables::build(10)),
        _ => panic!("unsupported ring degree {n}"),
    }
}

/// In-place forward transform; input coefficients must lie in `[0, q)`.
pub fn forward(a: &mut [u32]) {
    let n = a.len();
    let t = tables(n);
    let mut k = 1;
    let mut len = n / 2;
    while len >= 1 {
        let mut start = 0;
        while start < n {
            let zeta = t.zetas[k];
            k += 1;
            for j in start..start + len {
                let v = mul(zeta, a[j + len]);
                a[j + len] = sub(a[j], v);
                a[j] = add(a[j], v);
            }
            start += 2 * len;
        }
        len >>= 1;
    }
}

/// In-place inverse transform, including the final `n^-1` scaling.
pub fn inverse(a: &mut [u32]) {
    let n = a.len();
    let t = tables(n);
    let mut k = n;
    let mut len = 1;
    while len < n {
        let mut start = 0;
        while start < n {
            k -= 1;
            let zeta = Q - t.zetas[k];
            for j in start..start + len {
                let u = a[j];
                a[j] = add(u, a[j + len]);
                a[j + len] = mul(zeta, sub(u, a[j + len]));
            }
            start += 2 * len;
        }
        len <<= 1;
    }
    for x in a.iter_mut() {
        *x = mul(*x, t.n_inv);
    }
}

/// Pointwise product of two transformed vectors, written into `a`.
pub fn pointwise(a: &mut [u32], b: &[u32]) {
    for (x, &y) in a.iter_mut().zip(b) {
        *x = mul(*x, y);
    }
}

/// Maps a signed small integer into `[0, q)`.
#[inline]
pub fn reduce_signed(v: i32) -> u32 {
    v.rem_euclid(Q as i32) as u32
}

/// Centered representative in `(-q/2, q/2]`.
#[inline]
pub fn center(v: u32) -> i32 {
    if v > Q / 2 {
        v as i32 - Q as i32
    } else {
        v as i32
    }
}
