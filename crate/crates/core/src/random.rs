//! Seeded random constructions.
//!
//! Every stochastic path in the crate funnels through a [`ChaCha8Rng`] so
//! that reports and counterexamples are reproducible from a single recorded
//! seed.

use num_complex::Complex64 as C64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::events::Partition;
use crate::hilbert::{CMatrix, Event, StateVector, Tolerances};

/// Seed used when the caller (CLI flag, env var) supplies none.
pub const DEFAULT_SEED: u64 = 0x5EED_0001;

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard complex Gaussian (real and imaginary parts independent N(0,1)).
pub fn complex_gaussian(rng: &mut impl Rng) -> C64 {
    // Box-Muller on two uniforms
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * std::f64::consts::PI * u2;
    C64::new(r * theta.cos(), r * theta.sin())
}

pub fn random_state(dim: usize, rng: &mut impl Rng) -> StateVector {
    StateVector::new((0..dim).map(|_| complex_gaussian(rng)).collect()).expect("dim >= 1")
}

pub fn random_unit_state(dim: usize, rng: &mut impl Rng) -> StateVector {
    loop {
        let v = random_state(dim, rng);
        if v.norm() > 1e-6 {
            return v.normalized().expect("nonzero");
        }
    }
}

/// Haar-ish random unitary: QR of a complex Ginibre matrix with the phases
/// of the R diagonal folded into Q.
pub fn random_unitary(dim: usize, rng: &mut impl Rng) -> CMatrix {
    let g = CMatrix::from_fn(dim, dim, |_, _| complex_gaussian(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 {
            d / C64::new(d.norm(), 0.0)
        } else {
            C64::new(1.0, 0.0)
        };
        let col = q.column(j).into_owned() * phase;
        q.set_column(j, &col);
    }
    q
}

/// Random unit vector inside an event's subspace.
pub fn random_state_in(event: &Event, rng: &mut impl Rng) -> StateVector {
    assert!(event.rank() > 0, "cannot sample from the zero subspace");
    let coeffs = CMatrix::from_fn(event.rank(), 1, |_, _| complex_gaussian(rng));
    let ambient = event.frame() * coeffs;
    StateVector::from_cvector(ambient.column(0).into_owned())
        .expect("ambient dim >= 1")
        .normalized()
        .expect("Gaussian sample is nonzero a.s.")
}

/// Random orthogonal partition with the given block ranks, built from the
/// columns of one random unitary.
pub fn random_partition(block_ranks: &[usize], rng: &mut impl Rng, tol: &Tolerances) -> Partition {
    let dim: usize = block_ranks.iter().sum();
    assert!(dim >= 1, "partition must cover at least one dimension");
    let u = random_unitary(dim, rng);
    let mut named = Vec::with_capacity(block_ranks.len());
    let mut col = 0;
    for (i, r) in block_ranks.iter().enumerate() {
        let frame = u.columns(col, *r).into_owned();
        col += r;
        named.push((
            format!("b{i}"),
            Event::from_frame(frame, tol).expect("unitary columns are orthonormal"),
        ));
    }
    Partition::new(named, tol).expect("construction is orthogonal and complete")
}

/// Splits `dim` into between `min_blocks` and `max_blocks` positive ranks.
pub fn random_block_ranks(
    dim: usize,
    min_blocks: usize,
    max_blocks: usize,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let n = rng.random_range(min_blocks..=max_blocks.min(dim));
    let mut cuts: Vec<usize> = Vec::with_capacity(n + 1);
    cuts.push(0);
    let mut interior: Vec<usize> = (1..dim).collect();
    // Fisher-Yates prefix picks n-1 distinct interior cut points
    for i in 0..n - 1 {
        let j = rng.random_range(i..interior.len());
        interior.swap(i, j);
    }
    let mut chosen: Vec<usize> = interior[..n - 1].to_vec();
    chosen.sort_unstable();
    cuts.extend(chosen);
    cuts.push(dim);
    cuts.windows(2).map(|w| w[1] - w[0]).collect()
}

/// A random phase on the unit circle.
pub fn random_phase(rng: &mut impl Rng) -> C64 {
    let theta = 2.0 * std::f64::consts::PI * rng.random::<f64>();
    C64::new(theta.cos(), theta.sin())
}

/// Random skew-Hermitian generator scaled to unit operator norm.
pub fn random_unit_skew_generator(dim: usize, rng: &mut impl Rng) -> CMatrix {
    let g = CMatrix::from_fn(dim, dim, |_, _| complex_gaussian(rng));
    let h = (&g + g.adjoint()).scale(0.5);
    let norm = crate::hilbert::op_norm(&h);
    h.map(|x| C64::new(0.0, 1.0) * x / C64::new(norm.max(f64::MIN_POSITIVE), 0.0))
}
