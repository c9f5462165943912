//! Block Hilbert-space bookkeeping: the canonical signature matrix J,
//! inertia of Hermitian forms, and Nevanlinna sample checks.
//!
//! The state space is H (+) Hhat (+) H; every module downstream indexes
//! blocks through [`BlockSignature`].

use serde::{Deserialize, Serialize};

use crate::error::{Result, WkError};
use crate::linalg::{self, c, cr, eigh, norm2, CMat};

/// Dimensions of the block decomposition. `nu_minus = nu_plus + nu_hat` and
/// the full space has dimension `n = nu_plus + nu_minus`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSignature {
    pub nu_plus: usize,
    pub nu_hat: usize,
}

impl BlockSignature {
    pub fn new(nu_plus: usize, nu_hat: usize) -> Result<Self> {
        let sig = BlockSignature { nu_plus, nu_hat };
        if sig.n() == 0 {
            return Err(WkError::ShapeMismatch(
                "block signature must have n >= 1".into(),
            ));
        }
        Ok(sig)
    }

    /// dim H0 = nu_plus + nu_hat.
    pub fn nu_minus(&self) -> usize {
        self.nu_plus + self.nu_hat
    }

    /// dim of the full space.
    pub fn n(&self) -> usize {
        self.nu_plus + self.nu_minus()
    }

    /// Index ranges of the three blocks inside the full space.
    pub fn h_range(&self) -> std::ops::Range<usize> {
        0..self.nu_plus
    }

    pub fn hat_range(&self) -> std::ops::Range<usize> {
        self.nu_plus..self.nu_minus()
    }

    pub fn h1_range(&self) -> std::ops::Range<usize> {
        self.nu_minus()..self.n()
    }
}

/// Signature matrix [[0, 0, -I], [0, iI, 0], [I, 0, 0]]; skew-adjoint and
/// unitary for every signature.
pub fn build_j(sig: &BlockSignature) -> CMat {
    let n = sig.n();
    let np = sig.nu_plus;
    let nh = sig.nu_hat;
    let mut j = linalg::zeros(n, n);
    for k in 0..np {
        j[(k, np + nh + k)] = cr(-1.0);
        j[(np + nh + k, k)] = cr(1.0);
    }
    for k in 0..nh {
        j[(np + k, np + k)] = c(0.0, 1.0);
    }
    j
}

/// Counts of eigenvalues above, below and inside [-cut, cut] where
/// `cut = tol * ||h||_2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Inertia {
    pub pos: usize,
    pub neg: usize,
    pub zero: usize,
}

/// Inertia of a Hermitian matrix. Fails with `NonHermitian` when the
/// Hermiticity residual exceeds `tol * ||h||`.
pub fn inertia(h: &CMat, tol: f64) -> Result<Inertia> {
    linalg::require_hermitian(h, tol)?;
    if h.nrows() == 0 {
        return Ok(Inertia {
            pos: 0,
            neg: 0,
            zero: 0,
        });
    }
    let (vals, _) = eigh(&linalg::herm_part(h))?;
    let cut = tol * norm2(h).max(1.0);
    let mut out = Inertia {
        pos: 0,
        neg: 0,
        zero: 0,
    };
    for &v in vals.iter() {
        if v > cut {
            out.pos += 1;
        } else if v < -cut {
            out.neg += 1;
        } else {
            out.zero += 1;
        }
    }
    Ok(out)
}

pub const INERTIA_TOL: f64 = 1e-10;

/// Defect of a Nevanlinna sample set: the accumulated negative part of
/// Im(lambda) * Im m(lambda) over all samples plus the accumulated symmetry
/// mismatch ||m(conj(lambda))^* - m(lambda)|| over conjugate pairs present in
/// the set. A valid sample set yields a value at noise level.
pub fn nevanlinna_defect(samples: &[(linalg::C64, CMat)]) -> Result<f64> {
    let mut defect = 0.0;
    for (lambda, m) in samples {
        let w = linalg::imag_part(m).mapv(|z| z * cr(lambda.im));
        let (vals, _) = eigh(&w)?;
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        if min.is_finite() && min < 0.0 {
            defect += -min;
        }
    }
    for (i, (la, ma)) in samples.iter().enumerate() {
        for (lb, mb) in samples.iter().skip(i + 1) {
            if (la.conj() - lb).norm() < 1e-12 {
                defect += norm2(&(&linalg::adjoint(mb) - ma));
            }
        }
    }
    Ok(defect)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{adjoint, eye, zeros, I};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn j_for_sig_1_1_matches_block_form() {
        let sig = BlockSignature::new(1, 1).unwrap();
        let j = build_j(&sig);
        let expect = array![
            [cr(0.0), cr(0.0), cr(-1.0)],
            [cr(0.0), I, cr(0.0)],
            [cr(1.0), cr(0.0), cr(0.0)]
        ];
        assert_abs_diff_eq!(norm2(&(&j - &expect)), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn j_for_hamiltonian_sig() {
        let sig = BlockSignature::new(1, 0).unwrap();
        let j = build_j(&sig);
        let expect = array![[cr(0.0), cr(-1.0)], [cr(1.0), cr(0.0)]];
        assert_abs_diff_eq!(norm2(&(&j - &expect)), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn j_is_skew_adjoint_and_unitary() {
        for (np, nh) in [(1usize, 0usize), (1, 1), (2, 1), (3, 2)] {
            let sig = BlockSignature::new(np, nh).unwrap();
            let j = build_j(&sig);
            assert!(norm2(&(&adjoint(&j) + &j)) < 1e-14);
            assert!(norm2(&(adjoint(&j).dot(&j) - eye(sig.n()))) < 1e-14);
        }
    }

    #[test]
    fn inertia_basics() {
        let id = eye(3);
        let i3 = inertia(&id, INERTIA_TOL).unwrap();
        assert_eq!((i3.pos, i3.neg, i3.zero), (3, 0, 0));

        let z = zeros(2, 2);
        let iz = inertia(&z, INERTIA_TOL).unwrap();
        assert_eq!((iz.pos, iz.neg, iz.zero), (0, 0, 2));

        // -iJ for sig(1,1): direct eigensolve gives {1, 1, -1}
        let sig = BlockSignature::new(1, 1).unwrap();
        let m = build_j(&sig).mapv(|z| z * c(0.0, -1.0));
        let (vals, _) = eigh(&m).unwrap();
        let mut v: Vec<f64> = vals.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_abs_diff_eq!(v[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[2], 1.0, epsilon = 1e-12);
        let im = inertia(&m, INERTIA_TOL).unwrap();
        assert_eq!((im.pos, im.neg, im.zero), (2, 1, 0));
    }

    #[test]
    fn inertia_of_minus_i_j_is_nu_minus_nu_plus() {
        for (np, nh) in [(1usize, 0usize), (1, 1), (2, 1), (2, 3)] {
            let sig = BlockSignature::new(np, nh).unwrap();
            let m = build_j(&sig).mapv(|z| z * c(0.0, -1.0));
            let i = inertia(&m, INERTIA_TOL).unwrap();
            assert_eq!((i.pos, i.neg, i.zero), (sig.nu_minus(), sig.nu_plus, 0));
        }
    }

    #[test]
    fn inertia_rejects_non_hermitian() {
        let m = array![[cr(0.0), cr(1.0)], [cr(0.0), cr(0.0)]];
        assert!(matches!(
            inertia(&m, INERTIA_TOL),
            Err(WkError::NonHermitian { .. })
        ));
    }

    #[test]
    fn nevanlinna_defect_examples() {
        // m(lambda) = -1/lambda: Im m <= 0 on the lower half-plane.
        let m = |l: crate::linalg::C64| array![[-1.0 / l]];
        let samples = vec![(c(0.0, 1.0), m(c(0.0, 1.0))), (c(0.0, -1.0), m(c(0.0, -1.0)))];
        assert!(nevanlinna_defect(&samples).unwrap() < 1e-14);

        // Hermitian constant
        let h = array![[cr(2.0), c(0.0, 1.0)], [c(0.0, -1.0), cr(0.5)]];
        let samples = vec![(c(0.3, 0.9), h.clone()), (c(0.3, -0.9), h.clone())];
        assert!(nevanlinna_defect(&samples).unwrap() < 1e-14);

        // anti-holomorphic impostor m(lambda) = conj(lambda)
        let imp = |l: crate::linalg::C64| array![[l.conj()]];
        let samples = vec![(c(0.0, 1.0), imp(c(0.0, 1.0))), (c(0.0, -1.0), imp(c(0.0, -1.0)))];
        assert!(nevanlinna_defect(&samples).unwrap() >= 2.0 - 1e-12);
    }

    proptest! {
        #[test]
        fn inertia_is_congruence_invariant(seed in 0u64..200) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1..=6usize);
            // random Hermitian with a chance of zero eigenvalues
            let mut d = zeros(n, n);
            for i in 0..n {
                let pick: u8 = rng.gen_range(0..3);
                d[(i, i)] = cr(match pick {
                    0 => rng.gen_range(0.2..2.0),
                    1 => -rng.gen_range(0.2..2.0),
                    _ => 0.0,
                });
            }
            let mut q = zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    q[(i, j)] = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                }
            }
            // make q comfortably invertible
            let q = &q + &eye(n).mapv(|z| z * cr(3.0));
            let h = q.dot(&d).dot(&adjoint(&q));
            // h = q d q^*; congruence preserves inertia
            let i_d = inertia(&d, 1e-9).unwrap();
            let i_h = inertia(&h, 1e-9).unwrap();
            prop_assert_eq!((i_d.pos, i_d.neg, i_d.zero), (i_h.pos, i_h.neg, i_h.zero));
        }
    }
}
