//! Numerical propagation of the system: fundamental matrices, the
//! distinguished solutions phi/psi, square-integrable solution bases and
//! deficiency indices.

use ndarray::s;

use crate::blockspace::{inertia, INERTIA_TOL};
use crate::error::{Result, WkError};
use crate::linalg::{self, adjoint, c, cr, eye, zeros, CMat, C64, I};
use crate::ode::{self, OdeSolution};
use crate::quad;
use crate::system::{EndpointDescriptor, SymmetricSystem};

#[derive(Debug, Clone, Copy)]
pub struct PropOpts {
    pub rtol: f64,
    pub atol: f64,
    pub mode_tol: f64,
    pub gram_panels: usize,
}

impl Default for PropOpts {
    fn default() -> Self {
        PropOpts {
            rtol: 1e-10,
            atol: 1e-12,
            mode_tol: 1e-6,
            gram_panels: 24,
        }
    }
}

/// Fundamental matrix solution Y(., lambda), Y(a) = I, as a dense solution
/// object on [a, t_end].
pub fn fundamental_solution(
    sys: &SymmetricSystem,
    lambda: C64,
    t_end: f64,
    opts: &PropOpts,
) -> Result<OdeSolution> {
    ode::integrate_linear(
        |t| sys.rhs_matrix(t, lambda),
        sys.a,
        t_end,
        eye(sys.n()),
        opts.rtol,
        opts.atol,
    )
}

pub fn fundamental_matrix(
    sys: &SymmetricSystem,
    lambda: C64,
    t: f64,
    opts: &PropOpts,
) -> Result<CMat> {
    Ok(fundamental_solution(sys, lambda, t, opts)?.eval(t))
}

enum BasisRep {
    /// Columns Y(t) * coef on the working interval.
    Interval { sol: OdeSolution, coef: Option<CMat> },
    /// Decaying tail modes, optionally propagated back over [a, t0].
    Tail {
        interval: Option<OdeSolution>,
        t0: f64,
        rates: Vec<C64>,
        vecs: CMat,
        scales: Vec<f64>,
    },
}

/// Basis of solutions with finite Delta-norm at a fixed nonreal lambda.
pub struct SolutionBasis {
    pub lambda: C64,
    pub k: usize,
    rep: BasisRep,
    /// Condition number of the selected eigenvector block (tail case); large
    /// values flag a nearly defective mode matrix.
    pub mode_condition: Option<f64>,
}

impl SolutionBasis {
    /// n x k matrix of basis column values at t.
    pub fn eval(&self, t: f64) -> CMat {
        match &self.rep {
            BasisRep::Interval { sol, coef } => {
                let y = sol.eval(t);
                match coef {
                    Some(cm) => y.dot(cm),
                    None => y,
                }
            }
            BasisRep::Tail {
                interval,
                t0,
                rates,
                vecs,
                scales,
            } => {
                if t < *t0 {
                    let sol = interval.as_ref().expect("interval part");
                    let mut y = sol.eval(t);
                    for (j, sc) in scales.iter().enumerate() {
                        y.column_mut(j).mapv_inplace(|z| z / cr(*sc));
                    }
                    y
                } else {
                    let mut y = zeros(vecs.nrows(), rates.len());
                    for (j, kappa) in rates.iter().enumerate() {
                        let e = (kappa * cr(t - t0)).exp() / cr(scales[j]);
                        for i in 0..vecs.nrows() {
                            y[(i, j)] = vecs[(i, j)] * e;
                        }
                    }
                    y
                }
            }
        }
    }

    /// Endpoint data used by the boundary maps: values at the working end
    /// for interval-type bases, nothing for decaying tails.
    pub fn end_data(&self) -> Option<CMat> {
        match &self.rep {
            BasisRep::Interval { sol, coef } => {
                let y = sol.end_value().clone();
                Some(match coef {
                    Some(cm) => y.dot(cm),
                    None => y,
                })
            }
            BasisRep::Tail { .. } => None,
        }
    }

    pub fn decay_rates(&self) -> Option<&[C64]> {
        match &self.rep {
            BasisRep::Tail { rates, .. } => Some(rates),
            _ => None,
        }
    }

    fn tail_parts(&self) -> Option<(f64, &[C64], &CMat, &[f64])> {
        match &self.rep {
            BasisRep::Tail {
                t0,
                rates,
                vecs,
                scales,
                ..
            } => Some((*t0, rates, vecs, scales)),
            _ => None,
        }
    }
}

/// Data subspaces at an abstract endpoint: columns of `s_plus`/`s_minus`
/// span the endpoint values admitted for solutions in the upper/lower
/// half-plane.
///
/// The selection aims the mismatch form r = -iJ - omega_b at zero across the
/// two spaces: when ker r is rich enough, s_plus is built from ker r plus
/// eigenvectors of r and s_minus from their r-orthogonal complement, which
/// keeps the cross-half-plane pairing (and with it the symmetry relations of
/// the X blocks) exact. Otherwise both spaces fall back to the eigenvector
/// order of the declared form.
pub fn abstract_data_subspaces(sys: &SymmetricSystem, omega_b: &CMat) -> Result<(CMat, CMat)> {
    let n = sys.n();
    let inert = inertia(omega_b, INERTIA_TOL)?;
    let (p, q) = (inert.pos, inert.neg);
    let n_minus = sys.sig.nu_minus() + q;
    let n_plus = sys.sig.nu_plus + p;
    if n_minus > n || n_plus > n {
        return Err(WkError::UnsupportedEndpoint(format!(
            "declared form implies defect numbers ({n_plus}, {n_minus}) beyond n = {n}"
        )));
    }
    // r = -iJ - omega_b measures the mismatch between the declared form and
    // the value of the Lagrange bracket at the cut point.
    let r = &sys.j.mapv(|z| z * c(0.0, -1.0)) - omega_b;
    let (rvals, rvecs) = linalg::eigh(&r)?;
    let rcut = 1e-10 * linalg::norm2(&r).max(1.0);
    // r eigendirections ordered by |eigenvalue| ascending (kernel first)
    let mut ridx: Vec<usize> = (0..n).collect();
    ridx.sort_by(|&a, &b| {
        rvals[a]
            .abs()
            .partial_cmp(&rvals[b].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    let k0 = ridx.iter().filter(|&&i| rvals[i].abs() <= rcut).count();
    let extra = n_plus.saturating_sub(k0);
    if extra <= n - n_minus {
        // exact pairing: s_plus = ker r (+) smallest nonzero eigendirections;
        // s_minus = orthogonal complement of the nonzero selected directions
        let mut s_plus = zeros(n, n_plus);
        for (j, &idx) in ridx.iter().take(n_plus).enumerate() {
            s_plus.column_mut(j).assign(&rvecs.column(idx));
        }
        let mut s_minus = zeros(n, n_minus);
        let excluded: Vec<usize> = ridx[k0..k0 + extra].to_vec();
        let mut col = 0usize;
        for &idx in ridx.iter() {
            if excluded.contains(&idx) {
                continue;
            }
            if col == n_minus {
                break;
            }
            s_minus.column_mut(col).assign(&rvecs.column(idx));
            col += 1;
        }
        if col == n_minus {
            return Ok((s_plus, s_minus));
        }
    }
    // fallback: eigenvector order of the declared form
    let (vals, vecs) = linalg::eigh(omega_b)?;
    let cut = INERTIA_TOL * linalg::norm2(omega_b).max(1.0);
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for (i, &v) in vals.iter().enumerate() {
        if v < -cut {
            order.push(i);
        }
    }
    for (i, &v) in vals.iter().enumerate() {
        if v.abs() <= cut {
            order.push(i);
        }
    }
    for (i, &v) in vals.iter().enumerate() {
        if v > cut {
            order.push(i);
        }
    }
    let mut s_minus = zeros(n, n_minus);
    for (j, &idx) in order.iter().take(n_minus).enumerate() {
        s_minus.column_mut(j).assign(&vecs.column(idx));
    }
    let mut s_plus = zeros(n, n_plus);
    for (j, &idx) in order.iter().take(n_plus).enumerate() {
        s_plus.column_mut(j).assign(&vecs.column(idx));
    }
    Ok((s_plus, s_minus))
}

/// Basis of the solution space with finite Delta-norm at `lambda`
/// (Im lambda != 0).
pub fn l2_basis(sys: &SymmetricSystem, lambda: C64, opts: &PropOpts) -> Result<SolutionBasis> {
    if lambda.im == 0.0 {
        return Err(WkError::PreconditionFailed(
            "l2 basis requires Im lambda != 0".into(),
        ));
    }
    match &sys.endpoint {
        EndpointDescriptor::Regular { b } => {
            let sol = fundamental_solution(sys, lambda, *b, opts)?;
            Ok(SolutionBasis {
                lambda,
                k: sys.n(),
                rep: BasisRep::Interval { sol, coef: None },
                mode_condition: None,
            })
        }
        EndpointDescriptor::AbstractForm { t_cut, omega_b } => {
            let (s_plus, s_minus) = abstract_data_subspaces(sys, omega_b)?;
            let sdata = if lambda.im > 0.0 { s_plus } else { s_minus };
            let sol = fundamental_solution(sys, lambda, *t_cut, opts)?;
            let coef = linalg::solve(sol.end_value(), &sdata)?;
            Ok(SolutionBasis {
                lambda,
                k: coef.ncols(),
                rep: BasisRep::Interval {
                    sol,
                    coef: Some(coef),
                },
                mode_condition: None,
            })
        }
        EndpointDescriptor::ConstantTail { t0, .. } => {
            let a_mat = sys.rhs_matrix(*t0, lambda);
            let (vals, vecs) = linalg::eig(&a_mat)?;
            let mut idx: Vec<usize> = Vec::new();
            for (i, kappa) in vals.iter().enumerate() {
                if kappa.re.abs() <= opts.mode_tol {
                    return Err(WkError::IndeterminateMode {
                        re_kappa: kappa.re,
                        tol: opts.mode_tol,
                    });
                }
                if kappa.re < -opts.mode_tol {
                    idx.push(i);
                }
            }
            // deterministic order: by real part, then imaginary part
            idx.sort_by(|&i, &j| {
                (vals[i].re, vals[i].im)
                    .partial_cmp(&(vals[j].re, vals[j].im))
                    .unwrap()
            });
            let k = idx.len();
            let mut sel = zeros(sys.n(), k);
            let mut rates = Vec::with_capacity(k);
            for (j, &i) in idx.iter().enumerate() {
                sel.column_mut(j).assign(&vecs.column(i));
                rates.push(vals[i]);
            }
            let mode_condition = if k > 0 { Some(linalg::cond2(&sel)) } else { None };
            let (interval, scales) = if *t0 > sys.a {
                let sol = ode::integrate_linear(
                    |t| sys.rhs_matrix(t, lambda),
                    *t0,
                    sys.a,
                    sel.clone(),
                    opts.rtol,
                    opts.atol,
                )?;
                let at_a = sol.end_value();
                let scales: Vec<f64> = (0..k)
                    .map(|j| {
                        let nrm = at_a.column(j).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                        nrm.max(1e-30)
                    })
                    .collect();
                (Some(sol), scales)
            } else {
                (None, vec![1.0; k])
            };
            Ok(SolutionBasis {
                lambda,
                k,
                rep: BasisRep::Tail {
                    interval,
                    t0: *t0,
                    rates,
                    vecs: sel,
                    scales,
                },
                mode_condition,
            })
        }
    }
}

/// Deficiency indices (n_plus, n_minus) as dimensions of the L^2 solution
/// spaces at +/- i, cross-checked for consistency with the endpoint data.
pub fn deficiency_indices(sys: &SymmetricSystem, opts: &PropOpts) -> Result<(usize, usize)> {
    let np = l2_basis(sys, c(0.0, 1.0), opts)?.k;
    let nm = l2_basis(sys, c(0.0, -1.0), opts)?.k;
    match &sys.endpoint {
        EndpointDescriptor::Regular { .. } => {
            if np != sys.n() || nm != sys.n() {
                return Err(WkError::ConsistencyError(format!(
                    "regular endpoint expects defect ({n}, {n}), got ({np}, {nm})",
                    n = sys.n()
                )));
            }
        }
        EndpointDescriptor::AbstractForm { omega_b, .. } => {
            let inert = inertia(omega_b, INERTIA_TOL)?;
            let want = (sys.sig.nu_plus + inert.pos, sys.sig.nu_minus() + inert.neg);
            if (np, nm) != want {
                return Err(WkError::ConsistencyError(format!(
                    "declared endpoint form expects defect {want:?}, got ({np}, {nm})"
                )));
            }
        }
        EndpointDescriptor::ConstantTail { .. } => {
            // half-plane constancy of the mode count
            let np2 = l2_basis(sys, c(0.3, 2.0), opts)?.k;
            let nm2 = l2_basis(sys, c(0.3, -2.0), opts)?.k;
            if np2 != np || nm2 != nm {
                return Err(WkError::ConsistencyError(format!(
                    "tail mode count varies across a half-plane: ({np}, {nm}) vs ({np2}, {nm2})"
                )));
            }
            if np < sys.sig.nu_plus || nm < sys.sig.nu_minus() {
                return Err(WkError::ConsistencyError(format!(
                    "defect ({np}, {nm}) below the minimal (nu_plus, nu_minus)"
                )));
            }
        }
    }
    Ok((np, nm))
}

/// Gram matrix int_a^b A^*(t) Delta(t) B(t) dt over the whole interval,
/// including closed-form tail contributions for decaying-mode bases.
pub fn delta_gram(
    sys: &SymmetricSystem,
    ba: &SolutionBasis,
    bb: &SolutionBasis,
    opts: &PropOpts,
) -> Result<CMat> {
    let hi = sys.working_end();
    let mut g = zeros(ba.k, bb.k);
    if hi > sys.a {
        let (nodes, weights) = quad::panel_nodes(sys.a, hi, opts.gram_panels, 16);
        for (t, w) in nodes.iter().zip(weights.iter()) {
            let ya = ba.eval(*t);
            let yb = bb.eval(*t);
            let d = sys.delta_at(*t);
            g = &g + &adjoint(&ya).dot(&d).dot(&yb).mapv(|z| z * cr(*w));
        }
    }
    if let (Some((t0a, ra, va, sa)), Some((t0b, rb, vb, sb))) = (ba.tail_parts(), bb.tail_parts()) {
        debug_assert!((t0a - t0b).abs() < 1e-12);
        let _ = t0b;
        let delta_inf = sys.delta_at(t0a);
        let cross = adjoint(va).dot(&delta_inf).dot(vb);
        for i in 0..ra.len() {
            for j in 0..rb.len() {
                let denom = ra[i].conj() + rb[j];
                g[(i, j)] += cross[(i, j)] / (cr(sa[i] * sb[j])) * (-1.0 / denom);
            }
        }
    }
    Ok(g)
}

/// Residual of the J-Wronskian identity Y(t, conj lambda)^* J Y(t, lambda) = J
/// over a set of checkpoints; the computable form of the Lagrange identity
/// for solution pairs.
pub fn wronskian_residual(
    sys: &SymmetricSystem,
    lambda: C64,
    ts: &[f64],
    opts: &PropOpts,
) -> Result<f64> {
    let hi = ts.iter().cloned().fold(sys.a, f64::max);
    let sol = fundamental_solution(sys, lambda, hi, opts)?;
    let sol_c = fundamental_solution(sys, lambda.conj(), hi, opts)?;
    let mut worst = 0.0_f64;
    for &t in ts {
        let y = sol.eval(t);
        let yc = sol_c.eval(t);
        let w = adjoint(&yc).dot(&sys.j).dot(&y);
        worst = worst.max(linalg::norm2(&(&w - &sys.j)));
    }
    Ok(worst)
}

/// Initial value of phi_U per the boundary operator blocks: the columns are
/// -J r2^* and -i J r1^* where r1, r2 are the rows of U.
pub fn phi_initial(u_blocks: &crate::boundary::BoundaryOperatorU) -> CMat {
    let [u1, u2, u3, u4, u5, u6] = &u_blocks.u;
    let col1 = linalg::vstack(&[
        &adjoint(u6),
        &adjoint(u5).mapv(|z| z * c(0.0, -1.0)),
        &adjoint(u4).mapv(|z| -z),
    ]);
    let col2 = linalg::vstack(&[
        &adjoint(u3).mapv(|z| z * I),
        &adjoint(u2),
        &adjoint(u1).mapv(|z| z * c(0.0, -1.0)),
    ]);
    linalg::hstack(&[&col1, &col2])
}

/// Initial value of psi: solves U~ psi(a) = [-(i/2) P_hat; -P_H].
pub fn psi_initial(ext_u: &crate::boundary::ExtendedU) -> Result<CMat> {
    let sig = ext_u.u.sig;
    let (np, nh) = (sig.nu_plus, sig.nu_hat);
    let mut target = zeros(sig.n(), sig.nu_minus());
    for k in 0..nh {
        target[(np + k, np + k)] = c(0.0, -0.5);
    }
    for k in 0..np {
        target[(np + nh + k, k)] = cr(-1.0);
    }
    linalg::solve(&ext_u.u_tilde, &target)
}

/// Dense solutions for phi_U and psi on [a, t_end] at a given lambda.
pub fn phi_psi_solutions(
    sys: &SymmetricSystem,
    ext_u: &crate::boundary::ExtendedU,
    lambda: C64,
    t_end: f64,
    opts: &PropOpts,
) -> Result<(OdeSolution, OdeSolution)> {
    let phi0 = phi_initial(&ext_u.u);
    let psi0 = psi_initial(ext_u)?;
    let phi = ode::integrate_linear(
        |t| sys.rhs_matrix(t, lambda),
        sys.a,
        t_end,
        phi0,
        opts.rtol,
        opts.atol,
    )?;
    let psi = ode::integrate_linear(
        |t| sys.rhs_matrix(t, lambda),
        sys.a,
        t_end,
        psi0,
        opts.rtol,
        opts.atol,
    )?;
    Ok((phi, psi))
}

/// Values (phi_U(t, lambda), psi(t, lambda)) at one point.
pub fn phi_psi(
    sys: &SymmetricSystem,
    ext_u: &crate::boundary::ExtendedU,
    lambda: C64,
    t: f64,
    opts: &PropOpts,
) -> Result<(CMat, CMat)> {
    let (phi, psi) = phi_psi_solutions(sys, ext_u, lambda, t, opts)?;
    Ok((phi.eval(t), psi.eval(t)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blockspace::BlockSignature;
    use crate::system::{free_schrodinger_coeffs, MatrixSampler};

    fn free_system(endpoint: EndpointDescriptor) -> SymmetricSystem {
        let sig = BlockSignature::new(1, 0).unwrap();
        let (b, d) = free_schrodinger_coeffs();
        SymmetricSystem::new(
            sig,
            0.0,
            endpoint,
            MatrixSampler::Constant(b),
            MatrixSampler::Constant(d),
        )
        .unwrap()
    }

    /// The third-order scalar expression with q0 = 1 reduced by hand:
    /// B = [[0,0,0],[0,0,1],[0,1,0]], Delta = diag(1,0,0) on sig(1,1).
    pub fn iy3_system(endpoint: EndpointDescriptor) -> SymmetricSystem {
        let sig = BlockSignature::new(1, 1).unwrap();
        let mut b = zeros(3, 3);
        b[(1, 2)] = cr(1.0);
        b[(2, 1)] = cr(1.0);
        let mut d = zeros(3, 3);
        d[(0, 0)] = cr(1.0);
        SymmetricSystem::new(
            sig,
            0.0,
            endpoint,
            MatrixSampler::Constant(b),
            MatrixSampler::Constant(d),
        )
        .unwrap()
    }

    fn iy3_tail() -> EndpointDescriptor {
        let mut b = zeros(3, 3);
        b[(1, 2)] = cr(1.0);
        b[(2, 1)] = cr(1.0);
        let mut d = zeros(3, 3);
        d[(0, 0)] = cr(1.0);
        EndpointDescriptor::ConstantTail {
            t0: 0.0,
            b_inf: b,
            delta_inf: d,
        }
    }

    #[test]
    fn trivial_system_has_identity_fundamental_matrix() {
        let sig = BlockSignature::new(1, 0).unwrap();
        let sys = SymmetricSystem::new(
            sig,
            0.0,
            EndpointDescriptor::Regular { b: 2.0 },
            MatrixSampler::Constant(zeros(2, 2)),
            MatrixSampler::Constant(zeros(2, 2)),
        )
        .unwrap();
        let opts = PropOpts::default();
        for lambda in [c(0.0, 0.0), c(1.0, 2.0)] {
            let y = fundamental_matrix(&sys, lambda, 1.7, &opts).unwrap();
            assert!(linalg::norm2(&(&y - &eye(2))) < 1e-12);
        }
    }

    #[test]
    fn free_schrodinger_fundamental_matrix_at_zero_energy() {
        let sys = free_system(EndpointDescriptor::Regular { b: 2.0 });
        let opts = PropOpts::default();
        let y = fundamental_matrix(&sys, cr(0.0), 1.3, &opts).unwrap();
        // Y(t, 0) = [[1, t], [0, 1]]
        assert!((y[(0, 0)].re - 1.0).abs() < 1e-10);
        assert!((y[(0, 1)].re - 1.3).abs() < 1e-10);
        assert!(y[(1, 0)].norm() < 1e-10);
        assert!((y[(1, 1)].re - 1.0).abs() < 1e-10);
    }

    #[test]
    fn wronskian_identity_holds() {
        let sys = iy3_system(EndpointDescriptor::Regular { b: 4.0 });
        let res = wronskian_residual(
            &sys,
            c(0.4, 1.1),
            &[0.5, 1.0, 2.0, 4.0],
            &PropOpts::default(),
        )
        .unwrap();
        assert!(res < 1e-8, "wronskian residual {res}");
    }

    #[test]
    fn free_schrodinger_tail_modes() {
        let sys = free_system(EndpointDescriptor::ConstantTail {
            t0: 0.0,
            b_inf: free_schrodinger_coeffs().0,
            delta_inf: free_schrodinger_coeffs().1,
        });
        let opts = PropOpts::default();
        let basis = l2_basis(&sys, c(0.0, 1.0), &opts).unwrap();
        assert_eq!(basis.k, 1);
        let kappa = basis.decay_rates().unwrap()[0];
        assert!(kappa.re < 0.0);
        // kappa^2 = -lambda for the free system (y'' = -lambda y)
        let sq = kappa * kappa;
        assert!((sq - c(0.0, -1.0)).norm() < 1e-10);
    }

    #[test]
    fn iy3_mode_counts_per_half_plane() {
        let sys = iy3_system(iy3_tail());
        let opts = PropOpts::default();
        assert_eq!(l2_basis(&sys, c(0.0, 1.0), &opts).unwrap().k, 1);
        assert_eq!(l2_basis(&sys, c(0.0, -1.0), &opts).unwrap().k, 2);
        // constant dimension across each half-plane
        for im in [0.3, 1.7, 3.0] {
            assert_eq!(l2_basis(&sys, c(0.5, im), &opts).unwrap().k, 1);
            assert_eq!(l2_basis(&sys, c(-0.5, -im), &opts).unwrap().k, 2);
        }
    }

    #[test]
    fn mode_count_stable_under_tol_halving() {
        let sys = iy3_system(iy3_tail());
        let mut opts = PropOpts::default();
        let k1 = l2_basis(&sys, c(0.0, 1.0), &opts).unwrap().k;
        opts.mode_tol /= 2.0;
        let k2 = l2_basis(&sys, c(0.0, 1.0), &opts).unwrap().k;
        assert_eq!(k1, k2);
    }

    #[test]
    fn deficiency_indices_regular_and_tail() {
        let opts = PropOpts::default();
        let sys = iy3_system(EndpointDescriptor::Regular { b: 1.0 });
        assert_eq!(deficiency_indices(&sys, &opts).unwrap(), (3, 3));
        let sys = iy3_system(iy3_tail());
        assert_eq!(deficiency_indices(&sys, &opts).unwrap(), (1, 2));
        let sys = free_system(EndpointDescriptor::ConstantTail {
            t0: 0.0,
            b_inf: free_schrodinger_coeffs().0,
            delta_inf: free_schrodinger_coeffs().1,
        });
        assert_eq!(deficiency_indices(&sys, &opts).unwrap(), (1, 1));
    }

    #[test]
    fn tail_gram_matches_closed_form() {
        // For the free system at lambda = i the decaying column is
        // e^{kappa t} v with known norm; compare delta_gram against the
        // direct formula -(v* Delta v)/(2 Re kappa).
        let sys = free_system(EndpointDescriptor::ConstantTail {
            t0: 0.0,
            b_inf: free_schrodinger_coeffs().0,
            delta_inf: free_schrodinger_coeffs().1,
        });
        let opts = PropOpts::default();
        let basis = l2_basis(&sys, c(0.0, 1.0), &opts).unwrap();
        let g = delta_gram(&sys, &basis, &basis, &opts).unwrap();
        let (t0, rates, vecs, _) = basis.tail_parts().unwrap();
        assert_eq!(t0, 0.0);
        let v = vecs.column(0).to_owned();
        let d = sys.delta_at(0.0);
        let quad_form: C64 = v
            .iter()
            .zip(d.dot(&v).iter())
            .map(|(a, b)| a.conj() * b)
            .sum();
        let expected = quad_form * cr(-1.0) / (rates[0].conj() + rates[0]);
        assert!((g[(0, 0)] - expected).norm() < 1e-12);
    }
}
