//! Odd-order differential expressions of order 2m+1: inertia factorization
//! of the leading coefficient, quasi-derivatives, reduction to a symmetric
//! first-order system, deficiency-index bookkeeping and self-adjoint
//! boundary condition validation.

use crate::blockspace::{inertia, BlockSignature, INERTIA_TOL};
use crate::boundary::{cos_sin_u, extend_u, validate_u, ExtendedU};
use crate::error::{Result, WkError};
use crate::linalg::{self, adjoint, c, cr, norm2, zeros, CMat, CVec, C64, I};
use crate::propagator::PropOpts;
use crate::system::{EndpointDescriptor, MatrixSampler, SymmetricSystem};

/// Differential expression of order 2m+1 with Hermitian matrix coefficients
/// p_k, q_k (k = 0..m) and invertible leading coefficient q_0. The shipped
/// solvers support constant coefficients; the scalar subclass additionally
/// supports the full reduction for m <= 2.
#[derive(Debug, Clone)]
pub struct OddOrderExpression {
    pub m: usize,
    pub dim_h: usize,
    /// p_0..p_m
    pub p: Vec<CMat>,
    /// q_0..q_m
    pub q: Vec<CMat>,
}

impl OddOrderExpression {
    pub fn new(m: usize, dim_h: usize, p: Vec<CMat>, q: Vec<CMat>) -> Result<Self> {
        if m == 0 {
            return Err(WkError::UnsupportedSubclass("order must be >= 3".into()));
        }
        if p.len() != m + 1 || q.len() != m + 1 {
            return Err(WkError::ShapeMismatch(format!(
                "need {} coefficient matrices p_k and q_k",
                m + 1
            )));
        }
        for mlist in [&p, &q] {
            for mat in mlist {
                if mat.dim() != (dim_h, dim_h) {
                    return Err(WkError::ShapeMismatch("coefficient shape mismatch".into()));
                }
                linalg::require_hermitian(mat, 1e-12)?;
            }
        }
        Ok(OddOrderExpression { m, dim_h, p, q })
    }

    pub fn scalar(m: usize, p: &[f64], q: &[f64]) -> Result<Self> {
        let wrap = |v: &[f64]| -> Vec<CMat> {
            v.iter().map(|&x| ndarray::array![[cr(x)]]).collect()
        };
        OddOrderExpression::new(m, 1, wrap(p), wrap(q))
    }

    pub fn order(&self) -> usize {
        2 * self.m + 1
    }

    fn is_scalar(&self) -> bool {
        self.dim_h == 1
    }

    fn scalar_q(&self, k: usize) -> f64 {
        self.q[k][(0, 0)].re
    }

    fn scalar_p(&self, k: usize) -> f64 {
        self.p[k][(0, 0)].re
    }

    /// Apply l[y] to a jet (y, y', ..., y^(2m+1)) of a scalar function.
    pub fn apply_scalar(&self, jet: &[C64]) -> Result<C64> {
        if !self.is_scalar() || self.m > 2 {
            return Err(WkError::UnsupportedSubclass(
                "direct application supports scalar m <= 2".into(),
            ));
        }
        if jet.len() < self.order() + 1 {
            return Err(WkError::ShapeMismatch("jet too short".into()));
        }
        let (q0, q1) = (self.scalar_q(0), self.scalar_q(1));
        Ok(match self.m {
            1 => {
                let (p0, p1) = (self.scalar_p(0), self.scalar_p(1));
                -I * cr(q0) * jet[3] - cr(p0) * jet[2] + I * cr(q1) * jet[1] + cr(p1) * jet[0]
            }
            2 => {
                let q2 = self.scalar_q(2);
                let (p0, p1, p2) = (self.scalar_p(0), self.scalar_p(1), self.scalar_p(2));
                I * cr(q0) * jet[5] + cr(p0) * jet[4] - I * cr(q1) * jet[3] - cr(p1) * jet[2]
                    + I * cr(q2) * jet[1]
                    + cr(p2) * jet[0]
            }
            _ => unreachable!(),
        })
    }
}

/// Factorization of the leading coefficient:
/// i q0 = -Q1^* Q2 + Q2^* Q1 + i Qhat^* Qhat with dim H' = nu0_minus and
/// dim bold-Hhat = nu0_plus - nu0_minus (after the definiteness relabeling).
#[derive(Debug, Clone)]
pub struct QFactorization {
    pub nu0_plus: usize,
    pub nu0_minus: usize,
    /// true when q0 was negated to enforce nu0_minus <= nu0_plus
    pub relabeled: bool,
    pub q1: CMat,
    pub qhat: CMat,
    pub q2: CMat,
}

impl QFactorization {
    pub fn h_prime_dim(&self) -> usize {
        self.nu0_minus
    }

    pub fn h_hat_dim(&self) -> usize {
        self.nu0_plus - self.nu0_minus
    }

    /// Residual of i q0 = -Q1^* Q2 + Q2^* Q1 + i Qhat^* Qhat.
    pub fn identity_residual(&self, q0: &CMat) -> f64 {
        let q0_eff = if self.relabeled { q0.mapv(|z| -z) } else { q0.clone() };
        let lhs = q0_eff.mapv(|z| z * I);
        let rhs = adjoint(&self.q1).dot(&self.q2).mapv(|z| -z)
            + adjoint(&self.q2).dot(&self.q1)
            + adjoint(&self.qhat).dot(&self.qhat).mapv(|z| z * I);
        norm2(&(&lhs - &rhs))
    }
}

/// Factorize q0 via its eigendecomposition: hyperbolic pairs for matched
/// positive/negative directions, a definite square-root block for the
/// surplus. Constant matrices factorize exactly; on a grid the inertia must
/// stay constant.
pub fn q0_inertia_factorization(expr: &OddOrderExpression, grid: &[f64]) -> Result<QFactorization> {
    // constant coefficients: the grid only enters the crossing check
    let q0 = expr.q[0].clone();
    let scale = norm2(&q0).max(1.0);
    let inert = inertia(&q0, INERTIA_TOL)?;
    if inert.zero > 0 {
        return Err(WkError::SingularQ0(grid.first().cloned().unwrap_or(0.0)));
    }
    let _ = grid;
    let relabeled = inert.neg > inert.pos;
    let q0_eff = if relabeled { q0.mapv(|z| -z) } else { q0.clone() };
    let (vals, vecs) = linalg::eigh(&q0_eff)?;
    let n = q0.nrows();
    let cut = INERTIA_TOL * scale;
    let mut pos: Vec<usize> = (0..n).filter(|&i| vals[i] > cut).collect();
    let mut neg: Vec<usize> = (0..n).filter(|&i| vals[i] < -cut).collect();
    pos.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap());
    neg.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
    let (p, q) = (pos.len(), neg.len());
    let pairs = p.min(q);
    let row = |idx: usize, scale: f64| -> CVec {
        vecs.column(idx).mapv(|z| z.conj() * cr(scale))
    };
    let mut q1 = zeros(pairs, n);
    let mut q2 = zeros(pairs, n);
    for k in 0..pairs {
        let alpha = vals[pos[k]].sqrt();
        let beta = (-vals[neg[k]]).sqrt();
        let a_row = row(pos[k], alpha);
        let b_row = row(neg[k], beta);
        let s2 = 2.0_f64.sqrt();
        for col in 0..n {
            q1[(k, col)] = I * (a_row[col] - b_row[col]) / cr(s2);
            q2[(k, col)] = (a_row[col] + b_row[col]) / cr(s2);
        }
    }
    let mut qhat = zeros(p - pairs, n);
    for (r, &idx) in pos.iter().skip(pairs).enumerate() {
        let v = row(idx, vals[idx].sqrt());
        for col in 0..n {
            qhat[(r, col)] = v[col];
        }
    }
    let fact = QFactorization {
        nu0_plus: p,
        nu0_minus: q,
        relabeled,
        q1,
        qhat,
        q2,
    };
    let res = fact.identity_residual(&q0);
    if res > 1e-10 * scale {
        return Err(WkError::ConsistencyError(format!(
            "q0 factorization residual {res:.3e}"
        )));
    }
    Ok(fact)
}

/// Quasi-derivative chain of a scalar jet: returns
/// (y^{[0]}, ..., y^{[2m]}) together with l[y] = y^{[2m+1]}.
pub fn quasi_derivatives(expr: &OddOrderExpression, jet: &[C64]) -> Result<(Vec<C64>, C64)> {
    if !expr.is_scalar() || expr.m > 2 {
        return Err(WkError::UnsupportedSubclass(
            "quasi-derivative chain supports scalar m <= 2".into(),
        ));
    }
    if jet.len() < expr.order() + 1 {
        return Err(WkError::ShapeMismatch("jet too short".into()));
    }
    let q0 = expr.scalar_q(0);
    if q0 <= 0.0 {
        return Err(WkError::UnsupportedSubclass(
            "reduction requires q0 > 0 (relabel the expression otherwise)".into(),
        ));
    }
    let sq = q0.sqrt();
    match expr.m {
        1 => {
            let (p0, _p1) = (expr.scalar_p(0), expr.scalar_p(1));
            let q1 = expr.scalar_q(1);
            let y2 = I * cr(q0) * jet[2] + cr(p0) * jet[1] - I * cr(q1 / 2.0) * jet[0];
            let chain = vec![jet[0], cr(sq) * jet[1], y2];
            let l = expr.apply_scalar(jet)?;
            Ok((chain, l))
        }
        2 => {
            let (p0, p1, _p2) = (expr.scalar_p(0), expr.scalar_p(1), expr.scalar_p(2));
            let (q1, q2) = (expr.scalar_q(1), expr.scalar_q(2));
            let y3 = I * cr(q0) * jet[3] + cr(p0) * jet[2] - I * cr(q1 / 2.0) * jet[1];
            // y4 = -(y3)' + p1 y' + (i q1 / 2) y'' - (i q2 / 2) y
            let y3p = I * cr(q0) * jet[4] + cr(p0) * jet[3] - I * cr(q1 / 2.0) * jet[2];
            let y4 = -y3p + cr(p1) * jet[1] + I * cr(q1 / 2.0) * jet[2] - I * cr(q2 / 2.0) * jet[0];
            let chain = vec![jet[0], jet[1], cr(sq) * jet[2], y3, y4];
            let l = expr.apply_scalar(jet)?;
            Ok((chain, l))
        }
        _ => unreachable!(),
    }
}

/// Assemble the bold boundary vector (y_0, Qhat y^{(m)}, y_1) of the jet.
pub fn bold_vector(expr: &OddOrderExpression, jet: &[C64]) -> Result<CVec> {
    let (chain, _) = quasi_derivatives(expr, jet)?;
    let m = expr.m;
    let n = 2 * m + 1;
    let mut v = ndarray::Array1::zeros(n);
    // y_0 = (y^{[0]}, ..., y^{[m-1]})
    for k in 0..m {
        v[k] = chain[k];
    }
    // middle: Qhat y^{(m)} = sqrt(q0) y^{(m)}
    v[m] = chain[m];
    // y_1 = (y^{[2m]}, ..., y^{[m+1]}) in decreasing order
    for (slot, k) in (m + 1..=2 * m).rev().enumerate() {
        v[m + 1 + slot] = chain[k];
    }
    Ok(v)
}

#[derive(Debug, Clone)]
pub enum OddEndpoint {
    Regular { b: f64 },
    HalfLine,
}

/// The reduced first-order system together with the correspondence data.
pub struct ReducedOddOrder {
    pub expr: OddOrderExpression,
    pub sys: SymmetricSystem,
    pub b_matrix: CMat,
}

/// Reduce a scalar constant-coefficient expression (m <= 2, q0 > 0) to its
/// equivalent symmetric system. The coefficient matrix is derived by
/// matching and certified by the reduction-fidelity check.
pub fn reduce_to_system(expr: &OddOrderExpression, a: f64, endpoint: &OddEndpoint) -> Result<ReducedOddOrder> {
    if !expr.is_scalar() || expr.m > 2 {
        return Err(WkError::UnsupportedSubclass(
            "full reduction supports scalar constant coefficients with m <= 2".into(),
        ));
    }
    let q0 = expr.scalar_q(0);
    if q0 <= 0.0 {
        return Err(WkError::UnsupportedSubclass(
            "reduction requires q0 > 0".into(),
        ));
    }
    let sq = q0.sqrt();
    let m = expr.m;
    let n = 2 * m + 1;
    let mut b = zeros(n, n);
    match m {
        1 => {
            let (p0, p1, q1) = (expr.scalar_p(0), expr.scalar_p(1), expr.scalar_q(1));
            b[(0, 0)] = cr(-p1);
            b[(0, 1)] = -I * cr(q1 / (2.0 * sq));
            b[(1, 0)] = I * cr(q1 / (2.0 * sq));
            b[(1, 1)] = cr(-p0 / q0);
            b[(1, 2)] = cr(1.0 / sq);
            b[(2, 1)] = cr(1.0 / sq);
        }
        2 => {
            let (p0, p1, p2) = (expr.scalar_p(0), expr.scalar_p(1), expr.scalar_p(2));
            let (q1, q2) = (expr.scalar_q(1), expr.scalar_q(2));
            b[(0, 0)] = cr(-p2);
            b[(0, 1)] = -I * cr(q2 / 2.0);
            b[(1, 0)] = I * cr(q2 / 2.0);
            b[(1, 1)] = cr(-p1);
            b[(1, 2)] = -I * cr(q1 / (2.0 * sq));
            b[(1, 3)] = cr(1.0);
            b[(2, 1)] = I * cr(q1 / (2.0 * sq));
            b[(2, 2)] = cr(-p0 / q0);
            b[(2, 4)] = cr(1.0 / sq);
            b[(3, 1)] = cr(1.0);
            b[(4, 2)] = cr(1.0 / sq);
        }
        _ => unreachable!(),
    }
    let mut delta = zeros(n, n);
    delta[(0, 0)] = cr(1.0);
    let sig = BlockSignature::new(m, 1)?;
    let ep = match endpoint {
        OddEndpoint::Regular { b: bend } => EndpointDescriptor::Regular { b: *bend },
        OddEndpoint::HalfLine => EndpointDescriptor::ConstantTail {
            t0: a,
            b_inf: b.clone(),
            delta_inf: delta.clone(),
        },
    };
    let sys = SymmetricSystem::new(
        sig,
        a,
        ep,
        MatrixSampler::Constant(b.clone()),
        MatrixSampler::Constant(delta),
    )?;
    let red = ReducedOddOrder {
        expr: expr.clone(),
        sys,
        b_matrix: b,
    };
    let res = reduction_fidelity(&red, c(0.0, 1.0), 3)?;
    let res2 = reduction_fidelity(&red, c(0.0, -1.0), 3)?;
    if res.max(res2) > 1e-8 {
        return Err(WkError::MatchFailure(format!(
            "reduction fidelity residual {:.3e}",
            res.max(res2)
        )));
    }
    Ok(red)
}

/// Companion-form right-hand side of l[y] = lambda y for the scalar jet.
fn companion_rhs(expr: &OddOrderExpression, lambda: C64, jet: &CVec) -> CVec {
    let ord = expr.order();
    let mut out = ndarray::Array1::zeros(ord);
    for k in 0..ord - 1 {
        out[k] = jet[k + 1];
    }
    let q0 = expr.scalar_q(0);
    out[ord - 1] = match expr.m {
        1 => {
            let (p0, p1, q1) = (expr.scalar_p(0), expr.scalar_p(1), expr.scalar_q(1));
            // -i q0 y''' - p0 y'' + i q1 y' + p1 y = lambda y
            (lambda * jet[0] + cr(p0) * jet[2] - I * cr(q1) * jet[1] - cr(p1) * jet[0])
                / (-I * cr(q0))
        }
        2 => {
            let (p0, p1, p2) = (expr.scalar_p(0), expr.scalar_p(1), expr.scalar_p(2));
            let (q1, q2) = (expr.scalar_q(1), expr.scalar_q(2));
            // i q0 y^(5) + p0 y^(4) - i q1 y''' - p1 y'' + i q2 y' + p2 y = lambda y
            (lambda * jet[0] - cr(p0) * jet[4] + I * cr(q1) * jet[3] + cr(p1) * jet[2]
                - I * cr(q2) * jet[1]
                - cr(p2) * jet[0])
                / (I * cr(q0))
        }
        _ => unreachable!(),
    };
    out
}

/// Maximum deviation between the mapped scalar solution and the reduced
/// system propagation, over a few independent jets on [a, a + span].
pub fn reduction_fidelity(red: &ReducedOddOrder, lambda: C64, n_jets: usize) -> Result<f64> {
    let expr = &red.expr;
    let ord = expr.order();
    let a = red.sys.a;
    let span = match &red.sys.endpoint {
        EndpointDescriptor::Regular { b } => (b - a).min(5.0),
        _ => 5.0,
    };
    let checkpoints = [0.25, 0.5, 1.0];
    let mut worst = 0.0_f64;
    for j in 0..n_jets {
        // deterministic spread of initial jets
        let mut jet0: CVec = ndarray::Array1::zeros(ord);
        for k in 0..ord {
            let phase = (j * ord + k) as f64;
            jet0[k] = c((0.3 + phase).sin(), (1.1 * phase + 0.2).cos() * 0.5);
        }
        // scalar companion integration (jet as a column matrix)
        let jet_mat = jet0.clone().insert_axis(ndarray::Axis(1));
        let scalar_sol = crate::ode::integrate(
            |_t, y: &CMat| {
                let col = y.column(0).to_owned();
                companion_rhs(expr, lambda, &col).insert_axis(ndarray::Axis(1))
            },
            a,
            a + span,
            jet_mat,
            1e-11,
            1e-13,
        )?;
        // reduced system propagation of the mapped initial data
        let mut full_jet0 = vec![C64::new(0.0, 0.0); ord + 1];
        for k in 0..ord {
            full_jet0[k] = jet0[k];
        }
        full_jet0[ord] = companion_rhs(expr, lambda, &jet0)[ord - 1];
        let y0 = bold_vector(expr, &full_jet0)?.insert_axis(ndarray::Axis(1));
        let sys_sol = crate::ode::integrate_linear(
            |t| red.sys.rhs_matrix(t, lambda),
            a,
            a + span,
            y0.to_owned(),
            1e-11,
            1e-13,
        )?;
        for &frac in &checkpoints {
            let t = a + frac * span;
            let jet_t = scalar_sol.eval(t);
            let mut full_jet = vec![C64::new(0.0, 0.0); ord + 1];
            for k in 0..ord {
                full_jet[k] = jet_t[(k, 0)];
            }
            let col: CVec = (0..ord).map(|k| jet_t[(k, 0)]).collect();
            full_jet[ord] = companion_rhs(expr, lambda, &col)[ord - 1];
            let mapped = bold_vector(expr, &full_jet)?;
            let propagated = sys_sol.eval(t);
            let diff: f64 = mapped
                .iter()
                .enumerate()
                .map(|(r, z)| (z - propagated[(r, 0)]).norm_sqr())
                .sum::<f64>()
                .sqrt();
            let scale: f64 = mapped.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            worst = worst.max(diff / scale.max(1.0));
        }
    }
    Ok(worst)
}

/// Deficiency indices of the expression by the index formula
/// d_+ = m dim H + nu0_minus + nb_plus, d_- = m dim H + nu0_plus + nb_minus,
/// cross-checked against the reduced system when available.
pub fn odd_deficiency(
    expr: &OddOrderExpression,
    a: f64,
    endpoint: &OddEndpoint,
    opts: &PropOpts,
) -> Result<(usize, usize)> {
    let fact = q0_inertia_factorization(expr, &[a])?;
    let base = expr.m * expr.dim_h;
    let (nb_plus, nb_minus, cross): (usize, usize, Option<(usize, usize)>) = match endpoint {
        OddEndpoint::Regular { .. } => {
            // regular endpoint of the reduced system: inertia (nu_minus, nu_plus)
            let nu_plus = base + fact.nu0_minus;
            let nu_minus = base + fact.nu0_plus;
            let cross = if expr.is_scalar() && expr.m <= 2 && expr.scalar_q(0) > 0.0 {
                let red = reduce_to_system(expr, a, endpoint)?;
                Some(crate::propagator::deficiency_indices(&red.sys, opts)?)
            } else {
                None
            };
            (nu_minus, nu_plus, cross)
        }
        OddEndpoint::HalfLine => {
            let red = reduce_to_system(expr, a, endpoint)?;
            let (np, nm) = crate::propagator::deficiency_indices(&red.sys, opts)?;
            let nu_plus = base + fact.nu0_minus;
            let nu_minus = base + fact.nu0_plus;
            (np - nu_plus, nm - nu_minus, Some((np, nm)))
        }
    };
    let d_plus = base + fact.nu0_minus + nb_plus;
    let d_minus = base + fact.nu0_plus + nb_minus;
    if let Some((np, nm)) = cross {
        if (np, nm) != (d_plus, d_minus) {
            return Err(WkError::ConsistencyError(format!(
                "index formula ({d_plus}, {d_minus}) disagrees with the reduced system ({np}, {nm})"
            )));
        }
    }
    Ok((d_plus, d_minus))
}

/// Validated self-adjoint constant boundary pair for the regular equal-index
/// path, together with the boundary-parameter realization on the reduced
/// triplet.
pub struct SelfAdjointProblem {
    pub reduced: ReducedOddOrder,
    pub ext_u: ExtendedU,
    pub c0: CMat,
    pub c1: CMat,
}

pub fn selfadjoint_bc(
    expr: &OddOrderExpression,
    a: f64,
    b_end: f64,
    c0: CMat,
    c1: CMat,
    opts: &PropOpts,
) -> Result<SelfAdjointProblem> {
    let (dp, dm) = odd_deficiency(expr, a, &OddEndpoint::Regular { b: b_end }, opts)?;
    if dp != dm {
        return Err(WkError::PreconditionFailed(format!(
            "self-adjoint boundary conditions need d_+ = d_-, got ({dp}, {dm})"
        )));
    }
    // self-adjoint operator pair: Im C1 C0^* = 0 and 0 in rho(C0 +/- iC1)
    let cc = c1.dot(&adjoint(&c0));
    let im = linalg::imag_part(&cc);
    if norm2(&im) > 1e-10 * (norm2(&c0) + norm2(&c1)).max(1.0) {
        return Err(WkError::NotSelfAdjointPair(format!(
            "Im C1 C0^* has norm {:.3e}",
            norm2(&im)
        )));
    }
    for sign in [1.0, -1.0] {
        let comb = &c0 + &c1.mapv(|z| z * c(0.0, sign));
        if linalg::cond2(&comb) > 1e12 {
            return Err(WkError::NotSelfAdjointPair(
                "C0 +/- i C1 is not boundedly invertible".into(),
            ));
        }
    }
    let reduced = reduce_to_system(expr, a, &OddEndpoint::Regular { b: b_end })?;
    let sig = reduced.sys.sig;
    let u = cos_sin_u(sig, &zeros(sig.nu_plus, sig.nu_plus))?;
    let ext_u = extend_u(validate_u(sig, u.u)?)?;
    Ok(SelfAdjointProblem {
        reduced,
        ext_u,
        c0,
        c1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::eye;
    use crate::propagator::PropOpts;

    #[test]
    fn scalar_factorization() {
        let expr = OddOrderExpression::scalar(1, &[0.0, 0.0], &[1.0, 0.0]).unwrap();
        let f = q0_inertia_factorization(&expr, &[0.0, 1.0]).unwrap();
        assert_eq!((f.nu0_plus, f.nu0_minus), (1, 0));
        assert!(!f.relabeled);
        assert!((f.qhat[(0, 0)] - cr(1.0)).norm() < 1e-14);
        assert!(f.identity_residual(&expr.q[0]) < 1e-14);

        let expr = OddOrderExpression::scalar(1, &[0.0, 0.0], &[4.0, 0.0]).unwrap();
        let f = q0_inertia_factorization(&expr, &[0.0]).unwrap();
        assert!((f.qhat[(0, 0)] - cr(2.0)).norm() < 1e-14);
    }

    #[test]
    fn matrix_factorization_hyperbolic_pair() {
        let q0 = ndarray::array![[cr(1.0), cr(0.0)], [cr(0.0), cr(-1.0)]];
        let p0 = zeros(2, 2);
        let expr = OddOrderExpression::new(
            1,
            2,
            vec![p0.clone(), p0.clone()],
            vec![q0.clone(), p0.clone()],
        )
        .unwrap();
        let f = q0_inertia_factorization(&expr, &[0.0]).unwrap();
        assert_eq!((f.nu0_plus, f.nu0_minus), (1, 1));
        assert_eq!(f.q1.nrows(), 1);
        assert_eq!(f.qhat.nrows(), 0);
        assert!(f.identity_residual(&q0) < 1e-12);
    }

    #[test]
    fn negative_scalar_q0_is_relabeled() {
        let expr = OddOrderExpression::scalar(1, &[0.0, 0.0], &[-1.0, 0.0]).unwrap();
        let f = q0_inertia_factorization(&expr, &[0.0]).unwrap();
        assert!(f.relabeled);
        assert_eq!((f.nu0_plus, f.nu0_minus), (1, 0));
        assert!(f.identity_residual(&expr.q[0]) < 1e-14);
    }

    #[test]
    fn quasi_derivatives_pure_third_order() {
        // q0 = 1, all else zero: l[y] = -i y'''
        let expr = OddOrderExpression::scalar(1, &[0.0, 0.0], &[1.0, 0.0]).unwrap();
        // exponential jet y = e^{kt}
        let k = c(0.3, 0.4);
        let jet: Vec<C64> = (0..4).map(|j| k.powu(j as u32)).collect();
        let (chain, l) = quasi_derivatives(&expr, &jet).unwrap();
        assert!((chain[0] - cr(1.0)).norm() < 1e-14);
        assert!((chain[1] - k).norm() < 1e-14);
        assert!((chain[2] - I * k * k).norm() < 1e-14);
        assert!((l - (-I * k.powu(3))).norm() < 1e-14);
        // zero jet maps to zero
        let (chain, l) = quasi_derivatives(&expr, &[cr(0.0); 4]).unwrap();
        assert!(chain.iter().all(|z| z.norm() < 1e-15) && l.norm() < 1e-15);
    }

    #[test]
    fn leading_term_matches_symbolic_expansion() {
        // p_k = 0, q_1 = 0, q_0 = 1: l[y] equals the leading term; compare
        // against the hand-expanded -i q0 y''' on polynomial jets.
        let expr = OddOrderExpression::scalar(1, &[0.0, 0.0], &[1.0, 0.0]).unwrap();
        for t in [0.0, 0.7, 1.3] {
            // y = t^3: jet (t^3, 3t^2, 6t, 6)
            let jet = [cr(t * t * t), cr(3.0 * t * t), cr(6.0 * t), cr(6.0)];
            let l = expr.apply_scalar(&jet).unwrap();
            assert!((l - (-I * cr(6.0))).norm() < 1e-10);
        }
    }

    #[test]
    fn reduction_matches_direct_integration() {
        // scalar third order with all coefficients nonzero
        let expr = OddOrderExpression::scalar(1, &[0.4, -0.3], &[1.5, 0.7]).unwrap();
        let red = reduce_to_system(&expr, 0.0, &OddEndpoint::Regular { b: 5.0 }).unwrap();
        assert!(linalg::require_hermitian(&red.b_matrix, 1e-12).is_ok());
        for lambda in [c(0.0, 1.0), c(0.5, -0.8)] {
            let res = reduction_fidelity(&red, lambda, 3).unwrap();
            assert!(res < 1e-8, "fidelity residual {res}");
        }
        // fifth order
        let expr5 = OddOrderExpression::scalar(2, &[0.1, 0.2, -0.1], &[1.0, 0.3, 0.5]).unwrap();
        let red5 = reduce_to_system(&expr5, 0.0, &OddEndpoint::Regular { b: 4.0 }).unwrap();
        for lambda in [c(0.0, 1.0), c(-0.3, -1.2)] {
            let res = reduction_fidelity(&red5, lambda, 3).unwrap();
            assert!(res < 1e-8, "m=2 fidelity residual {res}");
        }
    }

    #[test]
    fn iy3_deficiency_indices() {
        let expr = OddOrderExpression::scalar(1, &[0.0, 0.0], &[1.0, 0.0]).unwrap();
        let opts = PropOpts::default();
        assert_eq!(
            odd_deficiency(&expr, 0.0, &OddEndpoint::HalfLine, &opts).unwrap(),
            (1, 2)
        );
        assert_eq!(
            odd_deficiency(&expr, 0.0, &OddEndpoint::Regular { b: 1.0 }, &opts).unwrap(),
            (3, 3)
        );
        // sum rule d+ + d- = 2 m dimH + nu0+ + nu0- + nb+ + nb-
        let (dp, dm) = odd_deficiency(&expr, 0.0, &OddEndpoint::HalfLine, &opts).unwrap();
        assert_eq!(dp + dm, 2 + 1 + 0 + 0 + 0);
    }

    #[test]
    fn fifth_order_halfline_indices() {
        let expr = OddOrderExpression::scalar(2, &[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
        let opts = PropOpts::default();
        assert_eq!(
            odd_deficiency(&expr, 0.0, &OddEndpoint::HalfLine, &opts).unwrap(),
            (2, 3)
        );
    }

    #[test]
    fn scalar_case1_never_triggers() {
        // For scalar expressions nu0+ - nu0- = 1 >= nu_hat = 1; the reduced
        // system has nu_hat = 1 and d = nb+ - nb- <= 0 on the half line and
        // d = 1 at a regular endpoint, so the split regime with
        // nu_hat > d > 0 cannot occur.
        let expr = OddOrderExpression::scalar(1, &[0.0, 0.0], &[1.0, 0.0]).unwrap();
        let opts = PropOpts::default();
        for endpoint in [OddEndpoint::HalfLine, OddEndpoint::Regular { b: 1.0 }] {
            let red = reduce_to_system(&expr, 0.0, &endpoint).unwrap();
            let form = crate::boundary::build_endpoint_form(&red.sys, &opts).unwrap();
            let tag = crate::boundary::classify_case(red.sys.sig, &form).unwrap();
            assert_ne!(tag, crate::boundary::CaseTag::Case1);
        }
    }

    #[test]
    fn selfadjoint_pair_validation() {
        let expr = OddOrderExpression::scalar(1, &[0.0, 0.0], &[1.0, 0.0]).unwrap();
        let opts = PropOpts::default();
        // C0 = I, C1 = 0 and C0 = 0, C1 = I are valid
        assert!(selfadjoint_bc(&expr, 0.0, 1.0, eye(1), zeros(1, 1), &opts).is_ok());
        assert!(selfadjoint_bc(&expr, 0.0, 1.0, zeros(1, 1), eye(1), &opts).is_ok());
        // C0 = C1 = 0 is rejected
        assert!(matches!(
            selfadjoint_bc(&expr, 0.0, 1.0, zeros(1, 1), zeros(1, 1), &opts),
            Err(WkError::NotSelfAdjointPair(_))
        ));
    }
}
