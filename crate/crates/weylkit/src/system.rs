//! Symmetric first-order systems J y' - B(t) y = lambda Delta(t) y on
//! [a, b) and their validation (Hermiticity, weight positivity,
//! definiteness on a grid).

use ndarray::Axis;

use crate::blockspace::{build_j, BlockSignature};
use crate::error::{Result, WkError};
use crate::linalg::{self, cr, CMat};
use crate::quad::CubicSpline;

/// Coefficient sampler: constant, matrix polynomial in t, or tabulated
/// values with natural cubic-spline interpolation per entry.
#[derive(Debug, Clone)]
pub enum MatrixSampler {
    Constant(CMat),
    Polynomial(Vec<CMat>),
    Table {
        splines_re: Vec<CubicSpline>,
        splines_im: Vec<CubicSpline>,
        rows: usize,
        cols: usize,
    },
}

impl MatrixSampler {
    pub fn table(ts: &[f64], values: &[CMat]) -> Result<Self> {
        if values.is_empty() || ts.len() != values.len() {
            return Err(WkError::ShapeMismatch("table sampler needs matching ts/values".into()));
        }
        let (rows, cols) = values[0].dim();
        let mut splines_re = Vec::with_capacity(rows * cols);
        let mut splines_im = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let re: Vec<f64> = values.iter().map(|m| m[(r, c)].re).collect();
                let im: Vec<f64> = values.iter().map(|m| m[(r, c)].im).collect();
                splines_re.push(CubicSpline::new(ts, &re));
                splines_im.push(CubicSpline::new(ts, &im));
            }
        }
        Ok(MatrixSampler::Table {
            splines_re,
            splines_im,
            rows,
            cols,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            MatrixSampler::Constant(m) => m.dim(),
            MatrixSampler::Polynomial(cs) => cs[0].dim(),
            MatrixSampler::Table { rows, cols, .. } => (*rows, *cols),
        }
    }

    pub fn eval(&self, t: f64) -> CMat {
        match self {
            MatrixSampler::Constant(m) => m.clone(),
            MatrixSampler::Polynomial(cs) => {
                let (r, c) = cs[0].dim();
                let mut acc = linalg::zeros(r, c);
                let mut tp = 1.0;
                for coeff in cs {
                    acc = &acc + &coeff.mapv(|z| z * cr(tp));
                    tp *= t;
                }
                acc
            }
            MatrixSampler::Table {
                splines_re,
                splines_im,
                rows,
                cols,
            } => {
                let mut m = linalg::zeros(*rows, *cols);
                for r in 0..*rows {
                    for c in 0..*cols {
                        let k = r * cols + c;
                        m[(r, c)] = linalg::c(splines_re[k].eval(t), splines_im[k].eval(t));
                    }
                }
                m
            }
        }
    }
}

/// Endpoint behaviour at b.
#[derive(Debug, Clone)]
pub enum EndpointDescriptor {
    /// Finite b with integrable coefficients up to b.
    Regular { b: f64 },
    /// Coefficients frozen to (b_inf, delta_inf) for t >= t0; the interval
    /// is [a, infinity).
    ConstantTail { t0: f64, b_inf: CMat, delta_inf: CMat },
    /// Declared endpoint form on abstract data extracted at t_cut; used to
    /// exercise the unequal-index boundary algebra without analytic
    /// singular boundary values.
    AbstractForm { t_cut: f64, omega_b: CMat },
}

impl EndpointDescriptor {
    /// End of the interval on which coefficients are integrated directly.
    pub fn working_end(&self) -> f64 {
        match self {
            EndpointDescriptor::Regular { b } => *b,
            EndpointDescriptor::ConstantTail { t0, .. } => *t0,
            EndpointDescriptor::AbstractForm { t_cut, .. } => *t_cut,
        }
    }
}

/// A validated symmetric system.
#[derive(Debug, Clone)]
pub struct SymmetricSystem {
    pub sig: BlockSignature,
    pub a: f64,
    pub endpoint: EndpointDescriptor,
    b: MatrixSampler,
    delta: MatrixSampler,
    pub j: CMat,
}

pub const COEFF_TOL: f64 = 1e-12;

impl SymmetricSystem {
    pub fn new(
        sig: BlockSignature,
        a: f64,
        endpoint: EndpointDescriptor,
        b: MatrixSampler,
        delta: MatrixSampler,
    ) -> Result<Self> {
        let n = sig.n();
        for (name, dims) in [("B", b.dims()), ("Delta", delta.dims())] {
            if dims != (n, n) {
                return Err(WkError::ShapeMismatch(format!(
                    "{name} sampler has shape {dims:?}, expected ({n}, {n})"
                )));
            }
        }
        match &endpoint {
            EndpointDescriptor::Regular { b } => {
                if !(*b > a) || !b.is_finite() {
                    return Err(WkError::UnsupportedEndpoint(
                        "regular endpoint must satisfy a < b < infinity".into(),
                    ));
                }
            }
            EndpointDescriptor::ConstantTail { t0, b_inf, delta_inf } => {
                if *t0 < a {
                    return Err(WkError::UnsupportedEndpoint("tail start t0 < a".into()));
                }
                if b_inf.dim() != (n, n) || delta_inf.dim() != (n, n) {
                    return Err(WkError::ShapeMismatch("tail matrices must be n x n".into()));
                }
                linalg::require_hermitian(b_inf, COEFF_TOL)?;
                linalg::require_hermitian(delta_inf, COEFF_TOL)?;
            }
            EndpointDescriptor::AbstractForm { t_cut, omega_b } => {
                if !(*t_cut > a) {
                    return Err(WkError::UnsupportedEndpoint("t_cut must exceed a".into()));
                }
                if omega_b.dim() != (n, n) {
                    return Err(WkError::ShapeMismatch("omega_b must be n x n".into()));
                }
                linalg::require_hermitian(omega_b, COEFF_TOL)?;
            }
        }
        Ok(SymmetricSystem {
            j: build_j(&sig),
            sig,
            a,
            endpoint,
            b,
            delta,
        })
    }

    pub fn n(&self) -> usize {
        self.sig.n()
    }

    pub fn b_at(&self, t: f64) -> CMat {
        if let EndpointDescriptor::ConstantTail { t0, b_inf, .. } = &self.endpoint {
            if t >= *t0 {
                return b_inf.clone();
            }
        }
        self.b.eval(t)
    }

    pub fn delta_at(&self, t: f64) -> CMat {
        if let EndpointDescriptor::ConstantTail { t0, delta_inf, .. } = &self.endpoint {
            if t >= *t0 {
                return delta_inf.clone();
            }
        }
        self.delta.eval(t)
    }

    /// Right-hand side matrix of y' = -J (B + lambda Delta) y.
    pub fn rhs_matrix(&self, t: f64, lambda: linalg::C64) -> CMat {
        let m = &self.b_at(t) + &self.delta_at(t).mapv(|z| z * lambda);
        self.j.mapv(|z| -z).dot(&m)
    }

    pub fn working_end(&self) -> f64 {
        self.endpoint.working_end()
    }

    /// Default grid on the working interval (used by validation helpers).
    pub fn default_grid(&self, points: usize) -> Vec<f64> {
        let hi = match &self.endpoint {
            // definiteness must see the weight beyond a degenerate interval
            EndpointDescriptor::ConstantTail { t0, .. } => {
                if (*t0 - self.a).abs() < 1e-12 {
                    self.a + 10.0
                } else {
                    t0.max(self.a + 1.0) + 5.0
                }
            }
            other => other.working_end(),
        };
        let lo = self.a;
        (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points.saturating_sub(1).max(1)) as f64)
            .collect()
    }
}

/// Per-point Hermiticity / positivity residuals of the coefficients.
#[derive(Debug, Clone)]
pub struct CoefficientReport {
    pub max_b_hermiticity: f64,
    pub max_delta_hermiticity: f64,
    pub max_delta_negativity: f64,
}

impl CoefficientReport {
    pub fn max_residual(&self) -> f64 {
        self.max_b_hermiticity
            .max(self.max_delta_hermiticity)
            .max(self.max_delta_negativity)
    }
}

pub fn validate_coefficients(sys: &SymmetricSystem, grid: &[f64]) -> Result<CoefficientReport> {
    let mut rep = CoefficientReport {
        max_b_hermiticity: 0.0,
        max_delta_hermiticity: 0.0,
        max_delta_negativity: 0.0,
    };
    for &t in grid {
        let b = sys.b_at(t);
        let d = sys.delta_at(t);
        rep.max_b_hermiticity = rep
            .max_b_hermiticity
            .max(linalg::norm2(&(&b - &linalg::adjoint(&b))));
        rep.max_delta_hermiticity = rep
            .max_delta_hermiticity
            .max(linalg::norm2(&(&d - &linalg::adjoint(&d))));
        let min = linalg::min_eig_herm(&d)?;
        rep.max_delta_negativity = rep.max_delta_negativity.max((-min).max(0.0));
    }
    Ok(rep)
}

pub const DEFINITENESS_TOL: f64 = 1e-8;

/// Numerical definiteness certificate: for each sampled lambda, the stacked
/// map c -> (Delta(t_i)^{1/2} Y(t_i, lambda) c)_i has smallest singular value
/// above `DEFINITENESS_TOL` times the largest, i.e. no nontrivial solution is
/// Delta-null on the grid.
pub fn check_definite(
    sys: &SymmetricSystem,
    lambdas: &[linalg::C64],
    grid: &[f64],
) -> Result<bool> {
    let n = sys.n();
    if grid.len() < n {
        return Err(WkError::PreconditionFailed(format!(
            "definiteness grid needs at least n = {n} points"
        )));
    }
    for &lambda in lambdas {
        let hi = grid.iter().cloned().fold(sys.a, f64::max);
        let sol = crate::ode::integrate_linear(
            |t| sys.rhs_matrix(t, lambda),
            sys.a,
            hi,
            linalg::eye(n),
            1e-10,
            1e-12,
        )?;
        let mut blocks: Vec<CMat> = Vec::with_capacity(grid.len());
        for &t in grid {
            let y = sol.eval(t);
            let d = sys.delta_at(t);
            let (vals, vecs) = linalg::eigh(&d)?;
            let mut sqrt = linalg::zeros(n, n);
            for k in 0..n {
                let v = vals[k].max(0.0).sqrt();
                sqrt[(k, k)] = cr(v);
            }
            let d_half = vecs.dot(&sqrt).dot(&linalg::adjoint(&vecs));
            blocks.push(d_half.dot(&y));
        }
        let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
        let stacked = ndarray::concatenate(Axis(0), &views).expect("stack");
        let parts = linalg::svd_full(&stacked)?;
        let smax = parts.s.iter().cloned().fold(0.0, f64::max);
        let smin = parts.s.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(smin > DEFINITENESS_TOL * smax) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// The 2x2 free-particle system (second-order -y'' = lambda y in first-order
/// form): B = diag(0, 1), Delta = diag(1, 0). Shared by tests and shipped
/// configurations.
pub fn free_schrodinger_coeffs() -> (CMat, CMat) {
    let mut b = linalg::zeros(2, 2);
    b[(1, 1)] = cr(1.0);
    let mut d = linalg::zeros(2, 2);
    d[(0, 0)] = cr(1.0);
    (b, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;

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

    #[test]
    fn free_schrodinger_is_definite() {
        let sys = free_system(EndpointDescriptor::Regular { b: 1.0 });
        let grid: Vec<f64> = (0..32).map(|i| i as f64 / 31.0).collect();
        assert!(check_definite(&sys, &[c(0.0, 1.0), c(0.0, -1.0)], &grid).unwrap());
    }

    #[test]
    fn zero_weight_is_not_definite() {
        let sig = BlockSignature::new(1, 0).unwrap();
        let (b, _) = free_schrodinger_coeffs();
        let sys = SymmetricSystem::new(
            sig,
            0.0,
            EndpointDescriptor::Regular { b: 1.0 },
            MatrixSampler::Constant(b),
            MatrixSampler::Constant(linalg::zeros(2, 2)),
        )
        .unwrap();
        let grid: Vec<f64> = (0..8).map(|i| i as f64 / 7.0).collect();
        assert!(!check_definite(&sys, &[c(0.0, 1.0)], &grid).unwrap());
    }

    #[test]
    fn definiteness_survives_grid_refinement() {
        let sys = free_system(EndpointDescriptor::Regular { b: 1.0 });
        let coarse: Vec<f64> = (0..8).map(|i| i as f64 / 7.0).collect();
        let fine: Vec<f64> = (0..64).map(|i| i as f64 / 63.0).collect();
        assert!(check_definite(&sys, &[c(0.5, 0.5)], &coarse).unwrap());
        assert!(check_definite(&sys, &[c(0.5, 0.5)], &fine).unwrap());
    }

    #[test]
    fn definite_for_lambda_samples_off_axis() {
        let sys = free_system(EndpointDescriptor::Regular { b: 1.0 });
        let grid: Vec<f64> = (0..32).map(|i| i as f64 / 31.0).collect();
        let lambdas: Vec<_> = [0.1, -0.1, 0.7, -1.3, 2.0]
            .iter()
            .map(|&im| c(0.3, im))
            .collect();
        assert!(check_definite(&sys, &lambdas, &grid).unwrap());
    }

    #[test]
    fn coefficient_report_flags_asymmetry() {
        let sig = BlockSignature::new(1, 0).unwrap();
        let mut bad = linalg::zeros(2, 2);
        bad[(0, 1)] = cr(1.0);
        let sys = SymmetricSystem {
            j: build_j(&sig),
            sig,
            a: 0.0,
            endpoint: EndpointDescriptor::Regular { b: 1.0 },
            b: MatrixSampler::Constant(bad),
            delta: MatrixSampler::Constant(linalg::eye(2)),
        };
        let rep = validate_coefficients(&sys, &[0.0, 0.5, 1.0]).unwrap();
        assert!((rep.max_b_hermiticity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constructed_psd_weight_passes() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 3;
        let sig = BlockSignature::new(1, 1).unwrap();
        let mut cmat = linalg::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                cmat[(i, j)] = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        let delta = linalg::adjoint(&cmat).dot(&cmat);
        let mut herm = linalg::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let z = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                herm[(i, j)] = z;
            }
        }
        let herm = linalg::herm_part(&herm);
        let sys = SymmetricSystem::new(
            sig,
            0.0,
            EndpointDescriptor::Regular { b: 1.0 },
            MatrixSampler::Constant(herm),
            MatrixSampler::Constant(delta),
        )
        .unwrap();
        let rep = validate_coefficients(&sys, &[0.0, 0.3, 1.0]).unwrap();
        assert!(rep.max_residual() < 1e-14);
    }

    #[test]
    fn samplers_evaluate() {
        let coeffs = vec![linalg::eye(2), linalg::eye(2).mapv(|z| z * cr(2.0))];
        let p = MatrixSampler::Polynomial(coeffs);
        let m = p.eval(0.5);
        assert!((m[(0, 0)].re - 2.0).abs() < 1e-14);

        let ts = [0.0, 0.5, 1.0, 1.5];
        let vals: Vec<CMat> = ts
            .iter()
            .map(|&t| linalg::eye(2).mapv(|z| z * cr(1.0 + t)))
            .collect();
        let tab = MatrixSampler::table(&ts, &vals).unwrap();
        assert!((tab.eval(0.75)[(1, 1)].re - 1.75).abs() < 1e-10);
    }
}
