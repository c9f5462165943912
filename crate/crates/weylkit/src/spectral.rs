//! Spectral side of the pipeline: Green kernel and resolvent application,
//! Stieltjes inversion of the m-function into a matrix distribution
//! function, the Fourier transform and its inverse, Parseval checks, the
//! SF0 criteria and spectrum readouts.

use std::sync::Arc;

use ndarray::{s, Array1};

use crate::error::{Result, WkError};
use crate::linalg::{self, adjoint, c, cr, norm2, zeros, CMat, CVec, C64};
use crate::ode;
use crate::propagator::{self, PropOpts};
use crate::quad;
use crate::system::SymmetricSystem;
use crate::weyl::{eval_tau, BoundaryParameter, WeylContext};

/// A vector-valued function with finite Delta-norm and compact support.
#[derive(Clone)]
pub struct WeightedFunction {
    sampler: Arc<dyn Fn(f64) -> CVec + Send + Sync>,
    pub support_end: f64,
}

impl WeightedFunction {
    pub fn new(sampler: Arc<dyn Fn(f64) -> CVec + Send + Sync>, support_end: f64) -> Self {
        WeightedFunction {
            sampler,
            support_end,
        }
    }

    pub fn eval(&self, t: f64) -> CVec {
        (self.sampler)(t)
    }

    /// Smooth bump exp(1 - 1/(1 - x^2)) in one component, supported on
    /// [center - width, center + width].
    pub fn bump(n: usize, component: usize, center: f64, width: f64) -> Self {
        WeightedFunction {
            sampler: Arc::new(move |t: f64| {
                let x = (t - center) / width;
                let mut v = Array1::zeros(n);
                if x.abs() < 1.0 {
                    v[component] = cr((1.0 - 1.0 / (1.0 - x * x)).exp());
                }
                v
            }),
            support_end: center + width,
        }
    }

    /// Interpolate sampled values (used to feed a resolvent output back in).
    pub fn from_samples(ts: &[f64], values: &[CVec], support_end: f64) -> Self {
        let n = values[0].len();
        let mut splines_re = Vec::with_capacity(n);
        let mut splines_im = Vec::with_capacity(n);
        for k in 0..n {
            let re: Vec<f64> = values.iter().map(|v| v[k].re).collect();
            let im: Vec<f64> = values.iter().map(|v| v[k].im).collect();
            splines_re.push(quad::CubicSpline::new(ts, &re));
            splines_im.push(quad::CubicSpline::new(ts, &im));
        }
        let lo = ts[0];
        let hi = *ts.last().unwrap();
        WeightedFunction {
            sampler: Arc::new(move |t: f64| {
                let mut v = Array1::zeros(n);
                if t >= lo && t <= hi {
                    for k in 0..n {
                        v[k] = c(splines_re[k].eval(t), splines_im[k].eval(t));
                    }
                }
                v
            }),
            support_end,
        }
    }
}

/// Delta-norm squared of f over [a, support_end].
pub fn delta_norm_sq(sys: &SymmetricSystem, f: &WeightedFunction, panels: usize) -> f64 {
    let (nodes, weights) = quad::panel_nodes(sys.a, f.support_end, panels, 16);
    let mut acc = 0.0;
    for (t, w) in nodes.iter().zip(weights.iter()) {
        let v = f.eval(*t);
        let dv = sys.delta_at(*t).dot(&v);
        let q: C64 = v.iter().zip(dv.iter()).map(|(a, b)| a.conj() * b).sum();
        acc += w * q.re;
    }
    acc
}

/// Resolvent application through the Green kernel. Returns samples of
/// y(x, lambda) on `xs` plus defect diagnostics.
pub struct GreenResult {
    pub xs: Vec<f64>,
    pub ys: Vec<CVec>,
    /// relative deviation from a direct inhomogeneous re-integration
    pub ode_residual: f64,
    /// residual of the boundary condition Gamma_1a y = 0
    pub bc_residual: f64,
}

pub fn green_apply(
    ctx: &WeylContext,
    tau: &BoundaryParameter,
    lambda: C64,
    f: &WeightedFunction,
    xs: &[f64],
) -> Result<GreenResult> {
    let sys = &ctx.sys;
    let ev = eval_tau(ctx, tau, lambda)?;
    let ev_conj = eval_tau(ctx, tau, lambda.conj())?;
    let t_hi = xs
        .iter()
        .cloned()
        .fold(f.support_end, f64::max)
        .max(sys.working_end());
    let (phi_sol, _) = propagator::phi_psi_solutions(sys, &ctx.ext_u, lambda, t_hi, &ctx.opts.prop)?;
    let (phi_conj, _) =
        propagator::phi_psi_solutions(sys, &ctx.ext_u, lambda.conj(), f.support_end, &ctx.opts.prop)?;

    // breakpoints: a, the requested xs (clamped into [a, t_hi]), support end
    let mut brk: Vec<f64> = vec![sys.a, f.support_end];
    brk.extend(xs.iter().cloned());
    brk.retain(|t| *t >= sys.a);
    brk.sort_by(|p, q| p.partial_cmp(q).unwrap());
    brk.dedup_by(|p, q| (*p - *q).abs() < 1e-14);

    let v_tau_at = |t: f64| -> CMat { ev.data.basis.eval(t).dot(&ev.v_coef) };
    let v_conj_at = |t: f64| -> CMat { ev_conj.data.basis.eval(t).dot(&ev_conj.v_coef) };

    // prefix integrals of phi^*(t, conj l) Delta f and v^*(t, conj l) Delta f
    let nu_minus = sys.sig.nu_minus();
    let mut prefix_phi: Vec<CVec> = Vec::with_capacity(brk.len());
    let mut prefix_v: Vec<CVec> = Vec::with_capacity(brk.len());
    let mut acc_phi: CVec = Array1::zeros(nu_minus);
    let mut acc_v: CVec = Array1::zeros(nu_minus);
    prefix_phi.push(acc_phi.clone());
    prefix_v.push(acc_v.clone());
    for w in brk.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi > f.support_end + 1e-14 || hi - lo < 1e-14 {
            prefix_phi.push(acc_phi.clone());
            prefix_v.push(acc_v.clone());
            continue;
        }
        let sub = ((hi - lo) * 8.0).ceil().max(1.0) as usize;
        let (nodes, weights) = quad::panel_nodes(lo, hi, sub, 16);
        for (t, wq) in nodes.iter().zip(weights.iter()) {
            let df = sys.delta_at(*t).dot(&f.eval(*t));
            let phv = adjoint(&phi_conj.eval(*t));
            let vv = adjoint(&v_conj_at(*t));
            acc_phi = &acc_phi + &phv.dot(&df).mapv(|z| z * cr(*wq));
            acc_v = &acc_v + &vv.dot(&df).mapv(|z| z * cr(*wq));
        }
        prefix_phi.push(acc_phi.clone());
        prefix_v.push(acc_v.clone());
    }
    let total_v = acc_v.clone();

    let value_at = |x: f64| -> CVec {
        let idx = brk
            .iter()
            .position(|t| (*t - x).abs() < 1e-13)
            .expect("x breakpoint");
        let p = &prefix_phi[idx];
        let q = &total_v - &prefix_v[idx];
        let vt = v_tau_at(x);
        let ph = phi_sol.eval(x);
        &vt.dot(p) + &ph.dot(&q)
    };

    let ys: Vec<CVec> = xs.iter().map(|&x| value_at(x)).collect();

    // boundary condition at a: Gamma_1a y = 0
    let ya = value_at(sys.a).insert_axis(ndarray::Axis(1));
    let (_, _, g1a) = ctx.ext_u.gamma_a(&ya.to_owned());
    let scale = ys
        .iter()
        .map(|v| v.iter().map(|z| z.norm()).fold(0.0, f64::max))
        .fold(1e-30, f64::max);
    let bc_residual = norm2(&g1a) / scale.max(1.0);

    // re-integrate the inhomogeneous system from y(a) and compare
    let y0 = ya.to_owned();
    let neg_j = sys.j.mapv(|z| -z);
    let rhs = |t: f64, y: &CMat| -> CMat {
        let a_mat = sys.rhs_matrix(t, lambda);
        let mut out = a_mat.dot(y);
        let fv = f.eval(t);
        if t <= f.support_end {
            let forcing = neg_j.dot(&sys.delta_at(t).dot(&fv));
            for r in 0..out.nrows() {
                out[(r, 0)] += forcing[r];
            }
        }
        out
    };
    let direct = ode::integrate(rhs, sys.a, t_hi, y0, 1e-9, 1e-11)?;
    let mut ode_residual = 0.0_f64;
    for (&x, y) in xs.iter().zip(ys.iter()) {
        let yd = direct.eval(x);
        let diff: f64 = y
            .iter()
            .enumerate()
            .map(|(r, z)| (z - yd[(r, 0)]).norm_sqr())
            .sum::<f64>()
            .sqrt();
        ode_residual = ode_residual.max(diff / scale.max(1.0));
    }
    Ok(GreenResult {
        xs: xs.to_vec(),
        ys,
        ode_residual,
        bc_residual,
    })
}

/// Monotone matrix distribution function: absolutely continuous cell
/// increments plus extracted point masses. Normalized so the cumulative
/// function vanishes at 0 (left-continuous convention).
#[derive(Debug, Clone)]
pub struct DistributionFunction {
    pub grid: Vec<f64>,
    /// AC part of each cell [s_j, s_{j+1})
    pub increments: Vec<CMat>,
    pub jumps: Vec<(f64, CMat)>,
}

impl DistributionFunction {
    pub fn dim(&self) -> usize {
        if let Some(m) = self.increments.first() {
            m.nrows()
        } else if let Some((_, w)) = self.jumps.first() {
            w.nrows()
        } else {
            0
        }
    }

    /// Total mass (AC + jumps) of one cell.
    pub fn cell_mass(&self, k: usize) -> CMat {
        let mut m = self.increments[k].clone();
        for (s, w) in &self.jumps {
            if *s >= self.grid[k] && *s < self.grid[k + 1] {
                m = &m + w;
            }
        }
        m
    }

    pub fn total_trace(&self) -> f64 {
        let tr = |m: &CMat| (0..m.nrows()).map(|i| m[(i, i)].re).sum::<f64>();
        self.increments.iter().map(|m| tr(m)).sum::<f64>()
            + self.jumps.iter().map(|(_, w)| tr(w)).sum::<f64>()
    }
}

#[derive(Debug, Clone)]
pub struct StieltjesOpts {
    /// decreasing epsilon schedule; the last two entries drive the
    /// Richardson step and the jump scan
    pub eps_schedule: Vec<f64>,
    /// jump threshold relative to the total sampled mass
    pub jump_tol: f64,
    /// PSD tolerance for increments
    pub monotone_tol: f64,
    pub nodes_per_cell: usize,
}

impl Default for StieltjesOpts {
    fn default() -> Self {
        StieltjesOpts {
            eps_schedule: vec![1e-1, 3e-2, 1e-2, 3e-3],
            jump_tol: 1e-3,
            monotone_tol: 1e-6,
            nodes_per_cell: 8,
        }
    }
}

type MSampler<'a> = dyn Fn(C64) -> Result<CMat> + 'a;

fn imag_m(m: &CMat) -> CMat {
    linalg::imag_part(m)
}

/// Stieltjes inversion of a Nevanlinna sampler on the lower half-plane:
/// cell increments -(1/pi) int Im m(s - i eps) ds extrapolated in eps, with
/// point masses extracted separately (the AC increments have the extracted
/// Lorentzians removed before quadrature).
pub fn stieltjes_inversion(
    m: &MSampler,
    grid: &[f64],
    opts: &StieltjesOpts,
) -> Result<DistributionFunction> {
    if grid.len() < 2 {
        return Err(WkError::PreconditionFailed("grid needs >= 2 points".into()));
    }
    let dim = m(c(grid[0], -opts.eps_schedule[0]))?.nrows();
    let cells = grid.len() - 1;
    let schedule = &opts.eps_schedule;
    let n_eps = schedule.len();
    let eps_scan = *schedule.last().unwrap();
    let (gl_nodes, gl_weights) = quad::gauss_legendre(opts.nodes_per_cell);

    // one m evaluation per (node, eps); everything below reuses the store
    let mut node_s: Vec<f64> = Vec::with_capacity(cells * opts.nodes_per_cell);
    let mut node_w: Vec<f64> = Vec::with_capacity(cells * opts.nodes_per_cell);
    for k in 0..cells {
        let (lo, hi) = (grid[k], grid[k + 1]);
        let h = hi - lo;
        for (x, w) in gl_nodes.iter().zip(gl_weights.iter()) {
            node_s.push(lo + 0.5 * h * (x + 1.0));
            node_w.push(0.5 * h * w);
        }
    }
    let mut im_store: Vec<Vec<CMat>> = Vec::with_capacity(n_eps);
    for &eps in schedule.iter() {
        let mut row = Vec::with_capacity(node_s.len());
        for &sgm in &node_s {
            row.push(imag_m(&m(c(sgm, -eps))?));
        }
        im_store.push(row);
    }

    // mass estimate at the coarsest epsilon for the jump threshold
    let tr_of = |mm: &CMat| -> f64 { (0..dim).map(|i| mm[(i, i)].re).sum() };
    let mass_est: f64 = node_w
        .iter()
        .zip(im_store[0].iter())
        .map(|(w, im)| -w * tr_of(im) / std::f64::consts::PI)
        .sum();
    let jump_floor = (opts.jump_tol * mass_est.abs()).max(1e-12);

    // scan for point masses at the finest epsilon
    let mut candidates: Vec<f64> = Vec::new();
    for (sgm, im) in node_s.iter().zip(im_store[n_eps - 1].iter()) {
        if -tr_of(im) * eps_scan > jump_floor {
            candidates.push(*sgm);
        }
    }
    candidates.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let mut clusters: Vec<(f64, f64)> = Vec::new();
    for ssc in candidates {
        match clusters.last_mut() {
            Some((_, hi)) if ssc - *hi < 20.0 * eps_scan => *hi = ssc,
            _ => clusters.push((ssc, ssc)),
        }
    }

    let peak = |sgm: f64, eps: f64| -> Result<f64> {
        let mm = m(c(sgm, -eps))?;
        Ok(-tr_of(&imag_m(&mm)) * eps)
    };
    let golden = |mut lo: f64, mut hi: f64, eps: f64| -> Result<f64> {
        let gr = (5.0_f64.sqrt() - 1.0) / 2.0;
        let mut x1 = hi - gr * (hi - lo);
        let mut x2 = lo + gr * (hi - lo);
        let mut f1 = peak(x1, eps)?;
        let mut f2 = peak(x2, eps)?;
        for _ in 0..90 {
            if hi - lo < 1e-11 * (1.0 + hi.abs()) {
                break;
            }
            if f1 < f2 {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + gr * (hi - lo);
                f2 = peak(x2, eps)?;
            } else {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - gr * (hi - lo);
                f1 = peak(x1, eps)?;
            }
        }
        Ok(0.5 * (lo + hi))
    };
    let mut jumps: Vec<(f64, CMat)> = Vec::new();
    for (lo0, hi0) in clusters {
        let bracket = 25.0 * eps_scan;
        let s1 = golden(lo0 - bracket, hi0 + bracket, eps_scan)?;
        let s_hat = golden(s1 - 5.0 * eps_scan, s1 + 5.0 * eps_scan, eps_scan * 0.25)?;
        // matrix weight: quadratic Richardson over (eps, eps/2, eps/4)
        let w_at = |eps: f64| -> Result<CMat> {
            let mm = m(c(s_hat, -eps))?;
            Ok(imag_m(&mm).mapv(|z| z * cr(-eps)))
        };
        let w1 = w_at(eps_scan)?;
        let w2 = w_at(eps_scan * 0.5)?;
        let w4 = w_at(eps_scan * 0.25)?;
        let w = (&w4.mapv(|z| z * cr(8.0)) - &w2.mapv(|z| z * cr(6.0)) + w1)
            .mapv(|z| z / cr(3.0));
        let wtr = tr_of(&w);
        if wtr > jump_floor {
            if let Some((sp, _)) = jumps.last() {
                if (s_hat - sp).abs() < 5.0 * eps_scan {
                    continue;
                }
            }
            let min_eig = linalg::min_eig_herm(&w)?;
            if min_eig < -opts.monotone_tol {
                return Err(WkError::NonMonotone { eigenvalue: min_eig });
            }
            jumps.push((s_hat, w));
        }
    }

    // AC cell integrals with the extracted Lorentzians subtracted, for every
    // epsilon in the schedule, then least-squares quadratic extrapolation
    // I(eps) = I0 + c1 eps + c2 eps^2 to eps -> 0.
    let mut cell_ints: Vec<Vec<CMat>> = vec![Vec::with_capacity(cells); n_eps];
    for (ei, &eps) in schedule.iter().enumerate() {
        for k in 0..cells {
            let mut acc = zeros(dim, dim);
            for node in 0..opts.nodes_per_cell {
                let idx = k * opts.nodes_per_cell + node;
                let sgm = node_s[idx];
                let mut im = im_store[ei][idx].clone();
                for (s0, w) in &jumps {
                    let lorentz = eps / ((s0 - sgm).powi(2) + eps * eps);
                    im = &im + &w.mapv(|z| z * cr(lorentz));
                }
                acc = &acc + &im.mapv(|z| z * cr(node_w[idx]));
            }
            cell_ints[ei].push(acc.mapv(|z| -z / cr(std::f64::consts::PI)));
        }
    }
    // precompute the eps -> 0 extrapolation weights (first row of the
    // pseudo-inverse of the Vandermonde in eps)
    let extrap_weights: Vec<f64> = {
        let mut v = zeros(n_eps, 3.min(n_eps));
        for (r, &eps) in schedule.iter().enumerate() {
            v[(r, 0)] = cr(1.0);
            if v.ncols() > 1 {
                v[(r, 1)] = cr(eps);
            }
            if v.ncols() > 2 {
                v[(r, 2)] = cr(eps * eps);
            }
        }
        let pinv = linalg::pinv(&v, 1e-13)?;
        (0..n_eps).map(|k| pinv[(0, k)].re).collect()
    };
    let mut increments = Vec::with_capacity(cells);
    for k in 0..cells {
        let mut inc = zeros(dim, dim);
        for ei in 0..n_eps {
            inc = &inc + &cell_ints[ei][k].mapv(|z| z * cr(extrap_weights[ei]));
        }
        let min_eig = linalg::min_eig_herm(&inc)?;
        if min_eig < -opts.monotone_tol.max(1e-6) {
            return Err(WkError::NonMonotone { eigenvalue: min_eig });
        }
        increments.push(inc);
    }

    Ok(DistributionFunction {
        grid: grid.to_vec(),
        increments,
        jumps,
    })
}

/// Fourier transform samples: f-hat(s) = int phi_U^*(t, s) Delta(t) f(t) dt.
pub fn fourier(
    sys: &SymmetricSystem,
    ext_u: &crate::boundary::ExtendedU,
    f: &WeightedFunction,
    s_grid: &[f64],
    opts: &PropOpts,
) -> Result<Vec<CVec>> {
    let mut out = Vec::with_capacity(s_grid.len());
    let panels = ((f.support_end - sys.a) * 4.0).ceil().max(8.0) as usize;
    let (nodes, weights) = quad::panel_nodes(sys.a, f.support_end, panels, 16);
    for &sv in s_grid {
        let (phi, _) =
            propagator::phi_psi_solutions(sys, ext_u, cr(sv), f.support_end, opts)?;
        let mut acc: CVec = Array1::zeros(sys.sig.nu_minus());
        for (t, w) in nodes.iter().zip(weights.iter()) {
            let df = sys.delta_at(*t).dot(&f.eval(*t));
            acc = &acc + &adjoint(&phi.eval(*t)).dot(&df).mapv(|z| z * cr(*w));
        }
        out.push(acc);
    }
    Ok(out)
}

/// ||f-hat||^2 in L^2(Sigma): cell midpoint rule on the AC part plus exact
/// jump terms.
pub fn l2_sigma_norm_sq(
    sys: &SymmetricSystem,
    ext_u: &crate::boundary::ExtendedU,
    sigma: &DistributionFunction,
    f: &WeightedFunction,
    opts: &PropOpts,
) -> Result<f64> {
    let mids: Vec<f64> = sigma
        .grid
        .windows(2)
        .map(|w| 0.5 * (w[0] + w[1]))
        .collect();
    let fh_mid = fourier(sys, ext_u, f, &mids, opts)?;
    let jump_locs: Vec<f64> = sigma.jumps.iter().map(|(s, _)| *s).collect();
    let fh_jump = fourier(sys, ext_u, f, &jump_locs, opts)?;
    let quad_form = |w: &CMat, v: &CVec| -> f64 {
        let wv = w.dot(v);
        v.iter()
            .zip(wv.iter())
            .map(|(a, b)| (a.conj() * b).re)
            .sum()
    };
    let mut acc = 0.0;
    for (inc, fh) in sigma.increments.iter().zip(fh_mid.iter()) {
        acc += quad_form(inc, fh);
    }
    for ((_, w), fh) in sigma.jumps.iter().zip(fh_jump.iter()) {
        acc += quad_form(w, fh);
    }
    Ok(acc)
}

/// Relative Parseval defect |  ||f-hat||^2 - ||f||^2 | / ||f||^2.
pub fn parseval_defect(
    sys: &SymmetricSystem,
    ext_u: &crate::boundary::ExtendedU,
    sigma: &DistributionFunction,
    f: &WeightedFunction,
    opts: &PropOpts,
) -> Result<f64> {
    let lhs = l2_sigma_norm_sq(sys, ext_u, sigma, f, opts)?;
    let rhs = delta_norm_sq(sys, f, 32);
    if rhs == 0.0 {
        return Ok(0.0);
    }
    Ok((lhs - rhs).abs() / rhs)
}

/// Inverse transform int phi_U(t, s) dSigma(s) f-hat(s) sampled on `ts`.
pub fn inverse_fourier(
    sys: &SymmetricSystem,
    ext_u: &crate::boundary::ExtendedU,
    sigma: &DistributionFunction,
    fh_mid: &[CVec],
    fh_jump: &[CVec],
    ts: &[f64],
    opts: &PropOpts,
) -> Result<Vec<CVec>> {
    let n = sys.n();
    let t_hi = ts.iter().cloned().fold(sys.a, f64::max);
    let mut out: Vec<CVec> = vec![Array1::zeros(n); ts.len()];
    let mids: Vec<f64> = sigma
        .grid
        .windows(2)
        .map(|w| 0.5 * (w[0] + w[1]))
        .collect();
    for ((sv, inc), fh) in mids.iter().zip(sigma.increments.iter()).zip(fh_mid.iter()) {
        let (phi, _) = propagator::phi_psi_solutions(sys, ext_u, cr(*sv), t_hi, opts)?;
        let coeff = inc.dot(fh);
        for (k, &t) in ts.iter().enumerate() {
            out[k] = &out[k] + &phi.eval(t).dot(&coeff);
        }
    }
    for ((sv, w), fh) in sigma.jumps.iter().zip(fh_jump.iter()) {
        let (phi, _) = propagator::phi_psi_solutions(sys, ext_u, cr(*sv), t_hi, opts)?;
        let coeff = w.dot(fh);
        for (k, &t) in ts.iter().enumerate() {
            out[k] = &out[k] + &phi.eval(t).dot(&coeff);
        }
    }
    Ok(out)
}

/// Relative Delta-norm round-trip error of inverse_fourier(fourier(f)).
pub fn roundtrip_error(
    sys: &SymmetricSystem,
    ext_u: &crate::boundary::ExtendedU,
    sigma: &DistributionFunction,
    f: &WeightedFunction,
    opts: &PropOpts,
) -> Result<f64> {
    let mids: Vec<f64> = sigma
        .grid
        .windows(2)
        .map(|w| 0.5 * (w[0] + w[1]))
        .collect();
    let fh_mid = fourier(sys, ext_u, f, &mids, opts)?;
    let jump_locs: Vec<f64> = sigma.jumps.iter().map(|(s, _)| *s).collect();
    let fh_jump = fourier(sys, ext_u, f, &jump_locs, opts)?;
    let panels = ((f.support_end - sys.a) * 4.0).ceil().max(8.0) as usize;
    let (nodes, weights) = quad::panel_nodes(sys.a, f.support_end, panels, 16);
    let rec = inverse_fourier(sys, ext_u, sigma, &fh_mid, &fh_jump, &nodes, opts)?;
    let mut err = 0.0;
    let mut nrm = 0.0;
    for ((t, w), r) in nodes.iter().zip(weights.iter()).zip(rec.iter()) {
        let fv = f.eval(*t);
        let d = sys.delta_at(*t);
        let diff = &fv - r;
        let dd = d.dot(&diff);
        err += w * diff
            .iter()
            .zip(dd.iter())
            .map(|(a, b)| (a.conj() * b).re)
            .sum::<f64>();
        let df = d.dot(&fv);
        nrm += w * fv
            .iter()
            .zip(df.iter())
            .map(|(a, b)| (a.conj() * b).re)
            .sum::<f64>();
    }
    Ok((err.max(0.0) / nrm.max(1e-300)).sqrt())
}

/// SF0 criteria: the two block limits along i y, evaluated at the given
/// positive y samples, with geometric extrapolation.
#[derive(Debug, Clone)]
pub struct Sf0Report {
    pub ys: Vec<f64>,
    pub b_norms: Vec<f64>,
    pub bhat_norms: Vec<f64>,
    pub b_limit: f64,
    pub bhat_limit: f64,
    pub verdict: bool,
}

fn extrapolate(norms: &[f64]) -> f64 {
    let k = norms.len();
    if k < 2 {
        return *norms.last().unwrap_or(&0.0);
    }
    let last = norms[k - 1];
    let prev = norms[k - 2];
    if prev <= 1e-300 {
        return last;
    }
    let r = last / prev;
    if r < 1.0 {
        (last * r / (1.0 - r)).abs().min(last)
    } else {
        last
    }
}

pub fn sf0_criteria(
    ctx: &WeylContext,
    tau: &BoundaryParameter,
    ys: &[f64],
) -> Result<Sf0Report> {
    let dims = ctx.dims();
    let mut b_norms = Vec::with_capacity(ys.len());
    let mut bhat_norms = Vec::with_capacity(ys.len());
    if dims.cb == 0 {
        // trivial C_b: both block functions are empty
        return Ok(Sf0Report {
            ys: ys.to_vec(),
            b_norms: vec![0.0; ys.len()],
            bhat_norms: vec![0.0; ys.len()],
            b_limit: 0.0,
            bhat_limit: 0.0,
            verdict: true,
        });
    }
    let p1 = dims.red_p1();
    let p2 = dims.red_p2();
    for &y in ys {
        // B along the lower half-plane: (1/(i y_-)) P_cb (D0 - D1 Mdot_-)^{-1} D1
        let lambda_m = c(0.0, -y);
        let data = ctx.eval(lambda_m)?;
        let d0 = tau.d0_at(lambda_m);
        let d1 = tau.d1_at(lambda_m);
        let core = &d0 - &d1.dot(&data.mdot);
        let inv = linalg::solve(&core, &d1)?;
        let b_mat = p1.dot(&inv).mapv(|z| z / (c(0.0, -y)));
        b_norms.push(norm2(&b_mat));

        // B-hat along the upper half-plane through the derived (C0, C1)
        let lambda_p = c(0.0, y);
        let data_p = ctx.eval(lambda_p)?;
        let (c0, c1) = tau.c_pair(dims, lambda_p)?;
        let m4 = p1.dot(&data_p.mdot);
        let n_rest = p2.dot(&data_p.mdot);
        let c0b = c0.dot(&dims.red_embed_cb());
        let c02 = c0.dot(&adjoint(&p2));
        let core = &(&c0b - &c1.dot(&m4)) + &c02.dot(&n_rest).mapv(|z| z * linalg::I);
        let inv = linalg::solve(&core, &c0b)?;
        let bh = m4.dot(&inv).mapv(|z| z / c(0.0, y));
        bhat_norms.push(norm2(&bh));
    }
    let b_limit = extrapolate(&b_norms);
    let bhat_limit = extrapolate(&bhat_norms);
    // settling check: the sequences must not grow
    let growing = b_norms.windows(2).all(|w| w[1] > 2.0 * w[0] + 1e-12)
        && b_norms.last().cloned().unwrap_or(0.0) > 1e-3;
    if growing {
        return Err(WkError::NoConvergence(
            "SF0 block limit grows along i y".into(),
        ));
    }
    Ok(Sf0Report {
        ys: ys.to_vec(),
        b_norms,
        bhat_norms,
        b_limit,
        bhat_limit,
        verdict: b_limit < 1e-6 && bhat_limit < 1e-6,
    })
}

/// Spectrum readout from a distribution function.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SpectrumReport {
    /// closed intervals of cells with AC density above the threshold
    pub ac_support: Vec<(f64, f64)>,
    /// point masses (location, trace weight)
    pub point_masses: Vec<(f64, f64)>,
    /// fraction of grid cells carrying AC density
    pub ac_cell_fraction: f64,
}

pub fn spectrum_readout(sigma: &DistributionFunction, dens_tol: f64) -> SpectrumReport {
    let mut intervals: Vec<(f64, f64)> = Vec::new();
    let mut ac_cells = 0usize;
    let cells = sigma.increments.len();
    for k in 0..cells {
        let width = sigma.grid[k + 1] - sigma.grid[k];
        let tr: f64 = (0..sigma.dim()).map(|i| sigma.increments[k][(i, i)].re).sum();
        if tr / width > dens_tol {
            ac_cells += 1;
            let lo = sigma.grid[k];
            let hi = sigma.grid[k + 1];
            match intervals.last_mut() {
                Some((_, end)) if (*end - lo).abs() < 1e-12 => *end = hi,
                _ => intervals.push((lo, hi)),
            }
        }
    }
    let point_masses = sigma
        .jumps
        .iter()
        .map(|(s, w)| {
            let tr: f64 = (0..w.nrows()).map(|i| w[(i, i)].re).sum();
            (*s, tr)
        })
        .collect();
    SpectrumReport {
        ac_support: intervals,
        point_masses,
        ac_cell_fraction: ac_cells as f64 / cells.max(1) as f64,
    }
}

/// Restrict jump detection to the leading block of a truncated-parameter
/// distribution (the singular part lives there).
pub fn singular_support_block(
    sigma: &DistributionFunction,
    block: usize,
    tol: f64,
) -> Vec<(f64, f64)> {
    sigma
        .jumps
        .iter()
        .filter_map(|(s, w)| {
            let sub = w.slice(s![0..block, 0..block]).to_owned();
            let tr: f64 = (0..block).map(|i| sub[(i, i)].re).sum();
            if tr > tol {
                Some((*s, tr))
            } else {
                None
            }
        })
        .collect()
}
