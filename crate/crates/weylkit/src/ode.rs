//! Adaptive Dormand-Prince 5(4) integrator for matrix-valued linear ODEs
//! Y'(t) = A(t) Y(t) (+ optional forcing), with 4th-order dense output.
//!
//! States are n x k complex matrices; the systems integrated here are small
//! and smooth, so an explicit embedded pair with continuous extension is the
//! right tool.

use ndarray::Array2;

use crate::error::{Result, WkError};
use crate::linalg::{cr, CMat, C64};

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
// error = b - b_hat
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// dense-output quartic weights
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

struct DenseStep {
    t0: f64,
    h: f64,
    cont: [CMat; 5],
}

impl DenseStep {
    fn eval(&self, t: f64) -> CMat {
        let theta = (t - self.t0) / self.h;
        let th1 = 1.0 - theta;
        let inner2 = &self.cont[3] + &self.cont[4].mapv(|z| z * cr(th1));
        let inner1 = &self.cont[2] + &inner2.mapv(|z| z * cr(theta));
        let inner0 = &self.cont[1] + &inner1.mapv(|z| z * cr(th1));
        &self.cont[0] + &inner0.mapv(|z| z * cr(theta))
    }
}

/// Dense solution on the (directed) interval [t_start, t_end].
pub struct OdeSolution {
    t_start: f64,
    t_end: f64,
    steps: Vec<DenseStep>,
    y_end: CMat,
}

impl OdeSolution {
    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn end_value(&self) -> &CMat {
        &self.y_end
    }

    /// Evaluate at `t` inside the integrated span (clamped to it).
    pub fn eval(&self, t: f64) -> CMat {
        let fwd = self.t_end >= self.t_start;
        let t = if fwd {
            t.clamp(self.t_start, self.t_end)
        } else {
            t.clamp(self.t_end, self.t_start)
        };
        // binary search over monotone step starts
        let mut lo = 0usize;
        let mut hi = self.steps.len() - 1;
        while lo < hi {
            let mid = (lo + hi + 1) / 2;
            let starts_before = if fwd {
                self.steps[mid].t0 <= t
            } else {
                self.steps[mid].t0 >= t
            };
            if starts_before {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        self.steps[lo].eval(t)
    }
}

/// Integrate Y' = f(t, Y) from `t0` to `t1` (either direction) storing dense
/// output. `rhs` must be smooth on the span.
pub fn integrate<F>(rhs: F, t0: f64, t1: f64, y0: CMat, rtol: f64, atol: f64) -> Result<OdeSolution>
where
    F: Fn(f64, &CMat) -> CMat,
{
    if t0 == t1 {
        return Ok(OdeSolution {
            t_start: t0,
            t_end: t1,
            steps: vec![DenseStep {
                t0,
                h: 1.0,
                cont: [
                    y0.clone(),
                    Array2::zeros(y0.dim()),
                    Array2::zeros(y0.dim()),
                    Array2::zeros(y0.dim()),
                    Array2::zeros(y0.dim()),
                ],
            }],
            y_end: y0,
        });
    }
    let dir = if t1 > t0 { 1.0 } else { -1.0 };
    let span = (t1 - t0).abs();
    let mut h = dir * (span / 100.0).min(0.1).max(1e-6);
    let h_min = span * 1e-14 + 1e-300;
    let mut t = t0;
    let mut y = y0;
    let mut k1 = rhs(t, &y);
    let mut steps = Vec::new();
    let max_steps = 2_000_000usize;

    for _ in 0..max_steps {
        if (t - t1).abs() <= 1e-300 || dir * (t1 - t) <= 0.0 {
            break;
        }
        if dir * (t + h - t1) > 0.0 {
            h = t1 - t;
        }
        if h.abs() < h_min {
            return Err(WkError::IntegratorFailure(format!(
                "step underflow at t = {t} (h = {h:.3e})"
            )));
        }

        let hc = cr(h);
        let y2 = &y + &k1.mapv(|z| z * hc * cr(A21));
        let k2 = rhs(t + C2 * h, &y2);
        let y3 = &y + &(k1.mapv(|z| z * cr(A31)) + k2.mapv(|z| z * cr(A32))).mapv(|z| z * hc);
        let k3 = rhs(t + C3 * h, &y3);
        let y4 = &y
            + &(k1.mapv(|z| z * cr(A41)) + k2.mapv(|z| z * cr(A42)) + k3.mapv(|z| z * cr(A43)))
                .mapv(|z| z * hc);
        let k4 = rhs(t + C4 * h, &y4);
        let y5 = &y
            + &(k1.mapv(|z| z * cr(A51))
                + k2.mapv(|z| z * cr(A52))
                + k3.mapv(|z| z * cr(A53))
                + k4.mapv(|z| z * cr(A54)))
            .mapv(|z| z * hc);
        let k5 = rhs(t + C5 * h, &y5);
        let y6 = &y
            + &(k1.mapv(|z| z * cr(A61))
                + k2.mapv(|z| z * cr(A62))
                + k3.mapv(|z| z * cr(A63))
                + k4.mapv(|z| z * cr(A64))
                + k5.mapv(|z| z * cr(A65)))
            .mapv(|z| z * hc);
        let k6 = rhs(t + h, &y6);
        let y_new = &y
            + &(k1.mapv(|z| z * cr(B1))
                + k3.mapv(|z| z * cr(B3))
                + k4.mapv(|z| z * cr(B4))
                + k5.mapv(|z| z * cr(B5))
                + k6.mapv(|z| z * cr(B6)))
            .mapv(|z| z * hc);
        let k7 = rhs(t + h, &y_new);

        let err_mat = (k1.mapv(|z| z * cr(E1))
            + k3.mapv(|z| z * cr(E3))
            + k4.mapv(|z| z * cr(E4))
            + k5.mapv(|z| z * cr(E5))
            + k6.mapv(|z| z * cr(E6))
            + k7.mapv(|z| z * cr(E7)))
        .mapv(|z| z * hc);

        let mut err_sq = 0.0;
        let mut count = 0usize;
        for ((e, a), b) in err_mat.iter().zip(y.iter()).zip(y_new.iter()) {
            let scale = atol + rtol * a.norm().max(b.norm());
            let r = e.norm() / scale;
            err_sq += r * r;
            count += 1;
        }
        let err = (err_sq / count.max(1) as f64).sqrt();

        if err <= 1.0 {
            // accept; build dense output
            let ydiff = &y_new - &y;
            let bspl = &k1.mapv(|z| z * hc) - &ydiff;
            let cont4 = &ydiff - &k7.mapv(|z| z * hc) - &bspl;
            let cont5 = (k1.mapv(|z| z * cr(D1))
                + k3.mapv(|z| z * cr(D3))
                + k4.mapv(|z| z * cr(D4))
                + k5.mapv(|z| z * cr(D5))
                + k6.mapv(|z| z * cr(D6))
                + k7.mapv(|z| z * cr(D7)))
            .mapv(|z| z * hc);
            steps.push(DenseStep {
                t0: t,
                h,
                cont: [y.clone(), ydiff, bspl, cont4, cont5],
            });
            t += h;
            y = y_new;
            k1 = k7;
        }

        let fac = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= fac;
    }

    if dir * (t1 - t) > 1e-12 * span {
        return Err(WkError::IntegratorFailure(format!(
            "did not reach t = {t1} (stopped at {t})"
        )));
    }
    Ok(OdeSolution {
        t_start: t0,
        t_end: t1,
        steps,
        y_end: y,
    })
}

/// Convenience: integrate the linear system Y' = A(t) Y.
pub fn integrate_linear<A>(
    a: A,
    t0: f64,
    t1: f64,
    y0: CMat,
    rtol: f64,
    atol: f64,
) -> Result<OdeSolution>
where
    A: Fn(f64) -> CMat,
{
    integrate(|t, y: &CMat| a(t).dot(y), t0, t1, y0, rtol, atol)
}

#[allow(dead_code)]
pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eye, norm2};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn harmonic_oscillator_dense_output() {
        // y'' = -y as a 2x2 system; fundamental matrix is a rotation.
        let a = array![[cr(0.0), cr(1.0)], [cr(-1.0), cr(0.0)]];
        let sol = integrate_linear(|_| a.clone(), 0.0, 10.0, eye(2), 1e-11, 1e-13).unwrap();
        for &t in &[0.3, 2.2, 5.9, 10.0] {
            let y = sol.eval(t);
            assert_abs_diff_eq!(y[(0, 0)].re, t.cos(), epsilon = 1e-8);
            assert_abs_diff_eq!(y[(0, 1)].re, t.sin(), epsilon = 1e-8);
        }
    }

    #[test]
    fn backward_integration_inverts_forward() {
        let a = array![[cr(0.1), cr(1.0)], [cr(-1.0), cr(-0.2)]];
        let fwd = integrate_linear(|_| a.clone(), 0.0, 3.0, eye(2), 1e-12, 1e-13).unwrap();
        let bwd = integrate_linear(
            |_| a.clone(),
            3.0,
            0.0,
            fwd.end_value().clone(),
            1e-12,
            1e-13,
        )
        .unwrap();
        assert!(norm2(&(bwd.end_value() - &eye(2))) < 1e-9);
    }
}
