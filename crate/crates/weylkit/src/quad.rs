//! Gauss-Legendre panel quadrature and a natural cubic spline for tabulated
//! coefficient samplers.

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1],
/// computed by Newton iteration on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_pair(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_pair(n, x);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Scaled nodes/weights covering [lo, hi] with `panels` uniform panels of an
/// `nodes_per_panel`-point rule.
pub fn panel_nodes(lo: f64, hi: f64, panels: usize, nodes_per_panel: usize) -> (Vec<f64>, Vec<f64>) {
    let (xs, ws) = gauss_legendre(nodes_per_panel);
    let mut nodes = Vec::with_capacity(panels * nodes_per_panel);
    let mut weights = Vec::with_capacity(panels * nodes_per_panel);
    let h = (hi - lo) / panels as f64;
    for p in 0..panels {
        let c = lo + (p as f64 + 0.5) * h;
        for (x, w) in xs.iter().zip(ws.iter()) {
            nodes.push(c + 0.5 * h * x);
            weights.push(0.5 * h * w);
        }
    }
    (nodes, weights)
}

/// Natural cubic spline through (ts, ys).
#[derive(Debug, Clone)]
pub struct CubicSpline {
    ts: Vec<f64>,
    ys: Vec<f64>,
    m: Vec<f64>, // second derivatives at knots
}

impl CubicSpline {
    pub fn new(ts: &[f64], ys: &[f64]) -> Self {
        assert!(ts.len() == ys.len() && ts.len() >= 2, "need >= 2 knots");
        let n = ts.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior second-derivative system.
            let mut sub = vec![0.0; n - 2];
            let mut diag = vec![0.0; n - 2];
            let mut sup = vec![0.0; n - 2];
            let mut rhs = vec![0.0; n - 2];
            for i in 1..n - 1 {
                let h0 = ts[i] - ts[i - 1];
                let h1 = ts[i + 1] - ts[i];
                sub[i - 1] = h0;
                diag[i - 1] = 2.0 * (h0 + h1);
                sup[i - 1] = h1;
                rhs[i - 1] = 6.0 * ((ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0);
            }
            for i in 1..n - 2 {
                let w = sub[i] / diag[i - 1];
                diag[i] -= w * sup[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            let mut sol = vec![0.0; n - 2];
            sol[n - 3] = rhs[n - 3] / diag[n - 3];
            for i in (0..n - 3).rev() {
                sol[i] = (rhs[i] - sup[i] * sol[i + 1]) / diag[i];
            }
            m[1..n - 1].copy_from_slice(&sol);
        }
        CubicSpline {
            ts: ts.to_vec(),
            ys: ys.to_vec(),
            m,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.ts.len();
        let t = t.clamp(self.ts[0], self.ts[n - 1]);
        let i = match self
            .ts
            .binary_search_by(|x| x.partial_cmp(&t).expect("nan knot"))
        {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        };
        let h = self.ts[i + 1] - self.ts[i];
        let a = (self.ts[i + 1] - t) / h;
        let b = (t - self.ts[i]) / h;
        a * self.ys[i]
            + b * self.ys[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gl16_integrates_polynomials_exactly() {
        let (xs, ws) = gauss_legendre(16);
        // degree-31 monomial is integrated exactly on [-1,1]
        let val: f64 = xs
            .iter()
            .zip(ws.iter())
            .map(|(x, w)| w * x.powi(30))
            .sum();
        assert_abs_diff_eq!(val, 2.0 / 31.0, epsilon = 1e-13);
    }

    #[test]
    fn panels_integrate_smooth_function() {
        let (xs, ws) = panel_nodes(0.0, std::f64::consts::PI, 8, 16);
        let val: f64 = xs.iter().zip(ws.iter()).map(|(x, w)| w * x.sin()).sum();
        assert_abs_diff_eq!(val, 2.0, epsilon = 1e-13);
    }

    #[test]
    fn spline_reproduces_line() {
        let ts: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 3.0 * t - 1.0).collect();
        let sp = CubicSpline::new(&ts, &ys);
        assert_abs_diff_eq!(sp.eval(4.37), 3.0 * 4.37 - 1.0, epsilon = 1e-12);
    }
}
