//! TOML job configuration: problem declaration (system or odd-order
//! expression), boundary operator, boundary parameter, task selection and
//! numeric knobs.

use serde::Deserialize;
use std::sync::Arc;

use crate::blockspace::BlockSignature;
use crate::boundary::{cos_sin_u, extend_u, validate_u, BoundaryOperatorU, ExtendedU};
use crate::error::{Result, WkError};
use crate::linalg::{c, cr, CMat, C64};
use crate::oddorder::{self, OddEndpoint, OddOrderExpression};
use crate::propagator::PropOpts;
use crate::system::{EndpointDescriptor, MatrixSampler, SymmetricSystem};
use crate::weyl::{BoundaryParameter, WeylContext, WeylOpts};

pub type MatrixSpec = Vec<Vec<[f64; 2]>>;

pub fn matrix_from_spec(spec: &MatrixSpec) -> Result<CMat> {
    let rows = spec.len();
    let cols = spec.first().map(|r| r.len()).unwrap_or(0);
    let mut m = crate::linalg::zeros(rows, cols);
    for (i, row) in spec.iter().enumerate() {
        if row.len() != cols {
            return Err(WkError::Config("ragged matrix literal".into()));
        }
        for (j, z) in row.iter().enumerate() {
            m[(i, j)] = c(z[0], z[1]);
        }
    }
    Ok(m)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub problem: ProblemConfig,
    pub task: TaskConfig,
    #[serde(default)]
    pub numerics: NumericsConfig,
}

impl JobConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| WkError::Config(e.to_string()))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: String,
    pub system: Option<SystemConfig>,
    pub oddorder: Option<OddOrderConfig>,
    #[serde(default)]
    pub u: UConfig,
    #[serde(default)]
    pub tau: TauConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub nu_plus: usize,
    pub nu_hat: usize,
    pub a: f64,
    pub endpoint: EndpointConfig,
    pub b: SamplerConfig,
    pub delta: SamplerConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub kind: String,
    pub b: Option<f64>,
    pub t0: Option<f64>,
    pub b_inf: Option<MatrixSpec>,
    pub delta_inf: Option<MatrixSpec>,
    pub t_cut: Option<f64>,
    pub omega_b: Option<MatrixSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub constant: Option<MatrixSpec>,
    pub entry: Option<Vec<EntryConfig>>,
    pub rows: Option<usize>,
    pub cols: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryConfig {
    pub row: usize,
    pub col: usize,
    /// polynomial in t: complex coefficients c0 + c1 t + ...
    pub polynomial: Option<Vec<[f64; 2]>>,
    pub table: Option<TableConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableConfig {
    pub ts: Vec<f64>,
    pub values: Vec<[f64; 2]>,
    pub interpolation: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OddOrderConfig {
    pub m: usize,
    #[serde(default = "one")]
    pub dim_h: usize,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub a: f64,
    pub endpoint: OddEndpointConfig,
}

fn one() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OddEndpointConfig {
    pub kind: String,
    pub b: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UConfig {
    /// "cos_sin" (default) with an optional Hermitian parameter matrix
    pub preset: Option<String>,
    pub b_matrix: Option<MatrixSpec>,
    pub u1: Option<MatrixSpec>,
    pub u2: Option<MatrixSpec>,
    pub u3: Option<MatrixSpec>,
    pub u4: Option<MatrixSpec>,
    pub u5: Option<MatrixSpec>,
    pub u6: Option<MatrixSpec>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauConfig {
    /// "tau0" (default) | "truncated" | "general"
    pub kind: Option<String>,
    /// polynomial in lambda: list of matrix coefficients
    pub d0_bar: Option<Vec<MatrixSpec>>,
    pub d1_bar: Option<Vec<MatrixSpec>>,
    pub d0: Option<Vec<MatrixSpec>>,
    pub d1: Option<Vec<MatrixSpec>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub name: String,
    pub lambda_grid: Option<Vec<[f64; 2]>>,
    pub lambda: Option<[f64; 2]>,
    pub s_grid: Option<SGridConfig>,
    pub eps_schedule: Option<Vec<f64>>,
    pub function: Option<BumpConfig>,
    pub x_grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SGridConfig {
    pub start: f64,
    pub stop: f64,
    pub cells: usize,
}

impl SGridConfig {
    pub fn points(&self) -> Vec<f64> {
        (0..=self.cells)
            .map(|k| self.start + (self.stop - self.start) * k as f64 / self.cells as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpConfig {
    #[serde(default)]
    pub component: usize,
    pub center: f64,
    pub width: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsConfig {
    pub rtol: f64,
    pub atol: f64,
    pub mode_tol: f64,
    pub min_im_lambda: f64,
    pub gram_panels: usize,
    pub jump_tol: f64,
    pub dens_tol: f64,
    pub workers: usize,
    pub seed: u64,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        NumericsConfig {
            rtol: 1e-10,
            atol: 1e-12,
            mode_tol: 1e-6,
            min_im_lambda: 0.05,
            gram_panels: 24,
            jump_tol: 1e-3,
            dens_tol: 1e-6,
            workers: 0,
            seed: 7,
        }
    }
}

impl NumericsConfig {
    pub fn prop_opts(&self) -> PropOpts {
        PropOpts {
            rtol: self.rtol,
            atol: self.atol,
            mode_tol: self.mode_tol,
            gram_panels: self.gram_panels,
        }
    }

    pub fn weyl_opts(&self) -> WeylOpts {
        WeylOpts {
            prop: self.prop_opts(),
            min_im_lambda: self.min_im_lambda,
            cond_cap: 1e12,
            block_check_tol: 1e-7,
        }
    }
}

fn build_sampler(cfg: &SamplerConfig, n: usize) -> Result<MatrixSampler> {
    if let Some(spec) = &cfg.constant {
        let m = matrix_from_spec(spec)?;
        if m.dim() != (n, n) {
            return Err(WkError::Config(format!(
                "constant sampler has shape {:?}, expected ({n}, {n})",
                m.dim()
            )));
        }
        return Ok(MatrixSampler::Constant(m));
    }
    let entries = cfg
        .entry
        .as_ref()
        .ok_or_else(|| WkError::Config("sampler needs `constant` or `entry` list".into()))?;
    // polynomial entries assemble into matrix polynomial coefficients;
    // table entries must share the knot grid
    let any_table = entries.iter().any(|e| e.table.is_some());
    if any_table {
        let ts = entries
            .iter()
            .find_map(|e| e.table.as_ref().map(|t| t.ts.clone()))
            .unwrap();
        let mut values: Vec<CMat> = ts.iter().map(|_| crate::linalg::zeros(n, n)).collect();
        for e in entries {
            let t = e
                .table
                .as_ref()
                .ok_or_else(|| WkError::Config("mixed table/polynomial entries".into()))?;
            if t.ts != ts {
                return Err(WkError::Config("table entries must share ts".into()));
            }
            if t.interpolation != "cubic" {
                return Err(WkError::Config("only cubic interpolation is supported".into()));
            }
            for (k, z) in t.values.iter().enumerate() {
                values[k][(e.row, e.col)] = c(z[0], z[1]);
            }
        }
        return MatrixSampler::table(&ts, &values);
    }
    let degree = entries
        .iter()
        .map(|e| e.polynomial.as_ref().map(|p| p.len()).unwrap_or(0))
        .max()
        .unwrap_or(1)
        .max(1);
    let mut coeffs: Vec<CMat> = (0..degree).map(|_| crate::linalg::zeros(n, n)).collect();
    for e in entries {
        let p = e
            .polynomial
            .as_ref()
            .ok_or_else(|| WkError::Config("entry needs polynomial or table".into()))?;
        if e.row >= n || e.col >= n {
            return Err(WkError::Config("entry index out of range".into()));
        }
        for (k, z) in p.iter().enumerate() {
            coeffs[k][(e.row, e.col)] = c(z[0], z[1]);
        }
    }
    Ok(MatrixSampler::Polynomial(coeffs))
}

fn build_endpoint(cfg: &EndpointConfig, n: usize) -> Result<EndpointDescriptor> {
    match cfg.kind.as_str() {
        "regular" => Ok(EndpointDescriptor::Regular {
            b: cfg
                .b
                .ok_or_else(|| WkError::Config("regular endpoint needs b".into()))?,
        }),
        "constant_tail" => {
            let t0 = cfg
                .t0
                .ok_or_else(|| WkError::Config("constant_tail needs t0".into()))?;
            let b_inf = matrix_from_spec(
                cfg.b_inf
                    .as_ref()
                    .ok_or_else(|| WkError::Config("constant_tail needs b_inf".into()))?,
            )?;
            let delta_inf = matrix_from_spec(
                cfg.delta_inf
                    .as_ref()
                    .ok_or_else(|| WkError::Config("constant_tail needs delta_inf".into()))?,
            )?;
            if b_inf.dim() != (n, n) || delta_inf.dim() != (n, n) {
                return Err(WkError::Config("tail matrices must be n x n".into()));
            }
            Ok(EndpointDescriptor::ConstantTail {
                t0,
                b_inf,
                delta_inf,
            })
        }
        "abstract_form" => Ok(EndpointDescriptor::AbstractForm {
            t_cut: cfg
                .t_cut
                .ok_or_else(|| WkError::Config("abstract_form needs t_cut".into()))?,
            omega_b: matrix_from_spec(
                cfg.omega_b
                    .as_ref()
                    .ok_or_else(|| WkError::Config("abstract_form needs omega_b".into()))?,
            )?,
        }),
        other => Err(WkError::Config(format!("unknown endpoint kind `{other}`"))),
    }
}

fn build_u(cfg: &UConfig, sig: BlockSignature) -> Result<ExtendedU> {
    let preset = cfg.preset.as_deref().unwrap_or("cos_sin");
    let u: BoundaryOperatorU = match preset {
        "cos_sin" => {
            let bp = match &cfg.b_matrix {
                Some(spec) => matrix_from_spec(spec)?,
                None => crate::linalg::zeros(sig.nu_plus, sig.nu_plus),
            };
            cos_sin_u(sig, &bp)?
        }
        "explicit" => {
            let get = |m: &Option<MatrixSpec>, name: &str| -> Result<CMat> {
                matrix_from_spec(
                    m.as_ref()
                        .ok_or_else(|| WkError::Config(format!("explicit U needs {name}")))?,
                )
            };
            BoundaryOperatorU {
                sig,
                u: [
                    get(&cfg.u1, "u1")?,
                    get(&cfg.u2, "u2")?,
                    get(&cfg.u3, "u3")?,
                    get(&cfg.u4, "u4")?,
                    get(&cfg.u5, "u5")?,
                    get(&cfg.u6, "u6")?,
                ],
            }
        }
        other => return Err(WkError::Config(format!("unknown U preset `{other}`"))),
    };
    extend_u(validate_u(sig, u.u)?)
}

fn matrix_poly(specs: &[MatrixSpec]) -> Result<Vec<CMat>> {
    specs.iter().map(matrix_from_spec).collect()
}

fn poly_sampler(coeffs: Vec<CMat>) -> Arc<dyn Fn(C64) -> CMat + Send + Sync> {
    Arc::new(move |l: C64| {
        let mut acc = coeffs[0].mapv(|z| z * cr(0.0));
        let mut lp = C64::new(1.0, 0.0);
        for co in &coeffs {
            acc = &acc + &co.mapv(|z| z * lp);
            lp *= l;
        }
        acc
    })
}

fn build_tau(cfg: &TauConfig, ctx: &WeylContext) -> Result<BoundaryParameter> {
    let dims = ctx.dims();
    match cfg.kind.as_deref().unwrap_or("tau0") {
        "tau0" => Ok(BoundaryParameter::tau0(dims)),
        "truncated" => {
            let d0 = matrix_poly(
                cfg.d0_bar
                    .as_ref()
                    .ok_or_else(|| WkError::Config("truncated tau needs d0_bar".into()))?,
            )?;
            let d1 = matrix_poly(
                cfg.d1_bar
                    .as_ref()
                    .ok_or_else(|| WkError::Config("truncated tau needs d1_bar".into()))?,
            )?;
            BoundaryParameter::truncated(dims, poly_sampler(d0), poly_sampler(d1))
        }
        "general" => {
            let d0 = matrix_poly(
                cfg.d0
                    .as_ref()
                    .ok_or_else(|| WkError::Config("general tau needs d0".into()))?,
            )?;
            let d1 = matrix_poly(
                cfg.d1
                    .as_ref()
                    .ok_or_else(|| WkError::Config("general tau needs d1".into()))?,
            )?;
            BoundaryParameter::general(dims, poly_sampler(d0), poly_sampler(d1))
        }
        other => Err(WkError::Config(format!("unknown tau kind `{other}`"))),
    }
}

/// A fully constructed problem: context plus boundary parameter.
pub struct Problem {
    pub ctx: WeylContext,
    pub tau: BoundaryParameter,
    /// present when the problem came from an odd-order expression
    pub odd: Option<OddOrderExpression>,
}

pub fn build_problem(cfg: &JobConfig) -> Result<Problem> {
    let opts = cfg.numerics.weyl_opts();
    let (sys, odd) = match cfg.problem.kind.as_str() {
        "system" => {
            let sc = cfg
                .problem
                .system
                .as_ref()
                .ok_or_else(|| WkError::Config("kind = system needs [problem.system]".into()))?;
            let sig = BlockSignature::new(sc.nu_plus, sc.nu_hat)?;
            let n = sig.n();
            let endpoint = build_endpoint(&sc.endpoint, n)?;
            let b = build_sampler(&sc.b, n)?;
            let delta = build_sampler(&sc.delta, n)?;
            (SymmetricSystem::new(sig, sc.a, endpoint, b, delta)?, None)
        }
        "oddorder" => {
            let oc = cfg.problem.oddorder.as_ref().ok_or_else(|| {
                WkError::Config("kind = oddorder needs [problem.oddorder]".into())
            })?;
            let expr = OddOrderExpression::scalar(oc.m, &oc.p, &oc.q)?;
            let endpoint = match oc.endpoint.kind.as_str() {
                "half_line" => OddEndpoint::HalfLine,
                "regular" => OddEndpoint::Regular {
                    b: oc
                        .endpoint
                        .b
                        .ok_or_else(|| WkError::Config("regular endpoint needs b".into()))?,
                },
                other => {
                    return Err(WkError::Config(format!(
                        "unknown odd-order endpoint `{other}`"
                    )))
                }
            };
            let red = oddorder::reduce_to_system(&expr, oc.a, &endpoint)?;
            (red.sys, Some(expr))
        }
        other => return Err(WkError::Config(format!("unknown problem kind `{other}`"))),
    };
    let ext_u = build_u(&cfg.problem.u, sys.sig)?;
    let ctx = WeylContext::new(sys, ext_u, opts)?;
    let tau = build_tau(&cfg.problem.tau, &ctx)?;
    Ok(Problem { ctx, tau, odd })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_system_config_parses() {
        let text = r#"
[problem]
kind = "system"

[problem.system]
nu_plus = 1
nu_hat = 0
a = 0.0
endpoint = { kind = "regular", b = 1.0 }
b = { constant = [[[0.0,0.0],[0.0,0.0]],[[0.0,0.0],[1.0,0.0]]] }
delta = { constant = [[[1.0,0.0],[0.0,0.0]],[[0.0,0.0],[0.0,0.0]]] }

[task]
name = "indices"
"#;
        let cfg = JobConfig::from_toml(text).unwrap();
        let p = build_problem(&cfg).unwrap();
        assert_eq!(p.ctx.sys.n(), 2);
    }

    #[test]
    fn oddorder_config_parses() {
        let text = r#"
[problem]
kind = "oddorder"

[problem.oddorder]
m = 1
p = [0.0, 0.0]
q = [1.0, 0.0]
a = 0.0
endpoint = { kind = "half_line" }

[task]
name = "indices"
"#;
        let cfg = JobConfig::from_toml(text).unwrap();
        let p = build_problem(&cfg).unwrap();
        assert_eq!(p.ctx.sys.n(), 3);
        assert!(p.odd.is_some());
    }

    #[test]
    fn polynomial_entry_sampler() {
        let text = r#"
[problem]
kind = "system"

[problem.system]
nu_plus = 1
nu_hat = 0
a = 0.0
endpoint = { kind = "regular", b = 1.0 }
delta = { constant = [[[1.0,0.0],[0.0,0.0]],[[0.0,0.0],[0.0,0.0]]] }

[[problem.system.b.entry]]
row = 1
col = 1
polynomial = [[1.0,0.0],[2.0,0.0]]

[task]
name = "indices"
"#;
        let cfg = JobConfig::from_toml(text).unwrap();
        let p = build_problem(&cfg).unwrap();
        let b = p.ctx.sys.b_at(0.5);
        assert!((b[(1, 1)].re - 2.0).abs() < 1e-14);
    }

    #[test]
    fn bad_config_is_rejected() {
        let text = r#"
[problem]
kind = "nonsense"
[task]
name = "indices"
"#;
        let cfg = JobConfig::from_toml(text).unwrap();
        assert!(matches!(build_problem(&cfg), Err(WkError::Config(_))));
    }
}
