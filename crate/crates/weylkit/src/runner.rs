//! Task dispatch: runs a job configuration end to end and renders
//! deterministic CSV/JSON artifacts.

use serde_json::json;

use crate::config::{JobConfig, Problem};
use crate::error::{Result, WkError};
use crate::linalg::{c, norm2, CMat, C64};
use crate::spectral::{self, StieltjesOpts, WeightedFunction};
use crate::weyl::{eval_tau, BoundaryParameter, WeylContext};

/// One produced artifact: file name and contents.
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

pub struct RunOutput {
    pub summary: serde_json::Value,
    pub artifacts: Vec<Artifact>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides<'a> {
    pub task: Option<&'a str>,
    pub workers: Option<usize>,
    pub strict: bool,
}

/// Deterministic fan-out: chunks are processed by scoped workers and merged
/// in index order.
pub fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let mut out: Vec<Option<R>> = Vec::with_capacity(items.len());
    out.resize_with(items.len(), || None);
    let chunk = items.len().div_ceil(workers);
    let mut slots: Vec<&mut [Option<R>]> = out.chunks_mut(chunk).collect();
    let result: Result<()> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (ci, slot) in slots.drain(..).enumerate() {
            let f = &f;
            let start = ci * chunk;
            let it = &items[start..(start + slot.len()).min(items.len())];
            handles.push(scope.spawn(move || -> Result<()> {
                for (k, item) in it.iter().enumerate() {
                    slot[k] = Some(f(item)?);
                }
                Ok(())
            }));
        }
        for h in handles {
            h.join().map_err(|_| {
                WkError::ConsistencyError("worker panicked".into())
            })??;
        }
        Ok(())
    });
    result?;
    Ok(out.into_iter().map(|r| r.expect("slot filled")).collect())
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn matrix_csv_cells(m: &CMat) -> String {
    let mut parts = Vec::with_capacity(2 * m.len());
    for r in 0..m.nrows() {
        for ccol in 0..m.ncols() {
            parts.push(fmt_f64(m[(r, ccol)].re));
            parts.push(fmt_f64(m[(r, ccol)].im));
        }
    }
    parts.join(",")
}

fn matrix_header(prefix: &str, rows: usize, cols: usize) -> String {
    let mut parts = Vec::new();
    for r in 0..rows {
        for ccol in 0..cols {
            parts.push(format!("{prefix}_{r}_{ccol}_re"));
            parts.push(format!("{prefix}_{r}_{ccol}_im"));
        }
    }
    parts.join(",")
}

fn default_lambda_grid() -> Vec<C64> {
    let mut out = Vec::new();
    for &im in &[0.4, 1.0, 2.0, 0.7] {
        out.push(c(-0.5, im));
        out.push(c(0.8, im));
        out.push(c(-0.5, -im));
        out.push(c(0.8, -im));
    }
    out.truncate(16);
    out
}

fn workers_of(cfg: &JobConfig, ov: &Overrides) -> usize {
    if let Some(w) = ov.workers {
        return w.max(1);
    }
    if cfg.numerics.workers > 0 {
        return cfg.numerics.workers;
    }
    if let Ok(v) = std::env::var("WEYLKIT_WORKERS") {
        if let Ok(w) = v.parse::<usize>() {
            return w.max(1);
        }
    }
    1
}

fn stieltjes_opts(cfg: &JobConfig, ov: &Overrides) -> StieltjesOpts {
    let mut eps = cfg
        .task
        .eps_schedule
        .clone()
        .unwrap_or_else(|| vec![1e-1, 3e-2, 1e-2, 3e-3]);
    if ov.strict {
        let last = *eps.last().unwrap_or(&3e-3);
        eps.push(last / 3.0);
    }
    StieltjesOpts {
        eps_schedule: eps,
        jump_tol: cfg.numerics.jump_tol,
        monotone_tol: 1e-6,
        nodes_per_cell: 8,
    }
}

fn bump_of(cfg: &JobConfig, problem: &Problem) -> WeightedFunction {
    let n = problem.ctx.sys.n();
    match &cfg.task.function {
        Some(b) => WeightedFunction::bump(n, b.component, b.center, b.width),
        None => WeightedFunction::bump(n, 0, problem.ctx.sys.a + 1.0, 0.8),
    }
}

fn m_sampler<'a>(
    ctx: &'a WeylContext,
    tau: &'a BoundaryParameter,
) -> impl Fn(C64) -> Result<CMat> + 'a {
    move |l: C64| Ok(eval_tau(ctx, tau, l)?.m)
}

pub fn run(cfg: &JobConfig, ov: &Overrides) -> Result<RunOutput> {
    let mut cfg_eff_opts = cfg.numerics.weyl_opts();
    if ov.strict {
        cfg_eff_opts.prop.rtol *= 0.1;
        cfg_eff_opts.prop.atol *= 0.1;
    }
    let mut problem = crate::config::build_problem(cfg)?;
    problem.ctx.opts = cfg_eff_opts;
    let task = ov.task.unwrap_or(cfg.task.name.as_str());
    let workers = workers_of(cfg, ov);
    match task {
        "indices" => run_indices(cfg, &problem),
        "mfun" => run_mfun(cfg, &problem, workers),
        "sigma" => run_sigma(cfg, ov, &problem),
        "resolve" => run_resolve(cfg, &problem),
        "fourier" => run_fourier(cfg, &problem, workers),
        "roundtrip" => run_roundtrip(cfg, ov, &problem),
        "check" => run_check(cfg, &problem),
        other => Err(WkError::Config(format!("unknown task `{other}`"))),
    }
}

fn run_indices(_cfg: &JobConfig, problem: &Problem) -> Result<RunOutput> {
    let (np, nm) =
        crate::propagator::deficiency_indices(&problem.ctx.sys, &problem.ctx.opts.prop)?;
    Ok(RunOutput {
        summary: json!({"n_plus": np, "n_minus": nm}),
        artifacts: vec![],
    })
}

fn run_mfun(cfg: &JobConfig, problem: &Problem, workers: usize) -> Result<RunOutput> {
    let grid: Vec<C64> = cfg
        .task
        .lambda_grid
        .as_ref()
        .map(|g| g.iter().map(|z| c(z[0], z[1])).collect())
        .unwrap_or_else(default_lambda_grid);
    let ctx = &problem.ctx;
    let tau = &problem.tau;
    let ms = parallel_map(&grid, workers, |l| Ok(eval_tau(ctx, tau, *l)?.m))?;
    let nu = ctx.sys.sig.nu_minus();
    let mut csv = format!("lambda_re,lambda_im,{}\n", matrix_header("m", nu, nu));
    for (l, m) in grid.iter().zip(ms.iter()) {
        csv.push_str(&format!(
            "{},{},{}\n",
            fmt_f64(l.re),
            fmt_f64(l.im),
            matrix_csv_cells(m)
        ));
    }
    let samples: Vec<(C64, CMat)> = grid.iter().cloned().zip(ms.iter().cloned()).collect();
    let defect = crate::blockspace::nevanlinna_defect(&samples)?;
    Ok(RunOutput {
        summary: json!({
            "points": grid.len(),
            "nevanlinna_defect": defect,
            "defect_ok": defect <= 1e-7,
        }),
        artifacts: vec![Artifact {
            name: "mfun.csv".into(),
            contents: csv,
        }],
    })
}

fn run_sigma(cfg: &JobConfig, ov: &Overrides, problem: &Problem) -> Result<RunOutput> {
    let sgrid = cfg
        .task
        .s_grid
        .clone()
        .ok_or_else(|| WkError::Config("sigma task needs task.s_grid".into()))?;
    let grid = sgrid.points();
    let opts = stieltjes_opts(cfg, ov);
    let sampler = m_sampler(&problem.ctx, &problem.tau);
    let sigma = spectral::stieltjes_inversion(&sampler, &grid, &opts)?;
    let nu = problem.ctx.sys.sig.nu_minus();
    let mut csv = format!("s_lo,s_hi,{}\n", matrix_header("inc", nu, nu));
    for (k, inc) in sigma.increments.iter().enumerate() {
        csv.push_str(&format!(
            "{},{},{}\n",
            fmt_f64(sigma.grid[k]),
            fmt_f64(sigma.grid[k + 1]),
            matrix_csv_cells(inc)
        ));
    }
    let mut jumps_csv = format!("location,{}\n", matrix_header("w", nu, nu));
    for (s, w) in &sigma.jumps {
        jumps_csv.push_str(&format!("{},{}\n", fmt_f64(*s), matrix_csv_cells(w)));
    }
    let report = spectral::spectrum_readout(&sigma, cfg.numerics.dens_tol);
    Ok(RunOutput {
        summary: json!({
            "cells": sigma.increments.len(),
            "total_trace": sigma.total_trace(),
            "jumps": sigma.jumps.len(),
            "readout": report,
        }),
        artifacts: vec![
            Artifact {
                name: "sigma.csv".into(),
                contents: csv,
            },
            Artifact {
                name: "sigma_jumps.csv".into(),
                contents: jumps_csv,
            },
        ],
    })
}

fn run_resolve(cfg: &JobConfig, problem: &Problem) -> Result<RunOutput> {
    let lambda = cfg
        .task
        .lambda
        .map(|z| c(z[0], z[1]))
        .unwrap_or(c(0.0, 2.0));
    let f = bump_of(cfg, problem);
    let sys = &problem.ctx.sys;
    let xs: Vec<f64> = cfg.task.x_grid.clone().unwrap_or_else(|| {
        let hi = sys.working_end().max(f.support_end + 1.0);
        (0..=32)
            .map(|k| sys.a + (hi - sys.a) * k as f64 / 32.0)
            .collect()
    });
    let res = spectral::green_apply(&problem.ctx, &problem.tau, lambda, &f, &xs)?;
    let n = sys.n();
    let mut csv = format!("x,{}\n", matrix_header("y", n, 1));
    for (x, y) in res.xs.iter().zip(res.ys.iter()) {
        let col = y.clone().insert_axis(ndarray::Axis(1));
        csv.push_str(&format!("{},{}\n", fmt_f64(*x), matrix_csv_cells(&col.to_owned())));
    }
    Ok(RunOutput {
        summary: json!({
            "lambda": [lambda.re, lambda.im],
            "ode_residual": res.ode_residual,
            "bc_residual": res.bc_residual,
        }),
        artifacts: vec![Artifact {
            name: "resolve.csv".into(),
            contents: csv,
        }],
    })
}

fn run_fourier(cfg: &JobConfig, problem: &Problem, workers: usize) -> Result<RunOutput> {
    let sgrid = cfg
        .task
        .s_grid
        .clone()
        .ok_or_else(|| WkError::Config("fourier task needs task.s_grid".into()))?;
    let mids: Vec<f64> = sgrid
        .points()
        .windows(2)
        .map(|w| 0.5 * (w[0] + w[1]))
        .collect();
    let f = bump_of(cfg, problem);
    let ctx = &problem.ctx;
    let fh = parallel_map(&mids, workers, |s| {
        Ok(spectral::fourier(&ctx.sys, &ctx.ext_u, &f, &[*s], &ctx.opts.prop)?.remove(0))
    })?;
    let nu = ctx.sys.sig.nu_minus();
    let mut csv = format!("s,{}\n", matrix_header("fhat", nu, 1));
    for (s, v) in mids.iter().zip(fh.iter()) {
        let col = v.clone().insert_axis(ndarray::Axis(1));
        csv.push_str(&format!("{},{}\n", fmt_f64(*s), matrix_csv_cells(&col.to_owned())));
    }
    Ok(RunOutput {
        summary: json!({"points": mids.len()}),
        artifacts: vec![Artifact {
            name: "fourier.csv".into(),
            contents: csv,
        }],
    })
}

fn run_roundtrip(cfg: &JobConfig, ov: &Overrides, problem: &Problem) -> Result<RunOutput> {
    let sgrid = cfg
        .task
        .s_grid
        .clone()
        .ok_or_else(|| WkError::Config("roundtrip task needs task.s_grid".into()))?;
    let grid = sgrid.points();
    let opts = stieltjes_opts(cfg, ov);
    let sampler = m_sampler(&problem.ctx, &problem.tau);
    let sigma = spectral::stieltjes_inversion(&sampler, &grid, &opts)?;
    let f = bump_of(cfg, problem);
    let ctx = &problem.ctx;
    let parseval = spectral::parseval_defect(&ctx.sys, &ctx.ext_u, &sigma, &f, &ctx.opts.prop)?;
    let roundtrip = spectral::roundtrip_error(&ctx.sys, &ctx.ext_u, &sigma, &f, &ctx.opts.prop)?;
    Ok(RunOutput {
        summary: json!({
            "parseval_defect": parseval,
            "roundtrip_error": roundtrip,
            "jumps": sigma.jumps.len(),
        }),
        artifacts: vec![],
    })
}

fn run_check(cfg: &JobConfig, problem: &Problem) -> Result<RunOutput> {
    let ctx = &problem.ctx;
    let sys = &ctx.sys;
    let grid = sys.default_grid(24);
    let coeff = crate::system::validate_coefficients(sys, &grid)?;
    let definite = crate::system::check_definite(sys, &[c(0.0, 1.0), c(0.0, -1.0)], &grid)?;
    let j = &sys.j;
    let ext_res = norm2(
        &(&crate::linalg::adjoint(&ctx.ext_u.u_tilde)
            .dot(j)
            .dot(&ctx.ext_u.u_tilde)
            - j),
    );
    // deterministic pseudo-random boundary data for the identity battery
    let n = sys.n();
    let mk_data = |seed: usize, cols: usize| -> CMat {
        let mut m = crate::linalg::zeros(n, cols);
        for r in 0..n {
            for ccol in 0..cols {
                let x = ((seed * 37 + r * 11 + ccol * 5) as f64 * 0.7391).sin();
                let y = ((seed * 17 + r * 7 + ccol * 3) as f64 * 1.3117).cos();
                m[(r, ccol)] = c(x, y);
            }
        }
        m
    };
    let ya = mk_data(1, 6);
    let za = mk_data(2, 6);
    let gamma_a_res = crate::boundary::gamma_a_identity_residual(&ctx.ext_u, j, &ya, &za);
    let (yb, zb) = if ctx.form.data_dim > 0 {
        (Some(mk_data(3, 6)), Some(mk_data(4, 6)))
    } else {
        (None, None)
    };
    let form_res = match (&yb, &zb) {
        (Some(y), Some(z)) => ctx.form.identity_residual(y, z),
        _ => 0.0,
    };
    let green_res =
        ctx.triplet
            .green_identity_residual(j, &ctx.form, &ya, yb.as_ref(), &za, zb.as_ref());
    let (np, nm) = crate::propagator::deficiency_indices(sys, &ctx.opts.prop)?;
    let wronskian = crate::propagator::wronskian_residual(
        sys,
        c(0.4, 1.1),
        &grid[..grid.len().min(5)],
        &ctx.opts.prop,
    )?;
    // m-function health at sample points
    let lambdas = [c(0.3, -1.0), c(0.3, 1.0), c(-0.6, -1.7), c(-0.6, 1.7)];
    let mut samples = Vec::new();
    let mut worst_bc = 0.0_f64;
    for &l in &lambdas {
        let ev = eval_tau(ctx, &problem.tau, l)?;
        worst_bc = worst_bc.max(crate::weyl::v_tau_bc_residual(ctx, &problem.tau, &ev)?);
        samples.push((l, ev.m));
    }
    let defect = crate::blockspace::nevanlinna_defect(&samples)?;
    let symmetry = ctx.symmetry_residual(c(0.25, -0.9))?;
    let psd_gap = crate::weyl::m_lower_bound_gap(ctx, &problem.tau, c(0.3, -1.0))?;
    let _ = cfg;
    Ok(RunOutput {
        summary: json!({
            "coefficient_residual": coeff.max_residual(),
            "definite": definite,
            "extension_residual": ext_res,
            "gamma_a_identity": gamma_a_res,
            "endpoint_identity": form_res,
            "green_identity": green_res,
            "n_plus": np,
            "n_minus": nm,
            "wronskian_residual": wronskian,
            "vtau_bc_residual": worst_bc,
            "nevanlinna_defect": defect,
            "symmetry_residual": symmetry,
            "psd_gap": psd_gap,
        }),
        artifacts: vec![],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_is_order_preserving() {
        let items: Vec<usize> = (0..57).collect();
        let out = parallel_map(&items, 4, |&x| Ok(x * 2)).unwrap();
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn iy3_indices_task() {
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
        let out = run(&cfg, &Overrides::default()).unwrap();
        assert_eq!(out.summary["n_plus"], 1);
        assert_eq!(out.summary["n_minus"], 2);
    }

    #[test]
    fn mfun_task_emits_csv_and_defect() {
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
name = "mfun"
lambda_grid = [[0.0,-1.0],[0.0,1.0],[0.5,-1.5],[0.5,1.5],[1.0,-0.5],[1.0,0.5],[-0.5,-2.0],[-0.5,2.0]]
"#;
        let cfg = JobConfig::from_toml(text).unwrap();
        let out = run(&cfg, &Overrides::default()).unwrap();
        assert_eq!(out.artifacts.len(), 1);
        assert!(out.summary["defect_ok"].as_bool().unwrap());
        let csv = &out.artifacts[0].contents;
        assert_eq!(csv.lines().count(), 9); // header + 8 rows
    }

    #[test]
    fn reruns_are_byte_identical() {
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
name = "mfun"
lambda_grid = [[0.3,-1.0],[0.3,1.0],[1.5,-0.7],[1.5,0.7]]
"#;
        let cfg = JobConfig::from_toml(text).unwrap();
        let out1 = run(&cfg, &Overrides::default()).unwrap();
        let cfg2 = JobConfig::from_toml(text).unwrap();
        let out2 = run(
            &cfg2,
            &Overrides {
                workers: Some(3),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(out1.artifacts[0].contents, out2.artifacts[0].contents);
    }
}
