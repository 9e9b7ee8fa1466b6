//! Implementations of the individual CLI commands.

use crate::config::RunConfig;
use crate::output::OutDir;
use anyhow::{bail, Result};
use deform_core::ambient::MetricField;
use deform_core::evolve::{
    closed_translations, glue_closed_system, run as run_evolution, subspace_angle,
    BoundaryData, ClosedSurface, EvolutionConfig, EvolutionState,
};
use deform_core::grid::Grid;
use deform_core::linearize::{
    assemble_linear_system, boundary_coefficients, BoundaryCondition, ResidualCtx,
};
use deform_core::rhsolver::{RHSolution, RHSystem};
use deform_core::surface::{
    build_immersion, fundamental_forms_checked, total_area, verify_conjugate_isothermal,
    Chart, FundamentalForms, Immersion,
};
use serde_json::json;

pub struct Scene {
    pub grid: Grid,
    pub metric: MetricField,
    pub im: Immersion,
    pub forms: FundamentalForms,
}

pub fn build_scene(cfg: &RunConfig) -> Result<Scene, deform_core::error::CoreError> {
    let grid = cfg.build_grid()?;
    let metric = cfg.metric.build()?;
    let im = build_immersion(&cfg.chart, &grid)?;
    let forms = fundamental_forms_checked(&im, &metric, true)?;
    Ok(Scene { grid, metric, im, forms })
}

fn boundary_condition(
    scene: &Scene,
    bd: &BoundaryData,
) -> Result<BoundaryCondition, deform_core::error::CoreError> {
    let [l1, l2] = bd.l_fourier.clone();
    let g = bd.gamma_rate_fourier.clone();
    boundary_coefficients(
        &scene.grid,
        &scene.forms,
        &move |th: f64| [l1.eval(th), l2.eval(th)],
        &move |th: f64| g.eval(th),
    )
}

fn immersion_rows(scene: &Scene, im: &Immersion, forms: &FundamentalForms) -> Vec<Vec<f64>> {
    let grid = &scene.grid;
    (0..grid.n_nodes)
        .map(|p| {
            vec![
                grid.r[p],
                grid.theta[p],
                im.y[p][0],
                im.y[p][1],
                im.y[p][2],
                forms.h[p],
                forms.k[p],
                forms.k1[p],
                forms.k2[p],
                forms.det_g[p].sqrt(),
            ]
        })
        .collect()
}

const IMMERSION_HEADER: [&str; 10] =
    ["r", "theta", "y1", "y2", "y3", "h", "k", "k1", "k2", "sqrt_g"];

fn spectrum_json(sol: &RHSolution) -> serde_json::Value {
    json!({
        "kernel_dim": sol.kernel_dim,
        "gap": sol.gap(),
        "sigma_rel": sol.sigma_rel,
        "solvability_residual": sol.solvability_residual,
        "index": sol.index,
    })
}

pub fn geometry(cfg: &RunConfig, out: &OutDir) -> Result<serde_json::Value> {
    let scene = build_scene(cfg)?;
    out.write_csv(
        "geometry.csv",
        &IMMERSION_HEADER,
        &immersion_rows(&scene, &scene.im, &scene.forms),
    )?;
    let ci = verify_conjugate_isothermal(&scene.forms, 1e-6);
    let min_h = scene.forms.h.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_h = scene.forms.h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(json!({
        "admitted": true,
        "total_area": total_area(&scene.grid, &scene.forms),
        "min_h": min_h,
        "max_h": max_h,
        "conjugate_isothermal": {
            "max_off_diagonal": ci.max_off_diagonal,
            "max_diagonal_gap": ci.max_diagonal_gap,
            "pass": ci.pass,
        },
    }))
}

pub fn index(cfg: &RunConfig, _out: &OutDir) -> Result<serde_json::Value> {
    let scene = build_scene(cfg)?;
    let bc = boundary_condition(&scene, cfg.boundary()?)?;
    println!("n = {}", bc.index);
    Ok(json!({ "index": bc.index }))
}

pub fn solve(cfg: &RunConfig, out: &OutDir) -> Result<serde_json::Value> {
    let scene = build_scene(cfg)?;
    let bc = boundary_condition(&scene, cfg.boundary()?)?;
    let ctx = ResidualCtx::new(&scene.grid, &scene.metric, &scene.im, &scene.forms);
    let sys = assemble_linear_system(&ctx, cfg.kind, &bc, cfg.fix_point)?;
    let sol = RHSystem::from_linear_system(&scene.grid, &sys, cfg.tau_kernel()).solve()?;

    let n = scene.grid.n_nodes;
    let zeros = vec![0.0; 3 * n];
    let particular = sol.particular.as_deref().unwrap_or(&zeros);
    let mut header: Vec<String> =
        ["r", "theta", "a1", "a2", "c"].iter().map(|s| s.to_string()).collect();
    for ki in 0..sol.kernel_dim {
        for comp in ["a1", "a2", "c"] {
            header.push(format!("kernel{ki}_{comp}"));
        }
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|p| {
            let mut row = vec![
                scene.grid.r[p],
                scene.grid.theta[p],
                particular[p],
                particular[n + p],
                particular[2 * n + p],
            ];
            for kv in &sol.kernel {
                row.extend([kv[p], kv[n + p], kv[2 * n + p]]);
            }
            row
        })
        .collect();
    out.write_csv("solution.csv", &header_refs, &rows)?;
    println!(
        "kernel_dim = {} (gap {:.2e}), solvability residual {:.2e}",
        sol.kernel_dim,
        sol.gap(),
        sol.solvability_residual
    );
    Ok(spectrum_json(&sol))
}

pub fn evolve(cfg: &RunConfig, out: &OutDir) -> Result<serde_json::Value> {
    let scene = build_scene(cfg)?;
    let bd = cfg.boundary()?.clone();
    let (dt, n_steps) = cfg.step_count()?;
    let ecfg = EvolutionConfig {
        kind: cfg.kind,
        dt,
        n_steps,
        kernel_coeffs: cfg.kernel_coeffs.clone().unwrap_or_default(),
        fix_point: cfg.fix_point,
        tau_kernel: cfg.tau_kernel(),
        midpoint: false,
    };
    let mut state =
        EvolutionState::new(&scene.grid, &scene.metric, scene.im.clone(), cfg.kind)?;
    run_evolution(&mut state, &ecfg, &bd)?;

    let traj: Vec<Vec<f64>> = state
        .history
        .iter()
        .map(|d| {
            vec![
                d.step as f64,
                d.t,
                d.kernel_dim as f64,
                d.invariant_drift,
                d.g_residual,
                d.rate_norm,
                d.solvability_residual,
            ]
        })
        .collect();
    out.write_csv(
        "trajectory.csv",
        &["step", "t", "kernel_dim", "invariant_drift", "g_residual", "rate_norm", "solvability_residual"],
        &traj,
    )?;
    let final_forms =
        fundamental_forms_checked(&state.im, &scene.metric, false)?;
    out.write_csv(
        "final_state.csv",
        &IMMERSION_HEADER,
        &immersion_rows(&scene, &state.im, &final_forms),
    )?;
    let last = state.history.last().expect("at least one step was taken");
    let drift_ok = last.invariant_drift <= 5e-3;
    println!(
        "evolved to t = {} in {} steps; invariant drift {:.2e} ({})",
        last.t,
        n_steps,
        last.invariant_drift,
        if drift_ok { "ok" } else { "exceeds 5e-3" }
    );
    Ok(json!({
        "t_final": last.t,
        "n_steps": n_steps,
        "monitored_invariant": {
            "kind": cfg.kind,
            "drift": last.invariant_drift,
            "pass": drift_ok,
        },
        "g_residual": last.g_residual,
        "kernel_dim": last.kernel_dim,
    }))
}

pub fn closed(cfg: &RunConfig, _out: &OutDir) -> Result<serde_json::Value> {
    let r = match cfg.chart {
        Chart::StereographicSphere { r } => r,
        _ => bail!("the closed command needs a stereographic_sphere chart"),
    };
    let grid = cfg.build_grid()?;
    let metric = cfg.metric.build()?;
    let cs = ClosedSurface::two_chart_sphere(&grid, &metric, r)?;
    let free = glue_closed_system(&cs, cfg.kind, None, cfg.tau_kernel())?.solve()?;
    let fixed =
        glue_closed_system(&cs, cfg.kind, Some(cfg.fix_point.unwrap_or(0)), cfg.tau_kernel())?
            .solve()?;
    let angle = if metric.is_euclidean() && free.kernel_dim == 3 {
        Some(subspace_angle(&free.kernel, &closed_translations(&cs)))
    } else {
        None
    };
    println!(
        "closed surface: kernel_dim {} free / {} fixed",
        free.kernel_dim, fixed.kernel_dim
    );
    Ok(json!({
        "free": spectrum_json(&free),
        "fixed": spectrum_json(&fixed),
        "translation_subspace_angle": angle,
        "area": 2.0 * total_area(&grid, &cs.forms),
    }))
}
