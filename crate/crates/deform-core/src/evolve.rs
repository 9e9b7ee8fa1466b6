//! Deformation evolution in the parameter t and the two-chart closed-surface
//! formulation.
//!
//! Each step linearizes at the current state, solves for the rate field
//! (particular solution plus user-steered kernel coefficients), advances the
//! accumulated ambient displacement and tracks invariant drift. The closed
//! sphere is glued from two stereographic hemisphere charts joined along the
//! equator by value and first-tangential-derivative seam rows.

use crate::ambient::MetricField;
use crate::dual::vec3;
use crate::error::CoreError;
use crate::grid::{fornberg, Grid, ORDER};
use crate::linearize::{
    assemble_jacobian, assemble_linear_system_with_tolerance, boundary_coefficients,
    DeformationKind, ResidualCtx,
};
use crate::rhsolver::{
    block_scale, weighted_interior, RHSolution, RHSystem, FILTER_ALPHA, DEFAULT_TAU_KERNEL,
};
use crate::sparse::{Coo, SparseMat};
use crate::surface::{
    deform_immersion, fundamental_forms_checked, verify_conjugate_isothermal, Chart,
    DeformationField, FundamentalForms, Immersion,
};

/// Maximum ambient distance between corresponding seam nodes.
pub const SEAM_TOL: f64 = 1e-10;

/// Chart-2 placement isometry: rotation by π about the y¹ axis.
pub fn rot(v: [f64; 3]) -> [f64; 3] {
    [v[0], -v[1], -v[2]]
}

/// Two immersions glued along the boundary ring. Chart F⁻ is the image of
/// F⁺ under [`rot`], so both charts share one set of fundamental forms (the
/// placement is an ambient isometry; this requires the metric to be invariant
/// under it, which holds for the Euclidean and constant-curvature conformal
/// families).
pub struct ClosedSurface<'a> {
    pub grid: &'a Grid,
    pub metric: &'a MetricField,
    /// Chart F⁺ (lower hemisphere for the two-chart sphere).
    pub im: Immersion,
    pub forms: FundamentalForms,
    /// Boundary-node correspondence: entry j is the node of F⁻'s ring glued
    /// to node j of F⁺'s ring (the seam map reverses the boundary angle).
    pub seam: Vec<usize>,
}

impl<'a> ClosedSurface<'a> {
    /// Unit-speed construction of the two-chart sphere of radius `r`.
    pub fn two_chart_sphere(
        grid: &'a Grid,
        metric: &'a MetricField,
        r: f64,
    ) -> Result<Self, CoreError> {
        let chart = Chart::StereographicSphere { r };
        let im = crate::surface::build_immersion(&chart, grid)?;
        let forms = fundamental_forms_checked(&im, metric, true)?;
        Self::from_chart(grid, metric, im, forms)
    }

    /// Glue a chart to its [`rot`]-image; verifies the seam correspondence.
    pub fn from_chart(
        grid: &'a Grid,
        metric: &'a MetricField,
        im: Immersion,
        forms: FundamentalForms,
    ) -> Result<Self, CoreError> {
        let nt = grid.n_theta;
        let mut seam = Vec::with_capacity(nt);
        let mut worst = 0.0_f64;
        for j in 0..nt {
            let q1 = grid.idx(grid.n_r, j as isize);
            let q2 = grid.idx(grid.n_r, -(j as isize));
            let d = vec3::sub(im.y[q1], rot(im.y[q2]));
            worst = worst.max(vec3::dot(d, d).sqrt());
            seam.push(q2);
        }
        if worst > SEAM_TOL {
            return Err(CoreError::SeamMismatch(worst));
        }
        Ok(ClosedSurface { grid, metric, im, forms, seam })
    }
}

/// Joint system over both charts' unknowns (3N per chart, F⁺ block first):
/// interior rows of each chart, seam value and tangential-derivative rows,
/// optional fix-point rows on F⁺, and the smoothing filter. No boundary-data
/// rows — the surface is closed.
pub fn glue_closed_system(
    cs: &ClosedSurface,
    kind: DeformationKind,
    fix_node: Option<usize>,
    tau_kernel: f64,
) -> Result<RHSystem, CoreError> {
    let grid = cs.grid;
    let n = grid.n_nodes;
    let ci = verify_conjugate_isothermal(&cs.forms, 1e-6);
    if !ci.pass {
        return Err(CoreError::NotConjugateIsothermal(format!(
            "closed chart: max |b12| = {:.3e}, max |b11-b22| = {:.3e}",
            ci.max_off_diagonal, ci.max_diagonal_gap
        )));
    }
    let ctx = ResidualCtx::new(grid, cs.metric, &cs.im, &cs.forms);
    let jac = assemble_jacobian(&ctx, kind);
    let mut g_coo = Coo::new(2 * n, 3 * n);
    let mut i_coo = Coo::new(n, 3 * n);
    for r in 0..3 * n {
        let (cols, vals) = jac.row(r);
        for (&cc, &v) in cols.iter().zip(vals.iter()) {
            if r < 2 * n {
                g_coo.push(r, cc, v);
            } else {
                i_coo.push(r - 2 * n, cc, v);
            }
        }
    }
    let interior = weighted_interior(grid, &g_coo.to_csr(), &i_coo.to_csr());
    let int_plus = interior.pad_cols(0, 6 * n);
    let int_minus = interior.pad_cols(3 * n, 6 * n);

    let (seam_value, seam_deriv) = seam_rows(cs);
    let (mut sv, _) = block_scale(seam_value);
    let (mut sd, _) = block_scale(seam_deriv);
    let bw = grid.h_theta.sqrt();
    sv.scale_all(bw);
    sd.scale_all(bw);

    let mut blocks: Vec<&SparseMat> = vec![&int_plus, &int_minus, &sv, &sd];
    let fix;
    if let Some(q) = fix_node {
        let mut f = Coo::new(3, 6 * n);
        f.push(0, q, 1.0);
        f.push(1, n + q, 1.0);
        f.push(2, 2 * n + q, 1.0);
        fix = f.to_csr();
        blocks.push(&fix);
    }
    let main = SparseMat::vstack(&blocks);
    let nrm = (main.norm_1() * main.norm_inf()).sqrt();
    let filter = closed_filter(grid, FILTER_ALPHA * nrm / 0.0625);
    let m = SparseMat::vstack(&[&main, &filter]);
    let rhs = vec![0.0; m.nrows];
    Ok(RHSystem { m, rhs, n_cols: 6 * n, tau_kernel, index: 0, rough: None, hard: None })
}

/// Seam rows: for each boundary node pair (q⁺, q⁻), three rows enforcing
/// ż⁺ = R ż⁻ in ambient components and three rows matching the tangential
/// θ-derivative (the seam map reverses the boundary angle, so the mapped
/// derivative enters with a plus sign).
fn seam_rows(cs: &ClosedSurface) -> (SparseMat, SparseMat) {
    let grid = cs.grid;
    let n = grid.n_nodes;
    let nt = grid.n_theta;
    let half = ORDER / 2;
    let offsets: Vec<f64> = (0..=ORDER)
        .map(|i| (i as isize - half as isize) as f64 * grid.h_theta)
        .collect();
    let wth: Vec<f64> = fornberg(0.0, &offsets, 1).iter().map(|row| row[1]).collect();

    // frame fields and their θ-derivatives along the boundary ring, the
    // latter by the same periodic stencil applied to the ring samples
    let frame = |q: usize| -> [[f64; 3]; 3] {
        [cs.im.yd[q][0], cs.im.yd[q][1], cs.forms.n[q]]
    };
    let ring_q = |j: isize| grid.idx(grid.n_r, j);
    let dframe: Vec<[[f64; 3]; 3]> = (0..nt)
        .map(|j| {
            let mut d = [[0.0; 3]; 3];
            for (k, &w) in wth.iter().enumerate() {
                let p = ring_q(j as isize + k as isize - half as isize);
                let f = frame(p);
                for a in 0..3 {
                    for s in 0..3 {
                        d[a][s] += w * f[a][s];
                    }
                }
            }
            d
        })
        .collect();

    let mut value = Coo::new(3 * nt, 6 * n);
    let mut deriv = Coo::new(3 * nt, 6 * n);
    for j in 0..nt {
        let q1 = ring_q(j as isize);
        let jm = ((nt as isize - j as isize) % nt as isize) as usize;
        let q2 = cs.seam[j];
        let f1 = frame(q1);
        let f2 = frame(q2);
        for s in 0..3 {
            let row = 3 * j + s;
            for a in 0..3 {
                value.push(row, a * n + q1, f1[a][s]);
                value.push(row, 3 * n + a * n + q2, -rot(f2[a])[s]);
            }
            // derivative row: stencil on the coefficient fields times the
            // frame at the seam node, plus coefficient at the seam node
            // times the frame θ-derivative
            for (k, &w) in wth.iter().enumerate() {
                let off = k as isize - half as isize;
                let p1 = ring_q(j as isize + off);
                let p2 = ring_q(jm as isize + off);
                for a in 0..3 {
                    deriv.push(row, a * n + p1, w * f1[a][s]);
                    deriv.push(row, 3 * n + a * n + p2, rot(vec3::scale(f2[a], w))[s]);
                }
            }
            let d1 = &dframe[j];
            let d2 = &dframe[jm];
            for a in 0..3 {
                deriv.push(row, a * n + q1, d1[a][s]);
                deriv.push(row, 3 * n + a * n + q2, rot(d2[a])[s]);
            }
        }
    }
    (value.to_csr(), deriv.to_csr())
}

/// Filter rows over both charts' coefficient blocks.
fn closed_filter(grid: &Grid, strength: f64) -> SparseMat {
    let f = grid.filter_op();
    let n = grid.n_nodes;
    let mut coo = Coo::new(6 * n, 6 * n);
    for b in 0..6 {
        for r in 0..n {
            let (cols, vals) = f.row(r);
            for (&c, &v) in cols.iter().zip(vals.iter()) {
                coo.push(b * n + r, b * n + c, v);
            }
        }
    }
    let mut m = coo.to_csr();
    let w = grid.l2_row_weights();
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let mut rows = Vec::with_capacity(6 * n);
    for _ in 0..6 {
        rows.extend(w.iter().map(|v| v / mean * strength));
    }
    m.scale_rows(&rows);
    m
}

/// The three Euclidean translation rate fields on the glued sphere, unit
/// normalized, in the joint 6N coefficient layout. These span the Theorem-2
/// kernel in the flat ambient.
pub fn closed_translations(cs: &ClosedSurface) -> [Vec<f64>; 3] {
    let n = cs.grid.n_nodes;
    let mut out: [Vec<f64>; 3] = [vec![0.0; 6 * n], vec![0.0; 6 * n], vec![0.0; 6 * n]];
    for (d, t) in out.iter_mut().enumerate() {
        let mut e = [0.0; 3];
        e[d] = 1.0;
        for (chart, delta) in [(0usize, e), (1, rot(e))] {
            for p in 0..n {
                let g = &cs.forms.g[p];
                let det = cs.forms.det_g[p];
                let (gi11, gi12, gi22) = (g[1][1] / det, -g[0][1] / det, g[0][0] / det);
                let d1 = vec3::dot(cs.im.yd[p][0], delta);
                let d2 = vec3::dot(cs.im.yd[p][1], delta);
                t[3 * chart * n + p] = gi11 * d1 + gi12 * d2;
                t[3 * chart * n + n + p] = gi12 * d1 + gi22 * d2;
                t[3 * chart * n + 2 * n + p] = vec3::dot(cs.forms.n[p], delta);
            }
        }
        let nn = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in t.iter_mut() {
            *v /= nn;
        }
    }
    out
}

/// Largest principal angle (radians, small-angle norm surrogate) between the
/// span of `basis` and the span of `vectors`: ‖(I − QQᵀ)V‖ with Q an
/// orthonormalization of `basis`.
pub fn subspace_angle(basis: &[Vec<f64>], vectors: &[Vec<f64>]) -> f64 {
    let mut q: Vec<Vec<f64>> = basis.to_vec();
    for j in 0..q.len() {
        for i in 0..j {
            let dot: f64 = q[i].iter().zip(q[j].iter()).map(|(a, b)| a * b).sum();
            let qi = q[i].clone();
            for (a, b) in q[j].iter_mut().zip(qi.iter()) {
                *a -= dot * b;
            }
        }
        let nn: f64 = q[j].iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        for a in q[j].iter_mut() {
            *a /= nn;
        }
    }
    let mut worst: f64 = 0.0;
    for v in vectors {
        let nn: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
        let mut resid2: f64 = v.iter().map(|x| x * x).sum();
        for qv in &q {
            let dot: f64 = qv.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
            resid2 -= dot * dot;
        }
        worst = worst.max(resid2.max(0.0).sqrt() / nn);
    }
    worst
}

/// Boundary data of an evolution run: tangential field l^i and the boundary
/// rate γ̇̃, both as truncated Fourier series in the boundary angle.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryData {
    pub l_fourier: [crate::linearize::FourierSeries; 2],
    #[serde(default)]
    pub gamma_rate_fourier: crate::linearize::FourierSeries,
}

impl BoundaryData {
    /// Boundary field of index +1 under the conjugated-λ convention:
    /// l = (cos θ, −sin θ), zero rate.
    pub fn winding_one() -> Self {
        BoundaryData {
            l_fourier: [
                crate::linearize::FourierSeries { cos: vec![0.0, 1.0], sin: vec![] },
                crate::linearize::FourierSeries { cos: vec![], sin: vec![-1.0] },
            ],
            gamma_rate_fourier: crate::linearize::FourierSeries::default(),
        }
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    pub kind: DeformationKind,
    pub dt: f64,
    pub n_steps: usize,
    /// Coefficients steering the kernel basis; length must match the
    /// realized kernel dimension at every step.
    #[serde(default)]
    pub kernel_coeffs: Vec<f64>,
    #[serde(default)]
    pub fix_point: Option<usize>,
    #[serde(default = "default_tau")]
    pub tau_kernel: f64,
    /// Use the midpoint (second-order) stepping variant.
    #[serde(default)]
    pub midpoint: bool,
}

fn default_tau() -> f64 {
    DEFAULT_TAU_KERNEL
}

/// Per-step diagnostics appended to the trajectory.
#[derive(Clone, Debug, serde::Serialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub t: f64,
    pub kernel_dim: usize,
    /// Max relative drift of the preserved invariant against t = 0.
    pub invariant_drift: f64,
    /// Nonlinear G-residual max-norm of the accumulated deformation,
    /// measured from the original base state.
    pub g_residual: f64,
    pub rate_norm: f64,
    pub solvability_residual: f64,
}

pub struct EvolutionState<'a> {
    pub grid: &'a Grid,
    pub metric: &'a MetricField,
    pub base: Immersion,
    pub base_forms: FundamentalForms,
    /// Invariant values of the chosen kind at t = 0 (drift reference).
    pub base_invariant: Vec<f64>,
    /// Accumulated ambient displacement.
    pub z: Vec<[f64; 3]>,
    pub im: Immersion,
    pub t: f64,
    pub step_index: usize,
    pub history: Vec<StepDiagnostics>,
}

fn invariant_values(kind: DeformationKind, forms: &FundamentalForms) -> Vec<f64> {
    match kind {
        DeformationKind::H => forms.h.clone(),
        DeformationKind::K => forms.k.clone(),
        DeformationKind::A => forms.det_g.iter().map(|g| g.sqrt()).collect(),
        DeformationKind::Ch => forms
            .h
            .iter()
            .zip(forms.k.iter())
            .map(|(h, k)| 2.0 * h / k)
            .collect(),
    }
}

impl<'a> EvolutionState<'a> {
    pub fn new(
        grid: &'a Grid,
        metric: &'a MetricField,
        base: Immersion,
        kind: DeformationKind,
    ) -> Result<Self, CoreError> {
        let base_forms = fundamental_forms_checked(&base, metric, true)?;
        let base_invariant = invariant_values(kind, &base_forms);
        let im = base.clone();
        let n = grid.n_nodes;
        Ok(EvolutionState {
            grid,
            metric,
            base,
            base_forms,
            base_invariant,
            z: vec![[0.0; 3]; n],
            im,
            t: 0.0,
            step_index: 0,
            history: Vec::new(),
        })
    }

    fn rebuild_immersion(&mut self) {
        let n = self.grid.n_nodes;
        let field = DeformationField {
            a1: vec![0.0; n],
            a2: vec![0.0; n],
            c: vec![0.0; n],
            z: self.z.clone(),
        };
        // derivative grids: base analytic plus differenced displacement
        self.im = deform_immersion(self.grid, &self.base, &field)
            .expect("displacement grid shape is fixed");
    }
}

/// Conjugate-isothermal gate for re-assembly at deformed states; the carried
/// parameterization is only approximately conjugate isothermal there.
pub const EVOLVE_CI_TOLERANCE: f64 = 5e-2;

/// One evolution step: linearize and solve at the current state, build the
/// rate field from the particular solution and the steered kernel basis,
/// advance the displacement by Δt (optionally with a midpoint re-evaluation)
/// and append drift diagnostics.
pub fn step(
    state: &mut EvolutionState,
    cfg: &EvolutionConfig,
    bd: &BoundaryData,
) -> Result<(), CoreError> {
    let step_no = state.step_index + 1;
    let wrap = |reason: String| CoreError::Evolution { step: step_no, reason };

    let rate = solve_rate(state, cfg, bd, &state.im.clone())?;
    let rate = if cfg.midpoint {
        // re-evaluate the rate at the provisional half step
        let n = state.grid.n_nodes;
        let mut zh = state.z.clone();
        for p in 0..n {
            zh[p] = vec3::add(zh[p], vec3::scale(rate.dz[p], 0.5 * cfg.dt));
        }
        let field = DeformationField {
            a1: vec![0.0; n],
            a2: vec![0.0; n],
            c: vec![0.0; n],
            z: zh,
        };
        let im_half = deform_immersion(state.grid, &state.base, &field)
            .map_err(|e| wrap(format!("midpoint state: {e}")))?;
        solve_rate(state, cfg, bd, &im_half)?
    } else {
        rate
    };

    for (zp, dzp) in state.z.iter_mut().zip(rate.dz.iter()) {
        *zp = vec3::add(*zp, vec3::scale(*dzp, cfg.dt));
    }
    state.t += cfg.dt;
    state.step_index = step_no;
    state.rebuild_immersion();

    // diagnostics at the new state
    let forms = fundamental_forms_checked(&state.im, state.metric, true)
        .map_err(|e| wrap(format!("surface left admittance: {e}")))?;
    let inv = invariant_values(cfg.kind, &forms);
    let mut drift = 0.0_f64;
    for (a, b) in inv.iter().zip(state.base_invariant.iter()) {
        drift = drift.max((a - b).abs() / b.abs().max(1e-300));
    }
    // G-residual of the accumulated deformation from the original base
    let g_residual = {
        let ctx = ResidualCtx::new(state.grid, state.metric, &state.base, &state.base_forms);
        let f = accumulated_field(state);
        let r = ctx.residual(cfg.kind, &f.a1, &f.a2, &f.c);
        r.rg1
            .iter()
            .chain(r.rg2.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    };
    state.history.push(StepDiagnostics {
        step: step_no,
        t: state.t,
        kernel_dim: rate.kernel_dim,
        invariant_drift: drift,
        g_residual,
        rate_norm: rate.rate_norm,
        solvability_residual: rate.solvability_residual,
    });
    Ok(())
}

/// Project the accumulated ambient displacement onto the base frame.
fn accumulated_field(state: &EvolutionState) -> DeformationField {
    let n = state.grid.n_nodes;
    let mut a1 = vec![0.0; n];
    let mut a2 = vec![0.0; n];
    let mut c = vec![0.0; n];
    for p in 0..n {
        let cols = [
            state.base.yd[p][0],
            state.base.yd[p][1],
            state.base_forms.n[p],
        ];
        let m = [
            [cols[0][0], cols[1][0], cols[2][0]],
            [cols[0][1], cols[1][1], cols[2][1]],
            [cols[0][2], cols[1][2], cols[2][2]],
        ];
        let sol = solve3(&m, state.z[p]);
        a1[p] = sol[0];
        a2[p] = sol[1];
        c[p] = sol[2];
    }
    DeformationField { a1, a2, c, z: state.z.clone() }
}

fn solve3(m: &[[f64; 3]; 3], b: [f64; 3]) -> [f64; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut out = [0.0; 3];
    for i in 0..3 {
        let mut mm = *m;
        for r in 0..3 {
            mm[r][i] = b[r];
        }
        let d = mm[0][0] * (mm[1][1] * mm[2][2] - mm[1][2] * mm[2][1])
            - mm[0][1] * (mm[1][0] * mm[2][2] - mm[1][2] * mm[2][0])
            + mm[0][2] * (mm[1][0] * mm[2][1] - mm[1][1] * mm[2][0]);
        out[i] = d / det;
    }
    out
}

struct RateField {
    /// Ambient rate vectors ż per node.
    dz: Vec<[f64; 3]>,
    kernel_dim: usize,
    rate_norm: f64,
    solvability_residual: f64,
}

fn solve_rate(
    state: &EvolutionState,
    cfg: &EvolutionConfig,
    bd: &BoundaryData,
    at: &Immersion,
) -> Result<RateField, CoreError> {
    let step_no = state.step_index + 1;
    let wrap = |reason: String| CoreError::Evolution { step: step_no, reason };
    let grid = state.grid;
    let n = grid.n_nodes;

    let forms = fundamental_forms_checked(at, state.metric, true)
        .map_err(|e| wrap(format!("surface left admittance: {e}")))?;

    // smallness budget for the boundary rate (stands in for the paper's
    // unquantified ε): ‖γ̇̃‖_∞ ≤ 0.1 · min H · grid scale
    let min_h = forms.h.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    let budget = 0.1 * min_h * grid.h;
    let mut max_rate = 0.0_f64;
    for j in 0..grid.n_theta {
        let th = grid.theta[grid.idx(grid.n_r, j as isize)];
        max_rate = max_rate.max(bd.gamma_rate_fourier.eval(th).abs());
    }
    if max_rate > budget {
        return Err(wrap(format!(
            "boundary rate ‖γ̇̃‖ = {max_rate:.3e} exceeds smallness budget {budget:.3e}"
        )));
    }

    let ctx = ResidualCtx::new(grid, state.metric, at, &forms);
    let l0 = bd.l_fourier[0].clone();
    let l1 = bd.l_fourier[1].clone();
    let gr = bd.gamma_rate_fourier.clone();
    let bc = boundary_coefficients(
        grid,
        &forms,
        &move |th| [l0.eval(th), l1.eval(th)],
        &move |th| gr.eval(th),
    )?;
    let sys = assemble_linear_system_with_tolerance(
        &ctx,
        cfg.kind,
        &bc,
        cfg.fix_point,
        EVOLVE_CI_TOLERANCE,
    )?;
    let rh = RHSystem::from_linear_system(grid, &sys, cfg.tau_kernel);
    let sol: RHSolution = rh.solve()?;
    if sol.kernel_dim != cfg.kernel_coeffs.len() {
        return Err(wrap(format!(
            "kernel dimension {} does not match the {} steering coefficients",
            sol.kernel_dim,
            cfg.kernel_coeffs.len()
        )));
    }
    let mut coeffs = vec![0.0; 3 * n];
    if let Some(p) = &sol.particular {
        coeffs.copy_from_slice(p);
    }
    for (c, kv) in cfg.kernel_coeffs.iter().zip(sol.kernel.iter()) {
        for (a, b) in coeffs.iter_mut().zip(kv.iter()) {
            *a += c * b;
        }
    }
    let mut dz = vec![[0.0; 3]; n];
    let mut rate_norm = 0.0_f64;
    for p in 0..n {
        let mut v = vec3::scale(at.yd[p][0], coeffs[p]);
        v = vec3::add(v, vec3::scale(at.yd[p][1], coeffs[n + p]));
        v = vec3::add(v, vec3::scale(forms.n[p], coeffs[2 * n + p]));
        rate_norm = rate_norm.max(vec3::dot(v, v).sqrt());
        dz[p] = v;
    }
    Ok(RateField {
        dz,
        kernel_dim: sol.kernel_dim,
        rate_norm,
        solvability_residual: sol.solvability_residual,
    })
}

/// Execute `cfg.n_steps` steps; errors carry the step number.
pub fn run(
    state: &mut EvolutionState,
    cfg: &EvolutionConfig,
    bd: &BoundaryData,
) -> Result<(), CoreError> {
    for _ in 0..cfg.n_steps {
        step(state, cfg, bd)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::surface::build_immersion;

    #[test]
    fn two_chart_sphere_seam_is_consistent() {
        let grid = Grid::new(GridSpec { n_r: 8, n_theta: 32 }).unwrap();
        let metric = MetricField::euclidean();
        let cs = ClosedSurface::two_chart_sphere(&grid, &metric, 1.0).unwrap();
        assert_eq!(cs.seam.len(), 32);
        // seam nodes sit on the equator
        for j in 0..32 {
            let q = grid.idx(grid.n_r, j as isize);
            assert!(cs.im.y[q][2].abs() < 1e-12);
        }
    }

    #[test]
    fn seam_mismatch_detected_for_offset_chart() {
        let grid = Grid::new(GridSpec { n_r: 8, n_theta: 32 }).unwrap();
        let metric = MetricField::euclidean();
        // a cap that stops short of the equator cannot be glued to its image
        let im = build_immersion(
            &Chart::SphericalCap { r: 1.0, rho: std::f64::consts::FRAC_PI_4 },
            &grid,
        )
        .unwrap();
        let forms = crate::surface::fundamental_forms(&im, &metric).unwrap();
        let r = ClosedSurface::from_chart(&grid, &metric, im, forms);
        assert!(matches!(r, Err(CoreError::SeamMismatch(_))));
    }

    #[test]
    fn translations_annihilated_by_closed_system() {
        let grid = Grid::new(GridSpec { n_r: 12, n_theta: 48 }).unwrap();
        let metric = MetricField::euclidean();
        let cs = ClosedSurface::two_chart_sphere(&grid, &metric, 1.0).unwrap();
        for kind in [DeformationKind::H, DeformationKind::A] {
            let sys = glue_closed_system(&cs, kind, None, 1e-7).unwrap();
            let nrm = sys.m.max_row_norm();
            for t in closed_translations(&cs) {
                let mut out = vec![0.0; sys.m.nrows];
                sys.m.apply_f64(&t, &mut out);
                let r = out.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(r <= 1e-6 * nrm, "kind {kind}: ‖M t‖ = {r:.3e} vs {nrm:.3e}");
            }
        }
    }

    #[test]
    fn closed_sphere_kernel_dimension_small_grid() {
        let grid = Grid::new(GridSpec { n_r: 12, n_theta: 48 }).unwrap();
        let metric = MetricField::euclidean();
        let cs = ClosedSurface::two_chart_sphere(&grid, &metric, 1.0).unwrap();
        let sys = glue_closed_system(&cs, DeformationKind::H, None, 1e-7).unwrap();
        let sol = sys.solve().unwrap();
        assert_eq!(sol.kernel_dim, 3, "sigma = {:?}", sol.sigma_rel);
        let t = closed_translations(&cs);
        let ang = subspace_angle(&sol.kernel, &t);
        assert!(ang <= 1e-4, "subspace angle {ang:.3e}");
        // with a fix point the kernel must vanish
        let sys = glue_closed_system(&cs, DeformationKind::H, Some(0), 1e-7).unwrap();
        let sol = sys.solve().unwrap();
        assert_eq!(sol.kernel_dim, 0, "sigma = {:?}", sol.sigma_rel);
    }

    #[test]
    fn zero_rate_step_only_advances_time() {
        let grid = Grid::new(GridSpec { n_r: 8, n_theta: 32 }).unwrap();
        let metric = MetricField::euclidean();
        let im = build_immersion(
            &Chart::SphericalCap { r: 1.0, rho: std::f64::consts::FRAC_PI_4 },
            &grid,
        )
        .unwrap();
        let mut state =
            EvolutionState::new(&grid, &metric, im, DeformationKind::H).unwrap();
        let cfg = EvolutionConfig {
            kind: DeformationKind::H,
            dt: 0.01,
            n_steps: 2,
            kernel_coeffs: vec![0.0], // n=1 with fix point: kernel dim 1
            fix_point: Some(0),
            tau_kernel: 1e-7,
            midpoint: false,
        };
        let bd = BoundaryData::winding_one();
        run(&mut state, &cfg, &bd).unwrap();
        assert!((state.t - 0.02).abs() < 1e-12);
        for z in &state.z {
            assert_eq!(*z, [0.0; 3]);
        }
        for d in &state.history {
            assert_eq!(d.invariant_drift, 0.0);
            assert_eq!(d.kernel_dim, 1);
        }
    }

    #[test]
    fn steered_step_moves_surface_and_drift_stays_second_order() {
        let grid = Grid::new(GridSpec { n_r: 8, n_theta: 32 }).unwrap();
        let metric = MetricField::euclidean();
        let im = build_immersion(
            &Chart::SphericalCap { r: 1.0, rho: std::f64::consts::FRAC_PI_4 },
            &grid,
        )
        .unwrap();
        let drift_at = |dt: f64, n_steps: usize| -> f64 {
            let mut state =
                EvolutionState::new(&grid, &metric, im.clone(), DeformationKind::H).unwrap();
            let cfg = EvolutionConfig {
                kind: DeformationKind::H,
                dt,
                n_steps,
                kernel_coeffs: vec![0.5],
                fix_point: Some(0),
                tau_kernel: 1e-7,
                midpoint: false,
            };
            run(&mut state, &cfg, &BoundaryData::winding_one()).unwrap();
            assert!(state.z.iter().any(|z| vec3::dot(*z, *z) > 0.0));
            state.history.last().unwrap().invariant_drift
        };
        let d1 = drift_at(0.02, 5);
        let d2 = drift_at(0.01, 10);
        assert!(d1 > 0.0 && d1 < 5e-3, "drift {d1:.3e}");
        let factor = d1 / d2.max(1e-300);
        assert!(
            (1.5..=2.5).contains(&factor),
            "refinement factor {factor:.2} (drift {d1:.3e} -> {d2:.3e})"
        );
    }

    #[test]
    fn mismatched_kernel_coefficients_error() {
        let grid = Grid::new(GridSpec { n_r: 8, n_theta: 32 }).unwrap();
        let metric = MetricField::euclidean();
        let im = build_immersion(
            &Chart::SphericalCap { r: 1.0, rho: std::f64::consts::FRAC_PI_4 },
            &grid,
        )
        .unwrap();
        let mut state =
            EvolutionState::new(&grid, &metric, im, DeformationKind::H).unwrap();
        let cfg = EvolutionConfig {
            kind: DeformationKind::H,
            dt: 0.01,
            n_steps: 1,
            kernel_coeffs: vec![1.0, 1.0],
            fix_point: Some(0),
            tau_kernel: 1e-7,
            midpoint: false,
        };
        let r = run(&mut state, &cfg, &BoundaryData::winding_one());
        assert!(matches!(r, Err(CoreError::Evolution { step: 1, .. })));
    }

    #[test]
    fn budget_violation_names_the_step() {
        let grid = Grid::new(GridSpec { n_r: 8, n_theta: 32 }).unwrap();
        let metric = MetricField::euclidean();
        let im = build_immersion(
            &Chart::SphericalCap { r: 1.0, rho: std::f64::consts::FRAC_PI_4 },
            &grid,
        )
        .unwrap();
        let mut state =
            EvolutionState::new(&grid, &metric, im, DeformationKind::H).unwrap();
        let cfg = EvolutionConfig {
            kind: DeformationKind::H,
            dt: 0.01,
            n_steps: 1,
            kernel_coeffs: vec![0.0],
            fix_point: Some(0),
            tau_kernel: 1e-7,
            midpoint: false,
        };
        let mut bd = BoundaryData::winding_one();
        bd.gamma_rate_fourier = crate::linearize::FourierSeries { cos: vec![10.0], sin: vec![] };
        match run(&mut state, &cfg, &bd) {
            Err(CoreError::Evolution { step: 1, reason }) => {
                assert!(reason.contains("budget"), "reason: {reason}");
            }
            other => panic!("expected budget violation, got {other:?}"),
        }
    }

    #[test]
    fn smooth_direction_is_normalized() {
        use rand::SeedableRng;
        let grid = Grid::new(GridSpec { n_r: 8, n_theta: 32 }).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let d = crate::linearize::smooth_random_direction(&grid, &mut rng);
        let nn: f64 = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((nn - 1.0).abs() < 1e-12);
    }
}
