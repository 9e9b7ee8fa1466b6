//! Discretized immersions of the unit disk, fundamental forms, curvatures,
//! and deformation fields.
//!
//! Derivative grids of the built-in charts are analytic (differentiated in
//! closed form); deformed immersions recompute them by applying the grid's
//! difference operators to the displacement grid. All tensor components are
//! expressed in the Cartesian frame (x¹, x²); the polar grid is only a
//! sampling layout chosen so the boundary circle is resolved exactly.

use crate::ambient::MetricField;
use crate::dual::{vec3, Real};
use crate::error::CoreError;
use crate::grid::{Grid, GridSpec};

/// Monomial in the two chart coordinates, for polynomial graph charts.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct Monomial2 {
    pub powers: [u8; 2],
    pub coeff: f64,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(tag = "chart", rename_all = "snake_case", deny_unknown_fields)]
pub enum Chart {
    /// Cap of polar extent `rho` on a sphere of radius `r`, in the
    /// stereographic parameterization (conjugate isothermal).
    SphericalCap { r: f64, rho: f64 },
    /// Lower hemisphere of a sphere of radius `r` under stereographic
    /// projection from the north pole (south pole at the chart origin).
    StereographicSphere { r: f64 },
    /// Polynomial graph y = (x¹, x², P(x¹, x²)).
    CustomAnalytic { graph: Vec<Monomial2> },
}

impl Chart {
    pub fn validate(&self) -> Result<(), CoreError> {
        match self {
            Chart::SphericalCap { r, rho } => {
                if *r <= 0.0 {
                    return Err(CoreError::Config(format!("cap radius R = {r} must be > 0")));
                }
                if !(*rho > 0.0 && *rho < std::f64::consts::FRAC_PI_2) {
                    return Err(CoreError::Config(format!(
                        "cap extent rho = {rho} must lie in (0, pi/2)"
                    )));
                }
            }
            Chart::StereographicSphere { r } => {
                if *r <= 0.0 {
                    return Err(CoreError::Config(format!("sphere radius R = {r} must be > 0")));
                }
            }
            Chart::CustomAnalytic { graph } => {
                for m in graph {
                    if m.powers[0] + m.powers[1] > 6 {
                        return Err(CoreError::Config(
                            "graph polynomial degree exceeds 6".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Position, first and second derivatives at a chart point.
    /// Second derivatives are returned as `[d11, d12, d22]`.
    pub fn eval(&self, x: [f64; 2]) -> ([f64; 3], [[f64; 3]; 2], [[f64; 3]; 3]) {
        match self {
            Chart::SphericalCap { r, rho } => stereo_sphere(*r, (rho / 2.0).tan(), x),
            Chart::StereographicSphere { r } => stereo_sphere(*r, 1.0, x),
            Chart::CustomAnalytic { graph } => {
                let p = eval_poly2(graph, x, [0, 0]);
                let p1 = eval_poly2(graph, x, [1, 0]);
                let p2 = eval_poly2(graph, x, [0, 1]);
                let p11 = eval_poly2(graph, x, [2, 0]);
                let p12 = eval_poly2(graph, x, [1, 1]);
                let p22 = eval_poly2(graph, x, [0, 2]);
                (
                    [x[0], x[1], p],
                    [[1.0, 0.0, p1], [0.0, 1.0, p2]],
                    [[0.0, 0.0, p11], [0.0, 0.0, p12], [0.0, 0.0, p22]],
                )
            }
        }
    }
}

/// Sphere of radius `r` through the map
///   y = r (2 s x¹ F, 2 s x² F, 1 − 2F),  F = 1 / (1 + s²|x|²),
/// which sends the unit-disk boundary to polar angle 2·atan(s) from the
/// south pole. `s = 1` is the classical stereographic hemisphere.
fn stereo_sphere(r: f64, s: f64, x: [f64; 2]) -> ([f64; 3], [[f64; 3]; 2], [[f64; 3]; 3]) {
    let s2 = s * s;
    let f = 1.0 / (1.0 + s2 * (x[0] * x[0] + x[1] * x[1]));
    let df = [-2.0 * s2 * x[0] * f * f, -2.0 * s2 * x[1] * f * f];
    // ddf[i][j] = -2 s^2 (delta_ij f^2 + 2 x_i f df_j)
    let ddf = |i: usize, j: usize| -> f64 {
        let delta = if i == j { 1.0 } else { 0.0 };
        -2.0 * s2 * (delta * f * f + 2.0 * x[i] * f * df[j])
    };
    let y = [2.0 * r * s * x[0] * f, 2.0 * r * s * x[1] * f, r * (1.0 - 2.0 * f)];
    let mut yd = [[0.0; 3]; 2];
    for i in 0..2 {
        for k in 0..2 {
            let delta = if i == k { 1.0 } else { 0.0 };
            yd[i][k] = 2.0 * r * s * (delta * f + x[k] * df[i]);
        }
        yd[i][2] = -2.0 * r * df[i];
    }
    let pair = [(0, 0), (0, 1), (1, 1)];
    let mut ydd = [[0.0; 3]; 3];
    for (slot, &(i, j)) in pair.iter().enumerate() {
        for k in 0..2 {
            let dik = if i == k { 1.0 } else { 0.0 };
            let djk = if j == k { 1.0 } else { 0.0 };
            ydd[slot][k] = 2.0 * r * s * (dik * df[j] + djk * df[i] + x[k] * ddf(i, j));
        }
        ydd[slot][2] = -2.0 * r * ddf(i, j);
    }
    (y, yd, ydd)
}

fn eval_poly2(table: &[Monomial2], x: [f64; 2], shift: [u8; 2]) -> f64 {
    let mut acc = 0.0;
    'mono: for m in table {
        let mut coeff = m.coeff;
        let mut pw = [0u8; 2];
        for k in 0..2 {
            if m.powers[k] < shift[k] {
                continue 'mono;
            }
            for s in 0..shift[k] {
                coeff *= (m.powers[k] - s) as f64;
            }
            pw[k] = m.powers[k] - shift[k];
        }
        acc += coeff * x[0].powi(pw[0] as i32) * x[1].powi(pw[1] as i32);
    }
    acc
}

/// A discretized immersion: position and derivative grids, one entry per
/// grid node (center last). Second derivatives are `[d11, d12, d22]`.
#[derive(Clone, Debug)]
pub struct Immersion {
    pub spec: GridSpec,
    pub y: Vec<[f64; 3]>,
    pub yd: Vec<[[f64; 3]; 2]>,
    pub ydd: Vec<[[f64; 3]; 3]>,
}

pub fn build_immersion(chart: &Chart, grid: &Grid) -> Result<Immersion, CoreError> {
    chart.validate()?;
    let n = grid.n_nodes;
    let mut y = Vec::with_capacity(n);
    let mut yd = Vec::with_capacity(n);
    let mut ydd = Vec::with_capacity(n);
    for p in 0..n {
        let (yp, y1, y2) = chart.eval([grid.x1[p], grid.x2[p]]);
        y.push(yp);
        yd.push(y1);
        ydd.push(y2);
    }
    let im = Immersion { spec: GridSpec { n_r: grid.n_r, n_theta: grid.n_theta }, y, yd, ydd };
    im.check_rank()?;
    Ok(im)
}

impl Immersion {
    pub fn check_rank(&self) -> Result<(), CoreError> {
        for (p, d) in self.yd.iter().enumerate() {
            let c = vec3::cross(d[0], d[1]);
            let c2 = vec3::dot(c, c);
            let s1 = vec3::dot(d[0], d[0]);
            let s2 = vec3::dot(d[1], d[1]);
            if c2 <= 1e-20 * (s1 * s2).max(1e-300) {
                return Err(CoreError::DegenerateImmersion(p));
            }
        }
        Ok(())
    }
}

/// Rebuilds an immersion's derivative grids from its position grid with the
/// grid's difference operators. Used in two places: recomputing derivatives
/// of deformed immersions, and (criterion-style diagnostics) measuring the
/// discretization order of curvature fields.
pub fn immersion_from_positions(grid: &Grid, y: Vec<[f64; 3]>) -> Result<Immersion, CoreError> {
    let d1 = grid.dx.apply_vec3(&y);
    let d2 = grid.dy.apply_vec3(&y);
    let d11 = grid.dx.apply_vec3(&d1);
    let d22 = grid.dy.apply_vec3(&d2);
    // symmetrize the mixed derivative: the two operator orders differ at
    // truncation level only
    let d12a = grid.dy.apply_vec3(&d1);
    let d12b = grid.dx.apply_vec3(&d2);
    let n = grid.n_nodes;
    let mut yd = Vec::with_capacity(n);
    let mut ydd = Vec::with_capacity(n);
    for p in 0..n {
        yd.push([d1[p], d2[p]]);
        let mixed = vec3::scale(vec3::add(d12a[p], d12b[p]), 0.5);
        ydd.push([d11[p], mixed, d22[p]]);
    }
    let im = Immersion { spec: GridSpec { n_r: grid.n_r, n_theta: grid.n_theta }, y, yd, ydd };
    im.check_rank()?;
    Ok(im)
}

/// Low-order (2nd) derivative recomputation, for discretization-order
/// diagnostics where the order-8 operators would sit below roundoff.
pub fn immersion_from_positions_low_order(
    grid: &Grid,
    y: Vec<[f64; 3]>,
) -> Result<Immersion, CoreError> {
    let (dx, dy) = grid.low_order_ops();
    let d1 = dx.apply_vec3(&y);
    let d2 = dy.apply_vec3(&y);
    let d11 = dx.apply_vec3(&d1);
    let d22 = dy.apply_vec3(&d2);
    let d12a = dy.apply_vec3(&d1);
    let d12b = dx.apply_vec3(&d2);
    let n = grid.n_nodes;
    let mut yd = Vec::with_capacity(n);
    let mut ydd = Vec::with_capacity(n);
    for p in 0..n {
        yd.push([d1[p], d2[p]]);
        let mixed = vec3::scale(vec3::add(d12a[p], d12b[p]), 0.5);
        ydd.push([d11[p], mixed, d22[p]]);
    }
    let im = Immersion { spec: GridSpec { n_r: grid.n_r, n_theta: grid.n_theta }, y, yd, ydd };
    im.check_rank()?;
    Ok(im)
}

/// Pointwise fundamental forms of a single node, generic over the scalar so
/// the linearization can differentiate through it.
#[derive(Clone, Copy, Debug)]
pub struct PointForms<T> {
    pub g: [[T; 2]; 2],
    pub det_g: T,
    pub b: [[T; 2]; 2],
    pub n: [T; 3],
    pub h: T,
    pub k: T,
}

/// ã-unit normal with ã(n, y_i) = 0, oriented along `nref` (Euclidean cross
/// product of the tangents when `nref` is `None`).
pub fn metric_normal<T: Real>(
    metric: &MetricField,
    y: [T; 3],
    yd: &[[T; 3]; 2],
    nref: Option<[f64; 3]>,
) -> [T; 3] {
    let a = metric.at(y);
    let m = vec3::cross(yd[0], yd[1]); // covector: m·y_i = 0
    // n ∝ ã⁻¹ m satisfies ã(n, y_i) = m·y_i = 0
    let ainv = inv3(&a);
    let mut n = [T::zero(); 3];
    for i in 0..3 {
        for j in 0..3 {
            n[i] += ainv[i][j] * m[j];
        }
    }
    let mut norm2 = T::zero();
    for i in 0..3 {
        for j in 0..3 {
            norm2 += a[i][j] * n[i] * n[j];
        }
    }
    let inv_norm = norm2.sqrt().recip();
    let mut n = vec3::scale(n, inv_norm);
    if let Some(r) = nref {
        let dot = n[0].primal() * r[0] + n[1].primal() * r[1] + n[2].primal() * r[2];
        if dot < 0.0 {
            n = [-n[0], -n[1], -n[2]];
        }
    }
    n
}

fn inv3<T: Real>(a: &[[T; 3]; 3]) -> [[T; 3]; 3] {
    let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    let inv_det = det.recip();
    let mut out = [[T::zero(); 3]; 3];
    let minors = |i: usize| match i {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = minors(i);
            let (c0, c1) = minors(j);
            let m = a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0];
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            out[j][i] = m.scale(sign) * inv_det;
        }
    }
    out
}

/// Fundamental forms at one node. `nref` fixes the normal orientation; pass
/// the base-surface normal when evaluating deformed states so the branch is
/// taken on the primal trajectory.
pub fn point_forms<T: Real>(
    metric: &MetricField,
    y: [T; 3],
    yd: &[[T; 3]; 2],
    ydd: &[[T; 3]; 3],
    nref: Option<[f64; 3]>,
) -> PointForms<T> {
    let a = metric.at(y);
    let mut g = [[T::zero(); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let mut acc = T::zero();
            for al in 0..3 {
                for be in 0..3 {
                    acc += a[al][be] * yd[i][al] * yd[j][be];
                }
            }
            g[i][j] = acc;
        }
    }
    let det_g = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    let n = metric_normal(metric, y, yd, nref);
    // covariant Hessian: (∇_i y_j)^α = ∂_ij y^α + Γ^α_βγ y_i^β y_j^γ
    let gamma_opt = if metric.is_euclidean() { None } else { Some(metric.christoffel(y)) };
    let pair = [(0usize, 0usize), (0, 1), (1, 1)];
    let mut bv = [T::zero(); 3];
    for (slot, &(i, j)) in pair.iter().enumerate() {
        let mut hess = ydd[slot];
        if let Some(gamma) = &gamma_opt {
            for al in 0..3 {
                let mut acc = T::zero();
                for be in 0..3 {
                    for gm in 0..3 {
                        acc += gamma[al][be][gm] * yd[i][be] * yd[j][gm];
                    }
                }
                hess[al] += acc;
            }
        }
        let mut acc = T::zero();
        for al in 0..3 {
            for be in 0..3 {
                acc += a[al][be] * n[al] * hess[be];
            }
        }
        bv[slot] = acc;
    }
    let b = [[bv[0], bv[1]], [bv[1], bv[2]]];
    let inv_det = det_g.recip();
    let h = (g[1][1] * b[0][0] - g[0][1].scale(2.0) * b[0][1] + g[0][0] * b[1][1])
        * inv_det
        .scale(0.5);
    let k = (b[0][0] * b[1][1] - b[0][1] * b[0][1]) * inv_det;
    PointForms { g, det_g, b, n, h, k }
}

/// Fundamental forms over a whole immersion.
#[derive(Clone, Debug)]
pub struct FundamentalForms {
    pub g: Vec<[[f64; 2]; 2]>,
    pub det_g: Vec<f64>,
    pub b: Vec<[[f64; 2]; 2]>,
    pub v: Vec<f64>,
    pub n: Vec<[f64; 3]>,
    pub h: Vec<f64>,
    pub k: Vec<f64>,
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
    pub dsigma: Vec<f64>,
}

/// Principal curvatures from the forms at a point: roots of det(b − k g).
pub fn principal_curvatures(g: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> (f64, f64, f64, f64) {
    let det_g = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    let h = 0.5 * (g[1][1] * b[0][0] - 2.0 * g[0][1] * b[0][1] + g[0][0] * b[1][1]) / det_g;
    let k = (b[0][0] * b[1][1] - b[0][1] * b[0][1]) / det_g;
    let disc = (h * h - k).max(0.0).sqrt();
    (h - disc, h + disc, h, k)
}

pub fn fundamental_forms(
    im: &Immersion,
    metric: &MetricField,
) -> Result<FundamentalForms, CoreError> {
    fundamental_forms_checked(im, metric, true)
}

/// `admittance = false` is a diagnostic mode (e.g. flat-disk area checks);
/// system assembly always uses the gated variant.
pub fn fundamental_forms_checked(
    im: &Immersion,
    metric: &MetricField,
    admittance: bool,
) -> Result<FundamentalForms, CoreError> {
    let n_nodes = im.y.len();
    let mut out = FundamentalForms {
        g: Vec::with_capacity(n_nodes),
        det_g: Vec::with_capacity(n_nodes),
        b: Vec::with_capacity(n_nodes),
        v: Vec::with_capacity(n_nodes),
        n: Vec::with_capacity(n_nodes),
        h: Vec::with_capacity(n_nodes),
        k: Vec::with_capacity(n_nodes),
        k1: Vec::with_capacity(n_nodes),
        k2: Vec::with_capacity(n_nodes),
        dsigma: Vec::with_capacity(n_nodes),
    };
    for p in 0..n_nodes {
        let mut pf = point_forms::<f64>(metric, im.y[p], &im.yd[p], &im.ydd[p], None);
        // orientation per the admittance convention: H > 0
        if pf.h < 0.0 {
            pf.n = [-pf.n[0], -pf.n[1], -pf.n[2]];
            for i in 0..2 {
                for j in 0..2 {
                    pf.b[i][j] = -pf.b[i][j];
                }
            }
            pf.h = -pf.h;
        }
        if pf.det_g <= 0.0 || pf.g[0][0] <= 0.0 {
            return Err(CoreError::DegenerateImmersion(p));
        }
        let (k1, k2, h, k) = principal_curvatures(&pf.g, &pf.b);
        if h * h < k - 1e-8 * (1.0 + k.abs()) {
            return Err(CoreError::Config(format!(
                "internal inconsistency: H^2 = {} < K = {} at node {p}",
                h * h,
                k
            )));
        }
        if admittance && (k1 <= 0.0 || h <= 0.0) {
            return Err(CoreError::NotAdmitted(format!(
                "principal curvatures not strictly positive at node {p}: k1 = {k1:.3e}, k2 = {k2:.3e}, H = {h:.3e}"
            )));
        }
        out.v.push(0.5 * (pf.b[0][0] + pf.b[1][1]));
        out.dsigma.push(pf.det_g.sqrt());
        out.g.push(pf.g);
        out.det_g.push(pf.det_g);
        out.b.push(pf.b);
        out.n.push(pf.n);
        out.h.push(h);
        out.k.push(k);
        out.k1.push(k1);
        out.k2.push(k2);
    }
    Ok(out)
}

/// Deviation report of the conjugate-isothermal property b₁₁ = b₂₂ = V,
/// b₁₂ = 0.
#[derive(Clone, Debug)]
pub struct ConjugateIsothermalReport {
    pub max_off_diagonal: f64,
    pub max_diagonal_gap: f64,
    pub max_v: f64,
    pub pass: bool,
}

pub fn verify_conjugate_isothermal(forms: &FundamentalForms, tol: f64) -> ConjugateIsothermalReport {
    let mut off: f64 = 0.0;
    let mut gap: f64 = 0.0;
    let mut vmax: f64 = 0.0;
    for (b, v) in forms.b.iter().zip(forms.v.iter()) {
        off = off.max(b[0][1].abs());
        gap = gap.max((b[0][0] - b[1][1]).abs());
        vmax = vmax.max(v.abs());
    }
    ConjugateIsothermalReport {
        max_off_diagonal: off,
        max_diagonal_gap: gap,
        max_v: vmax,
        pass: off <= tol * vmax && gap <= tol * vmax,
    }
}

/// Total area by quadrature of √g.
pub fn total_area(grid: &Grid, forms: &FundamentalForms) -> f64 {
    grid.quad_weights()
        .iter()
        .zip(forms.dsigma.iter())
        .map(|(w, s)| w * s)
        .sum()
}

/// Deformation coefficients on the moving frame, plus the derived
/// displacement grid z = a¹ y_{,1} + a² y_{,2} + c n.
#[derive(Clone, Debug)]
pub struct DeformationField {
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub c: Vec<f64>,
    pub z: Vec<[f64; 3]>,
}

impl DeformationField {
    pub fn zero(n_nodes: usize) -> Self {
        DeformationField {
            a1: vec![0.0; n_nodes],
            a2: vec![0.0; n_nodes],
            c: vec![0.0; n_nodes],
            z: vec![[0.0; 3]; n_nodes],
        }
    }

    pub fn from_components(
        im: &Immersion,
        forms: &FundamentalForms,
        a1: Vec<f64>,
        a2: Vec<f64>,
        c: Vec<f64>,
    ) -> Self {
        let z = (0..im.y.len())
            .map(|p| {
                let mut z = vec3::scale(im.yd[p][0], a1[p]);
                z = vec3::add(z, vec3::scale(im.yd[p][1], a2[p]));
                vec3::add(z, vec3::scale(forms.n[p], c[p]))
            })
            .collect();
        DeformationField { a1, a2, c, z }
    }

    /// Constant ambient displacement `delta`, expressed on the frame by a
    /// pointwise 3x3 solve (so z reproduces `delta` exactly).
    pub fn translation(im: &Immersion, forms: &FundamentalForms, delta: [f64; 3]) -> Self {
        let n_nodes = im.y.len();
        let mut a1 = vec![0.0; n_nodes];
        let mut a2 = vec![0.0; n_nodes];
        let mut c = vec![0.0; n_nodes];
        for p in 0..n_nodes {
            let cols = [im.yd[p][0], im.yd[p][1], forms.n[p]];
            let m = [
                [cols[0][0], cols[1][0], cols[2][0]],
                [cols[0][1], cols[1][1], cols[2][1]],
                [cols[0][2], cols[1][2], cols[2][2]],
            ];
            let mi = inv3(&m);
            for (slot, out) in [&mut a1, &mut a2, &mut c].into_iter().enumerate() {
                out[p] = mi[slot][0] * delta[0] + mi[slot][1] * delta[1] + mi[slot][2] * delta[2];
            }
        }
        DeformationField::from_components(im, forms, a1, a2, c)
    }
}

/// Applies an accumulated displacement field: y ← y + z, with derivative
/// grids recomputed by differencing the displaced position grid.
pub fn deform_immersion(
    grid: &Grid,
    base: &Immersion,
    field: &DeformationField,
) -> Result<Immersion, CoreError> {
    assert_eq!(base.y.len(), field.z.len(), "field/grid shape mismatch");
    let y: Vec<[f64; 3]> = base
        .y
        .iter()
        .zip(field.z.iter())
        .map(|(y, z)| vec3::add(*y, *z))
        .collect();
    // base derivatives are analytic; only the displacement is differenced
    let d1 = grid.dx.apply_vec3(&field.z);
    let d2 = grid.dy.apply_vec3(&field.z);
    let d11 = grid.dx.apply_vec3(&d1);
    let d22 = grid.dy.apply_vec3(&d2);
    let d12a = grid.dy.apply_vec3(&d1);
    let d12b = grid.dx.apply_vec3(&d2);
    let n = grid.n_nodes;
    let mut yd = Vec::with_capacity(n);
    let mut ydd = Vec::with_capacity(n);
    for p in 0..n {
        yd.push([vec3::add(base.yd[p][0], d1[p]), vec3::add(base.yd[p][1], d2[p])]);
        let mixed = vec3::scale(vec3::add(d12a[p], d12b[p]), 0.5);
        ydd.push([
            vec3::add(base.ydd[p][0], d11[p]),
            vec3::add(base.ydd[p][1], mixed),
            vec3::add(base.ydd[p][2], d22[p]),
        ]);
    }
    let im = Immersion { spec: base.spec, y, yd, ydd };
    im.check_rank()?;
    Ok(im)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use rand::{Rng, SeedableRng};

    fn grid(n_r: usize, n_theta: usize) -> Grid {
        Grid::new(GridSpec { n_r, n_theta }).unwrap()
    }

    #[test]
    fn stereographic_center_is_south_pole() {
        let g = grid(8, 32);
        let im = build_immersion(&Chart::StereographicSphere { r: 1.0 }, &g).unwrap();
        let c = im.y[g.center()];
        assert!((c[0]).abs() < 1e-15 && (c[1]).abs() < 1e-15 && (c[2] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn cap_boundary_at_polar_angle_rho() {
        let g = grid(16, 32);
        let rho = std::f64::consts::FRAC_PI_4;
        let im = build_immersion(&Chart::SphericalCap { r: 1.0, rho }, &g).unwrap();
        for j in 0..g.n_theta as isize {
            let y = im.y[g.idx(g.n_r, j)];
            // polar angle from the apex (0,0,-1)
            let cosang = -y[2];
            assert!((cosang - rho.cos()).abs() < 1e-12, "{} vs {}", cosang, rho.cos());
            assert!((vec3::dot(y, y) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn chart_derivatives_match_finite_differences() {
        let chart = Chart::SphericalCap { r: 2.0, rho: 0.6 };
        let x = [0.3, -0.5];
        let (_, yd, ydd) = chart.eval(x);
        let ep = 1e-6;
        for i in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += ep;
            xm[i] -= ep;
            let (yp, ydp, _) = chart.eval(xp);
            let (ym, ydm, _) = chart.eval(xm);
            for k in 0..3 {
                let fd = (yp[k] - ym[k]) / (2.0 * ep);
                assert!((yd[i][k] - fd).abs() < 1e-8, "first deriv {i},{k}");
            }
            // second derivatives from differenced first derivatives
            for j in 0..2 {
                let slot = match (i.min(j), i.max(j)) {
                    (0, 0) => 0,
                    (0, 1) => 1,
                    _ => 2,
                };
                for k in 0..3 {
                    let fd = (ydp[j][k] - ydm[j][k]) / (2.0 * ep);
                    assert!((ydd[slot][k] - fd).abs() < 1e-7, "second deriv {i}{j},{k}");
                }
            }
        }
    }

    #[test]
    fn unit_sphere_forms_at_origin() {
        let g = grid(8, 32);
        let im = build_immersion(&Chart::StereographicSphere { r: 1.0 }, &g).unwrap();
        let metric = MetricField::euclidean();
        let forms = fundamental_forms(&im, &metric).unwrap();
        let c = g.center();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 4.0 } else { 0.0 };
                assert!((forms.g[c][i][j] - want).abs() < 1e-12);
                assert!((forms.b[c][i][j] - want).abs() < 1e-12);
            }
        }
        assert!((forms.h[c] - 1.0).abs() < 1e-12);
        assert!((forms.k[c] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unit_sphere_curvatures_and_area_density_everywhere() {
        let g = grid(12, 32);
        let im = build_immersion(&Chart::StereographicSphere { r: 1.0 }, &g).unwrap();
        let forms = fundamental_forms(&im, &MetricField::euclidean()).unwrap();
        for p in 0..g.n_nodes {
            // umbilic points: k_i = H ± sqrt(H² − K) amplifies roundoff in
            // H² − K to its square root, so expect ~1e-8, not 1e-12
            assert!((forms.k1[p] - 1.0).abs() < 1e-7, "k1 node {p}: {}", forms.k1[p]);
            assert!((forms.k2[p] - 1.0).abs() < 1e-7);
            assert!((forms.h[p] - 1.0).abs() < 1e-10);
            assert!((forms.k[p] - 1.0).abs() < 1e-10);
            let r2 = g.x1[p] * g.x1[p] + g.x2[p] * g.x2[p];
            let want = 4.0 / (1.0 + r2).powi(2);
            assert!((forms.dsigma[p] - want).abs() < 1e-10);
            // normal orthonormality
            assert!((vec3::dot(forms.n[p], forms.n[p]) - 1.0).abs() < 1e-10);
            for i in 0..2 {
                assert!(vec3::dot(forms.n[p], im.yd[p][i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn plane_rejected_by_admittance() {
        let g = grid(8, 32);
        let im = build_immersion(&Chart::CustomAnalytic { graph: vec![] }, &g).unwrap();
        let r = fundamental_forms(&im, &MetricField::euclidean());
        assert!(matches!(r, Err(CoreError::NotAdmitted(_))));
        // diagnostic mode passes and integrates the unit disk area
        let forms = fundamental_forms_checked(&im, &MetricField::euclidean(), false).unwrap();
        let area = total_area(&g, &forms);
        assert!((area - std::f64::consts::PI).abs() < 1e-10, "{area}");
    }

    #[test]
    fn paraboloid_cap_accepted() {
        let g = grid(8, 32);
        let graph = vec![
            Monomial2 { powers: [2, 0], coeff: 0.5 },
            Monomial2 { powers: [0, 2], coeff: 0.5 },
        ];
        let im = build_immersion(&Chart::CustomAnalytic { graph }, &g).unwrap();
        let forms = fundamental_forms(&im, &MetricField::euclidean()).unwrap();
        assert!(forms.k.iter().all(|&k| k > 0.0));
    }

    #[test]
    fn principal_curvature_examples() {
        let (k1, k2, h, k) = principal_curvatures(&[[1.0, 0.0], [0.0, 1.0]], &[[2.0, 0.0], [0.0, 3.0]]);
        assert_eq!((k1, k2, h, k), (2.0, 3.0, 2.5, 6.0));
        let (k1, k2, h, k) = principal_curvatures(&[[2.0, 0.0], [0.0, 2.0]], &[[2.0, 0.0], [0.0, 2.0]]);
        assert_eq!((k1, k2, h, k), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn principal_curvatures_match_generalized_eigensolve() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            // random SPD g via A^T A + I/2, random symmetric b
            let mut a = [[0.0_f64; 2]; 2];
            for row in a.iter_mut() {
                for v in row.iter_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
            }
            let g = [
                [a[0][0] * a[0][0] + a[1][0] * a[1][0] + 0.5, a[0][0] * a[0][1] + a[1][0] * a[1][1]],
                [a[0][0] * a[0][1] + a[1][0] * a[1][1], a[0][1] * a[0][1] + a[1][1] * a[1][1] + 0.5],
            ];
            let b = {
                let off = rng.gen_range(-1.0..1.0);
                [[rng.gen_range(-1.0..1.0), off], [off, rng.gen_range(-1.0..1.0)]]
            };
            let (k1, k2, _, _) = principal_curvatures(&g, &b);
            // oracle: Cholesky-whitened symmetric eigenproblem L^{-1} b L^{-T}
            let l11 = g[0][0].sqrt();
            let l21 = g[0][1] / l11;
            let l22 = (g[1][1] - l21 * l21).sqrt();
            let w11 = b[0][0] / (l11 * l11);
            let w12 = (b[0][1] / l11 - l21 * w11) / l22;
            let w22 = (b[1][1] - 2.0 * l21 * b[0][1] / l11 + l21 * l21 * b[0][0] / (l11 * l11))
                / (l22 * l22);
            let tr = w11 + w22;
            let disc = ((w11 - w22) * (w11 - w22) / 4.0 + w12 * w12).sqrt();
            let e1 = tr / 2.0 - disc;
            let e2 = tr / 2.0 + disc;
            assert!((k1 - e1).abs() < 1e-10, "{k1} vs {e1}");
            assert!((k2 - e2).abs() < 1e-10);
        }
    }

    #[test]
    fn sphere_is_conjugate_isothermal_polar_cap_is_not() {
        let g = grid(10, 32);
        let im = build_immersion(&Chart::StereographicSphere { r: 1.0 }, &g).unwrap();
        let forms = fundamental_forms(&im, &MetricField::euclidean()).unwrap();
        let rep = verify_conjugate_isothermal(&forms, 1e-10);
        assert!(rep.pass, "off = {:.3e}, gap = {:.3e}", rep.max_off_diagonal, rep.max_diagonal_gap);
        // an ellipsoid-like graph chart: b11 != b22
        let graph = vec![
            Monomial2 { powers: [2, 0], coeff: 0.5 },
            Monomial2 { powers: [0, 2], coeff: 0.25 },
            Monomial2 { powers: [4, 0], coeff: 0.01 },
        ];
        let im2 = build_immersion(&Chart::CustomAnalytic { graph }, &g).unwrap();
        let forms2 = fundamental_forms(&im2, &MetricField::euclidean()).unwrap();
        let rep2 = verify_conjugate_isothermal(&forms2, 1e-6);
        assert!(!rep2.pass);
    }

    #[test]
    fn translation_leaves_forms_invariant_euclidean() {
        let g = grid(10, 32);
        let im = build_immersion(&Chart::SphericalCap { r: 1.0, rho: 0.7 }, &g).unwrap();
        let metric = MetricField::euclidean();
        let forms = fundamental_forms(&im, &metric).unwrap();
        let field = DeformationField::translation(&im, &forms, [0.12, -0.07, 0.3]);
        // z must reproduce the constant delta exactly
        for z in &field.z {
            assert!((z[0] - 0.12).abs() < 1e-12 && (z[1] + 0.07).abs() < 1e-12 && (z[2] - 0.3).abs() < 1e-12);
        }
        let moved = deform_immersion(&g, &im, &field).unwrap();
        let forms2 = fundamental_forms(&moved, &metric).unwrap();
        for p in 0..g.n_nodes {
            assert!((forms.h[p] - forms2.h[p]).abs() < 1e-9, "H drift {}", (forms.h[p] - forms2.h[p]).abs());
            assert!((forms.k[p] - forms2.k[p]).abs() < 1e-9);
            for i in 0..2 {
                for j in 0..2 {
                    assert!((forms.g[p][i][j] - forms2.g[p][i][j]).abs() < 1e-9);
                    assert!((forms.b[p][i][j] - forms2.b[p][i][j]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn homothety_rescales_sphere_curvature() {
        let g = grid(16, 32);
        let im = build_immersion(&Chart::SphericalCap { r: 1.0, rho: 0.7 }, &g).unwrap();
        let metric = MetricField::euclidean();
        let forms = fundamental_forms(&im, &metric).unwrap();
        let eps = 0.05;
        let n = g.n_nodes;
        let field = DeformationField::from_components(
            &im,
            &forms,
            vec![0.0; n],
            vec![0.0; n],
            vec![eps; n],
        );
        let moved = deform_immersion(&g, &im, &field).unwrap();
        let forms2 = fundamental_forms(&moved, &metric).unwrap();
        // the H > 0 orientation makes the sphere normal point inward, so a
        // positive normal displacement shrinks the radius to R - eps
        let want = 1.0 / (1.0 - eps);
        for p in 0..n {
            assert!((forms2.h[p] - want).abs() < 1e-6, "H = {} vs {}", forms2.h[p], want);
        }
    }

    #[test]
    fn zero_field_is_identity() {
        let g = grid(8, 32);
        let im = build_immersion(&Chart::StereographicSphere { r: 1.0 }, &g).unwrap();
        let field = DeformationField::zero(g.n_nodes);
        let moved = deform_immersion(&g, &im, &field).unwrap();
        for p in 0..g.n_nodes {
            assert_eq!(im.y[p], moved.y[p]);
            assert_eq!(im.yd[p], moved.yd[p]);
        }
    }

    #[test]
    fn low_order_forms_converge_in_max_norm() {
        let errs: Vec<f64> = [(12usize, 48usize), (24, 96)]
            .iter()
            .map(|&(nr, nt)| {
                let g = grid(nr, nt);
                let im = build_immersion(&Chart::StereographicSphere { r: 1.0 }, &g).unwrap();
                let fd = immersion_from_positions_low_order(&g, im.y.clone()).unwrap();
                let forms = fundamental_forms_checked(&fd, &MetricField::euclidean(), false).unwrap();
                forms.h.iter().map(|h| (h - 1.0).abs()).fold(0.0f64, f64::max)
            })
            .collect();
        let order = (errs[0] / errs[1]).log2();
        assert!(order >= 1.9, "order = {order:.2}, errs = {errs:?}");
    }
}
