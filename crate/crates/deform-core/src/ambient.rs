//! Ambient Riemannian 3-space: metric families, Christoffel symbols, and
//! parallel transport along polyline paths.
//!
//! Everything is generic over the scalar type so that transport can be
//! differentiated through when it appears inside the G-deformation residual.

use crate::dual::{vec3, Real};
use crate::error::CoreError;

/// Radius of the working ball; paths and samples outside are rejected.
pub const WORKING_RADIUS: f64 = 8.0;

/// Default number of integrator substeps per path segment.
pub const TRANSPORT_SUBSTEPS: usize = 32;

/// One polynomial metric component: monomial powers of (y¹, y², y³) and a
/// coefficient, total degree at most 4.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct Monomial {
    pub powers: [u8; 3],
    pub coeff: f64,
}

/// Coefficient tables for the six independent components, ordered
/// (11, 12, 13, 22, 23, 33).
pub type PolyTables = [Vec<Monomial>; 6];

#[derive(Clone, Debug)]
pub enum MetricKind {
    Euclidean,
    ConstantCurvature { kappa: f64 },
    CustomPolynomial { tables: PolyTables },
}

#[derive(Clone, Debug)]
pub struct MetricField {
    pub kind: MetricKind,
    /// Declared cap on sampled |a|, |da|, |dda| over the working region.
    pub m0: f64,
}

fn sym_index(alpha: usize, beta: usize) -> usize {
    // (11,12,13,22,23,33)
    const MAP: [[usize; 3]; 3] = [[0, 1, 2], [1, 3, 4], [2, 4, 5]];
    MAP[alpha][beta]
}

fn mat3_det<T: Real>(a: &[[T; 3]; 3]) -> T {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Inverse of a 3x3 via the adjugate; caller guarantees invertibility.
fn mat3_inv<T: Real>(a: &[[T; 3]; 3]) -> [[T; 3]; 3] {
    let det = mat3_det(a);
    let inv_det = det.recip();
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = match i {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let (c0, c1) = match j {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let minor = a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0];
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            out[j][i] = minor.scale(sign) * inv_det;
        }
    }
    out
}

impl MetricField {
    pub fn euclidean() -> Self {
        MetricField { kind: MetricKind::Euclidean, m0: 2.0 }
    }

    pub fn constant_curvature(kappa: f64) -> Self {
        // conformal factor and its first two derivatives stay modest on the
        // working ball for |kappa| of order one
        let m0 = 10.0 * (1.0 + kappa.abs()).powi(2);
        MetricField { kind: MetricKind::ConstantCurvature { kappa }, m0 }
    }

    /// Builds a polynomial metric, validating symmetry is implicit (six
    /// independent components) and positive-definiteness on a 17^3 lattice
    /// over the working ball.
    pub fn custom_polynomial(tables: PolyTables, m0: f64) -> Result<Self, CoreError> {
        for comp in &tables {
            for m in comp {
                let deg = m.powers[0] + m.powers[1] + m.powers[2];
                if deg > 4 {
                    return Err(CoreError::Config(format!(
                        "polynomial metric monomial degree {} exceeds 4",
                        deg
                    )));
                }
            }
        }
        let metric = MetricField { kind: MetricKind::CustomPolynomial { tables }, m0 };
        metric.check_positive_definite_lattice()?;
        Ok(metric)
    }

    pub fn is_euclidean(&self) -> bool {
        matches!(self.kind, MetricKind::Euclidean)
    }

    fn check_positive_definite_lattice(&self) -> Result<(), CoreError> {
        for y in lattice(17) {
            let a = self.at::<f64>(vec3::lift(y));
            if !is_spd(&a) {
                return Err(CoreError::MetricNotPositiveDefinite(y[0], y[1], y[2]));
            }
        }
        Ok(())
    }

    /// ã_αβ(y) as a symmetric 3x3 matrix.
    pub fn at<T: Real>(&self, y: [T; 3]) -> [[T; 3]; 3] {
        match &self.kind {
            MetricKind::Euclidean => identity(),
            MetricKind::ConstantCurvature { kappa } => {
                let phi = T::one() + vec3::dot(y, y).scale(kappa / 4.0);
                let f = (phi * phi).recip();
                let mut a = [[T::zero(); 3]; 3];
                for i in 0..3 {
                    a[i][i] = f;
                }
                a
            }
            MetricKind::CustomPolynomial { tables } => {
                let mut a = [[T::zero(); 3]; 3];
                for alpha in 0..3 {
                    for beta in alpha..3 {
                        let v = eval_poly(&tables[sym_index(alpha, beta)], y, [0, 0, 0]);
                        a[alpha][beta] = v;
                        a[beta][alpha] = v;
                    }
                }
                a
            }
        }
    }

    /// First partials: `d[gamma][alpha][beta]` = ∂_γ ã_αβ.
    pub fn first_derivatives<T: Real>(&self, y: [T; 3]) -> [[[T; 3]; 3]; 3] {
        let mut d = [[[T::zero(); 3]; 3]; 3];
        match &self.kind {
            MetricKind::Euclidean => {}
            MetricKind::ConstantCurvature { kappa } => {
                let phi = T::one() + vec3::dot(y, y).scale(kappa / 4.0);
                let c = (phi * phi * phi).recip().scale(-2.0);
                for gamma in 0..3 {
                    let dphi = y[gamma].scale(kappa / 2.0);
                    let v = c * dphi;
                    for i in 0..3 {
                        d[gamma][i][i] = v;
                    }
                }
            }
            MetricKind::CustomPolynomial { tables } => {
                for gamma in 0..3 {
                    let mut shift = [0u8; 3];
                    shift[gamma] = 1;
                    for alpha in 0..3 {
                        for beta in alpha..3 {
                            let v = eval_poly(&tables[sym_index(alpha, beta)], y, shift);
                            d[gamma][alpha][beta] = v;
                            d[gamma][beta][alpha] = v;
                        }
                    }
                }
            }
        }
        d
    }

    /// Second partials: `dd[gamma][delta][alpha][beta]` = ∂_γ ∂_δ ã_αβ.
    pub fn second_derivatives(&self, y: [f64; 3]) -> [[[[f64; 3]; 3]; 3]; 3] {
        let mut dd = [[[[0.0; 3]; 3]; 3]; 3];
        match &self.kind {
            MetricKind::Euclidean => {}
            MetricKind::ConstantCurvature { kappa } => {
                let phi = 1.0 + kappa / 4.0 * vec3::dot(y, y);
                for gamma in 0..3 {
                    for delta in 0..3 {
                        let dphi_g = kappa / 2.0 * y[gamma];
                        let dphi_d = kappa / 2.0 * y[delta];
                        let ddphi = if gamma == delta { kappa / 2.0 } else { 0.0 };
                        let v = 6.0 / phi.powi(4) * dphi_g * dphi_d - 2.0 / phi.powi(3) * ddphi;
                        for i in 0..3 {
                            dd[gamma][delta][i][i] = v;
                        }
                    }
                }
            }
            MetricKind::CustomPolynomial { tables } => {
                for gamma in 0..3 {
                    for delta in 0..3 {
                        let mut shift = [0u8; 3];
                        shift[gamma] += 1;
                        shift[delta] += 1;
                        for alpha in 0..3 {
                            for beta in alpha..3 {
                                let v =
                                    eval_poly(&tables[sym_index(alpha, beta)], vec3::lift(y), shift);
                                dd[gamma][delta][alpha][beta] = v;
                                dd[gamma][delta][beta][alpha] = v;
                            }
                        }
                    }
                }
            }
        }
        dd
    }

    /// Levi-Civita connection coefficients `gamma[alpha][beta][gamma]` = Γ^α_{βγ}.
    pub fn christoffel<T: Real>(&self, y: [T; 3]) -> [[[T; 3]; 3]; 3] {
        if self.is_euclidean() {
            return [[[T::zero(); 3]; 3]; 3];
        }
        let a = self.at(y);
        let ainv = mat3_inv(&a);
        let d = self.first_derivatives(y);
        let mut out = [[[T::zero(); 3]; 3]; 3];
        for alpha in 0..3 {
            for beta in 0..3 {
                for gamma in beta..3 {
                    let mut acc = T::zero();
                    for delta in 0..3 {
                        let term = d[beta][delta][gamma] + d[gamma][delta][beta] - d[delta][beta][gamma];
                        acc += ainv[alpha][delta] * term;
                    }
                    let v = acc.scale(0.5);
                    out[alpha][beta][gamma] = v;
                    out[alpha][gamma][beta] = v;
                }
            }
        }
        out
    }

    /// Parallel transport of `v0` along the polyline `path` (classical
    /// 4th-order one-step integration, `substeps` per segment).
    pub fn parallel_transport<T: Real>(
        &self,
        path: &[[T; 3]],
        v0: [T; 3],
        substeps: usize,
    ) -> Result<[T; 3], CoreError> {
        if path.len() < 2 {
            return Ok(v0);
        }
        for p in path {
            let r2 = vec3::dot(*p, *p).primal();
            if r2 > WORKING_RADIUS * WORKING_RADIUS {
                return Err(CoreError::OutsideWorkingRegion(WORKING_RADIUS));
            }
        }
        if self.is_euclidean() {
            return Ok(v0);
        }
        let mut v = v0;
        for seg in path.windows(2) {
            let dir = vec3::sub(seg[1], seg[0]);
            if vec3::dot(dir, dir).primal() == 0.0 {
                continue;
            }
            let dt = 1.0 / substeps as f64;
            let rate = |tau: f64, v: [T; 3]| -> [T; 3] {
                let u = vec3::add(seg[0], vec3::scale(dir, T::lit(tau)));
                let gamma = self.christoffel(u);
                let mut dv = [T::zero(); 3];
                for alpha in 0..3 {
                    let mut acc = T::zero();
                    for beta in 0..3 {
                        for g in 0..3 {
                            acc += gamma[alpha][beta][g] * dir[beta] * v[g];
                        }
                    }
                    dv[alpha] = -acc;
                }
                dv
            };
            for s in 0..substeps {
                let t0 = s as f64 * dt;
                let k1 = rate(t0, v);
                let k2 = rate(t0 + dt / 2.0, axpy(v, k1, dt / 2.0));
                let k3 = rate(t0 + dt / 2.0, axpy(v, k2, dt / 2.0));
                let k4 = rate(t0 + dt, axpy(v, k3, dt));
                for i in 0..3 {
                    v[i] += (k1[i] + (k2[i] + k3[i]).scale(2.0) + k4[i]).scale(dt / 6.0);
                }
            }
        }
        Ok(v)
    }

    /// Samples the working ball on a 17^3 lattice and asserts the M0 caps.
    pub fn verify_bounds(&self) -> Result<(), CoreError> {
        let mut max_a: f64 = 0.0;
        let mut max_d: f64 = 0.0;
        let mut max_dd: f64 = 0.0;
        for y in lattice(17) {
            let a = self.at::<f64>(y);
            if !is_spd(&a) {
                return Err(CoreError::MetricNotPositiveDefinite(y[0], y[1], y[2]));
            }
            for row in &a {
                for v in row {
                    max_a = max_a.max(v.abs());
                }
            }
            let d = self.first_derivatives::<f64>(y);
            for t in &d {
                for row in t {
                    for v in row {
                        max_d = max_d.max(v.abs());
                    }
                }
            }
            let dd = self.second_derivatives(y);
            for t in &dd {
                for t2 in t {
                    for row in t2 {
                        for v in row {
                            max_dd = max_dd.max(v.abs());
                        }
                    }
                }
            }
        }
        for (q, v) in [("|a|", max_a), ("|da|", max_d), ("|dda|", max_dd)] {
            if v > self.m0 {
                return Err(CoreError::MetricBound { quantity: q, value: v, m0: self.m0 });
            }
        }
        Ok(())
    }
}

fn identity<T: Real>() -> [[T; 3]; 3] {
    let mut a = [[T::zero(); 3]; 3];
    for i in 0..3 {
        a[i][i] = T::one();
    }
    a
}

fn axpy<T: Real>(v: [T; 3], k: [T; 3], s: f64) -> [T; 3] {
    [v[0] + k[0].scale(s), v[1] + k[1].scale(s), v[2] + k[2].scale(s)]
}

fn is_spd(a: &[[f64; 3]; 3]) -> bool {
    // Sylvester criterion on the symmetric part
    let m11 = a[0][0];
    let m22 = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let m33 = mat3_det(a);
    m11 > 0.0 && m22 > 0.0 && m33 > 0.0
}

/// Differentiates `table` by the multi-index `shift`, then evaluates at `y`.
fn eval_poly<T: Real>(table: &[Monomial], y: [T; 3], shift: [u8; 3]) -> T {
    let mut acc = T::zero();
    'mono: for m in table {
        let mut coeff = m.coeff;
        let mut pw = [0u8; 3];
        for k in 0..3 {
            if m.powers[k] < shift[k] {
                continue 'mono;
            }
            // falling factorial from repeated differentiation
            for s in 0..shift[k] {
                coeff *= (m.powers[k] - s) as f64;
            }
            pw[k] = m.powers[k] - shift[k];
        }
        let mut term = T::lit(coeff);
        for k in 0..3 {
            for _ in 0..pw[k] {
                term *= y[k];
            }
        }
        acc += term;
    }
    acc
}

fn lattice(n: usize) -> impl Iterator<Item = [f64; 3]> {
    let step = 2.0 * WORKING_RADIUS / (n - 1) as f64;
    let n = n as isize;
    (0..n).flat_map(move |i| {
        (0..n).flat_map(move |j| {
            (0..n).filter_map(move |k| {
                let y = [
                    -WORKING_RADIUS + i as f64 * step,
                    -WORKING_RADIUS + j as f64 * step,
                    -WORKING_RADIUS + k as f64 * step,
                ];
                let r2 = y[0] * y[0] + y[1] * y[1] + y[2] * y[2];
                (r2 <= WORKING_RADIUS * WORKING_RADIUS).then_some(y)
            })
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::vec3::dot;

    #[test]
    fn euclidean_is_identity() {
        let m = MetricField::euclidean();
        let a = m.at::<f64>([1.0, 2.0, 3.0]);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(a[i][j], if i == j { 1.0 } else { 0.0 });
            }
        }
        assert!(m.christoffel::<f64>([1.0, 2.0, 3.0]).iter().flatten().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn conformal_values() {
        let m = MetricField::constant_curvature(1.0);
        let a0 = m.at::<f64>([0.0, 0.0, 0.0]);
        assert!((a0[0][0] - 1.0).abs() < 1e-15);
        let a2 = m.at::<f64>([2.0, 0.0, 0.0]);
        assert!((a2[0][0] - 0.25).abs() < 1e-15, "{}", a2[0][0]);
        assert!((a2[1][1] - 0.25).abs() < 1e-15);
        assert_eq!(a2[0][1], 0.0);
        // gradient vanishes at origin
        let d = m.first_derivatives::<f64>([0.0, 0.0, 0.0]);
        assert!(d.iter().flatten().flatten().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn polynomial_derivative_example() {
        // a_11 = 1 + y1*y2; the other diagonal entries stay 1
        let mut tables: PolyTables = Default::default();
        tables[0] = vec![
            Monomial { powers: [0, 0, 0], coeff: 1.0 },
            Monomial { powers: [1, 1, 0], coeff: 1.0 / 100.0 },
        ];
        tables[3] = vec![Monomial { powers: [0, 0, 0], coeff: 1.0 }];
        tables[5] = vec![Monomial { powers: [0, 0, 0], coeff: 1.0 }];
        let m = MetricField::custom_polynomial(tables, 10.0).unwrap();
        let d = m.first_derivatives::<f64>([0.0, 1.0, 0.0]);
        assert!((d[0][0][0] - 0.01).abs() < 1e-15, "{}", d[0][0][0]);
    }

    #[test]
    fn christoffel_matches_finite_difference_of_levi_civita() {
        let m = MetricField::constant_curvature(1.0);
        let y = [2.0, 0.0, 0.0];
        let gamma = m.christoffel::<f64>(y);
        // independent FD assembly of the Levi-Civita formula
        let eps = 1e-6;
        let mut d_fd = [[[0.0; 3]; 3]; 3];
        for g in 0..3 {
            let mut yp = y;
            let mut ym = y;
            yp[g] += eps;
            ym[g] -= eps;
            let ap = m.at::<f64>(yp);
            let am = m.at::<f64>(ym);
            for i in 0..3 {
                for j in 0..3 {
                    d_fd[g][i][j] = (ap[i][j] - am[i][j]) / (2.0 * eps);
                }
            }
        }
        let a = m.at::<f64>(y);
        let ai = mat3_inv(&a);
        for alpha in 0..3 {
            for beta in 0..3 {
                for g in 0..3 {
                    let mut want = 0.0;
                    for dl in 0..3 {
                        want += 0.5
                            * ai[alpha][dl]
                            * (d_fd[beta][dl][g] + d_fd[g][dl][beta] - d_fd[dl][beta][g]);
                    }
                    assert!(
                        (gamma[alpha][beta][g] - want).abs() < 1e-8,
                        "Gamma^{alpha}_{beta}{g}: {} vs {}",
                        gamma[alpha][beta][g],
                        want
                    );
                }
            }
        }
    }

    #[test]
    fn transport_identity_in_flat_space() {
        let m = MetricField::euclidean();
        let path = [[0.0, 0.0, 0.0], [1.0, 2.0, 0.5]];
        let v = m.parallel_transport(&path, [1.0, 0.0, 0.0], 4).unwrap();
        assert_eq!(v, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn transport_conserves_ambient_norm_and_reverses() {
        let m = MetricField::constant_curvature(1.0);
        let path = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let v0 = [0.0, 1.0, 0.0];
        let v1 = m.parallel_transport(&path, v0, TRANSPORT_SUBSTEPS).unwrap();
        let norm = |y: [f64; 3], v: [f64; 3]| {
            let a = m.at::<f64>(y);
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += a[i][j] * v[i] * v[j];
                }
            }
            s
        };
        let n0 = norm(path[0], v0);
        let n1 = norm(path[1], v1);
        assert!((n1 - n0).abs() <= 1e-8, "norm drift {}", (n1 - n0).abs());
        // reverse
        let back = [[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let v2 = m.parallel_transport(&back, v1, TRANSPORT_SUBSTEPS).unwrap();
        let err = ((v2[0] - v0[0]).powi(2) + (v2[1] - v0[1]).powi(2) + (v2[2] - v0[2]).powi(2)).sqrt();
        assert!(err <= 1e-6, "reversal error {err}");
        // refined integration agrees to 1e-6 (coarse vs high-resolution)
        let v_fine = m.parallel_transport(&path, v0, 1024).unwrap();
        let d = ((v1[0] - v_fine[0]).powi(2) + (v1[1] - v_fine[1]).powi(2) + (v1[2] - v_fine[2]).powi(2))
            .sqrt();
        assert!(d <= 1e-6, "coarse vs fine {d}");
    }

    #[test]
    fn zero_length_path_returns_input() {
        let m = MetricField::constant_curvature(1.0);
        let v = m.parallel_transport(&[[0.5, 0.5, 0.0]], [1.0, 2.0, 3.0], 8).unwrap();
        assert_eq!(v, [1.0, 2.0, 3.0]);
    }

    #[test]
    fn path_outside_working_region_rejected() {
        let m = MetricField::constant_curvature(1.0);
        let r = m.parallel_transport(&[[0.0, 0.0, 0.0], [9.0, 0.0, 0.0]], [1.0, 0.0, 0.0], 8);
        assert!(r.is_err());
    }

    #[test]
    fn non_spd_polynomial_rejected() {
        let mut tables: PolyTables = Default::default();
        // a_11 = 1 - y1^2 / 4 goes negative inside the ball
        tables[0] = vec![
            Monomial { powers: [0, 0, 0], coeff: 1.0 },
            Monomial { powers: [2, 0, 0], coeff: -0.25 },
        ];
        tables[3] = vec![Monomial { powers: [0, 0, 0], coeff: 1.0 }];
        tables[5] = vec![Monomial { powers: [0, 0, 0], coeff: 1.0 }];
        assert!(MetricField::custom_polynomial(tables, 10.0).is_err());
    }

    #[test]
    fn verify_bounds_passes_for_builtin_families() {
        MetricField::euclidean().verify_bounds().unwrap();
        MetricField::constant_curvature(1.0).verify_bounds().unwrap();
    }

    #[test]
    fn dual_transport_differentiates() {
        use crate::dual::Dual;
        // derivative of transported vector w.r.t. endpoint position
        let m = MetricField::constant_curvature(1.0);
        let ep = 1e-6;
        let f = |t: f64| {
            m.parallel_transport(&[[0.0, 0.0, 0.0], [1.0 + t, 0.0, 0.0]], [0.0, 1.0, 0.0], 16)
                .unwrap()[1]
        };
        let fd = (f(ep) - f(-ep)) / (2.0 * ep);
        let end: [Dual<1>; 1 * 3] = [Dual::seeded(1.0, 0), Dual::constant(0.0), Dual::constant(0.0)];
        let path = [[Dual::constant(0.0); 3], end];
        let v = m
            .parallel_transport(&path, [Dual::constant(0.0), Dual::constant(1.0), Dual::constant(0.0)], 16)
            .unwrap();
        assert!((v[1].d[0] - fd).abs() < 1e-6, "{} vs {}", v[1].d[0], fd);
        let _ = dot(v, v);
    }
}
