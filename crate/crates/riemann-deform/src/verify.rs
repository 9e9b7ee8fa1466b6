//! The `verify` command: a quick, self-contained invariant suite over the
//! core pipeline, printed as a pass/fail table.

use deform_core::ambient::MetricField;
use deform_core::grid::{Grid, GridSpec};
use deform_core::linearize::{
    assemble_jacobian, assemble_linear_system, boundary_coefficients, smooth_random_direction,
    DeformationKind, ResidualCtx,
};
use deform_core::rhsolver::{compute_index, RHSystem, DEFAULT_TAU_KERNEL};
use deform_core::surface::{
    build_immersion, fundamental_forms, immersion_from_positions_low_order, total_area, Chart,
    DeformationField,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|e| e * e).sum::<f64>().sqrt()
}

pub fn run_suite(seed: u64) -> Vec<Check> {
    let mut checks = Vec::new();

    // boundary index winding
    {
        let mut ok = true;
        for k in [-2i64, -1, 0, 1, 2, 3] {
            let lambda: Vec<[f64; 2]> = (0..64)
                .map(|j| {
                    let th = 2.0 * PI * j as f64 / 64.0;
                    [(k as f64 * th).cos(), (k as f64 * th).sin()]
                })
                .collect();
            ok &= matches!(compute_index(&lambda), Ok(got) if got == k);
        }
        checks.push(Check {
            name: "boundary index winding",
            pass: ok,
            detail: "windings -2..3 at 64 samples".into(),
        });
    }

    // holomorphic kernel counts on a small grid
    {
        let grid = Grid::new(GridSpec { n_r: 12, n_theta: 48 }).unwrap();
        let mut ok = true;
        let mut detail = String::new();
        for (n, expect) in [(0i64, 1usize), (1, 3)] {
            let dim = RHSystem::holomorphic_calibration(&grid, n, None, DEFAULT_TAU_KERNEL)
                .solve()
                .map(|s| s.kernel_dim);
            ok &= matches!(dim, Ok(d) if d == expect);
            detail.push_str(&format!("n={n}:{dim:?} "));
        }
        checks.push(Check { name: "holomorphic kernel counts", pass: ok, detail });
    }

    // curvature oracle convergence and sphere area
    {
        let metric = MetricField::euclidean();
        let err = |spec: GridSpec| {
            let grid = Grid::new(spec).unwrap();
            let exact = build_immersion(&Chart::StereographicSphere { r: 1.0 }, &grid).unwrap();
            // low-order differenced pipeline: analytic derivatives carry no
            // measurable discretization error
            let im = immersion_from_positions_low_order(&grid, exact.y).unwrap();
            let forms = fundamental_forms(&im, &metric).unwrap();
            let eh = forms.h.iter().map(|h| (h - 1.0).abs()).fold(0.0f64, f64::max);
            let grid16 = grid;
            (eh, 2.0 * total_area(&grid16, &forms))
        };
        let (e1, _) = err(GridSpec { n_r: 8, n_theta: 32 });
        let (e2, area) = err(GridSpec { n_r: 16, n_theta: 64 });
        let order = (e1 / e2).log2();
        let area_err = (area - 4.0 * PI).abs();
        checks.push(Check {
            name: "curvature oracle",
            pass: order >= 1.9 && area_err <= 5e-3,
            detail: format!("order {order:.2}, area 4π{:+.1e}", area - 4.0 * PI),
        });
    }

    // translation fields leave no transport residual
    {
        let grid = Grid::new(GridSpec { n_r: 16, n_theta: 64 }).unwrap();
        let metric = MetricField::euclidean();
        let im = build_immersion(&Chart::StereographicSphere { r: 1.0 }, &grid).unwrap();
        let forms = fundamental_forms(&im, &metric).unwrap();
        let ctx = ResidualCtx::new(&grid, &metric, &im, &forms);
        let field = DeformationField::translation(&im, &forms, [1e-3, -2e-3, 1.5e-3]);
        let r = ctx.residual(DeformationKind::H, &field.a1, &field.a2, &field.c);
        let worst = r
            .rg1
            .iter()
            .chain(r.rg2.iter())
            .map(|v| v.abs())
            .fold(0.0f64, f64::max);
        checks.push(Check {
            name: "translation transport residual",
            pass: worst <= 1e-9,
            detail: format!("max |residual| {worst:.1e}"),
        });
    }

    // linearization matches central differences
    {
        let grid = Grid::new(GridSpec { n_r: 12, n_theta: 48 }).unwrap();
        let metric = MetricField::euclidean();
        let im = build_immersion(&Chart::SphericalCap { r: 1.0, rho: PI / 4.0 }, &grid).unwrap();
        let forms = fundamental_forms(&im, &metric).unwrap();
        let ctx = ResidualCtx::new(&grid, &metric, &im, &forms);
        let n = grid.n_nodes;
        let l = assemble_jacobian(&ctx, DeformationKind::H);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..3 {
            let d = smooth_random_direction(&grid, &mut rng);
            let eps = 1e-4;
            let eval = |s: f64| {
                let a1: Vec<f64> = d[..n].iter().map(|v| s * v).collect();
                let a2: Vec<f64> = d[n..2 * n].iter().map(|v| s * v).collect();
                let c: Vec<f64> = d[2 * n..].iter().map(|v| s * v).collect();
                let r = ctx.residual(DeformationKind::H, &a1, &a2, &c);
                let mut out = r.rg1;
                out.extend(r.rg2);
                out.extend(r.rinv);
                out
            };
            let rp = eval(eps);
            let rm = eval(-eps);
            let fd: Vec<f64> =
                rp.iter().zip(rm.iter()).map(|(p, m)| (p - m) / (2.0 * eps)).collect();
            let mut ld = vec![0.0; 3 * n];
            l.apply_f64(&d, &mut ld);
            let diff: Vec<f64> = fd.iter().zip(ld.iter()).map(|(a, b)| a - b).collect();
            worst = worst.max(norm(&diff) / norm(&ld));
        }
        checks.push(Check {
            name: "linearization vs central differences",
            pass: worst <= 1e-6,
            detail: format!("worst relative error {worst:.1e}"),
        });
    }

    // parallel transport preserves metric norms in the curved ambient
    {
        let curved = MetricField::constant_curvature(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let y0: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.2..0.2));
            let dir: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let path: Vec<[f64; 3]> = (0..=16)
                .map(|i| {
                    let t = 0.1 * i as f64 / 16.0;
                    std::array::from_fn(|s| y0[s] + t * dir[s])
                })
                .collect();
            let v0: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let v1 = curved.parallel_transport(&path, v0, 32).unwrap();
            let sq = |g: [[f64; 3]; 3], v: [f64; 3]| -> f64 {
                let mut s = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        s += g[i][j] * v[i] * v[j];
                    }
                }
                s
            };
            let n0 = sq(curved.at(path[0]), v0).sqrt();
            let n1 = sq(curved.at(*path.last().unwrap()), v1).sqrt();
            worst = worst.max((n1 - n0).abs() / n0);
        }
        checks.push(Check {
            name: "transport norm conservation",
            pass: worst <= 1e-8,
            detail: format!("worst relative drift {worst:.1e}"),
        });
    }

    // constrained dimension law on a small cap
    {
        let grid = Grid::new(GridSpec { n_r: 12, n_theta: 48 }).unwrap();
        let metric = MetricField::euclidean();
        let im = build_immersion(&Chart::SphericalCap { r: 1.0, rho: PI / 4.0 }, &grid).unwrap();
        let forms = fundamental_forms(&im, &metric).unwrap();
        let ctx = ResidualCtx::new(&grid, &metric, &im, &forms);
        let bc =
            boundary_coefficients(&grid, &forms, &|th: f64| [th.cos(), -th.sin()], &|_| 0.0)
                .unwrap();
        let dim = assemble_linear_system(&ctx, DeformationKind::H, &bc, Some(grid.center()))
            .and_then(|sys| RHSystem::from_linear_system(&grid, &sys, DEFAULT_TAU_KERNEL).solve())
            .map(|s| s.kernel_dim);
        checks.push(Check {
            name: "constrained cap kernel",
            pass: matches!(dim, Ok(1)),
            detail: format!("index +1 with fixed point: dim {dim:?}"),
        });
    }

    checks
}
