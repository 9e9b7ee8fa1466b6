use deform_core::ambient::MetricField;
use deform_core::grid::{Grid, GridSpec};
use deform_core::linearize::{
    assemble_linear_system, boundary_coefficients, DeformationKind, ResidualCtx,
};
use deform_core::rhsolver::{RHSystem, DEFAULT_TAU_KERNEL};
use deform_core::surface::{build_immersion, fundamental_forms, Chart};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn cgls(sys: &RHSystem, iters: usize, tag: &str) {
    let m = &sys.m;
    let n = sys.n_cols;
    let b = &sys.rhs;
    let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    let mut r = b.clone();
    let mut s = vec![0.0; n];
    m.apply_transpose_f64(&r, &mut s);
    let mut p = s.clone();
    let mut gamma: f64 = s.iter().map(|v| v * v).sum();
    let mut mp = vec![0.0; m.nrows];
    for it in 1..=iters {
        m.apply_f64(&p, &mut mp);
        let alpha = gamma / mp.iter().map(|v| v * v).sum::<f64>();
        for i in 0..n {
            x[i] += alpha * p[i];
        }
        for i in 0..m.nrows {
            r[i] -= alpha * mp[i];
        }
        m.apply_transpose_f64(&r, &mut s);
        let gamma_new: f64 = s.iter().map(|v| v * v).sum();
        let beta = gamma_new / gamma;
        gamma = gamma_new;
        for i in 0..n {
            p[i] = s[i] + beta * p[i];
        }
        if it <= 10 || it % 25 == 0 {
            let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            println!("{tag} it {it:4}: rel_res {:.3e}  |x| {:.3e}", rn / bn, xn);
        }
    }
}

// Tikhonov solve min ||Mx-b||^2 + mu ||x||^2 via CG on the normal equations.
fn tikhonov(sys: &RHSystem, mu: f64, iters: usize) -> (f64, f64, Vec<f64>) {
    let m = &sys.m;
    let n = sys.n_cols;
    let b = &sys.rhs;
    let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let apply = |x: &[f64], y: &mut Vec<f64>| {
        let mut tmp = vec![0.0; m.nrows];
        m.apply_f64(x, &mut tmp);
        m.apply_transpose_f64(&tmp, y);
        for i in 0..n {
            y[i] += mu * x[i];
        }
    };
    let mut rhs = vec![0.0; n];
    m.apply_transpose_f64(b, &mut rhs);
    let mut x = vec![0.0; n];
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rs: f64 = r.iter().map(|v| v * v).sum();
    let mut ap = vec![0.0; n];
    for _ in 0..iters {
        apply(&p, &mut ap);
        let alpha = rs / p.iter().zip(ap.iter()).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new: f64 = r.iter().map(|v| v * v).sum();
        if rs_new < 1e-28 * rs {
            break;
        }
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    let mut mx = vec![0.0; m.nrows];
    m.apply_f64(&x, &mut mx);
    let res: f64 = mx.iter().zip(b.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    (res / bn, xn, x)
}

fn dissect(sys: &RHSystem, x: &[f64], grid: &Grid, tag: &str) {
    let n = grid.n_nodes;
    let mut mx = vec![0.0; sys.m.nrows];
    sys.m.apply_f64(x, &mut mx);
    let r: Vec<f64> = mx.iter().zip(sys.rhs.iter()).map(|(a, b)| a - b).collect();
    let nrm = |s: &[f64]| s.iter().map(|v| v * v).sum::<f64>().sqrt();
    let n_bnd = grid.n_theta;
    let fix_rows = sys.m.nrows - 3 * n - n_bnd; // fix + filter
    println!(
        "{tag} blocks: interior {:.3e} boundary {:.3e} rest({} rows) {:.3e}  |b| {:.3e}",
        nrm(&r[..3 * n]),
        nrm(&r[3 * n..3 * n + n_bnd]),
        fix_rows,
        nrm(&r[3 * n + n_bnd..]),
        nrm(&sys.rhs)
    );
    let mut prof = vec![0.0f64; grid.n_r + 1];
    for ring in 1..=grid.n_r {
        for j in 0..grid.n_theta as isize {
            let q = grid.idx(ring, j);
            let amp = (x[q].powi(2) + x[n + q].powi(2) + x[2 * n + q].powi(2)).sqrt();
            prof[ring] = prof[ring].max(amp);
        }
    }
    let ticks: Vec<String> = (1..=grid.n_r)
        .step_by(4)
        .chain(std::iter::once(grid.n_r))
        .map(|r| format!("{r}:{:.2e}", prof[r]))
        .collect();
    println!("{tag} ring profile: {}", ticks.join(" "));
}

fn holom_probe(grid: &Grid) {
    for (nw, fix) in [(-1i64, None), (-1, Some(grid.center())), (1, None)] {
        let mut sys = RHSystem::holomorphic_calibration(grid, nw, fix, DEFAULT_TAU_KERNEL);
        // generic seeded boundary data: rows 2n..2n+n_theta
        let n = grid.n_nodes;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gf: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // find the boundary block scale by reading row norms? rows 2n..2n+nt hold it.
        for j in 0..grid.n_theta {
            let th = 2.0 * PI * j as f64 / grid.n_theta as f64;
            let val = gf[0] + gf[1] * th.cos() + gf[2] * th.sin()
                + gf[3] * (2.0 * th).cos() + gf[4] * (2.0 * th).sin() + gf[5] * (3.0 * th).cos();
            sys.rhs[2 * n + j] = val * grid.h_theta.sqrt();
        }
        match sys.solve() {
            Ok(sol) => {
                let xn = sol.particular.as_ref().map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt()).unwrap_or(0.0);
                println!("holom n={nw} fix={}: dim {} res {:.3e} |x| {xn:.3e} sigma {:?}",
                    fix.is_some(), sol.kernel_dim, sol.solvability_residual, &sol.sigma_rel[..4]);
            }
            Err(e) => println!("holom n={nw} fix={}: err {e}", fix.is_some()),
        }
    }
}

fn main() {
    let grid = Grid::new(GridSpec { n_r: 32, n_theta: 128 }).unwrap();
    
    let metric = MetricField::euclidean();
    let im = build_immersion(&Chart::SphericalCap { r: 1.0, rho: PI / 4.0 }, &grid).unwrap();
    let forms = fundamental_forms(&im, &metric).unwrap();
    let ctx = ResidualCtx::new(&grid, &metric, &im, &forms);
    let qc = grid.center();
    let n = grid.n_nodes;
    let kind = DeformationKind::H;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let gf: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();

    // manufactured solvable n=0 problem
    let bc1 = boundary_coefficients(&grid, &forms, &|th: f64| [th.cos(), -th.sin()], &|_| 0.0)
        .unwrap();
    let sys1 = assemble_linear_system(&ctx, kind, &bc1, Some(qc)).unwrap();
    let sol1 = RHSystem::from_linear_system(&grid, &sys1, DEFAULT_TAU_KERNEL).solve().unwrap();
    let d = sol1.kernel[0].clone();
    let bc0 = boundary_coefficients(&grid, &forms, &|_| [1.0, 0.0], &|_| 0.0).unwrap();
    let mut sys0 = assemble_linear_system(&ctx, kind, &bc0, Some(qc)).unwrap();
    for j in 0..grid.n_theta {
        let q = grid.idx(grid.n_r, j as isize);
        let lt = bc0.lambda_tilde[j];
        sys0.boundary_rhs[j] = lt[0] * d[q] + lt[1] * d[n + q];
    }
    let rh0 = RHSystem::from_linear_system(&grid, &sys0, DEFAULT_TAU_KERNEL);
    


    // generic n=-1 problem
    let g = gf.clone();
    let bcm = boundary_coefficients(
        &grid,
        &forms,
        &|th: f64| [th.cos(), th.sin()],
        &move |th: f64| {
            g[0] + g[1] * th.cos()
                + g[2] * th.sin()
                + g[3] * (2.0 * th).cos()
                + g[4] * (2.0 * th).sin()
                + g[5] * (3.0 * th).cos()
        },
    )
    .unwrap();
    let sysm = assemble_linear_system(&ctx, kind, &bcm, Some(qc)).unwrap();
    let rhm = RHSystem::from_linear_system(&grid, &sysm, DEFAULT_TAU_KERNEL);
    
    for hard in ["1e5", "1e6", "1e7"] {
        std::env::set_var("DBG_HARD", hard);
        let rh0 = RHSystem::from_linear_system(&grid, &sys0, DEFAULT_TAU_KERNEL);
        let rhm = RHSystem::from_linear_system(&grid, &sysm, DEFAULT_TAU_KERNEL);
        let s0 = rh0.solve().unwrap();
        let sm = rhm.solve().unwrap();
        let xn0 = s0.particular.as_ref().unwrap().iter().map(|v| v * v).sum::<f64>().sqrt();
        let xnm = sm.particular.as_ref().unwrap().iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("hard {hard}: man res {:.3e} |x| {xn0:.2e}   gen res {:.3e} |x| {xnm:.2e}",
            s0.solvability_residual, sm.solvability_residual);
    }
}
