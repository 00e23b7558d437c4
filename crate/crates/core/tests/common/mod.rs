//! Checks shared by the property and acceptance targets. Each returns a
//! description of the first violation it finds.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cmtf_bsd::bspline::{Representation, SplineBasis, SplineFunction};
use cmtf_bsd::decoupling::{
    bspline_projection, cmtf_bsd, normalize_columns_w0t, objective, projection_residual, steps, Branch, CmtfConfig,
    DecoupledModel, ProjectionSettings, Unfoldings,
};
use cmtf_bsd::solvers::nnls;
use cmtf_bsd::sysgen::{builtin_mono, builtin_trig, sample_for_system, sample_uniform, seeded_rng, SyntheticSystem};
use cmtf_bsd::tensor3::{khatri_rao, CpdFactors, Mode, Tensor3};

pub type Check = Result<(), String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn rel_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    (a - b).norm() <= tol * a.norm().max(b.norm()).max(f64::MIN_POSITIVE)
}

/// Unfoldings against direct indexing and the CPD unfolding identities.
pub fn unfolding_identities(seed: u64) -> Check {
    let mut rng = rng(seed);
    let (n, m, s, r) = (rng.gen_range(1..=5), rng.gen_range(1..=5), rng.gen_range(1..=5), rng.gen_range(1..=5));
    let (a, b, c) = (random(n, r, &mut rng), random(m, r, &mut rng), random(s, r, &mut rng));
    let t = CpdFactors::new(a.clone(), b.clone(), c.clone())
        .map_err(|e| e.to_string())?
        .reconstruct();
    let (u1, u2, u3) = (t.unfold(Mode::One), t.unfold(Mode::Two), t.unfold(Mode::Three));
    for i in 0..n {
        for j in 0..m {
            for k in 0..s {
                let v = t.get(i, j, k);
                if u1[(i, j + k * m)] != v || u2[(j, i + k * n)] != v || u3[(k, i + j * n)] != v {
                    return Err(format!("unfolding misplaces ({i},{j},{k})"));
                }
            }
        }
    }
    let kr = |x: &DMatrix<f64>, y: &DMatrix<f64>| khatri_rao(x, y).unwrap().transpose();
    let pairs = [(&u1, &a * kr(&c, &b)), (&u2, &b * kr(&c, &a)), (&u3, &c * kr(&b, &a))];
    for (mode, (unf, expected)) in pairs.iter().enumerate() {
        if !rel_close(unf, expected, 1e-12) {
            return Err(format!("mode-{} identity off by {:e}", mode + 1, (*unf - expected).norm()));
        }
    }
    Ok(())
}

fn random_basis(rng: &mut ChaCha8Rng) -> Result<(SplineBasis, Vec<f64>), String> {
    let x: Vec<f64> = (0..60).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let degree = rng.gen_range(1..=4);
    let df = rng.gen_range(degree + 1..=12);
    let basis = SplineBasis::from_quantiles(&x, df, degree).map_err(|e| e.to_string())?;
    let (lo, hi) = basis.domain();
    let grid = (0..=400).map(|i| (lo + (hi - lo) * i as f64 / 400.0).min(hi)).collect();
    Ok((basis, grid))
}

pub fn partition_of_unity(seed: u64) -> Check {
    let (basis, grid) = random_basis(&mut rng(seed))?;
    let b = basis.design_matrix(&grid);
    for (s, row) in b.row_iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || row.iter().any(|&v| v < -1e-15) {
            return Err(format!("row {s} at u = {} sums to {sum}", grid[s]));
        }
    }
    Ok(())
}

fn off_knot(basis: &SplineBasis, grid: &[f64], gap: f64) -> Vec<f64> {
    grid.iter()
        .copied()
        .filter(|u| basis.knots().iter().all(|k| (u - k).abs() > gap))
        .collect()
}

/// Central differences of the design matrix.
pub fn derivative_matches_differences(seed: u64) -> Check {
    let (basis, grid) = random_basis(&mut rng(seed))?;
    let h = 1e-6;
    let u = off_knot(&basis, &grid, 2.0 * h);
    let d = basis.derivative_design_matrix(&u).map_err(|e| e.to_string())?;
    let plus: Vec<f64> = u.iter().map(|v| v + h).collect();
    let minus: Vec<f64> = u.iter().map(|v| v - h).collect();
    let fd = (basis.design_matrix(&plus) - basis.design_matrix(&minus)) / (2.0 * h);
    let worst = (&d - &fd).amax();
    if worst > 1e-5 * d.amax().max(1.0) {
        return Err(format!("derivative differs from central differences by {worst:e}"));
    }
    Ok(())
}

const GAUSS5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// Piecewise five-point Gauss-Legendre, exact for the spline pieces.
fn quadrature(basis: &SplineBasis, upper: f64) -> DVector<f64> {
    let (lo, _) = basis.domain();
    let mut breaks: Vec<f64> = basis.knots().iter().copied().filter(|&k| k > lo && k < upper).collect();
    breaks.insert(0, lo);
    breaks.push(upper);
    breaks.dedup();
    let mut acc = DVector::zeros(basis.df());
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let nodes: Vec<f64> = GAUSS5.iter().map(|(x, _)| 0.5 * (a + b) + 0.5 * (b - a) * x).collect();
        let vals = basis.design_matrix(&nodes);
        for (q, (_, wt)) in GAUSS5.iter().enumerate() {
            acc += vals.row(q).transpose() * (0.5 * (b - a) * wt);
        }
    }
    acc
}

pub fn integral_matches_quadrature(seed: u64) -> Check {
    let (basis, grid) = random_basis(&mut rng(seed))?;
    let u: Vec<f64> = grid.iter().step_by(7).copied().collect();
    let integral = basis.integral_design_matrix(&u);
    for (s, &x) in u.iter().enumerate() {
        let q = quadrature(&basis, x);
        let worst = (integral.row(s).transpose() - &q).amax();
        if worst > 1e-9 {
            return Err(format!("integral at u = {x} off by {worst:e}"));
        }
    }
    Ok(())
}

/// Karush-Kuhn-Tucker conditions of a random NNLS instance.
pub fn nnls_kkt(seed: u64) -> Check {
    let mut rng = rng(seed);
    let (p, q) = (rng.gen_range(3..15), rng.gen_range(1..10));
    let a = random(p, q, &mut rng);
    let b = DVector::from_fn(p, |_, _| rng.gen_range(-1.0..1.0));
    let sol = nnls(&a, &b).map_err(|e| e.to_string())?;
    let x = &sol.x;
    let w = a.transpose() * (&b - &a * x);
    let tol = 1e-8 * (a.norm() * b.norm()).max(1.0);
    for k in 0..q {
        let bad = x[k] < 0.0 || w[k] > tol || (x[k] > 0.0 && w[k].abs() > tol) || (x[k] * w[k]).abs() > tol;
        if bad {
            return Err(format!("coordinate {k}: x = {:e}, gradient = {:e}", x[k], w[k]));
        }
    }
    Ok(())
}

pub fn normalization_invariance(seed: u64) -> Check {
    let mut rng = rng(seed);
    let (n, m, s, r) = (rng.gen_range(1..=5), rng.gen_range(1..=5), rng.gen_range(2..=8), rng.gen_range(1..=4));
    let (mut w1, mut w0, g) = (random(n, r, &mut rng), random(r, m, &mut rng), random(s, r, &mut rng));
    let before = CpdFactors::new(w1.clone(), w0.transpose(), g.clone()).unwrap().reconstruct();
    normalize_columns_w0t(&mut w0, &mut w1);
    let after = CpdFactors::new(w1, w0.transpose(), g).unwrap().reconstruct();
    let diff = before.distance_sq(&after).unwrap().sqrt();
    if diff > 1e-12 * before.frob_norm_sq().sqrt() {
        return Err(format!("reconstruction moved by {diff:e}"));
    }
    Ok(())
}

/// One ALS sweep by hand; every step must not increase the quantity it
/// minimizes, and the projection must beat perturbed coefficients.
pub fn steps_do_not_increase(seed: u64) -> Check {
    let mut rng = rng(seed);
    let (n, m, s, r) = (2, 3, 40, 3);
    let j = Tensor3::from_fn(n, m, s, |_, _, _| rng.gen_range(-1.0..1.0));
    let f = random(n, s, &mut rng);
    let samples = random(m, s, &mut rng);
    let data = Unfoldings::new(&j, &f);
    let lambda = 0.1;
    let (mut w1, mut w0) = (random(n, r, &mut rng), random(r, m, &mut rng));
    let (mut g, mut r_mat) = (random(s, r, &mut rng), random(s, r, &mut rng));
    let settings = ProjectionSettings::from_config(&CmtfConfig::new(r, 3, 6), lambda);
    let obj = |w1: &DMatrix<f64>, w0: &DMatrix<f64>, g: &DMatrix<f64>, r: &DMatrix<f64>| {
        objective(&j, &f, w1, w0, g, r, lambda).unwrap()
    };
    let check = |name: &str, before: f64, after: f64| -> Check {
        if after > before * (1.0 + 1e-12) + 1e-14 {
            Err(format!("{name} step increased {before:e} -> {after:e}"))
        } else {
            Ok(())
        }
    };
    let err = |e: cmtf_bsd::Error| e.to_string();
    for _ in 0..3 {
        let before = obj(&w1, &w0, &g, &r_mat).total();
        w1 = steps::update_w1(&data, &w0, &g, &r_mat, lambda).map_err(err)?.0;
        check("W1", before, obj(&w1, &w0, &g, &r_mat).total())?;

        let before = obj(&w1, &w0, &g, &r_mat).tensor_term;
        w0 = steps::update_w0(&data, &w1, &g).map_err(err)?.0;
        check("W0", before, obj(&w1, &w0, &g, &r_mat).tensor_term)?;
        normalize_columns_w0t(&mut w0, &mut w1);

        let before = obj(&w1, &w0, &g, &r_mat).tensor_term;
        g = steps::update_g(&data, &w1, &w0).map_err(err)?.0;
        check("G", before, obj(&w1, &w0, &g, &r_mat).tensor_term)?;

        let before = obj(&w1, &w0, &g, &r_mat).coupling_term;
        r_mat = steps::update_r(&data, &w1, &r_mat).map_err(err)?.0;
        check("R", before, obj(&w1, &w0, &g, &r_mat).coupling_term)?;

        let xs = &w0 * &samples;
        let p = bspline_projection(&g, &r_mat, &xs, &settings).map_err(err)?;
        let coeffs: Vec<DVector<f64>> = p
            .branches
            .iter()
            .map(|b| DVector::from_column_slice(b.as_spline().expect("spline branch").coeffs()))
            .collect();
        let best = projection_residual(&g, &r_mat, &xs, &coeffs, &settings).map_err(err)?;
        for _ in 0..5 {
            let moved: Vec<_> = coeffs.iter().map(|c| c.map(|v| v + rng.gen_range(-1e-2..1e-2))).collect();
            check("projection", projection_residual(&g, &r_mat, &xs, &moved, &settings).map_err(err)?, best)?;
        }
        g = p.g;
        r_mat = p.r;
    }
    Ok(())
}

fn jacobian_vs_differences(system: &SyntheticSystem, seed: u64) -> Check {
    let set = sample_for_system(system, 20, -1.5, 1.5, seed).map_err(|e| e.to_string())?;
    let j = system.jacobian_tensor(&set.x).map_err(|e| e.to_string())?;
    let h = 1e-6;
    for s in 0..set.len() {
        let x: Vec<f64> = set.x.column(s).iter().copied().collect();
        for q in 0..system.inputs() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[q] += h;
            xm[q] -= h;
            let (fp, fm) = (system.eval(&xp).unwrap(), system.eval(&xm).unwrap());
            for p in 0..system.outputs() {
                let fd = (fp[p] - fm[p]) / (2.0 * h);
                let exact = j.get(p, q, s);
                if (fd - exact).abs() > 1e-6 * exact.abs().max(1.0) {
                    return Err(format!("sample {s}, entry ({p},{q}): {exact} vs {fd}"));
                }
            }
        }
    }
    Ok(())
}

pub fn synthetic_jacobians(seed: u64) -> Check {
    jacobian_vs_differences(&builtin_trig(), seed)?;
    jacobian_vs_differences(&builtin_mono(seed), seed)
}

/// Jacobian and outputs of a random model whose branches are exact splines.
pub fn spline_structured(seed: u64) -> (Tensor3, DMatrix<f64>, DMatrix<f64>, CmtfConfig) {
    let mut rng = seeded_rng(1000 + seed, 7);
    let x = sample_uniform(3, 100, -1.0, 1.0, 1000 + seed).unwrap().x;
    let mut w0 = DMatrix::from_fn(2, 3, |_, _| rng.gen_range(-1.0..1.0));
    for mut row in w0.row_iter_mut() {
        let norm = row.norm();
        row /= norm;
    }
    let w1 = DMatrix::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0));
    let u = &w0 * &x;
    let config = CmtfConfig::new(2, 3, 6);
    let branches = (0..2)
        .map(|i| {
            let ui: Vec<f64> = u.row(i).iter().copied().collect();
            let basis = SplineBasis::from_quantiles(&ui, 6, 3).unwrap();
            let coeffs = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Branch::Spline(SplineFunction::new(basis, coeffs, Representation::G).unwrap())
        })
        .collect();
    let truth = DecoupledModel::new(w1, w0, branches, config.clone()).unwrap();
    (truth.jacobian_tensor(&x).unwrap(), truth.predict(&x).unwrap(), x, config)
}

/// Relative objective reached from a random start on exact spline data.
pub fn exact_structure_residual(seed: u64, max_iter: usize) -> Result<f64, String> {
    let (j, f, x, config) = spline_structured(seed);
    let fit = cmtf_bsd(&j, &f, &x, &config.with_seed(seed).with_max_iter(max_iter)).map_err(|e| e.to_string())?;
    let last = fit.state.history.last().ok_or("empty history")?.objective;
    Ok(last / j.frob_norm_sq())
}

/// Runs `check` over `seeds`, stopping at the first failure.
pub fn over_seeds(seeds: std::ops::Range<u64>, check: fn(u64) -> Check) -> Check {
    for seed in seeds {
        check(seed).map_err(|e| format!("seed {seed}: {e}"))?;
    }
    Ok(())
}
