//! Quick oracle checks run by the `validate` command.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::design::{validate_lhs, Design, DesignPoint, DesignSpace, Provenance};
use crate::geometry::Point;
use crate::indices::{area_index, hausdorff};
use crate::kriging::{fit, FitOptions, KernelKind, ThetaSpec, TrendBasis};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

/// Kriging predictor and MSE against a dense bordered-system solve.
fn kriging_dense(rng: &mut ChaCha8Rng) -> Check {
    let mut worst = 0.0f64;
    for case in 0..12 {
        let n = rng.random_range(4..=12);
        let sites: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0.0..45.0), rng.random_range(0.0..9.0)]).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..5.0)).collect();
        let basis = [TrendBasis::Constant, TrendBasis::Linear][case % 2];
        let opts = FitOptions { basis, kernel: KernelKind::Gaussian, theta: ThetaSpec::Fixed(vec![0.9, 1.4]), standardize: true };
        let Ok(m) = fit(&sites, &y, &opts) else {
            return check("kriging_dense_solve", false, format!("fit failed on case {case}"));
        };
        let s: Vec<Vec<f64>> = sites.iter().map(|x| m.normalize(x)).collect();
        let p = basis.size(2);
        let corr = |a: &[f64], b: &[f64]| (-(0.9 * (a[0] - b[0]).powi(2) + 1.4 * (a[1] - b[1]).powi(2))).exp();
        let mut k = DMatrix::zeros(n + p, n + p);
        for i in 0..n {
            for j in 0..n {
                k[(i, j)] = corr(&s[i], &s[j]) + if i == j { m.nugget() } else { 0.0 };
            }
            for (c, f) in basis.eval(&s[i]).into_iter().enumerate() {
                k[(i, n + c)] = f;
                k[(n + c, i)] = f;
            }
        }
        let Some(ki) = k.try_inverse() else {
            return check("kriging_dense_solve", false, format!("singular system on case {case}"));
        };
        let mut rhs_y = DVector::zeros(n + p);
        rhs_y.rows_mut(0, n).copy_from(&DVector::from_column_slice(&y));
        let sol = &ki * &rhs_y;
        let beta = sol.rows(n, p).into_owned();
        let gamma = sol.rows(0, n).into_owned();
        let ry = DVector::from_column_slice(&y) - DMatrix::from_fn(n, p, |i, c| basis.eval(&s[i])[c]) * &beta;
        let sigma2 = ry.dot(&gamma) / n as f64;
        for _ in 0..5 {
            let x = [rng.random_range(-5.0..50.0), rng.random_range(-1.0..10.0)];
            let xn = m.normalize(&x);
            let mut u = DVector::zeros(n + p);
            for i in 0..n {
                u[i] = corr(&s[i], &xn);
            }
            for (c, f) in basis.eval(&xn).into_iter().enumerate() {
                u[n + c] = f;
            }
            let w = &ki * &u;
            let value = w.rows(0, n).dot(&DVector::from_column_slice(&y));
            let mse = sigma2 * (1.0 - u.dot(&w));
            let got = m.predict_full(&x).unwrap();
            let rel = |a: f64, b: f64, scale: f64| (a - b).abs() / scale.max(1e-300);
            worst = worst.max(rel(got.value, value, value.abs().max(1.0)));
            worst = worst.max(rel(got.mse_raw, mse, sigma2));
        }
    }
    check("kriging_dense_solve", worst <= 1e-8, format!("max relative deviation {worst:.3e}"))
}

fn hausdorff_brute(rng: &mut ChaCha8Rng) -> Check {
    for case in 0..20 {
        let na = rng.random_range(1..300);
        let nb = rng.random_range(1..300);
        let a: Vec<Point> = (0..na).map(|_| Point::new(rng.random_range(-50.0..50.0), rng.random_range(-20.0..20.0))).collect();
        let b: Vec<Point> = (0..nb).map(|_| Point::new(rng.random_range(-50.0..80.0), rng.random_range(-20.0..20.0))).collect();
        let directed = |p: &[Point], q: &[Point]| {
            p.iter().map(|u| q.iter().map(|v| u.distance(*v)).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max)
        };
        let want = directed(&a, &b).max(directed(&b, &a));
        let got = hausdorff(&a, &b).unwrap_or(f64::NAN);
        if got != want {
            return check("hausdorff_brute_force", false, format!("case {case}: {got} vs {want}"));
        }
    }
    check("hausdorff_brute_force", true, "20 random pairs".into())
}

fn area_parallel_offset() -> Check {
    let r: Vec<Point> = (0..=200).map(|i| Point::new(i as f64 * 0.5, 0.0)).collect();
    let mut worst = 0.0f64;
    for h in [0.1, 0.5, 2.0, 7.5] {
        let v: Vec<Point> = r.iter().map(|p| Point::new(p.x, h)).collect();
        worst = worst.max((area_index(&v, &r).unwrap_or(f64::NAN) - h).abs());
    }
    check("area_parallel_offset", worst <= 1e-6, format!("max |D_A - h| = {worst:.3e}"))
}

fn reference_lhs() -> Check {
    let mut d = Design::default();
    for (i, x2) in [0, 5, 3, 8, 7, 2, 6, 1, 9, 4].into_iter().enumerate() {
        d.push(DesignPoint::new(5.0 * i as f64, x2), Provenance::Lhs);
    }
    match validate_lhs(&DesignSpace::default(), &d) {
        Ok(()) => check("lhs_reference_design", true, "accepted".into()),
        Err(e) => check("lhs_reference_design", false, e),
    }
}

fn interpolation(rng: &mut ChaCha8Rng) -> Check {
    let mut worst = 0.0f64;
    for basis in [TrendBasis::Constant, TrendBasis::Linear, TrendBasis::Quadratic] {
        let n = 20;
        let sites: Vec<Vec<f64>> = (0..n).map(|i| vec![2.25 * i as f64, rng.random_range(0.0..9.0)]).collect();
        let y: Vec<f64> = sites.iter().map(|s| (s[0] / 7.0).sin() * s[1]).collect();
        let Ok(m) = fit(&sites, &y, &FitOptions { basis, ..Default::default() }) else {
            return check("site_interpolation", false, format!("fit failed for {basis:?}"));
        };
        let ymax = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (s, v) in sites.iter().zip(&y) {
            worst = worst.max((m.predict(s).unwrap() - v).abs() / (1.0 + ymax));
        }
    }
    check("site_interpolation", worst <= 1e-6, format!("max scaled site error {worst:.3e}"))
}

/// Runs every check with a fixed seed.
pub fn run_suite(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        kriging_dense(&mut rng),
        hausdorff_brute(&mut rng),
        area_parallel_offset(),
        reference_lhs(),
        interpolation(&mut rng),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        for c in run_suite(3) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
