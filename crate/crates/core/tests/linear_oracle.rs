//! Closed-form estimators against a dense two-stage least squares solve.

use car_late_core::rng::stream;
use car_late_core::{estimate_2s, estimate_sat, estimate_sfe, residuals_sat, TrialDataset};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// (Z'X)⁻¹ Z'Y for an exactly identified system.
fn iv_solve(x: &DMatrix<f64>, z: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let zx = z.transpose() * x;
    let zy = z.transpose() * y;
    zx.lu().solve(&zy).expect("instrument matrix is singular")
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-10 * a.abs().max(b.abs()).max(1.0)
}

/// Random small dataset whose strata all have both arms and a first stage
/// of at least 0.1.
fn random_dataset<R: Rng>(rng: &mut R) -> TrialDataset {
    loop {
        let k = rng.random_range(1..=4usize);
        let n = rng.random_range(4 * k..=50.max(4 * k));
        let mut y = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        let mut s = Vec::with_capacity(n);
        for i in 0..n {
            let st = if i < k { i } else { rng.random_range(0..k) };
            let ai = rng.random_bool(0.5);
            let di = if ai { rng.random_bool(0.8) } else { rng.random_bool(0.2) };
            y.push(rng.random_range(-5.0..5.0) + 2.0 * di as u8 as f64);
            d.push(di as u8);
            a.push(ai as u8);
            s.push(format!("g{st}"));
        }
        let data = TrialDataset::from_columns(&y, &d, &a, &s).unwrap();
        let counts = car_late_core::count(&data);
        let ok = counts
            .per_stratum
            .iter()
            .all(|c| c.n_a > 0 && c.n_a < c.n && c.first_stage() >= 0.1);
        if ok {
            return data;
        }
    }
}

fn design_matrices(data: &TrialDataset) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let n = data.len();
    let k = data.num_strata();
    let units = data.units();
    let sat_x = DMatrix::from_fn(n, 2 * k, |i, j| {
        let u = units[i];
        let on = (u.s == j % k) as u8 as f64;
        if j < k { on } else { on * u.d as u8 as f64 }
    });
    let sat_z = DMatrix::from_fn(n, 2 * k, |i, j| {
        let u = units[i];
        let on = (u.s == j % k) as u8 as f64;
        if j < k { on } else { on * u.a as u8 as f64 }
    });
    let sfe_x = DMatrix::from_fn(n, k + 1, |i, j| {
        let u = units[i];
        if j < k { (u.s == j) as u8 as f64 } else { u.d as u8 as f64 }
    });
    let sfe_z = DMatrix::from_fn(n, k + 1, |i, j| {
        let u = units[i];
        if j < k { (u.s == j) as u8 as f64 } else { u.a as u8 as f64 }
    });
    let y = DVector::from_iterator(n, units.iter().map(|u| u.y));
    (sat_x, sat_z, sfe_x, sfe_z, y)
}

#[test]
fn estimators_match_dense_two_stage_least_squares() {
    let mut rng = stream(20_240_601);
    for _ in 0..500 {
        let data = random_dataset(&mut rng);
        let k = data.num_strata();
        let (sat_x, sat_z, sfe_x, sfe_z, y) = design_matrices(&data);

        let sat = estimate_sat(&data).unwrap();
        let coef = iv_solve(&sat_x, &sat_z, &y);
        for s in 0..k {
            assert!(close(sat.gamma_hat_s[s], coef[s]), "gamma {} vs {}", sat.gamma_hat_s[s], coef[s]);
            assert!(close(sat.beta_hat_s[s], coef[k + s]), "beta {} vs {}", sat.beta_hat_s[s], coef[k + s]);
        }

        let sfe = estimate_sfe(&data).unwrap();
        let coef = iv_solve(&sfe_x, &sfe_z, &y);
        assert!(close(sfe.beta_hat, coef[k]), "{} vs {}", sfe.beta_hat, coef[k]);
        for s in 0..k {
            assert!(close(sfe.gamma_hat_s[s], coef[s]));
        }

        let n = data.len();
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { data.units()[i].d as u8 as f64 });
        let z = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { data.units()[i].a as u8 as f64 });
        let two = estimate_2s(&data).unwrap();
        let coef = iv_solve(&x, &z, &y);
        assert!(close(two.gamma_hat, coef[0]) && close(two.beta_hat, coef[1]));
    }
}

#[test]
fn residuals_satisfy_instrument_orthogonality() {
    let mut rng = stream(7);
    for _ in 0..200 {
        let data = random_dataset(&mut rng);
        let fit = estimate_sat(&data).unwrap();
        let u = residuals_sat(&data, &fit);
        let tol = 1e-8 * data.len() as f64;
        for s in 0..data.num_strata() {
            let mut treated = 0.0;
            let mut all = 0.0;
            for (unit, r) in data.units().iter().zip(&u) {
                if unit.s != s {
                    continue;
                }
                all += r;
                if unit.a {
                    treated += r;
                }
            }
            assert!(treated.abs() < tol && all.abs() < tol);
        }
    }
}

#[test]
fn wald_ratio_identity() {
    let mut rng = stream(99);
    for _ in 0..200 {
        let data = random_dataset(&mut rng);
        let fit = estimate_sat(&data).unwrap();
        for s in 0..data.num_strata() {
            let arm = |a: bool, f: &dyn Fn(&car_late_core::UnitRecord) -> f64| {
                let v: Vec<f64> = data.units().iter().filter(|u| u.s == s && u.a == a).map(f).collect();
                v.iter().sum::<f64>() / v.len() as f64
            };
            let dy = arm(true, &|u| u.y) - arm(false, &|u| u.y);
            let dd = arm(true, &|u| u.d as u8 as f64) - arm(false, &|u| u.d as u8 as f64);
            assert!(close(fit.beta_hat_s[s], dy / dd));
        }
    }
}
