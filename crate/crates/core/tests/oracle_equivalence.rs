//! Cross-checks against the dense reference implementation and frozen
//! fixture values.

mod common;

use common::{fixture, max_rel_err, rel_err, six_rows, y_vec};
use ivimpute::{
    critical_z, impute, split, tsls, tsls_complete_case, tsls_ri, variance_conventional, variance_hc0,
    variance_robust_ri, w_ri, IVDataset, MomentBlocks,
};
use ivimpute_oracle as oracle;
use nalgebra::{DMatrix, DVector};

// Frozen from the dense reference evaluation of `six_rows()`.
const SIX_PI_CC: [f64; 2] = [1.0928681792307064, -0.23948930633487822];
const SIX_BETA_RI: f64 = 1.494473523381885;
const SIX_VAR_ROBUST: f64 = 0.002407190020947913;
const SIX_VAR_CONVENTIONAL: f64 = 0.004370092132215358;
const SIX_CC_F: f64 = 62.973557447097896;
// Same fixture with x filled in as 1.0 and 1.1 on rows 3 and 6.
const SIX_TSLS_FILLED: f64 = 1.4164492885328963;

#[test]
fn six_row_fixture_matches_frozen_values() {
    let d = six_rows();
    let est = tsls_ri(&d).unwrap();
    assert!(rel_err(est.beta_hat, SIX_BETA_RI) < 1e-12);
    assert!(rel_err(est.variance_robust_ri, SIX_VAR_ROBUST) < 1e-10);
    assert!(rel_err(est.variance_conventional, SIX_VAR_CONVENTIONAL) < 1e-12);
    assert!(rel_err(est.first_stage.f_statistic, SIX_CC_F) < 1e-12);
    for (a, b) in est.first_stage.pi_cc.iter().zip(SIX_PI_CC) {
        assert!(rel_err(*a, b) < 1e-12);
    }
    assert_eq!((est.n, est.n0, est.n1), (6, 4, 2));
    assert!(est.warnings.is_empty());
}

#[test]
fn six_row_tsls_matches_dense_projection() {
    let d = six_rows();
    let x: Vec<f64> = d.x().iter().enumerate().map(|(i, v)| v.unwrap_or(if i == 2 { 1.0 } else { 1.1 })).collect();
    let x = DVector::from_vec(x);
    let b = tsls(&y_vec(&d), &x, d.z()).unwrap();
    assert!(rel_err(b, oracle::tsls(&y_vec(&d), &x, d.z())) < 1e-12);
    assert!(rel_err(b, SIX_TSLS_FILLED) < 1e-12);
}

#[test]
fn tsls_ri_matches_dense_oracle_n50() {
    let d = fixture(50, 3, 0.4, 11);
    assert!(d.n_missing() > 0);
    let est = tsls_ri(&d).unwrap();
    let r = oracle::ri_reference(&y_vec(&d), d.x(), d.z());
    assert!(rel_err(est.beta_hat, r.beta_hat) < 1e-10, "{} vs {}", est.beta_hat, r.beta_hat);
}

#[test]
fn w_ri_matches_literal_loop_n40() {
    let d = fixture(40, 2, 0.3, 5);
    let imp = impute(&split(&d).unwrap()).unwrap();
    let r = oracle::ri_reference(&y_vec(&d), d.x(), d.z());
    let beta = tsls(imp.y(), imp.x_tilde(), imp.z()).unwrap();
    let w = w_ri(&MomentBlocks::compute(&imp, beta).unwrap(), beta).unwrap();
    let w_ref = (&r.w + r.w.transpose()) * 0.5;
    assert!(max_rel_err(&w, &w_ref) < 1e-10, "{w} vs {w_ref}");
}

#[test]
fn w_ri_without_imputation_is_hc0_meat() {
    let d = fixture(60, 3, 0.0, 2);
    let imp = impute(&split(&d).unwrap()).unwrap();
    let beta = tsls(imp.y(), imp.x_tilde(), imp.z()).unwrap();
    let blocks = MomentBlocks::compute(&imp, beta).unwrap();
    assert_eq!(w_ri(&blocks, beta).unwrap(), blocks.s_uu);
}

#[test]
fn w_ri_at_zero_beta_is_hc0_meat() {
    let d = fixture(60, 3, 0.5, 2);
    let imp = impute(&split(&d).unwrap()).unwrap();
    let blocks = MomentBlocks::compute(&imp, 0.0).unwrap();
    assert_eq!(w_ri(&blocks, 0.0).unwrap(), blocks.s_uu);
}

#[test]
fn moment_blocks_are_consistent() {
    let d = fixture(80, 3, 0.5, 8);
    let imp = impute(&split(&d).unwrap()).unwrap();
    let beta = tsls(imp.y(), imp.x_tilde(), imp.z()).unwrap();
    let b = MomentBlocks::compute(&imp, beta).unwrap();
    assert_eq!(b.s_zz_full, &b.s_zz_0 + &b.s_zz_1);
    for m in [&b.s_zz_full, &b.s_uu, &b.s_uv_0, &b.s_vv_0, &b.s_quartic_1] {
        assert!((m - m.transpose()).amax() <= 1e-12 * m.amax());
    }
    for m in [&b.s_zz_0, &b.s_uu, &b.s_vv_0] {
        assert!(m.symmetric_eigenvalues().min() >= -1e-12 * m.amax());
    }
    let w0 = w_ri(&b, 0.0).unwrap();
    assert!(w0.symmetric_eigenvalues().min() >= -1e-12 * w0.amax());
}

#[test]
fn robust_variance_matches_literal_display() {
    for (seed, (n, l, p)) in [(3, (40, 2, 0.2)), (4, (80, 3, 0.5))] {
        let d = fixture(n, l, p, seed);
        let est = tsls_ri(&d).unwrap();
        let r = oracle::ri_reference(&y_vec(&d), d.x(), d.z());
        assert!(rel_err(est.variance_robust_ri, r.variance_robust) < 1e-10);
        assert!(rel_err(est.variance_conventional, r.variance_conventional) < 1e-10);
    }
}

#[test]
fn complete_data_variances_match_textbook_formulas() {
    let d = fixture(70, 3, 0.0, 21);
    let x = DVector::from_iterator(d.n(), d.x().iter().map(|v| v.unwrap()));
    let y = y_vec(&d);
    let est = tsls_ri(&d).unwrap();
    assert!(rel_err(est.variance_robust_ri, oracle::hc0_variance(&y, &x, d.z())) < 1e-10);
    assert!(rel_err(est.variance_conventional, oracle::homoskedastic_variance(&y, &x, d.z())) < 1e-10);
    let hc0 = variance_hc0(&y, &x, d.z(), est.beta_hat).unwrap();
    assert!(rel_err(hc0, est.variance_robust_ri) < 1e-10);
}

#[test]
fn standalone_variance_functions_agree_with_tsls_ri() {
    let d = fixture(64, 2, 0.4, 17);
    let est = tsls_ri(&d).unwrap();
    let imp = impute(&split(&d).unwrap()).unwrap();
    let robust = variance_robust_ri(&imp, est.beta_hat).unwrap();
    assert!(!robust.is_clamped());
    assert!(rel_err(robust.value, est.variance_robust_ri) < 1e-14);
    assert!(rel_err(variance_conventional(&imp, est.beta_hat).unwrap(), est.variance_conventional) < 1e-14);
}

#[test]
fn complete_case_tsls_matches_oracle() {
    let d = fixture(60, 3, 0.3, 9);
    let s = split(&d).unwrap();
    let b = tsls_complete_case(&s).unwrap();
    assert!(rel_err(b, oracle::tsls(s.y0(), s.x0(), s.z0())) < 1e-10);

    let full = fixture(60, 3, 0.0, 9);
    let s = split(&full).unwrap();
    let x = DVector::from_iterator(60, full.x().iter().map(|v| v.unwrap()));
    assert_eq!(tsls_complete_case(&s).unwrap(), tsls(&y_vec(&full), &x, full.z()).unwrap());
}

#[test]
fn noiseless_model_recovers_beta_exactly() {
    // y = 0.7 x and x = Zπ on every row: every residual vanishes.
    let n = 30;
    let z = DMatrix::from_fn(n, 2, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0 + 0.1 * j as f64);
    let pi = DVector::from_vec(vec![0.4, -1.3]);
    let x = &z * &pi;
    let y: Vec<f64> = x.iter().map(|v| 0.7 * v).collect();
    let mask: Vec<Option<f64>> = x.iter().enumerate().map(|(i, &v)| (i % 3 != 0).then_some(v)).collect();
    let d = IVDataset::new(y.clone(), mask, z.clone()).unwrap();
    let est = tsls_ri(&d).unwrap();
    assert!((est.beta_hat - 0.7).abs() < 1e-12);
    assert!(est.variance_robust_ri < 1e-20 && est.variance_conventional < 1e-20);
    let s = split(&d).unwrap();
    assert!((tsls_complete_case(&s).unwrap() - 0.7).abs() < 1e-12);
}

#[test]
fn imputed_first_stage_residuals_vanish_exactly() {
    let d = fixture(90, 3, 0.5, 6);
    let est = tsls_ri(&d).unwrap();
    let imp = impute(&split(&d).unwrap()).unwrap();
    for (i, &flag) in imp.imputed_flag().iter().enumerate() {
        if flag {
            assert_eq!(est.residuals_v_tilde[i], 0.0);
        } else {
            assert_eq!(imp.x_tilde()[i], d.x()[i].unwrap());
        }
    }
}

#[test]
fn critical_value_matches_quadrature() {
    for alpha in [0.32, 0.05, 0.01, 0.5] {
        let z = critical_z(alpha).unwrap();
        assert!((oracle::normal_cdf(z) - (1.0 - alpha / 2.0)).abs() < 1e-9, "alpha {alpha}");
    }
    assert!((critical_z(0.32).unwrap() - 0.994458).abs() < 1e-6);
}
