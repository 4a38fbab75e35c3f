use vortexlab::asymptotics::*;
use vortexlab::covariance::CovarianceConstants;
use vortexlab::noise::{GammaRule, NoiseSpec, SpectralNoise};
use vortexlab::profile::{Bump, VortexProfile};
use vortexlab::spectral::FourierGrid;


const R: f64 = 0.35;

fn bump() -> Bump {
    Bump::new(R).unwrap()
}

#[test]
fn off_diagonal_pairs_vanish() {
    for &ell in &[0.125, 1.0 / 64.0] {
        let m = pair_matrix(&bump(), &Bump::new(0.3).unwrap(), ell, lattice_for(ell)).unwrap();
        assert!(m[0][1].abs() <= 1e-8 * m[0][0].abs(), "{m:?}");
        assert!((m[0][0] - m[1][1]).abs() <= 1e-12 * m[0][0]);
    }
}

#[test]
fn resolution_guard() {
    assert!(pair_integral(&bump(), &bump(), 1.0 / 64.0, 0, 0, 256).is_err());
    assert!(pair_integral(&bump(), &bump(), 1.0 / 32.0, 0, 0, 256).is_ok());
    assert!(pair_integral(&bump(), &bump(), 0.5, 2, 0, 256).is_err());
}

/// Direct oracle: sample both bumps on the grid, apply the derivative and
/// inverse Laplacian symbols by FFT and take the physical inner product.
#[test]
fn unit_scale_matches_grid_quadrature() {
    let n = 256;
    let grid = FourierGrid::<f64>::new(n).unwrap();
    let (a, b) = (bump(), Bump::new(0.25).unwrap());
    let mut fa = grid.from_fn(|x, y| a.value(x.hypot(y)));
    let mut fb = grid.from_fn(|x, y| b.value(x.hypot(y)));
    fa.pin_mean();
    fb.pin_mean();
    let ga = grid.green_convolve(&fa).unwrap();
    let gb = grid.green_convolve(&fb).unwrap();
    for (i, j) in [(0, 0), (1, 1), (0, 1)] {
        let di = grid.inverse(&grid.derivative(&ga, i));
        let dj = grid.inverse(&grid.derivative(&gb, j));
        let direct: f64 = di.iter().zip(&dj).map(|(p, q)| p * q).sum::<f64>() / (n * n) as f64;
        let p = pair_integral(&a, &b, 1.0, i, j, n).unwrap();
        assert!(p.ratio.is_nan());
        let scale = if i == j { direct.abs() } else { 1.0 };
        assert!((p.value - direct).abs() <= 1e-6 * scale, "{i}{j}: {} vs {direct}", p.value);
    }
}

#[test]
fn diagonal_ratio_trends_to_limit() {
    let ells: Vec<f64> = (3..=7).map(|p| 2f64.powi(-p)).collect();
    let ratios: Vec<f64> = ells
        .iter()
        .map(|&l| pair_integral(&bump(), &bump(), l, 0, 0, lattice_for(l)).unwrap().ratio)
        .collect();
    let gap: Vec<f64> = ratios.iter().map(|r| (r - PAIR_LIMIT).abs()).collect();
    assert!(gap.windows(2).all(|w| w[1] < w[0]), "{ratios:?}");
    assert!(gap[4] <= 0.2 * PAIR_LIMIT, "{ratios:?}");
}

#[test]
fn gamma_log_trends_to_target() {
    let profile = VortexProfile::build(Default::default(), R, R).unwrap();
    let ells: Vec<f64> = (3..=7).map(|p| 2f64.powi(-p)).collect();
    let rows = gamma_log_ladder(&profile, 0.25, &ells).unwrap();
    let gap: Vec<f64> = rows.iter().map(|r| (r.gamma_sq_log - r.target).abs()).collect();
    assert!(gap.windows(2).all(|w| w[1] < w[0]), "{rows:?}");
    assert!(gap[4] <= 0.2 * rows[4].target);
}

#[test]
fn annulus_bracketed() {
    let a = annulus_integral(1.0, 2f64.powi(-10), 0).unwrap();
    let b = annulus_integral(1.0, 2f64.powi(-10), 1).unwrap();
    assert!(a.bracketed, "{a:?}");
    assert!((a.integral - b.integral).abs() <= 1e-10);
    let l = 1024f64.ln();
    assert!(a.normalized > PAIR_LIMIT * (1.0 - 2f64.ln() / l));
    assert!(a.normalized < PAIR_LIMIT);
    assert!(annulus_integral(1.0, 1.5, 0).is_err());
}

#[test]
fn annulus_closed_form() {
    // the disk-annulus up to radius 1/(2ℓ) contributes (1/4π) log(1/(2ℓR)); the
    // four corners add a fixed amount independent of ℓ
    let corner = |ell: f64| {
        let a = annulus_integral(0.5, ell, 0).unwrap();
        a.integral - PAIR_LIMIT * (1.0 / (ell)).ln()
    };
    assert!((corner(2f64.powi(-6)) - corner(2f64.powi(-12))).abs() <= 1e-10);
}

#[test]
fn annulus_ladder_monotone() {
    let v: Vec<f64> = (6..=12)
        .map(|p| annulus_integral(1.0, 2f64.powi(-p), 0).unwrap().normalized)
        .collect();
    assert!(v.windows(2).all(|w| w[1] > w[0] && w[1] < PAIR_LIMIT), "{v:?}");
}

fn shifted() -> PlanarBump {
    PlanarBump {
        bump: Bump::new(0.25).unwrap(),
        center: [0.07, -0.03],
        mirrored: false,
    }
}

#[test]
fn farfield_quadrature_matches_shell_theorem() {
    for psi in [shifted(), PlanarBump { mirrored: true, ..shifted() }] {
        for &(x, y) in &[(1.0, 0.0), (-0.6, 1.3), (2.5, -3.0)] {
            let q = psi.error([x, y]);
            let e = psi.exact_error([x, y]);
            assert!((q[0] - e[0]).abs() + (q[1] - e[1]).abs() <= 1e-12, "{q:?} {e:?}");
        }
    }
}

#[test]
fn farfield_bounded_and_decaying() {
    let rows = farfield_error(&shifted(), &[1.0, 2.0, 4.0], 64).unwrap();
    for r in &rows {
        assert!(r.scaled_error <= r.bound, "{r:?}");
    }
    assert!(rows.windows(2).all(|w| w[1].scaled_error <= w[0].scaled_error * (1.0 + 1e-9)));
    assert!(farfield_error(&shifted(), &[0.5], 8).is_err());
}

#[test]
fn farfield_point_mass_limit() {
    let x = [1.5, 0.5];
    let err = |r: f64| {
        let psi = PlanarBump {
            bump: Bump::new(r).unwrap(),
            center: [0.05 * r / 0.25, 0.0],
            mirrored: false,
        };
        let e = psi.error(x);
        e[0].hypot(e[1])
    };
    let (a, b, c) = (err(0.25), err(0.05), err(0.01));
    assert!(b < a && c < b && c < 0.1 * a, "{a} {b} {c}");
}

#[test]
fn farfield_parity() {
    let psi = PlanarBump { mirrored: true, ..shifted() };
    for &(x, y) in &[(1.0, 0.3), (-2.0, 1.7)] {
        let p = psi.error([x, y]);
        let m = psi.error([-x, -y]);
        assert!((p[0] + m[0]).abs() <= 1e-12 && (p[1] + m[1]).abs() <= 1e-12);
    }
}

#[test]
fn four_term_decomposition_matches_spectral() {
    let ell = 2f64.powi(-4);
    let (a, b) = (bump(), Bump::new(0.25).unwrap());
    let spec = pair_matrix(&a, &b, ell, 2048).unwrap();
    for (i, j) in [(0, 0), (1, 1), (0, 1)] {
        let d = decompose_pair(&a, &b, ell, i, j);
        let scale = spec[0][0];
        assert!(
            (d.total() - spec[i][j]).abs() <= 1e-5 * scale,
            "{i}{j}: {d:?} vs {}",
            spec[i][j]
        );
    }
    // the regular-part corrections are a visible share of the total
    let d = decompose_pair(&a, &b, ell, 0, 0);
    assert!((d.total() - d.main).abs() > 1e-3 * d.total());
}

#[test]
fn limit_matrix_two_paths_agree() {
    for rule in [GammaRule::Proportional { q0: 1.0 }, GammaRule::Subordinate { p: 0.5 }] {
        let spec = NoiseSpec {
            ell: 0.125,
            kappa: 0.25,
            gamma_rule: rule,
            ..Default::default()
        };
        let grid = FourierGrid::<f64>::new(64).unwrap();
        let sn = SpectralNoise::build(&spec, &grid).unwrap();
        let c = CovarianceConstants::from_noise(&sn, &grid);
        let profile = spec.profile.build().unwrap().scaled(spec.ell).unwrap();
        let m = limit_matrix_from_pairs(&grid, &profile, sn.gamma, sn.gamma3);
        let scale = c.grad_qh3_0[0][1].abs().max(1e-30);
        for j in 0..2 {
            for k in 0..2 {
                assert!(
                    (m[j][k] - c.grad_qh3_0[j][k]).abs() <= 1e-8 * scale,
                    "{m:?} vs {:?}",
                    c.grad_qh3_0
                );
            }
        }
    }
}

#[test]
fn limit_matrix_ladder_trends() {
    // with χ = θ the calibration makes the off-diagonal exactly 2κq0 at every ℓ
    let profile = VortexProfile::build(Default::default(), R, 0.2).unwrap();
    let ells: Vec<f64> = (3..=7).map(|p| 2f64.powi(-p)).collect();
    let kappa = 0.25;
    let prop = limit_matrix_ladder(&profile, kappa, &GammaRule::Proportional { q0: 1.0 }, &ells).unwrap();
    for (_, m) in &prop {
        assert!(m[0][0].abs() <= 1e-8 * m[1][0].abs() && m[1][1].abs() <= 1e-8 * m[1][0].abs());
        assert!((m[0][1] + m[1][0]).abs() <= 1e-10 * m[1][0].abs());
    }
    let gap: Vec<f64> = prop.iter().map(|(_, m)| (m[1][0] - 2.0 * kappa).abs()).collect();
    assert!(gap.windows(2).all(|w| w[1] < w[0]), "{prop:?}");
    assert!(gap[4] <= 0.25 * 2.0 * kappa, "{prop:?}");
    let sub = limit_matrix_ladder(&profile, kappa, &GammaRule::Subordinate { p: 0.5 }, &ells).unwrap();
    let norms: Vec<f64> = sub.iter().map(|(_, m)| m[1][0].abs().max(m[0][1].abs())).collect();
    assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
}
