use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::f64::consts::PI;
use vortexlab::covariance::{
    hypothesis_report, sym_eigenvalues, CovarianceConstants, CovarianceTables,
};
use vortexlab::green;
use vortexlab::noise::{calibrate_gamma, GammaRule, NoiseSpec, SpectralNoise};
use vortexlab::profile::{Bump, ProfileKind, VortexProfile};
use vortexlab::Grid;

/// `c` for `r = 0.35`, from adaptive scipy quadrature of the radial mass
/// (a 512² trapezoid sum agrees to 3e-16).
const BUMP_CONSTANT_035: f64 = 17.498496128916216;

/// `Γ_ℓ` for κ = 0.25, ℓ = 2⁻⁵, r = 0.35, n = 512, from scipy Hankel
/// transforms summed over the same mode band.
const GAMMA_512_ELL5: f64 = 1.28842208453957;

fn spec(ell: f64, rule: GammaRule) -> NoiseSpec {
    NoiseSpec {
        ell,
        kappa: 0.25,
        gamma_rule: rule,
        ..NoiseSpec::default()
    }
}

#[test]
fn bump_constant_regression() {
    let b = Bump::new(0.35).unwrap();
    assert!((b.constant() - BUMP_CONSTANT_035).abs() / BUMP_CONSTANT_035 < 1e-12);
}

#[test]
fn profile_is_radial_and_scaled_mass_is_one() {
    let p = VortexProfile::build(ProfileKind::Bump, 0.35, 0.35).unwrap();
    let n = 256;
    let g = Grid::new(n).unwrap();
    for j1 in 0..n {
        for j2 in 0..n {
            let (x1, x2) = (g.coordinate(j1), g.coordinate(j2));
            if x1 > -0.5 && x2 > -0.5 {
                assert!((p.theta_at(x1, x2) - p.theta_at(-x1, -x2)).abs() <= 1e-14);
            }
        }
    }
    let q = p.scaled(1.0 / 16.0).unwrap();
    let gl = vortexlab::quadrature::GaussLegendre::new(20);
    let polar = 2.0 * PI * gl.composite(0.0, 0.35 / 16.0, 16, |r| r * q.theta_at(r, 0.0));
    assert!((polar - 1.0).abs() < 1e-6);
    // a grid sum resolves the narrow vortex once n·ℓ is large
    let n = 1024;
    let g = Grid::new(n).unwrap();
    let mass: f64 = (0..n * n)
        .map(|i| q.theta_at(g.coordinate(i / n), g.coordinate(i % n)))
        .sum::<f64>()
        / (n * n) as f64;
    assert!((mass - 1.0).abs() < 1e-6);
    assert_eq!(p.scaled(1.0).unwrap(), p);
}

#[test]
fn scaled_transform_matches_sampled_fft() {
    let p = VortexProfile::build(ProfileKind::Bump, 0.35, 0.2)
        .unwrap()
        .scaled(0.5)
        .unwrap();
    let n = 512;
    let g = Grid::new(n).unwrap();
    let f = g.from_fn(|x1, x2| p.theta_at(x1, x2));
    for &(a, b) in &[(0i64, 0i64), (1, 0), (3, 4), (-7, 2), (12, 5)] {
        let got = f.coefficients()[g.index_of(a, b).unwrap()];
        let want = p.theta.transform(0.5 * ((a * a + b * b) as f64).sqrt());
        assert!((got - Complex64::new(want, 0.0)).norm() < 1e-10, "k = ({a},{b})");
    }
}

#[test]
fn calibration_hits_energy_constant() {
    let g = Grid::new(128).unwrap();
    let p = VortexProfile::build(ProfileKind::Bump, 0.35, 0.35)
        .unwrap()
        .scaled(0.125)
        .unwrap();
    let (gamma, sig) = calibrate_gamma(&g, &p, 0.25).unwrap();
    let e = g.norm_sq(&sig.u1) + g.norm_sq(&sig.u2);
    assert!((e - 1.0).abs() < 1e-10);
    assert!(gamma > 0.0);
    let under = p.scaled(0.25).unwrap();
    assert!(calibrate_gamma(&g, &under, 0.25).is_err());
}

#[test]
fn gamma_regression_against_hankel_oracle() {
    let g = Grid::new(512).unwrap();
    let sn = SpectralNoise::build(&spec(1.0 / 32.0, GammaRule::default()), &g).unwrap();
    assert!((sn.gamma - GAMMA_512_ELL5).abs() / GAMMA_512_ELL5 < 1e-9, "{}", sn.gamma);
}

#[test]
fn noise_fields_are_solenoidal_with_vortex_parity() {
    let g = Grid::new(64).unwrap();
    let sn = SpectralNoise::build(&spec(0.25, GammaRule::default()), &g).unwrap();
    let sh = sn.sigma_h();
    assert!(g.sup_norm(&g.divergence(&sh)) < 1e-12);
    let u1 = g.inverse(&sh.u1);
    let u2 = g.inverse(&sh.u2);
    let s3 = g.inverse(&sn.sigma_3());
    let n = 64;
    for j1 in 0..n {
        for j2 in 0..n {
            let p = j1 * n + j2;
            let m = ((n - j1) % n) * n + (n - j2) % n;
            assert!((u1[p] + u1[m]).abs() < 1e-13);
            assert!((u2[p] + u2[m]).abs() < 1e-13);
            assert!((s3[p] - s3[m]).abs() < 1e-13);
        }
    }
}

#[test]
fn zero_vertical_intensity_kills_cross_covariance() {
    let g = Grid::new(64).unwrap();
    let sn = SpectralNoise::build(&spec(0.25, GammaRule::Proportional { q0: 0.0 }), &g).unwrap();
    assert!(sn.sigma3.iter().all(|c| c.norm() == 0.0));
    let t = CovarianceTables::compute(&sn, &g);
    for i in 0..3 {
        assert!(t.entries[i][2].iter().all(|v| *v == 0.0));
        assert!(t.entries[2][i].iter().all(|v| *v == 0.0));
    }
    assert!(t.constants.grad_qh3_0.iter().flatten().all(|v| *v == 0.0));
}

#[test]
fn covariance_structure_at_desk_scale() {
    let g = Grid::new(128).unwrap();
    let sn = SpectralNoise::build(&spec(0.125, GammaRule::default()), &g).unwrap();
    let t = CovarianceTables::compute(&sn, &g);
    let c = &t.constants;
    for i in 0..2 {
        for j in 0..2 {
            let want = if i == j { 0.5 } else { 0.0 };
            assert!((c.q_h0[i][j] - want).abs() < 1e-8);
        }
    }
    // the table at the origin reproduces Q_H(0)
    let q = t.at(0, 0);
    assert!((q[0][0] - c.q_h0[0][0]).abs() < 1e-12);
    assert!(t.block_parity_defect() < 1e-10);
    assert!(t.transpose_parity_defect() < 1e-10);
    let m = c.grad_qh3_0;
    assert!(m[0][0].abs() < 1e-8 && m[1][1].abs() < 1e-8);
    assert!((m[0][1] + m[1][0]).abs() < 1e-8);
    let e = sym_eigenvalues(&c.hess_q3_0);
    assert!(e[1] <= 1e-12);
    assert!((c.hess_q3_0[0][1] - c.hess_q3_0[1][0]).abs() < 1e-12);
}

#[test]
fn tables_factor_as_rank_one_per_mode() {
    let g = Grid::new(64).unwrap();
    let sn = SpectralNoise::build(&spec(0.25, GammaRule::Proportional { q0: 0.7 }), &g).unwrap();
    let t = CovarianceTables::compute(&sn, &g);
    let sig = [&sn.sigma_h1, &sn.sigma_h2, &sn.sigma3];
    for i in 0..3 {
        for j in 0..3 {
            let hat = g.forward(&t.entries[i][j]);
            for (idx, h) in hat.coefficients().iter().enumerate() {
                let want = sig[i][idx] * sig[j][idx].conj();
                assert!((h - want).norm() < 1e-10);
            }
        }
    }
}

#[test]
fn derivatives_of_tables_match_constants() {
    let g = Grid::new(64).unwrap();
    let sn = SpectralNoise::build(&spec(0.25, GammaRule::Proportional { q0: 0.7 }), &g).unwrap();
    let t = CovarianceTables::compute(&sn, &g);
    // differentiate the tabulated functions and read the value at the origin
    for j in 0..2 {
        let q = g.forward(&t.entries[j][2]);
        for m in 0..2 {
            let d = g.derivative(&q, m);
            let v = g.eval_at(&d, 0.0, 0.0);
            assert!((v - t.constants.grad_qh3_0[j][m]).abs() < 1e-10);
        }
    }
    let q33 = g.forward(&t.entries[2][2]);
    for a in 0..2 {
        for b in 0..2 {
            let d = g.derivative(&g.derivative(&q33, a), b);
            let v = g.eval_at(&d, 0.0, 0.0);
            assert!((v - t.constants.hess_q3_0[a][b]).abs() < 1e-10);
        }
    }
}

#[test]
fn operator_norm_below_convolution_bound() {
    // ‖K‖_{L¹} on the torus by polar quadrature of |∇G| around the origin
    let gl = vortexlab::quadrature::GaussLegendre::new(24);
    let k_l1 = gl.composite(0.0, 2.0 * PI, 32, |phi| {
        let (c, s) = (phi.cos(), phi.sin());
        let rmax = 0.5 / c.abs().max(s.abs());
        gl.composite(0.0, rmax, 8, |r| {
            let d = green::green_gradient(r * c, r * s);
            d[0].hypot(d[1]) * r
        })
    });
    assert!(k_l1 > 0.0 && k_l1.is_finite());
    for &(n, ell) in &[(64usize, 0.25f64), (128, 0.125)] {
        let g = Grid::new(n).unwrap();
        let sn = SpectralNoise::build(&spec(ell, GammaRule::default()), &g).unwrap();
        let c = CovarianceConstants::from_noise(&sn, &g);
        assert!(c.opnorm_qh <= sn.gamma * sn.gamma * k_l1 * k_l1);
    }
}

#[test]
fn increments_have_the_right_covariance() {
    let g = Grid::new(32).unwrap();
    let sn = SpectralNoise::build(&spec(0.25, GammaRule::Proportional { q0: 1.0 }), &g).unwrap();
    let c = CovarianceConstants::from_noise(&sn, &g);
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let dt = 0.01;
    let m = 100_000;
    let mut sum = [[0.0; 2]; 2];
    let mut sum_sq = [[0.0; 2]; 2];
    let mut mean = [0.0; 3];
    for s in 0..m {
        let inc = sn.sample_increment(&g, dt, &mut rng).unwrap();
        let w = [
            g.eval_at(&inc.dw_h.u1, 0.0, 0.0),
            g.eval_at(&inc.dw_h.u2, 0.0, 0.0),
            g.eval_at(&inc.dw3, 0.0, 0.0),
        ];
        for i in 0..2 {
            for j in 0..2 {
                let v = w[i] * w[j] / dt;
                sum[i][j] += v;
                sum_sq[i][j] += v * v;
            }
        }
        if s < 10_000 {
            for i in 0..3 {
                mean[i] += w[i];
            }
        }
    }
    for i in 0..2 {
        for j in 0..2 {
            let mu = sum[i][j] / m as f64;
            let se = ((sum_sq[i][j] / m as f64 - mu * mu) / m as f64).sqrt();
            assert!((mu - c.q_h0[i][j]).abs() < 3.0 * se, "({i},{j}): {mu} vs {}", c.q_h0[i][j]);
        }
    }
    let sd = [c.q_h0[0][0], c.q_h0[1][1], c.opnorm_q3.max(1e-300)];
    let q33: f64 = sn
        .sigma3
        .iter()
        .zip(g.weight())
        .map(|(s, w)| w * s.norm_sqr())
        .sum();
    let var = [sd[0] * dt, sd[1] * dt, q33 * dt];
    for i in 0..3 {
        let se = (var[i] / 10_000.0).sqrt();
        assert!((mean[i] / 10_000.0).abs() < 4.0 * se);
    }
}

#[test]
fn increments_are_reproducible_per_stream() {
    let g = Grid::new(32).unwrap();
    let sn = SpectralNoise::build(&spec(0.25, GammaRule::default()), &g).unwrap();
    let draw = |stream: u64| {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        rng.set_stream(stream);
        sn.sample_increment(&g, 1e-3, &mut rng).unwrap()
    };
    let (a, b, c) = (draw(3), draw(3), draw(4));
    assert_eq!(a.dw_h, b.dw_h);
    assert_eq!(a.dw3, b.dw3);
    assert_ne!(a.dw3, c.dw3);
    assert!(sn.sample_increment(&g, 0.0, &mut ChaCha20Rng::seed_from_u64(1)).is_err());
}

#[test]
fn hypothesis_conditions_on_calibrated_ladders() {
    let ladder = [0.25, 0.125, 0.0625];
    let n_for = |ell: f64| ((16.0 / ell) as usize).max(64);
    let prop: Vec<_> = ladder.iter().map(|&l| spec(l, GammaRule::default())).collect();
    let r = hypothesis_report(&prop, n_for).unwrap();
    assert!(r.verdicts.a_limit_covariance);
    assert!(r.verdicts.b_vanishing_opnorms);
    assert!(r.verdicts.c_limit_matrix);
    assert!(r.verdicts.d_bounded_hessian);
    for row in &r.rows {
        assert!((row.grad_qh3_0[0][1] + 0.5).abs() < 0.125);
        assert!((row.grad_qh3_0[1][0] - 0.5).abs() < 0.125);
    }
    let sub: Vec<_> = ladder
        .iter()
        .map(|&l| spec(l, GammaRule::Subordinate { p: 1.0 }))
        .collect();
    let r = hypothesis_report(&sub, n_for).unwrap();
    assert!(r.verdicts.c_limit_matrix && r.verdicts.d_bounded_hessian);
    let norms: Vec<f64> = r
        .rows
        .iter()
        .map(|row| vortexlab::covariance::mat_norm(&row.grad_qh3_0))
        .collect();
    assert!(norms.windows(2).all(|w| w[1] < w[0]));
}
