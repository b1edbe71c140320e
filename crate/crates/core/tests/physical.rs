use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;

use risurllc::channel::{draw_channels, los_channels};
use risurllc::harness::{baseline_scores, mean_std};
use risurllc::precode::{equal_blocklengths, mmse_precoder, random_phase_decision, zf_precoder, Precoder};
use risurllc::rng::{substream, Domain};
use risurllc::scenario::{geometry, load_config, noise_power, ScenarioConfig};

#[test]
fn noise_power_examples() {
    let cfg = ScenarioConfig::default();
    let want = 10f64.powf(-15.1);
    assert!((noise_power(&cfg) - want).abs() <= 1e-12 * want);
    let unit = ScenarioConfig {
        noise_figure_db: 0.0,
        bandwidth: 1.0,
        ..ScenarioConfig::default()
    };
    let n0 = 10f64.powf((-174.0 - 30.0) / 10.0);
    assert!((noise_power(&unit) - n0).abs() <= 1e-12 * n0);
    let wide = ScenarioConfig {
        bandwidth: 2e5,
        ..ScenarioConfig::default()
    };
    let gain_db = 10.0 * (noise_power(&wide) / noise_power(&cfg)).log10();
    assert!((gain_db - 10.0 * 2f64.log10()).abs() < 1e-12);
}

#[test]
fn geometry_examples() {
    let cfg = ScenarioConfig {
        ris_height: 12.5,
        actuator_positions: vec![[40.0, 40.0], [32.0, 40.0], [48.0, 40.0], [64.0, 40.0]],
        ..ScenarioConfig::default()
    };
    let g = geometry(&cfg).unwrap();
    assert!((g.bs_to_ris.distance - 40.0).abs() < 1e-12);
    assert_eq!(g.bs_to_ris.elevation, 0.0);
    let planar: f64 = 40.0;
    let dz: f64 = 1.5 - 12.5;
    assert!((g.ris_to_actuators[0].distance - (planar * planar + dz * dz).sqrt()).abs() < 1e-12);
    assert!((g.ris_to_actuators[0].elevation - (dz / planar).atan()).abs() < 1e-12);

    let degenerate = ScenarioConfig {
        actuator_positions: vec![[40.0, 0.0], [32.0, 40.0], [48.0, 40.0], [64.0, 40.0]],
        ..ScenarioConfig::default()
    };
    assert!(geometry(&degenerate).unwrap_err().is_config());
}

#[test]
fn config_examples() {
    let (sc, learn) = load_config("").unwrap();
    assert_eq!(sc, ScenarioConfig::default());
    assert_eq!((sc.num_actuators, sc.bs_antennas(), sc.ris_elements()), (4, 4, 16));
    assert_eq!(sc.p_total, 1e-3);
    assert_eq!(sc.eps_th, 1e-8);
    assert_eq!(sc.total_blocklength, 100);
    assert_eq!(sc.beta_min, 0.4);
    assert_eq!(sc.bs_height, 12.5);
    assert_eq!(learn.tau, 0.005);
    assert_eq!(learn.buffer_capacity, 10_000);
    assert_eq!(learn.batch_size, 64);
    assert_eq!(learn.policy_delay, 4);
    assert!((learn.sigma_smooth.powi(2) - 0.1).abs() < 1e-15);
    assert!(load_config("[learn]\ngamma = 1.0\n").unwrap_err().is_config());
    assert!(load_config("[scenario]\nmin_blocklength = [30, 30, 30, 30]\n").unwrap_err().is_config());
}

#[test]
fn channel_moments_match_rician_model() {
    let cfg = ScenarioConfig::default();
    let geom = geometry(&cfg).unwrap();
    let los = los_channels(&cfg, &geom).unwrap();
    let n_draws = 4000;
    let (n, m) = (cfg.ris_elements(), cfg.bs_antennas());
    let mut mean = vec![Complex64::new(0.0, 0.0); n * m];
    let mut power = vec![0.0; n * m];
    let mut rng = substream(11, Domain::Scratch, 0);
    for _ in 0..n_draws {
        let ch = draw_channels(&cfg, &geom, &mut rng).unwrap();
        for (i, z) in ch.h.data().iter().enumerate() {
            mean[i] += z / n_draws as f64;
            power[i] += z.norm_sqr() / n_draws as f64;
        }
    }
    let z = cfg.rician_incident;
    let beta = los.pathloss_inc;
    for i in 0..n * m {
        // E[h] is the scaled LoS term, E|h|^2 the path gain.
        let want = los.h.data()[i] * (z / (z + 1.0)).sqrt();
        let sd = (beta / (z + 1.0) / n_draws as f64).sqrt();
        assert!((mean[i] - want).norm() < 5.0 * sd, "entry {i}");
        assert!((power[i] - beta).abs() < 0.05 * beta, "entry {i}");
    }
}

fn random_rows<R: Rng>(rng: &mut R, k: usize, m: usize) -> Vec<Vec<Complex64>> {
    (0..k)
        .map(|_| (0..m).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect())
        .collect()
}

#[test]
fn equal_blocklength_examples() {
    assert_eq!(equal_blocklengths(100, 4), vec![25; 4]);
    assert_eq!(equal_blocklengths(102, 4), vec![26, 26, 25, 25]);
}

#[test]
fn baselines_are_reproducible_and_use_full_power() {
    let cfg = ScenarioConfig::default();
    let geom = geometry(&cfg).unwrap();
    for i in 0..20 {
        let ch = draw_channels(&cfg, &geom, &mut substream(1, Domain::EvalChannel, i)).unwrap();
        for p in [Precoder::ZeroForcing, Precoder::Mmse { sigma2: noise_power(&cfg) }] {
            let a = random_phase_decision(&cfg, &ch, p, &mut substream(1, Domain::EvalAux, i)).unwrap();
            let b = random_phase_decision(&cfg, &ch, p, &mut substream(1, Domain::EvalAux, i)).unwrap();
            assert_eq!(a, b);
            a.check_constraints(&cfg).unwrap();
            assert!((a.bf.total_power() - cfg.p_total).abs() <= 1e-12 * cfg.p_total);
            assert_eq!(a.c, vec![25; 4]);
        }
    }
}

#[test]
fn mmse_beats_zf_in_shannon_sum_at_low_power() {
    let cfg = ScenarioConfig {
        p_total: 1e-4,
        ..ScenarioConfig::default()
    };
    let sigma2 = noise_power(&cfg);
    let zf = baseline_scores(&cfg, Precoder::ZeroForcing, 21, 100).unwrap();
    let mmse = baseline_scores(&cfg, Precoder::Mmse { sigma2 }, 21, 100).unwrap();
    let zf_mean = mean_std(&zf.iter().map(|s| s.shannon).collect::<Vec<_>>()).0;
    let mmse_mean = mean_std(&mmse.iter().map(|s| s.shannon).collect::<Vec<_>>()).0;
    assert!(mmse_mean >= zf_mean, "mmse {mmse_mean} zf {zf_mean}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn precoders_spend_the_budget(seed in 0u64..100_000, p in 1e-6f64..1.0) {
        let mut rng = substream(seed, Domain::Scratch, 0);
        let g = random_rows(&mut rng, 4, 4);
        let zf = zf_precoder(&g, p).unwrap();
        let mmse = mmse_precoder(&g, p, 1e-3).unwrap();
        prop_assert!((zf.total_power() - p).abs() <= 1e-12 * p);
        prop_assert!((mmse.total_power() - p).abs() <= 1e-12 * p);
        for (k, gk) in g.iter().enumerate() {
            let sig = risurllc::cmat::dot(gk, &zf.w[k]).norm_sqr();
            for (i, wi) in zf.w.iter().enumerate() {
                if i != k {
                    prop_assert!(risurllc::cmat::dot(gk, wi).norm_sqr() <= 1e-9 * sig);
                }
            }
        }
    }

    #[test]
    fn steering_entries_are_unit_modulus(az in -PI..PI, el in -PI / 2.0..PI / 2.0, n1 in 1usize..6, n2 in 1usize..6) {
        let v = risurllc::channel::steering_vector(&risurllc::channel::SteeringSpec {
            azimuth: az,
            elevation: el,
            n1,
            n2,
            spacing_ratio: 0.5,
        });
        prop_assert_eq!(v.len(), n1 * n2);
        prop_assert!(v.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        prop_assert_eq!(v[0], Complex64::new(1.0, 0.0));
    }
}
