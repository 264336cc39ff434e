use std::f64::consts::TAU;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{stream_rng, GnssConfig, TruthEpoch, MEASUREMENT_STREAM};
use crate::geo::EnuPoint;
use crate::kalman::{GnssEpoch, SatelliteObs};

/// Error terms that went into one satellite's observables.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RangeErrors {
    /// Positive multipath bias on the pseudorange (m), zero when clear.
    pub multipath: f64,
    pub range_noise: f64,
    /// Includes the extra multipath rate noise.
    pub rate_noise: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasuredEpoch {
    pub gnss: GnssEpoch,
    pub clock_bias: f64,
    pub clock_drift: f64,
    /// Same order as `gnss.satellites`.
    pub errors: Vec<RangeErrors>,
}

/// Initial satellite azimuth/elevation pairs in radians.
///
/// Azimuths are stratified so the sky is covered evenly; elevations are
/// uniform between the configured limits.
pub fn satellite_sky(cfg: &GnssConfig, rng: &mut impl Rng) -> Vec<(f64, f64)> {
    let n = cfg.satellites;
    let (lo, hi) = (cfg.min_elevation.to_radians(), cfg.max_elevation.to_radians());
    (0..n)
        .map(|s| {
            let az = TAU * (s as f64 + rng.gen::<f64>()) / n as f64;
            let el = if hi > lo { rng.gen_range(lo..hi) } else { lo };
            (az, el)
        })
        .collect()
}

fn satellite_state(radius: f64, omega: f64, az: f64, el: f64) -> (EnuPoint, Vector3<f64>) {
    let (se, ce) = el.sin_cos();
    let (sa, ca) = az.sin_cos();
    let pos = EnuPoint::new(radius * ce * ca, radius * ce * sa, radius * se);
    let vel = Vector3::new(-sa, ca, 0.0) * (radius * ce * omega);
    (pos, vel)
}

const MIN_SIGMA: f64 = 1e-3;

#[derive(Clone, Copy)]
struct Multipath {
    bias: f64,
    active: bool,
}

/// Pseudoranges and rates along a trajectory.
///
/// Satellites sit on a sphere around the local origin and rotate in azimuth.
/// The receiver clock is a random walk on bias and drift. Multipath follows
/// a two-state Markov chain per satellite with the configured stationary
/// probability and mean episode length; each episode draws a fresh positive
/// bias.
pub fn generate_measurements(truth: &[TruthEpoch], cfg: &GnssConfig, seed: u64) -> Vec<MeasuredEpoch> {
    let mut rng = stream_rng(seed, MEASUREMENT_STREAM);
    let sky = satellite_sky(cfg, &mut rng);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let p = cfg.multipath_probability.clamp(0.0, 1.0);
    let dur = cfg.multipath_duration.max(1.0);
    let p_off = 1.0 / dur;
    let p_on = if p < 1.0 { (p / (1.0 - p) / dur).min(1.0) } else { 1.0 };
    let [bias_lo, bias_hi] = cfg.multipath_bias;
    let draw_bias = |rng: &mut rand_chacha::ChaCha8Rng| {
        if bias_hi > bias_lo {
            rng.gen_range(bias_lo..bias_hi)
        } else {
            bias_lo
        }
    };

    let mut mp: Vec<Multipath> = (0..sky.len())
        .map(|_| {
            let active = rng.gen_bool(p);
            Multipath {
                bias: if active { draw_bias(&mut rng) } else { 0.0 },
                active,
            }
        })
        .collect();
    let mut bias = cfg.clock_bias;
    let mut drift = cfg.clock_drift;
    let mut prev_time: Option<f64> = None;
    let mut out = Vec::with_capacity(truth.len());
    for t in truth {
        if let Some(t0) = prev_time {
            let dt = t.time - t0;
            bias += drift * dt + (cfg.clock_bias_noise * dt).sqrt() * std_normal.sample(&mut rng);
            drift += (cfg.clock_drift_noise * dt).sqrt() * std_normal.sample(&mut rng);
            for m in mp.iter_mut() {
                if m.active {
                    if rng.gen_bool(p_off) {
                        m.active = false;
                        m.bias = 0.0;
                    }
                } else if rng.gen_bool(p_on) {
                    m.active = true;
                    m.bias = draw_bias(&mut rng);
                }
            }
        }
        prev_time = Some(t.time);

        let mut satellites = Vec::with_capacity(sky.len());
        let mut errors = Vec::with_capacity(sky.len());
        for (&(az0, el), m) in sky.iter().zip(&mp) {
            let (pos, vel) = satellite_state(cfg.shell_radius, cfg.orbit_rate, az0 + cfg.orbit_rate * t.time, el);
            let d = Vector3::new(pos.east - t.position.east, pos.north - t.position.north, pos.up - t.position.up);
            let range = d.norm();
            let u = d / range;
            let range_noise = cfg.range_sigma * std_normal.sample(&mut rng);
            let mut rate_noise = cfg.rate_sigma * std_normal.sample(&mut rng);
            if m.active {
                rate_noise += cfg.multipath_rate_sigma * std_normal.sample(&mut rng);
            }
            satellites.push(SatelliteObs {
                position: pos,
                velocity: vel,
                pseudorange: range + bias + m.bias + range_noise,
                pseudorange_rate: u.dot(&(vel - t.velocity)) + drift + rate_noise,
                // a zero sigma would give the filter infinite weights
                range_sigma: cfg.range_sigma.max(MIN_SIGMA),
                rate_sigma: cfg.rate_sigma.max(MIN_SIGMA),
            });
            errors.push(RangeErrors {
                multipath: m.bias,
                range_noise,
                rate_noise,
            });
        }
        out.push(MeasuredEpoch {
            gnss: GnssEpoch {
                time: t.time,
                satellites,
            },
            clock_bias: bias,
            clock_drift: drift,
            errors,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman::{least_squares_fix, least_squares_velocity};
    use crate::roadnet::RoadDefaults;
    use crate::sim::{generate_network, generate_trajectory, DriveConfig, NetworkConfig};

    fn truth(seed: u64) -> Vec<TruthEpoch> {
        let net = generate_network(&NetworkConfig::default(), seed).unwrap();
        let g = net.build_graph(&RoadDefaults::default()).unwrap();
        generate_trajectory(&g, &DriveConfig::default(), seed).unwrap()
    }

    fn quiet() -> GnssConfig {
        GnssConfig {
            range_sigma: 0.0,
            rate_sigma: 0.0,
            multipath_probability: 0.0,
            clock_bias_noise: 0.0,
            clock_drift_noise: 0.0,
            ..GnssConfig::default()
        }
    }

    fn percentile(mut v: Vec<f64>, q: f64) -> f64 {
        v.sort_by(f64::total_cmp);
        let pos = q * (v.len() - 1) as f64;
        let (i, f) = (pos.floor() as usize, pos.fract());
        if i + 1 < v.len() {
            v[i] + f * (v[i + 1] - v[i])
        } else {
            v[i]
        }
    }

    fn ls_errors(t: &[TruthEpoch], m: &[MeasuredEpoch]) -> Vec<f64> {
        t.iter()
            .zip(m)
            .map(|(t, m)| least_squares_fix(&m.gnss).unwrap().position.distance_2d(&t.position))
            .collect()
    }

    #[test]
    fn sky_within_limits() {
        let cfg = GnssConfig::default();
        let mut rng = stream_rng(0, 9);
        let sky = satellite_sky(&cfg, &mut rng);
        assert_eq!(sky.len(), 8);
        for (k, &(az, el)) in sky.iter().enumerate() {
            assert!(az >= TAU * k as f64 / 8.0 && az < TAU * (k + 1) as f64 / 8.0);
            assert!(el >= 15f64.to_radians() && el <= 85f64.to_radians());
        }
    }

    #[test]
    fn satellite_velocity_is_position_derivative() {
        let (r, w, el) = (2.2e7, 1.46e-4, 0.7);
        let h = 1e-3;
        let (p0, v) = satellite_state(r, w, 1.0, el);
        let (p1, _) = satellite_state(r, w, 1.0 + w * h, el);
        let fd = Vector3::new(p1.east - p0.east, p1.north - p0.north, p1.up - p0.up) / h;
        assert!((fd - v).norm() < 1e-3 * v.norm());
    }

    #[test]
    fn noise_free_fix_is_exact() {
        let t = truth(1);
        let m = generate_measurements(&t, &quiet(), 1);
        for (t, m) in t.iter().zip(&m) {
            let fix = least_squares_fix(&m.gnss).unwrap();
            assert!(fix.position.distance(&t.position) < 1e-6);
            assert!((fix.clock_bias - m.clock_bias).abs() < 1e-6);
            let (vel, drift, _) = least_squares_velocity(&m.gnss, &fix.position).unwrap();
            assert!((vel - t.velocity).norm() < 1e-6);
            assert!((drift - m.clock_drift).abs() < 1e-6);
        }
    }

    #[test]
    fn errors_reconstruct_the_measurements() {
        let t = truth(2);
        let m = generate_measurements(&t, &GnssConfig::urban(), 2);
        let mut biased = 0;
        for (t, m) in t.iter().zip(&m) {
            for (s, e) in m.gnss.satellites.iter().zip(&m.errors) {
                let range = s.position.distance(&t.position);
                let r = s.pseudorange - range - m.clock_bias - e.multipath - e.range_noise;
                assert!(r.abs() < 1e-6, "{r}");
                if e.multipath > 0.0 {
                    assert!((5.0..60.0).contains(&e.multipath));
                    biased += 1;
                }
            }
        }
        let frac = biased as f64 / (t.len() * 8) as f64;
        assert!((0.2..0.4).contains(&frac), "multipath fraction {frac}");
    }

    #[test]
    fn ls_accuracy_matches_noise_level() {
        let t = truth(3);
        let cfg = GnssConfig {
            multipath_probability: 0.0,
            ..GnssConfig::default()
        };
        let m = generate_measurements(&t, &cfg, 3);
        let he50 = percentile(ls_errors(&t, &m), 0.5);
        assert!((2.0..=12.0).contains(&he50), "{he50}");
    }

    #[test]
    fn urban_worse_than_open_sky() {
        let t = truth(4);
        let urban = percentile(ls_errors(&t, &generate_measurements(&t, &GnssConfig::urban(), 4)), 0.95);
        let open = percentile(ls_errors(&t, &generate_measurements(&t, &GnssConfig::open_sky(), 4)), 0.95);
        assert!(urban >= 2.0 * open, "urban {urban} open {open}");
    }

    #[test]
    fn deterministic() {
        let t = truth(5);
        assert_eq!(
            generate_measurements(&t, &GnssConfig::urban(), 7),
            generate_measurements(&t, &GnssConfig::urban(), 7)
        );
    }
}
