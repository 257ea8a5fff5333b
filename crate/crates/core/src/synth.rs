//! Seeded synthetic inputs: wind-farm locations, rotated-pole grid bundles,
//! power series and a lagged sequence task. Used for the bundled fixtures,
//! tests and desk-scale experiments.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::SampleTable;
use crate::geo::{rotate_coordinates, GeoCoord, PoleSpec};
use crate::grid_io::{
    save_grid_bundle, save_power_series, save_targets, GridBundle, GridIoError, PowerEntry, PowerSeries,
    TargetPoint, TargetSet, Variable,
};
use crate::interpolate::{interpolate_field, InterpolatedSeries};

/// 2020-01-01T00:00Z in epoch-hours.
pub const START_2020: f64 = 18262.0 * 24.0;

/// Bounding box for the synthetic farms (lat_min, lat_max, lon_min, lon_max).
pub const FARM_BOX: (f64, f64, f64, f64) = (47.3, 55.0, 5.9, 15.0);

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub n_times: usize,
    pub n_lat: usize,
    pub n_lon: usize,
    pub start_hours: f64,
    pub step_hours: f64,
    pub pole_lat_deg: f64,
    pub pole_lon_deg: f64,
    /// Padding around the rotated target positions, degrees.
    pub margin_deg: f64,
    pub seed: u64,
}

impl GridSpec {
    /// Eight 3-hourly steps on a 12 × 14 grid.
    pub fn small(seed: u64) -> Self {
        Self {
            n_times: 8,
            n_lat: 12,
            n_lon: 14,
            start_hours: START_2020,
            step_hours: 3.0,
            pole_lat_deg: 39.25,
            pole_lon_deg: -162.0,
            margin_deg: 1.0,
            seed,
        }
    }

    /// A year of 3-hourly steps on a 157 × 182 grid.
    pub fn full_year(seed: u64) -> Self {
        Self {
            n_times: 2928,
            n_lat: 157,
            n_lon: 182,
            ..Self::small(seed)
        }
    }
}

/// `n` farms drawn uniformly from [`FARM_BOX`], ids `WF001`, `WF002`, ...
pub fn synthetic_targets(n: usize, seed: u64) -> TargetSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (la0, la1, lo0, lo1) = FARM_BOX;
    let points = (0..n)
        .map(|i| TargetPoint {
            id: format!("WF{:03}", i + 1),
            // four decimals, as a farm register would list them
            lat_deg: (rng.gen_range(la0..la1) * 1e4).round() / 1e4,
            lon_deg: (rng.gen_range(lo0..lo1) * 1e4).round() / 1e4,
        })
        .collect();
    TargetSet::new(points).expect("generated targets are valid")
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![(a + b) / 2.0];
    }
    (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
}

/// Rotated-frame axes covering every target with `spec.margin_deg` to spare.
pub fn covering_axes(spec: &GridSpec, targets: &TargetSet) -> (Vec<f64>, Vec<f64>) {
    let pole = PoleSpec::new(spec.pole_lat_deg, spec.pole_lon_deg).expect("valid pole");
    let (mut la0, mut la1, mut lo0, mut lo1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in &targets.points {
        let r = rotate_coordinates(GeoCoord::new(p.lat_deg, p.lon_deg).expect("valid target"), pole);
        la0 = la0.min(r.lat_deg);
        la1 = la1.max(r.lat_deg);
        lo0 = lo0.min(r.lon_deg);
        lo1 = lo1.max(r.lon_deg);
    }
    let m = spec.margin_deg;
    (linspace(la0 - m, la1 + m, spec.n_lat), linspace(lo0 - m, lo1 + m, spec.n_lon))
}

/// Bundle whose variable `name` holds `f(t, rotated_lat, rotated_lon)`.
pub fn bundle_from_fn(
    spec: &GridSpec,
    targets: &TargetSet,
    fields: &[(&str, &dyn Fn(usize, f64, f64) -> f64)],
) -> GridBundle {
    let (lats, lons) = covering_axes(spec, targets);
    let times = (0..spec.n_times)
        .map(|k| spec.start_hours + spec.step_hours * k as f64)
        .collect();
    let cells = lats.len() * lons.len();
    let variables = fields
        .iter()
        .map(|(name, f)| {
            let mut data = Vec::with_capacity(spec.n_times * cells);
            for t in 0..spec.n_times {
                for &la in &lats {
                    for &lo in &lons {
                        data.push(f(t, la, lo) as f32);
                    }
                }
            }
            Variable {
                name: name.to_string(),
                data,
            }
        })
        .collect();
    GridBundle {
        pole_lat_deg: spec.pole_lat_deg,
        pole_lon_deg: spec.pole_lon_deg,
        times,
        lats,
        lons,
        variables,
    }
}

/// Smooth wind speed (m/s) and surface pressure (Pa) fields with a
/// seeded, spatially uniform perturbation per time step.
pub fn synthetic_bundle(spec: &GridSpec, targets: &TargetSet) -> GridBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9);
    let wind_noise: Vec<f64> = (0..spec.n_times).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let pres_noise: Vec<f64> = (0..spec.n_times).map(|_| rng.gen_range(-50.0..50.0)).collect();
    let wind = move |t: usize, la: f64, lo: f64| {
        let (phi, lam) = (la.to_radians(), lo.to_radians());
        let k = t as f64;
        let w = 8.0
            + 3.0 * (TAU * k / 24.0 + 0.3).sin()
            + 4.0 * (6.0 * phi).sin() * (5.0 * lam).cos()
            + 0.5 * (TAU * k / 8.0).sin() * (3.0 * phi).cos()
            + wind_noise[t];
        w.max(0.0)
    };
    let pressure = move |t: usize, la: f64, lo: f64| {
        let (phi, lam) = (la.to_radians(), lo.to_radians());
        101_325.0 + 900.0 * (TAU * t as f64 / 56.0).sin() + 400.0 * (4.0 * phi).cos() * (3.0 * lam).sin() + pres_noise[t]
    };
    bundle_from_fn(spec, targets, &[("wind_speed", &wind), ("pressure", &pressure)])
}

/// Clipped cubic turbine curve: zero below 3 m/s and above 25 m/s, cubic
/// ramp to `rated_mw` at 12 m/s, flat in between.
pub fn turbine_curve(w: f64, rated_mw: f64) -> f64 {
    const CUT_IN: f64 = 3.0;
    const RATED: f64 = 12.0;
    const CUT_OUT: f64 = 25.0;
    if !(CUT_IN..=CUT_OUT).contains(&w) {
        0.0
    } else if w >= RATED {
        rated_mw
    } else {
        rated_mw * (w.powi(3) - CUT_IN.powi(3)) / (RATED.powi(3) - CUT_IN.powi(3))
    }
}

/// Hourly power per farm: each field step of `step_hours` hours becomes
/// that many hourly entries carrying `f(wind)`.
pub fn hourly_power(wind: &InterpolatedSeries, step_hours: usize, f: impl Fn(f64) -> f64) -> PowerSeries {
    let mut entries = Vec::with_capacity(wind.n_times() * wind.n_targets() * step_hours);
    for (p, id) in wind.target_ids.iter().enumerate() {
        for (t, &start) in wind.times.iter().enumerate() {
            let v = f(wind.get(t, p));
            for h in 0..step_hours {
                entries.push(PowerEntry {
                    timestamp: start + h as f64,
                    plant_id: id.clone(),
                    power_mw: v,
                });
            }
        }
    }
    PowerSeries::new(entries).expect("generated power is valid")
}

/// Intercept and slope of the linear-target fixture's power law.
pub const LINEAR_POWER: (f64, f64) = (5.0, 2.0);

/// The bundled fixture: [`GridSpec::small`] bundle, six farms and hourly
/// power that is an exact affine function of the interpolated wind.
pub fn small_fixture(seed: u64) -> (GridBundle, TargetSet, PowerSeries) {
    let targets = synthetic_targets(6, seed);
    let bundle = synthetic_bundle(&GridSpec::small(seed), &targets);
    let wind = interpolate_field(&bundle, "wind_speed", &targets).expect("fixture grid covers the farms");
    let (a, b) = LINEAR_POWER;
    let power = hourly_power(&wind, 3, |w| a + b * w);
    (bundle, targets, power)
}

/// Writes `grid.cgrd`, `targets.csv` and `power.csv` for
/// [`small_fixture`] into `dir`.
pub fn write_small_fixture(dir: &Path, seed: u64) -> Result<(), GridIoError> {
    let (bundle, targets, power) = small_fixture(seed);
    save_grid_bundle(&bundle, dir.join("grid.cgrd"))?;
    save_targets(&targets, dir.join("targets.csv"))?;
    save_power_series(&power, dir.join("power.csv"))?;
    Ok(())
}

/// Raw sample table for a task where power depends on the previous step.
///
/// Each farm's wind is a sum of three sinusoids (periods of 1, 3 and 7
/// days at 3-hourly steps, farm-specific phases) plus uniform noise of
/// half-width `noise`; power at step `k` is [`turbine_curve`] of the wind
/// observed at step `k − 1`. A model that sees only the current row cannot
/// recover the noise of the previous one.
pub fn lagged_task(seed: u64, n_targets: usize, n_times: usize, noise: f64) -> SampleTable {
    let targets = synthetic_targets(n_targets, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51ed);
    let periods = [8.0, 24.0, 56.0];
    let amps = [1.5, 3.0, 2.0];
    let mut table = SampleTable::default();
    for (p, tp) in targets.points.iter().enumerate() {
        let phases: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..TAU)).collect();
        let level = rng.gen_range(7.0..9.0);
        // index 0 is the step before the first row
        let wind: Vec<f64> = (0..=n_times)
            .map(|k| {
                let s: f64 = (0..3)
                    .map(|j| amps[j] * (TAU * k as f64 / periods[j] + phases[j]).sin())
                    .sum();
                (level + s + rng.gen_range(-noise..=noise)).max(0.0)
            })
            .collect();
        for k in 0..n_times {
            let pres = 101_325.0 + 600.0 * (TAU * k as f64 / 40.0 + p as f64).sin() + rng.gen_range(-30.0..30.0);
            table.features.push([
                START_2020 + 3.0 * k as f64,
                tp.lon_deg,
                tp.lat_deg,
                wind[k + 1],
                pres,
            ]);
            table.targets.push(turbine_curve(wind[k], 100.0));
            table.provenance.push((k, p));
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interpolate::Method;

    #[test]
    fn targets_deterministic_and_in_box() {
        let a = synthetic_targets(50, 3);
        assert_eq!(a, synthetic_targets(50, 3));
        assert_ne!(a, synthetic_targets(50, 4));
        for p in &a.points {
            assert!((47.3..=55.0).contains(&p.lat_deg) && (5.9..=15.0).contains(&p.lon_deg));
        }
        assert_eq!(a.points[0].id, "WF001");
    }

    #[test]
    fn small_bundle_covers_targets() {
        let (bundle, targets, power) = small_fixture(7);
        bundle.validate().unwrap();
        assert_eq!(bundle.times.len(), 8);
        assert_eq!((bundle.lats.len(), bundle.lons.len()), (12, 14));
        let wind = interpolate_field(&bundle, "wind_speed", &targets).unwrap();
        assert!(wind.method.iter().all(|m| *m == Method::Linear));
        assert_eq!(power.len(), 6 * 8 * 3);
        assert!(wind.values.iter().all(|w| *w >= 0.0));
        let pres = interpolate_field(&bundle, "pressure", &targets).unwrap();
        assert!(pres.values.iter().all(|p| (99_000.0..104_000.0).contains(p)));
    }

    #[test]
    fn turbine_curve_shape() {
        assert_eq!(turbine_curve(2.0, 100.0), 0.0);
        assert_eq!(turbine_curve(3.0, 100.0), 0.0);
        assert_eq!(turbine_curve(12.0, 100.0), 100.0);
        assert_eq!(turbine_curve(20.0, 100.0), 100.0);
        assert_eq!(turbine_curve(26.0, 100.0), 0.0);
        let mid = turbine_curve(8.0, 100.0);
        assert!((mid - 100.0 * (512.0 - 27.0) / (1728.0 - 27.0)).abs() < 1e-12);
    }

    #[test]
    fn lagged_task_shape() {
        let t = lagged_task(1, 4, 50, 1.0);
        assert_eq!(t.len(), 200);
        assert_eq!(t.streams().len(), 4);
        // power at k follows the wind stored at k - 1
        for k in 1..50 {
            assert_eq!(t.targets[k], turbine_curve(t.features[k - 1][3], 100.0));
        }
    }
}
