//! Multilinear interpolation on rectilinear grids and the per-time-step
//! mapping of bundle fields onto target locations.

use thiserror::Error;

use crate::geo::{rotate_coordinates, GeoCoord, GeoError, PoleSpec};
use crate::grid_io::{GridBundle, TargetSet};
use crate::spatial::{IndexError, KdTree};
use crate::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InterpError {
    #[error("query outside the grid along dimension {0}")]
    OutOfBounds(usize),
    #[error("axis {0} needs at least two strictly increasing coordinates")]
    DegenerateAxis(usize),
    #[error("value array has {got} entries, axes imply {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("corner value is not finite")]
    NonFiniteCorner,
    #[error("unknown variable {0:?}")]
    UnknownVariable(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// Evaluates the multilinear interpolant of `values` at `query`.
///
/// `axes[d]` holds the strictly increasing coordinates of dimension `d`;
/// `values` is row-major with the last dimension fastest. Each corner of the
/// enclosing cell is weighted by the product of per-axis weights
/// `(x1 - x) / (x1 - x0)` and `(x - x0) / (x1 - x0)`. Grid nodes are
/// reproduced exactly.
pub fn multilinear<T: Real>(axes: &[&[T]], values: &[T], query: &[T]) -> Result<T, InterpError> {
    let n = axes.len();
    assert_eq!(query.len(), n, "query dimension must match axes");
    let mut expected = 1usize;
    for (d, ax) in axes.iter().enumerate() {
        if ax.len() < 2 || ax.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(InterpError::DegenerateAxis(d));
        }
        expected *= ax.len();
    }
    if values.len() != expected {
        return Err(InterpError::ShapeMismatch {
            expected,
            got: values.len(),
        });
    }

    // Per-dimension lower index and the (lower, upper) weights.
    let mut lower = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for (d, (ax, &x)) in axes.iter().zip(query).enumerate() {
        if !(x >= ax[0] && x <= ax[ax.len() - 1]) {
            return Err(InterpError::OutOfBounds(d));
        }
        // Last interval whose left node is <= x, capped so i + 1 exists.
        let i = (ax.partition_point(|&a| a <= x).max(1) - 1).min(ax.len() - 2);
        let (x0, x1) = (ax[i], ax[i + 1]);
        let span = x1 - x0;
        lower.push(i);
        weights.push(((x1 - x) / span, (x - x0) / span));
    }

    let mut strides = vec![1usize; n];
    for d in (0..n.saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * axes[d + 1].len();
    }

    let mut acc = T::zero();
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    for corner in 0..(1usize << n) {
        let mut w = T::one();
        let mut offset = 0usize;
        for d in 0..n {
            let upper = (corner >> (n - 1 - d)) & 1 == 1;
            let (wl, wu) = weights[d];
            w *= if upper { wu } else { wl };
            offset += (lower[d] + upper as usize) * strides[d];
        }
        let f = values[offset];
        if !f.is_finite() {
            return Err(InterpError::NonFiniteCorner);
        }
        lo = lo.min(f);
        hi = hi.max(f);
        acc += w * f;
    }
    // The weights sum to one only up to rounding; keep the result inside the
    // corner range, which the exact interpolant never leaves.
    Ok(acc.max(lo).min(hi))
}

/// Grid node selected for a target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snap {
    pub lat_index: usize,
    pub lon_index: usize,
    /// Target position in the bundle's rotated frame.
    pub rotated: GeoCoord<f64>,
    /// Planar distance from the rotated position to the node, in degrees.
    pub distance: f64,
}

/// Grid nodes of `bundle` as `[lat, lon]` pairs, lat-major.
pub fn grid_points(bundle: &GridBundle) -> Vec<[f64; 2]> {
    let mut pts = Vec::with_capacity(bundle.lats.len() * bundle.lons.len());
    for &la in &bundle.lats {
        for &lo in &bundle.lons {
            pts.push([la, lo]);
        }
    }
    pts
}

/// Rotates every target into the bundle frame and picks its nearest node.
pub fn snap_targets(bundle: &GridBundle, targets: &TargetSet) -> Result<Vec<Snap>, InterpError> {
    let pts = grid_points(bundle);
    let tree = KdTree::build(&pts)?;
    let pole = PoleSpec::new(bundle.pole_lat_deg, bundle.pole_lon_deg)?;
    let nlon = bundle.lons.len();
    targets
        .points
        .iter()
        .map(|p| {
            let rotated = rotate_coordinates(GeoCoord::new(p.lat_deg, p.lon_deg)?, pole);
            let nn = tree.nearest([rotated.lat_deg, rotated.lon_deg])?;
            Ok(Snap {
                lat_index: nn.index / nlon,
                lon_index: nn.index % nlon,
                rotated,
                distance: nn.distance,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Linear,
    Nearest,
}

/// A field sampled at every target for every time step.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolatedSeries {
    pub variable: String,
    /// Epoch-hours, length T.
    pub times: Vec<f64>,
    pub target_ids: Vec<String>,
    /// `[t][p]` row-major.
    pub values: Vec<f64>,
    /// Same layout as `values`.
    pub method: Vec<Method>,
}

impl InterpolatedSeries {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_targets(&self) -> usize {
        self.target_ids.len()
    }

    #[inline]
    pub fn get(&self, t: usize, p: usize) -> f64 {
        self.values[t * self.target_ids.len() + p]
    }

    /// Time series of target `p`.
    pub fn column(&self, p: usize) -> Vec<f64> {
        (0..self.n_times()).map(|t| self.get(t, p)).collect()
    }

    pub fn fallback_count(&self) -> usize {
        self.method.iter().filter(|m| **m == Method::Nearest).count()
    }

    /// CSV with header `time,<id1>,<id2>,...` and one row per time step.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time");
        for id in &self.target_ids {
            s.push(',');
            s.push_str(id);
        }
        s.push('\n');
        let p = self.n_targets();
        for (t, time) in self.times.iter().enumerate() {
            s.push_str(&time.to_string());
            for v in &self.values[t * p..(t + 1) * p] {
                s.push(',');
                s.push_str(&v.to_string());
            }
            s.push('\n');
        }
        s
    }

    /// Parses the output of [`to_csv`](Self::to_csv). Methods are not
    /// stored in the file and come back as `Linear`.
    pub fn from_csv(variable: &str, text: &str) -> Result<Self, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or("empty file")?;
        let mut cols = header.split(',');
        if cols.next().map(str::trim) != Some("time") {
            return Err("first column must be `time`".into());
        }
        let target_ids: Vec<String> = cols.map(|c| c.trim().to_string()).collect();
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != target_ids.len() + 1 {
                return Err(format!("row {} has {} fields", i + 2, fields.len()));
            }
            let mut nums = fields.iter().map(|f| {
                f.parse::<f64>()
                    .map_err(|_| format!("row {}: bad number {f:?}", i + 2))
            });
            times.push(nums.next().unwrap()?);
            for v in nums {
                values.push(v?);
            }
        }
        let method = vec![Method::Linear; values.len()];
        Ok(Self {
            variable: variable.to_string(),
            times,
            target_ids,
            values,
            method,
        })
    }
}

/// Samples `var` at every target for every time step.
///
/// Each cell is the bilinear interpolant of the `(lat, lon)` slice at the
/// target's rotated position. When that fails (outside the grid or a
/// non-finite corner) the snapped node's value is used instead and the cell
/// is marked [`Method::Nearest`].
pub fn interpolate_field(
    bundle: &GridBundle,
    var: &str,
    targets: &TargetSet,
) -> Result<InterpolatedSeries, InterpError> {
    let v = bundle
        .variable(var)
        .ok_or_else(|| InterpError::UnknownVariable(var.to_string()))?;
    let snaps = snap_targets(bundle, targets)?;
    let (nlat, nlon) = (bundle.lats.len(), bundle.lons.len());
    let slice_len = nlat * nlon;
    let p = targets.len();
    let nt = bundle.times.len();
    let mut values = Vec::with_capacity(nt * p);
    let mut method = Vec::with_capacity(nt * p);
    let mut slice = vec![0.0f64; slice_len];

    let degenerate = nlat < 2 || nlon < 2;
    for t in 0..nt {
        for (dst, &src) in slice
            .iter_mut()
            .zip(&v.data[t * slice_len..(t + 1) * slice_len])
        {
            *dst = src as f64;
        }
        for s in &snaps {
            let linear = if degenerate {
                None
            } else {
                multilinear(
                    &[&bundle.lats, &bundle.lons],
                    &slice,
                    &[s.rotated.lat_deg, s.rotated.lon_deg],
                )
                .ok()
            };
            match linear {
                Some(x) => {
                    values.push(x);
                    method.push(Method::Linear);
                }
                None => {
                    values.push(slice[s.lat_index * nlon + s.lon_index]);
                    method.push(Method::Nearest);
                }
            }
        }
    }
    Ok(InterpolatedSeries {
        variable: var.to_string(),
        times: bundle.times.clone(),
        target_ids: targets.ids(),
        values,
        method,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_io::{TargetPoint, Variable};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bilinear_midpoint() {
        let ax = [0.0, 1.0];
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(multilinear(&[&ax, &ax], &v, &[0.5, 0.5]).unwrap(), 2.5);
    }

    #[test]
    fn errors() {
        let ax = [0.0, 1.0];
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(
            multilinear(&[&ax, &ax], &v, &[0.5, 1.5]),
            Err(InterpError::OutOfBounds(1))
        );
        assert_eq!(
            multilinear(&[&ax, &[0.0][..]], &v[..2], &[0.5, 0.0]),
            Err(InterpError::DegenerateAxis(1))
        );
        assert_eq!(
            multilinear(&[&ax, &[1.0, 1.0][..]], &v, &[0.5, 1.0]),
            Err(InterpError::DegenerateAxis(1))
        );
        assert_eq!(
            multilinear(&[&ax, &ax], &[1.0, f64::NAN, 3.0, 4.0], &[0.5, 0.5]),
            Err(InterpError::NonFiniteCorner)
        );
        assert_eq!(
            multilinear(&[&ax, &ax], &[f64::NAN], &[0.5, 0.5]),
            Err(InterpError::ShapeMismatch { expected: 4, got: 1 })
        );
    }

    fn random_grid(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let mut x = 0.0;
        (0..n)
            .map(|_| {
                x += rng.gen_range(0.1..1.0);
                x
            })
            .collect()
    }

    #[test]
    fn nodes_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let la = random_grid(&mut rng, 5);
        let lo = random_grid(&mut rng, 7);
        let v: Vec<f64> = (0..35).map(|_| rng.gen_range(-10.0..10.0)).collect();
        for i in 0..5 {
            for j in 0..7 {
                let f = multilinear(&[&la, &lo], &v, &[la[i], lo[j]]).unwrap();
                assert_eq!(f.to_bits(), v[i * 7 + j].to_bits());
            }
        }
    }

    // Interpolate along lon in the two bracketing rows, then along lat.
    fn two_pass_oracle(la: &[f64], lo: &[f64], v: &[f64], q: [f64; 2]) -> f64 {
        let find = |ax: &[f64], x: f64| {
            let mut i = 0;
            while i + 2 < ax.len() && ax[i + 1] <= x {
                i += 1;
            }
            i
        };
        let i = find(la, q[0]);
        let j = find(lo, q[1]);
        let nlon = lo.len();
        let lerp = |a: f64, b: f64, x0: f64, x1: f64, x: f64| a + (b - a) * (x - x0) / (x1 - x0);
        let r0 = lerp(v[i * nlon + j], v[i * nlon + j + 1], lo[j], lo[j + 1], q[1]);
        let r1 = lerp(v[(i + 1) * nlon + j], v[(i + 1) * nlon + j + 1], lo[j], lo[j + 1], q[1]);
        lerp(r0, r1, la[i], la[i + 1], q[0])
    }

    #[test]
    fn matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let la = random_grid(&mut rng, 5);
        let lo = random_grid(&mut rng, 7);
        let v: Vec<f64> = (0..35).map(|_| rng.gen_range(-10.0..10.0)).collect();
        for _ in 0..100 {
            let q = [
                rng.gen_range(la[0]..la[4]),
                rng.gen_range(lo[0]..lo[6]),
            ];
            let a = multilinear(&[&la, &lo], &v, &q).unwrap();
            let b = two_pass_oracle(&la, &lo, &v, q);
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn three_dimensional_linear_field_is_exact() {
        let ax0 = [0.0, 0.5, 2.0];
        let ax1 = [-1.0, 1.0];
        let ax2 = [3.0, 4.0, 4.5, 7.0];
        let f = |a: f64, b: f64, c: f64| 1.5 * a - 2.0 * b + 0.25 * c + 3.0;
        let mut v = Vec::new();
        for &a in &ax0 {
            for &b in &ax1 {
                for &c in &ax2 {
                    v.push(f(a, b, c));
                }
            }
        }
        let q = [1.3, 0.2, 5.9];
        let got = multilinear(&[&ax0, &ax1, &ax2], &v, &q).unwrap();
        assert!((got - f(q[0], q[1], q[2])).abs() < 1e-12);
    }

    fn flat_bundle(value: f32) -> GridBundle {
        GridBundle {
            pole_lat_deg: 90.0,
            pole_lon_deg: 0.0,
            times: vec![0.0, 3.0],
            lats: vec![40.0, 45.0, 50.0],
            lons: vec![160.0, 170.0, 180.0],
            variables: vec![Variable {
                name: "w".into(),
                data: vec![value; 18],
            }],
        }
    }

    fn targets(pts: &[(f64, f64)]) -> TargetSet {
        TargetSet::new(
            pts.iter()
                .enumerate()
                .map(|(i, &(la, lo))| TargetPoint {
                    id: format!("t{i}"),
                    lat_deg: la,
                    lon_deg: lo,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn constant_field() {
        // Pole (90, 0) maps lon to 180 - lon.
        let b = flat_bundle(3.25);
        let s = interpolate_field(&b, "w", &targets(&[(42.0, 12.0), (47.5, 5.0)])).unwrap();
        assert_eq!(s.values, vec![3.25; 4]);
        assert!(s.method.iter().all(|m| *m == Method::Linear));
    }

    #[test]
    fn outside_grid_falls_back_to_nearest() {
        let mut b = flat_bundle(0.0);
        for (k, v) in b.variables[0].data.iter_mut().enumerate() {
            *v = k as f32;
        }
        // lat 60 is above the grid; rotated lon 180 - 15 = 165 is nearest 160 or 170.
        let s = interpolate_field(&b, "w", &targets(&[(60.0, 14.0)])).unwrap();
        assert!(s.method.iter().all(|m| *m == Method::Nearest));
        // Node (lat 50, lon 170) in each time slice.
        assert_eq!(s.values, vec![7.0, 16.0]);
    }

    #[test]
    fn snapping_picks_closer_column() {
        let b = flat_bundle(0.0);
        // Rotated lon = 180 - 12 = 168, closer to 170 (index 1) than 160.
        let snaps = snap_targets(&b, &targets(&[(45.0, 12.0)])).unwrap();
        assert_eq!((snaps[0].lat_index, snaps[0].lon_index), (1, 1));
        assert!((snaps[0].distance - 2.0).abs() < 1e-9);
    }

    #[test]
    fn unknown_variable() {
        let b = flat_bundle(0.0);
        assert_eq!(
            interpolate_field(&b, "nope", &targets(&[(45.0, 12.0)])),
            Err(InterpError::UnknownVariable("nope".into()))
        );
    }

    #[test]
    fn csv_round_trip() {
        let b = flat_bundle(1.5);
        let s = interpolate_field(&b, "w", &targets(&[(42.0, 12.0), (47.5, 5.0)])).unwrap();
        let text = s.to_csv();
        assert!(text.starts_with("time,t0,t1\n"));
        let back = InterpolatedSeries::from_csv("w", &text).unwrap();
        assert_eq!(back.values, s.values);
        assert_eq!(back.times, s.times);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn convex_hull(vals in prop::collection::vec(-1e3f64..1e3, 12),
                           a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
                let la = [0.0, 0.3, 1.0];
                let lo = [2.0, 2.5, 3.1, 4.0];
                let q = [a, 2.0 + 2.0 * b];
                let f = multilinear(&[&la, &lo], &vals, &q).unwrap();
                let (lo_v, hi_v) = vals.iter().fold((f64::MAX, f64::MIN), |(l, h), &x| (l.min(x), h.max(x)));
                prop_assert!(f >= lo_v && f <= hi_v);
            }

            #[test]
            fn linear_field_exact(c0 in -5.0f64..5.0, c1 in -5.0f64..5.0, c2 in -5.0f64..5.0,
                                  a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
                let la = [-2.0, -0.5, 1.0, 4.0];
                let lo = [0.0, 1.0, 3.0];
                let f = |x: f64, y: f64| c0 + c1 * x + c2 * y;
                let vals: Vec<f64> = la.iter().flat_map(|&x| lo.iter().map(move |&y| f(x, y))).collect();
                let q = [-2.0 + 6.0 * a, 3.0 * b];
                let got = multilinear(&[&la, &lo], &vals, &q).unwrap();
                let want = f(q[0], q[1]);
                prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
            }
        }
    }
}
