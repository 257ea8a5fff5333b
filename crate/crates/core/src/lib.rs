//! Climate-grid ingestion and neural wind power forecasting.
//!
//! The pipeline runs in stages:
//!
//! 1. [`grid_io`] reads a gridded climate bundle (wind speed, surface
//!    pressure on a rotated-pole grid), a list of wind-farm locations and an
//!    hourly power series.
//! 2. [`geo`] maps each location into the grid's rotated frame and
//!    [`spatial`] snaps it to the closest grid node with a KD-tree.
//! 3. [`interpolate`] evaluates every field at every location and time step
//!    (bilinear, with nearest-node fallback).
//! 4. [`dataset`] resamples power, scales features to `[-1, 1]`, assembles
//!    the five-feature sample table and cuts sequence windows.
//! 5. [`neural`] trains a SIREN MLP, a stacked LSTM or an LSTM/Transformer
//!    hybrid with hand-derived gradients and Adam.
//! 6. [`report`] computes metrics, histograms and SVG plots; [`cli`] wires
//!    the stages to the `wgf` command.
//!
//! The numeric kernels (rotation, KD-tree, multilinear interpolation,
//! networks, schedulers, metrics) are generic over [`Real`]; the aliases at
//! the bottom of this file fix them to `f64`, which is what the pipeline
//! uses.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

pub mod cli;
pub mod config;
pub mod dataset;
pub mod geo;
pub mod grid_io;
pub mod interpolate;
pub mod neural;
pub mod report;
pub mod spatial;
pub mod synth;

/// Floating point scalar used by the numeric kernels: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type GeoCoord = geo::GeoCoord<f64>;
pub type PoleSpec = geo::PoleSpec<f64>;
pub type KdTree = spatial::KdTree<f64>;
pub type NetworkParams = neural::NetworkParams<f64>;
pub type Gradients = neural::Gradients<f64>;
pub type SeqBatch = neural::SeqBatch<f64>;
pub type OptimizerState = neural::AdamState<f64>;
pub type Metrics = report::Metrics<f64>;

pub type GeoCoordF32 = geo::GeoCoord<f32>;
pub type KdTreeF32 = spatial::KdTree<f32>;
pub type NetworkParamsF32 = neural::NetworkParams<f32>;
