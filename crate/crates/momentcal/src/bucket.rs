//! Unit-interval projection and prediction bucketing.
//!
//! Predictions live in `[0,1]` and are bucketed into `m` half-open intervals
//! `[(i-1)/m, i/m)` for `i = 1..m`, with the last bucket closed at 1 so that
//! bucket membership is a function of the prediction. Bucket edges are the
//! `f64` values `i/m`, so membership is exact in double precision.

use crate::error::{Error, Result};

/// Clamp a value into `[0,1]`.
pub fn project_unit(v: f64) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::NonFinite(v));
    }
    Ok(clamp01(v))
}

#[inline]
pub(crate) fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// 1-based bucket index of `v` among `m` width-`1/m` buckets.
pub fn bucket_index(v: f64, m: u32) -> Result<u32> {
    if m == 0 {
        return Err(Error::InvalidParameter("bucket count must be positive".into()));
    }
    if !v.is_finite() {
        return Err(Error::NonFinite(v));
    }
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::OutOfUnitRange { value: v });
    }
    Ok(bucket_of(v, m))
}

/// Infallible bucketing for values already known to lie in `[0,1]`.
#[inline]
pub(crate) fn bucket_of(v: f64, m: u32) -> u32 {
    debug_assert!((0.0..=1.0).contains(&v));
    let mf = f64::from(m);
    let first = (v * mf).floor() as i64 + 1;
    if first >= i64::from(m) {
        if v >= edge(m - 1, mf) {
            return m;
        }
    }
    let mut i = first.clamp(1, i64::from(m)) as u32;
    // The floating-point product can land one bucket off the half-open
    // convention near edges (e.g. 0.3 * 10 < 3); settle by comparing against
    // the exact f64 edges.
    while i < m && v >= edge(i, mf) {
        i += 1;
    }
    while i > 1 && v < edge(i - 1, mf) {
        i -= 1;
    }
    i
}

#[inline]
fn edge(i: u32, mf: f64) -> f64 {
    f64::from(i) / mf
}
