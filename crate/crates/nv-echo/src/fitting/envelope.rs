//! Envelope extraction for revival-modulated decay traces.
//!
//! ¹³C rephasing superimposes periodic revival peaks on the monotonic
//! electron-bath decay; fitting the noise model wants the envelope through
//! the revival maxima. A point survives when it is the maximum among all
//! points within ±window/2 of it (earliest point wins ties); the first
//! point is always kept.

use crate::error::{Error, Result};

use super::{regress_linear, DecayTrace, TracePoint, MIN_FIT_POINTS};

/// Envelope of a trace plus a degeneracy flag.
#[derive(Debug, Clone)]
pub struct EnvelopeOutcome {
    pub trace: DecayTrace,
    /// Set when the window exceeded the trace span, in which case only the
    /// first point and the global maximum are returned.
    pub window_exceeds_span: bool,
}

pub fn extract_envelope(trace: &DecayTrace, window: f64) -> Result<EnvelopeOutcome> {
    if !(window.is_finite() && window > 0.0) {
        return Err(Error::domain(format!("window must be > 0, got {window}")));
    }
    if trace.points.len() < MIN_FIT_POINTS {
        return Err(Error::data(format!(
            "envelope extraction requires at least {MIN_FIT_POINTS} points, got {}",
            trace.points.len()
        )));
    }
    let pts = &trace.points;

    if window > trace.span() {
        let mut best = 0;
        for (i, p) in pts.iter().enumerate() {
            if p.signal > pts[best].signal {
                best = i;
            }
        }
        let mut keep: Vec<TracePoint> = vec![pts[0]];
        if best != 0 {
            keep.push(pts[best]);
        }
        let trace = DecayTrace::new(keep, trace.sample_id.clone())?;
        return Ok(EnvelopeOutcome { trace, window_exceeds_span: true });
    }

    let half = window / 2.0;
    let mut keep = Vec::new();
    let mut lo = 0usize;
    for i in 0..pts.len() {
        while pts[i].tau - pts[lo].tau > half {
            lo += 1;
        }
        let mut is_max = true;
        for (j, other) in pts.iter().enumerate().skip(lo) {
            if other.tau - pts[i].tau > half {
                break;
            }
            if j == i {
                continue;
            }
            // Earliest point wins exact ties.
            if other.signal > pts[i].signal || (other.signal == pts[i].signal && j < i) {
                is_max = false;
                break;
            }
        }
        if is_max || i == 0 {
            keep.push(pts[i]);
        }
    }
    let trace = DecayTrace::new(keep, trace.sample_id.clone())?;
    Ok(EnvelopeOutcome { trace, window_exceeds_span: false })
}

/// Detect the revival period of a trace and propose an envelope window.
///
/// The signal is detrended by its least-squares line and scanned with a
/// direct DFT on the median-spacing grid. Revival modulation shows up as
/// a sharp spectral line; residual smooth trend leaks into a monotone
/// low-frequency tail instead. A bin k >= 2 qualifies when it is a local
/// maximum at least 3x above both neighbors and at least 5x above the
/// median bin power; the window is the corresponding period. Returns
/// `None` when no such line stands out, in which case no envelope step
/// should be applied. Traces spanning fewer than two modulation periods
/// are not detectable.
pub fn detect_revival_window(trace: &DecayTrace) -> Option<f64> {
    let n = trace.points.len();
    if n < 8 {
        return None;
    }
    let taus = trace.taus();
    let signals = trace.signals();
    let line = regress_linear(&taus, &signals, None).ok()?;
    let detrended: Vec<f64> =
        taus.iter().zip(&signals).map(|(t, s)| s - (line.intercept + line.slope * t)).collect();

    let mut gaps: Vec<f64> = taus.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(f64::total_cmp);
    let dt = gaps[gaps.len() / 2];
    if dt <= 0.0 {
        return None;
    }

    let half = n / 2;
    let mut power = Vec::with_capacity(half);
    for k in 1..=half {
        let (mut re, mut im) = (0.0, 0.0);
        for (j, d) in detrended.iter().enumerate() {
            let angle = -2.0 * std::f64::consts::PI * (k as f64) * (j as f64) / n as f64;
            re += d * angle.cos();
            im += d * angle.sin();
        }
        power.push(re * re + im * im);
    }
    let mut sorted = power.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];

    // power[i] is bin k = i + 1; candidates need both neighbors in range.
    let mut best: Option<(usize, f64)> = None;
    for i in 1..power.len().saturating_sub(1) {
        let p = power[i];
        let is_line = p > 3.0 * power[i - 1] && p > 3.0 * power[i + 1] && p > 5.0 * median.max(1e-300);
        if is_line && best.is_none_or(|(_, b)| p > b) {
            best = Some((i + 1, p));
        }
    }
    let (peak_k, _) = best?;
    Some(n as f64 * dt / peak_k as f64)
}
