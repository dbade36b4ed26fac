//! Closed-form reference estimate of the signal-dependent noise law from a
//! noisy/clean pair.

use crate::clip::VideoClip;
use crate::error::{Error, Result};

const BINS: usize = 32;
const MIN_BINS: usize = 3;
const MIN_PER_BIN: usize = 16;

/// Fits `var(noisy − clean | clean = x) = σ_s²·x + σ_r²` and returns `(σ_s, σ_r)`.
pub fn moment_oracle_heteroscedastic(noisy: &VideoClip, clean: &VideoClip) -> Result<(f64, f64)> {
    if noisy.shape() != clean.shape() {
        return Err(Error::shape(format!("{} vs {}", noisy.shape(), clean.shape())));
    }
    let (lo, hi) = clean
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if !(hi > lo) {
        return Err(Error::invalid("clean clip needs at least 3 distinct intensity levels"));
    }
    let width = (hi - lo) / BINS as f64;
    let mut acc = [(0usize, 0.0f64, 0.0f64, 0.0f64); BINS];
    for (&y, &x) in noisy.data().iter().zip(clean.data()) {
        let b = (((x - lo) / width) as usize).min(BINS - 1);
        let r = y - x;
        let e = &mut acc[b];
        e.0 += 1;
        e.1 += x;
        e.2 += r;
        e.3 += r * r;
    }
    let points: Vec<(f64, f64)> = acc
        .iter()
        .filter(|e| e.0 >= MIN_PER_BIN)
        .map(|&(n, sx, sr, srr)| {
            let n = n as f64;
            let mr = sr / n;
            (sx / n, (srr / n - mr * mr).max(0.0))
        })
        .collect();
    if points.len() < MIN_BINS {
        return Err(Error::invalid(format!(
            "only {} populated intensity bins, need {MIN_BINS}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxv: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - mv)).sum();
    let slope = if sxx > 0.0 { sxv / sxx } else { 0.0 };
    let intercept = mv - slope * mx;
    Ok((slope.max(0.0).sqrt(), intercept.max(0.0).sqrt()))
}
