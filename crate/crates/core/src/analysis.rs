//! Phase segmentation and wobble, precession and path metrics.
//!
//! A turning run is split at the schedule breakpoints into straight and
//! circular phases. Each window drops a settle margin after its breakpoint so
//! only the steady response is measured.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::SetpointSchedule;
use crate::dynamics::StateVector;
use crate::integrator::Sample;

/// Default time excluded after each breakpoint, s.
pub const SETTLE_MARGIN: f64 = 1.0;

/// Extrema whose swing from the previous extremum is below this are ripple, rad.
pub const MIN_PROMINENCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("phase {index} is empty after trimming a {margin} s settle margin")]
    EmptyWindow { index: usize, margin: f64 },
    #[error("schedule breakpoint {t} s lies outside the trajectory span")]
    BreakpointOutsideSpan { t: f64 },
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("samples are collinear, no circle fits")]
    Degenerate,
    #[error("samples span only {span_deg:.1} degrees of arc (need 30)")]
    ShortArc { span_deg: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseKind {
    Straight,
    Circular,
}

/// Half-open time window `[t_start, t_end)` of one schedule segment; the last
/// window is closed.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseWindow {
    pub label: String,
    pub kind: PhaseKind,
    pub segment: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub closed: bool,
}

impl PhaseWindow {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_start && (t < self.t_end || (self.closed && t <= self.t_end))
    }

    pub fn select<'a>(&self, samples: &'a [Sample]) -> Vec<&'a Sample> {
        samples.iter().filter(|s| self.contains(s.t)).collect()
    }
}

/// Splits a run into one window per schedule segment. Segments with a zero
/// pendulum reference are straight phases, the others circular ones.
pub fn segment_phases(t_final: f64, schedule: &SetpointSchedule, margin: f64) -> Result<Vec<PhaseWindow>, AnalysisError> {
    let segs = schedule.segments();
    let (mut n_straight, mut n_circular) = (0, 0);
    let n_circ_total = segs.iter().filter(|s| s.setpoint.beta_ref != 0.0).count();
    let mut out = Vec::with_capacity(segs.len());
    for (i, seg) in segs.iter().enumerate() {
        if seg.t_start > t_final {
            return Err(AnalysisError::BreakpointOutsideSpan { t: seg.t_start });
        }
        let (end, closed) = match segs.get(i + 1) {
            Some(next) => (next.t_start, false),
            None => (t_final, true),
        };
        let start = seg.t_start + margin;
        if start >= end {
            return Err(AnalysisError::EmptyWindow { index: i, margin });
        }
        let (kind, label) = if seg.setpoint.beta_ref == 0.0 {
            n_straight += 1;
            (PhaseKind::Straight, format!("straight-{n_straight}"))
        } else {
            n_circular += 1;
            let label = if n_circ_total == 1 { "circular".to_string() } else { format!("circular-{n_circular}") };
            (PhaseKind::Circular, label)
        };
        out.push(PhaseWindow { label, kind, segment: i, t_start: start, t_end: end, closed });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WobbleMetrics {
    pub mean: f64,
    /// Half the median peak-to-trough distance.
    pub amplitude: f64,
    /// Hz; `None` when fewer than four extrema are present.
    pub frequency: Option<f64>,
    pub extrema: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Extremum {
    t: f64,
    value: f64,
    is_max: bool,
}

/// Local extrema of a uniformly sampled signal, refined by a parabola through
/// the neighbouring samples and thinned so maxima and minima alternate with
/// swings of at least `min_prominence`.
fn extrema(t: &[f64], y: &[f64], min_prominence: f64) -> Vec<Extremum> {
    let mut raw = Vec::new();
    for i in 1..y.len().saturating_sub(1) {
        let (a, b, c) = (y[i - 1], y[i], y[i + 1]);
        let is_max = b > a && b >= c;
        let is_min = b < a && b <= c;
        if !(is_max || is_min) {
            continue;
        }
        let denom = a - 2.0 * b + c;
        let (dt, value) = if denom != 0.0 {
            let off = 0.5 * (a - c) / denom;
            (off, b - 0.25 * (a - c) * off)
        } else {
            (0.0, b)
        };
        let step = t[i + 1] - t[i];
        raw.push(Extremum { t: t[i] + dt * step, value, is_max });
    }

    let mut out: Vec<Extremum> = Vec::with_capacity(raw.len());
    for e in raw {
        match out.last_mut() {
            Some(last) if last.is_max == e.is_max => {
                let better = if e.is_max { e.value > last.value } else { e.value < last.value };
                if better {
                    *last = e;
                }
            }
            Some(last) if (e.value - last.value).abs() < min_prominence => {
                // Ripple: drop the pair unless it is the only one so far.
                if out.len() > 1 {
                    out.pop();
                }
            }
            _ => out.push(e),
        }
    }
    out
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Mean, amplitude and frequency of an oscillating signal.
pub fn oscillation_metrics(t: &[f64], y: &[f64]) -> WobbleMetrics {
    let ext = extrema(t, y, MIN_PROMINENCE);
    let swings: Vec<f64> = ext.windows(2).map(|w| (w[1].value - w[0].value).abs()).collect();
    let amplitude = match median(swings) {
        Some(m) => 0.5 * m,
        None => {
            let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = y.iter().copied().fold(f64::INFINITY, f64::min);
            if y.is_empty() { 0.0 } else { 0.5 * (max - min) }
        }
    };
    let frequency = if ext.len() >= 4 {
        let peaks: Vec<f64> = ext.iter().filter(|e| e.is_max).map(|e| e.t).collect();
        let troughs: Vec<f64> = ext.iter().filter(|e| !e.is_max).map(|e| e.t).collect();
        let periods: Vec<f64> = peaks
            .windows(2)
            .chain(troughs.windows(2))
            .map(|w| w[1] - w[0])
            .collect();
        median(periods).map(|p| 1.0 / p)
    } else {
        None
    };
    WobbleMetrics {
        mean: mean(y),
        amplitude,
        frequency,
        extrema: ext.len(),
    }
}

/// Wobble statistics of `theta` over a window.
pub fn wobble_metrics(window: &[&Sample]) -> WobbleMetrics {
    let t: Vec<f64> = window.iter().map(|s| s.t).collect();
    let theta: Vec<f64> = window.iter().map(|s| s.state[StateVector::THETA]).collect();
    oscillation_metrics(&t, &theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecessionMetrics {
    /// rad/s
    pub phid_mean: f64,
    /// Half the peak-to-peak excursion of `phid`, rad/s.
    pub phid_osc_amp: f64,
    /// Mean of `theta + beta`, rad.
    pub pend_mean: f64,
}

pub fn precession_metrics(window: &[&Sample]) -> PrecessionMetrics {
    let phid: Vec<f64> = window.iter().map(|s| s.state[StateVector::PHID]).collect();
    let tilt: Vec<f64> = window
        .iter()
        .map(|s| s.state[StateVector::THETA] + s.state[StateVector::BETA])
        .collect();
    let max = phid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = phid.iter().copied().fold(f64::INFINITY, f64::min);
    PrecessionMetrics {
        phid_mean: mean(&phid),
        phid_osc_amp: if phid.is_empty() { 0.0 } else { 0.5 * (max - min) },
        pend_mean: mean(&tilt),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleFit {
    pub center: [f64; 2],
    pub radius: f64,
    /// RMS of radial residuals, m.
    pub rms: f64,
}

/// Algebraic (Kasa) least-squares circle through planar points.
pub fn circle_fit(points: &[[f64; 2]]) -> Result<CircleFit, AnalysisError> {
    if points.len() < 10 {
        return Err(AnalysisError::TooFewSamples { need: 10, got: points.len() });
    }
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let scale = points
        .iter()
        .map(|p| (p[0] - cx).hypot(p[1] - cy))
        .fold(0.0, f64::max);
    if !(scale > 0.0) {
        return Err(AnalysisError::Degenerate);
    }
    // Normal equations of  u^2 + v^2 + D u + E v + F = 0  in centred, scaled coordinates.
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    for p in points {
        let (u, v) = ((p[0] - cx) / scale, (p[1] - cy) / scale);
        let row = Vector3::new(u, v, 1.0);
        ata += row * row.transpose();
        atb -= row * (u * u + v * v);
    }
    let eig = ata.symmetric_eigenvalues();
    if eig.min() <= 1e-12 * eig.max() {
        return Err(AnalysisError::Degenerate);
    }
    let sol = ata.cholesky().ok_or(AnalysisError::Degenerate)?.solve(&atb);
    let (uc, vc) = (-0.5 * sol[0], -0.5 * sol[1]);
    let r2 = uc * uc + vc * vc - sol[2];
    if !(r2 > 0.0) {
        return Err(AnalysisError::Degenerate);
    }
    let center = [cx + uc * scale, cy + vc * scale];
    let radius = r2.sqrt() * scale;

    let residual_sq: f64 = points
        .iter()
        .map(|p| ((p[0] - center[0]).hypot(p[1] - center[1]) - radius).powi(2))
        .sum();

    // Angular coverage about the fitted centre.
    let mut angles: Vec<f64> = points
        .iter()
        .map(|p| (p[1] - center[1]).atan2(p[0] - center[0]))
        .collect();
    angles.sort_by(f64::total_cmp);
    let largest_gap = angles
        .windows(2)
        .map(|w| w[1] - w[0])
        .chain(std::iter::once(angles[0] + std::f64::consts::TAU - angles[angles.len() - 1]))
        .fold(0.0, f64::max);
    let span = std::f64::consts::TAU - largest_gap;
    if span < 30f64.to_radians() {
        return Err(AnalysisError::ShortArc { span_deg: span.to_degrees() });
    }

    Ok(CircleFit {
        center,
        radius,
        rms: (residual_sq / n).sqrt(),
    })
}

/// RMS distance of the points from their total-least-squares line, m.
pub fn straightness(points: &[[f64; 2]]) -> Result<f64, AnalysisError> {
    if points.len() < 2 {
        return Err(AnalysisError::TooFewSamples { need: 2, got: points.len() });
    }
    let n = points.len() as f64;
    let c = Vector2::new(
        points.iter().map(|p| p[0]).sum::<f64>() / n,
        points.iter().map(|p| p[1]).sum::<f64>() / n,
    );
    let mut cov = Matrix2::<f64>::zeros();
    for p in points {
        let d = Vector2::new(p[0], p[1]) - c;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let k = if eig.eigenvalues[0] <= eig.eigenvalues[1] { 0 } else { 1 };
    let normal = eig.eigenvectors.column(k).into_owned();
    let sum_sq: f64 = points
        .iter()
        .map(|p| (Vector2::new(p[0], p[1]) - c).dot(&normal).powi(2))
        .sum();
    Ok((sum_sq / n).sqrt())
}

/// Ground-plane path `(X, Z)` of a window.
pub fn ground_path(window: &[&Sample]) -> Vec<[f64; 2]> {
    window
        .iter()
        .map(|s| [s.state[StateVector::X], s.state[StateVector::Z]])
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PathMetrics {
    Straight { lateral_rms: f64 },
    Circular { circle_radius: f64, circle_rms: f64, circle_center: [f64; 2] },
    Unavailable { path_error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMetrics {
    pub label: String,
    pub kind: PhaseKind,
    pub t_start: f64,
    pub t_end: f64,
    pub samples: usize,
    pub theta_mean: f64,
    pub theta_amp: f64,
    pub theta_freq: Option<f64>,
    pub phid_mean: f64,
    pub phid_osc_amp: f64,
    pub pend_mean: f64,
    pub path: PathMetrics,
}

pub fn phase_metrics(window: &PhaseWindow, samples: &[Sample]) -> PhaseMetrics {
    let sel = window.select(samples);
    let wobble = wobble_metrics(&sel);
    let prec = precession_metrics(&sel);
    let path = ground_path(&sel);
    let path = match window.kind {
        PhaseKind::Straight => match straightness(&path) {
            Ok(lateral_rms) => PathMetrics::Straight { lateral_rms },
            Err(e) => PathMetrics::Unavailable { path_error: e.to_string() },
        },
        PhaseKind::Circular => match circle_fit(&path) {
            Ok(fit) => PathMetrics::Circular {
                circle_radius: fit.radius,
                circle_rms: fit.rms,
                circle_center: fit.center,
            },
            Err(e) => PathMetrics::Unavailable { path_error: e.to_string() },
        },
    };
    PhaseMetrics {
        label: window.label.clone(),
        kind: window.kind,
        t_start: window.t_start,
        t_end: window.t_end,
        samples: sel.len(),
        theta_mean: wobble.mean,
        theta_amp: wobble.amplitude,
        theta_freq: wobble.frequency,
        phid_mean: prec.phid_mean,
        phid_osc_amp: prec.phid_osc_amp,
        pend_mean: prec.pend_mean,
        path,
    }
}

/// Qualitative relations expected of a straight / circular / straight run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurningOrderings {
    /// First straight phase neither wobbles nor precesses.
    pub straight_1_quiet: bool,
    /// Circular phase has a non-zero mean precession rate.
    pub circular_precesses: bool,
    /// Circular phase keeps the pendulum at a non-zero mean tilt.
    pub circular_pendulum_offset: bool,
    /// Mean precession rate in the final straight phase is at most 5% of the circular one.
    pub straight_2_precession_cancels: bool,
    /// Wobble amplitude in the final straight phase exceeds the circular one.
    pub straight_2_wobble_exceeds_circular: bool,
    /// Circle-fit RMS is at most 5% of the fitted radius.
    pub circular_path_quasi_circular: bool,
}

/// Thresholds below which a quantity counts as zero.
pub const QUIET_ANGLE: f64 = 1e-6;
pub const QUIET_RATE: f64 = 1e-6;

impl TurningOrderings {
    pub fn evaluate(phases: &[PhaseMetrics]) -> Option<Self> {
        let [s1, c, s2] = phases else { return None };
        if s1.kind != PhaseKind::Straight || c.kind != PhaseKind::Circular || s2.kind != PhaseKind::Straight {
            return None;
        }
        let circle_ok = match c.path {
            PathMetrics::Circular { circle_radius, circle_rms, .. } => circle_rms <= 0.05 * circle_radius,
            _ => false,
        };
        Some(Self {
            straight_1_quiet: s1.theta_amp <= QUIET_ANGLE
                && s1.theta_mean.abs() <= QUIET_ANGLE
                && s1.phid_mean.abs() <= QUIET_RATE
                && s1.pend_mean.abs() <= QUIET_ANGLE,
            circular_precesses: c.phid_mean.abs() > QUIET_RATE,
            circular_pendulum_offset: c.pend_mean.abs() > QUIET_ANGLE,
            straight_2_precession_cancels: s2.phid_mean.abs() <= 0.05 * c.phid_mean.abs(),
            straight_2_wobble_exceeds_circular: s2.theta_amp > c.theta_amp,
            circular_path_quasi_circular: circle_ok,
        })
    }

    pub fn all(&self) -> bool {
        self.straight_1_quiet
            && self.circular_precesses
            && self.circular_pendulum_offset
            && self.straight_2_precession_cancels
            && self.straight_2_wobble_exceeds_circular
            && self.circular_path_quasi_circular
    }
}
