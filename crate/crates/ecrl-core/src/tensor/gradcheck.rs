//! Central-difference gradient verification.
//!
//! The checker perturbs one coordinate of a flat parameter vector at a
//! time, re-evaluates the loss, and compares the numeric slope against the
//! analytic gradient. All perturbed evaluations are independent, so they
//! run through [`crate::par`] and parallelize when the `parallel` feature
//! is on.

use std::fmt;

use crate::error::{Error, Result};
use crate::par::{try_map_indexed, ExecMode};

/// Step size for central differences, chosen for f64 evaluation:
/// truncation error O(h²) ≈ 1e-10 against round-off error O(ε/h) ≈ 1e-11.
pub const FD_STEP: f64 = 1e-5;

/// Relative-error floor: gradients below this magnitude are compared
/// absolutely instead, so near-zero coordinates do not divide FD noise
/// (truncation ≈ 1e-10) by a vanishing denominator. With a 1e-4
/// tolerance this still demands < 1e-9 absolute agreement there.
pub const REL_ERR_FLOOR: f64 = 1e-5;

/// One compared coordinate.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    /// Name of the enclosing parameter tensor.
    pub name: String,
    /// Flat offset within that tensor.
    pub offset: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Outcome of a full gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries_checked: usize,
    pub max_rel_err: f64,
    /// The single worst coordinate, for diagnostics.
    pub worst: Option<GradCheckEntry>,
    /// Every coordinate whose relative error exceeded the tolerance.
    pub failures: Vec<GradCheckEntry>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "checked {} coordinates, max relative error {:.3e} (tolerance {:.1e})",
            self.entries_checked, self.max_rel_err, self.tolerance
        )?;
        if let Some(w) = &self.worst {
            writeln!(
                f,
                "worst: {}[{}] analytic={:.6e} numeric={:.6e}",
                w.name, w.offset, w.analytic, w.numeric
            )?;
        }
        if self.failures.is_empty() {
            write!(f, "PASS")
        } else {
            write!(f, "FAIL: {} coordinates over tolerance", self.failures.len())
        }
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_ERR_FLOOR)
}

/// Compare an analytic gradient against central differences of `loss`.
///
/// `flat` is the full parameter vector; `segments` names contiguous spans
/// of it (`(name, len)` pairs whose lengths sum to `flat.len()`), used
/// only for reporting. `loss` must be a pure function of the vector.
pub fn grad_check<F>(
    mode: ExecMode,
    flat: &[f64],
    analytic: &[f64],
    segments: &[(String, usize)],
    loss: F,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if flat.len() != analytic.len() {
        return Err(Error::Contract(format!(
            "grad_check: {} parameters but {} analytic gradients",
            flat.len(),
            analytic.len()
        )));
    }
    let seg_total: usize = segments.iter().map(|(_, l)| l).sum();
    if seg_total != flat.len() {
        return Err(Error::Contract(format!(
            "grad_check: segments cover {seg_total} of {} coordinates",
            flat.len()
        )));
    }
    if !(tolerance > 0.0) {
        return Err(Error::Config(format!(
            "grad_check tolerance must be positive, got {tolerance}"
        )));
    }

    let base = loss(flat)?;
    if !base.is_finite() {
        return Err(Error::GradCheck(format!(
            "loss is not finite at the check point: {base}"
        )));
    }

    let numeric = try_map_indexed(mode, &(0..flat.len()).collect::<Vec<_>>(), |_, &i| {
        let mut x = flat.to_vec();
        x[i] += FD_STEP;
        let fp = loss(&x)?;
        x[i] = flat[i] - FD_STEP;
        let fm = loss(&x)?;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::GradCheck(format!(
                "loss not finite under perturbation of coordinate {i}"
            )));
        }
        Ok((fp - fm) / (2.0 * FD_STEP))
    })?;

    let name_of = |i: usize| -> (String, usize) {
        let mut off = i;
        for (name, len) in segments {
            if off < *len {
                return (name.clone(), off);
            }
            off -= len;
        }
        unreachable!("segment lengths were validated")
    };

    let mut report = GradCheckReport {
        entries_checked: flat.len(),
        max_rel_err: 0.0,
        worst: None,
        failures: Vec::new(),
        tolerance,
    };
    for i in 0..flat.len() {
        let e = rel_err(analytic[i], numeric[i]);
        if e >= report.max_rel_err {
            report.max_rel_err = e;
            let (name, offset) = name_of(i);
            report.worst = Some(GradCheckEntry {
                name,
                offset,
                analytic: analytic[i],
                numeric: numeric[i],
                rel_err: e,
            });
        }
        if e > tolerance {
            let (name, offset) = name_of(i);
            report.failures.push(GradCheckEntry {
                name,
                offset,
                analytic: analytic[i],
                numeric: numeric[i],
                rel_err: e,
            });
        }
    }
    Ok(report)
}
