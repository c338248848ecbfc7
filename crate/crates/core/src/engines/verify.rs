use crate::error::Result;
use crate::mrf::{compute_message_into, l2_distance, MarkovRandomField, MessageScratch, MessageView};
use crate::scalar::Real;

/// Result of recomputing every message against the current state.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanReport {
    pub residuals: Vec<f64>,
    pub max_residual: f64,
}

impl ScanReport {
    pub fn converged(&self, tau: f64) -> bool {
        self.max_residual < tau
    }
}

/// Exact residual of every message; the ground truth behind every
/// convergence claim.
pub fn full_scan<T: Real, V: MessageView<T> + ?Sized>(
    mrf: &MarkovRandomField<T>,
    view: &V,
) -> Result<ScanReport> {
    let mut scratch = MessageScratch::new();
    let mut out = Vec::new();
    let mut residuals = Vec::with_capacity(mrf.message_count());
    let mut max_residual = 0.0f64;
    for id in mrf.message_ids() {
        compute_message_into(mrf, view, id, &mut scratch, &mut out)?;
        let r = view.with_message(id, |cur| l2_distance(&out, cur)).as_f64();
        max_residual = max_residual.max(r);
        residuals.push(r);
    }
    Ok(ScanReport { residuals, max_residual })
}
