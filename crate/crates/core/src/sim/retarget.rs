use super::SimError;

/// Largest factor by which one retarget may move the difficulty.
pub const RETARGET_CLAMP: f64 = 4.0;

/// Start and end time of a completed window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowTiming {
    pub start: f64,
    pub end: f64,
}

impl WindowTiming {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Next-window difficulty from the last completed window:
/// `D * (target_interval * L / observed)`, clamped to `[D / 4, 4 D]`.
pub fn retarget(history: &[WindowTiming], target_interval: f64, period: u64, current: f64) -> Result<f64, SimError> {
    let last = history
        .last()
        .ok_or_else(|| SimError::Scenario("retarget needs a completed window".into()))?;
    let observed = last.duration();
    let lo = current / RETARGET_CLAMP;
    let hi = current * RETARGET_CLAMP;
    if observed <= 0.0 {
        return Ok(hi);
    }
    let next = current * (target_interval * period as f64 / observed);
    Ok(next.clamp(lo, hi))
}
