use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Cosine annealing: `lr_min + ½(lr_max − lr_min)(1 + cos(π·t/T))`.
/// Steps past `total` stay at `lr_min`.
pub fn cosine_lr(step: usize, total: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::Config("cosine schedule needs at least one step".into()));
    }
    if step >= total {
        return Ok(lr_min);
    }
    let frac = step as f64 / total as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * frac).cos()))
}
