//! Attack-power sweep over the calibrated model, no time simulation.

use std::path::Path;

use thiserror::Error;

use crate::topology::Topology;

pub const SWEEP_CSV: &str = "sweep.csv";

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SweepRow {
    pub power_dbm: f64,
    pub skr_bps: f64,
    pub qber: f64,
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("unknown link {0}")]
    UnknownLink(String),
    #[error("step must be positive, got {0}")]
    Step(f64),
    #[error("empty range: from {from} is above to {to}")]
    Range { from: f64, to: f64 },
    #[error("cannot write sweep: {0}")]
    Io(#[from] csv::Error),
}

/// Model means from `from_dbm` to `to_dbm` inclusive, every `step_db`.
///
/// Grid points are computed as `from + i * step` so rounding does not
/// accumulate. A step wider than the range gives the single point `from`.
pub fn sweep_attack_power(
    topology: &Topology,
    link: &str,
    from_dbm: f64,
    to_dbm: f64,
    step_db: f64,
) -> Result<Vec<SweepRow>, SweepError> {
    let spec = topology
        .link(link)
        .ok_or_else(|| SweepError::UnknownLink(link.to_owned()))?;
    if !(step_db > 0.0 && step_db.is_finite()) {
        return Err(SweepError::Step(step_db));
    }
    if from_dbm.is_nan() || to_dbm.is_nan() || from_dbm > to_dbm {
        return Err(SweepError::Range {
            from: from_dbm,
            to: to_dbm,
        });
    }
    let n = ((to_dbm - from_dbm) / step_db + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|i| {
            let p = from_dbm + i as f64 * step_db;
            SweepRow {
                power_dbm: p,
                skr_bps: spec.channel.skr(p),
                qber: spec.channel.qber(p),
            }
        })
        .collect())
}

/// Writes `sweep.csv` into `out_dir`.
pub fn write_sweep(out_dir: &Path, rows: &[SweepRow]) -> Result<(), SweepError> {
    std::fs::create_dir_all(out_dir).map_err(csv::Error::from)?;
    let mut w = csv::Writer::from_path(out_dir.join(SWEEP_CSV))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
