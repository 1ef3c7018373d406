//! Parametric model of secret key rate and QBER under injected attacker power.
//!
//! The attacker's optical power reaches the quantum receiver through an
//! aggregate suppression `S` (filtering and coupler loss on the coupler link,
//! inter-core crosstalk isolation on the multicore link) and turns into
//! background counts:
//!
//! ```text
//! R_n = R_dark + κ · 10^(n·(P − S)/10)
//! Q   = (0.5·R_n + e·R_s) / (R_s + R_n)
//! SKR = max(0, R_s · (1 − (1 + f)·h₂(Q)))
//! ```
//!
//! `n` is the noise-response exponent. It is 1 for a receiver whose noise
//! counts grow linearly with the leaked power; [`calibrate`] fits it together
//! with `κ` so that both the knee and the key-death anchors of a link are hit.
//! Attacker power is in dBm with `-∞` ([`ATTACK_OFF`]) meaning no attacker.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Attacker switched off.
pub const ATTACK_OFF: f64 = f64::NEG_INFINITY;

/// Error-correction inefficiency used when none is configured.
pub const DEFAULT_EC_EFFICIENCY: f64 = 1.2;

/// Relative QBER rise placed exactly at a link's knee power by [`calibrate`].
pub const KNEE_QBER_RISE: f64 = 0.01;

/// Largest relative QBER rise at the knee that calibration accepts.
pub const MAX_KNEE_QBER_RISE: f64 = 0.05;

/// Margin above the abort QBER targeted at the death power, so the secret
/// fraction there is strictly non-positive rather than zero up to rounding.
const DEATH_QBER_MARGIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("value {0} outside the domain [0, 1]")]
    Domain(f64),
    #[error("invalid channel parameters: {0}")]
    InvalidParams(String),
    #[error("calibration infeasible: {0}")]
    Calibration(String),
}

fn unit_exponent() -> f64 {
    1.0
}

fn is_unit_exponent(n: &f64) -> bool {
    *n == 1.0
}

/// Physical constants of one quantum link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    /// Signal sifted-detection rate `R_s`, counts/s.
    pub sifted_rate_cps: f64,
    /// Detector and optics error `e` with no attack.
    pub intrinsic_error: f64,
    /// Background counts/s with no attack.
    pub dark_rate_cps: f64,
    /// `κ`: counts/s per unit of leaked power (mW raised to `noise_exponent`).
    pub noise_coupling_cps_per_mw: f64,
    /// Attenuation between the attacker and the quantum receiver, dB.
    pub suppression_db: f64,
    /// Error-correction inefficiency `f`.
    pub ec_efficiency: f64,
    /// Noise-response exponent `n`; omitted from JSON when 1.
    #[serde(default = "unit_exponent", skip_serializing_if = "is_unit_exponent")]
    pub noise_exponent: f64,
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), PhysicsError> {
        let bad = |what: &str| Err(PhysicsError::InvalidParams(what.to_owned()));
        let fields = [
            self.sifted_rate_cps,
            self.intrinsic_error,
            self.dark_rate_cps,
            self.noise_coupling_cps_per_mw,
            self.suppression_db,
            self.ec_efficiency,
            self.noise_exponent,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return bad("all parameters must be finite");
        }
        if self.sifted_rate_cps < 0.0
            || self.dark_rate_cps < 0.0
            || self.noise_coupling_cps_per_mw < 0.0
        {
            return bad("rates must be non-negative");
        }
        if !(self.intrinsic_error > 0.0 && self.intrinsic_error < 0.5) {
            return bad("intrinsic_error must lie in (0, 0.5)");
        }
        if self.ec_efficiency < 1.0 {
            return bad("ec_efficiency must be at least 1");
        }
        if self.suppression_db < 0.0 {
            return bad("suppression_db must be non-negative");
        }
        if self.noise_exponent <= 0.0 {
            return bad("noise_exponent must be positive");
        }
        Ok(())
    }

    pub fn noise_rate(&self, attack_power_dbm: f64) -> f64 {
        noise_rate(self, attack_power_dbm)
    }

    pub fn qber(&self, attack_power_dbm: f64) -> f64 {
        qber(self, attack_power_dbm)
    }

    pub fn skr(&self, attack_power_dbm: f64) -> f64 {
        skr(self, attack_power_dbm)
    }

    pub fn abort_qber(&self) -> f64 {
        abort_qber(self.ec_efficiency)
    }
}

/// One measured (SKR, QBER) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantumSample {
    pub skr_bps: f64,
    pub qber: f64,
}

/// Binary Shannon entropy in bits.
pub fn binary_entropy(x: f64) -> Result<f64, PhysicsError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(PhysicsError::Domain(x));
    }
    Ok(h2(x))
}

pub(crate) fn h2(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    -x * x.log2() - (1.0 - x) * (-x).ln_1p() / std::f64::consts::LN_2
}

/// Background count rate at the receiver for a given attacker power.
pub fn noise_rate(params: &ChannelParams, attack_power_dbm: f64) -> f64 {
    if attack_power_dbm == f64::NEG_INFINITY {
        return params.dark_rate_cps;
    }
    let exponent = params.noise_exponent * (attack_power_dbm - params.suppression_db) / 10.0;
    params.dark_rate_cps + params.noise_coupling_cps_per_mw * 10f64.powf(exponent)
}

pub fn qber(params: &ChannelParams, attack_power_dbm: f64) -> f64 {
    let rn = noise_rate(params, attack_power_dbm);
    let rs = params.sifted_rate_cps;
    if rn.is_infinite() || rs + rn <= 0.0 {
        return 0.5;
    }
    ((0.5 * rn + params.intrinsic_error * rs) / (rs + rn)).clamp(0.0, 0.5)
}

pub fn skr(params: &ChannelParams, attack_power_dbm: f64) -> f64 {
    skr_at_qber(params, qber(params, attack_power_dbm))
}

fn skr_at_qber(params: &ChannelParams, q: f64) -> f64 {
    let fraction = 1.0 - (1.0 + params.ec_efficiency) * h2(q);
    (params.sifted_rate_cps * fraction).max(0.0)
}

/// QBER at which the secret fraction reaches zero for error-correction
/// inefficiency `ec_efficiency`.
///
/// Solves `h₂(Q) = 1/(1 + f)` on `(0, 0.5)` by bisection. The returned value
/// is the upper end of the final bracket, so `h₂` there is never below the
/// target.
pub fn abort_qber(ec_efficiency: f64) -> f64 {
    debug_assert!(ec_efficiency > 0.0);
    let target = 1.0 / (1.0 + ec_efficiency);
    let (mut lo, mut hi) = (0.0_f64, 0.5_f64);
    while hi - lo > 1e-15 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h2(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Measured operating points a link's model is fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationAnchors {
    pub baseline_skr_bps: f64,
    pub baseline_qber: f64,
    /// Highest attacker power with no visible effect on the link.
    pub knee_power_dbm: f64,
    /// Attacker power at which key generation stops.
    pub death_power_dbm: f64,
    pub suppression_db: f64,
    #[serde(default = "default_ec_efficiency")]
    pub ec_efficiency: f64,
}

fn default_ec_efficiency() -> f64 {
    DEFAULT_EC_EFFICIENCY
}

/// Fits channel parameters to a link's anchors.
///
/// `R_s` and `e` follow directly from the baseline (no dark counts). The
/// noise coupling `κ` and the exponent `n` are then fixed by two conditions:
/// the QBER at the knee sits [`KNEE_QBER_RISE`] above baseline, and the QBER
/// at the death power sits just past the abort threshold. `S` is taken from
/// the anchors as given; only the product `κ·10^(−n·S/10)` is observable.
pub fn calibrate(anchors: &CalibrationAnchors) -> Result<ChannelParams, PhysicsError> {
    let infeasible = |why: String| Err(PhysicsError::Calibration(why));
    let a = anchors;
    if ![
        a.baseline_skr_bps,
        a.baseline_qber,
        a.knee_power_dbm,
        a.death_power_dbm,
        a.suppression_db,
        a.ec_efficiency,
    ]
    .iter()
    .all(|v| v.is_finite())
    {
        return infeasible("anchors must be finite".into());
    }
    if a.death_power_dbm <= a.knee_power_dbm {
        return infeasible(format!(
            "death power {} dBm must exceed knee power {} dBm",
            a.death_power_dbm, a.knee_power_dbm
        ));
    }
    if a.baseline_skr_bps <= 0.0 {
        return infeasible("baseline SKR must be positive".into());
    }
    if !(a.baseline_qber > 0.0 && a.baseline_qber < 0.5) {
        return infeasible("baseline QBER must lie in (0, 0.5)".into());
    }
    if a.ec_efficiency < 1.0 || a.suppression_db < 0.0 {
        return infeasible("ec_efficiency must be >= 1 and suppression_db >= 0".into());
    }

    let q_abort = abort_qber(a.ec_efficiency);
    let q0 = a.baseline_qber;
    if q0 >= q_abort {
        return infeasible(format!(
            "baseline QBER {q0} is at or above the abort threshold {q_abort:.6}"
        ));
    }
    let sifted = a.baseline_skr_bps / (1.0 - (1.0 + a.ec_efficiency) * h2(q0));

    // Noise rate that lifts the QBER from e to q.
    let noise_for = |q: f64| sifted * (q - q0) / (0.5 - q);
    let q_knee = q0 * (1.0 + KNEE_QBER_RISE);
    let q_death = q_abort + DEATH_QBER_MARGIN;
    if q_knee >= q_death {
        return infeasible("baseline QBER leaves no room between knee and abort".into());
    }
    let rn_knee = noise_for(q_knee);
    let rn_death = noise_for(q_death);
    let span_db = a.death_power_dbm - a.knee_power_dbm;
    let exponent = (rn_death / rn_knee).log10() * 10.0 / span_db;
    let coupling =
        rn_death / 10f64.powf(exponent * (a.death_power_dbm - a.suppression_db) / 10.0);
    if !coupling.is_finite() || !exponent.is_finite() || coupling <= 0.0 {
        return infeasible("fitted noise coupling is not representable".into());
    }

    let params = ChannelParams {
        sifted_rate_cps: sifted,
        intrinsic_error: q0,
        dark_rate_cps: 0.0,
        noise_coupling_cps_per_mw: coupling,
        suppression_db: a.suppression_db,
        ec_efficiency: a.ec_efficiency,
        noise_exponent: exponent,
    };
    params.validate()?;

    if skr(&params, a.death_power_dbm) != 0.0 {
        return infeasible("fitted model still produces key at the death power".into());
    }
    let rise = qber(&params, a.knee_power_dbm) / q0 - 1.0;
    if rise > MAX_KNEE_QBER_RISE {
        return infeasible(format!("QBER rises {rise:.4} at the knee"));
    }
    Ok(params)
}

/// Relative Gaussian measurement scatter applied by [`sample`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub skr_rel_sigma: f64,
    pub qber_rel_sigma: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Self {
            skr_rel_sigma: 0.03,
            qber_rel_sigma: 0.05,
        }
    }
}

impl Jitter {
    pub const NONE: Jitter = Jitter {
        skr_rel_sigma: 0.0,
        qber_rel_sigma: 0.0,
    };
}

/// Draws one measurement around the model means.
pub fn sample<R: Rng + ?Sized>(
    params: &ChannelParams,
    attack_power_dbm: f64,
    jitter: &Jitter,
    rng: &mut R,
) -> QuantumSample {
    let mean_q = qber(params, attack_power_dbm);
    let mean_skr = skr_at_qber(params, mean_q);
    let z_skr: f64 = StandardNormal.sample(rng);
    let z_q: f64 = StandardNormal.sample(rng);
    let q = (mean_q * (1.0 + jitter.qber_rel_sigma * z_q)).clamp(0.0, 0.5);
    let mut rate = (mean_skr * (1.0 + jitter.skr_rel_sigma * z_skr)).max(0.0);
    if q >= abort_qber(params.ec_efficiency) {
        rate = 0.0;
    }
    QuantumSample {
        skr_bps: rate,
        qber: q,
    }
}
