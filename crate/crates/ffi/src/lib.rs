//! C ABI for the simulator.
//!
//! Every entry point returns a [`QkdsimStatus`]; on anything but
//! `QKDSIM_STATUS_OK` the message is available from [`qkdsim_last_error`] on the
//! same thread. Handles are opaque and must be released with their `_free`
//! function. Strings returned to the caller are released with
//! [`qkdsim_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use qkdsim::physics::{self, PhysicsError};
use qkdsim::scenario::{self, OutputOptions, RunConfig, Scenario, ScenarioError};
use qkdsim::switch::{SwitchAgent, SwitchError};
use qkdsim::topology::TopologyError;

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QkdsimStatus {
    Ok = 0,
    /// A required pointer was null.
    Null = 1,
    /// A string argument was not UTF-8.
    Utf8 = 2,
    Io = 3,
    Parse = 4,
    Validation = 5,
    /// Argument outside the function's domain.
    Domain = 6,
    Calibration = 7,
    /// The run finished with every path failed.
    Exhausted = 8,
    Panic = 9,
}

/// Physical constants of one link.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QkdsimChannelParams {
    pub sifted_rate_cps: f64,
    pub intrinsic_error: f64,
    pub dark_rate_cps: f64,
    pub noise_coupling_cps_per_mw: f64,
    pub suppression_db: f64,
    pub ec_efficiency: f64,
    /// 1 for the linear noise model.
    pub noise_exponent: f64,
}

impl From<QkdsimChannelParams> for physics::ChannelParams {
    fn from(p: QkdsimChannelParams) -> Self {
        Self {
            sifted_rate_cps: p.sifted_rate_cps,
            intrinsic_error: p.intrinsic_error,
            dark_rate_cps: p.dark_rate_cps,
            noise_coupling_cps_per_mw: p.noise_coupling_cps_per_mw,
            suppression_db: p.suppression_db,
            ec_efficiency: p.ec_efficiency,
            noise_exponent: p.noise_exponent,
        }
    }
}

impl From<physics::ChannelParams> for QkdsimChannelParams {
    fn from(p: physics::ChannelParams) -> Self {
        Self {
            sifted_rate_cps: p.sifted_rate_cps,
            intrinsic_error: p.intrinsic_error,
            dark_rate_cps: p.dark_rate_cps,
            noise_coupling_cps_per_mw: p.noise_coupling_cps_per_mw,
            suppression_db: p.suppression_db,
            ec_efficiency: p.ec_efficiency,
            noise_exponent: p.noise_exponent,
        }
    }
}

/// Outcome of [`qkdsim_run`].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QkdsimRunSummary {
    pub polls: u32,
    pub episodes: u32,
    pub exhausted: bool,
    /// Seconds from start to the first key; negative if never reached.
    pub first_init_s: f64,
}

/// A loaded topology.
pub struct QkdsimTopology(Arc<qkdsim::Topology>);

/// An optical switch that speaks the line protocol.
pub struct QkdsimSwitch(SwitchAgent);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(QkdsimStatus, String);

impl Failure {
    fn new(status: QkdsimStatus, msg: impl ToString) -> Self {
        Self(status, msg.to_string())
    }
}

impl From<PhysicsError> for Failure {
    fn from(e: PhysicsError) -> Self {
        let status = match e {
            PhysicsError::Domain(_) => QkdsimStatus::Domain,
            PhysicsError::InvalidParams(_) => QkdsimStatus::Validation,
            PhysicsError::Calibration(_) => QkdsimStatus::Calibration,
        };
        Self::new(status, e)
    }
}

impl From<TopologyError> for Failure {
    fn from(e: TopologyError) -> Self {
        let status = match &e {
            TopologyError::Io { .. } => QkdsimStatus::Io,
            TopologyError::Parse(_) => QkdsimStatus::Parse,
            TopologyError::Invalid(_) => QkdsimStatus::Validation,
            TopologyError::Channel {
                source: PhysicsError::Calibration(_),
                ..
            } => QkdsimStatus::Calibration,
            TopologyError::Channel { .. } => QkdsimStatus::Validation,
        };
        Self::new(status, e)
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        let status = match &e {
            ScenarioError::Io { .. } => QkdsimStatus::Io,
            ScenarioError::Parse { .. } => QkdsimStatus::Parse,
            ScenarioError::Invalid { .. } | ScenarioError::Event { .. } => QkdsimStatus::Validation,
        };
        Self::new(status, e)
    }
}

impl From<SwitchError> for Failure {
    fn from(e: SwitchError) -> Self {
        let status = match &e {
            SwitchError::Decode(_) => QkdsimStatus::Parse,
            SwitchError::Unexpected(_) => QkdsimStatus::Validation,
            SwitchError::Io(_) => QkdsimStatus::Io,
        };
        Self::new(status, e)
    }
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, records any failure or panic, and maps it to a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> QkdsimStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            QkdsimStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("panic: {msg}"));
            QkdsimStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: the caller passes either null or a valid pointer.
    unsafe { p.as_ref() }.ok_or_else(|| Failure::new(QkdsimStatus::Null, format!("{what} is null")))
}

fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: as above.
    unsafe { p.as_mut() }.ok_or_else(|| Failure::new(QkdsimStatus::Null, format!("{what} is null")))
}

fn utf8<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(Failure::new(QkdsimStatus::Null, format!("{what} is null")));
    }
    // SAFETY: non-null and NUL-terminated per the contract.
    unsafe { CStr::from_ptr(s) }
        .to_str()
        .map_err(|e| Failure::new(QkdsimStatus::Utf8, format!("{what}: {e}")))
}

fn params(p: *const QkdsimChannelParams) -> Result<physics::ChannelParams, Failure> {
    let p: physics::ChannelParams = (*non_null(p, "params")?).into();
    p.validate()?;
    Ok(p)
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn qkdsim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Binary entropy of `x` in bits; `x` must lie in [0, 1].
///
/// # Safety
///
/// `result` must be null or point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn qkdsim_binary_entropy(x: f64, result: *mut f64) -> QkdsimStatus {
    guard(|| {
        let r = out(result, "result")?;
        *r = physics::binary_entropy(x)?;
        Ok(())
    })
}

/// QBER at which the secret key rate reaches zero.
///
/// # Safety
///
/// `result` must be null or point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn qkdsim_abort_qber(ec_efficiency: f64, result: *mut f64) -> QkdsimStatus {
    guard(|| {
        let r = out(result, "result")?;
        if !(ec_efficiency >= 1.0 && ec_efficiency.is_finite()) {
            return Err(Failure::new(
                QkdsimStatus::Domain,
                format!("ec_efficiency {ec_efficiency} must be finite and at least 1"),
            ));
        }
        *r = physics::abort_qber(ec_efficiency);
        Ok(())
    })
}

/// Mean QBER under an attacker at `attack_power_dbm` (-inf for none).
///
/// # Safety
///
/// Pointers must be null or valid for their types.
#[no_mangle]
pub unsafe extern "C" fn qkdsim_channel_qber(
    params_ptr: *const QkdsimChannelParams,
    attack_power_dbm: f64,
    result: *mut f64,
) -> QkdsimStatus {
    guard(|| {
        let p = params(params_ptr)?;
        *out(result, "result")? = physics::qber(&p, attack_power_dbm);
        Ok(())
    })
}

/// Mean secret key rate in bit/s under an attacker at `attack_power_dbm`.
///
/// # Safety
///
/// Pointers must be null or valid for their types.
#[no_mangle]
pub unsafe extern "C" fn qkdsim_channel_skr(
    params_ptr: *const QkdsimChannelParams,
    attack_power_dbm: f64,
    result: *mut f64,
) -> QkdsimStatus {
    guard(|| {
        let p = params(params_ptr)?;
        *out(result, "result")? = physics::skr(&p, attack_power_dbm);
        Ok(())
    })
}

/// Loads a topology file.
///
/// # Safety
///
/// `path` must be null or NUL-terminated; `topology` null or writable.
#[no_mangle]
pub unsafe extern "C" fn qkdsim_topology_load(path: *const c_char, topology: *mut *mut QkdsimTopology) -> QkdsimStatus {
    guard(|| {
        let slot = out(topology, "topology")?;
        *slot = ptr::null_mut();
        let t = qkdsim::load_topology(utf8(path, "path")?)?;
        *slot = Box::into_raw(Box::new(QkdsimTopology(Arc::new(t))));
        Ok(())
    })
}

/// Parses a topology from JSON text.
///
/// # Safety
///
/// `json` must be null or NUL-terminated; `topology` null or writable.
#[no_mangle]
pub unsafe extern "C" fn qkdsim_topology_from_json(
    json: *const c_char,
    topology: *mut *mut QkdsimTopology,
) -> QkdsimStatus {
    guard(|| {
        let slot = out(topology, "topology")?;
        *slot = ptr::null_mut();
        let t = qkdsim::Topology::from_json(utf8(json, "json")?)?;
        *slot = Box::into_raw(Box::new(QkdsimTopology(Arc::new(t))));
        Ok(())
    })
}

/// Releases a topology. Null is ignored.
///
/// # Safety
///
/// `topology` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qkdsim_topology_free(topology: *mut QkdsimTopology) {
    if !topology.is_null() {
        // SAFETY: created by Box::into_raw in this crate and not yet freed.
        drop(unsafe { Box::from_raw(topology) });
    }
}

/// Channel parameters of a link, after any calibration.
///
/// # Safety
///
/// Pointers must be null or valid; `topology` a live handle.
#[no_mangle]
pub unsafe extern "C" fn qkdsim_topology_link_params(
    topology: *const QkdsimTopology,
    link: *const c_char,
    result: *mut QkdsimChannelParams,
) -> QkdsimStatus {
    guard(|| {
        let t = non_null(topology, "topology")?;
        let id = utf8(link, "link")?;
        let spec = t
            .0
            .link(id)
            .ok_or_else(|| Failure::new(QkdsimStatus::Validation, format!("unknown link {id}")))?;
        *out(result, "result")? = spec.channel.into();
        Ok(())
    })
}

/// Runs a scenario file under the simulated clock and writes the outputs
/// to `out_dir`. Returns `QKDSIM_EXHAUSTED` if every path failed; the
/// outputs and `summary` are still filled in.
///
/// # Safety
///
/// Pointers must be null or valid; strings NUL-terminated; `topology` a live handle.
#[no_mangle]
pub unsafe extern "C" fn qkdsim_run(
    topology: *const QkdsimTopology,
    scenario_path: *const c_char,
    seed: u64,
    out_dir: *const c_char,
    deterministic: bool,
    summary: *mut QkdsimRunSummary,
) -> QkdsimStatus {
    guard(|| {
        let t = non_null(topology, "topology")?;
        let scenario = Scenario::load(utf8(scenario_path, "scenario_path")?, &t.0)?;
        let dir = Path::new(utf8(out_dir, "out_dir")?);
        let result = scenario::simulate(Arc::clone(&t.0), &scenario, &RunConfig::with_seed(seed))
            .map_err(|e| Failure::new(QkdsimStatus::Validation, e))?;
        scenario::write_outputs(
            dir,
            &result,
            &OutputOptions {
                deterministic,
                qpm_log: None,
            },
        )
        .map_err(|e| Failure::new(QkdsimStatus::Io, format!("{}: {e}", dir.display())))?;
        if let Some(s) = unsafe { summary.as_mut() } {
            *s = QkdsimRunSummary {
                polls: result.metrics.len() as u32,
                episodes: result.timing.len() as u32,
                exhausted: result.exhausted,
                first_init_s: result.first_init_s.unwrap_or(-1.0),
            };
        }
        if result.exhausted {
            return Err(Failure::new(QkdsimStatus::Exhausted, "every path failed"));
        }
        Ok(())
    })
}

/// Creates a switch with `ports` ports numbered from 1.
///
/// # Safety
///
/// `id` must be null or NUL-terminated; `switch` null or writable.
#[no_mangle]
pub unsafe extern "C" fn qkdsim_switch_new(id: *const c_char, ports: u32, switch: *mut *mut QkdsimSwitch) -> QkdsimStatus {
    guard(|| {
        let slot = out(switch, "switch")?;
        *slot = ptr::null_mut();
        let id = utf8(id, "id")?;
        if id.is_empty() || ports == 0 {
            return Err(Failure::new(QkdsimStatus::Validation, "switch needs an id and at least one port"));
        }
        *slot = Box::into_raw(Box::new(QkdsimSwitch(SwitchAgent::new(id.into(), ports))));
        Ok(())
    })
}

/// Releases a switch. Null is ignored.
///
/// # Safety
///
/// `switch` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qkdsim_switch_free(switch: *mut QkdsimSwitch) {
    if !switch.is_null() {
        // SAFETY: created by Box::into_raw in this crate and not yet freed.
        drop(unsafe { Box::from_raw(switch) });
    }
}

/// Handles one protocol line and returns the reply line (no newline).
/// Release the reply with [`qkdsim_string_free`].
///
/// # Safety
///
/// Pointers must be null or valid; `line` NUL-terminated; `switch` a live handle.
#[no_mangle]
pub unsafe extern "C" fn qkdsim_switch_handle_line(
    switch: *const QkdsimSwitch,
    line: *const c_char,
    reply: *mut *mut c_char,
) -> QkdsimStatus {
    guard(|| {
        let slot = out(reply, "reply")?;
        *slot = ptr::null_mut();
        let s = non_null(switch, "switch")?;
        let text = s.0.handle_line(utf8(line, "line")?)?;
        *slot = CString::new(text)
            .map_err(|e| Failure::new(QkdsimStatus::Validation, e))?
            .into_raw();
        Ok(())
    })
}

/// Committed cross-connects as a JSON object from input to output port.
/// Release the result with [`qkdsim_string_free`].
///
/// # Safety
///
/// Pointers must be null or valid; `switch` a live handle.
#[no_mangle]
pub unsafe extern "C" fn qkdsim_switch_table_json(switch: *const QkdsimSwitch, json: *mut *mut c_char) -> QkdsimStatus {
    guard(|| {
        let slot = out(json, "json")?;
        *slot = ptr::null_mut();
        let s = non_null(switch, "switch")?;
        let text = serde_json::to_string(&s.0.query_table()).map_err(|e| Failure::new(QkdsimStatus::Parse, e))?;
        *slot = CString::new(text)
            .map_err(|e| Failure::new(QkdsimStatus::Validation, e))?
            .into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
///
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qkdsim_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: created by CString::into_raw in this crate.
        drop(unsafe { CString::from_raw(s) });
    }
}
