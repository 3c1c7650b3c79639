//! C ABI over the pure parts of pbt-workbench: prompt building, code
//! extraction, property enumeration and scorecard computation.
//!
//! Structured values cross the boundary as UTF-8 JSON strings. Every
//! function returns a [`PbtStatus`]; on failure the message is available
//! from [`pbt_last_error_message`] until the next call on the same thread.
//! Strings written to `out` parameters are owned by the caller and must be
//! released with [`pbt_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use serde::Deserialize;

use pbt_workbench::assembly::enumerate_properties;
use pbt_workbench::llm::extract_code;
use pbt_workbench::metrics::{compute_scorecard, IssueThresholds, ScoringInput};
use pbt_workbench::prompts::{
    build_mitigation_prompt_with, build_synthesis_prompt_with, MitigationAction, PromptMessage, PromptTask, Role,
    TargetApi, TemplateSet,
};
use pbt_workbench::protocol::{Mutant, MutantResult, RunReport};

/// Version of this ABI. Bumped on any incompatible change.
pub const PBT_ABI_VERSION: u32 = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PbtStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidJson = 3,
    PromptError = 4,
    NoCodeFound = 5,
    AssemblyError = 6,
    MetricsError = 7,
    TemplateIo = 8,
    Panic = 9,
}

/// Opaque set of prompt templates.
pub struct PbtTemplateSet {
    inner: TemplateSet,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(PbtStatus, String);

impl Failure {
    fn new(status: PbtStatus, e: impl std::fmt::Display) -> Self {
        Failure(status, e.to_string())
    }
}

/// Runs `f`, maps failures and panics to a status and records the message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PbtStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PbtStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PbtStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or a NUL-terminated string valid for the call.
unsafe fn arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(PbtStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(PbtStatus::InvalidUtf8, format!("{name}: {e}")))
}

fn json_arg<'a, T: Deserialize<'a>>(text: &'a str, name: &str) -> Result<T, Failure> {
    serde_json::from_str(text).map_err(|e| Failure(PbtStatus::InvalidJson, format!("{name}: {e}")))
}

/// # Safety
/// `out` is null or valid for one pointer write.
unsafe fn write_out(out: *mut *mut c_char, value: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(PbtStatus::NullArgument, "out is null".into()));
    }
    let c = CString::new(value).map_err(|e| Failure::new(PbtStatus::InvalidUtf8, e))?;
    *out = c.into_raw();
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("value serializes")
}

#[no_mangle]
pub extern "C" fn pbt_abi_version() -> u32 {
    PBT_ABI_VERSION
}

/// Message of the last failed call on this thread, or null. Owned by the
/// library; valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn pbt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` is null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pbt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// The built-in templates. Release with [`pbt_templates_free`].
#[no_mangle]
pub extern "C" fn pbt_templates_builtin() -> *mut PbtTemplateSet {
    Box::into_raw(Box::new(PbtTemplateSet {
        inner: TemplateSet::builtin(),
    }))
}

/// Built-in templates overridden by the `*.txt` files in `dir`.
///
/// # Safety
/// `dir` is a NUL-terminated string; `out` is valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn pbt_templates_load(dir: *const c_char, out: *mut *mut PbtTemplateSet) -> PbtStatus {
    guard(|| {
        let dir = arg(dir, "dir")?;
        if out.is_null() {
            return Err(Failure(PbtStatus::NullArgument, "out is null".into()));
        }
        let inner = TemplateSet::load(Path::new(dir)).map_err(|e| Failure::new(PbtStatus::TemplateIo, e))?;
        *out = Box::into_raw(Box::new(PbtTemplateSet { inner }));
        Ok(())
    })
}

/// # Safety
/// `set` is null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pbt_templates_free(set: *mut PbtTemplateSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// # Safety
/// `set` is null or a live handle.
unsafe fn templates<'a>(set: *const PbtTemplateSet) -> Result<&'a TemplateSet, Failure> {
    set.as_ref()
        .map(|s| &s.inner)
        .ok_or_else(|| Failure(PbtStatus::NullArgument, "templates is null".into()))
}

/// Renders the synthesis prompt for a target and task, both JSON, into a
/// JSON array of `{role, text}` messages.
///
/// # Safety
/// Pointers are valid for the call; `out` is valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn pbt_build_synthesis_prompt(
    templates_set: *const PbtTemplateSet,
    target_json: *const c_char,
    task_json: *const c_char,
    out_json: *mut *mut c_char,
) -> PbtStatus {
    guard(|| {
        let set = templates(templates_set)?;
        let target: TargetApi = json_arg(arg(target_json, "target_json")?, "target_json")?;
        let task: PromptTask = json_arg(arg(task_json, "task_json")?, "task_json")?;
        let messages =
            build_synthesis_prompt_with(set, &target, &task).map_err(|e| Failure::new(PbtStatus::PromptError, e))?;
        write_out(out_json, to_json(&messages))
    })
}

/// Renders the user message for a mitigation action given as JSON
/// `{kind, context}`. `qualname` may be null.
///
/// # Safety
/// Pointers are valid for the call; `out` is valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn pbt_build_mitigation_prompt(
    templates_set: *const PbtTemplateSet,
    action_json: *const c_char,
    artifact_name: *const c_char,
    qualname: *const c_char,
    out_json: *mut *mut c_char,
) -> PbtStatus {
    guard(|| {
        let set = templates(templates_set)?;
        let action: MitigationAction = json_arg(arg(action_json, "action_json")?, "action_json")?;
        let name = arg(artifact_name, "artifact_name")?;
        let qualname = if qualname.is_null() {
            ""
        } else {
            arg(qualname, "qualname")?
        };
        let message = build_mitigation_prompt_with(set, &action, name, qualname)
            .map_err(|e| Failure::new(PbtStatus::PromptError, e))?;
        write_out(out_json, to_json(&message))
    })
}

/// Extracts the code from a model reply as plain text.
///
/// # Safety
/// `reply` is a NUL-terminated string; `out` is valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn pbt_extract_code(reply: *const c_char, out_source: *mut *mut c_char) -> PbtStatus {
    guard(|| {
        let reply = PromptMessage::new(Role::Assistant, arg(reply, "reply")?);
        let block = extract_code(&reply).map_err(|e| Failure::new(PbtStatus::NoCodeFound, e))?;
        write_out(out_source, block.source_text)
    })
}

/// Lists the assertions of a properties block as a JSON array.
///
/// # Safety
/// `props` is a NUL-terminated string; `out` is valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn pbt_enumerate_properties(props: *const c_char, out_json: *mut *mut c_char) -> PbtStatus {
    guard(|| {
        let found =
            enumerate_properties(arg(props, "props")?).map_err(|e| Failure::new(PbtStatus::AssemblyError, e))?;
        write_out(out_json, to_json(&found))
    })
}

#[derive(Deserialize)]
struct ScoreRequest {
    report: RunReport,
    #[serde(default)]
    mutants: Option<Vec<Mutant>>,
    #[serde(default)]
    mutant_results: Vec<MutantResult>,
    #[serde(default)]
    generator_name: Option<String>,
    #[serde(default)]
    thresholds: Option<IssueThresholds>,
    #[serde(default)]
    evaluation_index: usize,
}

/// Scores one evaluation. Input JSON: `{report, mutants?, mutant_results?,
/// generator_name?, thresholds?, evaluation_index?}`; mutation is scored
/// only when `mutants` is present. Output: the scorecard as JSON.
///
/// # Safety
/// `request_json` is a NUL-terminated string; `out` is valid for one
/// pointer write.
#[no_mangle]
pub unsafe extern "C" fn pbt_compute_scorecard(request_json: *const c_char, out_json: *mut *mut c_char) -> PbtStatus {
    guard(|| {
        let req: ScoreRequest = json_arg(arg(request_json, "request_json")?, "request_json")?;
        let card = compute_scorecard(ScoringInput {
            report: &req.report,
            mutation: req.mutants.as_deref().map(|m| (m, req.mutant_results.as_slice())),
            generator_name: req.generator_name.as_deref(),
            thresholds: req.thresholds.unwrap_or_default(),
            evaluation_index: req.evaluation_index,
        })
        .map_err(|e| Failure::new(PbtStatus::MetricsError, e))?;
        write_out(out_json, to_json(&card))
    })
}
