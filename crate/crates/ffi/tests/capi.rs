use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use serde_json::{json, Value};

use pbt_workbench::assembly::Phase;
use pbt_workbench::protocol::{RunOutcome, RunReport, RunStatus};
use pbt_workbench_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

/// Takes ownership of a library string.
fn take(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string();
    unsafe { pbt_string_free(p) };
    s
}

fn last_error() -> Option<String> {
    let p = pbt_last_error_message();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

const CUMSUM_DOC: &str = "Return the cumulative sum of the elements along a given axis.";

#[test]
fn synthesis_prompt_through_handle() {
    let set = pbt_templates_builtin();
    let target = c(&json!({
        "qualname": "numpy.cumsum",
        "library": "numpy",
        "module_path": "numpy",
        "doc_text": CUMSUM_DOC,
    })
    .to_string());
    let task = c(r#"{"kind": "Combined", "output_format": "DataDecorator"}"#);
    let mut out = ptr::null_mut();
    let status = unsafe { pbt_build_synthesis_prompt(set, target.as_ptr(), task.as_ptr(), &mut out) };
    assert_eq!(status, PbtStatus::Ok, "{:?}", last_error());
    let messages: Value = serde_json::from_str(&take(out)).unwrap();
    assert_eq!(messages.as_array().unwrap().len(), 2);
    assert_eq!(messages[0]["role"], "system");
    assert!(messages[1]["text"].as_str().unwrap().contains(CUMSUM_DOC));
    assert!(last_error().is_none());

    let empty = c(r#"{"qualname": "numpy.cumsum", "library": "numpy", "module_path": "numpy", "doc_text": " "}"#);
    let status = unsafe { pbt_build_synthesis_prompt(set, empty.as_ptr(), task.as_ptr(), &mut out) };
    assert_eq!(status, PbtStatus::PromptError);
    assert!(last_error().unwrap().contains("empty"), "{:?}", last_error());

    let status = unsafe { pbt_build_synthesis_prompt(set, c("{").as_ptr(), task.as_ptr(), &mut out) };
    assert_eq!(status, PbtStatus::InvalidJson);
    let status = unsafe { pbt_build_synthesis_prompt(ptr::null(), target.as_ptr(), task.as_ptr(), &mut out) };
    assert_eq!(status, PbtStatus::NullArgument);
    unsafe { pbt_templates_free(set) };
}

#[test]
fn mitigation_prompt_embeds_payload() {
    let set = pbt_templates_builtin();
    let action = c(
        r#"{"kind": "FixGeneratorError", "context": {"type": "error_message", "text": "OverflowError: days=1000000000"}}"#,
    );
    let mut out = ptr::null_mut();
    let status = unsafe {
        pbt_build_mitigation_prompt(
            set,
            action.as_ptr(),
            c("generate_timedelta").as_ptr(),
            ptr::null(),
            &mut out,
        )
    };
    assert_eq!(status, PbtStatus::Ok, "{:?}", last_error());
    let msg: Value = serde_json::from_str(&take(out)).unwrap();
    assert_eq!(msg["role"], "user");
    assert!(msg["text"].as_str().unwrap().contains("OverflowError: days=1000000000"));

    let mismatched = c(r#"{"kind": "StrengthenProperty", "context": {"type": "error_message", "text": "x"}}"#);
    let status =
        unsafe { pbt_build_mitigation_prompt(set, mismatched.as_ptr(), c("g").as_ptr(), ptr::null(), &mut out) };
    assert_eq!(status, PbtStatus::PromptError);
    unsafe { pbt_templates_free(set) };
}

#[test]
fn template_load_errors_are_reported() {
    let mut set = ptr::null_mut();
    let status = unsafe { pbt_templates_load(c("/nonexistent/templates").as_ptr(), &mut set) };
    assert_eq!(status, PbtStatus::TemplateIo);
    assert!(set.is_null());
    assert!(last_error().is_some());
    unsafe { pbt_templates_free(ptr::null_mut()) };
}

#[test]
fn extract_code_and_enumerate_properties() {
    let reply = c("Here it is:\n```python\nassert len(out) == len(a)\nassert out[-1] == a.sum()\n```\n");
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { pbt_extract_code(reply.as_ptr(), &mut out) }, PbtStatus::Ok);
    let code = take(out);
    assert_eq!(code, "assert len(out) == len(a)\nassert out[-1] == a.sum()\n");

    let code_c = c(&code);
    assert_eq!(
        unsafe { pbt_enumerate_properties(code_c.as_ptr(), &mut out) },
        PbtStatus::Ok
    );
    let props: Value = serde_json::from_str(&take(out)).unwrap();
    let ids: Vec<&str> = props
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["id"].as_str().unwrap())
        .collect();
    assert_eq!(ids, ["P1", "P2"]);

    assert_eq!(
        unsafe { pbt_extract_code(c("  ").as_ptr(), &mut out) },
        PbtStatus::NoCodeFound
    );
    assert_eq!(
        unsafe { pbt_enumerate_properties(c("x = 1").as_ptr(), &mut out) },
        PbtStatus::Ok
    );
    assert_eq!(take(out), "[]");
    let status = unsafe { pbt_enumerate_properties(c("assert (x ==\n").as_ptr(), &mut out) };
    assert_eq!(status, PbtStatus::AssemblyError);
    assert_eq!(
        unsafe { pbt_extract_code(ptr::null(), &mut out) },
        PbtStatus::NullArgument
    );
    assert_eq!(
        unsafe { pbt_extract_code(reply.as_ptr(), ptr::null_mut()) },
        PbtStatus::NullArgument
    );
    let bad_utf8 = [0xffu8, 0xfe, 0];
    assert_eq!(
        unsafe { pbt_extract_code(bad_utf8.as_ptr().cast(), &mut out) },
        PbtStatus::InvalidUtf8
    );
}

#[test]
fn scorecard_from_report() {
    let ids = vec!["P1".to_string()];
    let mut outcomes: Vec<RunOutcome> = (0..10).map(|i| RunOutcome::ok(i, Phase::Check("P1".into()))).collect();
    outcomes[3].status = RunStatus::GeneratorError;
    outcomes[3].phase = Phase::Generate;
    outcomes[3].error_type = Some("OverflowError".into());
    outcomes[3].error_message = Some("too big".into());
    outcomes[5].status = RunStatus::AssertionFailure;
    outcomes[5].failed_property_ids = ids.clone();
    let report = RunReport::from_outcomes(10, 1, ids, false, outcomes, None, false).unwrap();
    let request = c(&json!({ "report": report, "generator_name": "gen" }).to_string());
    let mut out = ptr::null_mut();
    let status = unsafe { pbt_compute_scorecard(request.as_ptr(), &mut out) };
    assert_eq!(status, PbtStatus::Ok, "{:?}", last_error());
    let card: Value = serde_json::from_str(&take(out)).unwrap();
    assert_eq!(
        (
            card["generator_validity"]["num"].as_u64(),
            card["generator_validity"]["den"].as_u64()
        ),
        (Some(9), Some(10))
    );
    // 1 failure in 9 reached runs is above the threshold.
    assert_eq!(card["verdicts"][0]["verdict"], "Unsound");
    assert!(card.get("property_strength").is_none());

    let status = unsafe { pbt_compute_scorecard(c(r#"{"report": 3}"#).as_ptr(), &mut out) };
    assert_eq!(status, PbtStatus::InvalidJson);
}

#[test]
fn abi_version_matches_header() {
    assert_eq!(pbt_abi_version(), PBT_ABI_VERSION);
    let header =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/pbt_workbench.h")).unwrap();
    assert!(header.contains(&format!("#define PBT_ABI_VERSION {PBT_ABI_VERSION}")));
    for f in [
        "pbt_last_error_message",
        "pbt_string_free",
        "pbt_templates_builtin",
        "pbt_templates_load",
        "pbt_templates_free",
        "pbt_build_synthesis_prompt",
        "pbt_build_mitigation_prompt",
        "pbt_extract_code",
        "pbt_enumerate_properties",
        "pbt_compute_scorecard",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("typedef struct PbtTemplateSet PbtTemplateSet;"));
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let probe = tempfile_path("probe.c");
    std::fs::write(
        &probe,
        "#include \"pbt_workbench.h\"\nint main(void) { PbtStatus s = PBT_STATUS_OK; (void)s; return 0; }\n",
    )
    .unwrap();
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(out) = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, "-I"])
            .arg(&dir)
            .arg(&probe)
            .output()
        else {
            eprintln!("{compiler} not available; skipping");
            continue;
        };
        assert!(
            out.status.success(),
            "{compiler}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

fn tempfile_path(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("pbt-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}
