//! Prompt construction for the three synthesis tasks and the follow-up
//! mitigation prompts.
//!
//! Wording lives in template files (see `templates/`) so it can change
//! without a rebuild: [`TemplateSet::load`] overlays a directory on top of
//! the built-in set.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("documentation text is empty")]
    EmptyDocumentation,
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("unsupported task: {0}")]
    UnsupportedTask(String),
    #[error("mitigation context is empty")]
    EmptyContext,
    #[error("mitigation payload does not match action {kind:?}")]
    ContextMismatch { kind: MitigationKind },
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("unknown placeholder `{{{{{0}}}}}` in template `{1}`")]
    UnknownPlaceholder(String, String),
    #[error("template io: {0}")]
    Io(String),
}

/// The function or method under test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetApi {
    pub library: String,
    pub module_path: String,
    pub qualname: String,
    pub doc_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_object: Option<String>,
}

impl TargetApi {
    /// Builds a target from its dotted name. The library is the first
    /// component and the module path everything before the last one.
    pub fn from_qualname(qualname: &str, doc_text: impl Into<String>) -> Result<Self, PromptError> {
        let (module_path, _) = qualname
            .rsplit_once('.')
            .ok_or_else(|| PromptError::InvalidTarget(format!("`{qualname}` is not dotted")))?;
        let library = qualname.split('.').next().unwrap_or_default();
        let target = Self {
            library: library.to_string(),
            module_path: module_path.to_string(),
            qualname: qualname.to_string(),
            doc_text: doc_text.into(),
            input_object: None,
        };
        target.validate()?;
        Ok(target)
    }

    pub fn with_module_path(mut self, module_path: impl Into<String>) -> Self {
        self.module_path = module_path.into();
        self
    }

    pub fn with_input_object(mut self, input_object: impl Into<String>) -> Self {
        self.input_object = Some(input_object.into());
        self
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.doc_text.trim().is_empty() {
            return Err(PromptError::EmptyDocumentation);
        }
        let dotted = self.qualname.contains('.')
            && self
                .qualname
                .split('.')
                .all(|part| !part.is_empty() && is_identifier(part));
        if !dotted {
            return Err(PromptError::InvalidTarget(format!(
                "qualname `{}` must be a dot-separated identifier path",
                self.qualname
            )));
        }
        if !self.qualname.starts_with(&format!("{}.", self.module_path)) {
            return Err(PromptError::InvalidTarget(format!(
                "module path `{}` is not a prefix of `{}`",
                self.module_path, self.qualname
            )));
        }
        Ok(())
    }

    /// Last component of the qualified name.
    pub fn short_name(&self) -> &str {
        self.qualname.rsplit('.').next().unwrap_or(&self.qualname)
    }

    /// Object a generator must produce; falls back to a description of the
    /// call's arguments when the target does not name one.
    pub fn input_object_or_default(&self) -> String {
        self.input_object
            .clone()
            .unwrap_or_else(|| format!("input arguments of {}", self.qualname))
    }

    /// Conventional generator name, e.g. `generate_graph` for
    /// `networkx.Graph`, `generate_cumsum_inputs` without an input object.
    pub fn default_generator_name(&self) -> String {
        match &self.input_object {
            Some(obj) => {
                let last = obj.rsplit('.').next().unwrap_or(obj);
                format!("generate_{}", snake_case(last))
            }
            None => format!("generate_{}_inputs", snake_case(self.short_name())),
        }
    }

    /// Identifier stem for test functions: `numpy_cumsum`.
    pub fn test_stem(&self) -> String {
        snake_case(&self.qualname.replace('.', "_"))
    }
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c == '_' || c.is_alphabetic() => {}
        _ => return false,
    }
    chars.all(|c| c == '_' || c.is_alphanumeric())
}

fn snake_case(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 4);
    let mut prev_lower = false;
    for c in s.chars() {
        if c.is_uppercase() {
            if prev_lower {
                out.push('_');
            }
            out.extend(c.to_lowercase());
            prev_lower = false;
        } else {
            out.push(c);
            prev_lower = c.is_lowercase() || c.is_ascii_digit();
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    Generator,
    Properties,
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutputFormat {
    /// `@st.composite` generator function.
    CompositeDecorator,
    /// Bare assertion statements over named input/output variables.
    AssertionBlock,
    /// One test function drawing from `st.data()`.
    DataDecorator,
}

/// Variable names bound for a properties block.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IoNames {
    pub input: String,
    pub output: String,
}

impl Default for IoNames {
    fn default() -> Self {
        Self {
            input: "input_args".to_string(),
            output: "result".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTask {
    pub kind: TaskKind,
    pub output_format: OutputFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub io_names: Option<IoNames>,
}

impl PromptTask {
    pub fn generator() -> Self {
        Self {
            kind: TaskKind::Generator,
            output_format: OutputFormat::CompositeDecorator,
            io_names: None,
        }
    }

    pub fn properties(io_names: IoNames) -> Self {
        Self {
            kind: TaskKind::Properties,
            output_format: OutputFormat::AssertionBlock,
            io_names: Some(io_names),
        }
    }

    pub fn combined() -> Self {
        Self {
            kind: TaskKind::Combined,
            output_format: OutputFormat::DataDecorator,
            io_names: None,
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let ok = match self.kind {
            TaskKind::Generator => self.output_format == OutputFormat::CompositeDecorator,
            TaskKind::Combined => self.output_format == OutputFormat::DataDecorator,
            TaskKind::Properties => self.output_format == OutputFormat::AssertionBlock && self.io_names.is_some(),
        };
        if ok {
            Ok(())
        } else {
            Err(PromptError::UnsupportedTask(format!(
                "{:?} with {:?}{}",
                self.kind,
                self.output_format,
                if self.kind == TaskKind::Properties && self.io_names.is_none() {
                    " and no io names"
                } else {
                    ""
                }
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptMessage {
    pub role: Role,
    pub text: String,
}

impl PromptMessage {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            text: text.into(),
        }
    }
}

/// Renders messages in the plain layout used by golden prompt files.
pub fn render_messages(messages: &[PromptMessage]) -> String {
    let mut out = String::new();
    for m in messages {
        out.push_str("=== ");
        out.push_str(m.role.as_str());
        out.push_str(" ===\n");
        out.push_str(&m.text);
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MitigationKind {
    FixGeneratorError,
    EnrichGenerator,
    FixPropertyError,
    FixUnsoundProperty,
    StrengthenProperty,
}

impl MitigationKind {
    pub fn template_name(self) -> &'static str {
        match self {
            MitigationKind::FixGeneratorError => "fix_generator_error",
            MitigationKind::EnrichGenerator => "enrich_generator",
            MitigationKind::FixPropertyError => "fix_property_error",
            MitigationKind::FixUnsoundProperty => "fix_unsound_property",
            MitigationKind::StrengthenProperty => "strengthen_property",
        }
    }

    /// True when the mitigation rewrites the generator rather than the
    /// properties.
    pub fn targets_generator(self) -> bool {
        matches!(
            self,
            MitigationKind::FixGeneratorError | MitigationKind::EnrichGenerator
        )
    }

    fn wrap(self, payload: String) -> MitigationContext {
        match self {
            MitigationKind::FixGeneratorError | MitigationKind::FixPropertyError => {
                MitigationContext::ErrorMessage(payload)
            }
            MitigationKind::EnrichGenerator => MitigationContext::FeatureRequest(payload),
            MitigationKind::FixUnsoundProperty => MitigationContext::Counterexample(payload),
            MitigationKind::StrengthenProperty => MitigationContext::MutantDiff(payload),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "text", rename_all = "snake_case")]
pub enum MitigationContext {
    ErrorMessage(String),
    FeatureRequest(String),
    Counterexample(String),
    MutantDiff(String),
}

impl MitigationContext {
    pub fn text(&self) -> &str {
        match self {
            MitigationContext::ErrorMessage(t)
            | MitigationContext::FeatureRequest(t)
            | MitigationContext::Counterexample(t)
            | MitigationContext::MutantDiff(t) => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MitigationAction {
    pub kind: MitigationKind,
    pub context: MitigationContext,
}

impl MitigationAction {
    /// Wraps `payload` in the context variant that `kind` requires.
    pub fn new(kind: MitigationKind, payload: impl Into<String>) -> Result<Self, PromptError> {
        let payload = payload.into();
        if payload.trim().is_empty() {
            return Err(PromptError::EmptyContext);
        }
        Ok(Self {
            kind,
            context: kind.wrap(payload),
        })
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.context.text().trim().is_empty() {
            return Err(PromptError::EmptyContext);
        }
        let expected = self.kind.wrap(String::new());
        if std::mem::discriminant(&expected) != std::mem::discriminant(&self.context) {
            return Err(PromptError::ContextMismatch { kind: self.kind });
        }
        Ok(())
    }
}

const BUILTIN_TEMPLATES: &[(&str, &str)] = &[
    ("system", include_str!("../templates/system.txt")),
    ("generator", include_str!("../templates/generator.txt")),
    ("properties", include_str!("../templates/properties.txt")),
    ("combined", include_str!("../templates/combined.txt")),
    (
        "followup_properties",
        include_str!("../templates/followup_properties.txt"),
    ),
    (
        "fix_generator_error",
        include_str!("../templates/fix_generator_error.txt"),
    ),
    ("enrich_generator", include_str!("../templates/enrich_generator.txt")),
    (
        "fix_property_error",
        include_str!("../templates/fix_property_error.txt"),
    ),
    (
        "fix_unsound_property",
        include_str!("../templates/fix_unsound_property.txt"),
    ),
    (
        "strengthen_property",
        include_str!("../templates/strengthen_property.txt"),
    ),
];

const PLACEHOLDERS: &[&str] = &[
    "doc_text",
    "qualname",
    "input_object",
    "generator_name",
    "artifact_name",
    "test_stem",
    "input_var",
    "output_var",
    "payload",
];

/// A named set of prompt templates. Templates use `{{placeholder}}`
/// substitution; lines starting with `%%` at the top of a file are header
/// comments and are not part of the prompt.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    bodies: HashMap<String, String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let bodies = BUILTIN_TEMPLATES
            .iter()
            .map(|(name, raw)| (name.to_string(), strip_header(raw).to_string()))
            .collect();
        Self { bodies }
    }

    /// Built-in templates overlaid with every `<name>.txt` found in `dir`.
    pub fn load(dir: &Path) -> Result<Self, PromptError> {
        if !dir.is_dir() {
            return Err(PromptError::Io(format!("{} is not a directory", dir.display())));
        }
        let mut set = Self::builtin();
        for (name, _) in BUILTIN_TEMPLATES {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                let raw =
                    std::fs::read_to_string(&path).map_err(|e| PromptError::Io(format!("{}: {e}", path.display())))?;
                set.bodies.insert(name.to_string(), strip_header(&raw).to_string());
            }
        }
        Ok(set)
    }

    fn render(&self, name: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
        let body = self
            .bodies
            .get(name)
            .ok_or_else(|| PromptError::UnknownTemplate(name.to_string()))?;
        let rendered = substitute(body, vars, name)?;
        Ok(rendered.strip_suffix('\n').unwrap_or(&rendered).to_string())
    }
}

fn strip_header(raw: &str) -> &str {
    let mut rest = raw;
    while rest.starts_with("%%") {
        rest = match rest.find('\n') {
            Some(i) => &rest[i + 1..],
            None => "",
        };
    }
    rest
}

/// Single left-to-right pass: substituted values are never rescanned, so a
/// `{{...}}` inside documentation text survives verbatim.
fn substitute(body: &str, vars: &[(&str, &str)], template: &str) -> Result<String, PromptError> {
    let mut out = String::with_capacity(body.len() + 256);
    let mut rest = body;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else {
            out.push_str(&rest[start..]);
            return Ok(out);
        };
        let name = after[..end].trim();
        if !PLACEHOLDERS.contains(&name) {
            return Err(PromptError::UnknownPlaceholder(name.to_string(), template.to_string()));
        }
        let value = vars.iter().find(|(k, _)| *k == name).map(|(_, v)| *v).unwrap_or("");
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

/// System message followed by one user message carrying the task
/// instructions, the documentation verbatim and the output format.
pub fn build_synthesis_prompt(target: &TargetApi, task: &PromptTask) -> Result<Vec<PromptMessage>, PromptError> {
    build_synthesis_prompt_with(&TemplateSet::builtin(), target, task)
}

pub fn build_synthesis_prompt_with(
    templates: &TemplateSet,
    target: &TargetApi,
    task: &PromptTask,
) -> Result<Vec<PromptMessage>, PromptError> {
    target.validate()?;
    task.validate()?;
    let input_object = target.input_object_or_default();
    let generator_name = target.default_generator_name();
    let test_stem = target.test_stem();
    let io = task.io_names.clone().unwrap_or_default();
    let vars = [
        ("doc_text", target.doc_text.as_str()),
        ("qualname", target.qualname.as_str()),
        ("input_object", input_object.as_str()),
        ("generator_name", generator_name.as_str()),
        ("test_stem", test_stem.as_str()),
        ("input_var", io.input.as_str()),
        ("output_var", io.output.as_str()),
    ];
    let template = match task.kind {
        TaskKind::Generator => "generator",
        TaskKind::Properties => "properties",
        TaskKind::Combined => "combined",
    };
    Ok(vec![
        PromptMessage::new(Role::System, templates.render("system", &vars)?),
        PromptMessage::new(Role::User, templates.render(template, &vars)?),
    ])
}

/// Second user turn of the consecutive strategy: asks for properties of a
/// test driven by the generator the model already wrote, quoting its
/// source.
pub fn build_followup_prompt(
    templates: &TemplateSet,
    target: &TargetApi,
    generator_name: &str,
    generator_source: &str,
    io: &IoNames,
) -> Result<PromptMessage, PromptError> {
    let vars = [
        ("qualname", target.qualname.as_str()),
        ("generator_name", generator_name),
        ("payload", generator_source.trim_end_matches('\n')),
        ("input_var", io.input.as_str()),
        ("output_var", io.output.as_str()),
    ];
    Ok(PromptMessage::new(
        Role::User,
        templates.render("followup_properties", &vars)?,
    ))
}

pub fn build_mitigation_prompt(
    action: &MitigationAction,
    prior_artifact_name: &str,
) -> Result<PromptMessage, PromptError> {
    build_mitigation_prompt_with(&TemplateSet::builtin(), action, prior_artifact_name, "")
}

/// `qualname` fills the template's target reference where one is used.
pub fn build_mitigation_prompt_with(
    templates: &TemplateSet,
    action: &MitigationAction,
    prior_artifact_name: &str,
    qualname: &str,
) -> Result<PromptMessage, PromptError> {
    action.validate()?;
    let vars = [
        ("artifact_name", prior_artifact_name),
        ("generator_name", prior_artifact_name),
        ("qualname", qualname),
        ("payload", action.context.text()),
    ];
    Ok(PromptMessage::new(
        Role::User,
        templates.render(action.kind.template_name(), &vars)?,
    ))
}
