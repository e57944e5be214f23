//! Domain types for a crawled application's form structure.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use url::Url;

/// A value restriction declared in HTML for a single control.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlConstraint {
    /// `maxlength` attribute; counted in characters.
    MaxLength { limit: u64 },
    /// Declared value of a hidden, submit or read-only control.
    FixedValue { expected: String },
    /// Declared values of a checkbox, radio group or select.
    AllowedSet { allowed: BTreeSet<String> },
}

impl ControlConstraint {
    pub fn label(&self) -> String {
        match self {
            ControlConstraint::MaxLength { limit } => format!("length <= {limit}"),
            ControlConstraint::FixedValue { expected } => format!("value = \"{expected}\""),
            ControlConstraint::AllowedSet { allowed } => {
                let items: Vec<&str> = allowed.iter().map(String::as_str).collect();
                format!("value in {{{}}}", items.join(", "))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlType {
    Text,
    Password,
    Hidden,
    Checkbox,
    Radio,
    Select,
    Textarea,
    Submit,
    File,
    Other,
}

impl ControlType {
    pub fn as_str(self) -> &'static str {
        match self {
            ControlType::Text => "text",
            ControlType::Password => "password",
            ControlType::Hidden => "hidden",
            ControlType::Checkbox => "checkbox",
            ControlType::Radio => "radio",
            ControlType::Select => "select",
            ControlType::Textarea => "textarea",
            ControlType::Submit => "submit",
            ControlType::File => "file",
            ControlType::Other => "other",
        }
    }
}

impl fmt::Display for ControlType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlSpec {
    pub name: String,
    pub control_type: ControlType,
    pub order_index: usize,
    pub mandatory: bool,
    pub constraints: Vec<ControlConstraint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FormMethod {
    Get,
    Post,
}

impl FormMethod {
    /// Parses an HTML `method` attribute; anything other than `post` is GET.
    pub fn from_attribute(value: Option<&str>) -> FormMethod {
        match value {
            Some(v) if v.trim().eq_ignore_ascii_case("post") => FormMethod::Post,
            _ => FormMethod::Get,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FormMethod::Get => "GET",
            FormMethod::Post => "POST",
        }
    }
}

impl fmt::Display for FormMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormStructure {
    pub form_id: String,
    pub source_page: Url,
    pub destination_page: Url,
    pub method: FormMethod,
    pub controls: Vec<ControlSpec>,
}

impl FormStructure {
    /// Builds a form and derives its stable identifier.
    pub fn new(
        source_page: Url,
        destination_page: Url,
        method: FormMethod,
        controls: Vec<ControlSpec>,
    ) -> FormStructure {
        let form_id = form_id(&source_page, &destination_page, method, &controls);
        FormStructure { form_id, source_page, destination_page, method, controls }
    }

    pub fn control(&self, order_index: usize) -> Option<&ControlSpec> {
        self.controls.iter().find(|c| c.order_index == order_index)
    }

    pub fn control_names(&self) -> BTreeSet<&str> {
        self.controls.iter().map(|c| c.name.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DestinationGroup {
    pub destination_page: Url,
    pub forms: Vec<FormStructure>,
}

impl DestinationGroup {
    /// Durable identifier used in drill-down URLs.
    pub fn group_id(&self) -> String {
        stable_hash12(&[self.destination_page.as_str()])
    }
}

/// A form whose `action` could not be resolved; kept for the operator instead of dropped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantinedForm {
    pub source_page: Url,
    pub action: String,
    pub method: FormMethod,
    pub controls: Vec<ControlSpec>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplicationStructure {
    pub base_url: Url,
    pub crawled_at: DateTime<Utc>,
    pub groups: Vec<DestinationGroup>,
    pub quarantine: Vec<QuarantinedForm>,
}

impl ApplicationStructure {
    pub fn forms(&self) -> impl Iterator<Item = &FormStructure> {
        self.groups.iter().flat_map(|g| g.forms.iter())
    }

    pub fn form(&self, form_id: &str) -> Option<&FormStructure> {
        self.forms().find(|f| f.form_id == form_id)
    }

    pub fn group_of_form(&self, form_id: &str) -> Option<&DestinationGroup> {
        self.groups.iter().find(|g| g.forms.iter().any(|f| f.form_id == form_id))
    }

    pub fn group_by_id(&self, group_id: &str) -> Option<&DestinationGroup> {
        self.groups.iter().find(|g| g.group_id() == group_id)
    }

    /// Equality ignoring the crawl timestamp.
    pub fn same_shape(&self, other: &ApplicationStructure) -> bool {
        self.base_url == other.base_url && self.groups == other.groups && self.quarantine == other.quarantine
    }
}

/// First 12 hex digits of SHA-256 over the given fields, unit-separated.
pub fn stable_hash12(fields: &[&str]) -> String {
    let digest = stable_digest(fields);
    hex::encode(&digest[..6])
}

pub(crate) fn stable_digest(fields: &[&str]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for (i, field) in fields.iter().enumerate() {
        if i > 0 {
            hasher.update([0x1f]);
        }
        hasher.update(field.as_bytes());
    }
    hasher.finalize().into()
}

pub fn form_id(source_page: &Url, destination_page: &Url, method: FormMethod, controls: &[ControlSpec]) -> String {
    let mut fields = vec![source_page.as_str(), destination_page.as_str(), method.as_str()];
    fields.extend(controls.iter().map(|c| c.name.as_str()));
    stable_hash12(&fields)
}

/// Default presence assumption for a control, from its type and HTML attributes.
///
/// Unchecked checkboxes are never submitted, and a radio group only submits when a
/// member is checked, so both are optional unless a default selection exists.
pub fn infer_mandatory(control_type: ControlType, attributes: &BTreeMap<String, String>) -> bool {
    match control_type {
        ControlType::Checkbox => false,
        ControlType::Radio => attributes.contains_key("checked"),
        _ => true,
    }
}

/// Checks every structural invariant and describes each breach.
pub fn validate_structure(structure: &ApplicationStructure) -> Vec<String> {
    let mut violations = Vec::new();
    let mut destinations = HashSet::new();
    for group in &structure.groups {
        let dest = group.destination_page.as_str();
        if !destinations.insert(dest) {
            violations.push(format!("destination {dest} appears in more than one group"));
        }
        if group.destination_page.fragment().is_some() {
            violations.push(format!("destination {dest} carries a fragment"));
        }
        for form in &group.forms {
            if form.destination_page != group.destination_page {
                violations
                    .push(format!("form {} targets {} but sits in group {dest}", form.form_id, form.destination_page));
            }
            validate_form(form, &mut violations);
        }
    }
    violations
}

fn validate_form(form: &FormStructure, violations: &mut Vec<String>) {
    let id = &form.form_id;
    if id.is_empty() {
        violations.push(format!("form from {} has an empty id", form.source_page));
    }
    let mut orders: Vec<usize> = form.controls.iter().map(|c| c.order_index).collect();
    orders.sort_unstable();
    let contiguous = orders.iter().enumerate().all(|(i, &o)| i == o);
    if !contiguous {
        violations.push(format!("form {id}: control order indices {orders:?} are not unique and contiguous from 0"));
    }
    for control in &form.controls {
        let at = format!("form {id}, control {:?} (#{})", control.name, control.order_index);
        if control.name.is_empty() {
            violations.push(format!("{at}: empty name"));
        }
        for constraint in &control.constraints {
            if let ControlConstraint::AllowedSet { allowed } = constraint
                && allowed.is_empty()
            {
                violations.push(format!("{at}: empty allowed set"));
            }
        }
        let has_allowed = control.constraints.iter().any(|c| matches!(c, ControlConstraint::AllowedSet { .. }));
        if matches!(control.control_type, ControlType::Checkbox | ControlType::Radio | ControlType::Select)
            && !has_allowed
        {
            violations.push(format!("{at}: {} control lacks an allowed set", control.control_type));
        }
    }
}
