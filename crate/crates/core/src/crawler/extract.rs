//! HTML form and link extraction.

use std::collections::{BTreeMap, BTreeSet};

use scraper::{ElementRef, Html, Selector};
use url::Url;

use crate::error::ActionError;
use crate::model::{
    ControlConstraint, ControlSpec, ControlType, FormMethod, FormStructure, QuarantinedForm, infer_mandatory,
};

/// Everything recovered from one page.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PageForms {
    pub forms: Vec<FormStructure>,
    pub quarantined: Vec<QuarantinedForm>,
    pub notes: Vec<String>,
}

/// Resolves a form's `action` attribute against the page it was declared on.
pub fn resolve_action(base: &Url, action: &str) -> Result<Url, ActionError> {
    let trimmed = action.trim_matches(|c: char| c.is_ascii_whitespace());
    let mut resolved = if trimmed.is_empty() {
        base.clone()
    } else {
        base.join(trimmed).map_err(|e| ActionError { action: action.to_string(), reason: e.to_string() })?
    };
    if !matches!(resolved.scheme(), "http" | "https") {
        return Err(ActionError {
            action: action.to_string(),
            reason: format!("scheme {:?} is not submittable over HTTP", resolved.scheme()),
        });
    }
    resolved.set_fragment(None);
    Ok(resolved)
}

fn selector(css: &str) -> Selector {
    Selector::parse(css).expect("static selector")
}

/// Anchor targets on the page, resolved, fragment-free, HTTP(S) only, in document order.
pub fn extract_links(html: &str, page_url: &Url) -> Vec<Url> {
    let doc = Html::parse_document(html);
    let anchors = selector("a[href], area[href]");
    doc.select(&anchors)
        .filter_map(|a| a.value().attr("href"))
        .filter_map(|href| page_url.join(href.trim()).ok())
        .filter(|u| matches!(u.scheme(), "http" | "https"))
        .map(|mut u| {
            u.set_fragment(None);
            u
        })
        .collect()
}

/// Pending control before order indices and group-level constraints are fixed.
struct Draft {
    name: String,
    control_type: ControlType,
    mandatory: bool,
    constraints: Vec<ControlConstraint>,
    /// Declared value of a checkbox or radio member.
    choice: Option<String>,
    checked: bool,
}

pub fn extract_forms(html: &str, page_url: &Url) -> PageForms {
    let doc = Html::parse_document(html);
    let mut out = PageForms::default();
    if !doc.errors.is_empty() {
        out.notes.push(format!("{page_url}: recovered from {} HTML parse error(s)", doc.errors.len()));
    }
    let form_sel = selector("form");
    let mut page_source = page_url.clone();
    page_source.set_fragment(None);

    for form in doc.select(&form_sel) {
        let method = FormMethod::from_attribute(form.value().attr("method"));
        let controls = extract_controls(form, page_url, &mut out.notes);
        let action = form.value().attr("action").unwrap_or("");
        match resolve_action(&page_source, action) {
            Ok(destination) => out.forms.push(FormStructure::new(page_source.clone(), destination, method, controls)),
            Err(err) => out.quarantined.push(QuarantinedForm {
                source_page: page_source.clone(),
                action: action.to_string(),
                method,
                controls,
                reason: err.to_string(),
            }),
        }
    }
    out
}

fn extract_controls(form: ElementRef<'_>, page_url: &Url, notes: &mut Vec<String>) -> Vec<ControlSpec> {
    let mut drafts: Vec<Draft> = Vec::new();
    for node in form.descendants() {
        let Some(el) = ElementRef::wrap(node) else { continue };
        let tag = el.value().name();
        if !matches!(tag, "input" | "select" | "textarea" | "button") {
            continue;
        }
        let attrs: BTreeMap<String, String> =
            el.value().attrs().map(|(k, v)| (k.to_ascii_lowercase(), v.to_string())).collect();
        let Some(name) = attrs.get("name").filter(|n| !n.is_empty()).cloned() else {
            continue;
        };
        if attrs.contains_key("disabled") {
            continue;
        }
        match tag {
            "input" => {
                let kind = attrs.get("type").map(|t| t.trim().to_ascii_lowercase());
                let control_type = match kind.as_deref() {
                    None | Some("") | Some("text") => ControlType::Text,
                    Some("password") => ControlType::Password,
                    Some("hidden") => ControlType::Hidden,
                    Some("checkbox") => ControlType::Checkbox,
                    Some("radio") => ControlType::Radio,
                    Some("submit") => ControlType::Submit,
                    Some("file") => ControlType::File,
                    // never successful controls
                    Some("reset") | Some("button") => continue,
                    Some("image") => {
                        notes.push(format!("{page_url}: image input {name:?} submits coordinates only; not modelled"));
                        continue;
                    }
                    Some(_) => ControlType::Other,
                };
                drafts.push(input_draft(name, control_type, &attrs));
            }
            "textarea" => {
                let mut constraints = max_length(&attrs);
                if attrs.contains_key("readonly") {
                    constraints.push(ControlConstraint::FixedValue { expected: el.text().collect() });
                }
                drafts.push(Draft {
                    mandatory: infer_mandatory(ControlType::Textarea, &attrs),
                    name,
                    control_type: ControlType::Textarea,
                    constraints,
                    choice: None,
                    checked: false,
                });
            }
            "button" => {
                let kind = attrs.get("type").map(|t| t.trim().to_ascii_lowercase());
                if !matches!(kind.as_deref(), None | Some("") | Some("submit")) {
                    continue;
                }
                let mut constraints = Vec::new();
                if let Some(v) = attrs.get("value") {
                    constraints.push(ControlConstraint::FixedValue { expected: v.clone() });
                }
                drafts.push(Draft {
                    mandatory: infer_mandatory(ControlType::Submit, &attrs),
                    name,
                    control_type: ControlType::Submit,
                    constraints,
                    choice: None,
                    checked: false,
                });
            }
            "select" => {
                let options: BTreeSet<String> = el
                    .select(&selector("option"))
                    .map(|o| match o.value().attr("value") {
                        Some(v) => v.to_string(),
                        None => o.text().collect::<String>().split_whitespace().collect::<Vec<_>>().join(" "),
                    })
                    .collect();
                if options.is_empty() {
                    notes.push(format!("{page_url}: select {name:?} has no options; skipped"));
                    continue;
                }
                let allowed = ControlConstraint::AllowedSet { allowed: options.clone() };
                if attrs.contains_key("multiple") {
                    // one optional slot per option: a multi-select may repeat its name
                    for _ in 0..options.len() {
                        drafts.push(Draft {
                            name: name.clone(),
                            control_type: ControlType::Select,
                            mandatory: false,
                            constraints: vec![allowed.clone()],
                            choice: None,
                            checked: false,
                        });
                    }
                } else {
                    drafts.push(Draft {
                        mandatory: infer_mandatory(ControlType::Select, &attrs),
                        name,
                        control_type: ControlType::Select,
                        constraints: vec![allowed],
                        choice: None,
                        checked: false,
                    });
                }
            }
            _ => unreachable!(),
        }
    }
    finish_groups(&mut drafts);
    drafts
        .into_iter()
        .enumerate()
        .map(|(order_index, d)| ControlSpec {
            name: d.name,
            control_type: d.control_type,
            order_index,
            mandatory: d.mandatory,
            constraints: d.constraints,
        })
        .collect()
}

fn max_length(attrs: &BTreeMap<String, String>) -> Vec<ControlConstraint> {
    attrs
        .get("maxlength")
        .and_then(|v| v.trim().parse::<u64>().ok())
        .map(|limit| ControlConstraint::MaxLength { limit })
        .into_iter()
        .collect()
}

fn input_draft(name: String, control_type: ControlType, attrs: &BTreeMap<String, String>) -> Draft {
    let mut constraints = Vec::new();
    let value = attrs.get("value");
    let mut choice = None;
    match control_type {
        ControlType::Hidden | ControlType::Submit => {
            if let Some(v) = value {
                constraints.push(ControlConstraint::FixedValue { expected: v.clone() });
            }
        }
        ControlType::Checkbox | ControlType::Radio => {
            choice = Some(value.cloned().unwrap_or_else(|| "on".to_string()));
        }
        ControlType::Text | ControlType::Password | ControlType::Other => {
            constraints.extend(max_length(attrs));
            if attrs.contains_key("readonly") {
                constraints.push(ControlConstraint::FixedValue { expected: value.cloned().unwrap_or_default() });
            }
        }
        _ => {}
    }
    Draft {
        mandatory: infer_mandatory(control_type, attrs),
        name,
        control_type,
        constraints,
        choice,
        checked: attrs.contains_key("checked"),
    }
}

/// Gives every checkbox/radio member the allowed set of its whole same-named group,
/// and makes a radio group mandatory through its first member only.
fn finish_groups(drafts: &mut [Draft]) {
    let mut sets: BTreeMap<(ControlType, String), BTreeSet<String>> = BTreeMap::new();
    let mut checked: BTreeSet<String> = BTreeSet::new();
    for d in drafts.iter() {
        if let Some(choice) = &d.choice {
            let key = (d.control_type, d.name.clone());
            sets.entry(key).or_default().insert(choice.clone());
            if d.control_type == ControlType::Radio && d.checked {
                checked.insert(d.name.clone());
            }
        }
    }
    let mut seen_radio: BTreeSet<String> = BTreeSet::new();
    for d in drafts.iter_mut() {
        if d.choice.is_none() {
            continue;
        }
        let allowed = sets[&(d.control_type, d.name.clone())].clone();
        d.constraints.push(ControlConstraint::AllowedSet { allowed });
        if d.control_type == ControlType::Radio {
            let first = seen_radio.insert(d.name.clone());
            d.mandatory = first && checked.contains(&d.name);
        }
    }
}
