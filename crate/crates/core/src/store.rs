//! The versioned structure file shared by the crawler and the monitor.
//!
//! ```json
//! {"version":1,"base_url":"http://host/","crawled_at":"2011-04-01T00:00:00Z",
//!  "groups":[{"destination":"http://host/wp-login.php",
//!    "forms":[{"id":"3f2a...","source":"http://host/wp-login.php","method":"POST",
//!      "controls":[{"name":"log","type":"text","order":0,"mandatory":true,
//!                   "constraints":[{"kind":"max_length","limit":60}]}]}]}]}
//! ```
//!
//! `mandatory` may be omitted, in which case it is inferred from `type`; when
//! present it overrides inference. `id` may be omitted and is then derived.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use url::Url;

use crate::error::StructureError;
use crate::model::{
    ApplicationStructure, ControlConstraint, ControlSpec, ControlType, DestinationGroup, FormMethod, FormStructure,
    QuarantinedForm, form_id, infer_mandatory, validate_structure,
};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct FileDoc {
    version: u32,
    base_url: Url,
    #[serde(default = "epoch")]
    crawled_at: DateTime<Utc>,
    groups: Vec<FileGroup>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    quarantine: Vec<QuarantinedForm>,
}

fn epoch() -> DateTime<Utc> {
    DateTime::<Utc>::UNIX_EPOCH
}

#[derive(Serialize, Deserialize)]
struct FileGroup {
    destination: Url,
    forms: Vec<FileForm>,
}

#[derive(Serialize, Deserialize)]
struct FileForm {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    source: Url,
    method: FormMethod,
    controls: Vec<FileControl>,
}

#[derive(Serialize, Deserialize)]
struct FileControl {
    name: String,
    #[serde(rename = "type")]
    control_type: ControlType,
    order: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mandatory: Option<bool>,
    #[serde(default)]
    constraints: Vec<ControlConstraint>,
}

fn to_doc(structure: &ApplicationStructure) -> FileDoc {
    FileDoc {
        version: FORMAT_VERSION,
        base_url: structure.base_url.clone(),
        crawled_at: structure.crawled_at,
        groups: structure
            .groups
            .iter()
            .map(|g| FileGroup {
                destination: g.destination_page.clone(),
                forms: g
                    .forms
                    .iter()
                    .map(|f| FileForm {
                        id: Some(f.form_id.clone()),
                        source: f.source_page.clone(),
                        method: f.method,
                        controls: f
                            .controls
                            .iter()
                            .map(|c| FileControl {
                                name: c.name.clone(),
                                control_type: c.control_type,
                                order: c.order_index,
                                mandatory: Some(c.mandatory),
                                constraints: c.constraints.clone(),
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect(),
        quarantine: structure.quarantine.clone(),
    }
}

fn from_doc(doc: FileDoc) -> ApplicationStructure {
    let no_attributes = BTreeMap::new();
    let groups = doc
        .groups
        .into_iter()
        .map(|g| {
            let forms = g
                .forms
                .into_iter()
                .map(|f| {
                    let controls: Vec<ControlSpec> = f
                        .controls
                        .into_iter()
                        .map(|c| ControlSpec {
                            mandatory: c.mandatory.unwrap_or_else(|| infer_mandatory(c.control_type, &no_attributes)),
                            name: c.name,
                            control_type: c.control_type,
                            order_index: c.order,
                            constraints: c.constraints,
                        })
                        .collect();
                    let form_id = f.id.unwrap_or_else(|| form_id(&f.source, &g.destination, f.method, &controls));
                    FormStructure {
                        form_id,
                        source_page: f.source,
                        destination_page: g.destination.clone(),
                        method: f.method,
                        controls,
                    }
                })
                .collect();
            DestinationGroup { destination_page: g.destination, forms }
        })
        .collect();
    ApplicationStructure { base_url: doc.base_url, crawled_at: doc.crawled_at, groups, quarantine: doc.quarantine }
}

pub fn structure_to_json(structure: &ApplicationStructure) -> String {
    serde_json::to_string_pretty(&to_doc(structure)).expect("structure document serializes")
}

/// Parses and validates a structure document.
pub fn structure_from_json(text: &str) -> Result<ApplicationStructure, StructureError> {
    #[derive(Deserialize)]
    struct Versioned {
        version: u32,
    }
    let parse_error =
        |e: serde_json::Error| StructureError::Parse { line: e.line(), column: e.column(), message: e.to_string() };
    // other versions may not share this layout, so check before the full parse
    let Versioned { version } = serde_json::from_str(text).map_err(parse_error)?;
    if version != FORMAT_VERSION {
        return Err(StructureError::UnsupportedVersion(version));
    }
    let doc: FileDoc = serde_json::from_str(text).map_err(parse_error)?;
    let structure = from_doc(doc);
    let violations = validate_structure(&structure);
    if !violations.is_empty() {
        return Err(StructureError::Invalid(violations));
    }
    Ok(structure)
}

pub fn load_structure(path: &Path) -> Result<ApplicationStructure, StructureError> {
    let text =
        fs::read_to_string(path).map_err(|source| StructureError::Io { path: path.display().to_string(), source })?;
    structure_from_json(&text)
}

pub fn save_structure(structure: &ApplicationStructure, path: &Path) -> Result<(), StructureError> {
    let mut text = structure_to_json(structure);
    text.push('\n');
    fs::write(path, text).map_err(|source| StructureError::Io { path: path.display().to_string(), source })
}
