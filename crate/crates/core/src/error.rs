use thiserror::Error;

#[derive(Debug, Error)]
pub enum StructureError {
    #[error("structure file parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("unsupported structure file version {0}")]
    UnsupportedVersion(u32),
    #[error("structure violates {} invariant(s): {}", .0.len(), .0.join("; "))]
    Invalid(Vec<String>),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("cannot resolve form action {action:?}: {reason}")]
pub struct ActionError {
    pub action: String,
    pub reason: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IngestError {
    #[error("line {line}: malformed capture record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: multipart bodies are not supported")]
    Multipart { line: usize },
    #[error("line {line}: invalid request target {uri:?}: {message}")]
    BadUri { line: usize, uri: String, message: String },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimulationError {
    #[error("control {control:?} of form {form_id} has unsatisfiable constraints: {reason}")]
    Unsatisfiable { form_id: String, control: String, reason: String },
    #[error("mutation {kind} is not applicable to form {form_id}")]
    Inapplicable { kind: String, form_id: String },
    #[error("structure has no forms to simulate")]
    NoForms,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LayoutError {
    #[error("request {request_id} is not classified against form {form_id}")]
    FormMismatch { form_id: String, request_id: String },
    #[error("request {request_id} does not belong to group {destination}")]
    ForeignRequest { destination: String, request_id: String },
    #[error("{constraints} constraint(s) but {verdicts} verdict(s)")]
    VerdictCount { constraints: usize, verdicts: usize },
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("no structure loaded")]
    NoStructure,
    #[error("not found: {0}")]
    NotFound(String),
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("journal: {0}")]
    Journal(#[from] std::io::Error),
}
