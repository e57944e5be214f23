//! Captured form submissions.
//!
//! The primary capture format is JSON Lines, one request per line:
//!
//! ```text
//! {"ts":"2011-04-01T10:00:00Z","method":"POST","uri":"/wp-login.php","referer":"http://host/wp-login.php","body":"log=a&pwd=b"}
//! ```
//!
//! `uri` is origin-form, `body` is the raw urlencoded body and is absent for GET.
//! An optional trailing `"id"` key carries the request id; without it the id is
//! `<file id>:<line number>`. Lines starting with `#` are comments.
//!
//! A GET-only mode reads Common/Combined Log Format lines instead.

use std::fmt;
use std::sync::LazyLock;

use chrono::{DateTime, SecondsFormat, Utc};
use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use url::Url;
use url::form_urlencoded;

use crate::error::IngestError;
use crate::model::FormMethod;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum RequestMethod {
    Get,
    Post,
    Other(String),
}

impl RequestMethod {
    pub fn parse(s: &str) -> RequestMethod {
        let upper = s.trim().to_ascii_uppercase();
        match upper.as_str() {
            "GET" => RequestMethod::Get,
            "POST" => RequestMethod::Post,
            _ => RequestMethod::Other(upper),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            RequestMethod::Get => "GET",
            RequestMethod::Post => "POST",
            RequestMethod::Other(m) => m,
        }
    }

    pub fn matches(&self, method: FormMethod) -> bool {
        matches!((self, method), (RequestMethod::Get, FormMethod::Get) | (RequestMethod::Post, FormMethod::Post))
    }
}

impl From<FormMethod> for RequestMethod {
    fn from(m: FormMethod) -> Self {
        match m {
            FormMethod::Get => RequestMethod::Get,
            FormMethod::Post => RequestMethod::Post,
        }
    }
}

impl fmt::Display for RequestMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for RequestMethod {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for RequestMethod {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(RequestMethod::parse(&s))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormRequest {
    pub request_id: String,
    pub timestamp: DateTime<Utc>,
    pub method: RequestMethod,
    /// Request target resolved against the monitored host, query included.
    pub destination: Url,
    pub referer: Option<Url>,
    /// Name/value pairs in wire order.
    pub params: Vec<(String, String)>,
    /// Decoding problems; values affected are kept raw.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl FormRequest {
    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }
}

/// Decodes one urlencoded component. Returns the raw text and `false` when an
/// escape is malformed or the bytes are not UTF-8.
pub fn decode_component(raw: &str) -> (String, bool) {
    let bytes = raw.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'+' => {
                out.push(b' ');
                i += 1;
            }
            b'%' => {
                let hex = bytes.get(i + 1..i + 3).and_then(|h| std::str::from_utf8(h).ok());
                match hex.and_then(|h| u8::from_str_radix(h, 16).ok()) {
                    Some(b) if hex.is_some_and(|h| h.bytes().all(|c| c.is_ascii_hexdigit())) => {
                        out.push(b);
                        i += 3;
                    }
                    _ => return (raw.to_string(), false),
                }
            }
            b => {
                out.push(b);
                i += 1;
            }
        }
    }
    match String::from_utf8(out) {
        Ok(s) => (s, true),
        Err(_) => (raw.to_string(), false),
    }
}

/// Splits a query string or urlencoded body into ordered pairs, collecting warnings.
pub fn parse_query_string_checked(raw: &str) -> (Vec<(String, String)>, Vec<String>) {
    let mut pairs = Vec::new();
    let mut warnings = Vec::new();
    if raw.is_empty() {
        return (pairs, warnings);
    }
    for piece in raw.split('&') {
        let (name, value) = piece.split_once('=').unwrap_or((piece, ""));
        let (name, ok_n) = decode_component(name);
        let (value, ok_v) = decode_component(value);
        if !ok_n || !ok_v {
            warnings.push(format!("undecodable escape in {piece:?}; kept raw"));
        }
        pairs.push((name, value));
    }
    (pairs, warnings)
}

pub fn parse_query_string(raw: &str) -> Vec<(String, String)> {
    parse_query_string_checked(raw).0
}

pub fn encode_pairs(params: &[(String, String)]) -> String {
    let mut ser = form_urlencoded::Serializer::new(String::new());
    for (n, v) in params {
        ser.append_pair(n, v);
    }
    ser.finish()
}

#[derive(Debug, Serialize, Deserialize)]
struct CaptureRecord {
    ts: String,
    method: String,
    uri: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    referer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    body: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
}

fn looks_multipart(body: &str) -> bool {
    body.starts_with("--") && body.to_ascii_lowercase().contains("content-disposition: form-data")
}

fn split_target(uri: &str) -> (&str, Option<&str>) {
    let no_fragment = uri.split_once('#').map_or(uri, |(a, _)| a);
    match no_fragment.split_once('?') {
        Some((p, q)) => (p, Some(q)),
        None => (no_fragment, None),
    }
}

fn resolve_target(base: &Url, uri: &str, line: usize) -> Result<Url, IngestError> {
    let mut url =
        base.join(uri).map_err(|e| IngestError::BadUri { line, uri: uri.to_string(), message: e.to_string() })?;
    url.set_fragment(None);
    Ok(url)
}

fn parse_referer(raw: Option<&str>, warnings: &mut Vec<String>) -> Option<Url> {
    let raw = raw.map(str::trim).filter(|r| !r.is_empty() && *r != "-")?;
    match Url::parse(raw) {
        Ok(mut u) => {
            u.set_fragment(None);
            Some(u)
        }
        Err(e) => {
            warnings.push(format!("referer {raw:?} is not an absolute URL ({e}); treated as absent"));
            None
        }
    }
}

/// Parses one JSON Lines capture record.
pub fn parse_capture_line(line: &str, line_no: usize, file_id: &str, base: &Url) -> Result<FormRequest, IngestError> {
    let rec: CaptureRecord =
        serde_json::from_str(line).map_err(|e| IngestError::Malformed { line: line_no, message: e.to_string() })?;
    let timestamp = DateTime::parse_from_rfc3339(&rec.ts)
        .map_err(|e| IngestError::Malformed { line: line_no, message: format!("ts {:?}: {e}", rec.ts) })?
        .with_timezone(&Utc);
    let method = RequestMethod::parse(&rec.method);
    if rec.method.trim().is_empty() {
        return Err(IngestError::Malformed { line: line_no, message: "empty method".into() });
    }
    let destination = resolve_target(base, &rec.uri, line_no)?;
    let mut warnings = Vec::new();
    let referer = parse_referer(rec.referer.as_deref(), &mut warnings);
    let raw_params = match (&method, rec.body.as_deref()) {
        (RequestMethod::Get, _) => split_target(&rec.uri).1.unwrap_or(""),
        (_, Some(body)) => {
            if looks_multipart(body) {
                return Err(IngestError::Multipart { line: line_no });
            }
            body
        }
        (_, None) => "",
    };
    let (params, decode_warnings) = parse_query_string_checked(raw_params);
    warnings.extend(decode_warnings);
    Ok(FormRequest {
        request_id: rec.id.unwrap_or_else(|| format!("{file_id}:{line_no}")),
        timestamp,
        method,
        destination,
        referer,
        params,
        warnings,
    })
}

static CLF: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"^(\S+) (\S+) (\S+) \[([^\]]+)\] "(\S+) (\S+)(?: [^"]*)?" (\d{3}|-) (\d+|-)(?: "([^"]*)" "([^"]*)")?"#)
        .expect("static regex")
});

/// Parses one Common or Combined Log Format line. Bodies are not logged, so only
/// GET submissions carry parameters in this mode.
pub fn parse_clf_line(line: &str, line_no: usize, file_id: &str, base: &Url) -> Result<FormRequest, IngestError> {
    let caps = CLF
        .captures(line)
        .ok_or_else(|| IngestError::Malformed { line: line_no, message: "not a Common Log Format record".into() })?;
    let timestamp = DateTime::parse_from_str(&caps[4], "%d/%b/%Y:%H:%M:%S %z")
        .map_err(|e| IngestError::Malformed { line: line_no, message: format!("timestamp: {e}") })?
        .with_timezone(&Utc);
    let method = RequestMethod::parse(&caps[5]);
    let uri = &caps[6];
    let destination = resolve_target(base, uri, line_no)?;
    let mut warnings = Vec::new();
    let referer = parse_referer(caps.get(9).map(|m| m.as_str()), &mut warnings);
    let (params, decode_warnings) = match method {
        RequestMethod::Get => parse_query_string_checked(split_target(uri).1.unwrap_or("")),
        _ => (Vec::new(), vec!["request body not available in log format".to_string()]),
    };
    warnings.extend(decode_warnings);
    Ok(FormRequest {
        request_id: format!("{file_id}:{line_no}"),
        timestamp,
        method,
        destination,
        referer,
        params,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CaptureFormat {
    #[default]
    JsonLines,
    CommonLog,
}

/// Parses every record of a capture file; comment and blank lines are skipped.
/// Line numbers are 1-based.
pub fn parse_capture(
    text: &str,
    file_id: &str,
    base: &Url,
    format: CaptureFormat,
) -> Vec<Result<FormRequest, IngestError>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| match format {
            CaptureFormat::JsonLines => parse_capture_line(l, i + 1, file_id, base),
            CaptureFormat::CommonLog => parse_clf_line(l, i + 1, file_id, base),
        })
        .collect()
}

/// Serializes a request back into the capture format.
///
/// The request target is written origin-form when it shares the origin of `base`.
pub fn to_capture_line(request: &FormRequest, base: &Url) -> String {
    let dest = &request.destination;
    let uri = if dest.origin() == base.origin() {
        match dest.query() {
            Some(q) => format!("{}?{q}", dest.path()),
            None => dest.path().to_string(),
        }
    } else {
        dest.to_string()
    };
    let body = match request.method {
        RequestMethod::Get => None,
        _ => Some(encode_pairs(&request.params)),
    };
    let rec = CaptureRecord {
        ts: request.timestamp.to_rfc3339_opts(SecondsFormat::AutoSi, true),
        method: request.method.as_str().to_string(),
        uri,
        referer: request.referer.as_ref().map(Url::to_string),
        body,
        id: Some(request.request_id.clone()),
    };
    serde_json::to_string(&rec).expect("capture record serializes")
}
