//! Three-level verdicts for captured requests.
//!
//! Level 1 places a request on a form of its destination group, level 2 compares
//! the submitted names against the form's ordered control set, level 3 checks each
//! matched value against its control's constraints. A level that passes while a
//! deeper one fails is reported as [`LevelStatus::DeepAnomaly`].

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use url::Url;

use crate::ingest::{FormRequest, RequestMethod, parse_query_string};
use crate::model::{ApplicationStructure, ControlConstraint, ControlSpec, DestinationGroup, FormStructure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    L1,
    L2,
    L3,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::L1 => "L1",
            Level::L2 => "L2",
            Level::L3 => "L3",
        })
    }
}

/// Ordered so that `max` yields the worst status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LevelStatus {
    Normal,
    DeepAnomaly,
    Violation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DummyReason {
    UnknownDestination,
    InvalidMethod,
    InvalidSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status")]
pub enum Level1Result {
    Matched {
        form_id: String,
        destination: Url,
    },
    /// `destination` names the group whose dummy area receives the request; absent
    /// for unknown destinations.
    Dummy {
        reason: DummyReason,
        destination: Option<Url>,
    },
}

impl Level1Result {
    pub fn form_id(&self) -> Option<&str> {
        match self {
            Level1Result::Matched { form_id, .. } => Some(form_id),
            Level1Result::Dummy { .. } => None,
        }
    }

    pub fn destination(&self) -> Option<&Url> {
        match self {
            Level1Result::Matched { destination, .. } => Some(destination),
            Level1Result::Dummy { destination, .. } => destination.as_ref(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlSetDiff {
    pub missing_mandatory: Vec<String>,
    pub unknown_params: Vec<String>,
    pub missing_optional: Vec<String>,
    pub order_warning: bool,
    /// `(param index, control order_index)`, increasing in param index.
    pub matched: Vec<(usize, usize)>,
}

impl ControlSetDiff {
    pub fn is_violation(&self) -> bool {
        !self.missing_mandatory.is_empty() || !self.unknown_params.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintVerdict {
    pub constraint: ControlConstraint,
    pub satisfied: bool,
    pub observed: String,
}

/// Level-3 verdicts for one matched (control, param) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlVerdicts {
    pub order_index: usize,
    pub param_index: usize,
    pub verdicts: Vec<ConstraintVerdict>,
}

impl ControlVerdicts {
    pub fn failed(&self) -> bool {
        self.verdicts.iter().any(|v| !v.satisfied)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifiedRequest {
    pub request: FormRequest,
    pub l1: Level1Result,
    pub l2: Option<ControlSetDiff>,
    pub l3: Vec<ControlVerdicts>,
    pub status_per_level: BTreeMap<Level, LevelStatus>,
}

impl ClassifiedRequest {
    pub fn status(&self, level: Level) -> Option<LevelStatus> {
        self.status_per_level.get(&level).copied()
    }

    /// Shallowest level reporting a violation.
    pub fn violation_level(&self) -> Option<Level> {
        self.status_per_level.iter().find(|(_, s)| **s == LevelStatus::Violation).map(|(l, _)| *l)
    }

    pub fn worst_status(&self) -> LevelStatus {
        self.status_per_level.values().copied().max().unwrap_or(LevelStatus::Normal)
    }

    pub fn verdicts_for_control(&self, order_index: usize) -> Option<&ControlVerdicts> {
        self.l3.iter().find(|c| c.order_index == order_index)
    }
}

fn without_query(url: &Url) -> Url {
    let mut u = url.clone();
    u.set_query(None);
    u.set_fragment(None);
    u
}

/// Finds the destination group a request is aimed at.
///
/// Non-GET requests must match the destination exactly, query included. A GET
/// form replaces its action's query with the submitted fields, so GET requests
/// are compared on scheme, host and path; when several groups share that path,
/// the first whose own query pairs all appear among the request's params wins.
pub fn find_group<'a>(request: &FormRequest, structure: &'a ApplicationStructure) -> Option<&'a DestinationGroup> {
    let mut target = request.destination.clone();
    target.set_fragment(None);
    if request.method != RequestMethod::Get {
        return structure.groups.iter().find(|g| g.destination_page == target);
    }
    let bare = without_query(&target);
    let mut candidates = structure.groups.iter().filter(|g| without_query(&g.destination_page) == bare);
    let first = candidates.clone().next()?;
    let preferred = candidates.find(|g| {
        let own = parse_query_string(g.destination_page.query().unwrap_or(""));
        !own.is_empty() && own.iter().all(|p| request.params.contains(p))
    });
    Some(preferred.unwrap_or(first))
}

/// Jaccard similarity of the request's and form's name sets, as an exact fraction.
fn name_overlap(request: &FormRequest, form: &FormStructure) -> (usize, usize) {
    let params: std::collections::BTreeSet<&str> = request.param_names().collect();
    let controls = form.control_names();
    let inter = params.intersection(&controls).count();
    let union = params.union(&controls).count();
    if union == 0 { (1, 1) } else { (inter, union) }
}

/// Classification switches. The default is strict.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifyOptions {
    /// Accept requests without a referer from any source page of a matching form.
    pub allow_missing_referer: bool,
}

pub fn level1_match(request: &FormRequest, structure: &ApplicationStructure) -> Level1Result {
    level1_match_with(request, structure, &ClassifyOptions::default())
}

pub fn level1_match_with(
    request: &FormRequest,
    structure: &ApplicationStructure,
    options: &ClassifyOptions,
) -> Level1Result {
    let Some(group) = find_group(request, structure) else {
        return Level1Result::Dummy { reason: DummyReason::UnknownDestination, destination: None };
    };
    let dummy = |reason| Level1Result::Dummy { reason, destination: Some(group.destination_page.clone()) };
    let by_method: Vec<&FormStructure> = group.forms.iter().filter(|f| request.method.matches(f.method)).collect();
    if by_method.is_empty() {
        return dummy(DummyReason::InvalidMethod);
    }
    if request.referer.is_none() && !options.allow_missing_referer {
        return dummy(DummyReason::InvalidSource);
    }
    let source_ok = |f: &FormStructure| request.referer.as_ref().is_none_or(|r| &f.source_page == r);
    let mut best: Option<(&FormStructure, (usize, usize))> = None;
    for form in by_method.into_iter().filter(|f| source_ok(f)) {
        let score = name_overlap(request, form);
        let better = match best {
            None => true,
            // a/b > c/d  <=>  a*d > c*b
            Some((_, (bi, bu))) => score.0 * bu > bi * score.1,
        };
        if better {
            best = Some((form, score));
        }
    }
    match best {
        Some((form, _)) => {
            Level1Result::Matched { form_id: form.form_id.clone(), destination: group.destination_page.clone() }
        }
        None => dummy(DummyReason::InvalidSource),
    }
}

pub fn level2_diff(request: &FormRequest, form: &FormStructure) -> ControlSetDiff {
    let mut controls: Vec<&ControlSpec> = form.controls.iter().collect();
    controls.sort_by_key(|c| c.order_index);
    let mut used = vec![false; controls.len()];
    let mut diff = ControlSetDiff::default();
    for (pi, (name, _)) in request.params.iter().enumerate() {
        let slot = controls.iter().enumerate().position(|(ci, c)| !used[ci] && &c.name == name);
        match slot {
            Some(ci) => {
                used[ci] = true;
                diff.matched.push((pi, controls[ci].order_index));
            }
            None => diff.unknown_params.push(name.clone()),
        }
    }
    for (ci, control) in controls.iter().enumerate() {
        if used[ci] {
            continue;
        }
        if control.mandatory {
            diff.missing_mandatory.push(control.name.clone());
        } else {
            diff.missing_optional.push(control.name.clone());
        }
    }
    diff.order_warning = diff.matched.windows(2).any(|w| w[1].1 < w[0].1);
    diff
}

pub fn level3_check(value: &str, control: &ControlSpec) -> Vec<ConstraintVerdict> {
    control
        .constraints
        .iter()
        .map(|constraint| {
            let satisfied = match constraint {
                ControlConstraint::MaxLength { limit } => value.chars().count() as u64 <= *limit,
                ControlConstraint::FixedValue { expected } => value == expected,
                ControlConstraint::AllowedSet { allowed } => allowed.contains(value),
            };
            ConstraintVerdict { constraint: constraint.clone(), satisfied, observed: value.to_string() }
        })
        .collect()
}

fn status(own_fails: bool, deeper_fails: bool) -> LevelStatus {
    if own_fails {
        LevelStatus::Violation
    } else if deeper_fails {
        LevelStatus::DeepAnomaly
    } else {
        LevelStatus::Normal
    }
}

pub fn classify(request: &FormRequest, structure: &ApplicationStructure) -> ClassifiedRequest {
    classify_with(request, structure, &ClassifyOptions::default())
}

pub fn classify_with(
    request: &FormRequest,
    structure: &ApplicationStructure,
    options: &ClassifyOptions,
) -> ClassifiedRequest {
    let l1 = level1_match_with(request, structure, options);
    let mut status_per_level = BTreeMap::new();
    let form = l1.form_id().and_then(|id| structure.form(id));
    let Some(form) = form else {
        status_per_level.insert(Level::L1, LevelStatus::Violation);
        return ClassifiedRequest { request: request.clone(), l1, l2: None, l3: Vec::new(), status_per_level };
    };
    let l2 = level2_diff(request, form);
    let l3: Vec<ControlVerdicts> = l2
        .matched
        .iter()
        .filter_map(|&(param_index, order_index)| {
            let control = form.control(order_index)?;
            let verdicts = level3_check(&request.params[param_index].1, control);
            Some(ControlVerdicts { order_index, param_index, verdicts })
        })
        .collect();
    let l2_fails = l2.is_violation();
    let l3_fails = l3.iter().any(ControlVerdicts::failed);
    status_per_level.insert(Level::L1, status(false, l2_fails || l3_fails));
    status_per_level.insert(Level::L2, status(l2_fails, l3_fails));
    status_per_level.insert(Level::L3, status(l3_fails, false));
    ClassifiedRequest { request: request.clone(), l1, l2: Some(l2), l3, status_per_level }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::{control, sample_structure};
    use crate::model::{ControlType, FormMethod};
    use chrono::DateTime;

    fn request(method: RequestMethod, dest: &str, referer: Option<&str>, params: &[(&str, &str)]) -> FormRequest {
        FormRequest {
            request_id: "r".into(),
            timestamp: DateTime::from_timestamp(0, 0).unwrap(),
            method,
            destination: Url::parse(dest).unwrap(),
            referer: referer.map(|r| Url::parse(r).unwrap()),
            params: params.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
            warnings: vec![],
        }
    }

    fn login(params: &[(&str, &str)]) -> FormRequest {
        request(RequestMethod::Post, "http://h/login.php", Some("http://h/login.html"), params)
    }

    #[test]
    fn conformant_request_is_normal_everywhere() {
        let s = sample_structure();
        let c = classify(&login(&[("user", "abc"), ("token", "1")]), &s);
        assert_eq!(c.l1.form_id(), Some(s.groups[0].forms[0].form_id.as_str()));
        assert!(c.status_per_level.values().all(|v| *v == LevelStatus::Normal));
        assert_eq!(c.status_per_level.len(), 3);
    }

    #[test]
    fn unknown_destination_stops_at_l1() {
        let s = sample_structure();
        let r = request(RequestMethod::Post, "http://h/nope.php", Some("http://h/login.html"), &[]);
        let c = classify(&r, &s);
        assert_eq!(c.l1, Level1Result::Dummy { reason: DummyReason::UnknownDestination, destination: None });
        assert!(c.l2.is_none() && c.l3.is_empty());
        assert_eq!(c.status_per_level, BTreeMap::from([(Level::L1, LevelStatus::Violation)]));
    }

    #[test]
    fn method_and_source_reasons() {
        let s = sample_structure();
        let get = request(
            RequestMethod::Get,
            "http://h/login.php?user=a&token=1",
            Some("http://h/login.html"),
            &[("user", "a"), ("token", "1")],
        );
        assert!(matches!(level1_match(&get, &s), Level1Result::Dummy { reason: DummyReason::InvalidMethod, .. }));
        let forged = request(RequestMethod::Post, "http://h/login.php", Some("http://evil/x"), &[]);
        assert!(matches!(level1_match(&forged, &s), Level1Result::Dummy { reason: DummyReason::InvalidSource, .. }));
        let absent = request(RequestMethod::Post, "http://h/login.php", None, &[]);
        assert!(matches!(level1_match(&absent, &s), Level1Result::Dummy { reason: DummyReason::InvalidSource, .. }));
        let relaxed = ClassifyOptions { allow_missing_referer: true };
        assert!(matches!(level1_match_with(&absent, &s, &relaxed), Level1Result::Matched { .. }));
        assert!(matches!(level1_match_with(&forged, &s, &relaxed), Level1Result::Dummy { .. }));
        let put = request(RequestMethod::Other("PUT".into()), "http://h/login.php", Some("http://h/login.html"), &[]);
        assert!(matches!(level1_match(&put, &s), Level1Result::Dummy { reason: DummyReason::InvalidMethod, .. }));
    }

    #[test]
    fn jaccard_picks_best_form_and_ties_go_to_first() {
        let src = Url::parse("http://h/p").unwrap();
        let dst = Url::parse("http://h/d").unwrap();
        let mk = |names: &[&str]| {
            let controls =
                names.iter().enumerate().map(|(i, n)| control(n, ControlType::Text, i, true, vec![])).collect();
            FormStructure::new(src.clone(), dst.clone(), FormMethod::Post, controls)
        };
        let forms = vec![mk(&["a", "b", "c"]), mk(&["a", "x"]), mk(&["x", "a"])];
        let ids: Vec<String> = forms.iter().map(|f| f.form_id.clone()).collect();
        let s = ApplicationStructure {
            base_url: Url::parse("http://h/").unwrap(),
            crawled_at: DateTime::from_timestamp(0, 0).unwrap(),
            groups: vec![DestinationGroup { destination_page: dst, forms }],
            quarantine: vec![],
        };
        let r = request(RequestMethod::Post, "http://h/d", Some("http://h/p"), &[("a", ""), ("x", "")]);
        assert_eq!(level1_match(&r, &s).form_id(), Some(ids[1].as_str()));
        let r = request(RequestMethod::Post, "http://h/d", Some("http://h/p"), &[("a", ""), ("b", "")]);
        assert_eq!(level1_match(&r, &s).form_id(), Some(ids[0].as_str()));
    }

    #[test]
    fn level2_identity_drop_and_inject() {
        let s = sample_structure();
        let f = &s.groups[0].forms[0];
        let d = level2_diff(&login(&[("user", "a"), ("token", "1")]), f);
        assert_eq!(d, ControlSetDiff { matched: vec![(0, 0), (1, 1)], ..Default::default() });
        let d = level2_diff(&login(&[("user", "a")]), f);
        assert_eq!(d.missing_mandatory, vec!["token"]);
        assert!(d.is_violation());
        let d = level2_diff(&login(&[("user", "a"), ("debug", "1"), ("token", "1")]), f);
        assert_eq!(d.unknown_params, vec!["debug"]);
        assert_eq!(d.matched, vec![(0, 0), (2, 1)]);
    }

    #[test]
    fn level2_order_is_advisory_and_duplicates_overflow() {
        let s = sample_structure();
        let f = &s.groups[0].forms[0];
        let d = level2_diff(&login(&[("token", "1"), ("user", "a")]), f);
        assert!(d.order_warning);
        assert!(!d.is_violation());
        let d = level2_diff(&login(&[("user", "a"), ("user", "b"), ("token", "1")]), f);
        assert_eq!(d.unknown_params, vec!["user"]);
    }

    #[test]
    fn level2_optional_controls() {
        let src = Url::parse("http://h/p").unwrap();
        let f = FormStructure::new(
            src.clone(),
            src,
            FormMethod::Post,
            vec![
                control("a", ControlType::Text, 0, true, vec![]),
                control("c", ControlType::Checkbox, 1, false, vec![]),
            ],
        );
        let r = request(RequestMethod::Post, "http://h/p", Some("http://h/p"), &[("a", "")]);
        let d = level2_diff(&r, &f);
        assert_eq!(d.missing_optional, vec!["c"]);
        assert!(!d.is_violation());
    }

    #[test]
    fn level3_constraint_kinds() {
        let c = control("a", ControlType::Text, 0, true, vec![ControlConstraint::MaxLength { limit: 20 }]);
        assert!(level3_check("abc", &c)[0].satisfied);
        let long = "x".repeat(300);
        let c255 = control("a", ControlType::Text, 0, true, vec![ControlConstraint::MaxLength { limit: 255 }]);
        assert!(!level3_check(&long, &c255)[0].satisfied);
        // characters, not bytes
        let c2 = control("a", ControlType::Text, 0, true, vec![ControlConstraint::MaxLength { limit: 2 }]);
        assert!(level3_check("éé", &c2)[0].satisfied);
        let hidden =
            control("t", ControlType::Hidden, 0, true, vec![ControlConstraint::FixedValue { expected: "1".into() }]);
        let v = level3_check("1 OR 1=1", &hidden);
        assert!(!v[0].satisfied);
        assert_eq!(v[0].observed, "1 OR 1=1");
        let set = control(
            "s",
            ControlType::Select,
            0,
            true,
            vec![ControlConstraint::AllowedSet { allowed: ["a".to_string()].into() }],
        );
        assert!(level3_check("a", &set)[0].satisfied);
        assert!(!level3_check("b", &set)[0].satisfied);
    }

    #[test]
    fn l3_only_failure_propagates_upward() {
        let s = sample_structure();
        let c = classify(&login(&[("user", "abc"), ("token", "2")]), &s);
        assert_eq!(
            c.status_per_level,
            BTreeMap::from([
                (Level::L1, LevelStatus::DeepAnomaly),
                (Level::L2, LevelStatus::DeepAnomaly),
                (Level::L3, LevelStatus::Violation),
            ])
        );
        assert_eq!(c.violation_level(), Some(Level::L3));
    }

    #[test]
    fn get_requests_match_on_path() {
        let src = Url::parse("http://h/").unwrap();
        let f = FormStructure::new(
            src.clone(),
            src.clone(),
            FormMethod::Get,
            vec![control("s", ControlType::Text, 0, true, vec![])],
        );
        let s = ApplicationStructure {
            base_url: src.clone(),
            crawled_at: DateTime::from_timestamp(0, 0).unwrap(),
            groups: vec![DestinationGroup { destination_page: src, forms: vec![f] }],
            quarantine: vec![],
        };
        let r =
            request(RequestMethod::Get, "http://h/?s=hi&debug=1", Some("http://h/"), &[("s", "hi"), ("debug", "1")]);
        let c = classify(&r, &s);
        assert!(c.l1.form_id().is_some());
        assert_eq!(c.l2.unwrap().unknown_params, vec!["debug"]);
    }
}
