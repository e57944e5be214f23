//! Labelled traffic generation.
//!
//! Normal requests are derived from a form's declared structure; each mutation
//! applies one tampering primitive aimed at exactly one classification level, and
//! the label records which level must report the violation.

use std::collections::BTreeSet;
use std::fmt;

use chrono::{DateTime, Duration, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use url::Url;

use crate::classifier::{Level, LevelStatus, classify, level2_diff};
use crate::error::SimulationError;
use crate::ingest::{FormRequest, RequestMethod, encode_pairs, to_capture_line};
use crate::model::{
    ApplicationStructure, ControlConstraint, ControlSpec, ControlType, DestinationGroup, FormMethod, FormStructure,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MutationKind {
    None,
    MethodFlip,
    SourceForge,
    DropMandatory,
    InjectParam,
    OverflowMaxLength,
    TamperFixedValue,
    OutOfSet,
}

impl MutationKind {
    pub const TAMPERING: [MutationKind; 7] = [
        MutationKind::MethodFlip,
        MutationKind::SourceForge,
        MutationKind::DropMandatory,
        MutationKind::InjectParam,
        MutationKind::OverflowMaxLength,
        MutationKind::TamperFixedValue,
        MutationKind::OutOfSet,
    ];

    pub fn target_level(self) -> Option<Level> {
        match self {
            MutationKind::None => None,
            MutationKind::MethodFlip | MutationKind::SourceForge => Some(Level::L1),
            MutationKind::DropMandatory | MutationKind::InjectParam => Some(Level::L2),
            MutationKind::OverflowMaxLength | MutationKind::TamperFixedValue | MutationKind::OutOfSet => {
                Some(Level::L3)
            }
        }
    }
}

impl fmt::Display for MutationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledRequest {
    pub request: FormRequest,
    pub origin_form: String,
    pub mutation: MutationKind,
    /// Further mutations applied on top of `mutation` in stacked corpora.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stacked: Vec<MutationKind>,
    pub expected_violation_level: Option<Level>,
}

/// One line of the labels sidecar file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub request_id: String,
    pub mutation: MutationKind,
    pub expected_level: Option<Level>,
}

impl From<&LabeledRequest> for LabelRecord {
    fn from(l: &LabeledRequest) -> Self {
        LabelRecord {
            request_id: l.request.request_id.clone(),
            mutation: l.mutation,
            expected_level: l.expected_violation_level,
        }
    }
}

/// Printable ASCII without the urlencoding metacharacters `&`, `=` and `%`.
const ALPHABET: &[u8] =
    b" !\"#$'()*+,-./0123456789:;<>?@ABCDEFGHIJKLMNOPQRSTUVWXYZ[\\]^_`abcdefghijklmnopqrstuvwxyz{|}~";

fn random_string(rng: &mut impl Rng, len: usize) -> String {
    (0..len).map(|_| *ALPHABET.choose(rng).unwrap() as char).collect()
}

fn epoch() -> DateTime<Utc> {
    DateTime::parse_from_rfc3339("2011-04-01T00:00:00Z").unwrap().with_timezone(&Utc)
}

fn unsatisfiable(form: &FormStructure, control: &ControlSpec, reason: &str) -> SimulationError {
    SimulationError::Unsatisfiable {
        form_id: form.form_id.clone(),
        control: control.name.clone(),
        reason: reason.to_string(),
    }
}

fn max_len(control: &ControlSpec) -> Option<u64> {
    control
        .constraints
        .iter()
        .filter_map(|c| match c {
            ControlConstraint::MaxLength { limit } => Some(*limit),
            _ => None,
        })
        .min()
}

fn conforming_value(
    form: &FormStructure,
    control: &ControlSpec,
    rng: &mut impl Rng,
) -> Result<String, SimulationError> {
    let limit = max_len(control);
    let fits = |v: &str| limit.is_none_or(|l| v.chars().count() as u64 <= l);
    let mut fixed: BTreeSet<&str> = BTreeSet::new();
    let mut allowed: Option<BTreeSet<&str>> = None;
    for c in &control.constraints {
        match c {
            ControlConstraint::FixedValue { expected } => {
                fixed.insert(expected);
            }
            ControlConstraint::AllowedSet { allowed: set } => {
                let set: BTreeSet<&str> = set.iter().map(String::as_str).collect();
                allowed = Some(match allowed {
                    None => set,
                    Some(prev) => prev.intersection(&set).copied().collect(),
                });
            }
            ControlConstraint::MaxLength { .. } => {}
        }
    }
    if fixed.len() > 1 {
        return Err(unsatisfiable(form, control, "conflicting fixed values"));
    }
    if let Some(&v) = fixed.first() {
        if !fits(v) || allowed.as_ref().is_some_and(|a| !a.contains(v)) {
            return Err(unsatisfiable(form, control, "fixed value violates another constraint"));
        }
        return Ok(v.to_string());
    }
    if let Some(allowed) = allowed {
        let options: Vec<&str> = allowed.into_iter().filter(|v| fits(v)).collect();
        return options
            .choose(rng)
            .map(|v| v.to_string())
            .ok_or_else(|| unsatisfiable(form, control, "no allowed value fits the length limit"));
    }
    let cap = limit.map_or(12, |l| l.min(12)) as usize;
    let len = if cap == 0 { 0 } else { rng.random_range(1..=cap) };
    Ok(random_string(rng, len))
}

fn sync_target(request: &mut FormRequest, form: &FormStructure) {
    let mut dest = form.destination_page.clone();
    if request.method == RequestMethod::Get {
        let q = encode_pairs(&request.params);
        dest.set_query(if q.is_empty() { None } else { Some(&q) });
    }
    request.destination = dest;
}

fn single_form_structure(form: &FormStructure) -> ApplicationStructure {
    ApplicationStructure {
        base_url: form.source_page.clone(),
        crawled_at: epoch(),
        groups: vec![DestinationGroup { destination_page: form.destination_page.clone(), forms: vec![form.clone()] }],
        quarantine: vec![],
    }
}

/// A legitimate submission of `form`: every mandatory control, each optional one
/// with probability one half, values satisfying every declared constraint.
pub fn gen_normal(form: &FormStructure, seed: u64) -> Result<FormRequest, SimulationError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut controls: Vec<&ControlSpec> = form.controls.iter().collect();
    controls.sort_by_key(|c| c.order_index);
    let mut params = Vec::new();
    let mut radios_sent: BTreeSet<&str> = BTreeSet::new();
    for control in controls {
        // draw for every control so the stream does not depend on earlier choices
        let include_optional = rng.random_bool(0.5);
        let value = conforming_value(form, control, &mut rng)?;
        let include = if control.control_type == ControlType::Radio && radios_sent.contains(control.name.as_str()) {
            false
        } else {
            control.mandatory || include_optional
        };
        if include {
            if control.control_type == ControlType::Radio {
                radios_sent.insert(&control.name);
            }
            params.push((control.name.clone(), value));
        }
    }
    let mut request = FormRequest {
        request_id: format!("gen-{}-{seed}", form.form_id),
        timestamp: epoch(),
        method: form.method.into(),
        destination: form.destination_page.clone(),
        referer: Some(form.source_page.clone()),
        params,
        warnings: vec![],
    };
    sync_target(&mut request, form);

    let check = classify(&request, &single_form_structure(form));
    if check.status_per_level.values().any(|s| *s != LevelStatus::Normal) {
        return Err(SimulationError::Unsatisfiable {
            form_id: form.form_id.clone(),
            control: String::new(),
            reason: "generated request does not classify as normal".into(),
        });
    }
    Ok(request)
}

fn has_constraint(control: &ControlSpec, pred: impl Fn(&ControlConstraint) -> bool) -> bool {
    control.constraints.iter().any(pred)
}

/// Mutation kinds that can be applied to requests for this form.
pub fn applicable_kinds(form: &FormStructure) -> Vec<MutationKind> {
    MutationKind::TAMPERING
        .into_iter()
        .filter(|k| match k {
            MutationKind::DropMandatory => form.controls.iter().any(|c| c.mandatory),
            MutationKind::OverflowMaxLength => {
                form.controls.iter().any(|c| has_constraint(c, |k| matches!(k, ControlConstraint::MaxLength { .. })))
            }
            MutationKind::TamperFixedValue => {
                form.controls.iter().any(|c| has_constraint(c, |k| matches!(k, ControlConstraint::FixedValue { .. })))
            }
            MutationKind::OutOfSet => {
                form.controls.iter().any(|c| has_constraint(c, |k| matches!(k, ControlConstraint::AllowedSet { .. })))
            }
            _ => true,
        })
        .collect()
}

const INJECTED_NAMES: [&str; 6] = ["debug", "is_admin", "role", "cmd", "user_level", "redirect"];
const FORGED_REFERER: &str = "http://attacker.example/forged.html";
const SQL_TAUTOLOGY: &str = "1' OR '1'='1";
const SCRIPT_PAYLOAD: &str = "<script>alert(1)</script>";

fn inapplicable(kind: MutationKind, form: &FormStructure) -> SimulationError {
    SimulationError::Inapplicable { kind: kind.to_string(), form_id: form.form_id.clone() }
}

/// Sets the value submitted for `control`, inserting the param at its declared
/// position when the base request omitted it.
fn set_control_value(request: &mut FormRequest, form: &FormStructure, control: &ControlSpec, value: String) {
    let diff = level2_diff(request, form);
    if let Some(&(pi, _)) = diff.matched.iter().find(|&&(_, o)| o == control.order_index) {
        request.params[pi].1 = value;
        return;
    }
    let at = diff.matched.iter().filter(|&&(_, o)| o < control.order_index).map(|&(p, _)| p + 1).max().unwrap_or(0);
    request.params.insert(at, (control.name.clone(), value));
}

fn pick_control<'a>(
    form: &'a FormStructure,
    rng: &mut impl Rng,
    pred: impl Fn(&ControlConstraint) -> bool,
) -> Option<&'a ControlSpec> {
    let candidates: Vec<&ControlSpec> = form.controls.iter().filter(|c| has_constraint(c, &pred)).collect();
    candidates.choose(rng).copied()
}

/// Applies one tampering primitive to a normal request of `form`.
pub fn mutate(
    base: &FormRequest,
    form: &FormStructure,
    kind: MutationKind,
    seed: u64,
) -> Result<LabeledRequest, SimulationError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut request = base.clone();
    match kind {
        MutationKind::None => {}
        MutationKind::MethodFlip => {
            request.method = match form.method {
                FormMethod::Get => RequestMethod::Post,
                FormMethod::Post => RequestMethod::Get,
            };
            sync_target(&mut request, form);
        }
        MutationKind::SourceForge => {
            request.referer = if rng.random_bool(0.5) { None } else { Some(Url::parse(FORGED_REFERER).unwrap()) };
        }
        MutationKind::DropMandatory => {
            let diff = level2_diff(&request, form);
            let candidates: Vec<usize> = diff
                .matched
                .iter()
                .filter(|&&(pi, oi)| {
                    let name = &request.params[pi].0;
                    form.control(oi).is_some_and(|c| c.mandatory)
                        && request.params.iter().filter(|(n, _)| n == name).count() == 1
                })
                .map(|&(pi, _)| pi)
                .collect();
            let &pi = candidates.choose(&mut rng).ok_or_else(|| inapplicable(kind, form))?;
            request.params.remove(pi);
            sync_target(&mut request, form);
        }
        MutationKind::InjectParam => {
            let names = form.control_names();
            let mut name = INJECTED_NAMES.choose(&mut rng).unwrap().to_string();
            while names.contains(name.as_str()) {
                name.push('_');
            }
            let at = rng.random_range(0..=request.params.len());
            request.params.insert(at, (name, "1".into()));
            sync_target(&mut request, form);
        }
        MutationKind::OverflowMaxLength => {
            let control = pick_control(form, &mut rng, |c| matches!(c, ControlConstraint::MaxLength { .. }))
                .ok_or_else(|| inapplicable(kind, form))?;
            let limit = max_len(control).unwrap() as usize;
            let len = limit + 1 + rng.random_range(0..16);
            let value = random_string(&mut rng, len);
            set_control_value(&mut request, form, control, value);
            sync_target(&mut request, form);
        }
        MutationKind::TamperFixedValue => {
            let control = pick_control(form, &mut rng, |c| matches!(c, ControlConstraint::FixedValue { .. }))
                .ok_or_else(|| inapplicable(kind, form))?;
            let expected = control.constraints.iter().find_map(|c| match c {
                ControlConstraint::FixedValue { expected } => Some(expected.as_str()),
                _ => None,
            });
            let value =
                if expected == Some(SQL_TAUTOLOGY) { format!("{SQL_TAUTOLOGY}--") } else { SQL_TAUTOLOGY.into() };
            set_control_value(&mut request, form, control, value);
            sync_target(&mut request, form);
        }
        MutationKind::OutOfSet => {
            let control = pick_control(form, &mut rng, |c| matches!(c, ControlConstraint::AllowedSet { .. }))
                .ok_or_else(|| inapplicable(kind, form))?;
            let mut value = SCRIPT_PAYLOAD.to_string();
            while control
                .constraints
                .iter()
                .any(|c| matches!(c, ControlConstraint::AllowedSet { allowed } if allowed.contains(&value)))
            {
                value.push('!');
            }
            set_control_value(&mut request, form, control, value);
            sync_target(&mut request, form);
        }
    }
    Ok(LabeledRequest {
        request,
        origin_form: form.form_id.clone(),
        mutation: kind,
        stacked: Vec::new(),
        expected_violation_level: kind.target_level(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusConfig {
    pub count: usize,
    pub anomaly_rate: f64,
    pub seed: u64,
    /// Apply a second mutation to each tampered request; excluded from exact oracles.
    pub stack: bool,
}

/// Generates `count` labelled requests over all forms of the structure.
pub fn generate_corpus(
    structure: &ApplicationStructure,
    config: &CorpusConfig,
) -> Result<Vec<LabeledRequest>, SimulationError> {
    let forms: Vec<&FormStructure> = structure.forms().collect();
    if forms.is_empty() {
        return Err(SimulationError::NoForms);
    }
    let rate = config.anomaly_rate.clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut corpus = Vec::with_capacity(config.count);
    for i in 0..config.count {
        let form = *forms.choose(&mut rng).unwrap();
        let mut base = gen_normal(form, rng.next_u64())?;
        base.request_id = format!("sim-{}-{i:06}", config.seed);
        base.timestamp = epoch() + Duration::seconds(i as i64);
        let tamper = rng.random_bool(rate);
        let mutation_seed = rng.next_u64();
        let kinds = applicable_kinds(form);
        let labeled = match kinds.choose(&mut rng) {
            Some(&kind) if tamper => {
                let mut l = mutate(&base, form, kind, mutation_seed)?;
                if config.stack {
                    let others: Vec<MutationKind> = kinds.iter().copied().filter(|k| *k != kind).collect();
                    if let Some(&second) = others.choose(&mut rng)
                        && let Ok(m) = mutate(&l.request, form, second, mutation_seed ^ 0x5bd1e995)
                    {
                        l.request = m.request;
                        l.stacked.push(second);
                        l.expected_violation_level = l.expected_violation_level.min(second.target_level());
                    }
                }
                l
            }
            _ => mutate(&base, form, MutationKind::None, mutation_seed)?,
        };
        corpus.push(labeled);
    }
    Ok(corpus)
}

pub fn capture_text(corpus: &[LabeledRequest], base: &Url) -> String {
    let mut out = String::new();
    for l in corpus {
        out.push_str(&to_capture_line(&l.request, base));
        out.push('\n');
    }
    out
}

pub fn labels_text(corpus: &[LabeledRequest]) -> String {
    let mut out = String::new();
    for l in corpus {
        out.push_str(&serde_json::to_string(&LabelRecord::from(l)).expect("label serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_labels(text: &str) -> Result<Vec<LabelRecord>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::{control, sample_structure};

    fn form() -> FormStructure {
        sample_structure().groups[0].forms[0].clone()
    }

    #[test]
    fn normal_is_deterministic_and_conforming() {
        let f = form();
        let a = gen_normal(&f, 1).unwrap();
        assert_eq!(a, gen_normal(&f, 1).unwrap());
        assert_eq!(a.params.len(), 2);
        assert_eq!(a.params[1], ("token".to_string(), "1".to_string()));
        assert!(a.params[0].1.chars().count() <= 20);
        assert!(a.params.iter().all(|(_, v)| !v.contains(['&', '=', '%'])));
    }

    #[test]
    fn empty_form_gives_empty_request() {
        let src = Url::parse("http://h/").unwrap();
        let f = FormStructure::new(src.clone(), src, FormMethod::Get, vec![]);
        let r = gen_normal(&f, 3).unwrap();
        assert!(r.params.is_empty());
        assert_eq!(r.destination.as_str(), "http://h/");
    }

    #[test]
    fn unsatisfiable_constraints_name_the_control() {
        let src = Url::parse("http://h/").unwrap();
        let f = FormStructure::new(
            src.clone(),
            src,
            FormMethod::Post,
            vec![control(
                "t",
                ControlType::Hidden,
                0,
                true,
                vec![
                    ControlConstraint::FixedValue { expected: "long".into() },
                    ControlConstraint::MaxLength { limit: 2 },
                ],
            )],
        );
        match gen_normal(&f, 0) {
            Err(SimulationError::Unsatisfiable { control, .. }) => assert_eq!(control, "t"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn none_mutation_is_identity() {
        let f = form();
        let base = gen_normal(&f, 5).unwrap();
        let l = mutate(&base, &f, MutationKind::None, 9).unwrap();
        assert_eq!(l.request, base);
        assert_eq!(l.expected_violation_level, None);
    }

    #[test]
    fn tamper_fixed_value_uses_tautology() {
        let f = form();
        let base = gen_normal(&f, 5).unwrap();
        let l = mutate(&base, &f, MutationKind::TamperFixedValue, 2).unwrap();
        assert_eq!(l.request.params[1].1, SQL_TAUTOLOGY);
        assert_eq!(l.expected_violation_level, Some(Level::L3));
    }

    #[test]
    fn inapplicable_kind_is_typed_error() {
        let f = form();
        let base = gen_normal(&f, 5).unwrap();
        assert!(matches!(mutate(&base, &f, MutationKind::OutOfSet, 1), Err(SimulationError::Inapplicable { .. })));
        assert!(!applicable_kinds(&f).contains(&MutationKind::OutOfSet));
    }

    #[test]
    fn every_kind_violates_its_label_level() {
        let s = sample_structure();
        let f = &s.groups[0].forms[0];
        for seed in 0..20 {
            let base = gen_normal(f, seed).unwrap();
            for kind in applicable_kinds(f) {
                let l = mutate(&base, f, kind, seed).unwrap();
                let c = classify(&l.request, &s);
                assert_eq!(c.violation_level(), kind.target_level(), "{kind} seed {seed}: {c:?}");
            }
        }
    }

    #[test]
    fn corpus_is_reproducible() {
        let s = sample_structure();
        let cfg = CorpusConfig { count: 50, anomaly_rate: 0.3, seed: 11, stack: false };
        let a = generate_corpus(&s, &cfg).unwrap();
        assert_eq!(a, generate_corpus(&s, &cfg).unwrap());
        let ids: BTreeSet<&str> = a.iter().map(|l| l.request.request_id.as_str()).collect();
        assert_eq!(ids.len(), 50);
        let labels = parse_labels(&labels_text(&a)).unwrap();
        assert_eq!(labels.len(), 50);
    }

    #[test]
    fn stacked_expected_level_is_minimum() {
        let s = sample_structure();
        let cfg = CorpusConfig { count: 100, anomaly_rate: 1.0, seed: 3, stack: true };
        for l in generate_corpus(&s, &cfg).unwrap() {
            let min =
                std::iter::once(l.mutation).chain(l.stacked.iter().copied()).filter_map(|k| k.target_level()).min();
            assert_eq!(l.expected_violation_level, min);
        }
    }
}
