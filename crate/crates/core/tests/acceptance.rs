//! Acceptance suite; one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::panic::{AssertUnwindSafe, catch_unwind};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use chrono::DateTime;
use formwatch::classifier::{ClassifiedRequest, ClassifyOptions, Level, Level1Result, LevelStatus, classify};
use formwatch::ingest::{CaptureFormat, FormRequest, RequestMethod, parse_capture};
use formwatch::layout::{Scene, layout_control, layout_form, layout_overview, render_svg};
use formwatch::model::{ApplicationStructure, ControlType, DestinationGroup, FormMethod};
use formwatch::service::{Monitor, MonitorConfig, counters_from_capture};
use formwatch::simulator::{
    CorpusConfig, LabeledRequest, MutationKind, capture_text, generate_corpus, labels_text, parse_labels,
};
use formwatch::store::{load_structure, save_structure};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use url::Url;

use common::*;

const FIXTURE_BUDGET: Duration = Duration::from_secs(5);
const ORACLE_BUDGET: Duration = Duration::from_secs(10);
const ORACLE_COUNT: usize = 1000;
const ORACLE_RATE: f64 = 0.3;
const ORACLE_SEED: u64 = 20110401;
const ANGLE_TOLERANCE: f64 = 1e-9;
const GEOMETRY_CASES: u32 = 500;
const MAX_FORMS: usize = 12;
const AUDIT_BATCHES: usize = 10;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn oracle_corpus(structure: &ApplicationStructure) -> Vec<LabeledRequest> {
    let config = CorpusConfig { count: ORACLE_COUNT, anomaly_rate: ORACLE_RATE, seed: ORACLE_SEED, stack: false };
    generate_corpus(structure, &config).expect("fixture corpus")
}

fn fixture_reproduction() -> Outcome {
    let start = Instant::now();
    let s = crawl_fixture();
    let elapsed = start.elapsed();
    ensure!(elapsed < FIXTURE_BUDGET, "crawl took {elapsed:?}");
    ensure!(s.groups.len() == 4, "{} destination groups", s.groups.len());

    let origin = Url::parse(FIXTURE_ORIGIN).unwrap();
    let find = |path: &str| {
        let dest = origin.join(path).unwrap();
        s.groups.iter().find(|g| g.destination_page == dest)
    };
    let (Some(search), Some(comment), Some(login), Some(lost)) =
        (find("/"), find("/wp-comments-post.php"), find("/wp-login.php"), find("/wp-login.php?action=lostpassword"))
    else {
        return Err("missing one of search, comment, login, lost-password".into());
    };
    ensure!(search.forms.iter().all(|f| f.method == FormMethod::Get), "search form is not GET");
    for g in [comment, login, lost] {
        ensure!(g.forms.iter().all(|f| f.method == FormMethod::Post), "{} is not POST", g.destination_page);
    }
    ensure!(login.forms.len() == 1, "{} login forms", login.forms.len());
    let controls = &login.forms[0].controls;
    ensure!(controls.len() == 6, "login form has {} controls", controls.len());
    ensure!(
        controls.iter().any(|c| c.name == "wp" && c.control_type == ControlType::Submit),
        "login form lacks a submit named wp"
    );
    for f in &search.forms {
        let inputs = f.controls.iter().filter(|c| c.control_type != ControlType::Submit).count();
        ensure!(inputs == 1, "search form on {} has {inputs} non-submit inputs", f.source_page);
    }
    Ok(format!("4 groups, 6 login controls, {elapsed:.2?}"))
}

fn oracle_equivalence() -> Outcome {
    let structure = load_structure(&fixture_structure_path()).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let corpus = oracle_corpus(&structure);
    let capture = capture_text(&corpus, &structure.base_url);
    let labels = parse_labels(&labels_text(&corpus)).map_err(|e| e.to_string())?;
    let parsed = parse_capture(&capture, "oracle", &structure.base_url, CaptureFormat::JsonLines);
    ensure!(parsed.len() == labels.len(), "{} requests, {} labels", parsed.len(), labels.len());

    let mut tampered = 0usize;
    for (req, label) in parsed.into_iter().zip(&labels) {
        let req = req.map_err(|e| e.to_string())?;
        ensure!(req.request_id == label.request_id, "label order: {} vs {}", req.request_id, label.request_id);
        let c = classify(&req, &structure);
        ensure!(
            c.violation_level() == label.expected_level,
            "{} ({}): reported {:?}, labelled {:?}",
            label.request_id,
            label.mutation,
            c.violation_level(),
            label.expected_level
        );
        if label.mutation == MutationKind::None {
            ensure!(
                c.status_per_level.values().all(|s| *s == LevelStatus::Normal),
                "{} is unmutated but {:?}",
                label.request_id,
                c.status_per_level
            );
        } else {
            tampered += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < ORACLE_BUDGET, "took {elapsed:?}");
    ensure!(tampered > 0, "corpus has no mutants");
    Ok(format!("{ORACLE_COUNT} requests, {tampered} mutants, {elapsed:.2?}"))
}

fn propagation() -> Outcome {
    let structure = load_structure(&fixture_structure_path()).map_err(|e| e.to_string())?;
    let expected = BTreeMap::from([
        (Level::L1, LevelStatus::DeepAnomaly),
        (Level::L2, LevelStatus::DeepAnomaly),
        (Level::L3, LevelStatus::Violation),
    ]);
    let mut checked = 0usize;
    for l in oracle_corpus(&structure) {
        if l.mutation.target_level() != Some(Level::L3) || !l.stacked.is_empty() {
            continue;
        }
        let c = classify(&l.request, &structure);
        ensure!(c.status_per_level == expected, "{} ({}): {:?}", l.request.request_id, l.mutation, c.status_per_level);
        checked += 1;
    }
    ensure!(checked > 0, "corpus has no level-3 mutants");
    Ok(format!("{checked} level-3 mutants"))
}

fn dummy_request(destination: &Url, id: String) -> FormRequest {
    FormRequest {
        request_id: id,
        timestamp: DateTime::UNIX_EPOCH,
        method: RequestMethod::Other("PUT".into()),
        destination: destination.clone(),
        referer: None,
        params: Vec::new(),
        warnings: Vec::new(),
    }
}

fn geometry() -> Outcome {
    let dest = Url::parse("http://app.test/submit.php").unwrap();
    let forms = (0..=MAX_FORMS).prop_flat_map(move |n| {
        let d = dest.clone();
        (0..n)
            .map(|i| arb_form(d.clone(), Url::parse(&format!("http://app.test/p{i}.html")).unwrap()))
            .collect::<Vec<_>>()
            .prop_map(move |forms| DestinationGroup { destination_page: d.clone(), forms })
    });
    let strategy = (forms, any::<u64>(), prop::collection::vec("[a-z0-9:-]{1,12}", 0..6));

    let mut runner = TestRunner::new(Config { cases: GEOMETRY_CASES, failure_persistence: None, ..Config::default() });
    let glyphs_checked = std::cell::Cell::new(0usize);
    let result = runner.run(&strategy, |(group, seed, dummy_ids)| {
        let structure = ApplicationStructure {
            base_url: Url::parse("http://app.test/").unwrap(),
            crawled_at: DateTime::UNIX_EPOCH,
            groups: vec![group.clone()],
            quarantine: Vec::new(),
        };
        let mut requests: Vec<FormRequest> = if group.forms.is_empty() {
            Vec::new()
        } else {
            let config = CorpusConfig { count: 30, anomaly_rate: 0.5, seed, stack: true };
            generate_corpus(&structure, &config).unwrap().into_iter().map(|l| l.request).collect()
        };
        requests.extend(dummy_ids.into_iter().map(|id| dummy_request(&group.destination_page, id)));
        let classified: Vec<ClassifiedRequest> = requests.iter().map(|r| classify(r, &structure)).collect();
        let scene = layout_overview(&group, &classified).unwrap();

        let n = group.forms.len() + 1;
        let span = TAU / n as f64;
        prop_assert_eq!(scene.sectors.len(), n);
        for sector in &scene.sectors {
            prop_assert!((sector.angular_span - span).abs() <= ANGLE_TOLERANCE);
        }
        let total: f64 = scene.sectors.iter().map(|s| s.angular_span).sum();
        prop_assert!((total - TAU).abs() <= ANGLE_TOLERANCE);
        prop_assert_eq!(scene.glyphs.len(), classified.len());
        for (glyph, c) in scene.glyphs.iter().zip(&classified) {
            let sector = &scene.sectors[glyph.sector_index];
            prop_assert!(
                glyph.angle > sector.start_angle && glyph.angle < sector.start_angle + sector.angular_span,
                "glyph {} at {} outside [{}, {}]",
                glyph.request_id,
                glyph.angle,
                sector.start_angle,
                sector.start_angle + sector.angular_span
            );
            let is_dummy = matches!(c.l1, Level1Result::Dummy { .. });
            prop_assert_eq!(is_dummy, sector.is_dummy, "{} in sector {}", glyph.request_id, glyph.sector_index);
        }
        glyphs_checked.set(glyphs_checked.get() + scene.glyphs.len());
        Ok(())
    });
    result.map_err(|e| e.to_string())?;
    Ok(format!("{GEOMETRY_CASES} cases, N in 0..={MAX_FORMS}, {} glyphs", glyphs_checked.get()))
}

fn all_scenes(structure: &ApplicationStructure, corpus: &[LabeledRequest]) -> Vec<String> {
    let classified: Vec<ClassifiedRequest> = corpus.iter().map(|l| classify(&l.request, structure)).collect();
    let mut svgs = Vec::new();
    for g in &structure.groups {
        let events: Vec<ClassifiedRequest> =
            classified.iter().filter(|c| c.l1.destination() == Some(&g.destination_page)).cloned().collect();
        svgs.push(render_svg(&Scene::Overview(layout_overview(g, &events).unwrap())));
    }
    for c in classified.iter().take(100) {
        let Some(form) = c.l1.form_id().and_then(|id| structure.form(id)) else { continue };
        svgs.push(render_svg(&Scene::Form(layout_form(form, c).unwrap())));
        for v in &c.l3 {
            let control = form.control(v.order_index).unwrap();
            let observed = &c.request.params[v.param_index].1;
            svgs.push(render_svg(&Scene::Control(layout_control(control, observed, &v.verdicts).unwrap())));
        }
    }
    svgs
}

fn round_trips() -> Outcome {
    let structure = crawl_fixture();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("structure.json");
    save_structure(&structure, &path).map_err(|e| e.to_string())?;
    let loaded = load_structure(&path).map_err(|e| e.to_string())?;
    let corpus = oracle_corpus(&structure);

    for l in &corpus {
        let a = serde_json::to_string(&classify(&l.request, &structure)).unwrap();
        let b = serde_json::to_string(&classify(&l.request, &loaded)).unwrap();
        ensure!(a == b, "verdict for {} changed after save/load", l.request.request_id);
    }

    let parsed =
        parse_capture(&capture_text(&corpus, &structure.base_url), "rt", &structure.base_url, CaptureFormat::JsonLines);
    for (p, l) in parsed.into_iter().zip(&corpus) {
        let p = p.map_err(|e| e.to_string())?;
        ensure!(p.params == l.request.params, "params of {} changed through the capture format", l.request.request_id);
    }

    let first = all_scenes(&structure, &corpus);
    let second = all_scenes(&crawl_fixture(), &oracle_corpus(&loaded));
    ensure!(first == second, "svg output differs between runs");
    Ok(format!("{} verdicts, {} svg documents", corpus.len(), first.len()))
}

fn service_audit() -> Outcome {
    let structure = load_structure(&fixture_structure_path()).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let journal = dir.path().join("journal.jsonl");
    let monitor = Monitor::new(MonitorConfig::default());
    monitor.open_journal(&journal).map_err(|e| e.to_string())?;
    monitor.replace_structure(structure.clone()).map_err(|e| e.to_string())?;

    let corpus = oracle_corpus(&structure);
    let text = capture_text(&corpus, &structure.base_url);
    let lines: Vec<&str> = text.lines().collect();
    let per_batch = lines.len().div_ceil(AUDIT_BATCHES);

    let totals = std::thread::scope(|scope| {
        let readers: Vec<_> = (0..3)
            .map(|_| {
                scope.spawn(|| {
                    let mut seen = Vec::new();
                    for _ in 0..200 {
                        let rows = monitor.overview().unwrap();
                        seen.push(rows.iter().map(|r| r.counts.total()).sum::<u64>());
                        std::thread::yield_now();
                    }
                    seen
                })
            })
            .collect();
        for batch in lines.chunks(per_batch) {
            let out = monitor.ingest_events(&batch.join("\n")).unwrap();
            assert!(out.rejected.is_empty(), "{:?}", out.rejected);
        }
        readers.into_iter().map(|r| r.join().unwrap()).collect::<Vec<_>>()
    });

    for seen in &totals {
        ensure!(seen.windows(2).all(|w| w[0] <= w[1]), "overview totals went backwards");
        ensure!(
            seen.iter().all(|t| (*t as usize).is_multiple_of(per_batch) || *t as usize == lines.len()),
            "overview observed a partial batch"
        );
    }
    let journaled = std::fs::read_to_string(&journal).map_err(|e| e.to_string())?;
    let recomputed = counters_from_capture(&journaled, &structure, &ClassifyOptions::default());
    let served = monitor.counters();
    ensure!(recomputed == served, "journal counters {recomputed:?} != served {served:?}");
    let overview_total: u64 = monitor.overview().unwrap().iter().map(|r| r.counts.total()).sum();
    ensure!(overview_total as usize == lines.len(), "overview counts {overview_total} of {}", lines.len());
    Ok(format!("{AUDIT_BATCHES} batches, {} requests, {} concurrent reads", lines.len(), totals.len() * 200))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 6] = [
        ("fixture reproduction", fixture_reproduction),
        ("oracle equivalence", oracle_equivalence),
        ("propagation", propagation),
        ("geometry", geometry),
        ("round trips", round_trips),
        ("service audit", service_audit),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL {name}: {reason}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
