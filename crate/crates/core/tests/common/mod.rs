#![allow(dead_code)]

use std::path::PathBuf;

use formwatch::crawler::{CrawlConfig, CrawlReport, DirFetcher, crawl};
use formwatch::model::{
    ApplicationStructure, ControlConstraint, ControlSpec, ControlType, DestinationGroup, FormMethod, FormStructure,
};
use proptest::prelude::*;
use url::Url;

pub const FIXTURE_ORIGIN: &str = "http://wp.local/";

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/wordpress")
}

pub fn fixture_structure_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/wordpress-structure.json")
}

pub fn crawl_fixture_with(max_pages: usize) -> (ApplicationStructure, CrawlReport) {
    let seed = Url::parse(FIXTURE_ORIGIN).unwrap();
    let mut config = CrawlConfig::new(seed.clone());
    config.max_pages = max_pages.try_into().unwrap();
    let fetcher = DirFetcher::new(fixture_dir(), seed);
    tokio::runtime::Builder::new_current_thread().build().unwrap().block_on(crawl(&config, &fetcher))
}

pub fn crawl_fixture() -> ApplicationStructure {
    crawl_fixture_with(50).0
}

fn arb_name() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,7}"
}

fn arb_value() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 ]{0,6}"
}

fn arb_control(order_index: usize, name: String) -> impl Strategy<Value = ControlSpec> {
    let kind = prop_oneof![
        (1u64..12).prop_map(|limit| (ControlType::Text, vec![ControlConstraint::MaxLength { limit }])),
        Just((ControlType::Password, vec![])),
        arb_value().prop_map(|expected| (ControlType::Hidden, vec![ControlConstraint::FixedValue { expected }])),
        prop::collection::btree_set(arb_value(), 1..4)
            .prop_map(|allowed| (ControlType::Select, vec![ControlConstraint::AllowedSet { allowed }])),
        prop::collection::btree_set(arb_value(), 1..2)
            .prop_map(|allowed| (ControlType::Checkbox, vec![ControlConstraint::AllowedSet { allowed }])),
        Just((ControlType::Textarea, vec![])),
    ];
    (kind, any::<bool>()).prop_map(move |((control_type, constraints), optional)| ControlSpec {
        name: name.clone(),
        control_type,
        order_index,
        mandatory: control_type != ControlType::Checkbox && !(optional && control_type == ControlType::Textarea),
        constraints,
    })
}

pub fn arb_form(destination: Url, source: Url) -> impl Strategy<Value = FormStructure> {
    let method = prop_oneof![Just(FormMethod::Get), Just(FormMethod::Post)];
    (prop::collection::btree_set(arb_name(), 1..6), method).prop_flat_map(move |(names, method)| {
        let controls: Vec<_> = names.into_iter().enumerate().map(|(i, n)| arb_control(i, n)).collect();
        let (d, s) = (destination.clone(), source.clone());
        controls.prop_map(move |controls| FormStructure::new(s.clone(), d.clone(), method, controls))
    })
}

/// A structure with up to `max_groups` destination groups of up to three forms.
pub fn arb_structure(max_groups: usize) -> impl Strategy<Value = ApplicationStructure> {
    (1..=max_groups, prop::collection::vec(1usize..=3, max_groups)).prop_flat_map(|(n, sizes)| {
        let groups: Vec<_> = (0..n)
            .map(|g| {
                let dest = Url::parse(&format!("http://app.test/submit{g}.php")).unwrap();
                let forms: Vec<_> = (0..sizes[g])
                    .map(|f| arb_form(dest.clone(), Url::parse(&format!("http://app.test/page{g}_{f}.html")).unwrap()))
                    .collect();
                forms.prop_map(move |forms| DestinationGroup { destination_page: dest.clone(), forms })
            })
            .collect();
        groups.prop_map(|groups| ApplicationStructure {
            base_url: Url::parse("http://app.test/").unwrap(),
            crawled_at: chrono::DateTime::UNIX_EPOCH,
            groups,
            quarantine: Vec::new(),
        })
    })
}
