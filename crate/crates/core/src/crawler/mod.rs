//! Breadth-first crawl of a target application, collecting its declared forms.

mod extract;
mod fetch;

use std::collections::{HashSet, VecDeque};
use std::num::NonZeroUsize;
use std::time::Duration;

use chrono::Utc;
use futures::future::join_all;
use serde::Serialize;
use url::Url;

use crate::model::{ApplicationStructure, DestinationGroup, FormStructure, QuarantinedForm};

pub use extract::{PageForms, extract_forms, extract_links, resolve_action};
pub use fetch::{DirFetcher, FetchedPage, Fetcher, HttpFetcher, USER_AGENT, site_file_for};

#[derive(Debug, Clone)]
pub struct CrawlConfig {
    pub seed_url: Url,
    pub max_pages: NonZeroUsize,
    pub same_host_only: bool,
    pub request_timeout: Duration,
    pub politeness_delay: Duration,
    /// Upper bound on simultaneous page fetches.
    pub concurrency: NonZeroUsize,
    /// Sent verbatim as the `Cookie` header, for authenticated crawls.
    pub session_cookie: Option<String>,
}

impl CrawlConfig {
    pub fn new(seed_url: Url) -> CrawlConfig {
        CrawlConfig {
            seed_url,
            max_pages: NonZeroUsize::new(100).unwrap(),
            same_host_only: true,
            request_timeout: Duration::from_secs(10),
            politeness_delay: Duration::ZERO,
            concurrency: NonZeroUsize::new(4).unwrap(),
            session_cookie: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CrawlReport {
    pub pages_fetched: usize,
    pub pages_failed: Vec<(String, String)>,
    pub forms_found: usize,
    pub quarantined: usize,
    pub notes: Vec<String>,
}

/// Partitions forms by exact destination URL, keeping first-discovery order.
pub fn group_by_destination(forms: Vec<FormStructure>) -> Vec<DestinationGroup> {
    let mut groups: Vec<DestinationGroup> = Vec::new();
    for form in forms {
        match groups.iter_mut().find(|g| g.destination_page == form.destination_page) {
            Some(group) => group.forms.push(form),
            None => {
                groups.push(DestinationGroup { destination_page: form.destination_page.clone(), forms: vec![form] })
            }
        }
    }
    groups
}

fn same_host(a: &Url, b: &Url) -> bool {
    a.scheme() == b.scheme() && a.host_str() == b.host_str() && a.port_or_known_default() == b.port_or_known_default()
}

/// Crawls from `config.seed_url`.
///
/// Pages are visited in FIFO discovery order; links found on one page are queued in
/// lexicographic order. Fetches run in batches of `concurrency`, and each batch is
/// merged in queue order, so output does not depend on fetch timing.
pub async fn crawl<F: Fetcher>(config: &CrawlConfig, fetcher: &F) -> (ApplicationStructure, CrawlReport) {
    let mut seed = config.seed_url.clone();
    seed.set_fragment(None);

    let mut report = CrawlReport::default();
    let mut queue: VecDeque<Url> = VecDeque::from([seed.clone()]);
    let mut seen: HashSet<String> = HashSet::from([seed.to_string()]);
    let mut visited_final: HashSet<String> = HashSet::new();
    let mut forms: Vec<FormStructure> = Vec::new();
    let mut quarantine: Vec<QuarantinedForm> = Vec::new();
    let mut attempts = 0usize;

    while !queue.is_empty() && attempts < config.max_pages.get() {
        let room = config.max_pages.get() - attempts;
        let take = room.min(config.concurrency.get()).min(queue.len());
        let batch: Vec<Url> = queue.drain(..take).collect();
        attempts += batch.len();

        let results = join_all(batch.iter().map(|u| fetcher.fetch(u))).await;
        for (url, result) in batch.into_iter().zip(results) {
            let page = match result {
                Ok(page) => page,
                Err(reason) => {
                    report.pages_failed.push((url.to_string(), reason));
                    continue;
                }
            };
            report.pages_fetched += 1;
            let mut page_url = page.url.clone();
            page_url.set_fragment(None);
            if !visited_final.insert(page_url.to_string()) {
                // redirected onto a page already processed
                continue;
            }
            if !page.is_html() {
                continue;
            }
            let html = match String::from_utf8(page.body) {
                Ok(s) => s,
                Err(e) => {
                    report.notes.push(format!("{page_url}: body is not UTF-8; decoded lossily"));
                    String::from_utf8_lossy(e.as_bytes()).into_owned()
                }
            };
            let extracted = extract_forms(&html, &page_url);
            report.notes.extend(extracted.notes);
            forms.extend(extracted.forms);
            quarantine.extend(extracted.quarantined);

            let mut links: Vec<Url> = extract_links(&html, &page_url)
                .into_iter()
                .filter(|l| !config.same_host_only || same_host(l, &seed))
                .collect();
            links.sort_by(|a, b| a.as_str().cmp(b.as_str()));
            for link in links {
                if seen.insert(link.to_string()) {
                    queue.push_back(link);
                }
            }
        }
        if !queue.is_empty() && !config.politeness_delay.is_zero() {
            tokio::time::sleep(config.politeness_delay).await;
        }
    }

    report.forms_found = forms.len();
    report.quarantined = quarantine.len();
    if report.pages_fetched == 0 {
        report.notes.push(format!("seed {seed} could not be fetched; structure is empty"));
    }
    let structure = ApplicationStructure {
        base_url: seed,
        crawled_at: Utc::now(),
        groups: group_by_destination(forms),
        quarantine,
    };
    (structure, report)
}
