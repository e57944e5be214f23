use std::fs;
use std::future::Future;
use std::path::{Component, Path, PathBuf};
use std::time::Duration;

use reqwest::header::{CONTENT_TYPE, COOKIE, HeaderMap, HeaderValue};
use url::Url;

pub const USER_AGENT: &str = concat!("formwatch-crawler/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone)]
pub struct FetchedPage {
    /// URL after redirects.
    pub url: Url,
    pub body: Vec<u8>,
    pub content_type: Option<String>,
}

impl FetchedPage {
    pub fn is_html(&self) -> bool {
        match &self.content_type {
            None => true,
            Some(ct) => {
                let ct = ct.to_ascii_lowercase();
                ct.starts_with("text/html") || ct.starts_with("application/xhtml")
            }
        }
    }
}

pub trait Fetcher: Sync {
    fn fetch(&self, url: &Url) -> impl Future<Output = Result<FetchedPage, String>> + Send;
}

pub struct HttpFetcher {
    client: reqwest::Client,
}

impl HttpFetcher {
    pub fn new(timeout: Duration, session_cookie: Option<&str>) -> Result<HttpFetcher, String> {
        let mut headers = HeaderMap::new();
        if let Some(cookie) = session_cookie {
            let value = HeaderValue::from_str(cookie).map_err(|e| format!("cookie header: {e}"))?;
            headers.insert(COOKIE, value);
        }
        let client = reqwest::Client::builder()
            .user_agent(USER_AGENT)
            .timeout(timeout)
            .default_headers(headers)
            .build()
            .map_err(|e| e.to_string())?;
        Ok(HttpFetcher { client })
    }
}

impl Fetcher for HttpFetcher {
    async fn fetch(&self, url: &Url) -> Result<FetchedPage, String> {
        let resp = self.client.get(url.clone()).send().await.map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("HTTP {}", status.as_u16()));
        }
        let final_url = resp.url().clone();
        let content_type = resp.headers().get(CONTENT_TYPE).and_then(|v| v.to_str().ok()).map(str::to_string);
        let body = resp.bytes().await.map_err(|e| e.to_string())?.to_vec();
        Ok(FetchedPage { url: final_url, body, content_type })
    }
}

/// Serves a static mirror of a site from a directory.
///
/// `/` and any path ending in `/` map to `index.html` in that directory; a query
/// string is appended to the file name after `@`, so
/// `/wp-login.php?action=lostpassword` reads `wp-login.php@action=lostpassword`.
pub struct DirFetcher {
    root: PathBuf,
    origin: Url,
}

impl DirFetcher {
    pub fn new(root: impl Into<PathBuf>, origin: Url) -> DirFetcher {
        DirFetcher { root: root.into(), origin }
    }
}

/// File backing `url` in a static mirror rooted at `root`, if the URL is inside it.
pub fn site_file_for(root: &Path, path: &str, query: Option<&str>) -> Option<PathBuf> {
    let decoded = percent_decode_path(path)?;
    let mut rel = PathBuf::new();
    for comp in Path::new(decoded.trim_start_matches('/')).components() {
        match comp {
            Component::Normal(c) => rel.push(c),
            Component::CurDir => {}
            _ => return None,
        }
    }
    if decoded.ends_with('/') || rel.as_os_str().is_empty() {
        rel.push("index.html");
    }
    if let Some(q) = query.filter(|q| !q.is_empty()) {
        let mut name = rel.file_name()?.to_os_string();
        name.push("@");
        name.push(q);
        rel.set_file_name(name);
    }
    Some(root.join(rel))
}

fn percent_decode_path(path: &str) -> Option<String> {
    percent_encoding::percent_decode_str(path).decode_utf8().ok().map(|c| c.into_owned())
}

impl Fetcher for DirFetcher {
    async fn fetch(&self, url: &Url) -> Result<FetchedPage, String> {
        if url.origin() != self.origin.origin() {
            return Err(format!("{url} is outside the mirrored site"));
        }
        let path = site_file_for(&self.root, url.path(), url.query())
            .ok_or_else(|| format!("{url} does not map to a file"))?;
        let body = fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut page_url = url.clone();
        page_url.set_fragment(None);
        Ok(FetchedPage { url: page_url, body, content_type: Some("text/html".into()) })
    }
}
