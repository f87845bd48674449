use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;
use url::Url;

use crate::RetrievalError;

/// Registrable domain of a host (`news.bbc.co.uk` → `bbc.co.uk`), lowercase.
pub fn registrable_domain(host: &str) -> Option<String> {
    let host = host.trim().trim_end_matches('.').to_ascii_lowercase();
    if host.is_empty() {
        return None;
    }
    psl::domain_str(&host).map(str::to_string)
}

/// Lowercase host of an http(s) URL.
pub fn url_host(url: &str) -> Option<String> {
    let parsed = Url::parse(url).ok()?;
    if !matches!(parsed.scheme(), "http" | "https") {
        return None;
    }
    let host = parsed.host_str()?.trim_end_matches('.').to_ascii_lowercase();
    (!host.is_empty()).then_some(host)
}

/// Registrable domain of an http(s) URL.
pub fn url_domain(url: &str) -> Option<String> {
    registrable_domain(&url_host(url)?)
}

/// Normalized whitelist entry: the registrable domain, or the entry itself
/// when it is a multi-label public suffix run by one organization
/// (`nhs.uk`).
fn entry_domain(entry: &str) -> Option<String> {
    let host = entry.trim().trim_end_matches('.').to_ascii_lowercase();
    if let Some(d) = registrable_domain(&host) {
        return Some(d);
    }
    let valid = host.contains('.') && host.split('.').all(|l| !l.is_empty() && l.chars().all(|c| c.is_ascii_alphanumeric() || c == '-'));
    valid.then_some(host)
}

/// Trusted domains. A host is trusted when it equals a listed domain or is
/// a subdomain of one.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Whitelist {
    domains: BTreeSet<String>,
}

impl Whitelist {
    /// One domain per line; `#` starts a comment. Hosts are reduced to
    /// their registrable domain where one exists.
    pub fn parse(text: &str) -> Result<Self, RetrievalError> {
        let mut domains = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let entry = line.split('#').next().unwrap_or("").trim();
            if entry.is_empty() {
                continue;
            }
            let domain = entry_domain(entry)
                .ok_or_else(|| RetrievalError::Whitelist(format!("line {}: `{entry}` is not a domain", i + 1)))?;
            domains.insert(domain);
        }
        Ok(Self { domains })
    }

    pub fn from_domains<I, S>(domains: I) -> Result<Self, RetrievalError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let text: Vec<String> = domains.into_iter().map(|d| d.as_ref().to_string()).collect();
        Self::parse(&text.join("\n"))
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RetrievalError::Whitelist(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn allows_domain(&self, host: &str) -> bool {
        let host = host.trim().trim_end_matches('.').to_ascii_lowercase();
        let mut rest = host.as_str();
        loop {
            if self.domains.contains(rest) {
                return true;
            }
            match rest.split_once('.') {
                Some((_, parent)) => rest = parent,
                None => return false,
            }
        }
    }

    pub fn allows_url(&self, url: &str) -> bool {
        url_host(url).is_some_and(|h| self.allows_domain(&h))
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.domains.iter().map(String::as_str)
    }
}

/// Shared, hot-reloadable whitelist.
#[derive(Debug, Clone)]
pub struct WhitelistHandle {
    inner: Arc<RwLock<Whitelist>>,
    path: Option<PathBuf>,
}

impl WhitelistHandle {
    pub fn new(list: Whitelist) -> Self {
        Self { inner: Arc::new(RwLock::new(list)), path: None }
    }

    pub fn from_file(path: impl Into<PathBuf>) -> Result<Self, RetrievalError> {
        let path = path.into();
        let list = Whitelist::load(&path)?;
        Ok(Self { inner: Arc::new(RwLock::new(list)), path: Some(path) })
    }

    /// Re-reads the backing file. On error the previous list stays active.
    pub fn reload(&self) -> Result<usize, RetrievalError> {
        let Some(path) = &self.path else {
            return Ok(self.inner.read().len());
        };
        let list = Whitelist::load(path)?;
        let n = list.len();
        *self.inner.write() = list;
        Ok(n)
    }

    pub fn replace(&self, list: Whitelist) {
        *self.inner.write() = list;
    }

    pub fn snapshot(&self) -> Whitelist {
        self.inner.read().clone()
    }

    pub fn allows_url(&self, url: &str) -> bool {
        self.inner.read().allows_url(url)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subdomains_and_public_suffixes() {
        let w = Whitelist::parse("# trusted\nnih.gov\nbbc.co.uk  # news\n\nwww.mayoclinic.org\n").unwrap();
        assert_eq!(w.len(), 3);
        assert!(w.allows_url("https://pubmed.ncbi.nlm.nih.gov/123"));
        assert!(w.allows_url("http://news.bbc.co.uk/sport"));
        assert!(w.allows_url("https://mayoclinic.org/a"));
        assert!(!w.allows_url("https://co.uk/"));
        assert!(!w.allows_url("https://evil-nih.gov/"));
        assert!(!w.allows_url("https://nih.gov.evil.com/"));
        assert!(!w.allows_url("ftp://nih.gov/file"));
        assert!(!w.allows_url("not a url"));
        assert!(w.allows_domain("WWW.NIH.GOV."));
        let nhs = Whitelist::parse("nhs.uk\n").unwrap();
        assert!(nhs.allows_url("https://www.nhs.uk/conditions/"));
        assert!(!nhs.allows_url("https://nhs.uk.attacker.net/"));
        assert!(Whitelist::parse("localhost\n").is_err());
    }

    #[test]
    fn reload_swaps_atomically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wl.txt");
        std::fs::write(&path, "nih.gov\n").unwrap();
        let h = WhitelistHandle::from_file(&path).unwrap();
        assert!(h.allows_url("https://nih.gov/x"));
        std::fs::write(&path, "acsm.org\n").unwrap();
        assert_eq!(h.reload().unwrap(), 1);
        assert!(!h.allows_url("https://nih.gov/x"));
        assert!(h.allows_url("https://www.acsm.org/x"));
        std::fs::remove_file(&path).unwrap();
        assert!(h.reload().is_err());
        assert!(h.allows_url("https://www.acsm.org/x"));
    }
}
