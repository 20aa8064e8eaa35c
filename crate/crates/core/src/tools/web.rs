//! Pluggable web retrieval. The default backend serves a local document
//! corpus so offline runs are reproducible.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub url: String,
    pub title: String,
    pub snippet: String,
}

pub trait WebBackend: Send + Sync {
    fn fetch(&self, url: &str) -> Result<String, String>;
    fn search(&self, query: &str, limit: usize) -> Result<Vec<SearchHit>, String>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDocument {
    pub url: String,
    pub title: String,
    pub text: String,
}

/// Corpus-backed web: `fetch` is an exact URL lookup, `search` ranks documents
/// by how many distinct query terms they contain.
#[derive(Debug, Clone, Default)]
pub struct FixtureWeb {
    documents: BTreeMap<String, CorpusDocument>,
}

impl FixtureWeb {
    pub fn new(documents: impl IntoIterator<Item = CorpusDocument>) -> Self {
        Self {
            documents: documents.into_iter().map(|d| (d.url.clone(), d)).collect(),
        }
    }

    /// Loads a JSON array of `{url, title, text}` documents.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read corpus {}: {e}", path.display()))?;
        let docs: Vec<CorpusDocument> =
            serde_json::from_str(&text).map_err(|e| format!("malformed corpus {}: {e}", path.display()))?;
        Ok(Self::new(docs))
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

fn terms(text: &str) -> Vec<String> {
    let mut out: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.len() > 1)
        .map(str::to_lowercase)
        .collect();
    out.sort();
    out.dedup();
    out
}

impl WebBackend for FixtureWeb {
    fn fetch(&self, url: &str) -> Result<String, String> {
        self.documents
            .get(url)
            .map(|d| d.text.clone())
            .ok_or_else(|| format!("404 not found: {url}"))
    }

    fn search(&self, query: &str, limit: usize) -> Result<Vec<SearchHit>, String> {
        let wanted = terms(query);
        let mut scored: Vec<(usize, &CorpusDocument)> = self
            .documents
            .values()
            .filter_map(|d| {
                let have = terms(&format!("{} {}", d.title, d.text));
                let score = wanted.iter().filter(|t| have.binary_search(t).is_ok()).count();
                (score > 0).then_some((score, d))
            })
            .collect();
        // BTreeMap iteration gives URL order; the stable sort keeps it for ties.
        scored.sort_by_key(|s| std::cmp::Reverse(s.0));
        Ok(scored
            .into_iter()
            .take(limit)
            .map(|(_, d)| SearchHit {
                url: d.url.clone(),
                title: d.title.clone(),
                snippet: d.text.chars().take(160).collect(),
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> FixtureWeb {
        FixtureWeb::new([
            CorpusDocument {
                url: "https://a.example/alpha".into(),
                title: "Alpha decay".into(),
                text: "Alpha particles are helium nuclei.".into(),
            },
            CorpusDocument {
                url: "https://b.example/beta".into(),
                title: "Beta decay".into(),
                text: "Beta particles are electrons.".into(),
            },
        ])
    }

    #[test]
    fn fetch_hit_and_miss() {
        let web = corpus();
        assert_eq!(
            web.fetch("https://b.example/beta").unwrap(),
            "Beta particles are electrons."
        );
        assert!(web.fetch("https://nowhere").unwrap_err().starts_with("404"));
    }

    #[test]
    fn search_ranks_by_term_overlap() {
        let web = corpus();
        let hits = web.search("helium alpha decay", 5).unwrap();
        assert_eq!(hits[0].url, "https://a.example/alpha");
        assert_eq!(hits.len(), 2);
        assert!(web.search("zebra", 5).unwrap().is_empty());
        assert_eq!(web.search("decay", 1).unwrap().len(), 1);
    }
}
