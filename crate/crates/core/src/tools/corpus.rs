//! Article corpus with attribute filters and term-frequency ranking.

use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use super::{uint_arg, Tool, ToolDescriptor};

pub const FILTER_FIELDS: [&str; 5] = ["title", "author", "category", "date", "source"];

const SNIPPET_CHARS: usize = 280;
const DEFAULT_PAGE_SIZE: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("unknown filter field `{0}` (expected one of title, author, category, date, source)")]
    BadFilterField(String),
    #[error("invalid filter on `{field}`: {message}")]
    BadFilterValue { field: String, message: String },
    #[error("corpus line {line}: {message}")]
    BadRecord { line: usize, message: String },
    #[error("cannot read corpus: {0}")]
    Io(String),
    #[error("page numbers start at 1")]
    BadPage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub author: String,
    #[serde(default)]
    pub category: String,
    /// ISO-8601 date (a `YYYY-MM-DD` prefix is what filters compare).
    #[serde(default)]
    pub date: String,
    #[serde(default)]
    pub source: String,
    #[serde(default)]
    pub content: String,
}

impl Article {
    fn field(&self, name: &str) -> &str {
        match name {
            "title" => &self.title,
            "author" => &self.author,
            "category" => &self.category,
            "date" => &self.date,
            _ => &self.source,
        }
    }
}

/// Predicate over one attribute. Text comparisons ignore case.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldFilter {
    Equals(String),
    Contains(String),
    /// Strictly before the date.
    Before(NaiveDate),
    /// Strictly after the date.
    After(NaiveDate),
}

impl FieldFilter {
    fn matches(&self, value: &str) -> bool {
        match self {
            FieldFilter::Equals(want) => value.to_lowercase() == want.to_lowercase(),
            FieldFilter::Contains(needle) => value.to_lowercase().contains(&needle.to_lowercase()),
            FieldFilter::Before(date) => parse_date(value).is_some_and(|d| d < *date),
            FieldFilter::After(date) => parse_date(value).is_some_and(|d| d > *date),
        }
    }

    /// Parses the JSON form: a string (equality) or an object with any of
    /// `eq`, `contains`, `before`, `after`.
    pub fn parse_all(field: &str, spec: &Value) -> Result<Vec<FieldFilter>, CorpusError> {
        let bad = |message: String| CorpusError::BadFilterValue {
            field: field.to_string(),
            message,
        };
        match spec {
            Value::String(s) => Ok(vec![FieldFilter::Equals(s.clone())]),
            Value::Object(map) => map
                .iter()
                .map(|(op, v)| {
                    let text = v
                        .as_str()
                        .ok_or_else(|| bad(format!("`{op}` expects a string")))?;
                    match op.as_str() {
                        "eq" => Ok(FieldFilter::Equals(text.to_string())),
                        "contains" => Ok(FieldFilter::Contains(text.to_string())),
                        "before" | "after" => {
                            let date = parse_date(text)
                                .ok_or_else(|| bad(format!("`{text}` is not a YYYY-MM-DD date")))?;
                            Ok(if op == "before" {
                                FieldFilter::Before(date)
                            } else {
                                FieldFilter::After(date)
                            })
                        }
                        other => Err(bad(format!("unknown operator `{other}`"))),
                    }
                })
                .collect(),
            other => Err(bad(format!("expected a string or object, got {other}"))),
        }
    }
}

fn parse_date(text: &str) -> Option<NaiveDate> {
    let prefix = text.get(..10).unwrap_or(text);
    NaiveDate::parse_from_str(prefix, "%Y-%m-%d").ok()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchHit {
    /// Zero-based position of the article in the corpus (blank lines skipped).
    pub id: usize,
    pub score: usize,
    pub title: String,
    pub author: String,
    pub category: String,
    pub date: String,
    pub source: String,
    pub snippet: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchPage {
    pub total: usize,
    pub page: usize,
    pub page_size: usize,
    pub results: Vec<SearchHit>,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    articles: Vec<Article>,
}

impl Corpus {
    pub fn new(articles: Vec<Article>) -> Self {
        Self { articles }
    }

    pub fn from_jsonl(text: &str) -> Result<Self, CorpusError> {
        let mut articles = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let article = serde_json::from_str(line).map_err(|e| CorpusError::BadRecord {
                line: idx + 1,
                message: e.to_string(),
            })?;
            articles.push(article);
        }
        Ok(Self { articles })
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CorpusError::Io(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&text)
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    pub fn articles(&self) -> &[Article] {
        &self.articles
    }

    /// Every matching hit, ordered by score descending then id ascending.
    /// With a blank query all filtered articles match with score 0.
    pub fn search(&self, filters: &[(String, FieldFilter)], query: &str) -> Result<Vec<SearchHit>, CorpusError> {
        for (field, _) in filters {
            if !FILTER_FIELDS.contains(&field.as_str()) {
                return Err(CorpusError::BadFilterField(field.clone()));
            }
        }
        let terms = tokenize(query);
        let mut hits: Vec<SearchHit> = self
            .articles
            .iter()
            .enumerate()
            .filter(|(_, a)| filters.iter().all(|(field, f)| f.matches(a.field(field))))
            .filter_map(|(id, a)| {
                let score = score(a, &terms);
                (terms.is_empty() || score > 0).then(|| SearchHit {
                    id,
                    score,
                    title: a.title.clone(),
                    author: a.author.clone(),
                    category: a.category.clone(),
                    date: a.date.clone(),
                    source: a.source.clone(),
                    snippet: snippet(&a.content, &terms),
                })
            })
            .collect();
        hits.sort_by(|x, y| y.score.cmp(&x.score).then(x.id.cmp(&y.id)));
        Ok(hits)
    }

    /// One 1-based page of [`Corpus::search`]. Pages past the end are empty.
    pub fn search_page(
        &self,
        filters: &[(String, FieldFilter)],
        query: &str,
        page: usize,
        page_size: usize,
    ) -> Result<SearchPage, CorpusError> {
        if page == 0 {
            return Err(CorpusError::BadPage);
        }
        let page_size = page_size.max(1);
        let all = self.search(filters, query)?;
        let total = all.len();
        let results = all
            .into_iter()
            .skip((page - 1).saturating_mul(page_size))
            .take(page_size)
            .collect();
        Ok(SearchPage {
            total,
            page,
            page_size,
            results,
        })
    }
}

fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn count_term(haystack_tokens: &[String], term: &str) -> usize {
    haystack_tokens.iter().filter(|t| t.as_str() == term).count()
}

fn score(article: &Article, terms: &[String]) -> usize {
    let content = tokenize(&article.content);
    let title = tokenize(&article.title);
    terms
        .iter()
        .map(|t| count_term(&content, t) + 2 * count_term(&title, t))
        .sum()
}

fn snippet(content: &str, terms: &[String]) -> String {
    let lower = content.to_lowercase();
    let start_byte = terms
        .iter()
        .filter_map(|t| lower.find(t.as_str()))
        .min()
        .unwrap_or(0);
    // Lowercasing can shift byte offsets; fall back to the start if so.
    let start_char = if lower.len() == content.len() {
        content.get(..start_byte).map_or(0, |head| head.chars().count())
    } else {
        0
    };
    let begin = start_char.saturating_sub(SNIPPET_CHARS / 4);
    let text: String = content.chars().skip(begin).take(SNIPPET_CHARS).collect();
    let mut out = String::new();
    if begin > 0 {
        out.push_str("...");
    }
    out.push_str(&text);
    if begin + SNIPPET_CHARS < content.chars().count() {
        out.push_str("...");
    }
    out
}

pub fn corpus_search_tool(corpus: Arc<Corpus>) -> Tool {
    Tool::new(
        ToolDescriptor::new(
            "search",
            "Searches the article collection. Supports keyword ranking, filters on title, author, category, date and source, and pagination.",
            json!({
                "query": "keywords to rank articles by (may be empty)",
                "filters": "optional object mapping a field (title, author, category, date, source) to a value for exact match, or to {\"eq\"|\"contains\"|\"before\"|\"after\": value}; dates are YYYY-MM-DD",
                "page": "optional 1-based page number (default 1)",
                "page_size": "optional results per page (default 5)"
            }),
        ),
        move |args| {
            let query = match args.get("query") {
                None | Some(Value::Null) => "",
                Some(Value::String(s)) => s.as_str(),
                Some(other) => return Err(format!("argument `query` must be a string, got {other}")),
            };
            let filters = parse_filter_arg(args).map_err(|e| e.to_string())?;
            let page = uint_arg(args, "page")?.unwrap_or(1) as usize;
            let page_size = uint_arg(args, "page_size")?.map_or(DEFAULT_PAGE_SIZE, |n| n as usize);
            let page = corpus
                .search_page(&filters, query, page, page_size)
                .map_err(|e| e.to_string())?;
            Ok(serde_json::to_string(&page).unwrap_or_default())
        },
    )
}

fn parse_filter_arg(args: &Map<String, Value>) -> Result<Vec<(String, FieldFilter)>, CorpusError> {
    let mut out = Vec::new();
    match args.get("filters") {
        None | Some(Value::Null) => {}
        Some(Value::Object(map)) => {
            for (field, spec) in map {
                if !FILTER_FIELDS.contains(&field.as_str()) {
                    return Err(CorpusError::BadFilterField(field.clone()));
                }
                for f in FieldFilter::parse_all(field, spec)? {
                    out.push((field.clone(), f));
                }
            }
        }
        Some(other) => {
            return Err(CorpusError::BadFilterValue {
                field: "filters".into(),
                message: format!("expected an object, got {other}"),
            })
        }
    }
    Ok(out)
}
