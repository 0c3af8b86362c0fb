//! Talk records, tokenization, word vectors and dependency trees.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Number of viewer rating categories.
pub const NUM_CATEGORIES: usize = 14;

/// Rating categories in their fixed order.
pub const CATEGORIES: [&str; NUM_CATEGORIES] = [
    "Beautiful",
    "Confusing",
    "Courageous",
    "Fascinating",
    "Funny",
    "Informative",
    "Ingenious",
    "Inspiring",
    "Jaw-Dropping",
    "Long-winded",
    "Obnoxious",
    "OK",
    "Persuasive",
    "Unconvincing",
];

/// Keywords that mark performance talks.
pub const DEFAULT_BANNED_KEYWORDS: [&str; 5] =
    ["live music", "dance", "music", "performance", "entertainment"];
pub const DEFAULT_MIN_WORDS: usize = 450;
/// Six months.
pub const DEFAULT_MIN_AGE_DAYS: u64 = 183;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: missing required field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: expected {expected} rating counts, got {got}")]
    RatingCount {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: unknown rating category `{name}`")]
    UnknownCategory { line: usize, name: String },
    #[error("empty transcript")]
    EmptyTranscript,
    #[error("line {line}: expected {expected} values, got {got}")]
    VectorWidth {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: invalid number `{text}`")]
    BadNumber { line: usize, text: String },
    #[error("line {line}: duplicate token `{token}`")]
    DuplicateToken { line: usize, token: String },
    #[error("word vector dimension must be positive")]
    ZeroDimension,
    #[error("tree block at line {line}: {message}")]
    Tree { line: usize, message: String },
    #[error("tree block at line {line}: cyclic dependency")]
    CyclicDependency { line: usize },
    #[error("tree block at line {line}: root count != 1 (found {count})")]
    RootCount { line: usize, count: usize },
    #[error("duplicate tree for talk `{talk}` sentence {sentence}")]
    DuplicateTree { talk: String, sentence: usize },
}

pub type Result<T> = std::result::Result<T, CorpusError>;

fn io_error(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One speech record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Talk {
    pub id: String,
    pub title: String,
    pub transcript: String,
    pub sentences: Vec<Vec<String>>,
    pub rating_counts: [u64; NUM_CATEGORIES],
    pub total_views: u64,
    pub age_days: u64,
    pub keywords: Vec<String>,
}

impl Talk {
    pub fn word_count(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    pub fn total_ratings(&self) -> u64 {
        self.rating_counts.iter().sum()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().flatten().map(String::as_str)
    }
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, line: usize, name: &'static str) -> Result<&'a Value> {
    obj.get(name)
        .ok_or(CorpusError::MissingField { line, field: name })
}

fn as_str(v: &Value, line: usize, name: &str) -> Result<String> {
    v.as_str().map(str::to_owned).ok_or_else(|| CorpusError::Malformed {
        line,
        message: format!("field `{name}` must be a string"),
    })
}

fn as_count(v: &Value, line: usize, name: &str) -> Result<u64> {
    v.as_u64().ok_or_else(|| CorpusError::Malformed {
        line,
        message: format!("field `{name}` must be a non-negative integer"),
    })
}

/// Parses one JSONL record. `line` is 1-based and only used in errors.
pub fn parse_talk(text: &str, line: usize) -> Result<Talk> {
    let value: Value = serde_json::from_str(text).map_err(|e| CorpusError::Malformed {
        line,
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| CorpusError::Malformed {
        line,
        message: "record is not a JSON object".into(),
    })?;

    let id = as_str(field(obj, line, "id")?, line, "id")?;
    let title = as_str(field(obj, line, "title")?, line, "title")?;
    let transcript = as_str(field(obj, line, "transcript")?, line, "transcript")?;
    let ratings = field(obj, line, "ratings")?
        .as_object()
        .ok_or_else(|| CorpusError::Malformed {
            line,
            message: "field `ratings` must be an object of named counts".into(),
        })?;
    if ratings.len() != NUM_CATEGORIES {
        return Err(CorpusError::RatingCount {
            line,
            expected: NUM_CATEGORIES,
            got: ratings.len(),
        });
    }
    let mut rating_counts = [0u64; NUM_CATEGORIES];
    for (name, count) in ratings {
        let idx = category_index(name).ok_or_else(|| CorpusError::UnknownCategory {
            line,
            name: name.clone(),
        })?;
        rating_counts[idx] = as_count(count, line, name)?;
    }
    let total_views = as_count(field(obj, line, "views")?, line, "views")?;
    let age_days = as_count(field(obj, line, "age_days")?, line, "age_days")?;
    let keywords = field(obj, line, "keywords")?
        .as_array()
        .ok_or_else(|| CorpusError::Malformed {
            line,
            message: "field `keywords` must be an array".into(),
        })?
        .iter()
        .map(|k| as_str(k, line, "keywords"))
        .collect::<Result<Vec<_>>>()?;

    let sentences = match split_sentences(&transcript) {
        Ok(s) => s,
        Err(CorpusError::EmptyTranscript) => Vec::new(),
        Err(e) => return Err(e),
    };

    Ok(Talk {
        id,
        title,
        transcript,
        sentences,
        rating_counts,
        total_views,
        age_days,
        keywords,
    })
}

/// Case-insensitive lookup of a category name.
pub fn category_index(name: &str) -> Option<usize> {
    CATEGORIES.iter().position(|c| c.eq_ignore_ascii_case(name))
}

/// Reads a JSON-lines talk file. Blank lines are skipped; a talk whose
/// transcript has no tokens is returned with no sentences (and dropped by
/// [`filter_talks`]).
pub fn load_talks(path: &Path) -> Result<Vec<Talk>> {
    let file = fs::File::open(path).map_err(|e| io_error(path, e))?;
    let mut talks = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let text = line.map_err(|e| io_error(path, e))?;
        if text.trim().is_empty() {
            continue;
        }
        talks.push(parse_talk(&text, line_no)?);
    }
    Ok(talks)
}

#[derive(Debug, Clone)]
pub struct FilterRules {
    pub min_words: usize,
    pub min_age_days: u64,
    pub banned_keywords: Vec<String>,
}

impl Default for FilterRules {
    fn default() -> Self {
        Self {
            min_words: DEFAULT_MIN_WORDS,
            min_age_days: DEFAULT_MIN_AGE_DAYS,
            banned_keywords: DEFAULT_BANNED_KEYWORDS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Keeps talks with enough words, old enough, and with no banned keyword.
/// Talks with no sentences or no ratings are always dropped.
pub fn filter_talks(talks: Vec<Talk>, rules: &FilterRules) -> Vec<Talk> {
    let banned: Vec<String> = rules
        .banned_keywords
        .iter()
        .map(|k| k.trim().to_lowercase())
        .collect();
    talks
        .into_iter()
        .filter(|t| {
            !t.sentences.is_empty()
                && t.total_ratings() > 0
                && t.word_count() >= rules.min_words
                && t.age_days >= rules.min_age_days
                && !t
                    .keywords
                    .iter()
                    .any(|k| banned.contains(&k.trim().to_lowercase()))
        })
        .collect()
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Splits a transcript into sentences of lowercase tokens.
///
/// Whitespace separates raw words. Non-alphanumeric characters at either
/// end of a raw word become one token each; the remaining core is a single
/// token (inner apostrophes and hyphens stay). A raw word whose trailing
/// punctuation contains `.`, `!` or `?` ends the sentence, so abbreviations
/// such as "Dr." also end one.
pub fn split_sentences(transcript: &str) -> Result<Vec<Vec<String>>> {
    let mut sentences = Vec::new();
    let mut current: Vec<String> = Vec::new();
    for raw in transcript.split_whitespace() {
        let lower = raw.to_lowercase();
        let chars: Vec<char> = lower.chars().collect();
        let start = chars
            .iter()
            .position(|c| c.is_alphanumeric())
            .unwrap_or(chars.len());
        let end = chars
            .iter()
            .rposition(|c| c.is_alphanumeric())
            .map_or(start, |p| p + 1);

        current.extend(chars[..start].iter().map(|c| c.to_string()));
        if start < end {
            current.push(chars[start..end].iter().collect());
        }
        let trailing = &chars[end.max(start)..];
        current.extend(trailing.iter().map(|c| c.to_string()));

        // A raw word made only of punctuation is all "leading".
        let tail = if start == chars.len() { &chars[..] } else { trailing };
        if tail.iter().copied().any(is_terminal) && !current.is_empty() {
            sentences.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    if sentences.is_empty() {
        return Err(CorpusError::EmptyTranscript);
    }
    Ok(sentences)
}

/// Pre-trained word vectors; absent tokens map to the zero vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "StoredVectors", try_from = "StoredVectors")]
pub struct WordVectors {
    dim: usize,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

/// Serialized form: tokens in row order, so the bytes do not depend on
/// hash iteration order.
#[derive(Serialize, Deserialize)]
struct StoredVectors {
    dim: usize,
    tokens: Vec<String>,
    data: Vec<f64>,
}

impl From<WordVectors> for StoredVectors {
    fn from(v: WordVectors) -> Self {
        let mut tokens = vec![String::new(); v.index.len()];
        for (token, id) in v.index {
            tokens[id] = token;
        }
        Self { dim: v.dim, tokens, data: v.data }
    }
}

impl TryFrom<StoredVectors> for WordVectors {
    type Error = String;

    fn try_from(s: StoredVectors) -> std::result::Result<Self, String> {
        if s.dim == 0 || s.data.len() != s.tokens.len() * s.dim {
            return Err(format!("word vectors: {} values for {} tokens of width {}", s.data.len(), s.tokens.len(), s.dim));
        }
        let mut index = HashMap::with_capacity(s.tokens.len());
        for (id, token) in s.tokens.into_iter().enumerate() {
            if index.insert(token, id).is_some() {
                return Err("word vectors: duplicate token".into());
            }
        }
        Ok(Self { dim: s.dim, index, data: s.data })
    }
}

impl WordVectors {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(CorpusError::ZeroDimension);
        }
        Ok(Self {
            dim,
            index: HashMap::new(),
            data: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Adds a vector; returns false (and leaves the table unchanged) if the
    /// token is already present. Panics if `values.len() != dim`.
    pub fn insert(&mut self, token: &str, values: &[f64]) -> bool {
        assert_eq!(values.len(), self.dim, "word vector width");
        if self.index.contains_key(token) {
            return false;
        }
        self.index.insert(token.to_owned(), self.index.len());
        self.data.extend_from_slice(values);
        true
    }

    /// Row id of a token, if present.
    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn lookup(&self, token: &str) -> Vec<f64> {
        match self.id(token) {
            Some(id) => self.row(id).to_vec(),
            None => vec![0.0; self.dim],
        }
    }

    /// Copy holding only the given tokens, inserted in sorted order.
    pub fn subset<'a>(&self, tokens: impl IntoIterator<Item = &'a str>) -> WordVectors {
        let wanted: BTreeSet<&str> = tokens.into_iter().collect();
        let mut out = WordVectors {
            dim: self.dim,
            index: HashMap::new(),
            data: Vec::new(),
        };
        for token in wanted {
            if let Some(id) = self.id(token) {
                out.insert(token, self.row(id));
            }
        }
        out
    }
}

/// Reads a text table of `token v1 ... v_dim` lines.
pub fn load_word_vectors(path: &Path, dim: usize) -> Result<WordVectors> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    parse_word_vectors(&text, dim)
}

pub fn parse_word_vectors(text: &str, dim: usize) -> Result<WordVectors> {
    let mut vectors = WordVectors::new(dim)?;
    let mut values = Vec::with_capacity(dim);
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        values.clear();
        for part in parts {
            let v: f64 = part.parse().map_err(|_| CorpusError::BadNumber {
                line: line_no,
                text: part.to_owned(),
            })?;
            values.push(v);
        }
        if values.len() != dim {
            return Err(CorpusError::VectorWidth {
                line: line_no,
                expected: dim,
                got: values.len(),
            });
        }
        if !vectors.insert(token, &values) {
            return Err(CorpusError::DuplicateToken {
                line: line_no,
                token: token.to_owned(),
            });
        }
    }
    Ok(vectors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepNode {
    pub token: String,
    pub pos_tag: String,
    pub dep_type: String,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

/// Dependency tree of one sentence. Node order is the token order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepTree {
    nodes: Vec<DepNode>,
    root: usize,
}

/// Why a head assignment is not a tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeShapeError {
    Empty,
    HeadOutOfRange { node: usize },
    Cycle,
    RootCount(usize),
}

impl DepTree {
    /// Builds a tree from `(token, pos, dep, head)` rows where `head` is
    /// `None` for the root and otherwise a 0-based node index.
    pub fn from_heads(
        rows: Vec<(String, String, String, Option<usize>)>,
    ) -> std::result::Result<Self, TreeShapeError> {
        let n = rows.len();
        if n == 0 {
            return Err(TreeShapeError::Empty);
        }
        let heads: Vec<Option<usize>> = rows.iter().map(|r| r.3).collect();
        for (node, head) in heads.iter().enumerate() {
            match *head {
                Some(h) if h == node => return Err(TreeShapeError::Cycle),
                Some(h) if h >= n => return Err(TreeShapeError::HeadOutOfRange { node }),
                _ => {}
            }
        }
        // 0 = unvisited, 1 = on current path, 2 = reaches a root
        let mut state = vec![0u8; n];
        for start in 0..n {
            let mut path = Vec::new();
            let mut cur = start;
            loop {
                match state[cur] {
                    2 => break,
                    1 => return Err(TreeShapeError::Cycle),
                    _ => {}
                }
                state[cur] = 1;
                path.push(cur);
                match heads[cur] {
                    Some(h) => cur = h,
                    None => break,
                }
            }
            for p in path {
                state[p] = 2;
            }
        }
        let roots: Vec<usize> = (0..n).filter(|&i| heads[i].is_none()).collect();
        if roots.len() != 1 {
            return Err(TreeShapeError::RootCount(roots.len()));
        }
        let mut nodes: Vec<DepNode> = rows
            .into_iter()
            .map(|(token, pos_tag, dep_type, parent)| DepNode {
                token,
                pos_tag,
                dep_type,
                parent,
                children: Vec::new(),
            })
            .collect();
        for i in 0..n {
            if let Some(p) = nodes[i].parent {
                nodes[p].children.push(i);
            }
        }
        Ok(Self {
            nodes,
            root: roots[0],
        })
    }

    pub fn nodes(&self) -> &[DepNode] {
        &self.nodes
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node indices with every child before its parent; the root is last.
    pub fn post_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(self.root, false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
            } else {
                stack.push((node, true));
                for &c in self.nodes[node].children.iter().rev() {
                    stack.push((c, false));
                }
            }
        }
        order
    }
}

/// Trees keyed by `(talk id, sentence index)`.
pub type TreeBank = BTreeMap<(String, usize), DepTree>;

pub fn load_dep_trees(path: &Path) -> Result<TreeBank> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    parse_conllu(&text)
}

struct Block {
    start: usize,
    talk: Option<String>,
    sent: Option<String>,
    rows: Vec<(usize, String, String, String, usize)>,
}

fn comment_value<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let rest = line.trim_start_matches('#').trim_start();
    let rest = rest.strip_prefix(key)?.trim_start();
    rest.strip_prefix('=').map(str::trim)
}

/// Parses CoNLL-U text. Columns ID, FORM, UPOS, HEAD and DEPREL are used;
/// multiword-token ranges (`1-2`) and empty nodes (`1.1`) are skipped.
pub fn parse_conllu(text: &str) -> Result<TreeBank> {
    let mut bank = TreeBank::new();
    let mut block: Option<Block> = None;
    for (i, line) in text.lines().chain(std::iter::once("")).enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            if let Some(b) = block.take() {
                finish_block(b, &mut bank)?;
            }
            continue;
        }
        let b = block.get_or_insert_with(|| Block {
            start: line_no,
            talk: None,
            sent: None,
            rows: Vec::new(),
        });
        if trimmed.starts_with('#') {
            if let Some(v) = comment_value(trimmed, "talk_id") {
                b.talk = Some(v.to_owned());
            } else if let Some(v) = comment_value(trimmed, "sent_id") {
                b.sent = Some(v.to_owned());
            }
            continue;
        }
        let mut cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            cols = line.split_whitespace().collect();
        }
        if cols.len() != 10 {
            return Err(CorpusError::Tree {
                line: line_no,
                message: format!("expected 10 columns, got {}", cols.len()),
            });
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0].parse().map_err(|_| CorpusError::Tree {
            line: line_no,
            message: format!("invalid ID `{}`", cols[0]),
        })?;
        let head: usize = cols[6].parse().map_err(|_| CorpusError::Tree {
            line: line_no,
            message: format!("invalid HEAD `{}`", cols[6]),
        })?;
        b.rows.push((id, cols[1].to_owned(), cols[3].to_owned(), cols[7].to_owned(), head));
    }
    Ok(bank)
}

fn finish_block(b: Block, bank: &mut TreeBank) -> Result<()> {
    let line = b.start;
    if b.rows.is_empty() {
        // Comment-only block.
        return Ok(());
    }
    let talk = b.talk.ok_or(CorpusError::Tree {
        line,
        message: "missing `# talk_id` comment".into(),
    })?;
    let sent = b.sent.ok_or(CorpusError::Tree {
        line,
        message: "missing `# sent_id` comment".into(),
    })?;
    let sentence: usize = sent.parse().map_err(|_| CorpusError::Tree {
        line,
        message: format!("sent_id `{sent}` is not a sentence index"),
    })?;
    for (pos, row) in b.rows.iter().enumerate() {
        if row.0 != pos + 1 {
            return Err(CorpusError::Tree {
                line,
                message: format!("token IDs must run 1..n, found {} at position {}", row.0, pos + 1),
            });
        }
    }
    let rows = b
        .rows
        .into_iter()
        .map(|(_, form, upos, deprel, head)| (form, upos, deprel, head.checked_sub(1)))
        .collect();
    let tree = DepTree::from_heads(rows).map_err(|e| match e {
        TreeShapeError::Cycle => CorpusError::CyclicDependency { line },
        TreeShapeError::RootCount(count) => CorpusError::RootCount { line, count },
        TreeShapeError::HeadOutOfRange { node } => CorpusError::Tree {
            line,
            message: format!("HEAD of token {} is out of range", node + 1),
        },
        TreeShapeError::Empty => CorpusError::Tree {
            line,
            message: "empty sentence".into(),
        },
    })?;
    if bank.insert((talk.clone(), sentence), tree).is_some() {
        return Err(CorpusError::DuplicateTree { talk, sentence });
    }
    Ok(())
}

/// Dense, sorted index of POS tags and dependency types.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pos_tags: Vec<String>,
    dep_types: Vec<String>,
}

impl Vocab {
    pub fn new(pos_tags: impl IntoIterator<Item = String>, dep_types: impl IntoIterator<Item = String>) -> Self {
        let pos: BTreeSet<String> = pos_tags.into_iter().collect();
        let dep: BTreeSet<String> = dep_types.into_iter().collect();
        Self {
            pos_tags: pos.into_iter().collect(),
            dep_types: dep.into_iter().collect(),
        }
    }

    pub fn pos_tags(&self) -> &[String] {
        &self.pos_tags
    }

    pub fn dep_types(&self) -> &[String] {
        &self.dep_types
    }

    pub fn pos_index(&self, tag: &str) -> Option<usize> {
        self.pos_tags.binary_search_by(|t| t.as_str().cmp(tag)).ok()
    }

    pub fn dep_index(&self, tag: &str) -> Option<usize> {
        self.dep_types.binary_search_by(|t| t.as_str().cmp(tag)).ok()
    }
}

pub fn build_vocab<'a>(trees: impl IntoIterator<Item = &'a DepTree>) -> Vocab {
    let mut pos = BTreeSet::new();
    let mut dep = BTreeSet::new();
    for tree in trees {
        for node in tree.nodes() {
            pos.insert(node.pos_tag.clone());
            dep.insert(node.dep_type.clone());
        }
    }
    Vocab {
        pos_tags: pos.into_iter().collect(),
        dep_types: dep.into_iter().collect(),
    }
}
