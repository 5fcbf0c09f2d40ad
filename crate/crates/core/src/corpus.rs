//! Tokenization, target-word instance extraction and phrasal/sentential
//! context computation.
//!
//! Phrasal context is approximated by punctuation: the span around the target
//! reaches up to (not including) the nearest delimiter token on each side.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    /// Character (not byte) offsets into the source sentence.
    pub char_start: usize,
    pub char_end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub doc_id: String,
    pub sent_index: usize,
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(doc_id: impl Into<String>, sent_index: usize, tokens: Vec<Token>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::domain("sentence has no tokens"));
        }
        Ok(Sentence {
            doc_id: doc_id.into(),
            sent_index,
            tokens,
        })
    }

    /// Builds a sentence from pre-split surfaces, assigning offsets as if the
    /// tokens were joined by single spaces.
    pub fn from_surfaces<S: AsRef<str>>(doc_id: impl Into<String>, sent_index: usize, surfaces: &[S]) -> Result<Self> {
        let mut offset = 0;
        let tokens = surfaces
            .iter()
            .map(|s| {
                let surface = s.as_ref().to_string();
                let len = surface.chars().count();
                let token = Token {
                    surface,
                    char_start: offset,
                    char_end: offset + len,
                };
                offset += len + 1;
                token
            })
            .collect();
        Sentence::new(doc_id, sent_index, tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surfaces(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.surface.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextMode {
    Phrasal,
    Sentential,
}

impl fmt::Display for ContextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContextMode::Phrasal => "phrasal",
            ContextMode::Sentential => "sentential",
        })
    }
}

impl FromStr for ContextMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "phrasal" => Ok(ContextMode::Phrasal),
            "sentential" => Ok(ContextMode::Sentential),
            other => Err(Error::domain(format!("unknown context mode '{other}'"))),
        }
    }
}

/// Token surfaces that bound a phrasal context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DelimiterSet(BTreeSet<String>);

impl DelimiterSet {
    pub fn new<I, S>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = items.into_iter().map(Into::into).collect();
        if set.is_empty() {
            return Err(Error::domain("delimiter set is empty"));
        }
        Ok(DelimiterSet(set))
    }

    pub fn contains(&self, surface: &str) -> bool {
        self.0.contains(surface)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for DelimiterSet {
    fn default() -> Self {
        DelimiterSet::new([",", ";", ":", ".", "!", "?", "(", ")", "–", "—", "\""]).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenizer {
    /// Whitespace splitting plus separation of leading/trailing punctuation.
    #[default]
    Simple,
    /// Input is already tokenized; split on whitespace only.
    Pretokenized,
}

impl Tokenizer {
    pub fn tokenize(self, text: &str) -> Vec<Token> {
        match self {
            Tokenizer::Simple => tokenize(text),
            Tokenizer::Pretokenized => tokenize_pretokenized(text),
        }
    }
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '–' | '—' | '‒' | '―' | '…' | '„' | '“' | '”' | '‚' | '‘' | '’' | '«' | '»' | '‹' | '›' | '·' | '¡' | '¿' | '§'
        )
}

/// Yields `(char_start, chunk)` for every whitespace-separated chunk.
fn whitespace_chunks(text: &str) -> Vec<(usize, Vec<char>)> {
    let mut chunks = Vec::new();
    let mut current: Vec<char> = Vec::new();
    let mut start = 0;
    for (pos, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            if !current.is_empty() {
                chunks.push((start, std::mem::take(&mut current)));
            }
        } else {
            if current.is_empty() {
                start = pos;
            }
            current.push(c);
        }
    }
    if !current.is_empty() {
        chunks.push((start, current));
    }
    chunks
}

fn make_token(chars: &[char], start: usize) -> Token {
    Token {
        surface: chars.iter().collect(),
        char_start: start,
        char_end: start + chars.len(),
    }
}

/// Whitespace tokenization with leading and trailing punctuation split off
/// into single-character tokens. Punctuation inside a word ("z.B", "3,5")
/// stays attached.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    for (start, chunk) in whitespace_chunks(text) {
        let lead = chunk.iter().take_while(|c| is_punctuation(**c)).count();
        if lead == chunk.len() {
            for (i, c) in chunk.iter().enumerate() {
                tokens.push(make_token(std::slice::from_ref(c), start + i));
            }
            continue;
        }
        let trail = chunk.iter().rev().take_while(|c| is_punctuation(**c)).count();
        for i in 0..lead {
            tokens.push(make_token(&chunk[i..i + 1], start + i));
        }
        tokens.push(make_token(&chunk[lead..chunk.len() - trail], start + lead));
        for i in chunk.len() - trail..chunk.len() {
            tokens.push(make_token(&chunk[i..i + 1], start + i));
        }
    }
    tokens
}

pub fn tokenize_pretokenized(text: &str) -> Vec<Token> {
    whitespace_chunks(text)
        .into_iter()
        .map(|(start, chunk)| make_token(&chunk, start))
        .collect()
}

/// Maximal token range around `target_index` bounded by the nearest delimiter
/// on each side (or the sentence edge). Delimiters are excluded.
pub fn phrasal_span(sentence: &Sentence, target_index: usize, delimiters: &DelimiterSet) -> Result<Range<usize>> {
    if delimiters.is_empty() {
        return Err(Error::domain("delimiter set is empty"));
    }
    let tokens = &sentence.tokens;
    let target = tokens.get(target_index).ok_or_else(|| {
        Error::domain(format!(
            "target index {target_index} out of range for sentence of {} tokens",
            tokens.len()
        ))
    })?;
    if delimiters.contains(&target.surface) {
        return Err(Error::domain(format!(
            "target token '{}' is itself a delimiter",
            target.surface
        )));
    }
    let start = tokens[..target_index]
        .iter()
        .rposition(|t| delimiters.contains(&t.surface))
        .map_or(0, |p| p + 1);
    let end = tokens[target_index + 1..]
        .iter()
        .position(|t| delimiters.contains(&t.surface))
        .map_or(tokens.len(), |p| target_index + 1 + p);
    Ok(start..end)
}

/// One occurrence of the target word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub id: String,
    pub sentence: Arc<Sentence>,
    pub target_index: usize,
    pub phrasal_span: Range<usize>,
}

impl Instance {
    pub fn new(sentence: Arc<Sentence>, target_index: usize, phrasal_span: Range<usize>) -> Result<Self> {
        let id = format!("{}:{}:{}", sentence.doc_id, sentence.sent_index, target_index);
        Self::with_id(id, sentence, target_index, phrasal_span)
    }

    pub fn with_id(id: String, sentence: Arc<Sentence>, target_index: usize, phrasal_span: Range<usize>) -> Result<Self> {
        if phrasal_span.end > sentence.len() || !phrasal_span.contains(&target_index) {
            return Err(Error::domain(format!(
                "instance {id}: phrasal span {}..{} must contain target {target_index} and lie within {} tokens",
                phrasal_span.start,
                phrasal_span.end,
                sentence.len()
            )));
        }
        Ok(Instance {
            id,
            sentence,
            target_index,
            phrasal_span,
        })
    }

    pub fn target(&self) -> &Token {
        &self.sentence.tokens[self.target_index]
    }

    pub fn context_tokens(&self, mode: ContextMode) -> &[Token] {
        match mode {
            ContextMode::Phrasal => &self.sentence.tokens[self.phrasal_span.clone()],
            ContextMode::Sentential => &self.sentence.tokens,
        }
    }

    /// Target position relative to the start of the context.
    pub fn context_target_index(&self, mode: ContextMode) -> usize {
        match mode {
            ContextMode::Phrasal => self.target_index - self.phrasal_span.start,
            ContextMode::Sentential => self.target_index,
        }
    }

    pub fn to_record(&self) -> InstanceRecord {
        InstanceRecord {
            id: self.id.clone(),
            doc_id: self.sentence.doc_id.clone(),
            sent_index: self.sentence.sent_index,
            tokens: self.sentence.tokens.iter().map(|t| t.surface.clone()).collect(),
            target_index: self.target_index,
            phrasal_start: self.phrasal_span.start,
            phrasal_end: self.phrasal_span.end,
        }
    }
}

pub fn context_tokens(instance: &Instance, mode: ContextMode) -> &[Token] {
    instance.context_tokens(mode)
}

/// One line of the instance JSONL format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    #[serde(default)]
    pub doc_id: String,
    #[serde(default)]
    pub sent_index: usize,
    pub tokens: Vec<String>,
    pub target_index: usize,
    pub phrasal_start: usize,
    pub phrasal_end: usize,
}

impl InstanceRecord {
    pub fn into_instance(self) -> Result<Instance> {
        let sentence = Sentence::from_surfaces(self.doc_id, self.sent_index, &self.tokens)
            .map_err(|e| Error::domain(format!("instance {}: {e}", self.id)))?;
        Instance::with_id(
            self.id,
            Arc::new(sentence),
            self.target_index,
            self.phrasal_start..self.phrasal_end,
        )
    }
}

/// Every token of `sentence` whose case-folded surface equals the case-folded
/// target becomes an instance.
pub fn find_target_instances(sentence: &Arc<Sentence>, target: &str, delimiters: &DelimiterSet) -> Result<Vec<Instance>> {
    if target.is_empty() {
        return Err(Error::domain("target word is empty"));
    }
    let folded = target.to_lowercase();
    sentence
        .tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.surface.to_lowercase() == folded)
        .map(|(i, _)| {
            let span = phrasal_span(sentence, i, delimiters)?;
            Instance::new(Arc::clone(sentence), i, span)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub mean: f64,
    pub min: usize,
    pub max: usize,
    pub count: usize,
}

pub fn context_length_stats(instances: &[Instance], mode: ContextMode) -> Result<LengthStats> {
    if instances.is_empty() {
        return Err(Error::domain("no instances to summarize"));
    }
    let lengths: Vec<usize> = instances.iter().map(|i| i.context_tokens(mode).len()).collect();
    Ok(LengthStats {
        mean: lengths.iter().sum::<usize>() as f64 / lengths.len() as f64,
        min: *lengths.iter().min().unwrap(),
        max: *lengths.iter().max().unwrap(),
        count: lengths.len(),
    })
}

/// Streams a corpus (one sentence per line, optionally `doc_id<TAB>sentence`)
/// and collects target instances in corpus order.
#[derive(Debug, Clone)]
pub struct Extractor {
    pub target: String,
    pub delimiters: DelimiterSet,
    pub tokenizer: Tokenizer,
}

impl Extractor {
    pub fn new(target: impl Into<String>) -> Self {
        Extractor {
            target: target.into(),
            delimiters: DelimiterSet::default(),
            tokenizer: Tokenizer::Simple,
        }
    }

    /// Lines without a tab are attributed to `default_doc_id`. Sentence
    /// indices count non-empty lines per document. Stops after `limit`
    /// instances.
    pub fn extract<R: BufRead>(&self, reader: R, default_doc_id: &str, limit: Option<usize>) -> Result<Vec<Instance>> {
        if self.target.is_empty() {
            return Err(Error::domain("target word is empty"));
        }
        let mut out = Vec::new();
        let mut sent_counters: HashMap<String, usize> = HashMap::new();
        if limit == Some(0) {
            return Ok(out);
        }
        for line in reader.lines() {
            let line = line?;
            let (doc_id, text) = match line.split_once('\t') {
                Some((doc, text)) => (doc.trim(), text),
                None => (default_doc_id, line.as_str()),
            };
            let tokens = self.tokenizer.tokenize(text);
            if tokens.is_empty() {
                continue;
            }
            let counter = sent_counters.entry(doc_id.to_string()).or_insert(0);
            let sent_index = *counter;
            *counter += 1;
            let sentence = Arc::new(Sentence::new(doc_id, sent_index, tokens)?);
            for instance in find_target_instances(&sentence, &self.target, &self.delimiters)? {
                out.push(instance);
                if limit.is_some_and(|l| out.len() >= l) {
                    return Ok(out);
                }
            }
        }
        Ok(out)
    }
}

pub fn write_instances_jsonl<W: Write>(mut writer: W, instances: &[Instance]) -> Result<()> {
    for instance in instances {
        serde_json::to_writer(&mut writer, &instance.to_record())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_instances_jsonl<R: BufRead>(reader: R) -> Result<Vec<Instance>> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: InstanceRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format(format!("line {}: {e}", lineno + 1)))?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::domain(format!("duplicate instance id {}", record.id)));
        }
        out.push(record.into_instance()?);
    }
    Ok(out)
}
