//! Tolerant extraction of XML-ish tag blocks from free-form completions.
//!
//! Completions are not XML documents: they mix prose, code fences and
//! unescaped characters such as `<10%` or `≥2`. The scanner only recognises
//! `<name ...>` and `</name>` for the tag it is looking for and treats
//! everything else as text.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("no <{0}> block found")]
    NoBlockFound(String),
    #[error("<{0}> opened but never closed")]
    TruncatedBlock(String),
    #[error("malformed number in <{tag}>: {text:?}")]
    MalformedNumber { tag: String, text: String },
    #[error("<{block}> is missing <{field}>")]
    MissingField { block: String, field: String },
    #[error("invalid value in <{tag}>: {text:?}")]
    BadValue { tag: String, text: String },
}

/// One extracted element.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<'a> {
    pub tag: &'a str,
    pub attrs: BTreeMap<String, String>,
    pub inner: &'a str,
}

impl<'a> Block<'a> {
    pub fn text(&self) -> String {
        normalize(self.inner)
    }

    pub fn attr(&self, key: &str) -> Option<&str> {
        self.attrs.get(key).map(String::as_str)
    }

    /// Trimmed text of the first `<tag>` child, if any.
    pub fn child_text(&self, tag: &str) -> Result<Option<String>, ParseError> {
        match find_block(self.inner, tag) {
            Ok(b) => Ok(Some(b.text())),
            Err(ParseError::NoBlockFound(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn required_text(&self, tag: &str) -> Result<String, ParseError> {
        self.child_text(tag)?.ok_or_else(|| ParseError::MissingField {
            block: self.tag.to_owned(),
            field: tag.to_owned(),
        })
    }

    pub fn child(&self, tag: &'a str) -> Result<Option<Block<'a>>, ParseError> {
        match find_block(self.inner, tag) {
            Ok(b) => Ok(Some(b)),
            Err(ParseError::NoBlockFound(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn children(&self, tag: &'a str) -> Result<Vec<Block<'a>>, ParseError> {
        find_all(self.inner, tag)
    }

    /// A child holding a probability-like number in [0, 1].
    pub fn unit(&self, tag: &str) -> Result<Option<f64>, ParseError> {
        self.child_text(tag)?.map(|t| parse_unit(tag, &t)).transpose()
    }
}

/// Collapses internal line breaks and runs of whitespace.
pub fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-'
}

/// Position of the next `<tag` open marker at or after `from`, with the index
/// just past the closing `>`, plus the raw attribute text.
fn next_open<'a>(text: &'a str, tag: &str, from: usize) -> Option<(usize, usize, &'a str)> {
    let needle = format!("<{tag}");
    let mut pos = from;
    while let Some(rel) = text[pos..].find(&needle) {
        let start = pos + rel;
        let after = start + needle.len();
        match text[after..].chars().next() {
            Some(c) if is_name_char(c) => {
                pos = after;
                continue;
            }
            None => return None,
            _ => {}
        }
        let close = text[after..].find('>')?;
        let attrs = &text[after..after + close];
        if attrs.contains('<') {
            pos = after;
            continue;
        }
        return Some((start, after + close + 1, attrs));
    }
    None
}

fn next_close(text: &str, tag: &str, from: usize) -> Option<(usize, usize)> {
    let needle = format!("</{tag}");
    let mut pos = from;
    while let Some(rel) = text[pos..].find(&needle) {
        let start = pos + rel;
        let after = start + needle.len();
        let rest = &text[after..];
        let trimmed = rest.trim_start();
        if trimmed.starts_with('>') {
            let end = after + (rest.len() - trimmed.len()) + 1;
            return Some((start, end));
        }
        pos = after;
    }
    None
}

fn parse_attrs(raw: &str) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut rest = raw.trim().trim_end_matches('/');
    while let Some(eq) = rest.find('=') {
        let key = rest[..eq].trim().to_owned();
        let after = rest[eq + 1..].trim_start();
        let (value, remaining) = match after.chars().next() {
            Some(q @ ('"' | '\'')) => match after[1..].find(q) {
                Some(end) => (&after[1..1 + end], &after[end + 2..]),
                None => (&after[1..], ""),
            },
            _ => {
                let end = after.find(char::is_whitespace).unwrap_or(after.len());
                (&after[..end], &after[end..])
            }
        };
        if !key.is_empty() {
            out.insert(key, value.to_owned());
        }
        rest = remaining;
    }
    out
}

/// Extracts the first `<tag>` block, matching nested tags of the same name.
pub fn find_block<'a>(text: &'a str, tag: &'a str) -> Result<Block<'a>, ParseError> {
    find_from(text, tag, 0).map(|(b, _)| b)
}

fn find_from<'a>(text: &'a str, tag: &'a str, from: usize) -> Result<(Block<'a>, usize), ParseError> {
    let (_, body_start, raw_attrs) =
        next_open(text, tag, from).ok_or_else(|| ParseError::NoBlockFound(tag.to_owned()))?;
    if raw_attrs.trim_end().ends_with('/') {
        let block = Block {
            tag,
            attrs: parse_attrs(raw_attrs),
            inner: "",
        };
        return Ok((block, body_start));
    }
    let mut depth = 1usize;
    let mut cursor = body_start;
    loop {
        let close = next_close(text, tag, cursor)
            .ok_or_else(|| ParseError::TruncatedBlock(tag.to_owned()))?;
        match next_open(text, tag, cursor) {
            Some((open_start, open_end, _)) if open_start < close.0 => {
                depth += 1;
                cursor = open_end;
            }
            _ => {
                depth -= 1;
                cursor = close.1;
                if depth == 0 {
                    let block = Block {
                        tag,
                        attrs: parse_attrs(raw_attrs),
                        inner: &text[body_start..close.0],
                    };
                    return Ok((block, close.1));
                }
            }
        }
    }
}

/// All top-level `<tag>` blocks in order.
pub fn find_all<'a>(text: &'a str, tag: &'a str) -> Result<Vec<Block<'a>>, ParseError> {
    let mut out = Vec::new();
    let mut from = 0;
    loop {
        match find_from(text, tag, from) {
            Ok((b, end)) => {
                out.push(b);
                from = end;
            }
            Err(ParseError::NoBlockFound(_)) => return Ok(out),
            Err(e) => return Err(e),
        }
    }
}

/// Parses a leading decimal number and checks it lies in [0, 1].
pub fn parse_unit(tag: &str, text: &str) -> Result<f64, ParseError> {
    let bad = || ParseError::MalformedNumber {
        tag: tag.to_owned(),
        text: text.to_owned(),
    };
    let t = text.trim();
    let end = t
        .char_indices()
        .find(|&(i, c)| !(c.is_ascii_digit() || c == '.' || (i == 0 && (c == '-' || c == '+'))))
        .map_or(t.len(), |(i, _)| i);
    let x: f64 = t[..end].parse().map_err(|_| bad())?;
    if !(0.0..=1.0).contains(&x) {
        return Err(bad());
    }
    Ok(x)
}
