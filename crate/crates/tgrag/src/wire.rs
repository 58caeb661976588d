//! Delimited tuple records used on the LLM wire.
//!
//! Responses carry one parenthesized record per line, fields separated by
//! `{tuple_delimiter}`, the whole output terminated by
//! `{completion_delimiter}`:
//!
//! ```text
//! ("quadruple"<|>"ACME Corp"<|>"Revenue"<|>"revenue was $1B"<|>"2023-Q1")
//! ("entity"<|>"between"<|>"2022-Q2"<|>"2022-Q4"<|>"quarter")<|COMPLETE|>
//! ```
//!
//! Parsing is tolerant: quotes and angle brackets around fields are
//! stripped, records may also be separated by `{record_delimiter}`, and a
//! caller decides what to do with records it cannot use.

pub const TUPLE_DELIMITER: &str = "<|>";
pub const RECORD_DELIMITER: &str = "##";
pub const COMPLETION_DELIMITER: &str = "<|COMPLETE|>";

/// Split a raw response into records of cleaned fields. Segments without a
/// parenthesized tuple are dropped.
pub fn parse_records(text: &str) -> Vec<Vec<String>> {
    let trimmed = text.replace(COMPLETION_DELIMITER, "");
    let mut records = Vec::new();
    for line in trimmed.lines() {
        for segment in line.split(RECORD_DELIMITER) {
            if let Some(fields) = parse_record(segment) {
                records.push(fields);
            }
        }
    }
    records
}

fn parse_record(segment: &str) -> Option<Vec<String>> {
    let start = segment.find('(')?;
    let end = segment.rfind(')')?;
    if end <= start {
        return None;
    }
    let inner = &segment[start + 1..end];
    let fields: Vec<String> = inner.split(TUPLE_DELIMITER).map(clean_field).collect();
    if fields.is_empty() || fields.iter().all(|f| f.is_empty()) {
        return None;
    }
    Some(fields)
}

fn clean_field(raw: &str) -> String {
    let mut s = raw.trim();
    loop {
        let next = s
            .strip_prefix('"')
            .and_then(|t| t.strip_suffix('"'))
            .or_else(|| s.strip_prefix('<').and_then(|t| t.strip_suffix('>')));
        match next {
            Some(inner) => s = inner.trim(),
            None => break,
        }
    }
    s.to_string()
}
