//! Prompt templates.
//!
//! Templates ship with the crate and can be overridden per deployment by
//! pointing `templates_dir` at a directory of `<template_id>.txt` files.
//! Rendering replaces `{placeholder}` tokens; unknown braces are left
//! untouched so JSON examples inside templates survive.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::wire;

pub const EXTRACT_QUADRUPLES: &str = "extract_quadruples";
pub const TIME_SCOPE: &str = "time_scope";
pub const TIME_REPORT: &str = "time_report";
pub const LOCAL_QA: &str = "local_qa";
pub const GLOBAL_SYNTHESIS: &str = "global_synthesis";
pub const POINT_EXTRACTION: &str = "point_extraction";
pub const JUDGE_LOCAL: &str = "judge_local";
pub const JUDGE_PAIRWISE: &str = "judge_pairwise";

const BUILTINS: [(&str, &str); 8] = [
    (
        EXTRACT_QUADRUPLES,
        include_str!("../templates/extract_quadruples.txt"),
    ),
    (TIME_SCOPE, include_str!("../templates/time_scope.txt")),
    (TIME_REPORT, include_str!("../templates/time_report.txt")),
    (LOCAL_QA, include_str!("../templates/local_qa.txt")),
    (
        GLOBAL_SYNTHESIS,
        include_str!("../templates/global_synthesis.txt"),
    ),
    (
        POINT_EXTRACTION,
        include_str!("../templates/point_extraction.txt"),
    ),
    (JUDGE_LOCAL, include_str!("../templates/judge_local.txt")),
    (
        JUDGE_PAIRWISE,
        include_str!("../templates/judge_pairwise.txt"),
    ),
];

#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<String, String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        Self {
            templates: BUILTINS
                .iter()
                .map(|(id, text)| (id.to_string(), text.to_string()))
                .collect(),
        }
    }

    /// Builtin templates with any `<id>.txt` files in `dir` layered on top.
    pub fn with_overrides(dir: &Path) -> Result<Self> {
        let mut set = Self::builtin();
        if !dir.is_dir() {
            return Err(Error::Config(format!(
                "templates_dir {} is not a directory",
                dir.display()
            )));
        }
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) == Some("txt") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    set.templates
                        .insert(stem.to_string(), std::fs::read_to_string(&path)?);
                }
            }
        }
        Ok(set)
    }

    pub fn render(&self, template_id: &str, values: &[(&str, &str)]) -> Result<String> {
        let template = self
            .templates
            .get(template_id)
            .ok_or_else(|| Error::Config(format!("unknown prompt template {template_id:?}")))?;
        let mut map: BTreeMap<&str, &str> = values.iter().copied().collect();
        map.insert("tuple_delimiter", wire::TUPLE_DELIMITER);
        map.insert("record_delimiter", wire::RECORD_DELIMITER);
        map.insert("completion_delimiter", wire::COMPLETION_DELIMITER);
        map.insert("timestamp_format", "YYYY, YYYY-Qn, YYYY-MM, or YYYY-MM-DD");
        map.insert("timestamp_types", "one of <year, quarter, month, date>");
        Ok(render_placeholders(template, &map))
    }
}

/// Replace `{name}` tokens present in `values`; everything else, including
/// unknown `{...}` sequences, passes through verbatim.
fn render_placeholders(template: &str, values: &BTreeMap<&str, &str>) -> String {
    let mut out = String::with_capacity(template.len());
    let bytes = template.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if let Some(close) = template[i + 1..].find(['{', '}']) {
                let end = i + 1 + close;
                if bytes[end] == b'}' {
                    let name = &template[i + 1..end];
                    if let Some(value) = values.get(name) {
                        out.push_str(value);
                        i = end + 1;
                        continue;
                    }
                }
            }
        }
        let ch = template[i..].chars().next().unwrap();
        out.push(ch);
        i += ch.len_utf8();
    }
    out
}
