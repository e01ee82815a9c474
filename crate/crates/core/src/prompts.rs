//! Prompt templates with `{name}` placeholders. Defaults are compiled in; a
//! directory holding files with the same names overrides them.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;

pub const SELF_ASK_FILE: &str = "self_ask.txt";
pub const ANSWER_FILE: &str = "answer.txt";
pub const META_REASON_FILE: &str = "meta_reason.txt";
pub const EXEMPLARS_WQA_FILE: &str = "exemplars_wqa.txt";
pub const EXEMPLARS_MQA_FILE: &str = "exemplars_mqa.txt";

/// Marker the decomposer emits before each sub-question.
pub const FOLLOW_UP: &str = "Follow up:";
/// Marker preceding an evidence-grounded sub-answer in the transcript.
pub const INTERMEDIATE_ANSWER: &str = "Intermediate Answer:";
pub const FINAL_ANSWER: &str = "[Final Answer]:";
pub const NEEDS_FOLLOW_UP: &str = "Are follow up questions needed here:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExemplarSet {
    #[default]
    Wqa,
    Mqa,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prompts {
    pub self_ask: String,
    pub answer: String,
    pub meta_reason: String,
    pub exemplars_wqa: String,
    pub exemplars_mqa: String,
    /// Exemplars inserted into the meta-reasoner prompt; empty by default.
    pub meta_exemplars: String,
}

impl Default for Prompts {
    fn default() -> Self {
        Self {
            self_ask: include_str!("../prompts/self_ask.txt").into(),
            answer: include_str!("../prompts/answer.txt").into(),
            meta_reason: include_str!("../prompts/meta_reason.txt").into(),
            exemplars_wqa: include_str!("../prompts/exemplars_wqa.txt").into(),
            exemplars_mqa: include_str!("../prompts/exemplars_mqa.txt").into(),
            meta_exemplars: String::new(),
        }
    }
}

impl Prompts {
    /// Defaults, with any template file present in `dir` taking precedence.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mut p = Self::default();
        let slots: [(&str, &mut String); 5] = [
            (SELF_ASK_FILE, &mut p.self_ask),
            (ANSWER_FILE, &mut p.answer),
            (META_REASON_FILE, &mut p.meta_reason),
            (EXEMPLARS_WQA_FILE, &mut p.exemplars_wqa),
            (EXEMPLARS_MQA_FILE, &mut p.exemplars_mqa),
        ];
        for (name, slot) in slots {
            let path = dir.join(name);
            if path.exists() {
                *slot = std::fs::read_to_string(path)?;
            }
        }
        Ok(p)
    }

    pub fn exemplars(&self, set: ExemplarSet) -> &str {
        match set {
            ExemplarSet::Wqa => &self.exemplars_wqa,
            ExemplarSet::Mqa => &self.exemplars_mqa,
        }
    }

    pub fn render_self_ask(&self, set: ExemplarSet, transcript: &str) -> String {
        fill(
            &self.self_ask,
            &[("exemplars", self.exemplars(set).trim_end()), ("transcript", transcript)],
        )
    }

    pub fn render_answer(&self, question: &str, evidence: &[&Document]) -> String {
        fill(
            &self.answer,
            &[("evidence", &render_evidence(evidence)), ("question", question)],
        )
    }

    pub fn render_meta(&self, question: &str, reasoning_path: &str, evidence: &[&Document]) -> String {
        fill(
            &self.meta_reason,
            &[
                ("exemplars", self.meta_exemplars.trim_end()),
                ("reasoning_path", reasoning_path.trim_end()),
                ("evidence", &render_evidence(evidence)),
                ("question", question),
            ],
        )
    }
}

/// `[Evidence i]: title: text`, one passage per line, 1-based.
pub fn render_evidence(docs: &[&Document]) -> String {
    docs.iter()
        .enumerate()
        .map(|(i, d)| match d.title.as_deref() {
            Some(t) if !t.is_empty() => format!("[Evidence {}]: {}: {}", i + 1, t, one_line(&d.text)),
            _ => format!("[Evidence {}]: {}", i + 1, one_line(&d.text)),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Single-pass substitution of `{name}` placeholders. Inserted values are
/// never rescanned; unknown placeholders are left untouched.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let map: HashMap<&str, &str> = values.iter().copied().collect();
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if map.contains_key(&after[..close]) => {
                out.push_str(map[&after[..close]]);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_is_single_pass() {
        assert_eq!(fill("a {x} b {y} {z}", &[("x", "{y}"), ("y", "2")]), "a {y} b 2 {z}");
        assert_eq!(fill("{", &[]), "{");
    }

    #[test]
    fn exemplars_contain_reference_transcripts() {
        let p = Prompts::default();
        assert!(p.exemplars_wqa.contains("Follow up: Who founded Versus?"));
        assert!(p.exemplars_wqa.contains("[Final Answer]: Shot."));
        assert!(p.exemplars_wqa.contains("[Final Answer]: Joseph Ball"));
        assert!(p.exemplars_mqa.contains("[Final Answer]: Jefferson."));
    }

    #[test]
    fn rendering_places_transcript_last() {
        let p = Prompts::default();
        let s = p.render_self_ask(ExemplarSet::Wqa, "Question: Q?\nAre follow up questions needed here:");
        assert!(s.ends_with("Question: Q?\nAre follow up questions needed here:\n"));
        let d = Document::new("d", "line one\nline two").with_title("T");
        let a = p.render_answer("Who?", &[&d]);
        assert!(a.contains("[Evidence 1]: T: line one line two"));
        assert!(a.contains("Question: Who?"));
    }

    #[test]
    fn directory_overrides() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(ANSWER_FILE), "custom {question}").unwrap();
        let p = Prompts::from_dir(dir.path()).unwrap();
        assert_eq!(p.render_answer("Q", &[]), "custom Q");
        assert_eq!(p.self_ask, Prompts::default().self_ask);
    }
}
