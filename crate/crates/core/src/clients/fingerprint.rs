use sha2::{Digest, Sha256};

use super::ChatMessage;

/// Canonical prompt form: `\r\n` and `\r` become `\n`, trailing whitespace is
/// removed from every line and from the end of the text.
pub fn normalize_prompt(text: &str) -> String {
    let unified = text.replace("\r\n", "\n").replace('\r', "\n");
    let lines: Vec<&str> = unified.split('\n').map(str::trim_end).collect();
    lines.join("\n").trim_end().to_string()
}

fn digest(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    h.finalize()[..16].iter().map(|b| format!("{b:02x}")).collect()
}

pub fn fingerprint_chat(messages: &[ChatMessage], n: usize) -> String {
    let mut parts: Vec<String> = vec!["chat".into(), n.to_string()];
    for m in messages {
        parts.push(m.role.as_str().into());
        parts.push(normalize_prompt(&m.content));
    }
    let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
    digest(&refs)
}

/// Fingerprint for two-text requests (entailment, cross-scoring).
pub fn fingerprint_pair(kind: &str, a: &str, b: &str) -> String {
    digest(&[kind, &normalize_prompt(a), &normalize_prompt(b)])
}

pub fn fingerprint_embed(text: &str, dim: usize) -> String {
    digest(&["embed", &dim.to_string(), &normalize_prompt(text)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::Role;

    fn msg(c: &str) -> Vec<ChatMessage> {
        vec![ChatMessage {
            role: Role::User,
            content: c.into(),
        }]
    }

    #[test]
    fn invariant_to_trailing_space_and_line_endings() {
        let a = fingerprint_chat(&msg("line one\nline two"), 1);
        let b = fingerprint_chat(&msg("line one  \r\nline two\r\n\n  "), 1);
        assert_eq!(a, b);
        assert_eq!(a.len(), 32);
    }

    #[test]
    fn sensitive_to_n_and_content() {
        let a = fingerprint_chat(&msg("q"), 1);
        assert_ne!(a, fingerprint_chat(&msg("q"), 2));
        assert_ne!(a, fingerprint_chat(&msg("Q"), 1));
        assert_ne!(fingerprint_pair("nli", "ab", "c"), fingerprint_pair("nli", "a", "bc"));
    }
}
