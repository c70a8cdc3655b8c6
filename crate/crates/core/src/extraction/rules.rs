//! Pattern-based extractor for Connextra stories
//! ("As a <persona>, I want to <action> <entity> so that <benefit>").
//! Deterministic and offline; used as a baseline and in tests.

use super::KgComponents;
use crate::graph::{NodeKind, NodeRef, RelKind};

const PERSONA_MARKERS: [&str; 2] = ["as an ", "as a "];
const WANT_MARKERS: [&str; 2] = ["i want to be able to ", "i want to "];
const BENEFIT_MARKERS: [&str; 2] = ["so that ", "in order to "];
const LEADING_FILLERS: [&str; 14] = [
    "a", "an", "the", "by", "with", "for", "to", "on", "in", "into", "of", "from", "at", "via",
];

/// Byte offset of the first case-insensitive occurrence of `needle`.
/// Only ASCII is folded, so offsets stay valid for the original string.
fn find_ci(haystack: &str, needle: &str) -> Option<usize> {
    haystack.to_ascii_lowercase().find(needle)
}

fn trim_clause(s: &str) -> &str {
    s.trim().trim_end_matches(['.', ',', ';', '!']).trim()
}

fn strip_fillers(mut s: &str) -> &str {
    loop {
        let Some((first, rest)) = s.split_once(char::is_whitespace) else {
            return s;
        };
        if LEADING_FILLERS.contains(&first.to_ascii_lowercase().as_str()) {
            s = rest.trim_start();
        } else {
            return s;
        }
    }
}

pub fn rule_based_extract(story_text: &str) -> KgComponents {
    let text = story_text.trim();
    let lower = text.to_ascii_lowercase();
    let mut out = KgComponents::default();

    let benefit_at = BENEFIT_MARKERS
        .iter()
        .filter_map(|m| find_ci(text, m).map(|i| (i, m.len())))
        .min();
    let main_end = benefit_at.map_or(text.len(), |(i, _)| i);
    let main = &text[..main_end];

    let persona = PERSONA_MARKERS
        .iter()
        .find(|m| lower.starts_with(**m))
        .and_then(|m| {
            let rest = &main[m.len()..];
            let end = rest
                .find(',')
                .or_else(|| find_ci(rest, " i want"))?;
            Some(trim_clause(&rest[..end]).to_string())
        })
        .filter(|p| !p.is_empty());

    let (action, entity) = match WANT_MARKERS
        .iter()
        .find_map(|m| find_ci(main, m).map(|i| i + m.len()))
    {
        Some(start) => {
            let clause = trim_clause(&main[start..]);
            match clause.split_once(char::is_whitespace) {
                Some((verb, rest)) => {
                    let entity = trim_clause(strip_fillers(rest.trim()));
                    (Some(verb.to_string()), (!entity.is_empty()).then(|| entity.to_string()))
                }
                None if !clause.is_empty() => (Some(clause.to_string()), None),
                None => (None, None),
            }
        }
        None => (None, None),
    };

    let benefit = benefit_at
        .map(|(i, len)| trim_clause(&text[i + len..]).to_string())
        .filter(|b| !b.is_empty());

    let persona = persona.map(|p| NodeRef::new(p, NodeKind::Persona));
    let action = action.map(|a| NodeRef::new(a, NodeKind::Action));
    let entity = entity.map(|e| NodeRef::new(e, NodeKind::Entity));
    for node in [&persona, &action, &entity].into_iter().flatten() {
        out.add_node(node.clone());
    }
    if let Some(b) = benefit {
        out.add_node(NodeRef::new(b, NodeKind::Benefit));
    }
    if let (Some(p), Some(a)) = (&persona, &action) {
        out.add_relationship(p.clone(), a.clone(), RelKind::Triggers);
    }
    if let (Some(a), Some(e)) = (&action, &entity) {
        out.add_relationship(a.clone(), e.clone(), RelKind::Targets);
    }
    out
}
