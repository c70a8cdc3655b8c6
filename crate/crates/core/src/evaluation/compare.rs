//! Element comparison under the strict, inclusive and relaxed modes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::graph::normalize_id;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComparisonMode {
    Strict,
    Inclusive,
    Relaxed,
}

impl ComparisonMode {
    pub const ALL: [ComparisonMode; 3] = [
        ComparisonMode::Strict,
        ComparisonMode::Inclusive,
        ComparisonMode::Relaxed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ComparisonMode::Strict => "strict",
            ComparisonMode::Inclusive => "inclusive",
            ComparisonMode::Relaxed => "relaxed",
        }
    }
}

impl fmt::Display for ComparisonMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ComparisonMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ComparisonMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown comparison mode `{s}`"))
    }
}

/// Bump when [`QUALIFIERS`] changes; relaxed scores depend on it.
pub const QUALIFIER_LIST_VERSION: &str = "1";

/// Leading words the relaxed mode ignores: determiners, quantifiers,
/// possessive pronouns and a few non-restrictive adjectives.
pub const QUALIFIERS: &[&str] = &[
    "a", "an", "the", "all", "any", "some", "each", "every", "no", "my", "our", "your", "his",
    "her", "its", "their", "this", "that", "these", "those", "own", "new", "other", "another",
    "such", "several", "many", "much", "few", "more", "most", "both", "either", "neither",
    "certain", "various", "specific", "additional", "existing", "same", "different", "particular",
];

/// A prediction is either one extracted string or a list of them; a list
/// stands for an annotation the extractor split into parts.
#[derive(Debug, Clone, Copy)]
pub enum Prediction<'a> {
    Single(&'a str),
    List(&'a [String]),
}

impl<'a> From<&'a str> for Prediction<'a> {
    fn from(s: &'a str) -> Self {
        Prediction::Single(s)
    }
}

impl<'a> From<&'a [String]> for Prediction<'a> {
    fn from(s: &'a [String]) -> Self {
        Prediction::List(s)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompareOptions {
    /// Relaxed mode also treats singular and plural forms as equal.
    #[serde(default)]
    pub fold_plurals: bool,
    /// Inclusive mode matches whole tokens only ("page" no longer matches "webpage").
    #[serde(default)]
    pub token_boundary: bool,
}

fn is_possessive(token: &str) -> bool {
    token.len() > 2 && (token.ends_with("'s") || token.ends_with("s'") || token.ends_with("’s"))
}

fn singular(token: &str) -> String {
    if token.len() > 4 && token.ends_with("ies") {
        format!("{}y", &token[..token.len() - 3])
    } else if token.ends_with("sses") || token.ends_with("shes") || token.ends_with("ches") || token.ends_with("xes") {
        token[..token.len() - 2].to_string()
    } else if token.len() > 3 && token.ends_with('s') && !token.ends_with("ss") && !token.ends_with("us") {
        token[..token.len() - 1].to_string()
    } else {
        token.to_string()
    }
}

/// Drop leading qualifier and possessive tokens, always keeping the last token.
pub fn strip_qualifiers(s: &str) -> String {
    let norm = normalize_id(s);
    let tokens: Vec<&str> = norm.split(' ').collect();
    let skip = tokens
        .iter()
        .take(tokens.len().saturating_sub(1))
        .take_while(|t| QUALIFIERS.contains(t) || is_possessive(t))
        .count();
    tokens[skip..].join(" ")
}

fn contains_tokens(haystack: &str, needle: &str) -> bool {
    let h: Vec<&str> = haystack.split(' ').collect();
    let n: Vec<&str> = needle.split(' ').collect();
    h.windows(n.len()).any(|w| w == n.as_slice())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Comparator {
    pub options: CompareOptions,
}

impl Comparator {
    pub fn new(options: CompareOptions) -> Self {
        Self { options }
    }

    fn relaxed_form(&self, s: &str) -> String {
        let stripped = strip_qualifiers(s);
        if self.options.fold_plurals {
            stripped.split(' ').map(singular).collect::<Vec<_>>().join(" ")
        } else {
            stripped
        }
    }

    /// Compare a ground-truth element with one predicted string.
    pub fn matches(&self, gt: &str, pred: &str, mode: ComparisonMode) -> bool {
        match mode {
            ComparisonMode::Strict => normalize_id(gt) == normalize_id(pred),
            ComparisonMode::Inclusive => {
                let (g, p) = (normalize_id(gt), normalize_id(pred));
                if g.is_empty() {
                    return p.is_empty();
                }
                if self.options.token_boundary {
                    contains_tokens(&p, &g)
                } else {
                    p.contains(&g)
                }
            }
            ComparisonMode::Relaxed => self.relaxed_form(gt) == self.relaxed_form(pred),
        }
    }

    pub fn compare(&self, gt: &str, pred: Prediction<'_>, mode: ComparisonMode) -> bool {
        match pred {
            Prediction::Single(p) => self.matches(gt, p, mode),
            Prediction::List(items) => match mode {
                ComparisonMode::Inclusive => items.iter().any(|p| self.matches(gt, p, mode)),
                ComparisonMode::Strict | ComparisonMode::Relaxed => false,
            },
        }
    }
}

/// [`Comparator::compare`] with default options.
pub fn compare_element<'a>(gt: &str, pred: impl Into<Prediction<'a>>, mode: ComparisonMode) -> bool {
    Comparator::default().compare(gt, pred.into(), mode)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qualifier_stripping() {
        assert_eq!(strip_qualifiers("all webpages"), "webpages");
        assert_eq!(strip_qualifiers("user's webpage"), "webpage");
        assert_eq!(strip_qualifiers("the new files"), "files");
        assert_eq!(strip_qualifiers("all"), "all");
        assert_eq!(strip_qualifiers("published FABS files"), "published fabs files");
    }

    #[test]
    fn plural_folding_is_opt_in() {
        let folding = Comparator::new(CompareOptions {
            fold_plurals: true,
            ..Default::default()
        });
        assert!(!compare_element("webpage", "webpages", ComparisonMode::Relaxed));
        assert!(folding.matches("webpage", "webpages", ComparisonMode::Relaxed));
        assert!(folding.matches("all categories", "category", ComparisonMode::Relaxed));
        assert!(folding.matches("boxes", "box", ComparisonMode::Relaxed));
        assert!(!folding.matches("status", "statu", ComparisonMode::Relaxed));
    }

    #[test]
    fn token_boundary_inclusive_is_opt_in() {
        let tb = Comparator::new(CompareOptions {
            token_boundary: true,
            ..Default::default()
        });
        assert!(compare_element("page", "webpage", ComparisonMode::Inclusive));
        assert!(!tb.matches("page", "webpage", ComparisonMode::Inclusive));
        assert!(tb.matches("page", "home page", ComparisonMode::Inclusive));
    }

    #[test]
    fn inclusive_list_matches_single_containing_element() {
        let list = vec!["user".to_string(), "user webpage".to_string()];
        assert!(compare_element("webpage", list.as_slice(), ComparisonMode::Inclusive));
        assert!(!compare_element("webpage", list.as_slice(), ComparisonMode::Strict));
    }

    #[test]
    fn modes_parse() {
        assert_eq!("Relaxed".parse::<ComparisonMode>().unwrap(), ComparisonMode::Relaxed);
        assert!("fuzzy".parse::<ComparisonMode>().is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn strict_implies_inclusive_and_relaxed(gt in "[a-zA-Z' ]{1,20}", pred in "[a-zA-Z' ]{0,20}") {
                for pred in [pred.clone(), gt.to_uppercase(), format!(" {gt} ")] {
                    if compare_element(&gt, pred.as_str(), ComparisonMode::Strict) {
                        prop_assert!(compare_element(&gt, pred.as_str(), ComparisonMode::Inclusive));
                        prop_assert!(compare_element(&gt, pred.as_str(), ComparisonMode::Relaxed));
                    }
                }
            }

            #[test]
            fn every_mode_is_reflexive(s in "[a-zA-Z' ]{1,20}") {
                prop_assume!(!s.trim().is_empty());
                for mode in ComparisonMode::ALL {
                    prop_assert!(compare_element(&s, s.as_str(), mode));
                }
            }
        }
    }
}
