//! Versioned prompt catalog. The texts under `assets/prompts/` are loaded
//! verbatim; any edit to them must bump [`PROMPT_CATALOG_VERSION`].

use serde::{Deserialize, Serialize};

use super::ExtractionRecord;

pub const PROMPT_CATALOG_VERSION: &str = "1.0.0";

pub const INPUT_PLACEHOLDER: &str = "{input}";

const MAIN_SYSTEM: &str = include_str!("../../assets/prompts/main_system.txt");
const BENEFIT_SYSTEM: &str = include_str!("../../assets/prompts/benefit_system.txt");
const HUMAN: &str = include_str!("../../assets/prompts/human.txt");
const OUTPUT_FORMAT: &str = include_str!("../../assets/prompts/output_format.txt");
const FEW_SHOT: &str = include_str!("../../assets/prompts/few_shot_records.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    #[serde(rename = "human")]
    Human,
}

impl Role {
    /// Role name on the chat-completions wire.
    pub fn wire_name(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::Human => "user",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("template has no {{input}} placeholder")]
    MissingPlaceholder,
    #[error("template has {0} {{input}} placeholders, expected exactly one")]
    ExtraPlaceholders(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub segments: Vec<(Role, String)>,
}

impl PromptTemplate {
    pub fn new(segments: Vec<(Role, String)>) -> Result<Self, TemplateError> {
        let t = Self { segments };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        let n: usize = self
            .segments
            .iter()
            .map(|(_, text)| text.matches(INPUT_PLACEHOLDER).count())
            .sum();
        match n {
            0 => Err(TemplateError::MissingPlaceholder),
            1 => Ok(()),
            n => Err(TemplateError::ExtraPlaceholders(n)),
        }
    }

    /// Substitute the story into the placeholder, keeping segment order and roles.
    pub fn render(&self, story_text: &str) -> Result<Vec<ChatMessage>, TemplateError> {
        self.validate()?;
        Ok(self
            .segments
            .iter()
            .map(|(role, text)| ChatMessage {
                role: *role,
                content: text.replacen(INPUT_PLACEHOLDER, story_text, 1),
            })
            .collect())
    }
}

#[derive(Debug, Deserialize)]
struct FewShotEntry {
    #[allow(dead_code)]
    origin: String,
    record: ExtractionRecord,
}

/// The five output examples shown to models without function calling.
pub fn few_shot_records() -> Vec<ExtractionRecord> {
    let entries: Vec<FewShotEntry> =
        serde_json::from_str(FEW_SHOT).expect("bundled few-shot records are valid JSON");
    entries.into_iter().map(|e| e.record).collect()
}

#[derive(Debug, Clone)]
pub struct PromptCatalog {
    /// Main prompt for models with function calling.
    pub main: PromptTemplate,
    /// Main prompt plus output-format instructions and few-shot records.
    pub main_few_shot: PromptTemplate,
    pub benefit: PromptTemplate,
}

impl PromptCatalog {
    pub fn builtin() -> Self {
        let human = (Role::Human, HUMAN.to_string());
        let examples = serde_json::to_string_pretty(&few_shot_records())
            .expect("records always serialize");
        PromptCatalog {
            main: PromptTemplate {
                segments: vec![(Role::System, MAIN_SYSTEM.to_string()), human.clone()],
            },
            main_few_shot: PromptTemplate {
                segments: vec![
                    (Role::System, MAIN_SYSTEM.to_string()),
                    (Role::System, format!("{OUTPUT_FORMAT}{examples}\n")),
                    human.clone(),
                ],
            },
            benefit: PromptTemplate {
                segments: vec![(Role::System, BENEFIT_SYSTEM.to_string()), human],
            },
        }
    }

    pub fn main_for(&self, supports_function_calls: bool) -> &PromptTemplate {
        if supports_function_calls {
            &self.main
        } else {
            &self.main_few_shot
        }
    }
}

impl Default for PromptCatalog {
    fn default() -> Self {
        Self::builtin()
    }
}
