use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::transport::{ChatMessage, ChatRequest, TaskHint};
use crate::error::{Error, Result};

fn default_temperature() -> f64 {
    0.4
}
fn default_top_p() -> f64 {
    0.5
}
fn default_max_tokens() -> u32 {
    512
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodingParams {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self { temperature: default_temperature(), top_p: default_top_p(), max_tokens: default_max_tokens() }
    }
}

impl DecodingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature <= 2.0) {
            return Err(Error::Config(format!("augment.temperature = {} outside [0, 2]", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("augment.top_p = {} outside (0, 1]", self.top_p)));
        }
        if self.max_tokens == 0 {
            return Err(Error::Config("augment.max_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// Prompt text with `{{name}}` placeholders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub system: String,
    pub text: String,
    pub decoding: DecodingParams,
}

impl PromptTemplate {
    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut rest = self.text.as_str();
        while let Some(start) = rest.find("{{") {
            let after = &rest[start + 2..];
            let Some(end) = after.find("}}") else { break };
            let name = after[..end].trim().to_string();
            if !out.contains(&name) {
                out.push(name);
            }
            rest = &after[end + 2..];
        }
        out
    }

    /// Substitutes every placeholder; an unbound one is an error.
    pub fn render(&self, bindings: &BTreeMap<&str, String>) -> Result<String> {
        let mut out = String::with_capacity(self.text.len());
        let mut rest = self.text.as_str();
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let end = after
                .find("}}")
                .ok_or_else(|| Error::Augmentation(format!("template {} has an unterminated placeholder", self.name)))?;
            let name = after[..end].trim();
            let value = bindings
                .get(name)
                .ok_or_else(|| Error::Augmentation(format!("placeholder {name} unbound in template {}", self.name)))?;
            out.push_str(value);
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }

    /// Rendered chat request for `model`.
    pub fn request(&self, model: &str, bindings: &BTreeMap<&str, String>, task: TaskHint) -> Result<ChatRequest> {
        Ok(ChatRequest {
            model: model.to_string(),
            messages: vec![ChatMessage::system(&self.system), ChatMessage::user(self.render(bindings)?)],
            temperature: self.decoding.temperature,
            top_p: self.decoding.top_p,
            max_tokens: self.decoding.max_tokens,
            task: Some(task),
        })
    }

    pub fn item(decoding: DecodingParams) -> Self {
        Self {
            name: "item".into(),
            system: "You enrich catalog metadata for a recommender system. Reply with one JSON object and nothing else."
                .into(),
            text: "Domain: {{domain}}\nItem: {{title}}\n\
                   Describe this item. Return JSON with keys \"genres\", \"themes\" and \"keywords\" \
                   (arrays of short lowercase phrases) and \"category\" (one short lowercase phrase)."
                .into(),
            decoding,
        }
    }

    pub fn user(decoding: DecodingParams) -> Self {
        Self {
            name: "user".into(),
            system: "You infer user profiles from interaction histories. Reply with one JSON object and nothing else."
                .into(),
            text: "Interaction history, oldest first, with item descriptions:\n{{history}}\n\
                   Infer the user's profile. Return JSON with keys \"age_bracket\" (one of {{age_brackets}}), \
                   \"gender\" (one of {{genders}}) and \"preference_summary\" (up to three of {{preference_tags}})."
                .into(),
            decoding,
        }
    }

    pub fn sequence(decoding: DecodingParams) -> Self {
        Self {
            name: "sequence".into(),
            system: "You predict which items a user will interact with next. Reply with one JSON object and nothing else."
                .into(),
            text: "User profile: {{profile}}\nInteraction history, oldest first:\n{{history}}\n\
                   Candidate ids in domain A: {{candidates_a}}\nCandidate ids in domain B: {{candidates_b}}\n\
                   Choose candidates the user would likely interact with and candidates they would not. \
                   Return JSON with keys \"positives_a\", \"negatives_a\", \"positives_b\", \"negatives_b\" \
                   (arrays of candidate ids; an id may appear in at most one array)."
                .into(),
            decoding,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_placeholder_must_be_bound() {
        let t = PromptTemplate::item(DecodingParams::default());
        assert_eq!(t.placeholders(), vec!["domain", "title"]);
        let mut b = BTreeMap::new();
        b.insert("domain", "books".to_string());
        assert!(t.render(&b).is_err());
        b.insert("title", "Dune".to_string());
        let text = t.render(&b).unwrap();
        assert!(text.contains("Item: Dune") && !text.contains("{{"));
    }

    #[test]
    fn decoding_defaults() {
        let d = DecodingParams::default();
        assert_eq!(d.temperature, 0.4);
        assert!((0.3..=0.6).contains(&d.top_p));
        assert!(DecodingParams { top_p: 0.0, ..d }.validate().is_err());
    }
}
