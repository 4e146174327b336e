use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Instruction text for a vision-language proposer adapter.
pub const AMODAL_SELECTION_PROMPT: &str = include_str!("../../assets/amodal_selection_prompt.txt");

/// Instruction text for an instruction-guided removal adapter; `{OBJ_NAME}`
/// is substituted with the object label.
pub const INPAINT_PROMPT: &str = include_str!("../../assets/inpaint_prompt.txt");

/// The next object to remove, plus anything resting on it that has to go
/// first. An empty `visible_object` means the scene is exhausted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectProposal {
    pub visible_object: String,
    pub secondary_objects: Vec<String>,
    pub description: String,
}

impl ObjectProposal {
    pub fn single(label: impl Into<String>) -> Self {
        Self {
            visible_object: label.into(),
            ..Self::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.visible_object.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() && !self.secondary_objects.is_empty() {
            return Err(Error::InvalidArgument("secondary objects without a visible object".into()));
        }
        if self.secondary_objects.iter().any(|s| s.trim().is_empty()) {
            return Err(Error::InvalidArgument("blank secondary object label".into()));
        }
        Ok(())
    }

    /// Parse the one-line reply format
    /// `{VISIBLE_OBJECT: [x]}, {SECONDARY_OBJECTS: [a, b]}`. Any text outside
    /// the two fields becomes the description.
    pub fn parse(text: &str) -> Result<Self> {
        let (visible, rest_a) = field(text, "VISIBLE_OBJECT")?;
        let (secondary, rest_b) = field(text, "SECONDARY_OBJECTS")?;
        let mut labels = visible.into_iter();
        let visible_object = labels.next().unwrap_or_default();
        if labels.next().is_some() {
            return Err(Error::InvalidArgument("more than one visible object".into()));
        }
        let mut description = text.to_string();
        for span in [rest_a, rest_b] {
            description = description.replacen(span, "", 1);
        }
        let description = description
            .trim_matches(|c: char| c.is_whitespace() || c == ',')
            .to_string();
        let p = Self {
            visible_object,
            secondary_objects: secondary,
            description,
        };
        p.validate()?;
        Ok(p)
    }

    /// Inverse of [`ObjectProposal::parse`], without the description.
    pub fn to_reply(&self) -> String {
        format!(
            "{{VISIBLE_OBJECT: [{}]}}, {{SECONDARY_OBJECTS: [{}]}}",
            self.visible_object,
            self.secondary_objects.join(", ")
        )
    }
}

/// Labels inside `{KEY: [...]}` and the matched span.
fn field<'a>(text: &'a str, key: &str) -> Result<(Vec<String>, &'a str)> {
    let missing = || Error::InvalidArgument(format!("proposal reply lacks {key}"));
    let start = text.find(&format!("{{{key}")).ok_or_else(missing)?;
    let tail = &text[start..];
    let end = tail.find('}').ok_or_else(missing)?;
    let span = &tail[..=end];
    let open = span.find('[').ok_or_else(missing)?;
    let close = span.rfind(']').filter(|c| *c > open).ok_or_else(missing)?;
    let labels = span[open + 1..close]
        .split(',')
        .map(|s| s.trim().trim_matches('"').to_string())
        .filter(|s| !s.is_empty())
        .collect();
    Ok((labels, span))
}
