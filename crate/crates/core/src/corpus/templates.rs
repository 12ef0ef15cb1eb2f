use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const PLACEHOLDER: &str = "{OBJECT}";

/// Caption templates drawn from during corpus construction.
pub const DEFAULT_TEMPLATES: [&str; 3] = ["a photo of a {OBJECT}", "this is a {OBJECT}", "a 3d model of a {OBJECT}"];

/// Template used to build zero-shot class banks and scene queries.
pub const ZERO_SHOT_TEMPLATE: &str = "This is a {OBJECT}";

/// A caption pattern with exactly one `{OBJECT}` placeholder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CaptionTemplate {
    pattern: String,
}

impl CaptionTemplate {
    pub fn new(pattern: impl Into<String>) -> Result<Self> {
        let pattern = pattern.into();
        match pattern.matches(PLACEHOLDER).count() {
            1 => Ok(Self { pattern }),
            n => Err(Error::Template(format!(
                "`{pattern}` has {n} {PLACEHOLDER} placeholders, expected exactly one"
            ))),
        }
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    /// Substitutes the class name and lowercases the result.
    pub fn render(&self, class_name: &str) -> String {
        self.pattern.replace(PLACEHOLDER, class_name).to_lowercase()
    }

    pub fn defaults() -> Vec<Self> {
        DEFAULT_TEMPLATES.iter().map(|t| Self::new(*t).expect("valid default")).collect()
    }
}

impl FromStr for CaptionTemplate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::new(s)
    }
}

impl TryFrom<String> for CaptionTemplate {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Self::new(s)
    }
}

impl From<CaptionTemplate> for String {
    fn from(t: CaptionTemplate) -> String {
        t.pattern
    }
}

pub fn render_caption(template: &str, class_name: &str) -> Result<String> {
    Ok(CaptionTemplate::new(template)?.render(class_name))
}
