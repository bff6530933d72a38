//! Prompt templates with `{{name}}` placeholders.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CallKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    #[default]
    ZeroShot,
    OneShot,
}

impl std::str::FromStr for PromptMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "zero_shot" => Ok(PromptMode::ZeroShot),
            "one_shot" => Ok(PromptMode::OneShot),
            other => Err(Error::Config(format!(
                "prompt mode must be zero_shot or one_shot, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
    pub mode: PromptMode,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>, mode: PromptMode) -> Self {
        PromptTemplate {
            name: name.into(),
            body: body.into(),
            mode,
        }
    }

    pub fn placeholders(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut rest = self.body.as_str();
        while let Some(start) = rest.find("{{") {
            let after = &rest[start + 2..];
            match after.find("}}") {
                Some(end) => {
                    let name = &after[..end];
                    if is_placeholder_name(name) {
                        out.insert(name.to_string());
                    }
                    rest = &after[end + 2..];
                }
                None => break,
            }
        }
        out
    }

    /// Substitutes every placeholder. Supplying a variable the body does not
    /// reference, or leaving a placeholder unfilled, is an error.
    pub fn render(&self, vars: &[(&str, &str)]) -> Result<String> {
        let wanted = self.placeholders();
        for (name, _) in vars {
            if !wanted.contains(*name) {
                return Err(self.error(format!("no placeholder named {name:?}")));
            }
        }
        let mut out = self.body.clone();
        for name in &wanted {
            let value = vars
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| self.error(format!("placeholder {name:?} was not supplied")))?;
            out = out.replace(&format!("{{{{{name}}}}}"), value);
        }
        Ok(out)
    }

    fn error(&self, message: String) -> Error {
        Error::Template {
            name: self.name.clone(),
            message,
        }
    }
}

fn is_placeholder_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_lowercase() || c == '_')
}

/// The five prompts the engine issues, one file each in a templates
/// directory: `openie.txt`, `query_entities.txt`, `path_tracking.txt`,
/// `path_tracking_oneshot.txt` and `qa.txt`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub openie: PromptTemplate,
    pub query_entities: PromptTemplate,
    pub path_tracking: PromptTemplate,
    pub path_tracking_oneshot: PromptTemplate,
    pub qa: PromptTemplate,
}

const REQUIRED: &[(&str, &[&str])] = &[
    ("openie", &["text", "title"]),
    ("query_entities", &["question"]),
    (
        "path_tracking",
        &["candidates", "history_chain", "question"],
    ),
    (
        "path_tracking_oneshot",
        &["candidates", "history_chain", "question"],
    ),
    ("qa", &["contexts", "question"]),
];

impl Templates {
    pub fn builtin() -> Self {
        let zs = PromptMode::ZeroShot;
        Templates {
            openie: PromptTemplate::new("openie", include_str!("../../templates/openie.txt"), zs),
            query_entities: PromptTemplate::new(
                "query_entities",
                include_str!("../../templates/query_entities.txt"),
                zs,
            ),
            path_tracking: PromptTemplate::new(
                "path_tracking",
                include_str!("../../templates/path_tracking.txt"),
                zs,
            ),
            path_tracking_oneshot: PromptTemplate::new(
                "path_tracking_oneshot",
                include_str!("../../templates/path_tracking_oneshot.txt"),
                PromptMode::OneShot,
            ),
            qa: PromptTemplate::new("qa", include_str!("../../templates/qa.txt"), zs),
        }
    }

    /// Built-in templates overridden by whichever files exist in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut t = Templates::builtin();
        for slot in [
            &mut t.openie,
            &mut t.query_entities,
            &mut t.path_tracking,
            &mut t.path_tracking_oneshot,
            &mut t.qa,
        ] {
            let path = dir.join(format!("{}.txt", slot.name));
            if path.exists() {
                slot.body = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            }
        }
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, needed) in REQUIRED {
            let template = self.by_name(name);
            let have = template.placeholders();
            let want: BTreeSet<String> = needed.iter().map(|s| s.to_string()).collect();
            if have != want {
                return Err(Error::Template {
                    name: name.to_string(),
                    message: format!("expected placeholders {want:?}, found {have:?}"),
                });
            }
        }
        Ok(())
    }

    fn by_name(&self, name: &str) -> &PromptTemplate {
        match name {
            "openie" => &self.openie,
            "query_entities" => &self.query_entities,
            "path_tracking" => &self.path_tracking,
            "path_tracking_oneshot" => &self.path_tracking_oneshot,
            _ => &self.qa,
        }
    }

    pub fn for_call(&self, kind: CallKind, mode: PromptMode) -> &PromptTemplate {
        match (kind, mode) {
            (CallKind::Openie, _) => &self.openie,
            (CallKind::QueryEntities, _) => &self.query_entities,
            (CallKind::PathTracking, PromptMode::ZeroShot) => &self.path_tracking,
            (CallKind::PathTracking, PromptMode::OneShot) => &self.path_tracking_oneshot,
            (CallKind::Qa, _) => &self.qa,
        }
    }
}
