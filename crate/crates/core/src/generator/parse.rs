//! Lenient parsers for model replies. Each returns `Err(reason)` when the
//! reply should be re-requested.

use serde_json::Value;

/// First JSON object or array in `text`: the whole reply, a fenced block,
/// or the first balanced value embedded in prose.
pub fn extract_json(text: &str) -> Option<Value> {
    let trimmed = text.trim();
    if let Ok(v) = serde_json::from_str::<Value>(trimmed) {
        if v.is_object() || v.is_array() {
            return Some(v);
        }
    }
    let mut rest = trimmed;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        let body_start = after.find('\n').map_or(0, |i| i + 1);
        let Some(end) = after[body_start..].find("```") else {
            break;
        };
        if let Ok(v) = serde_json::from_str::<Value>(after[body_start..body_start + end].trim()) {
            return Some(v);
        }
        rest = &after[body_start + end + 3..];
    }
    for (i, c) in trimmed.char_indices() {
        if c != '{' && c != '[' {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&trimmed[i..]).into_iter::<Value>();
        if let Some(Ok(v)) = stream.next() {
            if v.is_object() || v.is_array() {
                return Some(v);
            }
        }
    }
    None
}

fn as_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.trim().to_string()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, names: &[&str]) -> Option<&'a Value> {
    names.iter().find_map(|n| obj.get(*n))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawExtraction {
    pub entities: Vec<String>,
    pub triples: Vec<(String, String, String)>,
}

pub fn parse_openie(text: &str) -> Result<RawExtraction, String> {
    let value = extract_json(text).ok_or("no JSON object found")?;
    let obj = value.as_object().ok_or("expected a JSON object")?;
    let entities = match field(obj, &["entities", "named_entities"]) {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items.iter().filter_map(as_text).collect(),
        Some(_) => return Err("\"entities\" must be a list".into()),
    };
    let mut triples = Vec::new();
    match field(obj, &["triples", "relations", "triple_list"]) {
        None | Some(Value::Null) => {}
        Some(Value::Array(items)) => {
            for item in items {
                let parts = match item {
                    Value::Array(p) if p.len() == 3 => {
                        (as_text(&p[0]), as_text(&p[1]), as_text(&p[2]))
                    }
                    Value::Object(o) => (
                        field(o, &["head", "subject"]).and_then(as_text),
                        field(o, &["relation", "predicate"]).and_then(as_text),
                        field(o, &["tail", "object"]).and_then(as_text),
                    ),
                    // Malformed entries are dropped rather than failing the document.
                    _ => continue,
                };
                if let (Some(h), Some(r), Some(t)) = parts {
                    triples.push((h, r, t));
                }
            }
        }
        Some(_) => return Err("\"triples\" must be a list".into()),
    }
    Ok(RawExtraction { entities, triples })
}

pub fn parse_entity_list(text: &str) -> Result<Vec<String>, String> {
    let value = extract_json(text).ok_or("no JSON found")?;
    let items = match &value {
        Value::Array(items) => items,
        Value::Object(obj) => match field(obj, &["entities", "named_entities", "key_entities"]) {
            Some(Value::Array(items)) => items,
            _ => return Err("expected an \"entities\" list".into()),
        },
        _ => return Err("expected a JSON object".into()),
    };
    Ok(items.iter().filter_map(as_text).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTrackerOutput {
    pub chain: String,
    /// Path numbers exactly as the model wrote them (1-based).
    pub valid: Vec<i64>,
    pub expand: Vec<i64>,
    pub requirement: String,
    pub continue_flag: bool,
}

fn id_list(v: Option<&Value>) -> Result<Vec<i64>, String> {
    let items = match v {
        None | Some(Value::Null) => return Ok(Vec::new()),
        Some(Value::Array(items)) => items,
        Some(single @ (Value::Number(_) | Value::String(_))) => std::slice::from_ref(single),
        Some(_) => return Err("path ids must be a list".into()),
    };
    let mut out = Vec::new();
    for item in items {
        let id = match item {
            Value::Number(n) => n.as_i64(),
            Value::String(s) => {
                let digits: String = s
                    .trim()
                    .trim_start_matches(['#', '['])
                    .chars()
                    .take_while(|c| c.is_ascii_digit())
                    .collect();
                digits.parse().ok()
            }
            _ => None,
        };
        out.push(id.ok_or_else(|| format!("unreadable path id {item}"))?);
    }
    Ok(out)
}

fn flag(v: &Value) -> Option<bool> {
    match v {
        Value::Bool(b) => Some(*b),
        Value::Number(n) => n.as_i64().map(|x| x != 0),
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" => Some(true),
            "false" | "no" | "0" => Some(false),
            _ => None,
        },
        _ => None,
    }
}

pub fn parse_tracker(text: &str) -> Result<RawTrackerOutput, String> {
    let value = extract_json(text).ok_or("no JSON object found")?;
    let obj = value.as_object().ok_or("expected a JSON object")?;
    let continue_flag = field(obj, &["continue", "continue_flag", "ct"])
        .ok_or("missing \"continue\"")
        .and_then(|v| flag(v).ok_or("\"continue\" must be a boolean"))?;
    let valid_field = field(obj, &["valid", "valid_paths", "valid_path_ids"]);
    if valid_field.is_none() {
        return Err("missing \"valid\"".into());
    }
    Ok(RawTrackerOutput {
        chain: field(obj, &["chain", "reasoning_chain", "current_chain"])
            .and_then(as_text)
            .unwrap_or_default(),
        valid: id_list(valid_field)?,
        expand: id_list(field(obj, &["expand", "expand_paths", "expand_path_ids"]))?,
        requirement: field(
            obj,
            &["requirement", "expansion_requirement", "expansion_req"],
        )
        .and_then(as_text)
        .unwrap_or_default(),
        continue_flag,
    })
}

/// Short answer from a QA reply: the text after the last `Answer:` marker,
/// otherwise the first non-empty line.
pub fn parse_answer(text: &str) -> Result<String, String> {
    let lower = text.to_ascii_lowercase();
    let tail = match lower.rfind("answer:") {
        Some(i) => &text[i + "answer:".len()..],
        None => text,
    };
    let line = tail
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .ok_or("empty answer")?;
    let answer = line.trim_matches(|c: char| c == '"' || c == '*').trim();
    if answer.is_empty() {
        return Err("empty answer".into());
    }
    Ok(answer.to_string())
}
