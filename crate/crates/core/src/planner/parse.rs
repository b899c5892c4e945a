use serde_json::{Map, Value};
use thiserror::Error;

use super::action::{canonicalize_action_type, ActionItem, ActionPlan};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanParseError {
    #[error("no JSON object found in planner output")]
    NoJsonObject,
    #[error("plan has no \"actions\" field")]
    MissingActions,
    #[error("plan \"actions\" is not a list")]
    ActionsNotList,
}

/// Side facts about a parse that belong in telemetry.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseNotes {
    pub confidence_imputed: bool,
    pub dropped_actions: usize,
}

/// Parses raw planner output into a plan with `draft_index` 0.
///
/// The first JSON object in `raw` is used, whether bare, fenced in a code
/// block, or embedded in prose. Actions without usable details are dropped.
pub fn parse_plan(
    raw: &str,
    episode_id: &str,
    backend_id: &str,
    confidence_default: f64,
) -> Result<(ActionPlan, ParseNotes), PlanParseError> {
    let obj = extract_json_object(raw).ok_or(PlanParseError::NoJsonObject)?;
    let actions = match obj.get("actions") {
        None | Some(Value::Null) => return Err(PlanParseError::MissingActions),
        Some(Value::Array(items)) => items,
        Some(_) => return Err(PlanParseError::ActionsNotList),
    };
    let mut notes = ParseNotes::default();
    let mut items = Vec::with_capacity(actions.len());
    for a in actions {
        match parse_action(a) {
            Some(item) => items.push(item),
            None => notes.dropped_actions += 1,
        }
    }
    let confidence = match obj.get("confidence").and_then(as_number) {
        Some(c) => c.clamp(0.0, 1.0),
        None => {
            notes.confidence_imputed = true;
            confidence_default.clamp(0.0, 1.0)
        }
    };
    let plan = ActionPlan {
        actions: items,
        confidence,
        draft_index: 0,
        backend_id: backend_id.to_string(),
        episode_id: episode_id.to_string(),
    };
    Ok((plan, notes))
}

fn as_number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
    .filter(|x: &f64| x.is_finite())
}

fn parse_action(v: &Value) -> Option<ActionItem> {
    let obj = v.as_object()?;
    let field = |keys: &[&str]| keys.iter().find_map(|k| obj.get(*k).and_then(Value::as_str));
    let label = field(&["type", "action_type", "category"]).unwrap_or_default();
    let details = field(&["details", "description", "action"])?;
    if details.trim().is_empty() {
        return None;
    }
    let deadline_hours = obj.get("deadline_hours").and_then(as_number).unwrap_or(0.0).max(0.0);
    Some(ActionItem {
        action_type: canonicalize_action_type(label),
        raw_type_label: label.to_string(),
        details: details.to_string(),
        deadline_hours,
    })
}

/// Finds the first parseable JSON object: fenced blocks first, then any `{`.
pub fn extract_json_object(raw: &str) -> Option<Map<String, Value>> {
    fenced_blocks(raw)
        .into_iter()
        .chain(std::iter::once(raw))
        .find_map(first_object_in)
}

fn fenced_blocks(raw: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = raw;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        // Skip an info string such as `json` up to the first newline or brace.
        let body_start = after.find(['\n', '{']).unwrap_or(after.len());
        let body = &after[body_start..];
        // A closing fence starts a line; backticks inside JSON strings never do.
        match body.find("\n```") {
            Some(end) => {
                out.push(&body[..end]);
                rest = &body[end + 4..];
            }
            None => break,
        }
    }
    out
}

fn first_object_in(text: &str) -> Option<Map<String, Value>> {
    let bytes = text.as_bytes();
    let mut from = 0;
    while let Some(off) = text[from..].find('{') {
        let start = from + off;
        if let Some(end) = matching_brace(bytes, start) {
            if let Ok(Value::Object(map)) = serde_json::from_str(&text[start..=end]) {
                return Some(map);
            }
        }
        from = start + 1;
    }
    None
}

/// Index of the brace closing the one at `start`, skipping string contents.
fn matching_brace(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::super::action::ActionType;
    use super::*;

    const FOUR: &str = r#"{"actions":[
        {"type":"Follow-up","details":"PCP visit","deadline_hours":168},
        {"type":"Medication Reconciliation","details":"Review metformin","deadline_hours":24},
        {"type":"Patient Education","details":"Teach-back on diet","deadline_hours":24},
        {"type":"Symptom Monitoring","details":"Watch for fever","deadline_hours":72}],
        "confidence":0.9}"#;

    #[test]
    fn plain_plan() {
        let (plan, notes) = parse_plan(FOUR, "e1", "b", 0.5).unwrap();
        assert_eq!(plan.actions.len(), 4);
        assert_eq!(plan.confidence, 0.9);
        assert_eq!(plan.actions[0].action_type, ActionType::FollowUp);
        assert_eq!(plan.actions[0].deadline_hours, 168.0);
        assert_eq!(notes, ParseNotes::default());
    }

    #[test]
    fn confidence_clamped_and_imputed() {
        let (p, _) = parse_plan(r#"{"actions":[],"confidence":1.7}"#, "e", "b", 0.5).unwrap();
        assert_eq!(p.confidence, 1.0);
        let (p, _) = parse_plan(r#"{"actions":[],"confidence":-2}"#, "e", "b", 0.5).unwrap();
        assert_eq!(p.confidence, 0.0);
        let (p, n) = parse_plan(r#"{"actions":[]}"#, "e", "b", 0.5).unwrap();
        assert_eq!(p.confidence, 0.5);
        assert!(n.confidence_imputed);
        let (p, n) = parse_plan(r#"{"actions":[],"confidence":"0.75"}"#, "e", "b", 0.5).unwrap();
        assert_eq!(p.confidence, 0.75);
        assert!(!n.confidence_imputed);
    }

    #[test]
    fn extraction_from_prose_and_fences() {
        let fenced = format!("Here is the plan:\n```json\n{FOUR}\n```\nLet me know.");
        assert_eq!(parse_plan(&fenced, "e", "b", 0.5).unwrap().0.actions.len(), 4);

        let inline = format!("Here is the plan:\n```json {FOUR} ```");
        assert_eq!(parse_plan(&inline, "e", "b", 0.5).unwrap().0.actions.len(), 4);

        let prose = format!("Sure! {{not json}} The plan {FOUR} and that's it.");
        assert_eq!(parse_plan(&prose, "e", "b", 0.5).unwrap().0.actions.len(), 4);

        let braces_in_strings = r#"x {"actions":[{"type":"other","details":"use } and { freely"}],"confidence":0.2} y"#;
        let (p, _) = parse_plan(braces_in_strings, "e", "b", 0.5).unwrap();
        assert_eq!(p.actions[0].details, "use } and { freely");
    }

    #[test]
    fn backticks_inside_strings_do_not_close_a_fence() {
        let raw = "```json\n{\"actions\":[{\"action_type\":\"follow_up\",\"details\":\"0\",\"deadline_hours\":0},{\"action_type\":\"follow_up\",\"details\":\"```\",\"deadline_hours\":0}],\"confidence\":0}\n```";
        let (plan, _) = parse_plan(raw, "e", "b", 0.5).unwrap();
        assert_eq!(plan.actions.len(), 2);
        assert_eq!(plan.actions[1].details, "```");
    }

    #[test]
    fn parse_errors() {
        assert_eq!(parse_plan("no json here", "e", "b", 0.5).unwrap_err(), PlanParseError::NoJsonObject);
        assert_eq!(parse_plan(r#"{"confidence":0.9}"#, "e", "b", 0.5).unwrap_err(), PlanParseError::MissingActions);
        assert_eq!(parse_plan(r#"{"actions":"x"}"#, "e", "b", 0.5).unwrap_err(), PlanParseError::ActionsNotList);
    }

    #[test]
    fn malformed_actions_are_dropped() {
        let raw = r#"{"actions":[{"type":"education"},{"type":"meds","details":"  "},3,{"type":"meds","details":"ok","deadline_hours":-4}],"confidence":0.4}"#;
        let (p, n) = parse_plan(raw, "e", "b", 0.5).unwrap();
        assert_eq!(n.dropped_actions, 3);
        assert_eq!(p.actions.len(), 1);
        assert_eq!(p.actions[0].deadline_hours, 0.0);
    }
}
