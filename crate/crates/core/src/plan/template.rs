//! Rule-based planner: query patterns with named slots mapped to plan skeletons.
//!
//! ```text
//! pattern: "publications by {inst} authors on {field}"
//! plan:    "Institution<{inst}> -> Author -> Paper ; Field-of-Study<{field}> -> Paper"
//! ```
//!
//! Patterns match case-insensitively anywhere in the query but must run to
//! its end (trailing punctuation aside), so the last slot captures the rest
//! of the query. The first matching rule wins.

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{escape, parse_plan, PlanOutcome};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateRule {
    pub pattern: String,
    pub plan: String,
}

impl TemplateRule {
    pub fn new(pattern: impl Into<String>, plan: impl Into<String>) -> Self {
        Self {
            pattern: pattern.into(),
            plan: plan.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("rule {index}: {message}")]
    BadRule { index: usize, message: String },
}

#[derive(Debug, Clone)]
struct CompiledRule {
    regex: Regex,
    slots: Vec<String>,
    plan: String,
}

#[derive(Debug, Clone, Default)]
pub struct TemplatePlanner {
    rules: Vec<CompiledRule>,
}

fn slot_names(text: &str) -> Result<Vec<(usize, usize, String)>, String> {
    let mut out = Vec::new();
    let mut rest = text;
    let mut offset = 0;
    while let Some(open) = rest.find('{') {
        let close = rest[open..].find('}').ok_or("unclosed slot")? + open;
        let name = &rest[open + 1..close];
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(format!("bad slot name {{{name}}}"));
        }
        out.push((offset + open, offset + close + 1, name.to_string()));
        offset += close + 1;
        rest = &rest[close + 1..];
    }
    Ok(out)
}

fn compile(rule: &TemplateRule) -> Result<CompiledRule, String> {
    let slots = slot_names(&rule.pattern)?;
    let mut regex = String::from("(?is)");
    let mut last = 0;
    let mut names = Vec::new();
    for (start, end, name) in &slots {
        if names.contains(name) {
            return Err(format!("slot {{{name}}} used twice"));
        }
        regex.push_str(&literal(&rule.pattern[last..*start]));
        regex.push_str(&format!("(?P<{name}>.+?)"));
        names.push(name.clone());
        last = *end;
    }
    regex.push_str(&literal(&rule.pattern[last..]));
    regex.push_str(r"[\s[:punct:]]*$");
    for (_, _, name) in slot_names(&rule.plan)? {
        if !names.contains(&name) {
            return Err(format!("plan uses unknown slot {{{name}}}"));
        }
    }
    Ok(CompiledRule {
        regex: Regex::new(&regex).map_err(|e| e.to_string())?,
        slots: names,
        plan: rule.plan.clone(),
    })
}

// Runs of whitespace in a pattern match any whitespace run in the query.
fn literal(text: &str) -> String {
    text.split_whitespace()
        .map(regex::escape)
        .collect::<Vec<_>>()
        .join(r"\s+")
        + if text.ends_with(char::is_whitespace) && !text.trim().is_empty() {
            r"\s+"
        } else {
            ""
        }
}

impl TemplatePlanner {
    pub fn new(rules: &[TemplateRule]) -> Result<Self, TemplateError> {
        let rules = rules
            .iter()
            .enumerate()
            .map(|(index, r)| compile(r).map_err(|message| TemplateError::BadRule { index, message }))
            .collect::<Result<_, _>>()?;
        Ok(Self { rules })
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn plan(&self, query: &str) -> PlanOutcome {
        for rule in &self.rules {
            let Some(caps) = rule.regex.captures(query) else {
                continue;
            };
            let mut text = rule.plan.clone();
            for slot in &rule.slots {
                let value = caps.name(slot).map(|m| m.as_str().trim()).unwrap_or_default();
                text = text.replace(&format!("{{{slot}}}"), &escape(value));
            }
            return parse_plan(&text);
        }
        PlanOutcome::invalid("no matching template")
    }
}

/// One-shot form of [`TemplatePlanner::plan`]. Malformed rules make the outcome invalid.
pub fn plan_template(query: &str, rules: &[TemplateRule]) -> PlanOutcome {
    match TemplatePlanner::new(rules) {
        Ok(p) => p.plan(query),
        Err(e) => PlanOutcome::invalid(e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::F1_QUERY;
    use crate::plan::serialize_plan;

    fn f1_rule() -> TemplateRule {
        TemplateRule::new(
            "publications by {inst} authors on {field}",
            "Institution<{inst}> -> Author -> Paper ; Field-of-Study<{field}> -> Paper",
        )
    }

    #[test]
    fn instantiates_two_path_plan() {
        let out = plan_template(F1_QUERY, &[f1_rule()]);
        let g = out.plan().expect("valid");
        assert_eq!(
            serialize_plan(g),
            "Field-of-Study<stellar populations in tidal tails> -> Paper ; \
             Institution<Point Park University> -> Author -> Paper"
        );
    }

    #[test]
    fn trailing_punctuation_is_ignored() {
        let out = plan_template("Publications by MIT authors on graphs?", &[f1_rule()]);
        let g = out.plan().unwrap();
        assert_eq!(g.paths()[0].nodes()[0].restriction(), Some("graphs"));
    }

    #[test]
    fn empty_rules_and_no_match() {
        assert_eq!(plan_template(F1_QUERY, &[]).reason(), Some("no matching template"));
        let other = TemplateRule::new("products of brand {b}", "Brand<{b}> -> Product");
        assert_eq!(plan_template(F1_QUERY, &[other]).reason(), Some("no matching template"));
    }

    #[test]
    fn first_rule_wins() {
        let generic = TemplateRule::new("publications by {who}", "Author<{who}> -> Paper");
        let out = plan_template(F1_QUERY, &[generic.clone(), f1_rule()]);
        assert_eq!(out.plan().unwrap().paths()[0].nodes()[0].category(), "Author");
        let out = plan_template(F1_QUERY, &[f1_rule(), generic]);
        assert_eq!(out.plan().unwrap().paths().len(), 2);
    }

    #[test]
    fn captured_text_is_escaped() {
        let rule = TemplateRule::new("papers on {t}", "Paper<{t}>");
        let out = plan_template("papers on a<b>;c", &[rule]);
        assert_eq!(out.plan().unwrap().paths()[0].target().restriction(), Some("a<b>;c"));
    }

    #[test]
    fn bad_rules_are_rejected() {
        assert!(TemplatePlanner::new(&[TemplateRule::new("x {a} {a}", "P")]).is_err());
        assert!(TemplatePlanner::new(&[TemplateRule::new("x {a}", "P<{b}>")]).is_err());
        assert!(TemplatePlanner::new(&[TemplateRule::new("x {a", "P")]).is_err());
    }
}
