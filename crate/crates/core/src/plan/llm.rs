//! Chat-completion planner.
//!
//! Sends one request per query to an OpenAI-style `/chat/completions`
//! endpoint and reads back a `Metapath: "...", Restriction: {...}` answer.
//! Every failure mode, transport or parsing, ends in [`PlanOutcome::Invalid`].

use std::collections::BTreeMap;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{parse_plan, PathNode, PlanOutcome, PlanningGraph, ReasoningPath};

const SYSTEM_MESSAGE: &str = "You are a planning graph finder agent. Your role is to:\n\
1. Identify the underlying **meta-path** from a given question, which consists of the **entity types** at each reasoning step.\n\
2. Extract the **content restriction** for each **entity type** based on the question. If there is no restriction for an entity type, leave its value empty.\n\
You will be provided with a predefined **Entity Type List**. Only use the entity types from this list when constructing the meta-path and restrictions. Your response must be concise and strictly adhere to the specified **output format**.";

const OUTPUT_FORMAT: &str = "Metapath: \"\", Restriction: {}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmEndpoint {
    /// Base URL; the request goes to `{base_url}/chat/completions`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    30_000
}

/// An in-context example: a question and the answer the model should give.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub query: String,
    pub metapath: String,
    #[serde(default)]
    pub restriction: BTreeMap<String, String>,
}

impl Demonstration {
    fn render(&self) -> String {
        format!(
            "Question: {}\nMetapath: \"{}\", Restriction: {}",
            self.query,
            self.metapath,
            serde_json::to_string(&self.restriction).expect("string map serializes")
        )
    }
}

#[derive(Debug, Clone)]
pub struct LlmPlanner {
    endpoint: LlmEndpoint,
    schema: Vec<String>,
    demos: Vec<Demonstration>,
    agent: ureq::Agent,
}

impl LlmPlanner {
    pub fn new(endpoint: LlmEndpoint, schema: Vec<String>, demos: Vec<Demonstration>) -> Self {
        let timeout = Duration::from_millis(endpoint.timeout_ms);
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self {
            endpoint,
            schema,
            demos,
            agent,
        }
    }

    pub fn system_prompt(&self) -> String {
        let demos = self.demos.iter().map(Demonstration::render).collect::<Vec<_>>().join("\n\n");
        format!(
            "{SYSTEM_MESSAGE}\n\nEntity Type List: {}\n\nDemonstrations:\n{}\n\nOutput Format: {OUTPUT_FORMAT}",
            serde_json::to_string(&self.schema).expect("string list serializes"),
            demos
        )
    }

    /// The chat-completion request body for a query.
    pub fn request_body(&self, query: &str) -> Value {
        json!({
            "model": self.endpoint.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": self.system_prompt()},
                {"role": "user", "content": query},
            ],
        })
    }

    pub fn plan(&self, query: &str) -> PlanOutcome {
        if self.schema.is_empty() {
            return PlanOutcome::invalid("empty entity type list");
        }
        let url = format!("{}/chat/completions", self.endpoint.base_url.trim_end_matches('/'));
        let mut request = self.agent.post(&url).set("Content-Type", "application/json");
        if let Some(var) = &self.endpoint.api_key_env {
            if let Ok(token) = std::env::var(var) {
                request = request.set("Authorization", &format!("Bearer {token}"));
            }
        }
        let response = match request.send_string(&self.request_body(query).to_string()) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                let body = r.into_string().unwrap_or_default();
                return PlanOutcome::invalid_with_raw(format!("planner endpoint returned status {code}"), body);
            }
            Err(ureq::Error::Transport(t)) => {
                log::warn!("planner transport failure: {t}");
                return PlanOutcome::invalid("planner endpoint unreachable");
            }
        };
        let body = match response.into_string() {
            Ok(b) => b,
            Err(e) => {
                log::warn!("planner response read failure: {e}");
                return PlanOutcome::invalid("planner endpoint unreachable");
            }
        };
        let content = serde_json::from_str::<Value>(&body)
            .ok()
            .and_then(|v| v["choices"][0]["message"]["content"].as_str().map(str::to_string));
        match content {
            Some(content) => parse_planner_output(&content),
            None => PlanOutcome::invalid_with_raw("malformed planner response", body),
        }
    }
}

/// Parses a `Metapath: "...", Restriction: {...}` model answer.
pub fn parse_planner_output(content: &str) -> PlanOutcome {
    let unparseable = || PlanOutcome::invalid_with_raw("unparseable planner output", content);
    let metapath_re = Regex::new(r#"(?s)Metapath:\s*"([^"]*)""#).expect("static regex");
    let restriction_re = Regex::new(r"(?s)Restriction:\s*(.*)").expect("static regex");

    let Some(metapath) = metapath_re.captures(content).map(|c| c[1].to_string()) else {
        return unparseable();
    };
    let restrictions: BTreeMap<String, Value> = match restriction_re.captures(content) {
        Some(c) => {
            // The object may be followed by trailing prose; read just the first value.
            let mut values = serde_json::Deserializer::from_str(&c[1]).into_iter::<BTreeMap<String, Value>>();
            match values.next() {
                Some(Ok(map)) => map,
                _ => return unparseable(),
            }
        }
        None => BTreeMap::new(),
    };
    let plan = match parse_plan(&split_paths(&metapath)) {
        PlanOutcome::Valid { plan } => plan,
        PlanOutcome::Invalid { reason, .. } => {
            return PlanOutcome::invalid_with_raw(format!("unparseable planner output: {reason}"), content)
        }
    };
    match apply_restrictions(&plan, &restrictions) {
        Ok(g) => PlanOutcome::valid(g),
        Err(reason) => PlanOutcome::invalid_with_raw(reason, content),
    }
}

/// Models often separate paths with commas; the plan language uses `;`.
/// Commas inside `<...>` restrictions are kept.
fn split_paths(metapath: &str) -> String {
    let chars: Vec<char> = metapath.chars().collect();
    let mut depth = 0usize;
    let mut out = String::with_capacity(metapath.len());
    for (i, &c) in chars.iter().enumerate() {
        let arrow = (c == '<' && chars.get(i + 1) == Some(&'-')) || (c == '>' && i > 0 && chars[i - 1] == '-');
        match c {
            '<' if !arrow => depth += 1,
            '>' if !arrow => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                out.push(';');
                continue;
            }
            _ => {}
        }
        out.push(c);
    }
    out
}

fn restriction_for<'a>(restrictions: &'a BTreeMap<String, Value>, category: &str) -> Option<&'a str> {
    let value = restrictions.get(category).or_else(|| {
        restrictions
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(category))
            .map(|(_, v)| v)
    })?;
    match value {
        Value::String(s) if !s.trim().is_empty() => Some(s.as_str()),
        _ => None,
    }
}

fn apply_restrictions(plan: &PlanningGraph, restrictions: &BTreeMap<String, Value>) -> Result<PlanningGraph, String> {
    let paths = plan
        .paths()
        .iter()
        .map(|p| {
            let nodes = p
                .nodes()
                .iter()
                .map(|n| {
                    let r = n.restriction().or_else(|| restriction_for(restrictions, n.category()));
                    PathNode::new(n.category(), r)
                })
                .collect::<Result<Vec<_>, _>>()?;
            ReasoningPath::new(nodes)
        })
        .collect::<Result<Vec<_>, _>>()?;
    PlanningGraph::new(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::serialize_plan;
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;
    use std::thread;

    #[test]
    fn parses_prompt_output_format() {
        let out = parse_planner_output(
            r#"Metapath: "Institution -> Author -> Paper", Restriction: {"Institution": "Point Park University"}"#,
        );
        let g = out.plan().expect("valid");
        assert_eq!(serialize_plan(g), "Institution<Point Park University> -> Author -> Paper");
    }

    #[test]
    fn empty_restriction_values_are_dropped() {
        let out = parse_planner_output(
            "Metapath: \"Author -> Paper <- Field-of-Study\",\nRestriction: {\"author\": \"\", \"Field-of-Study\": \"optics\"}",
        );
        assert_eq!(serialize_plan(out.plan().unwrap()), "Author -> Paper ; Field-of-Study<optics> -> Paper");
    }

    #[test]
    fn commas_separate_paths() {
        let out = parse_planner_output(
            r#"Metapath: "Institution -> Author -> Paper, Paper <- Field-of-Study", Restriction: {"Institution": "Point Park, PA"}"#,
        );
        assert_eq!(
            serialize_plan(out.plan().unwrap()),
            "Field-of-Study -> Paper ; Institution<Point Park, PA> -> Author -> Paper"
        );
        assert_eq!(split_paths("A<x, y> -> B, C <- D"), "A<x, y> -> B; C <- D");
    }

    #[test]
    fn refusals_are_invalid_with_raw() {
        match parse_planner_output("I cannot help") {
            PlanOutcome::Invalid { reason, raw } => {
                assert_eq!(reason, "unparseable planner output");
                assert_eq!(raw.as_deref(), Some("I cannot help"));
            }
            other => panic!("{other:?}"),
        }
        assert!(!parse_planner_output(r#"Metapath: "Paper", Restriction: {oops"#).is_valid());
    }

    fn endpoint(url: String, timeout_ms: u64) -> LlmEndpoint {
        LlmEndpoint {
            base_url: url,
            model: "planner-3b".into(),
            api_key_env: Some("MIXTRAIL_TEST_TOKEN_UNSET".into()),
            timeout_ms,
        }
    }

    /// Serves exactly one canned HTTP response and hands back the request text.
    fn serve_once(status: &str, body: String) -> (String, mpsc::Receiver<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let status = status.to_string();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = Vec::new();
            let mut chunk = [0u8; 4096];
            loop {
                let n = stream.read(&mut chunk).unwrap();
                buf.extend_from_slice(&chunk[..n]);
                let text = String::from_utf8_lossy(&buf);
                if let Some(head_end) = text.find("\r\n\r\n") {
                    let len = text[..head_end]
                        .lines()
                        .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                        .unwrap_or(0);
                    if buf.len() >= head_end + 4 + len {
                        break;
                    }
                }
            }
            let reply = format!(
                "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
            tx.send(String::from_utf8(buf).unwrap()).unwrap();
        });
        (url, rx)
    }

    #[test]
    fn round_trip_against_local_endpoint() {
        let content = r#"Metapath: "Institution -> Author -> Paper", Restriction: {"Institution": "Point Park University"}"#;
        let body = json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string();
        let (url, rx) = serve_once("200 OK", body);
        let planner = LlmPlanner::new(
            endpoint(url, 5_000),
            vec!["Author".into(), "Institution".into(), "Paper".into()],
            vec![Demonstration {
                query: "papers by authors at MIT".into(),
                metapath: "Institution -> Author -> Paper".into(),
                restriction: BTreeMap::from([("Institution".into(), "MIT".into())]),
            }],
        );
        let out = planner.plan("publications by Point Park University authors");
        assert!(out.is_valid(), "{out:?}");
        let request = rx.recv().unwrap();
        assert!(request.starts_with("POST /v1/chat/completions"));
        assert!(!request.contains("Authorization"));
        let body: Value = serde_json::from_str(&request[request.find("\r\n\r\n").unwrap() + 4..]).unwrap();
        assert_eq!(body["temperature"], 0);
        assert_eq!(body["model"], "planner-3b");
        let system = body["messages"][0]["content"].as_str().unwrap();
        assert!(system.starts_with("You are a planning graph finder agent."));
        assert!(system.contains(r#"Entity Type List: ["Author","Institution","Paper"]"#));
        assert!(system.contains(r#"Metapath: "Institution -> Author -> Paper", Restriction: {"Institution":"MIT"}"#));
        assert!(system.ends_with(r#"Output Format: Metapath: "", Restriction: {}"#));
        assert_eq!(body["messages"][1]["content"], "publications by Point Park University authors");
    }

    #[test]
    fn http_error_status_is_invalid() {
        let (url, _rx) = serve_once("500 Internal Server Error", "{}".into());
        let planner = LlmPlanner::new(endpoint(url, 5_000), vec!["Paper".into()], vec![]);
        assert_eq!(planner.plan("q").reason(), Some("planner endpoint returned status 500"));
    }

    #[test]
    fn timeout_is_invalid() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        // Accept and hold the connection without answering.
        let handle = thread::spawn(move || {
            let conn = listener.accept();
            thread::sleep(Duration::from_millis(600));
            drop(conn);
        });
        let planner = LlmPlanner::new(endpoint(url, 200), vec!["Paper".into()], vec![]);
        assert_eq!(planner.plan("q").reason(), Some("planner endpoint unreachable"));
        handle.join().unwrap();
    }

    #[test]
    fn refused_connection_is_invalid() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let planner = LlmPlanner::new(endpoint(format!("http://127.0.0.1:{port}"), 500), vec!["Paper".into()], vec![]);
        assert_eq!(planner.plan("q").reason(), Some("planner endpoint unreachable"));
    }
}
