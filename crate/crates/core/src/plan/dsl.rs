use super::{PathNode, PlanOutcome, PlanningGraph, ReasoningPath};

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Name(String),
    Restriction(String),
    Forward,
    Backward,
    Separator,
}

fn unescape(ch: Option<char>) -> Result<char, String> {
    match ch {
        Some(c @ ('\\' | '<' | '>' | ';')) => Ok(c),
        Some(c) => Err(format!("invalid escape \\{c}")),
        None => Err("trailing backslash".into()),
    }
}

fn lex(text: &str) -> Result<Vec<Token>, String> {
    let mut tokens = Vec::new();
    let mut name = String::new();
    // True when the previous character belonged to a category name, which
    // makes a following '<' open a restriction rather than a '<-' arrow.
    let mut after_name_char = false;
    let mut chars = text.chars().peekable();

    fn flush(name: &mut String, tokens: &mut Vec<Token>) {
        let trimmed = name.trim();
        if !trimmed.is_empty() {
            tokens.push(Token::Name(trimmed.to_string()));
        }
        name.clear();
    }

    while let Some(ch) = chars.next() {
        match ch {
            '\\' => {
                name.push(unescape(chars.next())?);
                after_name_char = true;
            }
            '-' if chars.peek() == Some(&'>') => {
                chars.next();
                flush(&mut name, &mut tokens);
                tokens.push(Token::Forward);
                after_name_char = false;
            }
            '<' if after_name_char => {
                flush(&mut name, &mut tokens);
                let mut body = String::new();
                loop {
                    match chars.next() {
                        Some('\\') => body.push(unescape(chars.next())?),
                        Some('>') => break,
                        Some(c) => body.push(c),
                        None => return Err("unterminated restriction".into()),
                    }
                }
                tokens.push(Token::Restriction(body));
                after_name_char = false;
            }
            '<' if chars.peek() == Some(&'-') => {
                chars.next();
                flush(&mut name, &mut tokens);
                tokens.push(Token::Backward);
                after_name_char = false;
            }
            '<' => return Err("unexpected '<'".into()),
            '>' => return Err("unexpected '>'".into()),
            ';' => {
                flush(&mut name, &mut tokens);
                tokens.push(Token::Separator);
                after_name_char = false;
            }
            c if c.is_whitespace() => {
                name.push(c);
                after_name_char = false;
            }
            c => {
                name.push(c);
                after_name_char = true;
            }
        }
    }
    flush(&mut name, &mut tokens);
    Ok(tokens)
}

#[derive(Clone, Copy, PartialEq)]
enum Arrow {
    Forward,
    Backward,
}

/// Turns one `;`-delimited chain into source-to-target paths.
fn chain_to_paths(tokens: &[Token]) -> Result<Vec<ReasoningPath>, String> {
    if tokens.is_empty() {
        return Err("empty path".into());
    }
    let mut nodes: Vec<PathNode> = Vec::new();
    let mut arrows: Vec<Arrow> = Vec::new();
    let mut i = 0;
    let mut expect_node = true;
    while i < tokens.len() {
        match (&tokens[i], expect_node) {
            (Token::Name(category), true) => {
                let restriction = match tokens.get(i + 1) {
                    Some(Token::Restriction(r)) => {
                        i += 1;
                        Some(r.as_str())
                    }
                    _ => None,
                };
                nodes.push(PathNode::new(category, restriction)?);
                expect_node = false;
            }
            (Token::Forward | Token::Backward, true) => return Err("dangling arrow".into()),
            (Token::Forward, false) => {
                arrows.push(Arrow::Forward);
                expect_node = true;
            }
            (Token::Backward, false) => {
                arrows.push(Arrow::Backward);
                expect_node = true;
            }
            (Token::Name(_), false) => return Err("missing arrow".into()),
            (Token::Restriction(_), _) => return Err("misplaced restriction".into()),
            (Token::Separator, _) => unreachable!("chains are split on separators"),
        }
        i += 1;
    }
    if expect_node {
        return Err("dangling arrow".into());
    }

    // The chain must read forward up to a single sink, then backward.
    let sink = arrows.iter().take_while(|a| **a == Arrow::Forward).count();
    if arrows[sink..].iter().any(|a| *a == Arrow::Forward) {
        return Err("ambiguous arrow direction".into());
    }
    let mut paths = Vec::new();
    if sink > 0 || sink == arrows.len() {
        paths.push(ReasoningPath::new(nodes[..=sink].to_vec())?);
    }
    if sink < arrows.len() {
        let mut backward: Vec<PathNode> = nodes[sink..].to_vec();
        backward.reverse();
        paths.push(ReasoningPath::new(backward)?);
    }
    Ok(paths)
}

/// Parses plan DSL text. Every failure is reported as [`PlanOutcome::Invalid`].
pub fn parse_plan(text: &str) -> PlanOutcome {
    match parse_inner(text) {
        Ok(g) => PlanOutcome::valid(g),
        Err(reason) => PlanOutcome::invalid_with_raw(reason, text),
    }
}

fn parse_inner(text: &str) -> Result<PlanningGraph, String> {
    let tokens = lex(text)?;
    if tokens.is_empty() {
        return Err("empty plan".into());
    }
    let mut paths = Vec::new();
    for chain in tokens.split(|t| *t == Token::Separator) {
        paths.extend(chain_to_paths(chain)?);
    }
    PlanningGraph::new(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::plan::serialize_plan;
    use proptest::prelude::*;

    fn valid(text: &str) -> PlanningGraph {
        match parse_plan(text) {
            PlanOutcome::Valid { plan } => plan,
            other => panic!("{text:?} -> {other:?}"),
        }
    }

    fn reason(text: &str) -> String {
        parse_plan(text).reason().unwrap_or_else(|| panic!("{text:?} parsed")).to_string()
    }

    #[test]
    fn two_path_plan() {
        let g = valid("Institution<Point Park University> -> Author -> Paper ; Field-of-Study<Stellar Populations> -> Paper");
        assert_eq!(g.paths().len(), 2);
        assert_eq!(g.target_category(), "Paper");
        // canonical order puts the Field-of-Study path first
        let fos = &g.paths()[0];
        assert_eq!(fos.nodes()[0].category(), "Field-of-Study");
        assert_eq!(fos.nodes()[0].restriction(), Some("Stellar Populations"));
        let inst = &g.paths()[1];
        assert_eq!(inst.len(), 3);
        assert_eq!(inst.nodes()[0].restriction(), Some("Point Park University"));
        assert_eq!(inst.nodes()[1].restriction(), None);
        assert_eq!(serialize_plan(&g), fixtures::F1_PLAN);
    }

    #[test]
    fn single_node() {
        let g = valid("Paper");
        assert_eq!(g.paths().len(), 1);
        assert_eq!(g.paths()[0].len(), 1);
        assert_eq!(g.paths()[0].target().restriction(), None);
        assert_eq!(serialize_plan(&g), "Paper");
    }

    #[test]
    fn syntax_errors() {
        assert_eq!(reason("Author -> ; Paper"), "dangling arrow");
        assert_eq!(reason("-> Paper"), "dangling arrow");
        assert_eq!(reason("Author -> -> Paper"), "dangling arrow");
        assert_eq!(reason(""), "empty plan");
        assert_eq!(reason("   "), "empty plan");
        assert_eq!(reason("Paper ;; Paper"), "empty path");
        assert_eq!(reason("Author<x"), "unterminated restriction");
        assert_eq!(reason("Author<>"), "empty restriction");
        assert_eq!(reason("Author<x> Paper"), "missing arrow");
        assert_eq!(reason("Author > Paper"), "unexpected '>'");
        assert_eq!(reason("Author -> Paper ; Author"), "mixed target categories");
        assert_eq!(reason("A <- B -> C"), "ambiguous arrow direction");
        assert_eq!(reason("A\\x"), "invalid escape \\x");
    }

    #[test]
    fn converging_arrows_are_split() {
        let g = valid("Institution<Point Park University> -> Author -> Paper <- Field-of-Study<Stellar Populations>");
        assert_eq!(serialize_plan(&g), fixtures::F1_PLAN);
        let g = valid("Paper <- Author <- Institution");
        assert_eq!(serialize_plan(&g), "Institution -> Author -> Paper");
    }

    #[test]
    fn escaping() {
        let g = valid(r"Paper<a \> b \; c \\ d \< e>");
        assert_eq!(g.paths()[0].target().restriction(), Some(r"a > b ; c \ d < e"));
        assert_eq!(serialize_plan(&g), r"Paper<a \> b \; c \\ d \< e>");
        // a restriction may hold an arrow when its '>' is escaped
        let g = valid(r"Paper<x -\> y>");
        assert_eq!(g.paths()[0].target().restriction(), Some("x -> y"));
    }

    #[test]
    fn duplicates_collapse() {
        let g = valid("Author -> Paper ; Author -> Paper");
        assert_eq!(g.paths().len(), 1);
    }

    fn arb_text() -> impl Strategy<Value = String> {
        // Includes the DSL's special characters to exercise escaping.
        "[a-zA-Z0-9 <>;\\\\-]{1,12}".prop_filter("non-blank", |s| !s.trim().is_empty())
    }

    fn arb_node() -> impl Strategy<Value = PathNode> {
        (arb_text(), proptest::option::of(arb_text()))
            .prop_map(|(c, r)| PathNode::new(&c, r.as_deref()).unwrap())
    }

    fn arb_plan() -> impl Strategy<Value = PlanningGraph> {
        (arb_node(), proptest::collection::vec(proptest::collection::vec(arb_node(), 0..3), 1..4)).prop_map(
            |(target, prefixes)| {
                let paths = prefixes
                    .into_iter()
                    .map(|mut nodes| {
                        nodes.push(target.clone());
                        ReasoningPath::new(nodes).unwrap()
                    })
                    .collect();
                PlanningGraph::new(paths).unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn round_trip(g in arb_plan()) {
            let text = serialize_plan(&g);
            prop_assert_eq!(parse_plan(&text), PlanOutcome::valid(g));
        }

        #[test]
        fn parse_never_panics(text in "\\PC{0,40}") {
            let _ = parse_plan(&text);
        }
    }
}
