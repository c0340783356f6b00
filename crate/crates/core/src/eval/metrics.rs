use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::EvalError;

/// One evaluation query, stored as a JSON line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub answers: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<String>,
}

pub fn read_queries<R: BufRead>(input: R) -> Result<Vec<QueryRecord>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q: QueryRecord = serde_json::from_str(&line).map_err(|e| EvalError::Queries {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(q);
    }
    Ok(out)
}

pub fn write_queries<W: Write>(queries: &[QueryRecord], mut out: W) -> std::io::Result<()> {
    for q in queries {
        serde_json::to_writer(&mut out, q)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// 1 if any of the first `k` ids is an answer.
pub fn hit_at_k(ranked: &[String], answers: &BTreeSet<String>, k: usize) -> f64 {
    if ranked.iter().take(k).any(|id| answers.contains(id)) {
        1.0
    } else {
        0.0
    }
}

/// Share of the answers found in the first `k` ids. Duplicated ids count once.
pub fn recall_at_k(ranked: &[String], answers: &BTreeSet<String>, k: usize) -> f64 {
    if answers.is_empty() {
        return 0.0;
    }
    let found: BTreeSet<&String> = ranked.iter().take(k).filter(|id| answers.contains(*id)).collect();
    found.len() as f64 / answers.len() as f64
}

/// Reciprocal rank of the first answer, 0 when none is ranked.
pub fn mrr(ranked: &[String], answers: &BTreeSet<String>) -> f64 {
    ranked
        .iter()
        .position(|id| answers.contains(id))
        .map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn set(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn definitions() {
        let r = ids(&["a", "b", "c"]);
        assert_eq!(hit_at_k(&r, &set(&["b"]), 1), 0.0);
        assert_eq!(hit_at_k(&r, &set(&["b"]), 2), 1.0);
        assert_eq!(hit_at_k(&[], &set(&["b"]), 5), 0.0);
        assert!((recall_at_k(&ids(&["a", "b"]), &set(&["a", "b", "c"]), 20) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(recall_at_k(&r, &set(&["a", "c"]), 20), 1.0);
        assert_eq!(recall_at_k(&r, &set(&["x"]), 20), 0.0);
        assert!((mrr(&r, &set(&["c"])) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(mrr(&r, &set(&["a"])), 1.0);
        assert_eq!(mrr(&r, &set(&["z"])), 0.0);
    }

    #[test]
    fn query_lines_round_trip() {
        let qs = vec![
            QueryRecord {
                id: "q1".into(),
                text: "papers".into(),
                answers: set(&["P1"]),
                plan: Some("Author -> Paper".into()),
            },
            QueryRecord {
                id: "q2".into(),
                text: "x".into(),
                answers: set(&[]),
                plan: None,
            },
        ];
        let mut buf = Vec::new();
        write_queries(&qs, &mut buf).unwrap();
        assert_eq!(read_queries(buf.as_slice()).unwrap(), qs);
        let err = read_queries(&b"{\"id\": 1}\n"[..]).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    proptest! {
        #[test]
        fn hit_is_monotone_and_mrr_one_iff_hit1(ranked in proptest::collection::vec(0u8..12, 0..12), answers in proptest::collection::btree_set(0u8..12, 1..5)) {
            let ranked: Vec<String> = ranked.iter().map(|i| format!("n{i}")).collect();
            let answers: BTreeSet<String> = answers.iter().map(|i| format!("n{i}")).collect();
            for k in 1..12 {
                prop_assert!(hit_at_k(&ranked, &answers, k) <= hit_at_k(&ranked, &answers, k + 1));
            }
            prop_assert_eq!(mrr(&ranked, &answers) == 1.0, hit_at_k(&ranked, &answers, 1) == 1.0);
            let r = recall_at_k(&ranked, &answers, 20);
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }
}
