//! Plain key-value text format for partition plans.
//!
//! ```text
//! # foltr partition plan v1
//! clients = 2
//! client.0.domain = all
//! client.0.queries_per_round = 3
//! client.1.domain = views
//! client.1.view = 4 0,2,7
//! intents = 2
//! relabel.0.1 = 0,4,0
//! ```
//!
//! Query numbers are positions in the training split; document numbers are
//! positions in the query's candidate list. `view` lines may repeat and are
//! kept in file order. Blank lines and `#` comments are ignored.

use std::io::{BufRead, Write};

use super::{ClientPlan, IntentRelabelTable, PartitionPlan, QueryView, SamplingDomain};
use crate::error::{FoltrError, Result};

pub const PLAN_HEADER: &str = "# foltr partition plan v1";

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

pub fn write_plan<W: Write>(plan: &PartitionPlan, mut out: W) -> Result<()> {
    writeln!(out, "{PLAN_HEADER}")?;
    writeln!(out, "clients = {}", plan.clients.len())?;
    for (i, c) in plan.clients.iter().enumerate() {
        match &c.domain {
            SamplingDomain::AllTrain => writeln!(out, "client.{i}.domain = all")?,
            SamplingDomain::Views(views) => {
                writeln!(out, "client.{i}.domain = views")?;
                for v in views {
                    writeln!(out, "client.{i}.view = {} {}", v.query, join(&v.docs))?;
                }
            }
        }
        if let Some(q) = c.queries_per_round {
            writeln!(out, "client.{i}.queries_per_round = {q}")?;
        }
        if let Some(intent) = c.intent {
            writeln!(out, "client.{i}.intent = {intent}")?;
        }
    }
    if let Some(table) = &plan.relabel {
        writeln!(out, "intents = {}", table.num_intents)?;
        writeln!(out, "relabel_queries = {}", table.grades.len())?;
        for (q, per_intent) in table.grades.iter().enumerate() {
            for (intent, labels) in per_intent.iter().enumerate() {
                writeln!(out, "relabel.{q}.{intent} = {}", join(labels))?;
            }
        }
    }
    Ok(())
}

fn parse_num<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
    s.trim().parse().map_err(|_| FoltrError::Parse {
        line,
        message: format!("invalid {what}: {s:?}"),
    })
}

fn parse_list<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<Vec<T>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|t| parse_num(t, line, what)).collect()
}

pub fn read_plan<R: BufRead>(reader: R) -> Result<PartitionPlan> {
    let mut clients: Vec<ClientPlan> = Vec::new();
    let mut intents: Option<usize> = None;
    let mut relabel: Vec<Vec<Vec<u8>>> = Vec::new();

    for (idx, raw) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let raw = raw?;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| FoltrError::Parse {
            line: line_no,
            message: "expected key = value".into(),
        })?;
        let key = key.trim();
        let value = value.trim();
        let parts: Vec<&str> = key.split('.').collect();
        let bad_key = || FoltrError::Parse {
            line: line_no,
            message: format!("unknown key {key:?}"),
        };
        match parts.as_slice() {
            ["clients"] => {
                let n: usize = parse_num(value, line_no, "client count")?;
                clients = vec![ClientPlan::iid(); n];
            }
            ["intents"] => intents = Some(parse_num(value, line_no, "intent count")?),
            ["relabel_queries"] => {
                let n: usize = parse_num(value, line_no, "query count")?;
                relabel = vec![Vec::new(); n];
            }
            ["client", id, field] => {
                let id: usize = parse_num(id, line_no, "client id")?;
                let client = clients.get_mut(id).ok_or_else(|| FoltrError::Parse {
                    line: line_no,
                    message: format!("client {id} declared before `clients` or out of range"),
                })?;
                match *field {
                    "domain" => {
                        client.domain = match value {
                            "all" => SamplingDomain::AllTrain,
                            "views" => SamplingDomain::Views(Vec::new()),
                            other => {
                                return Err(FoltrError::Parse {
                                    line: line_no,
                                    message: format!("unknown domain {other:?}"),
                                })
                            }
                        }
                    }
                    "view" => {
                        let (q, docs) = value.split_once(' ').unwrap_or((value, ""));
                        let view = QueryView {
                            query: parse_num(q, line_no, "query index")?,
                            docs: parse_list(docs, line_no, "document index")?,
                        };
                        match &mut client.domain {
                            SamplingDomain::Views(v) => v.push(view),
                            SamplingDomain::AllTrain => {
                                return Err(FoltrError::Parse {
                                    line: line_no,
                                    message: format!("client {id} has domain `all` but lists views"),
                                })
                            }
                        }
                    }
                    "queries_per_round" => client.queries_per_round = Some(parse_num(value, line_no, "count")?),
                    "intent" => client.intent = Some(parse_num(value, line_no, "intent")?),
                    _ => return Err(bad_key()),
                }
            }
            ["relabel", q, intent] => {
                let q: usize = parse_num(q, line_no, "query index")?;
                let intent: usize = parse_num(intent, line_no, "intent")?;
                let per_query = relabel.get_mut(q).ok_or_else(|| FoltrError::Parse {
                    line: line_no,
                    message: format!("relabel query {q} out of range"),
                })?;
                if per_query.len() != intent {
                    return Err(FoltrError::Parse {
                        line: line_no,
                        message: "relabel intents must be listed in order".into(),
                    });
                }
                per_query.push(parse_list(value, line_no, "grade")?);
            }
            _ => return Err(bad_key()),
        }
    }

    let relabel = intents.map(|num_intents| IntentRelabelTable {
            num_intents,
            grades: relabel,
        });
    Ok(PartitionPlan { clients, relabel })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{partition_intent_skew, partition_label_skew, partition_quantity_skew, synthetic_linear};
    use crate::seed::stream;

    fn round_trip(plan: &PartitionPlan) -> PartitionPlan {
        let mut buf = Vec::new();
        write_plan(plan, &mut buf).unwrap();
        read_plan(buf.as_slice()).unwrap()
    }

    #[test]
    fn plans_round_trip() {
        let ds = synthetic_linear::<f64>(&Default::default(), 1);
        let label = partition_label_skew(&ds, 10, 2, &mut stream(1, &[])).unwrap();
        assert_eq!(round_trip(&label), label);
        let qty = partition_quantity_skew(3, &[1, 4, 9]).unwrap();
        assert_eq!(round_trip(&qty), qty);
        let (intent, _) = partition_intent_skew(&ds, 3, &mut stream(2, &[])).unwrap();
        assert_eq!(round_trip(&intent), intent);
    }

    #[test]
    fn rejects_unknown_keys() {
        let err = read_plan("clients = 1\nclient.0.colour = red\n".as_bytes()).unwrap_err();
        assert!(matches!(err, FoltrError::Parse { line: 2, .. }));
    }
}
