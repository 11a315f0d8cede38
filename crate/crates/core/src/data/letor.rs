use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{Dataset, DocumentFeatures, Query};
use crate::error::{FoltrError, Result};
use crate::scalar::Scalar;

/// Optional declarations checked while parsing. Undeclared values are
/// inferred from the file.
#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    pub feature_dim: Option<usize>,
    pub max_grade: Option<u8>,
}

struct Line {
    grade: u8,
    qid: String,
    features: Vec<(usize, f64)>,
}

fn parse_line(raw: &str, line_no: usize) -> Result<Option<Line>> {
    let err = |message: String| FoltrError::Parse { line: line_no, message };
    let body = raw.split('#').next().unwrap_or("").trim();
    if body.is_empty() {
        return Ok(None);
    }
    let mut tokens = body.split_whitespace();
    let grade_tok = tokens.next().ok_or_else(|| err("missing grade".into()))?;
    let grade: u8 = grade_tok
        .parse()
        .map_err(|_| err(format!("invalid relevance grade {grade_tok:?}")))?;
    let qid_tok = tokens.next().ok_or_else(|| err("missing qid".into()))?;
    let qid = qid_tok
        .strip_prefix("qid:")
        .filter(|q| !q.is_empty())
        .ok_or_else(|| err(format!("expected qid:<id>, found {qid_tok:?}")))?
        .to_string();

    let mut features = Vec::new();
    for tok in tokens {
        let (fid, val) = tok
            .split_once(':')
            .ok_or_else(|| err(format!("expected <fid>:<value>, found {tok:?}")))?;
        let fid: usize = fid
            .parse()
            .map_err(|_| err(format!("invalid feature id {fid:?}")))?;
        if fid == 0 {
            return Err(err("feature ids start at 1".into()));
        }
        let val: f64 = val
            .parse()
            .map_err(|_| err(format!("invalid feature value {val:?}")))?;
        if !val.is_finite() {
            return Err(err(format!("non-finite feature value for id {fid}")));
        }
        if features.iter().any(|&(f, _)| f == fid) {
            return Err(err(format!("duplicate feature id {fid}")));
        }
        features.push((fid, val));
    }
    Ok(Some(Line { grade, qid, features }))
}

/// Parses LETOR / SVMlight ranking text into a dataset whose `train` split
/// holds every query in file order. Feature ids are densified to 0-based
/// positions; absent ids are 0.0.
pub fn parse_letor<S: Scalar, R: BufRead>(reader: R, options: ParseOptions) -> Result<Dataset<S>> {
    let mut lines = Vec::new();
    for (i, raw) in reader.lines().enumerate() {
        let raw = raw?;
        if let Some(line) = parse_line(&raw, i + 1)? {
            lines.push((i + 1, line));
        }
    }

    let seen_dim = lines
        .iter()
        .flat_map(|(_, l)| l.features.iter().map(|&(f, _)| f))
        .max()
        .unwrap_or(0);
    let feature_dim = match options.feature_dim {
        Some(d) => {
            if let Some((line, _)) = lines
                .iter()
                .find(|(_, l)| l.features.iter().any(|&(f, _)| f > d))
            {
                return Err(FoltrError::Schema(format!(
                    "line {line}: feature id exceeds declared dimension {d}"
                )));
            }
            d
        }
        None => seen_dim,
    };

    let seen_grade = lines.iter().map(|(_, l)| l.grade).max().unwrap_or(0);
    let max_grade = match options.max_grade {
        Some(g) => {
            if let Some((line, l)) = lines.iter().find(|(_, l)| l.grade > g) {
                return Err(FoltrError::Schema(format!(
                    "line {line}: grade {} exceeds declared maximum {g}",
                    l.grade
                )));
            }
            g
        }
        None if seen_grade <= 2 => 2,
        None => seen_grade.max(4),
    };

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<DocumentFeatures<S>>> = HashMap::new();
    for (_, line) in lines {
        let mut features = vec![S::zero(); feature_dim];
        for (fid, val) in line.features {
            features[fid - 1] = S::lit(val);
        }
        let docs = groups.entry(line.qid.clone()).or_insert_with(|| {
            order.push(line.qid.clone());
            Vec::new()
        });
        docs.push(DocumentFeatures {
            doc_index: docs.len(),
            features,
            relevance: line.grade,
        });
    }
    let train = order
        .into_iter()
        .map(|qid| {
            let docs = groups.remove(&qid).unwrap_or_default();
            Query { query_id: qid, docs }
        })
        .collect();

    Dataset::new("letor", feature_dim, max_grade, train, Vec::new())
}

pub fn read_letor_file<S: Scalar>(path: &Path, options: ParseOptions) -> Result<Dataset<S>> {
    let file = File::open(path)?;
    let mut ds = parse_letor(BufReader::new(file), options)?;
    if let Some(stem) = path.file_stem() {
        ds.name = stem.to_string_lossy().into_owned();
    }
    Ok(ds)
}

/// Writes queries back in dense LETOR form (`<grade> qid:<id> 1:<v> ...`).
/// Values use the shortest representation that parses back exactly.
pub fn write_letor<S: Scalar, W: Write>(queries: &[Query<S>], mut out: W) -> Result<()> {
    for q in queries {
        for d in &q.docs {
            write!(out, "{} qid:{}", d.relevance, q.query_id)?;
            for (i, v) in d.features.iter().enumerate() {
                write!(out, " {}:{}", i + 1, v.as_f64())?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Dataset<f64>> {
        parse_letor(text.as_bytes(), ParseOptions::default())
    }

    #[test]
    fn single_line_with_comment() {
        let ds = parse("2 qid:10 1:0.5 2:0.0 # d1\n").unwrap();
        assert_eq!(ds.train.len(), 1);
        let q = &ds.train[0];
        assert_eq!(q.query_id, "10");
        assert_eq!(q.docs[0].relevance, 2);
        assert_eq!(q.docs[0].features, vec![0.5, 0.0]);
    }

    #[test]
    fn empty_input_gives_no_queries() {
        let ds = parse("").unwrap();
        assert!(ds.train.is_empty());
        assert_eq!(ds.feature_dim, 0);
    }

    #[test]
    fn shared_qid_groups_in_file_order() {
        let ds = parse("0 qid:7 1:1\n2 qid:7 1:2\n").unwrap();
        assert_eq!(ds.train.len(), 1);
        let docs = &ds.train[0].docs;
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0].features, vec![1.0]);
        assert_eq!(docs[1].features, vec![2.0]);
        assert_eq!(docs[1].doc_index, 1);
    }

    #[test]
    fn sparse_unordered_ids_are_densified() {
        let ds = parse("1 qid:1 3:3.0 1:1.0\n0 qid:2 2:2.0\n").unwrap();
        assert_eq!(ds.feature_dim, 3);
        assert_eq!(ds.train[0].docs[0].features, vec![1.0, 0.0, 3.0]);
        assert_eq!(ds.train[1].docs[0].features, vec![0.0, 2.0, 0.0]);
    }

    #[test]
    fn malformed_lines_report_line_number() {
        let err = parse("0 qid:1 1:1\nx qid:1 1:2\n").unwrap_err();
        assert!(matches!(err, FoltrError::Parse { line: 2, .. }), "{err}");
        let err = parse("\n0 1:1\n").unwrap_err();
        assert!(matches!(err, FoltrError::Parse { line: 2, .. }));
        let err = parse("0 qid:1 1:1 1:2\n").unwrap_err();
        assert!(matches!(err, FoltrError::Parse { line: 1, .. }));
        let err = parse("0 qid:1 0:1\n").unwrap_err();
        assert!(matches!(err, FoltrError::Parse { .. }));
    }

    #[test]
    fn declared_dimension_is_enforced() {
        let opts = ParseOptions {
            feature_dim: Some(2),
            max_grade: None,
        };
        let err = parse_letor::<f64, _>("0 qid:1 3:1\n".as_bytes(), opts).unwrap_err();
        assert!(matches!(err, FoltrError::Schema(_)));
    }

    #[test]
    fn grade_scale_inference() {
        assert_eq!(parse("1 qid:1 1:1\n").unwrap().max_grade, 2);
        assert_eq!(parse("3 qid:1 1:1\n").unwrap().max_grade, 4);
        let opts = ParseOptions {
            feature_dim: None,
            max_grade: Some(2),
        };
        assert!(parse_letor::<f64, _>("3 qid:1 1:1\n".as_bytes(), opts).is_err());
    }
}
