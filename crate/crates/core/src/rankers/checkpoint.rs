//! Flat-float text checkpoints.
//!
//! ```text
//! foltr-checkpoint v1
//! kind params
//! arch mlp 5 64
//! len 449
//! 0.0123
//! ...
//! ```
//!
//! `kind` is `params` or `delta`; `arch` is `linear <features>` or
//! `mlp <features> <hidden>`. One value per line in layout order, written
//! with the shortest decimal form that parses back to the same `f64`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Architecture, ModelDelta, RankerParams};
use crate::error::{FoltrError, Result};
use crate::scalar::Scalar;

const MAGIC: &str = "foltr-checkpoint v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    Params,
    Delta,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint<S> {
    Params(RankerParams<S>),
    Delta(ModelDelta<S>),
}

impl<S: Scalar> Checkpoint<S> {
    pub fn kind(&self) -> CheckpointKind {
        match self {
            Self::Params(_) => CheckpointKind::Params,
            Self::Delta(_) => CheckpointKind::Delta,
        }
    }

    fn parts(&self) -> (Architecture, &[S]) {
        match self {
            Self::Params(p) => (p.arch(), p.values()),
            Self::Delta(d) => (d.arch(), d.values()),
        }
    }

    pub fn into_params(self) -> Result<RankerParams<S>> {
        match self {
            Self::Params(p) => Ok(p),
            Self::Delta(_) => Err(FoltrError::Schema("checkpoint holds a delta, expected params".into())),
        }
    }

    pub fn into_delta(self) -> Result<ModelDelta<S>> {
        match self {
            Self::Delta(d) => Ok(d),
            Self::Params(_) => Err(FoltrError::Schema("checkpoint holds params, expected a delta".into())),
        }
    }
}

pub fn write_checkpoint<S: Scalar, W: Write>(ckpt: &Checkpoint<S>, mut out: W) -> Result<()> {
    let (arch, values) = ckpt.parts();
    writeln!(out, "{MAGIC}")?;
    let kind = match ckpt.kind() {
        CheckpointKind::Params => "params",
        CheckpointKind::Delta => "delta",
    };
    writeln!(out, "kind {kind}")?;
    match arch {
        Architecture::Linear { features } => writeln!(out, "arch linear {features}")?,
        Architecture::Mlp { features, hidden } => writeln!(out, "arch mlp {features} {hidden}")?,
    }
    writeln!(out, "len {}", values.len())?;
    for v in values {
        writeln!(out, "{}", v.as_f64())?;
    }
    Ok(())
}

pub fn read_checkpoint<S: Scalar, R: BufRead>(reader: R) -> Result<Checkpoint<S>> {
    let mut lines = reader.lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, l)) => Ok((i + 1, l?.trim().to_string())),
            None => Err(FoltrError::Parse {
                line: 0,
                message: format!("checkpoint truncated before {what}"),
            }),
        }
    };
    let bad = |line: usize, message: String| FoltrError::Parse { line, message };

    let (n, magic) = next("header")?;
    if magic != MAGIC {
        return Err(bad(n, format!("expected {MAGIC:?}")));
    }
    let (n, kind) = next("kind")?;
    let kind = match kind.as_str() {
        "kind params" => CheckpointKind::Params,
        "kind delta" => CheckpointKind::Delta,
        other => return Err(bad(n, format!("unknown kind line {other:?}"))),
    };
    let (n, arch_line) = next("arch")?;
    let toks: Vec<&str> = arch_line.split_whitespace().collect();
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad(n, format!("invalid size {s:?}")));
    let arch = match toks.as_slice() {
        ["arch", "linear", f] => Architecture::Linear { features: num(f)? },
        ["arch", "mlp", f, h] => Architecture::Mlp {
            features: num(f)?,
            hidden: num(h)?,
        },
        _ => return Err(bad(n, format!("invalid arch line {arch_line:?}"))),
    };
    let (n, len_line) = next("len")?;
    let len: usize = len_line
        .strip_prefix("len ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| bad(n, format!("invalid len line {len_line:?}")))?;
    if len != arch.param_len() {
        return Err(FoltrError::Shape {
            expected: arch.param_len(),
            found: len,
        });
    }
    let mut values = Vec::with_capacity(len);
    for _ in 0..len {
        let (n, v) = next("values")?;
        let v: f64 = v.parse().map_err(|_| bad(n, format!("invalid value {v:?}")))?;
        values.push(S::lit(v));
    }
    Ok(match kind {
        CheckpointKind::Params => Checkpoint::Params(RankerParams::from_values(arch, values)?),
        CheckpointKind::Delta => Checkpoint::Delta(ModelDelta::from_values(arch, values)?),
    })
}

pub fn write_checkpoint_file<S: Scalar>(ckpt: &Checkpoint<S>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    write_checkpoint(ckpt, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint_file<S: Scalar>(path: &Path) -> Result<Checkpoint<S>> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream;

    #[test]
    fn round_trips_bit_exact() {
        let arch = Architecture::Mlp { features: 3, hidden: 4 };
        let p = RankerParams::<f64>::init(arch, &mut stream(2, &[]));
        let mut buf = Vec::new();
        write_checkpoint(&Checkpoint::Params(p.clone()), &mut buf).unwrap();
        let back = read_checkpoint::<f64, _>(buf.as_slice()).unwrap().into_params().unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn rejects_length_mismatch_and_wrong_kind() {
        let text = "foltr-checkpoint v1\nkind delta\narch linear 2\nlen 3\n1\n2\n3\n";
        assert!(matches!(
            read_checkpoint::<f64, _>(text.as_bytes()),
            Err(FoltrError::Shape { .. })
        ));
        let text = "foltr-checkpoint v1\nkind delta\narch linear 2\nlen 2\n1\n2\n";
        let ck = read_checkpoint::<f64, _>(text.as_bytes()).unwrap();
        assert!(ck.clone().into_params().is_err());
        assert_eq!(ck.into_delta().unwrap().values(), &[1.0, 2.0]);
    }
}
