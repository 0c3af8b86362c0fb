//! Versioned plain-text container for named tensors plus string metadata.
//!
//! ```text
//! talkgrade-checkpoint 1
//! meta kind word-seq
//! tensor U_i 128 50
//! 0.0123 -0.04 ...
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! save/load cycle is bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::autodiff::{Shape, Tensor};
use crate::models::{Architecture, ModelKind, Params};

pub const MAGIC: &str = "talkgrade-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad header)")]
    BadHeader,
    #[error("unsupported checkpoint version {0}")]
    Version(String),
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing metadata `{0}`")]
    MissingMeta(String),
    #[error("invalid metadata `{key}` = `{value}`")]
    BadMeta { key: String, value: String },
    #[error("tensor `{name}`: expected shape {expected}, found {found}")]
    ShapeMismatch { name: String, expected: Shape, found: Shape },
    #[error("tensor {index}: expected `{expected}`, found `{found}`")]
    NameMismatch { index: usize, expected: String, found: String },
    #[error("expected {expected} tensors, found {found}")]
    TensorCount { expected: usize, found: usize },
    #[error("architecture mismatch: checkpoint has {found:?}, expected {expected:?}")]
    Architecture { expected: Box<Architecture>, found: Box<Architecture> },
    #[error("metadata key or tensor name `{0}` contains whitespace")]
    BadName(String),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Container {
    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| CheckpointError::MissingMeta(key.to_string()))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let value = self.meta(key)?;
        value.parse().map_err(|_| CheckpointError::BadMeta {
            key: key.to_string(),
            value: value.to_string(),
        })
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = format!("{MAGIC} {VERSION}\n");
        for (k, v) in &self.meta {
            if k.is_empty() || k.contains(char::is_whitespace) {
                return Err(CheckpointError::BadName(k.clone()));
            }
            writeln!(out, "meta {k} {v}").unwrap();
        }
        for (name, t) in &self.tensors {
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(CheckpointError::BadName(name.clone()));
            }
            match t.shape() {
                Shape::Vector(n) => writeln!(out, "tensor {name} {n}").unwrap(),
                Shape::Matrix(r, c) => writeln!(out, "tensor {name} {r} {c}").unwrap(),
            }
            let values: Vec<String> = t.data().iter().map(f64::to_string).collect();
            out.push_str(&values.join(" "));
            out.push('\n');
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let header = lines.next().map(|(_, l)| l).unwrap_or("");
        let mut parts = header.split_whitespace();
        if parts.next() != Some(MAGIC) {
            return Err(CheckpointError::BadHeader);
        }
        match parts.next() {
            Some(v) if v == VERSION.to_string() => {}
            Some(v) => return Err(CheckpointError::Version(v.to_string())),
            None => return Err(CheckpointError::BadHeader),
        }
        let syntax = |line: usize, message: String| CheckpointError::Syntax { line: line + 1, message };
        let mut c = Container::default();
        while let Some((i, line)) = lines.next() {
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                c.meta.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let fields: Vec<&str> = rest.split_whitespace().collect();
                let dims: Vec<usize> = fields[1.min(fields.len())..]
                    .iter()
                    .map(|d| d.parse().map_err(|_| syntax(i, format!("bad dimension `{d}`"))))
                    .collect::<Result<_>>()?;
                let shape = match dims.as_slice() {
                    [n] => Shape::Vector(*n),
                    [r, cols] => Shape::Matrix(*r, *cols),
                    _ => return Err(syntax(i, "expected `tensor name dims...` with 1 or 2 dims".into())),
                };
                let (j, values) = lines.next().ok_or_else(|| syntax(i, "missing tensor values".into()))?;
                let data: Vec<f64> = values
                    .split_whitespace()
                    .map(|v| v.parse().map_err(|_| syntax(j, format!("bad number `{v}`"))))
                    .collect::<Result<_>>()?;
                if data.len() != shape.numel() {
                    return Err(syntax(j, format!("expected {} values, got {}", shape.numel(), data.len())));
                }
                c.tensors.push((fields[0].to_string(), Tensor::new(shape, data).expect("checked length")));
            } else {
                return Err(syntax(i, format!("unexpected line `{line}`")));
            }
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

fn arch_meta(arch: &Architecture) -> [(&'static str, String); 8] {
    [
        ("kind", arch.kind.name().to_string()),
        ("word_dim", arch.word_dim.to_string()),
        ("hidden", arch.hidden.to_string()),
        ("outputs", arch.outputs.to_string()),
        ("pos_dim", arch.pos_dim.to_string()),
        ("dep_dim", arch.dep_dim.to_string()),
        ("n_pos", arch.n_pos.to_string()),
        ("n_dep", arch.n_dep.to_string()),
    ]
}

/// Packs model parameters plus extra metadata.
pub fn params_to_container(params: &Params, extra: &BTreeMap<String, String>) -> Container {
    let mut meta = extra.clone();
    for (k, v) in arch_meta(params.arch()) {
        meta.insert(k.to_string(), v);
    }
    Container {
        meta,
        tensors: params.names().into_iter().zip(params.tensors().iter().cloned()).collect(),
    }
}

pub fn architecture_from(c: &Container) -> Result<Architecture> {
    let kind_str = c.meta("kind")?;
    let kind = ModelKind::parse(kind_str).ok_or_else(|| CheckpointError::BadMeta {
        key: "kind".into(),
        value: kind_str.into(),
    })?;
    Ok(Architecture {
        kind,
        word_dim: c.meta_parse("word_dim")?,
        hidden: c.meta_parse("hidden")?,
        outputs: c.meta_parse("outputs")?,
        pos_dim: c.meta_parse("pos_dim")?,
        dep_dim: c.meta_parse("dep_dim")?,
        n_pos: c.meta_parse("n_pos")?,
        n_dep: c.meta_parse("n_dep")?,
    })
}

/// Rebuilds parameters, checking every name and shape. If `expected` is
/// given the stored architecture must equal it.
pub fn params_from_container(c: &Container, expected: Option<&Architecture>) -> Result<Params> {
    let arch = architecture_from(c)?;
    if let Some(e) = expected {
        if *e != arch {
            return Err(CheckpointError::Architecture {
                expected: Box::new(e.clone()),
                found: Box::new(arch),
            });
        }
    }
    let specs = arch.param_specs();
    if specs.len() != c.tensors.len() {
        return Err(CheckpointError::TensorCount {
            expected: specs.len(),
            found: c.tensors.len(),
        });
    }
    for (index, ((name, shape), (found_name, t))) in specs.iter().zip(&c.tensors).enumerate() {
        if name != found_name {
            return Err(CheckpointError::NameMismatch {
                index,
                expected: name.clone(),
                found: found_name.clone(),
            });
        }
        if *shape != t.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: name.clone(),
                expected: *shape,
                found: t.shape(),
            });
        }
    }
    let tensors = c.tensors.iter().map(|(_, t)| t.clone()).collect();
    Ok(Params::from_tensors(arch, tensors).expect("shapes checked"))
}

pub fn save_params(path: &Path, params: &Params, extra: &BTreeMap<String, String>) -> Result<()> {
    params_to_container(params, extra).save(path)
}

pub fn load_params(path: &Path, expected: Option<&Architecture>) -> Result<(Params, BTreeMap<String, String>)> {
    let c = Container::load(path)?;
    let params = params_from_container(&c, expected)?;
    Ok((params, c.meta))
}
