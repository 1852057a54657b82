//! Substituting a learned embedding into a prompt's embedding matrix.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::store::{decode_btex, encode_btex, Vocabulary};

pub const PLACEHOLDER: &str = "*";
pub const DEFAULT_N_MAX: usize = 77;

/// A pre-tokenized prompt with exactly one placeholder, padded to `n_max`
/// rows with a terminator token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    tokens: Vec<String>,
    n_max: usize,
    terminator: String,
}

impl PromptTemplate {
    pub fn new(tokens: Vec<String>, n_max: usize, terminator: impl Into<String>) -> Result<Self> {
        let placeholders = tokens.iter().filter(|t| *t == PLACEHOLDER).count();
        if placeholders != 1 {
            return Err(Error::Template(format!(
                "expected exactly one {PLACEHOLDER:?} placeholder, found {placeholders}"
            )));
        }
        if n_max == 0 {
            return Err(Error::Template("n_max must be at least 1".into()));
        }
        if tokens.len() > n_max {
            return Err(Error::Template(format!(
                "{} tokens exceed n_max = {n_max}",
                tokens.len()
            )));
        }
        Ok(PromptTemplate {
            tokens,
            n_max,
            terminator: terminator.into(),
        })
    }

    /// Splits `text` on whitespace.
    pub fn parse(text: &str, n_max: usize, terminator: impl Into<String>) -> Result<Self> {
        Self::new(text.split_whitespace().map(str::to_string).collect(), n_max, terminator)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn terminator(&self) -> &str {
        &self.terminator
    }

    pub fn placeholder_row(&self) -> usize {
        self.tokens
            .iter()
            .position(|t| t == PLACEHOLDER)
            .expect("validated at construction")
    }
}

/// The `n_max × d` prompt embedding matrix `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrixY {
    pub matrix: DMatrix<f64>,
    pub placeholder_row: usize,
    /// Token occupying each row, terminator rows included.
    pub row_tokens: Vec<String>,
}

/// Frozen lookups for every prompt token, `v_star` at the placeholder, and
/// the terminator embedding on the remaining rows.
pub fn combine(template: &PromptTemplate, v_star: &DVector<f64>, vocab: &Vocabulary) -> Result<EmbeddingMatrixY> {
    let d = vocab.dim();
    if v_star.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "learned embedding has length {}, vocabulary dimension is {d}",
            v_star.len()
        )));
    }
    let terminator = vocab.resolve(template.terminator())?;
    let mut sources = Vec::with_capacity(template.n_max());
    for t in template.tokens() {
        sources.push(if t == PLACEHOLDER {
            None
        } else {
            Some(vocab.resolve(t.as_str())?)
        });
    }
    sources.resize(template.n_max(), Some(terminator));

    let a = vocab.matrix();
    let mut matrix = DMatrix::zeros(template.n_max(), d);
    for (row, src) in sources.iter().enumerate() {
        match src {
            Some(col) => matrix.row_mut(row).copy_from(&a.column(*col).transpose()),
            None => matrix.row_mut(row).copy_from(&v_star.transpose()),
        }
    }
    let mut row_tokens = template.tokens().to_vec();
    row_tokens.resize(template.n_max(), template.terminator().to_string());
    Ok(EmbeddingMatrixY {
        matrix,
        placeholder_row: template.placeholder_row(),
        row_tokens,
    })
}

/// Location of a serialized `y` awaiting an external generation pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationHandle {
    pub path: PathBuf,
}

/// Row labels double as the layout note: column `i` of the file is row `i`
/// of `y`, labelled `"{i}:{token}"`.
fn row_label(i: usize, token: &str) -> String {
    format!("{i}:{token}")
}

/// Encodes `y` as BTEX v1 with `d` rows and one column per prompt row.
/// Values are narrowed to `f32` like every BTEX payload.
pub fn encode_y(y: &EmbeddingMatrixY) -> Result<Vec<u8>> {
    let labels: Vec<String> = y.row_tokens.iter().enumerate().map(|(i, t)| row_label(i, t)).collect();
    let columns = y.matrix.transpose().map(|x| x as f32);
    encode_btex(&labels, &columns)
}

pub fn decode_y(bytes: &[u8]) -> Result<EmbeddingMatrixY> {
    let (labels, columns) = decode_btex(bytes)?;
    let mut row_tokens = Vec::with_capacity(labels.len());
    for (i, label) in labels.iter().enumerate() {
        let token = label
            .strip_prefix(&format!("{i}:"))
            .ok_or_else(|| Error::Malformed(format!("row label {label:?} does not start with {i}:")))?;
        row_tokens.push(token.to_string());
    }
    let placeholder_row = match row_tokens.iter().position(|t| t == PLACEHOLDER) {
        Some(p) if row_tokens.iter().filter(|t| *t == PLACEHOLDER).count() == 1 => p,
        _ => {
            return Err(Error::Malformed(
                "serialized prompt needs exactly one placeholder row".into(),
            ))
        }
    };
    Ok(EmbeddingMatrixY {
        matrix: columns.transpose().map(f64::from),
        placeholder_row,
        row_tokens,
    })
}

/// Writes `y` to `path`. No image is produced; the file is the hand-off to
/// whatever text encoder and sampler consume it.
pub fn generate_stub(y: &EmbeddingMatrixY, path: impl AsRef<Path>) -> Result<GenerationHandle> {
    let path = path.as_ref();
    fs::write(path, encode_y(y)?).map_err(|e| Error::io(path, e))?;
    Ok(GenerationHandle {
        path: path.to_path_buf(),
    })
}

pub fn read_y(path: impl AsRef<Path>) -> Result<EmbeddingMatrixY> {
    let path = path.as_ref();
    decode_y(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
