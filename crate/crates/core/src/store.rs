//! Token vocabularies and their on-disk formats.
//!
//! A [`Vocabulary`] pairs an ordered token list with a `d × |V|` matrix whose
//! column `i` is the embedding of token `i`. Values are kept as `f32`, the
//! precision pretrained tables ship in, and widened to `f64` once at
//! construction for all downstream math.
//!
//! Two formats are supported:
//!
//! * **BTEX v1** (little-endian): magic `BTEX`, `u32` version = 1, `u32` d,
//!   `u64` |V|, then |V| column records of d `f32` values, then |V| token
//!   records (`u16` byte length + UTF-8 bytes).
//! * **CSV**: one row per token, `token,x1,...,xd`, no header.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"BTEX";
pub const VERSION: u32 = 1;
/// Bytes before the first column record: magic, version, d, |V|.
pub const HEADER_LEN: usize = 4 + 4 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Binary,
    Csv,
}

impl Format {
    /// Picks [`Format::Binary`] when the file starts with the BTEX magic.
    pub fn detect(path: impl AsRef<Path>) -> Result<Format> {
        use std::io::Read;
        let path = path.as_ref();
        let mut head = [0u8; 4];
        let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let n = file.read(&mut head).map_err(|e| Error::io(path, e))?;
        Ok(if n == 4 && head == MAGIC {
            Format::Binary
        } else {
            Format::Csv
        })
    }
}

/// Either a token string or a column index.
#[derive(Debug, Clone, Copy)]
pub enum TokenKey<'a> {
    Token(&'a str),
    Index(usize),
}

impl<'a> From<&'a str> for TokenKey<'a> {
    fn from(s: &'a str) -> Self {
        TokenKey::Token(s)
    }
}

impl From<usize> for TokenKey<'_> {
    fn from(i: usize) -> Self {
        TokenKey::Index(i)
    }
}

/// An immutable vocabulary of token embeddings.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    lookup: HashMap<String, usize>,
    raw: DMatrix<f32>,
    wide: DMatrix<f64>,
}

impl Vocabulary {
    /// Builds a vocabulary from tokens and a `d × |V|` matrix.
    pub fn new(tokens: Vec<String>, matrix: DMatrix<f32>) -> Result<Self> {
        if matrix.nrows() == 0 {
            return Err(Error::DimensionMismatch(
                "embedding dimension must be at least 1".into(),
            ));
        }
        if tokens.is_empty() {
            return Err(Error::DimensionMismatch(
                "vocabulary must contain at least one token".into(),
            ));
        }
        if tokens.len() != matrix.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} tokens but {} embedding columns",
                tokens.len(),
                matrix.ncols()
            )));
        }
        for (j, col) in matrix.column_iter().enumerate() {
            if let Some(i) = col.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    token: tokens[j].clone(),
                    column: i,
                });
            }
        }
        let mut lookup = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if lookup.insert(t.clone(), i).is_some() {
                return Err(Error::DuplicateToken(t.clone()));
            }
        }
        let wide = matrix.map(f64::from);
        Ok(Vocabulary {
            tokens,
            lookup,
            raw: matrix,
            wide,
        })
    }

    pub fn dim(&self) -> usize {
        self.raw.nrows()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    /// The widened embedding matrix `A_V` (`d × |V|`).
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.wide
    }

    /// The stored single-precision matrix.
    pub fn raw_matrix(&self) -> &DMatrix<f32> {
        &self.raw
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.lookup.get(token).copied()
    }

    pub fn resolve<'a>(&self, key: impl Into<TokenKey<'a>>) -> Result<usize> {
        match key.into() {
            TokenKey::Token(t) => self.index_of(t).ok_or_else(|| Error::UnknownToken(t.to_string())),
            TokenKey::Index(i) if i < self.len() => Ok(i),
            TokenKey::Index(i) => Err(Error::IndexOutOfRange {
                index: i,
                len: self.len(),
            }),
        }
    }

    /// Returns a copy of the embedding for a token or index.
    pub fn get_embedding<'a>(&self, key: impl Into<TokenKey<'a>>) -> Result<DVector<f64>> {
        let i = self.resolve(key)?;
        Ok(self.wide.column(i).into_owned())
    }

    pub fn load(path: impl AsRef<Path>, format: Format) -> Result<Self> {
        let path = path.as_ref();
        match format {
            Format::Binary => {
                let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
                let (tokens, matrix) = decode_btex(&bytes)?;
                Vocabulary::new(tokens, matrix)
            }
            Format::Csv => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                parse_csv(&text)
            }
        }
    }

    /// Loads a file whose format is sniffed from its first bytes.
    pub fn load_auto(path: impl AsRef<Path>) -> Result<Self> {
        let format = Format::detect(&path)?;
        Self::load(path, format)
    }

    pub fn save(&self, path: impl AsRef<Path>, format: Format) -> Result<()> {
        let path = path.as_ref();
        let bytes = match format {
            Format::Binary => encode_btex(&self.tokens, &self.raw)?,
            Format::Csv => self.to_csv()?.into_bytes(),
        };
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    fn to_csv(&self) -> Result<String> {
        let mut out = String::new();
        for (token, col) in self.tokens.iter().zip(self.raw.column_iter()) {
            if token.contains([',', '\n', '\r']) {
                return Err(Error::InvalidArgument(format!(
                    "token {token:?} cannot be written as CSV"
                )));
            }
            out.push_str(token);
            for x in col.iter() {
                // f32 Display is the shortest string that parses back exactly.
                let _ = write!(out, ",{x}");
            }
            out.push('\n');
        }
        Ok(out)
    }
}

/// Loads the vocabulary at `path` in the given format.
pub fn load_vocabulary(path: impl AsRef<Path>, format: Format) -> Result<Vocabulary> {
    Vocabulary::load(path, format)
}

/// Writes `vocab` to `path` in the given format.
pub fn save_vocabulary(vocab: &Vocabulary, path: impl AsRef<Path>, format: Format) -> Result<()> {
    vocab.save(path, format)
}

fn parse_csv(text: &str) -> Result<Vocabulary> {
    let mut tokens = Vec::new();
    let mut values: Vec<f32> = Vec::new();
    let mut dim: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let token = fields.next().unwrap_or_default().to_string();
        let start = values.len();
        for (col, field) in fields.enumerate() {
            let x: f32 = field
                .trim()
                .parse()
                .map_err(|_| Error::Malformed(format!("line {}: cannot parse {field:?} as a number", lineno + 1)))?;
            if !x.is_finite() {
                return Err(Error::NonFinite { token, column: col });
            }
            values.push(x);
        }
        let row_dim = values.len() - start;
        match dim {
            None if row_dim == 0 => {
                return Err(Error::Malformed(format!(
                    "line {}: token {token:?} has no values",
                    lineno + 1
                )))
            }
            None => dim = Some(row_dim),
            Some(d) if d != row_dim => {
                return Err(Error::DimensionMismatch(format!(
                    "line {}: expected {d} values, found {row_dim}",
                    lineno + 1
                )))
            }
            Some(_) => {}
        }
        tokens.push(token);
    }
    let Some(d) = dim else {
        return Err(Error::Malformed("CSV vocabulary is empty".into()));
    };
    let matrix = DMatrix::from_column_slice(d, tokens.len(), &values);
    Vocabulary::new(tokens, matrix)
}

/// Serializes labels and a column-major `f32` matrix in BTEX v1 layout.
pub fn encode_btex(tokens: &[String], matrix: &DMatrix<f32>) -> Result<Vec<u8>> {
    if tokens.len() != matrix.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{} tokens but {} columns",
            tokens.len(),
            matrix.ncols()
        )));
    }
    let d =
        u32::try_from(matrix.nrows()).map_err(|_| Error::InvalidArgument("embedding dimension exceeds u32".into()))?;
    let token_bytes: usize = tokens.iter().map(|t| 2 + t.len()).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + matrix.len() * 4 + token_bytes);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    out.extend_from_slice(&(tokens.len() as u64).to_le_bytes());
    // nalgebra storage is column-major, so this is column record order.
    for x in matrix.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for t in tokens {
        let len = u16::try_from(t.len())
            .map_err(|_| Error::InvalidArgument(format!("token of {} bytes exceeds u16 length", t.len())))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(t.as_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::DimensionMismatch(format!("payload truncated while reading {what} at byte {}", self.pos))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses a BTEX v1 buffer into labels and a `d × n` matrix without
/// enforcing vocabulary invariants.
pub fn decode_btex(bytes: &[u8]) -> Result<(Vec<String>, DMatrix<f32>)> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur
        .take(4, "magic")
        .map_err(|_| Error::Malformed("file too short for BTEX header".into()))?;
    if magic != MAGIC {
        return Err(Error::Malformed(format!("bad magic bytes {magic:02x?}")));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::Malformed(format!("unsupported BTEX version {version}")));
    }
    let d = cur.u32("dimension")? as usize;
    let n = cur.u64("vocabulary size")?;
    if d == 0 {
        return Err(Error::Malformed("header declares d = 0".into()));
    }
    let n = usize::try_from(n).map_err(|_| Error::Malformed(format!("vocabulary size {n} too large")))?;
    let payload = d
        .checked_mul(n)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| Error::Malformed("header sizes overflow".into()))?;
    let body = cur.take(payload, "embedding columns")?;
    let values: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut tokens = Vec::with_capacity(n);
    for i in 0..n {
        let len = cur.u16("token length")? as usize;
        let raw = cur.take(len, "token bytes")?;
        let token = std::str::from_utf8(raw).map_err(|_| Error::Malformed(format!("token {i} is not valid UTF-8")))?;
        tokens.push(token.to_string());
    }
    if cur.pos != bytes.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} trailing bytes after {n} token records",
            bytes.len() - cur.pos
        )));
    }
    Ok((tokens, DMatrix::from_vec(d, n, values)))
}
