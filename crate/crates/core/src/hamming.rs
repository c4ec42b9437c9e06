//! Packed binary hash codes and Hamming arithmetic.
//!
//! A code of length `l` lives in `{-1, +1}^l`. Bit value 1 encodes +1 and
//! bit value 0 encodes -1; bits past `l` in the last word are always zero.
//!
//! The `.codes` text format stores one code per line using `+` and `-`,
//! with an optional row-aligned `.labels` companion holding one decimal
//! integer per line.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fsutil;

const WORD_BITS: usize = 64;

#[inline]
fn words_for(len: usize) -> usize {
    len.div_ceil(WORD_BITS)
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitCode {
    len: usize,
    words: Vec<u64>,
}

impl BitCode {
    /// All -1 code of length `len`.
    pub fn zeros(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::Encoding("code length must be at least 1".into()));
        }
        Ok(Self {
            len,
            words: vec![0; words_for(len)],
        })
    }

    /// All +1 code of length `len`.
    pub fn ones(len: usize) -> Result<Self> {
        let mut c = Self::zeros(len)?;
        for w in c.words.iter_mut() {
            *w = u64::MAX;
        }
        c.clear_padding();
        Ok(c)
    }

    pub fn from_signs(signs: &[i8]) -> Result<Self> {
        let mut c = Self::zeros(signs.len())?;
        for (j, &s) in signs.iter().enumerate() {
            match s {
                1 => c.words[j / WORD_BITS] |= 1 << (j % WORD_BITS),
                -1 => {}
                other => {
                    return Err(Error::Encoding(format!(
                        "value {other} at position {j} is not +1 or -1"
                    )))
                }
            }
        }
        Ok(c)
    }

    /// `true` maps to +1.
    pub fn from_bits(bits: &[bool]) -> Result<Self> {
        let mut c = Self::zeros(bits.len())?;
        for (j, &b) in bits.iter().enumerate() {
            if b {
                c.words[j / WORD_BITS] |= 1 << (j % WORD_BITS);
            }
        }
        Ok(c)
    }

    /// Builds a code from raw words, zeroing any padding bits.
    pub fn from_words(len: usize, words: Vec<u64>) -> Result<Self> {
        if len == 0 {
            return Err(Error::Encoding("code length must be at least 1".into()));
        }
        if words.len() != words_for(len) {
            return Err(Error::dim(words_for(len), words.len()));
        }
        let mut c = Self { len, words };
        c.clear_padding();
        Ok(c)
    }

    pub fn to_signs(&self) -> Vec<i8> {
        (0..self.len).map(|j| self.sign(j)).collect()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn bit(&self, j: usize) -> bool {
        assert!(j < self.len, "bit index {j} out of range for length {}", self.len);
        (self.words[j / WORD_BITS] >> (j % WORD_BITS)) & 1 == 1
    }

    #[inline]
    pub fn sign(&self, j: usize) -> i8 {
        if self.bit(j) {
            1
        } else {
            -1
        }
    }

    #[inline]
    pub fn set_bit(&mut self, j: usize, value: bool) {
        assert!(j < self.len, "bit index {j} out of range for length {}", self.len);
        let mask = 1u64 << (j % WORD_BITS);
        if value {
            self.words[j / WORD_BITS] |= mask;
        } else {
            self.words[j / WORD_BITS] &= !mask;
        }
    }

    pub fn complement(&self) -> Self {
        let mut c = Self {
            len: self.len,
            words: self.words.iter().map(|w| !w).collect(),
        };
        c.clear_padding();
        c
    }

    /// Number of positions where the codes differ.
    pub fn hamming(&self, other: &Self) -> Result<u32> {
        if self.len != other.len {
            return Err(Error::dim(self.len, other.len));
        }
        Ok(self.hamming_unchecked(other))
    }

    #[inline]
    pub(crate) fn hamming_unchecked(&self, other: &Self) -> u32 {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    /// True when every padding bit is zero.
    pub fn is_canonical(&self) -> bool {
        let rem = self.len % WORD_BITS;
        rem == 0 || self.words.last().is_some_and(|w| w >> rem == 0)
    }

    fn clear_padding(&mut self) {
        let rem = self.len % WORD_BITS;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    fn parse_line(line: &str) -> std::result::Result<Self, String> {
        let mut bits = Vec::with_capacity(line.len());
        for (col, ch) in line.chars().enumerate() {
            match ch {
                '+' => bits.push(true),
                '-' => bits.push(false),
                other => return Err(format!("unexpected character {other:?} at column {}", col + 1)),
            }
        }
        Self::from_bits(&bits).map_err(|e| e.to_string())
    }
}

impl fmt::Display for BitCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for j in 0..self.len {
            f.write_str(if self.bit(j) { "+" } else { "-" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitCode({self})")
    }
}

impl std::str::FromStr for BitCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse_line(s).map_err(Error::Encoding)
    }
}

impl Serialize for BitCode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BitCode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Hamming distance between two equal-length codes.
pub fn hamming_distance(a: &BitCode, b: &BitCode) -> Result<u32> {
    a.hamming(b)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeMatrix {
    code_len: usize,
    rows: Vec<BitCode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<usize>>,
}

impl CodeMatrix {
    pub fn new(rows: Vec<BitCode>) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Input("code matrix needs at least one row".into()))?;
        let code_len = first.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != code_len) {
            return Err(Error::dim(code_len, bad.len()));
        }
        Ok(Self {
            code_len,
            rows,
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.rows.len() {
            return Err(Error::dim(self.rows.len(), labels.len()));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn code_len(&self) -> usize {
        self.code_len
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[BitCode] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &BitCode {
        &self.rows[i]
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn into_rows(self) -> Vec<BitCode> {
        self.rows
    }

    /// Hamming distance from every row to `code`.
    pub fn distances_to(&self, code: &BitCode) -> Result<Vec<u32>> {
        if code.len() != self.code_len {
            return Err(Error::dim(self.code_len, code.len()));
        }
        Ok(self.rows.iter().map(|r| r.hamming_unchecked(code)).collect())
    }

    pub fn to_codes_text(&self) -> String {
        let mut out = String::with_capacity(self.rows.len() * (self.code_len + 1));
        for r in &self.rows {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }

    pub fn to_labels_text(&self) -> Option<String> {
        self.labels.as_ref().map(|labels| {
            labels.iter().map(|l| format!("{l}\n")).collect::<String>()
        })
    }

    /// Parses `.codes` text. `origin` is only used in error messages.
    pub fn parse_codes(text: &str, origin: &Path) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let mut rows: Vec<BitCode> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let code = BitCode::parse_line(line).map_err(|m| parse_err(line_no, m))?;
            if let Some(first) = rows.first() {
                if code.len() != first.len() {
                    return Err(parse_err(
                        line_no,
                        format!("row has {} bits, expected {}", code.len(), first.len()),
                    ));
                }
            }
            rows.push(code);
        }
        if rows.is_empty() {
            return Err(parse_err(1, "file contains no codes".into()));
        }
        Self::new(rows)
    }

    pub fn parse_labels(text: &str, origin: &Path, expected_rows: usize) -> Result<Vec<usize>> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let labels = text
            .lines()
            .enumerate()
            .map(|(i, l)| {
                l.trim()
                    .parse::<usize>()
                    .map_err(|e| parse_err(i + 1, format!("bad label {l:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if labels.len() != expected_rows {
            return Err(parse_err(
                labels.len().min(expected_rows) + 1,
                format!("{} labels for {} codes", labels.len(), expected_rows),
            ));
        }
        Ok(labels)
    }
}

/// Companion labels path: `x.codes` -> `x.labels`.
pub fn labels_path(codes_path: &Path) -> std::path::PathBuf {
    codes_path.with_extension("labels")
}

/// Reads a `.codes` file and, if present, its `.labels` companion.
pub fn read_codes(path: &Path) -> Result<CodeMatrix> {
    let text = fsutil::read_to_string(path)?;
    let matrix = CodeMatrix::parse_codes(&text, path)?;
    let lpath = labels_path(path);
    if lpath.exists() {
        let ltext = fsutil::read_to_string(&lpath)?;
        let labels = CodeMatrix::parse_labels(&ltext, &lpath, matrix.n_rows())?;
        return matrix.with_labels(labels);
    }
    Ok(matrix)
}

/// Writes the `.codes` file and, when labels are attached, the `.labels` file.
pub fn write_codes(matrix: &CodeMatrix, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, matrix.to_codes_text().as_bytes())?;
    if let Some(labels) = matrix.to_labels_text() {
        fsutil::write_atomic(&labels_path(path), labels.as_bytes())?;
    }
    Ok(())
}
