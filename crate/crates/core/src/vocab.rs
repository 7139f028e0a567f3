//! Shared coordinate vocabulary: uniform quantization of normalized box
//! values into tokens `[1, nbins]` plus the two special tokens.
//!
//! Token ids: coordinate bins occupy `1..=nbins`; `cmd = nbins + 1` is the
//! generation-start prompt (input-embedding only, never predicted);
//! `end = nbins + 2` is the training-time terminator. The output head has
//! `nbins + 1` rows: bin token `b` maps to row `b - 1` and `end` to the
//! last row.

use crate::bbox::{BBox, BoxFrame};
use crate::error::{CoreError, Result};

pub type Token = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CoordVocab {
    nbins: u32,
}

/// Token views of one training box: the teacher-forcing input prefix and
/// the shifted target sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncodedBox {
    /// `[cmd, x, y, w, h]`
    pub input: [Token; 5],
    /// `[x, y, w, h, end]`
    pub target: [Token; 5],
}

impl CoordVocab {
    pub fn new(nbins: u32) -> Result<Self> {
        if nbins == 0 {
            return Err(CoreError::contract("CoordVocab::new", "nbins must be positive"));
        }
        Ok(Self { nbins })
    }

    pub fn nbins(&self) -> u32 {
        self.nbins
    }

    pub fn cmd_token(&self) -> Token {
        self.nbins + 1
    }

    pub fn end_token(&self) -> Token {
        self.nbins + 2
    }

    pub fn is_coordinate(&self, token: Token) -> bool {
        (1..=self.nbins).contains(&token)
    }

    /// Output-head width: one row per bin plus the end row.
    pub fn head_dim(&self) -> usize {
        self.nbins as usize + 1
    }

    /// Input-embedding table height: bins, index 0 (unused), and cmd.
    pub fn embed_rows(&self) -> usize {
        self.nbins as usize + 2
    }

    /// Head row of a predictable token (coordinate bin or end).
    pub fn token_row(&self, token: Token) -> Result<usize> {
        if self.is_coordinate(token) {
            Ok(token as usize - 1)
        } else if token == self.end_token() {
            Ok(self.nbins as usize)
        } else {
            Err(CoreError::contract("token_row", format!("token {token} is not predictable")))
        }
    }

    pub fn quantize(&self, v: f64) -> Result<Token> {
        if v.is_nan() {
            return Err(CoreError::contract("quantize", "NaN input"));
        }
        let v = v.clamp(0.0, 1.0);
        let raw = (v * self.nbins as f64).floor() as i64 + 1;
        Ok(raw.clamp(1, self.nbins as i64) as Token)
    }

    /// Bin center of a coordinate token.
    pub fn dequantize(&self, token: Token) -> Result<f64> {
        if !self.is_coordinate(token) {
            return Err(CoreError::contract(
                "dequantize",
                format!("token {token} outside [1, {}]", self.nbins),
            ));
        }
        Ok((token as f64 - 0.5) / self.nbins as f64)
    }

    pub fn encode_box(&self, b: &BBox) -> Result<EncodedBox> {
        if b.frame != BoxFrame::Normalized {
            return Err(CoreError::contract(
                "encode_box",
                format!("box must be normalized, got {:?}", b.frame),
            ));
        }
        let x = self.quantize(b.x)?;
        let y = self.quantize(b.y)?;
        let w = self.quantize(b.w)?;
        let h = self.quantize(b.h)?;
        Ok(EncodedBox {
            input: [self.cmd_token(), x, y, w, h],
            target: [x, y, w, h, self.end_token()],
        })
    }

    /// Rebuild a normalized box from 4 coordinate tokens; extents are
    /// clamped up to one bin width so positivity holds.
    pub fn decode_tokens(&self, tokens: &[Token; 4]) -> Result<BBox> {
        if let Some(&bad) = tokens.iter().find(|&&t| !self.is_coordinate(t)) {
            return Err(CoreError::DegenerateDecode { token: bad });
        }
        let min_extent = 1.0 / self.nbins as f64;
        let x = self.dequantize(tokens[0])?;
        let y = self.dequantize(tokens[1])?;
        let w = self.dequantize(tokens[2])?.max(min_extent);
        let h = self.dequantize(tokens[3])?.max(min_extent);
        BBox::normalized(x, y, w, h)
    }
}
