//! Token vocabulary and sequences.
//!
//! The scorer and decoders operate on small integer token ids so they can
//! also run over tiny synthetic vocabularies in oracle tests. The DSL
//! vocabulary is the fixed 35-symbol set: parens, primitive names, digit
//! literals, and a terminal EOS.

use super::{Prim, Transformation, FAMILY_NAMES};
use std::fmt;
use std::sync::OnceLock;
use thiserror::Error;

pub type TokenId = u8;

/// Sentinel used only inside n-gram histories for positions before the
/// start of a sequence. Never a real vocabulary entry.
pub const BOS: TokenId = u8::MAX;
pub const BOS_NAME: &str = "<bos>";

pub const EOS_NAME: &str = "<eos>";

/// An ordered token alphabet with a terminal EOS as its last entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
}

impl Vocabulary {
    /// Build from names; the last name is the EOS token.
    pub fn new(names: Vec<String>) -> Self {
        assert!(names.len() >= 2, "vocabulary needs at least one token plus EOS");
        assert!(names.len() < BOS as usize, "vocabulary too large for u8 ids");
        Vocabulary { names }
    }

    /// The DSL vocabulary: `(`, the 22 primitive/compose names, digits
    /// `0`..`9`, `)`, and EOS. Primitive names take lower ids than `)` so
    /// that score ties in the decoders resolve toward parseable
    /// continuations.
    pub fn dsl() -> &'static Vocabulary {
        static V: OnceLock<Vocabulary> = OnceLock::new();
        V.get_or_init(|| {
            let mut names: Vec<String> = vec!["(".into()];
            names.extend(FAMILY_NAMES.iter().map(|s| s.to_string()));
            names.push("compose".into());
            names.extend((0..=9).map(|d| d.to_string()));
            names.push(")".into());
            names.push(EOS_NAME.into());
            Vocabulary::new(names)
        })
    }

    pub fn size(&self) -> usize {
        self.names.len()
    }

    pub fn eos(&self) -> TokenId {
        (self.names.len() - 1) as TokenId
    }

    pub fn name(&self, id: TokenId) -> &str {
        &self.names[id as usize]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> Option<TokenId> {
        self.names.iter().position(|n| n == name).map(|i| i as TokenId)
    }

    /// Digit value for a digit-literal token, if it is one.
    pub fn digit_value(&self, id: TokenId) -> Option<u8> {
        let n = self.name(id);
        if n.len() == 1 {
            n.chars().next().and_then(|c| c.to_digit(10)).map(|d| d as u8)
        } else {
            None
        }
    }
}

/// A token sequence terminated by exactly one EOS.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenSeq {
    ids: Vec<TokenId>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TokenSeqError {
    #[error("sequence does not end with EOS")]
    MissingEos,
    #[error("EOS at interior position {0}")]
    InteriorEos(usize),
    #[error("token id {0} outside vocabulary")]
    BadId(TokenId),
}

/// Unknown token name while reading text.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown token {token:?} at position {pos}")]
pub struct UnknownToken {
    pub pos: usize,
    pub token: String,
}

impl TokenSeq {
    pub fn new(ids: Vec<TokenId>, vocab: &Vocabulary) -> Result<Self, TokenSeqError> {
        let eos = vocab.eos();
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= vocab.size()) {
            return Err(TokenSeqError::BadId(bad));
        }
        match ids.iter().position(|&t| t == eos) {
            None => Err(TokenSeqError::MissingEos),
            Some(p) if p + 1 != ids.len() => Err(TokenSeqError::InteriorEos(p)),
            Some(_) => Ok(TokenSeq { ids }),
        }
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    /// Length including the terminal EOS.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Space-separated token names without the terminal EOS; the on-disk
    /// textual form.
    pub fn text(&self, vocab: &Vocabulary) -> String {
        self.ids[..self.ids.len() - 1]
            .iter()
            .map(|&t| vocab.name(t))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Parse the on-disk textual form (no EOS) back into a sequence.
    pub fn from_text(text: &str, vocab: &Vocabulary) -> Result<Self, UnknownToken> {
        let mut ids = Vec::new();
        for (pos, word) in text.split_whitespace().enumerate() {
            match vocab.id(word) {
                Some(id) if id != vocab.eos() => ids.push(id),
                _ => {
                    return Err(UnknownToken {
                        pos,
                        token: word.to_string(),
                    })
                }
            }
        }
        ids.push(vocab.eos());
        Ok(TokenSeq { ids })
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.text(Vocabulary::dsl()))
    }
}

/// Serialize a transformation as a parenthesized-prefix token sequence.
pub fn tokenize(t: &Transformation) -> TokenSeq {
    let vocab = Vocabulary::dsl();
    let mut ids = Vec::new();
    push_node(t, vocab, &mut ids);
    ids.push(vocab.eos());
    TokenSeq { ids }
}

fn push_node(t: &Transformation, vocab: &Vocabulary, ids: &mut Vec<TokenId>) {
    ids.push(vocab.id("(").unwrap());
    match t {
        Transformation::Prim(p) => {
            ids.push(vocab.id(p.name()).unwrap());
            if let Some(k) = p.arg() {
                ids.push(vocab.id(&k.to_string()).unwrap());
            }
        }
        Transformation::Compose(a, b) => {
            ids.push(vocab.id("compose").unwrap());
            push_node(a, vocab, ids);
            push_node(b, vocab, ids);
        }
    }
    ids.push(vocab.id(")").unwrap());
}

#[allow(dead_code)]
fn _prim_names_cover_vocab() {
    // FAMILY_NAMES drives both the vocabulary and Prim::from_parts; a new
    // primitive must be added in both places or tokenize panics on unwrap.
    let _ = Prim::from_parts("identity", None);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::Prim;

    #[test]
    fn dsl_vocab_layout() {
        let v = Vocabulary::dsl();
        assert_eq!(v.size(), 35);
        assert_eq!(v.name(0), "(");
        assert_eq!(v.name(v.eos()), EOS_NAME);
        assert_eq!(v.digit_value(v.id("7").unwrap()), Some(7));
        assert_eq!(v.digit_value(v.id("take").unwrap()), None);
        // Parseable continuations outrank ')' in score ties.
        assert!(v.id("identity").unwrap() < v.id(")").unwrap());
    }

    #[test]
    fn tokenize_worked_examples() {
        let v = Vocabulary::dsl();
        assert_eq!(tokenize(&Transformation::Prim(Prim::Append(5))).text(v), "( append 5 )");
        assert_eq!(tokenize(&Transformation::Prim(Prim::Reverse)).text(v), "( reverse )");
        let comp = Transformation::Compose(
            Box::new(Transformation::Prim(Prim::Tail)),
            Box::new(Transformation::Prim(Prim::Reverse)),
        );
        assert_eq!(tokenize(&comp).text(v), "( compose ( tail ) ( reverse ) )");
        assert_eq!(*tokenize(&comp).ids().last().unwrap(), v.eos());
    }

    #[test]
    fn token_seq_invariants() {
        let v = Vocabulary::dsl();
        assert_eq!(TokenSeq::new(vec![0, 1], v), Err(TokenSeqError::MissingEos));
        assert_eq!(
            TokenSeq::new(vec![v.eos(), 0, v.eos()], v),
            Err(TokenSeqError::InteriorEos(0))
        );
        assert!(TokenSeq::new(vec![0, 1, v.eos()], v).is_ok());
    }

    #[test]
    fn text_round_trip() {
        let v = Vocabulary::dsl();
        let seq = TokenSeq::from_text("( compose ( take 3 ) ( reverse ) )", v).unwrap();
        assert_eq!(seq.text(v), "( compose ( take 3 ) ( reverse ) )");
        assert!(TokenSeq::from_text("( frobnicate )", v).is_err());
    }
}
