//! Recursive-descent parser for parenthesized-prefix token sequences.
//!
//! `parse(tokenize(f)) == f` for every valid transformation; malformed
//! sequences report the offending token position.

use super::token::{TokenId, TokenSeq, Vocabulary};
use super::{Prim, Transformation, MAX_DEPTH};
use std::fmt;
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    Expected(&'static str),
    UnknownPrimitive(String),
    UnknownToken(String),
    MissingArg(String),
    ArgOutOfRange { family: String, arg: u8 },
    UnbalancedParen,
    MissingEos,
    TrailingTokens,
    DepthExceeded,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub struct ParseError {
    /// Index of the offending token (sequence end for truncation errors).
    pub pos: usize,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ParseErrorKind::Expected(what) => write!(f, "expected {what} at token {}", self.pos),
            ParseErrorKind::UnknownPrimitive(name) => {
                write!(f, "unknown primitive {name:?} at token {}", self.pos)
            }
            ParseErrorKind::UnknownToken(name) => {
                write!(f, "unknown token {name:?} at token {}", self.pos)
            }
            ParseErrorKind::MissingArg(family) => {
                write!(f, "{family} needs an argument at token {}", self.pos)
            }
            ParseErrorKind::ArgOutOfRange { family, arg } => {
                write!(f, "argument {arg} out of range for {family} at token {}", self.pos)
            }
            ParseErrorKind::UnbalancedParen => write!(f, "unbalanced parenthesis at token {}", self.pos),
            ParseErrorKind::MissingEos => write!(f, "missing EOS at token {}", self.pos),
            ParseErrorKind::TrailingTokens => write!(f, "trailing tokens at token {}", self.pos),
            ParseErrorKind::DepthExceeded => {
                write!(f, "composition deeper than {MAX_DEPTH} at token {}", self.pos)
            }
        }
    }
}

struct Cursor<'a> {
    ids: &'a [TokenId],
    vocab: &'a Vocabulary,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<TokenId> {
        self.ids.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<TokenId> {
        let t = self.peek();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, kind: ParseErrorKind) -> ParseError {
        ParseError { pos: self.pos, kind }
    }

    fn expr(&mut self, depth: usize) -> Result<Transformation, ParseError> {
        if depth > MAX_DEPTH {
            return Err(self.err(ParseErrorKind::DepthExceeded));
        }
        match self.bump() {
            Some(t) if self.vocab.name(t) == "(" => {}
            Some(_) => {
                self.pos -= 1;
                return Err(self.err(ParseErrorKind::Expected("(")));
            }
            None => return Err(self.err(ParseErrorKind::UnbalancedParen)),
        }
        let head = match self.bump() {
            Some(t) => t,
            None => return Err(self.err(ParseErrorKind::UnbalancedParen)),
        };
        let head_name = self.vocab.name(head).to_string();
        let node = if head_name == "compose" {
            let a = self.expr(depth + 1)?;
            let b = self.expr(depth + 1)?;
            Transformation::Compose(Box::new(a), Box::new(b))
        } else {
            if Prim::arg_range(&head_name).is_none() && Prim::from_parts(&head_name, None).is_none() {
                self.pos -= 1;
                return Err(self.err(ParseErrorKind::UnknownPrimitive(head_name)));
            }
            let arg = if Prim::arg_range(&head_name).is_some() {
                match self.peek().and_then(|t| self.vocab.digit_value(t)) {
                    Some(d) => {
                        self.pos += 1;
                        Some(d)
                    }
                    None => return Err(self.err(ParseErrorKind::MissingArg(head_name))),
                }
            } else {
                None
            };
            match Prim::from_parts(&head_name, arg) {
                Some(p) => Transformation::Prim(p),
                None => {
                    return Err(ParseError {
                        pos: self.pos - 1,
                        kind: ParseErrorKind::ArgOutOfRange {
                            family: head_name,
                            arg: arg.unwrap_or(0),
                        },
                    })
                }
            }
        };
        match self.bump() {
            Some(t) if self.vocab.name(t) == ")" => Ok(node),
            Some(_) => {
                self.pos -= 1;
                Err(self.err(ParseErrorKind::Expected(")")))
            }
            None => Err(self.err(ParseErrorKind::UnbalancedParen)),
        }
    }
}

/// Parse a complete token sequence (expression followed by EOS).
pub fn parse(seq: &TokenSeq, vocab: &Vocabulary) -> Result<Transformation, ParseError> {
    let ids = seq.ids();
    let body = &ids[..ids.len() - 1];
    let mut cur = Cursor { ids: body, vocab, pos: 0 };
    if body.is_empty() {
        return Err(cur.err(ParseErrorKind::Expected("(")));
    }
    let node = cur.expr(1)?;
    if cur.pos != body.len() {
        return Err(cur.err(ParseErrorKind::TrailingTokens));
    }
    Ok(node)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::Prim;

    fn seq(text: &str) -> TokenSeq {
        TokenSeq::from_text(text, Vocabulary::dsl()).unwrap()
    }

    #[test]
    fn parses_simple_and_composed() {
        let v = Vocabulary::dsl();
        assert_eq!(parse(&seq("( reverse )"), v).unwrap(), Transformation::Prim(Prim::Reverse));
        assert_eq!(parse(&seq("( take 3 )"), v).unwrap(), Transformation::Prim(Prim::Take(3)));
        assert_eq!(
            parse(&seq("( compose ( tail ) ( reverse ) )"), v).unwrap(),
            Transformation::Compose(
                Box::new(Transformation::Prim(Prim::Tail)),
                Box::new(Transformation::Prim(Prim::Reverse)),
            )
        );
    }

    #[test]
    fn reports_malformed_sequences() {
        let v = Vocabulary::dsl();
        // Missing argument.
        let e = parse(&seq("( append )"), v).unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::MissingArg(_)), "{e:?}");
        // Arg out of range: take accepts 0..=5.
        let e = parse(&seq("( take 9 )"), v).unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::ArgOutOfRange { .. }), "{e:?}");
        // Unbalanced.
        let e = parse(&seq("( reverse"), v).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnbalancedParen);
        // Trailing garbage.
        let e = parse(&seq("( reverse ) ( tail )"), v).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::TrailingTokens);
        // Digit in head position.
        let e = parse(&seq("( 3 )"), v).unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::UnknownPrimitive(_)), "{e:?}");
    }

    #[test]
    fn depth_cap_enforced() {
        let four_deep = "( compose ( compose ( compose ( tail ) ( head ) ) ( head ) ) ( head ) )";
        let e = parse(&seq(four_deep), Vocabulary::dsl()).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::DepthExceeded);
    }

    #[test]
    fn error_positions_point_at_offender() {
        let v = Vocabulary::dsl();
        let e = parse(&seq("( take 9 )"), v).unwrap_err();
        assert_eq!(e.pos, 2);
    }
}
