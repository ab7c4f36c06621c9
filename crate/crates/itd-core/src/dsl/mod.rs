//! The list-transformation hypothesis language.
//!
//! Values are digit lists (`IntList`), hypotheses are `Transformation`
//! trees over a fixed primitive set plus binary composition. The module
//! provides the exact interpreter, a parenthesized-prefix serializer and
//! parser, a canonicalizer, and a weighted grammar sampler. Everything is
//! pure: the same inputs always produce the same outputs.

mod parse;
mod sample;
mod token;

pub use parse::{parse, ParseError, ParseErrorKind};
pub use sample::{sample_program, GrammarWeights};
pub use token::{TokenId, TokenSeq, TokenSeqError, Vocabulary, BOS, BOS_NAME};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Maximum list length.
pub const MAX_LEN: usize = 10;
/// Maximum transformation tree depth (a primitive leaf has depth 1).
pub const MAX_DEPTH: usize = 3;

/// A list of digits 0..=9 with length at most [`MAX_LEN`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct IntList(Vec<u8>);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IntListError {
    #[error("element {0} out of digit range 0..=9")]
    ElementRange(u8),
    #[error("length {0} exceeds maximum {MAX_LEN}")]
    TooLong(usize),
}

impl IntList {
    pub fn new(digits: Vec<u8>) -> Result<Self, IntListError> {
        if digits.len() > MAX_LEN {
            return Err(IntListError::TooLong(digits.len()));
        }
        if let Some(&bad) = digits.iter().find(|&&d| d > 9) {
            return Err(IntListError::ElementRange(bad));
        }
        Ok(IntList(digits))
    }

    pub fn digits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<u8>> for IntList {
    type Error = IntListError;
    fn try_from(v: Vec<u8>) -> Result<Self, Self::Error> {
        IntList::new(v)
    }
}

impl From<IntList> for Vec<u8> {
    fn from(l: IntList) -> Vec<u8> {
        l.0
    }
}

impl fmt::Display for IntList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

/// One observed input/output pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub x: IntList,
    pub y: IntList,
}

/// Primitive list transformations. Integer arguments are validated at
/// construction; see [`Prim::arg_range`] for the per-family ranges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Prim {
    Identity,
    Head,
    Tail,
    Last,
    Init,
    Reverse,
    SortAsc,
    SortDesc,
    Unique,
    Length,
    Take(u8),
    Drop(u8),
    Index(u8),
    Append(u8),
    Prepend(u8),
    RemoveFirst(u8),
    FilterGt(u8),
    FilterLt(u8),
    FilterEq(u8),
    RemoveEq(u8),
    MapAdd(u8),
}

/// Leaf families in fixed declaration order; index doubles as the grammar
/// weight index.
pub const FAMILY_NAMES: [&str; 21] = [
    "identity",
    "head",
    "tail",
    "last",
    "init",
    "reverse",
    "sort_asc",
    "sort_desc",
    "unique",
    "length",
    "take",
    "drop",
    "index",
    "append",
    "prepend",
    "remove_first",
    "filter_gt",
    "filter_lt",
    "filter_eq",
    "remove_eq",
    "map_add",
];

impl Prim {
    pub fn name(&self) -> &'static str {
        match self {
            Prim::Identity => "identity",
            Prim::Head => "head",
            Prim::Tail => "tail",
            Prim::Last => "last",
            Prim::Init => "init",
            Prim::Reverse => "reverse",
            Prim::SortAsc => "sort_asc",
            Prim::SortDesc => "sort_desc",
            Prim::Unique => "unique",
            Prim::Length => "length",
            Prim::Take(_) => "take",
            Prim::Drop(_) => "drop",
            Prim::Index(_) => "index",
            Prim::Append(_) => "append",
            Prim::Prepend(_) => "prepend",
            Prim::RemoveFirst(_) => "remove_first",
            Prim::FilterGt(_) => "filter_gt",
            Prim::FilterLt(_) => "filter_lt",
            Prim::FilterEq(_) => "filter_eq",
            Prim::RemoveEq(_) => "remove_eq",
            Prim::MapAdd(_) => "map_add",
        }
    }

    pub fn arg(&self) -> Option<u8> {
        match *self {
            Prim::Take(k)
            | Prim::Drop(k)
            | Prim::Index(k)
            | Prim::Append(k)
            | Prim::Prepend(k)
            | Prim::RemoveFirst(k)
            | Prim::FilterGt(k)
            | Prim::FilterLt(k)
            | Prim::FilterEq(k)
            | Prim::RemoveEq(k)
            | Prim::MapAdd(k) => Some(k),
            _ => None,
        }
    }

    /// Inclusive argument range for a family name, `None` for nullary ones.
    pub fn arg_range(family: &str) -> Option<(u8, u8)> {
        match family {
            "take" | "drop" => Some((0, 5)),
            "index" => Some((1, 5)),
            "append" | "prepend" => Some((0, 9)),
            "remove_first" => Some((1, 3)),
            "filter_gt" | "filter_lt" | "filter_eq" | "remove_eq" => Some((0, 9)),
            "map_add" => Some((1, 5)),
            _ => None,
        }
    }

    /// Build a primitive from its family name and optional argument,
    /// validating the argument range.
    pub fn from_parts(family: &str, arg: Option<u8>) -> Option<Prim> {
        let range = Prim::arg_range(family);
        match (range, arg) {
            (None, None) => match family {
                "identity" => Some(Prim::Identity),
                "head" => Some(Prim::Head),
                "tail" => Some(Prim::Tail),
                "last" => Some(Prim::Last),
                "init" => Some(Prim::Init),
                "reverse" => Some(Prim::Reverse),
                "sort_asc" => Some(Prim::SortAsc),
                "sort_desc" => Some(Prim::SortDesc),
                "unique" => Some(Prim::Unique),
                "length" => Some(Prim::Length),
                _ => None,
            },
            (Some((lo, hi)), Some(k)) if k >= lo && k <= hi => match family {
                "take" => Some(Prim::Take(k)),
                "drop" => Some(Prim::Drop(k)),
                "index" => Some(Prim::Index(k)),
                "append" => Some(Prim::Append(k)),
                "prepend" => Some(Prim::Prepend(k)),
                "remove_first" => Some(Prim::RemoveFirst(k)),
                "filter_gt" => Some(Prim::FilterGt(k)),
                "filter_lt" => Some(Prim::FilterLt(k)),
                "filter_eq" => Some(Prim::FilterEq(k)),
                "remove_eq" => Some(Prim::RemoveEq(k)),
                "map_add" => Some(Prim::MapAdd(k)),
                _ => None,
            },
            _ => None,
        }
    }
}

/// A hypothesis: a primitive leaf or a binary composition applied
/// first-then-second.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Transformation {
    Prim(Prim),
    Compose(Box<Transformation>, Box<Transformation>),
}

impl Transformation {
    pub fn depth(&self) -> usize {
        match self {
            Transformation::Prim(_) => 1,
            Transformation::Compose(a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    /// Serialize to the token vocabulary, terminated with EOS.
    pub fn tokenize(&self) -> TokenSeq {
        token::tokenize(self)
    }
}

/// Errors raised by the interpreter.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("{prim}: {reason}")]
    Domain {
        prim: &'static str,
        reason: &'static str,
    },
    #[error("result length would exceed {MAX_LEN}")]
    Overflow,
}

/// Apply `f` to `x`. Deterministic; arithmetic is modulo 10 so results stay
/// in the digit alphabet.
pub fn execute(f: &Transformation, x: &IntList) -> Result<IntList, ExecError> {
    match f {
        Transformation::Prim(p) => exec_prim(*p, x),
        Transformation::Compose(a, b) => {
            let mid = execute(a, x)?;
            execute(b, &mid)
        }
    }
}

fn exec_prim(p: Prim, x: &IntList) -> Result<IntList, ExecError> {
    let d = x.digits();
    let need_nonempty = |prim: &'static str| -> Result<(), ExecError> {
        if d.is_empty() {
            Err(ExecError::Domain {
                prim,
                reason: "empty list",
            })
        } else {
            Ok(())
        }
    };
    let out: Vec<u8> = match p {
        Prim::Identity => d.to_vec(),
        Prim::Head => {
            need_nonempty("head")?;
            vec![d[0]]
        }
        Prim::Tail => {
            need_nonempty("tail")?;
            d[1..].to_vec()
        }
        Prim::Last => {
            need_nonempty("last")?;
            vec![d[d.len() - 1]]
        }
        Prim::Init => {
            need_nonempty("init")?;
            d[..d.len() - 1].to_vec()
        }
        Prim::Reverse => d.iter().rev().copied().collect(),
        Prim::SortAsc => {
            let mut v = d.to_vec();
            v.sort_unstable();
            v
        }
        Prim::SortDesc => {
            let mut v = d.to_vec();
            v.sort_unstable_by(|a, b| b.cmp(a));
            v
        }
        Prim::Unique => {
            let mut seen = [false; 10];
            let mut v = Vec::new();
            for &e in d {
                if !seen[e as usize] {
                    seen[e as usize] = true;
                    v.push(e);
                }
            }
            v
        }
        Prim::Length => vec![(d.len() % 10) as u8],
        Prim::Take(k) => d[..d.len().min(k as usize)].to_vec(),
        Prim::Drop(k) => d[d.len().min(k as usize)..].to_vec(),
        Prim::Index(i) => {
            if (i as usize) > d.len() {
                return Err(ExecError::Domain {
                    prim: "index",
                    reason: "position beyond length",
                });
            }
            vec![d[i as usize - 1]]
        }
        Prim::Append(k) => {
            if d.len() >= MAX_LEN {
                return Err(ExecError::Overflow);
            }
            let mut v = d.to_vec();
            v.push(k);
            v
        }
        Prim::Prepend(k) => {
            if d.len() >= MAX_LEN {
                return Err(ExecError::Overflow);
            }
            let mut v = Vec::with_capacity(d.len() + 1);
            v.push(k);
            v.extend_from_slice(d);
            v
        }
        Prim::RemoveFirst(j) => {
            if d.len() < j as usize {
                return Err(ExecError::Domain {
                    prim: "remove_first",
                    reason: "fewer elements than requested",
                });
            }
            d[j as usize..].to_vec()
        }
        Prim::FilterGt(k) => d.iter().copied().filter(|&e| e > k).collect(),
        Prim::FilterLt(k) => d.iter().copied().filter(|&e| e < k).collect(),
        Prim::FilterEq(k) => d.iter().copied().filter(|&e| e == k).collect(),
        Prim::RemoveEq(k) => d.iter().copied().filter(|&e| e != k).collect(),
        Prim::MapAdd(k) => d.iter().map(|&e| (e + k) % 10).collect(),
    };
    IntList::new(out).map_err(|_| ExecError::Overflow)
}

/// Remove `identity` from compositions: `compose(identity, g)` and
/// `compose(g, identity)` flatten to `g`. Idempotent and semantics-preserving.
pub fn canonicalize(f: &Transformation) -> Transformation {
    match f {
        Transformation::Prim(p) => Transformation::Prim(*p),
        Transformation::Compose(a, b) => {
            let a = canonicalize(a);
            let b = canonicalize(b);
            match (&a, &b) {
                (Transformation::Prim(Prim::Identity), _) => b,
                (_, Transformation::Prim(Prim::Identity)) => a,
                _ => Transformation::Compose(Box::new(a), Box::new(b)),
            }
        }
    }
}

impl fmt::Display for Transformation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.tokenize().text(Vocabulary::dsl()))
    }
}

impl FromStr for Transformation {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let seq = TokenSeq::from_text(s, Vocabulary::dsl()).map_err(|e| ParseError {
            pos: e.pos,
            kind: ParseErrorKind::UnknownToken(e.token),
        })?;
        parse(&seq, Vocabulary::dsl())
    }
}

impl Serialize for Transformation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Transformation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn il(v: &[u8]) -> IntList {
        IntList::new(v.to_vec()).unwrap()
    }

    #[test]
    fn interpreter_matches_worked_pairs() {
        let cases: [(Transformation, &[u8], &[u8]); 6] = [
            (Transformation::Prim(Prim::RemoveFirst(2)), &[0, 8, 9, 3, 7, 5, 5], &[9, 3, 7, 5, 5]),
            (Transformation::Prim(Prim::Reverse), &[1, 0, 3, 8], &[8, 3, 0, 1]),
            (
                Transformation::Prim(Prim::FilterGt(5)),
                &[3, 4, 8, 1, 0, 5, 3, 7, 9, 9],
                &[8, 7, 9, 9],
            ),
            (Transformation::Prim(Prim::Append(5)), &[7, 0, 3, 6], &[7, 0, 3, 6, 5]),
            (Transformation::Prim(Prim::Head), &[1, 2], &[1]),
            (Transformation::Prim(Prim::Identity), &[], &[]),
        ];
        for (f, x, want) in cases {
            assert_eq!(execute(&f, &il(x)).unwrap(), il(want), "{f}");
        }
    }

    #[test]
    fn domain_errors_are_reported() {
        assert!(matches!(
            execute(&Transformation::Prim(Prim::Head), &il(&[])),
            Err(ExecError::Domain { prim: "head", .. })
        ));
        assert!(matches!(
            execute(&Transformation::Prim(Prim::Index(5)), &il(&[1, 2])),
            Err(ExecError::Domain { prim: "index", .. })
        ));
        assert_eq!(
            execute(
                &Transformation::Prim(Prim::Append(1)),
                &il(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9])
            ),
            Err(ExecError::Overflow)
        );
    }

    #[test]
    fn compose_applies_first_then_second() {
        let f = Transformation::Compose(
            Box::new(Transformation::Prim(Prim::Tail)),
            Box::new(Transformation::Prim(Prim::Reverse)),
        );
        assert_eq!(execute(&f, &il(&[1, 2, 3])).unwrap(), il(&[3, 2]));
    }

    #[test]
    fn take_and_drop_clamp_while_remove_first_requires_length() {
        assert_eq!(execute(&Transformation::Prim(Prim::Take(5)), &il(&[1, 2])).unwrap(), il(&[1, 2]));
        assert_eq!(execute(&Transformation::Prim(Prim::Drop(5)), &il(&[1, 2])).unwrap(), il(&[]));
        assert!(execute(&Transformation::Prim(Prim::RemoveFirst(3)), &il(&[1, 2])).is_err());
    }

    #[test]
    fn length_wraps_modulo_ten() {
        let full = il(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
        assert_eq!(execute(&Transformation::Prim(Prim::Length), &full).unwrap(), il(&[0]));
        assert_eq!(execute(&Transformation::Prim(Prim::Length), &il(&[7, 7])).unwrap(), il(&[2]));
    }

    #[test]
    fn map_add_wraps_modulo_ten() {
        assert_eq!(
            execute(&Transformation::Prim(Prim::MapAdd(5)), &il(&[7, 8])).unwrap(),
            il(&[2, 3])
        );
    }

    #[test]
    fn canonicalize_strips_identity() {
        let id = || Box::new(Transformation::Prim(Prim::Identity));
        let rev = || Box::new(Transformation::Prim(Prim::Reverse));
        let c = Transformation::Compose(id(), rev());
        assert_eq!(canonicalize(&c), Transformation::Prim(Prim::Reverse));

        let nested = Transformation::Compose(
            Box::new(Transformation::Compose(Box::new(Transformation::Prim(Prim::Tail)), id())),
            Box::new(Transformation::Prim(Prim::SortAsc)),
        );
        assert_eq!(
            canonicalize(&nested),
            Transformation::Compose(
                Box::new(Transformation::Prim(Prim::Tail)),
                Box::new(Transformation::Prim(Prim::SortAsc)),
            )
        );

        // Fixed point on already-canonical forms.
        let r = Transformation::Prim(Prim::Reverse);
        assert_eq!(canonicalize(&r), r);
    }

    #[test]
    fn display_round_trips() {
        let f = Transformation::Compose(
            Box::new(Transformation::Prim(Prim::Tail)),
            Box::new(Transformation::Prim(Prim::Reverse)),
        );
        let text = f.to_string();
        assert_eq!(text, "( compose ( tail ) ( reverse ) )");
        assert_eq!(text.parse::<Transformation>().unwrap(), f);
    }

    #[test]
    fn intlist_rejects_invalid() {
        assert!(IntList::new(vec![10]).is_err());
        assert!(IntList::new(vec![0; 11]).is_err());
    }
}
