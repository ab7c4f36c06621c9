//! Conditional next-token scoring.
//!
//! A [`ContextKey`] is the discrete stand-in for a prompt: either a
//! single-pair feature tuple (GD), a batch feature tuple (IO), or the empty
//! context used for the prior over hypotheses. The [`ScorerTable`] is a
//! smoothed backoff count model over `(context, history) -> next token`.

mod table;

pub use table::{ModelIoError, SampledSeq, ScorerBuilder, ScorerTable};

use crate::dsl::Observation;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Feature tuple for a single observed pair.
///
/// Each feature witnesses a primitive family: the length pair and delta
/// sign separate selectors from growers, the relation flags pick out
/// reverse/sort/filter/affix behavior, and `new_min` exposes the smallest
/// digit introduced by the output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GdFeatures {
    pub len_x: u8,
    pub len_y: u8,
    /// sign(len_y - len_x): -1, 0, or 1.
    pub delta_sign: i8,
    /// [y==x, y==reverse(x), y==sort_asc(x), multiset(y) subset of multiset(x),
    ///  y prefix of x, y suffix of x, x prefix of y, first(y)==first(x),
    ///  last(y)==last(x)]
    pub flags: [bool; 9],
    /// Smallest digit of multiset(y) minus multiset(x), if any digit gained count.
    pub new_min: Option<u8>,
}

/// Batch feature tuple: boolean features conjoined across the batch,
/// integer features aggregated as (min, max), plus the pair count (a
/// 20-pair prompt is a different context than a 5-pair one, mirroring how
/// prompt shape is visible to a sequence model). Order-invariant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IoFeatures {
    pub n_pairs: u8,
    pub flags: [bool; 9],
    pub len_x: (u8, u8),
    pub len_y: (u8, u8),
    pub delta_sign: (i8, i8),
    /// `new_min` encoded with 10 for "none", aggregated as (min, max).
    pub new_min_code: (u8, u8),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ContextKey {
    /// No conditioning: the prior over hypotheses.
    Empty,
    Gd(GdFeatures),
    Io(IoFeatures),
}

fn digit_counts(xs: &[u8]) -> [u8; 10] {
    let mut c = [0u8; 10];
    for &d in xs {
        c[d as usize] += 1;
    }
    c
}

/// Context encoder choice. `Full` is the standard 13-feature tuple;
/// `FlagsOnly` keeps just the boolean relation flags, a deliberately
/// coarser conditioning for probing how much of the gain comes from
/// feature quality.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Encoder {
    #[default]
    Full,
    FlagsOnly,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown encoder {0:?} (expected \"full\" or \"flags-only\")")]
pub struct EncoderParseError(pub String);

impl FromStr for Encoder {
    type Err = EncoderParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Encoder::Full),
            "flags-only" => Ok(Encoder::FlagsOnly),
            other => Err(EncoderParseError(other.to_string())),
        }
    }
}

impl Encoder {
    pub fn gd(&self, obs: &Observation) -> ContextKey {
        let key = encode_gd(obs);
        match self {
            Encoder::Full => key,
            Encoder::FlagsOnly => {
                let ContextKey::Gd(g) = key else { unreachable!() };
                ContextKey::Gd(GdFeatures {
                    len_x: 0,
                    len_y: 0,
                    delta_sign: 0,
                    flags: g.flags,
                    new_min: None,
                })
            }
        }
    }

    pub fn io(&self, batch: &[Observation]) -> ContextKey {
        let key = encode_io(batch);
        match self {
            Encoder::Full => key,
            Encoder::FlagsOnly => {
                let ContextKey::Io(io) = key else { unreachable!() };
                ContextKey::Io(IoFeatures {
                    n_pairs: io.n_pairs,
                    flags: io.flags,
                    len_x: (0, 0),
                    len_y: (0, 0),
                    delta_sign: (0, 0),
                    new_min_code: (0, 0),
                })
            }
        }
    }
}

/// Encode a single observed pair.
pub fn encode_gd(obs: &Observation) -> ContextKey {
    let x = obs.x.digits();
    let y = obs.y.digits();
    let cx = digit_counts(x);
    let cy = digit_counts(y);

    let mut sorted_x = x.to_vec();
    sorted_x.sort_unstable();
    let rev_x: Vec<u8> = x.iter().rev().copied().collect();

    let subset = cy.iter().zip(cx.iter()).all(|(a, b)| a <= b);
    let new_min = (0..10u8).find(|&d| cy[d as usize] > cx[d as usize]);

    let flags = [
        y == x,
        y == rev_x.as_slice(),
        y == sorted_x.as_slice(),
        subset,
        x.starts_with(y),
        x.ends_with(y),
        y.starts_with(x),
        y.first() == x.first(),
        y.last() == x.last(),
    ];
    let delta_sign = match y.len().cmp(&x.len()) {
        std::cmp::Ordering::Less => -1,
        std::cmp::Ordering::Equal => 0,
        std::cmp::Ordering::Greater => 1,
    };
    ContextKey::Gd(GdFeatures {
        len_x: x.len() as u8,
        len_y: y.len() as u8,
        delta_sign,
        flags,
        new_min,
    })
}

/// Encode a nonempty batch of observed pairs. Any permutation of the batch
/// yields the identical key.
pub fn encode_io(batch: &[Observation]) -> ContextKey {
    assert!(!batch.is_empty(), "encode_io requires a nonempty batch");
    assert!(batch.len() <= u8::MAX as usize, "batch too large to encode");
    let mut flags = [true; 9];
    let mut len_x = (u8::MAX, u8::MIN);
    let mut len_y = (u8::MAX, u8::MIN);
    let mut delta_sign = (i8::MAX, i8::MIN);
    let mut new_min_code = (u8::MAX, u8::MIN);
    for obs in batch {
        let ContextKey::Gd(g) = encode_gd(obs) else {
            unreachable!()
        };
        for (acc, f) in flags.iter_mut().zip(g.flags.iter()) {
            *acc &= *f;
        }
        len_x = (len_x.0.min(g.len_x), len_x.1.max(g.len_x));
        len_y = (len_y.0.min(g.len_y), len_y.1.max(g.len_y));
        delta_sign = (delta_sign.0.min(g.delta_sign), delta_sign.1.max(g.delta_sign));
        let code = g.new_min.unwrap_or(10);
        new_min_code = (new_min_code.0.min(code), new_min_code.1.max(code));
    }
    ContextKey::Io(IoFeatures {
        n_pairs: batch.len() as u8,
        flags,
        len_x,
        len_y,
        delta_sign,
        new_min_code,
    })
}

fn sign_str(s: i8) -> &'static str {
    match s {
        -1 => "lt",
        0 => "eq",
        _ => "gt",
    }
}

fn parse_sign(s: &str) -> Option<i8> {
    match s {
        "lt" => Some(-1),
        "eq" => Some(0),
        "gt" => Some(1),
        _ => None,
    }
}

fn flags_str(flags: &[bool; 9]) -> String {
    flags.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

fn parse_flags(s: &str) -> Option<[bool; 9]> {
    if s.len() != 9 {
        return None;
    }
    let mut flags = [false; 9];
    for (i, c) in s.chars().enumerate() {
        flags[i] = match c {
            '1' => true,
            '0' => false,
            _ => return None,
        };
    }
    Some(flags)
}

fn nm_str(code: u8) -> String {
    if code >= 10 {
        "x".to_string()
    } else {
        code.to_string()
    }
}

fn parse_nm(s: &str) -> Option<u8> {
    if s == "x" {
        Some(10)
    } else {
        s.parse::<u8>().ok().filter(|&v| v < 10)
    }
}

impl fmt::Display for ContextKey {
    /// Canonical hyphen-joined rendering; the on-disk form in model files.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContextKey::Empty => write!(f, "empty"),
            ContextKey::Gd(g) => write!(
                f,
                "gd-{}-{}-{}-{}-{}",
                g.len_x,
                g.len_y,
                sign_str(g.delta_sign),
                flags_str(&g.flags),
                nm_str(g.new_min.unwrap_or(10)),
            ),
            ContextKey::Io(io) => write!(
                f,
                "io-{}-{}-{}.{}-{}.{}-{}.{}-{}.{}",
                io.n_pairs,
                flags_str(&io.flags),
                io.len_x.0,
                io.len_x.1,
                io.len_y.0,
                io.len_y.1,
                sign_str(io.delta_sign.0),
                sign_str(io.delta_sign.1),
                nm_str(io.new_min_code.0),
                nm_str(io.new_min_code.1),
            ),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("malformed context key {0:?}")]
pub struct ContextKeyParseError(pub String);

impl FromStr for ContextKey {
    type Err = ContextKeyParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let fail = || ContextKeyParseError(s.to_string());
        if s == "empty" {
            return Ok(ContextKey::Empty);
        }
        let parts: Vec<&str> = s.split('-').collect();
        match parts.as_slice() {
            ["gd", lx, ly, sign, flags, nm] => {
                let nm = parse_nm(nm).ok_or_else(fail)?;
                Ok(ContextKey::Gd(GdFeatures {
                    len_x: lx.parse().map_err(|_| fail())?,
                    len_y: ly.parse().map_err(|_| fail())?,
                    delta_sign: parse_sign(sign).ok_or_else(fail)?,
                    flags: parse_flags(flags).ok_or_else(fail)?,
                    new_min: if nm >= 10 { None } else { Some(nm) },
                }))
            }
            ["io", n_pairs, flags, lx, ly, signs, nms] => {
                fn pair(s: &str) -> Option<(&str, &str)> {
                    s.split_once('.')
                }
                let (lx0, lx1) = pair(lx).ok_or_else(fail)?;
                let (ly0, ly1) = pair(ly).ok_or_else(fail)?;
                let (s0, s1) = pair(signs).ok_or_else(fail)?;
                let (n0, n1) = pair(nms).ok_or_else(fail)?;
                Ok(ContextKey::Io(IoFeatures {
                    n_pairs: n_pairs.parse().map_err(|_| fail())?,
                    flags: parse_flags(flags).ok_or_else(fail)?,
                    len_x: (lx0.parse().map_err(|_| fail())?, lx1.parse().map_err(|_| fail())?),
                    len_y: (ly0.parse().map_err(|_| fail())?, ly1.parse().map_err(|_| fail())?),
                    delta_sign: (parse_sign(s0).ok_or_else(fail)?, parse_sign(s1).ok_or_else(fail)?),
                    new_min_code: (parse_nm(n0).ok_or_else(fail)?, parse_nm(n1).ok_or_else(fail)?),
                }))
            }
            _ => Err(fail()),
        }
    }
}

impl Serialize for ContextKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ContextKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::IntList;

    fn obs(x: &[u8], y: &[u8]) -> Observation {
        Observation {
            x: IntList::new(x.to_vec()).unwrap(),
            y: IntList::new(y.to_vec()).unwrap(),
        }
    }

    #[test]
    fn reverse_pair_sets_reverse_flag() {
        let ContextKey::Gd(g) = encode_gd(&obs(&[1, 0, 3, 8], &[8, 3, 0, 1])) else {
            panic!()
        };
        assert!(g.flags[1], "y == reverse(x)");
        assert_eq!(g.delta_sign, 0);
        assert_eq!(g.len_x, 4);
        assert_eq!(g.len_y, 4);
    }

    #[test]
    fn append_pair_sets_prefix_flag_and_new_min() {
        let ContextKey::Gd(g) = encode_gd(&obs(&[7, 0, 3, 6], &[7, 0, 3, 6, 5])) else {
            panic!()
        };
        assert!(g.flags[6], "x prefix of y");
        assert_eq!(g.delta_sign, 1);
        assert_eq!(g.new_min, Some(5));
    }

    #[test]
    fn empty_pair_uses_slice_semantics() {
        let ContextKey::Gd(g) = encode_gd(&obs(&[], &[])) else { panic!() };
        assert_eq!((g.len_x, g.len_y), (0, 0));
        assert_eq!(g.flags, [true; 9]);
        assert_eq!(g.new_min, None);
    }

    #[test]
    fn io_singleton_bools_equal_gd() {
        let o = obs(&[1, 2, 3], &[3, 2, 1]);
        let ContextKey::Gd(g) = encode_gd(&o) else { panic!() };
        let ContextKey::Io(io) = encode_io(std::slice::from_ref(&o)) else {
            panic!()
        };
        assert_eq!(io.flags, g.flags);
        assert_eq!(io.len_x, (g.len_x, g.len_x));
    }

    #[test]
    fn io_is_permutation_invariant_and_conjoins() {
        let a = obs(&[1, 2], &[2, 1]); // reverse-like
        let b = obs(&[1, 2], &[1, 2]); // identity-like
        let k1 = encode_io(&[a.clone(), b.clone()]);
        let k2 = encode_io(&[b.clone(), a.clone()]);
        assert_eq!(k1, k2);
        let ContextKey::Io(io) = k1 else { panic!() };
        // a has reverse flag, b does not -> conjunction false.
        assert!(!io.flags[1]);
    }

    #[test]
    fn key_string_round_trips() {
        let keys = [
            ContextKey::Empty,
            encode_gd(&obs(&[7, 0, 3, 6], &[7, 0, 3, 6, 5])),
            encode_io(&[obs(&[1, 2], &[2, 1]), obs(&[], &[0])]),
        ];
        for k in keys {
            let s = k.to_string();
            assert_eq!(s.parse::<ContextKey>().unwrap(), k, "{s}");
        }
    }
}
