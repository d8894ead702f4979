//! Serde helpers for `f64` fields that may be infinite.
//!
//! JSON has no infinity literal, so `f64::INFINITY` is written as the string
//! `"inf"`. Plain numbers and the strings `"inf"`, `"infinity"`, `"+inf"`
//! are accepted on input.

use serde::de::{self, Deserializer, Visitor};
use serde::Serializer;
use std::fmt;

pub fn serialize<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
    if value.is_infinite() && *value > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*value)
    }
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    d.deserialize_any(InfVisitor)
}

struct InfVisitor;

impl<'de> Visitor<'de> for InfVisitor {
    type Value = f64;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a number or the string \"inf\"")
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
        Ok(v)
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
        Ok(v as f64)
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
        Ok(v as f64)
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
        parse_f64_or_inf(v).ok_or_else(|| E::invalid_value(de::Unexpected::Str(v), &self))
    }
}

/// Parses a decimal number or an infinity spelling.
pub fn parse_f64_or_inf(s: &str) -> Option<f64> {
    match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" | "+infinity" => Some(f64::INFINITY),
        other => other.parse::<f64>().ok(),
    }
}

#[cfg(test)]
mod tests {
    use serde::{Deserialize, Serialize};

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Holder {
        #[serde(with = "super")]
        x: f64,
    }

    #[test]
    fn infinity_round_trips_as_string() {
        let json = serde_json::to_string(&Holder { x: f64::INFINITY }).unwrap();
        assert_eq!(json, r#"{"x":"inf"}"#);
        let back: Holder = serde_json::from_str(&json).unwrap();
        assert!(back.x.is_infinite());
    }

    #[test]
    fn accepts_numbers_and_integers() {
        let a: Holder = serde_json::from_str(r#"{"x":1e4}"#).unwrap();
        let b: Holder = serde_json::from_str(r#"{"x":10000}"#).unwrap();
        let c: Holder = serde_json::from_str(r#"{"x":"1e4"}"#).unwrap();
        assert_eq!(a, b);
        assert_eq!(b, c);
    }
}
