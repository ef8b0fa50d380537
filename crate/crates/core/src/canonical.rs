//! Canonical JSON: object keys sorted, no insignificant whitespace.

use serde::Serialize;

use crate::crypto::{hash, Digest256};

pub fn to_value<T: Serialize + ?Sized>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("in-memory values always serialize")
}

pub fn to_vec<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    // serde_json::Map is a BTreeMap here, so a round trip through Value sorts keys.
    serde_json::to_vec(&to_value(value)).expect("values always serialize")
}

pub fn to_string<T: Serialize + ?Sized>(value: &T) -> String {
    String::from_utf8(to_vec(value)).expect("serde_json emits utf-8")
}

pub fn digest<T: Serialize + ?Sized>(value: &T) -> Digest256 {
    hash(&to_vec(value))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Unsorted {
        zebra: u32,
        apple: u32,
    }

    #[test]
    fn keys_are_sorted() {
        assert_eq!(to_string(&Unsorted { zebra: 1, apple: 2 }), r#"{"apple":2,"zebra":1}"#);
    }
}
