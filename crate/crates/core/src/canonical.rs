//! Canonical JSON: object keys sorted by code point, no insignificant
//! whitespace, integers only. Signatures and digests are computed over
//! these bytes.

use serde::Serialize;
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum CanonicalError {
    #[error("non-integer number {0} has no canonical form")]
    Float(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub fn to_canonical_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, CanonicalError> {
    canonical_value(&serde_json::to_value(value)?)
}

pub fn canonical_value(value: &Value) -> Result<Vec<u8>, CanonicalError> {
    let mut out = Vec::new();
    write_value(value, &mut out)?;
    Ok(out)
}

fn write_string(s: &str, out: &mut Vec<u8>) {
    // serde_json's string escaping is the standard minimal one.
    out.extend_from_slice(serde_json::to_string(s).expect("string serializes").as_bytes());
}

fn write_value(value: &Value, out: &mut Vec<u8>) -> Result<(), CanonicalError> {
    match value {
        Value::Null => out.extend_from_slice(b"null"),
        Value::Bool(b) => out.extend_from_slice(if *b { b"true" } else { b"false" }),
        Value::Number(n) => {
            if n.is_f64() {
                return Err(CanonicalError::Float(n.to_string()));
            }
            out.extend_from_slice(n.to_string().as_bytes());
        }
        Value::String(s) => write_string(s, out),
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_value(item, out)?;
            }
            out.push(b']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push(b'{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_string(key, out);
                out.push(b':');
                write_value(&map[key], out)?;
            }
            out.push(b'}');
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn sorted_compact_form() {
        let v = json!({"b": [1, {"z": null, "a": true}], "a": "x\"y", "é": -5});
        assert_eq!(
            String::from_utf8(canonical_value(&v).unwrap()).unwrap(),
            r#"{"a":"x\"y","b":[1,{"a":true,"z":null}],"é":-5}"#
        );
    }

    #[test]
    fn floats_rejected() {
        assert!(matches!(canonical_value(&json!({"x": 1.5})), Err(CanonicalError::Float(_))));
    }
}
