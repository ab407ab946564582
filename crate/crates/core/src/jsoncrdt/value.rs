//! Plain JSON documents restricted to text leaves, lists and maps.

use std::collections::BTreeMap;
use std::fmt;

use serde_json::Value;

use super::CrdtError;

/// An application-visible JSON document.
///
/// Leaves are always text. Numbers and booleans must be rendered as strings
/// before they reach the merge path; [`JsonValue::from_serde_lenient`] does
/// that conversion for callers that want it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum JsonValue {
    Str(String),
    List(Vec<JsonValue>),
    Map(BTreeMap<String, JsonValue>),
}

impl JsonValue {
    pub fn str(s: impl Into<String>) -> Self {
        JsonValue::Str(s.into())
    }

    pub fn empty_map() -> Self {
        JsonValue::Map(BTreeMap::new())
    }

    pub fn as_map(&self) -> Option<&BTreeMap<String, JsonValue>> {
        match self {
            JsonValue::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[JsonValue]> {
        match self {
            JsonValue::List(l) => Some(l),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            JsonValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            JsonValue::Str(_) => "string",
            JsonValue::List(_) => "list",
            JsonValue::Map(_) => "map",
        }
    }

    /// Strict conversion: any number, boolean or null is a type error.
    pub fn from_serde(value: &Value) -> Result<Self, CrdtError> {
        Self::convert(value, "$", false)
    }

    /// Like [`from_serde`](Self::from_serde) but renders numbers and booleans
    /// as their JSON text. Null is still rejected.
    pub fn from_serde_lenient(value: &Value) -> Result<Self, CrdtError> {
        Self::convert(value, "$", true)
    }

    fn convert(value: &Value, path: &str, lenient: bool) -> Result<Self, CrdtError> {
        match value {
            Value::String(s) => Ok(JsonValue::Str(s.clone())),
            Value::Array(items) => items
                .iter()
                .enumerate()
                .map(|(i, v)| Self::convert(v, &format!("{path}[{i}]"), lenient))
                .collect::<Result<Vec<_>, _>>()
                .map(JsonValue::List),
            Value::Object(entries) => entries
                .iter()
                .map(|(k, v)| Ok((k.clone(), Self::convert(v, &format!("{path}.{k}"), lenient)?)))
                .collect::<Result<BTreeMap<_, _>, CrdtError>>()
                .map(JsonValue::Map),
            Value::Number(n) if lenient => Ok(JsonValue::Str(n.to_string())),
            Value::Bool(b) if lenient => Ok(JsonValue::Str(b.to_string())),
            other => Err(CrdtError::UnsupportedType {
                path: path.to_string(),
                found: serde_kind(other),
            }),
        }
    }

    pub fn to_serde(&self) -> Value {
        match self {
            JsonValue::Str(s) => Value::String(s.clone()),
            JsonValue::List(items) => Value::Array(items.iter().map(JsonValue::to_serde).collect()),
            JsonValue::Map(entries) => Value::Object(
                entries
                    .iter()
                    .map(|(k, v)| (k.clone(), v.to_serde()))
                    .collect(),
            ),
        }
    }

    pub fn parse(text: &str) -> Result<Self, CrdtError> {
        let value: Value = serde_json::from_str(text).map_err(|e| CrdtError::Decode(e.to_string()))?;
        Self::from_serde(&value)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CrdtError> {
        let value: Value =
            serde_json::from_slice(bytes).map_err(|e| CrdtError::Decode(e.to_string()))?;
        Self::from_serde(&value)
    }

    /// Compact UTF-8 encoding with map keys in lexicographic order and list
    /// elements in their stored order. Equal documents always encode to
    /// equal bytes.
    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_canonical(&mut out);
        out
    }

    pub fn to_canonical_string(&self) -> String {
        String::from_utf8(self.to_canonical_bytes()).expect("canonical encoding is UTF-8")
    }

    fn write_canonical(&self, out: &mut Vec<u8>) {
        match self {
            JsonValue::Str(s) => write_json_string(s, out),
            JsonValue::List(items) => {
                out.push(b'[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(b',');
                    }
                    item.write_canonical(out);
                }
                out.push(b']');
            }
            JsonValue::Map(entries) => {
                out.push(b'{');
                for (i, (k, v)) in entries.iter().enumerate() {
                    if i > 0 {
                        out.push(b',');
                    }
                    write_json_string(k, out);
                    out.push(b':');
                    v.write_canonical(out);
                }
                out.push(b'}');
            }
        }
    }

    /// Number of text leaves in the document.
    pub fn leaf_count(&self) -> usize {
        match self {
            JsonValue::Str(_) => 1,
            JsonValue::List(items) => items.iter().map(JsonValue::leaf_count).sum(),
            JsonValue::Map(entries) => entries.values().map(JsonValue::leaf_count).sum(),
        }
    }
}

fn write_json_string(s: &str, out: &mut Vec<u8>) {
    // serde_json's string escaping is already deterministic.
    let encoded = serde_json::to_string(s).expect("string serialization cannot fail");
    out.extend_from_slice(encoded.as_bytes());
}

fn serde_kind(value: &Value) -> &'static str {
    match value {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "list",
        Value::Object(_) => "map",
    }
}

impl fmt::Display for JsonValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_canonical_string())
    }
}

impl From<&str> for JsonValue {
    fn from(s: &str) -> Self {
        JsonValue::Str(s.to_string())
    }
}

impl From<String> for JsonValue {
    fn from(s: String) -> Self {
        JsonValue::Str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn rejects_numbers_in_strict_mode() {
        let err = JsonValue::from_serde(&json!({"a": [{"t": 25}]})).unwrap_err();
        match err {
            CrdtError::UnsupportedType { path, found } => {
                assert_eq!(path, "$.a[0].t");
                assert_eq!(found, "number");
            }
            other => panic!("unexpected error {other:?}"),
        }
        assert!(JsonValue::from_serde(&json!(null)).is_err());
    }

    #[test]
    fn lenient_renders_scalars_as_text() {
        let v = JsonValue::from_serde_lenient(&json!({"t": 25, "ok": true})).unwrap();
        assert_eq!(v.to_canonical_string(), r#"{"ok":"true","t":"25"}"#);
        assert!(JsonValue::from_serde_lenient(&json!({"x": null})).is_err());
    }

    #[test]
    fn canonical_form_sorts_keys_and_escapes() {
        let v = JsonValue::parse(r#"{"b": "1", "a": ["x\"y", {"z": "é"}]}"#).unwrap();
        assert_eq!(v.to_canonical_string(), r#"{"a":["x\"y",{"z":"é"}],"b":"1"}"#);
        let back = JsonValue::from_bytes(&v.to_canonical_bytes()).unwrap();
        assert_eq!(back, v);
    }
}
