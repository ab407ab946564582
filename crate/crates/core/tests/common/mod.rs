//! Document generators and brute-force oracles shared by property tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use crdtsim_core::JsonValue;
use proptest::prelude::*;

/// Key names announce the kind of value they hold (`s*` text, `l*` list,
/// `m*` map), so independently generated documents never disagree about
/// the shape at a path. Text directly under maps is a constant derived
/// from the path unless the map sits inside a list element, which no
/// other document can address.
const KEYS: [&str; 6] = ["s0", "s1", "l0", "l1", "m0", "m1"];

fn text() -> BoxedStrategy<JsonValue> {
    "[a-z0-9]{0,3}".prop_map(JsonValue::Str).boxed()
}

fn list_item(depth: usize) -> BoxedStrategy<JsonValue> {
    if depth == 0 {
        return text();
    }
    prop_oneof![
        2 => text(),
        2 => map_at(depth - 1, String::new(), true),
        1 => list_of(depth - 1),
    ]
    .boxed()
}

fn list_of(depth: usize) -> BoxedStrategy<JsonValue> {
    prop::collection::vec(list_item(depth), 1..4)
        .prop_map(JsonValue::List)
        .boxed()
}

fn map_at(depth: usize, path: String, in_list: bool) -> BoxedStrategy<JsonValue> {
    let keys: Vec<&'static str> = if depth == 0 {
        KEYS.iter().copied().filter(|k| k.starts_with('s')).collect()
    } else {
        KEYS.to_vec()
    };
    let max = keys.len();
    prop::sample::subsequence(keys, 1..=max)
        .prop_flat_map(move |chosen| {
            let entries: Vec<BoxedStrategy<(String, JsonValue)>> = chosen
                .into_iter()
                .map(|k| {
                    let child = format!("{path}/{k}");
                    let value = match &k[..1] {
                        "s" if in_list => text(),
                        "s" => Just(JsonValue::Str(child.clone())).boxed(),
                        "l" => list_of(depth - 1),
                        _ => map_at(depth - 1, child, in_list),
                    };
                    value.prop_map(move |v| (k.to_string(), v)).boxed()
                })
                .collect();
            entries.prop_map(|pairs| JsonValue::Map(pairs.into_iter().collect()))
        })
        .boxed()
}

/// A top-level map document of bounded nesting.
pub fn doc() -> BoxedStrategy<JsonValue> {
    map_at(3, String::new(), false)
}

/// Brute-force union: maps merge key-wise, lists concatenate in document
/// order, text keeps the last value.
pub fn union_oracle<'a>(docs: impl IntoIterator<Item = &'a JsonValue>) -> JsonValue {
    let mut acc = BTreeMap::new();
    for d in docs {
        match d {
            JsonValue::Map(m) => union_into(&mut acc, m),
            other => panic!("oracle expects map documents, got {other}"),
        }
    }
    JsonValue::Map(acc)
}

fn union_into(acc: &mut BTreeMap<String, JsonValue>, doc: &BTreeMap<String, JsonValue>) {
    for (k, v) in doc {
        match (acc.get_mut(k), v) {
            (Some(JsonValue::Map(a)), JsonValue::Map(b)) => union_into(a, b),
            (Some(JsonValue::List(a)), JsonValue::List(b)) => a.extend(b.iter().cloned()),
            (Some(JsonValue::Str(a)), JsonValue::Str(b)) => *a = b.clone(),
            (None, v) => {
                acc.insert(k.clone(), v.clone());
            }
            (Some(a), b) => panic!("kind clash at {k}: {a} vs {b}"),
        }
    }
}

/// Every text leaf with its path, list positions erased, sorted.
pub fn leaf_multiset(doc: &JsonValue) -> Vec<(String, String)> {
    let mut out = Vec::new();
    collect_leaves(doc, String::new(), &mut out);
    out.sort();
    out
}

fn collect_leaves(doc: &JsonValue, path: String, out: &mut Vec<(String, String)>) {
    match doc {
        JsonValue::Str(s) => out.push((path, s.clone())),
        JsonValue::List(items) => {
            for item in items {
                collect_leaves(item, format!("{path}/[]"), out);
            }
        }
        JsonValue::Map(m) => {
            for (k, v) in m {
                collect_leaves(v, format!("{path}/{k}"), out);
            }
        }
    }
}
