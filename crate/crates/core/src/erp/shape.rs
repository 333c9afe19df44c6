//! Structural checks of API payloads against the shape fixtures shipped in
//! `fixtures/api`. A shape is JSON:
//!
//! * `"string"`, `"integer"`, `"number"`, `"boolean"`, `"any"`; a leading
//!   `?` admits null; `"enum:a|b"` restricts a string;
//! * `[s]` is an array whose every element matches `s`;
//! * an object lists exactly the keys allowed; a key ending in `?` may be
//!   absent; the single key `"*"` describes a map with arbitrary keys.

use serde_json::Value;

pub fn conforms(value: &Value, shape: &Value) -> Result<(), String> {
    check(value, shape, "$")
}

fn check(v: &Value, shape: &Value, path: &str) -> Result<(), String> {
    match shape {
        Value::String(s) => check_scalar(v, s, path),
        Value::Array(items) => {
            let [inner] = items.as_slice() else {
                return Err(format!("{path}: array shapes take exactly one element shape"));
            };
            let arr = v.as_array().ok_or_else(|| format!("{path}: expected array, got {v}"))?;
            arr.iter().enumerate().try_for_each(|(i, e)| check(e, inner, &format!("{path}[{i}]")))
        }
        Value::Object(fields) => {
            let obj = v.as_object().ok_or_else(|| format!("{path}: expected object, got {v}"))?;
            if let (1, Some(inner)) = (fields.len(), fields.get("*")) {
                return obj.iter().try_for_each(|(k, e)| check(e, inner, &format!("{path}.{k}")));
            }
            for (key, inner) in fields {
                let (name, optional) = match key.strip_suffix('?') {
                    Some(n) => (n, true),
                    None => (key.as_str(), false),
                };
                match obj.get(name) {
                    Some(e) => check(e, inner, &format!("{path}.{name}"))?,
                    None if optional => {}
                    None => return Err(format!("{path}: missing key {name}")),
                }
            }
            for k in obj.keys() {
                if !fields.contains_key(k) && !fields.contains_key(&format!("{k}?")) {
                    return Err(format!("{path}: unexpected key {k}"));
                }
            }
            Ok(())
        }
        other => Err(format!("{path}: invalid shape {other}")),
    }
}

fn check_scalar(v: &Value, spec: &str, path: &str) -> Result<(), String> {
    let (spec, nullable) = match spec.strip_prefix('?') {
        Some(s) => (s, true),
        None => (spec, false),
    };
    if v.is_null() && nullable {
        return Ok(());
    }
    let ok = match spec {
        "any" => true,
        "string" => v.is_string(),
        "integer" => v.is_i64() || v.is_u64(),
        "number" => v.is_number(),
        "boolean" => v.is_boolean(),
        _ => match spec.strip_prefix("enum:") {
            Some(alts) => v.as_str().is_some_and(|s| alts.split('|').any(|a| a == s)),
            None => return Err(format!("{path}: unknown scalar shape {spec:?}")),
        },
    };
    if ok {
        Ok(())
    } else {
        Err(format!("{path}: expected {spec}, got {v}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn scalars_arrays_objects() {
        let shape = json!({"a": "integer", "b?": "?string", "c": ["enum:x|y"], "m": {"*": "boolean"}});
        conforms(&json!({"a": 1, "c": ["x", "y"], "m": {"k": true}}), &shape).unwrap();
        conforms(&json!({"a": 1, "b": null, "c": [], "m": {}}), &shape).unwrap();
        assert!(conforms(&json!({"a": "1", "c": [], "m": {}}), &shape).is_err());
        assert!(conforms(&json!({"a": 1, "c": ["z"], "m": {}}), &shape).is_err());
        assert!(conforms(&json!({"a": 1, "c": [], "m": {}, "extra": 0}), &shape).is_err());
        assert!(conforms(&json!({"c": [], "m": {}}), &shape).is_err());
        assert!(conforms(&json!({"a": 1, "c": [], "m": {"k": 1}}), &shape).is_err());
    }
}
