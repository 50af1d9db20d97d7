//! Output formatting: six significant digits, snake_case JSON, fixed CSV
//! headers.

use serde_json::{json, Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// Rounds to six significant digits.
pub fn sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

/// JSON number with six significant digits; non-finite values become null.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(sig6(x))
    } else {
        Value::Null
    }
}

pub fn opt_num(x: Option<f64>) -> Value {
    x.map_or(Value::Null, num)
}

/// CSV cell with six significant digits.
pub fn cell(x: f64) -> String {
    if !x.is_finite() {
        return String::new();
    }
    let r = sig6(x);
    let mag = r.abs();
    if r == 0.0 || (1e-4..1e15).contains(&mag) {
        format!("{r}")
    } else {
        format!("{r:e}")
    }
}

/// Renders rows under `header`; a header line alone when there are no rows.
pub fn csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Flat JSON objects become CSV with their keys as header.
pub fn objects_to_csv(objects: &[Value], header: &[&str]) -> String {
    let rows = objects.iter().map(|o| {
        header
            .iter()
            .map(|k| match o.get(*k) {
                Some(Value::Number(n)) => n.as_f64().map(cell).unwrap_or_default(),
                Some(Value::Null) | None => String::new(),
                Some(Value::String(s)) => s.clone(),
                Some(other) => other.to_string(),
            })
            .collect()
    });
    csv(header, rows)
}

pub fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

/// Builds an object preserving insertion order of `fields`.
pub fn object(fields: Vec<(&str, Value)>) -> Value {
    let mut m = Map::new();
    for (k, v) in fields {
        m.insert(k.to_string(), v);
    }
    Value::Object(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_digits() {
        assert_eq!(sig6(0.123456789), 0.123457);
        assert_eq!(sig6(325.8), 325.8);
        assert_eq!(cell(1234567.0), "1234570");
        assert_eq!(cell(1.234567e-20), "1.23457e-20");
        assert_eq!(cell(0.0), "0");
        assert_eq!(num(f64::INFINITY), Value::Null);
    }

    #[test]
    fn empty_csv_is_header_only() {
        assert_eq!(csv(&["n", "tau", "pc", "throughput"], Vec::new()), "n,tau,pc,throughput\n");
    }

    #[test]
    fn key_order_is_stable() {
        let v = object(vec![("n", json!(1)), ("tau", num(0.5)), ("pc", num(0.25))]);
        assert_eq!(v.to_string(), r#"{"n":1,"tau":0.5,"pc":0.25}"#);
    }
}
