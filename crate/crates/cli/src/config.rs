//! TOML config loading: `--set` overrides, sweep expansion and typed
//! deserialization with key paths in every error.

use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use toml::{Table, Value};

/// A configuration problem, reported with the offending key path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.key.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "`{}`: {}", self.key, self.message)
        }
    }
}

/// Fields whose value is itself a list. An array there is a plain value;
/// an array of arrays is a sweep.
const LIST_FIELDS: &[&str] = &[
    "seeds",
    "separation",
    "milestones",
    "values",
    "hidden_widths",
    "view_mask",
    "input_mask",
    "n_list",
    "arms",
];

pub fn read_table(path: &Path) -> Result<Table, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
    text.parse::<Table>()
        .map_err(|e| ConfigError::new("", format!("{}: {}", path.display(), e.message())))
}

#[derive(Debug, Clone, PartialEq)]
enum Segment {
    Key(String),
    Index(usize),
}

fn parse_path(path: &str) -> Result<Vec<Segment>, ConfigError> {
    let mut out = Vec::new();
    for part in path.split('.') {
        let (name, mut rest) = match part.find('[') {
            Some(i) => (&part[..i], &part[i..]),
            None => (part, ""),
        };
        if name.is_empty() {
            return Err(ConfigError::new(path, "empty key segment"));
        }
        out.push(Segment::Key(name.to_string()));
        while !rest.is_empty() {
            let close = rest
                .find(']')
                .ok_or_else(|| ConfigError::new(path, "unclosed `[`"))?;
            let idx = rest[1..close]
                .parse()
                .map_err(|_| ConfigError::new(path, "index must be a non-negative integer"))?;
            out.push(Segment::Index(idx));
            rest = &rest[close + 1..];
        }
    }
    Ok(out)
}

/// Parses the right-hand side of `--set key=value` as a TOML value, falling
/// back to a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies one `key=value` override, creating intermediate tables.
pub fn apply_override(root: &mut Table, assignment: &str) -> Result<(), ConfigError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::new(assignment, "override must look like key=value"))?;
    let path = path.trim();
    let segments = parse_path(path)?;
    let value = parse_value(raw.trim());
    let mut slot: &mut Value = {
        let Segment::Key(first) = &segments[0] else { unreachable!() };
        if segments.len() == 1 {
            root.insert(first.clone(), value);
            return Ok(());
        }
        root.entry(first.clone()).or_insert_with(|| Value::Table(Table::new()))
    };
    for (i, seg) in segments.iter().enumerate().skip(1) {
        let last = i + 1 == segments.len();
        slot = match seg {
            Segment::Key(k) => {
                let Value::Table(t) = slot else {
                    return Err(ConfigError::new(path, "cannot index into a non-table value"));
                };
                if last {
                    t.insert(k.clone(), value);
                    return Ok(());
                }
                t.entry(k.clone()).or_insert_with(|| Value::Table(Table::new()))
            }
            Segment::Index(idx) => {
                let Value::Array(a) = slot else {
                    return Err(ConfigError::new(path, "cannot index into a non-array value"));
                };
                let len = a.len();
                let cell = a
                    .get_mut(*idx)
                    .ok_or_else(|| ConfigError::new(path, format!("index {idx} out of range ({len} entries)")))?;
                if last {
                    *cell = value;
                    return Ok(());
                }
                cell
            }
        };
    }
    Ok(())
}

/// One point of a sweep: the concrete table and the swept assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub table: Table,
    pub assignments: Vec<(String, Value)>,
}

fn is_sweep(key: &str, value: &Value) -> bool {
    let Value::Array(items) = value else { return false };
    if items.is_empty() || items.iter().all(Value::is_table) {
        return false;
    }
    if LIST_FIELDS.contains(&key) {
        items.iter().all(Value::is_array)
    } else {
        true
    }
}

fn collect_axes(prefix: &str, table: &Table, out: &mut Vec<(String, Vec<Value>)>) {
    for (k, v) in table {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => collect_axes(&path, t, out),
            Value::Array(items) if items.iter().all(Value::is_table) => {
                for (i, item) in items.iter().enumerate() {
                    if let Value::Table(t) = item {
                        collect_axes(&format!("{path}[{i}]"), t, out);
                    }
                }
            }
            _ if is_sweep(k, v) => {
                let Value::Array(items) = v else { unreachable!() };
                out.push((path, items.clone()));
            }
            _ => {}
        }
    }
}

fn set_path(root: &mut Table, path: &str, value: Value) {
    let segments = parse_path(path).expect("paths built by collect_axes are well formed");
    let mut slot: Option<&mut Value> = None;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        let next = match (seg, slot.take()) {
            (Segment::Key(k), None) => {
                if last {
                    root.insert(k.clone(), value);
                    return;
                }
                root.get_mut(k).expect("path exists")
            }
            (Segment::Key(k), Some(Value::Table(t))) => {
                if last {
                    t.insert(k.clone(), value);
                    return;
                }
                t.get_mut(k).expect("path exists")
            }
            (Segment::Index(idx), Some(Value::Array(a))) => {
                if last {
                    a[*idx] = value;
                    return;
                }
                &mut a[*idx]
            }
            _ => unreachable!("path follows the table structure"),
        };
        slot = Some(next);
    }
}

/// Expands every sweep axis into the cartesian product, in key order with the
/// last axis varying fastest.
pub fn expand_sweeps(table: &Table) -> Vec<SweepPoint> {
    let mut axes = Vec::new();
    collect_axes("", table, &mut axes);
    let mut points = vec![SweepPoint {
        table: table.clone(),
        assignments: Vec::new(),
    }];
    for (path, values) in &axes {
        let mut next = Vec::with_capacity(points.len() * values.len());
        for p in &points {
            for v in values {
                let mut t = p.table.clone();
                set_path(&mut t, path, v.clone());
                let mut assignments = p.assignments.clone();
                assignments.push((path.clone(), v.clone()));
                next.push(SweepPoint { table: t, assignments });
            }
        }
        points = next;
    }
    points
}

/// Deserializes a table into `T`, reporting the failing key path.
pub fn typed<T: DeserializeOwned>(table: &Table) -> Result<T, ConfigError> {
    let value = Value::Table(table.clone());
    serde_path_to_error::deserialize::<_, T>(value).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { String::new() } else { path };
        let message = e.inner().to_string();
        let key = match missing_or_unknown_field(&message) {
            Some(field) if path.is_empty() => field.to_string(),
            Some(field) if !path.ends_with(field) => format!("{path}.{field}"),
            _ => path,
        };
        ConfigError::new(key, message)
    })
}

/// Extracts `x` from serde's "missing field `x`" and "unknown field `x`".
fn missing_or_unknown_field(message: &str) -> Option<&str> {
    let rest = message
        .strip_prefix("missing field `")
        .or_else(|| message.strip_prefix("unknown field `"))?;
    rest.split('`').next()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    fn table(s: &str) -> Table {
        s.parse().unwrap()
    }

    #[test]
    fn overrides_create_and_replace() {
        let mut t = table("[strategy]\nexchange_period = 1\n");
        apply_override(&mut t, "strategy.exchange_period=5").unwrap();
        apply_override(&mut t, "optimizer.kind=sgd").unwrap();
        apply_override(&mut t, "seeds=[4, 5]").unwrap();
        assert_eq!(t["strategy"]["exchange_period"].as_integer(), Some(5));
        assert_eq!(t["optimizer"]["kind"].as_str(), Some("sgd"));
        assert_eq!(t["seeds"].as_array().unwrap().len(), 2);
        assert!(apply_override(&mut t, "no-equals-sign").is_err());
    }

    #[test]
    fn indexed_override_into_array_of_tables() {
        let mut t = table("[[models]]\ninput_dim = 3\n");
        apply_override(&mut t, "models[0].input_dim=7").unwrap();
        assert_eq!(t["models"][0]["input_dim"].as_integer(), Some(7));
        assert!(apply_override(&mut t, "models[3].input_dim=7").is_err());
    }

    #[test]
    fn sweep_expansion_is_cartesian() {
        let t = table("seeds = [0, 1]\n[strategy]\nn_groups = [2, 4]\nexchange_period = [1, 5, 10]\n");
        let pts = expand_sweeps(&t);
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[0].assignments.len(), 2);
        // keys in sorted order, last axis fastest
        assert_eq!(pts[1].table["strategy"]["n_groups"].as_integer(), Some(4));
        assert_eq!(pts[2].table["strategy"]["exchange_period"].as_integer(), Some(5));
        // plain list fields are not axes
        assert!(pts.iter().all(|p| p.table["seeds"].as_array().unwrap().len() == 2));
    }

    #[test]
    fn list_of_lists_sweeps_a_list_field() {
        let t = table("[[models]]\nhidden_widths = [[8], [16, 8]]\n");
        let pts = expand_sweeps(&t);
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[1].assignments[0].0, "models[0].hidden_widths");
    }

    #[derive(Debug, Deserialize)]
    #[serde(deny_unknown_fields)]
    #[allow(dead_code)]
    struct Inner {
        period: u64,
    }

    #[derive(Debug, Deserialize)]
    #[serde(deny_unknown_fields)]
    #[allow(dead_code)]
    struct Outer {
        strategy: Inner,
    }

    #[test]
    fn typed_errors_name_the_key() {
        let e = typed::<Outer>(&table("[strategy]\n")).unwrap_err();
        assert_eq!(e.key, "strategy.period");
        let e = typed::<Outer>(&table("[strategy]\nperiod = \"x\"\n")).unwrap_err();
        assert_eq!(e.key, "strategy.period");
        let e = typed::<Outer>(&table("[strategy]\nperiod = 1\nextra = 2\n")).unwrap_err();
        assert_eq!(e.key, "strategy.extra");
        let e = typed::<Outer>(&table("")).unwrap_err();
        assert_eq!(e.key, "strategy");
    }
}
