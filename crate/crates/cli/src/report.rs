//! Ordered key-value reports with a text and a JSON rendering.
//!
//! Floats are printed with 17 significant digits so that re-parsing a report
//! reproduces the in-memory values exactly.

#[derive(Debug, Clone)]
pub enum Value {
    Float(f64),
    Int(i64),
    Str(String),
    Bool(bool),
    Undefined,
}

#[derive(Debug, Default)]
pub struct Report {
    entries: Vec<(String, Value)>,
}

impl Report {
    pub fn new(command: &str) -> Self {
        let mut r = Report::default();
        r.push_int("schema_version", 1);
        r.push_str("command", command);
        r
    }

    pub fn push_f64(&mut self, key: impl Into<String>, v: f64) {
        self.entries.push((key.into(), Value::Float(v)));
    }

    pub fn push_int(&mut self, key: impl Into<String>, v: i64) {
        self.entries.push((key.into(), Value::Int(v)));
    }

    pub fn push_str(&mut self, key: impl Into<String>, v: impl Into<String>) {
        self.entries.push((key.into(), Value::Str(v.into())));
    }

    pub fn push_bool(&mut self, key: impl Into<String>, v: bool) {
        self.entries.push((key.into(), Value::Bool(v)));
    }

    pub fn push_undefined(&mut self, key: impl Into<String>) {
        self.entries.push((key.into(), Value::Undefined));
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push(' ');
            match v {
                Value::Float(f) => out.push_str(&format_float(*f)),
                Value::Int(i) => out.push_str(&i.to_string()),
                Value::Str(s) => out.push_str(s),
                Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
                Value::Undefined => out.push_str("undefined"),
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut out = String::from("{");
        for (i, (k, v)) in self.entries.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!("\n  {}: ", json_string(k)));
            match v {
                Value::Float(f) => {
                    if f.is_finite() {
                        out.push_str(&format_float(*f))
                    } else {
                        out.push_str("null")
                    }
                }
                Value::Int(i) => out.push_str(&i.to_string()),
                Value::Str(s) => out.push_str(&json_string(s)),
                Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
                Value::Undefined => out.push_str("null"),
            }
        }
        out.push_str("\n}\n");
        out
    }

    pub fn render(&self, json: bool) -> String {
        if json {
            self.to_json()
        } else {
            self.to_text()
        }
    }
}

/// 17 significant digits: enough to round-trip any f64.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn json_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}
