//! Human and machine renderings of command results.
//!
//! Machine output is one JSON object per line, each carrying
//! `schema_version` and `record`.

use std::io::Write;

use clap::ValueEnum;
use serde::Serialize;
use serde_json::{Map, Value};

pub const OUTPUT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Table,
    Machine,
}

/// One output record: a kind plus ordered fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub kind: String,
    pub fields: Vec<(String, Value)>,
}

impl Record {
    pub fn new(kind: impl Into<String>) -> Self {
        Self { kind: kind.into(), fields: Vec::new() }
    }

    pub fn field(mut self, key: impl Into<String>, value: impl Serialize) -> Self {
        self.fields.push((key.into(), serde_json::to_value(value).expect("output values serialize")));
        self
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("schema_version".into(), OUTPUT_SCHEMA_VERSION.into());
        m.insert("record".into(), Value::String(self.kind.clone()));
        for (k, v) in &self.fields {
            m.insert(k.clone(), v.clone());
        }
        Value::Object(m)
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Machine => self.to_json().to_string(),
            Format::Table => {
                let width = self.fields.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
                let mut out = format!("[{}]", self.kind);
                for (k, v) in &self.fields {
                    let shown = match v {
                        Value::String(s) => s.clone(),
                        other => other.to_string(),
                    };
                    out.push_str(&format!("\n  {k:<width$}  {shown}"));
                }
                out
            }
        }
    }
}

/// Collects records and writes them as they arrive.
pub struct Printer<W: Write> {
    format: Format,
    out: W,
    records: Vec<Record>,
}

impl<W: Write> Printer<W> {
    pub fn new(format: Format, out: W) -> Self {
        Self { format, out, records: Vec::new() }
    }

    pub fn format(&self) -> Format {
        self.format
    }

    pub fn emit(&mut self, record: Record) {
        let _ = writeln!(self.out, "{}", record.render(self.format));
        self.records.push(record);
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
