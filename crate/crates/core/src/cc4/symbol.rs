use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{BitVec, Cc4Error, EventLogRecord};

#[derive(Debug, Clone, PartialEq)]
pub enum FieldEncoder {
    /// One bit per vocabulary entry.
    OneHot { vocabulary: Vec<String> },
    /// `edges.len() + 1` bins; a value sets the bit of its bin and every
    /// lower bin. The bin index is the number of edges `<=` the value.
    Thermometer { edges: Vec<f64> },
}

impl FieldEncoder {
    pub fn width(&self) -> usize {
        match self {
            FieldEncoder::OneHot { vocabulary } => vocabulary.len(),
            FieldEncoder::Thermometer { edges } => edges.len() + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FieldDoc", into = "FieldDoc")]
pub struct FieldSpec {
    pub name: String,
    pub encoder: FieldEncoder,
}

/// Wire form: `{"name", "encoding": "one_hot"|"thermometer", "vocabulary"|"edges"}`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldDoc {
    name: String,
    encoding: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vocabulary: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edges: Option<Vec<f64>>,
}

impl TryFrom<FieldDoc> for FieldSpec {
    type Error = String;

    fn try_from(d: FieldDoc) -> Result<Self, Self::Error> {
        let encoder = match (d.encoding.as_str(), d.vocabulary, d.edges) {
            ("one_hot", Some(vocabulary), None) => FieldEncoder::OneHot { vocabulary },
            ("thermometer", None, Some(edges)) => FieldEncoder::Thermometer { edges },
            _ => return Err(format!("field {:?}: one_hot needs exactly \"vocabulary\", thermometer exactly \"edges\"", d.name)),
        };
        Ok(FieldSpec { name: d.name, encoder })
    }
}

impl From<FieldSpec> for FieldDoc {
    fn from(f: FieldSpec) -> Self {
        let (encoding, vocabulary, edges) = match f.encoder {
            FieldEncoder::OneHot { vocabulary } => ("one_hot", Some(vocabulary), None),
            FieldEncoder::Thermometer { edges } => ("thermometer", None, Some(edges)),
        };
        FieldDoc { name: f.name, encoding: encoding.into(), vocabulary, edges }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemaDoc", into = "SchemaDoc")]
pub struct SymbolSchema {
    fields: Vec<FieldSpec>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaDoc {
    fields: Vec<FieldSpec>,
}

impl TryFrom<SchemaDoc> for SymbolSchema {
    type Error = Cc4Error;

    fn try_from(doc: SchemaDoc) -> Result<Self, Self::Error> {
        SymbolSchema::new(doc.fields)
    }
}

impl From<SymbolSchema> for SchemaDoc {
    fn from(s: SymbolSchema) -> Self {
        SchemaDoc { fields: s.fields }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Symbolized {
    pub bits: BitVec,
    /// Some categorical value was outside its vocabulary.
    pub unknown: bool,
}

impl SymbolSchema {
    pub fn new(fields: Vec<FieldSpec>) -> Result<Self, Cc4Error> {
        let mut names = HashSet::new();
        for f in &fields {
            if !names.insert(f.name.as_str()) {
                return Err(Cc4Error::InvalidSchema(format!("duplicate field {:?}", f.name)));
            }
            match &f.encoder {
                FieldEncoder::OneHot { vocabulary } => {
                    let distinct: HashSet<&String> = vocabulary.iter().collect();
                    if vocabulary.is_empty() || distinct.len() != vocabulary.len() {
                        return Err(Cc4Error::InvalidSchema(format!("vocabulary of {:?} must be nonempty and distinct", f.name)));
                    }
                }
                FieldEncoder::Thermometer { edges } => {
                    if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
                        return Err(Cc4Error::InvalidSchema(format!("edges of {:?} must be finite and increasing", f.name)));
                    }
                }
            }
        }
        if fields.is_empty() {
            return Err(Cc4Error::InvalidSchema("no fields".into()));
        }
        Ok(SymbolSchema { fields })
    }

    pub fn fields(&self) -> &[FieldSpec] {
        &self.fields
    }

    pub fn total_bits(&self) -> usize {
        self.fields.iter().map(|f| f.encoder.width()).sum()
    }

    pub fn from_json(s: &str) -> Result<Self, Cc4Error> {
        serde_json::from_str(s).map_err(|e| Cc4Error::InvalidSchema(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serialization cannot fail")
    }

    pub fn symbolize(&self, record: &EventLogRecord) -> Result<Symbolized, Cc4Error> {
        if let Some(extra) = record.fields.keys().find(|k| !self.fields.iter().any(|f| &f.name == *k)) {
            return Err(Cc4Error::SchemaMismatch(format!("unexpected field {extra:?}")));
        }
        let mut bits = BitVec::zeros(self.total_bits());
        let mut unknown = false;
        let mut offset = 0;
        for spec in &self.fields {
            let value = record
                .fields
                .get(&spec.name)
                .ok_or_else(|| Cc4Error::SchemaMismatch(format!("missing field {:?}", spec.name)))?;
            match &spec.encoder {
                FieldEncoder::OneHot { vocabulary } => {
                    let cat = value.as_category();
                    match vocabulary.iter().position(|v| *v == cat) {
                        Some(i) => bits.set(offset + i, true),
                        None => unknown = true,
                    }
                }
                FieldEncoder::Thermometer { edges } => {
                    let v = value
                        .as_number()
                        .ok_or_else(|| Cc4Error::SchemaMismatch(format!("field {:?} is not numeric", spec.name)))?;
                    let bin = edges.iter().filter(|&&e| e <= v).count();
                    for i in 0..=bin {
                        bits.set(offset + i, true);
                    }
                }
            }
            offset += spec.encoder.width();
        }
        Ok(Symbolized { bits, unknown })
    }
}
