//! Data-driven navigation of credential documents.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

const BUNDLED: &str = include_str!("../../formats.json");

/// How a string leaf is surfaced to policies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    /// Strings become text terms.
    #[default]
    Auto,
    Text,
    /// Strings become atoms; strings that are not valid atom names make the
    /// extraction fail.
    Atom,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldPath {
    /// JSON pointer relative to the handle's document.
    pub path: String,
    #[serde(default)]
    pub kind: ValueKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatDescriptor {
    pub name: String,
    /// JSON pointers that must resolve for a document to have this format.
    #[serde(default)]
    pub required: Vec<String>,
    pub fields: BTreeMap<String, FieldPath>,
}

impl FormatDescriptor {
    pub fn accepts(&self, doc: &Value) -> bool {
        self.required.iter().all(|p| doc.pointer(p).is_some())
    }

    pub fn field(&self, name: &str) -> Option<&FieldPath> {
        self.fields.get(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("reading format file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed format file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("format `{0}` declared twice")]
    Duplicate(String),
    #[error("format `{format}` field `{field}`: `{path}` is not a JSON pointer")]
    BadPath {
        format: String,
        field: String,
        path: String,
    },
}

#[derive(Deserialize)]
struct FormatFile {
    formats: Vec<FormatDescriptor>,
}

/// The formats known to an interpreter, keyed by name.
#[derive(Clone, Debug)]
pub struct FormatSet {
    formats: HashMap<Arc<str>, Arc<FormatDescriptor>>,
}

impl FormatSet {
    /// The descriptors shipped with the crate (`formats.json`).
    pub fn bundled() -> Self {
        FormatSet::from_json(BUNDLED).expect("bundled formats.json is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, FormatError> {
        let file: FormatFile = serde_json::from_str(text)?;
        FormatSet::from_descriptors(file.formats)
    }

    pub fn from_file(path: &Path) -> Result<Self, FormatError> {
        FormatSet::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn from_descriptors(descriptors: Vec<FormatDescriptor>) -> Result<Self, FormatError> {
        let mut formats = HashMap::new();
        for d in descriptors {
            for (field, fp) in &d.fields {
                if !(fp.path.is_empty() || fp.path.starts_with('/')) {
                    return Err(FormatError::BadPath {
                        format: d.name.clone(),
                        field: field.clone(),
                        path: fp.path.clone(),
                    });
                }
            }
            let name: Arc<str> = Arc::from(d.name.as_str());
            if formats.insert(name, Arc::new(d.clone())).is_some() {
                return Err(FormatError::Duplicate(d.name));
            }
        }
        Ok(FormatSet { formats })
    }

    pub fn get(&self, name: &str) -> Option<&Arc<FormatDescriptor>> {
        self.formats.get(name)
    }

    /// Interned name, so handles can share it.
    pub(crate) fn name_of(&self, name: &str) -> Option<Arc<str>> {
        self.formats.get_key_value(name).map(|(k, _)| k.clone())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.formats.keys().map(|k| &**k)
    }
}
