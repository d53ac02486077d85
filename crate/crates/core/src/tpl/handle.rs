//! Opaque document handles.
//!
//! Credential documents enter an evaluation as handles. Built-ins attach a
//! format to a handle and read fields through it; sub-documents become new
//! handles pointing into the same parsed tree.

use std::sync::Arc;

use serde_json::Value;

use super::term::HandleId;

/// A JSON document, or a sub-tree of one addressed by a JSON pointer.
#[derive(Clone, Debug)]
pub struct Document {
    root: Arc<Value>,
    pointer: String,
}

impl Document {
    pub fn new(root: Value) -> Self {
        Document {
            root: Arc::new(root),
            pointer: String::new(),
        }
    }

    pub fn from_shared(root: Arc<Value>) -> Self {
        Document {
            root,
            pointer: String::new(),
        }
    }

    pub fn value(&self) -> &Value {
        self.root
            .pointer(&self.pointer)
            .expect("document pointer resolved at creation")
    }

    /// Sub-document at `pointer` (relative to this document), if present.
    pub fn child(&self, pointer: &str) -> Option<Document> {
        let full = format!("{}{}", self.pointer, pointer);
        self.root.pointer(&full)?;
        Some(Document {
            root: self.root.clone(),
            pointer: full,
        })
    }
}

#[derive(Clone, Debug)]
struct Entry {
    doc: Document,
    format: Option<Arc<str>>,
}

/// Position in a [`HandleTable`]'s history that can be restored on
/// backtracking.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HandleMark {
    entries: usize,
    trail: usize,
}

#[derive(Clone, Debug, Default)]
pub struct HandleTable {
    entries: Vec<Entry>,
    trail: Vec<(HandleId, Option<Arc<str>>)>,
}

impl HandleTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, doc: Document) -> HandleId {
        let id = HandleId(self.entries.len() as u32);
        self.entries.push(Entry { doc, format: None });
        id
    }

    pub fn load(&mut self, value: Value) -> HandleId {
        self.insert(Document::new(value))
    }

    pub fn document(&self, id: HandleId) -> Option<&Document> {
        self.entries.get(id.0 as usize).map(|e| &e.doc)
    }

    pub fn format(&self, id: HandleId) -> Option<&str> {
        self.entries.get(id.0 as usize)?.format.as_deref()
    }

    /// Returns false when the handle does not exist.
    pub fn set_format(&mut self, id: HandleId, format: Arc<str>) -> bool {
        let Some(entry) = self.entries.get_mut(id.0 as usize) else {
            return false;
        };
        let previous = entry.format.replace(format);
        self.trail.push((id, previous));
        true
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn mark(&self) -> HandleMark {
        HandleMark {
            entries: self.entries.len(),
            trail: self.trail.len(),
        }
    }

    pub fn undo(&mut self, mark: HandleMark) {
        while self.trail.len() > mark.trail {
            let (id, previous) = self.trail.pop().expect("trail entry");
            if let Some(entry) = self.entries.get_mut(id.0 as usize) {
                entry.format = previous;
            }
        }
        self.entries.truncate(mark.entries);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn undo_restores_formats_and_drops_new_handles() {
        let mut table = HandleTable::new();
        let h = table.load(json!({"a": {"b": 1}}));
        let mark = table.mark();
        assert!(table.set_format(h, "fmt".into()));
        let child = table.document(h).unwrap().child("/a").unwrap();
        let c = table.insert(child);
        assert_eq!(table.document(c).unwrap().value(), &json!({"b": 1}));
        table.undo(mark);
        assert_eq!(table.format(h), None);
        assert_eq!(table.len(), 1);
    }

    #[test]
    fn child_of_child() {
        let doc = Document::new(json!({"a": {"b": [10, 20]}}));
        let inner = doc.child("/a").unwrap().child("/b/1").unwrap();
        assert_eq!(inner.value(), &json!(20));
        assert!(doc.child("/missing").is_none());
    }
}
