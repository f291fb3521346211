//! Name-keyed registry of interchangeable algorithm variants.
//!
//! Each algorithm family (temperature objective, uncertainty measure, synthetic
//! calibration curve) defines a trait that extends [`Strategy`]; concrete variants are
//! registered under their [`Strategy::name`] and selected at runtime, typically from a
//! CLI flag.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// Common surface of every registrable variant.
pub trait Strategy: Send + Sync {
    /// Stable lookup key, also used on the command line.
    fn name(&self) -> &'static str;

    /// One-line human description.
    fn describe(&self) -> String {
        self.name().to_string()
    }
}

pub struct Registry<T: ?Sized + Strategy> {
    kind: &'static str,
    entries: BTreeMap<&'static str, Box<T>>,
}

impl<T: ?Sized + Strategy> Registry<T> {
    /// `kind` names the family in error messages ("objective", "uncertainty mode", ...).
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Registers a variant, replacing any previous entry with the same name.
    pub fn register(&mut self, strategy: Box<T>) -> &mut Self {
        self.entries.insert(strategy.name(), strategy);
        self
    }

    pub fn with(mut self, strategy: Box<T>) -> Self {
        self.register(strategy);
        self
    }

    pub fn get(&self, name: &str) -> Result<&T> {
        self.entries
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.entries.values().map(|b| b.as_ref())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl<T: ?Sized + Strategy> fmt::Debug for Registry<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("kind", &self.kind)
            .field("entries", &self.names())
            .finish()
    }
}
