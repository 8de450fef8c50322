//! Write-once per-member data store.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::field::FieldElement;
use crate::sharing::SecretId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stored {
    /// This member's share of a polynomial sharing.
    Shamir(FieldElement),
    /// This member's additive share.
    Additive(FieldElement),
    /// A value this member knows in the clear (own input or a revealed result).
    Plain(FieldElement),
}

impl Stored {
    pub fn value(&self) -> FieldElement {
        match *self {
            Stored::Shamir(v) | Stored::Additive(v) | Stored::Plain(v) => v,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Stored::Shamir(_) => "shamir",
            Stored::Additive(_) => "additive",
            Stored::Plain(_) => "plain",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoreError {
    #[error("data id {0} is already bound")]
    Rebound(SecretId),
    #[error("data id {0} is not in the store")]
    Missing(SecretId),
    #[error("data id {id} holds a {found} value where {expected} was required")]
    WrongKind {
        id: SecretId,
        expected: &'static str,
        found: &'static str,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DataStore {
    entries: BTreeMap<SecretId, Stored>,
}

impl DataStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: SecretId, value: Stored) -> Result<(), StoreError> {
        if self.entries.contains_key(&id) {
            return Err(StoreError::Rebound(id));
        }
        self.entries.insert(id, value);
        Ok(())
    }

    pub fn get(&self, id: &SecretId) -> Result<Stored, StoreError> {
        self.entries
            .get(id)
            .copied()
            .ok_or_else(|| StoreError::Missing(id.clone()))
    }

    pub fn contains(&self, id: &SecretId) -> bool {
        self.entries.contains_key(id)
    }

    pub fn shamir(&self, id: &SecretId) -> Result<FieldElement, StoreError> {
        match self.get(id)? {
            Stored::Shamir(v) => Ok(v),
            other => Err(self.wrong(id, "shamir", other)),
        }
    }

    pub fn additive(&self, id: &SecretId) -> Result<FieldElement, StoreError> {
        match self.get(id)? {
            Stored::Additive(v) => Ok(v),
            other => Err(self.wrong(id, "additive", other)),
        }
    }

    pub fn plain(&self, id: &SecretId) -> Result<FieldElement, StoreError> {
        match self.get(id)? {
            Stored::Plain(v) => Ok(v),
            other => Err(self.wrong(id, "plain", other)),
        }
    }

    fn wrong(&self, id: &SecretId, expected: &'static str, found: Stored) -> StoreError {
        StoreError::WrongKind {
            id: id.clone(),
            expected,
            found: found.kind(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SecretId, &Stored)> {
        self.entries.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{FieldParams, SMALL_PRIME};

    #[test]
    fn write_once_and_typed_access() {
        let f = FieldParams::new(SMALL_PRIME).unwrap();
        let mut s = DataStore::new();
        s.insert("x".into(), Stored::Shamir(f.element(3))).unwrap();
        assert_eq!(
            s.insert("x".into(), Stored::Plain(f.element(4))),
            Err(StoreError::Rebound("x".into()))
        );
        assert_eq!(s.shamir(&"x".into()).unwrap().value(), 3);
        assert!(matches!(
            s.plain(&"x".into()),
            Err(StoreError::WrongKind { .. })
        ));
        assert!(matches!(s.get(&"y".into()), Err(StoreError::Missing(_))));
    }
}
