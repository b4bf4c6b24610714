//! Attribute naming shared by the signature and encryption layers.
//!
//! An attribute is identified by the authority that issues it and its name
//! within that authority's namespace (`patient_id@hospital`). The signing
//! side additionally carries the attested value (`0003231`); encryption
//! policies only ever name attributes, never values.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttributeError {
    #[error("attribute {field} must be non-empty")]
    Empty { field: &'static str },
    #[error("attribute {field} contains invalid character {ch:?}")]
    InvalidChar { field: &'static str, ch: char },
    #[error("expected `name@authority`, got {0:?}")]
    Syntax(String),
}

/// Characters allowed in attribute names and authority ids.
pub(crate) fn is_token_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.'
}

fn check_token(field: &'static str, s: &str) -> Result<(), AttributeError> {
    if s.is_empty() {
        return Err(AttributeError::Empty { field });
    }
    match s.chars().find(|c| !is_token_char(*c)) {
        Some(ch) => Err(AttributeError::InvalidChar { field, ch }),
        None => Ok(()),
    }
}

/// `(authority, name)`: unique within the system.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AttributeId {
    authority_id: String,
    name: String,
}

impl AttributeId {
    pub fn new(authority_id: impl Into<String>, name: impl Into<String>) -> Result<Self, AttributeError> {
        let authority_id = authority_id.into();
        let name = name.into();
        check_token("authority", &authority_id)?;
        check_token("name", &name)?;
        Ok(Self { authority_id, name })
    }

    pub fn authority_id(&self) -> &str {
        &self.authority_id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Attach an attested value.
    pub fn with_value(&self, value: impl Into<String>) -> Result<AttributeDescriptor, AttributeError> {
        AttributeDescriptor::new(self.authority_id.clone(), self.name.clone(), value)
    }
}

impl fmt::Display for AttributeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.name, self.authority_id)
    }
}

impl FromStr for AttributeId {
    type Err = AttributeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, authority) = s.split_once('@').ok_or_else(|| AttributeError::Syntax(s.to_owned()))?;
        Self::new(authority, name)
    }
}

impl TryFrom<String> for AttributeId {
    type Error = AttributeError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<AttributeId> for String {
    fn from(id: AttributeId) -> Self {
        id.to_string()
    }
}

/// An attribute together with the value an authority attests for one owner,
/// e.g. `patient_id = 0003231` issued by `hospital`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AttributeDescriptor {
    id: AttributeId,
    value: String,
}

impl AttributeDescriptor {
    pub fn new(
        authority_id: impl Into<String>,
        name: impl Into<String>,
        value: impl Into<String>,
    ) -> Result<Self, AttributeError> {
        let id = AttributeId::new(authority_id, name)?;
        let value = value.into();
        if value.is_empty() {
            return Err(AttributeError::Empty { field: "value" });
        }
        Ok(Self { id, value })
    }

    pub fn id(&self) -> &AttributeId {
        &self.id
    }

    pub fn authority_id(&self) -> &str {
        self.id.authority_id()
    }

    pub fn name(&self) -> &str {
        self.id.name()
    }

    pub fn value(&self) -> &str {
        &self.value
    }
}

impl fmt::Display for AttributeDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}", self.id, self.value)
    }
}
