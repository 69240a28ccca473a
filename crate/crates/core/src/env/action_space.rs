//! Ordered list of optimizer pass flags. Action indices, the histogram
//! layout, and trained policies all depend on this order, so it is hashed
//! into checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::util::action_space_hash;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpace {
    pass_names: Vec<String>,
}

impl ActionSpace {
    pub fn new(pass_names: Vec<String>) -> Result<Self, EnvError> {
        if pass_names.is_empty() {
            return Err(EnvError::Config("action space is empty".into()));
        }
        for (i, name) in pass_names.iter().enumerate() {
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(EnvError::Config(format!("bad pass name at index {i}")));
            }
            if pass_names[..i].contains(name) {
                return Err(EnvError::Config(format!("duplicate pass name {name}")));
            }
        }
        Ok(ActionSpace { pass_names })
    }

    /// One flag per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, EnvError> {
        let names = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from)
            .collect();
        Self::new(names)
    }

    pub fn from_file(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            EnvError::Config(format!("cannot read action space {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    /// The 41 unique passes of the reduced Autophase action space.
    pub fn default_autophase() -> Self {
        Self::parse(include_str!("../../assets/autophase_actions.txt"))
            .expect("embedded action space is valid")
    }

    pub fn size(&self) -> usize {
        self.pass_names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.pass_names
    }

    pub fn flag(&self, action: usize) -> &str {
        &self.pass_names[action]
    }

    pub fn index_of(&self, flag: &str) -> Option<usize> {
        self.pass_names.iter().position(|n| n == flag)
    }

    pub fn hash(&self) -> String {
        action_space_hash(&self.pass_names)
    }
}
