//! Versioned prompt text. Bundled copies live in `prompts/`; a directory
//! override can be loaded at runtime.

use std::path::Path;

use sha2::{Digest, Sha256};

const SYSTEM: &str = include_str!("../../prompts/system.md");
const INSTRUCTIONS: &str = include_str!("../../prompts/instructions.md");

#[derive(Debug, Clone, PartialEq)]
pub struct Prompts {
    pub system: String,
    pub instructions: String,
}

impl Default for Prompts {
    fn default() -> Self {
        Self { system: SYSTEM.to_string(), instructions: INSTRUCTIONS.to_string() }
    }
}

impl Prompts {
    /// Reads `system.md` and `instructions.md` from `dir`.
    pub fn load(dir: &Path) -> std::io::Result<Self> {
        Ok(Self {
            system: std::fs::read_to_string(dir.join("system.md"))?,
            instructions: std::fs::read_to_string(dir.join("instructions.md"))?,
        })
    }

    /// Short hash recorded in every trace record so replays notice prompt edits.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.system.as_bytes());
        h.update([0]);
        h.update(self.instructions.as_bytes());
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
