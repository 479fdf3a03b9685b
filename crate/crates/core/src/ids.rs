//! Content addressing and seed derivation.

use alloc::string::String;
use core::fmt::Write;

use sha2::{Digest, Sha256};

use crate::types::{ModuleId, Payload};

/// Number of digest bytes kept in a module id (rendered as hex).
const ID_BYTES: usize = 8;

fn put_field(hasher: &mut Sha256, bytes: &[u8]) {
    hasher.update((bytes.len() as u64).to_le_bytes());
    hasher.update(bytes);
}

/// Id of a module payload: a hash over kind and payload only, so lineage
/// and origin never change it.
pub fn content_id(payload: &Payload) -> ModuleId {
    let mut hasher = Sha256::new();
    match payload {
        Payload::Instruction(text) => {
            put_field(&mut hasher, b"instruction");
            put_field(&mut hasher, text.as_bytes());
        }
        Payload::Toolset(tools) => {
            put_field(&mut hasher, b"toolset");
            hasher.update((tools.len() as u64).to_le_bytes());
            for tool in tools {
                put_field(&mut hasher, tool.name.as_bytes());
                put_field(&mut hasher, tool.description.as_bytes());
                hasher.update((tool.signature.len() as u64).to_le_bytes());
                for param in &tool.signature {
                    put_field(&mut hasher, param.name.as_bytes());
                    put_field(&mut hasher, param.description.as_bytes());
                }
                put_field(&mut hasher, tool.body.as_bytes());
            }
        }
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(ID_BYTES * 2);
    for byte in digest.iter().take(ID_BYTES) {
        let _ = write!(hex, "{byte:02x}");
    }
    ModuleId(hex)
}

/// Per-component seed derived from the global seed and a component label.
///
/// Streams are keyed by `(label, index)`, so adding a component never shifts
/// the seeds of the others.
pub fn derive_seed(global: u64, label: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global.to_le_bytes());
    put_field(&mut hasher, label.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ToolParam, ToolSpec};
    use alloc::vec;

    #[test]
    fn ids_are_stable_and_kind_sensitive() {
        let a = content_id(&Payload::Instruction("abc".into()));
        let b = content_id(&Payload::Instruction("abc".into()));
        assert_eq!(a, b);
        assert_eq!(a.0.len(), 16);
        let c = content_id(&Payload::Instruction("abd".into()));
        assert_ne!(a, c);
        let tools = content_id(&Payload::Toolset(vec![]));
        assert_ne!(a, tools);
    }

    #[test]
    fn toolset_field_boundaries_matter() {
        let mk = |name: &str, desc: &str| {
            Payload::Toolset(vec![ToolSpec {
                name: name.into(),
                description: desc.into(),
                signature: vec![ToolParam {
                    name: "q".into(),
                    description: "query".into(),
                }],
                body: "".into(),
            }])
        };
        assert_ne!(content_id(&mk("ab", "c")), content_id(&mk("a", "bc")));
    }

    #[test]
    fn derived_seeds_depend_on_every_input() {
        let base = derive_seed(7, "partition", 0);
        assert_eq!(base, derive_seed(7, "partition", 0));
        assert_ne!(base, derive_seed(8, "partition", 0));
        assert_ne!(base, derive_seed(7, "merge", 0));
        assert_ne!(base, derive_seed(7, "partition", 1));
    }
}
