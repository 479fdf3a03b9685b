//! How modules are shown to the model and read back from its replies.

use crate::core::text::fenced_blocks;
use crate::core::{Module, ModuleKind, Payload, ToolSpec};

/// Prompt text for a module: the instruction itself, or the toolset as
/// pretty JSON.
pub fn module_text(module: &Module) -> String {
    payload_text(&module.payload)
}

pub fn payload_text(payload: &Payload) -> String {
    match payload {
        Payload::Instruction(text) => text.clone(),
        Payload::Toolset(tools) => serde_json::to_string_pretty(tools).expect("tool specs serialize"),
    }
}

/// A module fenced for inclusion in a prompt.
pub fn fenced_module(module: &Module) -> String {
    format!("```module\n{}\n```", module_text(module))
}

/// Reads a payload of `kind` from the last `module` (or untagged) fenced
/// block in a reply. Returns a reason on failure.
pub fn parse_payload(kind: ModuleKind, reply: &str) -> Result<Payload, String> {
    let block = fenced_blocks(reply)
        .into_iter()
        .rev()
        .find(|b| matches!(b.info.as_str(), "module" | "" | "json" | "text"))
        .ok_or_else(|| "reply has no fenced module block".to_string())?;
    let payload = match kind {
        ModuleKind::Instruction => {
            let text = block.body.trim();
            if text.is_empty() {
                return Err("module block is empty".into());
            }
            Payload::Instruction(text.to_string())
        }
        ModuleKind::Toolset => {
            let tools: Vec<ToolSpec> =
                serde_json::from_str(&block.body).map_err(|e| format!("toolset is not valid JSON: {e}"))?;
            Payload::Toolset(tools)
        }
    };
    Ok(payload)
}
