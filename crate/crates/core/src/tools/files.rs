//! File tools confined to a per-run scratch directory.

use std::fs;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use serde_json::json;

use super::{str_arg, Tool, ToolDescriptor};

#[derive(Debug, Clone)]
pub struct ScratchDir {
    root: PathBuf,
}

impl ScratchDir {
    pub fn new(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Maps a relative path into the scratch directory, rejecting escapes.
    pub fn resolve(&self, relative: &str) -> Result<PathBuf, String> {
        let path = Path::new(relative);
        if relative.trim().is_empty() {
            return Err("path must not be empty".into());
        }
        for part in path.components() {
            match part {
                Component::Normal(_) | Component::CurDir => {}
                _ => return Err(format!("path `{relative}` leaves the scratch directory")),
            }
        }
        Ok(self.root.join(path))
    }

    fn list(&self) -> Result<Vec<String>, String> {
        let mut out = Vec::new();
        let mut stack = vec![self.root.clone()];
        while let Some(dir) = stack.pop() {
            let entries = fs::read_dir(&dir).map_err(|e| e.to_string())?;
            for entry in entries {
                let path = entry.map_err(|e| e.to_string())?.path();
                if path.is_dir() {
                    stack.push(path);
                } else if let Ok(rel) = path.strip_prefix(&self.root) {
                    out.push(rel.to_string_lossy().replace('\\', "/"));
                }
            }
        }
        out.sort();
        Ok(out)
    }
}

/// `write_file`, `read_file`, `delete_file` and `list_files` over `scratch`.
pub fn file_tools(scratch: Arc<ScratchDir>) -> Vec<Tool> {
    let write = {
        let s = Arc::clone(&scratch);
        Tool::new(
            ToolDescriptor::new(
                "write_file",
                "Creates or overwrites a file in the working directory.",
                json!({"path": "relative file path", "content": "full file content"}),
            ),
            move |args| {
                let path = s.resolve(str_arg(args, "path")?)?;
                let content = str_arg(args, "content")?;
                if let Some(parent) = path.parent() {
                    fs::create_dir_all(parent).map_err(|e| e.to_string())?;
                }
                fs::write(&path, content).map_err(|e| e.to_string())?;
                Ok(format!("wrote {} bytes", content.len()))
            },
        )
    };
    let read = {
        let s = Arc::clone(&scratch);
        Tool::new(
            ToolDescriptor::new(
                "read_file",
                "Returns the content of a file in the working directory.",
                json!({"path": "relative file path"}),
            ),
            move |args| {
                let path = s.resolve(str_arg(args, "path")?)?;
                fs::read_to_string(&path).map_err(|e| format!("cannot read file: {e}"))
            },
        )
    };
    let delete = {
        let s = Arc::clone(&scratch);
        Tool::new(
            ToolDescriptor::new(
                "delete_file",
                "Deletes a file in the working directory.",
                json!({"path": "relative file path"}),
            ),
            move |args| {
                let path = s.resolve(str_arg(args, "path")?)?;
                fs::remove_file(&path).map_err(|e| format!("cannot delete file: {e}"))?;
                Ok("deleted".to_string())
            },
        )
    };
    let list = Tool::new(
        ToolDescriptor::new("list_files", "Lists files in the working directory.", json!({})),
        move |_| {
            let files = scratch.list()?;
            Ok(if files.is_empty() {
                "(empty)".to_string()
            } else {
                files.join("\n")
            })
        },
    );
    vec![write, read, delete, list]
}
