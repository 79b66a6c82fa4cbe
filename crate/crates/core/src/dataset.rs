//! `(page, command, target)` examples and the JSON-lines dataset format.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

/// How a synthetic command was generated. Absent for real data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    CopyText,
    Substring,
    AttributeReference,
    NeighborLabel,
}

impl CommandKind {
    pub const ALL: [CommandKind; 4] = [
        CommandKind::CopyText,
        CommandKind::Substring,
        CommandKind::AttributeReference,
        CommandKind::NeighborLabel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CommandKind::CopyText => "copy_text",
            CommandKind::Substring => "substring",
            CommandKind::AttributeReference => "attribute_reference",
            CommandKind::NeighborLabel => "neighbor_label",
        }
    }
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub page_id: String,
    pub command: String,
    pub target_id: String,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<CommandKind>,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("dataset line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads one example per nonblank line.
pub fn read_examples<R: BufRead>(input: R) -> Result<Vec<Example>, DatasetError> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex = serde_json::from_str(&line).map_err(|source| DatasetError::Parse {
            line: n + 1,
            source,
        })?;
        out.push(ex);
    }
    Ok(out)
}

pub fn write_examples<W: Write>(mut out: W, examples: &[Example]) -> std::io::Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut out, ex)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
