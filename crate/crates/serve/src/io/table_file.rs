//! Tiling table as JSON:
//! `{"default": [6 ints], "entries": [{"m_bucket", "k", "n", "config": [6 ints], "ns"}]}`.

use std::path::Path;

use lora_serve_core::atmm::{ShapeKey, TableEntry, TilingConfig, TilingTable};
use serde::{Deserialize, Serialize};

use super::{read_json, write_json, IoError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableFile {
    pub default: [usize; 6],
    pub entries: Vec<EntryFile>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryFile {
    pub m_bucket: usize,
    pub k: usize,
    pub n: usize,
    pub config: [usize; 6],
    pub ns: u64,
}

impl From<&TilingTable> for TableFile {
    fn from(t: &TilingTable) -> Self {
        TableFile {
            default: t.default_config().to_array(),
            entries: t
                .entries()
                .map(|(k, e)| EntryFile {
                    m_bucket: k.m_bucket,
                    k: k.k,
                    n: k.n,
                    config: e.config.to_array(),
                    ns: e.measured_ns,
                })
                .collect(),
        }
    }
}

impl TableFile {
    pub fn into_table(self) -> Result<TilingTable, String> {
        let default = TilingConfig::from_array(self.default).map_err(|e| format!("default config: {e}"))?;
        let mut entries = Vec::with_capacity(self.entries.len());
        for e in self.entries {
            let config = TilingConfig::from_array(e.config)
                .map_err(|err| format!("entry ({}, {}, {}): {err}", e.m_bucket, e.k, e.n))?;
            let key = ShapeKey { m_bucket: e.m_bucket, k: e.k, n: e.n };
            entries.push((key, TableEntry { config, measured_ns: e.ns }));
        }
        TilingTable::new(default, entries).map_err(|e| e.to_string())
    }
}

pub fn save_table(path: &Path, table: &TilingTable) -> Result<(), IoError> {
    write_json(path, &TableFile::from(table))
}

pub fn load_table(path: &Path) -> Result<TilingTable, IoError> {
    let file: TableFile = read_json(path)?;
    file.into_table().map_err(|msg| IoError::format(path, msg))
}
