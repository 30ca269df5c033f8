use alloc::collections::BTreeMap;

use super::config::{TilingConfig, TilingError};

/// Bucketing step for the `m` dimension.
pub const M_BUCKET: usize = 32;

/// Table key: `m` rounded up to a multiple of 32, `k` and `n` exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ShapeKey {
    pub m_bucket: usize,
    pub k: usize,
    pub n: usize,
}

impl ShapeKey {
    pub fn for_shape(m: usize, k: usize, n: usize) -> Self {
        let m_bucket = m.div_ceil(M_BUCKET).max(1) * M_BUCKET;
        Self { m_bucket, k, n }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableEntry {
    pub config: TilingConfig,
    /// Median benchmark time in nanoseconds.
    pub measured_ns: u64,
}

/// Shape-keyed map of the best tiling config found by the offline search.
/// Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilingTable {
    entries: BTreeMap<ShapeKey, TableEntry>,
    default_config: TilingConfig,
}

impl TilingTable {
    pub fn new(
        default_config: TilingConfig,
        entries: impl IntoIterator<Item = (ShapeKey, TableEntry)>,
    ) -> Result<Self, TilingError> {
        default_config.validate()?;
        let mut map = BTreeMap::new();
        for (key, entry) in entries {
            entry.config.validate()?;
            map.insert(key, entry);
        }
        Ok(Self { entries: map, default_config })
    }

    /// A table with no entries: every lookup returns `config`.
    pub fn uniform(config: TilingConfig) -> Result<Self, TilingError> {
        Self::new(config, [])
    }

    pub fn default_config(&self) -> TilingConfig {
        self.default_config
    }

    pub fn entries(&self) -> impl Iterator<Item = (&ShapeKey, &TableEntry)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &ShapeKey) -> Option<&TableEntry> {
        self.entries.get(key)
    }

    /// Exact bucket hit, else the neighbouring bucket (one step either way,
    /// larger preferred) with the same `(k, n)`, else the default config.
    pub fn lookup(&self, m: usize, k: usize, n: usize) -> TilingConfig {
        let key = ShapeKey::for_shape(m, k, n);
        if let Some(e) = self.entries.get(&key) {
            return e.config;
        }
        let up = ShapeKey { m_bucket: key.m_bucket + M_BUCKET, ..key };
        if let Some(e) = self.entries.get(&up) {
            return e.config;
        }
        if key.m_bucket > M_BUCKET {
            let down = ShapeKey { m_bucket: key.m_bucket - M_BUCKET, ..key };
            if let Some(e) = self.entries.get(&down) {
                return e.config;
            }
        }
        self.default_config
    }
}
