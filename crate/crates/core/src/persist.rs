//! Versioned JSON model bundles.
//!
//! ```text
//! { "format": "scodkit-model", "version": 1, "kind": "<kind>", "model": { ... } }
//! ```
//!
//! Floats are written with shortest round-trip formatting, so a load followed
//! by a save reproduces the original bytes.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::gmm::Gmm;
use crate::hmm::Hmm;
use crate::scod::ScodGrid;

pub const FORMAT: &str = "scodkit-model";
pub const SCHEMA_VERSION: u32 = 1;

/// Types that can be stored in a bundle.
pub trait Persist: Serialize + DeserializeOwned {
    const KIND: &'static str;
}

impl Persist for Hmm {
    const KIND: &'static str = "hmm";
}

impl Persist for Gmm {
    const KIND: &'static str = "gmm";
}

impl Persist for ScodGrid {
    const KIND: &'static str = "scod-grid";
}

impl Persist for FeatureConfig {
    const KIND: &'static str = "feature-config";
}

#[derive(Serialize)]
struct BundleOut<'a, T> {
    format: &'a str,
    version: u32,
    kind: &'a str,
    model: &'a T,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
    kind: String,
}

pub fn to_json<T: Persist>(model: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&BundleOut {
        format: FORMAT,
        version: SCHEMA_VERSION,
        kind: T::KIND,
        model,
    })
    .map_err(|e| Error::Corrupt(format!("serialisation failed: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn from_json<T: Persist>(text: &str) -> Result<T> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Corrupt(e.to_string()))?;
    let header: Header =
        serde_json::from_value(value.clone()).map_err(|e| Error::Corrupt(format!("bad header: {e}")))?;
    if header.format != FORMAT {
        return Err(Error::Corrupt(format!("unknown format `{}`", header.format)));
    }
    if header.version != SCHEMA_VERSION {
        return Err(Error::VersionMismatch {
            found: header.version,
            expected: SCHEMA_VERSION,
        });
    }
    if header.kind != T::KIND {
        return Err(Error::Corrupt(format!(
            "expected a {} bundle, found {}",
            T::KIND,
            header.kind
        )));
    }
    let model = value
        .get("model")
        .cloned()
        .ok_or_else(|| Error::Corrupt("missing model".into()))?;
    serde_json::from_value(model).map_err(|e| Error::Corrupt(e.to_string()))
}

pub fn save<T: Persist>(path: &Path, model: &T) -> Result<()> {
    let text = to_json(model)?;
    std::fs::write(path, text).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load<T: Persist>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    from_json(&text)
}
