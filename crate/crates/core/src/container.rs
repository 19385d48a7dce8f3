//! Versioned binary container: a four-byte kind tag, a little-endian format
//! version, then a bincode payload.

use serde::{de::DeserializeOwned, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"IMPM";

pub fn encode<T: Serialize>(kind: [u8; 4], version: u32, value: &T) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&kind);
    out.extend_from_slice(&version.to_le_bytes());
    let payload = bincode::serialize(value).map_err(|e| Error::Serialization(e.to_string()))?;
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode<T: DeserializeOwned>(kind: [u8; 4], version: u32, bytes: &[u8]) -> Result<T> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::Serialization("not a model container".into()));
    }
    if bytes[4..8] != kind {
        return Err(Error::Serialization(format!(
            "container holds {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[4..8]),
            String::from_utf8_lossy(&kind)
        )));
    }
    let found = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if found != version {
        return Err(Error::Serialization(format!(
            "container version {found}, this build reads version {version}"
        )));
    }
    bincode::deserialize(&bytes[12..]).map_err(|e| Error::Serialization(e.to_string()))
}
