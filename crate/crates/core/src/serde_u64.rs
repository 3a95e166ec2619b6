//! Stores a `u64` as the bit-identical `i64`, since TOML integers are signed 64-bit.

use serde::{Deserialize, Deserializer, Serializer};

pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_i64(*v as i64)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
    Ok(i64::deserialize(d)? as u64)
}
