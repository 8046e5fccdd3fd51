//! JSON helpers shared by the report types.

use serde::ser::{Error as _, SerializeSeq};
use serde::Serializer;
use serde_json::value::RawValue;

/// Formats a finite float with 17 significant digits, e.g. `2.5000000000000000e1`.
pub fn sig17(x: f64) -> String {
    format!("{x:.16e}")
}

fn raw(x: f64) -> Result<Box<RawValue>, serde_json::Error> {
    RawValue::from_string(sig17(x))
}

/// `serialize_with` adapter writing every element with 17 significant digits.
pub fn serialize_sig17_vec<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(values.len()))?;
    for &v in values {
        if !v.is_finite() {
            return Err(S::Error::custom(format!("non-finite value {v}")));
        }
        seq.serialize_element(&raw(v).map_err(S::Error::custom)?)?;
    }
    seq.end()
}
