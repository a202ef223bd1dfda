use crate::error::{Error, Result};

/// Attribute names for the comma-separated weather forecasts in the in-car KB,
/// e.g. `"frost, low of 20F, high of 30F"`.
pub const WEATHER_ATTRIBUTES: [&str; 3] =
    ["weather_condition", "low_temperature", "high_temperature"];

/// Lowercases `raw_value` and joins its whitespace-separated words with `_`.
pub fn canonicalize(raw_value: &str) -> Result<String> {
    let words: Vec<String> = raw_value.split_whitespace().map(str::to_lowercase).collect();
    if words.is_empty() {
        return Err(Error::Validation(format!(
            "cannot canonicalize blank value {raw_value:?}"
        )));
    }
    Ok(words.join("_"))
}

/// Splits a compound KB value on commas, pairing part `k` with `column_names[k]`.
///
/// A value without commas comes back as a singleton tagged with the first
/// attribute name.
pub fn split_compound_entity(
    raw_kb_value: &str,
    column_names: &[impl AsRef<str>],
) -> Result<Vec<(String, String)>> {
    let parts: Vec<&str> = raw_kb_value
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .collect();
    if parts.is_empty() {
        return Err(Error::Validation(format!(
            "empty KB value {raw_kb_value:?}"
        )));
    }
    if parts.len() > column_names.len() {
        return Err(Error::Validation(format!(
            "KB value {raw_kb_value:?} has {} parts but only {} attributes",
            parts.len(),
            column_names.len()
        )));
    }
    parts
        .into_iter()
        .zip(column_names)
        .map(|(part, attr)| Ok((attr.as_ref().to_string(), canonicalize(part)?)))
        .collect()
}
