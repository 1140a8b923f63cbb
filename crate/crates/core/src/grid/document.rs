use super::{validate_feeder, Feeder, FeederDocument, GridError};

/// Version tag every feeder document must carry.
pub const FORMAT_VERSION: u32 = 1;

/// Parses, resolves and validates a JSON feeder document.
pub fn load_feeder(source: &[u8]) -> Result<Feeder, GridError> {
    let doc: FeederDocument =
        serde_json::from_slice(source).map_err(|e| GridError::Parse(e.to_string()))?;
    if doc.format_version != FORMAT_VERSION {
        return Err(GridError::UnsupportedVersion(doc.format_version));
    }
    let feeder = Feeder::from_document(doc)?;
    let report = validate_feeder(&feeder);
    if !report.is_ok() {
        return Err(GridError::Invalid(report.violations));
    }
    Ok(feeder)
}
