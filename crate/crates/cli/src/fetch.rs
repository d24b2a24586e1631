//! Download of the JTPA data file.

use std::io::Read;
use std::path::Path;

use csf_core::{CensoringCheck, ColumnSchema, SurvivalDataset};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const JTPA_URL: &str =
    "https://raw.githubusercontent.com/GillesCrommen/DCC/748bd7f98feccad09205ee3df76df5ba740cc3d7/clean_dataset_JTPA.csv";

/// Upper bound on the accepted download size.
const MAX_BYTES: u64 = 64 << 20;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FetchReport {
    pub url: String,
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
    pub rows: usize,
    pub censoring_rate: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Checks a downloaded body against the JTPA schema and an optional pin.
pub fn verify(bytes: &[u8], expected_sha256: Option<&str>) -> Result<(String, SurvivalDataset)> {
    let digest = sha256_hex(bytes);
    if let Some(pin) = expected_sha256 {
        if !pin.eq_ignore_ascii_case(&digest) {
            return Err(CliError::Integrity(format!("sha256 {digest} does not match the pinned {pin}")));
        }
    }
    let ds = SurvivalDataset::read_csv(bytes, &ColumnSchema::jtpa(), CensoringCheck::Required)
        .map_err(|e| CliError::Integrity(format!("downloaded file is not a JTPA table: {e}")))?;
    Ok((digest, ds))
}

pub fn fetch(url: &str, out: &Path, expected_sha256: Option<&str>) -> Result<FetchReport> {
    let mut response = ureq::get(url).call().map_err(|e| CliError::Network(format!("{url}: {e}")))?;
    let mut body = Vec::new();
    response
        .body_mut()
        .as_reader()
        .take(MAX_BYTES)
        .read_to_end(&mut body)
        .map_err(|e| CliError::Network(format!("{url}: {e}")))?;
    let (sha256, ds) = verify(&body, expected_sha256)?;
    std::fs::write(out, &body).map_err(|e| CliError::io(out, e))?;
    Ok(FetchReport {
        url: url.to_string(),
        path: out.display().to_string(),
        sha256,
        bytes: body.len(),
        rows: ds.n(),
        censoring_rate: ds.censoring_rate(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "days,treatment,delta,age,hsged,white,children,married,male\n\
                          10,1,1,25,1,0,1,0,1\n\
                          800,0,0,31,0,1,0,1,0\n";

    #[test]
    fn schema_and_pin_checked() {
        let (digest, ds) = verify(SAMPLE.as_bytes(), None).unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(digest.len(), 64);
        assert!(verify(SAMPLE.as_bytes(), Some(&digest.to_uppercase())).is_ok());
        let err = verify(SAMPLE.as_bytes(), Some("00")).unwrap_err();
        assert!(matches!(err, CliError::Integrity(_)));
        let err = verify(b"a,b\n1,2\n", None).unwrap_err();
        assert!(matches!(err, CliError::Integrity(_)));
    }

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
