//! Certificate persistence: JSON with full float round-trip plus a hash of
//! the model matrices so a certificate cannot silently be applied to a
//! different loop.

use petc_core::lmidesign::DesignCertificate;
use petc_core::matrix::Matrix;
use petc_core::sysmodel::AugmentedSystem;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CERT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateFile {
    pub schema_version: u32,
    /// FNV-1a over dimensions and raw float bits of all model matrices.
    pub model_hash: String,
    pub certificate: DesignCertificate,
}

/// Deterministic digest of the closed-loop model a certificate was built for.
pub fn model_hash(aug: &AugmentedSystem) -> String {
    let mut state: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            state ^= b as u64;
            state = state.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    let mut eat_matrix = |m: &Matrix| {
        eat(&(m.rows() as u64).to_le_bytes());
        eat(&(m.cols() as u64).to_le_bytes());
        for v in m.data() {
            eat(&v.to_bits().to_le_bytes());
        }
    };
    for m in [
        &aug.plant.a,
        &aug.plant.b,
        &aug.plant.e,
        &aug.plant.c,
        &aug.ctrl.a,
        &aug.ctrl.b,
        &aug.ctrl.c,
        &aug.ctrl.d,
        &aug.c_bar,
        &aug.d_bar,
    ] {
        eat_matrix(m);
    }
    format!("{state:016x}")
}

pub fn save_certificate(
    path: &Path,
    cert: &DesignCertificate,
    aug: &AugmentedSystem,
) -> Result<(), String> {
    let file = CertificateFile {
        schema_version: CERT_SCHEMA_VERSION,
        model_hash: model_hash(aug),
        certificate: cert.clone(),
    };
    let json = serde_json::to_string_pretty(&file).map_err(|e| format!("certificate: {e}"))?;
    std::fs::write(path, json).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

pub fn load_certificate(path: &Path) -> Result<CertificateFile, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let file: CertificateFile =
        serde_json::from_str(&text).map_err(|e| format!("certificate: {e}"))?;
    if file.schema_version != CERT_SCHEMA_VERSION {
        return Err(format!(
            "certificate: unsupported schema_version {} (expected {CERT_SCHEMA_VERSION})",
            file.schema_version
        ));
    }
    Ok(file)
}
