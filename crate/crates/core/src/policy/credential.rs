use base64::alphabet;
use base64::engine::{DecodePaddingMode, GeneralPurpose, GeneralPurposeConfig};
use base64::Engine;
use thiserror::Error;

use super::Identity;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CredentialError {
    #[error("authorization header has no credential token")]
    MissingToken,
    #[error("credential is not valid base64")]
    InvalidEncoding,
    #[error("credential has no ':' separator")]
    MissingSeparator,
    #[error("credential names an empty user")]
    EmptyUser,
}

const URL_SAFE_LENIENT: GeneralPurpose = GeneralPurpose::new(
    &alphabet::URL_SAFE,
    GeneralPurposeConfig::new().with_decode_padding_mode(DecodePaddingMode::Indifferent),
);

/// Extracts the user from `"<scheme> <base64(user:secret)>"`.
///
/// Both the URL-safe and the standard alphabet are accepted.
pub fn parse_credential(header: &str) -> Result<Identity, CredentialError> {
    let (_, token) = header.split_once(' ').ok_or(CredentialError::MissingToken)?;
    let normalized: String = token
        .trim()
        .chars()
        .map(|c| match c {
            '+' => '-',
            '/' => '_',
            c => c,
        })
        .collect();
    let bytes = URL_SAFE_LENIENT
        .decode(normalized.as_bytes())
        .map_err(|_| CredentialError::InvalidEncoding)?;
    let plain = String::from_utf8(bytes).map_err(|_| CredentialError::InvalidEncoding)?;
    let (user, _) = plain.split_once(':').ok_or(CredentialError::MissingSeparator)?;
    Identity::new(user).map_err(|_| CredentialError::EmptyUser)
}

/// `Basic` header for `user:secret`, standard alphabet.
pub fn basic_credential(user: &str, secret: &str) -> String {
    format!("Basic {}", base64::engine::general_purpose::STANDARD.encode(format!("{user}:{secret}")))
}
