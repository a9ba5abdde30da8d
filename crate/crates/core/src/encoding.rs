//! Byte-level encoding detection and decoding shared by metrics and cleaner.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextEncoding {
    Ascii,
    Utf8,
    /// Bytes 0x80..=0x9F present, which ISO-8859-1 leaves undefined.
    Windows1252,
    Iso8859_1,
    Binary,
    Unknown,
}

impl TextEncoding {
    pub fn name(self) -> &'static str {
        match self {
            TextEncoding::Ascii => "ascii",
            TextEncoding::Utf8 => "utf-8",
            TextEncoding::Windows1252 => "windows-1252",
            TextEncoding::Iso8859_1 => "iso-8859-1",
            TextEncoding::Binary => "binary",
            TextEncoding::Unknown => "unknown",
        }
    }
}

/// Classifies a complete byte buffer.
pub fn detect(bytes: &[u8]) -> TextEncoding {
    detect_sample(bytes, false)
}

/// Classifies a byte buffer. When `truncated` is set the buffer is a prefix
/// of a longer file, and a UTF-8 sequence cut off at its end does not
/// disqualify UTF-8.
pub fn detect_sample(bytes: &[u8], truncated: bool) -> TextEncoding {
    if bytes.is_ascii() {
        return if bytes.contains(&0) {
            TextEncoding::Binary
        } else {
            TextEncoding::Ascii
        };
    }
    if bytes.contains(&0) {
        return TextEncoding::Binary;
    }
    match std::str::from_utf8(bytes) {
        Ok(_) => TextEncoding::Utf8,
        Err(e) if truncated && e.error_len().is_none() => TextEncoding::Utf8,
        Err(_) => {
            if bytes.iter().any(|b| (0x80..=0x9f).contains(b)) {
                TextEncoding::Windows1252
            } else {
                TextEncoding::Iso8859_1
            }
        }
    }
}

/// Decodes as UTF-8 when valid, otherwise as Windows-1252 (a superset of the
/// printable ISO-8859-1 range). Never fails.
pub fn decode(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(s) => s.to_string(),
        Err(_) => {
            let (text, _, _) = encoding_rs::WINDOWS_1252.decode(bytes);
            text.into_owned()
        }
    }
}
