//! Test images bundled into the binary, addressed as `builtin:<name>`.

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::pgm::decode_pgm;

pub const BUILTIN_PREFIX: &str = "builtin:";

const IMAGES: [(&str, &[u8]); 4] = [
    ("plus", include_bytes!("../assets/plus.pgm")),
    ("ring", include_bytes!("../assets/ring.pgm")),
    ("ell", include_bytes!("../assets/ell.pgm")),
    ("seven", include_bytes!("../assets/seven.pgm")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    IMAGES.iter().map(|(n, _)| *n)
}

pub fn bytes(name: &str) -> Option<&'static [u8]> {
    IMAGES.iter().find(|(n, _)| *n == name).map(|(_, b)| *b)
}

pub fn image(name: &str) -> Result<Mat> {
    let b = bytes(name).ok_or_else(|| {
        Error::ConfigInvalid {
            field: "image".into(),
            message: format!("unknown builtin image {name:?}; available: {}", names().collect::<Vec<_>>().join(", ")),
        }
    })?;
    decode_pgm(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pgm::encode_pgm;

    #[test]
    fn glyphs_decode_and_are_canonical() {
        for name in names() {
            let x = image(name).unwrap();
            let side = if name == "seven" { 28 } else { 10 };
            assert_eq!(x.shape(), (side, side), "{name}");
            assert!(x.max_abs() > 0.0);
            assert_eq!(encode_pgm(&x).unwrap(), bytes(name).unwrap());
        }
        assert!(image("nope").is_err());
    }
}
