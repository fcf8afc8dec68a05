use std::path::Path;

use pvmap_core::raster::ImageRaster;

use crate::error::{CliError, CliResult};

pub fn encode_ppm(img: &ImageRaster) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

/// Binary 8-bit PPM. Header comments are allowed.
pub fn decode_ppm(bytes: &[u8], path: &Path) -> CliResult<ImageRaster> {
    let err = |r: &str| CliError::input(path, r.to_string());
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(err("not a binary PPM (P6) file"));
    }
    let mut pos = 2;
    let mut header = [0u64; 3];
    for field in &mut header {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(err("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err("malformed header"))?;
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(err("malformed header"));
    }
    pos += 1;
    let [w, h, maxval] = header;
    if maxval != 255 {
        return Err(err("only 8-bit PPM is supported"));
    }
    let (w, h) = (u32::try_from(w).map_err(|_| err("width too large"))?, u32::try_from(h).map_err(|_| err("height too large"))?);
    let need = w as usize * h as usize * 3;
    let data = &bytes[pos..];
    if data.len() < need {
        return Err(err(&format!("truncated payload: {} of {need} bytes", data.len())));
    }
    ImageRaster::new(w, h, data[..need].to_vec()).map_err(|e| CliError::input(path, e.to_string()))
}

pub fn load_image(path: &Path) -> CliResult<ImageRaster> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_ppm(&bytes, path)
}

pub fn write_image(path: &Path, img: &ImageRaster) -> CliResult<()> {
    super::write_bytes(path, &encode_ppm(img))
}
