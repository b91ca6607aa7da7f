use std::path::Path;

use anyhow::Context;
use relprop::format::write_atomic;
use relprop::imaging::RasterImage;

/// PNG when the path ends in `.png`, binary PPM otherwise.
pub fn save_image(img: &RasterImage, path: &Path) -> anyhow::Result<()> {
    let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let bytes = if is_png { img.to_png_bytes()? } else { img.to_ppm_bytes() };
    write_atomic(path, &bytes).with_context(|| format!("writing {}", path.display()))
}

/// Serialises into memory, then writes the file in one atomic step.
pub fn save_with(path: &Path, fill: impl FnOnce(&mut Vec<u8>) -> relprop::Result<()>) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    fill(&mut buf)?;
    write_atomic(path, &buf).with_context(|| format!("writing {}", path.display()))
}
