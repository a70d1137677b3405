use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::labels::{LabelMap, UNLABELED};

pub type Rgb = [u8; 3];

/// Fifteen mutually distinct class colors.
pub const DEFAULT_PALETTE: [Rgb; 15] = [
    [0, 0, 255],
    [255, 128, 0],
    [0, 200, 0],
    [255, 0, 0],
    [160, 32, 240],
    [255, 255, 0],
    [0, 255, 255],
    [255, 0, 255],
    [128, 64, 0],
    [255, 182, 193],
    [128, 128, 128],
    [0, 128, 128],
    [128, 128, 0],
    [0, 0, 128],
    [255, 255, 255],
];

/// Indexed-color PNG: palette entry 0 is black for unlabeled pixels and
/// class `k` maps to `palette[k - 1]`.
pub fn encode_label_png<W: Write>(labels: &LabelMap, palette: &[Rgb], out: W) -> Result<()> {
    let k = labels.num_classes() as usize;
    if palette.len() < k {
        return Err(Error::invalid(format!(
            "palette has {} colors for {k} classes",
            palette.len()
        )));
    }
    let mut plte = vec![0u8; 3];
    for color in &palette[..k] {
        plte.extend_from_slice(color);
    }
    let mut encoder = png::Encoder::new(out, labels.width() as u32, labels.height() as u32);
    encoder.set_color(png::ColorType::Indexed);
    encoder.set_depth(png::BitDepth::Eight);
    encoder.set_palette(plte);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::format(format!("png header: {e}")))?;
    debug_assert_eq!(UNLABELED, 0);
    writer
        .write_image_data(labels.as_slice())
        .map_err(|e| Error::format(format!("png data: {e}")))?;
    writer
        .finish()
        .map_err(|e| Error::format(format!("png finish: {e}")))?;
    Ok(())
}

pub fn export_label_png(labels: &LabelMap, palette: &[Rgb], path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    encode_label_png(labels, palette, &mut out)?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_is_distinct() {
        for (i, a) in DEFAULT_PALETTE.iter().enumerate() {
            assert_ne!(*a, [0, 0, 0]);
            for b in &DEFAULT_PALETTE[i + 1..] {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn short_palette_is_rejected() {
        let labels = LabelMap::new(1, 1, 3, vec![3]).unwrap();
        assert!(encode_label_png(&labels, &DEFAULT_PALETTE[..2], Vec::new()).is_err());
    }

    #[test]
    fn encoding_is_deterministic() {
        let labels = LabelMap::new(2, 3, 3, vec![0, 1, 2, 3, 2, 1]).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        encode_label_png(&labels, &DEFAULT_PALETTE, &mut a).unwrap();
        encode_label_png(&labels, &DEFAULT_PALETTE, &mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(&a[1..4], b"PNG");
    }
}
