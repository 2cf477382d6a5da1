use std::path::Path;

use image::{Rgb, RgbImage};
use ndt_imaging::grid::ImageGrid;
use ndt_imaging::metrics::Exclusion;
use ndt_imaging::model::GroundTruthMask;

use crate::CliError;

const TP: Rgb<u8> = Rgb([255, 255, 255]);
const FP: Rgb<u8> = Rgb([220, 40, 40]);
const FN: Rgb<u8> = Rgb([40, 90, 230]);
const TN: Rgb<u8> = Rgb([0, 0, 0]);
const SKIPPED: Rgb<u8> = Rgb([70, 70, 70]);

/// Thresholded image coloured by confusion class. `image` must already be
/// normalised the same way the threshold was chosen.
pub fn render(
    image: &ImageGrid,
    truth: &GroundTruthMask,
    tau: f64,
    exclusion: &Exclusion,
) -> RgbImage {
    let g = image.grid;
    let first_skipped = g.ny - exclusion.excluded_rows(g.ny);
    RgbImage::from_fn(g.nx as u32, g.ny as u32, |i, j| {
        let (i, j) = (i as usize, j as usize);
        if j >= first_skipped {
            return SKIPPED;
        }
        let k = g.index(i, j);
        match (image.values[k] >= tau, truth.mask[k] == 1) {
            (true, true) => TP,
            (true, false) => FP,
            (false, true) => FN,
            (false, false) => TN,
        }
    })
}

pub fn write(path: &Path, img: &RgbImage) -> Result<(), CliError> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}
