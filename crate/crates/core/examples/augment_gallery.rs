//! Write a strip of random augmentations of one synthetic crop as PPM files.
//!
//! ```text
//! cargo run --release --example augment_gallery -- [output dir] [count]
//! ```

use std::path::PathBuf;

use pedcnn::data::synthetic::class_image;
use pedcnn::data::{augment, write_ppm, AugmentParams, AugmentRanges, DemographicClass};
use pedcnn::seed::rng;
use pedcnn::Tensor;

fn main() -> pedcnn::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args
        .next()
        .map_or_else(|| std::env::temp_dir().join("pedcnn_gallery"), PathBuf::from);
    let count: usize = args.next().map_or(8, |c| c.parse().expect("numeric count"));

    // A bar pattern makes rotation, shear and flips visible.
    let mut src = class_image(DemographicClass::FemaleAdult, 0.0, 0);
    let data = src.data_mut();
    for y in 0..99 {
        for x in 30..45 {
            data[(y * 99 + x) * 3..(y * 99 + x) * 3 + 3].copy_from_slice(&[240.0, 240.0, 240.0]);
        }
    }
    for x in 0..60 {
        data[(20 * 99 + x) * 3..(20 * 99 + x) * 3 + 3].copy_from_slice(&[20.0, 20.0, 20.0]);
    }
    write_ppm(out.join("source.ppm"), &src)?;

    let ranges = AugmentRanges::default();
    let mut r = rng(5);
    for i in 0..count {
        let p = AugmentParams::sample(&ranges, &mut r);
        let img: Tensor = augment(&src, &p)?;
        write_ppm(out.join(format!("aug_{i:02}.ppm")), &img)?;
        println!(
            "aug_{i:02}: flip {} rot {:+.1} shift ({:+.3}, {:+.3}) shear {:+.1} zoom {:.3}",
            p.flip, p.rotation_deg, p.shift_x, p.shift_y, p.shear_deg, p.zoom
        );
    }
    println!("wrote {} images to {}", count + 1, out.display());
    Ok(())
}
