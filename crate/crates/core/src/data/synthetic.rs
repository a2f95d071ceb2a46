//! Class-coded synthetic images and a toy COCO corpus for smoke tests.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde_json::json;

use super::{write_ppm, DemographicClass};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng};
use crate::tensor::Tensor;
use crate::train::Dataset;
use crate::zoo::INPUT_SIZE;

/// Base colour per class, in class index order.
pub const CLASS_COLORS: [[u8; 3]; 6] = [
    [220, 50, 50],
    [50, 200, 60],
    [60, 70, 220],
    [220, 210, 50],
    [210, 60, 210],
    [50, 200, 210],
];

/// Default per-channel noise amplitude.
pub const NOISE: f32 = 20.0;

fn noisy_pixel(rng: &mut impl Rng, base: [u8; 3], noise: f32) -> [f32; 3] {
    base.map(|c| {
        let v = f32::from(c)
            + if noise > 0.0 {
                rng.random_range(-noise..=noise)
            } else {
                0.0
            };
        v.round().clamp(0.0, 255.0)
    })
}

/// A 99×99 image of the class colour plus uniform per-pixel noise, with
/// integer intensities in 0..=255.
pub fn class_image(class: DemographicClass, noise: f32, seed: u64) -> Tensor {
    let mut r = rng(seed);
    let base = CLASS_COLORS[class.index()];
    let data: Vec<f32> = (0..INPUT_SIZE * INPUT_SIZE)
        .flat_map(|_| noisy_pixel(&mut r, base, noise))
        .collect();
    Tensor::from_vec(&[INPUT_SIZE, INPUT_SIZE, 3], data).expect("fixed shape")
}

/// `per_class` images of every class, interleaved by class, scaled to [0, 1].
pub fn synthetic_dataset(per_class: usize, noise: f32, seed: u64) -> Result<Dataset> {
    let mut images = Vec::with_capacity(per_class * 6);
    let mut labels = Vec::with_capacity(per_class * 6);
    for i in 0..per_class {
        for class in DemographicClass::ALL {
            let s = derive_seed(seed, "synthetic", (i * 6 + class.index()) as u64);
            images.push(class_image(class, noise, s).map(|v| v / 255.0));
            labels.push(class.index());
        }
    }
    Dataset::new(images, labels)
}

/// Write `frames_per_class` 96×72 frames per class under `dir/frames`, each
/// holding one class-coloured box on a grey background, plus
/// `dir/annotations.json`. Returns `(annotations, frames dir)`.
pub fn write_toy_coco(dir: &Path, frames_per_class: usize, seed: u64) -> Result<(PathBuf, PathBuf)> {
    let frames = dir.join("frames");
    std::fs::create_dir_all(&frames).map_err(|e| Error::io(&frames, e))?;
    let (fw, fh) = (96usize, 72usize);
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    let mut id = 0u64;
    for i in 0..frames_per_class {
        for class in DemographicClass::ALL {
            id += 1;
            let mut r = rng(derive_seed(seed, "synthetic", id));
            let (bw, bh) = (r.random_range(20..40usize), r.random_range(30..60usize));
            let (bx, by) = (r.random_range(0..fw - bw), r.random_range(0..fh - bh));
            let mut data = Vec::with_capacity(fw * fh * 3);
            for y in 0..fh {
                for x in 0..fw {
                    let inside = (bx..bx + bw).contains(&x) && (by..by + bh).contains(&y);
                    let base = if inside {
                        CLASS_COLORS[class.index()]
                    } else {
                        [128, 128, 128]
                    };
                    data.extend(noisy_pixel(&mut r, base, NOISE));
                }
            }
            let name = format!("frame_{i:03}_{}.ppm", class.slug());
            write_ppm(frames.join(&name), &Tensor::from_vec(&[fh, fw, 3], data)?)?;
            images.push(json!({"id": id, "file_name": name, "width": fw, "height": fh}));
            annotations.push(json!({
                "id": id,
                "image_id": id,
                "category_id": class.index() + 1,
                "bbox": [bx, by, bw, bh],
            }));
        }
    }
    let mut categories = vec![json!({"id": 0, "name": "pedestrians"})];
    categories.extend(
        DemographicClass::ALL
            .iter()
            .map(|c| json!({"id": c.index() + 1, "name": c.name()})),
    );
    let doc = json!({"images": images, "annotations": annotations, "categories": categories});
    let path = dir.join("annotations.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&doc)?).map_err(|e| Error::io(&path, e))?;
    Ok((path, frames))
}
