//! Finite-difference gradient check of every layer kind in double precision.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use pedcnn::gradcheck::{check_layer, random_tensor, EPS};
use pedcnn::layers::{BatchNorm, Conv2d, Dense, Layer, MaxPool2d, Mode};
use pedcnn::{Padding, Tensor};

fn main() -> pedcnn::Result<()> {
    let x = random_tensor(&[2, 6, 6, 3], 1, -1.0, 1.0);
    let cases: Vec<(Layer<f64>, Vec<Tensor<f64>>)> = vec![
        (
            Layer::conv2d(
                "conv 3x3 same",
                Conv2d::new(3, 4, (3, 3), 1, Padding::SamePreserving, 2)?,
            ),
            vec![x.clone()],
        ),
        (
            Layer::conv2d("conv 3x3 stride 2", Conv2d::new(3, 4, (3, 3), 2, Padding::SameCeil, 3)?),
            vec![x.clone()],
        ),
        (
            Layer::batchnorm("batchnorm", BatchNorm::new(3)?),
            vec![random_tensor(&[2, 6, 6, 3], 4, -2.0, 2.0)],
        ),
        (Layer::relu("relu"), vec![x.clone()]),
        (
            Layer::maxpool2d("maxpool 2x2", MaxPool2d::new(2, 2, Padding::ValidFloor)),
            vec![x.clone()],
        ),
        (
            Layer::maxpool2d("maxpool 3x3/2", MaxPool2d::new(3, 2, Padding::SameCeil)),
            vec![x.clone()],
        ),
        (Layer::globalavgpool("global average pool"), vec![x.clone()]),
        (Layer::flatten("flatten"), vec![x.clone()]),
        (
            Layer::dense("dense", Dense::new(8, 5, 5)?),
            vec![random_tensor(&[3, 8], 6, -1.0, 1.0)],
        ),
        (Layer::dropout("dropout", 0.3)?, vec![x.clone()]),
        (Layer::softmax("softmax"), vec![random_tensor(&[4, 6], 7, -3.0, 3.0)]),
        (
            Layer::add("add"),
            vec![x.clone(), random_tensor(&[2, 6, 6, 3], 8, -1.0, 1.0)],
        ),
    ];
    println!(
        "{:<22} {:>8} {:>12} {:>12}  verdict",
        "layer", "entries", "max abs", "max rel"
    );
    for (mut layer, inputs) in cases {
        let report = check_layer(&mut layer, &inputs, Mode::Train, 11, EPS)?;
        let max_abs = report.comparisons.iter().map(|c| c.abs_error()).fold(0.0, f64::max);
        let max_rel = report
            .comparisons
            .iter()
            .filter(|c| c.analytic.abs() > 1e-6)
            .map(|c| c.rel_error())
            .fold(0.0, f64::max);
        println!(
            "{:<22} {:>8} {:>12.2e} {:>12.2e}  {}",
            layer.name(),
            report.comparisons.len(),
            max_abs,
            max_rel,
            if report.passes(1e-4, 1e-6) { "ok" } else { "MISMATCH" }
        );
    }
    Ok(())
}
