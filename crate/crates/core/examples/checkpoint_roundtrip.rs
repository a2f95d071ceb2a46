//! Save a briefly trained model, load it back and confirm the bytes and the
//! predictions survive the trip.
//!
//! ```text
//! cargo run --release --example checkpoint_roundtrip -- [path]
//! ```

use pedcnn::data::synthetic::{synthetic_dataset, NOISE};
use pedcnn::train::{predict, train, Checkpoint, Control, TrainConfig};
use pedcnn::{registry_lookup, zoo};

fn main() -> pedcnn::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("pedcnn_roundtrip.pdcn"), Into::into);
    let data = synthetic_dataset(4, NOISE, 1)?;
    let mut cfg = TrainConfig::new(registry_lookup(5)?, 3);
    cfg.epochs = 1;
    let mut model = zoo::build(&cfg.model, cfg.seed)?;
    let outcome = train(&mut model, &cfg, &data, &data, |_| Control::Continue)?;
    outcome.checkpoint.write(&path)?;

    let bytes = std::fs::read(&path).map_err(|e| pedcnn::Error::Io {
        path: path.clone(),
        source: e,
    })?;
    let loaded = Checkpoint::read(&path)?;
    let (mut restored, opt) = loaded.restore()?;
    println!(
        "{} bytes, {} tensors, optimizer step {}",
        bytes.len(),
        loaded.tensors().len(),
        opt.t
    );
    println!("re-encoded identically: {}", loaded.to_bytes()? == bytes);

    let before = predict(&mut model, &data, 8)?;
    let after = predict(&mut restored, &data, 8)?;
    println!("predictions identical: {}", before == after);
    print!("{}", restored.summary());
    Ok(())
}
