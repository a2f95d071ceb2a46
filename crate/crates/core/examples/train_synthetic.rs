//! Train the compact CNN on class-coloured synthetic images.
//!
//! ```text
//! cargo run --release --example train_synthetic -- [model id] [epochs] [per class]
//! ```

use pedcnn::data::synthetic::{synthetic_dataset, NOISE};
use pedcnn::train::{train, Control, TrainConfig};
use pedcnn::{registry_lookup, zoo};

fn main() -> pedcnn::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args()
        .skip(1)
        .map(|a| a.parse::<usize>().expect("numeric argument"));
    let id = args.next().unwrap_or(8) as u8;
    let epochs = args.next().unwrap_or(10);
    let per_class = args.next().unwrap_or(20);

    let train_set = synthetic_dataset(per_class, NOISE, 1)?;
    let val_set = synthetic_dataset(4, NOISE, 2)?;
    let mut cfg = TrainConfig::new(registry_lookup(id)?, 7);
    cfg.epochs = epochs;
    cfg.fine_tune_epochs = 0;

    let mut model = zoo::build(&cfg.model, cfg.seed)?;
    let outcome = train(&mut model, &cfg, &train_set, &val_set, |r| {
        if r.train_accuracy >= 0.99 {
            Control::Stop
        } else {
            Control::Continue
        }
    })?;
    for r in &outcome.history.records {
        println!(
            "epoch {:>3}  loss {:.4}  acc {:.3}  val loss {:.4}  val acc {:.3}  {:.1}s",
            r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy, r.seconds
        );
    }
    Ok(())
}
