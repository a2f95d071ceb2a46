//! Two-phase transfer learning on the residual backbone: train the head with
//! the backbone frozen, then unfreeze its last 100 layers at a lower rate.
//!
//! Without a pretrained checkpoint the backbone is random, so this shows the
//! mechanics rather than the accuracy benefit.
//!
//! ```text
//! cargo run --release --example two_phase_finetune -- [model id 1-4] [pretrained.pdcn]
//! ```

use pedcnn::data::synthetic::{synthetic_dataset, NOISE};
use pedcnn::train::{train, Control, TrainConfig};
use pedcnn::{registry_lookup, zoo};

fn main() -> pedcnn::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let id: u8 = args.next().map_or(3, |a| a.parse().expect("model id"));
    let mut model_cfg = registry_lookup(id)?;
    model_cfg.pretrained = args.next().map(Into::into);

    let train_set = synthetic_dataset(3, NOISE, 1)?;
    let val_set = synthetic_dataset(1, NOISE, 2)?;
    let mut cfg = TrainConfig::new(model_cfg, 4);
    cfg.epochs = 2;
    cfg.fine_tune_epochs = 2;

    let mut model = zoo::build(&cfg.model, cfg.seed)?;
    let outcome = train(&mut model, &cfg, &train_set, &val_set, |_| Control::Continue)?;
    for r in &outcome.history.records {
        println!(
            "epoch {} phase {}: loss {:.4} acc {:.3} | val loss {:.4} acc {:.3}",
            r.epoch,
            r.phase.number(),
            r.train_loss,
            r.train_accuracy,
            r.val_loss,
            r.val_accuracy
        );
    }
    let s = model.summary();
    println!(
        "after phase 2: {} of {} parameters trainable, learning rate {}",
        s.trainable, s.total, outcome.optimizer.learning_rate
    );
    Ok(())
}
