//! Per-layer parameter ledger for registry models.
//!
//! With an id, prints that model's full ledger; without, one summary line per
//! model.
//!
//! ```text
//! cargo run --release --example parameter_ledger -- [model id]
//! ```

use pedcnn::{registry_lookup, zoo};

fn main() -> pedcnn::Result<()> {
    let single = std::env::args()
        .nth(1)
        .map(|id| id.parse::<u8>().expect("model id 1-8"));
    let ids: Vec<u8> = single.map_or_else(|| (1..=8).collect(), |id| vec![id]);
    for id in ids {
        let cfg = registry_lookup(id)?;
        let s = zoo::build(&cfg, 0)?.summary();
        if single.is_some() {
            print!("{s}");
        }
        println!(
            "model {id}: {:?}/{:?}/{:?} lr {}: {} total, {} trainable, {} frozen",
            cfg.architecture,
            cfg.pooling,
            cfg.optimizer,
            cfg.learning_rate,
            s.total,
            s.trainable,
            s.non_trainable()
        );
    }
    Ok(())
}
