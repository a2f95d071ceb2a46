//! Build a crop corpus from COCO-style annotations.
//!
//! With no arguments a toy corpus is generated under a temporary directory
//! first, so the example runs anywhere:
//!
//! ```text
//! cargo run --release --example prepare_coco -- [annotations.json frames_dir workdir [target]]
//! ```

use std::path::PathBuf;

use pedcnn::data::synthetic::write_toy_coco;
use pedcnn::data::{prepare, PrepareConfig};

fn main() -> pedcnn::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (annotations, frames, workdir, target) = if args.len() >= 3 {
        let target = args.get(3).map_or(5000, |t| t.parse().expect("numeric target"));
        (
            PathBuf::from(&args[0]),
            PathBuf::from(&args[1]),
            PathBuf::from(&args[2]),
            target,
        )
    } else {
        let root = std::env::temp_dir().join("pedcnn_toy_corpus");
        let (a, f) = write_toy_coco(&root, 20, 1)?;
        (a, f, root.join("work"), 50)
    };
    let mut cfg = PrepareConfig::new(annotations, frames, workdir);
    cfg.target = target;
    let report = prepare(&cfg)?;
    print!("{}", report.manifest.count_table());
    println!(
        "skipped {} annotations without a box and {} empty crops",
        report.skipped_missing_bbox, report.skipped_degenerate
    );
    println!("manifest written to {}", cfg.manifest_path().display());
    Ok(())
}
