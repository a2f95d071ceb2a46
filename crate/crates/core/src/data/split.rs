//! Class-wise 70:20:10 splitting and training-set balancing.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{AugmentParams, AugmentRanges, DemographicClass, Manifest, Origin, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng, shuffled};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.7,
            val: 0.2,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !(0.0..=1.0).contains(r)) || ((all.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios {all:?} must be in [0,1] and sum to 1"
            )));
        }
        Ok(())
    }
}

/// `(train, val, test)` for a class of `n`: floor, floor, remainder.
pub fn split_counts(n: usize, ratios: &SplitRatios) -> (usize, usize, usize) {
    // The small slack keeps exact products such as 10·0.7 from flooring
    // down through representation error.
    let train = (n as f64 * ratios.train + 1e-9).floor() as usize;
    let val = (n as f64 * ratios.val + 1e-9).floor() as usize;
    let train = train.min(n);
    let val = val.min(n - train);
    (train, val, n - train - val)
}

/// Assign every sample to a split, class by class: order by source id,
/// shuffle with the class's sub-seed, then cut contiguous runs. The result
/// lists train, then val, then test, each ordered by class and source id.
pub fn stratified_split(samples: Vec<SampleRecord>, ratios: &SplitRatios, seed: u64) -> Result<Manifest> {
    ratios.validate()?;
    let mut by_class: BTreeMap<DemographicClass, Vec<SampleRecord>> = BTreeMap::new();
    for s in samples {
        by_class.entry(s.class).or_default().push(s);
    }
    let mut out = Vec::new();
    for (class, mut items) in by_class {
        if items.len() < 3 {
            return Err(Error::Split(format!(
                "{class} has {} samples; at least 3 are needed to fill three splits",
                items.len()
            )));
        }
        items.sort_by(|a, b| (a.source_id, &a.path).cmp(&(b.source_id, &b.path)));
        let order = shuffled(items.len(), derive_seed(seed, "split", class.index() as u64));
        let (train, val, _) = split_counts(items.len(), ratios);
        for (rank, &i) in order.iter().enumerate() {
            let mut s = items[i].clone();
            s.split = if rank < train {
                Split::Train
            } else if rank < train + val {
                Split::Val
            } else {
                Split::Test
            };
            out.push(s);
        }
    }
    out.sort_by(|a, b| (a.split, a.class, a.source_id, &a.path).cmp(&(b.split, b.class, b.source_id, &b.path)));
    Ok(Manifest { records: out })
}

/// A crop to synthesize from an original training sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentJob {
    pub source: PathBuf,
    pub dest: PathBuf,
    pub params: AugmentParams,
}

fn augmented_path(source: &std::path::Path, copy: usize) -> PathBuf {
    let stem = source.file_stem().and_then(|s| s.to_str()).unwrap_or("sample");
    source.with_file_name(format!("{stem}_aug{copy:04}.ppm"))
}

/// Bring every class's training split to exactly `target` samples. Larger
/// classes keep a seeded random subset of originals; smaller ones keep all
/// originals and gain augmented copies, round-robin over the originals.
/// Validation and test records pass through untouched.
pub fn balance_train(
    manifest: &Manifest,
    target: usize,
    seed: u64,
    ranges: &AugmentRanges,
) -> Result<(Manifest, Vec<AugmentJob>)> {
    ranges.validate()?;
    if target == 0 {
        return Err(Error::Balance("target must be at least 1".into()));
    }
    let mut train = Vec::new();
    let mut jobs = Vec::new();
    for class in DemographicClass::ALL {
        let originals: Vec<&SampleRecord> = manifest
            .records
            .iter()
            .filter(|r| r.split == Split::Train && r.class == class && r.origin == Origin::Original)
            .collect();
        let n = originals.len();
        if n == 0 {
            return Err(Error::Balance(format!("{class} has no training originals")));
        }
        let class_seed = derive_seed(seed, "balance", class.index() as u64);
        if n >= target {
            let mut keep: Vec<usize> = shuffled(n, class_seed).into_iter().take(target).collect();
            keep.sort_unstable();
            train.extend(keep.into_iter().map(|i| originals[i].clone()));
            continue;
        }
        train.extend(originals.iter().map(|r| (*r).clone()));
        let mut draws = rng(class_seed);
        for k in 0..target - n {
            let src = originals[k % n];
            let dest = augmented_path(&src.path, k / n);
            jobs.push(AugmentJob {
                source: src.path.clone(),
                dest: dest.clone(),
                params: AugmentParams::sample(ranges, &mut draws),
            });
            train.push(SampleRecord {
                path: dest,
                origin: Origin::Augmented,
                ..src.clone()
            });
        }
    }
    let mut records = train;
    records.extend(manifest.records.iter().filter(|r| r.split != Split::Train).cloned());
    Ok((Manifest { records }, jobs))
}
