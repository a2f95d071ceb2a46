//! parse → crop → split → balance → materialize, end to end.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{
    augment, balance_train, crop_and_resize, parse_coco_file, read_image, read_ppm, stratified_split, write_manifest,
    write_ppm, AugmentJob, AugmentRanges, Manifest, Origin, SampleRecord, Split, SplitRatios,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PrepareConfig {
    pub annotations: PathBuf,
    pub frames: PathBuf,
    pub workdir: PathBuf,
    pub seed: u64,
    /// Training samples per class after balancing.
    pub target: usize,
    pub ratios: SplitRatios,
    pub ranges: AugmentRanges,
}

impl PrepareConfig {
    pub fn new(annotations: impl Into<PathBuf>, frames: impl Into<PathBuf>, workdir: impl Into<PathBuf>) -> Self {
        PrepareConfig {
            annotations: annotations.into(),
            frames: frames.into(),
            workdir: workdir.into(),
            seed: 0,
            target: 5000,
            ratios: SplitRatios::default(),
            ranges: AugmentRanges::default(),
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.workdir.join("manifest.tsv")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrepareReport {
    pub manifest: Manifest,
    pub skipped_missing_bbox: usize,
    /// Boxes that vanished after clamping to their frame.
    pub skipped_degenerate: usize,
}

/// Write the augmented crops a balancing pass asked for.
pub fn materialize(jobs: &[AugmentJob], base: &Path) -> Result<()> {
    for job in jobs {
        let src = read_ppm(base.join(&job.source))?;
        write_ppm(base.join(&job.dest), &augment(&src, &job.params)?)?;
    }
    Ok(())
}

/// Build the crop corpus and manifest under `config.workdir`.
pub fn prepare(config: &PrepareConfig) -> Result<PrepareReport> {
    if !config.annotations.is_file() {
        return Err(Error::io(
            &config.annotations,
            std::io::Error::new(std::io::ErrorKind::NotFound, "annotation file not found"),
        ));
    }
    config.ratios.validate()?;
    config.ranges.validate()?;
    let parsed = parse_coco_file(&config.annotations)?;

    let mut by_frame: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in parsed.records.iter().enumerate() {
        by_frame.entry(r.file_name.as_str()).or_default().push(i);
    }
    let mut samples = Vec::with_capacity(parsed.records.len());
    let mut skipped_degenerate = 0;
    for (file, indices) in by_frame {
        let frame = read_image(config.frames.join(file))?;
        for i in indices {
            let r = &parsed.records[i];
            let crop = match crop_and_resize(&frame, &r.bbox) {
                Ok(c) => c,
                Err(Error::Crop(detail)) => {
                    log::warn!("annotation {}: {detail}", r.id);
                    skipped_degenerate += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let rel = PathBuf::from("crops")
                .join(r.class.slug())
                .join(format!("{:06}.ppm", r.id));
            write_ppm(config.workdir.join(&rel), &crop)?;
            samples.push(SampleRecord {
                path: rel,
                class: r.class,
                split: Split::Train,
                origin: Origin::Original,
                source_id: r.id,
            });
        }
    }
    let split = stratified_split(samples, &config.ratios, config.seed)?;
    let (manifest, jobs) = balance_train(&split, config.target, config.seed, &config.ranges)?;
    materialize(&jobs, &config.workdir)?;
    write_manifest(&manifest, config.manifest_path())?;
    Ok(PrepareReport {
        manifest,
        skipped_missing_bbox: parsed.skipped_missing_bbox,
        skipped_degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::write_toy_coco;
    use crate::data::DemographicClass;

    #[test]
    fn toy_corpus_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let (ann, frames) = write_toy_coco(&dir.path().join("raw"), 10, 4).unwrap();
        let mut cfg = PrepareConfig::new(ann, frames, dir.path().join("work"));
        cfg.target = 12;
        cfg.seed = 4;
        let report = prepare(&cfg).unwrap();
        report.manifest.validate_balance(12).unwrap();
        for c in DemographicClass::ALL {
            assert_eq!(report.manifest.count(c, Split::Val), 2);
            assert_eq!(report.manifest.count(c, Split::Test), 1);
        }
        for r in &report.manifest.records {
            let img = read_ppm(cfg.workdir.join(&r.path)).unwrap();
            assert_eq!(img.shape(), &[99, 99, 3]);
        }
        let first = std::fs::read(cfg.manifest_path()).unwrap();
        prepare(&cfg).unwrap();
        assert_eq!(std::fs::read(cfg.manifest_path()).unwrap(), first);
    }

    #[test]
    fn missing_annotation_file() {
        let cfg = PrepareConfig::new("/nonexistent/annotations.json", "/nonexistent", "/tmp/unused");
        assert!(matches!(prepare(&cfg), Err(Error::Io { .. })));
    }
}
