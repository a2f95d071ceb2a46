//! Tab-separated sample manifest: one line per crop file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DemographicClass;
use crate::error::{Error, Result};

const HEADER: &str = "path\tclass\tsplit\torigin\tsource_id";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.as_str() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Original,
    Augmented,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Original => "original",
            Origin::Augmented => "augmented",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    /// Relative to the manifest's working directory.
    pub path: PathBuf,
    pub class: DemographicClass,
    pub split: Split,
    pub origin: Origin,
    /// Annotation the crop (or its augmentation source) came from.
    pub source_id: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<SampleRecord>,
}

impl Manifest {
    pub fn count(&self, class: DemographicClass, split: Split) -> usize {
        self.records
            .iter()
            .filter(|r| r.class == class && r.split == split)
            .count()
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Per-class, per-split counts as a fixed-width table.
    pub fn count_table(&self) -> String {
        let mut out = format!(
            "{:<16} {:>7} {:>7} {:>7} {:>10}\n",
            "class", "train", "val", "test", "augmented"
        );
        for c in DemographicClass::ALL {
            let aug = self
                .records
                .iter()
                .filter(|r| r.class == c && r.origin == Origin::Augmented)
                .count();
            let _ = writeln!(
                out,
                "{:<16} {:>7} {:>7} {:>7} {:>10}",
                c.name(),
                self.count(c, Split::Train),
                self.count(c, Split::Val),
                self.count(c, Split::Test),
                aug
            );
        }
        out
    }

    /// Every class has exactly `target` training samples and augmented
    /// samples appear only in training.
    pub fn validate_balance(&self, target: usize) -> Result<()> {
        for c in DemographicClass::ALL {
            let n = self.count(c, Split::Train);
            if n != target {
                return Err(Error::Balance(format!(
                    "{c} has {n} training samples, expected {target}"
                )));
            }
        }
        if let Some(r) = self
            .records
            .iter()
            .find(|r| r.origin == Origin::Augmented && r.split != Split::Train)
        {
            return Err(Error::Balance(format!(
                "augmented sample {} is in the {} split",
                r.path.display(),
                r.split.as_str()
            )));
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> Result<String> {
        let mut out = String::from(HEADER);
        out.push('\n');
        for r in &self.records {
            let path = r
                .path
                .to_str()
                .filter(|p| !p.contains(['\t', '\n', '\r']))
                .ok_or_else(|| Error::Data(format!("path {:?} cannot be written to a manifest", r.path)))?;
            let _ = writeln!(
                out,
                "{path}\t{}\t{}\t{}\t{}",
                r.class.slug(),
                r.split.as_str(),
                r.origin.as_str(),
                r.source_id
            );
        }
        Ok(out)
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == HEADER => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    detail: format!("expected header {HEADER:?}"),
                })
            }
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            let line_no = i + 1;
            let err = |detail: String| Error::Parse { line: line_no, detail };
            let fields: Vec<&str> = line.split('\t').collect();
            let &[path, class, split, origin, source] = fields.as_slice() else {
                return Err(err(format!("expected 5 tab-separated fields, got {}", fields.len())));
            };
            records.push(SampleRecord {
                path: PathBuf::from(path),
                class: DemographicClass::parse(class).ok_or_else(|| err(format!("unknown class {class:?}")))?,
                split: Split::parse(split).ok_or_else(|| err(format!("unknown split {split:?}")))?,
                origin: match origin {
                    "original" => Origin::Original,
                    "augmented" => Origin::Augmented,
                    _ => return Err(err(format!("unknown origin {origin:?}"))),
                },
                source_id: source.parse().map_err(|_| err(format!("bad source id {source:?}")))?,
            });
        }
        Ok(Manifest { records })
    }
}

pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, manifest.to_tsv()?).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Manifest::from_tsv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(i: u64, class: DemographicClass, split: Split, origin: Origin) -> SampleRecord {
        SampleRecord {
            path: PathBuf::from(format!("crops/{}/{i:06}.ppm", class.slug())),
            class,
            split,
            origin,
            source_id: i,
        }
    }

    #[test]
    fn empty_manifest_is_header_only() {
        assert_eq!(Manifest::default().to_tsv().unwrap(), format!("{HEADER}\n"));
        assert_eq!(Manifest::from_tsv(&format!("{HEADER}\n")).unwrap(), Manifest::default());
    }

    #[test]
    fn round_trip() {
        let m = Manifest {
            records: DemographicClass::ALL
                .iter()
                .enumerate()
                .flat_map(|(i, &c)| {
                    [
                        rec(i as u64 * 10, c, Split::Train, Origin::Original),
                        rec(i as u64 * 10 + 1, c, Split::Train, Origin::Augmented),
                        rec(i as u64 * 10 + 2, c, Split::Val, Origin::Original),
                        rec(i as u64 * 10 + 3, c, Split::Test, Origin::Original),
                    ]
                })
                .collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.tsv");
        write_manifest(&m, &path).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), m);
    }

    #[test]
    fn malformed_lines_report_their_number() {
        let text = format!("{HEADER}\na.ppm\tmale_adult\ttrain\toriginal\t1\nb.ppm\tmale_adult\ttrain\n");
        match Manifest::from_tsv(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let text = format!("{HEADER}\na.ppm\twizard\ttrain\toriginal\t1\n");
        assert!(matches!(Manifest::from_tsv(&text), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(
            Manifest::from_tsv("nope\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn balance_validation() {
        let mut m = Manifest::default();
        for c in DemographicClass::ALL {
            for i in 0..5000 {
                m.records.push(rec(i, c, Split::Train, Origin::Original));
            }
        }
        assert!(m.validate_balance(5000).is_ok());
        assert!(m.validate_balance(4999).is_err());
        m.records
            .push(rec(1, DemographicClass::MaleAdult, Split::Val, Origin::Augmented));
        assert!(matches!(m.validate_balance(5000), Err(Error::Balance(_))));
    }
}
