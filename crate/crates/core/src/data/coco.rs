use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DemographicClass;
use crate::error::{Error, Result};

/// Pixel box: top-left corner and extent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: u64,
    pub image_id: u64,
    pub file_name: String,
    pub bbox: BBox,
    pub class: DemographicClass,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParsedCoco {
    /// Sorted by annotation id.
    pub records: Vec<AnnotationRecord>,
    pub skipped_missing_bbox: usize,
}

#[derive(Deserialize)]
struct Document {
    images: Vec<Image>,
    annotations: Vec<Annotation>,
    categories: Vec<Category>,
}

#[derive(Deserialize)]
struct Image {
    id: u64,
    file_name: String,
}

#[derive(Deserialize)]
struct Annotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    #[serde(default)]
    bbox: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct Category {
    id: u64,
    name: String,
}

/// One record per annotation with a box. Category names match the six
/// classes case-insensitively; a category that no annotation uses may have
/// any name (exports often carry an unused parent category).
pub fn parse_coco(text: &str) -> Result<ParsedCoco> {
    let doc: Document =
        serde_json::from_str(text).map_err(|e| Error::Ingest(format!("malformed COCO document: {e}")))?;
    let images: BTreeMap<u64, &str> = doc.images.iter().map(|i| (i.id, i.file_name.as_str())).collect();
    let categories: BTreeMap<u64, &str> = doc.categories.iter().map(|c| (c.id, c.name.as_str())).collect();

    let mut unknown = BTreeSet::new();
    for a in &doc.annotations {
        match categories.get(&a.category_id) {
            Some(name) if DemographicClass::parse(name).is_some() => {}
            Some(name) => {
                unknown.insert(name.to_string());
            }
            None => {
                unknown.insert(format!("<category id {}>", a.category_id));
            }
        }
    }
    if !unknown.is_empty() {
        let list: Vec<String> = unknown.into_iter().collect();
        return Err(Error::Ingest(format!("unknown categories: {}", list.join(", "))));
    }

    let mut out = ParsedCoco::default();
    for a in &doc.annotations {
        let Some(b) = &a.bbox else {
            out.skipped_missing_bbox += 1;
            continue;
        };
        let &[x, y, width, height] = b.as_slice() else {
            return Err(Error::Ingest(format!(
                "annotation {} has a {}-value bbox",
                a.id,
                b.len()
            )));
        };
        let file_name = images
            .get(&a.image_id)
            .ok_or_else(|| Error::Ingest(format!("annotation {} refers to missing image {}", a.id, a.image_id)))?;
        let class = DemographicClass::parse(categories[&a.category_id]).expect("checked above");
        out.records.push(AnnotationRecord {
            id: a.id,
            image_id: a.image_id,
            file_name: file_name.to_string(),
            bbox: BBox { x, y, width, height },
            class,
        });
    }
    if out.skipped_missing_bbox > 0 {
        log::warn!("skipped {} annotations without a bbox", out.skipped_missing_bbox);
    }
    out.records.sort_by_key(|r| r.id);
    Ok(out)
}

pub fn parse_coco_file(path: &Path) -> Result<ParsedCoco> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_coco(&text)
}
