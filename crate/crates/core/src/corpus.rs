//! COCO caption/instance ingestion and the immutable, indexed [`Corpus`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tokenize::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CaptionId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstanceId(pub u64);

macro_rules! id_display {
    ($($t:ty),*) => {$(
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt(f)
            }
        }
    )*};
}
id_display!(ImageId, CaptionId, InstanceId);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
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
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split name {other:?} (expected train, val or test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: ImageId,
    pub file_name: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub caption_id: CaptionId,
    pub image_id: ImageId,
    pub text: String,
    pub tokens: Vec<String>,
}

impl CaptionRecord {
    pub fn new(caption_id: CaptionId, image_id: ImageId, text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        CaptionRecord {
            caption_id,
            image_id,
            text,
            tokens,
        }
    }
}

/// Pixel-space box `(x, y, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

impl From<[f64; 4]> for BBox {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        BBox { x, y, w, h }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonInstance {
    pub instance_id: InstanceId,
    pub image_id: ImageId,
    pub bbox: BBox,
    /// COCO `area` field (segmentation area), passed through.
    pub area: f64,
    /// Opaque polygon/RLE payload, passed through untouched.
    pub segmentation: serde_json::Value,
    pub iscrowd: bool,
}

/// Counters describing what ingestion dropped.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadStats {
    pub images_without_split: usize,
    pub captions_dropped: usize,
    pub split_ids_without_image: usize,
    pub instances_non_person: usize,
    pub instances_degenerate: usize,
    pub instances_outside_split: usize,
}

/// Where the corpus came from; carried into every report header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    /// SHA-256 over all input files, in load order.
    pub corpus_sha256: String,
    pub split_source: String,
    pub split_sha256: String,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    images: Vec<ImageRecord>,
    captions: Vec<CaptionRecord>,
    instances: Vec<PersonInstance>,
    captions_by_image: Vec<Vec<usize>>,
    instances_by_image: Vec<Vec<usize>>,
    instances_loaded: bool,
    provenance: Provenance,
    stats: LoadStats,
}

// ---- raw COCO schema ----

/// COCO captions file (`{"images": [...], "annotations": [...]}`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CocoCaptions {
    #[serde(default)]
    pub images: Vec<CocoImage>,
    #[serde(default)]
    pub annotations: Vec<CocoCaption>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    #[serde(default)]
    pub file_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCaption {
    pub id: u64,
    pub image_id: u64,
    pub caption: String,
}

#[derive(Debug, Deserialize)]
struct CocoInstances {
    #[serde(default)]
    annotations: Vec<CocoInstance>,
    #[serde(default)]
    categories: Option<Vec<CocoCategory>>,
}

#[derive(Debug, Deserialize)]
struct CocoInstance {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    #[serde(default)]
    area: f64,
    #[serde(default)]
    segmentation: serde_json::Value,
    #[serde(default, deserialize_with = "deserialize_iscrowd")]
    iscrowd: bool,
}

#[derive(Debug, Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

fn deserialize_iscrowd<'de, D>(deserializer: D) -> std::result::Result<bool, D::Error>
where
    D: Deserializer<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum IsCrowd {
        Bool(bool),
        Int(u8),
    }
    match IsCrowd::deserialize(deserializer)? {
        IsCrowd::Bool(b) => Ok(b),
        IsCrowd::Int(i) => Ok(i != 0),
    }
}

/// COCO uses category id 1 for "person" when no category table is present.
const COCO_PERSON_CATEGORY: u64 = 1;

pub fn parse_captions(label: &str, bytes: &[u8]) -> Result<CocoCaptions> {
    serde_json::from_slice(bytes).map_err(|e| Error::parse(label, bytes, e))
}

/// Parse a split file of the form `{"train": [ids], "val": [ids], "test": [ids]}`.
pub fn parse_split(label: &str, bytes: &[u8]) -> Result<BTreeMap<ImageId, Split>> {
    let raw: BTreeMap<String, Vec<u64>> =
        serde_json::from_slice(bytes).map_err(|e| Error::parse(label, bytes, e))?;
    let mut out = BTreeMap::new();
    let mut clashes = Vec::new();
    for (name, ids) in raw {
        let split: Split = name.parse()?;
        for id in ids {
            if let Some(prev) = out.insert(ImageId(id), split) {
                if prev != split {
                    clashes.push(id);
                }
            }
        }
    }
    if !clashes.is_empty() {
        return Err(Error::Config(format!(
            "{label}: {} image ids assigned to more than one split (first: {})",
            clashes.len(),
            clashes[0]
        )));
    }
    Ok(out)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Load a corpus from COCO captions files, optional instance files and a split file.
///
/// Several caption/instance files may be given (e.g. train2017 and val2017 when
/// the split spans both); their records are merged.
pub fn load_corpus<P: AsRef<Path>>(
    captions_paths: &[P],
    instances_paths: &[P],
    split_path: P,
) -> Result<Corpus> {
    let caption_bytes = captions_paths
        .iter()
        .map(|p| Ok((p.as_ref().display().to_string(), read(p.as_ref())?)))
        .collect::<Result<Vec<_>>>()?;
    let instance_bytes = instances_paths
        .iter()
        .map(|p| Ok((p.as_ref().display().to_string(), read(p.as_ref())?)))
        .collect::<Result<Vec<_>>>()?;
    let split_label = split_path.as_ref().display().to_string();
    let split_bytes = read(split_path.as_ref())?;

    Corpus::from_slices(
        &as_slices(&caption_bytes),
        &as_slices(&instance_bytes),
        (&split_label, &split_bytes),
    )
}

fn as_slices(v: &[(String, Vec<u8>)]) -> Vec<(&str, &[u8])> {
    v.iter().map(|(l, b)| (l.as_str(), b.as_slice())).collect()
}

impl Corpus {
    /// Build a corpus from in-memory file contents, each tagged with a label used in errors.
    pub fn from_slices(
        captions: &[(&str, &[u8])],
        instances: &[(&str, &[u8])],
        split: (&str, &[u8]),
    ) -> Result<Corpus> {
        let mut hasher = Sha256::new();
        let mut stats = LoadStats::default();

        let split_map = parse_split(split.0, split.1)?;

        let mut images: BTreeMap<ImageId, ImageRecord> = BTreeMap::new();
        let mut all_image_ids: BTreeSet<ImageId> = BTreeSet::new();
        let mut raw_captions: Vec<CocoCaption> = Vec::new();
        let mut duplicates = Vec::new();
        for (label, bytes) in captions {
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(bytes);
            let file = parse_captions(label, bytes)?;
            for img in file.images {
                let id = ImageId(img.id);
                if !all_image_ids.insert(id) {
                    duplicates.push(img.id);
                    continue;
                }
                match split_map.get(&id) {
                    Some(&split) => {
                        images.insert(
                            id,
                            ImageRecord {
                                image_id: id,
                                file_name: img.file_name,
                                split,
                            },
                        );
                    }
                    None => stats.images_without_split += 1,
                }
            }
            raw_captions.extend(file.annotations);
        }
        if !duplicates.is_empty() {
            return Err(Error::integrity("duplicate image ids", duplicates));
        }

        let unknown: Vec<u64> = raw_captions
            .iter()
            .filter(|c| !all_image_ids.contains(&ImageId(c.image_id)))
            .map(|c| c.image_id)
            .collect();
        if !unknown.is_empty() {
            return Err(Error::integrity(
                "captions reference unknown image ids",
                unknown,
            ));
        }

        raw_captions.sort_by_key(|c| c.id);
        let dup_captions: Vec<u64> = raw_captions
            .windows(2)
            .filter(|w| w[0].id == w[1].id)
            .map(|w| w[0].id)
            .collect();
        if !dup_captions.is_empty() {
            return Err(Error::integrity("duplicate caption ids", dup_captions));
        }

        stats.split_ids_without_image = split_map
            .keys()
            .filter(|id| !all_image_ids.contains(id))
            .count();

        let images: Vec<ImageRecord> = images.into_values().collect();
        let position = |id: ImageId| images.binary_search_by_key(&id, |r| r.image_id).ok();

        let mut captions_by_image = vec![Vec::new(); images.len()];
        let mut caption_records = Vec::with_capacity(raw_captions.len());
        for raw in raw_captions {
            let image_id = ImageId(raw.image_id);
            match position(image_id) {
                Some(pos) => {
                    captions_by_image[pos].push(caption_records.len());
                    caption_records.push(CaptionRecord::new(
                        CaptionId(raw.id),
                        image_id,
                        raw.caption,
                    ));
                }
                None => stats.captions_dropped += 1,
            }
        }

        let mut person_instances = Vec::new();
        let mut instances_by_image = vec![Vec::new(); images.len()];
        for (label, bytes) in instances {
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(bytes);
            let file: CocoInstances =
                serde_json::from_slice(bytes).map_err(|e| Error::parse(label, bytes, e))?;
            let person_category = match &file.categories {
                None => COCO_PERSON_CATEGORY,
                Some(cats) => cats
                    .iter()
                    .find(|c| c.name == "person")
                    .map(|c| c.id)
                    .ok_or_else(|| {
                        Error::Config(format!("{label}: no \"person\" category in categories"))
                    })?,
            };
            let unknown: Vec<u64> = file
                .annotations
                .iter()
                .filter(|a| !all_image_ids.contains(&ImageId(a.image_id)))
                .map(|a| a.image_id)
                .collect();
            if !unknown.is_empty() {
                return Err(Error::integrity(
                    format!("{label}: instances reference unknown image ids"),
                    unknown,
                ));
            }
            for ann in file.annotations {
                if ann.category_id != person_category {
                    stats.instances_non_person += 1;
                    continue;
                }
                let bbox = BBox::from(ann.bbox);
                if !(bbox.w > 0.0 && bbox.h > 0.0 && ann.area > 0.0) {
                    stats.instances_degenerate += 1;
                    continue;
                }
                let image_id = ImageId(ann.image_id);
                let Some(pos) = position(image_id) else {
                    stats.instances_outside_split += 1;
                    continue;
                };
                instances_by_image[pos].push(person_instances.len());
                person_instances.push(PersonInstance {
                    instance_id: InstanceId(ann.id),
                    image_id,
                    bbox,
                    area: ann.area,
                    segmentation: ann.segmentation,
                    iscrowd: ann.iscrowd,
                });
            }
        }
        for idx in &mut instances_by_image {
            idx.sort_by_key(|&i| person_instances[i].instance_id);
        }
        let mut seen = BTreeSet::new();
        let dup_instances: Vec<u64> = person_instances
            .iter()
            .filter(|p| !seen.insert(p.instance_id))
            .map(|p| p.instance_id.0)
            .collect();
        if !dup_instances.is_empty() {
            return Err(Error::integrity("duplicate instance ids", dup_instances));
        }

        let split_sha256 = hex(&Sha256::digest(split.1));
        hasher.update(split.1);

        if stats.images_without_split > 0 {
            log::warn!(
                "{} images absent from split file {} were dropped",
                stats.images_without_split,
                split.0
            );
        }

        Ok(Corpus {
            images,
            captions: caption_records,
            instances: person_instances,
            captions_by_image,
            instances_by_image,
            instances_loaded: !instances.is_empty(),
            provenance: Provenance {
                corpus_sha256: hex(&hasher.finalize()),
                split_source: split.0.to_string(),
                split_sha256,
            },
            stats,
        })
    }

    /// Images in ascending id order.
    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn images_in(&self, split: Split) -> impl Iterator<Item = &ImageRecord> + '_ {
        self.images.iter().filter(move |r| r.split == split)
    }

    /// All captions in ascending caption id order.
    pub fn captions(&self) -> &[CaptionRecord] {
        &self.captions
    }

    pub fn instances(&self) -> &[PersonInstance] {
        &self.instances
    }

    pub fn instances_loaded(&self) -> bool {
        self.instances_loaded
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn load_stats(&self) -> &LoadStats {
        &self.stats
    }

    pub fn image(&self, image_id: ImageId) -> Result<&ImageRecord> {
        self.position(image_id).map(|p| &self.images[p])
    }

    pub fn split_of(&self, image_id: ImageId) -> Option<Split> {
        self.position(image_id).ok().map(|p| self.images[p].split)
    }

    fn position(&self, image_id: ImageId) -> Result<usize> {
        self.images
            .binary_search_by_key(&image_id, |r| r.image_id)
            .map_err(|_| Error::UnknownImage(image_id.0))
    }

    /// Captions of one image, sorted by caption id.
    pub fn captions_of(&self, image_id: ImageId) -> Result<Vec<&CaptionRecord>> {
        let pos = self.position(image_id)?;
        Ok(self.captions_by_image[pos]
            .iter()
            .map(|&i| &self.captions[i])
            .collect())
    }

    /// Captions of the image at index `pos` in [`Corpus::images`].
    pub(crate) fn captions_at(&self, pos: usize) -> impl Iterator<Item = &CaptionRecord> + '_ {
        self.captions_by_image[pos].iter().map(|&i| &self.captions[i])
    }

    pub(crate) fn image_positions(&self, split: Split) -> Vec<usize> {
        (0..self.images.len())
            .filter(|&p| self.images[p].split == split)
            .collect()
    }

    pub fn instances_of(&self, image_id: ImageId) -> Result<Vec<&PersonInstance>> {
        let pos = self.position(image_id)?;
        Ok(self.instances_by_image[pos]
            .iter()
            .map(|&i| &self.instances[i])
            .collect())
    }

    /// Up to `k` non-crowd person instances, largest box area first, ties by instance id.
    pub fn largest_person_boxes(&self, image_id: ImageId, k: usize) -> Result<Vec<&PersonInstance>> {
        if k == 0 {
            return Err(Error::Input("k must be positive".into()));
        }
        let mut boxes: Vec<&PersonInstance> = self
            .instances_of(image_id)?
            .into_iter()
            .filter(|p| !p.iscrowd)
            .collect();
        boxes.sort_by(|a, b| {
            b.bbox
                .area()
                .total_cmp(&a.bbox.area())
                .then(a.instance_id.cmp(&b.instance_id))
        });
        boxes.truncate(k);
        Ok(boxes)
    }

    pub fn split_sizes(&self) -> BTreeMap<Split, usize> {
        let mut sizes = BTreeMap::new();
        for r in &self.images {
            *sizes.entry(r.split).or_insert(0) += 1;
        }
        sizes
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    use std::fmt::Write;
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}
