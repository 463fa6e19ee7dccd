//! Small file helpers and the feature, token and scene file formats.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use objtok_core::featurize::FeatureMap;
use objtok_core::numcore::Tensor;
use objtok_core::objproj::ObjectToken;
use objtok_core::scenesynth::{make_qa, QaItem, QaKind, SceneSpec, SceneTruth};
use objtok_core::video::{Frame, Mask};

use crate::ortn::{self, Payload, Record};
use crate::{rle, Error};

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes).map_err(|e| Error::Path(path.to_path_buf(), e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, Error> {
    fs::read(path).map_err(|e| Error::Path(path.to_path_buf(), e))
}

pub fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::Path(path.to_path_buf(), e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, Error> {
    Ok(sha256_hex(&read_bytes(path)?))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Error> {
    Ok(serde_json::from_str(&read_text(path)?)?)
}

/// Frames as one u8 record `[T x H x W x 3]`.
pub fn frames_record(frames: &[Frame]) -> Result<Record, Error> {
    let (h, w) = frames.first().map_or((0, 0), |f| (f.height, f.width));
    let mut data = Vec::with_capacity(frames.len() * h * w * 3);
    for f in frames {
        if (f.height, f.width) != (h, w) {
            return Err(Error::Format("frames differ in size".into()));
        }
        data.extend_from_slice(&f.data);
    }
    Record::new(vec![frames.len(), h, w, 3], Payload::U8(data))
}

pub fn frames_from_record(r: &Record) -> Result<Vec<Frame>, Error> {
    let Payload::U8(data) = &r.payload else {
        return Err(Error::Format("frames must be u8".into()));
    };
    if r.dims.len() != 4 || r.dims[3] != 3 {
        return Err(Error::Format(format!("frame dims {:?}, want [T, H, W, 3]", r.dims)));
    }
    let (h, w) = (r.dims[1], r.dims[2]);
    Ok(data
        .chunks_exact(h * w * 3)
        .map(|c| Frame {
            height: h,
            width: w,
            data: c.to_vec(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub kind: String,
    pub question: String,
    pub object: Option<usize>,
    pub answer: String,
}

impl From<&QaItem> for QaRecord {
    fn from(q: &QaItem) -> Self {
        Self {
            kind: q.kind.name().into(),
            question: q.question.clone(),
            object: q.object,
            answer: q.answer.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaFile {
    pub caption: String,
    pub items: Vec<QaRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub id: String,
    pub seed: u64,
    pub frames: String,
    pub masks: String,
    pub tags: String,
    pub qa: String,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "W")]
    pub w: usize,
    pub objects: usize,
    /// File name to sha256 of its bytes.
    pub sha256: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub scenes: Vec<SceneEntry>,
}

/// One scene read back from an export.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScene {
    pub id: String,
    pub frames: Vec<Frame>,
    /// `masks[object][frame]`.
    pub masks: Vec<Vec<Mask>>,
    pub tags: Vec<Vec<String>>,
    pub qa: QaFile,
}

/// Writes frames, masks, tags and QA for each scene plus `manifest.json`.
/// QA holds one item per kind that applies, drawn with the scene seed.
pub fn export_dataset(scenes: &[(String, SceneSpec)], out_dir: &Path) -> Result<SceneManifest, Error> {
    let mut entries = Vec::with_capacity(scenes.len());
    for (id, spec) in scenes {
        let truth = objtok_core::scenesynth::generate_scene(spec)?;
        entries.push(export_scene(id, &truth, out_dir)?);
    }
    let manifest = SceneManifest { scenes: entries };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn export_scene(id: &str, truth: &SceneTruth, out_dir: &Path) -> Result<SceneEntry, Error> {
    let names = [
        format!("{id}.frames.ortn"),
        format!("{id}.masks.rle"),
        format!("{id}.tags.txt"),
        format!("{id}.qa.json"),
    ];
    let items = [QaKind::General, QaKind::ObjectDetail, QaKind::Referring]
        .into_iter()
        .filter_map(|k| make_qa(truth, k, truth.spec.seed).ok())
        .map(|q| QaRecord::from(&q))
        .collect();
    let qa = QaFile {
        caption: truth.caption.clone(),
        items,
    };
    let mut qa_text = serde_json::to_string_pretty(&qa)?;
    qa_text.push('\n');
    let blobs = [
        ortn::encode(&[frames_record(&truth.frames)?])?,
        rle::write_scene_masks(&truth.masks).into_bytes(),
        rle::write_tags(&truth.tags).into_bytes(),
        qa_text.into_bytes(),
    ];
    let mut sha256 = BTreeMap::new();
    for (name, blob) in names.iter().zip(&blobs) {
        write_bytes(&out_dir.join(name), blob)?;
        sha256.insert(name.clone(), sha256_hex(blob));
    }
    let [frames, masks, tags, qa] = names;
    Ok(SceneEntry {
        id: id.into(),
        seed: truth.spec.seed,
        frames,
        masks,
        tags,
        qa,
        t: truth.num_frames(),
        h: truth.spec.height,
        w: truth.spec.width,
        objects: truth.num_objects(),
        sha256,
    })
}

pub fn load_scene(dir: &Path, e: &SceneEntry) -> Result<LoadedScene, Error> {
    let recs = ortn::read_file(&dir.join(&e.frames))?;
    let frames = frames_from_record(recs.first().ok_or_else(|| Error::Format("no frame record".into()))?)?;
    if frames.len() != e.t {
        return Err(Error::Format(format!("{}: {} frames, manifest says {}", e.id, frames.len(), e.t)));
    }
    let masks = rle::read_scene_masks(&read_text(&dir.join(&e.masks))?, e.objects, e.t, e.h, e.w)?;
    let tags = rle::read_tags(&read_text(&dir.join(&e.tags))?);
    let qa = read_json(&dir.join(&e.qa))?;
    Ok(LoadedScene {
        id: e.id.clone(),
        frames,
        masks,
        tags,
        qa,
    })
}

/// Recomputes every checksum listed in the manifest.
pub fn verify_manifest(dir: &Path, m: &SceneManifest) -> Result<(), Error> {
    for e in &m.scenes {
        for (name, want) in &e.sha256 {
            let got = sha256_file(&dir.join(name))?;
            if &got != want {
                return Err(Error::Checksum(dir.join(name)));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureHeader {
    pub video_id: String,
    pub frames: Vec<usize>,
    pub patch: usize,
    #[serde(rename = "D")]
    pub dim: usize,
}

pub fn feature_paths(dir: &Path, id: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{id}.features.ortn")), dir.join(format!("{id}.features.json")))
}

pub fn write_feature_map(dir: &Path, fm: &FeatureMap) -> Result<(), Error> {
    let (bin, side) = feature_paths(dir, &fm.video_id);
    ortn::write_file(&bin, &[Record::from_tensor(&fm.features)])?;
    write_json(
        &side,
        &FeatureHeader {
            video_id: fm.video_id.clone(),
            frames: fm.frames.clone(),
            patch: fm.patch,
            dim: fm.dim(),
        },
    )
}

pub fn read_feature_map(dir: &Path, id: &str) -> Result<FeatureMap, Error> {
    let (bin, side) = feature_paths(dir, id);
    let head: FeatureHeader = read_json(&side)?;
    let recs = ortn::read_file(&bin)?;
    let features = recs
        .first()
        .ok_or_else(|| Error::Format("no feature record".into()))?
        .to_tensor()?;
    let d = features.dims();
    if d.len() != 4 || d[0] != head.frames.len() || d[3] != head.dim {
        return Err(Error::Format(format!("feature dims {d:?} disagree with sidecar")));
    }
    Ok(FeatureMap {
        video_id: head.video_id,
        frames: head.frames,
        patch: head.patch,
        features,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenHeader {
    pub video_id: String,
    /// Object ids in token order.
    pub object_ids: Vec<usize>,
    /// Feature slices behind each object token.
    pub frames: Vec<usize>,
    pub areas: Vec<usize>,
    pub context_tokens: usize,
    pub d: usize,
}

/// Object tokens `[N x d]` then context tokens `[N_v x d]`, plus sidecar.
pub fn write_tokens(dir: &Path, video_id: &str, objects: &[ObjectToken], context: &Tensor) -> Result<(), Error> {
    let d = context.cols();
    let flat: Vec<f64> = objects.iter().flat_map(|o| o.vector.iter().copied()).collect();
    let recs = [
        Record::new(vec![objects.len(), d], Payload::F64(flat))?,
        Record::from_tensor(context),
    ];
    ortn::write_file(&dir.join(format!("{video_id}.tokens.ortn")), &recs)?;
    write_json(
        &dir.join(format!("{video_id}.tokens.json")),
        &TokenHeader {
            video_id: video_id.into(),
            object_ids: objects.iter().map(|o| o.id).collect(),
            frames: objects.iter().map(|o| o.frames).collect(),
            areas: objects.iter().map(|o| o.area).collect(),
            context_tokens: context.rows(),
            d,
        },
    )
}
