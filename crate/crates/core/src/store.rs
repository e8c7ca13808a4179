//! Corpus manifests, train/test splits, and binary files for signatures and
//! models.
//!
//! Signature files (`DIFS`) are little-endian:
//!
//! ```text
//! magic "DIFS" | u32 version | u8 kind | u32 dim | u64 count | [u8; 32] digest
//! count x (u32 byte length, UTF-8 id)
//! count x dim f32, row-major
//! ```
//!
//! Model files (`DIFM`) share the header layout with their own magic and kind
//! tags; the payload is a list of sections, each a `u64` word count followed
//! by that many 8-byte words (f64 bit patterns, or integers).
//!
//! Files are written to a temporary sibling and renamed into place.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifiers::{LinearModel, ProjectionMatrix, SvmParams};
use crate::error::{Error, Result};
use crate::feature::{FeatureKind, FeatureVector};
use crate::models::{GmmModel, PcaModel};

pub const FEATURE_MAGIC: [u8; 4] = *b"DIFS";
pub const MODEL_MAGIC: [u8; 4] = *b"DIFM";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 1 + 4 + 8 + 32;

pub const DEFAULT_SPLITS: usize = 5;
pub const DEFAULT_TRAIN_RATIO: f64 = 0.5;

/// SHA-256 of a configuration string.
pub fn config_digest(config: &str) -> [u8; 32] {
    Sha256::digest(config.as_bytes()).into()
}

pub fn digest_hex(digest: &[u8; 32]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

/// One image of a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub id: String,
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

impl ManifestItem {
    pub fn new(id: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        ManifestItem {
            id: id.into(),
            path: path.into(),
            label: None,
            split: None,
            group: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn with_group(mut self, group: impl Into<String>) -> Self {
        self.group = Some(group.into());
        self
    }
}

#[derive(Serialize, Deserialize)]
struct ClassHeader {
    classes: Vec<String>,
}

#[derive(Deserialize)]
struct RawItem {
    id: Option<String>,
    path: Option<PathBuf>,
    label: Option<String>,
    split: Option<SplitTag>,
    group: Option<String>,
}

/// Validated corpus description: unique ids, labels from `classes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    classes: Vec<String>,
    items: Vec<ManifestItem>,
    /// Directory relative item paths are resolved against.
    base_dir: PathBuf,
}

impl DatasetManifest {
    /// Builds a manifest; without explicit classes, the sorted set of labels
    /// is used.
    pub fn new(classes: Option<Vec<String>>, items: Vec<ManifestItem>) -> Result<Self> {
        let numbered: Vec<(usize, ManifestItem)> =
            items.into_iter().enumerate().map(|(i, it)| (i + 1, it)).collect();
        Self::validate(classes, numbered, 0)
    }

    fn validate(
        classes: Option<Vec<String>>,
        items: Vec<(usize, ManifestItem)>,
        last_line: usize,
    ) -> Result<Self> {
        let bad = |line: usize, message: String| Error::Manifest { line, message };
        if items.is_empty() {
            return Err(bad(last_line, "manifest has no items".into()));
        }
        let classes = match classes {
            Some(c) => {
                let mut seen = HashSet::new();
                if let Some(dup) = c.iter().find(|n| !seen.insert(n.as_str())) {
                    return Err(bad(1, format!("class {dup:?} declared twice")));
                }
                c
            }
            None => {
                let set: std::collections::BTreeSet<&String> =
                    items.iter().filter_map(|(_, it)| it.label.as_ref()).collect();
                set.into_iter().cloned().collect()
            }
        };
        let declared: HashSet<&str> = classes.iter().map(String::as_str).collect();
        let mut ids = HashSet::new();
        for (line, it) in &items {
            if it.id.is_empty() {
                return Err(bad(*line, "empty id".into()));
            }
            if it.path.as_os_str().is_empty() {
                return Err(bad(*line, format!("item {:?} has no path", it.id)));
            }
            if !ids.insert(it.id.as_str()) {
                return Err(bad(*line, format!("duplicate id {:?}", it.id)));
            }
            if let Some(l) = &it.label {
                if !declared.contains(l.as_str()) {
                    return Err(bad(*line, format!("undeclared label {l:?}")));
                }
            }
        }
        Ok(DatasetManifest {
            classes,
            items: items.into_iter().map(|(_, it)| it).collect(),
            base_dir: PathBuf::new(),
        })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn items(&self) -> &[ManifestItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    /// Class index of every item; `None` for unlabeled items.
    pub fn label_indices(&self) -> Vec<Option<usize>> {
        let map: HashMap<&str, usize> = self
            .classes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        self.items
            .iter()
            .map(|it| it.label.as_deref().map(|l| map[l]))
            .collect()
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    /// Item path, resolved against the manifest's directory when relative.
    pub fn resolve(&self, item: &ManifestItem) -> PathBuf {
        if item.path.is_absolute() {
            item.path.clone()
        } else {
            self.base_dir.join(&item.path)
        }
    }

    /// The split written into the manifest, when every item carries one.
    pub fn fixed_split(&self) -> Option<SplitAssignment> {
        let mut s = SplitAssignment::default();
        for (i, it) in self.items.iter().enumerate() {
            match it.split? {
                SplitTag::Train => s.train.push(i),
                SplitTag::Test => s.test.push(i),
            }
        }
        Some(s)
    }
}

/// Reads a JSON Lines manifest. A first line of the form
/// `{"classes": [...]}` declares the class set; unknown fields are ignored.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut classes = None;
    let mut items = Vec::new();
    let mut line_no = 0;
    for line in BufReader::new(file).lines() {
        line_no += 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let bad = |message: String| Error::Manifest {
            line: line_no,
            message,
        };
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if items.is_empty() && classes.is_none() && value.get("classes").is_some() {
            let header: ClassHeader =
                serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
            classes = Some(header.classes);
            continue;
        }
        let raw: RawItem = serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
        let id = raw.id.ok_or_else(|| bad("item without id".into()))?;
        let item_path = raw
            .path
            .ok_or_else(|| bad(format!("item {id:?} has no path")))?;
        items.push((
            line_no,
            ManifestItem {
                id,
                path: item_path,
                label: raw.label,
                split: raw.split,
                group: raw.group,
            },
        ));
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(DatasetManifest::validate(classes, items, line_no)?.with_base_dir(base))
}

/// Writes the manifest as JSON Lines, class header first.
pub fn write_manifest(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<()> {
    atomic_write(path.as_ref(), |w| {
        let header = ClassHeader {
            classes: manifest.classes.clone(),
        };
        serde_json::to_writer(&mut *w, &header).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
        for it in &manifest.items {
            serde_json::to_writer(&mut *w, it).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Splits

/// Item indices (into the manifest) of one train/test split, ascending.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub ratio: f64,
    pub seed: u64,
    pub splits: Vec<SplitAssignment>,
    pub warnings: Vec<String>,
}

/// `n_splits` stratified splits. In every class a seeded permutation sends
/// `floor(ratio * count)` items (at least one when the class has two) to
/// train and the rest to test. Classes with a single item go to train.
/// Unlabeled items form one more stratum.
pub fn split_dataset(
    manifest: &DatasetManifest,
    ratio: f64,
    n_splits: usize,
    seed: u64,
) -> Result<SplitPlan> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::param(format!("train ratio {ratio} outside (0, 1)")));
    }
    if n_splits == 0 {
        return Err(Error::param("at least one split is needed"));
    }
    let mut strata: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
    for (i, l) in manifest.label_indices().into_iter().enumerate() {
        strata.entry(l).or_default().push(i);
    }
    let name = |l: &Option<usize>| match l {
        Some(c) => manifest.classes[*c].clone(),
        None => "<unlabeled>".to_string(),
    };
    let mut warnings = Vec::new();
    for (l, members) in &strata {
        if members.len() < 2 {
            warnings.push(format!(
                "class {} has {} item(s); all of them go to train",
                name(l),
                members.len()
            ));
        }
    }
    let mut splits = Vec::with_capacity(n_splits);
    for s in 0..n_splits {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64);
        let mut split = SplitAssignment::default();
        for members in strata.values() {
            let mut perm = members.clone();
            perm.shuffle(&mut rng);
            let n_train = if perm.len() < 2 {
                perm.len()
            } else {
                ((ratio * perm.len() as f64).floor() as usize).max(1)
            };
            split.train.extend_from_slice(&perm[..n_train]);
            split.test.extend_from_slice(&perm[n_train..]);
        }
        split.train.sort_unstable();
        split.test.sort_unstable();
        splits.push(split);
    }
    Ok(SplitPlan {
        ratio,
        seed,
        splits,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// Shared header

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Header {
    magic: [u8; 4],
    version: u32,
    kind: u8,
    dim: u32,
    count: u64,
    digest: [u8; 32],
}

impl Header {
    fn write(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&self.magic)?;
        w.write_all(&self.version.to_le_bytes())?;
        w.write_all(&[self.kind])?;
        w.write_all(&self.dim.to_le_bytes())?;
        w.write_all(&self.count.to_le_bytes())?;
        w.write_all(&self.digest)
    }

    fn parse(bytes: &[u8], magic: [u8; 4]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::store(format!(
                "truncated header: {} of {HEADER_LEN} bytes",
                bytes.len()
            )));
        }
        let mut r = Cursor::new(bytes);
        let found = r.array::<4>()?;
        if found != magic {
            return Err(Error::store(format!(
                "bad magic {found:?}, expected {:?}",
                String::from_utf8_lossy(&magic)
            )));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::store(format!(
                "unsupported format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        Ok(Header {
            magic,
            version,
            kind: r.array::<1>()?[0],
            dim: r.u32()?,
            count: r.u64()?,
            digest: r.array::<32>()?,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::store("truncated file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

fn atomic_write(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<&mut fs::File>) -> std::io::Result<()>,
) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let io = |e| Error::io(path, e);
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w).map_err(io)?;
        w.flush().map_err(io)?;
    }
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Signature files

/// Signatures of one kind and configuration, narrowed to `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    pub kind: FeatureKind,
    pub digest: [u8; 32],
    dim: usize,
    ids: Vec<String>,
    values: Vec<f32>,
}

impl FeatureStore {
    pub fn new(
        kind: FeatureKind,
        dim: usize,
        digest: [u8; 32],
        ids: Vec<String>,
        values: Vec<f32>,
    ) -> Result<Self> {
        if dim == 0 || dim > u32::MAX as usize {
            return Err(Error::param(format!("store dimension {dim} out of range")));
        }
        if values.len() != ids.len() * dim {
            return Err(Error::param(format!(
                "{} values for {} rows of dimension {dim}",
                values.len(),
                ids.len()
            )));
        }
        Ok(FeatureStore {
            kind,
            digest,
            dim,
            ids,
            values,
        })
    }

    /// Narrows signatures of uniform dimension and kind to a store.
    pub fn from_features(
        ids: Vec<String>,
        features: &[FeatureVector],
        digest: [u8; 32],
    ) -> Result<Self> {
        let first = features
            .first()
            .ok_or_else(|| Error::param("no signatures to store"))?;
        if ids.len() != features.len() {
            return Err(Error::param(format!(
                "{} ids for {} signatures",
                ids.len(),
                features.len()
            )));
        }
        if features
            .iter()
            .any(|f| f.dim() != first.dim() || f.kind != first.kind)
        {
            return Err(Error::param("signatures of mixed dimension or kind"));
        }
        let values = features
            .iter()
            .flat_map(|f| f.values.iter().map(|&v| v as f32))
            .collect();
        FeatureStore::new(first.kind, first.dim(), digest, ids, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| f64::from(v)).collect()
    }

    /// Widened copies of every row, tagged with `config`.
    pub fn to_features(&self, config: &str) -> Vec<FeatureVector> {
        (0..self.len())
            .map(|i| FeatureVector::new(self.row_f64(i), self.kind, config))
            .collect()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }
}

/// What a reader insists on; `None` accepts anything.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StoreExpectation {
    pub kind: Option<FeatureKind>,
    pub dim: Option<usize>,
    pub digest: Option<[u8; 32]>,
}

pub fn write_features(path: impl AsRef<Path>, store: &FeatureStore) -> Result<()> {
    let header = Header {
        magic: FEATURE_MAGIC,
        version: FORMAT_VERSION,
        kind: store.kind.tag(),
        dim: store.dim as u32,
        count: store.len() as u64,
        digest: store.digest,
    };
    for id in &store.ids {
        if id.len() > u32::MAX as usize {
            return Err(Error::param("id longer than 4 GiB"));
        }
    }
    atomic_write(path.as_ref(), |w| {
        header.write(w)?;
        for id in &store.ids {
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
        }
        for v in &store.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    })
}

pub fn read_features(path: impl AsRef<Path>, expect: &StoreExpectation) -> Result<FeatureStore> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, expect)
}

/// Parses the contents of a signature file.
pub fn decode_features(bytes: &[u8], expect: &StoreExpectation) -> Result<FeatureStore> {
    let header = Header::parse(bytes, FEATURE_MAGIC)?;
    let kind = FeatureKind::from_tag(header.kind)
        .ok_or_else(|| Error::store(format!("unknown signature kind tag {}", header.kind)))?;
    if let Some(k) = expect.kind {
        if k != kind {
            return Err(Error::store(format!(
                "file holds {} signatures, expected {}",
                kind.name(),
                k.name()
            )));
        }
    }
    let dim = header.dim as usize;
    if let Some(d) = expect.dim {
        if d != dim {
            return Err(Error::store(format!("file dimension {dim}, expected {d}")));
        }
    }
    if let Some(d) = expect.digest {
        if d != header.digest {
            return Err(Error::store(format!(
                "config digest {} does not match {}",
                digest_hex(&header.digest),
                digest_hex(&d)
            )));
        }
    }
    if dim == 0 {
        return Err(Error::store("zero dimension"));
    }
    let mut r = Cursor::new(bytes);
    r.take(HEADER_LEN)?;
    let count = usize::try_from(header.count).map_err(|_| Error::store("row count overflow"))?;
    // every id takes at least its 4-byte length
    if count > r.remaining() / 4 {
        return Err(Error::store("truncated file"));
    }
    let mut ids = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let raw = r.take(len)?;
        ids.push(
            String::from_utf8(raw.to_vec()).map_err(|_| Error::store("id is not UTF-8"))?,
        );
    }
    let n = count
        .checked_mul(dim)
        .ok_or_else(|| Error::store("value count overflow"))?;
    if r.remaining() != n * 4 {
        return Err(Error::store(format!(
            "expected {} value bytes, found {}",
            n * 4,
            r.remaining()
        )));
    }
    let values = r
        .take(n * 4)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureStore::new(kind, dim, header.digest, ids, values)
}

// ---------------------------------------------------------------------------
// Model files

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Pca,
    Gmm,
    Linear,
    Projection,
}

impl ModelKind {
    pub fn tag(self) -> u8 {
        match self {
            ModelKind::Pca => 1,
            ModelKind::Gmm => 2,
            ModelKind::Linear => 3,
            ModelKind::Projection => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            1 => ModelKind::Pca,
            2 => ModelKind::Gmm,
            3 => ModelKind::Linear,
            4 => ModelKind::Projection,
            _ => return None,
        })
    }
}

/// Header fields and payload sections of a stored model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPayload {
    pub dim: usize,
    pub count: usize,
    pub sections: Vec<Vec<u64>>,
}

fn floats(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn unfloats(v: &[u64]) -> Vec<f64> {
    v.iter().map(|&x| f64::from_bits(x)).collect()
}

/// Models that fit in a `DIFM` container.
pub trait StoredModel: Sized {
    const KIND: ModelKind;
    fn encode(&self) -> ModelPayload;
    fn decode(payload: ModelPayload) -> Result<Self>;
}

fn sections<const N: usize>(p: ModelPayload) -> Result<[Vec<u64>; N]> {
    let found = p.sections.len();
    p.sections
        .try_into()
        .map_err(|_| Error::store(format!("{found} payload sections, expected {N}")))
}

/// `dim` = input dimension, `count` = kept components; sections: mean,
/// basis, eigenvalues.
impl StoredModel for PcaModel {
    const KIND: ModelKind = ModelKind::Pca;

    fn encode(&self) -> ModelPayload {
        ModelPayload {
            dim: self.input_dim(),
            count: self.output_dim(),
            sections: vec![
                floats(self.mean()),
                floats(self.basis()),
                floats(self.eigenvalues()),
            ],
        }
    }

    fn decode(p: ModelPayload) -> Result<Self> {
        let (dim, count) = (p.dim, p.count);
        let [mean, basis, eig] = sections::<3>(p)?;
        let m = PcaModel::from_parts(unfloats(&mean), unfloats(&basis), unfloats(&eig))
            .map_err(|e| Error::store(e.to_string()))?;
        check_shape(m.input_dim(), m.output_dim(), dim, count)?;
        Ok(m)
    }
}

/// `dim` = descriptor dimension, `count` = components; sections: weights,
/// means, variances.
impl StoredModel for GmmModel {
    const KIND: ModelKind = ModelKind::Gmm;

    fn encode(&self) -> ModelPayload {
        ModelPayload {
            dim: self.dim(),
            count: self.components(),
            sections: vec![
                floats(self.weights()),
                floats(self.means()),
                floats(self.variances()),
            ],
        }
    }

    fn decode(p: ModelPayload) -> Result<Self> {
        let (dim, count) = (p.dim, p.count);
        let [w, m, v] = sections::<3>(p)?;
        let g = GmmModel::new(unfloats(&w), unfloats(&m), unfloats(&v))
            .map_err(|e| Error::store(e.to_string()))?;
        check_shape(g.dim(), g.components(), dim, count)?;
        Ok(g)
    }
}

/// `dim` = feature dimension, `count` = classes; sections: hyperparameters
/// (learning rate, positive weight, passes, seed), then one hyperplane with
/// trailing bias per class.
impl StoredModel for LinearModel {
    const KIND: ModelKind = ModelKind::Linear;

    fn encode(&self) -> ModelPayload {
        let p = self.params();
        let mut sections = vec![vec![
            p.learning_rate.to_bits(),
            p.positive_weight.to_bits(),
            p.passes as u64,
            p.seed,
        ]];
        sections.extend(self.weights().iter().map(|w| floats(w)));
        ModelPayload {
            dim: self.dim(),
            count: self.class_count(),
            sections,
        }
    }

    fn decode(p: ModelPayload) -> Result<Self> {
        let (dim, count) = (p.dim, p.count);
        let mut it = p.sections.into_iter();
        let hp = it.next().ok_or_else(|| Error::store("missing hyperparameters"))?;
        let [lr, rho, passes, seed] = hp[..]
            .try_into()
            .map_err(|_| Error::store("malformed hyperparameter section"))?;
        let params = SvmParams {
            learning_rate: f64::from_bits(lr),
            positive_weight: f64::from_bits(rho),
            passes: passes as usize,
            seed,
        };
        let weights: Vec<Vec<f64>> = it.map(|s| unfloats(&s)).collect();
        let m = LinearModel::new(weights, params).map_err(|e| Error::store(e.to_string()))?;
        check_shape(m.dim(), m.class_count(), dim, count)?;
        Ok(m)
    }
}

/// `dim` = input dimension, `count` = target dimension; one section holding
/// the row-major matrix.
impl StoredModel for ProjectionMatrix {
    const KIND: ModelKind = ModelKind::Projection;

    fn encode(&self) -> ModelPayload {
        ModelPayload {
            dim: self.input_dim(),
            count: self.target_dim(),
            sections: vec![floats(self.data())],
        }
    }

    fn decode(p: ModelPayload) -> Result<Self> {
        let (dim, count) = (p.dim, p.count);
        let [data] = sections::<1>(p)?;
        ProjectionMatrix::new(count, dim, unfloats(&data)).map_err(|e| Error::store(e.to_string()))
    }
}

fn check_shape(dim: usize, count: usize, hdim: usize, hcount: usize) -> Result<()> {
    if dim != hdim || count != hcount {
        return Err(Error::store(format!(
            "payload is {count}x{dim}, header says {hcount}x{hdim}"
        )));
    }
    Ok(())
}

pub fn save_model<M: StoredModel>(
    path: impl AsRef<Path>,
    model: &M,
    digest: [u8; 32],
) -> Result<()> {
    let p = model.encode();
    let header = Header {
        magic: MODEL_MAGIC,
        version: FORMAT_VERSION,
        kind: M::KIND.tag(),
        dim: u32::try_from(p.dim).map_err(|_| Error::param("model dimension too large"))?,
        count: p.count as u64,
        digest,
    };
    atomic_write(path.as_ref(), |w| {
        header.write(w)?;
        w.write_all(&(p.sections.len() as u64).to_le_bytes())?;
        for s in &p.sections {
            w.write_all(&(s.len() as u64).to_le_bytes())?;
            for word in s {
                w.write_all(&word.to_le_bytes())?;
            }
        }
        Ok(())
    })
}

/// Loads a model and the config digest it was saved with.
pub fn load_model<M: StoredModel>(path: impl AsRef<Path>) -> Result<(M, [u8; 32])> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

pub fn decode_model<M: StoredModel>(bytes: &[u8]) -> Result<(M, [u8; 32])> {
    let header = Header::parse(bytes, MODEL_MAGIC)?;
    match ModelKind::from_tag(header.kind) {
        Some(k) if k == M::KIND => {}
        Some(k) => {
            return Err(Error::store(format!(
                "file holds a {k:?} model, expected {:?}",
                M::KIND
            )))
        }
        None => return Err(Error::store(format!("unknown model kind tag {}", header.kind))),
    }
    let mut r = Cursor::new(bytes);
    r.take(HEADER_LEN)?;
    let n_sections = r.u64()?;
    let mut sections = Vec::new();
    for _ in 0..n_sections {
        let len = r.u64()?;
        if len > (r.remaining() / 8) as u64 {
            return Err(Error::store("truncated file"));
        }
        let raw = r.take(len as usize * 8)?;
        sections.push(
            raw.chunks_exact(8)
                .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        );
    }
    if r.remaining() != 0 {
        return Err(Error::store(format!("{} trailing bytes", r.remaining())));
    }
    let payload = ModelPayload {
        dim: header.dim as usize,
        count: usize::try_from(header.count).map_err(|_| Error::store("count overflow"))?,
        sections,
    };
    Ok((M::decode(payload)?, header.digest))
}
