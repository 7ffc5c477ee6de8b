//! Corpus data model: search dimensions, GUI records, dataset manifests and
//! the line-delimited annotation store.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not a valid manifest: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("record {index}: malformed gui entry: {reason}")]
    MalformedRecord { index: usize, reason: String },
    #[error("record {index}: duplicate gui_id \"{gui_id}\"")]
    DuplicateGuiId { index: usize, gui_id: String },
    #[error("record {index}: image \"{image_path}\" does not exist or is unreadable")]
    DanglingImage { index: usize, image_path: String },
    #[error("invalid dimension set: {0}")]
    InvalidDimensions(String),
    #[error("annotation store {path}, line {line}: {reason}")]
    Store {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A named facet of a GUI that is annotated, embedded, scored and weighted
/// independently. `id` is the normative key everywhere; `name` and
/// `description` only feed prompts and display.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchDimension {
    pub id: String,
    pub name: String,
    pub description: String,
    pub default_weight: f64,
}

impl SearchDimension {
    pub fn new(id: &str, name: &str, description: &str, default_weight: f64) -> Self {
        Self {
            id: id.to_string(),
            name: name.to_string(),
            description: description.to_string(),
            default_weight,
        }
    }
}

/// Ordered, validated list of search dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<SearchDimension>", into = "Vec<SearchDimension>")]
pub struct DimensionSet {
    dimensions: Vec<SearchDimension>,
}

impl DimensionSet {
    pub fn new(dimensions: Vec<SearchDimension>) -> Result<Self, DatasetError> {
        if dimensions.is_empty() {
            return Err(DatasetError::InvalidDimensions(
                "at least one dimension is required".into(),
            ));
        }
        let mut seen = HashSet::new();
        for d in &dimensions {
            if d.id.is_empty() {
                return Err(DatasetError::InvalidDimensions("empty dimension id".into()));
            }
            if d.id.chars().any(|c| c.is_whitespace() || c.is_uppercase()) {
                return Err(DatasetError::InvalidDimensions(format!(
                    "dimension id \"{}\" must be lowercase without spaces",
                    d.id
                )));
            }
            if !(d.default_weight.is_finite() && d.default_weight >= 0.0) {
                return Err(DatasetError::InvalidDimensions(format!(
                    "dimension \"{}\" has negative or non-finite default weight",
                    d.id
                )));
            }
            if !seen.insert(d.id.as_str()) {
                return Err(DatasetError::InvalidDimensions(format!(
                    "duplicate dimension id \"{}\"",
                    d.id
                )));
            }
        }
        Ok(Self { dimensions })
    }

    pub fn as_slice(&self) -> &[SearchDimension] {
        &self.dimensions
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SearchDimension> {
        self.dimensions.iter()
    }

    pub fn len(&self) -> usize {
        self.dimensions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dimensions.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.dimensions.iter().map(|d| d.id.as_str()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&SearchDimension> {
        self.dimensions.iter().find(|d| d.id == id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.get(id).is_some()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.dimensions.iter().position(|d| d.id == id)
    }

    /// Default weights keyed by dimension id.
    pub fn default_weights(&self) -> BTreeMap<String, f64> {
        self.dimensions
            .iter()
            .map(|d| (d.id.clone(), d.default_weight))
            .collect()
    }
}

impl TryFrom<Vec<SearchDimension>> for DimensionSet {
    type Error = DatasetError;

    fn try_from(value: Vec<SearchDimension>) -> Result<Self, Self::Error> {
        DimensionSet::new(value)
    }
}

impl From<DimensionSet> for Vec<SearchDimension> {
    fn from(value: DimensionSet) -> Self {
        value.dimensions
    }
}

impl<'a> IntoIterator for &'a DimensionSet {
    type Item = &'a SearchDimension;
    type IntoIter = std::slice::Iter<'a, SearchDimension>;

    fn into_iter(self) -> Self::IntoIter {
        self.dimensions.iter()
    }
}

/// The five general-purpose dimensions, each weighted 1.0.
///
/// The description texts are configuration written for this project; edit
/// them in a manifest's `dimensions` array to tune annotation prompts.
pub fn default_dimension_set() -> DimensionSet {
    DimensionSet::new(vec![
        SearchDimension::new(
            "domain",
            "Domain",
            "The application domain or category the screen belongs to, such as food delivery, banking, fitness or travel.",
            1.0,
        ),
        SearchDimension::new(
            "functionality",
            "Functionality",
            "What the user can accomplish on this screen, such as logging in, searching, checking out or editing settings.",
            1.0,
        ),
        SearchDimension::new(
            "design",
            "Design",
            "The visual style of the screen: color scheme, light or dark theme, layout density, typography and overall look.",
            1.0,
        ),
        SearchDimension::new(
            "gui_components",
            "GUI Components",
            "The interface elements present on the screen, such as buttons, text fields, lists, tabs, maps, images and navigation bars.",
            1.0,
        ),
        SearchDimension::new(
            "displayed_text",
            "Displayed Text",
            "The salient text visible on the screen, such as titles, labels, button captions and headings.",
            1.0,
        ),
    ])
    .expect("default dimension set is valid")
}

/// One corpus image and its per-dimension annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuiRecord {
    pub gui_id: String,
    /// Relative to the manifest's image directory.
    pub image_path: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub source: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub annotations: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    /// As written in the manifest file (relative to the manifest directory
    /// unless absolute).
    pub image_dir: PathBuf,
    pub dimensions: DimensionSet,
    pub guis: Vec<GuiRecord>,
    pub embedding_model: Option<String>,
    /// Directory the manifest was loaded from; relative paths resolve
    /// against it.
    pub base_dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct RawManifest {
    name: String,
    image_dir: PathBuf,
    #[serde(default)]
    dimensions: Option<Vec<SearchDimension>>,
    guis: Vec<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding_model: Option<String>,
}

#[derive(Deserialize)]
struct RawGui {
    gui_id: String,
    image_path: String,
    #[serde(default)]
    source: Option<String>,
}

impl DatasetManifest {
    pub fn resolved_image_dir(&self) -> PathBuf {
        if self.image_dir.is_absolute() {
            self.image_dir.clone()
        } else {
            self.base_dir.join(&self.image_dir)
        }
    }

    pub fn image_file(&self, gui: &GuiRecord) -> PathBuf {
        self.resolved_image_dir().join(&gui.image_path)
    }

    /// Path of an image relative to the manifest directory, as stored in the
    /// annotation store written next to the manifest.
    pub fn store_relative_image_path(&self, gui: &GuiRecord) -> String {
        let joined = self.image_dir.join(&gui.image_path);
        joined.to_string_lossy().replace('\\', "/")
    }

    /// Default location of this dataset's annotation store.
    pub fn store_path(&self) -> PathBuf {
        self.base_dir
            .join(format!("{}.annotations.jsonl", self.name))
    }

    pub fn to_json(&self) -> String {
        let raw = RawManifest {
            name: self.name.clone(),
            image_dir: self.image_dir.clone(),
            dimensions: Some(self.dimensions.clone().into()),
            guis: self
                .guis
                .iter()
                .map(|g| {
                    let mut obj = serde_json::Map::new();
                    obj.insert("gui_id".into(), g.gui_id.clone().into());
                    obj.insert("image_path".into(), g.image_path.clone().into());
                    if g.source != self.name {
                        obj.insert("source".into(), g.source.clone().into());
                    }
                    serde_json::Value::Object(obj)
                })
                .collect(),
            embedding_model: self.embedding_model.clone(),
        };
        serde_json::to_string_pretty(&raw).expect("manifest serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        fs::write(path, self.to_json() + "\n").map_err(io_err(path))
    }
}

/// Loads and validates a manifest. Every gui entry is checked for shape,
/// uniqueness of `gui_id` and existence of its image file; failures name the
/// offending record index.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let raw: RawManifest = serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let dimensions = match raw.dimensions {
        Some(dims) => DimensionSet::new(dims)?,
        None => default_dimension_set(),
    };
    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));

    let mut manifest = DatasetManifest {
        name: raw.name,
        image_dir: raw.image_dir,
        dimensions,
        guis: Vec::with_capacity(raw.guis.len()),
        embedding_model: raw.embedding_model,
        base_dir,
    };
    if manifest.name.trim().is_empty() {
        return Err(DatasetError::Parse {
            path: path.to_path_buf(),
            message: "empty dataset name".into(),
        });
    }

    let image_dir = manifest.resolved_image_dir();
    let mut seen = HashSet::new();
    for (index, value) in raw.guis.into_iter().enumerate() {
        let gui: RawGui = serde_json::from_value(value).map_err(|e| {
            DatasetError::MalformedRecord {
                index,
                reason: e.to_string(),
            }
        })?;
        if gui.gui_id.trim().is_empty() {
            return Err(DatasetError::MalformedRecord {
                index,
                reason: "empty gui_id".into(),
            });
        }
        if !seen.insert(gui.gui_id.clone()) {
            return Err(DatasetError::DuplicateGuiId {
                index,
                gui_id: gui.gui_id,
            });
        }
        let file = image_dir.join(&gui.image_path);
        let readable = fs::metadata(&file).is_ok_and(|m| m.is_file()) && File::open(&file).is_ok();
        if !readable {
            return Err(DatasetError::DanglingImage {
                index,
                image_path: gui.image_path,
            });
        }
        manifest.guis.push(GuiRecord {
            gui_id: gui.gui_id,
            image_path: gui.image_path,
            source: gui.source.unwrap_or_else(|| manifest.name.clone()),
            annotations: BTreeMap::new(),
        });
    }
    Ok(manifest)
}

/// One line of the annotation store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredAnnotation {
    pub gui_id: String,
    /// Relative to the store's directory.
    pub image_path: String,
    pub annotations: BTreeMap<String, String>,
}

/// Per-GUI annotation texts keyed by `gui_id`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationStore {
    entries: BTreeMap<String, StoredAnnotation>,
    /// Directory image paths resolve against.
    base_dir: PathBuf,
}

impl AnnotationStore {
    pub fn new(base_dir: impl Into<PathBuf>) -> Self {
        Self {
            entries: BTreeMap::new(),
            base_dir: base_dir.into(),
        }
    }

    /// Reads a store file. Later lines for the same `gui_id` replace earlier
    /// ones, so an appended-to store from an interrupted run loads cleanly.
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let file = File::open(path).map_err(io_err(path))?;
        let base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let mut store = Self::new(base_dir);
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: StoredAnnotation =
                serde_json::from_str(&line).map_err(|e| DatasetError::Store {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            store.insert(entry);
        }
        Ok(store)
    }

    /// Loads the store if the file exists, otherwise returns an empty store.
    pub fn load_or_empty(path: &Path) -> Result<Self, DatasetError> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::new(
                path.parent()
                    .map(Path::to_path_buf)
                    .unwrap_or_else(|| PathBuf::from(".")),
            ))
        }
    }

    pub fn insert(&mut self, entry: StoredAnnotation) {
        self.entries.insert(entry.gui_id.clone(), entry);
    }

    pub fn get(&self, gui_id: &str) -> Option<&StoredAnnotation> {
        self.entries.get(gui_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in ascending `gui_id` order.
    pub fn iter(&self) -> impl Iterator<Item = &StoredAnnotation> {
        self.entries.values()
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn image_file(&self, gui_id: &str) -> Option<PathBuf> {
        self.entries
            .get(gui_id)
            .map(|e| self.base_dir.join(&e.image_path))
    }

    /// True when the GUI has a non-empty annotation for every dimension.
    pub fn is_complete_for(&self, gui_id: &str, dimensions: &DimensionSet) -> bool {
        self.entries.get(gui_id).is_some_and(|e| {
            dimensions
                .iter()
                .all(|d| e.annotations.get(&d.id).is_some_and(|t| !t.trim().is_empty()))
        })
    }

    /// Number of (gui, dimension) annotation texts.
    pub fn annotation_count(&self) -> usize {
        self.entries.values().map(|e| e.annotations.len()).sum()
    }

    /// Serialized form: one JSON object per line, ascending `gui_id`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for entry in self.entries.values() {
            out.push_str(&serde_json::to_string(entry).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    /// Writes the whole store atomically (temp file + rename).
    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let tmp = path.with_extension("jsonl.tmp");
        fs::write(&tmp, self.to_jsonl()).map_err(io_err(&tmp))?;
        fs::rename(&tmp, path).map_err(io_err(path))
    }
}

/// Appends store lines one at a time, flushing after each so an interrupted
/// run loses at most the in-flight items.
pub struct StoreAppender {
    path: PathBuf,
    writer: BufWriter<File>,
}

impl StoreAppender {
    pub fn open(path: &Path) -> Result<Self, DatasetError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            writer: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, entry: &StoredAnnotation) -> Result<(), DatasetError> {
        let line = serde_json::to_string(entry).expect("entry serializes");
        let path = self.path.clone();
        writeln!(self.writer, "{line}").map_err(io_err(&path))?;
        self.writer.flush().map_err(io_err(&path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_manifest(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("m.json");
        fs::write(&path, body).unwrap();
        path
    }

    fn touch_images(dir: &Path, names: &[&str]) {
        fs::create_dir_all(dir.join("img")).unwrap();
        for n in names {
            fs::write(dir.join("img").join(n), b"\x89PNG fake").unwrap();
        }
    }

    #[test]
    fn default_set_has_five_ids_in_order() {
        let set = default_dimension_set();
        assert_eq!(
            set.ids(),
            vec!["domain", "functionality", "design", "gui_components", "displayed_text"]
        );
        assert!(set.iter().all(|d| d.default_weight == 1.0));
        assert_eq!(default_dimension_set(), default_dimension_set());
    }

    #[test]
    fn dimension_set_rejects_bad_input() {
        assert!(DimensionSet::new(vec![]).is_err());
        let d = SearchDimension::new("design", "Design", "x", 1.0);
        assert!(DimensionSet::new(vec![d.clone(), d.clone()]).is_err());
        let neg = SearchDimension::new("design", "Design", "x", -1.0);
        assert!(DimensionSet::new(vec![neg]).is_err());
        let spaced = SearchDimension::new("gui components", "x", "x", 1.0);
        assert!(DimensionSet::new(vec![spaced]).is_err());
    }

    #[test]
    fn loads_two_records() {
        let dir = tempfile::tempdir().unwrap();
        touch_images(dir.path(), &["a.png", "b.png"]);
        let path = write_manifest(
            dir.path(),
            r#"{"name":"demo","image_dir":"img","guis":[
                {"gui_id":"g1","image_path":"a.png"},
                {"gui_id":"g2","image_path":"b.png"}]}"#,
        );
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.guis.len(), 2);
        assert_eq!(m.dimensions.len(), 5);
        assert_eq!(m.guis[0].source, "demo");
    }

    #[test]
    fn duplicate_id_names_the_id() {
        let dir = tempfile::tempdir().unwrap();
        touch_images(dir.path(), &["a.png"]);
        let path = write_manifest(
            dir.path(),
            r#"{"name":"demo","image_dir":"img","guis":[
                {"gui_id":"g1","image_path":"a.png"},
                {"gui_id":"g1","image_path":"a.png"}]}"#,
        );
        let err = load_manifest(&path).unwrap_err();
        assert!(matches!(err, DatasetError::DuplicateGuiId { index: 1, .. }));
        assert!(err.to_string().contains("g1"));
    }

    #[test]
    fn dangling_path_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        touch_images(dir.path(), &["a.png"]);
        let path = write_manifest(
            dir.path(),
            r#"{"name":"demo","image_dir":"img","guis":[
                {"gui_id":"g1","image_path":"a.png"},
                {"gui_id":"g2","image_path":"x.png"}]}"#,
        );
        let err = load_manifest(&path).unwrap_err();
        assert!(matches!(err, DatasetError::DanglingImage { index: 1, .. }));
        assert!(err.to_string().contains("x.png"));
    }

    #[test]
    fn malformed_record_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        touch_images(dir.path(), &["a.png"]);
        let path = write_manifest(
            dir.path(),
            r#"{"name":"demo","image_dir":"img","guis":[{"gui_id":"g1"}]}"#,
        );
        assert!(matches!(
            load_manifest(&path).unwrap_err(),
            DatasetError::MalformedRecord { index: 0, .. }
        ));
        assert!(matches!(
            load_manifest(&dir.path().join("nope.json")).unwrap_err(),
            DatasetError::Io { .. }
        ));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        touch_images(dir.path(), &["a.png", "b.png"]);
        let path = write_manifest(
            dir.path(),
            r#"{"name":"demo","image_dir":"img","guis":[
                {"gui_id":"g1","image_path":"a.png"},
                {"gui_id":"g2","image_path":"b.png","source":"other"}]}"#,
        );
        let m = load_manifest(&path).unwrap();
        let again = dir.path().join("again.json");
        m.save(&again).unwrap();
        assert_eq!(load_manifest(&again).unwrap(), m);
    }

    #[test]
    fn store_later_lines_win_and_resave_is_canonical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.annotations.jsonl");
        let mut app = StoreAppender::open(&path).unwrap();
        let mut e = StoredAnnotation {
            gui_id: "g2".into(),
            image_path: "img/b.png".into(),
            annotations: BTreeMap::from([("design".into(), "old".into())]),
        };
        app.append(&e).unwrap();
        e.annotations.insert("design".into(), "new".into());
        app.append(&e).unwrap();
        drop(app);
        let store = AnnotationStore::load(&path).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.get("g2").unwrap().annotations["design"], "new");
        store.save(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(AnnotationStore::load(&path).unwrap(), store);
        AnnotationStore::load(&path).unwrap().save(&path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), bytes);
    }

    #[test]
    fn corrupt_store_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        fs::write(&path, "{\"gui_id\":\"g1\",\"image_path\":\"a\",\"annotations\":{}}\n{oops\n").unwrap();
        let err = AnnotationStore::load(&path).unwrap_err();
        assert!(matches!(err, DatasetError::Store { line: 2, .. }));
    }
}
