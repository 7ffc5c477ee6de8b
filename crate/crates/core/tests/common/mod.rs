#![allow(dead_code)]

use std::path::{Path, PathBuf};

use guirerank::annotator::{annotate_dataset, AnnotationJob};
use guirerank::dataset::{load_manifest, AnnotationStore, DatasetManifest};
use guirerank::engine::{Engine, LoadedDataset};
use guirerank::config::Config;
use guirerank::gateway::{Gateway, ModelConfig};
use guirerank::index::{build_index, EmbeddingIndex};

pub const CHAT_MODEL: &str = "gpt-4.1";
pub const EMBED_MODEL: &str = "text-embedding-3-small";

pub fn stub(model: &str) -> Gateway {
    Gateway::new(ModelConfig::stub(model)).unwrap()
}

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/smoke")
}

/// A dataset directory with its manifest, store and index built by the stub.
pub struct StubDataset {
    pub dir: tempfile::TempDir,
    pub manifest: DatasetManifest,
    pub store: AnnotationStore,
    pub index: EmbeddingIndex,
    pub manifest_path: PathBuf,
    pub store_path: PathBuf,
    pub index_path: PathBuf,
}

impl StubDataset {
    pub fn loaded(&self) -> LoadedDataset {
        LoadedDataset::open(&self.manifest.name, &self.index_path, &self.store_path).unwrap()
    }

    pub fn engine(&self) -> Engine {
        let config = Config {
            stub: true,
            ..Config::default()
        };
        Engine::from_config(config).unwrap().with_dataset(self.loaded())
    }
}

/// Copy of the 10-GUI smoke fixture in a fresh directory.
pub fn copy_fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let src = fixture_dir();
    std::fs::create_dir_all(dir.path().join("images")).unwrap();
    std::fs::copy(src.join("manifest.json"), dir.path().join("manifest.json")).unwrap();
    for e in std::fs::read_dir(src.join("images")).unwrap() {
        let e = e.unwrap();
        std::fs::copy(e.path(), dir.path().join("images").join(e.file_name())).unwrap();
    }
    dir
}

/// A manifest of `n` GUIs whose image files hold distinct byte strings.
pub fn synthetic_dir(name: &str, n: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("images")).unwrap();
    let mut guis = Vec::with_capacity(n);
    for i in 0..n {
        let file = format!("{i:03}.png");
        let mut bytes = b"\x89PNG\r\n\x1a\n".to_vec();
        bytes.extend_from_slice(format!("synthetic screen {i}").as_bytes());
        std::fs::write(dir.path().join("images").join(&file), bytes).unwrap();
        guis.push(serde_json::json!({"gui_id": format!("gui-{i:03}"), "image_path": file}));
    }
    let manifest = serde_json::json!({"name": name, "image_dir": "images", "guis": guis});
    std::fs::write(dir.path().join("manifest.json"), manifest.to_string()).unwrap();
    dir
}

pub fn build(dir: tempfile::TempDir) -> StubDataset {
    let manifest_path = dir.path().join("manifest.json");
    let manifest = load_manifest(&manifest_path).unwrap();
    let outcome = annotate_dataset(AnnotationJob::new(&manifest, stub(CHAT_MODEL))).unwrap();
    assert!(outcome.failures.is_empty());
    let (index, _) =
        build_index(&outcome.store, &manifest.dimensions, &manifest.name, &stub(EMBED_MODEL), 16).unwrap();
    let index_path = dir.path().join(format!("{}.index", manifest.name));
    index.save(&index_path).unwrap();
    StubDataset {
        store_path: manifest.store_path(),
        store: outcome.store,
        manifest,
        index,
        manifest_path,
        index_path,
        dir,
    }
}

pub fn smoke() -> StubDataset {
    build(copy_fixture())
}

pub fn synthetic(n: usize) -> StubDataset {
    build(synthetic_dir("synthetic", n))
}
