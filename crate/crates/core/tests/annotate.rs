mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use guirerank::annotator::{annotate_dataset, AnnotateError, AnnotationJob};
use guirerank::dataset::{load_manifest, AnnotationStore};
use guirerank::gateway::{
    Backoff, ChatReply, ChatRequest, EmbedReply, Gateway, ModelConfig, Provider, ProviderError,
    StubProvider,
};
use guirerank::index::{build_index, IndexError};

/// Counts calls and fails images whose bytes end with one of `fail`.
struct Counting {
    inner: StubProvider,
    fail: Vec<String>,
    calls: AtomicUsize,
}

impl Provider for Counting {
    fn name(&self) -> &str {
        "counting"
    }

    fn supports_images(&self) -> bool {
        true
    }

    fn chat(&self, request: &ChatRequest<'_>) -> Result<ChatReply, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(img) = &request.image {
            if self.fail.iter().any(|f| img.bytes.ends_with(f.as_bytes())) {
                return Err(ProviderError::Fatal("refused".into()));
            }
        }
        self.inner.chat(request)
    }

    fn embed(&self, model: &str, texts: &[String], timeout: Duration) -> Result<EmbedReply, ProviderError> {
        self.inner.embed(model, texts, timeout)
    }
}

fn counting(fail: &[&str]) -> (Gateway, Arc<Counting>) {
    let p = Arc::new(Counting {
        inner: StubProvider::new(),
        fail: fail.iter().map(|s| s.to_string()).collect(),
        calls: AtomicUsize::new(0),
    });
    let gw = Gateway::with_provider(ModelConfig::stub(common::CHAT_MODEL), p.clone()).with_backoff(Backoff::none());
    (gw, p)
}

#[test]
fn store_is_independent_of_width() {
    let dir = common::synthetic_dir("w", 24);
    let manifest = load_manifest(&dir.path().join("manifest.json")).unwrap();
    let mut bytes = Vec::new();
    for width in [1, 3, 10] {
        let mut job = AnnotationJob::new(&manifest, common::stub(common::CHAT_MODEL));
        job.width = width;
        let out = annotate_dataset(job).unwrap();
        assert_eq!(out.store.len(), 24);
        assert_eq!(out.attempted, 24);
        bytes.push(std::fs::read(manifest.store_path()).unwrap());
    }
    assert!(bytes.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn every_gui_gets_every_dimension() {
    let ds = common::smoke();
    for e in ds.store.iter() {
        let keys: Vec<&str> = e.annotations.keys().map(String::as_str).collect();
        let mut ids = ds.manifest.dimensions.ids();
        ids.sort_unstable();
        assert_eq!(keys, ids);
        assert!(e.annotations.values().all(|t| !t.trim().is_empty()));
        assert!(ds.store.image_file(&e.gui_id).unwrap().exists());
    }
}

#[test]
fn resume_on_a_complete_store_makes_no_requests() {
    let ds = common::smoke();
    let (gw, p) = counting(&[]);
    let mut job = AnnotationJob::new(&ds.manifest, gw);
    job.resume = true;
    let out = annotate_dataset(job).unwrap();
    assert_eq!(p.calls.load(Ordering::SeqCst), 0);
    assert_eq!(out.attempted, 0);
    assert_eq!(out.store, ds.store);
}

#[test]
fn resume_fills_only_the_gaps() {
    let ds = common::smoke();
    let text: Vec<String> = std::fs::read_to_string(&ds.store_path)
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect();
    std::fs::write(&ds.store_path, text[..7].join("\n") + "\n").unwrap();
    let (gw, p) = counting(&[]);
    let mut job = AnnotationJob::new(&ds.manifest, gw);
    job.resume = true;
    let out = annotate_dataset(job).unwrap();
    assert_eq!(p.calls.load(Ordering::SeqCst), 3);
    assert_eq!(out.store, ds.store);
    assert_eq!(AnnotationStore::load(&ds.store_path).unwrap(), ds.store);
}

#[test]
fn failures_within_threshold_are_reported() {
    let dir = common::synthetic_dir("f", 20);
    let manifest = load_manifest(&dir.path().join("manifest.json")).unwrap();
    let (gw, _) = counting(&["screen 7"]);
    let out = annotate_dataset(AnnotationJob::new(&manifest, gw)).unwrap();
    assert_eq!(out.store.len(), 19);
    assert_eq!(out.failures.len(), 1);
    assert_eq!(out.failures[0].gui_id, "gui-007");
    assert!(out.failures[0].error.contains("refused"));
}

#[test]
fn too_many_failures_abort_but_keep_successes() {
    let dir = common::synthetic_dir("f", 10);
    let manifest = load_manifest(&dir.path().join("manifest.json")).unwrap();
    let (gw, _) = counting(&["screen 1", "screen 2"]);
    match annotate_dataset(AnnotationJob::new(&manifest, gw)) {
        Err(AnnotateError::TooManyFailures { failed, attempted, .. }) => {
            assert_eq!((failed, attempted), (2, 10));
        }
        other => panic!("{other:?}"),
    }
    // Successful GUIs were persisted, so a resumed run only retries the two.
    assert_eq!(AnnotationStore::load(&manifest.store_path()).unwrap().len(), 8);
    let (gw, p) = counting(&[]);
    let mut job = AnnotationJob::new(&manifest, gw);
    job.resume = true;
    annotate_dataset(job).unwrap();
    assert_eq!(p.calls.load(Ordering::SeqCst), 2);
}

#[test]
fn index_build_needs_a_complete_store() {
    let ds = common::smoke();
    let embed = common::stub(common::EMBED_MODEL);
    let mut store = ds.store.clone();
    let mut e = store.iter().next().unwrap().clone();
    e.annotations.remove("domain");
    store.insert(e);
    let err = build_index(&store, &ds.manifest.dimensions, "smoke", &embed, 8).unwrap_err();
    assert!(matches!(err, IndexError::IncompleteStore { ref dimension, .. } if dimension == "domain"), "{err}");
    assert!(matches!(
        build_index(&ds.store, &ds.manifest.dimensions, "smoke", &embed, 0),
        Err(IndexError::BadBatchSize)
    ));
}

#[test]
fn index_is_independent_of_batch_size() {
    let ds = common::smoke();
    let embed = common::stub(common::EMBED_MODEL);
    let (a, _) = build_index(&ds.store, &ds.manifest.dimensions, "smoke", &embed, 1).unwrap();
    let (b, usage) = build_index(&ds.store, &ds.manifest.dimensions, "smoke", &embed, 7).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(usage.request_count, 50usize.div_ceil(7) as u64);
    assert_eq!(a.gui_count(), 10);
    assert_eq!(a.vector_count(), 50);
    for r in a.records() {
        let n: f64 = r.vector.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn similarity_matches_a_naive_loop() {
    let ds = common::smoke();
    let q = guirerank::gateway::stub::stub_embedding("blue map button");
    for d in ds.manifest.dimensions.ids() {
        let got = ds.index.similarity(d, &q).unwrap();
        assert_eq!(got.len(), ds.index.gui_count());
        for (g, s) in ds.index.gui_ids().iter().zip(&got) {
            let v = ds.index.vector(g, d).unwrap();
            let (mut dot, mut nv, mut nq) = (0.0f64, 0.0f64, 0.0f64);
            for i in 0..v.len() {
                dot += f64::from(v[i]) * f64::from(q[i]);
                nv += f64::from(v[i]).powi(2);
                nq += f64::from(q[i]).powi(2);
            }
            let naive = dot / (nv.sqrt() * nq.sqrt());
            assert!((naive - s).abs() < 1e-9);
        }
    }
    assert!(matches!(ds.index.similarity("nope", &q), Err(IndexError::UnknownDimension(_))));
    assert!(matches!(ds.index.similarity("design", &q[..3]), Err(IndexError::WidthMismatch { .. })));
}
