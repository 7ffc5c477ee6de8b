//! Batch annotation of a dataset: one multimodal request per GUI covering
//! every search dimension.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::dataset::{
    AnnotationStore, DatasetError, DatasetManifest, DimensionSet, SearchDimension,
    StoreAppender, StoredAnnotation,
};
use crate::gateway::{mime_for_path, Gateway, ImageInput, ResponseSchema, Schema, UsageMeter};

pub const ANNOTATION_SCHEMA: &str = "gui_annotation";
pub const DEFAULT_FAILURE_THRESHOLD: f64 = 0.10;
pub const MAX_ANNOTATION_WORDS: usize = 120;

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{failed} of {attempted} GUIs failed, above the {threshold:.0}% threshold")]
    TooManyFailures {
        failed: usize,
        attempted: usize,
        threshold: f64,
        failures: Vec<AnnotationFailure>,
        usage: UsageMeter,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotationFailure {
    pub gui_id: String,
    pub error: String,
}

pub struct AnnotationJob<'a> {
    pub manifest: &'a DatasetManifest,
    pub dimensions: &'a DimensionSet,
    pub gateway: Gateway,
    pub width: usize,
    pub resume: bool,
    pub failure_threshold: f64,
    pub store_path: PathBuf,
}

impl<'a> AnnotationJob<'a> {
    pub fn new(manifest: &'a DatasetManifest, gateway: Gateway) -> Self {
        Self {
            manifest,
            dimensions: &manifest.dimensions,
            gateway,
            width: 10,
            resume: false,
            failure_threshold: DEFAULT_FAILURE_THRESHOLD,
            store_path: manifest.store_path(),
        }
    }
}

#[derive(Debug)]
pub struct AnnotationOutcome {
    pub store: AnnotationStore,
    pub usage: UsageMeter,
    pub failures: Vec<AnnotationFailure>,
    /// GUIs requested in this run (excludes resumed ones).
    pub attempted: usize,
}

pub fn annotation_schema(dimensions: &[SearchDimension]) -> ResponseSchema {
    ResponseSchema::new(
        ANNOTATION_SCHEMA,
        Schema::object(dimensions.iter().map(|d| (d.id.clone(), Schema::Text))),
    )
}

/// Zero-shot annotation prompt listing every dimension by id, name and
/// description.
pub fn build_annotation_prompt(dimensions: &[SearchDimension]) -> Result<String, AnnotateError> {
    if dimensions.is_empty() {
        return Err(AnnotateError::Precondition(
            "at least one search dimension is required".into(),
        ));
    }
    let mut prompt = String::from(
        "You are annotating a screenshot of a graphical user interface so that it can be found \
         later by natural-language search.\n\nDescribe the attached GUI along each of the \
         following search dimensions:\n",
    );
    for d in dimensions {
        prompt.push_str(&format!("- \"{}\" ({}): {}\n", d.id, d.name, d.description));
    }
    prompt.push_str(&format!(
        "\nWrite a concise, factual description for every dimension, at most {MAX_ANNOTATION_WORDS} \
         words each. Describe only what is visible. Return a single JSON object whose keys are \
         exactly the dimension ids above ({}) and whose values are strings.",
        dimensions
            .iter()
            .map(|d| format!("\"{}\"", d.id))
            .collect::<Vec<_>>()
            .join(", ")
    ));
    Ok(prompt)
}

fn to_annotations(value: &Value, dimensions: &[SearchDimension]) -> BTreeMap<String, String> {
    dimensions
        .iter()
        .filter_map(|d| {
            value[&d.id]
                .as_str()
                .map(|s| (d.id.clone(), s.trim().to_string()))
        })
        .collect()
}

/// Annotates every GUI of the manifest that the store does not already
/// cover (with `resume`), fanning out over `width` workers. Each finished
/// GUI is appended to the store file immediately; the file is rewritten in
/// canonical order at the end.
pub fn annotate_dataset(job: AnnotationJob<'_>) -> Result<AnnotationOutcome, AnnotateError> {
    if job.width == 0 {
        return Err(AnnotateError::Precondition("width must be at least 1".into()));
    }
    let dims = job.dimensions.as_slice();
    let prompt = build_annotation_prompt(dims)?;
    let schema = annotation_schema(dims);

    let mut store = if job.resume {
        AnnotationStore::load_or_empty(&job.store_path)?
    } else {
        if job.store_path.exists() {
            std::fs::remove_file(&job.store_path).map_err(|source| DatasetError::Io {
                path: job.store_path.clone(),
                source,
            })?;
        }
        AnnotationStore::new(job.store_path.parent().map(PathBuf::from).unwrap_or_default())
    };

    let store_dir = job.store_path.parent().map(PathBuf::from).unwrap_or_default();
    let same_dir = store_dir == job.manifest.base_dir;
    let pending: Vec<_> = job
        .manifest
        .guis
        .iter()
        .filter(|g| !(job.resume && store.is_complete_for(&g.gui_id, job.dimensions)))
        .collect();

    let mut appender = StoreAppender::open(&job.store_path)?;
    let mut usage = UsageMeter::default();
    let mut failures = Vec::new();
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, Result<(BTreeMap<String, String>, UsageMeter), String>)>();

    std::thread::scope(|scope| -> Result<(), AnnotateError> {
        for _ in 0..job.width.min(pending.len().max(1)) {
            let tx = tx.clone();
            let (next, pending, gateway, prompt, schema) =
                (&next, &pending, &job.gateway, &prompt, &schema);
            let manifest = job.manifest;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(gui) = pending.get(i) else { break };
                let path = manifest.image_file(gui);
                let result = std::fs::read(&path)
                    .map_err(|e| format!("cannot read {}: {e}", path.display()))
                    .and_then(|bytes| {
                        let image = ImageInput {
                            bytes: &bytes,
                            mime: mime_for_path(&path),
                        };
                        gateway
                            .complete_with_image(prompt, image, schema)
                            .map(|(v, meter)| (to_annotations(&v, dims), meter))
                            .map_err(|e| e.to_string())
                    });
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // Single writer: the scope's own thread drains results in arrival order.
        for (i, result) in rx {
            let gui = pending[i];
            match result {
                Ok((annotations, meter)) => {
                    usage.merge(&meter);
                    let image_path = if same_dir {
                        job.manifest.store_relative_image_path(gui)
                    } else {
                        let file = job.manifest.image_file(gui);
                        std::fs::canonicalize(&file)
                            .unwrap_or(file)
                            .to_string_lossy()
                            .into_owned()
                    };
                    let entry = StoredAnnotation {
                        gui_id: gui.gui_id.clone(),
                        image_path,
                        annotations,
                    };
                    appender.append(&entry)?;
                    store.insert(entry);
                }
                Err(error) => {
                    tracing::warn!(gui_id = %gui.gui_id, %error, "annotation failed");
                    failures.push(AnnotationFailure {
                        gui_id: gui.gui_id.clone(),
                        error,
                    });
                }
            }
        }
        Ok(())
    })?;
    drop(appender);

    failures.sort_by(|a, b| a.gui_id.cmp(&b.gui_id));
    store.save(&job.store_path)?;

    let attempted = pending.len();
    if attempted > 0 && failures.len() as f64 / attempted as f64 > job.failure_threshold {
        return Err(AnnotateError::TooManyFailures {
            failed: failures.len(),
            attempted,
            threshold: job.failure_threshold * 100.0,
            failures,
            usage,
        });
    }
    Ok(AnnotationOutcome {
        store,
        usage,
        failures,
        attempted,
    })
}
