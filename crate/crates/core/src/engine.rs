//! Loaded datasets plus model access: the layer the CLI, the HTTP service
//! and the C API share.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::config::{Config, ConfigError, DatasetEntry};
use crate::dataset::{AnnotationStore, DatasetError};
use crate::gateway::{cost_of, Gateway, GatewayError, Limiter, ModelConfig, PriceTable, UsageMeter};
use crate::index::{EmbeddingIndex, IndexError};
use crate::rerank::{rerank, FinalRanking, RerankError, RerankRequest};
use crate::retrieval::{search, RetrievalError, ScoringConfig, SearchResponse, WeightProfile};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("unknown dataset \"{0}\"")]
    UnknownDataset(String),
    #[error("dataset \"{name}\": {source}")]
    DatasetIndex { name: String, source: IndexError },
    #[error("dataset \"{name}\": {source}")]
    DatasetStore { name: String, source: DatasetError },
    #[error("dataset \"{name}\": {reason}")]
    DatasetMismatch { name: String, reason: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Rerank(#[from] RerankError),
}

/// An index with its annotation store, both immutable after load.
#[derive(Debug)]
pub struct LoadedDataset {
    pub name: String,
    pub index: EmbeddingIndex,
    pub store: AnnotationStore,
}

impl LoadedDataset {
    pub fn load(entry: &DatasetEntry) -> Result<Self, EngineError> {
        Self::open(&entry.name, &entry.index, &entry.store_path())
    }

    /// Loads and cross-checks: every indexed GUI must be in the store.
    pub fn open(name: &str, index_path: &Path, store_path: &Path) -> Result<Self, EngineError> {
        let index = EmbeddingIndex::load(index_path).map_err(|source| EngineError::DatasetIndex {
            name: name.to_string(),
            source,
        })?;
        let store = AnnotationStore::load(store_path).map_err(|source| EngineError::DatasetStore {
            name: name.to_string(),
            source,
        })?;
        if let Some(missing) = index.gui_ids().iter().find(|g| store.get(g).is_none()) {
            return Err(EngineError::DatasetMismatch {
                name: name.to_string(),
                reason: format!("indexed GUI \"{missing}\" is missing from {}", store_path.display()),
            });
        }
        Ok(Self {
            name: name.to_string(),
            index,
            store,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetSummary {
    pub name: String,
    pub gui_count: usize,
    pub dimensions: Vec<crate::dataset::SearchDimension>,
    pub embedding_model: String,
}

/// Usage with its price; `cost` is absent when the model has no price.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PricedUsage {
    pub model: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub request_count: u64,
    pub cost: Option<f64>,
}

impl PricedUsage {
    pub fn new(model: &str, usage: &UsageMeter, prices: &PriceTable) -> Self {
        Self {
            model: model.to_string(),
            input_tokens: usage.input_tokens,
            output_tokens: usage.output_tokens,
            request_count: usage.request_count,
            cost: cost_of(usage, model, prices).ok(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchOutput {
    #[serde(flatten)]
    pub response: SearchResponse,
    pub cost: Vec<PricedUsage>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RerankOutput {
    pub decomposition: crate::retrieval::DecomposedQuery,
    pub ranking: FinalRanking,
    pub cost: Vec<PricedUsage>,
}

pub struct Engine {
    config: Config,
    prices: PriceTable,
    limiter: Arc<Limiter>,
    datasets: BTreeMap<String, Arc<LoadedDataset>>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("datasets", &self.datasets.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Engine {
    /// Loads every registered dataset; the first failure aborts.
    pub fn from_config(config: Config) -> Result<Self, EngineError> {
        let prices = config.price_table()?;
        let mut datasets = BTreeMap::new();
        for entry in &config.datasets {
            let d = LoadedDataset::load(entry)?;
            datasets.insert(entry.name.clone(), Arc::new(d));
        }
        Ok(Self {
            limiter: Arc::new(Limiter::new(config.concurrency)),
            config,
            prices,
            datasets,
        })
    }

    pub fn with_dataset(mut self, dataset: LoadedDataset) -> Self {
        self.datasets.insert(dataset.name.clone(), Arc::new(dataset));
        self
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn prices(&self) -> &PriceTable {
        &self.prices
    }

    pub fn dataset(&self, name: &str) -> Result<Arc<LoadedDataset>, EngineError> {
        self.datasets
            .get(name)
            .cloned()
            .ok_or_else(|| EngineError::UnknownDataset(name.to_string()))
    }

    pub fn summaries(&self) -> Vec<DatasetSummary> {
        self.datasets
            .values()
            .map(|d| DatasetSummary {
                name: d.name.clone(),
                gui_count: d.index.gui_count(),
                dimensions: d.index.dimensions().as_slice().to_vec(),
                embedding_model: d.index.model_id().to_string(),
            })
            .collect()
    }

    /// Model config for `model`, honoring the global stub switch.
    pub fn model_config(&self, model: &str) -> Result<ModelConfig, EngineError> {
        let mut c = if self.config.stub {
            ModelConfig::stub(model.strip_prefix("stub/").unwrap_or(model))
        } else {
            ModelConfig::from_model_id(model)?
        };
        c.temperature = self.config.temperature;
        c.max_retries = self.config.max_retries;
        Ok(c)
    }

    pub fn gateway(&self, model: &str) -> Result<Gateway, EngineError> {
        Ok(Gateway::new(self.model_config(model)?)?.with_limiter(self.limiter.clone()))
    }

    pub fn scoring(&self) -> ScoringConfig {
        ScoringConfig {
            negative_weight: self.config.negative_weight,
        }
    }

    pub fn search(
        &self,
        dataset: &str,
        query: &str,
        weights: &WeightProfile,
        top: Option<usize>,
    ) -> Result<SearchOutput, EngineError> {
        let d = self.dataset(dataset)?;
        let decomposer = self.gateway(&self.config.models.decompose)?;
        let embedder = self.gateway(d.index.model_id())?;
        let response = search(&d.index, query, weights, top, &decomposer, &embedder, self.scoring())?;
        let cost = vec![
            PricedUsage::new(&decomposer.model_id(), &response.usage, &self.prices),
            PricedUsage::new(&embedder.model_id(), &response.embed_usage, &self.prices),
        ];
        Ok(SearchOutput { response, cost })
    }

    /// Full two-stage run: stage one over the whole dataset, then rerank of
    /// the head with `model` (the configured rerank model when `None`).
    pub fn rerank(
        &self,
        dataset: &str,
        request: &RerankRequest,
        model: Option<&str>,
    ) -> Result<RerankOutput, EngineError> {
        request.validate()?;
        let d = self.dataset(dataset)?;
        let stage1 = self.search(dataset, &request.query, &request.weights, None)?;
        let reranker = self.gateway(model.unwrap_or(&self.config.models.rerank))?;
        let ranking = rerank(
            &stage1.response.result,
            request,
            d.index.dimensions(),
            &d.store,
            &reranker,
        )?;
        let mut cost = stage1.cost;
        cost.push(PricedUsage::new(&reranker.model_id(), &ranking.usage, &self.prices));
        Ok(RerankOutput {
            decomposition: stage1.response.decomposition,
            ranking,
            cost,
        })
    }
}
