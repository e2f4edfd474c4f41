//! Service logic independent of HTTP: prediction, queueing, review and
//! cached explanations.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use base64::Engine;
use serde::{Deserialize, Serialize};

use nailguard::explain::{
    grad_cam, overlay, segment_grid, shapley_attribution, to_pixel_map, AttributionMap, AttributionMethod, Baseline,
    ShapleyMode, DEFAULT_ALPHA,
};
use nailguard::models::{argmax, Classifier, WeightsProvider};
use nailguard::pipeline::{load_and_resize, PreprocessedImage};
use nailguard::{LabelTaxonomy, NUM_CLASSES};

use crate::error::{Result, ServiceError};
use crate::priority::{priority_score, SeverityWeights};
use crate::store::{Case, CaseId, CaseStore, Decision, Prediction, Review, StoreState};

pub trait Clock: Send + Sync {
    /// Milliseconds since the Unix epoch.
    fn now(&self) -> i64;
}

#[derive(Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> i64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as i64).unwrap_or(0)
    }
}

/// Test clock: returns its value and advances by `step`.
#[derive(Debug)]
pub struct ManualClock {
    now: AtomicI64,
    step: i64,
}

impl ManualClock {
    pub fn new(start: i64, step: i64) -> Self {
        Self { now: AtomicI64::new(start), step }
    }

    pub fn set(&self, t: i64) {
        self.now.store(t, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> i64 {
        self.now.fetch_add(self.step, Ordering::SeqCst)
    }
}

/// A servable model.
pub trait Predictor: Send + Sync {
    fn backbone(&self) -> &str;
    fn taxonomy(&self) -> &LabelTaxonomy;
    fn predict(&self, image: &PreprocessedImage) -> nailguard::Result<[f64; NUM_CLASSES]>;
    fn explain(
        &self,
        image: &PreprocessedImage,
        method: AttributionMethod,
        target: usize,
    ) -> nailguard::Result<AttributionMap>;
}

/// Shapley explanations in the service use exact enumeration over a 2×4
/// block grid (256 coalitions) against a blurred baseline.
pub const SERVICE_SHAPLEY_GRID: [usize; 2] = [2, 4];

impl Predictor for Classifier {
    fn backbone(&self) -> &str {
        self.spec().id.as_str()
    }

    fn taxonomy(&self) -> &LabelTaxonomy {
        Classifier::taxonomy(self)
    }

    fn predict(&self, image: &PreprocessedImage) -> nailguard::Result<[f64; NUM_CLASSES]> {
        Classifier::predict(self, image)
    }

    fn explain(
        &self,
        image: &PreprocessedImage,
        method: AttributionMethod,
        target: usize,
    ) -> nailguard::Result<AttributionMap> {
        match method {
            AttributionMethod::Gradcam => grad_cam(self, image, target),
            AttributionMethod::Shapley => {
                let seg = segment_grid(SERVICE_SHAPLEY_GRID[0], SERVICE_SHAPLEY_GRID[1])?;
                let result = shapley_attribution(self, image, &seg, target, ShapleyMode::Exact, Baseline::default())?;
                Ok(to_pixel_map(&result, &seg, target))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub id: String,
    pub backbone: String,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRequest {
    pub decision: Decision,
    #[serde(default)]
    pub override_category: Option<String>,
    #[serde(default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationPayload {
    pub case_id: CaseId,
    pub method: AttributionMethod,
    pub target: String,
    pub height: usize,
    pub width: usize,
    /// Row-major attribution values in `[0, 1]`.
    pub values: Vec<f64>,
    pub overlay_png_base64: String,
}

type CacheKey = (CaseId, AttributionMethod, usize);

pub struct Triage {
    store: Mutex<CaseStore>,
    models: BTreeMap<String, Arc<dyn Predictor>>,
    /// Mirrors the store's active model for lock-free reads.
    active: RwLock<Option<String>>,
    weights: SeverityWeights,
    clock: Arc<dyn Clock>,
    cache: Mutex<HashMap<CacheKey, Arc<Vec<u8>>>>,
}

impl Triage {
    pub fn new(store: CaseStore, clock: Arc<dyn Clock>, weights: SeverityWeights) -> Self {
        Self {
            active: RwLock::new(store.active_model().map(str::to_string)),
            store: Mutex::new(store),
            models: BTreeMap::new(),
            weights,
            clock,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn register(&mut self, id: impl Into<String>, model: Arc<dyn Predictor>) {
        self.models.insert(id.into(), model);
    }

    /// Registers every checkpoint directory under `dir`, keyed by directory
    /// name. Directories that fail to load are skipped with a warning.
    pub fn register_dir(&mut self, dir: &Path, provider: &WeightsProvider) -> Result<usize> {
        let entries = std::fs::read_dir(dir).map_err(|e| ServiceError::storage(dir, e))?;
        let mut paths: Vec<_> = entries.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_dir()).collect();
        paths.sort();
        let mut n = 0;
        for path in paths {
            let id = path.file_name().expect("dir entry has a name").to_string_lossy().to_string();
            match Classifier::load(&path, &LabelTaxonomy::nail(), provider) {
                Ok(c) => {
                    self.register(id, Arc::new(c));
                    n += 1;
                }
                Err(e) => log::warn!("skipping model {}: {e}", path.display()),
            }
        }
        Ok(n)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, CaseStore> {
        self.store.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn active_model(&self) -> Option<String> {
        let active = self.active.read().unwrap_or_else(|p| p.into_inner()).clone();
        active.filter(|id| self.models.contains_key(id))
    }

    pub fn models(&self) -> Vec<ModelInfo> {
        let active = self.active_model();
        self.models
            .iter()
            .map(|(id, m)| ModelInfo {
                id: id.clone(),
                backbone: m.backbone().to_string(),
                active: active.as_deref() == Some(id),
            })
            .collect()
    }

    pub fn activate(&self, id: &str) -> Result<()> {
        if !self.models.contains_key(id) {
            return Err(ServiceError::NotFound(format!("model {id}")));
        }
        let mut store = self.lock();
        store.activate(id, self.clock.now())?;
        *self.active.write().unwrap_or_else(|p| p.into_inner()) = Some(id.to_string());
        Ok(())
    }

    pub fn submit(&self, bytes: &[u8]) -> Result<Case> {
        let id = self.active_model().ok_or(ServiceError::NoActiveModel)?;
        let model = self.models[&id].clone();
        let image = load_and_resize(bytes, "upload").map_err(|e| ServiceError::Unprocessable(e.to_string()))?;
        let probs = model.predict(&image)?;
        let top = argmax(&probs);
        let prediction =
            Prediction { category: model.taxonomy().name(top).expect("index in range").to_string(), probs };
        let score = priority_score(&probs, &self.weights);
        let mut store = self.lock();
        let image_ref = store.put_image(bytes)?;
        let now = self.clock.now();
        store.submit(image_ref, now, id, prediction, score)
    }

    pub fn case(&self, id: CaseId) -> Result<Case> {
        self.lock().get(id).cloned().ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    pub fn pending_queue(&self) -> Vec<Case> {
        self.lock().pending_queue().into_iter().cloned().collect()
    }

    /// Copy of the committed store state.
    pub fn snapshot(&self) -> StoreState {
        self.lock().state().clone()
    }

    pub fn all_cases(&self) -> Vec<Case> {
        self.lock().state().cases.values().cloned().collect()
    }

    pub fn review(&self, id: CaseId, req: ReviewRequest) -> Result<Case> {
        let override_category = match (&req.decision, req.override_category) {
            (Decision::Override, Some(raw)) => {
                let taxonomy = LabelTaxonomy::nail();
                let i = taxonomy
                    .resolve(&raw)
                    .ok_or_else(|| ServiceError::Validation(format!("unknown category {raw:?}")))?;
                Some(taxonomy.name(i).expect("resolved").to_string())
            }
            (_, other) => other,
        };
        let review =
            Review { decision: req.decision, override_category, note: req.note, reviewed_at: self.clock.now() };
        self.lock().review(id, review)
    }

    /// Explanation JSON for a case, cached per (case, method, target). The
    /// target defaults to the predicted category.
    pub fn explanation(&self, id: CaseId, method: AttributionMethod, target: Option<&str>) -> Result<Arc<Vec<u8>>> {
        let case = self.case(id)?;
        let model = self
            .models
            .get(&case.model_id)
            .cloned()
            .ok_or_else(|| ServiceError::Conflict(format!("model {} is no longer registered", case.model_id)))?;
        let taxonomy = model.taxonomy();
        let target_idx = taxonomy
            .resolve(target.unwrap_or(&case.prediction.category))
            .ok_or_else(|| ServiceError::Validation(format!("unknown target category {target:?}")))?;
        let key = (id, method, target_idx);
        if let Some(hit) = self.cache.lock().unwrap_or_else(|p| p.into_inner()).get(&key) {
            return Ok(hit.clone());
        }
        let bytes = self.lock().image(&case.image_ref)?;
        let image = load_and_resize(&bytes, &case.image_ref)?;
        let map = model.explain(&image, method, target_idx)?;
        let png = overlay(&image, &map, DEFAULT_ALPHA)?;
        let payload = ExplanationPayload {
            case_id: id,
            method,
            target: taxonomy.name(target_idx).expect("index in range").to_string(),
            height: map.height,
            width: map.width,
            values: map.values,
            overlay_png_base64: base64::engine::general_purpose::STANDARD.encode(png),
        };
        let body = Arc::new(serde_json::to_vec(&payload).expect("payload serializes"));
        // A concurrent computation of the same key may have landed first;
        // keep whichever was stored first so repeats stay byte-identical.
        let mut cache = self.cache.lock().unwrap_or_else(|p| p.into_inner());
        Ok(cache.entry(key).or_insert(body).clone())
    }
}
