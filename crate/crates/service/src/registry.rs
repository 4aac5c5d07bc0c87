//! Submitted reports, by id. Only recipes are kept; data is recomputed on
//! every redistribution or refresh. Least recently used reports are evicted
//! once the capacity is reached.

use std::num::NonZeroUsize;

use lru::LruCache;
use parking_lot::Mutex;
use pds_core::customizer::ReportRecipe;

pub struct ReportRegistry {
    reports: Mutex<LruCache<String, ReportRecipe>>,
}

impl ReportRegistry {
    pub fn new(capacity: usize) -> Self {
        let capacity = NonZeroUsize::new(capacity).unwrap_or(NonZeroUsize::MIN);
        ReportRegistry { reports: Mutex::new(LruCache::new(capacity)) }
    }

    pub fn insert(&self, recipe: ReportRecipe) -> String {
        let id = uuid::Uuid::new_v4().to_string();
        self.reports.lock().put(id.clone(), recipe);
        id
    }

    pub fn get(&self, id: &str) -> Option<ReportRecipe> {
        self.reports.lock().get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.reports.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
