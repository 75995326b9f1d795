use std::collections::HashMap;
use std::hash::Hash;
use std::sync::{Arc, RwLock};

/// Read-mostly memo table. Readers share the lock; a miss takes the write
/// lock and re-checks before building, so each key is built once.
pub struct Memo<K, V> {
    inner: RwLock<HashMap<K, Arc<V>>>,
}

impl<K: Eq + Hash + Clone, V> Memo<K, V> {
    pub fn new() -> Self {
        Memo {
            inner: RwLock::new(HashMap::new()),
        }
    }

    pub fn get_or_build(&self, key: &K, build: impl FnOnce() -> V) -> Arc<V> {
        if let Some(v) = self.inner.read().expect("memo lock").get(key) {
            return Arc::clone(v);
        }
        let mut w = self.inner.write().expect("memo lock");
        Arc::clone(w.entry(key.clone()).or_insert_with(|| Arc::new(build())))
    }
}

impl<K: Eq + Hash + Clone, V> Default for Memo<K, V> {
    fn default() -> Self {
        Self::new()
    }
}
