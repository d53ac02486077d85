//! Trust-registry access with a time-bounded cache.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use serde_json::Value;

/// Default lifetime of a cached registry document.
pub const DEFAULT_TTL: Duration = Duration::from_secs(300);
/// Registry fetches give up after this long; nodes fail closed.
pub const FETCH_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FetchError {
    #[error("not found")]
    NotFound,
    #[error("unavailable: {0}")]
    Unavailable(String),
}

/// Source of registry documents, typically HTTP.
pub trait Fetcher: Send + Sync {
    fn fetch_json(&self, url: &str) -> Result<Value, FetchError>;
}

pub trait Clock: Send + Sync {
    /// Monotonic time since an arbitrary origin.
    fn now(&self) -> Duration;
}

#[derive(Debug)]
pub struct SystemClock(Instant);

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock(Instant::now())
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.0.elapsed()
    }
}

/// Clock advanced by hand, for tests.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn advance(&self, by: Duration) {
        self.0.fetch_add(by.as_millis() as u64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        Duration::from_millis(self.0.load(Ordering::SeqCst))
    }
}

impl<T: Clock + ?Sized> Clock for Arc<T> {
    fn now(&self) -> Duration {
        (**self).now()
    }
}

/// In-memory registry contents served by URL. Used for offline evaluation
/// and tests; can be switched "down" to simulate an outage.
#[derive(Debug, Default)]
pub struct StaticFetcher {
    docs: RwLock<HashMap<String, Value>>,
    down: AtomicBool,
    hits: AtomicU64,
}

impl StaticFetcher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, url: impl Into<String>, doc: Value) {
        self.docs.write().expect("fetcher lock").insert(url.into(), doc);
    }

    pub fn remove(&self, url: &str) {
        self.docs.write().expect("fetcher lock").remove(url);
    }

    pub fn set_down(&self, down: bool) {
        self.down.store(down, Ordering::SeqCst);
    }

    /// Number of fetches served or refused so far.
    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }
}

impl Fetcher for StaticFetcher {
    fn fetch_json(&self, url: &str) -> Result<Value, FetchError> {
        self.hits.fetch_add(1, Ordering::SeqCst);
        if self.down.load(Ordering::SeqCst) {
            return Err(FetchError::Unavailable("connection refused".into()));
        }
        self.docs
            .read()
            .expect("fetcher lock")
            .get(url)
            .cloned()
            .ok_or(FetchError::NotFound)
    }
}

impl<T: Fetcher + ?Sized> Fetcher for Arc<T> {
    fn fetch_json(&self, url: &str) -> Result<Value, FetchError> {
        (**self).fetch_json(url)
    }
}

struct Entry {
    doc: Arc<Value>,
    fetched_at: Duration,
}

/// Registry documents keyed by URL. Readers share the lock; a refresh takes
/// it exclusively. An expired entry whose refresh fails is dropped and the
/// failure reported: stale trust data is never served.
pub struct RegistryCache {
    fetcher: Arc<dyn Fetcher>,
    clock: Arc<dyn Clock>,
    ttl: Duration,
    entries: RwLock<HashMap<String, Entry>>,
}

impl std::fmt::Debug for RegistryCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RegistryCache").field("ttl", &self.ttl).finish_non_exhaustive()
    }
}

impl RegistryCache {
    pub fn new(fetcher: Arc<dyn Fetcher>) -> Self {
        RegistryCache::with_clock(fetcher, Arc::new(SystemClock::default()), DEFAULT_TTL)
    }

    pub fn with_clock(fetcher: Arc<dyn Fetcher>, clock: Arc<dyn Clock>, ttl: Duration) -> Self {
        RegistryCache {
            fetcher,
            clock,
            ttl,
            entries: RwLock::new(HashMap::new()),
        }
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    fn fresh(&self, entry: &Entry, now: Duration) -> bool {
        now.saturating_sub(entry.fetched_at) < self.ttl
    }

    pub fn get(&self, url: &str) -> Result<Arc<Value>, FetchError> {
        let now = self.clock.now();
        {
            let entries = self.entries.read().expect("cache lock");
            if let Some(e) = entries.get(url).filter(|e| self.fresh(e, now)) {
                return Ok(e.doc.clone());
            }
        }
        let mut entries = self.entries.write().expect("cache lock");
        let now = self.clock.now();
        if let Some(e) = entries.get(url).filter(|e| self.fresh(e, now)) {
            return Ok(e.doc.clone());
        }
        match self.fetcher.fetch_json(url) {
            Ok(doc) => {
                let doc = Arc::new(doc);
                entries.insert(
                    url.to_owned(),
                    Entry {
                        doc: doc.clone(),
                        fetched_at: now,
                    },
                );
                Ok(doc)
            }
            Err(e) => {
                entries.remove(url);
                Err(e)
            }
        }
    }

    pub fn clear(&self) {
        self.entries.write().expect("cache lock").clear();
    }
}
