//! Durable storage: per-item event logs, the content-addressed outcome blob
//! store, frozen viewpoints and path bindings.
//!
//! Layout under the data directory:
//!
//! ```text
//! items/<id>/log      events, one record each
//! items/<id>/views    frozen viewpoints
//! blobs/<h0h1>/<hash> canonical outcome documents
//! paths.log           path bindings
//! ```

mod event;
mod log;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use event::{Created, Event, EventBody, EventKind, HistoryFilter};
pub use log::{read_records, LogError, RecordLog};

use crate::canonical::{sha256_hex, to_canonical_string};
use crate::ids::ItemId;

pub const LAST_VIEW: &str = "last";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("storage failure: {0}")]
    Log(#[from] LogError),
    #[error("storage failure on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("undecodable record in {path}: {source}")]
    Decode { path: PathBuf, source: serde_json::Error },
    #[error("unknown item {0}")]
    UnknownItem(ItemId),
    #[error("item {0} already exists")]
    ItemExists(ItemId),
    #[error("sequence gap on {item}: expected seq {expected}, got {got}")]
    SequenceGap { item: ItemId, expected: u64, got: u64 },
    #[error("unknown viewpoint ({schema}, {view})")]
    UnknownViewpoint { schema: String, view: String },
    #[error("no `{schema}` outcome recorded yet")]
    NoOutcomeYet { schema: String },
    #[error("viewpoint ({schema}, {view}) already exists")]
    ViewExists { schema: String, view: String },
    #[error("outcome blob {0} is missing")]
    BlobMissing(String),
    #[error("outcome blob {0} does not match its hash")]
    BlobCorrupt(String),
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::Log(_) | StoreError::Io { .. } | StoreError::Decode { .. } => "StorageFailure",
            StoreError::UnknownItem(_) => "UnknownItem",
            StoreError::ItemExists(_) => "ItemExists",
            StoreError::SequenceGap { .. } => "SequenceGap",
            StoreError::UnknownViewpoint { .. } => "UnknownViewpoint",
            StoreError::NoOutcomeYet { .. } => "NoOutcomeYet",
            StoreError::ViewExists { .. } => "ViewExists",
            StoreError::BlobMissing(_) => "BlobMissing",
            StoreError::BlobCorrupt(_) => "BlobCorrupt",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub schema: String,
    pub view: String,
    /// Seq of the Transition event whose outcome the view designates.
    pub seq: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct PathRecord {
    path: String,
    item: ItemId,
}

struct ItemLog {
    log: Mutex<Option<RecordLog>>,
    dir: PathBuf,
    events: RwLock<Vec<Arc<Event>>>,
    views: RwLock<BTreeMap<(String, String), u64>>,
    views_log: Mutex<Option<RecordLog>>,
}

#[derive(Debug, Default, Clone)]
pub struct RecoveryReport {
    /// Items whose log lost an incomplete trailing record, with the byte count.
    pub truncated: Vec<(ItemId, u64)>,
}

pub struct EventStore {
    root: PathBuf,
    sync: bool,
    items: RwLock<HashMap<ItemId, Arc<ItemLog>>>,
    paths_log: Mutex<RecordLog>,
    initial_paths: Vec<(String, ItemId)>,
}

impl EventStore {
    /// Opens the store at `root`, creating it if absent and recovering any
    /// interrupted appends. With `sync`, every append is flushed to stable
    /// storage before it returns.
    pub fn open(root: &Path, sync: bool) -> Result<(EventStore, RecoveryReport), StoreError> {
        let items_dir = root.join("items");
        fs::create_dir_all(&items_dir).map_err(io_err(&items_dir))?;
        fs::create_dir_all(root.join("blobs")).map_err(io_err(root))?;
        let mut report = RecoveryReport::default();
        let mut items = HashMap::new();
        for entry in fs::read_dir(&items_dir).map_err(io_err(&items_dir))? {
            let entry = entry.map_err(io_err(&items_dir))?;
            let Some(id) = entry.file_name().to_str().and_then(|s| s.parse::<ItemId>().ok()) else {
                continue;
            };
            let dir = entry.path();
            let log_path = dir.join("log");
            if !log_path.exists() {
                continue;
            }
            let (log, rec) = RecordLog::open(&log_path, sync)?;
            if rec.truncated > 0 {
                report.truncated.push((id, rec.truncated));
            }
            if rec.records.is_empty() {
                // The Created record never made it to disk.
                drop(log);
                fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
                continue;
            }
            let events = rec
                .records
                .iter()
                .map(|r| decode::<Event>(r, &log_path).map(Arc::new))
                .collect::<Result<Vec<_>, _>>()?;
            let views_path = dir.join("views");
            let mut views = BTreeMap::new();
            let mut views_log = None;
            if views_path.exists() {
                let (vlog, vrec) = RecordLog::open(&views_path, sync)?;
                for r in &vrec.records {
                    let v: Viewpoint = decode(r, &views_path)?;
                    views.insert((v.schema, v.view), v.seq);
                }
                views_log = Some(vlog);
            }
            items.insert(
                id,
                Arc::new(ItemLog {
                    log: Mutex::new(Some(log)),
                    dir,
                    events: RwLock::new(events),
                    views: RwLock::new(views),
                    views_log: Mutex::new(views_log),
                }),
            );
        }
        let paths_path = root.join("paths.log");
        let (paths_log, rec) = RecordLog::open(&paths_path, sync)?;
        let initial_paths = rec
            .records
            .iter()
            .map(|r| decode::<PathRecord>(r, &paths_path).map(|p| (p.path, p.item)))
            .collect::<Result<Vec<_>, _>>()?;
        report.truncated.sort();
        Ok((
            EventStore {
                root: root.to_owned(),
                sync,
                items: RwLock::new(items),
                paths_log: Mutex::new(paths_log),
                initial_paths,
            },
            report,
        ))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn item_ids(&self) -> Vec<ItemId> {
        let mut ids: Vec<_> = self.items.read().keys().copied().collect();
        ids.sort();
        ids
    }

    pub fn contains(&self, id: ItemId) -> bool {
        self.items.read().contains_key(&id)
    }

    fn item(&self, id: ItemId) -> Result<Arc<ItemLog>, StoreError> {
        self.items.read().get(&id).cloned().ok_or(StoreError::UnknownItem(id))
    }

    /// Appends `event`, which must carry the next seq for its item. Seq 0
    /// creates the item's log.
    pub fn append(&self, event: Event) -> Result<Arc<Event>, StoreError> {
        let id = event.item;
        let entry = if event.seq == 0 {
            let mut items = self.items.write();
            if items.contains_key(&id) {
                return Err(StoreError::SequenceGap {
                    item: id,
                    expected: items[&id].events.read().len() as u64,
                    got: 0,
                });
            }
            let dir = self.root.join("items").join(id.to_string());
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let entry = Arc::new(ItemLog {
                log: Mutex::new(None),
                dir,
                events: RwLock::new(Vec::new()),
                views: RwLock::new(BTreeMap::new()),
                views_log: Mutex::new(None),
            });
            items.insert(id, entry.clone());
            entry
        } else {
            self.item(id)?
        };

        let mut log = entry.log.lock();
        let expected = entry.events.read().len() as u64;
        if event.seq != expected {
            return Err(StoreError::SequenceGap {
                item: id,
                expected,
                got: event.seq,
            });
        }
        if log.is_none() {
            let (l, _) = RecordLog::open(&entry.dir.join("log"), self.sync)?;
            if self.sync {
                sync_dir(&entry.dir)?;
                sync_dir(&self.root.join("items"))?;
            }
            *log = Some(l);
        }
        let bytes = crate::canonical::to_canonical_bytes(&event);
        let result = log.as_mut().expect("opened above").append(&bytes);
        if let Err(e) = result {
            if event.seq == 0 {
                drop(log);
                self.items.write().remove(&id);
            }
            return Err(e.into());
        }
        let event = Arc::new(event);
        entry.events.write().push(event.clone());
        Ok(event)
    }

    pub fn events(&self, id: ItemId) -> Result<Vec<Arc<Event>>, StoreError> {
        Ok(self.item(id)?.events.read().clone())
    }

    /// Decodes the item's log straight from disk, bypassing the in-memory
    /// copy.
    pub fn read_log(&self, id: ItemId) -> Result<Vec<Event>, StoreError> {
        let entry = self.item(id)?;
        let _guard = entry.log.lock();
        let path = entry.dir.join("log");
        read_records(&path)?
            .iter()
            .map(|r| decode::<Event>(r, &path))
            .collect()
    }

    pub fn event_count(&self, id: ItemId) -> Result<u64, StoreError> {
        Ok(self.item(id)?.events.read().len() as u64)
    }

    pub fn history(&self, id: ItemId, filter: &HistoryFilter) -> Result<Vec<Arc<Event>>, StoreError> {
        Ok(self
            .item(id)?
            .events
            .read()
            .iter()
            .filter(|e| filter.matches(e))
            .cloned()
            .collect())
    }

    /// Stores a canonical outcome document and returns its content hash.
    /// Identical documents share one blob.
    pub fn put_blob(&self, doc: &Value) -> Result<String, StoreError> {
        let text = to_canonical_string(doc);
        let hash = sha256_hex(text.as_bytes());
        let dir = self.root.join("blobs").join(&hash[..2]);
        let path = dir.join(&hash);
        if path.exists() {
            return Ok(hash);
        }
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let tmp = dir.join(format!("{hash}.{}.tmp", uuid::Uuid::new_v4().simple()));
        {
            use std::io::Write;
            let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
            f.write_all(text.as_bytes()).map_err(io_err(&tmp))?;
            if self.sync {
                f.sync_data().map_err(io_err(&tmp))?;
            }
        }
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        if self.sync {
            sync_dir(&dir)?;
        }
        Ok(hash)
    }

    /// Reads a blob back, verifying it against its hash.
    pub fn get_blob(&self, hash: &str) -> Result<Value, StoreError> {
        if hash.len() != 64 || !hash.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(StoreError::BlobMissing(hash.to_owned()));
        }
        let path = self.root.join("blobs").join(&hash[..2]).join(hash);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::BlobMissing(hash.to_owned())),
            Err(e) => return Err(io_err(&path)(e)),
        };
        if sha256_hex(&bytes) != hash {
            return Err(StoreError::BlobCorrupt(hash.to_owned()));
        }
        serde_json::from_slice(&bytes).map_err(|_| StoreError::BlobCorrupt(hash.to_owned()))
    }

    pub fn has_blob(&self, hash: &str) -> bool {
        hash.len() == 64 && self.root.join("blobs").join(&hash[..2]).join(hash).exists()
    }

    fn last_event_for(events: &[Arc<Event>], schema: &str) -> Option<Arc<Event>> {
        events
            .iter()
            .rev()
            .find(|e| {
                e.transition()
                    .is_some_and(|t| t.outcome_ref.is_some() && t.schema.as_ref().is_some_and(|s| s.name == schema))
            })
            .cloned()
    }

    /// Event designated by a viewpoint. `"last"` follows the newest outcome of
    /// the schema; other names are frozen views.
    pub fn viewpoint_event(&self, id: ItemId, schema: &str, view: &str) -> Result<Arc<Event>, StoreError> {
        let entry = self.item(id)?;
        let events = entry.events.read();
        if view == LAST_VIEW {
            return Self::last_event_for(&events, schema).ok_or_else(|| StoreError::NoOutcomeYet {
                schema: schema.to_owned(),
            });
        }
        let seq = *entry
            .views
            .read()
            .get(&(schema.to_owned(), view.to_owned()))
            .ok_or_else(|| StoreError::UnknownViewpoint {
                schema: schema.to_owned(),
                view: view.to_owned(),
            })?;
        Ok(events[seq as usize].clone())
    }

    pub fn get_outcome(&self, id: ItemId, schema: &str, view: &str) -> Result<(Arc<Event>, Value), StoreError> {
        let event = self.viewpoint_event(id, schema, view)?;
        let hash = event
            .transition()
            .and_then(|t| t.outcome_ref.clone())
            .expect("viewpoints designate outcome-bearing events");
        let doc = self.get_blob(&hash)?;
        Ok((event, doc))
    }

    /// Freezes `view` at the current `"last"` outcome of `schema`.
    pub fn freeze_view(&self, id: ItemId, schema: &str, view: &str) -> Result<Viewpoint, StoreError> {
        let entry = self.item(id)?;
        if view == LAST_VIEW || view.is_empty() {
            return Err(StoreError::ViewExists {
                schema: schema.to_owned(),
                view: view.to_owned(),
            });
        }
        let mut vlog = entry.views_log.lock();
        let key = (schema.to_owned(), view.to_owned());
        if entry.views.read().contains_key(&key) {
            return Err(StoreError::ViewExists {
                schema: schema.to_owned(),
                view: view.to_owned(),
            });
        }
        let seq = Self::last_event_for(&entry.events.read(), schema)
            .ok_or_else(|| StoreError::NoOutcomeYet {
                schema: schema.to_owned(),
            })?
            .seq;
        if vlog.is_none() {
            *vlog = Some(RecordLog::open(&entry.dir.join("views"), self.sync)?.0);
        }
        let vp = Viewpoint {
            schema: schema.to_owned(),
            view: view.to_owned(),
            seq,
        };
        vlog.as_mut().expect("opened above").append(&crate::canonical::to_canonical_bytes(&vp))?;
        entry.views.write().insert(key, seq);
        Ok(vp)
    }

    /// Every viewpoint of an item: one `"last"` per schema with an outcome,
    /// then the frozen views.
    pub fn viewpoints(&self, id: ItemId) -> Result<Vec<Viewpoint>, StoreError> {
        let entry = self.item(id)?;
        let mut last: BTreeMap<String, u64> = BTreeMap::new();
        for e in entry.events.read().iter() {
            if let Some(t) = e.transition() {
                if let (Some(s), Some(_)) = (&t.schema, &t.outcome_ref) {
                    last.insert(s.name.clone(), e.seq);
                }
            }
        }
        let mut out: Vec<Viewpoint> = last
            .into_iter()
            .map(|(schema, seq)| Viewpoint {
                schema,
                view: LAST_VIEW.to_owned(),
                seq,
            })
            .collect();
        out.extend(entry.views.read().iter().map(|((schema, view), seq)| Viewpoint {
            schema: schema.clone(),
            view: view.clone(),
            seq: *seq,
        }));
        out.sort_by(|a, b| (&a.schema, &a.view).cmp(&(&b.schema, &b.view)));
        Ok(out)
    }

    /// Path bindings read at open, in binding order.
    pub fn recovered_paths(&self) -> &[(String, ItemId)] {
        &self.initial_paths
    }

    pub fn append_path(&self, path: &str, item: ItemId) -> Result<(), StoreError> {
        let rec = PathRecord {
            path: path.to_owned(),
            item,
        };
        self.paths_log.lock().append(&crate::canonical::to_canonical_bytes(&rec))?;
        Ok(())
    }
}

fn decode<T: serde::de::DeserializeOwned>(bytes: &[u8], path: &Path) -> Result<T, StoreError> {
    serde_json::from_slice(bytes).map_err(|source| StoreError::Decode {
        path: path.to_owned(),
        source,
    })
}

fn sync_dir(dir: &Path) -> Result<(), StoreError> {
    fs::File::open(dir)
        .and_then(|f| f.sync_all())
        .map_err(io_err(dir))
}
