use std::collections::BTreeMap;
use std::fmt::Display;
use std::hash::Hash;

use crate::eduction::{CachedValue, Warehouse};
use crate::forensic::ForensicEvent;

pub const CLASSIFY_TAG: &str = "classify";

/// One participant in a sync. `warehouse` is `None` for a node that could
/// not be reached.
pub struct SyncNode<'a, K> {
    pub node_id: String,
    pub warehouse: Option<&'a mut Warehouse<K>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SyncReport {
    pub imported: BTreeMap<String, usize>,
    pub unreachable: Vec<String>,
    pub conflicts: usize,
    pub events: Vec<ForensicEvent>,
}

/// Makes every reachable warehouse hold the union of all tagged entries.
/// When nodes disagree on a key the earliest commit wins (ties go to the
/// node listed first) and a `cache_conflict` event is emitted.
pub fn sync_classification_caches<K>(nodes: &mut [SyncNode<'_, K>], tag: &str, emitter: &str, now: u64) -> SyncReport
where
    K: Eq + Hash + Ord + Clone + Display,
{
    let mut report = SyncReport::default();
    let mut winners: BTreeMap<K, (CachedValue, usize)> = BTreeMap::new();
    for (i, n) in nodes.iter().enumerate() {
        let Some(wh) = n.warehouse.as_deref() else {
            report.unreachable.push(n.node_id.clone());
            continue;
        };
        let mut own: Vec<(&K, &CachedValue)> = wh.iter().filter(|(_, c)| c.tag.as_deref() == Some(tag)).collect();
        own.sort_by(|a, b| a.0.cmp(b.0));
        for (k, c) in own {
            match winners.get_mut(k) {
                None => {
                    winners.insert(k.clone(), (c.clone(), i));
                }
                Some((w, owner)) => {
                    if w.value == c.value {
                        if c.committed_at < w.committed_at {
                            *w = c.clone();
                            *owner = i;
                        }
                        continue;
                    }
                    report.conflicts += 1;
                    let (kept, dropped) = if c.committed_at < w.committed_at { (i, *owner) } else { (*owner, i) };
                    report.events.push(
                        ForensicEvent::new("cache_conflict", emitter, now)
                            .with("key", k)
                            .with("kept", &nodes[kept].node_id)
                            .with("dropped", &nodes[dropped].node_id),
                    );
                    if c.committed_at < w.committed_at {
                        *w = c.clone();
                        *owner = i;
                    }
                }
            }
        }
    }
    for n in nodes.iter_mut() {
        let Some(wh) = n.warehouse.as_deref_mut() else { continue };
        let mut count = 0;
        for (k, (c, _)) in &winners {
            match wh.peek(k) {
                Some(existing) if existing == c => {}
                Some(existing) if existing.value == c.value => wh.overwrite(k.clone(), c.clone()),
                _ => {
                    wh.overwrite(k.clone(), c.clone());
                    count += 1;
                }
            }
        }
        report.imported.insert(n.node_id.clone(), count);
    }
    for id in &report.unreachable {
        report.events.push(ForensicEvent::new("cache_sync_unreachable", emitter, now).with("node", id));
    }
    report
}
