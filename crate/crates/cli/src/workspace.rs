//! Data directory layout: `<root>/<task_id>/snapshot-NNNNNN.json`.

use std::fs;
use std::path::Path;

use crowdlabel::annotators::Connectors;
use crowdlabel::error::{Error, Result};
use crowdlabel::persist::SnapshotStore;
use crowdlabel::{Engine, RunState};

/// Task ids with at least one snapshot, sorted.
pub fn task_ids(root: &Path) -> Result<Vec<String>> {
    if !root.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(root)? {
        let entry = entry?;
        if !entry.file_type()?.is_dir() {
            continue;
        }
        let Some(name) = entry.file_name().to_str().map(str::to_string) else { continue };
        if SnapshotStore::for_task(root, &name).and_then(|s| s.latest_path()).ok().flatten().is_some() {
            out.push(name);
        }
    }
    out.sort();
    Ok(out)
}

/// The named task, or the only task in the directory.
pub fn resolve_task(root: &Path, task: Option<&str>) -> Result<String> {
    let ids = task_ids(root)?;
    match task {
        Some(t) if ids.iter().any(|i| i == t) => Ok(t.to_string()),
        Some(t) => Err(Error::Config(format!("no task {t:?} in {}", root.display()))),
        None => match ids.as_slice() {
            [only] => Ok(only.clone()),
            [] => Err(Error::Config(format!("no task in {}; run `init <config>` first", root.display()))),
            _ => Err(Error::Config(format!("several tasks in {}; pick one with --task ({})", root.display(), ids.join(", ")))),
        },
    }
}

/// Writes the round-0 snapshot of a new task. Refuses to overwrite an
/// existing task unless `replace` is set.
pub fn create_task(root: &Path, state: &RunState, replace: bool) -> Result<SnapshotStore> {
    let store = SnapshotStore::for_task(root, &state.task.task_id)?;
    if store.latest_path()?.is_some() {
        if !replace {
            return Err(Error::InvalidTask(format!("task {} already exists", state.task.task_id)));
        }
        for n in store.numbers()? {
            fs::remove_file(store.path_for(n))?;
        }
    }
    store.save(state)?;
    Ok(store)
}

pub fn open_engine(root: &Path, task_id: &str, connectors: &Connectors) -> Result<Engine> {
    let store = SnapshotStore::for_task(root, task_id)?;
    let state = store.load_latest()?;
    Ok(Engine::new(state, connectors)?.with_store(store))
}
