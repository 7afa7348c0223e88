//! JSONL dataset files.
//!
//! A dataset directory holds `organic.jsonl`, `bandit.jsonl` and `meta.json`.
//! Propensities are written with shortest round-trip formatting, so a reload
//! reproduces them bit for bit.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{BanditLog, Dataset, EnvConfig, OrganicEvent, Phase};
use crate::error::{Error, Result};

pub const ORGANIC_FILE: &str = "organic.jsonl";
pub const BANDIT_FILE: &str = "bandit.jsonl";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub env: EnvConfig,
    pub phase: Phase,
    pub num_users: usize,
    pub organic_count: usize,
    pub bandit_count: usize,
    pub clicks: usize,
}

#[derive(Serialize)]
struct BanditLine<'a> {
    user_id: u64,
    seq_index: u64,
    context_views: &'a [u32],
    action: usize,
    propensity: f64,
    click: u8,
}

#[derive(Deserialize)]
struct OwnedBanditLine {
    user_id: u64,
    seq_index: u64,
    context_views: Vec<u32>,
    action: usize,
    propensity: f64,
    click: u8,
}

pub fn write_dataset(dir: &Path, dataset: &Dataset, env: &EnvConfig) -> Result<DatasetMeta> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let path = dir.join(ORGANIC_FILE);
    let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    for ev in &dataset.organic {
        serde_json::to_writer(&mut w, ev).expect("organic event serializes");
        w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join(BANDIT_FILE);
    let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    for log in &dataset.bandit {
        let line = BanditLine {
            user_id: log.user_id,
            seq_index: log.seq_index,
            context_views: &log.context_views,
            action: log.action,
            propensity: log.propensity,
            click: log.click as u8,
        };
        serde_json::to_writer(&mut w, &line).expect("bandit log serializes");
        w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let meta = DatasetMeta {
        env: env.clone(),
        phase: dataset.phase,
        num_users: dataset.num_users,
        organic_count: dataset.organic.len(),
        bandit_count: dataset.bandit.len(),
        clicks: dataset.clicks(),
    };
    let path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(meta)
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l)))
}

fn format_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn read_dataset(dir: &Path) -> Result<(Dataset, DatasetMeta)> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: DatasetMeta =
        serde_json::from_str(&text).map_err(|e| format_error(&path, e.line(), e.to_string()))?;
    let num_items = meta.env.num_items;

    let path = dir.join(ORGANIC_FILE);
    let mut organic = Vec::with_capacity(meta.organic_count);
    for (line_no, line) in open_lines(&path)? {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: OrganicEvent = serde_json::from_str(&line)
            .map_err(|e| format_error(&path, line_no, e.to_string()))?;
        if ev.item_id >= num_items {
            return Err(format_error(
                &path,
                line_no,
                format!("item_id {} outside [0, {num_items})", ev.item_id),
            ));
        }
        organic.push(ev);
    }

    let path = dir.join(BANDIT_FILE);
    let mut bandit: Vec<BanditLog> = Vec::with_capacity(meta.bandit_count);
    for (line_no, line) in open_lines(&path)? {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: OwnedBanditLine = serde_json::from_str(&line)
            .map_err(|e| format_error(&path, line_no, e.to_string()))?;
        if raw.context_views.len() != num_items {
            return Err(format_error(
                &path,
                line_no,
                format!(
                    "context_views has length {}, expected {num_items}",
                    raw.context_views.len()
                ),
            ));
        }
        if raw.action >= num_items {
            return Err(format_error(
                &path,
                line_no,
                format!("action {} outside [0, {num_items})", raw.action),
            ));
        }
        if raw.click > 1 {
            return Err(format_error(&path, line_no, "click must be 0 or 1"));
        }
        // consecutive logs of a session share one context allocation
        let context_views = match bandit.last() {
            Some(prev) if prev.user_id == raw.user_id && *prev.context_views == *raw.context_views => {
                Arc::clone(&prev.context_views)
            }
            _ => raw.context_views.into(),
        };
        bandit.push(BanditLog {
            user_id: raw.user_id,
            seq_index: raw.seq_index,
            context_views,
            action: raw.action,
            propensity: raw.propensity,
            click: raw.click == 1,
        });
    }

    let dataset = Dataset {
        organic,
        bandit,
        num_items,
        seed: meta.env.seed,
        phase: meta.phase,
        num_users: meta.num_users,
    };
    Ok((dataset, meta))
}
