//! Dataset file format: text header + little-endian f32 blob.
//!
//! ```text
//! rldp-dataset v1
//! env <id>
//! obs_dim <n>
//! action_dim <n>
//! action_kind discrete|continuous
//! action_width <w>
//! transitions <n>
//! episodes <n>
//! policy <id>
//! seed <n>
//! ---
//! <blob>
//! ```
//!
//! Blob field order: states block, actions block, next_states block, done
//! block (0/1), episode index block. All little-endian f32, row-major.

use std::path::Path;

use super::dataset::{ActionKind, Dataset, DatasetMeta, Transition};
use crate::fsutil;
use crate::{Error, Result};

const MAGIC: &str = "rldp-dataset v1";

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let m = &dataset.meta;
    let n = dataset.n_transitions();
    let aw = dataset.action_width();
    let kind = match m.action_kind {
        ActionKind::Discrete => "discrete",
        ActionKind::Continuous => "continuous",
    };
    let header = format!(
        "{MAGIC}\nenv {}\nobs_dim {}\naction_dim {}\naction_kind {kind}\naction_width {aw}\n\
         transitions {n}\nepisodes {}\npolicy {}\nseed {}\n---\n",
        m.env_id,
        m.obs_dim,
        m.action_dim,
        dataset.episodes.len(),
        m.policy,
        m.seed,
    );
    let mut blob = Vec::with_capacity(n * (2 * m.obs_dim + aw + 2) * 4);
    for tr in dataset.iter_transitions() {
        fsutil::push_f32_le(&mut blob, &tr.state);
    }
    for tr in dataset.iter_transitions() {
        fsutil::push_f32_le(&mut blob, &tr.action);
    }
    for tr in dataset.iter_transitions() {
        fsutil::push_f32_le(&mut blob, &tr.next_state);
    }
    for tr in dataset.iter_transitions() {
        fsutil::push_f32_le(&mut blob, &[if tr.done { 1.0 } else { 0.0 }]);
    }
    for (e, ep) in dataset.episodes.iter().enumerate() {
        for _ in ep {
            fsutil::push_f32_le(&mut blob, &[e as f64]);
        }
    }
    let mut bytes = header.into_bytes();
    bytes.extend_from_slice(&blob);
    fsutil::atomic_write(path, &bytes)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let path_str = path.display().to_string();
    let bytes = std::fs::read(path)?;
    let (header, blob) = fsutil::split_header_blob(&bytes, &path_str)?;
    let bad = |detail: String| Error::Format { path: path_str.clone(), offset: None, detail };

    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad(format!("expected `{MAGIC}` magic line")));
    }
    let mut fields = std::collections::HashMap::new();
    for line in lines {
        if let Some((key, value)) = line.split_once(' ') {
            fields.insert(key.to_string(), value.to_string());
        } else if !line.is_empty() {
            return Err(bad(format!("malformed header line `{line}`")));
        }
    }
    let get = |key: &str| {
        fields.get(key).cloned().ok_or_else(|| Error::Format {
            path: path_str.clone(),
            offset: None,
            detail: format!("missing header field `{key}`"),
        })
    };
    let parse_usize = |key: &str| -> Result<usize> {
        get(key)?.parse().map_err(|_| Error::Format {
            path: path_str.clone(),
            offset: None,
            detail: format!("field `{key}` is not an integer"),
        })
    };

    let obs_dim = parse_usize("obs_dim")?;
    let action_dim = parse_usize("action_dim")?;
    let action_width = parse_usize("action_width")?;
    let n = parse_usize("transitions")?;
    let n_episodes = parse_usize("episodes")?;
    let action_kind = match get("action_kind")?.as_str() {
        "discrete" => ActionKind::Discrete,
        "continuous" => ActionKind::Continuous,
        other => return Err(bad(format!("unknown action_kind `{other}`"))),
    };
    let seed: u64 = get("seed")?.parse().map_err(|_| Error::Format {
        path: path_str.clone(),
        offset: None,
        detail: "field `seed` is not an integer".into(),
    })?;

    let states = fsutil::read_f32_le(blob, 0, n * obs_dim, &path_str)?;
    let mut off = n * obs_dim * 4;
    let actions = fsutil::read_f32_le(blob, off, n * action_width, &path_str)?;
    off += n * action_width * 4;
    let next_states = fsutil::read_f32_le(blob, off, n * obs_dim, &path_str)?;
    off += n * obs_dim * 4;
    let done = fsutil::read_f32_le(blob, off, n, &path_str)?;
    off += n * 4;
    let episode_idx = fsutil::read_f32_le(blob, off, n, &path_str)?;

    let mut episodes: Vec<Vec<Transition>> = vec![Vec::new(); n_episodes];
    let mut prev_ep = 0usize;
    for i in 0..n {
        let e = episode_idx[i] as usize;
        if e >= n_episodes || e < prev_ep {
            return Err(bad(format!("episode index {e} out of order at transition {i}")));
        }
        prev_ep = e;
        episodes[e].push(Transition {
            state: states[i * obs_dim..(i + 1) * obs_dim].to_vec(),
            action: actions[i * action_width..(i + 1) * action_width].to_vec(),
            next_state: next_states[i * obs_dim..(i + 1) * obs_dim].to_vec(),
            done: done[i] != 0.0,
        });
    }

    let dataset = Dataset {
        meta: DatasetMeta {
            env_id: get("env")?,
            obs_dim,
            action_dim,
            action_kind,
            policy: get("policy")?,
            seed,
        },
        episodes,
    };
    dataset.validate_chaining()?;
    Ok(dataset)
}
