//! Interaction ingestion, leave-one-out splitting, and synthetic data with
//! planted hierarchical preference structure.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no interactions")]
    Empty,
    #[error("unknown item ids: {0:?}")]
    UnknownItems(Vec<String>),
    #[error("synthetic tree too small: {0}")]
    TreeTooSmall(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
}

/// One (history, target) pair. History is chronological and already
/// truncated to the configured maximum length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub user_id: String,
    pub history: Vec<String>,
    pub target: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SplitStats {
    pub n_users: usize,
    pub n_items: usize,
    pub n_interactions: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SplitDataset {
    pub train: Vec<Instance>,
    pub validation: Vec<Instance>,
    pub test: Vec<Instance>,
    pub stats: SplitStats,
}

/// Group raw interactions into per-user chronological item sequences.
/// Ties in timestamps keep input order (the sort is stable).
pub fn group_interactions(
    interactions: &[Interaction],
    known_item: impl Fn(&str) -> bool,
) -> Result<BTreeMap<String, Vec<String>>, DatasetError> {
    if interactions.is_empty() {
        return Err(DatasetError::Empty);
    }
    let mut unknown: Vec<String> = interactions
        .iter()
        .filter(|r| !known_item(&r.item_id))
        .map(|r| r.item_id.clone())
        .collect();
    if !unknown.is_empty() {
        unknown.sort();
        unknown.dedup();
        return Err(DatasetError::UnknownItems(unknown));
    }
    let mut per_user: BTreeMap<String, Vec<(i64, usize)>> = BTreeMap::new();
    for (idx, r) in interactions.iter().enumerate() {
        per_user
            .entry(r.user_id.clone())
            .or_default()
            .push((r.timestamp, idx));
    }
    Ok(per_user
        .into_iter()
        .map(|(user, mut entries)| {
            entries.sort_by_key(|&(ts, _)| ts);
            let items = entries
                .into_iter()
                .map(|(_, idx)| interactions[idx].item_id.clone())
                .collect();
            (user, items)
        })
        .collect())
}

fn tail(seq: &[String], h_max: usize) -> Vec<String> {
    let start = seq.len().saturating_sub(h_max);
    seq[start..].to_vec()
}

/// Leave-one-out split: last interaction per user is the test target, the
/// second-to-last the validation target, and every earlier prefix→next pair
/// a training instance. Users too short for a split role simply skip it.
pub fn leave_one_out_split(
    sequences: &BTreeMap<String, Vec<String>>,
    h_max: usize,
) -> SplitDataset {
    let mut out = SplitDataset::default();
    let mut items = std::collections::BTreeSet::new();
    for (user, seq) in sequences {
        out.stats.n_interactions += seq.len();
        items.extend(seq.iter().cloned());
        let k = seq.len();
        if k >= 2 {
            out.test.push(Instance {
                user_id: user.clone(),
                history: tail(&seq[..k - 1], h_max),
                target: seq[k - 1].clone(),
            });
        }
        if k >= 3 {
            out.validation.push(Instance {
                user_id: user.clone(),
                history: tail(&seq[..k - 2], h_max),
                target: seq[k - 2].clone(),
            });
        }
        if k >= 4 {
            for t in 1..=k - 3 {
                out.train.push(Instance {
                    user_id: user.clone(),
                    history: tail(&seq[..t], h_max),
                    target: seq[t].clone(),
                });
            }
        }
    }
    out.stats.n_users = sequences.len();
    out.stats.n_items = items.len();
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    /// Children per node at each level; leaves = product of entries.
    pub branching: Vec<usize>,
    /// Probability that an interaction stays in the user's preferred
    /// top-level subtree; otherwise the item is uniform over the catalog.
    pub alpha: f64,
    /// Sequence length bounds per user (history plus target).
    pub min_seq_len: usize,
    pub max_seq_len: usize,
    /// Semantic-ID length.
    pub semantic_len: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 100,
            n_items: 200,
            branching: vec![4, 3, 2],
            alpha: 0.9,
            min_seq_len: 6,
            max_seq_len: 11,
            semantic_len: 4,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthItem {
    pub item_id: String,
    pub categories: Vec<String>,
    pub semantic_id: Vec<String>,
}

fn semantic_prefix(slot: usize) -> char {
    (b'A' + (slot % 26) as u8) as char
}

/// Deterministic synthetic catalog and interaction log. Each user has a
/// preferred top-level subtree; with probability alpha their next item is
/// drawn uniformly from that subtree, otherwise uniformly from all items.
pub fn synth_generate(
    config: &SynthConfig,
) -> Result<(Vec<SynthItem>, Vec<Interaction>), DatasetError> {
    if config.branching.is_empty() || config.branching.contains(&0) {
        return Err(DatasetError::TreeTooSmall(
            "branching factors must be positive".into(),
        ));
    }
    if !(0.0..=1.0).contains(&config.alpha) {
        return Err(DatasetError::InvalidConfig("alpha must be in [0,1]".into()));
    }
    if config.n_users == 0 || config.n_items == 0 {
        return Err(DatasetError::InvalidConfig("counts must be positive".into()));
    }
    if config.min_seq_len < 2 || config.max_seq_len < config.min_seq_len {
        return Err(DatasetError::InvalidConfig(
            "need 2 <= min_seq_len <= max_seq_len".into(),
        ));
    }
    let n_leaves: usize = config.branching.iter().product();
    if n_leaves == 0 || config.n_items < config.branching[0] {
        return Err(DatasetError::TreeTooSmall(format!(
            "{} items cannot cover {} top-level branches",
            config.n_items, config.branching[0]
        )));
    }

    // Leaf paths in lexicographic order of their per-level indices.
    let mut leaf_paths: Vec<Vec<String>> = Vec::with_capacity(n_leaves);
    let mut digits = vec![0usize; config.branching.len()];
    loop {
        let path: Vec<String> = digits
            .iter()
            .enumerate()
            .map(|(lvl, &d)| format!("L{lvl}N{d}"))
            .collect();
        leaf_paths.push(path);
        let mut pos = digits.len();
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < config.branching[pos] {
                break;
            }
            digits[pos] = 0;
        }
        if digits.iter().all(|&d| d == 0) {
            break;
        }
    }

    // Semantic alphabet just big enough to keep IDs unique.
    let mut base = 2usize;
    while base.pow(config.semantic_len as u32) < config.n_items {
        base += 1;
    }
    let width = (config.n_items as f64).log10() as usize + 1;
    let mut items = Vec::with_capacity(config.n_items);
    for i in 0..config.n_items {
        let leaf = i % n_leaves;
        let mut sem = Vec::with_capacity(config.semantic_len);
        let mut v = i;
        for slot in 0..config.semantic_len {
            sem.push(format!(
                "\u{27e8}{}{}\u{27e9}",
                semantic_prefix(slot),
                v % base
            ));
            v /= base;
        }
        items.push(SynthItem {
            item_id: format!("item{i:0w$}", w = width),
            categories: leaf_paths[leaf].clone(),
            semantic_id: sem,
        });
    }

    // Items grouped by top-level branch.
    let mut by_root: Vec<Vec<usize>> = vec![Vec::new(); config.branching[0]];
    for (i, item) in items.iter().enumerate() {
        let root: usize = item.categories[0]
            .trim_start_matches("L0N")
            .parse()
            .unwrap();
        by_root[root].push(i);
    }

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let user_width = (config.n_users as f64).log10() as usize + 1;
    let mut interactions = Vec::new();
    for u in 0..config.n_users {
        let preferred = rng.gen_range(0..config.branching[0]);
        let len = rng.gen_range(config.min_seq_len..=config.max_seq_len);
        for t in 0..len {
            let item_idx = if rng.gen_bool(config.alpha) {
                by_root[preferred][rng.gen_range(0..by_root[preferred].len())]
            } else {
                rng.gen_range(0..items.len())
            };
            interactions.push(Interaction {
                user_id: format!("user{u:0w$}", w = user_width),
                item_id: items[item_idx].item_id.clone(),
                timestamp: t as i64,
            });
        }
    }
    Ok((items, interactions))
}
