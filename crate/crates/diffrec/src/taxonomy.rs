//! Unified category tree with level-aware codes.
//!
//! Raw per-item category paths are merged into one deduplicated tree. Each
//! node gets a code token `⟨prefix_l id⟩` where `prefix_l` identifies the
//! level and `id` distinguishes the node among its siblings; a node's full
//! code sequence is the concatenation of its ancestors' tokens plus its own.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = usize;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("no categories")]
    NoCategories,
    #[error("path {path:?} contains an empty segment")]
    EmptySegment { path: Vec<String> },
    #[error("need {required} level prefixes, got {got}")]
    InsufficientPrefixes { required: usize, got: usize },
    #[error("unknown category {segment:?} at level {level}")]
    UnknownSegment { segment: String, level: usize },
    #[error("codes not assigned yet; call assign_codes first")]
    CodesNotAssigned,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoryNode {
    pub name: String,
    /// 1-based depth; roots are level 1.
    pub level: usize,
    /// Unique among children of the same parent, in first-seen order.
    pub sibling_id: usize,
    pub parent: Option<NodeId>,
    #[serde(skip)]
    pub children: Vec<NodeId>,
}

/// Rendered code tokens for one category path, e.g. `["⟨X2⟩", "⟨Y1⟩"]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeSequence {
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct CategoryTree {
    nodes: Vec<CategoryNode>,
    roots: Vec<NodeId>,
    pub max_depth: usize,
    level_prefixes: Vec<String>,
}

fn render_code(prefix: &str, sibling_id: usize) -> String {
    format!("\u{27e8}{prefix}{sibling_id}\u{27e9}")
}

/// Reserved non-semantic placeholder token for a level.
pub fn pad_token(prefix: &str) -> String {
    format!("\u{27e8}{prefix}PAD\u{27e9}")
}

impl CategoryTree {
    pub fn build(category_paths: &[Vec<String>]) -> Result<Self, TaxonomyError> {
        if category_paths.is_empty() {
            return Err(TaxonomyError::NoCategories);
        }
        let mut tree = CategoryTree::default();
        for path in category_paths {
            if path.is_empty() || path.iter().any(|s| s.is_empty()) {
                return Err(TaxonomyError::EmptySegment { path: path.clone() });
            }
            tree.insert_path(path);
        }
        Ok(tree)
    }

    fn insert_path(&mut self, path: &[String]) {
        let mut parent: Option<NodeId> = None;
        for (depth, name) in path.iter().enumerate() {
            let level = depth + 1;
            let siblings: &[NodeId] = match parent {
                Some(p) => &self.nodes[p].children,
                None => &self.roots,
            };
            let existing = siblings
                .iter()
                .copied()
                .find(|&id| self.nodes[id].name == *name);
            let id = match existing {
                Some(id) => id,
                None => {
                    let sibling_id = siblings.len();
                    let id = self.nodes.len();
                    self.nodes.push(CategoryNode {
                        name: name.clone(),
                        level,
                        sibling_id,
                        parent,
                        children: Vec::new(),
                    });
                    match parent {
                        Some(p) => self.nodes[p].children.push(id),
                        None => self.roots.push(id),
                    }
                    self.max_depth = self.max_depth.max(level);
                    id
                }
            };
            parent = Some(id);
        }
    }

    pub fn assign_codes(mut self, level_prefixes: &[String]) -> Result<Self, TaxonomyError> {
        if level_prefixes.len() < self.max_depth {
            return Err(TaxonomyError::InsufficientPrefixes {
                required: self.max_depth,
                got: level_prefixes.len(),
            });
        }
        self.level_prefixes = level_prefixes.to_vec();
        Ok(self)
    }

    pub fn level_prefixes(&self) -> &[String] {
        &self.level_prefixes
    }

    pub fn nodes(&self) -> &[CategoryNode] {
        &self.nodes
    }

    pub fn roots(&self) -> &[NodeId] {
        &self.roots
    }

    pub fn code_token(&self, id: NodeId) -> Result<String, TaxonomyError> {
        let node = &self.nodes[id];
        let prefix = self
            .level_prefixes
            .get(node.level - 1)
            .ok_or(TaxonomyError::CodesNotAssigned)?;
        Ok(render_code(prefix, node.sibling_id))
    }

    /// Full root-to-node code sequence of `id`.
    pub fn full_code(&self, id: NodeId) -> Result<CodeSequence, TaxonomyError> {
        let mut chain = Vec::new();
        let mut cur = Some(id);
        while let Some(n) = cur {
            chain.push(n);
            cur = self.nodes[n].parent;
        }
        chain.reverse();
        let tokens = chain
            .into_iter()
            .map(|n| self.code_token(n))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CodeSequence { tokens })
    }

    /// Code sequence of the deepest node on `path`, one token per level.
    pub fn encode_path(&self, path: &[String]) -> Result<CodeSequence, TaxonomyError> {
        let mut parent: Option<NodeId> = None;
        let mut last = None;
        for (depth, name) in path.iter().enumerate() {
            let siblings: &[NodeId] = match parent {
                Some(p) => &self.nodes[p].children,
                None => &self.roots,
            };
            let id = siblings
                .iter()
                .copied()
                .find(|&id| self.nodes[id].name == *name)
                .ok_or_else(|| TaxonomyError::UnknownSegment {
                    segment: name.clone(),
                    level: depth + 1,
                })?;
            parent = Some(id);
            last = Some(id);
        }
        match last {
            Some(id) => self.full_code(id),
            None => Ok(CodeSequence { tokens: Vec::new() }),
        }
    }

    /// Inverse of `encode_path` for unnormalized sequences; used for
    /// round-trip checks and report rendering.
    pub fn decode_codes(&self, codes: &CodeSequence) -> Result<Vec<String>, TaxonomyError> {
        let mut parent: Option<NodeId> = None;
        let mut names = Vec::new();
        for (depth, token) in codes.tokens.iter().enumerate() {
            let siblings: &[NodeId] = match parent {
                Some(p) => &self.nodes[p].children,
                None => &self.roots,
            };
            let id = siblings
                .iter()
                .copied()
                .find(|&id| self.code_token(id).map(|t| t == *token).unwrap_or(false))
                .ok_or_else(|| TaxonomyError::UnknownSegment {
                    segment: token.clone(),
                    level: depth + 1,
                })?;
            names.push(self.nodes[id].name.clone());
            parent = Some(id);
        }
        Ok(names)
    }

    /// Pad with per-level placeholders or truncate to the first `target_len`
    /// tokens so the output has exactly `target_len` entries.
    pub fn normalize_length(
        &self,
        codes: &CodeSequence,
        target_len: usize,
    ) -> Result<CodeSequence, TaxonomyError> {
        assert!(target_len >= 1, "target length must be positive");
        let mut tokens = codes.tokens.clone();
        tokens.truncate(target_len);
        while tokens.len() < target_len {
            let prefix = self
                .level_prefixes
                .get(tokens.len())
                .ok_or(TaxonomyError::CodesNotAssigned)?;
            tokens.push(pad_token(prefix));
        }
        Ok(CodeSequence { tokens })
    }

    /// All tokens that may appear at category slot `level_idx` (0-based):
    /// every code observed at that level plus the level's placeholder.
    pub fn level_tokens(&self, level_idx: usize) -> Result<Vec<String>, TaxonomyError> {
        let mut out = Vec::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if node.level == level_idx + 1 {
                out.push(self.code_token(id)?);
            }
        }
        let prefix = self
            .level_prefixes
            .get(level_idx)
            .ok_or(TaxonomyError::CodesNotAssigned)?;
        out.push(pad_token(prefix));
        out.sort();
        out.dedup();
        Ok(out)
    }

    pub fn to_file(&self) -> TaxonomyFile {
        TaxonomyFile {
            level_prefixes: self.level_prefixes.clone(),
            max_depth: self.max_depth,
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(id, n)| TaxonomyFileNode {
                    name: n.name.clone(),
                    level: n.level,
                    sibling_id: n.sibling_id,
                    parent: n.parent,
                    code_token: self.code_token(id).unwrap_or_default(),
                })
                .collect(),
        }
    }

    pub fn from_file(file: &TaxonomyFile) -> Self {
        let mut nodes: Vec<CategoryNode> = file
            .nodes
            .iter()
            .map(|n| CategoryNode {
                name: n.name.clone(),
                level: n.level,
                sibling_id: n.sibling_id,
                parent: n.parent,
                children: Vec::new(),
            })
            .collect();
        let mut roots = Vec::new();
        for id in 0..nodes.len() {
            match nodes[id].parent {
                Some(p) => nodes[p].children.push(id),
                None => roots.push(id),
            }
        }
        CategoryTree {
            nodes,
            roots,
            max_depth: file.max_depth,
            level_prefixes: file.level_prefixes.clone(),
        }
    }
}

/// Serialized taxonomy; node order is insertion order, so the file is
/// byte-stable for a fixed input.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaxonomyFile {
    pub level_prefixes: Vec<String>,
    pub max_depth: usize,
    pub nodes: Vec<TaxonomyFileNode>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaxonomyFileNode {
    pub name: String,
    pub level: usize,
    pub sibling_id: usize,
    pub parent: Option<NodeId>,
    pub code_token: String,
}

/// Default level prefixes X, Y, Z, then U1, U2, ...
pub fn default_prefixes(depth: usize) -> Vec<String> {
    let base = ["X", "Y", "Z"];
    (0..depth)
        .map(|i| {
            base.get(i)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("U{}", i - base.len() + 1))
        })
        .collect()
}
