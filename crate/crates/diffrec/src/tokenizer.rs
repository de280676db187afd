//! Token vocabulary and item code handling.
//!
//! A target item is a fixed-length token sequence: L category code tokens
//! followed by M semantic-ID tokens. Each of the N = L + M positions has its
//! own slot vocabulary; the mask token belongs to none of them.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MASK_TOKEN: &str = "\u{27e8}MASK\u{27e9}";

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("empty catalog")]
    EmptyCatalog,
    #[error("inconsistent code lengths for items: {item_ids:?}")]
    InconsistentLengths { item_ids: Vec<String> },
    #[error("token {token:?} appears in more than one slot vocabulary")]
    OverlappingSlots { token: String },
    #[error("items {a:?} and {b:?} share the token sequence {tokens:?}")]
    TokenCollision { a: String, b: String, tokens: Vec<String> },
    #[error("token {token:?} is not in the vocabulary of slot {slot}")]
    UnknownToken { token: String, slot: usize },
    #[error("cannot parse item text {text:?}")]
    MalformedText { text: String },
}

/// One item's code draft: category tokens then semantic tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemCode {
    pub item_id: String,
    pub category: Vec<String>,
    pub semantic: Vec<String>,
}

impl ItemCode {
    pub fn tokens(&self) -> Vec<String> {
        let mut t = self.category.clone();
        t.extend(self.semantic.iter().cloned());
        t
    }

    /// Canonical text form; the "-" separator exists only here, never as a
    /// model token.
    pub fn to_text(&self) -> String {
        format!("{}-{}", self.category.concat(), self.semantic.concat())
    }
}

/// Split a concatenation of `⟨...⟩` tokens back into individual tokens.
pub fn split_tokens(text: &str) -> Result<Vec<String>, TokenizerError> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut depth = 0usize;
    for ch in text.chars() {
        match ch {
            '\u{27e8}' => {
                if depth != 0 {
                    return Err(TokenizerError::MalformedText { text: text.into() });
                }
                depth = 1;
                cur.push(ch);
            }
            '\u{27e9}' => {
                if depth != 1 {
                    return Err(TokenizerError::MalformedText { text: text.into() });
                }
                depth = 0;
                cur.push(ch);
                out.push(std::mem::take(&mut cur));
            }
            _ => {
                if depth != 1 {
                    return Err(TokenizerError::MalformedText { text: text.into() });
                }
                cur.push(ch);
            }
        }
    }
    if depth != 0 {
        return Err(TokenizerError::MalformedText { text: text.into() });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlotVocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl SlotVocab {
    fn new(mut tokens: Vec<String>) -> Self {
        tokens.sort();
        tokens.dedup();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        SlotVocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn encode(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn decode(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    slots: Vec<SlotVocab>,
    /// Number of category slots (L).
    pub n_category: usize,
    /// Number of semantic slots (M).
    pub n_semantic: usize,
    pub mask_token: String,
}

impl Vocabulary {
    pub fn build(drafts: &[ItemCode]) -> Result<Self, TokenizerError> {
        let first = drafts.first().ok_or(TokenizerError::EmptyCatalog)?;
        let (l, m) = (first.category.len(), first.semantic.len());
        let bad: Vec<String> = drafts
            .iter()
            .filter(|d| d.category.len() != l || d.semantic.len() != m)
            .map(|d| d.item_id.clone())
            .collect();
        if !bad.is_empty() {
            return Err(TokenizerError::InconsistentLengths { item_ids: bad });
        }
        let n = l + m;
        let mut per_slot: Vec<Vec<String>> = vec![Vec::new(); n];
        for d in drafts {
            for (j, tok) in d.tokens().into_iter().enumerate() {
                per_slot[j].push(tok);
            }
        }
        let slots: Vec<SlotVocab> = per_slot.into_iter().map(SlotVocab::new).collect();
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (j, slot) in slots.iter().enumerate() {
            for tok in slot.tokens() {
                if tok == MASK_TOKEN {
                    return Err(TokenizerError::OverlappingSlots { token: tok.clone() });
                }
                if let Some(_prev) = seen.insert(tok, j) {
                    return Err(TokenizerError::OverlappingSlots { token: tok.clone() });
                }
            }
        }
        Ok(Vocabulary {
            slots,
            n_category: l,
            n_semantic: m,
            mask_token: MASK_TOKEN.to_string(),
        })
    }

    /// Rebuild the skipped lookup indexes after deserialization.
    pub fn rebuild_index(&mut self) {
        for slot in &mut self.slots {
            slot.index = slot
                .tokens
                .iter()
                .enumerate()
                .map(|(i, t)| (t.clone(), i as u32))
                .collect();
        }
    }

    pub fn n(&self) -> usize {
        self.n_category + self.n_semantic
    }

    pub fn slot(&self, j: usize) -> &SlotVocab {
        &self.slots[j]
    }

    pub fn slot_sizes(&self) -> Vec<usize> {
        self.slots.iter().map(|s| s.len()).collect()
    }

    pub fn total_size(&self) -> usize {
        self.slots.iter().map(|s| s.len()).sum()
    }

    pub fn encode_item(&self, item: &ItemCode) -> Result<Vec<u32>, TokenizerError> {
        item.tokens()
            .iter()
            .enumerate()
            .map(|(j, tok)| {
                self.slots[j]
                    .encode(tok)
                    .ok_or_else(|| TokenizerError::UnknownToken {
                        token: tok.clone(),
                        slot: j,
                    })
            })
            .collect()
    }

    pub fn decode_ids(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .enumerate()
            .map(|(j, &id)| self.slots[j].decode(id).to_string())
            .collect()
    }

    /// Fingerprint used to tie checkpoints to the vocabulary they were
    /// trained against.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.n_category.to_le_bytes());
        hasher.update(self.n_semantic.to_le_bytes());
        for slot in &self.slots {
            for tok in slot.tokens() {
                hasher.update(tok.as_bytes());
                hasher.update([0u8]);
            }
            hasher.update([1u8]);
        }
        format!("{:x}", hasher.finalize())
    }

    // Global embedding ids: 0 = mask, 1 = history separator, then slot
    // vocabularies in order.
    pub const GLOBAL_MASK: u32 = 0;
    pub const GLOBAL_SEP: u32 = 1;

    pub fn global_id(&self, slot: usize, local: u32) -> u32 {
        let offset: usize = self.slots[..slot].iter().map(|s| s.len()).sum();
        2 + offset as u32 + local
    }

    pub fn global_vocab_size(&self) -> usize {
        2 + self.total_size()
    }
}

#[derive(Debug, Clone)]
pub struct CatalogItem {
    pub item_id: String,
    pub tokens: Vec<String>,
    pub ids: Vec<u32>,
}

/// Result of resolving a generated token sequence against the catalog.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LookupResult {
    Item(String),
    NotInCatalog,
    Invalid,
}

#[derive(Debug, Clone)]
pub struct Catalog {
    vocab: Vocabulary,
    items: Vec<CatalogItem>,
    by_id: HashMap<String, usize>,
    by_ids: HashMap<Vec<u32>, usize>,
    by_semantic: HashMap<Vec<u32>, Vec<usize>>,
}

impl Catalog {
    pub fn build(mut drafts: Vec<ItemCode>) -> Result<Self, TokenizerError> {
        drafts.sort_by(|a, b| a.item_id.cmp(&b.item_id));
        let vocab = Vocabulary::build(&drafts)?;
        let mut items: Vec<CatalogItem> = Vec::with_capacity(drafts.len());
        let mut by_id = HashMap::new();
        let mut by_ids: HashMap<Vec<u32>, usize> = HashMap::new();
        let mut by_semantic: HashMap<Vec<u32>, Vec<usize>> = HashMap::new();
        for d in &drafts {
            let ids = vocab.encode_item(d)?;
            let idx = items.len();
            if let Some(&prev) = by_ids.get(&ids) {
                return Err(TokenizerError::TokenCollision {
                    a: items[prev].item_id.clone(),
                    b: d.item_id.clone(),
                    tokens: d.tokens(),
                });
            }
            by_ids.insert(ids.clone(), idx);
            by_semantic
                .entry(ids[vocab.n_category..].to_vec())
                .or_default()
                .push(idx);
            by_id.insert(d.item_id.clone(), idx);
            items.push(CatalogItem {
                item_id: d.item_id.clone(),
                tokens: d.tokens(),
                ids,
            });
        }
        Ok(Catalog {
            vocab,
            items,
            by_id,
            by_ids,
            by_semantic,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[CatalogItem] {
        &self.items
    }

    pub fn get(&self, item_id: &str) -> Option<&CatalogItem> {
        self.by_id.get(item_id).map(|&i| &self.items[i])
    }

    pub fn contains(&self, item_id: &str) -> bool {
        self.by_id.contains_key(item_id)
    }

    /// Resolve a full token-string sequence to an item id.
    pub fn tokens_to_item(&self, tokens: &[String]) -> LookupResult {
        if tokens.len() != self.vocab.n() {
            return LookupResult::Invalid;
        }
        let mut ids = Vec::with_capacity(tokens.len());
        for (j, tok) in tokens.iter().enumerate() {
            match self.vocab.slot(j).encode(tok) {
                Some(id) => ids.push(id),
                None => return LookupResult::Invalid,
            }
        }
        self.ids_to_item(&ids)
    }

    pub fn ids_to_item(&self, ids: &[u32]) -> LookupResult {
        match self.by_ids.get(ids) {
            Some(&i) => LookupResult::Item(self.items[i].item_id.clone()),
            None => LookupResult::NotInCatalog,
        }
    }

    /// Resolve a semantic-only sequence; ambiguous matches count as absent.
    pub fn semantic_to_item(&self, semantic_ids: &[u32]) -> LookupResult {
        match self.by_semantic.get(semantic_ids) {
            Some(idxs) if idxs.len() == 1 => {
                LookupResult::Item(self.items[idxs[0]].item_id.clone())
            }
            Some(_) => LookupResult::NotInCatalog,
            None => LookupResult::NotInCatalog,
        }
    }

    /// Items whose slot-local ids agree with every decoded position of
    /// `partial` (None = still masked).
    pub fn consistent_items(&self, partial: &[Option<u32>]) -> Vec<usize> {
        self.items
            .iter()
            .enumerate()
            .filter(|(_, item)| {
                partial
                    .iter()
                    .zip(&item.ids)
                    .all(|(p, &id)| p.is_none_or(|v| v == id))
            })
            .map(|(i, _)| i)
            .collect()
    }
}
