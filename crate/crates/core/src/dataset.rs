//! Interaction files, the 6:2:2 split and negative sampling.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::intern::Interner;
use crate::seed::{self, Rng};

/// User and item label tables shared by every part of a dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    users: Interner,
    items: Interner,
}

impl Vocab {
    pub fn from_labels<U, I>(users: U, items: I) -> Self
    where
        U: IntoIterator,
        U::Item: AsRef<str>,
        I: IntoIterator,
        I::Item: AsRef<str>,
    {
        let mut v = Vocab::default();
        for u in users {
            v.users.intern(u.as_ref());
        }
        for i in items {
            v.items.intern(i.as_ref());
        }
        v
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn user_labels(&self) -> &[String] {
        self.users.labels()
    }

    pub fn item_labels(&self) -> &[String] {
        self.items.labels()
    }

    pub fn user(&self, label: &str) -> Option<u32> {
        self.users.get(label)
    }

    pub fn item(&self, label: &str) -> Option<u32> {
        self.items.get(label)
    }
}

/// One labeled user-item record. Indices refer to the dataset [`Vocab`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub positive: bool,
}

impl Interaction {
    pub fn label(&self) -> f64 {
        if self.positive {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionSet {
    vocab: Arc<Vocab>,
    records: Vec<Interaction>,
}

impl InteractionSet {
    pub fn new(vocab: Arc<Vocab>, records: Vec<Interaction>) -> Self {
        InteractionSet { vocab, records }
    }

    /// Convenience constructor from `(user, item, positive)` index triples.
    pub fn from_indices(vocab: Vocab, records: &[(u32, u32, bool)]) -> Self {
        InteractionSet {
            vocab: Arc::new(vocab),
            records: records
                .iter()
                .map(|&(user, item, positive)| Interaction {
                    user,
                    item,
                    positive,
                })
                .collect(),
        }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn shared_vocab(&self) -> Arc<Vocab> {
        Arc::clone(&self.vocab)
    }

    pub fn records(&self) -> &[Interaction] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn positives(&self) -> impl Iterator<Item = &Interaction> {
        self.records.iter().filter(|r| r.positive)
    }

    pub fn num_positives(&self) -> usize {
        self.positives().count()
    }

    /// Subset with the same vocabulary, in the order given by `indices`.
    pub fn select(&self, indices: &[usize]) -> InteractionSet {
        InteractionSet {
            vocab: self.shared_vocab(),
            records: indices.iter().map(|&i| self.records[i]).collect(),
        }
    }

    pub fn with_records(&self, records: Vec<Interaction>) -> InteractionSet {
        InteractionSet {
            vocab: self.shared_vocab(),
            records,
        }
    }
}

/// Reads a `user<TAB>item[<TAB>label]` file. Labels default to 1; repeated
/// `(user, item, label)` records are kept once.
pub fn load_interactions(path: impl AsRef<Path>) -> Result<InteractionSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut users = Interner::new();
    let mut items = Interner::new();
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = if line.contains('\t') {
            line.split('\t').map(str::trim).collect()
        } else {
            line.split_whitespace().collect()
        };
        let positive = match fields.as_slice() {
            [_, _] => true,
            [_, _, "1"] => true,
            [_, _, "0"] => false,
            [_, _, other] => {
                return Err(Error::parse(path, i + 1, format!("label must be 0 or 1, got `{other}`")))
            }
            _ => {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("expected 2 or 3 fields, found {}", fields.len()),
                ))
            }
        };
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::parse(path, i + 1, "empty user or item"));
        }
        let r = Interaction {
            user: users.intern(fields[0]),
            item: items.intern(fields[1]),
            positive,
        };
        if seen.insert(r) {
            records.push(r);
        }
    }
    Ok(InteractionSet {
        vocab: Arc::new(Vocab { users, items }),
        records,
    })
}

/// Train/validation/test partition of an [`InteractionSet`].
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: InteractionSet,
    pub valid: InteractionSet,
    pub test: InteractionSet,
    pub train_idx: Vec<usize>,
    pub valid_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub seed: u64,
}

pub const TRAIN_RATIO: f64 = 0.6;
pub const VALID_RATIO: f64 = 0.2;

fn part_sizes(n: usize) -> (usize, usize) {
    let train = (n as f64 * TRAIN_RATIO).floor() as usize;
    let valid = (n as f64 * VALID_RATIO).floor() as usize;
    (train, valid)
}

/// Random 6:2:2 split: `floor(0.6N)` / `floor(0.2N)` / remainder.
///
/// Positives and explicit negatives are permuted and cut separately, so a
/// positives-only file yields exactly the sizes above for its positives.
pub fn split(data: &InteractionSet, seed: u64) -> DatasetSplit {
    split_with_train_fraction(data, seed, TRAIN_RATIO)
}

/// Like [`split`], but keeps only the first `floor(fraction * N)` records of
/// the training block. Validation and test parts are unchanged, so runs at
/// different fractions share their held-out data.
pub fn split_with_train_fraction(data: &InteractionSet, seed: u64, fraction: f64) -> DatasetSplit {
    assert!(
        fraction > 0.0 && fraction <= TRAIN_RATIO,
        "training fraction must lie in (0, 0.6]"
    );
    let mut train_idx = Vec::new();
    let mut valid_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (class, positive) in [(0u64, true), (1u64, false)] {
        let mut idx: Vec<usize> = (0..data.len())
            .filter(|&i| data.records[i].positive == positive)
            .collect();
        let n = idx.len();
        let mut rng = seed::derived_rng(seed, &[seed::tag("split"), class]);
        idx.shuffle(&mut rng);
        let (n_train, n_valid) = part_sizes(n);
        let n_keep = ((n as f64 * fraction).floor() as usize).min(n_train);
        train_idx.extend_from_slice(&idx[..n_keep]);
        valid_idx.extend_from_slice(&idx[n_train..n_train + n_valid]);
        test_idx.extend_from_slice(&idx[n_train + n_valid..]);
    }
    DatasetSplit {
        train: data.select(&train_idx),
        valid: data.select(&valid_idx),
        test: data.select(&test_idx),
        train_idx,
        valid_idx,
        test_idx,
        seed,
    }
}

const MANIFEST_PARTS: [&str; 3] = ["train", "valid", "test"];

impl DatasetSplit {
    /// Persists the split as `split.{train,valid,test}.idx`, one record
    /// index per line.
    pub fn write_manifest(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for (name, idx) in MANIFEST_PARTS
            .iter()
            .zip([&self.train_idx, &self.valid_idx, &self.test_idx])
        {
            let path = dir.join(format!("split.{name}.idx"));
            let mut out = Vec::new();
            writeln!(out, "# seed {}", self.seed).unwrap();
            for i in idx {
                writeln!(out, "{i}").unwrap();
            }
            fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn read_manifest(data: &InteractionSet, dir: impl AsRef<Path>) -> Result<DatasetSplit> {
        let dir = dir.as_ref();
        let mut parts = Vec::new();
        let mut seed = 0;
        for name in MANIFEST_PARTS {
            let path = dir.join(format!("split.{name}.idx"));
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let mut idx = Vec::new();
            for (n, line) in text.lines().enumerate() {
                if let Some(rest) = line.strip_prefix("# seed ") {
                    seed = rest
                        .trim()
                        .parse()
                        .map_err(|_| Error::parse(&path, n + 1, "bad seed"))?;
                    continue;
                }
                let i: usize = line
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(&path, n + 1, "expected a record index"))?;
                if i >= data.len() {
                    return Err(Error::parse(&path, n + 1, "record index out of range"));
                }
                idx.push(i);
            }
            parts.push(idx);
        }
        let test_idx = parts.pop().unwrap();
        let valid_idx = parts.pop().unwrap();
        let train_idx = parts.pop().unwrap();
        Ok(DatasetSplit {
            train: data.select(&train_idx),
            valid: data.select(&valid_idx),
            test: data.select(&test_idx),
            train_idx,
            valid_idx,
            test_idx,
            seed,
        })
    }
}

/// Per-user sorted list of positively interacted items.
#[derive(Debug, Clone)]
pub struct PositiveIndex {
    per_user: Vec<Vec<u32>>,
    num_items: usize,
}

impl PositiveIndex {
    pub fn new(data: &InteractionSet) -> Self {
        let mut per_user = vec![Vec::new(); data.vocab().num_users()];
        for r in data.positives() {
            per_user[r.user as usize].push(r.item);
        }
        for items in &mut per_user {
            items.sort_unstable();
            items.dedup();
        }
        PositiveIndex {
            per_user,
            num_items: data.vocab().num_items(),
        }
    }

    pub fn contains(&self, user: u32, item: u32) -> bool {
        self.items(user).binary_search(&item).is_ok()
    }

    pub fn items(&self, user: u32) -> &[u32] {
        self.per_user
            .get(user as usize)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    fn unseen_count(&self, user: u32) -> usize {
        self.num_items - self.items(user).len()
    }

    fn complement(&self, user: u32) -> Vec<u32> {
        let seen = self.items(user);
        (0..self.num_items as u32)
            .filter(|i| seen.binary_search(i).is_err())
            .collect()
    }
}

/// Draws one item uniformly from those `user` never interacted with.
fn sample_unseen(user: u32, index: &PositiveIndex, rng: &mut Rng) -> Option<u32> {
    let unseen = index.unseen_count(user);
    if unseen == 0 {
        return None;
    }
    if unseen * 4 < index.num_items {
        let pool = index.complement(user);
        return Some(pool[rng.gen_range(0..pool.len())]);
    }
    loop {
        let item = rng.gen_range(0..index.num_items as u32);
        if !index.contains(user, item) {
            return Some(item);
        }
    }
}

/// Pairs every positive of `positives` with one negative item drawn
/// uniformly from the items its user never interacted with anywhere in the
/// dataset (`exclusion`). Output alternates positive, negative.
pub fn sample_ctr_negatives(
    positives: &InteractionSet,
    exclusion: &PositiveIndex,
    seed: u64,
) -> InteractionSet {
    let mut rng = seed::derived_rng(seed, &[seed::tag("ctr-negatives")]);
    let mut records = Vec::with_capacity(positives.len() * 2);
    for r in positives.positives() {
        records.push(*r);
        match sample_unseen(r.user, exclusion, &mut rng) {
            Some(item) => records.push(Interaction {
                user: r.user,
                item,
                positive: false,
            }),
            None => warn!(
                "user {} interacted with every item; no negative sampled",
                positives.vocab().user_labels()[r.user as usize]
            ),
        }
    }
    positives.with_records(records)
}

/// Balanced CTR set for one split part: explicit negatives are used as they
/// are, and sampled negatives only fill the gap up to one per positive.
pub fn ctr_set(part: &InteractionSet, exclusion: &PositiveIndex, seed: u64) -> InteractionSet {
    let positives: Vec<Interaction> = part.positives().copied().collect();
    let explicit: Vec<Interaction> = part.records().iter().filter(|r| !r.positive).copied().collect();
    if explicit.len() >= positives.len() {
        return part.clone();
    }
    let mut rng = seed::derived_rng(seed, &[seed::tag("ctr-fill")]);
    let mut records = Vec::with_capacity(positives.len() * 2);
    let mut explicit = explicit.into_iter();
    for r in positives {
        records.push(r);
        if let Some(neg) = explicit.next() {
            records.push(neg);
        } else if let Some(item) = sample_unseen(r.user, exclusion, &mut rng) {
            records.push(Interaction {
                user: r.user,
                item,
                positive: false,
            });
        }
    }
    part.with_records(records)
}

/// Items to rank for one held-out positive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopkCandidates {
    /// The positive item first, then the sampled negatives.
    pub items: Vec<u32>,
    /// Negatives requested but unavailable.
    pub shortfall: usize,
}

/// Samples `n` distinct items the user never interacted with and prepends
/// the positive `item`.
pub fn sample_topk_candidates(
    user: u32,
    item: u32,
    exclusion: &PositiveIndex,
    n: usize,
    rng: &mut Rng,
) -> TopkCandidates {
    let unseen = exclusion.unseen_count(user);
    let mut items = Vec::with_capacity(n + 1);
    items.push(item);
    if unseen <= n {
        items.extend(exclusion.complement(user));
        return TopkCandidates {
            items,
            shortfall: n - unseen,
        };
    }
    if unseen < 2 * n || unseen * 4 < exclusion.num_items {
        let pool = exclusion.complement(user);
        items.extend(rand::seq::index::sample(rng, pool.len(), n).into_iter().map(|i| pool[i]));
    } else {
        let mut chosen = HashSet::with_capacity(n);
        while chosen.len() < n {
            let cand = rng.gen_range(0..exclusion.num_items as u32);
            if !exclusion.contains(user, cand) && chosen.insert(cand) {
                items.push(cand);
            }
        }
    }
    TopkCandidates { items, shortfall: 0 }
}
