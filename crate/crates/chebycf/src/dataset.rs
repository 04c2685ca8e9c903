//! Implicit-feedback dataset: adjacency-list loading and the train/test split.
//!
//! File format: UTF-8 text, one line per user, whitespace-separated
//! non-negative decimal integers. The first token is the user id, the rest
//! are item ids the user interacted with. A line with only a user id (and a
//! fully blank line) is permitted; the former declares a user with no items.
//! This is the de-facto format of the public LightGCN-lineage splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sparse::BinaryCsr;

/// Raw per-file parse result: external user id -> external item ids.
type AdjacencyLists = BTreeMap<u64, Vec<u64>>;

/// Counters surfaced by the loader instead of log noise.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    /// Repeated (user, item) pairs collapsed in the train file.
    pub duplicate_train_pairs: usize,
    /// Repeated (user, item) pairs collapsed in the test file.
    pub duplicate_test_pairs: usize,
}

/// A binary interaction dataset with a disjoint train/test split.
///
/// External ids from the files are mapped to contiguous dense indices
/// (ascending id order, so standard 0-based splits map to themselves).
/// Users or items that appear only in the test file still get indices.
#[derive(Debug, Clone)]
pub struct InteractionDataset {
    train: BinaryCsr,
    test: BinaryCsr,
    user_ids: Vec<u64>,
    item_ids: Vec<u64>,
    stats: LoadStats,
}

impl InteractionDataset {
    /// Parse a train/test file pair.
    ///
    /// Duplicate pairs within one file are collapsed (counts in
    /// [`InteractionDataset::stats`]); a pair present in both files is a
    /// validation error because it would leak the test answer into the graph.
    pub fn load(train_path: &Path, test_path: &Path) -> Result<Self> {
        let train_lists = parse_adjacency(train_path)?;
        let test_lists = parse_adjacency(test_path)?;

        let mut user_ids = BTreeSet::new();
        let mut item_ids = BTreeSet::new();
        for (u, items) in train_lists.iter().chain(test_lists.iter()) {
            user_ids.insert(*u);
            item_ids.extend(items.iter().copied());
        }
        let user_ids: Vec<u64> = user_ids.into_iter().collect();
        let item_ids: Vec<u64> = item_ids.into_iter().collect();
        let user_index: BTreeMap<u64, usize> =
            user_ids.iter().enumerate().map(|(i, &u)| (u, i)).collect();
        let item_index: BTreeMap<u64, usize> =
            item_ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();

        let mut stats = LoadStats::default();
        let to_rows = |lists: &AdjacencyLists, dups: &mut usize| -> Vec<Vec<usize>> {
            let mut rows = vec![Vec::new(); user_ids.len()];
            for (u, items) in lists {
                let row = &mut rows[user_index[u]];
                for it in items {
                    row.push(item_index[it]);
                }
                row.sort_unstable();
                let before = row.len();
                row.dedup();
                *dups += before - row.len();
            }
            rows
        };
        let train_rows = to_rows(&train_lists, &mut stats.duplicate_train_pairs);
        let test_rows = to_rows(&test_lists, &mut stats.duplicate_test_pairs);

        for (u, (tr, te)) in train_rows.iter().zip(&test_rows).enumerate() {
            if let Some(&i) = first_common(tr, te) {
                return Err(Error::TrainTestOverlap {
                    user: user_ids[u],
                    item: item_ids[i],
                });
            }
        }

        Ok(InteractionDataset {
            train: BinaryCsr::from_rows(item_ids.len(), train_rows),
            test: BinaryCsr::from_rows(item_ids.len(), test_rows),
            user_ids,
            item_ids,
            stats,
        })
    }

    /// Build directly from dense-index pairs; ids become `0..n`. Intended for
    /// tests, docs and synthetic benchmarks.
    pub fn from_entries(
        num_users: usize,
        num_items: usize,
        train: &[(usize, usize)],
        test: &[(usize, usize)],
    ) -> Result<Self> {
        let mut stats = LoadStats::default();
        let to_rows = |pairs: &[(usize, usize)], dups: &mut usize| -> Result<Vec<Vec<usize>>> {
            let mut rows = vec![Vec::new(); num_users];
            for &(u, i) in pairs {
                if u >= num_users || i >= num_items {
                    return Err(Error::DimensionMismatch {
                        expected: if u >= num_users { num_users } else { num_items },
                        got: if u >= num_users { u } else { i },
                    });
                }
                rows[u].push(i);
            }
            for row in &mut rows {
                row.sort_unstable();
                let before = row.len();
                row.dedup();
                *dups += before - row.len();
            }
            Ok(rows)
        };
        let train_rows = to_rows(train, &mut stats.duplicate_train_pairs)?;
        let test_rows = to_rows(test, &mut stats.duplicate_test_pairs)?;
        for (u, (tr, te)) in train_rows.iter().zip(&test_rows).enumerate() {
            if let Some(&i) = first_common(tr, te) {
                return Err(Error::TrainTestOverlap {
                    user: u as u64,
                    item: i as u64,
                });
            }
        }
        Ok(InteractionDataset {
            train: BinaryCsr::from_rows(num_items, train_rows),
            test: BinaryCsr::from_rows(num_items, test_rows),
            user_ids: (0..num_users as u64).collect(),
            item_ids: (0..num_items as u64).collect(),
            stats,
        })
    }

    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn train(&self) -> &BinaryCsr {
        &self.train
    }

    pub fn test(&self) -> &BinaryCsr {
        &self.test
    }

    pub fn stats(&self) -> LoadStats {
        self.stats
    }

    /// External id of a dense user index.
    pub fn user_id(&self, index: usize) -> u64 {
        self.user_ids[index]
    }

    /// External id of a dense item index.
    pub fn item_id(&self, index: usize) -> u64 {
        self.item_ids[index]
    }

    /// Dense index of an external user id, if present.
    pub fn user_index(&self, id: u64) -> Option<usize> {
        self.user_ids.binary_search(&id).ok()
    }

    /// Dense index of an external item id, if present.
    pub fn item_index(&self, id: u64) -> Option<usize> {
        self.item_ids.binary_search(&id).ok()
    }

    /// SHA-256 digest of the shape and the train entries, in row-major order.
    ///
    /// Models persist this so that a saved filter refuses to score a
    /// different split. The test half deliberately does not participate: the
    /// fitted filter depends on train only.
    pub fn train_checksum(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update((self.num_users() as u64).to_le_bytes());
        hasher.update((self.num_items() as u64).to_le_bytes());
        for (u, i) in self.train.iter() {
            hasher.update((u as u64).to_le_bytes());
            hasher.update((i as u64).to_le_bytes());
        }
        hasher.finalize().into()
    }
}

/// First element common to two ascending slices, if any.
fn first_common<'a>(a: &'a [usize], b: &[usize]) -> Option<&'a usize> {
    let (mut x, mut y) = (0, 0);
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => return Some(&a[x]),
        }
    }
    None
}

fn parse_adjacency(path: &Path) -> Result<AdjacencyLists> {
    let text = fs::read_to_string(path)?;
    let mut lists = AdjacencyLists::new();
    for (line_no, line) in text.lines().enumerate() {
        let mut tokens = line.split_whitespace();
        let Some(first) = tokens.next() else {
            continue; // blank line
        };
        let parse = |token: &str| -> Result<u64> {
            token.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: line_no + 1,
                token: token.to_string(),
            })
        };
        let user = parse(first)?;
        let items = lists.entry(user).or_default();
        for token in tokens {
            items.push(parse(token)?);
        }
    }
    Ok(lists)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &Path, name: &str, contents: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    #[test]
    fn parses_the_basic_split() {
        let dir = tempfile::tempdir().unwrap();
        let train = write_file(dir.path(), "train.txt", "0 1 2\n1 0\n");
        let test = write_file(dir.path(), "test.txt", "0 0\n1 2\n");
        let ds = InteractionDataset::load(&train, &test).unwrap();
        assert_eq!(ds.num_users(), 2);
        assert_eq!(ds.num_items(), 3);
        assert_eq!(ds.train().nnz(), 3);
        assert_eq!(ds.test().nnz(), 2);
        assert_eq!(ds.train().row(0), &[1, 2]);
        assert_eq!(ds.test().row(1), &[2]);
    }

    #[test]
    fn blank_lines_and_lonely_users_are_fine() {
        let dir = tempfile::tempdir().unwrap();
        let train = write_file(dir.path(), "train.txt", "0 1\n\n2\n");
        let test = write_file(dir.path(), "test.txt", "0 0\n");
        let ds = InteractionDataset::load(&train, &test).unwrap();
        // user 2 exists with no interactions; the blank line adds nothing.
        assert_eq!(ds.num_users(), 2);
        assert_eq!(ds.train().row_nnz(ds.user_index(2).unwrap()), 0);
    }

    #[test]
    fn test_only_ids_are_allocated() {
        let dir = tempfile::tempdir().unwrap();
        let train = write_file(dir.path(), "train.txt", "0 1\n");
        let test = write_file(dir.path(), "test.txt", "7 9\n");
        let ds = InteractionDataset::load(&train, &test).unwrap();
        assert_eq!(ds.num_users(), 2);
        assert_eq!(ds.num_items(), 2);
        assert_eq!(ds.user_index(7), Some(1));
        assert_eq!(ds.item_index(9), Some(1));
        assert_eq!(ds.user_id(1), 7);
    }

    #[test]
    fn non_integer_token_reports_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let train = write_file(dir.path(), "train.txt", "0 1\n1 x\n");
        let test = write_file(dir.path(), "test.txt", "0 0\n");
        match InteractionDataset::load(&train, &test) {
            Err(Error::Parse { line, token, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(token, "x");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicates_collapse_and_are_counted() {
        let dir = tempfile::tempdir().unwrap();
        let train = write_file(dir.path(), "train.txt", "0 1 1 2\n0 2\n");
        let test = write_file(dir.path(), "test.txt", "0 0\n");
        let ds = InteractionDataset::load(&train, &test).unwrap();
        assert_eq!(ds.train().nnz(), 2);
        assert_eq!(ds.stats().duplicate_train_pairs, 2);
    }

    #[test]
    fn overlap_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let train = write_file(dir.path(), "train.txt", "3 5 6\n");
        let test = write_file(dir.path(), "test.txt", "3 6\n");
        match InteractionDataset::load(&train, &test) {
            Err(Error::TrainTestOverlap { user: 3, item: 6 }) => {}
            other => panic!("expected overlap error, got {other:?}"),
        }
    }

    #[test]
    fn empty_train_file_yields_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let train = write_file(dir.path(), "train.txt", "");
        let test = write_file(dir.path(), "test.txt", "");
        let ds = InteractionDataset::load(&train, &test).unwrap();
        assert_eq!(ds.num_users(), 0);
        assert_eq!(ds.train().nnz(), 0);
    }

    #[test]
    fn from_entries_matches_loader() {
        let dir = tempfile::tempdir().unwrap();
        let train = write_file(dir.path(), "train.txt", "0 1 2\n1 0\n");
        let test = write_file(dir.path(), "test.txt", "0 0\n1 2\n");
        let loaded = InteractionDataset::load(&train, &test).unwrap();
        let built = InteractionDataset::from_entries(
            2,
            3,
            &[(0, 1), (0, 2), (1, 0)],
            &[(0, 0), (1, 2)],
        )
        .unwrap();
        assert_eq!(loaded.train(), built.train());
        assert_eq!(loaded.test(), built.test());
        assert_eq!(loaded.train_checksum(), built.train_checksum());
    }

    #[test]
    fn checksum_ignores_test_but_not_train() {
        let a = InteractionDataset::from_entries(2, 2, &[(0, 0)], &[(0, 1)]).unwrap();
        let b = InteractionDataset::from_entries(2, 2, &[(0, 0)], &[(1, 1)]).unwrap();
        let c = InteractionDataset::from_entries(2, 2, &[(0, 1)], &[(0, 0)]).unwrap();
        assert_eq!(a.train_checksum(), b.train_checksum());
        assert_ne!(a.train_checksum(), c.train_checksum());
    }
}
