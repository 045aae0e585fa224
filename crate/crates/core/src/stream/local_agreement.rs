use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::model::TokenId;

pub const DEFAULT_AGREEMENT_N: usize = 2;

/// Length of the longest prefix shared by every sequence.
pub fn longest_common_prefix<T: PartialEq>(seqs: &[&[T]]) -> usize {
    let Some((first, rest)) = seqs.split_first() else {
        return 0;
    };
    let mut len = first.len();
    for s in rest {
        len = len.min(s.len());
        len = first[..len]
            .iter()
            .zip(&s[..len])
            .position(|(a, b)| a != b)
            .unwrap_or(len);
    }
    len
}

/// Commits the longest common prefix of the last `n` full-audio hypotheses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalAgreementState {
    n: usize,
    history: VecDeque<Vec<TokenId>>,
    committed: Vec<TokenId>,
}

impl LocalAgreementState {
    pub fn new(n: usize) -> Self {
        Self {
            n: n.max(1),
            history: VecDeque::new(),
            committed: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn committed(&self) -> &[TokenId] {
        &self.committed
    }

    pub fn history(&self) -> impl Iterator<Item = &[TokenId]> {
        self.history.iter().map(Vec::as_slice)
    }

    /// Stores `hypothesis` and returns the newly committed tokens. Committed
    /// tokens are never retracted; if the agreed prefix does not extend the
    /// committed prefix nothing is committed.
    pub fn step(&mut self, hypothesis: Vec<TokenId>) -> Vec<TokenId> {
        self.history.push_back(hypothesis);
        while self.history.len() > self.n {
            self.history.pop_front();
        }
        if self.history.len() < self.n {
            return Vec::new();
        }
        let views: Vec<&[TokenId]> = self.history.iter().map(Vec::as_slice).collect();
        let lcp = longest_common_prefix(&views);
        let agreed = &views[0][..lcp];
        if lcp <= self.committed.len() || !agreed.starts_with(&self.committed) {
            return Vec::new();
        }
        let delta = agreed[self.committed.len()..].to_vec();
        self.committed.extend_from_slice(&delta);
        delta
    }

    /// At stream end, commits whatever the latest hypothesis adds.
    pub fn flush(&mut self) -> Vec<TokenId> {
        let Some(last) = self.history.back() else {
            return Vec::new();
        };
        if last.len() <= self.committed.len() || !last.starts_with(&self.committed) {
            return Vec::new();
        }
        let delta = last[self.committed.len()..].to_vec();
        self.committed.extend_from_slice(&delta);
        delta
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commits_shared_prefix() {
        let mut la = LocalAgreementState::new(2);
        assert!(la.step(vec![1, 2, 3]).is_empty());
        assert_eq!(la.step(vec![1, 2, 4]), vec![1, 2]);
        assert_eq!(la.committed(), &[1, 2]);
    }

    #[test]
    fn disjoint_hypotheses_commit_nothing() {
        let mut la = LocalAgreementState::new(2);
        la.step(vec![1, 2]);
        assert!(la.step(vec![3, 4]).is_empty());
    }

    #[test]
    fn shorter_agreement_never_retracts() {
        let mut la = LocalAgreementState::new(2);
        la.step(vec![1, 2, 3]);
        la.step(vec![1, 2, 3, 4]);
        assert_eq!(la.committed(), &[1, 2, 3]);
        assert!(la.step(vec![1, 9]).is_empty());
        assert_eq!(la.committed(), &[1, 2, 3]);
    }

    #[test]
    fn flush_commits_latest_hypothesis_tail() {
        let mut la = LocalAgreementState::new(2);
        la.step(vec![1, 2]);
        la.step(vec![1, 2, 3, 4]);
        assert_eq!(la.flush(), vec![3, 4]);
        assert!(la.flush().is_empty());
    }

    #[test]
    fn lcp_of_three() {
        let a = [1, 2, 3, 4];
        let b = [1, 2, 3];
        let c = [1, 2, 5];
        assert_eq!(longest_common_prefix(&[&a[..], &b[..], &c[..]]), 2);
        assert_eq!(longest_common_prefix::<u32>(&[]), 0);
    }
}
