//! Semantic clustering of a prompt's generations and the consistency metrics
//! derived from it.
//!
//! `S(consistency) = sum_c prop_c * ln(prop_c)` is the negative entropy of the
//! cluster proportions: 0 when every generation lands in one semantic set,
//! `-ln(k)` when all `k` generations disagree.

mod oracle;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::GenerationMatrix;

pub use oracle::{
    cluster_by_oracle, connected_component_sizes, parse_texts, CommandOracle, EquivalenceOracle,
    OracleConfig, OracleRequest, ResponseTexts,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterSource {
    AnswerKey,
    ExternalLabels,
    ExternalOracle,
}

/// Cluster sizes of one prompt's generations, sorted descending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClusterPartition {
    pub prompt_id: String,
    pub sizes: Vec<usize>,
    pub source: ClusterSource,
}

impl ClusterPartition {
    pub fn new(prompt_id: impl Into<String>, mut sizes: Vec<usize>, source: ClusterSource) -> Result<Self> {
        let prompt_id = prompt_id.into();
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::invalid(format!(
                "prompt `{prompt_id}`: cluster sizes must be non-empty and positive"
            )));
        }
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        Ok(ClusterPartition {
            prompt_id,
            sizes,
            source,
        })
    }

    /// Number of generations covered.
    pub fn k(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn num_sets(&self) -> usize {
        self.sizes.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyScore {
    pub prompt_id: String,
    pub s_consistency: f64,
    pub num_sets: usize,
}

/// Negative semantic-set entropy (natural log) and the number of sets.
pub fn s_consistency(partition: &ClusterPartition) -> ConsistencyScore {
    let k = partition.k() as f64;
    let s = if partition.sizes.len() == 1 {
        0.0
    } else {
        partition
            .sizes
            .iter()
            .map(|&c| {
                let prop = c as f64 / k;
                prop * prop.ln()
            })
            .sum()
    };
    ConsistencyScore {
        prompt_id: partition.prompt_id.clone(),
        s_consistency: s,
        num_sets: partition.num_sets(),
    }
}

pub fn s_consistency_all(partitions: &[ClusterPartition]) -> Vec<ConsistencyScore> {
    partitions.iter().map(s_consistency).collect()
}

/// Default answer-key normalisation: trim, lowercase, and drop trailing zeros
/// after a decimal point in numeric strings (`"72.0"` and `"72"` agree).
pub fn normalize_answer_key(raw: &str) -> String {
    let key = raw.trim().to_lowercase();
    let numeric = key.contains('.')
        && !key.contains(['e', 'i', 'n'])
        && key.parse::<f64>().is_ok_and(f64::is_finite);
    if numeric {
        key.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        key
    }
}

fn sizes_of<K: Ord>(keys: impl IntoIterator<Item = K>) -> Vec<usize> {
    let mut counts: BTreeMap<K, usize> = BTreeMap::new();
    for key in keys {
        *counts.entry(key).or_default() += 1;
    }
    counts.into_values().collect()
}

/// Clusters generations by their normalised answer key.
pub fn cluster_by_key(matrix: &GenerationMatrix) -> Result<Vec<ClusterPartition>> {
    cluster_by_key_with(matrix, normalize_answer_key)
}

pub fn cluster_by_key_with<F>(matrix: &GenerationMatrix, normalize: F) -> Result<Vec<ClusterPartition>>
where
    F: Fn(&str) -> String,
{
    if matrix.is_empty() {
        return Err(Error::EmptyDataset);
    }
    matrix
        .rows()
        .iter()
        .map(|row| {
            let keys = row
                .answer_keys
                .iter()
                .zip(&row.generation_indices)
                .map(|(key, &idx)| {
                    key.as_deref().map(&normalize).ok_or_else(|| Error::MissingAnswerKey {
                        prompt_id: row.prompt_id.clone(),
                        generation_index: idx,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            ClusterPartition::new(row.prompt_id.clone(), sizes_of(keys), ClusterSource::AnswerKey)
        })
        .collect()
}

/// One line of a label file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterLabel {
    pub prompt_id: String,
    pub generation_index: u32,
    #[serde(deserialize_with = "label_string")]
    pub label: String,
}

fn label_string<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    match serde_json::Value::deserialize(d)? {
        serde_json::Value::String(s) => Ok(s),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        other => Err(serde::de::Error::custom(format!("label must be a string or number, got {other}"))),
    }
}

/// Parses a line-delimited label file.
pub fn parse_labels(text: &str) -> Result<Vec<ClusterLabel>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::MalformedLine {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Partition induced by externally produced cluster labels. The labels must
/// cover exactly the matrix's (prompt, generation) pairs.
pub fn cluster_by_labels(matrix: &GenerationMatrix, labels: &[ClusterLabel]) -> Result<Vec<ClusterPartition>> {
    if matrix.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut by_pair: HashMap<(&str, u32), &str> = HashMap::with_capacity(labels.len());
    for l in labels {
        if by_pair
            .insert((l.prompt_id.as_str(), l.generation_index), l.label.as_str())
            .is_some()
        {
            return Err(Error::Labels(format!(
                "duplicate label for prompt `{}` generation {}",
                l.prompt_id, l.generation_index
            )));
        }
    }

    let mut used = 0;
    let mut out = Vec::with_capacity(matrix.n());
    for row in matrix.rows() {
        let mut keys = Vec::with_capacity(row.len());
        for &idx in &row.generation_indices {
            let label = by_pair.get(&(row.prompt_id.as_str(), idx)).ok_or_else(|| {
                Error::Labels(format!(
                    "missing label for prompt `{}` generation {idx}",
                    row.prompt_id
                ))
            })?;
            keys.push(*label);
            used += 1;
        }
        out.push(ClusterPartition::new(
            row.prompt_id.clone(),
            sizes_of(keys),
            ClusterSource::ExternalLabels,
        )?);
    }

    if used != by_pair.len() {
        let known: BTreeSet<(&str, u32)> = matrix
            .rows()
            .iter()
            .flat_map(|r| r.generation_indices.iter().map(move |&i| (r.prompt_id.as_str(), i)))
            .collect();
        let extra = labels
            .iter()
            .find(|l| !known.contains(&(l.prompt_id.as_str(), l.generation_index)))
            .expect("an unmatched label exists");
        return Err(Error::Labels(format!(
            "label for unknown pair: prompt `{}` generation {}",
            extra.prompt_id, extra.generation_index
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::PromptRow;
    use proptest::prelude::*;

    fn keyed(keys: &[&str]) -> GenerationMatrix {
        let row = PromptRow::new("q", vec![true; keys.len()])
            .with_answer_keys(keys.iter().map(|k| Some(k.to_string())).collect());
        GenerationMatrix::new(vec![row]).unwrap()
    }

    fn sizes(keys: &[&str]) -> Vec<usize> {
        cluster_by_key(&keyed(keys)).unwrap().remove(0).sizes
    }

    fn part(sizes: &[usize]) -> ClusterPartition {
        ClusterPartition::new("q", sizes.to_vec(), ClusterSource::AnswerKey).unwrap()
    }

    #[test]
    fn key_clustering() {
        assert_eq!(sizes(&["72", "72", "72"]), vec![3]);
        assert_eq!(sizes(&["72", "72", "71"]), vec![2, 1]);
        assert_eq!(sizes(&["a", "b", "a", "c", "b", "a"]), vec![3, 2, 1]);
    }

    #[test]
    fn normalisation_merges_spelling_variants() {
        assert_eq!(sizes(&["72", " 72.0", "72.", "72.50", "72.5"]), vec![3, 2]);
        assert_eq!(sizes(&["Paris", "paris ", "PARIS"]), vec![3]);
        assert_eq!(normalize_answer_key("100"), "100");
        assert_eq!(normalize_answer_key("1.0e3"), "1.0e3");
    }

    #[test]
    fn custom_normaliser() {
        let m = keyed(&["72", "72.0"]);
        let p = cluster_by_key_with(&m, |s| s.to_string()).unwrap();
        assert_eq!(p[0].sizes, vec![1, 1]);
    }

    #[test]
    fn missing_key_is_an_error() {
        let row = PromptRow::new("q", vec![true, false]).with_answer_keys(vec![Some("1".into()), None]);
        let m = GenerationMatrix::new(vec![row]).unwrap();
        assert!(matches!(
            cluster_by_key(&m),
            Err(Error::MissingAnswerKey { generation_index: 1, .. })
        ));
    }

    fn labels(pairs: &[(u32, &str)]) -> Vec<ClusterLabel> {
        pairs
            .iter()
            .map(|&(i, l)| ClusterLabel {
                prompt_id: "q".into(),
                generation_index: i,
                label: l.into(),
            })
            .collect()
    }

    #[test]
    fn label_clustering() {
        let m = GenerationMatrix::new(vec![PromptRow::new("q", vec![true; 3])]).unwrap();
        let p = cluster_by_labels(&m, &labels(&[(0, "A"), (1, "A"), (2, "B")])).unwrap();
        assert_eq!(p[0].sizes, vec![2, 1]);
        assert_eq!(p[0].source, ClusterSource::ExternalLabels);

        let m5 = GenerationMatrix::new(vec![PromptRow::new("q", vec![true; 5])]).unwrap();
        let distinct = labels(&[(0, "a"), (1, "b"), (2, "c"), (3, "d"), (4, "e")]);
        assert_eq!(cluster_by_labels(&m5, &distinct).unwrap()[0].sizes, vec![1; 5]);

        let err = cluster_by_labels(&m5, &distinct[..4]).unwrap_err().to_string();
        assert!(err.contains("generation 4"), "{err}");

        let mut extra = labels(&[(0, "A"), (1, "A"), (2, "B")]);
        extra.push(ClusterLabel {
            prompt_id: "other".into(),
            generation_index: 0,
            label: "A".into(),
        });
        assert!(cluster_by_labels(&m, &extra).unwrap_err().to_string().contains("unknown pair"));
    }

    #[test]
    fn label_file_accepts_numeric_labels() {
        let got = parse_labels("{\"prompt_id\":\"q\",\"generation_index\":0,\"label\":3}\n\n").unwrap();
        assert_eq!(got[0].label, "3");
        assert!(matches!(parse_labels("{}\n"), Err(Error::MalformedLine { line: 1, .. })));
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn entropy_fixtures() {
        assert_eq!(s_consistency(&part(&[8])).s_consistency, 0.0);
        assert!((s_consistency(&part(&[4, 4])).s_consistency + 0.693147).abs() < 1e-6);
        let skewed = s_consistency(&part(&[1, 7]));
        assert!((skewed.s_consistency - (0.125 * 0.125f64.ln() + 0.875 * 0.875f64.ln())).abs() < 1e-15);
        assert!((skewed.s_consistency + 0.376770).abs() < 1e-6);
        assert_eq!(skewed.num_sets, 2);
        assert!(skewed.s_consistency > s_consistency(&part(&[4, 4])).s_consistency);
    }

    #[test]
    fn partition_validation() {
        assert!(ClusterPartition::new("q", vec![], ClusterSource::AnswerKey).is_err());
        assert!(ClusterPartition::new("q", vec![2, 0], ClusterSource::AnswerKey).is_err());
        assert_eq!(part(&[1, 3, 2]).sizes, vec![3, 2, 1]);
    }

    proptest! {
        #[test]
        fn entropy_bounds(sizes in proptest::collection::vec(1usize..20, 1..10)) {
            let p = part(&sizes);
            let s = s_consistency(&p);
            let k = p.k() as f64;
            prop_assert!(s.s_consistency <= 0.0);
            prop_assert_eq!(s.s_consistency == 0.0, s.num_sets == 1);
            prop_assert!(s.s_consistency >= -(s.num_sets as f64).ln() - 1e-12);
            prop_assert!(s.s_consistency >= -k.ln() - 1e-12);
        }

        #[test]
        fn entropy_ignores_size_order(mut sizes in proptest::collection::vec(1usize..20, 1..10)) {
            let a = s_consistency(&part(&sizes)).s_consistency;
            sizes.reverse();
            prop_assert_eq!(a, s_consistency(&part(&sizes)).s_consistency);
        }

        #[test]
        fn merging_clusters_increases_score(sizes in proptest::collection::vec(1usize..20, 2..10), i in 0usize..10, j in 0usize..10) {
            let (i, j) = (i % sizes.len(), j % sizes.len());
            prop_assume!(i != j);
            let mut merged: Vec<usize> = sizes.iter().enumerate().filter(|&(t, _)| t != i && t != j).map(|(_, &s)| s).collect();
            merged.push(sizes[i] + sizes[j]);
            prop_assert!(s_consistency(&part(&merged)).s_consistency > s_consistency(&part(&sizes)).s_consistency);
        }

        #[test]
        fn uniform_split_minimises(c in 2usize..6, m in 1usize..6, shift in 1usize..4) {
            // Moving generations between clusters of a uniform split (sizes stay positive) only raises the score.
            let uniform = vec![m + shift; c];
            let mut skewed = uniform.clone();
            skewed[0] += shift;
            skewed[1] -= shift;
            prop_assert!(s_consistency(&part(&skewed)).s_consistency > s_consistency(&part(&uniform)).s_consistency);
        }
    }
}
