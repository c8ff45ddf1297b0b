//! Label co-occurrence graph estimated from training annotations.
//!
//! `A[c][c']` is the fraction of samples labelled `c` that are also labelled
//! `c'`. The diagonal is 1 for every category that occurs at all; a category
//! that never occurs gets an all-zero row and column.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One annotated sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub id: String,
    /// Sorted, de-duplicated category indices.
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationSet {
    categories: Vec<String>,
    samples: Vec<Annotation>,
}

impl AnnotationSet {
    pub fn new(categories: Vec<String>) -> Self {
        AnnotationSet {
            categories,
            samples: Vec::new(),
        }
    }

    /// Adds a sample; duplicate labels collapse, out-of-range labels are rejected.
    pub fn push(&mut self, id: &str, labels: &[usize]) -> Result<()> {
        let c = self.categories.len();
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Input(alloc::format!(
                "sample `{id}`: label index {bad} out of range for {c} categories"
            )));
        }
        let mut labels = labels.to_vec();
        labels.sort_unstable();
        labels.dedup();
        self.samples.push(Annotation {
            id: String::from(id),
            labels,
        });
        Ok(())
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn samples(&self) -> &[Annotation] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of samples labelled with each category.
    pub fn support(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_categories()];
        for s in &self.samples {
            s.labels.iter().for_each(|&l| counts[l] += 1);
        }
        counts
    }

    /// Dense `M × C` 0/1 label matrix.
    pub fn label_matrix(&self) -> Vec<Vec<bool>> {
        let c = self.num_categories();
        self.samples
            .iter()
            .map(|s| {
                let mut row = vec![false; c];
                s.labels.iter().for_each(|&l| row[l] = true);
                row
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceGraph {
    names: Vec<String>,
    adjacency: Tensor,
}

impl CooccurrenceGraph {
    /// Wraps an existing `C × C` matrix (e.g. one read from disk).
    pub fn from_parts(names: Vec<String>, adjacency: Tensor) -> Result<Self> {
        let c = names.len();
        if c == 0 {
            return Err(Error::Input("graph needs at least one category".into()));
        }
        if adjacency.shape() != [c, c] {
            return Err(crate::error::dim_err(
                "cooccurrence_graph",
                adjacency.shape(),
                &[c, c],
            ));
        }
        if adjacency.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Input("adjacency entries must lie in [0, 1]".into()));
        }
        if names.iter().any(|n| n.is_empty() || n.contains(',')) {
            return Err(Error::Input(
                "category names must be non-empty and comma-free".into(),
            ));
        }
        Ok(CooccurrenceGraph { names, adjacency })
    }

    pub fn num_categories(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// `C × C` conditional probabilities.
    pub fn adjacency(&self) -> &Tensor {
        &self.adjacency
    }

    pub fn get(&self, c: usize, c2: usize) -> f64 {
        self.adjacency.at(c, c2)
    }
}

/// Counts pairwise co-occurrences and normalises each row by its category's support.
pub fn build_graph(ann: &AnnotationSet) -> Result<CooccurrenceGraph> {
    let c = ann.num_categories();
    if c == 0 {
        return Err(Error::Input("annotation set has no categories".into()));
    }
    if ann.is_empty() {
        return Err(Error::Input("annotation set has no samples".into()));
    }
    let mut counts = vec![0usize; c * c];
    for sample in ann.samples() {
        for &a in &sample.labels {
            for &b in &sample.labels {
                counts[a * c + b] += 1;
            }
        }
    }
    let support: Vec<usize> = (0..c).map(|i| counts[i * c + i]).collect();
    let mut adjacency = Tensor::zeros(&[c, c]);
    for i in 0..c {
        if support[i] == 0 {
            continue;
        }
        for j in 0..c {
            adjacency.data_mut()[i * c + j] = counts[i * c + j] as f64 / support[i] as f64;
        }
    }
    CooccurrenceGraph::from_parts(ann.categories().to_vec(), adjacency)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;

    fn names(c: usize) -> Vec<String> {
        (0..c).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn three_sample_example() {
        let mut ann = AnnotationSet::new(names(3));
        ann.push("a", &[0, 1]).unwrap();
        ann.push("b", &[0]).unwrap();
        ann.push("c", &[0, 1, 2]).unwrap();
        let g = build_graph(&ann).unwrap();
        assert_eq!(g.get(0, 1), 2.0 / 3.0);
        assert_eq!(g.get(1, 0), 1.0);
        assert_eq!(g.get(0, 2), 1.0 / 3.0);
        assert_eq!(g.get(2, 0), 1.0);
        assert_eq!(g.get(1, 2), 0.5);
        assert_eq!(g.get(2, 1), 1.0);
        for i in 0..3 {
            assert_eq!(g.get(i, i), 1.0);
        }
        assert_eq!(ann.support(), vec![3, 2, 1]);
    }

    #[test]
    fn all_labels_gives_all_ones() {
        let mut ann = AnnotationSet::new(names(4));
        ann.push("x", &[0, 1, 2, 3]).unwrap();
        let g = build_graph(&ann).unwrap();
        assert!(g.adjacency().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn disjoint_singletons_give_identity() {
        let mut ann = AnnotationSet::new(names(3));
        for i in 0..3 {
            ann.push(&format!("s{i}"), &[i]).unwrap();
        }
        let g = build_graph(&ann).unwrap();
        assert_eq!(g.adjacency(), &Tensor::identity(3));
    }

    #[test]
    fn zero_support_isolates_node() {
        let mut ann = AnnotationSet::new(names(3));
        ann.push("a", &[0, 2]).unwrap();
        let g = build_graph(&ann).unwrap();
        for j in 0..3 {
            assert_eq!(g.get(1, j), 0.0);
            assert_eq!(g.get(j, 1), 0.0);
        }
        assert_eq!(g.get(0, 2), 1.0);
    }

    #[test]
    fn duplicates_collapse_and_range_is_checked() {
        let mut ann = AnnotationSet::new(names(2));
        ann.push("a", &[1, 1, 0, 1]).unwrap();
        assert_eq!(ann.samples()[0].labels, vec![0, 1]);
        assert!(ann.push("b", &[2]).is_err());
    }

    #[test]
    fn empty_annotations_rejected() {
        let ann = AnnotationSet::new(names(2));
        assert!(matches!(build_graph(&ann), Err(Error::Input(_))));
    }

    #[test]
    fn empty_label_sample_changes_nothing() {
        let mut ann = AnnotationSet::new(names(3));
        ann.push("a", &[0, 1]).unwrap();
        ann.push("b", &[1, 2]).unwrap();
        let before = build_graph(&ann).unwrap();
        ann.push("empty", &[]).unwrap();
        assert_eq!(build_graph(&ann).unwrap(), before);
    }

    #[test]
    fn asymmetric_unless_supports_match() {
        let mut ann = AnnotationSet::new(names(2));
        ann.push("a", &[0, 1]).unwrap();
        ann.push("b", &[0]).unwrap();
        let g = build_graph(&ann).unwrap();
        assert_ne!(g.get(0, 1), g.get(1, 0));

        let mut ann = AnnotationSet::new(names(2));
        ann.push("a", &[0, 1]).unwrap();
        ann.push("b", &[0]).unwrap();
        ann.push("c", &[1]).unwrap();
        let g = build_graph(&ann).unwrap();
        assert_eq!(g.get(0, 1), g.get(1, 0));
    }
}
