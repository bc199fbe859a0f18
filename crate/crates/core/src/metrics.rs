//! Confusion matrices and ICBHI scores (sensitivity, specificity, average
//! and harmonic score).

use std::fmt;

use crate::dataset::Task;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no instances with {0} ground truth")]
    DegenerateClass(&'static str),
    #[error("class index {0} out of range for {1} classes")]
    ClassOutOfRange(usize, usize),
}

/// Counts indexed `[truth][prediction]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
    names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn new(names: &[&str]) -> Self {
        let c = names.len();
        Self { counts: vec![vec![0; c]; c], names: names.iter().map(|s| s.to_string()).collect() }
    }

    pub fn for_task(task: Task) -> Self {
        Self::new(task.class_names())
    }

    pub fn from_counts(names: &[&str], counts: Vec<Vec<u64>>) -> Self {
        assert_eq!(counts.len(), names.len(), "square matrix expected");
        assert!(counts.iter().all(|r| r.len() == names.len()), "square matrix expected");
        Self { counts, names: names.iter().map(|s| s.to_string()).collect() }
    }

    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<(), MetricsError> {
        let c = self.num_classes();
        if truth >= c || predicted >= c {
            return Err(MetricsError::ClassOutOfRange(truth.max(predicted), c));
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let diag: u64 = (0..self.num_classes()).map(|i| self.counts[i][i]).sum();
        diag as f64 / self.total().max(1) as f64
    }

    pub fn scaled(&self, factor: u64) -> Self {
        Self { counts: self.counts.iter().map(|r| r.iter().map(|v| v * factor).collect()).collect(), names: self.names.clone() }
    }
}

/// Sensitivity and specificity with the given normal class.
///
/// Specificity is the fraction of normal instances predicted normal.
/// Sensitivity counts an abnormal instance as correct only when its exact
/// class is predicted.
pub fn sen_spec(matrix: &ConfusionMatrix, normal_class: usize) -> Result<(f64, f64), MetricsError> {
    let c = matrix.num_classes();
    if normal_class >= c {
        return Err(MetricsError::ClassOutOfRange(normal_class, c));
    }
    let counts = matrix.counts();
    let normal_total: u64 = counts[normal_class].iter().sum();
    let abnormal_total: u64 = (0..c).filter(|&i| i != normal_class).map(|i| counts[i].iter().sum::<u64>()).sum();
    if normal_total == 0 {
        return Err(MetricsError::DegenerateClass("normal"));
    }
    if abnormal_total == 0 {
        return Err(MetricsError::DegenerateClass("abnormal"));
    }
    let abnormal_hits: u64 = (0..c).filter(|&i| i != normal_class).map(|i| counts[i][i]).sum();
    let spec = counts[normal_class][normal_class] as f64 / normal_total as f64;
    let sen = abnormal_hits as f64 / abnormal_total as f64;
    Ok((sen, spec))
}

/// `(AS, HS)`: arithmetic and harmonic mean of sensitivity and specificity.
pub fn icbhi_scores(sen: f64, spec: f64) -> (f64, f64) {
    let avg = (sen + spec) / 2.0;
    let harmonic = if sen + spec == 0.0 { 0.0 } else { 2.0 * sen * spec / (sen + spec) };
    (avg, harmonic)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub task: Task,
    pub sen: f64,
    pub spec: f64,
    pub as_score: f64,
    pub hs_score: f64,
    pub matrix: ConfusionMatrix,
}

impl EvalReport {
    pub fn from_matrix(task: Task, matrix: ConfusionMatrix) -> Result<Self, MetricsError> {
        let (sen, spec) = sen_spec(&matrix, task.normal_class())?;
        let (as_score, hs_score) = icbhi_scores(sen, spec);
        Ok(Self { task, sen, spec, as_score, hs_score, matrix })
    }

    /// Tab-separated `task sen spec as hs`, full precision.
    pub fn machine_line(&self) -> String {
        format!("{}\t{}\t{}\t{}\t{}", self.task.token(), self.sen, self.spec, self.as_score, self.hs_score)
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}  Spec {:.2}  Sen {:.2}  AS/HS {:.2}/{:.2}", self.task.token(), self.spec, self.sen, self.as_score, self.hs_score)?;
        let w = self.matrix.names().iter().map(|n| n.len()).max().unwrap_or(4).max(6);
        write!(f, "{:>w$}", "truth\\pred", w = w + 4)?;
        for n in self.matrix.names() {
            write!(f, " {:>w$}", n, w = w)?;
        }
        writeln!(f)?;
        for (name, row) in self.matrix.names().iter().zip(self.matrix.counts()) {
            write!(f, "{:>w$}", name, w = w + 4)?;
            for v in row {
                write!(f, " {:>w$}", v, w = w)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FOUR: [&str; 4] = ["Normal", "Crackle", "Wheeze", "Both"];

    #[test]
    fn identity_matrix_is_perfect() {
        let m = ConfusionMatrix::from_counts(&FOUR, (0..4).map(|i| (0..4).map(|j| u64::from(i == j)).collect()).collect());
        assert_eq!(sen_spec(&m, 0).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn hand_counted_fixture() {
        // Normal: 10 (8 correct); Crackle: 5 (3 correct); Wheeze: 5 (2 correct); Both: 0.
        let m = ConfusionMatrix::from_counts(&FOUR, vec![vec![8, 1, 1, 0], vec![1, 3, 0, 1], vec![2, 1, 2, 0], vec![0, 0, 0, 0]]);
        let (sen, spec) = sen_spec(&m, 0).unwrap();
        assert!((spec - 0.8).abs() < 1e-12);
        assert!((sen - 0.5).abs() < 1e-12);
    }

    #[test]
    fn all_normal_predictor() {
        let m = ConfusionMatrix::from_counts(&FOUR, vec![vec![7, 0, 0, 0], vec![3, 0, 0, 0], vec![4, 0, 0, 0], vec![1, 0, 0, 0]]);
        assert_eq!(sen_spec(&m, 0).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn missing_truth_group_is_degenerate() {
        let m = ConfusionMatrix::from_counts(&["a", "b"], vec![vec![0, 0], vec![1, 2]]);
        assert_eq!(sen_spec(&m, 0), Err(MetricsError::DegenerateClass("normal")));
        let m = ConfusionMatrix::from_counts(&["a", "b"], vec![vec![3, 0], vec![0, 0]]);
        assert_eq!(sen_spec(&m, 0), Err(MetricsError::DegenerateClass("abnormal")));
    }

    #[test]
    fn published_rows_reproduce() {
        // (spec, sen, AS, HS) from the inception comparison tables.
        for (spec, sen, a, h) in [(0.68, 0.30, 0.49, 0.42), (0.70, 0.30, 0.50, 0.42), (0.70, 0.32, 0.51, 0.44), (0.59, 0.75, 0.67, 0.66)] {
            let (avg, harm) = icbhi_scores(sen, spec);
            assert!((avg - a).abs() <= 0.005 + 1e-12, "AS {avg} vs {a}");
            assert!((harm - h).abs() <= 0.005 + 1e-12, "HS {harm} vs {h}");
        }
        let (avg, harm) = icbhi_scores(0.75, 1.0);
        assert!((avg - 0.875).abs() < 1e-12);
        assert!((harm - 0.857142857).abs() < 1e-6);
    }

    #[test]
    fn zero_zero_harmonic_is_zero() {
        assert_eq!(icbhi_scores(0.0, 0.0), (0.0, 0.0));
    }

    proptest! {
        #[test]
        fn harmonic_never_exceeds_average(sen in 0.0f64..=1.0, spec in 0.0f64..=1.0) {
            let (a, h) = icbhi_scores(sen, spec);
            prop_assert!(h <= a + 1e-15);
            prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&h));
        }

        #[test]
        fn equal_arguments_give_equal_scores(s in 0.0f64..=1.0) {
            let (a, h) = icbhi_scores(s, s);
            prop_assert!((a - s).abs() < 1e-15 && (h - s).abs() < 1e-12);
        }

        #[test]
        fn scores_are_invariant_to_uniform_count_scaling(
            counts in proptest::collection::vec(1u64..20, 9),
            k in 1u64..50,
        ) {
            let rows: Vec<Vec<u64>> = counts.chunks(3).map(|r| r.to_vec()).collect();
            let m = ConfusionMatrix::from_counts(&["n", "a", "b"], rows);
            prop_assert_eq!(sen_spec(&m, 0).unwrap(), sen_spec(&m.scaled(k), 0).unwrap());
        }
    }
}
