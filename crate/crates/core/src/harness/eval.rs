//! Objective evaluation (RMSE of positions and of their first and second
//! temporal differences) and model selection.

use std::cmp::Ordering;
use std::fmt::Write as _;

use ndarray::{s, Array2};

use super::dataset::Utterance;
use crate::error::{Error, Result};
use crate::geometry::LandmarkSequence;
use crate::model::TalkingFaceModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub rmse_position: f64,
    pub rmse_first_diff: f64,
    pub rmse_second_diff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub model_id: String,
    pub metrics: Metrics,
}

fn diff(m: &Array2<f64>) -> Array2<f64> {
    if m.nrows() < 2 {
        return Array2::zeros((0, m.ncols()));
    }
    &m.slice(s![1.., ..]) - &m.slice(s![..-1, ..])
}

#[derive(Default)]
struct Acc {
    sum: f64,
    count: usize,
}

impl Acc {
    fn add(&mut self, gt: &Array2<f64>, pd: &Array2<f64>) {
        self.sum += gt.iter().zip(pd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        self.count += gt.len();
    }

    fn rmse(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.sum / self.count as f64).sqrt()
        }
    }
}

/// Squared errors are pooled over every (frame, coordinate) of the whole set
/// before the square root, separately for positions, first differences and
/// second differences.
pub fn compute_metrics(pairs: &[(Array2<f64>, Array2<f64>)]) -> Result<Metrics> {
    let (mut p, mut d1, mut d2) = (Acc::default(), Acc::default(), Acc::default());
    for (i, (gt, pd)) in pairs.iter().enumerate() {
        if gt.dim() != pd.dim() {
            return Err(Error::Shape(format!(
                "sequence {i}: ground truth {:?} vs prediction {:?}",
                gt.dim(),
                pd.dim()
            )));
        }
        p.add(gt, pd);
        let (g1, q1) = (diff(gt), diff(pd));
        d1.add(&g1, &q1);
        d2.add(&diff(&g1), &diff(&q1));
    }
    if p.count == 0 {
        return Err(Error::EmptyInput("empty evaluation set".into()));
    }
    Ok(Metrics {
        rmse_position: p.rmse(),
        rmse_first_diff: d1.rmse(),
        rmse_second_diff: d2.rmse(),
    })
}

pub fn evaluate_sequences(gt: &[LandmarkSequence], pd: &[LandmarkSequence]) -> Result<Metrics> {
    if gt.len() != pd.len() {
        return Err(Error::Shape(format!(
            "{} ground-truth sequences vs {} predictions",
            gt.len(),
            pd.len()
        )));
    }
    let pairs: Vec<_> = gt
        .iter()
        .zip(pd)
        .map(|(g, p)| (g.to_matrix(), p.to_matrix()))
        .collect();
    compute_metrics(&pairs)
}

/// Runs the model on each utterance and scores it against the utterance's
/// identity-removed ground truth.
pub fn evaluate<'a>(
    model: &TalkingFaceModel,
    utterances: impl IntoIterator<Item = &'a Utterance>,
) -> Result<EvalRow> {
    let mut pairs = Vec::new();
    for u in utterances {
        let pd = model.predict(&u.features)?;
        pairs.push((u.targets.to_matrix(), pd.frames.to_matrix()));
    }
    Ok(EvalRow {
        model_id: model.model_id(),
        metrics: compute_metrics(&pairs)?,
    })
}

fn rank(a: &EvalRow, b: &EvalRow) -> Ordering {
    let (x, y) = (&a.metrics, &b.metrics);
    x.rmse_position
        .total_cmp(&y.rmse_position)
        .then(x.rmse_first_diff.total_cmp(&y.rmse_first_diff))
        .then(x.rmse_second_diff.total_cmp(&y.rmse_second_diff))
        .then_with(|| a.model_id.cmp(&b.model_id))
}

/// Lowest position RMSE; ties go to the first-difference RMSE, then the
/// second-difference RMSE, then the lexically smaller model id.
pub fn select_model(rows: &[EvalRow]) -> Result<&EvalRow> {
    rows.iter()
        .min_by(|a, b| rank(a, b))
        .ok_or_else(|| Error::EmptyInput("no models to select from".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub selected: String,
}

impl EvalReport {
    pub fn new(rows: Vec<EvalRow>) -> Result<Self> {
        let selected = select_model(&rows)?.model_id.clone();
        Ok(EvalReport { rows, selected })
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>10} {:>16} {:>17}", "model", "RMSE", "RMSE first diff", "RMSE second diff");
        for r in &self.rows {
            let m = &r.metrics;
            let mark = if r.model_id == self.selected { " *" } else { "" };
            let _ = writeln!(
                s,
                "{:<10} {:>10.6} {:>16.6} {:>17.6}{mark}",
                r.model_id, m.rmse_position, m.rmse_first_diff, m.rmse_second_diff
            );
        }
        let _ = writeln!(s, "selected: {}", self.selected);
        s
    }

    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let m = &r.metrics;
            let _ = writeln!(s, "{}.rmse_position={}", r.model_id, m.rmse_position);
            let _ = writeln!(s, "{}.rmse_first_diff={}", r.model_id, m.rmse_first_diff);
            let _ = writeln!(s, "{}.rmse_second_diff={}", r.model_id, m.rmse_second_diff);
        }
        let _ = writeln!(s, "selected={}", self.selected);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn row(id: &str, p: f64, d1: f64, d2: f64) -> EvalRow {
        EvalRow {
            model_id: id.into(),
            metrics: Metrics {
                rmse_position: p,
                rmse_first_diff: d1,
                rmse_second_diff: d2,
            },
        }
    }

    fn random_pairs(seed: u64) -> Vec<(Array2<f64>, Array2<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        [10, 4, 7]
            .iter()
            .map(|&t| {
                let gt = Array2::from_shape_simple_fn((t, 136), || rng.random_range(0.0..1.0));
                let pd = Array2::from_shape_simple_fn((t, 136), || rng.random_range(0.0..1.0));
                (gt, pd)
            })
            .collect()
    }

    #[test]
    fn identical_sequences_score_zero() {
        let pairs: Vec<_> = random_pairs(1).into_iter().map(|(g, _)| (g.clone(), g)).collect();
        let m = compute_metrics(&pairs).unwrap();
        assert_eq!((m.rmse_position, m.rmse_first_diff, m.rmse_second_diff), (0.0, 0.0, 0.0));
    }

    #[test]
    fn constant_offset_only_moves_position() {
        let pairs: Vec<_> = random_pairs(2).into_iter().map(|(g, _)| (g.clone(), &g + 0.01)).collect();
        let m = compute_metrics(&pairs).unwrap();
        assert!((m.rmse_position - 0.01).abs() < 1e-12);
        assert!(m.rmse_first_diff < 1e-12);
        assert!(m.rmse_second_diff < 1e-12);
    }

    #[test]
    fn pooled_rmse_matches_direct_sum() {
        let pairs = random_pairs(3);
        let m = compute_metrics(&pairs).unwrap();
        let (mut sum, mut n) = (0.0, 0usize);
        let (mut sum2, mut n2) = (0.0, 0usize);
        for (g, p) in &pairs {
            for t in 0..g.nrows() {
                for k in 0..136 {
                    sum += (g[[t, k]] - p[[t, k]]).powi(2);
                    n += 1;
                    if t >= 2 {
                        let a = g[[t, k]] - 2.0 * g[[t - 1, k]] + g[[t - 2, k]];
                        let b = p[[t, k]] - 2.0 * p[[t - 1, k]] + p[[t - 2, k]];
                        sum2 += (a - b).powi(2);
                        n2 += 1;
                    }
                }
            }
        }
        assert!((m.rmse_position - (sum / n as f64).sqrt()).abs() < 1e-12);
        assert!((m.rmse_second_diff - (sum2 / n2 as f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empty_and_mismatched_sets() {
        assert!(matches!(compute_metrics(&[]), Err(Error::EmptyInput(_))));
        let bad = vec![(Array2::zeros((3, 136)), Array2::zeros((4, 136)))];
        assert!(matches!(compute_metrics(&bad), Err(Error::Shape(_))));
    }

    #[test]
    fn selection_rules() {
        let rows = vec![row("B", 0.1, 0.2, 0.3)];
        assert_eq!(select_model(&rows).unwrap().model_id, "B");
        let tie = vec![row("D80-C3", 0.1, 0.2, 0.3), row("D40-C3", 0.1, 0.2, 0.3)];
        assert_eq!(select_model(&tie).unwrap().model_id, "D40-C3");
        let by_d1 = vec![row("A", 0.1, 0.3, 0.0), row("Z", 0.1, 0.2, 0.9)];
        assert_eq!(select_model(&by_d1).unwrap().model_id, "Z");
        assert!(select_model(&[]).is_err());
    }

    #[test]
    fn report_formats() {
        let r = EvalReport::new(vec![row("D0-C3", 0.2, 0.1, 0.1), row("D40-C5", 0.1, 0.1, 0.1)]).unwrap();
        assert_eq!(r.selected, "D40-C5");
        let kv = r.to_key_values();
        assert!(kv.contains("D40-C5.rmse_position=0.1\n"));
        assert!(kv.ends_with("selected=D40-C5\n"));
        let table = r.to_table();
        assert_eq!(table.lines().count(), 4);
        assert!(table.contains("D40-C5"));
    }
}
