//! Ranking metrics: average precision, precision-recall curves and the
//! trapezoidal AUPRC estimate.
//!
//! Ties are resolved with plain `>=` on the raw scores. A sample counts as
//! "ranked at or above" sample `i` whenever its score is `>=` the score of
//! `i`, which includes `i` itself.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Binary label, `+1` for positives and `-1` for negatives.
pub type Label = i8;

pub(crate) fn check_inputs(scores: &[f64], labels: &[Label]) -> Result<usize> {
    if scores.len() != labels.len() {
        return Err(Error::usage(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let mut n_pos = 0;
    for (k, &y) in labels.iter().enumerate() {
        match y {
            1 => n_pos += 1,
            -1 => {}
            other => {
                return Err(Error::usage(format!(
                    "label {other} at position {k} is not +1 or -1"
                )))
            }
        }
    }
    if let Some(k) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NumericInput(format!("score at position {k}")));
    }
    if n_pos == 0 {
        return Err(Error::UndefinedMetric(
            "average precision needs at least one positive label".into(),
        ));
    }
    Ok(n_pos)
}

/// Indices sorted by descending score, ties kept in original index order.
fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Groups of equal score along a descending order, as `(start, end)` ranges.
fn tie_groups(scores: &[f64], order: &[usize]) -> Vec<(usize, usize)> {
    let mut groups = Vec::new();
    let mut start = 0;
    for k in 1..=order.len() {
        if k == order.len() || scores[order[k]] != scores[order[start]] {
            groups.push((start, k));
            start = k;
        }
    }
    groups
}

/// Average precision with `>=` ranking:
///
/// `AP = 1/n+ * sum_{i: y_i = +1} #{s: y_s = +1, h_s >= h_i} / #{s: h_s >= h_i}`
///
/// Per-positive ratios are accumulated in index order.
pub fn average_precision(scores: &[f64], labels: &[Label]) -> Result<f64> {
    let n_pos = check_inputs(scores, labels)?;
    let order = descending_order(scores);

    // (positives, total) ranked at or above each sample.
    let mut above = vec![(0usize, 0usize); scores.len()];
    let (mut pos, mut tot) = (0usize, 0usize);
    for (start, end) in tie_groups(scores, &order) {
        for &idx in &order[start..end] {
            tot += 1;
            if labels[idx] == 1 {
                pos += 1;
            }
        }
        for &idx in &order[start..end] {
            above[idx] = (pos, tot);
        }
    }

    let mut sum = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y == 1 {
            let (p, t) = above[i];
            sum += p as f64 / t as f64;
        }
    }
    Ok(sum / n_pos as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// One point per distinct score, thresholds descending.
    pub points: Vec<PrPoint>,
    pub n_pos: usize,
    pub n_total: usize,
}

impl PrCurve {
    /// Checks the structural invariants of a curve.
    ///
    /// Precision may be zero on leading points where no positive has been
    /// recalled yet (recall zero); everywhere else it is strictly positive.
    pub fn validate(&self) -> Result<()> {
        let last = self
            .points
            .last()
            .ok_or_else(|| Error::usage("empty precision-recall curve"))?;
        if last.recall != 1.0 {
            return Err(Error::usage(format!(
                "final recall is {}, expected 1",
                last.recall
            )));
        }
        let mut prev_recall = 0.0;
        for p in &self.points {
            if !(0.0..=1.0).contains(&p.recall) || !(0.0..=1.0).contains(&p.precision) {
                return Err(Error::usage(format!("point out of range: {p:?}")));
            }
            if p.recall < prev_recall {
                return Err(Error::usage("recall decreases along the curve"));
            }
            if p.recall > 0.0 && p.precision <= 0.0 {
                return Err(Error::usage(format!("zero precision at {p:?}")));
            }
            prev_recall = p.recall;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("threshold,recall,precision\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.threshold, p.recall, p.precision);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(self.to_csv_string().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

pub fn pr_curve(scores: &[f64], labels: &[Label]) -> Result<PrCurve> {
    let n_pos = check_inputs(scores, labels)?;
    let order = descending_order(scores);
    let mut points = Vec::new();
    let (mut tp, mut tot) = (0usize, 0usize);
    for (start, end) in tie_groups(scores, &order) {
        for &idx in &order[start..end] {
            tot += 1;
            if labels[idx] == 1 {
                tp += 1;
            }
        }
        points.push(PrPoint {
            threshold: scores[order[start]],
            recall: tp as f64 / n_pos as f64,
            precision: tp as f64 / tot as f64,
        });
    }
    Ok(PrCurve {
        points,
        n_pos,
        n_total: scores.len(),
    })
}

/// Trapezoidal area under a PR curve, anchored at `(0, precision of the first point)`.
pub fn auprc_trapezoid(curve: &PrCurve) -> Result<f64> {
    curve.validate()?;
    let first = curve.points[0];
    let (mut prev_r, mut prev_p) = (0.0, first.precision);
    let mut area = 0.0;
    for p in &curve.points {
        area += (p.recall - prev_r) * (p.precision + prev_p) * 0.5;
        prev_r = p.recall;
        prev_p = p.precision;
    }
    Ok(area)
}

/// Fraction of positive labels, `n+ / n`.
pub fn imbalance_ratio(labels: &[Label]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::usage("imbalance ratio of an empty label set"));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    Ok(n_pos as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Literal double loop over the AP definition.
    fn ap_brute(scores: &[f64], labels: &[Label]) -> f64 {
        let n_pos = labels.iter().filter(|&&y| y == 1).count();
        let mut sum = 0.0;
        for i in 0..scores.len() {
            if labels[i] != 1 {
                continue;
            }
            let mut num = 0usize;
            let mut den = 0usize;
            for s in 0..scores.len() {
                if scores[s] >= scores[i] {
                    den += 1;
                    if labels[s] == 1 {
                        num += 1;
                    }
                }
            }
            sum += num as f64 / den as f64;
        }
        sum / n_pos as f64
    }

    /// Threshold sweep recomputing TP and predicted counts from scratch.
    fn curve_brute(scores: &[f64], labels: &[Label]) -> Vec<PrPoint> {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let n_pos = labels.iter().filter(|&&y| y == 1).count() as f64;
        thresholds
            .into_iter()
            .map(|c| {
                let pred = scores.iter().filter(|&&s| s >= c).count() as f64;
                let tp = scores
                    .iter()
                    .zip(labels)
                    .filter(|(&s, &y)| s >= c && y == 1)
                    .count() as f64;
                PrPoint {
                    threshold: c,
                    recall: tp / n_pos,
                    precision: tp / pred,
                }
            })
            .collect()
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize, levels: u32) -> (Vec<f64>, Vec<Label>) {
        let scores = (0..n)
            .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
            .collect();
        let mut labels: Vec<Label> = (0..n)
            .map(|_| if rng.random_bool(0.3) { 1 } else { -1 })
            .collect();
        labels[rng.random_range(0..n)] = 1;
        (scores, labels)
    }

    #[test]
    fn ap_hand_examples() {
        let s = [0.9, 0.8, 0.7, 0.6];
        let ap = average_precision(&s, &[1, -1, 1, -1]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        let ap = average_precision(&s, &[-1, 1, 1, -1]).unwrap();
        assert!((ap - 7.0 / 12.0).abs() < 1e-15);
        let ap = average_precision(&s, &[1, 1, -1, -1]).unwrap();
        assert_eq!(ap, 1.0);
    }

    #[test]
    fn ap_errors() {
        assert!(matches!(
            average_precision(&[0.1, 0.2], &[-1, -1]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(
            average_precision(&[0.1, 0.2], &[1]),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            average_precision(&[0.1, f64::NAN], &[1, -1]),
            Err(Error::NumericInput(_))
        ));
    }

    #[test]
    fn ap_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let n = rng.random_range(1..40);
            let (s, y) = random_instance(&mut rng, n, 6);
            assert_eq!(average_precision(&s, &y).unwrap(), ap_brute(&s, &y));
        }
    }

    #[test]
    fn ap_is_one_iff_positives_dominate() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..300 {
            let (s, y) = random_instance(&mut rng, 12, 4);
            let min_pos = s
                .iter()
                .zip(&y)
                .filter(|(_, &l)| l == 1)
                .map(|(&v, _)| v)
                .fold(f64::INFINITY, f64::min);
            let max_neg = s
                .iter()
                .zip(&y)
                .filter(|(_, &l)| l == -1)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let ap = average_precision(&s, &y).unwrap();
            assert!(ap > 0.0 && ap <= 1.0);
            // Ties between a positive and a negative count against the positive.
            assert_eq!(ap == 1.0, min_pos > max_neg, "{s:?} {y:?}");
        }
    }

    #[test]
    fn pr_curve_matches_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let (s, y) = random_instance(&mut rng, 50, 20);
            let curve = pr_curve(&s, &y).unwrap();
            curve.validate().unwrap();
            let brute = curve_brute(&s, &y);
            assert_eq!(curve.points.len(), brute.len());
            for (a, b) in curve.points.iter().zip(&brute) {
                assert_eq!(a.threshold, b.threshold);
                assert!((a.recall - b.recall).abs() < 1e-12);
                assert!((a.precision - b.precision).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pr_curve_small_cases() {
        let c = pr_curve(&[0.9, 0.1], &[1, -1]).unwrap();
        assert!(c
            .points
            .iter()
            .any(|p| p.recall == 1.0 && p.precision == 1.0));

        let c = pr_curve(&[0.3; 4], &[1, -1, 1, -1]).unwrap();
        assert_eq!(c.points.len(), 1);
        assert_eq!((c.points[0].recall, c.points[0].precision), (1.0, 0.5));
        assert!(matches!(
            pr_curve(&[0.3], &[-1]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn trapezoid_examples() {
        let c = pr_curve(&[0.9, 0.8, 0.2, 0.1], &[1, 1, -1, -1]).unwrap();
        assert_eq!(auprc_trapezoid(&c).unwrap(), 1.0);

        let flat = PrCurve {
            points: vec![
                PrPoint {
                    threshold: 3.0,
                    recall: 0.25,
                    precision: 0.4,
                },
                PrPoint {
                    threshold: 2.0,
                    recall: 0.5,
                    precision: 0.4,
                },
                PrPoint {
                    threshold: 1.0,
                    recall: 1.0,
                    precision: 0.4,
                },
            ],
            n_pos: 4,
            n_total: 10,
        };
        assert!((auprc_trapezoid(&flat).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn trapezoid_close_to_ap_on_random_20() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let s: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        let y: Vec<Label> = (0..20).map(|k| if k % 3 == 0 { 1 } else { -1 }).collect();
        let n_pos = y.iter().filter(|&&l| l == 1).count() as f64;
        let ap = average_precision(&s, &y).unwrap();
        let area = auprc_trapezoid(&pr_curve(&s, &y).unwrap()).unwrap();
        assert!((ap - area).abs() <= 1.0 / n_pos, "ap {ap} area {area}");
    }

    #[test]
    fn csv_export_format() {
        let c = pr_curve(&[0.5, 0.25], &[1, -1]).unwrap();
        assert_eq!(
            c.to_csv_string(),
            "threshold,recall,precision\n0.5,1,1\n0.25,1,0.5\n"
        );
    }

    #[test]
    fn imbalance_ratio_examples() {
        assert_eq!(imbalance_ratio(&[1, -1, -1, -1]).unwrap(), 0.25);
        assert_eq!(imbalance_ratio(&[1, 1]).unwrap(), 1.0);
        let mut y = vec![-1; 33126];
        y[..584].fill(1);
        assert!((imbalance_ratio(&y).unwrap() - 0.0176).abs() < 5e-5);
        assert!(imbalance_ratio(&[]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn ap_rank_invariant(
            raw in proptest::collection::vec((-5.0f64..5.0, proptest::bool::ANY), 1..40)
        ) {
            let scores: Vec<f64> = raw.iter().map(|r| r.0).collect();
            let mut labels: Vec<Label> = raw.iter().map(|r| if r.1 { 1 } else { -1 }).collect();
            labels[0] = 1;
            let base = average_precision(&scores, &labels).unwrap();
            let mapped: Vec<f64> = scores.iter().map(|s| (s * 0.7).exp() + 3.0).collect();
            proptest::prop_assert_eq!(base, average_precision(&mapped, &labels).unwrap());
        }
    }
}
