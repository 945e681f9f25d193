//! Confusion-based segmentation metrics and report formatting.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Images whose Jaccard index falls below this score zero in the thresholded score.
pub const JSC_THRESHOLD: f64 = 0.65;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

/// Pixel counts of the four agreement classes between binary masks.
pub fn confusion(gt: &Tensor, pred: &Tensor) -> Result<ConfusionCounts> {
    if gt.shape() != pred.shape() {
        return Err(Error::dim(
            "data",
            format!("confusion: shapes {} and {} differ", gt.shape(), pred.shape()),
        ));
    }
    let mut c = ConfusionCounts::default();
    for (&g, &p) in gt.data().iter().zip(pred.data()) {
        let (g, p) = match (g, p) {
            (g, p) if (g == 0.0 || g == 1.0) && (p == 0.0 || p == 1.0) => (g == 1.0, p == 1.0),
            _ => return Err(Error::Domain(format!("confusion: non-binary pair ({g}, {p})"))),
        };
        match (g, p) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub acc: f64,
    pub dsc: f64,
    pub jsc: f64,
    pub sen: f64,
    pub spe: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy, Dice, Jaccard, sensitivity and specificity. A zero denominator means there
/// was nothing to get wrong and scores 1.
pub fn compute_metrics(c: ConfusionCounts) -> Metrics {
    Metrics {
        acc: ratio(c.tp + c.tn, c.total()),
        dsc: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        jsc: ratio(c.tp, c.tp + c.fp + c.fn_),
        sen: ratio(c.tp, c.tp + c.fn_),
        spe: ratio(c.tn, c.tn + c.fp),
    }
}

/// `jsc` when it reaches [`JSC_THRESHOLD`], otherwise 0.
pub fn thresholded_jsc(jsc: f64) -> f64 {
    if jsc < JSC_THRESHOLD {
        0.0
    } else {
        jsc
    }
}

/// One report row.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub id: String,
    pub acc: f64,
    pub dsc: f64,
    pub jsc: f64,
    pub sen: f64,
    pub spe: f64,
    pub jsc_th: f64,
}

impl ImageMetrics {
    pub fn from_counts(id: impl Into<String>, c: ConfusionCounts) -> Self {
        let m = compute_metrics(c);
        ImageMetrics {
            id: id.into(),
            acc: m.acc,
            dsc: m.dsc,
            jsc: m.jsc,
            sen: m.sen,
            spe: m.spe,
            jsc_th: thresholded_jsc(m.jsc),
        }
    }

    fn values(&self) -> [f64; 6] {
        [self.acc, self.dsc, self.jsc, self.sen, self.spe, self.jsc_th]
    }
}

/// How the aggregate row is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Aggregation {
    /// Mean of the per-image scores.
    #[default]
    PerImage,
    /// Scores of the summed confusion counts.
    PixelPooled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub per_image: Vec<ImageMetrics>,
    pub aggregate: ImageMetrics,
}

impl MetricsReport {
    pub fn from_counts(items: &[(String, ConfusionCounts)], aggregation: Aggregation) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Usage("cannot report metrics for zero images".into()));
        }
        let per_image: Vec<ImageMetrics> = items
            .iter()
            .map(|(id, c)| ImageMetrics::from_counts(id.clone(), *c))
            .collect();
        let aggregate = match aggregation {
            Aggregation::PixelPooled => {
                let pooled = items.iter().fold(ConfusionCounts::default(), |a, (_, c)| a + *c);
                ImageMetrics::from_counts("MEAN", pooled)
            }
            Aggregation::PerImage => {
                let n = per_image.len() as f64;
                let mut sums = [0.0f64; 6];
                for row in &per_image {
                    for (s, v) in sums.iter_mut().zip(row.values()) {
                        *s += v;
                    }
                }
                let [acc, dsc, jsc, sen, spe, jsc_th] = sums.map(|s| s / n);
                ImageMetrics {
                    id: "MEAN".into(),
                    acc,
                    dsc,
                    jsc,
                    sen,
                    spe,
                    jsc_th,
                }
            }
        };
        Ok(MetricsReport { per_image, aggregate })
    }

    pub const CSV_HEADER: &'static str = "id,acc,dsc,jsc,sen,spe,jsc_th";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for row in self.per_image.iter().chain(std::iter::once(&self.aggregate)) {
            s.push_str(&row.id);
            for v in row.values() {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn to_table(&self) -> String {
        let width = self
            .per_image
            .iter()
            .map(|r| r.id.len())
            .max()
            .unwrap_or(0)
            .max(4);
        let mut s = format!(
            "{:<width$}  {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}\n",
            "id", "ACC", "DSC", "JSC", "SEN", "SPE", "JSC_th"
        );
        for row in self.per_image.iter().chain(std::iter::once(&self.aggregate)) {
            let _ = write!(s, "{:<width$} ", row.id);
            for v in row.values() {
                let _ = write!(s, " {v:>7.4}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counts() {
        let m = compute_metrics(ConfusionCounts {
            tp: 6,
            fp: 2,
            fn_: 2,
            tn: 6,
        });
        assert_eq!((m.acc, m.dsc, m.jsc, m.sen, m.spe), (0.75, 0.75, 0.6, 0.75, 0.75));
    }

    #[test]
    fn empty_agreement() {
        let m = compute_metrics(ConfusionCounts {
            tn: 16,
            ..Default::default()
        });
        assert_eq!((m.acc, m.dsc, m.jsc, m.sen, m.spe), (1.0, 1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn threshold_boundary() {
        assert_eq!(thresholded_jsc(0.64), 0.0);
        assert_eq!(thresholded_jsc(0.70), 0.70);
        assert_eq!(thresholded_jsc(0.65), 0.65);
    }

    #[test]
    fn csv_layout() {
        let c = ConfusionCounts {
            tp: 1,
            tn: 1,
            ..Default::default()
        };
        let r = MetricsReport::from_counts(&[("a".into(), c)], Aggregation::PerImage).unwrap();
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], MetricsReport::CSV_HEADER);
        assert_eq!(lines[1], "a,1,1,1,1,1,1");
        assert_eq!(lines[2], "MEAN,1,1,1,1,1,1");
    }
}
