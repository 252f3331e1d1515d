use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::AddAssign;

use crate::data::Category;
use crate::eval::compute_f1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn precision_recall_f1(&self) -> (f64, f64, f64) {
        compute_f1(self.tp, self.fp, self.fn_)
    }
}

impl AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CategoryCounts {
    pub images: usize,
    pub counts: Counts,
}

/// Per-category counts. Crossroad images only ever add false positives and
/// stay out of the total.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub render_width: f64,
    pub categories: BTreeMap<Category, CategoryCounts>,
    /// Index entries that had no prediction file (scored as empty).
    pub missing_predictions: Vec<String>,
}

impl EvalReport {
    pub fn new(iou_threshold: f64, render_width: f64) -> Self {
        EvalReport {
            iou_threshold,
            render_width,
            ..Default::default()
        }
    }

    pub fn add(&mut self, category: Category, counts: Counts) {
        let entry = self.categories.entry(category).or_default();
        entry.images += 1;
        if category == Category::Crossroad {
            entry.counts.fp += counts.fp;
        } else {
            entry.counts += counts;
        }
    }

    pub fn category(&self, c: Category) -> CategoryCounts {
        self.categories.get(&c).copied().unwrap_or_default()
    }

    pub fn crossroad_fp(&self) -> usize {
        self.category(Category::Crossroad).counts.fp
    }

    /// Sum over every category except crossroad.
    pub fn total(&self) -> Counts {
        let mut t = Counts::default();
        for (c, v) in &self.categories {
            if *c != Category::Crossroad {
                t += v.counts;
            }
        }
        t
    }

    pub fn total_images(&self) -> usize {
        self.categories.values().map(|c| c.images).sum()
    }

    /// Aligned table (rows in report order) followed by a `key=value` block.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "IoU threshold {}  render width {}",
            self.iou_threshold, self.render_width
        );
        let _ = writeln!(
            s,
            "{:<14}{:>8}{:>8}{:>8}{:>8}{:>11}{:>9}{:>9}",
            "Category", "Images", "TP", "FP", "FN", "Precision", "Recall", "F1"
        );
        let row = |s: &mut String, name: &str, images: usize, c: Counts| {
            let (p, r, f) = c.precision_recall_f1();
            let _ = writeln!(
                s,
                "{:<14}{:>8}{:>8}{:>8}{:>8}{:>11.4}{:>9.4}{:>9.4}",
                name, images, c.tp, c.fp, c.fn_, p, r, f
            );
        };
        for c in Category::ALL {
            let v = self.category(c);
            if c == Category::Crossroad {
                let _ = writeln!(
                    s,
                    "{:<14}{:>8}{:>8}{:>8}{:>8}{:>11}{:>9}{:>9}",
                    c.label(),
                    v.images,
                    "-",
                    v.counts.fp,
                    "-",
                    "-",
                    "-",
                    "-"
                );
            } else {
                row(&mut s, c.label(), v.images, v.counts);
            }
        }
        let total_images = self.total_images() - self.category(Category::Crossroad).images;
        row(&mut s, "Total", total_images, self.total());

        s.push_str("\n[summary]\n");
        let _ = writeln!(s, "iou_threshold={}", self.iou_threshold);
        let _ = writeln!(s, "render_width={}", self.render_width);
        for c in Category::ALL {
            let v = self.category(c);
            let k = c.key();
            let _ = writeln!(s, "{k}.images={}", v.images);
            if c == Category::Crossroad {
                let _ = writeln!(s, "{k}.fp={}", v.counts.fp);
                continue;
            }
            let (p, r, f) = v.counts.precision_recall_f1();
            let _ = writeln!(s, "{k}.tp={}", v.counts.tp);
            let _ = writeln!(s, "{k}.fp={}", v.counts.fp);
            let _ = writeln!(s, "{k}.fn={}", v.counts.fn_);
            let _ = writeln!(s, "{k}.precision={p:.6}\n{k}.recall={r:.6}\n{k}.f1={f:.6}");
        }
        let t = self.total();
        let (p, r, f) = t.precision_recall_f1();
        let _ = writeln!(s, "total.images={total_images}");
        let _ = writeln!(s, "total.tp={}\ntotal.fp={}\ntotal.fn={}", t.tp, t.fp, t.fn_);
        let _ = writeln!(s, "total.precision={p:.6}\ntotal.recall={r:.6}\ntotal.f1={f:.6}");
        let _ = writeln!(s, "missing_predictions={}", self.missing_predictions.len());
        s
    }

    /// Parses the `key=value` block of [`to_text`](Self::to_text).
    pub fn parse_summary(text: &str) -> BTreeMap<String, String> {
        text.lines()
            .skip_while(|l| l.trim() != "[summary]")
            .skip(1)
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
            .collect()
    }
}
