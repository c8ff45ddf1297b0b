//! Evaluation reports and attention-grid export.
//!
//! A report is `key: value` lines, one group per label setting, followed by
//! a `# json` marker and the same numbers as a single JSON object.

use serde::{Deserialize, Serialize};

use ssgrl_core::decoupling::AttentionMap;
use ssgrl_core::metrics::{EvalReport, Setting, SettingReport};
use ssgrl_core::model::Prediction;

use crate::error::{Error, Result};
use crate::text::fmt_real;

const JSON_MARKER: &str = "# json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountsDoc {
    pub category: String,
    pub correct: usize,
    pub predicted: usize,
    pub ground_truth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingDoc {
    pub op: f64,
    pub or: f64,
    pub of1: f64,
    pub cp: f64,
    pub cr: f64,
    pub cf1: f64,
    pub counts: Vec<CountsDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDoc {
    pub samples: usize,
    pub map: f64,
    /// `None` for categories without positives.
    pub ap: Vec<(String, Option<f64>)>,
    pub top3: SettingDoc,
    pub threshold: SettingDoc,
}

impl ReportDoc {
    pub fn new(report: &EvalReport, categories: &[String], samples: usize) -> Self {
        let setting = |s: &SettingReport| SettingDoc {
            op: s.scores.op,
            or: s.scores.or,
            of1: s.scores.of1,
            cp: s.scores.cp,
            cr: s.scores.cr,
            cf1: s.scores.cf1,
            counts: s
                .counts
                .iter()
                .zip(categories)
                .map(|(k, name)| CountsDoc {
                    category: name.clone(),
                    correct: k.correct,
                    predicted: k.predicted,
                    ground_truth: k.ground_truth,
                })
                .collect(),
        };
        ReportDoc {
            samples,
            map: report.map,
            ap: categories
                .iter()
                .cloned()
                .zip(report.per_category_ap.iter().copied())
                .collect(),
            top3: setting(report.setting(Setting::Top3)),
            threshold: setting(report.setting(Setting::Threshold)),
        }
    }

    pub fn setting(&self, s: Setting) -> &SettingDoc {
        match s {
            Setting::Top3 => &self.top3,
            Setting::Threshold => &self.threshold,
        }
    }

    pub fn render(&self) -> String {
        let mut out = format!("samples: {}\nmAP: {}\n", self.samples, fmt_real(self.map));
        for (name, ap) in &self.ap {
            let v = ap.map_or_else(|| "n/a".to_string(), fmt_real);
            out.push_str(&format!("AP {name}: {v}\n"));
        }
        for s in [Setting::Top3, Setting::Threshold] {
            let d = self.setting(s);
            out.push_str(&format!("\n[{}]\n", s.as_str()));
            for (k, v) in [
                ("OP", d.op),
                ("OR", d.or),
                ("OF1", d.of1),
                ("CP", d.cp),
                ("CR", d.cr),
                ("CF1", d.cf1),
            ] {
                out.push_str(&format!("{k}: {}\n", fmt_real(v)));
            }
            for c in &d.counts {
                out.push_str(&format!(
                    "counts {}: correct={} predicted={} ground_truth={}\n",
                    c.category, c.correct, c.predicted, c.ground_truth
                ));
            }
        }
        out.push_str(&format!("\n{JSON_MARKER}\n"));
        out.push_str(&serde_json::to_string(self).expect("report serialises"));
        out.push('\n');
        out
    }

    /// Reads the JSON block of a rendered report.
    pub fn parse(text: &str, file: &str) -> Result<Self> {
        let (_, json) = text.split_once(JSON_MARKER).ok_or_else(|| Error::Format {
            file: file.into(),
            msg: format!("no `{JSON_MARKER}` block"),
        })?;
        serde_json::from_str(json.trim()).map_err(|e| Error::Format {
            file: file.into(),
            msg: e.to_string(),
        })
    }
}

/// `# category <name>` blocks of `H` rows by `W` columns, for the listed
/// categories in the given order.
pub fn render_attention(map: &AttentionMap, names: &[String], categories: &[usize]) -> String {
    let mut out = String::new();
    for &c in categories {
        out.push_str(&format!("# category {}\n", names[c]));
        for h in 0..map.height() {
            let row: Vec<String> = (0..map.width())
                .map(|w| fmt_real(map.get(c, w, h)))
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    out
}

/// Parses [`render_attention`] output into `(name, rows)` blocks.
pub fn parse_attention(text: &str, file: &str) -> Result<Vec<(String, Vec<Vec<f64>>)>> {
    let mut blocks: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix("# category ") {
            blocks.push((name.trim().to_string(), Vec::new()));
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|_| Error::Parse {
                file: file.into(),
                line: i + 1,
                msg: "expected reals".into(),
            })?;
        match blocks.last_mut() {
            Some((_, rows)) => rows.push(row),
            None => {
                return Err(Error::Parse {
                    file: file.into(),
                    line: i + 1,
                    msg: "grid row before a `# category` header".into(),
                })
            }
        }
    }
    Ok(blocks)
}

/// Category indices by descending probability, ties by index.
pub fn ranked_categories(p: &Prediction) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.probabilities.len()).collect();
    idx.sort_by(|&a, &b| {
        p.probabilities[b]
            .total_cmp(&p.probabilities[a])
            .then(a.cmp(&b))
    });
    idx
}

/// `name<TAB>logit<TAB>probability` per category, in category order.
pub fn render_prediction(p: &Prediction, names: &[String]) -> String {
    names
        .iter()
        .enumerate()
        .map(|(c, n)| {
            format!(
                "{n}\t{}\t{}\n",
                fmt_real(p.logits[c]),
                fmt_real(p.probabilities[c])
            )
        })
        .collect()
}
