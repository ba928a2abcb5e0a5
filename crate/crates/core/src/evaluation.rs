//! Source-performance and timing metrics over annotation event logs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::TargetKind;
use crate::recommend::{Source, CUTOFF};
use crate::session::{AnnotationEvent, EventAction, SessionState};

/// Popup time above which an event is treated as idle and left out of means.
pub const OUTLIER_MS: u64 = 10 * 60 * 1000;

/// Accepted recommendations per ranking position for one source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PositionHistogram {
    pub counts: [u64; CUTOFF],
}

impl PositionHistogram {
    pub fn new(counts: [u64; CUTOFF]) -> Self {
        PositionHistogram { counts }
    }

    /// Records an acceptance at a 1-based position; `false` if it lies outside the cutoff.
    pub fn record(&mut self, position: u32) -> bool {
        match (position as usize).checked_sub(1) {
            Some(i) if i < CUTOFF => {
                self.counts[i] += 1;
                true
            }
            _ => false,
        }
    }

    pub fn add(&self, other: &PositionHistogram) -> PositionHistogram {
        let mut counts = self.counts;
        for (c, o) in counts.iter_mut().zip(other.counts) {
            *c += o;
        }
        PositionHistogram { counts }
    }
}

/// Cumulative gain: the number of acceptances shown within the cutoff.
pub fn cg(hist: &PositionHistogram) -> u64 {
    hist.counts.iter().sum()
}

/// Discounted cumulative gain with a `1 / log2(position + 1)` discount.
pub fn dcg(hist: &PositionHistogram) -> f64 {
    hist.counts
        .iter()
        .enumerate()
        .map(|(i, &c)| c as f64 / ((i + 2) as f64).log2())
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRow {
    pub source: Source,
    pub histogram: PositionHistogram,
    /// Acceptances ranked below the cutoff: in `cg`, not in the histogram or `dcg`.
    pub beyond_cutoff: u64,
    pub cg: u64,
    /// CG of the histogram alone.
    pub cg_shown: u64,
    pub dcg: f64,
}

impl SourceRow {
    fn from_parts(source: Source, histogram: PositionHistogram, beyond_cutoff: u64) -> Self {
        SourceRow {
            source,
            histogram,
            beyond_cutoff,
            cg: cg(&histogram) + beyond_cutoff,
            cg_shown: cg(&histogram),
            dcg: dcg(&histogram),
        }
    }

    pub fn dcg_rounded(&self) -> u64 {
        self.dcg.round() as u64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceReport {
    pub identifiers: Vec<SourceRow>,
    pub formulae: Vec<SourceRow>,
}

impl SourceReport {
    pub fn rows(&self, kind: TargetKind) -> &[SourceRow] {
        match kind {
            TargetKind::Identifier => &self.identifiers,
            TargetKind::Formula => &self.formulae,
        }
    }

    pub fn row(&self, kind: TargetKind, source: Source) -> Option<&SourceRow> {
        self.rows(kind).iter().find(|r| r.source == source)
    }

    pub fn is_empty(&self) -> bool {
        self.identifiers.is_empty() && self.formulae.is_empty()
    }
}

/// Buckets every accepted recommendation by target kind, source and position.
///
/// Undone acceptances still count: the source did provide an accepted name.
pub fn source_report<'a>(events: impl IntoIterator<Item = &'a AnnotationEvent>) -> SourceReport {
    let mut buckets: BTreeMap<(TargetKind, Source), (PositionHistogram, u64)> = BTreeMap::new();
    for ev in events {
        if let EventAction::AcceptRecommendation {
            target,
            source,
            position,
            ..
        } = &ev.action
        {
            let (hist, beyond) = buckets.entry((target.kind(), *source)).or_default();
            if !hist.record(*position) {
                *beyond += 1;
            }
        }
    }
    let mut report = SourceReport::default();
    for ((kind, source), (hist, beyond)) in buckets {
        let row = SourceRow::from_parts(source, hist, beyond);
        match kind {
            TargetKind::Identifier => report.identifiers.push(row),
            TargetKind::Formula => report.formulae.push(row),
        }
    }
    report
}

/// A reference value to compare a report row against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub kind: TargetKind,
    pub source: Source,
    pub cg: u64,
    /// Compared after rounding to the nearest integer.
    pub dcg: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Cg,
    Dcg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub kind: TargetKind,
    pub source: Source,
    pub metric: Metric,
    pub expected: f64,
    pub computed: f64,
}

/// Differences between a report and reference values. A missing row is
/// compared as all zeros.
pub fn compare_with_reference(report: &SourceReport, reference: &[ReferenceRow]) -> Vec<Deviation> {
    let mut out = Vec::new();
    for r in reference {
        let (cg, dcg) = report
            .row(r.kind, r.source)
            .map(|row| (row.cg, row.dcg))
            .unwrap_or((0, 0.0));
        if cg != r.cg {
            out.push(Deviation {
                kind: r.kind,
                source: r.source,
                metric: Metric::Cg,
                expected: r.cg as f64,
                computed: cg as f64,
            });
        }
        if dcg.round() as u64 != r.dcg {
            out.push(Deviation {
                kind: r.kind,
                source: r.source,
                metric: Metric::Dcg,
                expected: r.dcg as f64,
                computed: dcg,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub target_kind: TargetKind,
    pub mean_recommendation_s: Option<f64>,
    pub mean_manual_s: Option<f64>,
    /// `manual / recommendation`, only when both means exist and the divisor is positive.
    pub speedup: Option<f64>,
    pub recommendation_count: usize,
    pub manual_count: usize,
    pub outliers: usize,
}

fn mean_s(samples: &[u64]) -> Option<f64> {
    (!samples.is_empty()).then(|| samples.iter().sum::<u64>() as f64 / samples.len() as f64 / 1000.0)
}

/// Mean annotation times per target kind, recommendation vs. manual.
pub fn timing_report<'a>(events: impl IntoIterator<Item = &'a AnnotationEvent>) -> Vec<TimingSummary> {
    let mut samples: BTreeMap<TargetKind, (Vec<u64>, Vec<u64>, usize)> = BTreeMap::new();
    for ev in events {
        let (target, elapsed, recommended) = match &ev.action {
            EventAction::AcceptRecommendation { target, elapsed_ms, .. } => (target, *elapsed_ms, true),
            EventAction::ManualInsert { target, elapsed_ms, .. } => (target, *elapsed_ms, false),
            _ => continue,
        };
        let (rec, manual, outliers) = samples.entry(target.kind()).or_default();
        if elapsed > OUTLIER_MS {
            *outliers += 1;
        } else if recommended {
            rec.push(elapsed);
        } else {
            manual.push(elapsed);
        }
    }
    samples
        .into_iter()
        .map(|(kind, (rec, manual, outliers))| {
            let mean_recommendation_s = mean_s(&rec);
            let mean_manual_s = mean_s(&manual);
            let speedup = match (mean_recommendation_s, mean_manual_s) {
                (Some(r), Some(m)) if r > 0.0 => Some(m / r),
                _ => None,
            };
            TimingSummary {
                target_kind: kind,
                mean_recommendation_s,
                mean_manual_s,
                speedup,
                recommendation_count: rec.len(),
                manual_count: manual.len(),
                outliers,
            }
        })
        .collect()
}

/// Share of effective annotations that carry a QID, per kind; absent when
/// there is nothing of that kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QidCoverage {
    pub identifier_pct: Option<f64>,
    pub formula_pct: Option<f64>,
}

pub fn qid_coverage<'a>(sessions: impl IntoIterator<Item = &'a SessionState>) -> QidCoverage {
    let mut tally: BTreeMap<TargetKind, (usize, usize)> = BTreeMap::new();
    for s in sessions {
        for a in s.annotations() {
            let (with, total) = tally.entry(a.target.kind()).or_default();
            *total += 1;
            if a.qid.is_some() {
                *with += 1;
            }
        }
    }
    let pct = |k| {
        tally
            .get(&k)
            .filter(|(_, total)| *total > 0)
            .map(|&(with, total)| 100.0 * with as f64 / total as f64)
    };
    QidCoverage {
        identifier_pct: pct(TargetKind::Identifier),
        formula_pct: pct(TargetKind::Formula),
    }
}

/// Everything the `report` command prints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub sources: SourceReport,
    pub timing: Vec<TimingSummary>,
    pub coverage: QidCoverage,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub deviations: Vec<Deviation>,
}

impl EvaluationReport {
    pub fn from_sessions(sessions: &[SessionState], reference: &[ReferenceRow]) -> Self {
        let events = || sessions.iter().flat_map(|s| s.events());
        let sources = source_report(events());
        let deviations = compare_with_reference(&sources, reference);
        EvaluationReport {
            timing: timing_report(events()),
            coverage: qid_coverage(sessions),
            sources,
            deviations,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text tables. DCG is rounded to an integer and times
    /// are shown in seconds with one decimal.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        for (title, rows) in [("Identifiers", &self.sources.identifiers), ("Formulae", &self.sources.formulae)] {
            if rows.is_empty() {
                continue;
            }
            let _ = write!(out, "{title:<16} {:>4} {:>4}", "CG", "DCG");
            for p in 1..=CUTOFF {
                let _ = write!(out, " {p:>3}");
            }
            out.push('\n');
            for r in rows {
                let _ = write!(out, "{:<16} {:>4} {:>4}", r.source.display_name(), r.cg, r.dcg_rounded());
                for c in r.histogram.counts {
                    let _ = write!(out, " {c:>3}");
                }
                out.push('\n');
            }
            out.push('\n');
        }
        if !self.timing.is_empty() {
            let _ = writeln!(out, "{:<12} {:>15} {:>10} {:>8}", "Timing", "recommendation", "manual", "speedup");
            let secs = |v: Option<f64>| v.map(|s| format!("{s:.1}s")).unwrap_or_else(|| "-".into());
            for t in &self.timing {
                let kind = match t.target_kind {
                    TargetKind::Identifier => "identifiers",
                    TargetKind::Formula => "formulae",
                };
                let speedup = t.speedup.map(|s| format!("{s:.1}x")).unwrap_or_else(|| "-".into());
                let _ = writeln!(
                    out,
                    "{kind:<12} {:>15} {:>10} {speedup:>8}",
                    secs(t.mean_recommendation_s),
                    secs(t.mean_manual_s)
                );
            }
            out.push('\n');
        }
        let pct = |v: Option<f64>| v.map(|p| format!("{p:.0}%")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "QID coverage: identifiers {}, formulae {}",
            pct(self.coverage.identifier_pct),
            pct(self.coverage.formula_pct)
        );
        for d in &self.deviations {
            let metric = match d.metric {
                Metric::Cg => "CG",
                Metric::Dcg => "DCG",
            };
            let _ = writeln!(
                out,
                "deviation: {:?} {} {metric} expected {} computed {:.2}",
                d.kind,
                d.source.display_name(),
                d.expected,
                d.computed
            );
        }
        out
    }
}
