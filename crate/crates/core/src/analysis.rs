//! Per-frame-kind ratio / gap / saving tables.
//!
//! Ratio and gap come from the floating-point bitlengths: ratio is a
//! component's share of the frame's baseline bits, gap is
//! `1 - limit/baseline`. Saving comes from coded sizes: `1 - achieved/baseline`
//! where baseline is the range-coded size under the learned tables and
//! achieved is the written payload. Masks and parameters are charged to the
//! component whose tables they describe.

use std::fmt::Write as _;

use crate::bit_accounting::{gap, saving};
use crate::codec::{encode_container, CodecError, EncodeSummary, EncoderConfig, StreamReport};
use crate::container_io::LatentContainer;
use crate::{FrameKind, StreamKind};

/// Bit totals of one component over a set of frames.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ComponentTotals {
    pub estimated_baseline_bits: f64,
    pub limit_bits: f64,
    pub coded_baseline_bits: usize,
    pub achieved_bits: usize,
}

impl ComponentTotals {
    fn add(&mut self, s: &StreamReport) {
        self.estimated_baseline_bits += s.estimated_baseline_bits;
        self.limit_bits += s.limit_bits;
        self.coded_baseline_bits += s.coded_baseline_bits;
        self.achieved_bits += s.achieved_bits();
    }

    fn merge(&mut self, o: &ComponentTotals) {
        self.estimated_baseline_bits += o.estimated_baseline_bits;
        self.limit_bits += o.limit_bits;
        self.coded_baseline_bits += o.coded_baseline_bits;
        self.achieved_bits += o.achieved_bits;
    }

    /// `1 - limit/baseline`, `None` without baseline bits.
    pub fn gap(&self) -> Option<f64> {
        gap(self.estimated_baseline_bits, self.limit_bits).ok()
    }

    /// `1 - achieved/baseline` on coded sizes.
    pub fn saving(&self) -> Option<f64> {
        saving(self.coded_baseline_bits as f64, self.achieved_bits as f64).ok()
    }
}

/// One line of the table: a frame kind or the whole video.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisRow {
    pub label: String,
    pub frames: usize,
    /// Indexed by [`StreamKind`]; `None` when the component never occurs.
    pub components: [Option<ComponentTotals>; 4],
}

impl AnalysisRow {
    fn new(label: String) -> Self {
        Self {
            label,
            frames: 0,
            components: [None; 4],
        }
    }

    fn add_frame(&mut self, streams: &[StreamReport]) {
        self.frames += 1;
        for s in streams {
            self.components[s.kind as usize]
                .get_or_insert_with(Default::default)
                .add(s);
        }
    }

    pub fn component(&self, kind: StreamKind) -> Option<&ComponentTotals> {
        self.components[kind as usize].as_ref()
    }

    pub fn total(&self) -> ComponentTotals {
        let mut t = ComponentTotals::default();
        for c in self.components.iter().flatten() {
            t.merge(c);
        }
        t
    }

    /// Share of the row's estimated baseline bits.
    pub fn ratio(&self, kind: StreamKind) -> Option<f64> {
        let total = self.total().estimated_baseline_bits;
        let c = self.component(kind)?;
        (total > 0.0).then(|| c.estimated_baseline_bits / total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisReport {
    pub config: EncoderConfig,
    /// Frame-kind rows in I, P, B order (kinds that occur), then "Video".
    pub rows: Vec<AnalysisRow>,
    /// One row per frame, in coding order.
    pub per_frame: Vec<AnalysisRow>,
}

/// Encodes `container` with `config` and tabulates the result.
pub fn analyze(container: &LatentContainer, config: &EncoderConfig) -> Result<AnalysisReport, CodecError> {
    let (_, summary) = encode_container(container, config)?;
    Ok(report_from_summary(&summary))
}

pub fn report_from_summary(summary: &EncodeSummary) -> AnalysisReport {
    let mut rows = Vec::new();
    for kind in FrameKind::ALL {
        let mut row = AnalysisRow::new(kind.letter().to_string());
        for f in summary.frames.iter().filter(|f| f.kind == kind) {
            row.add_frame(&f.streams);
        }
        if row.frames > 0 {
            rows.push(row);
        }
    }
    let mut video = AnalysisRow::new("Video".into());
    let mut per_frame = Vec::with_capacity(summary.frames.len());
    for (i, f) in summary.frames.iter().enumerate() {
        video.add_frame(&f.streams);
        let mut row = AnalysisRow::new(format!("{i}:{}", f.kind));
        row.add_frame(&f.streams);
        per_frame.push(row);
    }
    rows.push(video);
    AnalysisReport {
        config: summary.config,
        rows,
        per_frame,
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.1}", 100.0 * x))
}

impl AnalysisReport {
    pub fn row(&self, label: &str) -> Option<&AnalysisRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Text table: ratio/gap/saving per component, then total gap/saving.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "K={} S_f={} S_h={}; all values in %; signalling bits are charged to their component",
            self.config.mixtures, self.config.top_s_factorized, self.config.top_s_hyper
        );
        let mut header = format!("{:<6}", "frame");
        for kind in StreamKind::ALL {
            let _ = write!(header, " | {:^20}", kind.name());
        }
        let _ = write!(header, " | {:^13}", "all");
        let _ = writeln!(out, "{header}");
        let mut sub = format!("{:<6}", "");
        for _ in StreamKind::ALL {
            let _ = write!(sub, " | {:>6}{:>7}{:>7}", "ratio", "gap", "saving");
        }
        let _ = write!(sub, " | {:>6}{:>7}", "gap", "saving");
        let _ = writeln!(out, "{sub}");
        for row in &self.rows {
            let mut line = format!("{:<6}", row.label);
            for kind in StreamKind::ALL {
                let c = row.component(kind);
                let _ = write!(
                    line,
                    " | {:>6}{:>7}{:>7}",
                    pct(row.ratio(kind)),
                    pct(c.and_then(ComponentTotals::gap)),
                    pct(c.and_then(ComponentTotals::saving))
                );
            }
            let t = row.total();
            let _ = write!(line, " | {:>6}{:>7}", pct(t.gap()), pct(t.saving()));
            let _ = writeln!(out, "{line}");
        }
        out
    }

    /// CSV with one line per (row, component) and per (frame, component),
    /// plus an `all` component line for each.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "scope,label,component,ratio_pct,gap_pct,saving_pct,estimated_baseline_bits,limit_bits,coded_baseline_bits,achieved_bits\n",
        );
        let mut emit = |scope: &str, row: &AnalysisRow| {
            let mut line = |name: &str, ratio: Option<f64>, c: &ComponentTotals| {
                let f = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{:.4}", 100.0 * x));
                let _ = writeln!(
                    out,
                    "{scope},{},{name},{},{},{},{:.3},{:.3},{},{}",
                    row.label,
                    f(ratio),
                    f(c.gap()),
                    f(c.saving()),
                    c.estimated_baseline_bits,
                    c.limit_bits,
                    c.coded_baseline_bits,
                    c.achieved_bits
                );
            };
            for kind in StreamKind::ALL {
                if let Some(c) = row.component(kind) {
                    line(kind.name(), row.ratio(kind), c);
                }
            }
            line("all", Some(1.0), &row.total());
        };
        for row in &self.rows {
            emit("summary", row);
        }
        for row in &self.per_frame {
            emit("frame", row);
        }
        out
    }
}
