//! SVG biplots and plain-text candidate tables for snapshots.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::AnalysisSnapshot;

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("a biplot needs at least 2 retained dimensions, snapshot has {0}")]
    TooFewDimensions(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiplotStyle {
    pub width: u32,
    pub height: u32,
    pub noun_color: String,
    pub verb_color: String,
    pub font_size: f64,
    pub margin: f64,
    pub marker_size: f64,
}

impl Default for BiplotStyle {
    fn default() -> Self {
        BiplotStyle {
            width: 800,
            height: 600,
            noun_color: "#1f77b4".into(),
            verb_color: "#d62728".into(),
            font_size: 12.0,
            margin: 60.0,
            marker_size: 7.0,
        }
    }
}

/// "Dim 1 (33.82%)".
pub fn axis_label(dim: usize, share: f64) -> String {
    format!("Dim {} ({:.2}%)", dim, share * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Part {
    Noun,
    Verb,
}

struct Placed {
    label: String,
    part: Part,
    x: f64,
    y: f64,
}

#[derive(Clone, Copy)]
struct Rect {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl Rect {
    fn overlaps(&self, o: &Rect) -> bool {
        self.x0 < o.x1 && o.x0 < self.x1 && self.y0 < o.y1 && o.y0 < self.y1
    }
}

/// Scatter of verb (square) and noun (circle) points in the first two
/// dimensions with an origin crosshair. Output depends only on the inputs.
pub fn render_biplot(
    snapshot: &AnalysisSnapshot,
    style: &BiplotStyle,
) -> Result<String, RenderError> {
    let ca = &snapshot.ca;
    if ca.dims() < 2 {
        return Err(RenderError::TooFewDimensions(ca.dims()));
    }
    let (w, h) = (style.width as f64, style.height as f64);
    let extent = ca
        .row_coords
        .iter()
        .chain(&ca.col_coords)
        .flat_map(|p| [p[0].abs(), p[1].abs()])
        .fold(0.0, f64::max);
    let extent = if extent > 0.0 { extent * 1.1 } else { 1.0 };
    let (cx, cy) = (w / 2.0, h / 2.0);
    let sx = (w / 2.0 - style.margin) / extent;
    let sy = (h / 2.0 - style.margin) / extent;

    let mut points: Vec<Placed> = snapshot
        .table
        .row_labels
        .iter()
        .zip(&ca.row_coords)
        .map(|(l, p)| (l, Part::Verb, p))
        .chain(
            snapshot
                .table
                .col_labels
                .iter()
                .zip(&ca.col_coords)
                .map(|(l, p)| (l, Part::Noun, p)),
        )
        .map(|(label, part, p)| Placed {
            label: label.clone(),
            part,
            x: cx + p[0] * sx,
            y: cy - p[1] * sy,
        })
        .collect();
    points.sort_by(|a, b| a.label.cmp(&b.label).then(a.part.cmp(&b.part)));

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{}" height="{}" viewBox="0 0 {} {}" font-family="sans-serif" font-size="{}">"#,
        style.width,
        style.height,
        style.width,
        style.height,
        num(style.font_size)
    );
    let _ = writeln!(
        svg,
        r#"<rect x="0" y="0" width="{}" height="{}" fill="white"/>"#,
        style.width, style.height
    );
    let _ = writeln!(
        svg,
        r##"<line class="origin" x1="{}" y1="{}" x2="{}" y2="{}" stroke="#888888" stroke-dasharray="4 3"/>"##,
        num(style.margin / 2.0),
        num(cy),
        num(w - style.margin / 2.0),
        num(cy)
    );
    let _ = writeln!(
        svg,
        r##"<line class="origin" x1="{}" y1="{}" x2="{}" y2="{}" stroke="#888888" stroke-dasharray="4 3"/>"##,
        num(cx),
        num(style.margin / 2.0),
        num(cx),
        num(h - style.margin / 2.0)
    );
    let _ = writeln!(
        svg,
        r#"<text class="axis-label" x="{}" y="{}" text-anchor="middle">{}</text>"#,
        num(cx),
        num(h - style.margin / 4.0),
        escape(&axis_label(1, ca.inertia_share[0]))
    );
    let _ = writeln!(
        svg,
        r#"<text class="axis-label" x="{x}" y="{y}" text-anchor="middle" transform="rotate(-90 {x} {y})">{}</text>"#,
        escape(&axis_label(2, ca.inertia_share[1])),
        x = num(style.margin / 4.0 + style.font_size / 2.0),
        y = num(cy),
    );

    let char_w = style.font_size * 0.6;
    let mut taken: Vec<Rect> = Vec::new();
    for p in &points {
        let (class, color) = match p.part {
            Part::Verb => ("verb", &style.verb_color),
            Part::Noun => ("noun", &style.noun_color),
        };
        let m = style.marker_size;
        match p.part {
            Part::Verb => {
                let _ = writeln!(
                    svg,
                    r#"<rect class="point verb" x="{}" y="{}" width="{}" height="{}" fill="{}"/>"#,
                    num(p.x - m / 2.0),
                    num(p.y - m / 2.0),
                    num(m),
                    num(m),
                    escape(color)
                );
            }
            Part::Noun => {
                let _ = writeln!(
                    svg,
                    r#"<circle class="point noun" cx="{}" cy="{}" r="{}" fill="{}"/>"#,
                    num(p.x),
                    num(p.y),
                    num(m / 2.0),
                    escape(color)
                );
            }
        }
        let lx = p.x + m;
        let mut ly = p.y - m / 2.0;
        let width = char_w * p.label.chars().count() as f64;
        let mut bbox = Rect {
            x0: lx,
            y0: ly - style.font_size,
            x1: lx + width,
            y1: ly,
        };
        for _ in 0..points.len() {
            if !taken.iter().any(|t| t.overlaps(&bbox)) {
                break;
            }
            ly += style.font_size;
            bbox.y0 += style.font_size;
            bbox.y1 += style.font_size;
        }
        taken.push(bbox);
        let _ = writeln!(
            svg,
            r#"<text class="label {class}" x="{}" y="{}" fill="{}">{}</text>"#,
            num(lx),
            num(ly),
            escape(color),
            escape(&p.label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn num(x: f64) -> String {
    let s = format!("{x:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Column-aligned table of the first `top_n` candidates.
pub fn render_report(snapshot: &AnalysisSnapshot, top_n: usize) -> String {
    let header = ["verb", "noun", "score", "cosine", "verb_norm", "noun_norm"];
    let rows: Vec<[String; 6]> = snapshot
        .candidates
        .iter()
        .take(top_n)
        .map(|c| {
            [
                c.verb.clone(),
                c.noun.clone(),
                format!("{:.4}", c.score),
                format!("{:.4}", c.cosine),
                format!("{:.4}", c.verb_norm),
                format!("{:.4}", c.noun_norm),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in &rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let mut out = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            // text columns left-aligned, numbers right-aligned
            if i < 2 {
                let _ = write!(out, "{cell:<w$}");
            } else {
                let _ = write!(out, "{cell:>w$}");
            }
        }
        out.trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    for r in &rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ca::{self, CoordinateMode};
    use crate::cooccur::{ContingencyTable, PrunedTerms, TopTerms};
    use crate::session::{rank_candidates, SnapshotInputs, Window};

    fn snapshot(counts: Vec<Vec<u64>>, rows: &[&str], cols: &[&str]) -> AnalysisSnapshot {
        let table = ContingencyTable::new(
            rows.iter().map(|s| s.to_string()).collect(),
            cols.iter().map(|s| s.to_string()).collect(),
            counts,
        );
        let dims = rows.len().min(cols.len()).min(2);
        let ca = ca::decompose(
            &ca::residual_matrix(&table).unwrap(),
            dims,
            CoordinateMode::SingularVectors,
        )
        .unwrap();
        AnalysisSnapshot {
            sequence_number: 1,
            created_at: "2020-10-07T21:00:00Z".parse().unwrap(),
            post_count: 10,
            inputs: SnapshotInputs {
                store_prefix_len: 10,
                window: Window::All,
                k: 10,
                dims,
                coordinate_mode: CoordinateMode::SingularVectors,
                tagger: "baseline".into(),
            },
            exclusions_in_effect: Default::default(),
            top_terms: TopTerms {
                verbs: table.row_labels.clone(),
                nouns: table.col_labels.clone(),
            },
            candidates: rank_candidates(&table, &ca),
            table,
            ca,
            pruned_terms: PrunedTerms::default(),
        }
    }

    fn two_by_two() -> AnalysisSnapshot {
        snapshot(
            vec![vec![10, 2], vec![3, 9]],
            &["lie", "win"],
            &["trump", "vote"],
        )
    }

    #[test]
    fn two_by_two_has_four_labeled_markers() {
        let svg = render_biplot(&two_by_two(), &BiplotStyle::default()).unwrap();
        assert_eq!(svg.matches(r#"class="point "#).count(), 4);
        assert_eq!(svg.matches(r#"class="label "#).count(), 4);
        assert_eq!(svg.matches("<rect class=\"point verb\"").count(), 2);
        assert_eq!(svg.matches("<circle class=\"point noun\"").count(), 2);
        for l in ["lie", "win", "trump", "vote"] {
            assert!(svg.contains(&format!(">{l}</text>")));
        }
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn biplot_is_deterministic() {
        let s = two_by_two();
        assert_eq!(
            render_biplot(&s, &BiplotStyle::default()).unwrap(),
            render_biplot(&s, &BiplotStyle::default()).unwrap()
        );
    }

    #[test]
    fn axis_label_format() {
        assert_eq!(axis_label(1, 0.3382), "Dim 1 (33.82%)");
        assert_eq!(axis_label(2, 0.2808), "Dim 2 (28.08%)");
    }

    #[test]
    fn labels_are_escaped() {
        let s = snapshot(
            vec![vec![10, 2], vec![3, 9]],
            &["a&b", "win"],
            &["<x>", "vote"],
        );
        let svg = render_biplot(&s, &BiplotStyle::default()).unwrap();
        assert!(svg.contains("a&amp;b") && svg.contains("&lt;x&gt;"));
    }

    #[test]
    fn one_dimension_is_rejected() {
        let mut s = two_by_two();
        s.ca.inertia_share.truncate(1);
        assert_eq!(
            render_biplot(&s, &BiplotStyle::default()),
            Err(RenderError::TooFewDimensions(1))
        );
    }

    #[test]
    fn overlapping_labels_are_nudged() {
        // identical rows put two verbs on the same spot
        let s = snapshot(
            vec![vec![10, 1, 1], vec![10, 1, 1], vec![1, 10, 1]],
            &["aa", "ab", "c"],
            &["x", "y", "z"],
        );
        let svg = render_biplot(&s, &BiplotStyle::default()).unwrap();
        let y_of = |label: &str| -> String {
            let line = svg
                .lines()
                .find(|l| l.ends_with(&format!(">{label}</text>")))
                .unwrap();
            line.split("y=\"")
                .nth(1)
                .unwrap()
                .split('"')
                .next()
                .unwrap()
                .to_string()
        };
        assert_ne!(y_of("aa"), y_of("ab"));
    }

    #[test]
    fn report_clamps_and_aligns() {
        let s = two_by_two();
        let one = render_report(&s, 1);
        assert_eq!(one.lines().count(), 2);
        let all = render_report(&s, 100);
        assert_eq!(all.lines().count(), 5);
        let widths: Vec<usize> = all.lines().map(|l| l.find("score").unwrap_or(0)).collect();
        assert!(widths[0] > 0);

        let mut empty = s.clone();
        empty.candidates.clear();
        assert_eq!(render_report(&empty, 5).lines().count(), 1);
        assert!(render_report(&empty, 5).starts_with("verb"));
    }
}
