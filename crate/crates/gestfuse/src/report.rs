//! SVG renderings of interpretability reports.

use std::fmt::Write as _;

use gestfuse_core::interpret::{AblationTable, AttentionReport, ContributionReport};

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Horizontal bars of |LLR| per pair for the predicted class; positive
/// contributions (evidence for the class) are blue, negative ones red.
pub fn contributions_svg(r: &ContributionReport) -> String {
    let row_h = 26.0;
    let label_w = 120.0;
    let bar_w = 360.0;
    let top = 40.0;
    let h = top + row_h * r.contributions.len() as f64 + 20.0;
    let w = label_w + bar_w + 80.0;
    let max = r
        .contributions
        .iter()
        .map(|c| c.llr.abs())
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="8" y="20" font-size="14">{} predicted {} ({})</text>"#,
        escape(&r.window),
        r.predicted,
        escape(&r.predicted_name)
    );
    for (i, c) in r.contributions.iter().enumerate() {
        let y = top + row_h * i as f64;
        let len = bar_w * c.llr.abs() / max;
        let color = if c.llr >= 0.0 { "#3b6fb6" } else { "#c0392b" };
        let _ = writeln!(s, r#"<text x="8" y="{:.1}">{}</text>"#, y + 16.0, escape(&c.pair));
        let _ = writeln!(
            s,
            r#"<rect x="{label_w}" y="{:.1}" width="{len:.2}" height="{:.1}" fill="{color}"/>"#,
            y + 4.0,
            row_h - 8.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}">{:.3}</text>"#,
            label_w + len + 6.0,
            y + 16.0,
            c.llr
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Pair-by-pair attention heatmap, white (0) to dark blue (row max 1).
pub fn attention_svg(r: &AttentionReport) -> String {
    let cell = 40.0;
    let left = 110.0;
    let top = 110.0;
    let n = r.pairs.len() as f64;
    let w = left + cell * n + 20.0;
    let h = top + cell * n + 20.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="8" y="20" font-size="14">{} predicted {} ({})</text>"#,
        escape(&r.window),
        r.predicted,
        escape(&r.predicted_name)
    );
    for (i, name) in r.pairs.iter().enumerate() {
        let c = left + cell * i as f64 + cell / 2.0;
        let _ = writeln!(
            s,
            r#"<text x="{c:.1}" y="{:.1}" transform="rotate(-60 {c:.1} {:.1})">{}</text>"#,
            top - 6.0,
            top - 6.0,
            escape(name)
        );
        let _ = writeln!(
            s,
            r#"<text x="8" y="{:.1}">{}</text>"#,
            top + cell * i as f64 + cell / 2.0 + 4.0,
            escape(name)
        );
    }
    for (i, row) in r.matrix.iter().enumerate() {
        for (j, &a) in row.iter().enumerate() {
            let a = a.clamp(0.0, 1.0);
            let shade = |full: f64| (255.0 - a * (255.0 - full)).round() as u8;
            let _ = writeln!(
                s,
                r##"<rect x="{:.1}" y="{:.1}" width="{cell}" height="{cell}" fill="#{:02x}{:02x}{:02x}"><title>{a:.4}</title></rect>"##,
                left + cell * j as f64,
                top + cell * i as f64,
                shade(20.0),
                shade(50.0),
                shade(120.0)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Vertical bars of mean F1 per subset and split.
pub fn ablation_svg(t: &AblationTable) -> String {
    let bar = 22.0;
    let gap = 10.0;
    let top = 30.0;
    let plot_h = 240.0;
    let w = 40.0 + (bar + gap) * t.rows.len() as f64 + 20.0;
    let h = top + plot_h + 120.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="8" y="18" font-size="14">macro F1 by modality subset</text>"#);
    let base = top + plot_h;
    let _ = writeln!(s, r#"<line x1="36" y1="{base}" x2="{w}" y2="{base}" stroke="black"/>"#);
    for (i, r) in t.rows.iter().enumerate() {
        let x = 40.0 + (bar + gap) * i as f64;
        let hgt = plot_h * r.f1.mean.clamp(0.0, 1.0);
        let _ = writeln!(
            s,
            r##"<rect x="{x:.1}" y="{:.1}" width="{bar}" height="{hgt:.2}" fill="#3b6fb6"><title>{:.4}</title></rect>"##,
            base - hgt,
            r.f1.mean
        );
        let lx = x + bar / 2.0;
        let ly = base + 10.0;
        let _ = writeln!(
            s,
            r#"<text x="{lx:.1}" y="{ly:.1}" transform="rotate(60 {lx:.1} {ly:.1})">{} {}</text>"#,
            escape(&r.subset),
            r.split
        );
    }
    s.push_str("</svg>\n");
    s
}
