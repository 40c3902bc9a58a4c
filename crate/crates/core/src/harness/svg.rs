//! Static SVG figures: critical-difference diagrams and counterfactual
//! overlays. Output is plain text with fixed number formatting, so equal
//! inputs give byte-identical files.

use std::fmt::Write;

use super::stats::CdResult;
use crate::series::TimeSeries;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Methods placed on an average-rank axis (1 on the left), with the
/// critical-difference bar and thick lines joining each group.
pub fn cd_diagram(title: &str, methods: &[String], cd: &CdResult) -> String {
    let m = methods.len().max(2);
    let (width, left, right) = (640.0, 60.0, 580.0);
    let axis_y = 70.0;
    let x_of = |rank: f64| left + (rank - 1.0) / (m as f64 - 1.0) * (right - left);
    let mut order: Vec<usize> = (0..methods.len()).collect();
    order.sort_by(|&a, &b| cd.average[a].total_cmp(&cd.average[b]).then(a.cmp(&b)));
    let height = axis_y + 40.0 + 22.0 * methods.len() as f64 + 14.0 * cd.groups.len() as f64;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="18" font-weight="bold">{}</text>"#, left, escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{left:.1}" y1="{axis_y:.1}" x2="{right:.1}" y2="{axis_y:.1}" stroke="black"/>"#
    );
    for r in 1..=m {
        let x = x_of(r as f64);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{axis_y:.1}" stroke="black"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{r}</text>"#,
            axis_y - 5.0,
            axis_y - 9.0
        );
    }
    // critical difference bar
    let cd_len = cd.cd / (m as f64 - 1.0) * (right - left);
    let _ = writeln!(
        s,
        r#"<line x1="{left:.1}" y1="34" x2="{:.1}" y2="34" stroke="black" stroke-width="2"/><text x="{:.1}" y="30">CD = {:.3}</text>"#,
        left + cd_len,
        left + cd_len + 6.0,
        cd.cd
    );
    let label_top = axis_y + 30.0 + 14.0 * cd.groups.len() as f64;
    let half = methods.len().div_ceil(2);
    for (pos, &j) in order.iter().enumerate() {
        let x = x_of(cd.average[j]);
        let y = label_top + 22.0 * pos as f64;
        let (lx, anchor) = if pos < half { (left - 10.0, "end") } else { (right + 10.0, "start") };
        let _ = writeln!(
            s,
            r#"<polyline points="{x:.1},{axis_y:.1} {x:.1},{y:.1} {lx:.1},{y:.1}" fill="none" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="{anchor}">{} ({:.2})</text>"#,
            if pos < half { lx - 2.0 } else { lx + 2.0 },
            y + 4.0,
            escape(&methods[j]),
            cd.average[j]
        );
    }
    for (g, group) in cd.groups.iter().filter(|g| g.len() > 1).enumerate() {
        let lo = group.iter().map(|&j| cd.average[j]).fold(f64::INFINITY, f64::min);
        let hi = group.iter().map(|&j| cd.average[j]).fold(f64::NEG_INFINITY, f64::max);
        let y = axis_y + 16.0 + 14.0 * g as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="black" stroke-width="4"/>"#,
            x_of(lo) - 3.0,
            x_of(hi) + 3.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One panel per channel: the original in grey, the counterfactual in
/// blue, and perceptible changes (`mask`, row-major) marked in red.
pub fn overlay_plot(title: &str, original: &TimeSeries, perturbed: &TimeSeries, mask: &[bool]) -> String {
    let (n, t) = original.shape();
    let (width, panel_h, pad) = (720.0, 160.0, 30.0);
    let height = pad + n as f64 * (panel_h + pad);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{pad:.0}" y="18" font-weight="bold">{}</text>"#, escape(title));
    for c in 0..n {
        let top = pad + c as f64 * (panel_h + pad);
        let (a, b) = (original.channel(c), perturbed.channel(c));
        let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
        let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let x_of = |i: usize| pad + i as f64 / (t - 1) as f64 * (width - 2.0 * pad);
        let y_of = |v: f64| top + panel_h - (v - lo) / span * panel_h;
        let path = |v: &[f64]| {
            v.iter()
                .enumerate()
                .map(|(i, &y)| format!("{:.1},{:.1}", x_of(i), y_of(y)))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let _ = writeln!(
            s,
            r##"<rect x="{pad:.0}" y="{top:.1}" width="{:.1}" height="{panel_h:.0}" fill="none" stroke="#ccc"/><text x="{:.0}" y="{:.1}">channel {c}</text>"##,
            width - 2.0 * pad,
            pad + 4.0,
            top + 14.0
        );
        let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#888" stroke-width="1.5"/>"##, path(a));
        let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#1f5fbf" stroke-width="1.5"/>"##, path(b));
        for i in (0..t).filter(|&i| mask[c * t + i]) {
            let _ = writeln!(s, r##"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="#d62728"/>"##, x_of(i), y_of(b[i]));
        }
    }
    s.push_str("</svg>\n");
    s
}
