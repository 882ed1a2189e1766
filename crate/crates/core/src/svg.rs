//! Minimal SVG scatter plots of evaluated reward vectors with one front
//! polyline per method and objective pair.

use std::fmt::Write;

use crate::pareto::{dominates, MethodResult};

const PANEL: f64 = 360.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Objective pairs `(a, b)` with `a < b`; a single pair when `dim == 2`.
pub fn panels(dim: usize) -> Vec<(usize, usize)> {
    (0..dim)
        .flat_map(|a| ((a + 1)..dim).map(move |b| (a, b)))
        .collect()
}

/// The 2-D non-dominated subset of `pts`, sorted by the first coordinate.
fn projected_front(pts: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut front: Vec<[f64; 2]> = Vec::new();
    for (i, p) in pts.iter().enumerate() {
        let beaten = pts.iter().enumerate().any(|(j, q)| {
            dominates(q, p).unwrap_or(false) || (j < i && q == p)
        });
        if !beaten {
            front.push(*p);
        }
    }
    front.sort_by(|a, b| a[0].total_cmp(&b[0]));
    front
}

/// Renders every method's points and front. Coordinates are plotted on `[0, 1]`.
pub fn render_fronts(results: &[MethodResult], dim: usize) -> String {
    let pairs = panels(dim.max(2));
    let width = MARGIN + pairs.len() as f64 * (PANEL + MARGIN);
    let height = PANEL + 2.0 * MARGIN + 18.0 * results.len() as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{width}" height="{height}" fill="white"/>"#);

    for (pi, &(a, b)) in pairs.iter().enumerate() {
        let x0 = MARGIN + pi as f64 * (PANEL + MARGIN);
        let y0 = MARGIN;
        let sx = |v: f64| x0 + v.clamp(0.0, 1.0) * PANEL;
        let sy = |v: f64| y0 + (1.0 - v.clamp(0.0, 1.0)) * PANEL;
        let _ = writeln!(out, r#"<g class="panel" data-x="r{a}" data-y="r{b}">"#);
        let _ = writeln!(
            out,
            r#"<rect x="{x0}" y="{y0}" width="{PANEL}" height="{PANEL}" fill="none" stroke="black"/>"#
        );
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            let _ = writeln!(
                out,
                r#"<line x1="{x}" y1="{y1}" x2="{x}" y2="{y2}" stroke="black"/><text x="{x}" y="{ty}" text-anchor="middle">{t}</text>"#,
                x = sx(t),
                y1 = y0 + PANEL,
                y2 = y0 + PANEL + 4.0,
                ty = y0 + PANEL + 16.0,
            );
            let _ = writeln!(
                out,
                r#"<line x1="{x1}" y1="{y}" x2="{x0}" y2="{y}" stroke="black"/><text x="{tx}" y="{y}" text-anchor="end" dominant-baseline="middle">{t}</text>"#,
                x1 = x0 - 4.0,
                y = sy(t),
                tx = x0 - 6.0,
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{x}" y="{y}" text-anchor="middle">r{a}</text><text x="{lx}" y="{ly}" text-anchor="middle" transform="rotate(-90 {lx} {ly})">r{b}</text>"#,
            x = x0 + PANEL / 2.0,
            y = y0 + PANEL + 32.0,
            lx = x0 - 34.0,
            ly = y0 + PANEL / 2.0,
        );

        for (mi, r) in results.iter().enumerate() {
            let color = COLORS[mi % COLORS.len()];
            for v in &r.vectors {
                let _ = writeln!(
                    out,
                    r#"<circle cx="{:.3}" cy="{:.3}" r="3" fill="{color}" fill-opacity="0.6"/>"#,
                    sx(v.values[a]),
                    sy(v.values[b]),
                );
            }
            let proj: Vec<[f64; 2]> = r.front.points.iter().map(|p| [p.values[a], p.values[b]]).collect();
            let pts = projected_front(&proj)
                .iter()
                .map(|p| format!("{:.3},{:.3}", sx(p[0]), sy(p[1])))
                .collect::<Vec<_>>()
                .join(" ");
            let _ = writeln!(
                out,
                r#"<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2" data-method="{}"/>"#,
                escape(&r.method)
            );
        }
        let _ = writeln!(out, "</g>");
    }

    for (mi, r) in results.iter().enumerate() {
        let y = 2.0 * MARGIN + PANEL + 18.0 * mi as f64;
        let color = COLORS[mi % COLORS.len()];
        let _ = writeln!(
            out,
            r#"<rect x="{MARGIN}" y="{ry}" width="10" height="10" fill="{color}"/><text x="{tx}" y="{y}">{}</text>"#,
            escape(&r.method),
            ry = y - 9.0,
            tx = MARGIN + 16.0,
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panel_pairs() {
        assert_eq!(panels(2), vec![(0, 1)]);
        assert_eq!(panels(3), vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn projected_front_sorted() {
        let f = projected_front(&[[0.5, 0.5], [0.9, 0.1], [0.1, 0.9], [0.4, 0.4], [0.5, 0.5]]);
        assert_eq!(f, vec![[0.1, 0.9], [0.5, 0.5], [0.9, 0.1]]);
    }
}
