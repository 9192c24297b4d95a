//! Tiny SVG renderers for swatches and best-so-far plots.

use std::fmt::Write as _;

use labmcp_color::SrgbColor;

pub fn swatch(color: SrgbColor, label: &str) -> String {
    format!(
        concat!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="96" height="72" viewBox="0 0 96 72">"#,
            r#"<rect x="0" y="0" width="96" height="56" fill="{hex}"/>"#,
            r#"<text x="48" y="69" font-family="monospace" font-size="11" text-anchor="middle">{label}</text>"#,
            "</svg>"
        ),
        hex = color.to_hex(),
        label = escape(label),
    )
}

/// Line plot of `values` against cycle number 1..=n, one marker per point.
pub fn line_plot(title: &str, y_label: &str, values: &[f64]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const LEFT: f64 = 64.0;
    const RIGHT: f64 = 16.0;
    const TOP: f64 = 32.0;
    const BOTTOM: f64 = 44.0;

    let (mut lo, mut hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if !lo.is_finite() || !hi.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = (hi - lo) * 0.08;
    lo -= pad;
    hi += pad;
    let n = values.len().max(1);
    let x_of = |i: usize| {
        if n == 1 {
            LEFT + (W - LEFT - RIGHT) / 2.0
        } else {
            LEFT + (W - LEFT - RIGHT) * i as f64 / (n - 1) as f64
        }
    };
    let y_of = |v: f64| TOP + (H - TOP - BOTTOM) * (hi - v) / (hi - lo);

    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = write!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = write!(
        svg,
        r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = write!(
        svg,
        r#"<path d="M{x0} {y0} L{x0} {y1} L{x1} {y1}" stroke="black" fill="none"/>"#
    );
    for (v, anchor) in [(hi - pad, "hi"), (lo + pad, "lo")] {
        let _ = write!(
            svg,
            r#"<text class="tick-{anchor}" x="{}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="end">{:.3}</text>"#,
            x0 - 4.0,
            y_of(v) + 3.0,
            v
        );
    }
    let _ = write!(
        svg,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">cycle</text>"#,
        (x0 + x1) / 2.0,
        H - 10.0
    );
    let _ = write!(
        svg,
        r#"<text x="14" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
    if !values.is_empty() {
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(i, v)| format!("{:.2},{:.2}", x_of(i), y_of(*v)))
            .collect();
        let _ = write!(
            svg,
            r##"<polyline points="{}" stroke="#1f5fbf" stroke-width="2" fill="none"/>"##,
            points.join(" ")
        );
        for (i, v) in values.iter().enumerate() {
            let _ = write!(
                svg,
                r##"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="#1f5fbf"><title>cycle {}: {}</title></circle>"##,
                x_of(i),
                y_of(*v),
                i + 1,
                v
            );
        }
    }
    svg.push_str("</svg>");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plot_has_one_marker_per_point() {
        let svg = line_plot("t", "y", &[-3.0, -2.0, -2.0]);
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>"));
    }

    #[test]
    fn degenerate_inputs_render() {
        assert!(!line_plot("t", "y", &[]).contains("NaN"));
        assert!(!line_plot("t", "y", &[1.0]).contains("NaN"));
    }

    #[test]
    fn swatch_escapes_label() {
        let s = swatch(SrgbColor::new(1, 2, 3), "<a&b>");
        assert!(s.contains("#010203"));
        assert!(s.contains("&lt;a&amp;b&gt;"));
    }
}
