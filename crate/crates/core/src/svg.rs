//! Deterministic horizontal bar charts.

use std::fmt::Write;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// One bar per label. Positive values extend right of the zero line and
/// negative values left; the layout depends only on the inputs.
pub fn bar_chart(title: &str, x_label: &str, labels: &[String], values: &[f64]) -> String {
    const WIDTH: f64 = 640.0;
    const LABEL_W: f64 = 140.0;
    const BAR_H: f64 = 22.0;
    const GAP: f64 = 8.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 50.0;
    const RIGHT: f64 = 30.0;

    let n = labels.len().min(values.len());
    let height = TOP + BOTTOM + n as f64 * (BAR_H + GAP);
    let plot_w = WIDTH - LABEL_W - RIGHT;
    let lo = values.iter().take(n).fold(0.0_f64, |m, v| m.min(*v));
    let hi = values.iter().take(n).fold(0.0_f64, |m, v| m.max(*v));
    let span = if hi - lo > 0.0 { hi - lo } else { 1.0 };
    let x_of = |v: f64| LABEL_W + (v - lo) / span * plot_w;
    let zero = x_of(0.0);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height:.0}" viewBox="0 0 {WIDTH} {height:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    for (i, (label, &v)) in labels.iter().zip(values).take(n).enumerate() {
        let y = TOP + i as f64 * (BAR_H + GAP);
        let (x0, x1) = if v >= 0.0 {
            (zero, x_of(v))
        } else {
            (x_of(v), zero)
        };
        let fill = if v >= 0.0 { "#3b6ea5" } else { "#c0504d" };
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            LABEL_W - 6.0,
            y + BAR_H * 0.7,
            escape(label)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{x0:.1}" y="{y:.1}" width="{:.1}" height="{BAR_H:.1}" fill="{fill}"/>"#,
            (x1 - x0).max(0.5)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="10">{v:.4}</text>"#,
            x1.max(x0) + 4.0,
            y + BAR_H * 0.7
        );
    }
    let axis_y = TOP + n as f64 * (BAR_H + GAP);
    let _ = writeln!(
        s,
        r#"<line x1="{zero:.1}" y1="{:.1}" x2="{zero:.1}" y2="{axis_y:.1}" stroke="black"/>"#,
        TOP - 4.0
    );
    let _ = writeln!(
        s,
        r#"<line x1="{LABEL_W:.1}" y1="{axis_y:.1}" x2="{:.1}" y2="{axis_y:.1}" stroke="black"/>"#,
        LABEL_W + plot_w
    );
    for (v, anchor) in [(lo, "start"), (hi, "end")] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="{anchor}" font-size="10">{v:.4}</text>"#,
            x_of(v),
            axis_y + 14.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LABEL_W + plot_w / 2.0,
        axis_y + 36.0,
        escape(x_label)
    );
    s.push_str("</svg>\n");
    s
}
