//! Static reliability-diagram SVG.

use std::fmt::Write;

use detcal::metrics::ReliabilityRecord;

const W: f64 = 420.0;
const H: f64 = 420.0;
const PAD: f64 = 50.0;

/// Bars of per-bin outcome with the gap to the bin's mean value stacked on top, the
/// identity diagonal, and axis labels.
pub fn reliability_svg(records: &[ReliabilityRecord], title: &str, x_label: &str, y_label: &str) -> String {
    let plot = W - 2.0 * PAD;
    let x = |v: f64| PAD + v * plot;
    let y = |v: f64| H - PAD - v * plot;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    for r in records.iter().filter(|r| r.count > 0) {
        let (x0, bw) = (x(r.bin_lo), (r.bin_hi - r.bin_lo) * plot);
        let _ = writeln!(
            s,
            r##"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="#3b6fb6" stroke="#1f3f6e"/>"##,
            x0,
            y(r.mean_outcome),
            bw,
            r.mean_outcome * plot
        );
        let (lo, hi) = if r.mean_conf >= r.mean_outcome {
            (r.mean_outcome, r.mean_conf)
        } else {
            (r.mean_conf, r.mean_outcome)
        };
        let _ = writeln!(
            s,
            r##"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="#e0584a" fill-opacity="0.45" stroke="#b0302a"/>"##,
            x0,
            y(hi),
            bw,
            (hi - lo) * plot
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="4 3"/>"#,
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{plot}" height="{plot}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.1}</text>"#,
            x(v),
            H - PAD + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"#,
            PAD - 6.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_occupied_bins_only() {
        let recs = [
            ReliabilityRecord {
                bin_lo: 0.0,
                bin_hi: 0.5,
                count: 0,
                mean_conf: 0.0,
                mean_outcome: 0.0,
                gap: 0.0,
            },
            ReliabilityRecord {
                bin_lo: 0.5,
                bin_hi: 1.0,
                count: 4,
                mean_conf: 0.8,
                mean_outcome: 0.5,
                gap: 0.3,
            },
        ];
        let svg = reliability_svg(&recs, "D-ECE <x>", "confidence", "precision");
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("#3b6fb6").count(), 1);
        assert!(svg.contains("D-ECE &lt;x&gt;"));
    }
}
