//! BER-versus-SNR curves as a standalone SVG.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::output::CsvRow;

pub const DEFAULT_FLOOR: f64 = 1e-6;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 250.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// One polyline: a scheme at one parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Groups rows by scheme and parameters; zero BER is drawn at `floor`.
pub fn curves(rows: &[CsvRow], floor: f64) -> Vec<Curve> {
    let mut groups: BTreeMap<(String, [u64; 3]), Vec<(f64, f64)>> = BTreeMap::new();
    let mut varying = [false; 3];
    let first = [rows[0].sigma_e_sq, rows[0].rho_t, rows[0].rho_r];
    for r in rows {
        let params = [r.sigma_e_sq, r.rho_t, r.rho_r];
        for i in 0..3 {
            varying[i] |= params[i] != first[i];
        }
        groups
            .entry((r.scheme.clone(), params.map(f64::to_bits)))
            .or_default()
            .push((r.hop_snr_db, r.ber.max(floor)));
    }
    groups
        .into_iter()
        .map(|((scheme, bits), mut points)| {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            let params = bits.map(f64::from_bits);
            let mut label = scheme;
            for (i, name) in ["σe²", "ρt", "ρr"].iter().enumerate() {
                if varying[i] {
                    let _ = write!(label, ", {name}={}", params[i]);
                }
            }
            Curve { label, points }
        })
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Renders `curves` with a logarithmic BER axis spanning whole decades.
pub fn render_svg(curves: &[Curve], floor: f64) -> String {
    let xs = curves.iter().flat_map(|c| c.points.iter().map(|p| p.0));
    let (mut x_min, mut x_max) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
        (lo.min(x), hi.max(x))
    });
    if x_max <= x_min {
        x_min -= 1.0;
        x_max += 1.0;
    }
    let ys = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.1.max(floor).log10()));
    let (y_lo, y_hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| {
        (lo.min(y), hi.max(y))
    });
    let decade_lo = y_lo.floor();
    let decade_hi = y_hi.ceil().max(decade_lo + 1.0);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x_min) / (x_max - x_min) * plot_w;
    let py = |y: f64| TOP + (decade_hi - y.max(floor).log10()) / (decade_hi - decade_lo) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    let mut d = decade_lo;
    while d <= decade_hi + 1e-9 {
        let y = TOP + (decade_hi - d) / (decade_hi - decade_lo) * plot_h;
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">1e{d}</text>"##,
            LEFT + plot_w,
            LEFT - 6.0,
            y + 4.0
        );
        d += 1.0;
    }
    let ticks = 6;
    for i in 0..=ticks {
        let x = x_min + (x_max - x_min) * i as f64 / ticks as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            px(x),
            TOP + plot_h + 18.0,
            (x * 10.0).round() / 10.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">hop SNR (dB)</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">BER</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );
    for (i, curve) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = curve
            .points
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="curve" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        for (x, y) in &curve.points {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                px(*x),
                py(*y)
            );
        }
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = LEFT + plot_w + 15.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 25.0,
            lx + 30.0,
            ly + 4.0,
            escape(&curve.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(scheme: &str, snr: f64, ber: f64, s2: f64) -> CsvRow {
        CsvRow {
            scheme: scheme.into(),
            hop_snr_db: snr,
            sigma_e_sq: s2,
            rho_t: 0.0,
            rho_r: 0.4,
            trials: 1,
            symbols_per_trial: 1,
            bit_errors: 0,
            bits: 1,
            ber,
            ber_stderr: 0.0,
            ser: 0.0,
        }
    }

    #[test]
    fn groups_and_floors() {
        let rows = vec![
            row("robust_thp", 20.0, 0.0, 0.001),
            row("robust_thp", 10.0, 1e-2, 0.001),
            row("robust_linear", 10.0, 1e-1, 0.001),
        ];
        let c = curves(&rows, DEFAULT_FLOOR);
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].label, "robust_thp");
        assert_eq!(c[1].points, vec![(10.0, 1e-2), (20.0, 1e-6)]);
    }

    #[test]
    fn varying_parameters_appear_in_labels() {
        let rows = vec![
            row("robust_thp", 10.0, 1e-2, 0.001),
            row("robust_thp", 10.0, 1e-2, 0.004),
        ];
        let c = curves(&rows, DEFAULT_FLOOR);
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].label, "robust_thp, σe²=0.004");
    }

    #[test]
    fn svg_has_one_polyline_per_curve_and_decade_ticks() {
        let rows = vec![
            row("a", 10.0, 1e-1, 0.0),
            row("a", 20.0, 0.0, 0.0),
            row("b", 10.0, 1e-3, 0.0),
        ];
        let svg = render_svg(&curves(&rows, 1e-6), 1e-6);
        assert_eq!(svg.matches("class=\"curve\"").count(), 2);
        assert!(svg.contains(">1e-6<") && svg.contains(">1e-1<"));
        assert!(svg.contains("BER") && svg.contains("hop SNR (dB)"));
    }
}
