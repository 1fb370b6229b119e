//! SVG panels for generalization curves, asymmetries, fitted
//! representations and baseline indices. Output is a pure function of the
//! inputs so repeated runs are byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::analysis::{CurveKind, GeneralizationCurve};
use crate::baselines::key_to_deg;
use crate::fitting::FitResult;

const W: f64 = 360.0;
const H: f64 = 260.0;
const MARGIN: f64 = 44.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotStyle {
    pub width: f64,
    pub height: f64,
    pub font_size: f64,
}

impl Default for PlotStyle {
    fn default() -> Self {
        PlotStyle {
            width: W,
            height: H,
            font_size: 11.0,
        }
    }
}

/// One rendered figure.
#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub name: String,
    pub svg: String,
}

struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    style: PlotStyle,
}

impl Axes {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (self.style.width - 1.5 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        self.style.height - MARGIN + (self.y0 - y) / (self.y1 - self.y0) * (self.style.height - 1.6 * MARGIN)
    }
}

fn header(style: &PlotStyle, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="{f}">"#,
        w = style.width,
        h = style.height,
        f = style.font_size
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="16" text-anchor="middle">{}</text>"#,
        style.width / 2.0,
        escape(title)
    );
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn frame(s: &mut String, ax: &Axes, xticks: &[f64], yticks: &[f64], xlabel: &str, ylabel: &str) {
    let (l, r) = (ax.px(ax.x0), ax.px(ax.x1));
    let (b, t) = (ax.py(ax.y0), ax.py(ax.y1));
    let _ = writeln!(s, r#"<path d="M{l:.2},{t:.2} L{l:.2},{b:.2} L{r:.2},{b:.2}" fill="none" stroke="black"/>"#);
    for x in xticks {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            ax.px(*x),
            b + 14.0,
            x
        );
    }
    for y in yticks {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.1}</text>"#,
            l - 4.0,
            ax.py(*y) + 4.0,
            y
        );
    }
    if ax.y0 < 0.0 && ax.y1 > 0.0 {
        let _ = writeln!(
            s,
            r#"<line x1="{l:.2}" y1="{y:.2}" x2="{r:.2}" y2="{y:.2}" stroke="gray" stroke-dasharray="3,3"/>"#,
            y = ax.py(0.0)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (l + r) / 2.0,
        ax.style.height - 8.0,
        escape(xlabel)
    );
    let _ = writeln!(
        s,
        r#"<text x="12" y="{:.2}" text-anchor="middle" transform="rotate(-90 12 {:.2})">{}</text>"#,
        (b + t) / 2.0,
        (b + t) / 2.0,
        escape(ylabel)
    );
}

fn y_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    ((lo * 5.0).floor() / 5.0, (hi * 5.0).ceil() / 5.0)
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = if hi - lo > 1.6 { 0.5 } else { 0.2 };
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

/// Generalization curve with SEM bars; `overlay` adds a fitted prediction
/// per offset.
pub fn curve_panel(curve: &GeneralizationCurve, overlay: Option<&[(f64, f64)]>, style: &PlotStyle) -> String {
    let kind = match curve.kind {
        CurveKind::Intra => "trained",
        CurveKind::Inter => "tested",
    };
    let title = format!("{} {} deg", kind, curve.anchor_deg);
    let (y0, y1) = y_range(
        curve
            .points
            .iter()
            .flat_map(|p| [p.mean - p.sem, p.mean + p.sem])
            .chain(overlay.unwrap_or(&[]).iter().map(|o| o.1)),
    );
    let ax = Axes {
        x0: -180.0,
        x1: 180.0,
        y0,
        y1,
        style: *style,
    };
    let mut s = header(style, &title);
    frame(
        &mut s,
        &ax,
        &[-180.0, -90.0, 0.0, 90.0, 180.0],
        &ticks(y0, y1),
        "angular offset (deg)",
        "adaptation index",
    );
    // The 180 deg entry is drawn at both ends of the axis.
    let mut pts: Vec<(f64, f64, f64)> = curve.points.iter().map(|p| (p.offset_deg, p.mean, p.sem)).collect();
    if let Some(p) = curve.points.iter().find(|p| p.offset_deg == 180.0) {
        pts.insert(0, (-180.0, p.mean, p.sem));
    }
    let path: Vec<String> = pts
        .iter()
        .map(|(x, y, _)| format!("{:.2},{:.2}", ax.px(*x), ax.py(*y)))
        .collect();
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{}"/>"#, path.join(" "), COLORS[0]);
    for (x, y, e) in &pts {
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{a:.2}" x2="{x:.2}" y2="{b:.2}" stroke="{c}"/><circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{c}"/>"#,
            x = ax.px(*x),
            y = ax.py(*y),
            a = ax.py(y - e),
            b = ax.py(y + e),
            c = COLORS[0]
        );
    }
    if let Some(o) = overlay {
        let path: Vec<String> = o.iter().map(|(x, y)| format!("{:.2},{:.2}", ax.px(*x), ax.py(*y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-dasharray="5,3"/>"#,
            path.join(" "),
            COLORS[1]
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Bars of signed asymmetry, one per labelled curve.
pub fn bar_panel(title: &str, ylabel: &str, bars: &[(String, f64)], style: &PlotStyle) -> String {
    let (y0, y1) = {
        let m = bars.iter().map(|b| b.1.abs()).fold(0.1f64, f64::max);
        let m = (m * 10.0).ceil() / 10.0;
        (-m, m)
    };
    let ax = Axes {
        x0: 0.0,
        x1: bars.len().max(1) as f64,
        y0,
        y1,
        style: *style,
    };
    let mut s = header(style, title);
    frame(&mut s, &ax, &[], &[y0, 0.0, y1], "", ylabel);
    let bw = (ax.px(1.0) - ax.px(0.0)) * 0.7;
    for (i, (label, v)) in bars.iter().enumerate() {
        let xc = ax.px(i as f64 + 0.5);
        let (top, bot) = (ax.py(v.max(0.0)), ax.py(v.min(0.0)));
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            xc - bw / 2.0,
            top,
            bw,
            (bot - top).max(0.5),
            COLORS[i % COLORS.len()]
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            xc,
            ax.py(y0) + 14.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Polar plot of each group's fitted estimated-gain fraction.
pub fn representation_panel(fit: &FitResult, style: &PlotStyle) -> String {
    let title = format!("{} representation", fit.model.name());
    let mut s = header(style, &title);
    let (cx, cy) = (style.width / 2.0, style.height / 2.0 + 8.0);
    let r = (style.height / 2.0 - 30.0).min(style.width / 2.0 - 30.0);
    let a_max = fit
        .params
        .groups
        .iter()
        .map(|g| g.amplitude)
        .fold(1.0f64, f64::max);
    for ring in [0.5, 1.0] {
        let _ = writeln!(
            s,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{:.2}" fill="none" stroke="lightgray"/>"#,
            r * ring
        );
    }
    for (i, g) in fit.params.groups.iter().enumerate() {
        let rep = g.representation();
        let pts: Vec<String> = (0..=72)
            .map(|k| {
                let th = k as f64 * 5.0;
                let rho = r * rep.gain_fraction(th) / a_max;
                let (x, y) = (cx + rho * th.to_radians().cos(), cy - rho * th.to_radians().sin());
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}"/>"#,
            pts.join(" "),
            COLORS[i % COLORS.len()]
        );
    }
    s.push_str("</svg>\n");
    s
}

/// All figures for a set of curves and optional fits. Returns nothing when
/// there are no curves.
pub fn emit_plots(
    curves: &[GeneralizationCurve],
    fits: &[FitResult],
    baseline: &BTreeMap<i64, f64>,
    style: &PlotStyle,
) -> Vec<Figure> {
    if curves.is_empty() {
        return vec![];
    }
    let mut figs = Vec::new();
    let mut bars = Vec::new();
    for c in curves {
        let kind = match c.kind {
            CurveKind::Intra => "intra",
            CurveKind::Inter => "inter",
        };
        let overlay = fits.first().and_then(|f| fit_overlay(f, c));
        figs.push(Figure {
            name: format!(
                "curve_{kind}_{:03}{}.svg",
                c.anchor_deg.round() as i64,
                if c.baseline_corrected { "_corrected" } else { "" }
            ),
            svg: curve_panel(c, overlay.as_deref(), style),
        });
        if let Some(a) = crate::analysis::asymmetry(c) {
            bars.push((format!("{}", c.anchor_deg), a));
        }
    }
    figs.push(Figure {
        name: "asymmetry.svg".into(),
        svg: bar_panel("asymmetry (+45 minus -45)", "index difference", &bars, style),
    });
    if !baseline.is_empty() {
        let b: Vec<(String, f64)> = baseline.iter().map(|(k, v)| (format!("{}", key_to_deg(*k)), *v)).collect();
        figs.push(Figure {
            name: "baseline_indices.svg".into(),
            svg: bar_panel("baseline index by direction", "adaptation index", &b, style),
        });
    }
    for f in fits.iter().filter(|f| !f.params.groups.is_empty()) {
        figs.push(Figure {
            name: format!("representation_{}.svg", f.model.name()),
            svg: representation_panel(f, style),
        });
    }
    figs
}

/// Fitted predictions along an intra curve, ordered by offset.
fn fit_overlay(fit: &FitResult, curve: &GeneralizationCurve) -> Option<Vec<(f64, f64)>> {
    if curve.kind != CurveKind::Intra {
        return None;
    }
    let mut pts: Vec<(f64, f64)> = curve
        .points
        .iter()
        .filter_map(|p| {
            fit.predictions
                .iter()
                .find(|q| q.group_deg == Some(curve.anchor_deg) && q.direction_deg == p.direction_deg)
                .map(|q| (p.offset_deg, q.predicted))
        })
        .collect();
    if pts.is_empty() {
        return None;
    }
    if let Some(p) = pts.iter().find(|p| p.0 == 180.0).copied() {
        pts.insert(0, (-180.0, p.1));
    }
    Some(pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::CurvePoint;
    use crate::analysis::CURVE_OFFSETS;

    fn curve(anchor: f64) -> GeneralizationCurve {
        GeneralizationCurve {
            kind: CurveKind::Intra,
            anchor_deg: anchor,
            baseline_corrected: false,
            points: CURVE_OFFSETS
                .iter()
                .map(|o| CurvePoint {
                    offset_deg: *o,
                    direction_deg: (anchor + o).rem_euclid(360.0),
                    group_deg: anchor,
                    mean: (-(o * o) / 1800.0).exp(),
                    sem: 0.05,
                    n: 15,
                })
                .collect(),
        }
    }

    #[test]
    fn deterministic_and_counted() {
        let curves: Vec<_> = (0..8).map(|i| curve(45.0 * i as f64)).collect();
        let a = emit_plots(&curves, &[], &BTreeMap::new(), &PlotStyle::default());
        let b = emit_plots(&curves, &[], &BTreeMap::new(), &PlotStyle::default());
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|f| f.name.starts_with("curve_")).count(), 8);
        assert_eq!(a.iter().filter(|f| f.name == "asymmetry.svg").count(), 1);
        assert!(a[0].svg.starts_with("<svg") && a[0].svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn empty_input_gives_no_figures() {
        assert!(emit_plots(&[], &[], &BTreeMap::new(), &PlotStyle::default()).is_empty());
    }
}
