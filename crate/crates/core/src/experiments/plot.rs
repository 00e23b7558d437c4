//! Minimal SVG boxplots. Whiskers stop at the last sample within 1.5 IQR of
//! the box; points beyond them are not drawn.

use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub lower_whisker: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub upper_whisker: f64,
}

fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let h = q * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Box statistics of the finite entries of `values`.
pub fn quartiles(values: &[f64]) -> Option<Quartiles> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&v, 0.25);
    let q3 = quantile_sorted(&v, 0.75);
    let reach = 1.5 * (q3 - q1);
    let lower_whisker = v.iter().copied().find(|&x| x >= q1 - reach).unwrap_or(q1);
    let upper_whisker = v.iter().rev().copied().find(|&x| x <= q3 + reach).unwrap_or(q3);
    Some(Quartiles {
        lower_whisker,
        q1,
        median: quantile_sorted(&v, 0.5),
        q3,
        upper_whisker,
    })
}

/// One colored group of boxes, one box per x category.
#[derive(Debug, Clone)]
pub struct BoxSeries {
    pub label: String,
    /// Samples per category, aligned with the category list.
    pub values: Vec<Vec<f64>>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"];
const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 380.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn t(&self, v: f64) -> f64 {
        if self.log {
            v.max(f64::MIN_POSITIVE).log10()
        } else {
            v
        }
    }

    fn y(&self, v: f64) -> f64 {
        let (a, b) = (self.t(self.lo), self.t(self.hi));
        let frac = ((self.t(v) - a) / (b - a)).clamp(0.0, 1.0);
        HEIGHT - BOTTOM - frac * (HEIGHT - TOP - BOTTOM)
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let (a, b) = (self.lo.log10().floor() as i32, self.hi.log10().ceil() as i32);
            (a..=b).map(|e| 10f64.powi(e)).collect()
        } else {
            (0..=5).map(|i| self.lo + (self.hi - self.lo) * i as f64 / 5.0).collect()
        }
    }
}

fn axis_for(stats: &[Quartiles], reference: Option<f64>, log: bool) -> Axis {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for q in stats {
        lo = lo.min(q.lower_whisker);
        hi = hi.max(q.upper_whisker);
    }
    if let Some(r) = reference {
        lo = lo.min(r);
        hi = hi.max(r);
    }
    if !lo.is_finite() {
        (lo, hi) = (0.1, 1.0);
    }
    if log {
        let floor = if lo > 0.0 { lo } else { hi.abs().max(1.0) * 1e-12 };
        Axis {
            lo: 10f64.powf(floor.log10().floor()),
            hi: 10f64.powf(hi.max(floor).log10().ceil().max(floor.log10().floor() + 1.0)),
            log,
        }
    } else {
        let pad = if hi > lo { 0.05 * (hi - lo) } else { 1.0 };
        Axis {
            lo: lo - pad,
            hi: hi + pad,
            log,
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders grouped boxplots: categories along x, one box per series inside
/// each category slot, optional dashed horizontal reference line.
pub fn boxplot_svg(
    title: &str,
    y_label: &str,
    categories: &[String],
    series: &[BoxSeries],
    reference: Option<f64>,
    log_y: bool,
) -> String {
    let stats: Vec<Vec<Option<Quartiles>>> = series
        .iter()
        .map(|s| s.values.iter().map(|v| quartiles(v)).collect())
        .collect();
    let flat: Vec<Quartiles> = stats.iter().flatten().flatten().copied().collect();
    let axis = axis_for(&flat, reference, log_y);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (TOP, HEIGHT - BOTTOM);
    let _ = writeln!(svg, r#"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="black"/>"#, x1 - x0, y1 - y0);

    for tick in axis.ticks() {
        let y = axis.y(tick);
        let _ = writeln!(svg, r##"<line x1="{x0}" x2="{x1}" y1="{y:.1}" y2="{y:.1}" stroke="#dddddd"/>"##);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            x0 - 6.0,
            y + 4.0,
            if log_y { format!("{tick:.0e}") } else { format!("{tick:.3}") }
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );

    let slot = (x1 - x0) / categories.len().max(1) as f64;
    let box_w = (0.8 * slot / series.len().max(1) as f64).min(28.0);
    for (c, cat) in categories.iter().enumerate() {
        let center = x0 + slot * (c as f64 + 0.5);
        let _ = writeln!(svg, r#"<text x="{center:.1}" y="{}" text-anchor="middle">{}</text>"#, y1 + 18.0, escape(cat));
        for (s, per_cat) in stats.iter().enumerate() {
            let Some(Some(q)) = per_cat.get(c) else { continue };
            let color = PALETTE[s % PALETTE.len()];
            let x = center + (s as f64 - (series.len() as f64 - 1.0) / 2.0) * box_w;
            let (top, bot) = (axis.y(q.q3), axis.y(q.q1));
            let _ = writeln!(
                svg,
                r#"<line x1="{x:.1}" x2="{x:.1}" y1="{:.1}" y2="{:.1}" stroke="{color}"/>"#,
                axis.y(q.upper_whisker),
                axis.y(q.lower_whisker)
            );
            let _ = writeln!(
                svg,
                r#"<rect x="{:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="{color}" fill-opacity="0.35" stroke="{color}"/>"#,
                x - 0.4 * box_w,
                0.8 * box_w,
                (bot - top).max(0.5)
            );
            let ym = axis.y(q.median);
            let _ = writeln!(
                svg,
                r#"<line x1="{:.1}" x2="{:.1}" y1="{ym:.1}" y2="{ym:.1}" stroke="black" stroke-width="1.5"/>"#,
                x - 0.4 * box_w,
                x + 0.4 * box_w
            );
        }
    }
    if let Some(r) = reference {
        let y = axis.y(r);
        let _ = writeln!(
            svg,
            r#"<line x1="{x0}" x2="{x1}" y1="{y:.1}" y2="{y:.1}" stroke="red" stroke-dasharray="5,4"/>"#
        );
    }
    for (s, ser) in series.iter().enumerate() {
        let x = x0 + 10.0 + 130.0 * s as f64;
        let y = HEIGHT - 18.0;
        let color = PALETTE[s % PALETTE.len()];
        let _ = writeln!(svg, r#"<rect x="{x}" y="{}" width="12" height="12" fill="{color}"/>"#, y - 10.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{y}">{}</text>"#, x + 16.0, escape(&ser.label));
    }
    svg.push_str("</svg>\n");
    svg
}
