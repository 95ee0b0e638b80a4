//! Log-log SVG plots of sweep tables and fitted models.
//!
//! Output is plain SVG 1.1 written by hand so that the same input always
//! gives the same bytes. Points that cannot go on a log axis are dropped
//! and reported in the file's `<metadata>`.

use std::fmt::Write as _;

use brinkman_core::analysis::LINEAR_REGIME_MAX_V;
use brinkman_core::calibration::{interpolate_alpha, predict_alpha_max, FitModel, SweepTable};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const MAX_TICKS: i32 = 12;
const CURVE_SAMPLES: usize = 64;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

/// Default target exponents for fit plots.
pub const DEFAULT_PLOT_Q: [f64; 4] = [-6.0, -8.0, -10.0, -12.0];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub line: bool,
    pub markers: bool,
    /// Vertical bars `(x, y0, y1)`.
    pub bars: Vec<(f64, f64, f64)>,
    pub color: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LogPlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub warnings: Vec<String>,
}

fn loggable(x: f64, y: f64) -> bool {
    x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite()
}

impl LogPlot {
    /// Adds a series, dropping points and bars that have a non-positive coordinate.
    pub fn push(&mut self, mut s: Series) {
        let n = s.points.len() + s.bars.len();
        s.points.retain(|&(x, y)| loggable(x, y));
        s.bars.retain(|&(x, a, b)| loggable(x, a) && loggable(x, b));
        let dropped = n - s.points.len() - s.bars.len();
        if dropped > 0 {
            self.warnings.push(format!(
                "{}: skipped {dropped} non-positive or non-finite value(s)",
                s.label
            ));
        }
        if s.points.is_empty() {
            self.warnings
                .push(format!("{}: no plottable points", s.label));
            return;
        }
        self.series.push(s);
    }

    fn decades(&self) -> Option<((i32, i32), (i32, i32))> {
        let pts = self.series.iter().flat_map(|s| {
            s.points
                .iter()
                .copied()
                .chain(s.bars.iter().flat_map(|&(x, a, b)| [(x, a), (x, b)]))
        });
        let (mut x0, mut x1, mut y0, mut y1) = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        for (x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if x0 > x1 {
            return None;
        }
        let span = |lo: f64, hi: f64| {
            let (a, mut b) = (lo.log10().floor() as i32, hi.log10().ceil() as i32);
            if a == b {
                b += 1;
            }
            (a, b)
        };
        Some((span(x0, x1), span(y0, y1)))
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, "<title>{}</title>", esc(&self.title));
        let _ = writeln!(s, "<metadata>");
        if self.warnings.is_empty() {
            let _ = writeln!(s, "no warnings");
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {}", esc(w));
        }
        let _ = writeln!(s, "</metadata>");
        let _ = writeln!(
            s,
            r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
        );

        let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
            LEFT + pw / 2.0,
            esc(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 16.0,
            esc(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            esc(&self.y_label)
        );

        let Some(((xa, xb), (ya, yb))) = self.decades() else {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">no data</text>"#,
                LEFT + pw / 2.0,
                TOP + ph / 2.0
            );
            s.push_str("</svg>\n");
            return s;
        };
        let px = |x: f64| LEFT + (x.log10() - xa as f64) / (xb - xa) as f64 * pw;
        let py = |y: f64| TOP + ph - (y.log10() - ya as f64) / (yb - ya) as f64 * ph;

        let step = |a: i32, b: i32| ((b - a) + MAX_TICKS - 1) / MAX_TICKS;
        let _ = writeln!(s, r##"<g stroke="#dddddd">"##);
        for k in (xa..=xb).step_by(step(xa, xb) as usize) {
            let x = LEFT + (k - xa) as f64 / (xb - xa) as f64 * pw;
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}"/>"#,
                TOP + ph
            );
        }
        for k in (ya..=yb).step_by(step(ya, yb) as usize) {
            let y = TOP + ph - (k - ya) as f64 / (yb - ya) as f64 * ph;
            let _ = writeln!(
                s,
                r#"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}"/>"#,
                LEFT + pw
            );
        }
        let _ = writeln!(s, "</g>");
        for k in (xa..=xb).step_by(step(xa, xb) as usize) {
            let x = LEFT + (k - xa) as f64 / (xb - xa) as f64 * pw;
            let _ = writeln!(
                s,
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">1e{k}</text>"#,
                TOP + ph + 18.0
            );
        }
        for k in (ya..=yb).step_by(step(ya, yb) as usize) {
            let y = TOP + ph - (k - ya) as f64 / (yb - ya) as f64 * ph;
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{k}</text>"#,
                LEFT - 6.0,
                y + 4.0
            );
        }

        for series in &self.series {
            let color = PALETTE[series.color % PALETTE.len()];
            if series.line && series.points.len() > 1 {
                let pts: Vec<String> = series
                    .points
                    .iter()
                    .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                    .collect();
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                    pts.join(" ")
                );
            }
            for &(x, a, b) in &series.bars {
                let (x, a, b) = (px(x), py(a), py(b));
                let _ = writeln!(
                    s,
                    r#"<path fill="none" stroke="{color}" d="M{x:.2},{a:.2}V{b:.2}M{:.2},{a:.2}H{:.2}M{:.2},{b:.2}H{:.2}"/>"#,
                    x - 4.0,
                    x + 4.0,
                    x - 4.0,
                    x + 4.0
                );
            }
            if series.markers {
                for &(x, y) in &series.points {
                    let _ = writeln!(
                        s,
                        r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                        px(x),
                        py(y)
                    );
                }
            }
        }

        let lx = LEFT + pw + 16.0;
        for (i, series) in self.series.iter().enumerate() {
            let color = PALETTE[series.color % PALETTE.len()];
            let y = TOP + 10.0 + 18.0 * i as f64;
            if series.line {
                let _ = writeln!(
                    s,
                    r#"<line x1="{lx:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="1.5"/>"#,
                    lx + 20.0
                );
            }
            if series.markers {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#,
                    lx + 10.0
                );
            }
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
                lx + 26.0,
                y + 4.0,
                esc(&series.label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn fmt_value(x: f64) -> String {
    format!("{x:.4}")
        .trim_end_matches('0')
        .trim_end_matches('.')
        .to_string()
}

/// max|v_solid| against alpha_max, one series per parameter value.
pub fn loglog_sweep(table: &SweepTable) -> LogPlot {
    let mut plot = LogPlot {
        title: format!("Leakage over alpha_max, {} sweep", table.param),
        x_label: "alpha_max".into(),
        y_label: "max |v_solid|".into(),
        ..Default::default()
    };
    for r in table.rows.iter().filter(|r| r.record.is_none()) {
        plot.warnings.push(format!(
            "{} = {}, alpha_max = {:e}: failed cell left out",
            table.param, r.param_value, r.alpha_max
        ));
    }
    for (i, x) in table.param_values().into_iter().enumerate() {
        let points = table
            .records_for(x)
            .iter()
            .map(|r| (r.alpha_max, r.max_v_solid))
            .collect();
        plot.push(Series {
            label: format!("{} = {}", table.param, fmt_value(x)),
            points,
            line: true,
            markers: true,
            bars: Vec::new(),
            color: i,
        });
    }
    plot
}

/// alpha_max against the parameter at fixed leakage targets: sweep data
/// as markers, the model as curves. With `bars`, each data point also
/// gets a bar from the model value to the data value, whose length is
/// `|alpha_data - alpha_model|`.
pub fn fit_plot(table: &SweepTable, model: &FitModel, q_values: &[f64], bars: bool) -> LogPlot {
    let mut plot = LogPlot {
        title: format!("{} against {} sweep", model.kind.name(), table.param),
        x_label: table.param.to_string(),
        y_label: "alpha_max".into(),
        ..Default::default()
    };
    let xs = table.param_values();
    let (lo, hi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    for (i, &q) in q_values.iter().enumerate() {
        let mut data = Vec::new();
        let mut err_bars = Vec::new();
        for &x in &xs {
            let recs: Vec<_> = table
                .records_for(x)
                .into_iter()
                .filter(|r| r.is_loggable() && r.max_v_solid <= LINEAR_REGIME_MAX_V)
                .collect();
            let Some(alpha) = interpolate_alpha(&recs, q) else {
                plot.warnings.push(format!(
                    "{} = {x}, q = {q}: not bracketed by sweep data",
                    table.param
                ));
                continue;
            };
            data.push((x, alpha));
            if bars {
                match predict_alpha_max(model, x, q) {
                    Ok(m) => err_bars.push((x, m, alpha)),
                    Err(e) => plot
                        .warnings
                        .push(format!("{} = {x}, q = {q}: {e}", table.param)),
                }
            }
        }
        let n = if lo < hi { CURVE_SAMPLES } else { 1 };
        let curve = (0..n)
            .filter_map(|k| {
                let t = if n > 1 {
                    k as f64 / (n - 1) as f64
                } else {
                    0.0
                };
                let x = lo * (hi / lo).powf(t);
                predict_alpha_max(model, x, q).ok().map(|a| (x, a))
            })
            .collect();
        plot.push(Series {
            label: format!("q = {q} data"),
            points: data,
            line: false,
            markers: true,
            bars: err_bars,
            color: i,
        });
        plot.push(Series {
            label: format!("q = {q} model"),
            points: curve,
            line: true,
            markers: false,
            bars: Vec::new(),
            color: i,
        });
    }
    plot
}
