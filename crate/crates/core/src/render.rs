//! Hypnogram step plots as text art and SVG.
//!
//! Rows run from Wake at the top through REM to the deepest NREM stage.
//! A reference hypnogram, when given, is drawn as a second panel on the
//! same time axis. Output depends only on the inputs.

use std::fmt::Write;

use crate::metrics::{Hypnogram, Strategy};
use crate::{Error, Result, EPOCH_SECONDS};

/// Classes of `strategy` from the top row of the plot to the bottom.
pub fn display_order(strategy: Strategy) -> Vec<usize> {
    let labels = strategy.labels();
    let mut order = vec![0];
    if let Some(rem) = labels.iter().position(|&l| l == "REM") {
        order.push(rem);
    }
    order.extend((1..labels.len()).filter(|&c| labels[c] != "REM"));
    order
}

/// Maximal runs of one class as `(start, len, class)`.
pub fn runs(h: &Hypnogram) -> Vec<(usize, usize, usize)> {
    let mut out: Vec<(usize, usize, usize)> = Vec::new();
    for (i, &c) in h.stages.iter().enumerate() {
        match out.last_mut() {
            Some(run) if run.2 == c => run.1 += 1,
            _ => out.push((i, 1, c)),
        }
    }
    out
}

fn check(h: &Hypnogram, reference: Option<&Hypnogram>) -> Result<()> {
    if h.is_empty() {
        return Err(Error::Shape("cannot render an empty hypnogram".into()));
    }
    if let Some(r) = reference {
        if r.strategy != h.strategy {
            return Err(Error::Config(format!(
                "reference is {} but hypnogram is {}",
                r.strategy, h.strategy
            )));
        }
        if r.is_empty() {
            return Err(Error::Shape("cannot render an empty reference".into()));
        }
    }
    Ok(())
}

/// Most frequent class among `stages`, lowest index on ties.
fn bucket_class(stages: &[usize], n_classes: usize) -> usize {
    let mut counts = vec![0usize; n_classes];
    for &s in stages {
        counts[s] += 1;
    }
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

fn text_panel(out: &mut String, title: &str, h: &Hypnogram, columns: usize, per_column: usize) {
    let order = display_order(h.strategy);
    let row_of: Vec<usize> = {
        let mut r = vec![0; order.len()];
        for (row, &c) in order.iter().enumerate() {
            r[c] = row;
        }
        r
    };
    let levels: Vec<usize> = (0..columns)
        .map(|col| {
            let lo = (col * per_column).min(h.len());
            let hi = ((col + 1) * per_column).min(h.len());
            if lo == hi {
                usize::MAX
            } else {
                row_of[bucket_class(&h.stages[lo..hi], h.strategy.n_classes())]
            }
        })
        .collect();
    let label_width = order
        .iter()
        .map(|&c| h.strategy.label(c).len())
        .max()
        .unwrap_or(1);
    let _ = writeln!(out, "{title}");
    for (row, &c) in order.iter().enumerate() {
        let _ = write!(out, "{:>label_width$} |", h.strategy.label(c));
        let mut line = String::with_capacity(columns);
        for (col, &level) in levels.iter().enumerate() {
            let prev = if col == 0 { level } else { levels[col - 1] };
            let ch = if level == usize::MAX {
                ' '
            } else if level == row {
                '#'
            } else if prev != usize::MAX && row > prev.min(level) && row < prev.max(level) {
                '|'
            } else {
                ' '
            };
            line.push(ch);
        }
        let _ = writeln!(out, "{}", line.trim_end());
    }
}

/// Text step plot at most `width` characters wide (plus the label column).
/// Each character covers the same number of epochs and shows their modal
/// stage.
pub fn render_text(h: &Hypnogram, reference: Option<&Hypnogram>, width: usize) -> Result<String> {
    check(h, reference)?;
    let width = width.max(1);
    let n = h.len().max(reference.map_or(0, Hypnogram::len));
    let per_column = n.div_ceil(width);
    let columns = n.div_ceil(per_column);
    let mut out = String::new();
    text_panel(&mut out, "predicted", h, columns, per_column);
    if let Some(r) = reference {
        out.push('\n');
        text_panel(&mut out, "reference", r, columns, per_column);
    }
    let hours = n as f64 * EPOCH_SECONDS / 3600.0;
    let _ = writeln!(
        out,
        "{} epochs ({hours:.2} h), {} epoch(s) per column",
        n, per_column
    );
    Ok(out)
}

const SVG_WIDTH: f64 = 800.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 10.0;
const TOP: f64 = 24.0;
const ROW: f64 = 22.0;
const GAP: f64 = 30.0;
const AXIS: f64 = 28.0;

fn svg_panel(out: &mut String, title: &str, h: &Hypnogram, y0: f64, x_per_epoch: f64) {
    let order = display_order(h.strategy);
    let mut row_of = vec![0; order.len()];
    for (row, &c) in order.iter().enumerate() {
        row_of[c] = row;
    }
    let y_of = |c: usize| y0 + (row_of[c] as f64 + 0.5) * ROW;
    let _ = writeln!(
        out,
        r#"<text x="{LEFT:.1}" y="{:.1}" font-size="12">{title}</text>"#,
        y0 - 6.0
    );
    for (row, &c) in order.iter().enumerate() {
        let y = y0 + (row as f64 + 0.5) * ROW;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end" dominant-baseline="middle">{}</text>"#,
            LEFT - 6.0,
            y,
            h.strategy.label(c)
        );
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd" stroke-width="0.5"/>"##,
            SVG_WIDTH - RIGHT
        );
    }
    let mut d = String::new();
    for (k, &(start, len, c)) in runs(h).iter().enumerate() {
        let x0 = LEFT + start as f64 * x_per_epoch;
        let x1 = LEFT + (start + len) as f64 * x_per_epoch;
        let y = y_of(c);
        if k == 0 {
            let _ = write!(d, "M{x0:.2},{y:.2}");
        } else {
            let _ = write!(d, " V{y:.2}");
        }
        let _ = write!(d, " H{x1:.2}");
    }
    let _ = writeln!(
        out,
        r##"<path d="{d}" fill="none" stroke="#1f4e79" stroke-width="1.5"/>"##
    );
}

/// SVG step plot; one panel, or two when `reference` is given.
pub fn render_svg(h: &Hypnogram, reference: Option<&Hypnogram>) -> Result<String> {
    check(h, reference)?;
    let n = h.len().max(reference.map_or(0, Hypnogram::len));
    let x_per_epoch = (SVG_WIDTH - LEFT - RIGHT) / n as f64;
    let panel = h.strategy.n_classes() as f64 * ROW;
    let panels = if reference.is_some() { 2.0 } else { 1.0 };
    let height = TOP + panels * panel + (panels - 1.0) * GAP + AXIS;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH:.0}" height="{height:.0}" viewBox="0 0 {SVG_WIDTH:.0} {height:.0}" font-family="sans-serif">"#
    );
    svg_panel(&mut out, "predicted", h, TOP, x_per_epoch);
    if let Some(r) = reference {
        svg_panel(&mut out, "reference", r, TOP + panel + GAP, x_per_epoch);
    }
    let axis_y = height - AXIS + 8.0;
    let hours = n as f64 * EPOCH_SECONDS / 3600.0;
    let tick = if hours > 4.0 { 1.0 } else { 0.5 };
    let mut t = 0.0;
    while t <= hours + 1e-9 {
        let x = LEFT + t * 3600.0 / EPOCH_SECONDS * x_per_epoch;
        let _ = writeln!(
            out,
            r#"<text x="{x:.1}" y="{:.1}" font-size="10" text-anchor="middle">{t}h</text>"#,
            axis_y + 10.0
        );
        t += tick;
    }
    out.push_str("</svg>\n");
    Ok(out)
}
