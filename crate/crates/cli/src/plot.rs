use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use margin_audit::decompose::term_key;
use margin_audit::{DecompositionReport, EffectKind, Interval, Target};

const INHERITED_COLOR: &str = "#4C72B0";
const MARGIN_COLOR: &str = "#DD8452";
const TV_COLOR: &str = "#555555";

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

struct Bar {
    group: &'static str,
    term: String,
    value: f64,
    ci: Option<Interval>,
    color: &'static str,
}

fn fmt(v: f64) -> String {
    let s = format!("{v:.6}");
    match s.strip_prefix('-') {
        Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => rest.to_string(),
        _ => s,
    }
}

fn ci_strings(ci: Option<Interval>) -> (String, String) {
    ci.map(|c| (fmt(c.low), fmt(c.high))).unwrap_or_default()
}

/// Signed contributions to TV(ŷ) (DE, -IE, -SE) of the inherited variable and
/// of M, then TV(ŷ) itself.
fn bars(report: &DecompositionReport) -> Vec<Bar> {
    let inherited = report.mode.inherited();
    let mut out = vec![];
    for kind in EffectKind::PATHWAYS {
        for (target, color) in [(inherited, INHERITED_COLOR), (Target::M, MARGIN_COLOR)] {
            if let Some(c) = report.contributions.iter().find(|c| c.kind == kind && c.target == target) {
                out.push(Bar {
                    group: kind.name(),
                    term: term_key(kind, target),
                    value: c.value,
                    ci: c.ci,
                    color,
                });
            }
        }
    }
    out.push(Bar {
        group: "TV",
        term: term_key(EffectKind::Tv, Target::Yhat),
        value: report.tv_yhat.value,
        ci: report.tv_yhat.ci,
        color: TV_COLOR,
    });
    out
}

fn csv(bars: &[Bar]) -> String {
    let mut s = String::from("term,value,ci_low,ci_high\n");
    for b in bars {
        let (lo, hi) = ci_strings(b.ci);
        let _ = writeln!(s, "{},{},{lo},{hi}", b.term, fmt(b.value));
    }
    s
}

fn svg(bars: &[Bar], inherited: Target) -> String {
    let mut lo: f64 = 0.0;
    let mut hi: f64 = 0.0;
    for b in bars {
        lo = lo.min(b.value);
        hi = hi.max(b.value);
        if let Some(c) = b.ci {
            lo = lo.min(c.low);
            hi = hi.max(c.high);
        }
    }
    if hi - lo < 1e-9 {
        hi = lo + 1e-3;
    }
    let pad = 0.08 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let plot_h = HEIGHT - TOP - BOTTOM;
    let y = |v: f64| TOP + (hi - v) / (hi - lo) * plot_h;

    let groups = ["DE", "IE", "SE", "TV"];
    let group_w = (WIDTH - LEFT - RIGHT) / groups.len() as f64;
    let bar_w = group_w * 0.3;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">Contributions to TV(yhat)</text>"#,
        WIDTH / 2.0
    );
    // axis with a handful of ticks
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>"#, TOP + plot_h);
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let yy = y(v);
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{yy:.2}" x2="{LEFT}" y2="{yy:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
            LEFT - 4.0,
            LEFT - 6.0,
            yy + 4.0
        );
    }
    let _ = writeln!(
        s,
        r##"<line x1="{LEFT}" y1="{0:.2}" x2="{1}" y2="{0:.2}" stroke="#888888" stroke-dasharray="4 3"/>"##,
        y(0.0),
        WIDTH - RIGHT
    );

    for (gi, g) in groups.iter().enumerate() {
        let members: Vec<&Bar> = bars.iter().filter(|b| b.group == *g).collect();
        let gx = LEFT + gi as f64 * group_w;
        let total = members.len() as f64 * bar_w;
        for (k, b) in members.iter().enumerate() {
            let x = gx + (group_w - total) / 2.0 + k as f64 * bar_w;
            let (top, bottom) = (y(b.value.max(0.0)), y(b.value.min(0.0)));
            let (ci_lo, ci_hi) = ci_strings(b.ci);
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{}" data-term="{}" data-value="{}" data-ci-low="{ci_lo}" data-ci-high="{ci_hi}"/>"#,
                bar_w * 0.9,
                (bottom - top).max(0.5),
                b.color,
                b.term,
                fmt(b.value),
            );
            if let Some(c) = b.ci {
                let cx = x + bar_w * 0.45;
                let (y1, y2) = (y(c.high), y(c.low));
                let _ = writeln!(
                    s,
                    r#"<path d="M{:.2} {y1:.2}H{:.2}M{cx:.2} {y1:.2}V{y2:.2}M{:.2} {y2:.2}H{:.2}" stroke="black" fill="none"/>"#,
                    cx - 5.0,
                    cx + 5.0,
                    cx - 5.0,
                    cx + 5.0
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{g}</text>"#,
            gx + group_w / 2.0,
            TOP + plot_h + 18.0
        );
    }

    let ly = HEIGHT - 16.0;
    for (i, (label, color)) in [(inherited.name(), INHERITED_COLOR), ("m", MARGIN_COLOR), ("TV(yhat)", TV_COLOR)]
        .iter()
        .enumerate()
    {
        let lx = LEFT + i as f64 * 110.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{}" width="12" height="12" fill="{color}"/><text x="{}" y="{ly}">{label}</text>"#,
            ly - 10.0,
            lx + 16.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

/// Writes `<prefix>.svg` and `<prefix>.csv`.
pub fn write(prefix: &Path, report: &DecompositionReport) -> Result<()> {
    let bars = bars(report);
    for (ext, body) in [(".svg", svg(&bars, report.mode.inherited())), (".csv", csv(&bars))] {
        let path = with_suffix(prefix, ext);
        fs::write(&path, body).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}
