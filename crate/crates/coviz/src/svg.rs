//! Static SVG export of CORD payloads: one file per frame (`frame_00` is the
//! shared origin) plus `bars.svg`. Output is byte-deterministic.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use coviz_core::{BarChart, CordPayload, Frame, Rect, Viewport};

use crate::artifacts::write_bytes;
use crate::error::Result;

pub const EGO_FILL: &str = "#2e9e44";
pub const OTHER_FILL: &str = "#3767c8";
pub const FOIL_STROKE: &str = "#d7263d";
pub const ROAD_FILL: &str = "#5a5a5a";

/// Bar chart layout, in px.
pub const BAR_WIDTH: f64 = 22.0;
pub const BAR_GAP: f64 = 6.0;
pub const GROUP_GAP: f64 = 28.0;
pub const BAR_LEFT: f64 = 60.0;
pub const BAR_TOP: f64 = 30.0;
/// Height of the tallest bar; every other bar is proportional to it.
pub const BAR_MAX_PX: f64 = 150.0;
pub const BAR_LABEL_SPACE: f64 = 40.0;

fn num(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(out: &mut String, width: f64, height: f64) {
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = num(width),
        h = num(height)
    );
}

fn rect(out: &mut String, r: &Rect, attrs: &str) {
    let _ = writeln!(
        out,
        r#"  <rect x="{}" y="{}" width="{}" height="{}" {attrs}/>"#,
        num(r.cx - r.w / 2.0),
        num(r.cy - r.h / 2.0),
        num(r.w),
        num(r.h)
    );
}

pub fn frame_svg(viewport: &Viewport, frame: &Frame) -> String {
    let road = viewport.road_height(frame.lanes);
    let height = road + 2.0 * viewport.top;
    let mut out = String::new();
    header(&mut out, viewport.width, height);
    let _ = writeln!(out, r#"  <title>step offset {}</title>"#, frame.step_offset);
    let _ = writeln!(
        out,
        r#"  <rect x="0.00" y="{}" width="{}" height="{}" fill="{ROAD_FILL}"/>"#,
        num(viewport.top),
        num(viewport.width),
        num(road)
    );
    for lane in 1..frame.lanes {
        let y = viewport.top + viewport.lane_height * lane as f64;
        let _ = writeln!(
            out,
            r##"  <line x1="0.00" y1="{y}" x2="{w}" y2="{y}" stroke="#ffffff" stroke-dasharray="8 8"/>"##,
            y = num(y),
            w = num(viewport.width)
        );
    }
    for other in &frame.others {
        rect(&mut out, other, &format!(r#"class="other" fill="{OTHER_FILL}""#));
    }
    rect(&mut out, &frame.ego, &format!(r#"class="ego" fill="{EGO_FILL}""#));
    if let Some(foil) = &frame.foil {
        rect(
            &mut out,
            foil,
            &format!(r#"class="foil" fill="none" stroke="{FOIL_STROKE}" stroke-width="1.50""#),
        );
    }
    if let Some(marker) = &frame.crash_marker {
        let (x0, y0) = (marker.cx - marker.w / 2.0, marker.cy - marker.h / 2.0);
        let (x1, y1) = (marker.cx + marker.w / 2.0, marker.cy + marker.h / 2.0);
        let _ = writeln!(
            out,
            r#"  <path class="crash" d="M {} {} L {} {} M {} {} L {} {}" stroke="{FOIL_STROKE}" stroke-width="2.00"/>"#,
            num(x0),
            num(y0),
            num(x1),
            num(y1),
            num(x0),
            num(y1),
            num(x1),
            num(y0)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// px per reward unit for `chart`.
pub fn bar_scale(chart: &BarChart) -> f64 {
    let max = chart
        .bars
        .iter()
        .flat_map(|b| [b.fact_value.abs(), b.foil_value.abs()])
        .fold(0.0, f64::max);
    if max > 0.0 {
        BAR_MAX_PX / max
    } else {
        1.0
    }
}

/// Vertical bar chart with the zero line in the middle: positive values grow
/// up, negative values down.
pub fn bars_svg(chart: &BarChart) -> String {
    let scale = bar_scale(chart);
    let zero = BAR_TOP + BAR_MAX_PX;
    let group = 2.0 * BAR_WIDTH + BAR_GAP;
    let width = 2.0 * BAR_LEFT + chart.bars.len() as f64 * (group + GROUP_GAP);
    let height = zero + BAR_MAX_PX + BAR_LABEL_SPACE;
    let mut out = String::new();
    header(&mut out, width, height);
    let _ = writeln!(
        out,
        r#"  <title>{} vs {}</title>"#,
        escape(chart.fact_action.name()),
        escape(chart.foil_action.name())
    );
    let _ = writeln!(
        out,
        r##"  <line class="zero" x1="{}" y1="{z}" x2="{}" y2="{z}" stroke="#000000"/>"##,
        num(BAR_LEFT / 2.0),
        num(width - BAR_LEFT / 2.0),
        z = num(zero)
    );
    for (i, bar) in chart.bars.iter().enumerate() {
        let x = BAR_LEFT + i as f64 * (group + GROUP_GAP);
        for (series, value, fill, dx) in [
            ("fact", bar.fact_value, EGO_FILL, 0.0),
            ("foil", bar.foil_value, FOIL_STROKE, BAR_WIDTH + BAR_GAP),
        ] {
            let h = value.abs() * scale;
            let y = if value >= 0.0 { zero - h } else { zero };
            let _ = writeln!(
                out,
                r#"  <rect class="bar" data-component="{}" data-series="{series}" x="{}" y="{}" width="{}" height="{}" fill="{fill}"/>"#,
                escape(&bar.label),
                num(x + dx),
                num(y),
                num(BAR_WIDTH),
                num(h)
            );
        }
        let _ = writeln!(
            out,
            r#"  <text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
            num(x + group / 2.0),
            num(height - BAR_LABEL_SPACE / 2.0),
            escape(&bar.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// File name and contents of every SVG for `payload`.
pub fn payload_svgs(payload: &CordPayload) -> Vec<(String, String)> {
    let seq = &payload.frames;
    let mut files = vec![("frame_00.svg".to_string(), frame_svg(&seq.viewport, &seq.origin))];
    for frame in &seq.frames {
        files.push((format!("frame_{:02}.svg", frame.step_offset), frame_svg(&seq.viewport, frame)));
    }
    files.push(("bars.svg".into(), bars_svg(&payload.bars)));
    files
}

pub fn write_svgs(dir: &Path, payload: &CordPayload) -> Result<Vec<(PathBuf, String)>> {
    let mut written = Vec::new();
    for (name, text) in payload_svgs(payload) {
        let path = dir.join(name);
        write_bytes(&path, text.as_bytes())?;
        written.push((path, text));
    }
    Ok(written)
}
