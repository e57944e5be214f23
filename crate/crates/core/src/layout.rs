//! Renderer-independent geometry for the three drill-down views.
//!
//! Coordinates are abstract units: the overview circle has radius [`RADIUS`], lane
//! segments are spaced [`LANE_STEP`] apart. Angles are radians, measured from the
//! positive x axis with y growing downward (screen convention).

use std::f64::consts::TAU;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifiedRequest, ConstraintVerdict, Level, Level1Result, LevelStatus};
use crate::error::LayoutError;
use crate::model::{ControlSpec, ControlType, DestinationGroup, FormStructure, stable_digest};

pub const RADIUS: f64 = 100.0;
pub const LANE_STEP: f64 = 20.0;
pub const STRUCTURE_LANE_X: f64 = 0.0;
pub const REQUEST_LANE_X: f64 = 160.0;
const SEGMENT_HALF_WIDTH: f64 = 30.0;
const ORBIT: f64 = 90.0;

pub const UNKNOWN_DESTINATION: &str = "unknown destination";
pub const UNKNOWN_GROUP_ID: &str = "unknown";

/// Status colors; the constraint colors are the green/red of the detail view.
pub mod palette {
    use crate::classifier::LevelStatus;

    pub const NORMAL: &str = "#6b8caf";
    pub const DEEP_ANOMALY: &str = "#e69f00";
    pub const VIOLATION: &str = "#d62728";
    pub const SATISFIED: &str = "#2ca02c";
    pub const VIOLATED: &str = "#d62728";
    pub const SECTOR: &str = "#eef2f6";
    pub const DUMMY_SECTOR: &str = "#4a4a4a";

    pub fn status(s: LevelStatus) -> &'static str {
        match s {
            LevelStatus::Normal => NORMAL,
            LevelStatus::DeepAnomaly => DEEP_ANOMALY,
            LevelStatus::Violation => VIOLATION,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sector {
    pub index: usize,
    pub start_angle: f64,
    pub angular_span: f64,
    pub label: String,
    pub form_id: Option<String>,
    pub is_dummy: bool,
    pub fill: String,
}

impl Sector {
    /// Strict containment of an angle in `(start, start + span)`.
    pub fn contains(&self, angle: f64) -> bool {
        angle > self.start_angle && angle < self.start_angle + self.angular_span
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Glyph {
    pub request_id: String,
    pub sector_index: usize,
    pub angle: f64,
    pub radial_distance: f64,
    pub position: Point,
    pub status: LevelStatus,
    pub status_color: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircleScene {
    pub group_id: String,
    pub destination: String,
    pub center: Point,
    pub radius: f64,
    pub sectors: Vec<Sector>,
    pub glyphs: Vec<Glyph>,
}

impl CircleScene {
    pub fn dummy_index(&self) -> usize {
        self.sectors.len() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentStyle {
    Solid,
    Dashed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Downward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneSegment {
    /// Control order index on the structure lane, param index on the request lane.
    pub index: usize,
    pub y_position: f64,
    pub style: SegmentStyle,
    pub label: String,
    pub status: LevelStatus,
    pub color: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub x_position: f64,
    pub direction: Direction,
    pub length: f64,
    pub segments: Vec<LaneSegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneScene {
    pub form_id: String,
    pub request_id: String,
    pub structure_lane: Lane,
    pub request_lane: Lane,
    /// `(param index, control order_index)`.
    pub links: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fill {
    Green,
    Red,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlBox {
    pub name: String,
    pub control_type: ControlType,
    pub observed_value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintEllipse {
    pub label: String,
    pub angle: f64,
    pub center: Point,
    pub fill: Fill,
    pub color: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetailScene {
    pub order_index: usize,
    pub rectangle: ControlBox,
    pub ellipses: Vec<ConstraintEllipse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "level", content = "scene")]
pub enum Scene {
    Overview(CircleScene),
    Form(LaneScene),
    Control(DetailScene),
}

fn unit_interval(bytes: &[u8]) -> f64 {
    let mut b = [0u8; 8];
    b.copy_from_slice(&bytes[..8]);
    (u64::from_be_bytes(b) >> 11) as f64 / (1u64 << 53) as f64
}

/// Deterministic placement offsets for a request id: (jitter in [-0.5, 0.5), radial t in [0, 1)).
pub fn placement_hash(request_id: &str) -> (f64, f64) {
    let digest = stable_digest(&[request_id]);
    (unit_interval(&digest[0..8]) - 0.5, unit_interval(&digest[8..16]))
}

/// Sector `i` of `n` equal sectors.
pub fn sector_bounds(i: usize, n: usize) -> (f64, f64) {
    let span = TAU / n as f64;
    (TAU * i as f64 / n as f64, span)
}

fn place(request_id: &str, sector: &Sector) -> (f64, f64) {
    let (jitter, t) = placement_hash(request_id);
    let angle = sector.start_angle + sector.angular_span * (0.5 + 0.9 * jitter);
    let radial = RADIUS * (0.3 + 0.65 * t);
    (angle, radial)
}

fn circle_sectors(labels: Vec<(String, Option<String>)>) -> Vec<Sector> {
    let n = labels.len() + 1;
    let mut sectors: Vec<Sector> = labels
        .into_iter()
        .enumerate()
        .map(|(i, (label, form_id))| {
            let (start_angle, angular_span) = sector_bounds(i, n);
            Sector {
                index: i,
                start_angle,
                angular_span,
                label,
                form_id,
                is_dummy: false,
                fill: palette::SECTOR.into(),
            }
        })
        .collect();
    let (start_angle, angular_span) = sector_bounds(n - 1, n);
    sectors.push(Sector {
        index: n - 1,
        start_angle,
        angular_span,
        label: "abnormal".into(),
        form_id: None,
        is_dummy: true,
        fill: palette::DUMMY_SECTOR.into(),
    });
    sectors
}

fn glyph(request: &ClassifiedRequest, sector: &Sector) -> Glyph {
    let (angle, radial_distance) = place(&request.request.request_id, sector);
    let status = request.status(Level::L1).unwrap_or(LevelStatus::Violation);
    Glyph {
        request_id: request.request.request_id.clone(),
        sector_index: sector.index,
        angle,
        radial_distance,
        position: Point { x: radial_distance * angle.cos(), y: radial_distance * angle.sin() },
        status,
        status_color: palette::status(status).into(),
    }
}

/// Circle-of-forms view for one destination group.
pub fn layout_overview(group: &DestinationGroup, classified: &[ClassifiedRequest]) -> Result<CircleScene, LayoutError> {
    let labels =
        group.forms.iter().map(|f| (format!("{} from {}", f.method, f.source_page), Some(f.form_id.clone()))).collect();
    let sectors = circle_sectors(labels);
    let dummy = sectors.len() - 1;
    let mut glyphs = Vec::with_capacity(classified.len());
    for c in classified {
        let foreign = || LayoutError::ForeignRequest {
            destination: group.destination_page.to_string(),
            request_id: c.request.request_id.clone(),
        };
        let index = match &c.l1 {
            Level1Result::Matched { form_id, .. } => {
                group.forms.iter().position(|f| &f.form_id == form_id).ok_or_else(foreign)?
            }
            Level1Result::Dummy { destination: Some(d), .. } if d == &group.destination_page => dummy,
            Level1Result::Dummy { .. } => return Err(foreign()),
        };
        glyphs.push(glyph(c, &sectors[index]));
    }
    Ok(CircleScene {
        group_id: group.group_id(),
        destination: group.destination_page.to_string(),
        center: Point { x: 0.0, y: 0.0 },
        radius: RADIUS,
        sectors,
        glyphs,
    })
}

/// Overview for requests whose destination belongs to no group: a circle with only
/// the dummy area.
pub fn layout_unknown(classified: &[ClassifiedRequest]) -> Result<CircleScene, LayoutError> {
    let sectors = circle_sectors(Vec::new());
    let mut glyphs = Vec::with_capacity(classified.len());
    for c in classified {
        if !matches!(c.l1, Level1Result::Dummy { destination: None, .. }) {
            return Err(LayoutError::ForeignRequest {
                destination: UNKNOWN_DESTINATION.into(),
                request_id: c.request.request_id.clone(),
            });
        }
        glyphs.push(glyph(c, &sectors[0]));
    }
    Ok(CircleScene {
        group_id: UNKNOWN_GROUP_ID.into(),
        destination: UNKNOWN_DESTINATION.into(),
        center: Point { x: 0.0, y: 0.0 },
        radius: RADIUS,
        sectors,
        glyphs,
    })
}

fn truncate(s: &str, max: usize) -> String {
    if s.chars().count() <= max {
        s.to_string()
    } else {
        let mut t: String = s.chars().take(max).collect();
        t.push('…');
        t
    }
}

fn lane_length(n: usize) -> f64 {
    (n + 1) as f64 * LANE_STEP
}

/// Form lane view: the declared control sequence beside the submitted one.
pub fn layout_form(form: &FormStructure, classified: &ClassifiedRequest) -> Result<LaneScene, LayoutError> {
    let mismatch = || LayoutError::FormMismatch {
        form_id: form.form_id.clone(),
        request_id: classified.request.request_id.clone(),
    };
    if classified.l1.form_id() != Some(form.form_id.as_str()) {
        return Err(mismatch());
    }
    let diff = classified.l2.as_ref().ok_or_else(mismatch)?;
    let failed_param = |pi: usize| classified.l3.iter().any(|c| c.param_index == pi && c.failed());
    let matched_control = |oi: usize| diff.matched.iter().any(|&(_, o)| o == oi);

    let mut controls: Vec<&ControlSpec> = form.controls.iter().collect();
    controls.sort_by_key(|c| c.order_index);
    let structure_segments = controls
        .iter()
        .map(|c| {
            let status = if c.mandatory && !matched_control(c.order_index) {
                LevelStatus::Violation
            } else {
                LevelStatus::Normal
            };
            LaneSegment {
                index: c.order_index,
                y_position: (c.order_index + 1) as f64 * LANE_STEP,
                style: if c.mandatory { SegmentStyle::Solid } else { SegmentStyle::Dashed },
                label: format!("{} ({})", c.name, c.control_type),
                status,
                color: palette::status(status).into(),
            }
        })
        .collect::<Vec<_>>();
    let request_segments = classified
        .request
        .params
        .iter()
        .enumerate()
        .map(|(pi, (name, value))| {
            let matched = diff.matched.iter().any(|&(p, _)| p == pi);
            let status = if !matched {
                LevelStatus::Violation
            } else if failed_param(pi) {
                LevelStatus::DeepAnomaly
            } else {
                LevelStatus::Normal
            };
            LaneSegment {
                index: pi,
                y_position: (pi + 1) as f64 * LANE_STEP,
                style: SegmentStyle::Solid,
                label: format!("{name}={}", truncate(value, 24)),
                status,
                color: palette::status(status).into(),
            }
        })
        .collect::<Vec<_>>();
    Ok(LaneScene {
        form_id: form.form_id.clone(),
        request_id: classified.request.request_id.clone(),
        structure_lane: Lane {
            x_position: STRUCTURE_LANE_X,
            direction: Direction::Downward,
            length: lane_length(structure_segments.len()),
            segments: structure_segments,
        },
        request_lane: Lane {
            x_position: REQUEST_LANE_X,
            direction: Direction::Downward,
            length: lane_length(request_segments.len()),
            segments: request_segments,
        },
        links: diff.matched.clone(),
    })
}

/// Control detail view: the control in a box, one ellipse per constraint around it.
pub fn layout_control(
    control: &ControlSpec,
    observed: &str,
    verdicts: &[ConstraintVerdict],
) -> Result<DetailScene, LayoutError> {
    if verdicts.len() != control.constraints.len() {
        return Err(LayoutError::VerdictCount { constraints: control.constraints.len(), verdicts: verdicts.len() });
    }
    let m = verdicts.len();
    let ellipses = control
        .constraints
        .iter()
        .zip(verdicts)
        .enumerate()
        .map(|(j, (constraint, verdict))| {
            let angle = TAU * j as f64 / m as f64;
            let fill = if verdict.satisfied { Fill::Green } else { Fill::Red };
            ConstraintEllipse {
                label: constraint.label(),
                angle,
                center: Point { x: ORBIT * angle.cos(), y: ORBIT * angle.sin() },
                fill,
                color: match fill {
                    Fill::Green => palette::SATISFIED.into(),
                    Fill::Red => palette::VIOLATED.into(),
                },
            }
        })
        .collect();
    Ok(DetailScene {
        order_index: control.order_index,
        rectangle: ControlBox {
            name: control.name.clone(),
            control_type: control.control_type,
            observed_value: observed.to_string(),
        },
        ellipses,
    })
}

fn esc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c if (c as u32) < 0x20 && c != '\t' && c != '\n' => out.push('\u{fffd}'),
            c => out.push(c),
        }
    }
    out
}

fn f(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" { "0.000".into() } else { s }
}

const SVG_HEAD: &str = r#"<?xml version="1.0" encoding="UTF-8"?>"#;

/// Standalone SVG for a scene. Element ids embed request ids, form ids and
/// order indices; output depends only on the scene.
pub fn render_svg(scene: &Scene) -> String {
    match scene {
        Scene::Overview(s) => render_circle(s),
        Scene::Form(s) => render_lanes(s),
        Scene::Control(s) => render_detail(s),
    }
}

fn sector_path(s: &Sector, r: f64) -> String {
    if s.angular_span >= TAU - 1e-12 {
        // a single sector: full disc drawn as two half arcs
        return format!("M {} 0.000 A {r} {r} 0 1 1 {} 0.000 A {r} {r} 0 1 1 {} 0.000 Z", f(r), f(-r), f(r), r = f(r));
    }
    let (a0, a1) = (s.start_angle, s.start_angle + s.angular_span);
    let large = if s.angular_span > std::f64::consts::PI { 1 } else { 0 };
    format!(
        "M 0.000 0.000 L {} {} A {r} {r} 0 {large} 1 {} {} Z",
        f(r * a0.cos()),
        f(r * a0.sin()),
        f(r * a1.cos()),
        f(r * a1.sin()),
        r = f(r)
    )
}

fn render_circle(s: &CircleScene) -> String {
    let mut out = String::new();
    let half = s.radius + 40.0;
    writeln!(out, "{SVG_HEAD}").unwrap();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{} {} {} {}" data-group="{}">"#,
        f(-half),
        f(-half),
        f(2.0 * half),
        f(2.0 * half),
        esc(&s.group_id)
    )
    .unwrap();
    for sector in &s.sectors {
        let class = if sector.is_dummy { "sector dummy" } else { "sector" };
        let form = sector.form_id.as_deref().map(|id| format!(r#" data-form="{}""#, esc(id))).unwrap_or_default();
        writeln!(
            out,
            r##"<path id="sector-{}" class="{class}"{form} d="{}" fill="{}" stroke="#ffffff" stroke-width="1"><title>{}</title></path>"##,
            sector.index,
            sector_path(sector, s.radius),
            esc(&sector.fill),
            esc(&sector.label)
        )
        .unwrap();
    }
    for g in &s.glyphs {
        writeln!(
            out,
            r#"<circle id="glyph-{}" class="glyph" data-sector="{}" cx="{}" cy="{}" r="3.000" fill="{}"/>"#,
            esc(&g.request_id),
            g.sector_index,
            f(g.position.x),
            f(g.position.y),
            esc(&g.status_color)
        )
        .unwrap();
    }
    writeln!(
        out,
        r##"<circle id="center" class="destination" cx="{}" cy="{}" r="8.000" fill="#1f3b57"/>"##,
        f(s.center.x),
        f(s.center.y)
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="8">{}</text>"#,
        f(s.center.x),
        f(s.center.y - s.radius - 10.0),
        esc(&s.destination)
    )
    .unwrap();
    out.push_str("</svg>\n");
    out
}

fn arrow(out: &mut String, x: f64, y: f64) {
    writeln!(
        out,
        r##"<polygon class="arrow" points="{},{} {},{} {},{}" fill="#333333"/>"##,
        f(x - 4.0),
        f(y - 6.0),
        f(x + 4.0),
        f(y - 6.0),
        f(x),
        f(y)
    )
    .unwrap();
}

fn render_lanes(s: &LaneScene) -> String {
    let mut out = String::new();
    let height = s.structure_lane.length.max(s.request_lane.length) + 20.0;
    writeln!(out, "{SVG_HEAD}").unwrap();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="-120.000 -20.000 400.000 {}" data-form="{}" data-request="{}">"#,
        f(height + 20.0),
        esc(&s.form_id),
        esc(&s.request_id)
    )
    .unwrap();
    for (id, lane) in [("lane-structure", &s.structure_lane), ("lane-request", &s.request_lane)] {
        writeln!(
            out,
            r##"<line id="{id}" class="lane" x1="{x}" y1="0.000" x2="{x}" y2="{}" stroke="#333333" stroke-width="2"/>"##,
            f(lane.length),
            x = f(lane.x_position)
        )
        .unwrap();
        arrow(&mut out, lane.x_position, lane.length);
    }
    for &(pi, oi) in &s.links {
        let ys = s.structure_lane.segments.iter().find(|x| x.index == oi).map(|x| x.y_position);
        let yr = s.request_lane.segments.iter().find(|x| x.index == pi).map(|x| x.y_position);
        if let (Some(ys), Some(yr)) = (ys, yr) {
            writeln!(
                out,
                r##"<path id="link-{pi}-{oi}" class="link" d="M {} {} L {} {}" stroke="#999999" fill="none"/>"##,
                f(s.structure_lane.x_position + SEGMENT_HALF_WIDTH),
                f(ys),
                f(s.request_lane.x_position - SEGMENT_HALF_WIDTH),
                f(yr)
            )
            .unwrap();
        }
    }
    for (prefix, lane, anchor, dx) in [
        ("control", &s.structure_lane, "end", -SEGMENT_HALF_WIDTH - 4.0),
        ("param", &s.request_lane, "start", SEGMENT_HALF_WIDTH + 4.0),
    ] {
        for seg in &lane.segments {
            let dash = match seg.style {
                SegmentStyle::Solid => "",
                SegmentStyle::Dashed => r#" stroke-dasharray="4 3""#,
            };
            writeln!(
                out,
                r#"<line id="{prefix}-{}" class="segment" x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="{}" stroke-width="3"{dash}/>"#,
                seg.index,
                f(lane.x_position - SEGMENT_HALF_WIDTH),
                f(lane.x_position + SEGMENT_HALF_WIDTH),
                esc(&seg.color),
                y = f(seg.y_position)
            )
            .unwrap();
            writeln!(
                out,
                r#"<text x="{}" y="{}" text-anchor="{anchor}" font-size="8">{}</text>"#,
                f(lane.x_position + dx),
                f(seg.y_position + 3.0),
                esc(&seg.label)
            )
            .unwrap();
        }
    }
    out.push_str("</svg>\n");
    out
}

fn render_detail(s: &DetailScene) -> String {
    let mut out = String::new();
    writeln!(out, "{SVG_HEAD}").unwrap();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="-160.000 -130.000 320.000 260.000" data-control="{}">"#,
        s.order_index
    )
    .unwrap();
    for (j, e) in s.ellipses.iter().enumerate() {
        let fill = match e.fill {
            Fill::Green => "green",
            Fill::Red => "red",
        };
        writeln!(
            out,
            r#"<ellipse id="constraint-{j}" class="constraint {fill}" cx="{}" cy="{}" rx="38.000" ry="14.000" fill="{}"/>"#,
            f(e.center.x),
            f(e.center.y),
            esc(&e.color)
        )
        .unwrap();
        writeln!(
            out,
            r##"<text x="{}" y="{}" text-anchor="middle" font-size="7" fill="#ffffff">{}</text>"##,
            f(e.center.x),
            f(e.center.y + 2.5),
            esc(&truncate(&e.label, 28))
        )
        .unwrap();
    }
    let rect = &s.rectangle;
    writeln!(
        out,
        r##"<rect id="control-{}" class="control" x="-50.000" y="-22.000" width="100.000" height="44.000" fill="#f7f7f7" stroke="#333333"/>"##,
        s.order_index
    )
    .unwrap();
    for (dy, text) in
        [(-8.0, rect.name.clone()), (4.0, rect.control_type.to_string()), (16.0, truncate(&rect.observed_value, 20))]
    {
        writeln!(out, r#"<text x="0.000" y="{}" text-anchor="middle" font-size="8">{}</text>"#, f(dy), esc(&text))
            .unwrap();
    }
    out.push_str("</svg>\n");
    out
}
