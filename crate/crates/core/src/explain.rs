//! Presentation payloads: reward-decomposition bars and fact/foil overlay
//! frames, bundled as one explanation.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentModel, Component};
use crate::engine::{CfMethod, CfPair, TerminalCause};
use crate::error::{Error, Result};
use crate::sim::{Action, Highway, Observation, SimState, Vehicle};
use crate::summary::ImportanceMethod;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub label: String,
    pub fact_value: f64,
    pub foil_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarChart {
    pub fact_action: Action,
    pub foil_action: Action,
    /// One bar pair per component, canonical order.
    pub bars: Vec<Bar>,
    pub fact_total: f64,
    pub foil_total: f64,
}

impl BarChart {
    pub fn fact_sum(&self) -> f64 {
        self.bars.iter().map(|b| b.fact_value).sum()
    }

    pub fn foil_sum(&self) -> f64 {
        self.bars.iter().map(|b| b.foil_value).sum()
    }
}

pub fn rd_bar_data(model: &AgentModel, obs: &Observation, fact: Action, foil: Action) -> Result<BarChart> {
    if fact == foil {
        return Err(Error::InvalidFoil { foil });
    }
    let q = model.decomposed_q(obs);
    let bars = Component::ALL
        .iter()
        .map(|&c| Bar {
            label: c.label().into(),
            fact_value: q.component(c, fact),
            foil_value: q.component(c, foil),
        })
        .collect();
    Ok(BarChart {
        fact_action: fact,
        foil_action: foil,
        bars,
        fact_total: q.total_of(fact),
        foil_total: q.total_of(foil),
    })
}

/// Axis-aligned box given by its center, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

/// World-to-screen mapping. The camera follows the fact ego, which is
/// drawn at `ego_screen_x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Viewport {
    pub width: f64,
    pub top: f64,
    pub lane_height: f64,
    pub px_per_meter: f64,
    pub ego_screen_x: f64,
    pub car_length: f64,
    pub car_width: f64,
}

impl Default for Viewport {
    fn default() -> Self {
        Viewport {
            width: 640.0,
            top: 20.0,
            lane_height: 24.0,
            px_per_meter: 3.0,
            ego_screen_x: 160.0,
            car_length: 5.0,
            car_width: 2.0,
        }
    }
}

impl Viewport {
    pub fn for_car_length(car_length: f64) -> Self {
        Viewport { car_length, ..Viewport::default() }
    }

    pub fn screen_x(&self, x: f64, camera_x: f64) -> f64 {
        self.ego_screen_x + self.px_per_meter * (x - camera_x)
    }

    pub fn screen_y(&self, lane: usize) -> f64 {
        self.top + self.lane_height * (lane as f64 + 0.5)
    }

    pub fn world_x(&self, screen_x: f64, camera_x: f64) -> f64 {
        (screen_x - self.ego_screen_x) / self.px_per_meter + camera_x
    }

    /// Lane offset of a screen y coordinate; round it to get the lane index.
    pub fn lane_of(&self, screen_y: f64) -> f64 {
        (screen_y - self.top) / self.lane_height - 0.5
    }

    pub fn vehicle_rect(&self, vehicle: &Vehicle, camera_x: f64) -> Rect {
        Rect {
            cx: self.screen_x(vehicle.x, camera_x),
            cy: self.screen_y(vehicle.lane),
            w: self.car_length * self.px_per_meter,
            h: self.car_width * self.px_per_meter,
        }
    }

    pub fn road_height(&self, lanes: usize) -> f64 {
        self.lane_height * lanes as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    /// 0 is the origin; `j + 1` shows the `j`-th successor.
    pub step_offset: usize,
    pub camera_x: f64,
    pub lanes: usize,
    /// Fact ego (green).
    pub ego: Rect,
    /// Fact traffic (blue).
    pub others: Vec<Rect>,
    pub fact_collided: bool,
    /// Foil ego (red), absent after the foil terminated.
    pub foil: Option<Rect>,
    pub foil_collided: bool,
    pub foil_absent: bool,
    pub crash_marker: Option<Rect>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameSequence {
    pub viewport: Viewport,
    /// Shared origin; the foil rectangle sits on the fact ego.
    pub origin: Frame,
    /// One frame per fact successor.
    pub frames: Vec<Frame>,
}

fn frame(viewport: &Viewport, lanes: usize, offset: usize, fact: &SimState, foil: Option<&SimState>, last_foil: &SimState) -> Frame {
    let camera_x = fact.ego.x;
    let foil_rect = foil.map(|s| viewport.vehicle_rect(&s.ego, camera_x));
    Frame {
        step_offset: offset,
        camera_x,
        lanes,
        ego: viewport.vehicle_rect(&fact.ego, camera_x),
        others: fact.others.iter().map(|v| viewport.vehicle_rect(v, camera_x)).collect(),
        fact_collided: fact.collided,
        foil: foil_rect,
        foil_collided: foil.is_some_and(|s| s.collided),
        foil_absent: foil.is_none(),
        crash_marker: match foil {
            Some(_) => None,
            None => Some(viewport.vehicle_rect(&last_foil.ego, camera_x)),
        },
    }
}

pub fn pair_to_frames(pair: &CfPair, lanes: usize, viewport: &Viewport) -> FrameSequence {
    let origin = frame(viewport, lanes, 0, &pair.origin, Some(&pair.origin), &pair.origin);
    let last_foil = pair.foil.last().unwrap_or(&pair.origin);
    let frames = pair
        .fact
        .iter()
        .enumerate()
        .map(|(j, fact)| frame(viewport, lanes, j + 1, fact, pair.foil.get(j), last_foil))
        .collect();
    FrameSequence { viewport: *viewport, origin, frames }
}

/// Score and ranking method attached to a payload, when it came from a summary.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreMeta {
    pub method: Option<ImportanceMethod>,
    pub score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CordPayload {
    pub agent_id: String,
    pub trace_id: String,
    pub origin_index: usize,
    pub fact_action: Action,
    pub foil_action: Action,
    pub cf_method: CfMethod,
    pub foil_terminal: Option<TerminalCause>,
    pub degenerate: bool,
    pub last_state_importance: f64,
    pub score: ScoreMeta,
    pub bars: BarChart,
    pub frames: FrameSequence,
}

pub fn build_cord_payload(model: &AgentModel, highway: &Highway, pair: &CfPair, score: ScoreMeta) -> Result<CordPayload> {
    if pair.agent_id != model.id {
        return Err(Error::AgentMismatch { expected: model.id.clone(), found: pair.agent_id.clone() });
    }
    let obs = highway.observe(&pair.origin);
    let bars = rd_bar_data(model, &obs, pair.fact_action, pair.foil_action)?;
    let viewport = Viewport::for_car_length(highway.config().car_length);
    Ok(CordPayload {
        agent_id: pair.agent_id.clone(),
        trace_id: pair.trace_id.clone(),
        origin_index: pair.origin_index,
        fact_action: pair.fact_action,
        foil_action: pair.foil_action,
        cf_method: pair.cf_method,
        foil_terminal: pair.foil_terminal,
        degenerate: pair.degenerate,
        last_state_importance: pair.importance.last_state,
        score,
        bars,
        frames: pair_to_frames(pair, highway.config().lanes, &viewport),
    })
}
