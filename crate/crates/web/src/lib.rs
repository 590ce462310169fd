//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Three operations: generate a labeled trajectory, segment it, and stream
//! it through the encoder one sample at a time (the page times each step).
//! Results cross the boundary as JSON strings.

use serde_json::json;
use tacmamba::encoder::{encoder_init, encoder_step, EncoderConfig, EncoderStreamState, EncoderWeights};
use tacmamba::phase::{boundary_recall, segment_phases, SegmentParams};
use tacmamba::runtime::planner_stub;
use tacmamba::sim::{generate, LabeledTrajectory, ScenarioConfig, ScenarioKind};
use tacmamba::Error;
use wasm_bindgen::prelude::*;

fn js_err(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

fn trajectory_json(t: &LabeledTrajectory) -> String {
    json!({
        "rate_hz": t.rate_hz,
        "samples": t.samples,
        "phases": t.phases,
        "onsets": t.contact_onsets(),
    })
    .to_string()
}

pub fn simulate_inner(kind: &str, presses: usize, seed: u32) -> Result<String, Error> {
    let t = generate(&ScenarioConfig {
        kind: kind.parse::<ScenarioKind>()?,
        presses,
        cycles: presses,
        seed: seed.into(),
        ..Default::default()
    })?;
    Ok(trajectory_json(&t))
}

/// `truth` may be empty; recall is reported only when it is not.
pub fn segment_inner(samples: &[f32], rate_hz: f32, truth: &[usize]) -> Result<String, Error> {
    let seg = segment_phases(samples, 1, &SegmentParams::from_idle(samples, 1, rate_hz))?;
    let onsets = seg.contact_onsets();
    let recall = (!truth.is_empty()).then(|| boundary_recall(&onsets, truth, 5));
    Ok(json!({ "phases": seg.to_sidecar().phases, "onsets": onsets, "recall": recall }).to_string())
}

/// Generates one scenario trajectory (`button_press`, `sequential_buttons`,
/// `pick_place_counting`, `idle_hold`) as `{rate_hz, samples, phases, onsets}`.
#[wasm_bindgen]
pub fn simulate(kind: &str, presses: usize, seed: u32) -> Result<String, JsError> {
    simulate_inner(kind, presses, seed).map_err(js_err)
}

/// Gradient-based segmentation of a single-channel signal.
#[wasm_bindgen]
pub fn segment(samples: &[f32], rate_hz: f32, truth: &[usize]) -> Result<String, JsError> {
    segment_inner(samples, rate_hz, truth).map_err(js_err)
}

/// Single-channel streaming encoder with fixed-size state.
#[wasm_bindgen]
pub struct StreamEncoder {
    weights: EncoderWeights<f32>,
    state: EncoderStreamState<f32>,
}

#[wasm_bindgen]
impl StreamEncoder {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Result<StreamEncoder, JsError> {
        let config = EncoderConfig {
            seed: seed.into(),
            ..Default::default()
        };
        let weights = encoder_init(&config).map_err(js_err)?;
        Ok(Self {
            state: EncoderStreamState::new(&config),
            weights,
        })
    }

    /// Consumes one sample and returns the norm of the soft prompt z_t.
    pub fn push(&mut self, x: f32) -> Result<f32, JsError> {
        let h = encoder_step(&mut self.state, &[x], &self.weights).map_err(js_err)?;
        Ok(planner_stub(&self.weights.soft_prompt(h).map_err(js_err)?))
    }

    /// Samples consumed so far.
    pub fn t(&self) -> f64 {
        self.state.t() as f64
    }

    /// Bytes of recurrent state; independent of `t`.
    pub fn state_bytes(&self) -> usize {
        self.state.allocated_bytes()
    }

    pub fn reset(&mut self) {
        self.state.reset();
    }
}
