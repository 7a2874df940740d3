//! Browser bindings: attribute curves, the learning agent's reward and
//! exploration schedule, and small preset simulations. Every export returns
//! a JSON string.

use mvsim_core::domain::{AttributeModel, CurveMode, VersionId};
use mvsim_core::metrics::{objectives, Objectives, Sample};
use mvsim_core::policies::{reward, EpsilonSchedule, RewardInputs, RewardWeights};
use mvsim_core::{run, AppClass, Horizon, PolicyKind, RunOptions, Scenario};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Largest event horizon the page may request.
pub const MAX_EVENTS: u64 = 400_000;

fn preset() -> Scenario {
    Scenario::preset("oran-edge").expect("bundled preset")
}

fn export(r: Result<Value, String>) -> Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

/// Accuracy, stability and mean service time of one preset model at
/// `points` evenly spaced versions.
pub fn curves(model: &str, mode: &str, points: u32) -> Result<Value, String> {
    let mut sc = preset();
    let m = sc
        .models
        .iter()
        .find(|m| m.name == model)
        .ok_or_else(|| format!("unknown model `{model}`"))?
        .clone();
    sc.attributes.mode = mode.parse::<CurveMode>()?;
    let am: AttributeModel = sc.attributes;
    let max = am.scheme.max_index;
    let points = points.clamp(2, max + 1);
    let mut versions = Vec::new();
    let mut labels = Vec::new();
    let (mut svc, mut acc, mut stab) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..points {
        let v = VersionId((i as u64 * max as u64 / (points - 1) as u64) as u32);
        let a = am.attributes_of(&m, v).map_err(|e| e.to_string())?;
        versions.push(v.0);
        labels.push(am.scheme.display(v));
        svc.push(a.mean_service_time_ms);
        acc.push(a.accuracy);
        stab.push(a.stability);
    }
    Ok(json!({
        "model": m.name,
        "mode": mode,
        "versions": versions,
        "labels": labels,
        "service_time_ms": svc,
        "accuracy": acc,
        "stability": stab,
    }))
}

/// Exploration rate over a run of `total_events`, and per model the reward a
/// request earns at each version under trade-off `alpha`, counting service
/// and processing time only.
pub fn learning(alpha: f64, total_events: u64, points: u32) -> Result<Value, String> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(format!("alpha {alpha} outside [0, 1]"));
    }
    if total_events == 0 {
        return Err("total events must be positive".into());
    }
    let sc = preset();
    let rl = &sc.params.rl;
    let sched = EpsilonSchedule::new(rl.epsilon_start, rl.epsilon_min, total_events);
    let points = points.clamp(2, 2001) as u64;
    let events: Vec<u64> = (0..points).map(|i| total_events * i / (points - 1)).collect();
    let epsilon: Vec<f64> = events.iter().map(|&e| sched.at(e)).collect();

    let w = RewardWeights { alpha, ..rl.reward };
    let max = sc.attributes.scheme.max_index;
    let versions: Vec<u32> = (0..points).map(|i| (i * max as u64 / (points - 1)) as u32).collect();
    let mut models = Vec::new();
    for m in &sc.models {
        let rewards: Vec<f64> = versions
            .iter()
            .map(|&v| {
                let a = sc.attributes.attributes_of(m, VersionId(v)).expect("version in range");
                let inputs = RewardInputs {
                    total_delay_ms: a.mean_service_time_ms + m.processing_delay_ms,
                    delay_budget_ms: m.delay_budget_ms,
                    stability: a.stability,
                    accuracy: a.accuracy,
                };
                reward(&inputs, &w)
            })
            .collect();
        models.push(json!({ "model": m.name, "reward": rewards }));
    }
    Ok(json!({
        "alpha": alpha,
        "decay": sched.decay,
        "events": events,
        "epsilon": epsilon,
        "versions": versions,
        "models": models,
    }))
}

fn objectives_json(o: &Objectives) -> Value {
    json!({
        "delay_ms": o.delay_ms,
        "accuracy": o.accuracy,
        "stability": o.stability,
        "requests": o.requests,
    })
}

/// Runs the preset for every policy in `policies` (comma-separated) and
/// reports overall and per-class objectives.
pub fn simulate(policies: &str, events: u64, seed: u64) -> Result<Value, String> {
    if events == 0 || events > MAX_EVENTS {
        return Err(format!("events must be in 1..={MAX_EVENTS}"));
    }
    let kinds = policies
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse::<PolicyKind>)
        .collect::<Result<Vec<_>, _>>()?;
    if kinds.is_empty() {
        return Err("no policies given".into());
    }
    let mut sc = preset();
    sc.horizon = Horizon::Events(events);
    let mut rows = Vec::new();
    for p in kinds {
        let out = run(&sc, p, seed, RunOptions::default()).map_err(|e| e.to_string())?;
        let samples: Vec<Sample> = out.records.iter().map(Sample::from).collect();
        let o = objectives(&samples).map_err(|e| e.to_string())?;
        let per_class: serde_json::Map<String, Value> = [AppClass::DApp, AppClass::XApp, AppClass::RApp]
            .into_iter()
            .filter_map(|c| o.per_class.get(&c).map(|x| (c.as_str().to_string(), objectives_json(x))))
            .collect();
        rows.push(json!({
            "policy": p.as_str(),
            "overall": objectives_json(&o.overall),
            "per_class": per_class,
            "updates": out.stats.updates,
            "spawns": out.stats.spawns,
            "end_time_ms": out.stats.end_time_ms,
        }));
    }
    Ok(json!({ "events": events, "seed": seed, "policies": rows }))
}

#[wasm_bindgen(js_name = attributeCurves)]
pub fn attribute_curves(model: &str, mode: &str, points: u32) -> Result<String, JsValue> {
    export(curves(model, mode, points))
}

#[wasm_bindgen(js_name = learningSchedule)]
pub fn learning_schedule(alpha: f64, total_events: f64, points: u32) -> Result<String, JsValue> {
    export(learning(alpha, total_events.max(0.0) as u64, points))
}

#[wasm_bindgen(js_name = simulatePreset)]
pub fn simulate_preset(policies: &str, events: u32, seed: u32) -> Result<String, JsValue> {
    export(simulate(policies, events as u64, seed as u64))
}

/// Model names of the bundled preset, as a JSON array.
#[wasm_bindgen(js_name = modelNames)]
pub fn model_names() -> String {
    json!(preset().model_names()).to_string()
}
