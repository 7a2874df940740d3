use mvsim_wasm::{curves, learning, model_names, simulate};

#[test]
fn curves_hit_the_endpoints() {
    let c = curves("ML-x1", "geometric", 11).unwrap();
    let svc = c["service_time_ms"].as_array().unwrap();
    assert_eq!(svc.len(), 11);
    assert_eq!(svc[0].as_f64(), Some(200.0));
    assert!((svc[10].as_f64().unwrap() - 100.0).abs() < 1e-9);
    assert_eq!(c["labels"][10], "10.0");
    assert_eq!(c["versions"][5], 1000);
    let p = curves("ML-x1", "percent-step", 2001).unwrap();
    assert_eq!(p["accuracy"].as_array().unwrap().len(), 2001);
    assert!(curves("nope", "geometric", 3).is_err());
    assert!(curves("ML-x1", "linear", 3).is_err());
}

#[test]
fn learning_schedule_reaches_the_floor_at_half() {
    let l = learning(0.5, 10_000, 5).unwrap();
    let eps: Vec<f64> = l["epsilon"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(eps[0], 1.0);
    assert!((eps[2] - 0.001).abs() < 1e-12);
    assert_eq!(eps[4], 0.001);
    assert_eq!(l["models"].as_array().unwrap().len(), 6);
    // accuracy-only reward is 2 * accuracy with the default weights
    let l = learning(1.0, 100, 2).unwrap();
    assert!((l["models"][0]["reward"][0].as_f64().unwrap() - 1.4).abs() < 1e-12);
    assert!(learning(1.5, 100, 2).is_err());
    assert!(learning(0.5, 0, 2).is_err());
}

#[test]
fn small_simulation_reports_each_policy() {
    let s = simulate("never, always", 6000, 2).unwrap();
    let rows = s["policies"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["overall"]["stability"].as_f64(), Some(1.0));
    assert!(rows[1]["overall"]["accuracy"].as_f64() > rows[0]["overall"]["accuracy"].as_f64());
    assert_eq!(s, simulate("never, always", 6000, 2).unwrap());
    assert!(simulate("sometimes", 100, 1).is_err());
    assert!(simulate("never", 0, 1).is_err());
    let names: Vec<String> = serde_json::from_str(&model_names()).unwrap();
    assert_eq!(names.len(), 6);
}
