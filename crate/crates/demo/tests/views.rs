use emtrace_demo::{detection_view, spectrum_view, trace_view, MAX_TRACES};
use serde_json::Value;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn trace_is_noisy_at_requested_snr() {
    let v = parse(trace_view(0.0, 3).unwrap());
    let clean = v["clean"].as_array().unwrap();
    assert_eq!(clean.len(), v["noisy"].as_array().unwrap().len());
    assert!(v["measured_snr_db"].as_f64().unwrap().abs() < 1.0);
}

#[test]
fn spectrum_marks_both_cutting_points() {
    let v = parse(spectrum_view(0.0, 40, 1).unwrap());
    let sigma: Vec<f64> = v["sigma"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    assert!(sigma.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(v["formula"], 10);
    assert!(v["knee"].as_u64().unwrap() >= 1);
}

#[test]
fn detection_at_high_snr_separates() {
    let v = parse(detection_view("jmp", 10.0, 60, true, 2).unwrap());
    assert!(v["auc"].as_f64().unwrap() > 0.9);
    assert_eq!(v["cutting_point"], 24);
    let roc = v["roc"].as_array().unwrap();
    assert_eq!(roc.first().unwrap(), &serde_json::json!([0.0, 0.0]));
    assert_eq!(roc.last().unwrap(), &serde_json::json!([1.0, 1.0]));
}

#[test]
fn bad_requests_are_errors() {
    assert!(spectrum_view(0.0, MAX_TRACES + 1, 1).is_err());
    assert!(detection_view("mul", 0.0, 40, false, 1).is_err());
    assert!(trace_view(f64::NAN, 1).is_err());
}
