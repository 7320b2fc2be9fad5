use serde_json::Value;
use skelsign::segment::SegmenterConfig;
use skelsign_web::{clip_layout_json, positional_encoding_json, segmentation_trace_json, BurstShape};

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn heatmap_shape_and_first_rows() {
    let v = parse(positional_encoding_json(17, 8).unwrap());
    assert_eq!((v["rows"].as_u64(), v["cols"].as_u64()), (Some(17), Some(8)));
    let values = v["values"].as_array().unwrap();
    assert_eq!(values.len(), 136);
    let row0: Vec<f64> = values[..8].iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(row0, [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    assert!((values[8].as_f64().unwrap() - 1f64.sin()).abs() < 1e-6);
    assert!(positional_encoding_json(0, 8).is_err());
    assert!(positional_encoding_json(4, 7).is_err());
}

#[test]
fn trace_of_default_burst() {
    let burst = BurstShape { still_before: 5, moving: 30, still_after: 15, speed: 0.02, seed: 1 };
    let v = parse(segmentation_trace_json(&burst, SegmenterConfig::default()).unwrap());
    let states: Vec<&str> = v["states"].as_array().unwrap().iter().map(|s| s.as_str().unwrap()).collect();
    assert_eq!(states.len(), 50);
    assert_eq!(states[6], "idle");
    assert_eq!(states[7], "recording");
    assert_eq!(states[43], "recording");
    assert_eq!(states[44], "idle");
    assert!(v["signal"][0].is_null());
    let clips = v["clips"].as_array().unwrap();
    assert_eq!(clips.len(), 1);
    assert_eq!((clips[0]["first"].as_u64(), clips[0]["last"].as_u64()), (Some(4), Some(34)));

    let bad = SegmenterConfig { stop_threshold: 1.0, ..SegmenterConfig::default() };
    assert!(segmentation_trace_json(&burst, bad).is_err());
}

#[test]
fn layout_of_sampled_clip() {
    let v = parse(clip_layout_json(31, "fixed:16", 16, 20).unwrap());
    let sampled: Vec<u64> = v["sampled"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect();
    assert_eq!(sampled, (0..16).map(|i| 2 * i).collect::<Vec<_>>());
    let kinds: Vec<&str> = v["kinds"].as_array().unwrap().iter().map(|s| s.as_str().unwrap()).collect();
    assert_eq!(kinds.len(), 20);
    assert_eq!(kinds[15], "data");
    assert_eq!(kinds[16], "eos");
    assert!(kinds[17..].iter().all(|k| *k == "pad"));

    let v = parse(clip_layout_json(60, "fps:15", 16, 0).unwrap());
    assert_eq!(v["sampled"].as_array().unwrap().len(), 16);
    assert!(clip_layout_json(10, "every:2", 16, 0).is_err());
    assert!(clip_layout_json(0, "fixed:16", 16, 0).is_err());
}
