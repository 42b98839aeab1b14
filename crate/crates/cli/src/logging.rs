//! Line-delimited JSON events on stderr.

use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};

pub fn event(stage: &str, message: &str, fields: Value) {
    let ts = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
    let mut line = json!({ "ts": ts, "level": "info", "stage": stage, "msg": message });
    if let (Some(obj), Value::Object(extra)) = (line.as_object_mut(), fields) {
        obj.extend(extra);
    }
    eprintln!("{line}");
}
