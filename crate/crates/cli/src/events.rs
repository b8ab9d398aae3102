//! Line-delimited JSON event log on stderr. One event per line; stdout
//! stays reserved for the human-readable results.

use serde_json::Value;

pub struct Logger {
    enabled: bool,
}

impl Logger {
    pub fn new(enabled: bool) -> Self {
        Logger { enabled }
    }

    /// Emit one event. `fields` must be a JSON object; the event name is
    /// spliced in under the "event" key.
    pub fn event(&self, name: &str, fields: Value) {
        if !self.enabled {
            return;
        }
        let mut obj = serde_json::Map::new();
        obj.insert("event".into(), Value::String(name.into()));
        if let Value::Object(map) = fields {
            obj.extend(map);
        }
        eprintln!("{}", Value::Object(obj));
    }
}
