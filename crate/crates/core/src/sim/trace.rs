use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::time::SimTime;

/// One line of a run trace: `{"t":..,"seq":..,"kind":..,<fields>}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: SimTime,
    pub seq: u64,
    pub kind: String,
    #[serde(flatten)]
    pub fields: BTreeMap<String, Value>,
}

impl TraceEvent {
    pub fn str(&self, key: &str) -> Option<&str> {
        self.fields.get(key).and_then(Value::as_str)
    }

    pub fn f64(&self, key: &str) -> Option<f64> {
        self.fields.get(key).and_then(Value::as_f64)
    }

    pub fn u64(&self, key: &str) -> Option<u64> {
        self.fields.get(key).and_then(Value::as_u64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn push(&mut self, t: SimTime, kind: &str, fields: BTreeMap<String, Value>) {
        let seq = self.events.len() as u64;
        self.events.push(TraceEvent { t, seq, kind: kind.to_string(), fields });
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("trace events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_ndjson(text: &str) -> Result<Trace, serde_json::Error> {
        let events = text.lines().filter(|l| !l.is_empty()).map(serde_json::from_str).collect::<Result<_, _>>()?;
        Ok(Trace { events })
    }

    pub fn of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a TraceEvent> + 'a {
        self.events.iter().filter(move |e| e.kind == kind)
    }
}

/// Builds a field map from `key => value` pairs.
#[macro_export]
macro_rules! fields {
    ($($k:expr => $v:expr),* $(,)?) => {{
        #[allow(unused_mut)]
        let mut m = ::std::collections::BTreeMap::<String, ::serde_json::Value>::new();
        $( m.insert($k.to_string(), ::serde_json::json!($v)); )*
        m
    }};
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ndjson_layout_and_roundtrip() {
        let mut t = Trace::default();
        t.push(SimTime::from_secs(5), "job_transition", crate::fields! {"job" => "j-000001", "to" => "Queued"});
        let text = t.to_ndjson();
        assert_eq!(text, "{\"t\":5.0,\"seq\":0,\"kind\":\"job_transition\",\"job\":\"j-000001\",\"to\":\"Queued\"}\n");
        assert_eq!(Trace::from_ndjson(&text).unwrap(), t);
    }
}
