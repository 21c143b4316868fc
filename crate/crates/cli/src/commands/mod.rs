pub mod mnist;
pub mod tools;
pub mod xor;
pub mod xord;

use xordlab::gd::Endpoint;

pub(crate) fn endpoint_cols(e: &Endpoint) -> [String; 2] {
    [serde_plain(&e.kind), e.iteration.to_string()]
}

/// The serde name of a unit enum variant.
pub(crate) fn serde_plain<T: serde::Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

pub(crate) fn opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
