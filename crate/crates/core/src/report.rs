//! Deterministic machine-readable reports.
//!
//! A report is a flat set of `key=value` lines, serialized with keys sorted
//! lexicographically and floats printed at 17 significant digits, so two
//! runs with the same config and seed produce byte-identical files. The
//! objective trace additionally goes out as a two-column CSV for plotting.

use std::collections::BTreeMap;

use crate::transform::TransformVectors;

/// Fixed float formatting: 17 significant digits, scientific form. Enough to
/// round-trip any f64 and stable across runs.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Sorted-key report of one command run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    entries: BTreeMap<String, String>,
}

impl Report {
    pub fn new() -> Self {
        let mut r = Report {
            entries: BTreeMap::new(),
        };
        r.set_str("version", crate::VERSION);
        r
    }

    pub fn set_str(&mut self, key: &str, value: &str) {
        debug_assert!(!key.contains('\n') && !value.contains('\n'));
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn set_f64(&mut self, key: &str, value: f64) {
        self.set_str(key, &fmt_f64(value));
    }

    pub fn set_usize(&mut self, key: &str, value: usize) {
        self.set_str(key, &value.to_string());
    }

    pub fn set_bool(&mut self, key: &str, value: bool) {
        self.set_str(key, if value { "true" } else { "false" });
    }

    pub fn set_vec(&mut self, key: &str, values: &[f64]) {
        let joined: Vec<String> = values.iter().map(|&v| fmt_f64(v)).collect();
        self.set_str(key, &joined.join(","));
    }

    /// Records a transform under `<prefix>.shift/scale/threshold`.
    pub fn set_transform(&mut self, prefix: &str, tv: &TransformVectors) {
        self.set_vec(&format!("{prefix}.shift"), &tv.shift);
        self.set_vec(&format!("{prefix}.scale"), &tv.scale);
        self.set_f64(&format!("{prefix}.threshold"), tv.threshold);
    }

    /// Records a per-tensor stats record under `tensor.<name>.*`.
    pub fn set_tensor_record(&mut self, name: &str, range: (f64, f64), quant_mse: f64) {
        self.set_f64(&format!("tensor.{name}.range_lo"), range.0);
        self.set_f64(&format!("tensor.{name}.range_hi"), range.1);
        self.set_f64(&format!("tensor.{name}.quant_mse"), quant_mse);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    /// Serializes as sorted `key=value` lines with a trailing newline.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    /// FNV-1a 64 over the serialized text, hex-encoded. Stamped into the
    /// report so comparisons can prove they ran under one resolved config.
    pub fn fnv1a_hex(text: &str) -> String {
        let mut hash: u64 = 0xCBF2_9CE4_8422_2325;
        for b in text.as_bytes() {
            hash ^= *b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
        }
        format!("{hash:016x}")
    }
}

/// Two-column CSV of an objective trace, `candidate,objective` per line.
pub fn trace_csv(trace: &[(f64, f64)]) -> String {
    let mut out = String::from("candidate,objective\n");
    for &(t, obj) in trace {
        out.push_str(&fmt_f64(t));
        out.push(',');
        out.push_str(&fmt_f64(obj));
        out.push('\n');
    }
    out
}
