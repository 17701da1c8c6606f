//! Deterministic artifact formatting. Identical inputs must produce
//! byte-identical output, so everything funnels through the same float
//! formatter (shortest round-trip representation, `inf` spelled out).

pub(crate) fn fmt_num(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

/// Exponent notation for diagnostics columns (residuals, tail masses).
pub(crate) fn fmt_exp(v: f64) -> String {
    format!("{v:e}")
}

/// One header row plus comma-joined records. Every cell this crate emits is
/// a bare token (numbers, identifiers), so no quoting is ever needed.
pub(crate) fn csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        debug_assert!(row.iter().all(|c| !c.contains([',', '"', '\n'])));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub(crate) fn json_pretty<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}
