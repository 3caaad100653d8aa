//! Serialised run artifacts.
//!
//! `report.json` and `replications.csv` are produced with a deterministic
//! hand-rolled writer: keys appear in a fixed order and floats are printed
//! with 17 significant digits, so identical inputs yield byte-identical
//! files. Wall-clock information never enters these files; it goes to the
//! `run.log` sidecar.

use std::fmt::Write as _;
use std::path::Path;

use matchvar::numfmt::float17;
use matchvar::pipeline::MethodOutput;
use matchvar::simulation::{CoverageReport, MethodRepRecord, RepRecord};
use matchvar::Result;

/// A JSON value serialised on construction. Strings are escaped through
/// `serde_json`; numbers are formatted with [`float17`] so the text, not
/// the shortest round-trip, is the contract.
struct Json(String);

impl Json {
    fn string(s: &str) -> Json {
        Json(serde_json::to_string(s).expect("string serialisation cannot fail"))
    }

    fn float(x: f64) -> Json {
        if x.is_finite() {
            Json(float17(x))
        } else {
            // JSON has no non-finite numbers; encode them as strings.
            Json::string(&x.to_string())
        }
    }

    fn int(x: usize) -> Json {
        Json(x.to_string())
    }

    fn uint64(x: u64) -> Json {
        Json(x.to_string())
    }

    fn bool(x: bool) -> Json {
        Json(if x { "true".into() } else { "false".into() })
    }

    fn null() -> Json {
        Json("null".into())
    }

    fn opt_float(x: Option<f64>) -> Json {
        x.map_or_else(Json::null, Json::float)
    }

    fn object(fields: Vec<(&'static str, Json)>) -> Json {
        let mut out = String::from("{");
        for (i, (key, value)) in fields.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "\"{key}\":{}", value.0);
        }
        out.push('}');
        Json(out)
    }

    fn array(items: Vec<Json>) -> Json {
        let mut out = String::from("[");
        for (i, item) in items.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&item.0);
        }
        out.push(']');
        Json(out)
    }
}

/// Renders a top-level object with one field per line. Array fields get one
/// element per line; everything deeper stays compact. Numbers are emitted
/// exactly as built, never re-parsed, so the 17-digit text survives.
fn render(fields: Vec<(&'static str, Json)>) -> String {
    let mut out = String::from("{\n");
    for (i, (key, value)) in fields.iter().enumerate() {
        let _ = write!(out, "  \"{key}\": ");
        if value.0.starts_with('[') && value.0.len() > 2 {
            let elements = split_top_level(&value.0[1..value.0.len() - 1]);
            out.push_str("[\n");
            for (j, item) in elements.iter().enumerate() {
                let _ = write!(out, "    {item}");
                if j + 1 < elements.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            out.push_str("  ]");
        } else {
            out.push_str(&value.0);
        }
        if i + 1 < fields.len() {
            out.push(',');
        }
        out.push('\n');
    }
    out.push_str("}\n");
    out
}

/// Splits a serialised JSON array body into its top-level elements. The
/// writer never puts commas inside strings except through `serde_json`
/// escaping, so tracking quotes and bracket depth is sufficient.
fn split_top_level(items: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let (mut depth, mut start, mut in_string, mut escaped) = (0usize, 0usize, false, false);
    for (i, ch) in items.char_indices() {
        if in_string {
            match ch {
                '\\' if !escaped => escaped = true,
                '"' if !escaped => in_string = false,
                _ => escaped = false,
            }
            continue;
        }
        match ch {
            '"' => in_string = true,
            '[' | '{' => depth += 1,
            ']' | '}' => depth -= 1,
            ',' if depth == 0 => {
                out.push(items[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    if start < items.len() {
        out.push(items[start..].trim());
    }
    out
}

fn method_output_json(out: &MethodOutput) -> Json {
    let variance = out.variance.as_ref();
    Json::object(vec![
        ("method", Json::string(&out.name)),
        ("tau_hat", Json::float(out.tau_hat)),
        ("estimate", Json::float(out.estimate)),
        ("ci_lower", Json::float(out.interval.lower)),
        ("ci_upper", Json::float(out.interval.upper)),
        ("ci_method", Json::string(&out.interval.method)),
        ("level", Json::float(out.interval.level)),
        ("se", Json::opt_float(out.se)),
        ("se_e", Json::opt_float(out.se_e)),
        ("ess", Json::opt_float(out.ess)),
        (
            "s2_pooled",
            Json::opt_float(variance.map(|v| v.s2_pooled)),
        ),
        ("ve_hat", Json::opt_float(variance.map(|v| v.ve_hat))),
        (
            "v_total_hat",
            Json::opt_float(variance.map(|v| v.v_total_hat)),
        ),
        ("vp_hat", Json::opt_float(variance.map(|v| v.vp_hat))),
        (
            "variance_floored",
            variance.map_or_else(Json::null, |v| Json::bool(v.floored)),
        ),
        (
            "n_singleton_clusters",
            variance.map_or_else(Json::null, |v| Json::int(v.n_singleton_clusters)),
        ),
        ("n_matched_treated", Json::int(out.n_matched_treated)),
        ("n_unmatched_treated", Json::int(out.n_unmatched_treated)),
        (
            "mean_shared_controls",
            Json::opt_float(out.mean_shared_controls),
        ),
        (
            "sbw_max_imbalance",
            Json::opt_float(out.balance.as_ref().map(|b| {
                b.imbalance.iter().copied().fold(0.0_f64, f64::max)
            })),
        ),
    ])
}

/// Renders the single-run estimation report.
pub fn estimate_report(
    input: &str,
    n: usize,
    n_treated: usize,
    n_controls: usize,
    seed: u64,
    out: &MethodOutput,
) -> String {
    render(vec![
        ("command", Json::string("estimate")),
        ("input", Json::string(input)),
        ("seed", Json::uint64(seed)),
        ("n", Json::int(n)),
        ("n_treated", Json::int(n_treated)),
        ("n_controls", Json::int(n_controls)),
        ("methods", Json::array(vec![method_output_json(out)])),
    ])
}

fn summary_json(report: &CoverageReport) -> Vec<Json> {
    report
        .methods
        .iter()
        .map(|m| {
            Json::object(vec![
                ("method", Json::string(&m.name)),
                ("n_success", Json::int(m.n_success)),
                ("n_failed", Json::int(m.n_failed)),
                ("coverage", Json::float(m.coverage)),
                ("mean_ci_length", Json::float(m.mean_ci_length)),
                ("mean_se", Json::float(m.mean_se)),
                ("mean_se_e", Json::float(m.mean_se_e)),
                ("mean_ess", Json::float(m.mean_ess)),
                (
                    "mean_shared_controls",
                    Json::float(m.mean_shared_controls),
                ),
                ("mean_v_over_nt", Json::float(m.mean_v_over_nt)),
                ("mean_estimate", Json::float(m.mean_estimate)),
                ("sd_vs_satt", Json::float(m.sd_vs_satt)),
            ])
        })
        .collect()
}

/// Renders the coverage-study report (summaries only; the raw records go
/// to `replications.csv`).
pub fn simulate_report(config: &str, report: &CoverageReport) -> String {
    render(vec![
        ("command", Json::string("simulate")),
        ("config", Json::string(config)),
        ("rng_algorithm", Json::string(&report.rng_algorithm)),
        ("dgp", Json::string(&report.dgp)),
        ("n_reps", Json::int(report.n_reps)),
        ("seed", Json::uint64(report.base_seed)),
        ("level", Json::float(report.level)),
        ("target", Json::string(report.target.name())),
        ("population_att", Json::float(report.population_att)),
        ("methods", Json::array(summary_json(report))),
        (
            "flagged_methods",
            Json::array(
                report
                    .flagged_methods
                    .iter()
                    .map(|s| Json::string(s))
                    .collect(),
            ),
        ),
    ])
}

/// Renders the matcher-diagnostics report.
pub struct DiagnoseSummary {
    pub n: usize,
    pub n_treated: usize,
    pub n_controls: usize,
    pub n_matched_treated: usize,
    pub n_unmatched_treated: usize,
    pub mean_cluster_size: f64,
    pub mean_cluster_ess: f64,
    pub aggregate_ess: f64,
    pub mean_shared_controls: f64,
    pub max_radius: f64,
    pub mean_radius: f64,
}

pub fn diagnose_report(input: &str, s: &DiagnoseSummary) -> String {
    render(vec![
        ("command", Json::string("diagnose")),
        ("input", Json::string(input)),
        ("n", Json::int(s.n)),
        ("n_treated", Json::int(s.n_treated)),
        ("n_controls", Json::int(s.n_controls)),
        ("n_matched_treated", Json::int(s.n_matched_treated)),
        ("n_unmatched_treated", Json::int(s.n_unmatched_treated)),
        ("mean_cluster_size", Json::float(s.mean_cluster_size)),
        ("mean_cluster_ess", Json::float(s.mean_cluster_ess)),
        ("aggregate_ess", Json::float(s.aggregate_ess)),
        (
            "mean_shared_controls",
            Json::float(s.mean_shared_controls),
        ),
        ("max_radius", Json::float(s.max_radius)),
        ("mean_radius", Json::float(s.mean_radius)),
    ])
}

fn csv_field_opt_float(x: Option<f64>) -> String {
    x.map(float17).unwrap_or_default()
}

fn csv_field_string(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Renders the per-replication records as CSV, one row per method per
/// replication.
pub fn replications_csv(records: &[RepRecord]) -> String {
    let mut out = String::from(
        "rep,seed,satt,population_att,method,estimate,ci_lower,ci_upper,\
         se,se_e,ess,v_over_nt,shared_controls,covered,error\n",
    );
    for rep in records {
        for m in &rep.methods {
            let _ = writeln!(out, "{}", replication_row(rep, m));
        }
    }
    out
}

fn replication_row(rep: &RepRecord, m: &MethodRepRecord) -> String {
    let covered = m
        .covered
        .map(|c| if c { "true" } else { "false" })
        .unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        rep.rep,
        rep.seed,
        float17(rep.satt),
        float17(rep.population_att),
        csv_field_string(&m.method),
        csv_field_opt_float(m.estimate),
        csv_field_opt_float(m.ci_lower),
        csv_field_opt_float(m.ci_upper),
        csv_field_opt_float(m.se),
        csv_field_opt_float(m.se_e),
        csv_field_opt_float(m.ess),
        csv_field_opt_float(m.v_over_nt),
        csv_field_opt_float(m.shared_controls),
        covered,
        csv_field_string(m.error.as_deref().unwrap_or_default()),
    )
}

/// Writes a file, creating the directory first.
pub fn write_artifact(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), contents)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_floats_use_17_digits() {
        let json = Json::object(vec![("x", Json::float(0.1))]);
        assert_eq!(json.0, "{\"x\":1.0000000000000001e-1}");
    }

    #[test]
    fn render_preserves_float_text() {
        let text = render(vec![
            ("x", Json::float(0.1)),
            (
                "list",
                Json::array(vec![
                    Json::object(vec![("a", Json::string("x,\"y\""))]),
                    Json::float(2.0),
                ]),
            ),
        ]);
        assert!(text.contains("1.0000000000000001e-1"), "{text}");
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed["x"].as_f64(), Some(0.1));
        assert_eq!(parsed["list"][0]["a"].as_str(), Some("x,\"y\""));
        assert_eq!(parsed["list"][1].as_f64(), Some(2.0));
    }

    #[test]
    fn json_escapes_strings() {
        let json = Json::object(vec![("s", Json::string("a\"b\\c"))]);
        let parsed: serde_json::Value = serde_json::from_str(&json.0).unwrap();
        assert_eq!(parsed["s"].as_str(), Some("a\"b\\c"));
    }

    #[test]
    fn csv_quotes_error_messages() {
        assert_eq!(csv_field_string("plain"), "plain");
        assert_eq!(
            csv_field_string("bad, \"worse\""),
            "\"bad, \"\"worse\"\"\""
        );
    }

    #[test]
    fn non_finite_floats_become_strings() {
        let json = Json::object(vec![("x", Json::float(f64::NAN))]);
        let parsed: serde_json::Value = serde_json::from_str(&json.0).unwrap();
        assert_eq!(parsed["x"].as_str(), Some("NaN"));
    }
}
