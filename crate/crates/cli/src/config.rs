//! Coverage-study config files.
//!
//! The grammar is line-oriented: `key = value` pairs, `#` starts a comment
//! anywhere on a line, and a `[method]` header opens one method block.
//! Keys before the first header describe the data-generating process and
//! the study; each `[method]` block describes one estimator. Unknown keys
//! are errors, as are keys that do not apply to the selected generator or
//! matcher.

use std::collections::BTreeMap;
use std::path::Path;

use matchvar::matching::Metric;
use matchvar::pipeline::{MatcherSpec, MethodSpec, VarianceSpec};
use matchvar::simulation::dgp::{CheParams, DgpConfig, OtsuRaiParams, OverlapLevel};
use matchvar::simulation::{CoverageTarget, SimulationSpec};
use matchvar::variance::BootstrapMultiplier;
use matchvar::{Error, Result};

/// One parsed block: keys in file order with the line each came from.
#[derive(Debug, Default)]
struct Block {
    entries: BTreeMap<String, (String, usize)>,
}

impl Block {
    fn insert(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        if let Some((_, first)) = self.entries.get(key) {
            return Err(Error::Parameter(format!(
                "config line {line}: key '{key}' already set on line {first}"
            )));
        }
        self.entries
            .insert(key.to_owned(), (value.to_owned(), line));
        Ok(())
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(v, _)| v)
    }

    /// Errors on the first remaining (unconsumed) key.
    fn finish(self, context: &str) -> Result<()> {
        if let Some((key, (_, line))) = self.entries.into_iter().next() {
            return Err(Error::Parameter(format!(
                "config line {line}: key '{key}' does not apply to {context}"
            )));
        }
        Ok(())
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| {
        Error::Parameter(format!("config key '{key}': cannot parse '{value}': {e}"))
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Parameter(format!(
            "config key '{key}': expected true or false, got '{other}'"
        ))),
    }
}

/// Splits the file into the global block and one block per `[method]`
/// header.
fn split_blocks(text: &str) -> Result<(Block, Vec<Block>)> {
    let mut globals = Block::default();
    let mut methods: Vec<Block> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| {
                    Error::Parameter(format!("config line {line_no}: unterminated section header"))
                })?
                .trim();
            if name != "method" {
                return Err(Error::Parameter(format!(
                    "config line {line_no}: unknown section '[{name}]', expected [method]"
                )));
            }
            methods.push(Block::default());
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Parameter(format!(
                "config line {line_no}: expected 'key = value', got '{line}'"
            ))
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(Error::Parameter(format!(
                "config line {line_no}: empty key or value"
            )));
        }
        match methods.last_mut() {
            Some(block) => block.insert(key, value, line_no)?,
            None => globals.insert(key, value, line_no)?,
        }
    }
    Ok((globals, methods))
}

fn dgp_from(globals: &mut Block) -> Result<DgpConfig> {
    let family = globals
        .take("dgp")
        .ok_or_else(|| Error::Parameter("config: missing required key 'dgp'".into()))?;
    match family.as_str() {
        "otsu_rai" => {
            let mut params = OtsuRaiParams::default();
            let n = match globals.take("n") {
                Some(v) => parse_value("n", &v)?,
                None => 100,
            };
            if let Some(v) = globals.take("tau") {
                params.tau = parse_value("tau", &v)?;
            }
            if let Some(v) = globals.take("noise_sd") {
                params.noise_sd = parse_value("noise_sd", &v)?;
            }
            if let Some(v) = globals.take("gamma1") {
                params.gamma1 = parse_value("gamma1", &v)?;
            }
            if let Some(v) = globals.take("gamma2") {
                params.gamma2 = parse_value("gamma2", &v)?;
            }
            let fixed_t = globals.take("fixed_treated");
            let fixed_c = globals.take("fixed_controls");
            params.fixed_counts = match (fixed_t, fixed_c) {
                (Some(t), Some(c)) => Some((
                    parse_value("fixed_treated", &t)?,
                    parse_value("fixed_controls", &c)?,
                )),
                (None, None) => None,
                _ => {
                    return Err(Error::Parameter(
                        "config: fixed_treated and fixed_controls must be set together".into(),
                    ))
                }
            };
            Ok(DgpConfig::OtsuRai { n, params })
        }
        "che" => {
            let overlap = globals
                .take("overlap")
                .ok_or_else(|| Error::Parameter("config: dgp che requires 'overlap'".into()))?;
            let overlap = OverlapLevel::parse(&overlap)?;
            let mut params = CheParams::default();
            if let Some(v) = globals.take("n_treated") {
                params.n_treated = parse_value("n_treated", &v)?;
            }
            if let Some(v) = globals.take("n_controls") {
                params.n_controls = parse_value("n_controls", &v)?;
            }
            if let Some(v) = globals.take("rho") {
                params.rho = parse_value("rho", &v)?;
            }
            if let Some(v) = globals.take("tau_scale") {
                params.tau_scale = parse_value("tau_scale", &v)?;
            }
            if let Some(v) = globals.take("noise_sd") {
                params.noise_sd = parse_value("noise_sd", &v)?;
            }
            Ok(DgpConfig::CheEtAl { overlap, params })
        }
        "kang_schafer" => {
            let n = match globals.take("n") {
                Some(v) => parse_value("n", &v)?,
                None => 500,
            };
            let tau = match globals.take("tau") {
                Some(v) => parse_value("tau", &v)?,
                None => 0.0,
            };
            Ok(DgpConfig::KangSchafer { n, tau })
        }
        other => Err(Error::Parameter(format!(
            "config key 'dgp': unknown generator '{other}', expected \
             otsu_rai, che, or kang_schafer"
        ))),
    }
}

fn matcher_from(block: &mut Block) -> Result<MatcherSpec> {
    let matcher = block
        .take("matcher")
        .ok_or_else(|| Error::Parameter("config: method block missing 'matcher'".into()))?;
    let metric = match block.take("metric") {
        Some(v) => match v.as_str() {
            "euclidean" => Metric::Euclidean,
            "standardized" => Metric::Standardized,
            other => {
                return Err(Error::Parameter(format!(
                    "config key 'metric': unknown metric '{other}'"
                )))
            }
        },
        None => Metric::Euclidean,
    };
    match matcher.as_str() {
        "mnn" | "scm" => {
            let synthetic = matcher == "scm";
            match (block.take("m"), block.take("caliper")) {
                (Some(m), None) => Ok(MatcherSpec::MNearest {
                    m: parse_value("m", &m)?,
                    metric,
                    synthetic,
                }),
                (None, Some(c)) if synthetic => Ok(MatcherSpec::Radius {
                    c: parse_value("caliper", &c)?,
                    metric,
                    synthetic,
                }),
                (None, None) => Err(Error::Parameter(format!(
                    "config: matcher {matcher} requires 'm'"
                ))),
                _ => Err(Error::Parameter(format!(
                    "config: invalid neighbourhood keys for matcher {matcher}"
                ))),
            }
        }
        "radius" => {
            let c = block
                .take("caliper")
                .ok_or_else(|| Error::Parameter("config: matcher radius requires 'caliper'".into()))?;
            Ok(MatcherSpec::Radius {
                c: parse_value("caliper", &c)?,
                metric,
                synthetic: false,
            })
        }
        "propensity" => {
            let m = block
                .take("m")
                .ok_or_else(|| Error::Parameter("config: matcher propensity requires 'm'".into()))?;
            Ok(MatcherSpec::PropensityNearest {
                m: parse_value("m", &m)?,
            })
        }
        "sbw" => {
            let delta = match block.take("delta") {
                Some(v) => parse_value("delta", &v)?,
                None => 0.05,
            };
            let standardize = match block.take("standardize") {
                Some(v) => parse_bool("standardize", &v)?,
                None => true,
            };
            let s2_neighbors = match block.take("s2_neighbors") {
                Some(v) => parse_value("s2_neighbors", &v)?,
                None => 4,
            };
            Ok(MatcherSpec::Balancing {
                delta,
                standardize,
                s2_neighbors,
            })
        }
        other => Err(Error::Parameter(format!(
            "config key 'matcher': unknown matcher '{other}', expected \
             mnn, radius, scm, propensity, or sbw"
        ))),
    }
}

fn variance_from(block: &mut Block) -> Result<VarianceSpec> {
    let variance = block
        .take("variance")
        .ok_or_else(|| Error::Parameter("config: method block missing 'variance'".into()))?;
    match variance.as_str() {
        "pooled" => Ok(VarianceSpec::Pooled),
        "ai06" => {
            let m = match block.take("ai06_m") {
                Some(v) => parse_value("ai06_m", &v)?,
                None => 2,
            };
            Ok(VarianceSpec::Ai06 { m })
        }
        "bootstrap" => {
            let b = match block.take("bootstrap_b") {
                Some(v) => parse_value("bootstrap_b", &v)?,
                None => 200,
            };
            let multiplier = match block.take("multiplier") {
                Some(v) => match v.as_str() {
                    "rademacher" => BootstrapMultiplier::Rademacher,
                    "mammen" => BootstrapMultiplier::Mammen,
                    other => {
                        return Err(Error::Parameter(format!(
                            "config key 'multiplier': unknown multiplier '{other}'"
                        )))
                    }
                },
                None => BootstrapMultiplier::Rademacher,
            };
            Ok(VarianceSpec::WildBootstrap { b, multiplier })
        }
        other => Err(Error::Parameter(format!(
            "config key 'variance': unknown method '{other}', expected \
             pooled, ai06, or bootstrap"
        ))),
    }
}

fn method_from(mut block: Block, index: usize) -> Result<MethodSpec> {
    let name = block
        .take("name")
        .unwrap_or_else(|| format!("method_{}", index + 1));
    let matcher = matcher_from(&mut block)?;
    let variance = variance_from(&mut block)?;
    let debias = match block.take("debias") {
        Some(v) => parse_bool("debias", &v)?,
        None => false,
    };
    block.finish(&format!("method '{name}'"))?;
    Ok(MethodSpec {
        name,
        matcher,
        variance,
        debias,
    })
}

/// Parses config text into a full simulation description.
pub fn parse_simulation(text: &str) -> Result<SimulationSpec> {
    let (mut globals, method_blocks) = split_blocks(text)?;
    let dgp = dgp_from(&mut globals)?;
    let n_reps = globals
        .take("n_reps")
        .ok_or_else(|| Error::Parameter("config: missing required key 'n_reps'".into()))
        .and_then(|v| parse_value("n_reps", &v))?;
    let base_seed = globals
        .take("seed")
        .ok_or_else(|| Error::Parameter("config: missing required key 'seed'".into()))
        .and_then(|v| parse_value("seed", &v))?;
    let level = match globals.take("level") {
        Some(v) => parse_value("level", &v)?,
        None => 0.95,
    };
    let target = match globals.take("target") {
        Some(v) => CoverageTarget::parse(&v)?,
        None => CoverageTarget::PopulationAtt,
    };
    globals.finish("the study preamble")?;

    if method_blocks.is_empty() {
        return Err(Error::Parameter(
            "config: at least one [method] section is required".into(),
        ));
    }
    let methods = method_blocks
        .into_iter()
        .enumerate()
        .map(|(i, b)| method_from(b, i))
        .collect::<Result<Vec<_>>>()?;

    let spec = SimulationSpec {
        dgp,
        n_reps,
        base_seed,
        level,
        target,
        methods,
    };
    spec.validate()?;
    Ok(spec)
}

/// Reads and parses a config file.
pub fn load_simulation(path: &Path) -> Result<SimulationSpec> {
    let text = std::fs::read_to_string(path)?;
    parse_simulation(&text)
}
