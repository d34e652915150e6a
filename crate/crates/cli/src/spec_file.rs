//! Line-spec files: a single line, or a batch of named `[[case]]` tables that
//! inherit top-level defaults.

use std::path::Path;

use flowline::{LineSpec, Policy, SimConfig};
use serde::Deserialize;
use toml::Spanned;

use crate::CliError;

const DEFAULT_EPSILON: f64 = 1e-4;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    replications: Option<usize>,
    horizon: Option<u64>,
    seed: Option<u64>,
    warmup: Option<u64>,
}

impl RawSim {
    fn over(&self, base: &RawSim) -> RawSim {
        RawSim {
            replications: self.replications.or(base.replications),
            horizon: self.horizon.or(base.horizon),
            seed: self.seed.or(base.seed),
            warmup: self.warmup.or(base.warmup),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCase {
    name: Option<String>,
    machines: Option<usize>,
    p: Vec<f64>,
    buffers: Vec<usize>,
    policy: Option<Policy>,
    epsilon: Option<f64>,
    sim: Option<RawSim>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    machines: Option<usize>,
    p: Option<Vec<f64>>,
    buffers: Option<Vec<usize>>,
    policy: Option<Policy>,
    epsilon: Option<f64>,
    sim: Option<RawSim>,
    case: Option<Vec<Spanned<RawCase>>>,
}

/// One fully resolved line to evaluate.
#[derive(Debug, Clone)]
pub struct Case {
    pub name: String,
    pub spec: LineSpec,
    pub epsilon: f64,
    pub sim: SimConfig,
}

/// Command-line overrides applied to every case.
#[derive(Debug, Default, Clone, Copy)]
pub struct Overrides {
    pub epsilon: Option<f64>,
    pub seed: Option<u64>,
    pub replications: Option<usize>,
    pub horizon: Option<u64>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<Vec<Case>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse(&text, overrides)
}

pub fn parse(text: &str, overrides: &Overrides) -> Result<Vec<Case>, CliError> {
    let raw: RawFile = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
    let defaults = raw.sim.clone().unwrap_or_default();
    let build = |line: usize, name: String, c: RawCase| -> Result<Case, CliError> {
        let invalid = |msg: String| CliError::Invalid {
            line,
            case: name.clone(),
            msg,
        };
        let machines = c.machines.or(raw.machines);
        if let Some(m) = machines {
            if m != c.p.len() {
                return Err(invalid(format!(
                    "machines = {m} but {} production probabilities given",
                    c.p.len()
                )));
            }
        }
        let policy = c.policy.or(raw.policy).unwrap_or(Policy::Eb);
        let spec = LineSpec::new(c.p, c.buffers, policy).map_err(|e| invalid(e.to_string()))?;
        let epsilon = overrides
            .epsilon
            .or(c.epsilon)
            .or(raw.epsilon)
            .unwrap_or(DEFAULT_EPSILON);
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        let s = c.sim.unwrap_or_default().over(&defaults);
        let base = SimConfig::default();
        let sim = SimConfig {
            replications: overrides.replications.or(s.replications).unwrap_or(base.replications),
            horizon: overrides.horizon.or(s.horizon).unwrap_or(base.horizon),
            base_seed: overrides.seed.or(s.seed).unwrap_or(base.base_seed),
            warmup: s.warmup.unwrap_or(base.warmup),
        };
        sim.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(Case {
            name,
            spec,
            epsilon,
            sim,
        })
    };

    match (raw.case, raw.p, raw.buffers) {
        (Some(_), Some(_), _) | (Some(_), _, Some(_)) => Err(CliError::Parse(
            "a file holds either a single line (p, buffers) or [[case]] tables, not both".into(),
        )),
        (Some(cases), None, None) => cases
            .into_iter()
            .enumerate()
            .map(|(i, spanned)| {
                let line = line_of(text, spanned.span().start);
                let c = spanned.into_inner();
                let name = c.name.clone().unwrap_or_else(|| (i + 1).to_string());
                build(line, name, c)
            })
            .collect(),
        (None, Some(p), Some(buffers)) => {
            let single = RawCase {
                name: None,
                machines: None,
                p,
                buffers,
                policy: None,
                epsilon: None,
                sim: None,
            };
            Ok(vec![build(1, "1".into(), single)?])
        }
        (None, _, _) => Err(CliError::Parse(
            "missing `p` and `buffers` (or a list of [[case]] tables)".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_line_with_defaults() {
        let cases = parse(
            "machines = 3\np = [0.5, 0.6, 0.7]\nbuffers = [1, 2]\n",
            &Overrides::default(),
        )
        .unwrap();
        assert_eq!(cases.len(), 1);
        assert_eq!(cases[0].spec.policy(), Policy::Eb);
        assert_eq!(cases[0].epsilon, 1e-4);
        assert_eq!(cases[0].sim.replications, 30);
    }

    #[test]
    fn batch_inherits_and_overrides() {
        let text = r#"
policy = "ib"
epsilon = 0.001
[sim]
replications = 5
horizon = 1000

[[case]]
name = "a"
p = [0.5, 0.5]
buffers = [1]

[[case]]
p = [0.5, 0.5, 0.5]
buffers = [0, 1]
policy = "eb"
sim = { horizon = 50 }
"#;
        let o = Overrides {
            seed: Some(9),
            ..Overrides::default()
        };
        let cases = parse(text, &o).unwrap();
        assert_eq!(cases[0].name, "a");
        assert_eq!(cases[0].spec.policy(), Policy::Ib);
        assert_eq!(cases[1].name, "2");
        assert_eq!(cases[1].spec.policy(), Policy::Eb);
        assert_eq!(cases[1].sim.horizon, 50);
        assert_eq!(cases[1].sim.replications, 5);
        assert_eq!(cases[1].sim.base_seed, 9);
        assert_eq!(cases[1].epsilon, 0.001);
    }

    #[test]
    fn empty_batch() {
        assert!(parse("case = []\n", &Overrides::default()).unwrap().is_empty());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse("p = [0.5, 0.5]\nbuffers = [1]\ncolour = 3\n", &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let text = "\n[[case]]\np = [0.5]\nbuffers = []\n\n[[case]]\np = [0.5, 1.5]\nbuffers = [1]\n";
        let err = parse(text, &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = parse("machines = 3\np = [0.5, 0.5]\nbuffers = [1]\n", &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("machines"), "{err}");
    }
}
