//! Flat `key=value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::TrainingConfig;
use crate::model::ModelConfig;
use crate::{Error, Result};

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// later keys override earlier ones.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(i + 1, "expected key=value"))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::parse(i + 1, "empty key"));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Model structure plus optimiser settings for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub training: TrainingConfig,
}

pub const DEFAULT_ORDER: usize = 4;

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidArgument(format!("invalid value `{v}` for `{key}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::InvalidArgument(format!("invalid boolean `{v}` for `{key}`"))),
    }
}

/// Parses a variant name such as `CLBL++` or `LBL+c` into its flags
/// `(context_additive, output_additive, class_based)`.
pub fn parse_variant(name: &str) -> Result<(bool, bool, bool)> {
    let (class_based, rest) = if let Some(r) = name.strip_prefix("CLBL") {
        (true, r)
    } else if let Some(r) = name.strip_prefix("LBL") {
        (false, r)
    } else {
        return Err(Error::InvalidArgument(format!("unknown model variant `{name}`")));
    };
    let (c, o) = match rest {
        "" => (false, false),
        "+c" => (true, false),
        "+o" => (false, true),
        "++" => (true, true),
        _ => return Err(Error::InvalidArgument(format!("unknown model variant `{name}`"))),
    };
    Ok((c, o, class_based))
}

impl RunConfig {
    /// Builds a configuration from parsed keys. `dim` is required; every
    /// other key has a default. Unknown keys are rejected.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut t = TrainingConfig::default();
        let mut order = DEFAULT_ORDER;
        let mut dim = None;
        let mut variant = (true, true, true);
        for (k, v) in map {
            match k.as_str() {
                "variant" => variant = parse_variant(v)?,
                "order" => order = parse_value(k, v)?,
                "dim" => dim = Some(parse_value(k, v)?),
                "minibatch_size" => t.minibatch_size = parse_value(k, v)?,
                "step_size" => t.step_size = parse_value(k, v)?,
                "l2_lambda" => t.l2_lambda = parse_value(k, v)?,
                "regularize_biases" => t.regularize_biases = parse_bool(k, v)?,
                "nce_noise" => t.nce_noise = parse_value(k, v)?,
                "init_sigma" => t.init_sigma = parse_value(k, v)?,
                "adagrad_epsilon" => t.adagrad_epsilon = parse_value(k, v)?,
                "max_epochs" => t.max_epochs = parse_value(k, v)?,
                "seed" => t.seed = parse_value(k, v)?,
                _ => return Err(Error::InvalidArgument(format!("unknown configuration key `{k}`"))),
            }
        }
        let dim = dim.ok_or_else(|| Error::Missing("dim".into()))?;
        let model = ModelConfig {
            order,
            dim,
            context_additive: variant.0,
            output_additive: variant.1,
            class_based: variant.2,
        };
        model.validate()?;
        t.validate()?;
        Ok(Self { model, training: t })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_map(&parse_key_values(text)?)
    }

    /// Every key with its effective value, in a form [`Self::parse`] accepts.
    pub fn to_key_values(&self) -> String {
        let t = &self.training;
        let mut s = String::new();
        let _ = writeln!(s, "variant={}", self.model);
        let _ = writeln!(s, "order={}", self.model.order);
        let _ = writeln!(s, "dim={}", self.model.dim);
        let _ = writeln!(s, "minibatch_size={}", t.minibatch_size);
        let _ = writeln!(s, "step_size={:?}", t.step_size);
        let _ = writeln!(s, "l2_lambda={:?}", t.l2_lambda);
        let _ = writeln!(s, "regularize_biases={}", t.regularize_biases);
        let _ = writeln!(s, "nce_noise={}", t.nce_noise);
        let _ = writeln!(s, "init_sigma={:?}", t.init_sigma);
        let _ = writeln!(s, "adagrad_epsilon={:?}", t.adagrad_epsilon);
        let _ = writeln!(s, "max_epochs={}", t.max_epochs);
        let _ = writeln!(s, "seed={}", t.seed);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_text() {
        let cfg = RunConfig::parse("dim = 16\nvariant=LBL+o # comment\nstep_size=0.08\n").unwrap();
        assert_eq!(cfg.model.dim, 16);
        assert!(!cfg.model.class_based && cfg.model.output_additive && !cfg.model.context_additive);
        assert_eq!(cfg.training.step_size, 0.08);
        assert_eq!(RunConfig::parse(&cfg.to_key_values()).unwrap(), cfg);
    }

    #[test]
    fn dim_is_required() {
        assert!(matches!(RunConfig::parse("order=3"), Err(Error::Missing(_))));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::parse("dim=4\nfoo=1").is_err());
        assert!(RunConfig::parse("dim=4\nstep_size=-1").is_err());
        assert!(RunConfig::parse("dim=4\nnce_noise=0").is_err());
        assert!(RunConfig::parse("dim=4\nvariant=RNN").is_err());
        assert!(RunConfig::parse("dim").is_err());
    }

    #[test]
    fn variant_names() {
        assert_eq!(parse_variant("CLBL").unwrap(), (false, false, true));
        assert_eq!(parse_variant("LBL+c").unwrap(), (true, false, false));
        assert_eq!(parse_variant("CLBL++").unwrap(), (true, true, true));
    }
}
