use std::str::FromStr;

use arst_core::losses::STYLE_LAYERS;

/// Value of the `--alpha` flag.
#[derive(Debug, Clone, PartialEq)]
pub enum AlphaArg {
    /// One weight per style layer, each in [0, 1].
    Fixed(Vec<f64>),
    /// Weights and noise mask drawn from this seed.
    Random(u64),
}

impl FromStr for AlphaArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if let Some(seed) = s.strip_prefix("random:") {
            return seed
                .trim()
                .parse()
                .map(AlphaArg::Random)
                .map_err(|e| format!("bad seed {seed:?}: {e}"));
        }
        let values = s
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| format!("bad value {v:?}: {e}"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        validate_alpha(&values)?;
        Ok(AlphaArg::Fixed(values))
    }
}

/// Check count and range of explicit style weights.
pub fn validate_alpha(values: &[f64]) -> Result<(), String> {
    if values.len() != STYLE_LAYERS.len() {
        return Err(format!(
            "expected {} style weights, got {}",
            STYLE_LAYERS.len(),
            values.len()
        ));
    }
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(format!("style weight {v} is outside [0, 1]"));
    }
    Ok(())
}

/// Parse a comma-separated list of floats.
pub fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| format!("bad value {v:?}: {e}"))
        })
        .collect()
}
