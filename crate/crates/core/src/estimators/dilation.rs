use serde::{Deserialize, Serialize};

/// One entry of a dilation profile: layers whose name matches `pattern`
/// (`*` wildcards) use dilation `factor` for model timesteps in
/// `t_min..=t_max`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DilationRule {
    pub pattern: String,
    pub factor: usize,
    pub t_min: usize,
    pub t_max: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DilationProfile {
    #[serde(default, rename = "rule")]
    pub rules: Vec<DilationRule>,
}

impl DilationProfile {
    /// Every layer at every timestep dilated by `factor`.
    pub fn uniform(factor: usize) -> Self {
        Self {
            rules: vec![DilationRule {
                pattern: "*".into(),
                factor,
                t_min: 0,
                t_max: usize::MAX,
            }],
        }
    }

    /// Dilation for `layer` at `model_timestep`; the first matching rule wins,
    /// unmatched layers are undilated.
    pub fn dilation_for(&self, layer: &str, model_timestep: usize) -> usize {
        self.rules
            .iter()
            .find(|r| (r.t_min..=r.t_max).contains(&model_timestep) && wildcard_match(&r.pattern, layer))
            .map_or(1, |r| r.factor.max(1))
    }

    /// Largest dilation any rule can apply.
    pub fn max_factor(&self) -> usize {
        self.rules.iter().map(|r| r.factor).max().unwrap_or(1).max(1)
    }

    /// Profile with every factor multiplied by `factor`.
    pub fn scaled(&self, factor: usize) -> Self {
        Self {
            rules: self
                .rules
                .iter()
                .map(|r| DilationRule {
                    factor: r.factor * factor,
                    ..r.clone()
                })
                .collect(),
        }
    }
}

fn wildcard_match(pattern: &str, text: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == text;
    }
    let (first, last) = (parts[0], parts[parts.len() - 1]);
    if !text.starts_with(first) || text.len() < first.len() + last.len() || !text.ends_with(last) {
        return false;
    }
    let mut rest = &text[first.len()..text.len() - last.len()];
    for part in &parts[1..parts.len() - 1] {
        match rest.find(part) {
            Some(pos) => rest = &rest[pos + part.len()..],
            None => return false,
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wildcards() {
        assert!(wildcard_match("*", "conv_in"));
        assert!(wildcard_match("conv_*", "conv_mid"));
        assert!(wildcard_match("*mid*", "down.conv_mid.1"));
        assert!(wildcard_match("a*b*c", "aXXbYYc"));
        assert!(!wildcard_match("a*b*c", "aXXcYYb"));
        assert!(!wildcard_match("conv_in", "conv_mid"));
        assert!(!wildcard_match("ab*ba", "aba"));
    }

    #[test]
    fn first_matching_rule_and_time_window() {
        let profile = DilationProfile {
            rules: vec![
                DilationRule {
                    pattern: "up.*".into(),
                    factor: 2,
                    t_min: 500,
                    t_max: 1000,
                },
                DilationRule {
                    pattern: "*".into(),
                    factor: 3,
                    t_min: 0,
                    t_max: 1000,
                },
            ],
        };
        assert_eq!(profile.dilation_for("up.conv1", 700), 2);
        assert_eq!(profile.dilation_for("up.conv1", 100), 3);
        assert_eq!(profile.dilation_for("mid", 100), 3);
        assert_eq!(profile.dilation_for("mid", 2000), 1);
        assert_eq!(profile.max_factor(), 3);
        assert_eq!(profile.scaled(2).dilation_for("mid", 10), 6);
    }
}
