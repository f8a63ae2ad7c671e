use serde::{Deserialize, Serialize};

/// Detector degradation under a weather or lighting condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationProfile {
    pub name: String,
    /// Probability that a visible P-point goes undetected.
    pub point_dropout: f64,
    /// Probability that a visible line goes undetected, with all its L-points.
    pub line_dropout: f64,
    pub descriptor_noise_sigma: f64,
    pub pixel_noise_sigma: f64,
    pub confidence_scale: f64,
}

impl DegradationProfile {
    pub fn validate(&self) -> Result<(), String> {
        let prob = |x: f64| (0.0..=1.0).contains(&x);
        if !prob(self.point_dropout) || !prob(self.line_dropout) {
            return Err(format!("profile {}: dropout probabilities must lie in [0,1]", self.name));
        }
        if !(self.descriptor_noise_sigma >= 0.0 && self.pixel_noise_sigma >= 0.0) {
            return Err(format!("profile {}: noise sigmas must be non-negative", self.name));
        }
        if !(self.confidence_scale > 0.0 && self.confidence_scale <= 1.0) {
            return Err(format!("profile {}: confidence_scale must lie in (0,1]", self.name));
        }
        Ok(())
    }

    /// No dropout, no noise.
    pub fn noise_free() -> Self {
        Self {
            name: "noise_free".into(),
            point_dropout: 0.0,
            line_dropout: 0.0,
            descriptor_noise_sigma: 0.0,
            pixel_noise_sigma: 0.0,
            confidence_scale: 1.0,
        }
    }

    pub fn daytime() -> Self {
        Self {
            name: "daytime".into(),
            point_dropout: 0.05,
            line_dropout: 0.05,
            descriptor_noise_sigma: 0.05,
            pixel_noise_sigma: 0.3,
            confidence_scale: 1.0,
        }
    }

    pub fn fog() -> Self {
        Self {
            name: "fog".into(),
            point_dropout: 0.45,
            line_dropout: 0.10,
            descriptor_noise_sigma: 0.20,
            pixel_noise_sigma: 0.6,
            confidence_scale: 0.7,
        }
    }

    pub fn nighttime() -> Self {
        Self {
            name: "nighttime".into(),
            point_dropout: 0.55,
            line_dropout: 0.10,
            descriptor_noise_sigma: 0.25,
            pixel_noise_sigma: 0.8,
            confidence_scale: 0.5,
        }
    }

    /// Looks up a built-in profile (or `noise_free`) by name.
    pub fn by_name(name: &str) -> Option<Self> {
        builtin_profiles().into_iter().chain([Self::noise_free()]).find(|p| p.name == name)
    }
}

pub fn builtin_profiles() -> Vec<DegradationProfile> {
    vec![DegradationProfile::daytime(), DegradationProfile::fog(), DegradationProfile::nighttime()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_valid() {
        for p in builtin_profiles().iter().chain([&DegradationProfile::noise_free()]) {
            p.validate().unwrap();
            assert_eq!(DegradationProfile::by_name(&p.name).as_ref(), Some(p));
        }
        assert!(DegradationProfile::by_name("sandstorm").is_none());
        let bad = DegradationProfile { point_dropout: 1.5, ..DegradationProfile::daytime() };
        assert!(bad.validate().is_err());
    }
}
