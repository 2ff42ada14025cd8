use std::fmt;

use nalgebra::{DMatrix, DVector};

use super::brisque::{BrisqueFeatures, FEATURE_COUNT};
use crate::error::{Error, Result};

pub const DEGENERATE_SCORE: f64 = 100.0;
pub const WEAK_LIMIT: f64 = 40.0;
pub const STRONG_LIMIT: f64 = 80.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SeverityClass {
    Weak,
    Medium,
    Strong,
}

impl fmt::Display for SeverityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SeverityClass::Weak => "weak",
            SeverityClass::Medium => "medium",
            SeverityClass::Strong => "strong",
        })
    }
}

/// `[0, 40)` weak, `[40, 80)` medium, `[80, inf)` strong.
pub fn classify(score: f64) -> SeverityClass {
    if score >= STRONG_LIMIT {
        SeverityClass::Strong
    } else if score >= WEAK_LIMIT {
        SeverityClass::Medium
    } else {
        SeverityClass::Weak
    }
}

/// Linear model on standardised features.
#[derive(Clone, Debug, PartialEq)]
pub struct SeverityModel {
    pub version: String,
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub bias: f64,
}

const BUNDLED: &str = include_str!("severity_model.txt");

fn parse_list(v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|s| s.trim().parse::<f64>().map_err(|e| Error::Config(format!("severity model value '{s}': {e}")))).collect()
}

impl SeverityModel {
    pub fn bundled() -> &'static SeverityModel {
        static MODEL: std::sync::OnceLock<SeverityModel> = std::sync::OnceLock::new();
        MODEL.get_or_init(|| SeverityModel::parse(BUNDLED).expect("bundled severity model parses"))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (mut version, mut weights, mut means, mut scales, mut bias) = (None, None, None, None, None);
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("severity model line '{line}'")))?;
            match k.trim() {
                "version" => version = Some(v.trim().to_string()),
                "weights" => weights = Some(parse_list(v)?),
                "means" => means = Some(parse_list(v)?),
                "scales" => scales = Some(parse_list(v)?),
                "bias" => bias = Some(parse_list(v)?[0]),
                other => return Err(Error::Config(format!("unknown severity model key '{other}'"))),
            }
        }
        let missing = |k: &str| Error::Config(format!("severity model missing '{k}'"));
        let m = SeverityModel {
            version: version.ok_or_else(|| missing("version"))?,
            weights: weights.ok_or_else(|| missing("weights"))?,
            means: means.ok_or_else(|| missing("means"))?,
            scales: scales.ok_or_else(|| missing("scales"))?,
            bias: bias.ok_or_else(|| missing("bias"))?,
        };
        if [&m.weights, &m.means, &m.scales].iter().any(|v| v.len() != FEATURE_COUNT) || m.scales.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("severity model needs 36 weights, means and positive scales".into()));
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:.12e}")).collect::<Vec<_>>().join(",");
        format!(
            "# linear severity model on standardised BRISQUE features\nversion={}\nbias={:.12e}\nweights={}\nmeans={}\nscales={}\n",
            self.version,
            self.bias,
            join(&self.weights),
            join(&self.means),
            join(&self.scales)
        )
    }

    /// Raw linear response, clamped at 0. Degenerate features score 100 with the flag set.
    pub fn score(&self, f: &BrisqueFeatures) -> (f64, bool) {
        if f.any_degenerate() {
            return (DEGENERATE_SCORE, true);
        }
        let s: f64 = (0..FEATURE_COUNT).map(|i| self.weights[i] * (f.values[i] - self.means[i]) / self.scales[i]).sum::<f64>() + self.bias;
        (s.max(0.0), false)
    }

    /// Ridge regression of `targets` on standardised features.
    pub fn fit(features: &[[f64; FEATURE_COUNT]], targets: &[f64], ridge: f64, version: &str) -> Result<Self> {
        let n = features.len();
        if n < 2 || n != targets.len() {
            return Err(Error::invalid(format!("severity fit needs matching rows, got {n} features and {} targets", targets.len())));
        }
        let mut means = vec![0.0; FEATURE_COUNT];
        let mut scales = vec![0.0; FEATURE_COUNT];
        for j in 0..FEATURE_COUNT {
            let m = features.iter().map(|f| f[j]).sum::<f64>() / n as f64;
            let v = features.iter().map(|f| (f[j] - m).powi(2)).sum::<f64>() / n as f64;
            means[j] = m;
            scales[j] = if v > 0.0 { v.sqrt() } else { 1.0 };
        }
        let z = DMatrix::from_fn(n, FEATURE_COUNT, |i, j| (features[i][j] - means[j]) / scales[j]);
        let ybar = targets.iter().sum::<f64>() / n as f64;
        let y = DVector::from_iterator(n, targets.iter().map(|t| t - ybar));
        let a = z.transpose() * &z + DMatrix::identity(FEATURE_COUNT, FEATURE_COUNT) * ridge;
        let b = z.transpose() * y;
        let w = a.cholesky().ok_or_else(|| Error::Degenerate("severity normal equations not positive definite".into()))?.solve(&b);
        Ok(SeverityModel { version: version.into(), weights: w.iter().copied().collect(), means, scales, bias: ybar })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_boundaries() {
        assert_eq!(classify(0.0), SeverityClass::Weak);
        assert_eq!(classify(35.0), SeverityClass::Weak);
        assert_eq!(classify(39.999), SeverityClass::Weak);
        assert_eq!(classify(40.0), SeverityClass::Medium);
        assert_eq!(classify(79.9), SeverityClass::Medium);
        assert_eq!(classify(80.0), SeverityClass::Strong);
    }

    #[test]
    fn text_roundtrip_and_fit_recovers_linear_target() {
        let feats: Vec<[f64; FEATURE_COUNT]> =
            (0..200).map(|i| std::array::from_fn(|j| ((i * 7 + j * 13) % 17) as f64 + (i as f64 * 0.01 * j as f64).sin())).collect();
        let targets: Vec<f64> = feats.iter().map(|f| 3.0 * f[0] - 2.0 * f[5] + 10.0).collect();
        let m = SeverityModel::fit(&feats, &targets, 1e-9, "t").unwrap();
        let bf = BrisqueFeatures { values: feats[3], degenerate: [false; FEATURE_COUNT] };
        assert!((m.score(&bf).0 - targets[3]).abs() < 1e-5);
        let back = SeverityModel::parse(&m.to_text()).unwrap();
        assert!((back.score(&bf).0 - m.score(&bf).0).abs() < 1e-8);
        assert!(SeverityModel::parse("version=1\n").is_err());
    }

    #[test]
    fn degenerate_scores_100() {
        let bf = BrisqueFeatures { values: [0.0; FEATURE_COUNT], degenerate: [true; FEATURE_COUNT] };
        assert_eq!(SeverityModel::bundled().score(&bf), (100.0, true));
    }
}
