use std::fmt::Write as _;

use ivimpute::{tsls_ri, wald_test, IVDataset, VarianceKind};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Everything `estimate` reports. Non-finite numbers (an exact first-stage
/// fit, a zero standard error) are written as the strings `"inf"`, `"-inf"`
/// or `"nan"` so the JSON stays valid and round-trips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub beta_hat: f64,
    pub se_robust_ri: f64,
    pub se_conventional: f64,
    pub ci_robust: [f64; 2],
    #[serde(with = "nonfinite")]
    pub t_robust: f64,
    pub p_hat: f64,
    pub n: usize,
    pub n0: usize,
    pub n1: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(with = "nonfinite")]
    pub cc_first_stage_f: f64,
    pub null: f64,
    pub alpha: f64,
    pub warnings: Vec<String>,
}

pub fn estimate(d: &IVDataset, null: f64, alpha: f64) -> CliResult<EstimateReport> {
    if !null.is_finite() {
        return Err(CliError::Validation(format!("--null must be finite, got {null}")));
    }
    let est = tsls_ri(d)?;
    let test = wald_test(est.beta_hat, est.variance_robust_ri, null, alpha, VarianceKind::RobustRi)?;
    Ok(EstimateReport {
        beta_hat: est.beta_hat,
        se_robust_ri: est.se_robust_ri,
        se_conventional: est.se_conventional,
        ci_robust: [test.ci_low, test.ci_high],
        t_robust: test.t_stat,
        p_hat: est.p_hat,
        n: est.n,
        n0: est.n0,
        n1: est.n1,
        l: d.l(),
        cc_first_stage_f: est.first_stage.f_statistic,
        null,
        alpha,
        warnings: est.warnings,
    })
}

impl EstimateReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Two aligned columns, one quantity per line.
    pub fn to_text(&self) -> String {
        let level = format!("{}%", ((1.0 - self.alpha) * 1e6).round() / 1e4);
        let rows: Vec<(String, String)> = vec![
            ("beta_hat".into(), fmt_num(self.beta_hat)),
            ("se_robust_ri".into(), fmt_num(self.se_robust_ri)),
            ("se_conventional".into(), fmt_num(self.se_conventional)),
            (
                format!("ci_robust ({level})"),
                format!("[{}, {}]", fmt_num(self.ci_robust[0]), fmt_num(self.ci_robust[1])),
            ),
            (format!("t_robust (null {})", fmt_num(self.null)), fmt_num(self.t_robust)),
            ("p_hat".into(), fmt_num(self.p_hat)),
            ("n".into(), self.n.to_string()),
            ("n0".into(), self.n0.to_string()),
            ("n1".into(), self.n1.to_string()),
            ("L".into(), self.l.to_string()),
            ("cc_first_stage_f".into(), fmt_num(self.cc_first_stage_f)),
        ];
        let width = rows.iter().map(|(k, _)| k.chars().count()).max().unwrap_or(0) + 2;
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}{v}");
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

mod nonfinite {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("expected a number, got `{other}`"))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EstimateReport {
        EstimateReport {
            beta_hat: 0.1 + 0.2,
            se_robust_ri: 1.0 / 3.0,
            se_conventional: 2.0f64.sqrt(),
            ci_robust: [-1e-300, 123456789.12345679],
            t_robust: f64::NEG_INFINITY,
            p_hat: 1.0 / 7.0,
            n: 10,
            n0: 7,
            n1: 3,
            l: 2,
            cc_first_stage_f: f64::INFINITY,
            null: 0.0,
            alpha: 0.05,
            warnings: vec!["w".into()],
        }
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let r = sample();
        let back: EstimateReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.beta_hat.to_bits(), r.beta_hat.to_bits());
    }

    #[test]
    fn json_field_names_are_stable() {
        let v: serde_json::Value = serde_json::from_str(&sample().to_json()).unwrap();
        for key in [
            "beta_hat",
            "se_robust_ri",
            "se_conventional",
            "ci_robust",
            "t_robust",
            "p_hat",
            "n",
            "n0",
            "n1",
            "L",
            "cc_first_stage_f",
            "warnings",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["cc_first_stage_f"], "inf");
    }

    #[test]
    fn text_is_aligned() {
        let text = sample().to_text();
        let cols: Vec<usize> = text
            .lines()
            .filter(|l| !l.starts_with("warning"))
            .map(|l| l.len() - l.split_once("  ").unwrap().1.trim_start().len())
            .collect();
        assert!(cols.windows(2).all(|w| w[0] == w[1]), "{text}");
        assert!(text.contains("ci_robust (95%)"));
        assert!(text.ends_with("warning: w\n"));
    }
}
