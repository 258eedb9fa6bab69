//! TOML schema for synthetic dataset specs.
//!
//! ```toml
//! n = 200            # feature dimensionality
//! l = 8              # number of classes
//! alpha = 2.0        # samples per feature: M = round(alpha * n)
//! rho0 = 0.5         # density of the true class centers
//! sigma_xi2 = 0.01   # observation noise variance
//! seed = 7           # optional, defaults to 0
//!
//! [variant]          # optional, defaults to plain
//! type = "amplified" # plain | common_components | correlated_noise | amplified
//! classes = [5, 6, 7, 8]   # 1-based class ids (amplified)
//! omega = 100.0            # amplification factor (amplified)
//! # r_common = 0.9         # shared fraction (common_components)
//! # corr = 0.9             # pairwise noise correlation (correlated_noise)
//! ```

use serde::Deserialize;

use mlrcv_core::datagen::{SynthSpec, Variant};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    n: usize,
    l: usize,
    alpha: f64,
    rho0: f64,
    sigma_xi2: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    variant: Option<VariantFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VariantFile {
    #[serde(rename = "type")]
    kind: String,
    r_common: Option<f64>,
    corr: Option<f64>,
    classes: Option<Vec<usize>>,
    omega: Option<f64>,
}

pub fn parse_spec(text: &str) -> Result<SynthSpec, String> {
    let file: SpecFile = toml::from_str(text).map_err(|e| format!("bad spec file: {e}"))?;
    let variant = match file.variant {
        None => Variant::Plain,
        Some(v) => match v.kind.as_str() {
            "plain" => Variant::Plain,
            "common_components" => Variant::CommonComponents {
                r_common: v
                    .r_common
                    .ok_or("common_components needs `r_common`")?,
            },
            "correlated_noise" => Variant::CorrelatedNoise {
                corr: v.corr.ok_or("correlated_noise needs `corr`")?,
            },
            "amplified" => {
                let classes = v.classes.ok_or("amplified needs `classes`")?;
                if classes.iter().any(|&c| c == 0) {
                    return Err("amplified classes are 1-based".into());
                }
                Variant::Amplified {
                    classes: classes.iter().map(|&c| c - 1).collect(),
                    omega: v.omega.ok_or("amplified needs `omega`")?,
                }
            }
            other => return Err(format!("unknown variant `{other}`")),
        },
    };
    Ok(SynthSpec {
        n: file.n,
        l: file.l,
        alpha: file.alpha,
        rho0: file.rho0,
        sigma_xi2: file.sigma_xi2,
        variant,
        seed: file.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_plain_spec() {
        let spec = parse_spec("n = 10\nl = 2\nalpha = 2.0\nrho0 = 0.5\nsigma_xi2 = 0.01\n")
            .unwrap();
        assert_eq!(spec.n, 10);
        assert_eq!(spec.variant, Variant::Plain);
        assert_eq!(spec.seed, 0);
    }

    #[test]
    fn parses_amplified_with_one_based_classes() {
        let text = "n = 10\nl = 8\nalpha = 2.0\nrho0 = 0.5\nsigma_xi2 = 0.1\nseed = 3\n\
                    [variant]\ntype = \"amplified\"\nclasses = [5, 6, 7, 8]\nomega = 100.0\n";
        let spec = parse_spec(text).unwrap();
        match spec.variant {
            Variant::Amplified { classes, omega } => {
                assert_eq!(classes, vec![4, 5, 6, 7]);
                assert_eq!(omega, 100.0);
            }
            _ => panic!("wrong variant"),
        }
    }

    #[test]
    fn rejects_unknown_fields_and_variants() {
        assert!(parse_spec("n = 10\nl = 2\nalpha = 1.0\nrho0 = 0.5\nsigma_xi2 = 0.0\nbogus = 1\n")
            .is_err());
        let text = "n = 10\nl = 2\nalpha = 1.0\nrho0 = 0.5\nsigma_xi2 = 0.0\n\
                    [variant]\ntype = \"mystery\"\n";
        assert!(parse_spec(text).is_err());
    }
}
