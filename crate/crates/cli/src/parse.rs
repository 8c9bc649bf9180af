//! Option strings for corridor specs and law config files.

use std::fs;
use std::path::Path;

use brw_core::corridor::{BandShape, KnotBand, ProfileBand, Threshold};
use brw_core::laws::{LawConfig, ReproductionLaw};
use brw_core::{Mark, Scaling, Walk};

pub type ParseResult<T> = std::result::Result<T, String>;

fn num(s: &str, what: &str) -> ParseResult<f64> {
    s.trim().parse::<f64>().map_err(|_| format!("{what}: cannot parse {s:?} as a number"))
}

fn int(s: &str, what: &str) -> ParseResult<usize> {
    s.trim().parse::<usize>().map_err(|_| format!("{what}: cannot parse {s:?} as an integer"))
}

/// `(key, value)` pairs from `a=b;c=d`.
fn pairs<'a>(s: &'a str, what: &str) -> ParseResult<Vec<(&'a str, &'a str)>> {
    s.split(';')
        .map(|p| p.split_once('=').ok_or_else(|| format!("{what}: expected key=value, got {p:?}")))
        .collect()
}

pub fn band(s: &str) -> ParseResult<BandShape<f64>> {
    if let Some(rest) = s.strip_prefix("profile:") {
        let v: Vec<&str> = rest.split(':').collect();
        if v.len() != 3 {
            return Err(format!("--band: profile needs lambda:lambda_star:delta, got {rest:?}"));
        }
        let (lambda, lambda_star, delta) = (num(v[0], "--band")?, num(v[1], "--band")?, num(v[2], "--band")?);
        if !(lambda_star > 0.0) || !(delta >= 0.0) {
            return Err("--band: profile needs lambda_star > 0 and delta >= 0".into());
        }
        return Ok(BandShape::Profile(ProfileBand { lambda, lambda_star, delta }));
    }
    KnotBand::parse(s).map(BandShape::Knots).map_err(|e| format!("--band: {e}"))
}

pub fn walk(s: &str) -> ParseResult<Walk> {
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    match kind {
        "lattice" => Ok(Walk::symmetric(num(rest, "--walk")?)),
        "gaussian" => Ok(Walk::Gaussian { sigma2: num(rest, "--walk")? }),
        "table" => {
            let steps = pairs(rest, "--walk")?
                .into_iter()
                .map(|(x, p)| Ok((num(x, "--walk")?, num(p, "--walk")?)))
                .collect::<ParseResult<Vec<_>>>()?;
            Ok(Walk::Table { steps })
        }
        other => Err(format!("--walk: unknown walk {other:?} (lattice|gaussian|table)")),
    }
}

pub fn mark(s: &str) -> ParseResult<Mark> {
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    match kind {
        "none" => Ok(Mark::None),
        "bounded" => Ok(Mark::Bounded { max: num(rest, "--mark")? }),
        "pareto" => Ok(Mark::ParetoTail { c: num(rest, "--mark")? }),
        "two-point" => Ok(Mark::TwoPoint { c: num(rest, "--mark")? }),
        other => Err(format!("--mark: unknown mark {other:?} (none|bounded|pareto|two-point)")),
    }
}

pub fn threshold(s: &str) -> ParseResult<Threshold<f64>> {
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    match kind {
        "const" => Ok(Threshold::Const(num(rest, "--threshold")?)),
        "scaled" => Ok(Threshold::ScaledAn(num(rest, "--threshold")?)),
        "linear" => Ok(Threshold::Linear),
        other => Err(format!("--threshold: unknown rule {other:?} (const|scaled|linear)")),
    }
}

pub fn an_rule(s: &str) -> ParseResult<Scaling> {
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    match kind {
        "cube-root" => Ok(Scaling::CubeRoot),
        "fourth-root" => Ok(Scaling::FourthRoot),
        "fixed" => Ok(Scaling::Fixed(num(rest, "--an-rule")?)),
        "table" => {
            let rows = pairs(rest, "--an-rule")?
                .into_iter()
                .map(|(n, a)| Ok((int(n, "--an-rule")?, num(a, "--an-rule")?)))
                .collect::<ParseResult<Vec<_>>>()?;
            Ok(Scaling::Table(rows))
        }
        other => Err(format!("--an-rule: unknown rule {other:?} (cube-root|fourth-root|fixed|table)")),
    }
}

pub fn law_config(path: &Path) -> ParseResult<LawConfig> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Loads and validates a law.
pub fn law(path: &Path) -> ParseResult<(LawConfig, ReproductionLaw)> {
    let cfg = law_config(path)?;
    let law = cfg.build().map_err(|e| format!("{}: {e}", path.display()))?;
    Ok((cfg, law))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn option_strings() {
        assert!(matches!(walk("lattice:1.5").unwrap(), Walk::Lattice { .. }));
        assert_eq!(walk("table:-1=0.5;1=0.5").unwrap(), Walk::Table { steps: vec![(-1.0, 0.5), (1.0, 0.5)] });
        assert!(walk("levy:2").is_err());
        assert_eq!(mark("two-point:1").unwrap(), Mark::TwoPoint { c: 1.0 });
        assert_eq!(threshold("linear").unwrap(), Threshold::Linear);
        assert_eq!(an_rule("table:100=1;400=2").unwrap(), Scaling::Table(vec![(100, 1.0), (400, 2.0)]));
        assert!(matches!(band("profile:2:2.95:0").unwrap(), BandShape::Profile(_)));
        assert!(band("0:1:0,1:1:0").is_err());
    }

    #[test]
    fn law_errors_carry_location() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.toml");
        fs::write(&p, "family = \"heavy-mixture\"\nepsilon = \"x\"\n").unwrap();
        let err = law_config(&p).unwrap_err();
        assert!(err.contains("line 2") || err.contains("epsilon"), "{err}");
    }
}
