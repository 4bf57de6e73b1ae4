//! Sweep grid parsing.
//!
//! Grammar: clauses separated by `;`, each clause a method name followed by
//! space-separated `key=v1,v2,...` parameter lists. Every clause expands to
//! the Cartesian product of its parameter values:
//!
//! ```text
//! fedgn sigma=0.1,0.5; fedhide alpha=0.01,0.1 k=3; fedaws
//! ```
//!
//! expands to fedgn(0.1), fedgn(0.5), fedhide(0.01,3), fedhide(0.1,3),
//! fedaws.

use fedhide::proxy::ProxyMethod;

use crate::CliError;

fn grid_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

pub fn parse_grid(spec: &str) -> Result<Vec<ProxyMethod>, CliError> {
    let mut points = Vec::new();
    for clause in spec.split(';') {
        let clause = clause.trim();
        if clause.is_empty() {
            continue;
        }
        let mut parts = clause.split_whitespace();
        let method = parts.next().expect("nonempty clause");
        let mut alphas = Vec::new();
        let mut ks = Vec::new();
        let mut sigmas = Vec::new();
        let mut cos_thetas = Vec::new();
        for part in parts {
            let (key, values) = part
                .split_once('=')
                .ok_or_else(|| grid_err(format!("expected key=values, got `{part}`")))?;
            let parse_f64 = |vs: &str| -> Result<Vec<f64>, CliError> {
                vs.split(',')
                    .map(|v| {
                        v.parse()
                            .map_err(|_| grid_err(format!("bad number `{v}` for `{key}`")))
                    })
                    .collect()
            };
            match (method, key) {
                ("fedhide", "alpha") => alphas = parse_f64(values)?,
                ("fedhide", "k") => {
                    ks = values
                        .split(',')
                        .map(|v| {
                            v.parse()
                                .map_err(|_| grid_err(format!("bad integer `{v}` for `k`")))
                        })
                        .collect::<Result<_, _>>()?
                }
                ("fedgn", "sigma") => sigmas = parse_f64(values)?,
                ("fedcs", "cos_theta") => cos_thetas = parse_f64(values)?,
                _ => {
                    return Err(grid_err(format!(
                        "`{key}` is not a parameter of `{method}`"
                    )))
                }
            }
        }
        let clause_points: Vec<ProxyMethod> = match method {
            "fedhide" => {
                if alphas.is_empty() || ks.is_empty() {
                    return Err(grid_err("fedhide clause needs alpha=... and k=..."));
                }
                alphas
                    .iter()
                    .flat_map(|&alpha| ks.iter().map(move |&k| ProxyMethod::FedHide { alpha, k }))
                    .collect()
            }
            "fedgn" => {
                if sigmas.is_empty() {
                    return Err(grid_err("fedgn clause needs sigma=..."));
                }
                sigmas
                    .iter()
                    .map(|&sigma| ProxyMethod::FedGn { sigma })
                    .collect()
            }
            "fedcs" => {
                if cos_thetas.is_empty() {
                    return Err(grid_err("fedcs clause needs cos_theta=..."));
                }
                cos_thetas
                    .iter()
                    .map(|&cos_theta| ProxyMethod::FedCs { cos_theta })
                    .collect()
            }
            "fedaws" => vec![ProxyMethod::FedAws],
            other => {
                return Err(grid_err(format!(
                    "unknown method `{other}` in grid (expected fedhide|fedgn|fedcs|fedaws)"
                )))
            }
        };
        for point in &clause_points {
            point.validate().map_err(|e| grid_err(e.to_string()))?;
        }
        points.extend(clause_points);
    }
    // Duplicate points would race on the same output directory.
    for i in 0..points.len() {
        if points[i + 1..].contains(&points[i]) {
            return Err(grid_err(format!(
                "duplicate grid point `{}`",
                points[i].label()
            )));
        }
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expands_cartesian_product() {
        let points = parse_grid("fedhide alpha=0.01,0.1 k=3,5; fedaws").unwrap();
        assert_eq!(points.len(), 5);
        assert_eq!(points[0], ProxyMethod::FedHide { alpha: 0.01, k: 3 });
        assert_eq!(points[3], ProxyMethod::FedHide { alpha: 0.1, k: 5 });
        assert_eq!(points[4], ProxyMethod::FedAws);
    }

    #[test]
    fn empty_grid_is_empty() {
        assert!(parse_grid("").unwrap().is_empty());
        assert!(parse_grid(" ; ").unwrap().is_empty());
    }

    #[test]
    fn rejects_wrong_key() {
        assert!(parse_grid("fedgn alpha=0.1").is_err());
        assert!(parse_grid("fedmagic sigma=0.1").is_err());
        assert!(parse_grid("fedcs cos_theta=2.0").is_err());
    }

    #[test]
    fn rejects_duplicate_points() {
        assert!(parse_grid("fedaws; fedaws").is_err());
        assert!(parse_grid("fedgn sigma=0.1,0.1").is_err());
    }
}
