//! Analytic property calculators: carbonation kinetics, embodied carbon and
//! cost.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::dataset::{CementType, MixComposition};
use crate::error::{Error, Result};

/// Embodied carbon (`e`, kgCO₂e/kg) and price (`c`, £/kg) of one material.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialFactor {
    pub e: f64,
    pub c: f64,
}

/// Per-material coefficients. Gravel and sand share one row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialCoefficients {
    pub cement_cem_iia: MaterialFactor,
    pub cement_cem_i: MaterialFactor,
    pub gravel_sand: MaterialFactor,
    pub water: MaterialFactor,
}

impl Default for MaterialCoefficients {
    fn default() -> Self {
        MaterialCoefficients {
            cement_cem_iia: MaterialFactor { e: 0.799, c: 0.089 },
            cement_cem_i: MaterialFactor { e: 0.912, c: 0.089 },
            gravel_sand: MaterialFactor { e: 0.007, c: 0.018 },
            water: MaterialFactor { e: 0.0008, c: 0.007 },
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FactorOverride {
    e: Option<f64>,
    c: Option<f64>,
}

impl MaterialCoefficients {
    pub const MATERIALS: [&'static str; 4] = ["cement_cem_iia", "cement_cem_i", "gravel_sand", "water"];

    fn slot_mut(&mut self, name: &str) -> Option<&mut MaterialFactor> {
        match name {
            "cement_cem_iia" => Some(&mut self.cement_cem_iia),
            "cement_cem_i" => Some(&mut self.cement_cem_i),
            "gravel_sand" => Some(&mut self.gravel_sand),
            "water" => Some(&mut self.water),
            _ => None,
        }
    }

    /// Applies a JSON object of overrides keyed by material name, e.g.
    /// `{"water": {"c": 0.01}}`. Unspecified values keep their current value.
    pub fn with_overrides_json(mut self, json: &str) -> Result<Self> {
        let overrides: BTreeMap<String, FactorOverride> = serde_json::from_str(json)?;
        for (name, o) in overrides {
            let slot = self.slot_mut(&name).ok_or_else(|| {
                Error::Validation(format!(
                    "unknown material `{name}` (expected one of {})",
                    Self::MATERIALS.join(", ")
                ))
            })?;
            if let Some(e) = o.e {
                slot.e = e;
            }
            if let Some(c) = o.c {
                slot.c = c;
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for f in [self.cement_cem_iia, self.cement_cem_i, self.gravel_sand, self.water] {
            if !(f.e >= 0.0 && f.c >= 0.0 && f.e.is_finite() && f.c.is_finite()) {
                return Err(Error::Validation(
                    "material coefficients must be finite and non-negative".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn cement(&self, cement_type: CementType) -> MaterialFactor {
        match cement_type {
            CementType::CemIIA_32_5R => self.cement_cem_iia,
            CementType::CemI_52_5N => self.cement_cem_i,
        }
    }
}

fn blend(mix: &MixComposition, cement: f64, aggregate: f64, water: f64) -> f64 {
    (cement * mix.cement_pct + aggregate * (mix.gravel_pct + mix.sand_pct) + water * mix.water_pct)
        / 100.0
}

/// Embodied carbon in kgCO₂e per kg of concrete: Σ eᵢ fᵢ.
pub fn embodied_carbon(
    mix: &MixComposition,
    cement_type: CementType,
    coeffs: &MaterialCoefficients,
) -> f64 {
    blend(
        mix,
        coeffs.cement(cement_type).e,
        coeffs.gravel_sand.e,
        coeffs.water.e,
    )
}

/// Material cost in £ per kg of concrete: Σ cᵢ fᵢ.
pub fn cost(mix: &MixComposition, cement_type: CementType, coeffs: &MaterialCoefficients) -> f64 {
    blend(
        mix,
        coeffs.cement(cement_type).c,
        coeffs.gravel_sand.c,
        coeffs.water.c,
    )
}

/// Carbonation depth `x(t) = √(x0² + k² t)`.
pub fn carbonation_depth(k: f64, x0: f64, t: f64) -> f64 {
    (x0 * x0 + k * k * t).sqrt()
}

/// One depth measurement: exposure days, mean depth and its standard
/// deviation (both mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarbonationObservation {
    pub t: f64,
    pub x: f64,
    pub sigma_x: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarbonationFit {
    pub k: f64,
    pub x0: f64,
    pub k_err: f64,
}

/// Reads a `t_days,x_mm,sigma_mm` CSV.
pub fn read_carbonation_csv<R: Read>(source: R) -> Result<Vec<CarbonationObservation>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader.headers()?.clone();
    let expected = ["t_days", "x_mm", "sigma_mm"];
    if header.iter().ne(expected) {
        return Err(Error::Header {
            expected: expected.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut out = Vec::new();
    for (n, row) in reader.records().enumerate() {
        let row = row?;
        let mut vals = [0.0; 3];
        for (j, v) in vals.iter_mut().enumerate() {
            let raw = row.get(j).unwrap_or("");
            *v = raw
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row: n + 1,
                    column: expected[j].into(),
                    value: raw.into(),
                })?;
        }
        let obs = CarbonationObservation {
            t: vals[0],
            x: vals[1],
            sigma_x: vals[2],
        };
        if obs.t < 0.0 || obs.x < 0.0 || obs.sigma_x < 0.0 {
            return Err(Error::Validation(format!(
                "row {}: t, x and sigma must be non-negative",
                n + 1
            )));
        }
        out.push(obs);
    }
    Ok(out)
}

fn sse(points: &[(f64, f64)], k: f64, x0: f64) -> f64 {
    points
        .iter()
        .map(|&(t, x)| {
            let r = carbonation_depth(k, x0, t) - x;
            r * r
        })
        .sum()
}

/// Levenberg–Marquardt on (k, x0), projected onto k, x0 ≥ 0.
fn refine(points: &[(f64, f64)], mut k: f64, mut x0: f64) -> (f64, f64) {
    const TOL: f64 = 1e-10;
    let mut current = sse(points, k, x0);
    let mut lambda = 1e-3;
    for _ in 0..500 {
        if current.sqrt() < TOL {
            break;
        }
        let (mut jtj, mut jtr) = ([[0.0; 2]; 2], [0.0; 2]);
        for &(t, x) in points {
            let m = carbonation_depth(k, x0, t).max(1e-300);
            let r = m - x;
            let j = [k * t / m, x0 / m];
            for a in 0..2 {
                jtr[a] += j[a] * r;
                for b in 0..2 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let mut improved = false;
        while lambda < 1e12 {
            let a00 = jtj[0][0] * (1.0 + lambda) + 1e-300;
            let a11 = jtj[1][1] * (1.0 + lambda) + 1e-300;
            let a01 = jtj[0][1];
            let det = a00 * a11 - a01 * a01;
            if det == 0.0 || !det.is_finite() {
                lambda *= 10.0;
                continue;
            }
            let dk = -(a11 * jtr[0] - a01 * jtr[1]) / det;
            let dx0 = -(a00 * jtr[1] - a01 * jtr[0]) / det;
            let (nk, nx0) = ((k + dk).max(0.0), (x0 + dx0).max(0.0));
            let next = sse(points, nk, nx0);
            if next < current {
                let gain = current.sqrt() - next.sqrt();
                k = nk;
                x0 = nx0;
                current = next;
                lambda = (lambda / 10.0).max(1e-12);
                improved = gain > TOL;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (k, x0)
}

/// Least-squares fit of (k, x0 ≥ 0) to depths against √t.
fn fit_curve(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mut candidates: Vec<(f64, f64)> = Vec::with_capacity(4);

    // k = 0: constant depth x0 = mean(x)
    candidates.push((0.0, points.iter().map(|p| p.1).sum::<f64>() / n));

    // x0 = 0: x = k√t, linear in k
    let st: f64 = points.iter().map(|p| p.0).sum();
    if st > 0.0 {
        let k = points.iter().map(|&(t, x)| x * t.sqrt()).sum::<f64>() / st;
        candidates.push((k.max(0.0), 0.0));
    }

    // interior: x² = x0² + k² t is linear in t, exact for noise-free data
    let mt = st / n;
    let mx2 = points.iter().map(|p| p.1 * p.1).sum::<f64>() / n;
    let stt: f64 = points.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    if stt > 0.0 {
        let slope = points
            .iter()
            .map(|&(t, x)| (t - mt) * (x * x - mx2))
            .sum::<f64>()
            / stt;
        let intercept = mx2 - slope * mt;
        let start = (slope.max(0.0).sqrt(), intercept.max(0.0).sqrt());
        candidates.push(start);
        let (k, x0) = if start.0 > 0.0 && start.1 > 0.0 {
            start
        } else {
            // nudge off the boundary, where the x0 gradient vanishes
            (start.0.max(1e-3), start.1.max(1e-3))
        };
        candidates.push(refine(points, k, x0));
    }

    let mut best = candidates[0];
    let mut best_sse = sse(points, best.0, best.1);
    for &c in &candidates[1..] {
        let s = sse(points, c.0, c.1);
        if s < best_sse {
            best = c;
            best_sse = s;
        }
    }
    best
}

/// Least-squares `k ≥ 0` with `x0` held fixed. The stationarity condition
/// `Σ tᵢ (1 − xᵢ / mᵢ(k)) = 0` is increasing in `k`, so bisection finds the
/// unique root.
fn fit_k_given_x0(points: &[(f64, f64)], x0: f64) -> f64 {
    let h = |k: f64| -> f64 {
        points
            .iter()
            .map(|&(t, x)| {
                let m = carbonation_depth(k, x0, t);
                if m > 0.0 {
                    t * (1.0 - x / m)
                } else if x > 0.0 && t > 0.0 {
                    f64::NEG_INFINITY
                } else {
                    0.0
                }
            })
            .sum()
    };
    if h(0.0) >= 0.0 {
        return 0.0;
    }
    let mut hi = 1.0;
    while h(hi) < 0.0 && hi < 1e12 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Fits `x(t) = √(x0² + k² t)` by least squares in (√t, x) space with
/// `k, x0 ≥ 0`. `k_err` is the gain in `k` when refitting `k` against
/// `x + σx` with `x0` held at its fitted value, floored at zero.
pub fn fit_carbonation(series: &[CarbonationObservation]) -> Result<CarbonationFit> {
    let mut times: Vec<f64> = series.iter().map(|o| o.t).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    if times.len() < 2 {
        return Err(Error::InsufficientData(
            "carbonation fit needs observations at 2 or more distinct times".into(),
        ));
    }
    if series
        .iter()
        .any(|o| !(o.t >= 0.0 && o.x >= 0.0 && o.sigma_x >= 0.0))
    {
        return Err(Error::Validation(
            "carbonation observations must be non-negative".into(),
        ));
    }

    let central: Vec<(f64, f64)> = series.iter().map(|o| (o.t, o.x)).collect();
    let (k, x0) = if central.iter().all(|p| p.1 == 0.0) {
        (0.0, 0.0)
    } else {
        fit_curve(&central)
    };

    let k_err = if series.iter().all(|o| o.sigma_x == 0.0) {
        0.0
    } else {
        let upper: Vec<(f64, f64)> = series.iter().map(|o| (o.t, o.x + o.sigma_x)).collect();
        (fit_k_given_x0(&upper, x0) - k).max(0.0)
    };
    Ok(CarbonationFit { k, x0, k_err })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth(k: f64, x0: f64, times: &[f64]) -> Vec<CarbonationObservation> {
        times
            .iter()
            .map(|&t| CarbonationObservation {
                t,
                x: carbonation_depth(k, x0, t),
                sigma_x: 0.0,
            })
            .collect()
    }

    #[test]
    fn depth_examples() {
        assert_eq!(carbonation_depth(3.0, 5.0, 0.0), 5.0);
        assert_eq!(carbonation_depth(2.0, 0.0, 9.0), 6.0);
        assert!((carbonation_depth(1.5, 1.0, 4.0) - 10f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn recovers_pure_root_law() {
        let fit = fit_carbonation(&synth(2.0, 0.0, &[1.0, 4.0, 9.0, 16.0])).unwrap();
        assert!((fit.k - 2.0).abs() < 1e-6);
        assert!(fit.x0.abs() < 1e-6);
        assert_eq!(fit.k_err, 0.0);
    }

    #[test]
    fn too_few_times() {
        let mut s = synth(2.0, 0.0, &[4.0, 4.0]);
        assert!(fit_carbonation(&s).is_err());
        s.clear();
        assert!(fit_carbonation(&s).is_err());
    }

    #[test]
    fn all_zero_depths() {
        let mut s = synth(0.0, 0.0, &[1.0, 4.0, 9.0]);
        let fit = fit_carbonation(&s).unwrap();
        assert_eq!((fit.k, fit.x0, fit.k_err), (0.0, 0.0, 0.0));
        for o in &mut s {
            o.sigma_x = o.t.sqrt() * 0.5;
        }
        let fit = fit_carbonation(&s).unwrap();
        assert!((fit.k_err - 0.5).abs() < 1e-6);
    }

    #[test]
    fn error_band_from_sigma() {
        // with x0 = 0, x + 0.2√t is the root law with k + 0.2
        let mut s = synth(1.5, 0.0, &[1.0, 4.0, 9.0, 16.0, 25.0]);
        for o in &mut s {
            o.sigma_x = 0.2 * o.t.sqrt();
        }
        let fit = fit_carbonation(&s).unwrap();
        assert!((fit.k_err - 0.2).abs() < 1e-9, "{fit:?}");

        let mut s = synth(1.5, 1.0, &[1.0, 4.0, 9.0, 16.0, 25.0]);
        for o in &mut s {
            o.sigma_x = 0.3;
        }
        let fit = fit_carbonation(&s).unwrap();
        assert!((fit.x0 - 1.0).abs() < 1e-6);
        assert!(fit.k_err > 0.0 && fit.k_err < 0.3, "{fit:?}");
    }

    #[test]
    fn published_coefficient_examples() {
        let c = MaterialCoefficients::default();
        let c25 = MixComposition::new(11.1, 52.8, 28.1, 7.8);
        assert!((embodied_carbon(&c25, CementType::CemIIA_32_5R, &c) - 0.095).abs() <= 0.001);
        assert!((cost(&c25, CementType::CemIIA_32_5R, &c) - 0.025).abs() <= 0.0005);
        let water = MixComposition::new(0.0, 0.0, 0.0, 100.0);
        assert!((embodied_carbon(&water, CementType::CemI_52_5N, &c) - 0.0008).abs() < 1e-15);
        let cement = MixComposition::new(100.0, 0.0, 0.0, 0.0);
        assert!((cost(&cement, CementType::CemI_52_5N, &c) - 0.089).abs() < 1e-15);
    }

    #[test]
    fn overrides() {
        let c = MaterialCoefficients::default()
            .with_overrides_json(r#"{"water": {"c": 0.01}, "cement_cem_i": {"e": 0.9}}"#)
            .unwrap();
        assert_eq!(c.water, MaterialFactor { e: 0.0008, c: 0.01 });
        assert_eq!(c.cement_cem_i.e, 0.9);
        assert!(MaterialCoefficients::default()
            .with_overrides_json(r#"{"slag": {"e": 0.1}}"#)
            .is_err());
        assert!(MaterialCoefficients::default()
            .with_overrides_json(r#"{"water": {"e": -1.0}}"#)
            .is_err());
    }

    #[test]
    fn carbonation_csv() {
        let s = read_carbonation_csv("t_days,x_mm,sigma_mm\n0,0,0\n4,4,0.5\n".as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].sigma_x, 0.5);
        assert!(read_carbonation_csv("t,x,s\n".as_bytes()).is_err());
        assert!(read_carbonation_csv("t_days,x_mm,sigma_mm\n1,-2,0\n".as_bytes()).is_err());
    }
}
