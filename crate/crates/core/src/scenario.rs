//! Declarative initial conditions and run parameters.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{dist2, Grid3, ScalarField3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    /// Diffusion mobility.
    pub gamma: f64,
    /// Chemo-sensitivity.
    pub chi: f64,
    /// Total density mass `M0`.
    pub mass: f64,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidParams(what.to_string()))
            }
        };
        check(self.gamma.is_finite() && self.gamma > 0.0, "gamma must be > 0")?;
        check(self.chi.is_finite() && self.chi >= 0.0, "chi must be >= 0")?;
        check(self.mass.is_finite() && self.mass > 0.0, "mass must be > 0")?;
        check(self.dt.is_finite() && self.dt > 0.0, "dt must be > 0")?;
        check(self.t_end.is_finite() && self.t_end >= 0.0, "t_end must be >= 0")
    }

    /// Number of `dt` steps needed to reach `t_end`; errors if `t_end` is not a
    /// whole multiple of `dt`.
    pub fn step_count(&self) -> Result<usize> {
        steps_for(self.t_end, self.dt)
    }
}

pub(crate) fn steps_for(t: f64, dt: f64) -> Result<usize> {
    let k = (t / dt).round();
    if (k * dt - t).abs() > 1e-9 * t.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "time {t} is not a whole multiple of dt = {dt}"
        )));
    }
    Ok(k as usize)
}

/// Gaussian component of the initial density mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityBlob {
    pub center: Vec3,
    pub sigma: f64,
    pub weight: f64,
}

/// Gaussian bump of the initial concentration, `amplitude * exp(-r^2 / (2 sigma^2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcBlob {
    pub center: Vec3,
    pub sigma: f64,
    pub amplitude: f64,
}

/// A ring of radius `radius` around `center` in the plane normal to `normal`,
/// smoothed by a Gaussian tube of standard deviation `tube`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annulus {
    pub center: Vec3,
    pub radius: f64,
    pub tube: f64,
    pub amplitude: f64,
    #[serde(default = "z_axis")]
    pub normal: Vec3,
}

fn z_axis() -> Vec3 {
    [0.0, 0.0, 1.0]
}

impl Annulus {
    pub fn distance(&self, x: &Vec3) -> f64 {
        let len = (self.normal[0].powi(2) + self.normal[1].powi(2) + self.normal[2].powi(2)).sqrt();
        let nh = [self.normal[0] / len, self.normal[1] / len, self.normal[2] / len];
        let v = [x[0] - self.center[0], x[1] - self.center[1], x[2] - self.center[2]];
        let along = v[0] * nh[0] + v[1] * nh[1] + v[2] * nh[2];
        let perp = [v[0] - along * nh[0], v[1] - along * nh[1], v[2] - along * nh[2]];
        let radial = (perp[0] * perp[0] + perp[1] * perp[1] + perp[2] * perp[2]).sqrt();
        ((radial - self.radius).powi(2) + along * along).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConcInit {
    Blobs(Vec<ConcBlob>),
    Annuli(Vec<Annulus>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Density,
    Concentration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub params: SimParams,
    pub grid: Grid3,
    pub rho0: Vec<DensityBlob>,
    pub c0: ConcInit,
}

impl ScenarioSpec {
    pub fn new(params: SimParams, grid: Grid3, rho0: Vec<DensityBlob>, c0: ConcInit) -> Result<Self> {
        let spec = Self { params, grid, rho0, c0 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.grid.validate()?;
        if self.rho0.is_empty() {
            return Err(Error::InvalidScenario("rho0 needs at least one blob".into()));
        }
        let total: f64 = self.rho0.iter().map(|b| b.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidScenario(format!(
                "rho0 weights sum to {total}, expected 1"
            )));
        }
        let inside = |c: &Vec3| self.grid.contains(c);
        for b in &self.rho0 {
            if !(b.sigma > 0.0 && b.sigma.is_finite()) || b.weight < 0.0 {
                return Err(Error::InvalidScenario(format!("bad density blob {b:?}")));
            }
            if !inside(&b.center) {
                return Err(Error::InvalidScenario(format!(
                    "density blob center {:?} outside the domain",
                    b.center
                )));
            }
        }
        match &self.c0 {
            ConcInit::Blobs(blobs) => {
                for b in blobs {
                    if !(b.sigma > 0.0 && b.sigma.is_finite()) || b.amplitude < 0.0 {
                        return Err(Error::InvalidScenario(format!("bad concentration blob {b:?}")));
                    }
                    if !inside(&b.center) {
                        return Err(Error::InvalidScenario(format!(
                            "concentration blob center {:?} outside the domain",
                            b.center
                        )));
                    }
                }
            }
            ConcInit::Annuli(rings) => {
                if rings.is_empty() {
                    return Err(Error::InvalidScenario("annuli list is empty".into()));
                }
                for r in rings {
                    let nlen = r.normal.iter().map(|v| v * v).sum::<f64>();
                    if !(r.tube > 0.0 && r.radius >= 0.0 && r.amplitude >= 0.0 && nlen > 0.0) {
                        return Err(Error::InvalidScenario(format!("bad annulus {r:?}")));
                    }
                    if !inside(&r.center) {
                        return Err(Error::InvalidScenario(format!(
                            "annulus center {:?} outside the domain",
                            r.center
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Same scenario on an `n`-cell grid over the same extent.
    pub fn with_resolution(&self, n: usize) -> Result<Self> {
        let mut s = self.clone();
        s.grid = Grid3::new(self.grid.extent, n)?;
        Ok(s)
    }
}

/// `M0 * sum_k w_k N(x; center_k, sigma_k^2 I)`, not renormalised for domain truncation.
pub fn eval_scenario_density(spec: &ScenarioSpec, x: &Vec3) -> f64 {
    let sum: f64 = spec
        .rho0
        .iter()
        .map(|b| {
            let s2 = b.sigma * b.sigma;
            b.weight * (-dist2(x, &b.center) / (2.0 * s2)).exp() / (2.0 * PI * s2).powf(1.5)
        })
        .sum();
    spec.params.mass * sum
}

pub fn eval_scenario_concentration(spec: &ScenarioSpec, x: &Vec3) -> f64 {
    match &spec.c0 {
        ConcInit::Blobs(blobs) => blobs
            .iter()
            .map(|b| b.amplitude * (-dist2(x, &b.center) / (2.0 * b.sigma * b.sigma)).exp())
            .sum(),
        ConcInit::Annuli(rings) => rings
            .iter()
            .map(|r| {
                let d = r.distance(x);
                r.amplitude * (-d * d / (2.0 * r.tube * r.tube)).exp()
            })
            .sum(),
    }
}

/// Sample the initial density or concentration at the cell centres.
pub fn discretize(spec: &ScenarioSpec, which: Quantity) -> ScalarField3 {
    match which {
        Quantity::Density => ScalarField3::from_fn(spec.grid, |x| eval_scenario_density(spec, &x)),
        Quantity::Concentration => {
            ScalarField3::from_fn(spec.grid, |x| eval_scenario_concentration(spec, &x))
        }
    }
}

/// Registry of the three reference scenarios on `[0, 100]^3`.
pub mod builtin {
    use super::*;

    pub const EXTENT: f64 = 100.0;
    pub const CENTER: Vec3 = [50.0, 50.0, 50.0];

    pub fn default_params() -> SimParams {
        SimParams {
            gamma: 1.0,
            chi: 1.0,
            mass: 1.0,
            dt: 0.1,
            t_end: 40.0,
            seed: 20240601,
        }
    }

    fn grid() -> Grid3 {
        Grid3 { extent: EXTENT, n: 100 }
    }

    pub fn one_blob() -> ScenarioSpec {
        ScenarioSpec {
            params: default_params(),
            grid: grid(),
            rho0: vec![DensityBlob { center: CENTER, sigma: 5.0, weight: 1.0 }],
            c0: ConcInit::Blobs(vec![ConcBlob { center: CENTER, sigma: 10.0, amplitude: 1.0 }]),
        }
    }

    pub fn two_blob() -> ScenarioSpec {
        ScenarioSpec {
            params: default_params(),
            grid: grid(),
            rho0: vec![
                DensityBlob { center: [30.0, 30.0, 30.0], sigma: 5.0, weight: 0.5 },
                DensityBlob { center: [70.0, 70.0, 70.0], sigma: 5.0, weight: 0.5 },
            ],
            c0: ConcInit::Blobs(vec![ConcBlob { center: CENTER, sigma: 10.0, amplitude: 50.0 }]),
        }
    }

    pub fn annuli() -> ScenarioSpec {
        let ring = |z: f64| Annulus {
            center: [50.0, 50.0, z],
            radius: 20.0,
            tube: 3.0,
            amplitude: 1.0,
            normal: [0.0, 0.0, 1.0],
        };
        ScenarioSpec {
            params: default_params(),
            grid: grid(),
            rho0: vec![DensityBlob { center: CENTER, sigma: 5.0, weight: 1.0 }],
            c0: ConcInit::Annuli(vec![ring(35.0), ring(65.0)]),
        }
    }

    pub fn all() -> Vec<(&'static str, ScenarioSpec)> {
        vec![("one_blob", one_blob()), ("two_blob", two_blob()), ("annuli", annuli())]
    }

    pub fn by_name(name: &str) -> Option<ScenarioSpec> {
        all().into_iter().find(|(n, _)| *n == name).map(|(_, s)| s)
    }
}

#[cfg(test)]
mod tests {
    use super::builtin::*;
    use super::*;

    fn gaussian3(r2: f64, sigma: f64) -> f64 {
        // independent of eval_scenario_density: product of three 1D normals
        let one = |d2: f64| (-d2 / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * PI).sqrt());
        one(r2 / 3.0).powi(3)
    }

    #[test]
    fn density_peak_matches_normal_formula() {
        let spec = one_blob();
        let v = eval_scenario_density(&spec, &CENTER);
        let expect = 1.0 / (2.0 * PI * 25.0f64).powf(1.5);
        assert!((v - expect).abs() < 1e-15);
        assert!((v - 5.0795e-4).abs() < 1e-7);
        let off = [53.0, 50.0, 46.0];
        assert!((eval_scenario_density(&spec, &off) - gaussian3(25.0, 5.0)).abs() < 1e-15);
    }

    #[test]
    fn density_tail_vanishes() {
        let mut spec = one_blob();
        spec.rho0[0].center = [5.0, 5.0, 5.0];
        spec.rho0[0].sigma = 0.5;
        assert!(eval_scenario_density(&spec, &[95.0, 95.0, 95.0]) < 1e-15);
    }

    #[test]
    fn two_blob_equidistant_point_doubles_single_blob_value() {
        let spec = two_blob();
        let x = [50.0, 50.0, 50.0];
        let mut single = one_blob();
        single.rho0[0].center = [30.0, 30.0, 30.0];
        let one = eval_scenario_density(&single, &x);
        let two = eval_scenario_density(&spec, &x);
        // weights are 1/2 each: two equal contributions of half the single-blob value
        assert!((two - one).abs() <= 1e-15 * one.abs().max(1e-300));
        let mut equal_weight = spec.clone();
        for b in &mut equal_weight.rho0 {
            b.weight = 1.0;
        }
        assert!((eval_scenario_density(&equal_weight, &x) - 2.0 * one).abs() < 1e-300 + 1e-15 * one);
    }

    #[test]
    fn concentration_blob_values() {
        let mut spec = one_blob();
        if let ConcInit::Blobs(b) = &mut spec.c0 {
            b[0].amplitude = 3.5;
        }
        assert_eq!(eval_scenario_concentration(&spec, &CENTER), 3.5);
        let spec = one_blob();
        let v = eval_scenario_concentration(&spec, &[60.0, 50.0, 50.0]);
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        assert!((v - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn annulus_on_ring_hits_amplitude() {
        let spec = annuli();
        // point on the lower ring
        let x = [70.0, 50.0, 35.0];
        let ConcInit::Annuli(rings) = &spec.c0 else { unreachable!() };
        assert!(rings[0].distance(&x) < 1e-12);
        let v = eval_scenario_concentration(&spec, &x);
        let other = (-(30.0f64 * 30.0) / 18.0).exp();
        assert!(v >= 1.0 && v - 1.0 <= other + 1e-15);
        // tilted ring
        let tilted = Annulus {
            center: CENTER,
            radius: 10.0,
            tube: 2.0,
            amplitude: 1.0,
            normal: [1.0, 0.0, 0.0],
        };
        assert!(tilted.distance(&[50.0, 60.0, 50.0]) < 1e-12);
        assert!((tilted.distance(&[60.0, 50.0, 50.0]) - (200.0f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn validation_catches_bad_specs() {
        let mut s = one_blob();
        s.rho0[0].weight = 0.9;
        assert!(s.validate().is_err());
        let mut s = one_blob();
        s.rho0[0].center = [150.0, 50.0, 50.0];
        assert!(s.validate().is_err());
        let mut s = one_blob();
        s.rho0[0].sigma = 0.0;
        assert!(s.validate().is_err());
        let mut s = one_blob();
        s.params.gamma = 0.0;
        assert!(s.validate().is_err());
        for (_, s) in all() {
            s.validate().unwrap();
        }
    }

    #[test]
    fn json_round_trip() {
        for (_, s) in all() {
            let back = ScenarioSpec::from_json(&s.to_json().unwrap()).unwrap();
            assert_eq!(back, s);
        }
        let text = r#"{"params":{"gamma":1,"chi":0,"mass":1,"dt":0.1,"t_end":1,"seed":3},
            "grid":{"extent":10,"n":10},
            "rho0":[{"center":[5,5,5],"sigma":1,"weight":1}],
            "c0":{"annuli":[{"center":[5,5,5],"radius":2,"tube":1,"amplitude":1}]}}"#;
        let s = ScenarioSpec::from_json(text).unwrap();
        let ConcInit::Annuli(r) = &s.c0 else { panic!() };
        assert_eq!(r[0].normal, [0.0, 0.0, 1.0]);
    }

    #[test]
    fn discretize_flat_limit() {
        let mut s = one_blob();
        s.grid.n = 20;
        if let ConcInit::Blobs(b) = &mut s.c0 {
            b[0].sigma = 1e8;
        }
        let f = discretize(&s, Quantity::Concentration);
        let (lo, hi) = (f.min(), f.max());
        assert!((hi - lo) / hi < 1e-9);
    }

    #[test]
    fn discretize_argmax_locations() {
        let f = discretize(&one_blob(), Quantity::Density);
        let g = f.grid;
        let c = f.argmax();
        // (50,50,50) is a cell corner at h = 1; the argmax must be one of the adjacent cells
        let [a, b, d] = [g.axis_cell(50.0), g.axis_cell(50.0), g.axis_cell(50.0)];
        for (got, want) in c.iter().zip([a, b, d]) {
            assert!(*got == want || *got + 1 == want, "{c:?}");
        }

        let mut two = two_blob();
        two.grid.n = 50;
        let f = discretize(&two, Quantity::Density);
        let g = f.grid;
        let is_local_max = |ix: usize, iy: usize, iz: usize| {
            let v = f.at(ix, iy, iz);
            for dx in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dz in -1i64..=1 {
                        let (x, y, z) = (ix as i64 + dx, iy as i64 + dy, iz as i64 + dz);
                        if (dx, dy, dz) != (0, 0, 0) && f.at(x as usize, y as usize, z as usize) > v {
                            return false;
                        }
                    }
                }
            }
            true
        };
        for c in [30.0, 70.0] {
            let i = g.axis_cell(c);
            assert!(is_local_max(i, i, i), "no local max in cell containing ({c},{c},{c})");
        }
    }
}
