//! Error metrics and slope fits.

use crate::error::{Error, Result};
use crate::field::ScalarField3;

/// `|num - reference| / |reference|` in the discrete L2 norm.
pub fn relative_l2(num: &ScalarField3, reference: &ScalarField3) -> Result<f64> {
    if !num.same_grid(reference) {
        return Err(Error::Shape(format!(
            "fields on different grids ({} vs {} cells per axis)",
            num.grid.n, reference.grid.n
        )));
    }
    let (mut diff, mut norm) = (0.0f64, 0.0f64);
    for (a, b) in num.values.iter().zip(&reference.values) {
        diff += (a - b) * (a - b);
        norm += b * b;
    }
    if norm == 0.0 {
        return Err(Error::InvalidArgument("relative error against an all-zero reference".into()));
    }
    Ok((diff / norm).sqrt())
}

/// Ordinary least-squares slope of `ln y` against `ln x`. `None` with fewer
/// than two points, non-positive data or coincident abscissae.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0 && v.is_finite())) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid3;
    use proptest::prelude::*;

    fn field(values: Vec<f64>) -> ScalarField3 {
        ScalarField3::new(Grid3::new(4.0, 4).unwrap(), values).unwrap()
    }

    #[test]
    fn scaling_identities() {
        let r = field((0..64).map(|i| ((i * 37) % 11) as f64 - 4.0).collect());
        assert_eq!(relative_l2(&r, &r).unwrap(), 0.0);
        let twice = field(r.values.iter().map(|v| 2.0 * v).collect());
        assert!((relative_l2(&twice, &r).unwrap() - 1.0).abs() < 1e-15);
        let zero = field(vec![0.0; 64]);
        assert!((relative_l2(&zero, &r).unwrap() - 1.0).abs() < 1e-15);
        assert!(relative_l2(&r, &zero).is_err());
        let other = ScalarField3::zeros(Grid3::new(5.0, 5).unwrap());
        assert!(relative_l2(&other, &r).is_err());
    }

    #[test]
    fn exact_power_laws_are_recovered() {
        for s in [-0.45, 0.93, 2.0, -1.0] {
            let xs = [1000.0, 2500.0, 5000.0, 10000.0, 25000.0];
            let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.7 * x.powf(s)).collect();
            assert!((fit_loglog_slope(&xs, &ys).unwrap() - s).abs() < 1e-10);
        }
        assert_eq!(fit_loglog_slope(&[1.0], &[2.0]), None);
        assert_eq!(fit_loglog_slope(&[1.0, 2.0], &[2.0, 0.0]), None);
        assert_eq!(fit_loglog_slope(&[2.0, 2.0], &[1.0, 3.0]), None);
    }

    proptest! {
        #[test]
        fn relative_error_is_homogeneous_in_the_perturbation(
            base in prop::collection::vec(0.1f64..5.0, 64),
            d in prop::collection::vec(-1.0f64..1.0, 64),
            alpha in 0.01f64..10.0,
        ) {
            let r = field(base.clone());
            let one = field(base.iter().zip(&d).map(|(b, e)| b + e).collect());
            let scaled = field(base.iter().zip(&d).map(|(b, e)| b + alpha * e).collect());
            let e1 = relative_l2(&one, &r).unwrap();
            let ea = relative_l2(&scaled, &r).unwrap();
            prop_assert!((ea - alpha * e1).abs() <= 1e-10 * (1.0 + ea));
        }
    }
}
