//! Linear-interpolant flow matching shared by the foresight model and the
//! action policy. Time runs from noise (`t = 0`) to data (`t = 1`).

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// `(1 - t) * eps + t * x`, elementwise. Exact at both endpoints.
pub fn flow_interpolate(x: &[f64], eps: &[f64], t: f64) -> Result<Vec<f64>> {
    if x.len() != eps.len() {
        return Err(Error::Shape(format!("interpolate {} vs {}", x.len(), eps.len())));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("flow time {t} outside [0, 1]")));
    }
    Ok(x.iter()
        .zip(eps)
        .map(|(&xv, &e)| {
            if t == 0.0 {
                e
            } else if t == 1.0 {
                xv
            } else {
                (1.0 - t) * e + t * xv
            }
        })
        .collect())
}

/// Regression target `x - eps`.
pub fn flow_target(x: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if x.len() != eps.len() {
        return Err(Error::Shape(format!("target {} vs {}", x.len(), eps.len())));
    }
    Ok(x.iter().zip(eps).map(|(a, b)| a - b).collect())
}

/// One training draw: clean data, noise, time, interpolant and target.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSample {
    pub clean: Vec<f64>,
    pub noise: Vec<f64>,
    pub t: f64,
    pub interpolant: Vec<f64>,
    pub velocity_target: Vec<f64>,
}

impl FlowSample {
    pub fn new(clean: Vec<f64>, noise: Vec<f64>, t: f64) -> Result<Self> {
        let interpolant = flow_interpolate(&clean, &noise, t)?;
        let velocity_target = flow_target(&clean, &noise)?;
        Ok(FlowSample {
            clean,
            noise,
            t,
            interpolant,
            velocity_target,
        })
    }
}

/// Forward Euler from `t = 0` to `t = 1` with left-endpoint times
/// `t_k = k / steps`.
pub fn euler_integrate<F>(start: Tensor, steps: usize, mut velocity: F) -> Result<Tensor>
where
    F: FnMut(&Tensor, f64) -> Result<Tensor>,
{
    if steps < 1 {
        return Err(Error::InvalidArgument("denoising steps must be >= 1".into()));
    }
    let h = 1.0 / steps as f64;
    let mut z = start;
    for k in 0..steps {
        let t = k as f64 / steps as f64;
        let v = velocity(&z, t)?;
        if !v.same_shape(&z) {
            return Err(Error::Shape(format!("velocity {:?} vs state {:?}", v.shape(), z.shape())));
        }
        for (a, b) in z.data_mut().iter_mut().zip(v.data()) {
            *a += h * b;
        }
    }
    if !z.is_finite() {
        return Err(Error::NonFinite("euler sampler".into()));
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolate_endpoints_and_midpoint() {
        let x = [2.0, -1.0, 0.3];
        let e = [0.7, 0.1, -5.0];
        assert_eq!(flow_interpolate(&x, &e, 0.0).unwrap(), e);
        assert_eq!(flow_interpolate(&x, &e, 1.0).unwrap(), x);
        assert_eq!(flow_interpolate(&[2.0], &[0.0], 0.25).unwrap(), [0.5]);
        assert!(flow_interpolate(&x, &e, 1.5).is_err());
        assert!(flow_interpolate(&x, &e[..2], 0.5).is_err());
    }

    #[test]
    fn target_is_difference() {
        assert_eq!(flow_target(&[1.0, 2.0], &[0.5, -1.0]).unwrap(), [0.5, 3.0]);
        assert_eq!(flow_target(&[1.0], &[1.0]).unwrap(), [0.0]);
        assert_eq!(flow_target(&[4.0], &[0.0]).unwrap(), [4.0]);
    }

    #[test]
    fn euler_constant_field_from_zero() {
        let c = Tensor::new(vec![3], vec![0.75, -1.5, 2.0]).unwrap();
        for steps in [1, 2, 4, 8, 16] {
            let z = euler_integrate(Tensor::zeros(&[3]), steps, |_, _| Ok(c.clone())).unwrap();
            assert!(z.bitwise_eq(&c), "{steps}");
        }
        assert!(euler_integrate(Tensor::zeros(&[3]), 0, |_, _| Ok(c.clone())).is_err());
    }

    #[test]
    fn flow_sample_fields() {
        let s = FlowSample::new(vec![1.0, 2.0], vec![0.0, 1.0], 0.5).unwrap();
        assert_eq!(s.interpolant, [0.5, 1.5]);
        assert_eq!(s.velocity_target, [1.0, 1.0]);
    }
}
