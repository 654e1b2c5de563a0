//! Centre losses: a clip representation `z` is attracted to its own track
//! centre or repelled (with margin `g`) from the centre of a co-occurring
//! track.
//!
//! * attract: `½‖z − c‖`
//! * repel:   `½·max(g − ‖z − c‖, 0)`
//!
//! Both are non-differentiable at `z = c`; there the gradient is defined as
//! zero and flagged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::euclidean;

/// Distance below which the loss is treated as non-differentiable.
pub const SINGULAR_EPS: f64 = 1e-12;

/// Must-link (`y = 1`) or cannot-link (`y = 0`) relation of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Link {
    Attract,
    Repel,
}

impl Link {
    pub fn from_y(y: u8) -> Self {
        if y == 1 {
            Link::Attract
        } else {
            Link::Repel
        }
    }

    pub fn y(self) -> u8 {
        match self {
            Link::Attract => 1,
            Link::Repel => 0,
        }
    }
}

/// A gradient plus a flag set when it was taken at the non-differentiable
/// point and replaced by zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub grad: Vec<f64>,
    pub singular: bool,
}

fn check(z: &[f64], c: &[f64], margin: f64) -> Result<()> {
    if z.len() != c.len() {
        return Err(Error::DimensionMismatch {
            expected: z.len(),
            found: c.len(),
        });
    }
    if !z.iter().chain(c).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("loss input".into()));
    }
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(Error::InvalidConfig(format!("margin must be > 0, got {margin}")));
    }
    Ok(())
}

pub fn vc_loss(z: &[f64], c: &[f64], link: Link, margin: f64) -> Result<f64> {
    check(z, c, margin)?;
    let dist = euclidean(z, c);
    Ok(match link {
        Link::Attract => 0.5 * dist,
        Link::Repel => 0.5 * (margin - dist).max(0.0),
    })
}

/// Unit direction `(z − c)/‖z − c‖` scaled by `coef`, or the flagged zero
/// vector when the distance is below [`SINGULAR_EPS`].
fn scaled_direction(z: &[f64], c: &[f64], dist: f64, coef: f64) -> LossGrad {
    if dist <= SINGULAR_EPS {
        return LossGrad {
            grad: vec![0.0; z.len()],
            singular: true,
        };
    }
    LossGrad {
        grad: z.iter().zip(c).map(|(a, b)| coef * (a - b) / dist).collect(),
        singular: false,
    }
}

/// `∂L/∂z` with the centre held fixed.
pub fn grad_z(z: &[f64], c: &[f64], link: Link, margin: f64) -> Result<LossGrad> {
    check(z, c, margin)?;
    let dist = euclidean(z, c);
    Ok(match link {
        Link::Attract => scaled_direction(z, c, dist, 0.5),
        Link::Repel if dist >= margin => LossGrad {
            grad: vec![0.0; z.len()],
            singular: false,
        },
        Link::Repel => scaled_direction(z, c, dist, -0.5),
    })
}

/// `∂L/∂c` with `z` held fixed; always `−∂L/∂z`.
pub fn grad_centre(c: &[f64], z: &[f64], link: Link, margin: f64) -> Result<LossGrad> {
    let mut g = grad_z(z, c, link, margin)?;
    g.grad.iter_mut().for_each(|v| *v = -*v);
    Ok(g)
}

/// One SGD step on a centre: `c − η·∂L/∂c`.
pub fn update_centre(c: &[f64], z: &[f64], link: Link, eta: f64, margin: f64) -> Result<(Vec<f64>, bool)> {
    if eta.is_nan() || eta <= 0.0 {
        return Err(Error::InvalidConfig(format!("centre learning rate must be > 0, got {eta}")));
    }
    let g = grad_centre(c, z, link, margin)?;
    let next = c.iter().zip(&g.grad).map(|(ci, gi)| ci - eta * gi).collect();
    Ok((next, g.singular))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_arithmetic() {
        assert_eq!(vc_loss(&[1.0, 2.0], &[1.0, 2.0], Link::Attract, 1.0).unwrap(), 0.0);
        assert_eq!(vc_loss(&[3.0, 4.0], &[0.0, 0.0], Link::Attract, 1.0).unwrap(), 2.5);
        assert!((vc_loss(&[0.5, 0.0], &[0.0, 0.0], Link::Repel, 1.0).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(vc_loss(&[1.2, 0.0], &[0.0, 0.0], Link::Repel, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn loss_rejects_bad_inputs() {
        assert!(vc_loss(&[f64::NAN], &[0.0], Link::Attract, 1.0).is_err());
        assert!(vc_loss(&[0.0], &[0.0, 1.0], Link::Attract, 1.0).is_err());
        assert!(vc_loss(&[0.0], &[1.0], Link::Repel, 0.0).is_err());
    }

    #[test]
    fn gradient_arithmetic() {
        let g = grad_z(&[3.0, 4.0], &[0.0, 0.0], Link::Attract, 1.0).unwrap();
        assert!((g.grad[0] - 0.3).abs() < 1e-15 && (g.grad[1] - 0.4).abs() < 1e-15);
        assert!(!g.singular);
        let g = grad_z(&[1.5, 0.0], &[0.0, 0.0], Link::Repel, 1.0).unwrap();
        assert_eq!(g.grad, vec![0.0, 0.0]);
        assert!(!g.singular);
        let g = grad_z(&[1.0, 1.0], &[1.0, 1.0], Link::Attract, 1.0).unwrap();
        assert_eq!(g.grad, vec![0.0, 0.0]);
        assert!(g.singular);
    }

    #[test]
    fn centre_updates() {
        let (c, _) = update_centre(&[2.0, 0.0], &[0.0, 0.0], Link::Attract, 1.0, 1.0).unwrap();
        assert_eq!(c, vec![1.5, 0.0]);
        let far = [2.0, 0.0];
        let (c, _) = update_centre(&far, &[0.0, 0.0], Link::Repel, 0.5, 1.0).unwrap();
        assert_eq!(c, far.to_vec());
        let (c, _) = update_centre(&[0.0, 0.5], &[0.0, 0.0], Link::Repel, 0.2, 1.0).unwrap();
        assert!(c[0].abs() < 1e-15 && (c[1] - 0.6).abs() < 1e-15);
        assert!(update_centre(&[0.0], &[1.0], Link::Attract, 0.0, 1.0).is_err());
    }
}
