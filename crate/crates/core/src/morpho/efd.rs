//! Elliptic Fourier descriptors of closed piecewise-linear curves
//! (Kuhl & Giardina, 1982).

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::geometry::Point;
use crate::math;

pub const DEFAULT_HARMONICS: usize = 15;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EfdError {
    #[error("need at least {needed} distinct points for {harmonics} harmonics, got {got}")]
    TooFewPoints {
        needed: usize,
        got: usize,
        harmonics: usize,
    },
}

/// `harmonics[n - 1] = [a_n, b_n, c_n, d_n]`; `dc = (A0, C0)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EfdCoefficients {
    pub harmonics: Vec<[f64; 4]>,
    pub dc: (f64, f64),
}

impl EfdCoefficients {
    pub fn order(&self) -> usize {
        self.harmonics.len()
    }

    /// `(a_1, b_1, c_1, d_1, ..., a_H, b_H, c_H, d_H)`; position (DC) excluded.
    pub fn feature_vector(&self) -> Vec<f64> {
        self.harmonics.iter().flatten().copied().collect()
    }

    /// Keeps the first `h` harmonics.
    pub fn truncated(&self, h: usize) -> EfdCoefficients {
        EfdCoefficients {
            harmonics: self.harmonics.iter().take(h).copied().collect(),
            dc: self.dc,
        }
    }

    /// Rotation- and start-point-normalised coefficients using the first
    /// harmonic ellipse. With `unit_size` the first semi-major axis is also
    /// scaled to 1.
    pub fn first_harmonic_normalized(&self, unit_size: bool) -> EfdCoefficients {
        let Some(&[a1, b1, c1, d1]) = self.harmonics.first() else {
            return self.clone();
        };
        let theta = 0.5
            * math::atan2(
                2.0 * (a1 * b1 + c1 * d1),
                a1 * a1 - b1 * b1 + c1 * c1 - d1 * d1,
            );
        let phased: Vec<[f64; 4]> = self
            .harmonics
            .iter()
            .enumerate()
            .map(|(i, &[a, b, c, d])| {
                let nt = (i + 1) as f64 * theta;
                let (s, co) = (math::sin(nt), math::cos(nt));
                [a * co + b * s, -a * s + b * co, c * co + d * s, -c * s + d * co]
            })
            .collect();
        let [a1s, _, c1s, _] = phased[0];
        let psi = math::atan2(c1s, a1s);
        let size = math::hypot(a1s, c1s);
        let scale = if unit_size && size > 0.0 { 1.0 / size } else { 1.0 };
        let (s, co) = (math::sin(psi), math::cos(psi));
        let harmonics = phased
            .into_iter()
            .map(|[a, b, c, d]| {
                [
                    (co * a + s * c) * scale,
                    (co * b + s * d) * scale,
                    (-s * a + co * c) * scale,
                    (-s * b + co * d) * scale,
                ]
            })
            .collect();
        EfdCoefficients {
            harmonics,
            dc: self.dc,
        }
    }
}

/// Coefficients of harmonics `1..=harmonics` for the closed polyline.
pub fn efd(points: &[Point], harmonics: usize) -> Result<EfdCoefficients, EfdError> {
    let k = points.len();
    let needed = 2 * harmonics + 1;
    // (dx, dy, dt, t_prev, t_next) per non-degenerate segment
    let mut segs = Vec::with_capacity(k);
    let mut t = 0.0;
    let (mut ax, mut cy) = (0.0, 0.0);
    for i in 0..k {
        let a = points[i];
        let b = points[(i + 1) % k];
        let d = b.sub(a);
        let dt = d.norm();
        if dt == 0.0 {
            continue;
        }
        ax += dt * (a.x + b.x) / 2.0;
        cy += dt * (a.y + b.y) / 2.0;
        segs.push((d.x, d.y, dt, t, t + dt));
        t += dt;
    }
    if segs.len() < needed || k < needed {
        return Err(EfdError::TooFewPoints {
            needed,
            got: segs.len().min(k),
            harmonics,
        });
    }
    let total = t;
    let mut out = Vec::with_capacity(harmonics);
    for n in 1..=harmonics {
        let w = 2.0 * PI * n as f64 / total;
        let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
        for &(dx, dy, dt, t0, t1) in &segs {
            let dcos = math::cos(w * t1) - math::cos(w * t0);
            let dsin = math::sin(w * t1) - math::sin(w * t0);
            a += dx / dt * dcos;
            b += dx / dt * dsin;
            c += dy / dt * dcos;
            d += dy / dt * dsin;
        }
        let f = total / (2.0 * (n * n) as f64 * PI * PI);
        out.push([a * f, b * f, c * f, d * f]);
    }
    Ok(EfdCoefficients {
        harmonics: out,
        dc: (ax / total, cy / total),
    })
}

/// Evaluates the truncated series at `n_points` equally spaced parameters.
pub fn efd_reconstruct(coeffs: &EfdCoefficients, n_points: usize) -> Vec<Point> {
    (0..n_points)
        .map(|i| {
            let s = i as f64 / n_points as f64;
            let (mut x, mut y) = coeffs.dc;
            for (idx, &[a, b, c, d]) in coeffs.harmonics.iter().enumerate() {
                let phi = 2.0 * PI * (idx + 1) as f64 * s;
                let (sn, cs) = (math::sin(phi), math::cos(phi));
                x += a * cs + b * sn;
                y += c * cs + d * sn;
            }
            Point::new(x, y)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn circle(r: f64, n: usize, c: Point) -> Vec<Point> {
        (0..n)
            .map(|i| {
                let t = i as f64 / n as f64 * 2.0 * PI;
                Point::new(c.x + r * t.cos(), c.y + r * t.sin())
            })
            .collect()
    }

    #[test]
    fn circle_is_one_harmonic() {
        let r = 25.0;
        let e = efd(&circle(r, 256, Point::new(3.0, -4.0)), 15).unwrap();
        let [a1, b1, c1, d1] = e.harmonics[0];
        assert!((a1 - r).abs() < 1e-3 * r && (d1 - r).abs() < 1e-3 * r);
        assert!(b1.abs() < 1e-3 * r && c1.abs() < 1e-3 * r);
        for h in &e.harmonics[1..] {
            let m = h.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(m < 1e-3 * r, "{m}");
        }
        assert!((e.dc.0 - 3.0).abs() < 1e-9 && (e.dc.1 + 4.0).abs() < 1e-9);
    }

    #[test]
    fn zero_harmonics_reconstruct_to_dc() {
        let e = EfdCoefficients {
            harmonics: vec![[0.0; 4]; 15],
            dc: (5.0, 7.0),
        };
        assert!(efd_reconstruct(&e, 10).iter().all(|p| *p == Point::new(5.0, 7.0)));
    }

    #[test]
    fn too_few_points() {
        let err = efd(&circle(1.0, 30, Point::default()), 15).unwrap_err();
        assert_eq!(
            err,
            EfdError::TooFewPoints {
                needed: 31,
                got: 30,
                harmonics: 15
            }
        );
    }

    #[test]
    fn feature_vector_order() {
        let e = EfdCoefficients {
            harmonics: vec![[1.0, 2.0, 3.0, 4.0], [5.0, 6.0, 7.0, 8.0]],
            dc: (0.0, 0.0),
        };
        assert_eq!(e.feature_vector(), [1., 2., 3., 4., 5., 6., 7., 8.]);
    }

    #[test]
    fn first_harmonic_normalisation_is_rotation_invariant() {
        let ellipse: Vec<Point> = (0..200)
            .map(|i| {
                let t = i as f64 / 200.0 * 2.0 * PI;
                Point::new(30.0 * t.cos() + 4.0 * (3.0 * t).cos(), 12.0 * t.sin())
            })
            .collect();
        let turned: Vec<Point> = ellipse.iter().map(|p| p.rotated_cw(63.0)).collect();
        let a = efd(&ellipse, 6).unwrap().first_harmonic_normalized(true);
        let b = efd(&turned, 6).unwrap().first_harmonic_normalized(true);
        for (x, y) in a.feature_vector().iter().zip(b.feature_vector()) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
        assert!((a.harmonics[0][0] - 1.0).abs() < 1e-12);
    }
}
