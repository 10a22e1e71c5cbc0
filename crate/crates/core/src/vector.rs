//! Real and complex 3-vectors used for frames.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::Vector3;
use num_complex::Complex64;

pub type Vec3 = Vector3<f64>;

/// A vector of ℂ³ stored as its real and imaginary parts.
///
/// The complex normal of a frame is `N = e1 + i e2`, i.e. `re = e1`, `im = e2`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CVec3 {
    pub re: Vec3,
    pub im: Vec3,
}

impl CVec3 {
    pub fn new(re: Vec3, im: Vec3) -> Self {
        Self { re, im }
    }

    pub fn zeros() -> Self {
        Self::default()
    }

    pub fn from_real(v: Vec3) -> Self {
        Self { re: v, im: Vec3::zeros() }
    }

    pub fn conj(&self) -> Self {
        Self { re: self.re, im: -self.im }
    }

    /// Multiplication by a complex scalar.
    pub fn scale(&self, z: Complex64) -> Self {
        Self {
            re: self.re * z.re - self.im * z.im,
            im: self.re * z.im + self.im * z.re,
        }
    }

    /// Bilinear dot product (no conjugation).
    pub fn dot(&self, other: &CVec3) -> Complex64 {
        Complex64::new(
            self.re.dot(&other.re) - self.im.dot(&other.im),
            self.re.dot(&other.im) + self.im.dot(&other.re),
        )
    }

    /// Dot product with a real vector.
    pub fn dot_real(&self, v: &Vec3) -> Complex64 {
        Complex64::new(self.re.dot(v), self.im.dot(v))
    }

    /// `Σ |z_k|²`.
    pub fn norm_squared(&self) -> f64 {
        self.re.norm_squared() + self.im.norm_squared()
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn component(&self, k: usize) -> Complex64 {
        Complex64::new(self.re[k], self.im[k])
    }

    pub fn rotate(&self, r: &nalgebra::Matrix3<f64>) -> Self {
        Self { re: r * self.re, im: r * self.im }
    }
}

impl Add for CVec3 {
    type Output = CVec3;
    fn add(self, o: CVec3) -> CVec3 {
        CVec3 { re: self.re + o.re, im: self.im + o.im }
    }
}

impl AddAssign for CVec3 {
    fn add_assign(&mut self, o: CVec3) {
        self.re += o.re;
        self.im += o.im;
    }
}

impl Sub for CVec3 {
    type Output = CVec3;
    fn sub(self, o: CVec3) -> CVec3 {
        CVec3 { re: self.re - o.re, im: self.im - o.im }
    }
}

impl Neg for CVec3 {
    type Output = CVec3;
    fn neg(self) -> CVec3 {
        CVec3 { re: -self.re, im: -self.im }
    }
}

impl Mul<f64> for CVec3 {
    type Output = CVec3;
    fn mul(self, s: f64) -> CVec3 {
        CVec3 { re: self.re * s, im: self.im * s }
    }
}

/// `Re(z · v)` for a complex scalar and complex vector.
pub fn re_mul(z: Complex64, v: &CVec3) -> Vec3 {
    v.re * z.re - v.im * z.im
}
