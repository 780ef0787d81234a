//! Second-order bivariate jets.
//!
//! A [`Jet2`] carries a value together with its first partials and its pure
//! second partials in two input variables. The mixed partial is not tracked:
//! the Laplacian and the separable boundary mask only need `∂xx` and `∂yy`,
//! and none of the propagation rules below feed the mixed term back into the
//! pure ones.

use std::ops::{Add, Mul, Neg, Sub};

/// Number of derivative channels carried per jet.
pub const CHANNELS: usize = 5;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jet2 {
    pub v: f64,
    pub dx: f64,
    pub dy: f64,
    pub dxx: f64,
    pub dyy: f64,
}

impl Jet2 {
    pub const fn new(v: f64, dx: f64, dy: f64, dxx: f64, dyy: f64) -> Self {
        Self { v, dx, dy, dxx, dyy }
    }

    /// The first input variable, evaluated at `x`.
    pub const fn var_x(x: f64) -> Self {
        Self::new(x, 1.0, 0.0, 0.0, 0.0)
    }

    /// The second input variable, evaluated at `y`.
    pub const fn var_y(y: f64) -> Self {
        Self::new(y, 0.0, 1.0, 0.0, 0.0)
    }

    pub const fn constant(c: f64) -> Self {
        Self::new(c, 0.0, 0.0, 0.0, 0.0)
    }

    pub fn from_channels(c: [f64; CHANNELS]) -> Self {
        Self::new(c[0], c[1], c[2], c[3], c[4])
    }

    pub fn channels(self) -> [f64; CHANNELS] {
        [self.v, self.dx, self.dy, self.dxx, self.dyy]
    }

    pub fn laplacian(self) -> f64 {
        self.dxx + self.dyy
    }

    pub fn scale(self, c: f64) -> Self {
        Self::new(c * self.v, c * self.dx, c * self.dy, c * self.dxx, c * self.dyy)
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        Self::new(
            s,
            c * self.dx,
            c * self.dy,
            c * self.dxx - s * self.dx * self.dx,
            c * self.dyy - s * self.dy * self.dy,
        )
    }

    pub fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        Self::new(
            c,
            -s * self.dx,
            -s * self.dy,
            -s * self.dxx - c * self.dx * self.dx,
            -s * self.dyy - c * self.dy * self.dy,
        )
    }
}

impl Add for Jet2 {
    type Output = Self;
    fn add(self, b: Self) -> Self {
        Self::new(self.v + b.v, self.dx + b.dx, self.dy + b.dy, self.dxx + b.dxx, self.dyy + b.dyy)
    }
}

impl Sub for Jet2 {
    type Output = Self;
    fn sub(self, b: Self) -> Self {
        self + (-b)
    }
}

impl Neg for Jet2 {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl Mul for Jet2 {
    type Output = Self;
    fn mul(self, b: Self) -> Self {
        let a = self;
        Self::new(
            a.v * b.v,
            a.dx * b.v + a.v * b.dx,
            a.dy * b.v + a.v * b.dy,
            a.dxx * b.v + 2.0 * a.dx * b.dx + a.v * b.dxx,
            a.dyy * b.v + 2.0 * a.dy * b.dy + a.v * b.dyy,
        )
    }
}

impl Add<f64> for Jet2 {
    type Output = Self;
    fn add(self, c: f64) -> Self {
        Self { v: self.v + c, ..self }
    }
}

impl Sub<f64> for Jet2 {
    type Output = Self;
    fn sub(self, c: f64) -> Self {
        Self { v: self.v - c, ..self }
    }
}

impl Mul<f64> for Jet2 {
    type Output = Self;
    fn mul(self, c: f64) -> Self {
        self.scale(c)
    }
}
