//! Second-order forward-mode jets in two input coordinates.
//!
//! A [`Jet2`] carries `f`, `(f_x, f_t)` and `(f_xx, f_xt, f_tt)` for a value
//! that depends on two active coordinates. Arithmetic on jets applies the
//! first- and second-order chain and product rules exactly, so evaluating a
//! model on lifted coordinates yields its spatial and temporal partials
//! without any numeric differencing.

use std::ops::{Add, Neg, Sub};

use crate::error::{PixelError, Result};

/// Index pairs `(i, j)` of the second-derivative slots `d2[k] = ∂²/∂i∂j`.
pub(crate) const PAIRS: [(usize, usize); 3] = [(0, 0), (0, 1), (1, 1)];

/// How a plain number enters a jet computation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Seed {
    Constant,
    /// Active coordinate 0 (`x`).
    X,
    /// Active coordinate 1 (`t`, or `y` for time-free problems).
    T,
}

/// Named component of a jet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Val,
    X,
    T,
    XX,
    XT,
    TT,
}

impl Slot {
    pub const ALL: [Slot; 6] = [Slot::Val, Slot::X, Slot::T, Slot::XX, Slot::XT, Slot::TT];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jet2 {
    pub val: f64,
    /// `[∂/∂x, ∂/∂t]`
    pub d1: [f64; 2],
    /// `[∂²/∂x², ∂²/∂x∂t, ∂²/∂t²]`
    pub d2: [f64; 3],
}

impl Jet2 {
    pub const ZERO: Jet2 = Jet2 { val: 0.0, d1: [0.0; 2], d2: [0.0; 3] };

    pub fn constant(val: f64) -> Self {
        Jet2 { val, ..Jet2::ZERO }
    }

    pub fn lift(val: f64, seed: Seed) -> Self {
        let mut j = Jet2::constant(val);
        match seed {
            Seed::Constant => {}
            Seed::X => j.d1[0] = 1.0,
            Seed::T => j.d1[1] = 1.0,
        }
        j
    }

    pub fn get(&self, slot: Slot) -> f64 {
        self.to_array()[slot.index()]
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.val, self.d1[0], self.d1[1], self.d2[0], self.d2[1], self.d2[2]]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Jet2 { val: a[0], d1: [a[1], a[2]], d2: [a[3], a[4], a[5]] }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Multiply every slot by a plain constant.
    pub fn scale(self, k: f64) -> Self {
        Jet2 {
            val: self.val * k,
            d1: [self.d1[0] * k, self.d1[1] * k],
            d2: [self.d2[0] * k, self.d2[1] * k, self.d2[2] * k],
        }
    }

    /// Add a plain constant to the value; derivatives are unchanged.
    pub fn offset(self, k: f64) -> Self {
        Jet2 { val: self.val + k, ..self }
    }

    /// Compose with a scalar function given its value and first two
    /// derivatives at `self.val`:
    ///
    /// ```text
    /// g    = f(a)
    /// g_i  = f'(a) a_i
    /// g_ij = f'(a) a_ij + f''(a) a_i a_j
    /// ```
    pub fn chain(self, f0: f64, f1: f64, f2: f64) -> Self {
        let g = self.d1;
        let mut d2 = [0.0; 3];
        for (k, &(i, j)) in PAIRS.iter().enumerate() {
            d2[k] = f1 * self.d2[k] + f2 * g[i] * g[j];
        }
        Jet2 { val: f0, d1: [f1 * g[0], f1 * g[1]], d2 }
    }

    /// Product rule:
    ///
    /// ```text
    /// (ab)_i  = a_i b + a b_i
    /// (ab)_ij = a_ij b + a b_ij + a_i b_j + a_j b_i
    /// ```
    pub fn mul(self, b: Jet2) -> Self {
        let a = self;
        let mut d2 = [0.0; 3];
        for (k, &(i, j)) in PAIRS.iter().enumerate() {
            d2[k] = a.d2[k] * b.val + a.val * b.d2[k] + a.d1[i] * b.d1[j] + a.d1[j] * b.d1[i];
        }
        Jet2 {
            val: a.val * b.val,
            d1: [a.d1[0] * b.val + a.val * b.d1[0], a.d1[1] * b.val + a.val * b.d1[1]],
            d2,
        }
    }

    /// `1/a`: f' = -1/a², f'' = 2/a³.
    pub fn recip(self) -> Result<Self> {
        if self.val == 0.0 {
            return Err(PixelError::Domain("reciprocal of zero".into()));
        }
        let r = 1.0 / self.val;
        Ok(self.chain(r, -r * r, 2.0 * r * r * r))
    }

    pub fn div(self, b: Jet2) -> Result<Self> {
        if b.val == 0.0 {
            return Err(PixelError::Domain("division by zero".into()));
        }
        Ok(self.mul(b.recip()?))
    }

    /// sin: f' = cos, f'' = -sin.
    pub fn sin(self) -> Self {
        let (s, c) = self.val.sin_cos();
        self.chain(s, c, -s)
    }

    /// cos: f' = -sin, f'' = -cos.
    pub fn cos(self) -> Self {
        let (s, c) = self.val.sin_cos();
        self.chain(c, -s, -c)
    }

    /// tanh: with y = tanh a, f' = 1 - y², f'' = -2y(1 - y²).
    pub fn tanh(self) -> Self {
        let y = self.val.tanh();
        let d = 1.0 - y * y;
        self.chain(y, d, -2.0 * y * d)
    }

    /// exp: f = f' = f''.
    pub fn exp(self) -> Self {
        let e = self.val.exp();
        self.chain(e, e, e)
    }

    /// a²: f' = 2a, f'' = 2.
    pub fn square(self) -> Self {
        self.chain(self.val * self.val, 2.0 * self.val, 2.0)
    }
}

impl Add for Jet2 {
    type Output = Jet2;
    fn add(self, b: Jet2) -> Jet2 {
        Jet2 {
            val: self.val + b.val,
            d1: [self.d1[0] + b.d1[0], self.d1[1] + b.d1[1]],
            d2: [self.d2[0] + b.d2[0], self.d2[1] + b.d2[1], self.d2[2] + b.d2[2]],
        }
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    fn sub(self, b: Jet2) -> Jet2 {
        Jet2 {
            val: self.val - b.val,
            d1: [self.d1[0] - b.d1[0], self.d1[1] - b.d1[1]],
            d2: [self.d2[0] - b.d2[0], self.d2[1] - b.d2[1], self.d2[2] - b.d2[2]],
        }
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    fn neg(self) -> Jet2 {
        self.scale(-1.0)
    }
}
