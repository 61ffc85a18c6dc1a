//! Trainable multigrid cell representation and its differentiable reader.
//!
//! A [`GridStack`] describes `M` grids of `c`-channel feature cells over a
//! rectangular domain. Queries are mapped to normalized coordinates in
//! `[1, H] × [1, W]`, each grid is shifted diagonally by `m / M`, and the
//! features of the four corner cells around the query are blended with a
//! separable kernel weight `k(1 - |x̂ - i|) · k(1 - |t̂ - j|)`. Summing over the
//! grids gives the feature vector fed to the network head.
//!
//! Cells are not stored here: they live in the model's flat parameter vector
//! starting at some base offset, laid out row-major as `M × c × (H+1) × (W+1)`.
//! Every grid owns one extra node row and column so that shifted queries near
//! the upper edge still fall inside a cell.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Jet2, JetOps};
use crate::error::{PixelError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub x_lo: f64,
    pub x_hi: f64,
    pub t_lo: f64,
    pub t_hi: f64,
}

impl Domain {
    pub fn new(x_lo: f64, x_hi: f64, t_lo: f64, t_hi: f64) -> Result<Self> {
        let ok = [x_lo, x_hi, t_lo, t_hi].iter().all(|v| v.is_finite()) && x_lo < x_hi && t_lo < t_hi;
        if !ok {
            return Err(PixelError::Config(format!(
                "invalid domain [{x_lo}, {x_hi}] x [{t_lo}, {t_hi}]"
            )));
        }
        Ok(Domain { x_lo, x_hi, t_lo, t_hi })
    }

    pub fn contains(&self, x: f64, t: f64) -> bool {
        x >= self.x_lo && x <= self.x_hi && t >= self.t_lo && t <= self.t_hi
    }

    pub fn width(&self) -> f64 {
        self.x_hi - self.x_lo
    }

    pub fn height(&self) -> f64 {
        self.t_hi - self.t_lo
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    /// `k(s) = (1 - cos πs) / 2`
    Cosine,
    /// `k(s) = s`; first derivatives only.
    Linear,
}

impl Kernel {
    pub fn supports_second_order(self) -> bool {
        matches!(self, Kernel::Cosine)
    }

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Cosine => "cosine",
            Kernel::Linear => "linear",
        }
    }

    /// Weights for the lower and upper node of a unit cell at fraction `f`,
    /// each as `(k, dk/df, d²k/df²)`.
    #[inline]
    fn pair(self, f: f64) -> ([f64; 3], [f64; 3]) {
        match self {
            Kernel::Cosine => {
                let (s, c) = (PI * f).sin_cos();
                self.pair_sc(f, s, c)
            }
            Kernel::Linear => ([1.0 - f, -1.0, 0.0], [f, 1.0, 0.0]),
        }
    }

    /// As [`Kernel::pair`] with `(sin πf, cos πf)` supplied by the caller.
    #[inline]
    fn pair_sc(self, f: f64, s: f64, c: f64) -> ([f64; 3], [f64; 3]) {
        match self {
            Kernel::Cosine => {
                let k1 = 0.5 * PI * s;
                let k2 = 0.5 * PI * PI * c;
                // k(1 - f) = (1 + cos πf) / 2
                ([0.5 * (1.0 + c), -k1, -k2], [0.5 * (1.0 - c), k1, k2])
            }
            Kernel::Linear => ([1.0 - f, -1.0, 0.0], [f, 1.0, 0.0]),
        }
    }
}

/// `(k, k', k'')` of the cosine kernel at `s ∈ [0, 1]`.
pub fn cosine_kernel(s: f64) -> Result<(f64, f64, f64)> {
    if !(0.0..=1.0).contains(&s) {
        return Err(PixelError::Domain(format!("kernel argument {s} outside [0, 1]")));
    }
    let (sn, cs) = (PI * s).sin_cos();
    Ok((0.5 * (1.0 - cs), 0.5 * PI * sn, 0.5 * PI * PI * cs))
}

/// Map `(x, t)` in `domain` to `(x̂, t̂) ∈ [1, h] × [1, w]`.
pub fn normalize(x: f64, t: f64, domain: &Domain, h: usize, w: usize) -> Result<(f64, f64)> {
    if !domain.contains(x, t) {
        return Err(PixelError::OutOfRange { x, t });
    }
    let xs = (h - 1) as f64 / domain.width();
    let ts = (w - 1) as f64 / domain.height();
    Ok((1.0 + (x - domain.x_lo) * xs, 1.0 + (t - domain.t_lo) * ts))
}

/// Lower node (1-based) and fraction of `q` in a row of `n` nodes.
///
/// A query sitting exactly on an interior node belongs to the cell on its
/// left, so a grid's last node row is reached only by queries at the upper
/// edge itself.
#[inline]
fn locate(q: f64, n: usize) -> (usize, f64) {
    // q >= 1 here, so truncation plus a fix-up is a ceiling.
    let floor = q as usize;
    let ceil = if (floor as f64) < q { floor + 1 } else { floor };
    let i = ceil.saturating_sub(1).clamp(1, n - 1);
    (i, q - i as f64)
}

/// Separable corner weights for a query in a grid of `nx × nt` nodes.
///
/// Returns `(node offset, weight)` for the four corners, where the node offset
/// is `i * nt + j` with 0-based node indices.
pub fn corner_weights(
    kernel: Kernel,
    nx: usize,
    nt: usize,
    xh: Jet2,
    th: Jet2,
) -> Result<[(u32, Jet2); 4]> {
    if !(xh.val >= 1.0 && xh.val <= nx as f64 && th.val >= 1.0 && th.val <= nt as f64) {
        return Err(PixelError::OutOfRange { x: xh.val, t: th.val });
    }
    Ok(corners_unchecked(kernel, nt, locate(xh.val, nx), locate(th.val, nt), xh, th))
}

#[inline]
fn corners_unchecked(
    kernel: Kernel,
    nt: usize,
    (i, fx): (usize, f64),
    (j, ft): (usize, f64),
    xh: Jet2,
    th: Jet2,
) -> [(u32, Jet2); 4] {
    corners_from_pairs(nt, i, j, kernel.pair(fx), kernel.pair(ft), xh, th)
}

#[inline]
fn corners_from_pairs(
    nt: usize,
    i: usize,
    j: usize,
    (xl, xr): ([f64; 3], [f64; 3]),
    (tl, tr): ([f64; 3], [f64; 3]),
    xh: Jet2,
    th: Jet2,
) -> [(u32, Jet2); 4] {
    let base = (i - 1) * nt + (j - 1);
    let axis_aligned = xh.d1[1] == 0.0 && th.d1[0] == 0.0 && xh.d2 == [0.0; 3] && th.d2 == [0.0; 3];
    if axis_aligned {
        let (sx, st) = (xh.d1[0], th.d1[1]);
        let ax = |k: [f64; 3]| [k[0], k[1] * sx, k[2] * sx * sx];
        let at = |k: [f64; 3]| [k[0], k[1] * st, k[2] * st * st];
        let outer = |a: [f64; 3], b: [f64; 3]| Jet2 {
            val: a[0] * b[0],
            d1: [a[1] * b[0], a[0] * b[1]],
            d2: [a[2] * b[0], a[1] * b[1], a[0] * b[2]],
        };
        let (x0, x1, t0, t1) = (ax(xl), ax(xr), at(tl), at(tr));
        return [
            (base as u32, outer(x0, t0)),
            ((base + 1) as u32, outer(x0, t1)),
            ((base + nt) as u32, outer(x1, t0)),
            ((base + nt + 1) as u32, outer(x1, t1)),
        ];
    }
    // The fraction jets differ from x̂, t̂ only by a constant.
    let wx0 = xh.chain(xl[0], xl[1], xl[2]);
    let wx1 = xh.chain(xr[0], xr[1], xr[2]);
    let wt0 = th.chain(tl[0], tl[1], tl[2]);
    let wt1 = th.chain(tr[0], tr[1], tr[2]);
    [
        (base as u32, wx0.mul(wt0)),
        ((base + 1) as u32, wx0.mul(wt1)),
        ((base + nt) as u32, wx1.mul(wt0)),
        ((base + nt + 1) as u32, wx1.mul(wt1)),
    ]
}

/// A single `c × nx × nt` grid stored at `base` in the parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridLayout {
    pub channels: usize,
    pub nx: usize,
    pub nt: usize,
    pub base: usize,
}

impl GridLayout {
    pub fn len(&self) -> usize {
        self.channels * self.nx * self.nt
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, ch: usize, i: usize, j: usize) -> usize {
        self.base + (ch * self.nx + i) * self.nt + j
    }
}

/// Interpolate all channels of one grid at normalized coordinates.
pub fn interpolate<C: JetOps>(
    ctx: &C,
    grid: &GridLayout,
    kernel: Kernel,
    xh: Jet2,
    th: Jet2,
) -> Result<Vec<C::V>> {
    let corners = corner_weights(kernel, grid.nx, grid.nt, xh, th)?;
    let weights: [Jet2; 4] = corners.map(|c| c.1);
    let indices: [u32; 4] = corners.map(|c| c.0);
    let offsets: Vec<usize> = (0..grid.channels).map(|ch| grid.index(ch, 0, 0)).collect();
    let mut out = Vec::with_capacity(grid.channels);
    ctx.gather(&weights, &indices, &offsets, &mut out);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    /// Number of grids `M`.
    pub grids: usize,
    /// Channels per cell `c`.
    pub channels: usize,
    /// Spatial resolution `H`.
    pub h: usize,
    /// Temporal resolution `W`.
    pub w: usize,
}

impl GridShape {
    pub fn new(grids: usize, channels: usize, h: usize, w: usize) -> Result<Self> {
        if grids < 1 || channels < 1 || h < 2 || w < 2 {
            return Err(PixelError::Config(format!(
                "grid shape ({grids}, {channels}, {h}, {w}) needs M >= 1, c >= 1, H >= 2, W >= 2"
            )));
        }
        Ok(GridShape { grids, channels, h, w })
    }

    pub fn nodes_x(&self) -> usize {
        self.h + 1
    }

    pub fn nodes_t(&self) -> usize {
        self.w + 1
    }

    /// Cells per grid, all channels.
    pub fn grid_len(&self) -> usize {
        self.channels * self.nodes_x() * self.nodes_t()
    }

    pub fn len(&self) -> usize {
        self.grids * self.grid_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridStack {
    pub shape: GridShape,
    pub domain: Domain,
    pub kernel: Kernel,
}

impl GridStack {
    pub fn new(shape: GridShape, domain: Domain, kernel: Kernel) -> Self {
        GridStack { shape, domain, kernel }
    }

    pub fn param_count(&self) -> usize {
        self.shape.len()
    }

    /// Layout of grid `m` when the stack starts at `base`.
    pub fn layout(&self, m: usize, base: usize) -> GridLayout {
        GridLayout {
            channels: self.shape.channels,
            nx: self.shape.nodes_x(),
            nt: self.shape.nodes_t(),
            base: base + m * self.shape.grid_len(),
        }
    }

    /// I.i.d. uniform cells in `[-scale, scale]`.
    pub fn init_cells<R: Rng>(&self, rng: &mut R, scale: f64) -> Vec<f64> {
        (0..self.param_count()).map(|_| rng.gen_range(-scale..=scale)).collect()
    }

    pub fn normalize(&self, x: f64, t: f64) -> Result<(f64, f64)> {
        normalize(x, t, &self.domain, self.shape.h, self.shape.w)
    }

    /// Normalized coordinates as jets of the physical coordinate jets.
    pub fn normalize_jets(&self, x: Jet2, t: Jet2) -> Result<(Jet2, Jet2)> {
        let (xh, th) = self.normalize(x.val, t.val)?;
        let xs = (self.shape.h - 1) as f64 / self.domain.width();
        let ts = (self.shape.w - 1) as f64 / self.domain.height();
        let mut xj = x.scale(xs);
        xj.val = xh;
        let mut tj = t.scale(ts);
        tj.val = th;
        Ok((xj, tj))
    }

    /// Sum over the grids of the shifted single-grid interpolants.
    pub fn interpolate_multigrid<C: JetOps>(
        &self,
        ctx: &C,
        base: usize,
        xh: Jet2,
        th: Jet2,
    ) -> Result<Vec<C::V>> {
        let s = &self.shape;
        let (h, w) = (s.h as f64, s.w as f64);
        if !(xh.val >= 1.0 && xh.val <= h && th.val >= 1.0 && th.val <= w) {
            return Err(PixelError::OutOfRange { x: xh.val, t: th.val });
        }
        let (nx, nt) = (s.nodes_x(), s.nodes_t());
        let rot = shift_rotations(s.grids);
        let (ix0, fx0) = locate(xh.val, nx);
        let (jt0, ft0) = locate(th.val, nt);
        let (sx0, cx0) = (PI * fx0).sin_cos();
        let (st0, ct0) = (PI * ft0).sin_cos();
        SCRATCH.with(|cell| {
            let mut scratch = cell.borrow_mut();
            let (weights, indices) = &mut *scratch;
            weights.clear();
            indices.clear();
            for (m, &(rs, rc)) in rot.iter().enumerate() {
                let shift = m as f64 / s.grids as f64;
                let (xm, tm) = (xh.offset(shift), th.offset(shift));
                let (i, fx) = locate(xm.val, nx);
                let (j, ft) = locate(tm.val, nt);
                // sin/cos of π·f for this grid follow from the unshifted
                // fraction by a rotation and one sign flip per crossed node.
                let flip = |steps: usize| if steps % 2 == 0 { 1.0 } else { -1.0 };
                let (px, pt) = (flip(i - ix0), flip(j - jt0));
                let (sx, cx) = (px * (sx0 * rc + cx0 * rs), px * (cx0 * rc - sx0 * rs));
                let (st, ct) = (pt * (st0 * rc + ct0 * rs), pt * (ct0 * rc - st0 * rs));
                let grid_off = (m * s.grid_len()) as u32;
                let corners = corners_from_pairs(
                    nt,
                    i,
                    j,
                    self.kernel.pair_sc(fx, sx, cx),
                    self.kernel.pair_sc(ft, st, ct),
                    xm,
                    tm,
                );
                for (idx, wgt) in corners {
                    indices.push(grid_off + idx);
                    weights.push(wgt);
                }
            }
            let plane = nx * nt;
            let offsets: Vec<usize> = (0..s.channels).map(|ch| base + ch * plane).collect();
            let mut out = Vec::with_capacity(s.channels);
            ctx.gather(weights, indices, &offsets, &mut out);
            Ok(out)
        })
    }
}

thread_local! {
    static SCRATCH: RefCell<(Vec<Jet2>, Vec<u32>)> = const { RefCell::new((Vec::new(), Vec::new())) };
    static ROTATIONS: RefCell<Vec<(usize, Rc<[(f64, f64)]>)>> = const { RefCell::new(Vec::new()) };
}

/// `(sin, cos)` of `π m / M` for `m < M`.
fn shift_rotations(grids: usize) -> Rc<[(f64, f64)]> {
    ROTATIONS.with(|cell| {
        let mut cache = cell.borrow_mut();
        if let Some((_, r)) = cache.iter().find(|(g, _)| *g == grids) {
            return r.clone();
        }
        let r: Rc<[(f64, f64)]> = (0..grids).map(|m| (PI * m as f64 / grids as f64).sin_cos()).collect();
        cache.push((grids, r.clone()));
        r
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Eval, Seed};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn jx(v: f64) -> Jet2 {
        Jet2::lift(v, Seed::X)
    }
    fn jt(v: f64) -> Jet2 {
        Jet2::lift(v, Seed::T)
    }

    #[test]
    fn normalize_endpoints_and_midpoint() {
        let d = Domain::new(0.0, 2.0 * PI, 0.0, 1.0).unwrap();
        assert_eq!(normalize(0.0, 0.0, &d, 16, 16).unwrap(), (1.0, 1.0));
        assert_eq!(normalize(2.0 * PI, 1.0, &d, 16, 16).unwrap(), (16.0, 16.0));
        let (a, b) = normalize(PI, 0.5, &d, 16, 16).unwrap();
        assert!((a - 8.5).abs() < 1e-14 && (b - 8.5).abs() < 1e-14);
        assert!(normalize(-0.1, 0.5, &d, 16, 16).is_err());
        assert!(normalize(1.0, 1.5, &d, 16, 16).is_err());
    }

    #[test]
    fn cosine_kernel_examples() {
        let (k, k1, k2) = cosine_kernel(0.0).unwrap();
        assert_eq!((k, k1), (0.0, 0.0));
        assert!((k2 - PI * PI / 2.0).abs() < 1e-14);
        let (k, k1, k2) = cosine_kernel(1.0).unwrap();
        assert!((k - 1.0).abs() < 1e-15 && k1.abs() < 1e-15);
        assert!((k2 + PI * PI / 2.0).abs() < 1e-14);
        let (k, k1, k2) = cosine_kernel(0.5).unwrap();
        assert!((k - 0.5).abs() < 1e-15);
        assert!((k1 - PI / 2.0).abs() < 1e-15);
        assert!(k2.abs() < 1e-15);
        assert!(cosine_kernel(1.0001).is_err());
        assert!(cosine_kernel(-1e-9).is_err());
    }

    #[test]
    fn two_by_two_center() {
        let grid = GridLayout { channels: 1, nx: 2, nt: 2, base: 0 };
        let cells = [0.0, 0.0, 0.0, 1.0];
        let out = interpolate(&Eval::new(&cells), &grid, Kernel::Cosine, jx(1.5), jt(1.5)).unwrap();
        assert!((out[0].val - 0.25).abs() < 1e-15);
    }

    #[test]
    fn constant_grid_has_zero_derivatives() {
        let grid = GridLayout { channels: 2, nx: 5, nt: 4, base: 0 };
        let cells = vec![5.0; grid.len()];
        let out = interpolate(&Eval::new(&cells), &grid, Kernel::Cosine, jx(2.3), jt(3.9)).unwrap();
        for f in out {
            assert!((f.val - 5.0).abs() < 1e-12);
            assert!(f.d1.iter().chain(&f.d2).all(|d| d.abs() < 1e-12));
        }
    }

    #[test]
    fn out_of_range_query_is_rejected() {
        let grid = GridLayout { channels: 1, nx: 4, nt: 4, base: 0 };
        let cells = vec![0.0; grid.len()];
        let e = Eval::new(&cells);
        assert!(interpolate(&e, &grid, Kernel::Cosine, jx(0.99), jt(2.0)).is_err());
        assert!(interpolate(&e, &grid, Kernel::Cosine, jx(2.0), jt(4.01)).is_err());
        assert!(interpolate(&e, &grid, Kernel::Cosine, jx(4.0), jt(4.0)).is_ok());
    }

    #[test]
    fn multigrid_of_constants_sums() {
        let shape = GridShape::new(3, 2, 4, 5).unwrap();
        let d = Domain::new(-1.0, 1.0, 0.0, 1.0).unwrap();
        let stack = GridStack::new(shape, d, Kernel::Cosine);
        let cells = vec![0.7; stack.param_count()];
        let out = stack.interpolate_multigrid(&Eval::new(&cells), 0, jx(3.99), jt(5.0)).unwrap();
        for f in out {
            assert!((f.val - 2.1).abs() < 1e-12);
        }
    }

    #[test]
    fn multigrid_matches_sum_of_single_grids() {
        let shape = GridShape::new(5, 3, 6, 7).unwrap();
        let d = Domain::new(-1.0, 1.0, 0.0, 1.0).unwrap();
        let stack = GridStack::new(shape, d, Kernel::Cosine);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cells = stack.init_cells(&mut rng, 1.0);
        let e = Eval::new(&cells);
        for &(x, t) in &[(1.0, 1.0), (2.5, 3.2), (5.99, 6.9), (6.0, 7.0), (3.0, 4.0)] {
            let (xh, th) = (jx(x).scale(1.3).offset(x - 1.3 * x), jt(t));
            let multi = stack.interpolate_multigrid(&e, 0, xh, th).unwrap();
            let mut sum = vec![Jet2::ZERO; 3];
            for m in 0..5 {
                let shift = m as f64 / 5.0;
                let one = interpolate(&e, &stack.layout(m, 0), Kernel::Cosine, xh.offset(shift), th.offset(shift)).unwrap();
                for (a, b) in sum.iter_mut().zip(one) {
                    *a = *a + b;
                }
            }
            for (a, b) in multi.iter().zip(&sum) {
                for (u, v) in a.to_array().iter().zip(b.to_array()) {
                    assert!((u - v).abs() < 1e-12 * (1.0 + v.abs()), "{u} vs {v}");
                }
            }
        }
    }

    #[test]
    fn shape_validation() {
        assert!(GridShape::new(0, 1, 2, 2).is_err());
        assert!(GridShape::new(1, 1, 1, 2).is_err());
        assert!(GridShape::new(1, 1, 2, 2).is_ok());
        assert!(Domain::new(1.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn init_cells_in_range() {
        let shape = GridShape::new(2, 3, 4, 4).unwrap();
        let stack = GridStack::new(shape, Domain::new(0.0, 1.0, 0.0, 1.0).unwrap(), Kernel::Cosine);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = stack.init_cells(&mut rng, 1e-2);
        assert_eq!(c.len(), 2 * 3 * 5 * 5);
        assert!(c.iter().all(|v| v.abs() <= 1e-2));
    }
}
