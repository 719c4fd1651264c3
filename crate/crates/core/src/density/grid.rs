//! Row-major multidimensional histograms.

use crate::error::{domain, Result};

/// A uniform binning of one coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lower: f64,
    pub width: f64,
    pub bins: usize,
}

impl Axis {
    pub fn new(lower: f64, width: f64, bins: usize) -> Result<Self> {
        if !(width > 0.0 && width.is_finite() && lower.is_finite()) {
            return Err(domain(format!("invalid axis lower={lower} width={width}")));
        }
        if bins == 0 {
            return Err(domain("axis needs at least one bin"));
        }
        Ok(Self { lower, width, bins })
    }

    /// `bins` bins covering `[min, max]`. The upper edge is nudged past `max`
    /// so the largest sample lands inside; a degenerate range gets a unit
    /// relative width around `min`.
    pub fn spanning(min: f64, max: f64, bins: usize) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && max >= min) {
            return Err(domain(format!("invalid axis range [{min}, {max}]")));
        }
        let range = max - min;
        if range > 0.0 {
            let width = range * (1.0 + 1e-9) / bins as f64;
            Axis::new(min, width, bins)
        } else {
            let half = if min != 0.0 { min.abs() * 1e-3 } else { 1e-12 };
            Axis::new(min - half, 2.0 * half / bins as f64, bins)
        }
    }

    pub fn upper(&self) -> f64 {
        self.lower + self.width * self.bins as f64
    }

    pub fn edge(&self, i: usize) -> f64 {
        self.lower + self.width * i as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lower + self.width * (i as f64 + 0.5)
    }

    /// Bin containing `x`, `None` outside `[lower, upper]`. The upper edge
    /// belongs to the last bin.
    pub fn locate(&self, x: f64) -> Option<usize> {
        if !(x >= self.lower && x <= self.upper()) {
            return None;
        }
        Some((((x - self.lower) / self.width) as usize).min(self.bins - 1))
    }

    fn locate_clamped(&self, x: f64) -> (usize, bool) {
        match self.locate(x) {
            Some(i) => (i, false),
            None if x < self.lower => (0, true),
            None => (self.bins - 1, true),
        }
    }

    pub fn refine(&self, factor: usize) -> Axis {
        Axis {
            lower: self.lower,
            width: self.width / factor as f64,
            bins: self.bins * factor,
        }
    }
}

/// Piecewise-constant density on a rectangular grid. Cells are stored in
/// row-major order, the last axis varying fastest. A grid with no axes is a
/// single cell of unit volume.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramGrid {
    axes: Vec<Axis>,
    density: Vec<f64>,
}

impl HistogramGrid {
    pub fn new(axes: Vec<Axis>, density: Vec<f64>) -> Result<Self> {
        let cells: usize = axes.iter().map(|a| a.bins).product();
        if density.len() != cells {
            return Err(domain(format!(
                "grid has {cells} cells but {} densities",
                density.len()
            )));
        }
        if let Some(bad) = density.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(domain(format!("invalid cell density {bad}")));
        }
        Ok(Self { axes, density })
    }

    pub fn zeros(axes: Vec<Axis>) -> Self {
        let cells = axes.iter().map(|a| a.bins).product();
        Self {
            axes,
            density: vec![0.0; cells],
        }
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn n_dims(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.density.is_empty()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.bins).collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.width).product()
    }

    /// Stride of each axis in the flat cell array.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.axes.len()];
        for a in (0..self.axes.len().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * self.axes[a + 1].bins;
        }
        strides
    }

    pub fn total_mass(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.cell_volume()
    }

    /// Multi-index of flat cell `flat`.
    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.axes.len()];
        for a in (0..self.axes.len()).rev() {
            idx[a] = flat % self.axes[a].bins;
            flat /= self.axes[a].bins;
        }
        idx
    }

    /// Flat index of the cell containing `point`, `None` outside the grid.
    pub fn locate(&self, point: &[f64]) -> Option<usize> {
        debug_assert_eq!(point.len(), self.axes.len());
        let mut flat = 0;
        for (axis, &x) in self.axes.iter().zip(point) {
            flat = flat * axis.bins + axis.locate(x)?;
        }
        Some(flat)
    }

    /// Density at `point`, zero outside the grid.
    pub fn value_at(&self, point: &[f64]) -> f64 {
        self.locate(point).map_or(0.0, |i| self.density[i])
    }

    /// Mean of coordinate `axis` under the (normalized) density.
    pub fn axis_mean(&self, axis: usize) -> f64 {
        let m = self.marginal(&[axis]);
        let ax = m.axes[0];
        let mass: f64 = m.density.iter().sum();
        m.density
            .iter()
            .enumerate()
            .map(|(i, v)| v * ax.center(i))
            .sum::<f64>()
            / mass
    }

    /// Integrates out every axis not listed in `keep` (which must be
    /// increasing).
    pub fn marginal(&self, keep: &[usize]) -> HistogramGrid {
        let axes: Vec<Axis> = keep.iter().map(|&a| self.axes[a]).collect();
        let mut out = HistogramGrid::zeros(axes);
        let dropped: f64 = self
            .axes
            .iter()
            .enumerate()
            .filter(|(a, _)| !keep.contains(a))
            .map(|(_, ax)| ax.width)
            .product();
        let out_strides = out.strides();
        for (flat, &v) in self.density.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let idx = self.unravel(flat);
            let target: usize = keep
                .iter()
                .zip(&out_strides)
                .map(|(&a, s)| idx[a] * s)
                .sum();
            out.density[target] += v * dropped;
        }
        out
    }

    /// Densities along axis 0 at the cell containing `rest` on the remaining
    /// axes; `None` when `rest` is outside the grid.
    pub fn leading_slice(&self, rest: &[f64]) -> Option<Vec<f64>> {
        debug_assert_eq!(rest.len() + 1, self.axes.len());
        let mut offset = 0;
        for (axis, &x) in self.axes[1..].iter().zip(rest) {
            offset = offset * axis.bins + axis.locate(x)?;
        }
        let stride = self.strides()[0];
        Some(
            (0..self.axes[0].bins)
                .map(|k| self.density[k * stride + offset])
                .collect(),
        )
    }

    /// Rescales to unit total mass. No-op on an all-zero grid.
    pub fn normalize(&mut self) {
        let mass = self.total_mass();
        if mass > 0.0 {
            for v in &mut self.density {
                *v /= mass;
            }
        }
    }
}

/// Counts `samples` into a grid over `axes`, normalized to a density.
/// Samples outside the axes are clamped into the edge bins; their number is
/// returned alongside the grid.
pub fn build_histogram<S: AsRef<[f64]>>(samples: &[S], axes: Vec<Axis>) -> Result<(HistogramGrid, usize)> {
    if samples.is_empty() {
        return Err(domain("histogram needs at least one sample"));
    }
    let mut grid = HistogramGrid::zeros(axes);
    let mut clamped = 0;
    for s in samples {
        let s = s.as_ref();
        if s.len() != grid.axes.len() {
            return Err(domain(format!(
                "sample has {} coordinates, grid has {} axes",
                s.len(),
                grid.axes.len()
            )));
        }
        let mut flat = 0;
        let mut outside = false;
        for (axis, &x) in grid.axes.iter().zip(s) {
            if !x.is_finite() {
                return Err(domain(format!("non-finite sample coordinate {x}")));
            }
            let (i, out) = axis.locate_clamped(x);
            outside |= out;
            flat = flat * axis.bins + i;
        }
        clamped += outside as usize;
        grid.density[flat] += 1.0;
    }
    let scale = 1.0 / (samples.len() as f64 * grid.cell_volume());
    for v in &mut grid.density {
        *v *= scale;
    }
    Ok((grid, clamped))
}

/// Parameters of the interpolated-histogram estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmoothingParams {
    /// Cells per original cell along each axis.
    pub upsample_factor: usize,
    /// Moving-average length on the refined grid (odd).
    pub taps: usize,
    pub passes: usize,
}

impl Default for SmoothingParams {
    fn default() -> Self {
        Self {
            upsample_factor: 4,
            taps: 3,
            passes: 2,
        }
    }
}

/// Multilinear interpolation onto a grid refined by `upsample_factor`,
/// followed by separable moving-average low-pass filtering, clipping and
/// renormalization.
pub fn interpolate_smooth(h: &HistogramGrid, params: SmoothingParams) -> Result<HistogramGrid> {
    let f = params.upsample_factor;
    if f < 2 {
        return Err(domain(format!("upsample factor must be at least 2, got {f}")));
    }
    if params.taps == 0 || params.taps % 2 == 0 {
        return Err(domain(format!("moving average needs an odd tap count, got {}", params.taps)));
    }
    let mut shape = h.shape();
    let mut data = h.density.clone();
    for axis in 0..shape.len() {
        let n = shape[axis];
        data = map_axis(&data, &shape, axis, n * f, |src, dst| {
            for (j, out) in dst.iter_mut().enumerate() {
                let p = ((j as f64 + 0.5) / f as f64 - 0.5).clamp(0.0, (n - 1) as f64);
                let i0 = (p.floor() as usize).min(n.saturating_sub(2));
                let t = p - i0 as f64;
                *out = if n == 1 {
                    src[0]
                } else {
                    (1.0 - t) * src[i0] + t * src[i0 + 1]
                };
            }
        });
        shape[axis] = n * f;
    }
    let half = params.taps / 2;
    for _ in 0..params.passes {
        for axis in 0..shape.len() {
            let n = shape[axis];
            data = map_axis(&data, &shape, axis, n, |src, dst| {
                for (j, out) in dst.iter_mut().enumerate() {
                    let lo = j.saturating_sub(half);
                    let hi = (j + half).min(n - 1);
                    *out = src[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
                }
            });
        }
    }
    for v in &mut data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let axes = h.axes.iter().map(|a| a.refine(f)).collect();
    let mut out = HistogramGrid::new(axes, data)?;
    out.normalize();
    Ok(out)
}

/// Applies `f` to every line of `data` along `axis`, producing lines of
/// length `out_len`.
fn map_axis(
    data: &[f64],
    shape: &[usize],
    axis: usize,
    out_len: usize,
    f: impl Fn(&[f64], &mut [f64]),
) -> Vec<f64> {
    let n = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0; outer * out_len * inner];
    let mut src = vec![0.0; n];
    let mut dst = vec![0.0; out_len];
    for o in 0..outer {
        for i in 0..inner {
            for (k, s) in src.iter_mut().enumerate() {
                *s = data[(o * n + k) * inner + i];
            }
            f(&src, &mut dst);
            for (k, d) in dst.iter().enumerate() {
                out[(o * out_len + k) * inner + i] = *d;
            }
        }
    }
    out
}
