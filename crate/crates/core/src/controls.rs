//! Piecewise-constant L^p controls on a uniform time grid.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};

/// An m-channel control, constant on the cells `[jT/n_t, (j+1)T/n_t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Control {
    horizon: f64,
    values: Vec<Vec<f64>>,
}

impl Control {
    /// `values[c][j]` is the value of channel `c` on cell `j`.
    pub fn new(horizon: f64, values: Vec<Vec<f64>>) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid(format!(
                "horizon {horizon} must be positive and finite"
            )));
        }
        let n_t = values.first().map(Vec::len).unwrap_or(0);
        if n_t == 0 {
            return Err(invalid("control needs at least one channel and one cell"));
        }
        if values.iter().any(|ch| ch.len() != n_t) {
            return Err(Error::GridMismatch(
                "channels have different cell counts".into(),
            ));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("control values must be finite"));
        }
        Ok(Self { horizon, values })
    }

    pub fn zeros(horizon: f64, channels: usize, n_t: usize) -> Result<Self> {
        Self::constant(horizon, channels, n_t, 0.0)
    }

    pub fn constant(horizon: f64, channels: usize, n_t: usize, value: f64) -> Result<Self> {
        Self::new(horizon, vec![vec![value; n_t]; channels])
    }

    /// Builds a control by sampling `f(channel, cell_midpoint)`.
    pub fn from_fn(
        horizon: f64,
        channels: usize,
        n_t: usize,
        f: impl Fn(usize, f64) -> f64,
    ) -> Result<Self> {
        let h = horizon / n_t as f64;
        Self::new(
            horizon,
            (0..channels)
                .map(|c| (0..n_t).map(|j| f(c, (j as f64 + 0.5) * h)).collect())
                .collect(),
        )
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn channels(&self) -> usize {
        self.values.len()
    }

    pub fn n_t(&self) -> usize {
        self.values[0].len()
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.n_t() as f64
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c]
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            horizon: self.horizon,
            values: self
                .values
                .iter()
                .map(|ch| ch.iter().map(|v| c * v).collect())
                .collect(),
        }
    }

    /// `self − other` on a shared grid.
    pub fn difference(&self, other: &Control) -> Result<Self> {
        self.check_same_grid(other)?;
        Ok(Self {
            horizon: self.horizon,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                .collect(),
        })
    }

    /// Splits every cell into `factor` equal subcells.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(invalid("refinement factor must be >= 1"));
        }
        Ok(Self {
            horizon: self.horizon,
            values: self
                .values
                .iter()
                .map(|ch| {
                    ch.iter()
                        .flat_map(|&v| std::iter::repeat_n(v, factor))
                        .collect()
                })
                .collect(),
        })
    }

    /// Zeroes every cell from index `cell` on, i.e. restricts to `[0, cell·h)`.
    pub fn truncated(&self, cell: usize) -> Self {
        let mut out = self.clone();
        for ch in &mut out.values {
            for v in ch.iter_mut().skip(cell) {
                *v = 0.0;
            }
        }
        out
    }

    pub fn check_same_grid(&self, other: &Control) -> Result<()> {
        if self.channels() != other.channels()
            || self.n_t() != other.n_t()
            || !same_horizon(self.horizon, other.horizon)
        {
            return Err(Error::GridMismatch(format!(
                "controls ({} ch, {} cells, T = {}) and ({} ch, {} cells, T = {})",
                self.channels(),
                self.n_t(),
                self.horizon,
                other.channels(),
                other.n_t(),
                other.horizon
            )));
        }
        Ok(())
    }

    /// Writes one row per cell: `t_start, u_0, …, u_{m-1}`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["t_start".to_string()];
        header.extend((0..self.channels()).map(|c| format!("u{c}")));
        wtr.write_record(&header)?;
        let h = self.step();
        for j in 0..self.n_t() {
            let mut row = vec![format!("{}", j as f64 * h)];
            row.extend(self.values.iter().map(|ch| format!("{}", ch[j])));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads the format produced by [`Control::write_csv`] on horizon `horizon`.
    pub fn read_csv<R: Read>(r: R, horizon: f64) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let channels = rdr.headers()?.len().saturating_sub(1);
        if channels == 0 {
            return Err(invalid(
                "control CSV needs a t_start column and at least one channel",
            ));
        }
        let mut starts = Vec::new();
        let mut values = vec![Vec::new(); channels];
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| invalid(format!("bad number {s:?} in control CSV: {e}")))
            };
            starts.push(parse(&rec[0])?);
            for (c, ch) in values.iter_mut().enumerate() {
                ch.push(parse(&rec[c + 1])?);
            }
        }
        let u = Self::new(horizon, values)?;
        let h = u.step();
        for (j, s) in starts.iter().enumerate() {
            if (s - j as f64 * h).abs() > 1e-9 * horizon.max(1.0) {
                return Err(Error::GridMismatch(format!(
                    "row {j} starts at {s}, expected {} on a uniform grid of [0, {horizon}]",
                    j as f64 * h
                )));
            }
        }
        Ok(u)
    }
}

pub(crate) fn same_horizon(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// Exact L^p norm of a piecewise-constant control; channels combine by summation.
/// `p = f64::INFINITY` gives the essential supremum.
pub fn lp_norm(u: &Control, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(invalid(format!("p = {p} must be >= 1")));
    }
    let h = u.step();
    let per_channel = |ch: &[f64]| -> f64 {
        if p.is_infinite() {
            ch.iter().fold(0.0, |m, v| m.max(v.abs()))
        } else if p == 1.0 {
            h * ch.iter().map(|v| v.abs()).sum::<f64>()
        } else if p == 2.0 {
            (h * ch.iter().map(|v| v * v).sum::<f64>()).sqrt()
        } else {
            // factor out the largest entry to keep |v|^p in range
            let top = ch.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
            if top == 0.0 {
                return 0.0;
            }
            top * (h * ch.iter().map(|v| (v.abs() / top).powf(p)).sum::<f64>()).powf(1.0 / p)
        }
    };
    Ok(u.values.iter().map(|ch| per_channel(ch)).sum())
}

/// Seeded samples from the L^p ball of radius `r`.
///
/// Each control has i.i.d. standard normal cell values rescaled to norm
/// `r·U^{1/(m·n_t)}` with `U` uniform on (0, 1).
pub fn sample_ball(
    p: f64,
    r: f64,
    horizon: f64,
    channels: usize,
    n_t: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Control>> {
    if count == 0 {
        return Err(invalid("count must be >= 1"));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(invalid(format!("radius {r} must be positive")));
    }
    if channels == 0 || n_t == 0 {
        return Err(invalid("need at least one channel and one cell"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = (channels * n_t) as f64;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let values: Vec<Vec<f64>> = (0..channels)
            .map(|_| {
                (0..n_t)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let u = Control::new(horizon, values)?;
        let norm = lp_norm(&u, p)?;
        let unif: f64 = rng.random();
        if norm == 0.0 || unif == 0.0 {
            continue;
        }
        let target = r * unif.powf(1.0 / dims);
        out.push(u.scaled(target / norm));
    }
    Ok(out)
}

/// The spike `u_n = n·χ_[0, 1/n]` on `[0, 1]` with `n_t` cells.
pub fn spike_control(n: usize, n_t: usize) -> Result<Control> {
    if n == 0 || n_t == 0 {
        return Err(invalid("spike index and cell count must be >= 1"));
    }
    if !n_t.is_multiple_of(n) {
        return Err(Error::GridMismatch(format!(
            "{n_t} cells cannot resolve a spike of width 1/{n}"
        )));
    }
    let width = n_t / n;
    let values = (0..n_t)
        .map(|j| if j < width { n as f64 } else { 0.0 })
        .collect();
    Control::new(1.0, vec![values])
}
