//! The integral operator on discretized trajectories, weighted norms and
//! contraction certificates.
//!
//! For a fixed control the operator is
//! `F(x)(t) = e^{At}ξ0 + Σ_i ∫_0^t e^{(t−s)A} u_i(s) f_i(s, x(s)) ds`,
//! discretized with a left-endpoint rule on the control grid: the integrand is
//! frozen at each cell's left endpoint, including the semigroup lag. This
//! makes the rule exact for constant fields and keeps every contraction and
//! factorial estimate valid for the discrete operator as well.

use serde::{Deserialize, Serialize};

use crate::controls::{lp_norm, same_horizon, Control};
use crate::error::{invalid, Error, Result};
use crate::spaces::{NormKind, Propagator, Semigroup, SemigroupKind, StateVector, VectorField};

/// A curve `[0, T] → ℝ^n` sampled at `t_j = jT/n_t`, `j = 0..=n_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryGrid {
    horizon: f64,
    n_t: usize,
    dim: usize,
    norm: NormKind,
    data: Vec<f64>,
}

impl TrajectoryGrid {
    pub fn new(horizon: f64, states: &[StateVector]) -> Result<Self> {
        let first = states
            .first()
            .ok_or_else(|| invalid("trajectory needs at least two grid states"))?;
        let dim = first.dim();
        let norm = first.norm_kind();
        let mut data = Vec::with_capacity(states.len() * dim);
        for s in states {
            if s.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: s.dim(),
                });
            }
            if s.norm_kind() != norm {
                return Err(Error::MixedNorms);
            }
            data.extend_from_slice(s.as_slice());
        }
        Self::from_raw(horizon, states.len() - 1, dim, norm, data)
    }

    /// Row-major `(n_t + 1) × dim` data.
    pub fn from_raw(
        horizon: f64,
        n_t: usize,
        dim: usize,
        norm: NormKind,
        data: Vec<f64>,
    ) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid(format!(
                "horizon {horizon} must be positive and finite"
            )));
        }
        if n_t == 0 || dim == 0 {
            return Err(invalid("trajectory needs n_t >= 1 and dim >= 1"));
        }
        if data.len() != (n_t + 1) * dim {
            return Err(Error::GridMismatch(format!(
                "expected {} values for {} states of dimension {dim}, got {}",
                (n_t + 1) * dim,
                n_t + 1,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Certification(
                "trajectory has non-finite entries".into(),
            ));
        }
        Ok(Self {
            horizon,
            n_t,
            dim,
            norm,
            data,
        })
    }

    pub fn constant(horizon: f64, n_t: usize, xi: &StateVector) -> Result<Self> {
        let data = xi.as_slice().repeat(n_t + 1);
        Self::from_raw(horizon, n_t, xi.dim(), xi.norm_kind(), data)
    }

    /// Samples `f(t_j)` for every grid time.
    pub fn from_fn(
        horizon: f64,
        n_t: usize,
        dim: usize,
        norm: NormKind,
        f: impl Fn(f64) -> Vec<f64>,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity((n_t + 1) * dim);
        for j in 0..=n_t {
            let v = f(horizon * j as f64 / n_t as f64);
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            data.extend(v);
        }
        Self::from_raw(horizon, n_t, dim, norm, data)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn norm_kind(&self) -> NormKind {
        self.norm
    }

    pub fn len(&self) -> usize {
        self.n_t + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, j: usize) -> f64 {
        self.horizon * j as f64 / self.n_t as f64
    }

    pub fn state(&self, j: usize) -> &[f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    pub fn state_vector(&self, j: usize) -> StateVector {
        StateVector::new(self.state(j).to_vec(), self.norm).expect("grid states are finite")
    }

    pub fn states(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.n_t)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn check_same_grid(&self, other: &TrajectoryGrid) -> Result<()> {
        if self.n_t != other.n_t
            || self.dim != other.dim
            || !same_horizon(self.horizon, other.horizon)
        {
            return Err(Error::GridMismatch(format!(
                "trajectories (n_t = {}, dim = {}, T = {}) and (n_t = {}, dim = {}, T = {})",
                self.n_t, self.dim, self.horizon, other.n_t, other.dim, other.horizon
            )));
        }
        if self.norm != other.norm {
            return Err(Error::MixedNorms);
        }
        Ok(())
    }
}

/// `max_j ‖x(t_j) − y(t_j)‖`.
pub fn sup_norm(x: &TrajectoryGrid, y: &TrajectoryGrid) -> Result<f64> {
    omega_norm_distance(x, y, 0.0)
}

/// `max_j e^{−ω t_j}‖x(t_j) − y(t_j)‖`.
pub fn omega_norm_distance(x: &TrajectoryGrid, y: &TrajectoryGrid, omega: f64) -> Result<f64> {
    if !(omega >= 0.0 && omega.is_finite()) {
        return Err(invalid(format!("omega = {omega} must be finite and >= 0")));
    }
    x.check_same_grid(y)?;
    let norm = x.norm;
    Ok(x.states()
        .zip(y.states())
        .enumerate()
        .map(|(j, (a, b))| {
            let d = norm.distance(a, b);
            if omega == 0.0 || d == 0.0 {
                d
            } else {
                d * (-omega * x.time(j)).exp()
            }
        })
        .fold(0.0, f64::max))
}

/// The integral operator for a fixed system, initial state and grid.
///
/// Construction precomputes the one-step propagator `e^{Ah}` and the free
/// orbit `e^{At_j}ξ0`, so each application costs one field evaluation and one
/// propagator application per cell.
#[derive(Clone, Debug)]
pub struct IntegralOperator {
    fields: Vec<VectorField>,
    step: Propagator,
    orbit: TrajectoryGrid,
    class_m: f64,
    class_mu: f64,
}

impl IntegralOperator {
    pub fn new(
        sg: &Semigroup,
        fields: &[VectorField],
        xi0: &StateVector,
        horizon: f64,
        n_t: usize,
    ) -> Result<Self> {
        let n = sg.dim();
        if xi0.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: xi0.dim(),
            });
        }
        if fields.is_empty() {
            return Err(invalid("at least one vector field is required"));
        }
        for f in fields {
            if f.dim() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: f.dim(),
                });
            }
        }
        if !(horizon > 0.0 && horizon.is_finite()) || n_t == 0 {
            return Err(invalid("need a positive horizon and n_t >= 1"));
        }
        let h = horizon / n_t as f64;
        let step = sg.propagator(h)?;
        let norm = xi0.norm_kind();
        let orbit = match sg.kind() {
            SemigroupKind::Diagonal(lambda) => {
                TrajectoryGrid::from_fn(horizon, n_t, n, norm, |t| {
                    xi0.as_slice()
                        .iter()
                        .zip(lambda.iter())
                        .map(|(x, l)| x * (l * t).exp())
                        .collect()
                })?
            }
            SemigroupKind::DenseGenerator(_) => {
                let mut data = Vec::with_capacity((n_t + 1) * n);
                data.extend_from_slice(xi0.as_slice());
                let mut cur = xi0.as_slice().to_vec();
                let mut next = vec![0.0; n];
                for _ in 0..n_t {
                    step.apply_into(&cur, &mut next);
                    std::mem::swap(&mut cur, &mut next);
                    data.extend_from_slice(&cur);
                }
                TrajectoryGrid::from_raw(horizon, n_t, n, norm, data)?
            }
        };
        Ok(Self {
            fields: fields.to_vec(),
            step,
            orbit,
            class_m: sg.class_m(),
            class_mu: sg.class_mu(),
        })
    }

    pub fn horizon(&self) -> f64 {
        self.orbit.horizon
    }

    pub fn n_t(&self) -> usize {
        self.orbit.n_t
    }

    pub fn dim(&self) -> usize {
        self.orbit.dim
    }

    pub fn norm_kind(&self) -> NormKind {
        self.orbit.norm
    }

    pub fn fields(&self) -> &[VectorField] {
        &self.fields
    }

    pub fn class_m(&self) -> f64 {
        self.class_m
    }

    pub fn class_mu(&self) -> f64 {
        self.class_mu
    }

    pub fn initial_state(&self) -> StateVector {
        self.orbit.state_vector(0)
    }

    /// The free orbit `t_j ↦ e^{At_j}ξ0`.
    pub fn orbit(&self) -> &TrajectoryGrid {
        &self.orbit
    }

    /// Largest declared Lipschitz constant among the fields.
    pub fn lipschitz(&self) -> f64 {
        self.fields
            .iter()
            .map(VectorField::lipschitz)
            .fold(0.0, f64::max)
    }

    fn check_inputs(&self, x: &TrajectoryGrid, u: &Control) -> Result<()> {
        x.check_same_grid(&self.orbit)?;
        if u.n_t() != self.n_t() || !same_horizon(u.horizon(), self.horizon()) {
            return Err(Error::GridMismatch(format!(
                "control grid (n_t = {}, T = {}) differs from trajectory grid (n_t = {}, T = {})",
                u.n_t(),
                u.horizon(),
                self.n_t(),
                self.horizon()
            )));
        }
        if u.channels() != self.fields.len() {
            return Err(invalid(format!(
                "{} control channels for {} vector fields",
                u.channels(),
                self.fields.len()
            )));
        }
        Ok(())
    }

    /// The integral term alone, `F(x, u) − e^{A·}ξ0`.
    pub fn integral_term(&self, x: &TrajectoryGrid, u: &Control) -> Result<TrajectoryGrid> {
        self.check_inputs(x, u)?;
        let n = self.dim();
        let n_t = self.n_t();
        let h = u.step();
        let mut data = vec![0.0; (n_t + 1) * n];
        let mut acc = vec![0.0; n];
        let mut fv = vec![0.0; n];
        for j in 0..n_t {
            let t = x.time(j);
            let xj = x.state(j);
            let (done, rest) = data.split_at_mut((j + 1) * n);
            let cur = &done[j * n..];
            acc.copy_from_slice(cur);
            for (c, field) in self.fields.iter().enumerate() {
                let w = h * u.channel(c)[j];
                if w == 0.0 {
                    continue;
                }
                field.eval_into(t, xj, &mut fv);
                for (a, f) in acc.iter_mut().zip(&fv) {
                    *a += w * f;
                }
            }
            self.step.apply_into(&acc, &mut rest[..n]);
        }
        TrajectoryGrid::from_raw(self.horizon(), n_t, n, self.norm_kind(), data)
    }

    /// `F(x, u)` on the grid; the first state is `ξ0` exactly.
    pub fn apply(&self, x: &TrajectoryGrid, u: &Control) -> Result<TrajectoryGrid> {
        let mut out = self.integral_term(x, u)?;
        for (o, e) in out.data.iter_mut().zip(&self.orbit.data) {
            *o += e;
        }
        out.data[..self.dim()].copy_from_slice(self.orbit.state(0));
        Ok(out)
    }
}

/// One-shot evaluation of the integral operator.
pub fn integral_operator(
    x: &TrajectoryGrid,
    u: &Control,
    xi0: &StateVector,
    fields: &[VectorField],
    sg: &Semigroup,
) -> Result<TrajectoryGrid> {
    IntegralOperator::new(sg, fields, xi0, x.horizon(), x.n_t())?.apply(x, u)
}

/// Which contraction argument a certificate rests on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum CertificateMode {
    /// `F_u` contracts in the weighted norm `‖·‖_ω`.
    Omega { omega: f64 },
    /// The iterate `F_u^n` contracts in the sup-norm.
    Hidden { n: usize },
}

/// System constants a certificate was computed from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateConstants {
    pub m: f64,
    pub mu: f64,
    pub lipschitz: f64,
    pub horizon: f64,
}

/// Proof data that the integral operator contracts for every control with
/// `‖u‖_p ≤ radius`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionCertificate {
    #[serde(flatten)]
    pub mode: CertificateMode,
    pub rate: f64,
    pub radius: f64,
    pub p: f64,
    pub constants: CertificateConstants,
}

impl ContractionCertificate {
    /// Contraction factor per single application of `F_u` in the
    /// certificate's own metric (`‖·‖_ω`, or the renormed metric for hidden
    /// certificates).
    pub fn step_rate(&self) -> f64 {
        match self.mode {
            CertificateMode::Omega { .. } => self.rate,
            CertificateMode::Hidden { n } => self.rate.powf(1.0 / n as f64),
        }
    }

    /// Sup-norm Lipschitz bound of one application: `M e^{μT} L r`.
    pub fn one_step_lipschitz(&self) -> f64 {
        let c = &self.constants;
        c.m * (c.mu * c.horizon).exp() * c.lipschitz * self.radius
    }

    /// `max_{n<N} L_F^n / C^{n/N}`, the constant with `d' ≤ M_equiv·d`.
    pub fn equivalence_constant(&self) -> Result<f64> {
        let CertificateMode::Hidden { n } = self.mode else {
            return Err(Error::Certification(
                "equivalence constant needs a hidden certificate".into(),
            ));
        };
        if n == 1 {
            return Ok(1.0);
        }
        let lf = self.one_step_lipschitz();
        Ok((0..n)
            .map(|k| lf.powi(k as i32) / self.rate.powf(k as f64 / n as f64))
            .fold(0.0, f64::max))
    }

    /// Rejects controls outside the ball the certificate was issued for.
    pub fn check_control(&self, u: &Control) -> Result<f64> {
        let norm = lp_norm(u, self.p)?;
        if norm > self.radius * (1.0 + 1e-12) {
            return Err(Error::RadiusExceeded {
                norm,
                radius: self.radius,
                p: self.p,
            });
        }
        Ok(norm)
    }
}

fn check_constants(r: f64, m: f64, mu: f64, l: f64, horizon: f64) -> Result<()> {
    for (name, v) in [("radius", r), ("Lipschitz bound", l), ("mu", mu)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(invalid(format!("{name} = {v} must be finite and >= 0")));
        }
    }
    if !(m >= 1.0 && m.is_finite()) {
        return Err(invalid(format!("M = {m} must be finite and >= 1")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid(format!(
            "horizon {horizon} must be positive and finite"
        )));
    }
    Ok(())
}

fn conjugate(p: f64) -> f64 {
    if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    }
}

/// Weighted-norm certificate for `p > 1`.
///
/// The rate is `r·M·L / (q(ω−μ))^{1/q}` with `q = p/(p−1)`; ω is the smallest
/// `μ + 2^k`, `k ∈ ℤ`, that brings the rate down to `target_rate`.
pub fn certify_omega_contraction(
    p: f64,
    r: f64,
    m: f64,
    mu: f64,
    lipschitz: f64,
    horizon: f64,
    target_rate: f64,
) -> Result<ContractionCertificate> {
    if !(p > 1.0) {
        return Err(invalid(format!(
            "weighted-norm certificates need p > 1, got {p}"
        )));
    }
    check_constants(r, m, mu, lipschitz, horizon)?;
    if !(target_rate > 0.0 && target_rate < 1.0) {
        return Err(invalid(format!(
            "target rate {target_rate} must lie in (0, 1)"
        )));
    }
    let constants = CertificateConstants {
        m,
        mu,
        lipschitz,
        horizon,
    };
    let pre = r * m * lipschitz;
    if pre == 0.0 {
        return Ok(ContractionCertificate {
            mode: CertificateMode::Omega { omega: mu + 1.0 },
            rate: 0.0,
            radius: r,
            p,
            constants,
        });
    }
    let q = conjugate(p);
    let rate_at = |k: i32| pre / (q * 2f64.powi(k)).powf(1.0 / q);
    // rate ≤ target  ⇔  2^k ≥ (pre/target)^q / q
    let guess = q * (pre / target_rate).log2() - q.log2();
    if !guess.is_finite() || guess > 1000.0 {
        return Err(Error::Certification(format!(
            "weighted-norm exponent 2^{guess:.1} overflows"
        )));
    }
    let mut k = guess.ceil().max(-1000.0) as i32;
    while rate_at(k) > target_rate {
        k += 1;
    }
    while rate_at(k - 1) <= target_rate {
        k -= 1;
    }
    Ok(ContractionCertificate {
        mode: CertificateMode::Omega {
            omega: mu + 2f64.powi(k),
        },
        rate: rate_at(k),
        radius: r,
        p,
        constants,
    })
}

/// Hidden-contraction certificate on the L¹ ball of radius `r`.
///
/// N is the smallest integer with `(M e^{μT} L r)^N / N! < 1`.
pub fn certify_hidden_contraction(
    r: f64,
    m: f64,
    mu: f64,
    lipschitz: f64,
    horizon: f64,
) -> Result<ContractionCertificate> {
    check_constants(r, m, mu, lipschitz, horizon)?;
    let constants = CertificateConstants {
        m,
        mu,
        lipschitz,
        horizon,
    };
    let base = m * (mu * horizon).exp() * lipschitz * r;
    let (n, rate) = if base == 0.0 {
        (1, 0.0)
    } else {
        let ln_base = m.ln() + mu * horizon + lipschitz.ln() + r.ln();
        let mut n = 1usize;
        let mut log_rate = ln_base;
        while log_rate >= 0.0 {
            n += 1;
            log_rate += ln_base - (n as f64).ln();
            if n > 10_000_000 {
                return Err(Error::Certification(format!(
                    "no hidden contraction found below N = {n} for base {base:e}"
                )));
            }
        }
        // recompute directly when it is representable, for an exact stored rate
        let direct = (1..=n).fold(1.0, |acc, k| acc * base / k as f64);
        (
            n,
            if direct.is_finite() && direct > 0.0 {
                direct
            } else {
                log_rate.exp()
            },
        )
    };
    Ok(ContractionCertificate {
        mode: CertificateMode::Hidden { n },
        rate,
        radius: r,
        p: 1.0,
        constants,
    })
}

/// Which certificate to issue.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CertificateChoice {
    /// Hidden for `p = 1`; weighted norm for `p > 1` unless its weights would
    /// underflow on the horizon, then hidden.
    #[default]
    Auto,
    Omega,
    Hidden,
}

/// Largest `ω·T` for which `e^{−ωT}` still carries useful precision.
const MAX_OMEGA_HORIZON: f64 = 600.0;

/// Issues a certificate for the control ball `‖u‖_p ≤ r`.
///
/// A hidden certificate for `p > 1` is issued on the L¹ ball of radius
/// `r·T^{1/q}`, which contains the L^p ball by Hölder.
#[allow(clippy::too_many_arguments)]
pub fn certify(
    choice: CertificateChoice,
    p: f64,
    r: f64,
    m: f64,
    mu: f64,
    lipschitz: f64,
    horizon: f64,
    target_rate: f64,
) -> Result<ContractionCertificate> {
    if !(p >= 1.0) {
        return Err(invalid(format!("p = {p} must be >= 1")));
    }
    let hidden = || {
        let l1_radius = if p == 1.0 {
            r
        } else {
            r * horizon.powf(1.0 / conjugate(p))
        };
        certify_hidden_contraction(l1_radius, m, mu, lipschitz, horizon)
    };
    match choice {
        CertificateChoice::Hidden => hidden(),
        CertificateChoice::Omega => {
            certify_omega_contraction(p, r, m, mu, lipschitz, horizon, target_rate)
        }
        CertificateChoice::Auto if p == 1.0 => hidden(),
        CertificateChoice::Auto => {
            let cert = certify_omega_contraction(p, r, m, mu, lipschitz, horizon, target_rate)?;
            match cert.mode {
                CertificateMode::Omega { omega } if omega * horizon > MAX_OMEGA_HORIZON => hidden(),
                _ => Ok(cert),
            }
        }
    }
}

/// `d'(x, y) = max_{n<N} ‖F^n x − F^n y‖_∞ / C^{n/N}` for a hidden certificate.
pub fn renormed_distance<F>(
    x: &TrajectoryGrid,
    y: &TrajectoryGrid,
    apply_f: F,
    cert: &ContractionCertificate,
) -> Result<f64>
where
    F: Fn(&TrajectoryGrid) -> Result<TrajectoryGrid>,
{
    let CertificateMode::Hidden { n } = cert.mode else {
        return Err(Error::Certification(
            "renormed distance needs a hidden certificate".into(),
        ));
    };
    let mut a = x.clone();
    let mut b = y.clone();
    let mut best = sup_norm(&a, &b)?;
    for k in 1..n {
        a = apply_f(&a)?;
        b = apply_f(&b)?;
        let d = sup_norm(&a, &b)?;
        best = best.max(d / cert.rate.powf(k as f64 / n as f64));
    }
    Ok(best)
}
