//! Finite truncations of the state space, semigroups of class (M, μ) and
//! vector fields with Lipschitz and linear-growth data.
//!
//! States live in ℝ^n with a selectable p-norm (p ∈ {1, 2, ∞}). Every quantity
//! that depends on the norm (operator norms, Lipschitz constants, class
//! constants) is computed in the norm the caller selects.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, DVectorView, DVectorViewMut};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::expm::expm;

/// Norm on the truncated state space.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L1,
    #[default]
    L2,
    Linf,
}

impl NormKind {
    pub fn norm(self, v: &[f64]) -> f64 {
        match self {
            NormKind::L1 => v.iter().map(|x| x.abs()).sum(),
            NormKind::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            NormKind::Linf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }

    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
        match self {
            NormKind::L1 => diffs.sum(),
            NormKind::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            NormKind::Linf => diffs.fold(0.0, f64::max),
        }
    }

    /// Induced operator norm of `m` as a map (ℝ^n, ‖·‖) → (ℝ^n, ‖·‖).
    pub fn operator_norm(self, m: &DMatrix<f64>) -> f64 {
        match self {
            NormKind::L1 => m
                .column_iter()
                .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max),
            NormKind::Linf => m
                .row_iter()
                .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max),
            NormKind::L2 => {
                if m.is_empty() {
                    0.0
                } else {
                    m.clone().singular_values().max()
                }
            }
        }
    }

    /// A unit vector at which `m` attains its induced norm.
    fn maximizer(self, m: &DMatrix<f64>) -> DVector<f64> {
        let n = m.ncols();
        match self {
            NormKind::L1 => {
                let (j, _) = m
                    .column_iter()
                    .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
                    .enumerate()
                    .fold(
                        (0, f64::MIN),
                        |best, (j, s)| if s > best.1 { (j, s) } else { best },
                    );
                let mut e = DVector::zeros(n);
                e[j] = 1.0;
                e
            }
            NormKind::Linf => {
                let (i, _) = m
                    .row_iter()
                    .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
                    .enumerate()
                    .fold(
                        (0, f64::MIN),
                        |best, (i, s)| if s > best.1 { (i, s) } else { best },
                    );
                DVector::from_iterator(
                    n,
                    m.row(i).iter().map(|v| if *v < 0.0 { -1.0 } else { 1.0 }),
                )
            }
            NormKind::L2 => {
                let svd = m.clone().svd(false, true);
                let k = svd.singular_values.imax();
                svd.v_t.expect("requested V^T").row(k).transpose()
            }
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormKind::L1 => "l1",
            NormKind::L2 => "l2",
            NormKind::Linf => "linf",
        })
    }
}

/// Element of the truncated state space together with the norm it is measured in.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    coords: DVector<f64>,
    norm: NormKind,
}

impl StateVector {
    pub fn new(coords: Vec<f64>, norm: NormKind) -> Result<Self> {
        Self::from_dvector(DVector::from_vec(coords), norm)
    }

    pub fn from_dvector(coords: DVector<f64>, norm: NormKind) -> Result<Self> {
        if coords.is_empty() {
            return Err(invalid("state vector must have dimension >= 1"));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(invalid("state vector entries must be finite"));
        }
        Ok(Self { coords, norm })
    }

    pub fn zeros(dim: usize, norm: NormKind) -> Result<Self> {
        Self::from_dvector(DVector::zeros(dim), norm)
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn as_slice(&self) -> &[f64] {
        self.coords.as_slice()
    }

    pub fn norm_kind(&self) -> NormKind {
        self.norm
    }

    pub fn norm(&self) -> f64 {
        self.norm.norm(self.as_slice())
    }

    pub fn distance(&self, other: &StateVector) -> f64 {
        self.norm.distance(self.as_slice(), other.as_slice())
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.coords
    }
}

/// Linear part of the semigroup `t ↦ e^{At}`.
#[derive(Clone, Debug, PartialEq)]
pub enum SemigroupKind {
    /// `A = diag(λ_1, …, λ_n)`.
    Diagonal(DVector<f64>),
    /// Dense generator matrix `A`.
    DenseGenerator(DMatrix<f64>),
}

/// Semigroup `e^{At}` with class constants: ‖e^{At}‖ ≤ M e^{μt}.
#[derive(Clone, Debug, PartialEq)]
pub struct Semigroup {
    kind: SemigroupKind,
    class_m: f64,
    class_mu: f64,
}

/// Evaluated semigroup operator at a fixed time.
#[derive(Clone, Debug)]
pub enum Propagator {
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
}

impl Propagator {
    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        match self {
            Propagator::Diagonal(d) => {
                for ((o, x), f) in out.iter_mut().zip(v).zip(d.iter()) {
                    *o = f * x;
                }
            }
            Propagator::Dense(m) => {
                let n = v.len();
                let x = DVectorView::from_slice(v, n);
                let mut o = DVectorViewMut::from_slice(out, n);
                o.gemv(1.0, m, &x, 0.0);
            }
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.apply_into(v, &mut out);
        out
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            Propagator::Diagonal(d) => DMatrix::from_diagonal(d),
            Propagator::Dense(m) => m.clone(),
        }
    }
}

fn check_class(m: f64, mu: f64) -> Result<()> {
    if !(m >= 1.0 && m.is_finite()) {
        return Err(invalid(format!(
            "class constant M = {m} must be finite and >= 1"
        )));
    }
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(invalid(format!(
            "class constant mu = {mu} must be finite and >= 0"
        )));
    }
    Ok(())
}

impl Semigroup {
    /// Diagonal semigroup. Its class constants are exact in every p-norm:
    /// M = 1 and μ = max(0, max λ_k).
    pub fn diagonal(eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(invalid("semigroup needs dimension >= 1"));
        }
        if eigenvalues.iter().any(|l| !l.is_finite()) {
            return Err(invalid("eigenvalues must be finite"));
        }
        let mu = eigenvalues.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            kind: SemigroupKind::Diagonal(DVector::from_vec(eigenvalues)),
            class_m: 1.0,
            class_mu: mu,
        })
    }

    /// Heat-type semigroup with eigenvalues λ_k = −k², k = 1..n.
    pub fn heat(n: usize) -> Result<Self> {
        Self::diagonal((1..=n).map(|k| -((k * k) as f64)).collect())
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::diagonal(vec![0.0; n])
    }

    /// Dense generator with caller-supplied class constants.
    pub fn dense(a: DMatrix<f64>, class_m: f64, class_mu: f64) -> Result<Self> {
        if !a.is_square() || a.is_empty() {
            return Err(invalid("dense generator must be a nonempty square matrix"));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(invalid("generator entries must be finite"));
        }
        check_class(class_m, class_mu)?;
        Ok(Self {
            kind: SemigroupKind::DenseGenerator(a),
            class_m,
            class_mu,
        })
    }

    /// Dense generator whose class constants are certified numerically on [0, t_max].
    pub fn dense_certified(
        a: DMatrix<f64>,
        t_max: f64,
        norm: NormKind,
        safety: f64,
    ) -> Result<Self> {
        let provisional = Self::dense(a, 1.0, 0.0)?;
        let steps = 64;
        let grid: Vec<f64> = (0..=steps)
            .map(|i| t_max * i as f64 / steps as f64)
            .collect();
        let c = certify_class_constants(&provisional, &grid, 256, safety, norm)?;
        provisional.with_class(c.m, c.mu)
    }

    /// Replaces the class constants.
    pub fn with_class(mut self, class_m: f64, class_mu: f64) -> Result<Self> {
        check_class(class_m, class_mu)?;
        self.class_m = class_m;
        self.class_mu = class_mu;
        Ok(self)
    }

    pub fn kind(&self) -> &SemigroupKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            SemigroupKind::Diagonal(d) => d.len(),
            SemigroupKind::DenseGenerator(a) => a.nrows(),
        }
    }

    pub fn class_m(&self) -> f64 {
        self.class_m
    }

    pub fn class_mu(&self) -> f64 {
        self.class_mu
    }

    /// Largest real part of the spectrum of the generator.
    pub fn spectral_abscissa(&self) -> f64 {
        match &self.kind {
            SemigroupKind::Diagonal(d) => d.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            SemigroupKind::DenseGenerator(a) => a
                .clone()
                .complex_eigenvalues()
                .iter()
                .map(|z| z.re)
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// The operator `e^{At}`.
    pub fn propagator(&self, t: f64) -> Result<Propagator> {
        if t < 0.0 || t.is_nan() {
            return Err(Error::NegativeTime(t));
        }
        Ok(match &self.kind {
            SemigroupKind::Diagonal(d) => Propagator::Diagonal(d.map(|l| (l * t).exp())),
            SemigroupKind::DenseGenerator(a) => Propagator::Dense(expm(&(a * t))),
        })
    }

    pub fn apply(&self, t: f64, xi: &StateVector) -> Result<StateVector> {
        apply_semigroup(self, t, xi)
    }
}

/// `e^{At} ξ`. Exact (one `exp` per coordinate) for diagonal generators,
/// scaling-and-squaring Padé for dense ones.
pub fn apply_semigroup(sg: &Semigroup, t: f64, xi: &StateVector) -> Result<StateVector> {
    if xi.dim() != sg.dim() {
        return Err(Error::DimensionMismatch {
            expected: sg.dim(),
            found: xi.dim(),
        });
    }
    let p = sg.propagator(t)?;
    StateVector::new(p.apply(xi.as_slice()), xi.norm_kind())
}

/// Numerically certified class constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassConstants {
    pub m: f64,
    pub mu: f64,
}

/// Certifies (M, μ) for `sg` on the times in `t_grid`.
///
/// μ = safety · max(0, spectral abscissa); M = safety · max ‖e^{At}ξ‖ / (e^{μt}‖ξ‖)
/// over `sample_count` seeded Gaussian vectors plus, for every t, a vector at
/// which `e^{At}` attains its induced norm. M is never reported below 1.
pub fn certify_class_constants(
    sg: &Semigroup,
    t_grid: &[f64],
    sample_count: usize,
    safety: f64,
    norm: NormKind,
) -> Result<ClassConstants> {
    if sample_count == 0 {
        return Err(invalid("sample_count must be >= 1"));
    }
    let n = sg.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c1a5);
    let samples: Vec<StateVector> = (0..sample_count)
        .map(|_| {
            let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            StateVector::new(v, norm)
        })
        .collect::<Result<_>>()?;
    certify_with_samples(sg, t_grid, &samples, safety, true)
}

/// Same as [`certify_class_constants`] on caller-supplied sample vectors only.
pub fn certify_class_constants_on(
    sg: &Semigroup,
    t_grid: &[f64],
    samples: &[StateVector],
    safety: f64,
) -> Result<ClassConstants> {
    certify_with_samples(sg, t_grid, samples, safety, false)
}

fn certify_with_samples(
    sg: &Semigroup,
    t_grid: &[f64],
    samples: &[StateVector],
    safety: f64,
    add_maximizers: bool,
) -> Result<ClassConstants> {
    if t_grid.is_empty() {
        return Err(invalid("t_grid must be nonempty"));
    }
    if !(safety > 1.0 && safety.is_finite()) {
        return Err(invalid(format!("safety factor {safety} must be > 1")));
    }
    let usable: Vec<&StateVector> = samples.iter().filter(|s| s.norm() > 0.0).collect();
    if usable.is_empty() {
        return Err(Error::DegenerateSampling);
    }
    let norm = usable[0].norm_kind();
    for s in &usable {
        if s.dim() != sg.dim() {
            return Err(Error::DimensionMismatch {
                expected: sg.dim(),
                found: s.dim(),
            });
        }
    }
    let mu = safety * sg.spectral_abscissa().max(0.0);
    let mut worst: f64 = 0.0;
    for &t in t_grid {
        let p = sg.propagator(t)?;
        let damp = (-mu * t).exp();
        for s in &usable {
            let image = p.apply(s.as_slice());
            worst = worst.max(norm.norm(&image) * damp / s.norm());
        }
        if add_maximizers {
            let m = p.to_matrix();
            let v = norm.maximizer(&m);
            let vn = norm.norm(v.as_slice());
            if vn > 0.0 {
                worst = worst.max(norm.norm(&p.apply(v.as_slice())) * damp / vn);
            }
        }
    }
    Ok(ClassConstants {
        m: (safety * worst).max(1.0),
        mu,
    })
}

type FieldFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;

/// How a [`VectorField`] evaluates.
#[derive(Clone)]
pub enum FieldKind {
    /// `f(t, ξ) = Bξ`.
    Bilinear(DMatrix<f64>),
    /// `f(t, ξ) = b`.
    Constant(DVector<f64>),
    /// `f(t, ξ)_k = scale · tanh(ξ_k)`.
    Saturation {
        scale: f64,
    },
    /// `ρ_N(ξ − center) · inner(t, ξ)` with `ρ_N(ζ) = clamp(N + 1 − ‖ζ‖, 0, 1)`.
    Cutoff {
        inner: Box<VectorField>,
        center: DVector<f64>,
        level: f64,
    },
    Custom(Arc<FieldFn>),
}

impl fmt::Debug for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldKind::Bilinear(b) => f.debug_tuple("Bilinear").field(&b.shape()).finish(),
            FieldKind::Constant(b) => f.debug_tuple("Constant").field(&b.len()).finish(),
            FieldKind::Saturation { scale } => {
                f.debug_struct("Saturation").field("scale", scale).finish()
            }
            FieldKind::Cutoff { inner, level, .. } => f
                .debug_struct("Cutoff")
                .field("inner", inner)
                .field("level", level)
                .finish(),
            FieldKind::Custom(_) => f.write_str("Custom"),
        }
    }
}

/// Vector field `f(t, ξ)` with a Lipschitz bound `L` and linear-growth data
/// `‖f(t, ξ)‖ ≤ α‖ξ‖ + β`, all in the field's norm.
#[derive(Clone, Debug)]
pub struct VectorField {
    kind: FieldKind,
    dim: usize,
    norm: NormKind,
    lipschitz: f64,
    alpha: f64,
    beta: f64,
}

/// Parameters of the built-in vector fields.
#[derive(Clone, Debug)]
pub enum BuiltinField {
    Bilinear(DMatrix<f64>),
    Constant(Vec<f64>),
    Saturation { dim: usize, scale: f64 },
}

pub fn builtin_field(spec: BuiltinField, norm: NormKind) -> Result<VectorField> {
    match spec {
        BuiltinField::Bilinear(b) => VectorField::bilinear(b, norm),
        BuiltinField::Constant(b) => VectorField::constant(b, norm),
        BuiltinField::Saturation { dim, scale } => VectorField::saturation(dim, scale, norm),
    }
}

impl VectorField {
    pub fn bilinear(b: DMatrix<f64>, norm: NormKind) -> Result<Self> {
        if !b.is_square() || b.is_empty() {
            return Err(invalid("bilinear field needs a nonempty square matrix"));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(invalid("bilinear field entries must be finite"));
        }
        let op = norm.operator_norm(&b);
        Ok(Self {
            dim: b.nrows(),
            kind: FieldKind::Bilinear(b),
            norm,
            lipschitz: op,
            alpha: op,
            beta: 0.0,
        })
    }

    pub fn constant(b: Vec<f64>, norm: NormKind) -> Result<Self> {
        if b.is_empty() || b.iter().any(|v| !v.is_finite()) {
            return Err(invalid(
                "constant field needs finite entries and dimension >= 1",
            ));
        }
        let beta = norm.norm(&b);
        Ok(Self {
            dim: b.len(),
            kind: FieldKind::Constant(DVector::from_vec(b)),
            norm,
            lipschitz: 0.0,
            alpha: 0.0,
            beta,
        })
    }

    pub fn saturation(dim: usize, scale: f64, norm: NormKind) -> Result<Self> {
        if dim == 0 || !(scale >= 0.0 && scale.is_finite()) {
            return Err(invalid(
                "saturation field needs dim >= 1 and a finite scale >= 0",
            ));
        }
        Ok(Self {
            dim,
            kind: FieldKind::Saturation { scale },
            norm,
            lipschitz: scale,
            alpha: scale,
            beta: 0.0,
        })
    }

    /// User-supplied field. The declared constants are trusted.
    pub fn custom<F>(
        dim: usize,
        norm: NormKind,
        lipschitz: f64,
        alpha: f64,
        beta: f64,
        f: F,
    ) -> Result<Self>
    where
        F: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if dim == 0
            || [lipschitz, alpha, beta]
                .iter()
                .any(|c| !(*c >= 0.0 && c.is_finite()))
        {
            return Err(invalid(
                "custom field needs dim >= 1 and finite nonnegative constants",
            ));
        }
        Ok(Self {
            dim,
            kind: FieldKind::Custom(Arc::new(f)),
            norm,
            lipschitz,
            alpha,
            beta,
        })
    }

    pub(crate) fn cutoff(
        inner: VectorField,
        center: DVector<f64>,
        level: f64,
        lipschitz: f64,
    ) -> Self {
        Self {
            dim: inner.dim,
            norm: inner.norm,
            alpha: inner.alpha,
            beta: inner.beta,
            lipschitz,
            kind: FieldKind::Cutoff {
                inner: Box::new(inner),
                center,
                level,
            },
        }
    }

    pub fn kind(&self) -> &FieldKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn norm_kind(&self) -> NormKind {
        self.norm
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn growth_alpha(&self) -> f64 {
        self.alpha
    }

    pub fn growth_beta(&self) -> f64 {
        self.beta
    }

    /// Operator norm of `B` when the field is bilinear.
    pub fn bilinear_norm(&self) -> Option<f64> {
        match &self.kind {
            FieldKind::Bilinear(_) => Some(self.lipschitz),
            _ => None,
        }
    }

    /// Writes `f(t, ξ)` into `out`. Slices must have length `dim`.
    pub fn eval_into(&self, t: f64, xi: &[f64], out: &mut [f64]) {
        match &self.kind {
            FieldKind::Bilinear(b) => {
                let x = DVectorView::from_slice(xi, self.dim);
                let mut o = DVectorViewMut::from_slice(out, self.dim);
                o.gemv(1.0, b, &x, 0.0);
            }
            FieldKind::Constant(b) => out.copy_from_slice(b.as_slice()),
            FieldKind::Saturation { scale } => {
                for (o, x) in out.iter_mut().zip(xi) {
                    *o = scale * x.tanh();
                }
            }
            FieldKind::Cutoff {
                inner,
                center,
                level,
            } => {
                let r = self.norm.distance(xi, center.as_slice());
                let rho = (level + 1.0 - r).clamp(0.0, 1.0);
                if rho == 0.0 {
                    out.iter_mut().for_each(|o| *o = 0.0);
                } else {
                    inner.eval_into(t, xi, out);
                    if rho < 1.0 {
                        out.iter_mut().for_each(|o| *o *= rho);
                    }
                }
            }
            FieldKind::Custom(f) => f(t, xi, out),
        }
    }

    pub fn eval(&self, t: f64, xi: &StateVector) -> Result<StateVector> {
        if xi.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: xi.dim(),
            });
        }
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, xi.as_slice(), &mut out);
        StateVector::new(out, xi.norm_kind())
    }
}
