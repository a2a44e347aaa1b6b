//! Reachable-set sampling, covering-number diagnostics across truncation
//! dimensions, the spike-family counter-example and the piecewise-constant
//! semigroup approximation behind the L¹ compactness argument.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compactness::{
    covering_ladder, covering_net, evaluation_set, greedy_net, packing_number, PointCloud,
};
use crate::controls::{lp_norm, sample_ball, spike_control, Control};
use crate::error::{invalid, Error, Result};
use crate::operator::{
    certify, certify_hidden_contraction, CertificateChoice, ContractionCertificate,
    IntegralOperator, TrajectoryGrid,
};
use crate::solver::{gronwall_radius, solve_batch, SolverOptions};
use crate::spaces::{NormKind, Propagator, Semigroup, StateVector, VectorField};

/// Monte-Carlo sample of the reachable set `{x(t; ξ0, u) : t ≤ T, ‖u‖_p ≤ r}`.
#[derive(Clone, Debug)]
pub struct ReachSetSample {
    pub xi0: StateVector,
    pub p: f64,
    pub r: f64,
    pub horizon: f64,
    pub controls: Vec<Control>,
    pub trajectories: Vec<TrajectoryGrid>,
    /// All grid states of all trajectories.
    pub endpoints: PointCloud<StateVector>,
}

impl ReachSetSample {
    /// Grid states at every `stride`-th time plus the final time.
    pub fn strided_endpoints(&self, stride: usize) -> Result<PointCloud<StateVector>> {
        if stride == 0 {
            return Err(invalid("stride must be >= 1"));
        }
        let mut pts = Vec::new();
        for x in &self.trajectories {
            for j in (0..x.len()).filter(|j| j % stride == 0 || *j == x.n_t()) {
                pts.push(x.state_vector(j));
            }
        }
        PointCloud::new(pts)
    }
}

fn check_certificate_covers(
    cert: &ContractionCertificate,
    p: f64,
    r: f64,
    horizon: f64,
) -> Result<()> {
    let needed = if cert.p == p {
        r
    } else if cert.p == 1.0 {
        // ‖u‖_1 ≤ T^{1/q}‖u‖_p
        let inv_q = if p.is_infinite() { 1.0 } else { (p - 1.0) / p };
        r * horizon.powf(inv_q)
    } else {
        return Err(Error::Config(format!(
            "a certificate for p = {} cannot cover the L^{p} ball",
            cert.p
        )));
    };
    if needed > cert.radius * (1.0 + 1e-12) {
        return Err(Error::RadiusExceeded {
            norm: needed,
            radius: cert.radius,
            p: cert.p,
        });
    }
    Ok(())
}

/// Draws `count` controls from the L^p ball of radius `r` and solves each.
#[allow(clippy::too_many_arguments)]
pub fn sample_reachset(
    op: &IntegralOperator,
    cert: &ContractionCertificate,
    p: f64,
    r: f64,
    count: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<ReachSetSample> {
    check_certificate_covers(cert, p, r, op.horizon())?;
    let controls = sample_ball(p, r, op.horizon(), op.fields().len(), op.n_t(), count, seed)?;
    sample_reachset_with(op, cert, controls, p, r, opts)
}

/// Same as [`sample_reachset`] for caller-supplied controls.
pub fn sample_reachset_with(
    op: &IntegralOperator,
    cert: &ContractionCertificate,
    controls: Vec<Control>,
    p: f64,
    r: f64,
    opts: &SolverOptions,
) -> Result<ReachSetSample> {
    if controls.is_empty() {
        return Err(invalid("at least one control is required"));
    }
    for (index, u) in controls.iter().enumerate() {
        let norm = lp_norm(u, p)?;
        if norm > r * (1.0 + 1e-12) {
            return Err(Error::Batch {
                index,
                source: Box::new(Error::RadiusExceeded { norm, radius: r, p }),
            });
        }
    }
    let results = solve_batch(op, &controls, cert, opts)?;
    let trajectories: Vec<TrajectoryGrid> = results.into_iter().map(|s| s.trajectory).collect();
    let endpoints = evaluation_set(&trajectories)?;
    Ok(ReachSetSample {
        xi0: op.initial_state(),
        p,
        r,
        horizon: op.horizon(),
        controls,
        trajectories,
        endpoints,
    })
}

/// Bilinear field of the diagnostics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiagnosticField {
    /// Symmetrized shift `(S + Sᵀ)/2`, operator norm below 1.
    #[default]
    Shift,
    Identity,
}

impl DiagnosticField {
    pub fn matrix(self, n: usize) -> DMatrix<f64> {
        match self {
            DiagnosticField::Identity => DMatrix::identity(n, n),
            DiagnosticField::Shift => {
                DMatrix::from_fn(
                    n,
                    n,
                    |i, j| if i + 1 == j || j + 1 == i { 0.5 } else { 0.0 },
                )
            }
        }
    }
}

/// Settings of the covering-number diagnostic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticConfig {
    pub dims: Vec<usize>,
    pub epsilons: Vec<f64>,
    pub p: f64,
    pub r: f64,
    pub horizon: f64,
    pub steps: usize,
    pub count: usize,
    pub seed: u64,
    pub norm: NormKind,
    pub field: DiagnosticField,
    /// Norm of the initial state `ξ0 ∝ (1/k²)_k`.
    pub xi0_norm: f64,
    /// Keep every `time_stride`-th grid state of each trajectory in the cloud.
    pub time_stride: usize,
    pub tol: f64,
    pub certificate: CertificateChoice,
    pub target_rate: f64,
}

impl Default for DiagnosticConfig {
    fn default() -> Self {
        Self {
            dims: vec![16, 32, 64],
            epsilons: vec![0.1, 0.02, 0.005],
            p: 2.0,
            r: 1.0,
            horizon: 1.0,
            steps: 200,
            count: 500,
            seed: 0,
            norm: NormKind::L2,
            field: DiagnosticField::Shift,
            xi0_norm: 0.02,
            time_stride: 20,
            tol: 1e-8,
            certificate: CertificateChoice::Auto,
            target_rate: 0.5,
        }
    }
}

impl DiagnosticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(Error::Config(
                "diagnostic dims must be a nonempty list of positive sizes".into(),
            ));
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::Config(
                "diagnostic epsilons must be a nonempty list of positive radii".into(),
            ));
        }
        if !(self.p >= 1.0) || !(self.r > 0.0) || !(self.horizon > 0.0) {
            return Err(Error::Config("need p >= 1, r > 0 and horizon > 0".into()));
        }
        if self.steps == 0 || self.count == 0 || self.time_stride == 0 {
            return Err(Error::Config(
                "steps, count and time_stride must be >= 1".into(),
            ));
        }
        if !(self.xi0_norm > 0.0) || !(self.tol > 0.0) {
            return Err(Error::Config("xi0_norm and tol must be positive".into()));
        }
        Ok(())
    }

    /// The initial state `ξ0 ∝ (1/k²)_k` scaled to norm `xi0_norm`.
    pub fn initial_state(&self, n: usize) -> Result<StateVector> {
        let profile: Vec<f64> = (1..=n).map(|k| 1.0 / (k * k) as f64).collect();
        let s = self.xi0_norm / self.norm.norm(&profile);
        StateVector::new(profile.into_iter().map(|v| v * s).collect(), self.norm)
    }

    /// Heat semigroup, diagnostic field and certificate in dimension `n`.
    pub fn system(&self, n: usize) -> Result<(IntegralOperator, ContractionCertificate)> {
        let sg = Semigroup::heat(n)?;
        let field = VectorField::bilinear(self.field.matrix(n), self.norm)?;
        let xi0 = self.initial_state(n)?;
        let op = IntegralOperator::new(&sg, &[field], &xi0, self.horizon, self.steps)?;
        let cert = certify(
            self.certificate,
            self.p,
            self.r,
            sg.class_m(),
            sg.class_mu(),
            op.lipschitz(),
            self.horizon,
            self.target_rate,
        )?;
        Ok((op, cert))
    }

    /// The reachable-set sample of the diagnostic in dimension `n`.
    pub fn sample(&self, n: usize) -> Result<(IntegralOperator, ReachSetSample)> {
        let (op, cert) = self.system(n)?;
        let opts = SolverOptions {
            tol: self.tol,
            ..SolverOptions::default()
        };
        let s = sample_reachset(&op, &cert, self.p, self.r, self.count, self.seed, &opts)?;
        Ok((op, s))
    }
}

/// Points drawn on the sphere of radius `radius` around `center`: Gaussian
/// directions normalized in the center's norm.
pub fn sample_sphere(
    center: &StateVector,
    radius: f64,
    count: usize,
    seed: u64,
) -> Result<PointCloud<StateVector>> {
    let n = center.dim();
    let norm = center.norm_kind();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::with_capacity(count);
    while pts.len() < count {
        let g: Vec<f64> = (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let gn = norm.norm(&g);
        if gn == 0.0 {
            continue;
        }
        let v = center
            .as_slice()
            .iter()
            .zip(&g)
            .map(|(c, x)| c + radius * x / gn)
            .collect();
        pts.push(StateVector::new(v, norm)?);
    }
    PointCloud::new(pts)
}

/// One row of the diagnostic table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub n: usize,
    pub epsilon: f64,
    pub n_reach: usize,
    pub n_ball: usize,
}

/// Per-dimension facts behind the table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionSummary {
    pub n: usize,
    pub cloud_size: usize,
    pub gronwall_radius: f64,
    /// Largest `‖x(t_j) − ξ0‖` over the full sample.
    pub max_excursion: f64,
    pub certificate: ContractionCertificate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub rows: Vec<DiagnosticRow>,
    pub dimensions: Vec<DimensionSummary>,
}

impl DiagnosticReport {
    pub fn row(&self, n: usize, epsilon: f64) -> Option<&DiagnosticRow> {
        self.rows
            .iter()
            .find(|r| r.n == n && (r.epsilon - epsilon).abs() <= 1e-12 * epsilon)
    }

    /// Writes the table with header `n,epsilon,n_reach,n_ball`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for row in &self.rows {
            wtr.serialize(row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Covering numbers of the sampled reachable set against a matched sample of
/// the sphere of Gronwall radius, across truncation dimensions.
pub fn compactness_diagnostic(cfg: &DiagnosticConfig) -> Result<DiagnosticReport> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut dimensions = Vec::new();
    for &n in &cfg.dims {
        let (op, sample) = cfg.sample(n)?;
        let cloud = sample.strided_endpoints(cfg.time_stride)?;
        let xi0 = &sample.xi0;
        let max_excursion = sample
            .endpoints
            .points()
            .iter()
            .map(|p| p.distance(xi0))
            .fold(0.0, f64::max);
        let field = &op.fields()[0];
        let radius = gronwall_radius(
            xi0,
            cfg.r,
            cfg.p,
            cfg.horizon,
            op.class_m(),
            op.class_mu(),
            field.growth_alpha(),
            field.growth_beta(),
        )?;
        let ball = sample_sphere(
            xi0,
            radius,
            cloud.len(),
            cfg.seed ^ (0x9e37_79b9_7f4a_7c15 ^ n as u64),
        )?;
        let reach_nets = covering_ladder(&cloud, &cfg.epsilons)?;
        let ball_nets = covering_ladder(&ball, &cfg.epsilons)?;
        for ((eps, a), b) in cfg.epsilons.iter().zip(&reach_nets).zip(&ball_nets) {
            rows.push(DiagnosticRow {
                n,
                epsilon: *eps,
                n_reach: a.covering_size,
                n_ball: b.covering_size,
            });
        }
        dimensions.push(DimensionSummary {
            n,
            cloud_size: cloud.len(),
            gronwall_radius: radius,
            max_excursion,
            certificate: sample_certificate(&op, cfg)?,
        });
    }
    Ok(DiagnosticReport { rows, dimensions })
}

fn sample_certificate(
    op: &IntegralOperator,
    cfg: &DiagnosticConfig,
) -> Result<ContractionCertificate> {
    certify(
        cfg.certificate,
        cfg.p,
        cfg.r,
        op.class_m(),
        op.class_mu(),
        op.lipschitz(),
        cfg.horizon,
        cfg.target_rate,
    )
}

/// Outcome of the spike-family experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleReport {
    /// Spike heights `1, 2, 4, …`.
    pub family: Vec<usize>,
    pub steps: usize,
    /// Largest deviation of a solved trajectory from `min(nt, 1)`.
    pub max_closed_form_error: f64,
    /// 0.5-packing number of the trajectories in the sup-norm.
    pub packing_half: usize,
    /// Covering size of the evaluation set at radius 0.25.
    pub covering_quarter: usize,
    /// `ceil(1/(2·0.25)) + 1`.
    pub covering_bound: usize,
}

/// Solves `ẋ = u`, `x(0) = 0` for the dyadic spikes `u_n = n·χ_[0,1/n]`,
/// `n = 1, 2, 4, … ≤ n_max`, and measures the trajectory family.
pub fn counterexample_report(n_max: usize, steps: usize) -> Result<CounterexampleReport> {
    if n_max == 0 {
        return Err(invalid("n_max must be >= 1"));
    }
    let family: Vec<usize> = (0..usize::BITS)
        .map(|k| 1usize << k)
        .take_while(|&n| n <= n_max)
        .collect();
    let largest = *family.last().expect("n_max >= 1");
    if !steps.is_multiple_of(largest) {
        return Err(Error::GridMismatch(format!(
            "{steps} cells cannot resolve a spike of width 1/{largest}"
        )));
    }
    let sg = Semigroup::identity(1)?;
    let xi0 = StateVector::new(vec![0.0], NormKind::L2)?;
    let field = VectorField::constant(vec![1.0], NormKind::L2)?;
    let op = IntegralOperator::new(&sg, &[field], &xi0, 1.0, steps)?;
    let cert = certify_hidden_contraction(1.0, 1.0, 0.0, 0.0, 1.0)?;
    let controls: Vec<Control> = family
        .iter()
        .map(|&n| spike_control(n, steps))
        .collect::<Result<_>>()?;
    let solved = solve_batch(&op, &controls, &cert, &SolverOptions::default())?;
    let trajectories: Vec<TrajectoryGrid> = solved.into_iter().map(|s| s.trajectory).collect();

    let mut max_err: f64 = 0.0;
    for (x, &n) in trajectories.iter().zip(&family) {
        for j in 0..x.len() {
            let want = (n as f64 * x.time(j)).min(1.0);
            max_err = max_err.max((x.state(j)[0] - want).abs());
        }
    }
    let ev = evaluation_set(&trajectories)?;
    Ok(CounterexampleReport {
        family,
        steps,
        max_closed_form_error: max_err,
        packing_half: packing_number(&PointCloud::new(trajectories)?, 0.5)?,
        covering_quarter: covering_net(&ev, 0.25)?.covering_size,
        covering_bound: (1.0f64 / (2.0 * 0.25)).ceil() as usize + 1,
    })
}

/// Piecewise-constant approximation of `(t, ξ) ↦ e^{At}ξ` on `[0, T] × K`.
///
/// Time cells are `[0, T/N]` and `((i−1)T/N, iT/N]`; state cells are the
/// δ-balls around the net points `η_j`, each with the earlier balls removed.
/// On cell `(i, j)` the table returns `e^{A·iT/N} η_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaTable {
    pub epsilon: f64,
    pub delta: f64,
    pub horizon: f64,
    pub time_cells: usize,
    pub norm: NormKind,
    /// Net points `η_j`.
    pub centers: Vec<Vec<f64>>,
    /// `values[i][j] = e^{A(i+1)T/N} η_j`.
    pub values: Vec<Vec<Vec<f64>>>,
    /// State cell of every point of the input cloud.
    pub cell_of_point: Vec<usize>,
    /// Largest error found by the dense verification scan.
    pub verified_error: f64,
    /// How many times δ was halved after a failed scan.
    pub retries: usize,
}

impl GammaTable {
    /// 0-based index of the time cell containing `t`.
    pub fn time_cell(&self, t: f64) -> usize {
        let x = t / self.horizon * self.time_cells as f64;
        let i = (x - 1e-9).ceil().max(1.0) as usize;
        i.min(self.time_cells) - 1
    }

    /// First net point within δ of `xi`; covers `K` enlarged by a δ-margin.
    pub fn state_cell(&self, xi: &[f64]) -> Option<usize> {
        self.centers
            .iter()
            .position(|c| self.norm.distance(c, xi) < self.delta)
    }

    pub fn eval(&self, t: f64, xi: &[f64]) -> Option<&[f64]> {
        self.state_cell(xi)
            .map(|j| self.values[self.time_cell(t)][j].as_slice())
    }

    /// Number of distinct table values, at most `N·M`.
    pub fn image_size(&self) -> usize {
        self.time_cells * self.centers.len()
    }
}

const GAMMA_SAMPLES: usize = 4000;
const GAMMA_RETRIES: usize = 8;

/// Largest sampled `‖e^{At}ξ − e^{At'}ξ'‖` with `0 ≤ t' − t ≤ δ`, `‖ξ − ξ'‖ ≤ δ`,
/// `ξ ∈ K`, all draws fixed by `seed` and scaled by δ.
fn sampled_oscillation(
    sg: &Semigroup,
    cloud: &[StateVector],
    horizon: f64,
    delta: f64,
    draws: &[(usize, f64, f64, Vec<f64>)],
) -> Result<f64> {
    let norm = cloud[0].norm_kind();
    draws
        .par_iter()
        .map(|(k, t_frac, dt_frac, dir)| {
            let xi = cloud[*k].as_slice();
            let t = t_frac * horizon;
            let t2 = (t + dt_frac * delta).min(horizon);
            let moved: Vec<f64> = xi.iter().zip(dir).map(|(a, d)| a + delta * d).collect();
            let a = sg.propagator(t)?.apply(xi);
            let b = sg.propagator(t2)?.apply(&moved);
            Ok(norm.distance(&a, &b))
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
}

/// Builds and verifies a Γ_ε table for `sg` on `[0, T] × K`.
pub fn gamma_approximation(
    sg: &Semigroup,
    cloud: &PointCloud<StateVector>,
    horizon: f64,
    eps: f64,
) -> Result<GammaTable> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !(eps > 0.0) || !(horizon > 0.0) {
        return Err(invalid("need eps > 0 and horizon > 0"));
    }
    let pts = cloud.points();
    if pts[0].dim() != sg.dim() {
        return Err(Error::DimensionMismatch {
            expected: sg.dim(),
            found: pts[0].dim(),
        });
    }
    let norm = pts[0].norm_kind();
    let n = sg.dim();

    let mut rng = ChaCha8Rng::seed_from_u64(0x6a77_a11e);
    let mut draws: Vec<(usize, f64, f64, Vec<f64>)> = (0..GAMMA_SAMPLES)
        .map(|s| {
            let k = rng.random_range(0..pts.len());
            // include the left edge and the full-δ corners explicitly
            let t_frac = if s % 8 == 0 { 0.0 } else { rng.random::<f64>() };
            let dt_frac = if s % 4 == 0 { 1.0 } else { rng.random::<f64>() };
            let g: Vec<f64> = (0..n)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let gn = norm.norm(&g).max(1e-300);
            let len = if s % 2 == 0 { 1.0 } else { rng.random::<f64>() };
            (
                k,
                t_frac,
                dt_frac,
                g.into_iter().map(|v| v * len / gn).collect(),
            )
        })
        .collect();
    draws.push((0, 0.0, 1.0, vec![0.0; n]));

    // bisection for the largest δ whose sampled oscillation stays below ε
    let (mut lo, mut hi) = (0.0f64, eps.max(horizon));
    if sampled_oscillation(sg, pts, horizon, hi, &draws)? < eps {
        lo = hi;
    } else {
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if sampled_oscillation(sg, pts, horizon, mid, &draws)? < eps {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    if lo <= 0.0 {
        return Err(Error::Verification(
            "no positive δ keeps the sampled oscillation below ε".into(),
        ));
    }

    let mut delta = lo;
    for retry in 0..=GAMMA_RETRIES {
        let table = build_gamma(sg, cloud, horizon, eps, delta, retry)?;
        let err = verify_gamma(sg, cloud, &table)?;
        if err < eps {
            return Ok(GammaTable {
                verified_error: err,
                ..table
            });
        }
        delta /= 2.0;
    }
    Err(Error::Verification(format!(
        "dense-grid error stayed at or above ε = {eps} after {GAMMA_RETRIES} halvings of δ"
    )))
}

fn build_gamma(
    sg: &Semigroup,
    cloud: &PointCloud<StateVector>,
    horizon: f64,
    eps: f64,
    delta: f64,
    retries: usize,
) -> Result<GammaTable> {
    let net = greedy_net(cloud, delta)?;
    let centers: Vec<Vec<f64>> = net
        .net_indices
        .iter()
        .map(|&i| cloud.points()[i].as_slice().to_vec())
        .collect();
    let time_cells = ((horizon / delta) * (1.0 + 1e-12)).ceil().max(1.0) as usize;
    let values: Vec<Vec<Vec<f64>>> = (1..=time_cells)
        .into_par_iter()
        .map(|i| {
            let e = sg.propagator(horizon * i as f64 / time_cells as f64)?;
            Ok(centers.iter().map(|c| e.apply(c)).collect())
        })
        .collect::<Result<_>>()?;
    let norm = cloud.points()[0].norm_kind();
    let mut table = GammaTable {
        epsilon: eps,
        delta,
        horizon,
        time_cells,
        norm,
        centers,
        values,
        cell_of_point: Vec::new(),
        verified_error: f64::NAN,
        retries,
    };
    table.cell_of_point = cloud
        .points()
        .iter()
        .map(|p| {
            table
                .state_cell(p.as_slice())
                .ok_or_else(|| Error::Coverage("a cloud point escaped its own δ-net".into()))
        })
        .collect::<Result<_>>()?;
    Ok(table)
}

/// Max of `‖e^{At}ξ − Γ_ε(t, ξ)‖` over every cloud point and a dense time grid
/// that includes both ends of every time cell.
fn verify_gamma(
    sg: &Semigroup,
    cloud: &PointCloud<StateVector>,
    table: &GammaTable,
) -> Result<f64> {
    let n_cells = table.time_cells;
    let per_cell = 8usize.max(400 / n_cells);
    let mut times = Vec::with_capacity(n_cells * per_cell + 1);
    times.push(0.0);
    for i in 0..n_cells {
        let a = table.horizon * i as f64 / n_cells as f64;
        let b = table.horizon * (i + 1) as f64 / n_cells as f64;
        for k in 1..=per_cell {
            times.push(a + (b - a) * k as f64 / per_cell as f64);
        }
        // just inside the open left end
        times.push(a + (b - a) * 1e-6);
    }
    let props: Vec<(f64, Propagator)> = times
        .iter()
        .map(|&t| Ok((t, sg.propagator(t)?)))
        .collect::<Result<_>>()?;
    let norm = table.norm;
    Ok(cloud
        .points()
        .par_iter()
        .zip(table.cell_of_point.par_iter())
        .map(|(p, &j)| {
            let mut worst: f64 = 0.0;
            let mut exact = vec![0.0; p.dim()];
            for (t, e) in &props {
                e.apply_into(p.as_slice(), &mut exact);
                let approx = &table.values[table.time_cell(*t)][j];
                worst = worst.max(norm.distance(&exact, approx));
            }
            worst
        })
        .reduce(|| 0.0, f64::max))
}

/// Field values `f_c(t_j, x(t_j))` over every grid state of a sample; the
/// natural state cloud for a Γ table used by [`convolution_compactness_check`].
pub fn field_values(
    op: &IntegralOperator,
    sample: &ReachSetSample,
) -> Result<PointCloud<StateVector>> {
    let n = op.dim();
    let mut pts = Vec::new();
    let mut buf = vec![0.0; n];
    for x in &sample.trajectories {
        for j in 0..x.len() {
            for f in op.fields() {
                f.eval_into(x.time(j), x.state(j), &mut buf);
                pts.push(StateVector::new(buf.clone(), op.norm_kind())?);
            }
        }
    }
    PointCloud::new(pts)
}

/// Outcome of the convolution reconstruction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvolutionReport {
    pub trajectories: usize,
    /// Largest `‖Σ λ_ij ξ_ij − ∫ e^{(t−s)A} u f ds‖` over all trajectories and grid times.
    pub max_error: f64,
    /// Largest `|λ_ij| / ‖u‖_1`.
    pub max_coefficient_ratio: f64,
    /// `ε_table · max ‖u‖_1`, the error the table guarantees.
    pub error_bound: f64,
    pub passed: bool,
}

/// Rewrites the integral term of each sampled solution as a finite
/// combination `Σ λ_ij ξ_ij` of table values, with `λ_ij` the control mass
/// whose lag falls in time cell i and whose field value falls in state cell j.
pub fn convolution_compactness_check(
    op: &IntegralOperator,
    sample: &ReachSetSample,
    gamma: &GammaTable,
) -> Result<ConvolutionReport> {
    let n = op.dim();
    let n_t = op.n_t();
    let cells = gamma.centers.len();
    let per_traj: Vec<(f64, f64, f64)> = sample
        .trajectories
        .par_iter()
        .zip(sample.controls.par_iter())
        .map(|(x, u)| {
            let h = u.step();
            let u1 = lp_norm(u, 1.0)?;
            let direct = op.integral_term(x, u)?;
            // (cell, weight) for every cell c and channel
            let mut terms: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n_t);
            let mut buf = vec![0.0; n];
            for c in 0..n_t {
                let mut at_c = Vec::new();
                for (ch, f) in op.fields().iter().enumerate() {
                    let w = h * u.channel(ch)[c];
                    if w == 0.0 {
                        continue;
                    }
                    f.eval_into(x.time(c), x.state(c), &mut buf);
                    let cell = gamma.state_cell(&buf).ok_or_else(|| {
                        Error::Coverage(format!(
                            "field value at t = {} lies outside the table's state cells",
                            x.time(c)
                        ))
                    })?;
                    at_c.push((cell, w));
                }
                terms.push(at_c);
            }
            let mut lambda = vec![0.0; gamma.time_cells * cells];
            let mut max_err: f64 = 0.0;
            let mut max_ratio: f64 = 0.0;
            let mut recon = vec![0.0; n];
            for j in 0..=n_t {
                lambda.iter_mut().for_each(|v| *v = 0.0);
                for (c, at_c) in terms.iter().enumerate().take(j) {
                    let i = gamma.time_cell(x.time(j - c));
                    for &(cell, w) in at_c {
                        lambda[i * cells + cell] += w;
                    }
                }
                recon.iter_mut().for_each(|v| *v = 0.0);
                for (idx, &l) in lambda.iter().enumerate() {
                    if l == 0.0 {
                        continue;
                    }
                    if u1 > 0.0 {
                        max_ratio = max_ratio.max(l.abs() / u1);
                    }
                    let v = &gamma.values[idx / cells][idx % cells];
                    for (r, vk) in recon.iter_mut().zip(v) {
                        *r += l * vk;
                    }
                }
                max_err = max_err.max(op.norm_kind().distance(&recon, direct.state(j)));
            }
            Ok((max_err, max_ratio, u1))
        })
        .collect::<Result<_>>()?;
    let max_error = per_traj.iter().map(|t| t.0).fold(0.0, f64::max);
    let max_coefficient_ratio = per_traj.iter().map(|t| t.1).fold(0.0, f64::max);
    let max_u1 = per_traj.iter().map(|t| t.2).fold(0.0, f64::max);
    let error_bound = gamma.epsilon * max_u1;
    Ok(ConvolutionReport {
        trajectories: per_traj.len(),
        max_error,
        max_coefficient_ratio,
        error_bound,
        passed: max_coefficient_ratio <= 1.0 + 1e-12 && max_error <= error_bound + 1e-12,
    })
}
