//! ε-nets, packing numbers and Hausdorff distances on finite point clouds,
//! plus the constructive net transfers between trajectory space, evaluation
//! sets and families of compact sets.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controls::Control;
use crate::error::{invalid, Error, Result};
use crate::operator::{sup_norm, TrajectoryGrid};
use crate::spaces::{NormKind, StateVector};

/// Distances below this are treated as identical points.
pub const DEDUP_TOL: f64 = 1e-12;

/// An element of a metric space a [`PointCloud`] can hold.
pub trait MetricPoint: Clone + Send + Sync {
    fn distance(&self, other: &Self) -> f64;

    /// Errors unless `self` and `other` live in the same metric space.
    fn compatible(&self, other: &Self) -> Result<()>;

    /// The coordinate of a one-dimensional point, enabling exact interval covers.
    fn scalar_value(&self) -> Option<f64> {
        None
    }
}

impl MetricPoint for StateVector {
    fn distance(&self, other: &Self) -> f64 {
        StateVector::distance(self, other)
    }

    fn compatible(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        if self.norm_kind() != other.norm_kind() {
            return Err(Error::MixedNorms);
        }
        Ok(())
    }

    fn scalar_value(&self) -> Option<f64> {
        (self.dim() == 1).then(|| self.as_slice()[0])
    }
}

impl MetricPoint for TrajectoryGrid {
    fn distance(&self, other: &Self) -> f64 {
        sup_norm(self, other).unwrap_or(f64::INFINITY)
    }

    fn compatible(&self, other: &Self) -> Result<()> {
        self.check_same_grid(other)
    }
}

/// Finite approximation of a subset of a metric space.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud<P> {
    points: Vec<P>,
}

impl<P: MetricPoint> PointCloud<P> {
    /// Accepts an empty list; operations that need points reject it later.
    pub fn new(points: Vec<P>) -> Result<Self> {
        if let Some(first) = points.first() {
            for p in &points[1..] {
                first.compatible(p)?;
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[P] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<P> {
        self.points
    }

    fn require_nonempty(&self) -> Result<()> {
        if self.points.is_empty() {
            Err(Error::EmptyCloud)
        } else {
            Ok(())
        }
    }

    /// Sub-cloud of the given indices.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i].clone()).collect(),
        }
    }
}

impl PointCloud<StateVector> {
    /// Writes one point per row, columns `x0, …, x{n−1}`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        if let Some(first) = self.points.first() {
            wtr.write_record((0..first.dim()).map(|k| format!("x{k}")))?;
        }
        for p in &self.points {
            wtr.write_record(p.as_slice().iter().map(|v| v.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn norm_kind(&self) -> Option<NormKind> {
        self.points.first().map(StateVector::norm_kind)
    }
}

/// A net over a point cloud.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetReport {
    pub epsilon: f64,
    /// Indices of the net points in the cloud.
    pub net_indices: Vec<usize>,
    pub covering_size: usize,
    /// Greedy 2ε-packing of the same cloud. No ε-cover can be smaller.
    pub packing_size: usize,
}

fn check_radius(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("radius {eps} must be positive and finite")))
    }
}

/// Greedy maximal set with pairwise distances `≥ radius`, scanned in index order.
/// Points closer than [`DEDUP_TOL`] always count as duplicates.
fn greedy_indices<P: MetricPoint>(points: &[P], radius: f64) -> Vec<usize> {
    let radius = radius.max(DEDUP_TOL);
    let mut net: Vec<usize> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let covered = if net.len() > 512 {
            net.par_iter().any(|&k| points[k].distance(p) < radius)
        } else {
            net.iter().any(|&k| points[k].distance(p) < radius)
        };
        if !covered {
            net.push(i);
        }
    }
    net
}

/// Greedy ε-net: a point joins the net iff it is at distance `≥ ε` from every
/// earlier net point. Every cloud point ends up within distance `< ε` of the net.
pub fn greedy_net<P: MetricPoint>(cloud: &PointCloud<P>, eps: f64) -> Result<NetReport> {
    check_radius(eps)?;
    cloud.require_nonempty()?;
    let net = greedy_indices(&cloud.points, eps);
    Ok(NetReport {
        epsilon: eps,
        covering_size: net.len(),
        packing_size: greedy_indices(&cloud.points, 2.0 * eps).len(),
        net_indices: net,
    })
}

/// Size of the greedy maximal subset with pairwise distances `≥ s`.
pub fn packing_number<P: MetricPoint>(cloud: &PointCloud<P>, s: f64) -> Result<usize> {
    check_radius(s)?;
    cloud.require_nonempty()?;
    Ok(greedy_indices(&cloud.points, s).len())
}

/// Smallest ε-cover of a set of reals by centers taken from the set.
fn interval_cover(values: &[f64], eps: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut centers = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let left = values[order[i]];
        // furthest point still within ε of the leftmost uncovered one
        let mut c = i;
        while c + 1 < order.len() && values[order[c + 1]] - left < eps {
            c += 1;
        }
        let center = values[order[c]];
        centers.push(order[c]);
        i = c + 1;
        while i < order.len() && values[order[i]] - center < eps {
            i += 1;
        }
    }
    centers.sort_unstable();
    centers
}

/// ε-net used by the diagnostics: the exact minimal cover for clouds of
/// reals, the greedy net otherwise.
pub fn covering_net<P: MetricPoint>(cloud: &PointCloud<P>, eps: f64) -> Result<NetReport> {
    check_radius(eps)?;
    cloud.require_nonempty()?;
    let scalars: Option<Vec<f64>> = cloud.points.iter().map(MetricPoint::scalar_value).collect();
    match scalars {
        Some(values) => {
            let net = interval_cover(&values, eps);
            Ok(NetReport {
                epsilon: eps,
                covering_size: net.len(),
                packing_size: greedy_indices(&cloud.points, 2.0 * eps).len(),
                net_indices: net,
            })
        }
        None => greedy_net(cloud, eps),
    }
}

/// Covering nets along a list of radii, made monotone: the net reported at ε
/// is the smallest one found at any radius `≤ ε` of the ladder.
pub fn covering_ladder<P: MetricPoint>(
    cloud: &PointCloud<P>,
    radii: &[f64],
) -> Result<Vec<NetReport>> {
    let raw: Vec<NetReport> = radii
        .iter()
        .map(|&e| covering_net(cloud, e))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..radii.len()).collect();
    order.sort_by(|&a, &b| radii[a].total_cmp(&radii[b]));
    let mut out = raw.clone();
    let mut best: Option<usize> = None;
    for &i in &order {
        if best.is_none_or(|b| raw[i].covering_size <= raw[b].covering_size) {
            best = Some(i);
        }
        let b = best.expect("set above");
        out[i].net_indices = raw[b].net_indices.clone();
        out[i].covering_size = raw[b].covering_size;
    }
    Ok(out)
}

/// Largest distance from a cloud point to its nearest center.
pub fn coverage_radius<P: MetricPoint>(cloud: &PointCloud<P>, centers: &[P]) -> Result<f64> {
    cloud.require_nonempty()?;
    if centers.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(directed(&cloud.points, centers))
}

/// Errors unless every cloud point lies at distance `< eps` from a center.
pub fn verify_cover<P: MetricPoint>(cloud: &PointCloud<P>, centers: &[P], eps: f64) -> Result<f64> {
    let r = coverage_radius(cloud, centers)?;
    if r < eps {
        Ok(r)
    } else {
        Err(Error::Coverage(format!(
            "a point lies {r} from every center, radius is {eps}"
        )))
    }
}

fn directed<P: MetricPoint>(from: &[P], to: &[P]) -> f64 {
    from.par_iter()
        .map(|a| {
            to.iter()
                .map(|b| a.distance(b))
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| 0.0, f64::max)
}

/// `max{max_a min_b d(a, b), max_b min_a d(a, b)}`.
pub fn hausdorff_distance<P: MetricPoint>(k1: &PointCloud<P>, k2: &PointCloud<P>) -> Result<f64> {
    k1.require_nonempty()?;
    k2.require_nonempty()?;
    k1.points[0].compatible(&k2.points[0])?;
    Ok(directed(&k1.points, &k2.points).max(directed(&k2.points, &k1.points)))
}

/// All grid states of all trajectories, trajectory-major.
pub fn evaluation_set(trajectories: &[TrajectoryGrid]) -> Result<PointCloud<StateVector>> {
    if let Some(first) = trajectories.first() {
        for t in &trajectories[1..] {
            first.check_same_grid(t)?;
        }
    }
    PointCloud::new(
        trajectories
            .iter()
            .flat_map(|x| (0..x.len()).map(move |j| x.state_vector(j)))
            .collect(),
    )
}

/// The grid image `x([0, T])` of one trajectory.
pub fn image_cloud(x: &TrajectoryGrid) -> PointCloud<StateVector> {
    PointCloud {
        points: (0..x.len()).map(|j| x.state_vector(j)).collect(),
    }
}

/// Turns an ε/2-net of a trajectory family (sup-norm) into a verified ε-net
/// of its evaluation set: the union of ε/2-nets of the net trajectories' images.
///
/// Returned indices address `evaluation_set(trajectories)`, i.e.
/// `trajectory · (n_t + 1) + grid index`.
pub fn net_transfer(
    s_net: &NetReport,
    trajectories: &[TrajectoryGrid],
    eps: f64,
) -> Result<NetReport> {
    check_radius(eps)?;
    let cloud = PointCloud::new(trajectories.to_vec())?;
    cloud.require_nonempty()?;
    if s_net.net_indices.iter().any(|&i| i >= trajectories.len()) {
        return Err(invalid("trajectory net index out of range"));
    }
    let half = eps / 2.0;
    let reps: Vec<TrajectoryGrid> = s_net
        .net_indices
        .iter()
        .map(|&i| trajectories[i].clone())
        .collect();
    verify_cover(&cloud, &reps, half).map_err(|e| {
        Error::Coverage(format!("input is not an ε/2-net of the trajectories: {e}"))
    })?;

    let stride = trajectories[0].len();
    let mut net = Vec::new();
    for &i in &s_net.net_indices {
        let image_net = greedy_net(&image_cloud(&trajectories[i]), half)?;
        net.extend(image_net.net_indices.iter().map(|&j| i * stride + j));
    }
    let ev = evaluation_set(trajectories)?;
    let centers: Vec<StateVector> = net.iter().map(|&k| ev.points[k].clone()).collect();
    verify_cover(&ev, &centers, eps)?;
    Ok(NetReport {
        epsilon: eps,
        covering_size: net.len(),
        packing_size: packing_number(&ev, 2.0 * eps)?,
        net_indices: net,
    })
}

/// Cap on the size of iterated image clouds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageBudget {
    pub max_points: usize,
    /// Seed for uniform subsampling; `None` turns overflow into an error.
    pub subsample_seed: Option<u64>,
}

/// `W_0 = {x0}`, `W_{k+1} = {F(x, u) : x ∈ W_k, u ∈ controls}` for k < n.
pub fn iterated_images<F>(
    x0: &TrajectoryGrid,
    controls: &[Control],
    apply_f: F,
    n: usize,
    budget: ImageBudget,
) -> Result<Vec<PointCloud<TrajectoryGrid>>>
where
    F: Fn(&TrajectoryGrid, &Control) -> Result<TrajectoryGrid> + Sync,
{
    if budget.max_points == 0 {
        return Err(invalid("image budget must be >= 1"));
    }
    let mut rng = budget.subsample_seed.map(ChaCha8Rng::seed_from_u64);
    let mut clouds = vec![PointCloud::new(vec![x0.clone()])?];
    for _ in 0..n {
        let prev = clouds.last().expect("W_0 exists").points();
        let pairs: Vec<(usize, usize)> = (0..prev.len())
            .flat_map(|i| (0..controls.len()).map(move |c| (i, c)))
            .collect();
        let mut pairs = pairs;
        if pairs.len() > budget.max_points {
            match rng.as_mut() {
                Some(rng) => {
                    let mut keep = sample(rng, pairs.len(), budget.max_points).into_vec();
                    keep.sort_unstable();
                    pairs = keep.into_iter().map(|k| pairs[k]).collect();
                }
                None => {
                    return Err(Error::BudgetExceeded {
                        budget: budget.max_points,
                        size: pairs.len(),
                    })
                }
            }
        }
        let next: Vec<TrajectoryGrid> = pairs
            .par_iter()
            .map(|&(i, c)| apply_f(&prev[i], &controls[c]))
            .collect::<Result<_>>()?;
        clouds.push(PointCloud::new(next)?);
    }
    Ok(clouds)
}

/// A net of a family of compact sets in the Hausdorff metric, built from
/// subsets of a net of their union.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HausdorffNet {
    pub epsilon: f64,
    /// Each member is a set of indices into the flattened union.
    pub members: Vec<Vec<usize>>,
    /// `assignment[k]` is the member approximating family set `k`.
    pub assignment: Vec<usize>,
    /// Largest Hausdorff distance from a family set to its member.
    pub max_distance: f64,
}

/// Both directions of the family-versus-union equivalence, constructively.
///
/// The first report is an ε-net of the union (indices into the family-major
/// flattening), assembled from a Hausdorff ε/2-net of the family and ε/2-nets
/// of its representatives. The second is a Hausdorff ε-net of the family whose
/// members are the subsets `{ξ_i : dist(ξ_i, K) < ε}` of that union net.
pub fn collection_union_nets(
    family: &[PointCloud<StateVector>],
    eps: f64,
) -> Result<(NetReport, HausdorffNet)> {
    check_radius(eps)?;
    if family.is_empty() {
        return Err(Error::EmptyCloud);
    }
    for k in family {
        k.require_nonempty()?;
    }
    let mut offsets = Vec::with_capacity(family.len());
    let mut flat = Vec::new();
    for k in family {
        offsets.push(flat.len());
        flat.extend(k.points.iter().cloned());
    }
    let union = PointCloud::new(flat)?;
    let half = eps / 2.0;

    // Hausdorff ε/2-net of the family, greedy in index order.
    let mut reps: Vec<usize> = Vec::new();
    for (i, k) in family.iter().enumerate() {
        let mut covered = false;
        for &r in &reps {
            if hausdorff_distance(&family[r], k)? < half {
                covered = true;
                break;
            }
        }
        if !covered {
            reps.push(i);
        }
    }
    let mut net = Vec::new();
    for &r in &reps {
        let local = greedy_net(&family[r], half)?;
        net.extend(local.net_indices.iter().map(|&j| offsets[r] + j));
    }
    let centers: Vec<StateVector> = net.iter().map(|&i| union.points[i].clone()).collect();
    verify_cover(&union, &centers, eps)?;
    let union_net = NetReport {
        epsilon: eps,
        covering_size: net.len(),
        packing_size: packing_number(&union, 2.0 * eps)?,
        net_indices: net.clone(),
    };

    // Converse: subsets of the union net approximate every family member.
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut assignment = Vec::with_capacity(family.len());
    let mut max_distance: f64 = 0.0;
    for k in family {
        let subset: Vec<usize> = net
            .iter()
            .copied()
            .filter(|&i| {
                let c = &union.points[i];
                k.points.iter().any(|p| p.distance(c) < eps)
            })
            .collect();
        let approx = union.select(&subset);
        let d = hausdorff_distance(k, &approx)?;
        if d >= eps {
            return Err(Error::Coverage(format!(
                "Hausdorff net member is {d} from its set, radius is {eps}"
            )));
        }
        max_distance = max_distance.max(d);
        let slot = match members.iter().position(|m| *m == subset) {
            Some(s) => s,
            None => {
                members.push(subset);
                members.len() - 1
            }
        };
        assignment.push(slot);
    }
    Ok((
        union_net,
        HausdorffNet {
            epsilon: eps,
            members,
            assignment,
            max_distance,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controls::{sample_ball, spike_control};
    use crate::operator::IntegralOperator;
    use crate::spaces::{Semigroup, VectorField};
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::Rng;

    fn reals(v: &[f64]) -> PointCloud<StateVector> {
        PointCloud::new(
            v.iter()
                .map(|&x| StateVector::new(vec![x], NormKind::L2).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn plane(pts: &[(f64, f64)]) -> PointCloud<StateVector> {
        PointCloud::new(
            pts.iter()
                .map(|&(a, b)| StateVector::new(vec![a, b], NormKind::L2).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn grid01(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    fn net_points<P: MetricPoint>(cloud: &PointCloud<P>, r: &NetReport) -> Vec<P> {
        r.net_indices
            .iter()
            .map(|&i| cloud.points()[i].clone())
            .collect()
    }

    #[test]
    fn greedy_examples() {
        let c = reals(&grid01(101));
        let r = greedy_net(&c, 0.25).unwrap();
        assert!(r.covering_size <= 5);
        verify_cover(&c, &net_points(&c, &r), 0.25).unwrap();
        assert_eq!(greedy_net(&reals(&[0.3]), 0.01).unwrap().covering_size, 1);
        assert_eq!(greedy_net(&c, 1.5).unwrap().covering_size, 1);
        assert!(matches!(
            greedy_net(&reals(&[]), 0.1),
            Err(Error::EmptyCloud)
        ));
        assert!(greedy_net(&c, 0.0).is_err());
    }

    #[test]
    fn interval_cover_is_minimal() {
        let c = reals(&grid01(101));
        assert_eq!(covering_net(&c, 0.25).unwrap().covering_size, 3);
        let c = reals(&grid01(1025));
        let r = covering_net(&c, 0.25).unwrap();
        assert!(r.covering_size <= 3);
        verify_cover(&c, &net_points(&c, &r), 0.25).unwrap();
        // brute force on small random sets: no cover by fewer cloud points exists
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let v: Vec<f64> = (0..9).map(|_| rng.random_range(0.0..1.0)).collect();
            let c = reals(&v);
            let eps = rng.random_range(0.05..0.4);
            let r = covering_net(&c, eps).unwrap();
            verify_cover(&c, &net_points(&c, &r), eps).unwrap();
            for mask in 1u32..(1 << 9) {
                if (mask.count_ones() as usize) < r.covering_size {
                    let centers: Vec<StateVector> = (0..9)
                        .filter(|i| mask & (1 << i) != 0)
                        .map(|i| c.points()[i].clone())
                        .collect();
                    assert!(verify_cover(&c, &centers, eps).is_err());
                }
            }
        }
    }

    #[test]
    fn ladder_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<(f64, f64)> = (0..300)
            .map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)))
            .collect();
        let c = plane(&pts);
        let radii = [0.4, 0.3, 0.2, 0.15, 0.1, 0.05];
        let ladder = covering_ladder(&c, &radii).unwrap();
        for w in ladder.windows(2) {
            assert!(w[0].covering_size <= w[1].covering_size);
        }
        for r in &ladder {
            verify_cover(&c, &net_points(&c, r), r.epsilon).unwrap();
            assert!(r.packing_size <= r.covering_size);
        }
    }

    #[test]
    fn packing_examples() {
        let c = reals(&[0.0, 1.0]);
        assert_eq!(packing_number(&c, 0.5).unwrap(), 2);
        assert_eq!(packing_number(&c, 1.5).unwrap(), 1);
    }

    #[test]
    fn hausdorff_examples() {
        let a = reals(&[0.0, 0.5, 1.0]);
        assert_eq!(hausdorff_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(
            hausdorff_distance(&reals(&[0.0]), &reals(&[3.0])).unwrap(),
            3.0
        );
        assert_eq!(
            hausdorff_distance(&reals(&[0.0, 1.0]), &reals(&[0.0])).unwrap(),
            1.0
        );
        assert!(hausdorff_distance(&reals(&[]), &a).is_err());
    }

    #[test]
    fn evaluation_and_image_examples() {
        let xi = StateVector::new(vec![0.4, 1.0], NormKind::L2).unwrap();
        let x = TrajectoryGrid::constant(1.0, 10, &xi).unwrap();
        let ev = evaluation_set(std::slice::from_ref(&x)).unwrap();
        assert_eq!(ev.len(), 11);
        assert!(ev.points().iter().all(|p| *p == xi));
        assert_eq!(greedy_net(&image_cloud(&x), 0.1).unwrap().covering_size, 1);

        let up = TrajectoryGrid::from_fn(1.0, 100, 1, NormKind::L2, |t| vec![t]).unwrap();
        let down = TrajectoryGrid::from_fn(1.0, 100, 1, NormKind::L2, |t| vec![1.0 - t]).unwrap();
        let ev = evaluation_set(&[up.clone(), down]).unwrap();
        assert!(greedy_net(&ev, 0.55).unwrap().covering_size <= 2);
        assert_eq!(
            hausdorff_distance(&image_cloud(&up), &reals(&grid01(101))).unwrap(),
            0.0
        );
        assert!(evaluation_set(&[]).unwrap().is_empty());
    }

    fn random_traj(rng: &mut ChaCha8Rng, n_t: usize, dim: usize) -> TrajectoryGrid {
        let data = (0..(n_t + 1) * dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        TrajectoryGrid::from_raw(1.0, n_t, dim, NormKind::L2, data).unwrap()
    }

    #[test]
    fn image_map_is_one_lipschitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = random_traj(&mut rng, 30, 3);
            let y = random_traj(&mut rng, 30, 3);
            let dh = hausdorff_distance(&image_cloud(&x), &image_cloud(&y)).unwrap();
            assert!(dh <= sup_norm(&x, &y).unwrap());
        }
    }

    #[test]
    fn transfer_examples() {
        let base = TrajectoryGrid::from_fn(1.0, 200, 2, NormKind::L2, |t| {
            vec![(3.0 * t).cos(), (3.0 * t).sin()]
        })
        .unwrap();
        let single = PointCloud::new(vec![base.clone()]).unwrap();
        let s_net = greedy_net(&single, 0.25).unwrap();
        let t = net_transfer(&s_net, std::slice::from_ref(&base), 0.5).unwrap();
        assert_eq!(
            t.net_indices,
            greedy_net(&image_cloud(&base), 0.25).unwrap().net_indices
        );

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let family: Vec<TrajectoryGrid> = (0..10)
            .map(|_| {
                let shift = [rng.random_range(-0.07..0.07), rng.random_range(-0.07..0.07)];
                TrajectoryGrid::from_fn(1.0, 200, 2, NormKind::L2, |s| {
                    let b = [(3.0 * s).cos(), (3.0 * s).sin()];
                    vec![b[0] + shift[0], b[1] + shift[1]]
                })
                .unwrap()
            })
            .collect();
        let s_net = greedy_net(&PointCloud::new(family.clone()).unwrap(), 0.25).unwrap();
        assert_eq!(s_net.covering_size, 1);
        let t = net_transfer(&s_net, &family, 0.5).unwrap();
        assert_eq!(
            t.covering_size,
            greedy_net(&image_cloud(&family[0]), 0.25)
                .unwrap()
                .covering_size
        );

        // a net at the wrong radius is rejected
        let coarse = greedy_net(&PointCloud::new(family.clone()).unwrap(), 10.0).unwrap();
        assert!(net_transfer(&coarse, &family, 0.1).is_err());
    }

    #[test]
    fn iterated_image_examples() {
        let sg = Semigroup::identity(1).unwrap();
        let xi0 = StateVector::new(vec![1.0], NormKind::L2).unwrap();
        let x0 = TrajectoryGrid::constant(1.0, 50, &xi0).unwrap();
        let us = sample_ball(2.0, 1.0, 1.0, 1, 50, 3, 1).unwrap();
        let budget = ImageBudget {
            max_points: 100,
            subsample_seed: None,
        };

        let cst = IntegralOperator::new(
            &sg,
            &[VectorField::constant(vec![1.0], NormKind::L2).unwrap()],
            &xi0,
            1.0,
            50,
        )
        .unwrap();
        let w0 = iterated_images(&x0, &us, |x, u| cst.apply(x, u), 0, budget).unwrap();
        assert_eq!(w0.len(), 1);
        assert_eq!(w0[0].points(), std::slice::from_ref(&x0));
        let w = iterated_images(&x0, &us, |x, u| cst.apply(x, u), 2, budget).unwrap();
        assert!(hausdorff_distance(&w[1], &w[2]).unwrap() < 1e-12);

        let lin = IntegralOperator::new(
            &sg,
            &[VectorField::bilinear(DMatrix::identity(1, 1), NormKind::L2).unwrap()],
            &xi0,
            1.0,
            50,
        )
        .unwrap();
        let w = iterated_images(&x0, &us, |x, u| lin.apply(x, u), 2, budget).unwrap();
        assert!(w[2].len() <= 9);

        let tight = ImageBudget {
            max_points: 5,
            subsample_seed: None,
        };
        assert!(matches!(
            iterated_images(&x0, &us, |x, u| lin.apply(x, u), 2, tight),
            Err(Error::BudgetExceeded { .. })
        ));
        let seeded = ImageBudget {
            max_points: 5,
            subsample_seed: Some(7),
        };
        let a = iterated_images(&x0, &us, |x, u| lin.apply(x, u), 3, seeded).unwrap();
        let b = iterated_images(&x0, &us, |x, u| lin.apply(x, u), 3, seeded).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|w| w.len() <= 5));
    }

    #[test]
    fn spike_family_packing() {
        let sg = Semigroup::identity(1).unwrap();
        let xi0 = StateVector::new(vec![0.0], NormKind::L2).unwrap();
        let op = IntegralOperator::new(
            &sg,
            &[VectorField::constant(vec![1.0], NormKind::L2).unwrap()],
            &xi0,
            1.0,
            64,
        )
        .unwrap();
        let x0 = TrajectoryGrid::constant(1.0, 64, &xi0).unwrap();
        let trajs: Vec<TrajectoryGrid> = (0..6)
            .map(|k| op.apply(&x0, &spike_control(1 << k, 64).unwrap()).unwrap())
            .collect();
        assert_eq!(
            packing_number(&PointCloud::new(trajs).unwrap(), 0.5).unwrap(),
            6
        );
    }

    #[test]
    fn union_net_examples() {
        let single = vec![reals(&grid01(41))];
        let (u, h) = collection_union_nets(&single, 0.2).unwrap();
        assert_eq!(
            u.net_indices,
            greedy_net(&single[0], 0.1).unwrap().net_indices
        );
        assert_eq!(h.members.len(), 1);

        let pair = vec![reals(&[0.0]), reals(&[1.0])];
        let (u, h) = collection_union_nets(&pair, 0.6).unwrap();
        assert!(u.covering_size <= 2);
        assert!(h.max_distance < 0.6);
        assert_eq!(h.assignment.len(), 2);
        assert!(collection_union_nets(&[], 0.5).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn greedy_net_covers_and_separates(seed in any::<u64>(), eps in 0.02f64..0.6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<(f64, f64)> = (0..80).map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))).collect();
            let c = plane(&pts);
            let r = greedy_net(&c, eps).unwrap();
            let net = net_points(&c, &r);
            prop_assert!(verify_cover(&c, &net, eps).is_ok());
            for (i, a) in net.iter().enumerate() {
                for b in &net[i + 1..] {
                    prop_assert!(a.distance(b) >= eps);
                }
            }
            prop_assert!(r.packing_size <= r.covering_size);
        }

        #[test]
        fn hausdorff_symmetric_and_triangle(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut cloud = || {
                let k = rng.random_range(1..12);
                let pts: Vec<(f64, f64)> = (0..k).map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
                plane(&pts)
            };
            let (a, b, c) = (cloud(), cloud(), cloud());
            let ab = hausdorff_distance(&a, &b).unwrap();
            prop_assert_eq!(ab, hausdorff_distance(&b, &a).unwrap());
            let ac = hausdorff_distance(&a, &c).unwrap();
            let bc = hausdorff_distance(&b, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn union_nets_verify(seed in any::<u64>(), eps in 0.05f64..0.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let fam: Vec<PointCloud<StateVector>> = (0..5)
                .map(|_| {
                    let k = rng.random_range(1..15);
                    let pts: Vec<(f64, f64)> = (0..k).map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))).collect();
                    plane(&pts)
                })
                .collect();
            let (u, h) = collection_union_nets(&fam, eps).unwrap();
            let flat = PointCloud::new(fam.iter().flat_map(|k| k.points().to_vec()).collect()).unwrap();
            prop_assert!(verify_cover(&flat, &net_points(&flat, &u), eps).is_ok());
            for (k, &m) in fam.iter().zip(&h.assignment) {
                let member = flat.select(&h.members[m]);
                prop_assert!(hausdorff_distance(k, &member).unwrap() < eps);
            }
        }
    }
}
