//! Convex capacity regions of feasible service-rate vectors.
//!
//! A region is stored in halfspace form: `normal · c − offset ≤ 0` for each
//! facet, intersected with the nonnegative orthant. One designated facet is
//! the sum-capacity facet with an all-ones normal. Regions are immutable
//! after construction and freely shareable.

use crate::error::{Error, Result};
use rand::Rng;

/// Absolute tolerance for membership queries, well below the rate
/// magnitudes (10²–10³) used in the bundled experiments.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl Halfspace {
    pub fn new(normal: Vec<f64>, offset: f64) -> Self {
        Self { normal, offset }
    }

    fn slack(&self, c: &[f64]) -> f64 {
        let dot: f64 = self.normal.iter().zip(c).map(|(n, x)| n * x).sum();
        dot - self.offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityRegion {
    dimension: usize,
    halfspaces: Vec<Halfspace>,
    sum_capacity_index: usize,
}

impl CapacityRegion {
    pub fn new(
        dimension: usize,
        halfspaces: Vec<Halfspace>,
        sum_capacity_index: usize,
    ) -> Result<Self> {
        if halfspaces.is_empty() {
            return Err(Error::Validation("a region needs at least one facet".into()));
        }
        for (k, h) in halfspaces.iter().enumerate() {
            if h.normal.len() != dimension {
                return Err(Error::Dimension {
                    expected: dimension,
                    got: h.normal.len(),
                });
            }
            if !h.offset.is_finite() || h.offset < 0.0 {
                return Err(Error::Validation(format!(
                    "facet {k} offset {} excludes the origin",
                    h.offset
                )));
            }
        }
        let sum = halfspaces.get(sum_capacity_index).ok_or_else(|| {
            Error::Validation(format!("sum-capacity index {sum_capacity_index} out of bounds"))
        })?;
        if sum.normal.iter().any(|n| *n != 1.0) {
            return Err(Error::Validation(
                "sum-capacity facet must have an all-ones normal".into(),
            ));
        }
        Ok(Self {
            dimension,
            halfspaces,
            sum_capacity_index,
        })
    }

    /// Per-user caps plus an all-ones sum-capacity facet.
    pub fn from_caps(caps: &[f64], sum_capacity: f64) -> Result<Self> {
        let dim = caps.len();
        let mut hs = Vec::with_capacity(dim + 1);
        for (j, cap) in caps.iter().enumerate() {
            let mut normal = vec![0.0; dim];
            normal[j] = 1.0;
            hs.push(Halfspace::new(normal, *cap));
        }
        hs.push(Halfspace::new(vec![1.0; dim], sum_capacity));
        Self::new(dim, hs, dim)
    }

    /// Per-user caps, all pairwise sum caps, and an all-ones sum facet.
    /// This is the three-user geometry where any served pair shares
    /// `pair_capacity`.
    pub fn with_pairwise_caps(
        caps: &[f64],
        pair_capacity: f64,
        sum_capacity: f64,
    ) -> Result<Self> {
        let dim = caps.len();
        let mut hs = Vec::new();
        for (j, cap) in caps.iter().enumerate() {
            let mut normal = vec![0.0; dim];
            normal[j] = 1.0;
            hs.push(Halfspace::new(normal, *cap));
        }
        for a in 0..dim {
            for b in (a + 1)..dim {
                let mut normal = vec![0.0; dim];
                normal[a] = 1.0;
                normal[b] = 1.0;
                hs.push(Halfspace::new(normal, pair_capacity));
            }
        }
        hs.push(Halfspace::new(vec![1.0; dim], sum_capacity));
        let idx = hs.len() - 1;
        Self::new(dim, hs, idx)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn halfspaces(&self) -> &[Halfspace] {
        &self.halfspaces
    }

    pub fn sum_capacity_index(&self) -> usize {
        self.sum_capacity_index
    }

    /// Offset of the all-ones facet.
    pub fn sum_capacity(&self) -> f64 {
        self.halfspaces[self.sum_capacity_index].offset
    }

    /// Membership: `c ≥ 0` componentwise and every facet constraint holds,
    /// all within [`MEMBERSHIP_TOL`].
    pub fn contains(&self, c: &[f64]) -> Result<bool> {
        if c.len() != self.dimension {
            return Err(Error::Dimension {
                expected: self.dimension,
                got: c.len(),
            });
        }
        if c.iter().any(|x| *x < -MEMBERSHIP_TOL) {
            return Ok(false);
        }
        Ok(self
            .halfspaces
            .iter()
            .all(|h| h.slack(c) <= MEMBERSHIP_TOL))
    }

    /// Intersection with `{c : c_j = 0, j ∈ zero_set}`, expressed over the
    /// remaining coordinates. `zero_set` holds 0-based user indices; zeroing
    /// every user yields the 0-dimensional region `{0}`.
    pub fn face_restrict(&self, zero_set: &[usize]) -> Result<CapacityRegion> {
        let mut zeroed = vec![false; self.dimension];
        for &j in zero_set {
            if j >= self.dimension {
                return Err(Error::Range(format!(
                    "user index {j} outside 0..{}",
                    self.dimension
                )));
            }
            zeroed[j] = true;
        }
        let keep: Vec<usize> = (0..self.dimension).filter(|j| !zeroed[*j]).collect();
        let halfspaces = self
            .halfspaces
            .iter()
            .map(|h| {
                Halfspace::new(keep.iter().map(|&j| h.normal[j]).collect(), h.offset)
            })
            .collect();
        CapacityRegion::new(keep.len(), halfspaces, self.sum_capacity_index)
    }

    /// Largest `t ≥ 0` with `t·d` inside the region, for `d ≥ 0`, `d ≠ 0`.
    pub fn max_along_ray(&self, direction: &[f64]) -> Result<f64> {
        if direction.len() != self.dimension {
            return Err(Error::Dimension {
                expected: self.dimension,
                got: direction.len(),
            });
        }
        if direction.iter().any(|d| *d < 0.0) || direction.iter().all(|d| *d == 0.0) {
            return Err(Error::Domain(
                "ray direction must be nonnegative and nonzero".into(),
            ));
        }
        let mut t = f64::INFINITY;
        for h in &self.halfspaces {
            let s: f64 = h.normal.iter().zip(direction).map(|(n, d)| n * d).sum();
            if s > 0.0 {
                t = t.min(h.offset / s);
            }
        }
        if !t.is_finite() {
            return Err(Error::Infeasible("region unbounded along the ray".into()));
        }
        Ok(t)
    }

    /// Largest feasible value of coordinate `j` with the other coordinates of
    /// `c` held fixed.
    pub fn max_coordinate_given(&self, j: usize, c: &[f64]) -> Result<f64> {
        if c.len() != self.dimension || j >= self.dimension {
            return Err(Error::Dimension {
                expected: self.dimension,
                got: c.len(),
            });
        }
        let mut best = f64::INFINITY;
        for h in &self.halfspaces {
            if h.normal[j] > 0.0 {
                let rest: f64 = h
                    .normal
                    .iter()
                    .zip(c)
                    .enumerate()
                    .filter(|(l, _)| *l != j)
                    .map(|(_, (n, x))| n * x)
                    .sum();
                best = best.min((h.offset - rest) / h.normal[j]);
            }
        }
        if !best.is_finite() {
            return Err(Error::Infeasible(format!(
                "coordinate {j} unbounded in the region"
            )));
        }
        Ok(best.max(0.0))
    }

    /// Pushes a feasible point outward to a (strictly) Pareto-maximal
    /// boundary point by round-robin coordinate saturation.
    fn saturate(&self, c: &mut [f64]) {
        loop {
            let mut gain = 0.0;
            for j in 0..self.dimension {
                let top = self
                    .max_coordinate_given(j, c)
                    .expect("bounded region");
                if top > c[j] {
                    gain += top - c[j];
                    c[j] = top;
                }
            }
            if gain <= 1e-12 {
                break;
            }
        }
    }

    /// Samples a Pareto-maximal boundary point: shoot a ray in a random
    /// strictly positive direction, then saturate.
    pub fn sample_pareto_point<R: Rng>(&self, rng: &mut R) -> Result<Vec<f64>> {
        if self.dimension == 0 {
            return Ok(Vec::new());
        }
        let direction: Vec<f64> = (0..self.dimension)
            .map(|_| 1e-6 + rng.random::<f64>())
            .collect();
        let t = self.max_along_ray(&direction)?;
        let mut c: Vec<f64> = direction.iter().map(|d| t * d).collect();
        self.saturate(&mut c);
        Ok(c)
    }

    /// Sampled check of the boundary-allocation comparison between the full
    /// region and the face with `zero_set` idle: Pareto-maximal points
    /// satisfy `Σ_j c^∅_j ≥ Σ_j c^F_j` and `Σ_{j∉zero} c^∅_j ≤ Σ_{j∉zero} c^F_j`.
    pub fn validate_boundary_property<R: Rng>(
        &self,
        zero_set: &[usize],
        samples: usize,
        rng: &mut R,
    ) -> Result<BoundaryCheck> {
        if zero_set.is_empty() || zero_set.len() >= self.dimension {
            return Err(Error::Validation(
                "zero set must be a nonempty proper subset of the users".into(),
            ));
        }
        let face = self.face_restrict(zero_set)?;
        let mut zeroed = vec![false; self.dimension];
        for &j in zero_set {
            zeroed[j] = true;
        }
        let keep: Vec<usize> = (0..self.dimension).filter(|j| !zeroed[*j]).collect();
        for _ in 0..samples {
            let full = self.sample_pareto_point(rng)?;
            let restricted = face.sample_pareto_point(rng)?;
            let mut embedded = vec![0.0; self.dimension];
            for (slot, &j) in keep.iter().enumerate() {
                embedded[j] = restricted[slot];
            }
            let total_full: f64 = full.iter().sum();
            let total_face: f64 = embedded.iter().sum();
            let surviving_full: f64 = keep.iter().map(|&j| full[j]).sum();
            let surviving_face: f64 = keep.iter().map(|&j| embedded[j]).sum();
            if total_full < total_face - MEMBERSHIP_TOL
                || surviving_full > surviving_face + MEMBERSHIP_TOL
            {
                return Ok(BoundaryCheck {
                    holds: false,
                    samples_checked: samples,
                    counterexample: Some((full, embedded)),
                });
            }
        }
        Ok(BoundaryCheck {
            holds: true,
            samples_checked: samples,
            counterexample: None,
        })
    }
}

/// Outcome of [`CapacityRegion::validate_boundary_property`].
#[derive(Debug, Clone)]
pub struct BoundaryCheck {
    pub holds: bool,
    pub samples_checked: usize,
    /// `(full-region point, face point embedded with zeros)` on violation.
    pub counterexample: Option<(Vec<f64>, Vec<f64>)>,
}

/// Which pools may serve which users and vice versa.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolUserMap {
    pools_of_user: Vec<Vec<usize>>,
    users_of_pool: Vec<Vec<usize>>,
}

impl PoolUserMap {
    pub fn new(pools_of_user: Vec<Vec<usize>>, users_of_pool: Vec<Vec<usize>>) -> Result<Self> {
        for (j, pools) in pools_of_user.iter().enumerate() {
            for &v in pools {
                if users_of_pool.get(v).map(|u| u.contains(&j)) != Some(true) {
                    return Err(Error::Validation(format!(
                        "user {j} lists pool {v} but pool {v} does not list user {j}"
                    )));
                }
            }
        }
        for (v, users) in users_of_pool.iter().enumerate() {
            for &j in users {
                if pools_of_user.get(j).map(|p| p.contains(&v)) != Some(true) {
                    return Err(Error::Validation(format!(
                        "pool {v} lists user {j} but user {j} does not list pool {v}"
                    )));
                }
            }
        }
        Ok(Self {
            pools_of_user,
            users_of_pool,
        })
    }

    /// Every user served by the single pool 0.
    pub fn single_pool(num_users: usize) -> Self {
        Self {
            pools_of_user: vec![vec![0]; num_users],
            users_of_pool: vec![(0..num_users).collect()],
        }
    }

    pub fn pools_of_user(&self, j: usize) -> &[usize] {
        &self.pools_of_user[j]
    }

    pub fn users_of_pool(&self, v: usize) -> &[usize] {
        &self.users_of_pool[v]
    }
}

/// One capacity region per environment state, plus the pool/user incidence.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFamily {
    regions: Vec<CapacityRegion>,
    map: PoolUserMap,
}

impl RegionFamily {
    pub fn new(regions: Vec<CapacityRegion>, map: PoolUserMap) -> Result<Self> {
        if regions.is_empty() {
            return Err(Error::Validation("at least one region required".into()));
        }
        let dim = regions[0].dimension();
        if regions.iter().any(|r| r.dimension() != dim) {
            return Err(Error::Validation(
                "all per-state regions of a pool must share a dimension".into(),
            ));
        }
        Ok(Self { regions, map })
    }

    /// Region for environment state `i` (1-based).
    pub fn region(&self, state: usize) -> &CapacityRegion {
        &self.regions[state - 1]
    }

    pub fn num_states(&self) -> usize {
        self.regions.len()
    }

    pub fn map(&self) -> &PoolUserMap {
        &self.map
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    /// Two-user region from the bundled experiments: per-user caps of 1500
    /// and a sum capacity of 2000.
    fn example_region() -> CapacityRegion {
        CapacityRegion::from_caps(&[1500.0, 1500.0], 2000.0).unwrap()
    }

    #[test]
    fn membership_examples() {
        let region = example_region();
        let c = [1000.0, 1000.0];
        assert!(region.contains(&c).unwrap());
        // Lies exactly on the sum facet.
        let slack = region.halfspaces()[region.sum_capacity_index()].slack(&c);
        assert!(slack.abs() <= MEMBERSHIP_TOL);
        assert!(region.contains(&[0.0, 0.0]).unwrap());
        assert!(!region.contains(&[1600.0, 100.0]).unwrap());
        assert!(!region.contains(&[-1.0, 0.0]).unwrap());
        assert!(region.contains(&[1.0]).is_err());
    }

    #[test]
    fn sum_facet_active_at_nominal_throughput() {
        let region = example_region();
        let rho = [1000.0, 1000.0];
        assert_eq!(rho.iter().sum::<f64>(), region.sum_capacity());
    }

    #[test]
    fn face_restrict_examples() {
        let region = example_region();
        let unchanged = region.face_restrict(&[]).unwrap();
        assert_eq!(unchanged, region);

        let interval = region.face_restrict(&[1]).unwrap();
        assert_eq!(interval.dimension(), 1);
        assert!(interval.contains(&[1500.0]).unwrap());
        assert!(!interval.contains(&[1500.0 + 1e-6]).unwrap());
        assert!(interval.contains(&[0.0]).unwrap());

        let point = region.face_restrict(&[0, 1]).unwrap();
        assert_eq!(point.dimension(), 0);
        assert!(point.contains(&[]).unwrap());
    }

    #[test]
    fn boundary_property_on_example_region() {
        let region = example_region();
        // Hand values: full-region point (1000, 1000), face point (1500, 0).
        let full = [1000.0f64, 1000.0];
        let face = [1500.0f64, 0.0];
        assert!(full.iter().sum::<f64>() >= face.iter().sum::<f64>());
        assert!(full[0] <= face[0]);
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let check = region
            .validate_boundary_property(&[1], 1000, &mut rng)
            .unwrap();
        assert!(check.holds, "counterexample: {:?}", check.counterexample);
    }

    #[test]
    fn boundary_property_rejects_degenerate_zero_sets() {
        let region = example_region();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        assert!(region
            .validate_boundary_property(&[], 10, &mut rng)
            .is_err());
        assert!(region
            .validate_boundary_property(&[0, 1], 10, &mut rng)
            .is_err());
    }

    #[test]
    fn three_user_pairwise_region() {
        let region = CapacityRegion::with_pairwise_caps(&[1500.0; 3], 2000.0, 3000.0).unwrap();
        assert!(region.contains(&[1000.0, 1000.0, 1000.0]).unwrap());
        assert!(!region.contains(&[1500.0, 600.0, 0.0]).unwrap());
        // Any served pair with the third idle lives on the 2000 pair facet.
        let face = region.face_restrict(&[2]).unwrap();
        assert!(face.contains(&[1000.0, 1000.0]).unwrap());
        assert!(!face.contains(&[1100.0, 1000.0]).unwrap());
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for zero in [&[0usize][..], &[1], &[2], &[0, 1]] {
            let check = region
                .validate_boundary_property(zero, 400, &mut rng)
                .unwrap();
            assert!(check.holds, "zero set {zero:?}: {:?}", check.counterexample);
        }
    }

    #[test]
    fn convexity_via_random_midpoints() {
        let region = example_region();
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let mut members = Vec::new();
        while members.len() < 2000 {
            let c = [rng.random::<f64>() * 1600.0, rng.random::<f64>() * 1600.0];
            if region.contains(&c).unwrap() {
                members.push(c);
            }
        }
        for pair in members.chunks(2).take(1000) {
            let mid = [
                0.5 * (pair[0][0] + pair[1][0]),
                0.5 * (pair[0][1] + pair[1][1]),
            ];
            assert!(region.contains(&mid).unwrap());
        }
    }

    #[test]
    fn pool_user_map_consistency() {
        assert!(PoolUserMap::new(vec![vec![0]], vec![vec![0]]).is_ok());
        assert!(PoolUserMap::new(vec![vec![0]], vec![vec![]]).is_err());
        let map = PoolUserMap::single_pool(3);
        assert_eq!(map.users_of_pool(0), &[0, 1, 2]);
        assert_eq!(map.pools_of_user(2), &[0]);
    }

    #[test]
    fn region_family_requires_shared_dimension() {
        let a = example_region();
        let b = CapacityRegion::from_caps(&[10.0], 10.0).unwrap();
        assert!(RegionFamily::new(vec![a.clone(), b], PoolUserMap::single_pool(2)).is_err());
        let fam = RegionFamily::new(vec![a.clone(), a], PoolUserMap::single_pool(2)).unwrap();
        assert_eq!(fam.num_states(), 2);
        assert_eq!(fam.region(2).dimension(), 2);
    }

    proptest! {
        /// Membership of a face point equals membership of the embedded
        /// full-dimension point with zeros inserted.
        #[test]
        fn face_restrict_consistent_with_contains(
            x in 0.0f64..1700.0,
            y in 0.0f64..1700.0,
            z in 0.0f64..1700.0,
            zero_idx in 0usize..3,
        ) {
            let region =
                CapacityRegion::with_pairwise_caps(&[1500.0; 3], 2000.0, 3000.0).unwrap();
            let face = region.face_restrict(&[zero_idx]).unwrap();
            let coords = [x, y, z];
            let kept: Vec<f64> = (0..3).filter(|j| *j != zero_idx).map(|j| coords[j]).collect();
            let mut embedded = vec![0.0; 3];
            let mut slot = 0;
            for j in 0..3 {
                if j != zero_idx {
                    embedded[j] = kept[slot];
                    slot += 1;
                }
            }
            prop_assert_eq!(
                face.contains(&kept).unwrap(),
                region.contains(&embedded).unwrap()
            );
        }
    }
}
