//! The feasible mixture polytope and uniform sampling over it.
//!
//! Equality constraints (fixed ingredients, `lo == hi` linear constraints) are
//! eliminated up front so sampling happens in a full-dimensional coordinate
//! space `z`; a mixture is recovered as `x = offset + basis · z`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::campaign::{Constraints, LinearConstraint};
use crate::error::{Error, Result};
use crate::strength::{IngredientId, Mixture, NUM_INGREDIENTS};

const EQ_TOL: f64 = 1e-12;
const FEAS_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
struct Halfspace {
    normal: Vec<f64>,
    bound: f64,
    label: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerKind {
    Rejection,
    HitAndRun,
}

const SNAP_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct FeasibleRegion {
    constraints: Constraints,
    offset: [f64; NUM_INGREDIENTS],
    /// Row i: coefficients of ingredient i on the free coordinates.
    rows: [Vec<f64>; NUM_INGREDIENTS],
    /// Ingredient each free coordinate stands for.
    free_vars: Vec<usize>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    halfspaces: Vec<Halfspace>,
    interior: Vec<f64>,
    sampler: SamplerKind,
}

impl FeasibleRegion {
    /// Builds the region and proves it non-empty, or returns a certificate
    /// naming the violated constraint.
    pub fn new(constraints: &Constraints) -> Result<Self> {
        constraints.validate()?;
        let bounds = constraints.effective_bounds();
        let mut offset = [0.0; NUM_INGREDIENTS];
        let mut free_vars = Vec::new();
        for (i, b) in bounds.iter().enumerate() {
            if b.hi - b.lo > EQ_TOL * b.hi.abs().max(1.0) {
                free_vars.push(i);
            } else {
                offset[i] = b.lo;
            }
        }
        let k = free_vars.len();
        let mut rows: [Vec<f64>; NUM_INGREDIENTS] = std::array::from_fn(|_| vec![0.0; k]);
        for (col, &i) in free_vars.iter().enumerate() {
            rows[i][col] = 1.0;
        }
        let mut pivots: Vec<usize> = Vec::new();

        let linear = merge_parallel(&constraints.linear)?;
        // eliminate equality constraints
        for c in &linear {
            let (Some(lo), Some(hi)) = (c.lo, c.hi) else { continue };
            if hi - lo > EQ_TOL * hi.abs().max(1.0) {
                continue;
            }
            let a = c.coefficient_vector();
            let ncols = free_vars.len();
            let g: Vec<f64> = (0..ncols)
                .map(|l| (0..NUM_INGREDIENTS).map(|i| a[i] * rows[i][l]).sum())
                .collect();
            let s: f64 = (0..NUM_INGREDIENTS).map(|i| a[i] * offset[i]).sum();
            let scale = a.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
            let pivot = (0..ncols).max_by(|&x, &y| g[x].abs().total_cmp(&g[y].abs()));
            match pivot {
                Some(j) if g[j].abs() > 1e-12 * scale => {
                    let shift = (lo - s) / g[j];
                    for i in 0..NUM_INGREDIENTS {
                        let aij = rows[i][j];
                        if aij == 0.0 {
                            continue;
                        }
                        offset[i] += aij * shift;
                        for l in 0..ncols {
                            if l != j {
                                rows[i][l] -= aij * g[l] / g[j];
                            }
                        }
                    }
                    for row in rows.iter_mut() {
                        row.remove(j);
                    }
                    pivots.push(free_vars.remove(j));
                }
                _ => {
                    if (s - lo).abs() > 1e-9 * scale.max(s.abs()).max(1.0) {
                        return Err(Error::Infeasible {
                            certificate: format!("equality cannot hold: {}", c.describe()),
                        });
                    }
                }
            }
        }

        let lower: Vec<f64> = free_vars.iter().map(|&i| bounds[i].lo).collect();
        let upper: Vec<f64> = free_vars.iter().map(|&i| bounds[i].hi).collect();
        let mut halfspaces = Vec::new();
        let mut push_range = |normal: Vec<f64>, base: f64, lo: Option<f64>, hi: Option<f64>, label: String| {
            if let Some(hi) = hi {
                halfspaces.push(Halfspace {
                    normal: normal.clone(),
                    bound: hi - base,
                    label: format!("{label} (upper)"),
                });
            }
            if let Some(lo) = lo {
                halfspaces.push(Halfspace {
                    normal: normal.iter().map(|v| -v).collect(),
                    bound: base - lo,
                    label: format!("{label} (lower)"),
                });
            }
        };
        for &i in &pivots {
            push_range(
                rows[i].clone(),
                offset[i],
                Some(bounds[i].lo),
                Some(bounds[i].hi),
                format!("bound on {}", IngredientId::ALL[i]),
            );
        }
        for c in &linear {
            if let (Some(lo), Some(hi)) = (c.lo, c.hi) {
                if hi - lo <= EQ_TOL * hi.abs().max(1.0) {
                    continue;
                }
            }
            let a = c.coefficient_vector();
            let normal: Vec<f64> = (0..free_vars.len())
                .map(|l| (0..NUM_INGREDIENTS).map(|i| a[i] * rows[i][l]).sum())
                .collect();
            let base: f64 = (0..NUM_INGREDIENTS).map(|i| a[i] * offset[i]).sum();
            push_range(normal, base, c.lo, c.hi, c.describe());
        }

        let mut region = Self {
            constraints: constraints.clone(),
            offset,
            rows,
            free_vars,
            lower,
            upper,
            halfspaces,
            interior: Vec::new(),
            sampler: SamplerKind::Rejection,
        };
        region.locate_interior()?;
        Ok(region)
    }

    pub fn constraints(&self) -> &Constraints {
        &self.constraints
    }

    /// Number of free coordinates.
    pub fn dim(&self) -> usize {
        self.free_vars.len()
    }

    pub fn sampler_kind(&self) -> SamplerKind {
        self.sampler
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// True when the region is a single point.
    pub fn is_point(&self) -> bool {
        self.free_vars.is_empty() || self.lower.iter().zip(&self.upper).all(|(l, u)| u - l <= EQ_TOL)
    }

    fn halfspace_violation(&self, z: &[f64]) -> (f64, Option<usize>) {
        let mut worst = (0.0, None);
        for (h, hs) in self.halfspaces.iter().enumerate() {
            let v = dot(&hs.normal, z) - hs.bound;
            if v > worst.0 {
                worst = (v, Some(h));
            }
        }
        worst
    }

    pub fn contains(&self, z: &[f64], tol: f64) -> bool {
        z.len() == self.dim()
            && z.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol)
            && self.halfspace_violation(z).0 <= tol
    }

    /// Finds a feasible point (alternating projections onto the halfspaces
    /// and the box), then decides which sampler to use.
    fn locate_interior(&mut self) -> Result<()> {
        let k = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut accepted = 0usize;
        let trials = if k == 0 { 1 } else { 2000 };
        let mut first_ok: Option<Vec<f64>> = None;
        for _ in 0..trials {
            let z = self.uniform_box(&mut rng);
            if self.halfspace_violation(&z).0 <= 0.0 {
                accepted += 1;
                first_ok.get_or_insert(z);
            }
        }
        if let Some(z) = first_ok {
            self.interior = z;
            self.sampler = if (accepted as f64) / (trials as f64) < 0.01 {
                SamplerKind::HitAndRun
            } else {
                SamplerKind::Rejection
            };
            return Ok(());
        }

        let mut z: Vec<f64> = self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect();
        for _ in 0..20_000 {
            for hs in &self.halfspaces {
                let v = dot(&hs.normal, &z) - hs.bound;
                let nn = dot(&hs.normal, &hs.normal);
                if v > 0.0 && nn > 0.0 {
                    for (zl, nl) in z.iter_mut().zip(&hs.normal) {
                        *zl -= v / nn * nl;
                    }
                }
            }
            for (l, zl) in z.iter_mut().enumerate() {
                *zl = zl.clamp(self.lower[l], self.upper[l]);
            }
            if self.halfspace_violation(&z).0 <= FEAS_TOL {
                break;
            }
        }
        let (v, which) = self.halfspace_violation(&z);
        if v > 1e-9 {
            let label = which.map_or_else(String::new, |h| self.halfspaces[h].label.clone());
            return Err(Error::Infeasible {
                certificate: format!("{label} violated by {v:.3e} at the closest point found"),
            });
        }
        // nudge strictly inside any halfspace we sit on, when possible
        self.interior = z;
        self.sampler = SamplerKind::HitAndRun;
        Ok(())
    }

    fn uniform_box<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| if u > l { rng.random_range(*l..=*u) } else { *l })
            .collect()
    }

    /// Feasible step range `[t_lo, t_hi]` for `z + t d`.
    pub fn chord(&self, z: &[f64], d: &[f64]) -> (f64, f64) {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        let mut limit = |slope: f64, room: f64| {
            // slope * t <= room
            if slope > 1e-300 {
                hi = hi.min(room / slope);
            } else if slope < -1e-300 {
                lo = lo.max(room / slope);
            }
        };
        for l in 0..z.len() {
            limit(d[l], self.upper[l] - z[l]);
            limit(-d[l], z[l] - self.lower[l]);
        }
        for hs in &self.halfspaces {
            limit(dot(&hs.normal, d), hs.bound - dot(&hs.normal, z));
        }
        (lo.min(0.0), hi.max(0.0))
    }

    /// Moves from the feasible point `from` toward `to`, stopping at the
    /// boundary if `to` is infeasible.
    pub fn clip_move(&self, from: &[f64], to: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = to.iter().zip(from).map(|(a, b)| a - b).collect();
        let (_, hi) = self.chord(from, &d);
        let t = hi.min(1.0) * (1.0 - 1e-12);
        from.iter().zip(&d).map(|(z, dz)| z + t * dz).collect()
    }

    /// `n` feasible points in free coordinates, deterministic in `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if self.is_point() {
            return vec![self.interior.clone(); n];
        }
        match self.sampler {
            SamplerKind::Rejection => {
                let mut out = Vec::with_capacity(n);
                let mut tries = 0usize;
                while out.len() < n {
                    let z = self.uniform_box(&mut rng);
                    tries += 1;
                    if self.halfspace_violation(&z).0 <= 0.0 {
                        out.push(z);
                    } else if tries > 200 * n.max(50) && out.len() * 100 < tries {
                        // acceptance collapsed below 1%: finish with hit-and-run
                        let rest = self.hit_and_run(n - out.len(), &mut rng);
                        out.extend(rest);
                    }
                }
                out
            }
            SamplerKind::HitAndRun => self.hit_and_run(n, &mut rng),
        }
    }

    fn hit_and_run<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let k = self.dim();
        let thin = 3 * k + 1;
        let mut z = self.interior.clone();
        let mut out = Vec::with_capacity(n);
        let step = |z: &mut Vec<f64>, rng: &mut R| {
            let d: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let (lo, hi) = self.chord(z, &d);
            if hi - lo > 0.0 {
                let t = rng.random_range(lo..=hi) * (1.0 - 1e-12);
                for (zl, dl) in z.iter_mut().zip(&d) {
                    *zl += t * dl;
                }
                for (l, zl) in z.iter_mut().enumerate() {
                    *zl = zl.clamp(self.lower[l], self.upper[l]);
                }
            }
        };
        for _ in 0..(50 * thin) {
            step(&mut z, rng);
        }
        while out.len() < n {
            for _ in 0..thin {
                step(&mut z, rng);
            }
            out.push(z.clone());
        }
        out
    }

    pub fn to_mixture(&self, z: &[f64]) -> Mixture {
        let bounds = self.constraints.effective_bounds();
        let mut q = self.offset;
        for (i, qi) in q.iter_mut().enumerate() {
            *qi += dot(&self.rows[i], z);
            // round-off from eliminated coordinates; snap onto the box face
            for edge in [bounds[i].lo, bounds[i].hi] {
                if (*qi - edge).abs() < SNAP_TOL {
                    *qi = edge;
                }
            }
            if *qi < 0.0 {
                *qi = 0.0;
            }
        }
        Mixture::new(q).expect("finite non-negative quantities")
    }

    /// Free coordinates of a mixture (ignores its eliminated ingredients).
    pub fn to_free(&self, mixture: &Mixture) -> Vec<f64> {
        self.free_vars.iter().map(|&i| mixture.quantities()[i]).collect()
    }

    pub fn sample_mixtures(&self, n: usize, seed: u64) -> Vec<Mixture> {
        self.sample(n, seed).iter().map(|z| self.to_mixture(z)).collect()
    }
}

/// Intersects constraints that share a coefficient map, so a window such as
/// `0.35 <= w/b <= 0.35` given as two one-sided rows becomes one equality.
fn merge_parallel(linear: &[LinearConstraint]) -> Result<Vec<LinearConstraint>> {
    let mut out: Vec<LinearConstraint> = Vec::new();
    for c in linear {
        match out.iter_mut().find(|o| o.coefficients == c.coefficients) {
            Some(o) => {
                o.lo = match (o.lo, c.lo) {
                    (Some(a), Some(b)) => Some(a.max(b)),
                    (a, b) => a.or(b),
                };
                o.hi = match (o.hi, c.hi) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                };
                if let (Some(l), Some(r)) = (&o.label, &c.label) {
                    if l != r {
                        o.label = Some(format!("{l} & {r}"));
                    }
                }
                if let (Some(lo), Some(hi)) = (o.lo, o.hi) {
                    if lo > hi + 1e-12 * hi.abs().max(1.0) {
                        return Err(Error::Infeasible {
                            certificate: format!("contradictory windows: {}", o.describe()),
                        });
                    }
                }
            }
            None => out.push(c.clone()),
        }
    }
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
