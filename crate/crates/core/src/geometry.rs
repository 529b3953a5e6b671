//! 19-cell hexagonal wrap-around network, user drops and large-scale gains.
//!
//! Cells are pointy-top hexagons with corner radius `r`; base stations sit on
//! the triangular lattice spanned by `a1 = (√3 r, 0)` and `a2 = (√3 r / 2, 3 r / 2)`.
//! The 19 cells are the lattice points within hop distance 2 of the origin,
//! and the torus is generated by the cluster translation `3 a1 + 2 a2` and its
//! rotations by multiples of 60°.

use ndarray::Array3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Point = [f64; 2];

/// Minimum user distance to the serving BS, as a fraction of the cell radius.
pub const MIN_DISTANCE_FRACTION: f64 = 0.14;

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Axial lattice offsets of the six nearest neighbours, in rotational order.
pub const NEIGHBOR_OFFSETS: [(i32, i32); 6] = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)];

/// Axial coordinates of the cluster translation generating the torus.
const CLUSTER_SHIFT: (i32, i32) = (3, 2);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkGeometry {
    pub radius_m: f64,
    pub bs_positions: Vec<Point>,
    /// Zero vector first, then the six cluster translations.
    pub wrap_vectors: Vec<Point>,
    /// Axial lattice coordinates of each BS.
    pub lattice: Vec<(i32, i32)>,
}

fn rotate60((q, s): (i32, i32)) -> (i32, i32) {
    (-s, q + s)
}

/// Hop distance between two axial lattice points.
pub fn hex_hops((q, s): (i32, i32)) -> i32 {
    (q.abs() + s.abs() + (q + s).abs()) / 2
}

/// Builds the 19-cell layout: center cell (index 0), then the first and
/// second rings in counter-clockwise order.
pub fn build_hex_network(radius_m: f64) -> Result<NetworkGeometry> {
    if !(radius_m > 0.0 && radius_m.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "radius_m must be positive, got {radius_m}"
        )));
    }
    let mut lattice = vec![(0, 0)];
    for ring in 1..=2 {
        // start at ring * (0, -1) and walk the six sides counter-clockwise
        let mut cell = (ring * NEIGHBOR_OFFSETS[4].0, ring * NEIGHBOR_OFFSETS[4].1);
        for side in 0..6 {
            for _ in 0..ring {
                lattice.push(cell);
                let step = NEIGHBOR_OFFSETS[side];
                cell = (cell.0 + step.0, cell.1 + step.1);
            }
        }
    }
    debug_assert_eq!(lattice.len(), 19);

    let to_xy = |(q, s): (i32, i32)| -> Point {
        let (q, s) = (q as f64, s as f64);
        [SQRT3 * radius_m * (q + 0.5 * s), 1.5 * radius_m * s]
    };
    let bs_positions = lattice.iter().copied().map(to_xy).collect();

    let mut wrap_vectors = vec![[0.0, 0.0]];
    let mut shift = CLUSTER_SHIFT;
    for _ in 0..6 {
        wrap_vectors.push(to_xy(shift));
        shift = rotate60(shift);
    }

    Ok(NetworkGeometry {
        radius_m,
        bs_positions,
        wrap_vectors,
        lattice,
    })
}

impl NetworkGeometry {
    pub fn cell_count(&self) -> usize {
        self.bs_positions.len()
    }

    fn bs(&self, j: usize) -> Result<Point> {
        self.bs_positions
            .get(j)
            .copied()
            .ok_or(Error::InvalidIndex {
                index: j,
                len: self.cell_count(),
            })
    }

    /// Reduces a displacement to its minimum-image representative on the torus.
    pub fn min_image(&self, d: Point) -> Point {
        // Fractional coordinates in the cluster basis (T1, T2), rounded to the
        // nearest lattice point, then polished over the seven wrap vectors.
        let t1 = self.wrap_vectors[1];
        let t2 = self.wrap_vectors[2];
        let det = t1[0] * t2[1] - t1[1] * t2[0];
        let u = ((d[0] * t2[1] - d[1] * t2[0]) / det).round();
        let v = ((t1[0] * d[1] - t1[1] * d[0]) / det).round();
        let base = [d[0] - u * t1[0] - v * t2[0], d[1] - u * t1[1] - v * t2[1]];
        self.wrap_vectors
            .iter()
            .map(|t| [base[0] + t[0], base[1] + t[1]])
            .min_by(|a, b| hypot(*a).total_cmp(&hypot(*b)))
            .expect("wrap vectors are never empty")
    }

    /// Minimum-image distance from `z` to BS `j`.
    pub fn wrap_distance(&self, z: Point, j: usize) -> Result<f64> {
        let b = self.bs(j)?;
        Ok(hypot(self.min_image([z[0] - b[0], z[1] - b[1]])))
    }

    /// Two cells are wrap-adjacent if their BSs are one lattice hop apart on
    /// the torus.
    pub fn wrap_adjacent(&self, a: usize, b: usize) -> bool {
        a != b && self.torus_hops(a, b) == 1
    }

    /// Lattice hop distance between two cells on the torus (0, 1 or 2).
    pub fn torus_hops(&self, a: usize, b: usize) -> i32 {
        let (qa, sa) = self.lattice[a];
        let (qb, sb) = self.lattice[b];
        let d = (qb - qa, sb - sa);
        let mut best = hex_hops(d);
        let mut shift = CLUSTER_SHIFT;
        for _ in 0..6 {
            best = best.min(hex_hops((d.0 + shift.0, d.1 + shift.1)));
            shift = rotate60(shift);
        }
        best
    }

    /// Index of the cell whose axial coordinates equal `cell` modulo the torus.
    pub fn cell_at_lattice(&self, cell: (i32, i32)) -> Option<usize> {
        let mut shift = (0, 0);
        for step in 0..7 {
            let probe = (cell.0 + shift.0, cell.1 + shift.1);
            if let Some(i) = self.lattice.iter().position(|&c| c == probe) {
                return Some(i);
            }
            shift = if step == 0 {
                CLUSTER_SHIFT
            } else {
                rotate60(shift)
            };
        }
        None
    }

    /// Whether `z` lies inside the (unwrapped) hexagon of cell `j`.
    pub fn in_hexagon(&self, z: Point, j: usize) -> bool {
        let b = self.bs_positions[j];
        in_unit_hexagon([z[0] - b[0], z[1] - b[1]], self.radius_m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn hypot(p: Point) -> f64 {
    p[0].hypot(p[1])
}

/// Point-in-hexagon test for a pointy-top hexagon of corner radius `r`
/// centred at the origin.
pub fn in_unit_hexagon(p: Point, r: f64) -> bool {
    let x = p[0].abs();
    let y = p[1].abs();
    x <= 0.5 * SQRT3 * r && y <= r - x / SQRT3
}

/// User positions and the full large-scale gain tensor of one drop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserDrop {
    pub cells: usize,
    pub users_per_cell: usize,
    /// Flattened `[cell][user]`, see [`UserDrop::user`].
    pub positions: Vec<Point>,
    /// `gains[[j, l, k]] = d_j(z_lk)`.
    pub gains: Array3<f64>,
    /// Realized `10 log10(C)` per link, same layout as `gains`.
    pub shadowing_db: Array3<f64>,
}

impl UserDrop {
    #[inline]
    pub fn user(&self, l: usize, k: usize) -> usize {
        l * self.users_per_cell + k
    }

    pub fn position(&self, l: usize, k: usize) -> Point {
        self.positions[self.user(l, k)]
    }

    #[inline]
    pub fn gain(&self, j: usize, l: usize, k: usize) -> f64 {
        self.gains[[j, l, k]]
    }

    pub fn user_count(&self) -> usize {
        self.cells * self.users_per_cell
    }
}

/// Draws `k` users per cell, uniform over each hexagon with the exclusion
/// disc of radius `0.14 r` around the BS removed.
pub fn drop_users<R: Rng + ?Sized>(
    net: &NetworkGeometry,
    k: usize,
    rng: &mut R,
) -> Result<Vec<Point>> {
    if k == 0 {
        return Err(Error::InvalidParameter(
            "users per cell must be at least 1".into(),
        ));
    }
    let r = net.radius_m;
    let half_width = 0.5 * SQRT3 * r;
    let min_dist = MIN_DISTANCE_FRACTION * r;
    let mut out = Vec::with_capacity(net.cell_count() * k);
    for b in &net.bs_positions {
        for _ in 0..k {
            loop {
                let p = [
                    rng.random_range(-half_width..half_width),
                    rng.random_range(-r..r),
                ];
                if in_unit_hexagon(p, r) && hypot(p) >= min_dist {
                    out.push([b[0] + p[0], b[1] + p[1]]);
                    break;
                }
            }
        }
    }
    Ok(out)
}

/// `C / d^kappa` with `10 log10(C) = shadow_db`.
pub fn pathloss_gain(distance_m: f64, shadow_db: f64, kappa: f64) -> Result<f64> {
    if distance_m <= 0.0 {
        return Err(Error::SingularPathloss);
    }
    Ok(10f64.powf(shadow_db / 10.0) / distance_m.powf(kappa))
}

/// Large-scale gain `d_j(z)` using the wrap-around distance.
pub fn channel_gain(
    net: &NetworkGeometry,
    z: Point,
    j: usize,
    shadow_db: f64,
    kappa: f64,
) -> Result<f64> {
    pathloss_gain(net.wrap_distance(z, j)?, shadow_db, kappa)
}

/// How shadowing values are shared between the links of a user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShadowingModel {
    /// One independent value per (BS, user) link.
    #[default]
    PerLink,
    /// One value per user, common to all its links.
    PerUser,
}

/// Large-scale parameters of the propagation model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Propagation {
    pub kappa: f64,
    /// Variance of `10 log10(C)` in dB².
    pub sigma_sf_sq: f64,
    pub shadowing: ShadowingModel,
}

impl Default for Propagation {
    fn default() -> Self {
        Self {
            kappa: 3.7,
            sigma_sf_sq: 5.0,
            shadowing: ShadowingModel::PerLink,
        }
    }
}

/// Drops users and realizes their shadowing.
pub fn generate_drop<R: Rng + ?Sized>(
    net: &NetworkGeometry,
    k: usize,
    prop: Propagation,
    rng: &mut R,
) -> Result<UserDrop> {
    let positions = drop_users(net, k, rng)?;
    build_drop(net, k, positions, prop, rng)
}

/// Gain tensor for given positions; shadowing is drawn from `rng`.
pub fn build_drop<R: Rng + ?Sized>(
    net: &NetworkGeometry,
    k: usize,
    positions: Vec<Point>,
    prop: Propagation,
    rng: &mut R,
) -> Result<UserDrop> {
    let l = net.cell_count();
    if positions.len() != l * k {
        return Err(Error::Dimension(format!(
            "expected {} positions, got {}",
            l * k,
            positions.len()
        )));
    }
    if !(prop.sigma_sf_sq >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma_sf_sq must be >= 0, got {}",
            prop.sigma_sf_sq
        )));
    }
    let shadow = Normal::new(0.0, prop.sigma_sf_sq.sqrt())
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut shadowing_db = Array3::zeros((l, l, k));
    if prop.shadowing == ShadowingModel::PerUser {
        for cell in 0..l {
            for user in 0..k {
                let s = shadow.sample(rng);
                shadowing_db.slice_mut(ndarray::s![.., cell, user]).fill(s);
            }
        }
    }
    let mut gains = Array3::zeros((l, l, k));
    for j in 0..l {
        for cell in 0..l {
            for user in 0..k {
                let s = match prop.shadowing {
                    ShadowingModel::PerLink => shadow.sample(rng),
                    ShadowingModel::PerUser => shadowing_db[[j, cell, user]],
                };
                shadowing_db[[j, cell, user]] = s;
                gains[[j, cell, user]] =
                    channel_gain(net, positions[cell * k + user], j, s, prop.kappa)?;
            }
        }
    }
    Ok(UserDrop {
        cells: l,
        users_per_cell: k,
        positions,
        gains,
        shadowing_db,
    })
}
