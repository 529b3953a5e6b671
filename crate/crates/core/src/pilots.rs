//! Pilot books: reuse-group colorings of the wrap-around layout and the
//! symmetric and refined (fractional) pilot allocation schemes.
//!
//! Pilot indices are zero-based throughout the crate.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{NetworkGeometry, UserDrop};
use crate::{Error, Result};

pub const SUPPORTED_REUSE: [usize; 4] = [1, 3, 4, 7];

/// Assignment of every cell to one of `beta` pilot reuse groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReuseColoring {
    pub beta: usize,
    pub group: Vec<usize>,
}

impl ReuseColoring {
    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.beta];
        for &g in &self.group {
            sizes[g] += 1;
        }
        sizes
    }

    /// Number of wrap-adjacent cell pairs sharing a group.
    pub fn conflicts(&self, net: &NetworkGeometry) -> usize {
        let n = self.group.len();
        let mut count = 0;
        for a in 0..n {
            for b in a + 1..n {
                if self.group[a] == self.group[b] && net.wrap_adjacent(a, b) {
                    count += 1;
                }
            }
        }
        count
    }
}

/// Co-group coupling weight between two cells: `(r / distance)^3.7`.
fn coupling_table(net: &NetworkGeometry) -> Vec<Vec<f64>> {
    let n = net.cell_count();
    (0..n)
        .map(|a| {
            (0..n)
                .map(|b| {
                    if a == b {
                        0.0
                    } else {
                        let d = net
                            .wrap_distance(net.bs_positions[a], b)
                            .expect("valid index");
                        (net.radius_m / d).powf(3.7)
                    }
                })
                .collect()
        })
        .collect()
}

/// Splits cells into `beta` reuse groups with balanced sizes.
///
/// The search minimizes, lexicographically, the number of wrap-adjacent
/// cells sharing a group and then the total co-group coupling
/// `sum (r/d)^3.7`. It is a steepest-descent swap search from a fixed set
/// of seeded starts, so the result is a pure function of the layout.
///
/// On the 19-cell torus every independent set has at most 4 cells, so
/// only `beta = 7` admits a conflict-free coloring. For `beta = 3` and
/// `beta = 4` the result has the minimum achievable number of conflicting
/// pairs.
pub fn reuse_coloring(net: &NetworkGeometry, beta: usize) -> Result<ReuseColoring> {
    if !SUPPORTED_REUSE.contains(&beta) {
        return Err(Error::UnsupportedReuse(beta));
    }
    let n = net.cell_count();
    if beta == 1 {
        return Ok(ReuseColoring {
            beta,
            group: vec![0; n],
        });
    }

    let adjacent: Vec<Vec<bool>> = (0..n)
        .map(|a| (0..n).map(|b| net.wrap_adjacent(a, b)).collect())
        .collect();
    let coupling = coupling_table(net);
    let cost = |group: &[usize]| -> (usize, f64) {
        let mut conflicts = 0;
        let mut c = 0.0;
        for a in 0..n {
            for b in a + 1..n {
                if group[a] == group[b] {
                    conflicts += adjacent[a][b] as usize;
                    c += coupling[a][b];
                }
            }
        }
        (conflicts, c)
    };
    let better = |x: (usize, f64), y: (usize, f64)| x.0 < y.0 || (x.0 == y.0 && x.1 < y.1 - 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c010 ^ beta as u64);
    let mut best: Option<(Vec<usize>, (usize, f64))> = None;
    for _ in 0..64 {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut group = vec![0; n];
        for (pos, &cell) in order.iter().enumerate() {
            group[cell] = pos % beta;
        }
        let mut current = cost(&group);
        loop {
            let mut best_swap = None;
            let mut best_cost = current;
            for a in 0..n {
                for b in a + 1..n {
                    if group[a] == group[b] {
                        continue;
                    }
                    group.swap(a, b);
                    let c = cost(&group);
                    group.swap(a, b);
                    if better(c, best_cost) {
                        best_cost = c;
                        best_swap = Some((a, b));
                    }
                }
            }
            match best_swap {
                Some((a, b)) => {
                    group.swap(a, b);
                    current = best_cost;
                }
                None => break,
            }
        }
        if best.as_ref().map_or(true, |(_, c)| better(current, *c)) {
            best = Some((group, current));
        }
    }
    let (group, _) = best.expect("at least one start");
    Ok(canonical(ReuseColoring { beta, group }))
}

/// Relabels groups in order of first appearance (the center cell is group 0).
fn canonical(c: ReuseColoring) -> ReuseColoring {
    let mut map = vec![usize::MAX; c.beta];
    let mut next = 0;
    let group = c
        .group
        .iter()
        .map(|&g| {
            if map[g] == usize::MAX {
                map[g] = next;
                next += 1;
            }
            map[g]
        })
        .collect();
    ReuseColoring {
        beta: c.beta,
        group,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PilotAllocation {
    /// Pilot sequence length `B` (number of orthogonal pilots).
    pub pilot_length: usize,
    pub beta: usize,
    pub beta_f: f64,
    /// Number of center pilots reused in every cell (`beta_f * K`).
    pub center_pilots: usize,
    pub users_per_cell: usize,
    pub groups: Vec<usize>,
    /// Pilot index per user, flattened `[cell][user]`.
    pub index: Vec<usize>,
    #[serde(skip)]
    members: Vec<Vec<(usize, usize)>>,
}

impl PilotAllocation {
    fn new(
        pilot_length: usize,
        beta: usize,
        beta_f: f64,
        center_pilots: usize,
        users_per_cell: usize,
        groups: Vec<usize>,
        index: Vec<usize>,
    ) -> Self {
        let mut members = vec![Vec::new(); pilot_length];
        for (u, &b) in index.iter().enumerate() {
            members[b].push((u / users_per_cell, u % users_per_cell));
        }
        Self {
            pilot_length,
            beta,
            beta_f,
            center_pilots,
            users_per_cell,
            groups,
            index,
            members,
        }
    }

    /// Builds an allocation from explicit per-user pilot indices.
    pub fn from_indices(
        users_per_cell: usize,
        pilot_length: usize,
        index: Vec<usize>,
    ) -> Result<Self> {
        if users_per_cell == 0 || index.len() % users_per_cell != 0 {
            return Err(Error::Dimension(
                "index length must be a multiple of K".into(),
            ));
        }
        if let Some(&b) = index.iter().find(|&&b| b >= pilot_length) {
            return Err(Error::InvalidIndex {
                index: b,
                len: pilot_length,
            });
        }
        let cells = index.len() / users_per_cell;
        for l in 0..cells {
            let mut seen = vec![false; pilot_length];
            for &b in &index[l * users_per_cell..(l + 1) * users_per_cell] {
                if std::mem::replace(&mut seen[b], true) {
                    return Err(Error::InvalidParameter(format!(
                        "pilot {b} used twice in cell {l}"
                    )));
                }
            }
        }
        Ok(Self::new(
            pilot_length,
            0,
            0.0,
            0,
            users_per_cell,
            vec![0; cells],
            index,
        ))
    }

    #[inline]
    pub fn pilot(&self, l: usize, k: usize) -> usize {
        self.index[l * self.users_per_cell + k]
    }

    /// Users `(cell, user)` transmitting pilot `b`.
    pub fn users_on_pilot(&self, b: usize) -> &[(usize, usize)] {
        &self.members[b]
    }

    pub fn cells(&self) -> usize {
        self.index.len() / self.users_per_cell
    }

    /// Pilot indices of every cell, for audit dumps.
    pub fn per_cell(&self) -> Vec<Vec<usize>> {
        self.index
            .chunks(self.users_per_cell)
            .map(|c| c.to_vec())
            .collect()
    }

    /// Pilot overhead prelog `1 - B/S`.
    pub fn prelog(&self, coherence_symbols: usize) -> f64 {
        1.0 - self.pilot_length as f64 / coherence_symbols as f64
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Dump<'a> {
            pilot_length: usize,
            beta: usize,
            beta_f: f64,
            groups: &'a [usize],
            pilots_per_cell: Vec<Vec<usize>>,
        }
        Ok(serde_json::to_string_pretty(&Dump {
            pilot_length: self.pilot_length,
            beta: self.beta,
            beta_f: self.beta_f,
            groups: &self.groups,
            pilots_per_cell: self.per_cell(),
        })?)
    }
}

fn check_coloring(coloring: &ReuseColoring, beta: usize) -> Result<()> {
    if coloring.beta != beta {
        return Err(Error::InvalidParameter(format!(
            "coloring has beta {} but allocation requested beta {beta}",
            coloring.beta
        )));
    }
    if coloring.group.iter().any(|&g| g >= beta) {
        return Err(Error::InvalidParameter(
            "coloring group index out of range".into(),
        ));
    }
    Ok(())
}

/// Symmetric reuse: a cell in group `g` uses pilots `g K .. (g+1) K`,
/// randomly permuted among its users.
pub fn allocate_symmetric<R: Rng + ?Sized>(
    coloring: &ReuseColoring,
    k: usize,
    beta: usize,
    rng: &mut R,
) -> Result<PilotAllocation> {
    check_coloring(coloring, beta)?;
    if k == 0 {
        return Err(Error::InvalidParameter("K must be at least 1".into()));
    }
    let mut index = Vec::with_capacity(coloring.group.len() * k);
    for &g in &coloring.group {
        let mut pilots: Vec<usize> = (g * k..(g + 1) * k).collect();
        pilots.shuffle(rng);
        index.extend(pilots);
    }
    Ok(PilotAllocation::new(
        beta * k,
        beta,
        0.0,
        0,
        k,
        coloring.group.clone(),
        index,
    ))
}

/// Number of center pilots `beta_f * K`, which must be an integer.
pub fn center_pilot_count(k: usize, beta_f: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&beta_f) {
        return Err(Error::InvalidParameter(format!(
            "beta_f must lie in [0, 1], got {beta_f}"
        )));
    }
    let exact = beta_f * k as f64;
    let n = exact.round();
    if (exact - n).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "beta_f * K = {exact} is not an integer"
        )));
    }
    Ok(n as usize)
}

/// Pilot length of the refined scheme, `K (beta_f + (1 - beta_f) beta)`.
pub fn refined_pilot_length(k: usize, beta: usize, beta_f: f64) -> Result<usize> {
    let nc = center_pilot_count(k, beta_f)?;
    Ok(nc + (k - nc) * beta)
}

/// Refined reuse: in every cell the `beta_f K` users closest to their BS
/// share the center pilots `0 .. beta_f K`; the others get edge pilots by
/// the symmetric group scheme.
pub fn allocate_refined<R: Rng + ?Sized>(
    coloring: &ReuseColoring,
    net: &NetworkGeometry,
    drop: &UserDrop,
    k: usize,
    beta: usize,
    beta_f: f64,
    rng: &mut R,
) -> Result<PilotAllocation> {
    check_coloring(coloring, beta)?;
    if drop.users_per_cell != k || drop.cells != coloring.group.len() {
        return Err(Error::Dimension("drop does not match coloring / K".into()));
    }
    let nc = center_pilot_count(k, beta_f)?;
    let edge = k - nc;
    let mut index = vec![0; drop.cells * k];
    for (l, &g) in coloring.group.iter().enumerate() {
        let mut by_distance: Vec<(f64, usize)> = (0..k)
            .map(|u| Ok((net.wrap_distance(drop.position(l, u), l)?, u)))
            .collect::<Result<_>>()?;
        by_distance.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut is_center = vec![false; k];
        for &(_, u) in &by_distance[..nc] {
            is_center[u] = true;
        }

        let mut center: Vec<usize> = (0..nc).collect();
        center.shuffle(rng);
        let start = nc + g * edge;
        let mut edge_pilots: Vec<usize> = (start..start + edge).collect();
        edge_pilots.shuffle(rng);

        let (mut ci, mut ei) = (0, 0);
        for u in 0..k {
            index[l * k + u] = if is_center[u] {
                ci += 1;
                center[ci - 1]
            } else {
                ei += 1;
                edge_pilots[ei - 1]
            };
        }
    }
    Ok(PilotAllocation::new(
        nc + edge * beta,
        beta,
        beta_f,
        nc,
        k,
        coloring.group.clone(),
        index,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_hex_network, generate_drop, Propagation};

    fn net() -> NetworkGeometry {
        build_hex_network(500.0).unwrap()
    }

    fn adjacency_masks(net: &NetworkGeometry) -> Vec<u32> {
        (0..19)
            .map(|a| {
                (0..19)
                    .filter(|&b| net.wrap_adjacent(a, b))
                    .fold(0u32, |m, b| m | (1 << b))
            })
            .collect()
    }

    fn inner_edges(mask: u32, adj: &[u32]) -> u32 {
        let mut e = 0;
        let mut m = mask;
        while m != 0 {
            let i = m.trailing_zeros() as usize;
            e += (adj[i] & mask).count_ones();
            m &= m - 1;
        }
        e / 2
    }

    #[test]
    fn universal_reuse() {
        let c = reuse_coloring(&net(), 1).unwrap();
        assert!(c.group.iter().all(|&g| g == 0));
    }

    #[test]
    fn unsupported_beta_is_rejected() {
        for b in [0, 2, 5, 6, 8] {
            assert!(matches!(
                reuse_coloring(&net(), b),
                Err(Error::UnsupportedReuse(_))
            ));
        }
    }

    /// Fewest wrap-adjacent pairs inside any set of `size` cells.
    fn min_inner_edges(adj: &[u32], size: u32) -> u32 {
        (0u32..(1 << 19))
            .filter(|m| m.count_ones() == size)
            .map(|m| inner_edges(m, adj))
            .min()
            .unwrap()
    }

    #[test]
    fn beta_4_and_7_colorings_are_optimal() {
        let n = net();
        let adj = adjacency_masks(&n);
        for (beta, mut expected) in [(4, vec![5, 5, 5, 4]), (7, vec![3, 3, 3, 3, 3, 2, 2])] {
            let c = reuse_coloring(&n, beta).unwrap();
            let bound: u32 = expected
                .iter()
                .map(|&s| min_inner_edges(&adj, s as u32))
                .sum();
            assert_eq!(c.conflicts(&n) as u32, bound, "beta {beta}: {:?}", c.group);
            let mut sizes = c.group_sizes();
            sizes.sort_unstable_by(|a, b| b.cmp(a));
            expected.sort_unstable_by(|a, b| b.cmp(a));
            assert_eq!(sizes, expected);
        }
    }

    #[test]
    fn only_seven_groups_can_avoid_conflicts() {
        // Exhaustive: the largest independent set of the wrap-around graph
        // has 4 cells, so 3 or 4 groups cover at most 16 of the 19 cells.
        let adj = adjacency_masks(&net());
        let mut best = 0;
        for mask in 0u32..(1 << 19) {
            if inner_edges(mask, &adj) == 0 {
                best = best.max(mask.count_ones());
            }
        }
        assert_eq!(best, 4);
        assert_eq!(reuse_coloring(&net(), 7).unwrap().conflicts(&net()), 0);
    }

    #[test]
    fn beta_3_coloring_is_conflict_minimal() {
        let n = net();
        let adj = adjacency_masks(&n);
        // Exhaustive minimum over balanced (7, 6, 6) splits.
        let full = (1u32 << 19) - 1;
        let mut best = u32::MAX;
        for a in 0u32..(1 << 19) {
            if a.count_ones() != 7 {
                continue;
            }
            let ea = inner_edges(a, &adj);
            if ea >= best {
                continue;
            }
            let rest = full & !a;
            let low = rest.trailing_zeros();
            // enumerate 6-subsets of rest containing its lowest element
            let mut sub = rest;
            loop {
                if sub.count_ones() == 6 && sub & (1 << low) != 0 {
                    let total = ea + inner_edges(sub, &adj) + inner_edges(rest & !sub, &adj);
                    best = best.min(total);
                }
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & rest;
            }
        }
        let c = reuse_coloring(&n, 3).unwrap();
        let mut sizes = c.group_sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![6, 6, 7]);
        assert_eq!(c.conflicts(&n) as u32, best);
    }

    #[test]
    fn coloring_is_deterministic() {
        let n = net();
        assert_eq!(
            reuse_coloring(&n, 7).unwrap(),
            reuse_coloring(&n, 7).unwrap()
        );
    }

    #[test]
    fn symmetric_examples() {
        let n = net();
        let c1 = reuse_coloring(&n, 1).unwrap();
        let a = allocate_symmetric(&c1, 1, 1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a.pilot_length, 1);
        assert!(a.index.iter().all(|&b| b == 0));

        let c4 = reuse_coloring(&n, 4).unwrap();
        let a = allocate_symmetric(&c4, 10, 4, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a.pilot_length, 40);
        for (l, pilots) in a.per_cell().iter().enumerate() {
            let mut p = pilots.clone();
            p.sort_unstable();
            let g = c4.group[l];
            assert_eq!(p, (g * 10..(g + 1) * 10).collect::<Vec<_>>());
        }
        let b = allocate_symmetric(&c4, 10, 4, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
        assert!(allocate_symmetric(&c4, 10, 3, &mut ChaCha8Rng::seed_from_u64(2)).is_err());
    }

    #[test]
    fn same_pilot_adjacency_matches_coloring_conflicts() {
        let n = net();
        let k = 6;
        for beta in [3, 4, 7] {
            let c = reuse_coloring(&n, beta).unwrap();
            let a = allocate_symmetric(&c, k, beta, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            let mut adjacent = 0;
            for b in 0..a.pilot_length {
                let users = a.users_on_pilot(b);
                for (i, &(l1, _)) in users.iter().enumerate() {
                    for &(l2, _) in &users[i + 1..] {
                        assert_ne!(l1, l2);
                        adjacent += n.wrap_adjacent(l1, l2) as usize;
                    }
                }
            }
            // every conflicting cell pair shares all K pilots; none for beta = 7
            assert_eq!(adjacent, c.conflicts(&n) * k);
            if beta == 7 {
                assert_eq!(adjacent, 0);
            }
        }
    }

    fn drop_for(k: usize) -> UserDrop {
        generate_drop(
            &net(),
            k,
            Propagation::default(),
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap()
    }

    #[test]
    fn refined_reduces_to_symmetric_at_zero() {
        let n = net();
        let c = reuse_coloring(&n, 4).unwrap();
        let d = drop_for(10);
        let sym = allocate_symmetric(&c, 10, 4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let refined =
            allocate_refined(&c, &n, &d, 10, 4, 0.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(sym.index, refined.index);
        assert_eq!(sym.pilot_length, refined.pilot_length);
    }

    #[test]
    fn refined_full_sharing_and_pilot_length() {
        let n = net();
        let c = reuse_coloring(&n, 4).unwrap();
        let d = drop_for(10);
        let full =
            allocate_refined(&c, &n, &d, 10, 4, 1.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(full.pilot_length, 10);
        for pilots in full.per_cell() {
            let mut p = pilots.clone();
            p.sort_unstable();
            assert_eq!(p, (0..10).collect::<Vec<_>>());
        }
        let a =
            allocate_refined(&c, &n, &d, 10, 4, 0.2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a.pilot_length, 34);
        assert_eq!(refined_pilot_length(10, 4, 0.2).unwrap(), 34);
        // the two closest users per cell hold the center pilots
        for l in 0..19 {
            let mut by: Vec<(f64, usize)> = (0..10)
                .map(|u| (n.wrap_distance(d.position(l, u), l).unwrap(), u))
                .collect();
            by.sort_by(|x, y| x.0.total_cmp(&y.0));
            for (rank, &(_, u)) in by.iter().enumerate() {
                assert_eq!(a.pilot(l, u) < 2, rank < 2);
            }
        }
    }

    #[test]
    fn refined_rejects_fractional_center_count() {
        let n = net();
        let c = reuse_coloring(&n, 3).unwrap();
        let d = drop_for(10);
        let err = allocate_refined(&c, &n, &d, 10, 3, 0.25, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(matches!(err, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn same_pilot_classes_partition_users() {
        let n = net();
        let d = drop_for(10);
        for (beta, bf) in [(1, 0.0), (3, 0.0), (3, 0.4), (7, 0.5)] {
            let c = reuse_coloring(&n, beta).unwrap();
            let a = allocate_refined(&c, &n, &d, 10, beta, bf, &mut ChaCha8Rng::seed_from_u64(5))
                .unwrap();
            let total: usize = (0..a.pilot_length).map(|b| a.users_on_pilot(b).len()).sum();
            assert_eq!(total, 19 * 10);
            for pilots in a.per_cell() {
                let mut p = pilots.clone();
                p.sort_unstable();
                p.dedup();
                assert_eq!(p.len(), 10);
            }
        }
    }

    #[test]
    fn prelog_decreases_with_beta() {
        let n = net();
        let mut prev = 1.0;
        for beta in SUPPORTED_REUSE {
            let c = reuse_coloring(&n, beta).unwrap();
            let a = allocate_symmetric(&c, 10, beta, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            let p = a.prelog(500);
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn from_indices_validates() {
        assert!(PilotAllocation::from_indices(2, 2, vec![0, 0]).is_err());
        assert!(PilotAllocation::from_indices(2, 2, vec![0, 2]).is_err());
        let a = PilotAllocation::from_indices(2, 2, vec![1, 0, 0, 1]).unwrap();
        assert_eq!(a.users_on_pilot(0), &[(0, 1), (1, 0)]);
    }

    #[test]
    fn allocation_dump_lists_pilots_per_cell() {
        let n = net();
        let c = reuse_coloring(&n, 3).unwrap();
        let a = allocate_symmetric(&c, 2, 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&a.to_json().unwrap()).unwrap();
        assert_eq!(v["pilots_per_cell"].as_array().unwrap().len(), 19);
        assert_eq!(v["pilot_length"], 6);
    }
}
