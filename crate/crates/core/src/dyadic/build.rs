//! Construction of the shared cube tree: nested greedy nets over a
//! deterministic candidate set, hierarchical nearest-center assignment,
//! realized sandwich constants, and the bottom-up diameter pass.

use rayon::prelude::*;

use super::{AdjacentFamily, CubeId, CubeTree, DyadicError, FamilyParams, NO_PARENT};
use crate::geometry::dot;
use crate::measure::cap_sigma;
use crate::rng::{derive_seed, random_rotation, rng_from, uniform_direction};

/// Out-radius guard in units of the level scale; beyond it the neighbor
/// recursion is unsound and the level falls back to all-pairs search.
const RADIUS_GUARD: f64 = 4.0;
/// Levels with at most this many cubes use all-pairs neighbor search.
const ALL_PAIRS_LIMIT: usize = 4096;

pub(super) fn build_family(params: FamilyParams) -> Result<AdjacentFamily, DyadicError> {
    validate(&params)?;
    let cand = candidates(&params);
    let tree = build_tree(&params, &cand)?;
    let n = params.n;
    let mut rotations = Vec::with_capacity(params.systems);
    let mut identity = vec![0.0; n * n];
    for i in 0..n {
        identity[i * n + i] = 1.0;
    }
    rotations.push(identity);
    for t in 1..params.systems {
        let mut rng = rng_from(derive_seed(params.seed, "rotation", t as u64));
        let q = random_rotation(&mut rng, n);
        let mut flat = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                flat[i * n + j] = q[(i, j)];
            }
        }
        rotations.push(flat);
    }
    Ok(AdjacentFamily { params, tree, rotations })
}

fn validate(p: &FamilyParams) -> Result<(), DyadicError> {
    if p.n < 3 {
        return Err(DyadicError::InvalidParams(format!("n = {} < 3", p.n)));
    }
    if !(p.eta > 0.0 && p.eta <= 0.5) {
        return Err(DyadicError::InvalidParams(format!("eta = {} not in (0, 1/2]", p.eta)));
    }
    if p.depth < 1 || p.depth > 24 {
        return Err(DyadicError::InvalidParams(format!("depth = {}", p.depth)));
    }
    if p.systems < 1 {
        return Err(DyadicError::InvalidParams("systems must be >= 1".into()));
    }
    if p.net_candidates < 1000 {
        return Err(DyadicError::InvalidParams("need at least 1000 candidates".into()));
    }
    // candidate resolution must exceed the finest net scale
    let c2 = cap_sigma(p.n, 0.01) / 0.01f64.powi(p.n as i32 - 1);
    let spacing = (1.0 / (c2 * p.net_candidates as f64)).powf(1.0 / (p.n as f64 - 1.0));
    let finest = p.eta.powi(p.depth as i32 - 2);
    if p.depth >= 2 && finest < 8.0 * spacing {
        return Err(DyadicError::NetTooSparse { level: p.depth });
    }
    Ok(())
}

/// Deterministic candidate set: Fibonacci lattice on S² for n = 3, seeded
/// uniform sample otherwise.
fn candidates(p: &FamilyParams) -> Vec<f64> {
    let m = p.net_candidates;
    let n = p.n;
    let mut out = vec![0.0; m * n];
    if n == 3 {
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        for i in 0..m {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / m as f64;
            let phi = 2.0 * std::f64::consts::PI * (i as f64 / golden).fract();
            let r = (1.0 - z * z).max(0.0).sqrt();
            out[i * 3] = r * phi.cos();
            out[i * 3 + 1] = r * phi.sin();
            out[i * 3 + 2] = z;
        }
    } else {
        let mut rng = rng_from(derive_seed(p.seed, "candidates", 0));
        let mut buf = vec![0.0; n];
        for i in 0..m {
            uniform_direction(&mut rng, n, &mut buf);
            out[i * n..(i + 1) * n].copy_from_slice(&buf);
        }
    }
    out
}

struct Accum {
    level_of: Vec<u8>,
    centers: Vec<f64>,
    parent: Vec<CubeId>,
    out_radius: Vec<f64>,
    in_radius: Vec<f64>,
    sigma_count: Vec<u32>,
    level_ranges: Vec<(u32, u32)>,
    kappa0: Vec<f64>,
    kappa1: Vec<f64>,
}

fn build_tree(p: &FamilyParams, cand: &[f64]) -> Result<CubeTree, DyadicError> {
    let n = p.n;
    let m = p.net_candidates;
    let pt = |i: usize| &cand[i * n..(i + 1) * n];

    let mut acc = Accum {
        level_of: Vec::new(),
        centers: Vec::new(),
        parent: Vec::new(),
        out_radius: Vec::new(),
        in_radius: Vec::new(),
        sigma_count: Vec::new(),
        level_ranges: Vec::new(),
        kappa0: Vec::new(),
        kappa1: Vec::new(),
    };

    // level 1: the whole sphere, centered at the first candidate
    acc.level_of.push(1);
    acc.centers.extend_from_slice(pt(0));
    acc.parent.push(NO_PARENT);
    acc.sigma_count.push(m as u32);
    acc.level_ranges.push((0, 1));
    let root_min_dot = min_dot_to(cand, n, pt(0));
    let root_rad = root_min_dot.clamp(-1.0, 1.0).acos();
    acc.out_radius.push(root_rad);
    acc.in_radius.push(std::f64::consts::PI);
    acc.kappa0.push(std::f64::consts::PI);
    acc.kappa1.push(root_rad);

    let mut cand_cell: Vec<CubeId> = vec![0; m];
    let mut cand_is_net: Vec<bool> = vec![false; m];
    cand_is_net[0] = true;
    // net candidate index per cube; needed to seed the next level
    let mut net_idx: Vec<u32> = vec![0];
    // neighbor lists of the previous level, local indices
    let mut prev_neighbors: Vec<Vec<u32>> = vec![Vec::new()];
    let mut prev_start = 0usize;
    let mut prev_radius: Vec<f64> = vec![root_rad];
    let neighbor_slack = 1.0 + 8.0 * p.eta / (1.0 - p.eta);

    for level in 2..=p.depth {
        let scale = p.eta.powi(level as i32 - 1);
        let cos_scale = scale.cos();
        let level_start = acc.parent.len();
        let prev_count = acc.level_ranges[level - 2].1 as usize - prev_start;

        // --- greedy maximal net, seeded with the previous net ------------
        let mut accepted_in: Vec<Vec<CubeId>> = vec![Vec::new(); prev_count];
        let mut new_net_idx: Vec<u32> = Vec::new();
        {
            let accept = |c: usize,
                              acc: &mut Accum,
                              accepted_in: &mut Vec<Vec<CubeId>>,
                              new_net_idx: &mut Vec<u32>| {
                let cell = cand_cell[c];
                let g = acc.parent.len() as CubeId;
                acc.level_of.push(level as u8);
                acc.centers.extend_from_slice(pt(c));
                acc.parent.push(cell);
                accepted_in[cell as usize - prev_start].push(g);
                new_net_idx.push(c as u32);
            };
            // previous net points are eta^{level-2}-separated, hence valid here
            for &c in &net_idx {
                accept(c as usize, &mut acc, &mut accepted_in, &mut new_net_idx);
            }
            'cand: for c in 0..m {
                if cand_is_net[c] {
                    continue;
                }
                let plocal = cand_cell[c] as usize - prev_start;
                let pc = pt(c);
                for &q in accepted_in[plocal].iter() {
                    if dot(pc, cell_center(&acc, n, q)) > cos_scale {
                        continue 'cand;
                    }
                }
                for &r in &prev_neighbors[plocal] {
                    for &q in accepted_in[r as usize].iter() {
                        if dot(pc, cell_center(&acc, n, q)) > cos_scale {
                            continue 'cand;
                        }
                    }
                }
                cand_is_net[c] = true;
                accept(c, &mut acc, &mut accepted_in, &mut new_net_idx);
            }
        }
        let level_count = acc.parent.len() - level_start;
        acc.level_ranges.push((level_start as u32, acc.parent.len() as u32));
        if level_count == 0 {
            return Err(DyadicError::NetTooSparse { level });
        }

        // --- hierarchical assignment: nearest child of the current cell --
        let centers = &acc.centers;
        let parents = &acc.parent;
        let new_cell: Vec<CubeId> = (0..m)
            .into_par_iter()
            .map(|c| {
                let plocal = cand_cell[c] as usize - prev_start;
                let pc = pt(c);
                let mut best = CubeId::MAX;
                let mut best_dot = f64::NEG_INFINITY;
                for &q in accepted_in[plocal].iter() {
                    let d = dot(pc, &centers[q as usize * n..(q as usize + 1) * n]);
                    if d > best_dot {
                        best_dot = d;
                        best = q;
                    }
                }
                debug_assert!(best != CubeId::MAX);
                best
            })
            .collect();
        debug_assert_eq!(parents.len(), level_start + level_count);

        // --- per-cube out-radius and occupancy ---------------------------
        let shards: Vec<(Vec<f64>, Vec<u32>)> = crate::rng::map_shards(m, |_, range| {
            let mut min_dot = vec![f64::INFINITY; level_count];
            let mut count = vec![0u32; level_count];
            for c in range {
                let q = new_cell[c] as usize - level_start;
                let d = dot(pt(c), &centers[(level_start + q) * n..(level_start + q + 1) * n]);
                if d < min_dot[q] {
                    min_dot[q] = d;
                }
                count[q] += 1;
            }
            (min_dot, count)
        });
        let mut min_dot = vec![f64::INFINITY; level_count];
        let mut counts = vec![0u32; level_count];
        for (md, ct) in shards {
            for i in 0..level_count {
                if md[i] < min_dot[i] {
                    min_dot[i] = md[i];
                }
                counts[i] += ct[i];
            }
        }
        let radius: Vec<f64> = min_dot
            .iter()
            .map(|d| if d.is_finite() { d.clamp(-1.0, 1.0).acos() } else { 0.0 })
            .collect();
        let r_max = radius.iter().cloned().fold(0.0, f64::max);
        acc.out_radius.extend_from_slice(&radius);
        acc.sigma_count.extend_from_slice(&counts);
        acc.kappa1.push(r_max / scale);

        // --- neighbor lists for this level -------------------------------
        let slack = neighbor_slack * scale;
        let brute = level_count <= ALL_PAIRS_LIMIT || r_max > RADIUS_GUARD * scale;
        let center_at =
            |q: usize| &centers[(level_start + q) * n..(level_start + q + 1) * n];
        let within = |i: usize, j: usize| {
            let thr = (radius[i] + radius[j] + slack).min(std::f64::consts::PI);
            dot(center_at(i), center_at(j)) > thr.cos()
        };
        let mut neighbors: Vec<Vec<u32>> = vec![Vec::new(); level_count];
        if brute {
            let forward: Vec<Vec<u32>> = (0..level_count)
                .into_par_iter()
                .map(|i| {
                    (i + 1..level_count)
                        .filter(|&j| within(i, j))
                        .map(|j| j as u32)
                        .collect()
                })
                .collect();
            mirror(&forward, &mut neighbors);
        } else {
            let forward: Vec<Vec<u32>> = (0..level_count)
                .into_par_iter()
                .map(|i| {
                    let g = (level_start + i) as CubeId;
                    let plocal = parents[g as usize] as usize - prev_start;
                    let mut out = Vec::new();
                    let scan = |qs: &Vec<CubeId>, out: &mut Vec<u32>| {
                        for &q in qs {
                            let j = q as usize - level_start;
                            if j > i && within(i, j) {
                                out.push(j as u32);
                            }
                        }
                    };
                    scan(&accepted_in[plocal], &mut out);
                    for &r in &prev_neighbors[plocal] {
                        scan(&accepted_in[r as usize], &mut out);
                    }
                    out.sort_unstable();
                    out
                })
                .collect();
            mirror(&forward, &mut neighbors);
        }

        // --- in-radius: nearest foreign candidate per cube ---------------
        let shards: Vec<Vec<f64>> = crate::rng::map_shards(m, |_, range| {
            let mut best = vec![f64::NEG_INFINITY; level_count];
            for c in range {
                let clocal = new_cell[c] as usize - level_start;
                let pc = pt(c);
                for &r in &neighbors[clocal] {
                    let d = dot(pc, center_at(r as usize));
                    if d > best[r as usize] {
                        best[r as usize] = d;
                    }
                }
            }
            best
        });
        let mut best = vec![f64::NEG_INFINITY; level_count];
        for sh in shards {
            for i in 0..level_count {
                if sh[i] > best[i] {
                    best[i] = sh[i];
                }
            }
        }
        let mut k0_min = f64::INFINITY;
        for b in &best {
            let r = if b.is_finite() { b.clamp(-1.0, 1.0).acos().min(scale) } else { scale };
            acc.in_radius.push(r);
            k0_min = k0_min.min(r);
        }
        acc.kappa0.push(k0_min / scale);

        cand_cell = new_cell;
        net_idx = new_net_idx;
        prev_neighbors = neighbors;
        prev_start = level_start;
        prev_radius = radius;
    }
    let _ = prev_radius;

    finish_tree(p, acc, cand)
}

fn cell_center<'a>(acc: &'a Accum, n: usize, q: CubeId) -> &'a [f64] {
    &acc.centers[q as usize * n..(q as usize + 1) * n]
}

fn mirror(forward: &[Vec<u32>], neighbors: &mut [Vec<u32>]) {
    for (i, f) in forward.iter().enumerate() {
        for &j in f {
            neighbors[i].push(j);
            neighbors[j as usize].push(i as u32);
        }
    }
    for l in neighbors.iter_mut() {
        l.sort_unstable();
    }
}

fn min_dot_to(cand: &[f64], n: usize, center: &[f64]) -> f64 {
    let m = cand.len() / n;
    crate::rng::map_shards(m, |_, range| {
        let mut md = f64::INFINITY;
        for i in range {
            let d = dot(&cand[i * n..(i + 1) * n], center);
            if d < md {
                md = d;
            }
        }
        md
    })
    .into_iter()
    .fold(f64::INFINITY, f64::min)
}

/// Children CSR, cell-measure fractions, and the bottom-up diameter pass.
fn finish_tree(p: &FamilyParams, acc: Accum, _cand: &[f64]) -> Result<CubeTree, DyadicError> {
    let n = p.n;
    let count = acc.parent.len();
    let mut child_lists: Vec<Vec<CubeId>> = vec![Vec::new(); count];
    for q in 0..count {
        let pr = acc.parent[q];
        if pr != NO_PARENT {
            child_lists[pr as usize].push(q as CubeId);
        }
    }
    let mut children_off = Vec::with_capacity(count + 1);
    let mut children = Vec::new();
    children_off.push(0u32);
    for l in &child_lists {
        children.extend_from_slice(l);
        children_off.push(children.len() as u32);
    }

    let sigma_hat: Vec<f64> = acc
        .sigma_count
        .iter()
        .map(|c| *c as f64 / p.net_candidates as f64)
        .collect();

    // diameter estimate: max pairwise angle over descendant leaf centers
    // plus twice the worst leaf out-radius, capped at pi
    let leaf_range = {
        let (a, b) = acc.level_ranges[p.depth - 1];
        a as usize..b as usize
    };
    let slack = 2.0
        * acc.out_radius[leaf_range.clone()]
            .iter()
            .cloned()
            .fold(0.0, f64::max);
    let mut diam_est = vec![0.0; count];
    let mut leaf_sets: Vec<Vec<u32>> = vec![Vec::new(); count];
    for q in leaf_range.clone() {
        leaf_sets[q] = vec![q as u32];
        diam_est[q] = slack.min(std::f64::consts::PI);
    }
    for level in (1..p.depth).rev() {
        let (a, b) = acc.level_ranges[level - 1];
        // gather children sets first (they belong to level+1, already final)
        for q in a as usize..b as usize {
            let mut set = Vec::new();
            for &c in &child_lists[q] {
                set.append(&mut leaf_sets[c as usize]);
            }
            leaf_sets[q] = set;
        }
        let diams: Vec<f64> = (a as usize..b as usize)
            .into_par_iter()
            .map(|q| {
                let set = &leaf_sets[q];
                let md = max_pairwise_angle(&acc.centers, n, set);
                (md + slack).min(std::f64::consts::PI)
            })
            .collect();
        for (q, d) in (a as usize..b as usize).zip(diams) {
            diam_est[q] = d;
        }
    }
    let height: Vec<f64> = diam_est.iter().map(|d| (d / 2.0).min(1.0)).collect();

    Ok(CubeTree {
        n,
        eta: p.eta,
        depth: p.depth,
        level_ranges: acc.level_ranges,
        level_of: acc.level_of,
        centers: acc.centers,
        parent: acc.parent,
        children_off,
        children,
        out_radius: acc.out_radius,
        in_radius: acc.in_radius,
        diam_est,
        height,
        sigma_hat,
        sigma_count: acc.sigma_count,
        kappa0: acc.kappa0,
        kappa1: acc.kappa1,
    })
}

fn max_pairwise_angle(centers: &[f64], n: usize, idxs: &[u32]) -> f64 {
    if idxs.len() < 2 {
        return 0.0;
    }
    let at = |q: u32| &centers[q as usize * n..(q as usize + 1) * n];
    let body = |range: std::ops::Range<usize>| {
        let mut md = f64::INFINITY;
        for i in range {
            let a = at(idxs[i]);
            for &jq in &idxs[i + 1..] {
                let d = dot(a, at(jq));
                if d < md {
                    md = d;
                }
            }
        }
        md
    };
    let md = if idxs.len() > 512 {
        (0..idxs.len() - 1)
            .collect::<Vec<_>>()
            .par_chunks(64)
            .map(|ch| body(ch[0]..ch[ch.len() - 1] + 1))
            .reduce(|| f64::INFINITY, f64::min)
    } else {
        body(0..idxs.len() - 1)
    };
    md.clamp(-1.0, 1.0).acos()
}
