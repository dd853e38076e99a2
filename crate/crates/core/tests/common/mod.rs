//! Naive reference implementations shared by integration tests.
#![allow(dead_code)]

use netgee::Network;
use rand::Rng;

/// All-pairs shortest path lengths by Floyd-Warshall; `None` when unreachable.
pub fn all_pairs(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<Option<u32>>> {
    let inf = u32::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for (j, row) in d.iter_mut().enumerate() {
        row[j] = 0;
    }
    for &(u, v) in edges {
        d[u][v] = 1;
        d[v][u] = 1;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d.into_iter().map(|row| row.into_iter().map(|x| (x < inf).then_some(x)).collect()).collect()
}

/// Pearson correlation of excess degrees over both orientations of every edge.
pub fn pearson_assortativity(n: usize, edges: &[(usize, usize)]) -> Option<f64> {
    let mut deg = vec![0usize; n];
    for &(u, v) in edges {
        deg[u] += 1;
        deg[v] += 1;
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &(u, v) in edges {
        for (a, b) in [(u, v), (v, u)] {
            xs.push(deg[a] as f64 - 1.0);
            ys.push(deg[b] as f64 - 1.0);
        }
    }
    if xs.is_empty() {
        return None;
    }
    let len = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / len;
    let my = ys.iter().sum::<f64>() / len;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if vx <= 1e-12 || vy <= 1e-12 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

/// Rows of X1..X12 computed from the definitions with all-pairs distances.
pub fn naive_features(
    n: usize,
    edges: &[(usize, usize)],
    blocks: Option<&[u16]>,
    affected: &[usize],
    core_blocks: &[u16],
) -> Vec<[f64; 12]> {
    let d = all_pairs(n, edges);
    let mut adj = vec![vec![false; n]; n];
    for &(u, v) in edges {
        adj[u][v] = true;
        adj[v][u] = true;
    }
    let deg: Vec<usize> = (0..n).map(|j| adj[j].iter().filter(|&&e| e).count()).collect();
    let comp_size: Vec<usize> = (0..n).map(|j| d[j].iter().filter(|x| x.is_some()).count()).collect();
    // Each component of size s contributes s nodes of weight 1/s.
    let components: f64 = comp_size.iter().map(|&s| 1.0 / s as f64).sum::<f64>().round();
    let largest = comp_size.iter().copied().max().unwrap_or(0) as f64;
    let r = pearson_assortativity(n, edges).unwrap_or(0.0);
    let is_aff = |j: usize| affected.contains(&j);
    let mut sorted_aff = affected.to_vec();
    sorted_aff.sort_unstable();
    sorted_aff.dedup();
    (0..n)
        .map(|j| {
            let k = deg[j];
            let nbr_deg: usize = (0..n).filter(|&v| adj[j][v]).map(|v| deg[v]).sum();
            let x2 = if k == 0 { 0.0 } else { nbr_deg as f64 / k as f64 };
            let x4 = match blocks {
                Some(b) if core_blocks.contains(&b[j]) => 1.0,
                _ => 0.0,
            };
            let x9 = (0..n).filter(|&v| adj[j][v] && is_aff(v)).count() as f64;
            let x10 = (0..n).filter(|&v| d[j][v].is_some() && is_aff(v)).count() as f64;
            let mut nearest: Option<u32> = None;
            let mut x12 = 0.0;
            for &a in &sorted_aff {
                if let Some(dist) = d[j][a] {
                    if dist > 0 {
                        nearest = Some(nearest.map_or(dist, |m| m.min(dist)));
                        x12 += 1.0 / dist as f64;
                    }
                }
            }
            let x11 = nearest.map_or(0.0, |m| 1.0 / m as f64);
            [
                k as f64,
                x2,
                r,
                x4,
                largest,
                if components > 0.0 { n as f64 / components } else { 0.0 },
                components,
                comp_size[j] as f64,
                x9,
                x10,
                x11,
                x12,
            ]
        })
        .collect()
}

/// A random simple graph on `n` nodes with each pair present with prob `p`.
pub fn random_graph<R: Rng>(n: usize, p: f64, rng: &mut R) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    edges
}

/// Compares `compute_features` against the naive oracle; returns the first
/// mismatch as a message.
pub fn check_features(
    net: &Network,
    edges: &[(usize, usize)],
    affected: &[usize],
) -> Result<(), String> {
    let cfg = netgee::features::FeatureConfig::default();
    let fm = netgee::features::compute_features(net, affected, &cfg).map_err(|e| e.to_string())?;
    let want = naive_features(net.node_count(), edges, net.blocks(), affected, &cfg.core_blocks);
    for (j, row) in want.iter().enumerate() {
        for (c, &w) in row.iter().enumerate() {
            let got = fm.get(j, c);
            // Assortativity uses a different summation order; everything else is exact.
            let ok = if c == 2 { (got - w).abs() < 1e-12 } else { got == w };
            if !ok {
                return Err(format!("node {j} X{}: got {got}, want {w}; edges {edges:?}, affected {affected:?}", c + 1));
            }
        }
    }
    Ok(())
}

/// OLS of cluster means on `(1, A)` with the HC0 robust covariance, coded from
/// the 2x2 formulas.
pub fn hc0_cluster_means(ybar: &[f64], exposed: &[bool]) -> ([f64; 2], [[f64; 2]; 2]) {
    let m = ybar.len() as f64;
    let a: Vec<f64> = exposed.iter().map(|&e| f64::from(u8::from(e))).collect();
    let (sa, saa) = (a.iter().sum::<f64>(), a.iter().map(|x| x * x).sum::<f64>());
    let (sy, say) = (ybar.iter().sum::<f64>(), a.iter().zip(ybar).map(|(x, y)| x * y).sum::<f64>());
    let det = m * saa - sa * sa;
    let inv = [[saa / det, -sa / det], [-sa / det, m / det]];
    let b0 = inv[0][0] * sy + inv[0][1] * say;
    let b1 = inv[1][0] * sy + inv[1][1] * say;
    let mut meat = [[0.0; 2]; 2];
    for (ai, yi) in a.iter().zip(ybar) {
        let e = yi - b0 - b1 * ai;
        let x = [1.0, *ai];
        for r in 0..2 {
            for c in 0..2 {
                meat[r][c] += e * e * x[r] * x[c];
            }
        }
    }
    let mut cov = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    cov[r][c] += inv[r][k] * meat[k][l] * inv[l][c];
                }
            }
        }
    }
    ([b0, b1], cov)
}

/// Pooled-mean difference `mean(Y | A=1) − mean(Y | A=0)` over all nodes.
pub fn pooled_difference(ys: &[Vec<f64>], exposed: &[bool]) -> [f64; 2] {
    let mut sums = [0.0; 2];
    let mut counts = [0.0; 2];
    for (y, &e) in ys.iter().zip(exposed) {
        let arm = usize::from(e);
        sums[arm] += y.iter().sum::<f64>();
        counts[arm] += y.len() as f64;
    }
    let (m0, m1) = (sums[0] / counts[0], sums[1] / counts[1]);
    [m0, m1 - m0]
}
