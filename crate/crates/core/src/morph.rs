//! Binary morphology on x-fastest voxel grids.

use std::collections::VecDeque;

#[inline]
fn neighbors6(dims: [usize; 3], i: usize, mut f: impl FnMut(usize)) {
    let [nx, ny, nz] = dims;
    let x = i % nx;
    let y = (i / nx) % ny;
    let z = i / (nx * ny);
    if x > 0 {
        f(i - 1);
    }
    if x + 1 < nx {
        f(i + 1);
    }
    if y > 0 {
        f(i - nx);
    }
    if y + 1 < ny {
        f(i + nx);
    }
    if z > 0 {
        f(i - nx * ny);
    }
    if z + 1 < nz {
        f(i + nx * ny);
    }
}

/// Keeps the largest 6-connected foreground component. Ties go to the component
/// containing the lowest voxel index.
pub fn largest_component(dims: [usize; 3], fg: &[bool]) -> Vec<bool> {
    let n = fg.len();
    let mut label = vec![u32::MAX; n];
    let mut best: Option<(u32, usize)> = None;
    let mut queue = VecDeque::new();
    let mut next = 0u32;
    for seed in 0..n {
        if !fg[seed] || label[seed] != u32::MAX {
            continue;
        }
        let id = next;
        next += 1;
        label[seed] = id;
        queue.push_back(seed);
        let mut size = 0usize;
        while let Some(i) = queue.pop_front() {
            size += 1;
            neighbors6(dims, i, |j| {
                if fg[j] && label[j] == u32::MAX {
                    label[j] = id;
                    queue.push_back(j);
                }
            });
        }
        if best.is_none_or(|(_, s)| size > s) {
            best = Some((id, size));
        }
    }
    match best {
        Some((id, _)) => label.iter().map(|&l| l == id).collect(),
        None => vec![false; n],
    }
}

/// Fills background cavities not 6-connected to the volume border.
pub fn fill_holes(dims: [usize; 3], fg: &[bool]) -> Vec<bool> {
    let [nx, ny, nz] = dims;
    let n = fg.len();
    let mut outside = vec![false; n];
    let mut queue = VecDeque::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let border =
                    x == 0 || y == 0 || z == 0 || x + 1 == nx || y + 1 == ny || z + 1 == nz;
                let i = x + nx * (y + ny * z);
                if border && !fg[i] && !outside[i] {
                    outside[i] = true;
                    queue.push_back(i);
                }
            }
        }
    }
    while let Some(i) = queue.pop_front() {
        neighbors6(dims, i, |j| {
            if !fg[j] && !outside[j] {
                outside[j] = true;
                queue.push_back(j);
            }
        });
    }
    outside.iter().map(|&o| !o).collect()
}

/// 1-D lower envelope of parabolas (squared distance transform of a sampled function).
fn dt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], zc: &mut [f64]) {
    let meet = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    let mut k: Option<usize> = None;
    for q in 0..f.len() {
        if f[q].is_infinite() {
            continue;
        }
        let Some(mut kk) = k else {
            v[0] = q;
            zc[0] = f64::NEG_INFINITY;
            zc[1] = f64::INFINITY;
            k = Some(0);
            continue;
        };
        let mut s = meet(q, v[kk]);
        // zc[0] is -inf, so this stops at kk == 0
        while s <= zc[kk] {
            kk -= 1;
            s = meet(q, v[kk]);
        }
        kk += 1;
        v[kk] = q;
        zc[kk] = s;
        zc[kk + 1] = f64::INFINITY;
        k = Some(kk);
    }
    if k.is_none() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut kk = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while zc[kk + 1] < q as f64 {
            kk += 1;
        }
        let d = q as f64 - v[kk] as f64;
        *o = d * d + f[v[kk]];
    }
}

/// Squared Euclidean distance (in voxels) from every voxel to the nearest foreground voxel.
pub fn squared_distance(dims: [usize; 3], fg: &[bool]) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let mut d: Vec<f64> = fg
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();
    let max = nx.max(ny).max(nz);
    let mut line = vec![0.0; max];
    let mut out = vec![0.0; max];
    let mut v = vec![0usize; max];
    let mut zc = vec![0.0; max + 1];
    let strides = [1, nx, nx * ny];
    for axis in 0..3 {
        let len = dims[axis];
        let stride = strides[axis];
        for start in 0..d.len() {
            // visit each line once via its first element
            let coord = (start / stride) % len;
            if coord != 0 {
                continue;
            }
            for t in 0..len {
                line[t] = d[start + t * stride];
            }
            dt_1d(
                &line[..len],
                &mut out[..len],
                &mut v[..len],
                &mut zc[..len + 1],
            );
            for t in 0..len {
                d[start + t * stride] = out[t];
            }
        }
    }
    d
}

/// Dilation by a Euclidean ball of `radius` voxels.
pub fn dilate_ball(dims: [usize; 3], fg: &[bool], radius: usize) -> Vec<bool> {
    if radius == 0 {
        return fg.to_vec();
    }
    let r2 = (radius * radius) as f64;
    squared_distance(dims, fg)
        .iter()
        .map(|&d| d <= r2)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_dilate(dims: [usize; 3], fg: &[bool], r: usize) -> Vec<bool> {
        let [nx, ny, nz] = dims;
        let ri = r as i64;
        let mut out = vec![false; fg.len()];
        for z in 0..nz as i64 {
            for y in 0..ny as i64 {
                for x in 0..nx as i64 {
                    let mut hit = false;
                    'o: for dz in -ri..=ri {
                        for dy in -ri..=ri {
                            for dx in -ri..=ri {
                                if dx * dx + dy * dy + dz * dz > ri * ri {
                                    continue;
                                }
                                let (a, b, c) = (x + dx, y + dy, z + dz);
                                if a < 0
                                    || b < 0
                                    || c < 0
                                    || a >= nx as i64
                                    || b >= ny as i64
                                    || c >= nz as i64
                                {
                                    continue;
                                }
                                if fg[(a + nx as i64 * (b + ny as i64 * c)) as usize] {
                                    hit = true;
                                    break 'o;
                                }
                            }
                        }
                    }
                    out[(x + nx as i64 * (y + ny as i64 * z)) as usize] = hit;
                }
            }
        }
        out
    }

    #[test]
    fn ball_dilation_matches_brute_force() {
        let dims = [9, 7, 8];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for r in 0..4 {
            let fg: Vec<bool> = (0..9 * 7 * 8).map(|_| rng.gen_bool(0.03)).collect();
            assert_eq!(
                dilate_ball(dims, &fg, r),
                brute_dilate(dims, &fg, r),
                "r={r}"
            );
        }
    }

    #[test]
    fn empty_foreground_stays_empty() {
        let fg = vec![false; 27];
        assert!(dilate_ball([3, 3, 3], &fg, 2).iter().all(|&b| !b));
    }

    #[test]
    fn hole_is_filled_and_largest_kept() {
        let dims = [7, 7, 7];
        let mut fg = vec![false; 343];
        let idx = |x: usize, y: usize, z: usize| x + 7 * (y + 7 * z);
        for z in 1..6 {
            for y in 1..6 {
                for x in 1..6 {
                    fg[idx(x, y, z)] = true;
                }
            }
        }
        fg[idx(3, 3, 3)] = false;
        let filled = fill_holes(dims, &fg);
        assert!(filled[idx(3, 3, 3)]);
        assert!(!filled[idx(0, 0, 0)]);

        let mut two = vec![false; 343];
        two[idx(0, 0, 0)] = true;
        two[idx(5, 5, 5)] = true;
        two[idx(5, 5, 6)] = true;
        let kept = largest_component(dims, &two);
        assert!(!kept[idx(0, 0, 0)]);
        assert!(kept[idx(5, 5, 5)] && kept[idx(5, 5, 6)]);
    }
}
