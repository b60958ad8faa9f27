//! Binary voxel-mask helpers: a padded sub-grid around a labeled body, an
//! exact anisotropic Euclidean distance transform, and 26-connectivity.
//!
//! Ball erosion by radius `r` keeps exactly the voxels whose distance to the
//! nearest background voxel centre exceeds `r`, so both the phantom renderer
//! (cortical shell) and the densitometry erosion go through
//! [`SubGrid::squared_distance_to_background`].

const FAR: f64 = 1e30;

/// Dense boolean mask over an axis-aligned box of a larger grid. The box may
/// extend past the grid by the padding, those voxels are always background.
#[derive(Debug, Clone)]
pub struct SubGrid {
    pub lo: [isize; 3],
    pub dims: [usize; 3],
    pub mask: Vec<bool>,
}

impl SubGrid {
    /// Builds a mask from voxel coordinates, padding the bounding box by `pad`
    /// voxels on every side. Returns `None` when `voxels` is empty.
    pub fn from_voxels(voxels: &[[usize; 3]], pad: usize) -> Option<Self> {
        let first = voxels.first()?;
        let mut lo = *first;
        let mut hi = *first;
        for v in voxels {
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        let pad_i = pad as isize;
        let lo = [
            lo[0] as isize - pad_i,
            lo[1] as isize - pad_i,
            lo[2] as isize - pad_i,
        ];
        let dims = [
            (hi[0] as isize - lo[0]) as usize + 1 + pad,
            (hi[1] as isize - lo[1]) as usize + 1 + pad,
            (hi[2] as isize - lo[2]) as usize + 1 + pad,
        ];
        let mut mask = vec![false; dims[0] * dims[1] * dims[2]];
        let mut grid = SubGrid { lo, dims, mask: Vec::new() };
        for v in voxels {
            mask[grid.local_index(*v)] = true;
        }
        grid.mask = mask;
        Some(grid)
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    #[inline]
    pub fn local_index(&self, v: [usize; 3]) -> usize {
        let x = (v[0] as isize - self.lo[0]) as usize;
        let y = (v[1] as isize - self.lo[1]) as usize;
        let z = (v[2] as isize - self.lo[2]) as usize;
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    /// Global voxel coordinate of a local index; `None` if it falls outside
    /// the non-negative quadrant (padding below zero).
    pub fn global_coord(&self, local: usize) -> Option<[usize; 3]> {
        let x = local % self.dims[0];
        let y = (local / self.dims[0]) % self.dims[1];
        let z = local / (self.dims[0] * self.dims[1]);
        let g = [
            self.lo[0] + x as isize,
            self.lo[1] + y as isize,
            self.lo[2] + z as isize,
        ];
        if g.iter().any(|&c| c < 0) {
            None
        } else {
            Some([g[0] as usize, g[1] as usize, g[2] as usize])
        }
    }

    /// Squared Euclidean distance (mm²) from every voxel centre to the nearest
    /// background voxel centre. Background voxels read 0.
    pub fn squared_distance_to_background(&self, spacing: [f64; 3]) -> Vec<f64> {
        let [nx, ny, nz] = self.dims;
        let mut dist: Vec<f64> = self.mask.iter().map(|&m| if m { FAR } else { 0.0 }).collect();

        let mut line = Vec::new();
        let mut out = Vec::new();
        // x
        for z in 0..nz {
            for y in 0..ny {
                let base = nx * (y + ny * z);
                line.clear();
                line.extend((0..nx).map(|x| dist[base + x]));
                distance_1d(&line, spacing[0], &mut out);
                dist[base..base + nx].copy_from_slice(&out[..nx]);
            }
        }
        // y
        for z in 0..nz {
            for x in 0..nx {
                line.clear();
                line.extend((0..ny).map(|y| dist[x + nx * (y + ny * z)]));
                distance_1d(&line, spacing[1], &mut out);
                for y in 0..ny {
                    dist[x + nx * (y + ny * z)] = out[y];
                }
            }
        }
        // z
        for y in 0..ny {
            for x in 0..nx {
                line.clear();
                line.extend((0..nz).map(|z| dist[x + nx * (y + ny * z)]));
                distance_1d(&line, spacing[2], &mut out);
                for z in 0..nz {
                    dist[x + nx * (y + ny * z)] = out[z];
                }
            }
        }
        dist
    }

    /// Number of 26-connected foreground components.
    pub fn components_26(&self) -> usize {
        let [nx, ny, nz] = self.dims;
        let mut seen = vec![false; self.mask.len()];
        let mut stack = Vec::new();
        let mut components = 0;
        for start in 0..self.mask.len() {
            if !self.mask[start] || seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(i) = stack.pop() {
                let x = (i % nx) as isize;
                let y = ((i / nx) % ny) as isize;
                let z = (i / (nx * ny)) as isize;
                for dz in -1..=1 {
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            let (qx, qy, qz) = (x + dx, y + dy, z + dz);
                            if qx < 0
                                || qy < 0
                                || qz < 0
                                || qx >= nx as isize
                                || qy >= ny as isize
                                || qz >= nz as isize
                            {
                                continue;
                            }
                            let j = qx as usize + nx * (qy as usize + ny * qz as usize);
                            if self.mask[j] && !seen[j] {
                                seen[j] = true;
                                stack.push(j);
                            }
                        }
                    }
                }
            }
        }
        components
    }
}

/// Lower-envelope-of-parabolas squared distance transform along one line
/// (Felzenszwalb & Huttenlocher), with sample positions `k * step`.
fn distance_1d(f: &[f64], step: f64, out: &mut Vec<f64>) {
    let n = f.len();
    out.clear();
    out.resize(n, FAR);
    if n == 0 {
        return;
    }
    let pos = |k: usize| k as f64 * step;
    let mut v = vec![0usize; n];
    let mut bounds = vec![0f64; n + 1];
    let mut k = 0usize;
    v[0] = 0;
    bounds[0] = f64::NEG_INFINITY;
    bounds[1] = f64::INFINITY;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
            // bounds[0] is -inf, so this never underflows k
            if s <= bounds[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        bounds[k] = s;
        bounds[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, slot) in out.iter_mut().enumerate() {
        while bounds[k + 1] < pos(q) {
            k += 1;
        }
        let p = v[k];
        let d = pos(q) - pos(p);
        *slot = (d * d + f[p]).min(FAR);
    }
}
