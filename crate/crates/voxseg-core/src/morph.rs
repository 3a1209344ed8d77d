//! Connected components and morphological mask trimming.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::volume::Mask;

/// Neighborhood definition for component labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Six,
    TwentySix,
}

impl Connectivity {
    fn offsets(&self) -> Vec<[isize; 3]> {
        match self {
            Connectivity::Six => vec![
                [1, 0, 0],
                [-1, 0, 0],
                [0, 1, 0],
                [0, -1, 0],
                [0, 0, 1],
                [0, 0, -1],
            ],
            Connectivity::TwentySix => {
                let mut out = Vec::with_capacity(26);
                for dz in -1isize..=1 {
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            if dx != 0 || dy != 0 || dz != 0 {
                                out.push([dx, dy, dz]);
                            }
                        }
                    }
                }
                out
            }
        }
    }
}

/// Foreground partition into connected components.
///
/// Component ids are contiguous `1..=K`, ordered by decreasing size with
/// ties broken by the smallest linear index of the first voxel; background
/// is 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentLabeling {
    /// Per-voxel component id, geometry matching the input mask.
    pub labels: Vec<u32>,
    /// `sizes[k - 1]` is the voxel count of component `k`.
    pub sizes: Vec<usize>,
}

impl ComponentLabeling {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }
}

/// Label connected foreground components with breadth-first flood fill.
pub fn connected_components(m: &Mask, connectivity: Connectivity) -> ComponentLabeling {
    let [nx, ny, nz] = m.dims();
    let n = nx * ny * nz;
    let offsets = connectivity.offsets();
    let data = m.data();
    let mut labels = vec![0u32; n];
    // discovery order: scanning in linear order means the BFS seed is the
    // component's smallest linear index
    let mut comps: Vec<(usize, usize)> = Vec::new(); // (first index, size)
    let mut queue = VecDeque::new();

    for start in 0..n {
        if data[start] == 0 || labels[start] != 0 {
            continue;
        }
        let provisional = comps.len() as u32 + 1;
        let mut size = 0usize;
        labels[start] = provisional;
        queue.push_back(start);
        while let Some(idx) = queue.pop_front() {
            size += 1;
            let x = idx % nx;
            let y = (idx / nx) % ny;
            let z = idx / (nx * ny);
            for off in &offsets {
                let sx = x as isize + off[0];
                let sy = y as isize + off[1];
                let sz = z as isize + off[2];
                if sx < 0
                    || sy < 0
                    || sz < 0
                    || sx >= nx as isize
                    || sy >= ny as isize
                    || sz >= nz as isize
                {
                    continue;
                }
                let nidx = sx as usize + nx * (sy as usize + ny * sz as usize);
                if data[nidx] == 1 && labels[nidx] == 0 {
                    labels[nidx] = provisional;
                    queue.push_back(nidx);
                }
            }
        }
        comps.push((start, size));
    }

    // rank: size descending, then first linear index ascending
    let mut order: Vec<usize> = (0..comps.len()).collect();
    order.sort_by(|&a, &b| {
        comps[b]
            .1
            .cmp(&comps[a].1)
            .then(comps[a].0.cmp(&comps[b].0))
    });
    let mut remap = vec![0u32; comps.len() + 1];
    for (rank, &old) in order.iter().enumerate() {
        remap[old + 1] = rank as u32 + 1;
    }
    for l in labels.iter_mut() {
        if *l != 0 {
            *l = remap[*l as usize];
        }
    }
    let sizes: Vec<usize> = order.iter().map(|&i| comps[i].1).collect();
    ComponentLabeling { labels, sizes }
}

/// Keep the dominant components, then smooth with one pass of 6-connectivity
/// morphological closing (dilate then erode with a 3x3x3 cross).
///
/// The largest component always survives; others survive when their size
/// reaches `min_fraction` of the largest. At the default `min_fraction` of
/// 1.0 strictly one component survives, ties broken toward the smaller
/// first linear index through the component ordering.
pub fn trim_mask(m: &Mask, min_fraction: f64) -> Mask {
    let labeling = connected_components(m, Connectivity::Six);
    if labeling.sizes.is_empty() {
        return m.clone();
    }
    let largest = labeling.sizes[0] as f64;
    let keep: Vec<bool> = labeling
        .sizes
        .iter()
        .enumerate()
        .map(|(i, &s)| i == 0 || (min_fraction < 1.0 && s as f64 >= min_fraction * largest))
        .collect();
    let kept: Vec<u8> = labeling
        .labels
        .iter()
        .map(|&l| (l != 0 && keep[(l - 1) as usize]) as u8)
        .collect();
    let closed = close6(&kept, m.dims());
    Mask::new(m.dims(), m.spacing_mm(), closed).expect("geometry preserved")
}

const CROSS: [[isize; 3]; 7] = [
    [0, 0, 0],
    [1, 0, 0],
    [-1, 0, 0],
    [0, 1, 0],
    [0, -1, 0],
    [0, 0, 1],
    [0, 0, -1],
];

/// One closing pass. Erosion treats out-of-volume positions as foreground so
/// that closing stays extensive at the boundary.
fn close6(data: &[u8], dims: [usize; 3]) -> Vec<u8> {
    let [nx, ny, nz] = dims;
    let idx = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);
    let mut dilated = vec![0u8; data.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let mut v = 0;
                for off in &CROSS {
                    let sx = x as isize + off[0];
                    let sy = y as isize + off[1];
                    let sz = z as isize + off[2];
                    if sx < 0
                        || sy < 0
                        || sz < 0
                        || sx >= nx as isize
                        || sy >= ny as isize
                        || sz >= nz as isize
                    {
                        continue;
                    }
                    if data[idx(sx as usize, sy as usize, sz as usize)] == 1 {
                        v = 1;
                        break;
                    }
                }
                dilated[idx(x, y, z)] = v;
            }
        }
    }
    let mut eroded = vec![0u8; data.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let mut v = 1;
                for off in &CROSS {
                    let sx = x as isize + off[0];
                    let sy = y as isize + off[1];
                    let sz = z as isize + off[2];
                    if sx < 0
                        || sy < 0
                        || sz < 0
                        || sx >= nx as isize
                        || sy >= ny as isize
                        || sz >= nz as isize
                    {
                        continue; // outside counts as set
                    }
                    if dilated[idx(sx as usize, sy as usize, sz as usize)] == 0 {
                        v = 0;
                        break;
                    }
                }
                eroded[idx(x, y, z)] = v;
            }
        }
    }
    eroded
}
