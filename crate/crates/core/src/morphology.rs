//! Connected-component labelling on voxel grids.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Connectivity {
    /// Face neighbours.
    Six,
    /// Face, edge and corner neighbours.
    #[default]
    TwentySix,
}

impl Connectivity {
    pub fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::with_capacity(26);
        for dz in -1..=1isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::TwentySix => manhattan > 0,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

/// Component labelling result; `labels[i] == 0` means voxel `i` was excluded.
#[derive(Clone, Debug, PartialEq)]
pub struct Components {
    pub labels: Vec<u32>,
    /// `sizes[k]` is the voxel count of component `k + 1`.
    pub sizes: Vec<usize>,
}

impl Components {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn size_of(&self, label: u32) -> usize {
        self.sizes[label as usize - 1]
    }
}

/// Visit the in-bounds neighbours of voxel `i`.
#[inline]
pub fn for_each_neighbor(dims: [usize; 3], i: usize, offsets: &[[isize; 3]], mut f: impl FnMut(usize)) {
    let x = (i % dims[0]) as isize;
    let y = ((i / dims[0]) % dims[1]) as isize;
    let z = (i / (dims[0] * dims[1])) as isize;
    for o in offsets {
        let (nx, ny, nz) = (x + o[0], y + o[1], z + o[2]);
        if nx < 0 || ny < 0 || nz < 0 {
            continue;
        }
        let (nx, ny, nz) = (nx as usize, ny as usize, nz as usize);
        if nx >= dims[0] || ny >= dims[1] || nz >= dims[2] {
            continue;
        }
        f(nx + dims[0] * (ny + dims[1] * nz));
    }
}

/// Label components of voxels with `include(i)`; neighbours join a
/// component only when `key` agrees with the seed voxel.
pub fn label_components_by<K: PartialEq>(
    dims: [usize; 3],
    conn: Connectivity,
    include: impl Fn(usize) -> bool,
    key: impl Fn(usize) -> K,
) -> Components {
    let n = dims.iter().product();
    let offsets = conn.offsets();
    let mut labels = vec![0u32; n];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for seed in 0..n {
        if labels[seed] != 0 || !include(seed) {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        let seed_key = key(seed);
        labels[seed] = label;
        stack.push(seed);
        let mut size = 0;
        while let Some(v) = stack.pop() {
            size += 1;
            for_each_neighbor(dims, v, &offsets, |nb| {
                if labels[nb] == 0 && include(nb) && key(nb) == seed_key {
                    labels[nb] = label;
                    stack.push(nb);
                }
            });
        }
        sizes.push(size);
    }
    Components { labels, sizes }
}

/// Components of a boolean mask.
pub fn label_components(dims: [usize; 3], mask: &[bool], conn: Connectivity) -> Components {
    label_components_by(dims, conn, |i| mask[i], |_| ())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offset_counts() {
        assert_eq!(Connectivity::Six.offsets().len(), 6);
        assert_eq!(Connectivity::TwentySix.offsets().len(), 26);
    }

    #[test]
    fn diagonal_voxels_join_only_under_26() {
        let dims = [3, 3, 3];
        let mut m = vec![false; 27];
        m[0] = true; // (0,0,0)
        m[1 + 3 + 9] = true; // (1,1,1)
        assert_eq!(label_components(dims, &m, Connectivity::TwentySix).count(), 1);
        assert_eq!(label_components(dims, &m, Connectivity::Six).count(), 2);
    }
}
