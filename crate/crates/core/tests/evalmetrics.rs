use holo_core::evalmetrics::*;
use holo_core::rng::SeedStream;
use holo_core::synth::{BinaryMask, Grid, Modality, Volume};
use proptest::prelude::*;

fn random_mask(g: Grid, density: f64, r: &mut SeedStream) -> BinaryMask {
    BinaryMask::new(g, (0..g.len()).map(|_| r.uniform() < density).collect()).unwrap()
}

/// Components by pairwise Chebyshev adjacency over the set voxels.
fn oracle_components(m: &BinaryMask) -> Vec<Vec<usize>> {
    let on: Vec<usize> = (0..m.voxels.len()).filter(|&i| m.voxels[i]).collect();
    let mut parent: Vec<usize> = (0..on.len()).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        p[i] = r;
        r
    }
    for a in 0..on.len() {
        let pa = m.grid.coords(on[a]);
        for b in a + 1..on.len() {
            let pb = m.grid.coords(on[b]);
            if (0..3).all(|k| pa[k].abs_diff(pb[k]) <= 1) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra] = rb;
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for k in 0..on.len() {
        let r = find(&mut parent, k);
        groups.entry(r).or_default().push(on[k]);
    }
    groups.into_values().collect()
}

fn oracle_missed_ml(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let n: usize = oracle_components(a)
        .iter()
        .filter(|c| c.iter().all(|&i| !b.voxels[i]))
        .map(Vec::len)
        .sum();
    n as f64 * a.grid.voxel_ml()
}

#[test]
fn metrics_match_brute_force_oracle() {
    let g = Grid::new([16; 3], [2.0, 2.0, 3.0]).unwrap();
    let mut r = SeedStream::new(42);
    for _ in 0..100 {
        let density = r.uniform_range(0.01, 0.08);
        let p = random_mask(g, density, &mut r);
        let t = random_mask(g, density, &mut r);
        let inter = p.voxels.iter().zip(&t.voxels).filter(|(a, b)| **a && **b).count();
        let expect = 2.0 * inter as f64 / (p.count() + t.count()) as f64;
        assert_eq!(dsc(&p, &t).unwrap(), expect);
        assert_eq!(fnv(&p, &t).unwrap(), oracle_missed_ml(&t, &p));
        assert_eq!(fpv(&p, &t).unwrap(), oracle_missed_ml(&p, &t));
        // Symmetry and duality.
        assert_eq!(dsc(&p, &t).unwrap(), dsc(&t, &p).unwrap());
        assert_eq!(fnv(&p, &t).unwrap(), fpv(&t, &p).unwrap());
    }
}

#[test]
fn adding_a_correct_voxel_never_hurts() {
    let g = Grid::new([8; 3], [1.0; 3]).unwrap();
    let mut r = SeedStream::new(7);
    for _ in 0..50 {
        let mut p = random_mask(g, 0.05, &mut r);
        let t = random_mask(g, 0.1, &mut r);
        let Some(i) = (0..g.len()).find(|&i| t.voxels[i] && !p.voxels[i]) else { continue };
        let (d0, f0) = (dsc(&p, &t).unwrap(), fnv(&p, &t).unwrap());
        p.voxels[i] = true;
        assert!(dsc(&p, &t).unwrap() >= d0);
        assert!(fnv(&p, &t).unwrap() <= f0);
    }
}

#[test]
fn sliding_window_coverage_and_seams() {
    let mut r = SeedStream::new(3);
    for _ in 0..5 {
        let dims = [0; 3].map(|_| r.int_inclusive(20, 60) as usize);
        let g = Grid::new(dims, [1.0; 3]).unwrap();
        let ct = Volume::filled(g, Modality::Ct, 0.0);
        let pet = Volume::filled(g, Modality::Pet, 0.0);
        let sw = SlidingWindow {
            window: [16; 3],
            overlap: 0.5,
            ..Default::default()
        };
        let mut hits = vec![0usize; g.len()];
        let map = sw
            .infer(&ct, &pet, |w| {
                for i in 0..w.grid.len() {
                    let c = w.grid.coords(i);
                    let p = [0, 1, 2].map(|a| c[a] + w.origin[a]);
                    hits[g.index(p[0], p[1], p[2])] += 1;
                }
                Ok(vec![0.731; w.grid.len()])
            })
            .unwrap();
        assert!(hits.iter().all(|&h| h >= 1));
        assert!(map.values.iter().all(|v| (v - 0.731).abs() < 1e-9));
    }
}

proptest! {
    #[test]
    fn text_scores_are_bounded(
        c in prop::collection::vec(0u8..6, 0..12),
        r in prop::collection::vec(0u8..6, 1..12),
    ) {
        let c: Vec<String> = c.iter().map(|k| k.to_string()).collect();
        let r: Vec<String> = r.iter().map(|k| k.to_string()).collect();
        let s = text_scores(&c, &r).unwrap();
        for v in s.bleu.iter().chain([&s.rouge_l]) {
            prop_assert!((0.0..=1.0).contains(v));
        }
        prop_assert_eq!(s.rouge_l == 1.0, c == r);
        if c == r {
            prop_assert!(s.bleu.iter().all(|&b| b == 1.0));
        }
    }
}
