mod oracles;

use anatomesh::synth::{band_of, default_classes, gen_organ, implant_mass, OrganRanges};
use anatomesh::zones::seed_voxels;
use anatomesh::Region;
use nalgebra::Vector3;
use oracles::checks::{self, jitter};
use oracles::random_connected_mask;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn mesh_losses_match_finite_differences() {
    checks::mesh_gradients(20, 1e-5).unwrap();
}

#[test]
fn zones_match_multi_source_bfs() {
    checks::zones_vs_bfs(50).unwrap();
}

#[test]
fn seed_voxels_are_distinct_nearest_free_voxels() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..10 {
        let mask = random_connected_mask(&mut rng, [16, 16, 16], 400);
        let points: Vec<Vector3<f64>> = (0..12).map(|_| jitter(&mut rng, 8.0) + Vector3::repeat(8.0)).collect();
        let seeds = seed_voxels(&points, &mask).unwrap();
        let mut taken: Vec<usize> = Vec::new();
        for (p, &s) in points.iter().zip(&seeds) {
            let best = mask
                .indices()
                .filter(|i| !taken.contains(i))
                .map(|i| (mask.grid.world(i) - p).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(((mask.grid.world(s) - p).norm() - best).abs() < 1e-12);
            taken.push(s);
        }
    }
}

#[test]
fn hundred_masses_per_class_respect_region_bands() {
    let ranges = OrganRanges::default();
    for class in default_classes() {
        let Some(spec) = class.mass else { continue };
        let mut violations = 0;
        for seed in 0..100u64 {
            let organ = gen_organ(seed, &ranges).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
            let labels = implant_mass(&organ, &spec, &mut rng).unwrap();
            let centroid = labels.mask_eq(spec.label).centroid().unwrap();
            let band = band_of(organ.centerline.project(&centroid));
            if !spec.regions.contains(&band) {
                violations += 1;
            }
            if spec.regions == [Region::Head] {
                assert_eq!(band, Region::Head);
            }
        }
        assert_eq!(violations, 0, "{}", class.name);
    }
}
