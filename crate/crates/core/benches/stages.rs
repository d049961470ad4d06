use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use strikedip::noise_filter::filter_outliers;
use strikedip::region_plane::build_region_plane;
use strikedip::segmentation::{grow_regions, knn_index, GrowParams};
use strikedip::synth::{generate_synthetic, reference_scene};
use strikedip::voxel_fit::{build_grid, fit_all};
use strikedip::{run_on_cloud, RunConfig};

#[cfg(feature = "parallel")]
fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let all = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut sizes = vec![1];
    if all > 1 {
        sizes.push(all);
    }
    sizes
        .into_iter()
        .map(|n| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .unwrap();
            (format!("{n}-threads"), pool)
        })
        .collect()
}

#[cfg(feature = "parallel")]
fn on_each_pool(c: &mut Criterion, group: &str, f: impl Fn() + Sync) {
    let mut g = c.benchmark_group(group);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(&f))
        });
    }
    g.finish();
}

#[cfg(not(feature = "parallel"))]
fn on_each_pool(c: &mut Criterion, group: &str, f: impl Fn() + Sync) {
    let mut g = c.benchmark_group(group);
    g.bench_function(BenchmarkId::from_parameter("sequential"), |b| b.iter(&f));
    g.finish();
}

fn stages(c: &mut Criterion) {
    let syn = generate_synthetic(&reference_scene(1)).unwrap();
    let config = RunConfig::default();
    let (cloud, _) = filter_outliers(&syn.cloud, config.sigma).unwrap();
    let grid = build_grid(&cloud, config.zeta).unwrap();
    let fits = fit_all(&grid, &cloud, config.min_points);
    let params = GrowParams::default();
    let seg = grow_regions(&fits.planes, &params).unwrap();

    on_each_pool(c, "filter", || {
        filter_outliers(&syn.cloud, config.sigma).unwrap();
    });
    on_each_pool(c, "voxel_fit", || {
        let g = build_grid(&cloud, config.zeta).unwrap();
        fit_all(&g, &cloud, config.min_points);
    });
    on_each_pool(c, "knn", || {
        knn_index(&fits.planes, params.k);
    });
    on_each_pool(c, "region_planes", || {
        strikedip::par::map(&seg.regions, |r| {
            build_region_plane(r, &fits.planes, &grid, &cloud, true).unwrap()
        });
    });
    on_each_pool(c, "pipeline", || {
        run_on_cloud(&syn.cloud, Some(&syn.truth), &config).unwrap();
    });
}

criterion_group!(benches, stages);
criterion_main!(benches);
