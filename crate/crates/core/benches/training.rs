use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use leadlag::c2rm::featurize;
use leadlag::eval::{draw_lags, generate_synthetic, SyntheticMarketSpec};
use leadlag::ingest::{segment_windows, WindowSpec};
use leadlag::nn::{Architecture, ModelParams, ModelSpec};
use leadlag::{Execution, FeatureMethod, LagDirection};
use ndarray::Array2;

fn bench_gradient(c: &mut Criterion) {
    let frame = generate_synthetic(&SyntheticMarketSpec {
        lags: draw_lags(7, &[6, 12, 18], 0),
        noise_sigma: 0.01,
        len: 4200,
        seed: 0,
    })
    .unwrap();
    let windows = segment_windows(&frame, WindowSpec::default()).unwrap();
    let method = FeatureMethod::Asyn { n: 4 };
    let features: Vec<Array2<f64>> = featurize(&windows, method, LagDirection::AssetLeads, Execution::Sequential)
        .unwrap()
        .into_iter()
        .map(|f| f.features)
        .collect();
    let labels: Vec<Vec<f64>> = windows.iter().map(|w| w.label.clone()).collect();

    let mut group = c.benchmark_group("loss_and_grad");
    for arch in [Architecture::Birnn, Architecture::Bilstm, Architecture::Bigru, Architecture::SmartMlp] {
        let params = ModelParams::init(ModelSpec::new(arch, method.width(7)), 0).unwrap();
        for exec in [Execution::Sequential, Execution::Parallel] {
            group.bench_with_input(BenchmarkId::new(arch.name(), format!("{exec:?}")), &exec, |b, &exec| {
                b.iter(|| params.loss_and_grad(&features, &labels, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_gradient);
criterion_main!(benches);
