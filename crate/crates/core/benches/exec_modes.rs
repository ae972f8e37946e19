// SPDX-License-Identifier: Apache-2.0

//! Sequential against parallel execution on each data-parallel workload.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use scmmi::analysis::{metrics_report, AnalysisOptions};
use scmmi::exec::{self, ExecMode};
use scmmi::scenario::{presets, run_presets};
use scmmi::solver::{run, RecorderSpec};
use scmmi::switching::{LadderSubModule, StateClass, SwitchVector};
use scmmi::topology::LevelCount;
use scmmi::SystemConfig;

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn legal_count(sm: &LadderSubModule, mode: ExecMode) -> usize {
    let ns = sm.levels().switches();
    exec::map_range(mode, 1 << ns, |bits| {
        let v = SwitchVector::from_bits(bits as u64, ns);
        matches!(sm.classify(&v), Ok(StateClass::Legal(_)))
    })
    .into_iter()
    .filter(|&legal| legal)
    .count()
}

fn state_enumeration(c: &mut Criterion) {
    let mut group = c.benchmark_group("state_enumeration");
    for levels in [9u32, 11] {
        let sm = LadderSubModule::new(LevelCount::new(levels).expect("odd level count"));
        for (name, mode) in MODES {
            group.bench_with_input(BenchmarkId::new(name, levels), &sm, |b, sm| {
                b.iter(|| legal_count(black_box(sm), mode))
            });
        }
    }
    group.finish();
}

fn scenario_sweep(c: &mut Criterion) {
    let short: Vec<_> = presets()
        .into_iter()
        .map(|mut p| {
            p.config.duration = 0.04;
            p.expected.clear();
            p
        })
        .collect();
    let mut group = c.benchmark_group("scenario_sweep");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(name, |b| b.iter(|| run_presets(black_box(&short), mode)));
    }
    group.finish();
}

fn channel_analysis(c: &mut Criterion) {
    let cfg = SystemConfig { duration: 0.1, ..SystemConfig::default() };
    let rec = run(&cfg, &RecorderSpec::from_config(&cfg)).expect("default config runs").record;
    let mut group = c.benchmark_group("channel_analysis");
    for (name, mode) in MODES {
        let opts = AnalysisOptions { mode, ..AnalysisOptions::default() };
        group.bench_function(name, |b| b.iter(|| metrics_report(black_box(&rec), cfg.fundamental_f, &opts)));
    }
    group.finish();
}

criterion_group!(benches, state_enumeration, scenario_sweep, channel_analysis);
criterion_main!(benches);
