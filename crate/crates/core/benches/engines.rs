use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use jumpmfg::density::{char_fn_grid, FourierSpec, InitialLaw};
use jumpmfg::exec::Execution;
use jumpmfg::montecarlo::{simulate_controlled, SimulationSpec};
use jumpmfg::riccati::{solve_numeric, RiccatiSolution};
use jumpmfg::{CoefficientSchedule, JumpDistribution, MfgProblem, TerminalData};

fn scenario() -> (RiccatiSolution, JumpDistribution) {
    let jump = JumpDistribution::exponential(2.0).unwrap();
    let p = MfgProblem::new(
        CoefficientSchedule::constant(1.0, -0.6, 0.4, 0.0).unwrap(),
        TerminalData::new(0.2, -0.1, 0.0),
        1.0,
        1.5,
        jump.clone(),
    )
    .unwrap();
    (solve_numeric(&p, 2048).unwrap(), jump)
}

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn montecarlo(c: &mut Criterion) {
    let (sol, jump) = scenario();
    let law = InitialLaw::Gaussian { mean: 0.4, std: 0.5 };
    let spec = SimulationSpec::new(20_000, 500, 1, vec![0.5, 1.0]);
    let mut g = c.benchmark_group("montecarlo");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| simulate_controlled(&sol, |r| law.sample(r), 1.0, 1.5, &jump, black_box(&spec), exec).unwrap())
        });
    }
    g.finish();
}

fn charfn(c: &mut Criterion) {
    let (sol, jump) = scenario();
    let law = InitialLaw::Gaussian { mean: 0.4, std: 0.5 };
    let spec = FourierSpec::from_spacing(1024, 0.025, 1.5);
    let times = [0.25, 0.5, 1.0];
    let mut g = c.benchmark_group("char_fn_grid");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| char_fn_grid(&sol, &jump, 1.0, 1.5, |w| law.char_fn(w), black_box(&times), spec, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, montecarlo, charfn);
criterion_main!(benches);
