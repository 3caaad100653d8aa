//! Scratch calibration harness (not part of the library).

use std::time::Instant;

use matchvar::matching::Metric;
use matchvar::pipeline::{MatcherSpec, MethodSpec, VarianceSpec};
use matchvar::simulation::{
    run_coverage, CheParams, CoverageTarget, DgpConfig, OtsuRaiParams, OverlapLevel,
    SimulationSpec,
};
use matchvar::variance::BootstrapMultiplier;

fn pooled(name: &str, matcher: MatcherSpec, debias: bool) -> MethodSpec {
    MethodSpec {
        name: name.into(),
        matcher,
        variance: VarianceSpec::Pooled,
        debias,
    }
}

fn boot(name: &str, matcher: MatcherSpec, debias: bool) -> MethodSpec {
    boot_b(name, matcher, debias, 200)
}

fn boot_b(name: &str, matcher: MatcherSpec, debias: bool, b: usize) -> MethodSpec {
    MethodSpec {
        name: name.into(),
        matcher,
        variance: VarianceSpec::WildBootstrap {
            b,
            multiplier: BootstrapMultiplier::Rademacher,
        },
        debias,
    }
}

fn mnn(m: usize) -> MatcherSpec {
    MatcherSpec::MNearest {
        m,
        metric: Metric::Euclidean,
        synthetic: false,
    }
}

fn mnn_scm(m: usize) -> MatcherSpec {
    MatcherSpec::MNearest {
        m,
        metric: Metric::Euclidean,
        synthetic: true,
    }
}

fn scm(c: f64) -> MatcherSpec {
    MatcherSpec::Radius {
        c,
        metric: Metric::Euclidean,
        synthetic: true,
    }
}

fn show(tag: &str, spec: &SimulationSpec) {
    let t0 = Instant::now();
    let rep = run_coverage(spec).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    for m in &rep.methods {
        println!(
            "{tag} {:<12} cov={:.3} len={:.4} se={:.4} se_e={:.4} ess={:.2} shared={:.2} v/nt={:.4} sd_satt={:.4} est={:.3} fail={} ({dt:.1}s) pop={:.3}",
            m.name,
            m.coverage,
            m.mean_ci_length,
            m.mean_se,
            m.mean_se_e,
            m.mean_ess,
            m.mean_shared_controls,
            m.mean_v_over_nt,
            m.sd_vs_satt,
            m.mean_estimate,
            m.n_failed,
            rep.population_att
        );
    }
}

fn main() {
    let stage: u32 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);

    if stage == 0 || stage == 1 {
        // Table 1 dense-reuse configuration.
        let spec = SimulationSpec {
            dgp: DgpConfig::otsu_rai_default(),
            n_reps: 100,
            base_seed: 20_250_801,
            level: 0.95,
            target: CoverageTarget::PopulationAtt,
            methods: vec![
                pooled("pooled", mnn(8), false),
                boot("bootstrap", mnn(8), false),
                pooled("pooled+d", mnn(8), true),
                boot("bootstrap+d", mnn(8), true),
            ],
        };
        show("OR-dense", &spec);
        // Low-reuse follow-up.
        let spec2 = SimulationSpec {
            dgp: DgpConfig::OtsuRai {
                n: 1025,
                params: OtsuRaiParams {
                    fixed_counts: Some((25, 1000)),
                    ..OtsuRaiParams::default()
                },
            },
            n_reps: 100,
            base_seed: 20_250_802,
            level: 0.95,
            target: CoverageTarget::PopulationAtt,
            methods: vec![
                boot("boot-1nn", mnn(1), false),
                boot("boot-1nn+d", mnn(1), true),
                boot("boot-8nn", mnn(8), false),
                pooled("pooled-8nn", mnn(8), false),
            ],
        };
        show("OR-sparse", &spec2);
    }

    if stage == 0 || stage == 2 {
        // Neighbourhood-size sweep for synthetic weights on the
        // equicorrelated design.
        for &m in &[100usize, 150, 250, 350] {
            for level in OverlapLevel::all() {
                let spec = SimulationSpec {
                    dgp: DgpConfig::che_default(level),
                    n_reps: 30,
                    base_seed: 20_250_803,
                    level: 0.95,
                    target: CoverageTarget::Satt,
                    methods: vec![pooled("pooled+debias", mnn_scm(m), true)],
                };
                show(&format!("Che m={m} {}", level.name()), &spec);
            }
        }
    }

    if stage == 3 {
        // Chosen neighbourhood size, with bootstrap comparator, more reps.
        let m: usize = std::env::args()
            .nth(2)
            .and_then(|s| s.parse().ok())
            .unwrap_or(250);
        for level in OverlapLevel::all() {
            let spec = SimulationSpec {
                dgp: DgpConfig::che_default(level),
                n_reps: 100,
                base_seed: 20_250_804,
                level: 0.95,
                target: CoverageTarget::PopulationAtt,
                methods: vec![
                    pooled("pooled+debias", mnn_scm(m), true),
                    pooled("pooled raw", mnn_scm(m), false),
                    boot("boot200", mnn_scm(m), true),
                    boot_b("boot100", mnn_scm(m), true, 100),
                ],
            };
            show(&format!("Che100 m={m} {}", level.name()), &spec);
        }
    }

    if stage == 4 {
        // Balancing-weights calibration on the nonlinear design.
        for &(delta, m) in &[(0.05, 4), (0.1, 4), (0.2, 4), (0.1, 8)] {
            let spec = SimulationSpec {
                dgp: DgpConfig::kang_schafer_default(),
                n_reps: 50,
                base_seed: 20_250_805,
                level: 0.95,
                target: CoverageTarget::PopulationAtt,
                methods: vec![MethodSpec {
                    name: format!("sbw d={delta} m={m}"),
                    matcher: MatcherSpec::Balancing {
                        delta,
                        standardize: true,
                        s2_neighbors: m,
                    },
                    variance: VarianceSpec::Pooled,
                    debias: false,
                }],
            };
            show("KS-SBW", &spec);
        }
    }

    if stage == 5 {
        // Pooled-variance consistency probe at two sizes.
        for &(nt, nc, tag) in &[(100usize, 500usize, "small"), (400, 2000, "large")] {
            let t0 = Instant::now();
            let mut devs: Vec<f64> = Vec::new();
            for r in 0..200u64 {
                let params = CheParams {
                    n_treated: nt,
                    n_controls: nc,
                    ..CheParams::default()
                };
                let (data, _) =
                    matchvar::simulation::gen_che(9000 + r, OverlapLevel::VeryHigh, &params)
                        .unwrap();
                let m = matchvar::matching::match_mnn(&data, 4, Metric::Euclidean).unwrap();
                let pv = matchvar::variance::pooled_variance(&data, &m).unwrap();
                devs.push((pv.s2 - 0.25).abs());
            }
            devs.sort_by(f64::total_cmp);
            println!(
                "S2 {tag}: median|S2-0.25|={:.4} p95={:.4} ({:.1}s)",
                devs[devs.len() / 2],
                devs[(devs.len() as f64 * 0.95) as usize],
                t0.elapsed().as_secs_f64()
            );
        }
    }

    if stage == 6 {
        // Debias monotonicity probe on plain (uniform-weight) M-NN, where
        // covariate-mean imbalance leaves real matching bias to remove.
        let reps: usize = std::env::args()
            .nth(3)
            .and_then(|s| s.parse().ok())
            .unwrap_or(100);
        let ms: Vec<usize> = match std::env::args().nth(2).as_deref() {
            Some(s) => vec![s.parse().unwrap()],
            None => vec![10, 25, 50],
        };
        for m in ms {
            let plain = MatcherSpec::MNearest {
                m,
                metric: Metric::Euclidean,
                synthetic: false,
            };
            let mut with = 0.0;
            let mut without = 0.0;
            for level in OverlapLevel::all() {
                let spec = SimulationSpec {
                    dgp: DgpConfig::che_default(level),
                    n_reps: reps,
                    base_seed: 20_250_806,
                    level: 0.95,
                    target: CoverageTarget::PopulationAtt,
                    methods: vec![
                        pooled("debias", plain.clone(), true),
                        pooled("raw", plain.clone(), false),
                    ],
                };
                let rep = run_coverage(&spec).unwrap();
                println!(
                    "mono m={m} {} debias={:.3} raw={:.3}",
                    level.name(),
                    rep.methods[0].coverage,
                    rep.methods[1].coverage
                );
                with += rep.methods[0].coverage / 5.0;
                without += rep.methods[1].coverage / 5.0;
            }
            println!(
                "mono m={m} avg with={with:.4} without={without:.4} diff={:.4}",
                with - without
            );
        }
    }

    if stage == 7 {
        // Acceptance-scale verification: 500 reps at the pinned seed.
        let m = 300;
        let t0 = Instant::now();
        for level in OverlapLevel::all() {
            let spec = SimulationSpec {
                dgp: DgpConfig::che_default(level),
                n_reps: 500,
                base_seed: 20_260_814,
                level: 0.95,
                target: CoverageTarget::PopulationAtt,
                methods: vec![
                    pooled("pooled", mnn_scm(m), true),
                    boot_b("boot100", mnn_scm(m), true, 100),
                ],
            };
            show(&format!("Che500 {}", level.name()), &spec);
        }
        println!("stage7 total {:.1}s", t0.elapsed().as_secs_f64());
    }
}
