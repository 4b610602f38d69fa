use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::metrics::mss;

fn lattice_data(rows: usize, cols: usize, seed: u64) -> AreaDataset {
    let g = AdjacencyGraph::lattice(rows, cols).unwrap();
    let n = g.order();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pops: Vec<f64> = (0..n).map(|_| 2e4 + 8e4 * rng.random::<f64>()).collect();
    let counts = pops
        .iter()
        .map(|p| {
            let z: f64 = rng.sample(StandardNormal);
            let r = 1e-3 * (0.3 * z).exp();
            Poisson::new(p * r).unwrap().sample(&mut rng) as u64
        })
        .collect();
    AreaDataset::new(g, counts, pops).unwrap()
}

fn quick(seed: u64) -> McmcConfig {
    McmcConfig {
        chains: 2,
        iterations: 1_200,
        burn_in: 200,
        thin: 10,
        seed,
        ..Default::default()
    }
}

fn draws_only(s: &PosteriorSamples) -> Vec<(Vec<usize>, Vec<f64>, Vec<Vec<f64>>, Vec<PriorSpec>)> {
    s.chains
        .iter()
        .map(|c| (c.iterations.clone(), c.alpha.clone(), c.kappa.clone(), c.params.clone()))
        .collect()
}

#[test]
fn dataset_validation() {
    let g = AdjacencyGraph::lattice(2, 2).unwrap();
    assert!(AreaDataset::new(g.clone(), vec![1, 2, 3], vec![1.0; 4]).is_err());
    assert!(AreaDataset::new(g.clone(), vec![1; 4], vec![1.0, 0.0, 1.0, 1.0]).is_err());
    let d = AreaDataset::new(g, vec![1, 2, 3, 4], vec![10.0, 10.0, 10.0, 20.0]).unwrap();
    assert_eq!(d.crude_rates(), vec![0.1, 0.2, 0.3, 0.2]);
    assert!((d.pooled_rate() - 0.2).abs() < 1e-15);
}

#[test]
fn config_rules() {
    let c = McmcConfig::default();
    assert_eq!(c.saved_per_chain(), 333);
    c.validate().unwrap();
    let bad = McmcConfig {
        burn_in: 30_000,
        ..c
    };
    assert!(bad.validate().is_err());
    let few = McmcConfig {
        iterations: 5_000 + 75 * 99,
        ..c
    };
    assert!(few.validate().is_err());
    let ok = McmcConfig {
        iterations: 5_000 + 75 * 100,
        ..c
    };
    assert_eq!(ok.saved_per_chain(), 100);
    ok.validate().unwrap();
}

#[test]
fn every_kind_runs_and_saves_the_right_count() {
    let d = lattice_data(4, 4, 3);
    let cfg = quick(9);
    for kind in PriorKind::ALL {
        let s = fit(&d, kind, &HyperPriors::default(), &cfg).unwrap();
        assert_eq!(s.chains.len(), 2);
        for c in &s.chains {
            assert_eq!(c.len(), 100, "{kind}");
            assert_eq!(c.kappa[0].len(), 16);
            assert!(c.params.iter().all(|p| p.kind() == kind));
            assert!(c.alpha.iter().all(|a| a.is_finite()));
            assert_eq!(c.iterations[0], 210);
            assert_eq!(*c.iterations.last().unwrap(), 1_200);
        }
        let names = s.parameter_names();
        for n in &names {
            s.scalar_draws(n).unwrap();
        }
    }
}

#[test]
fn identical_seeds_reproduce_bitwise() {
    let d = lattice_data(3, 4, 5);
    for kind in [PriorKind::Bym2, PriorKind::Gp, PriorKind::Pcar] {
        let a = fit(&d, kind, &HyperPriors::default(), &quick(42)).unwrap();
        let b = fit(&d, kind, &HyperPriors::default(), &quick(42)).unwrap();
        assert_eq!(draws_only(&a), draws_only(&b));
        let c = fit(&d, kind, &HyperPriors::default(), &quick(43)).unwrap();
        assert_ne!(draws_only(&a), draws_only(&c));
    }
}

#[test]
fn chains_differ_from_each_other() {
    let d = lattice_data(3, 3, 1);
    let s = fit(&d, PriorKind::Iid, &HyperPriors::default(), &quick(1)).unwrap();
    assert_ne!(s.chains[0].alpha, s.chains[1].alpha);
}

#[test]
fn draws_respect_support() {
    let d = lattice_data(4, 4, 8);
    let hyper = HyperPriors {
        sigma: VariancePrior::VarianceUniform {
            low: 0.0,
            high: 0.01,
        },
        eta: ParamPrior::Uniform {
            low: -0.5,
            high: 0.9,
        },
        lambda: ParamPrior::Uniform {
            low: 0.2,
            high: 0.8,
        },
        tau: Some(VariancePrior::SdUniform {
            low: 0.01,
            high: 0.5,
        }),
        psi: Some(ParamPrior::Uniform {
            low: 0.5,
            high: 2.0,
        }),
    };
    for kind in PriorKind::ALL {
        let s = fit(&d, kind, &hyper, &quick(2)).unwrap();
        for p in s.chains.iter().flat_map(|c| &c.params) {
            assert!(hyper.sigma.contains(p.sigma2()), "{kind} {p:?}");
            match *p {
                PriorSpec::Pcar { eta, .. } => assert!(hyper.eta.contains(eta)),
                PriorSpec::Lcar { lambda, .. } | PriorSpec::Bym2 { lambda, .. } => {
                    assert!(hyper.lambda.contains(lambda))
                }
                PriorSpec::Gp { psi, .. } => assert!(hyper.psi.unwrap().contains(psi)),
                PriorSpec::Bym { sigma2, nu } => assert!(hyper.tau_prior().contains(sigma2 * nu)),
                _ => {}
            }
        }
        for a in s.chains.iter().flat_map(|c| &c.alpha) {
            assert!(a.abs() < 20.0);
        }
    }
}

#[test]
fn proposal_scales_freeze_after_burn_in() {
    let d = lattice_data(3, 3, 4);
    let s = fit(&d, PriorKind::Lcar, &HyperPriors::default(), &quick(3)).unwrap();
    for c in &s.chains {
        assert_eq!(c.proposal_scales.after_burn_in, c.proposal_scales.final_scales);
        // alpha + 9 effects + sigma + lambda
        assert_eq!(c.proposal_scales.final_scales.len(), 12);
    }
    let cfg = McmcConfig {
        adapt_during_burnin_only: false,
        ..quick(3)
    };
    let s = fit(&d, PriorKind::Lcar, &HyperPriors::default(), &cfg).unwrap();
    assert!(s
        .chains
        .iter()
        .any(|c| c.proposal_scales.after_burn_in != c.proposal_scales.final_scales));
}

#[test]
fn acceptance_rates_near_target() {
    let d = lattice_data(4, 4, 6);
    let cfg = McmcConfig {
        chains: 1,
        iterations: 4_000,
        burn_in: 2_000,
        thin: 10,
        seed: 5,
        ..Default::default()
    };
    let s = fit(&d, PriorKind::Iid, &HyperPriors::default(), &cfg).unwrap();
    for (name, rate) in &s.chains[0].acceptance {
        assert!(*rate > 0.2 && *rate < 0.7, "{name}: {rate}");
    }
}

#[test]
fn intrinsic_effects_are_centred() {
    let d = lattice_data(4, 4, 7);
    for kind in [PriorKind::Icar, PriorKind::Bym2] {
        let s = fit(&d, kind, &HyperPriors::default(), &quick(8)).unwrap();
        for c in &s.chains {
            for k in &c.kappa {
                let m = k.iter().sum::<f64>() / k.len() as f64;
                if kind == PriorKind::Icar {
                    assert!(m.abs() < 1e-9, "{m}");
                }
            }
        }
    }
    let hyper = HyperPriors {
        lambda: ParamPrior::Fixed { value: 1.0 },
        ..Default::default()
    };
    let s = fit(&d, PriorKind::Lcar, &hyper, &quick(8)).unwrap();
    for k in s.chains.iter().flat_map(|c| &c.kappa) {
        assert!((k.iter().sum::<f64>() / 16.0).abs() < 1e-9);
    }
}

#[test]
fn car_kinds_reject_islands_and_gp_needs_centroids() {
    let g = AdjacencyGraph::from_edges(
        vec!["a".into(), "b".into(), "c".into()],
        &[(0, 1)],
    )
    .unwrap();
    let d = AreaDataset::new(g, vec![1, 2, 3], vec![100.0; 3]).unwrap();
    for kind in PriorKind::ALL.into_iter().filter(|k| k.is_car()) {
        assert!(matches!(
            fit(&d, kind, &HyperPriors::default(), &quick(1)),
            Err(Error::Island { .. })
        ));
    }
    assert!(fit(&d, PriorKind::Gp, &HyperPriors::default(), &quick(1)).is_err());
    fit(&d, PriorKind::Iid, &HyperPriors::default(), &quick(1)).unwrap();
}

#[test]
fn hyperprior_validation() {
    let d = lattice_data(3, 3, 2);
    let bad = HyperPriors::with_variance_uniform(0.5, 0.1);
    assert!(fit(&d, PriorKind::Iid, &bad, &quick(1)).is_err());
    let bad = HyperPriors {
        lambda: ParamPrior::Uniform {
            low: 0.0,
            high: 1.5,
        },
        ..Default::default()
    };
    assert!(fit(&d, PriorKind::Lcar, &bad, &quick(1)).is_err());
}

#[test]
fn lcar_at_zero_matches_iid() {
    let d = lattice_data(5, 5, 10);
    let hyper = HyperPriors::with_variance_uniform(0.0, 0.16);
    let lcar_h = HyperPriors {
        lambda: ParamPrior::Fixed { value: 0.0 },
        ..hyper
    };
    let cfg = McmcConfig {
        chains: 4,
        iterations: 6_000,
        burn_in: 1_000,
        thin: 10,
        seed: 77,
        ..Default::default()
    };
    let crude = d.crude_rates();
    let per_chain_mss = |s: &PosteriorSamples| -> Vec<f64> {
        (0..s.chains.len())
            .map(|c| {
                let one = PosteriorSamples {
                    chains: vec![s.chains[c].clone()],
                    ..s.clone()
                };
                mss(&posterior_rate_means(&one).unwrap(), &crude, 1e5).unwrap()
            })
            .collect()
    };
    let a = per_chain_mss(&fit(&d, PriorKind::Iid, &hyper, &cfg).unwrap());
    let b = per_chain_mss(&fit(&d, PriorKind::Lcar, &lcar_h, &cfg).unwrap());
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let se = |v: &[f64]| {
        let m = mean(v);
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0) / v.len() as f64).sqrt()
    };
    let diff = (mean(&a) - mean(&b)).abs();
    let tol = 3.0 * (se(&a).powi(2) + se(&b).powi(2)).sqrt();
    assert!(diff <= tol + 1e-12, "iid {a:?} lcar0 {b:?}");
}

fn synthetic(alpha: Vec<f64>, kappa: Vec<Vec<f64>>, params: Vec<PriorSpec>) -> PosteriorSamples {
    let n = kappa[0].len();
    PosteriorSamples {
        kind: params[0].kind(),
        area_ids: (0..n).map(|i| format!("r0c{i}")).collect(),
        config: McmcConfig::default(),
        hyper: HyperPriors::default(),
        chains: vec![ChainDraws {
            iterations: (1..=alpha.len()).collect(),
            alpha,
            kappa,
            params,
            acceptance: BTreeMap::new(),
            proposal_scales: ProposalScales {
                after_burn_in: vec![],
                final_scales: vec![],
            },
            elapsed_secs: 0.0,
        }],
    }
}

#[test]
fn rate_means_by_hand() {
    let s = synthetic(vec![0.0], vec![vec![0.0; 3]], vec![PriorSpec::Iid { sigma2: 1.0 }]);
    assert_eq!(posterior_rate_means(&s).unwrap(), vec![0.5; 3]);

    let alpha = vec![-1.0, 0.5, 2.0];
    let kappa = vec![vec![0.1, -0.2], vec![0.0, 0.3], vec![-0.5, 0.0]];
    let s = synthetic(alpha.clone(), kappa.clone(), vec![PriorSpec::Iid { sigma2: 1.0 }; 3]);
    let got = posterior_rate_means(&s).unwrap();
    for i in 0..2 {
        let want = (0..3)
            .map(|d| 1.0 / (1.0 + (-(alpha[d] + kappa[d][i])).exp()))
            .sum::<f64>()
            / 3.0;
        assert!((got[i] - want).abs() < 1e-15);
    }

    let lo = synthetic(vec![-2.0, -1.0], vec![vec![0.2, -0.1]; 2], vec![PriorSpec::Iid { sigma2: 1.0 }; 2]);
    let hi = synthetic(vec![-1.5, -0.5], vec![vec![0.2, -0.1]; 2], vec![PriorSpec::Iid { sigma2: 1.0 }; 2]);
    let (a, b) = (posterior_rate_means(&lo).unwrap(), posterior_rate_means(&hi).unwrap());
    assert!(a.iter().zip(&b).all(|(x, y)| x < y));
}

#[test]
fn tcv_summaries() {
    let g = AdjacencyGraph::lattice(1, 4).unwrap();
    let fixed = synthetic(
        vec![0.0; 3],
        vec![vec![0.0; 4]; 3],
        vec![PriorSpec::Lcar { sigma2: 0.1, lambda: 0.5 }; 3],
    );
    let t = posterior_tcv(&fixed, &g).unwrap();
    assert!((t.q95 - t.q05).abs() < 1e-15);
    // degrees 1,2,2,1: Σ 1/(0.5(w−1)+1) = 1 + 1/1.5 + 1/1.5 + 1
    assert!((t.mean - 0.1 * (2.0 + 2.0 / 1.5)).abs() < 1e-12);

    let s2 = [0.01, 0.02, 0.03, 0.04];
    let iid = synthetic(
        vec![0.0; 4],
        vec![vec![0.0; 4]; 4],
        s2.iter().map(|&s| PriorSpec::Iid { sigma2: s }).collect(),
    );
    let t = posterior_tcv(&iid, &g).unwrap();
    assert!((t.mean - 4.0 * 0.025).abs() < 1e-12);
    assert!(t.q05 > 0.04 && t.q95 < 0.16);
}

#[test]
fn diagnostics_cover_free_parameters() {
    let d = lattice_data(3, 3, 12);
    let hyper = HyperPriors {
        lambda: ParamPrior::Fixed { value: 0.5 },
        ..Default::default()
    };
    let s = fit(&d, PriorKind::Lcar, &hyper, &quick(4)).unwrap();
    let diag = s.diagnostics().unwrap();
    let names: Vec<&str> = diag.iter().map(|d| d.name.as_str()).collect();
    assert!(names.contains(&"alpha"));
    assert!(names.contains(&"sigma2"));
    assert!(!names.contains(&"lambda"));
    assert_eq!(names.len(), 2 + 9);
    for d in &diag {
        assert!(d.rhat.unwrap().rhat >= 1.0);
        assert!(d.ess.value > 0.0);
    }
}

#[test]
fn csv_long_format() {
    let d = lattice_data(2, 2, 1);
    let s = fit(&d, PriorKind::Bym, &HyperPriors::default(), &quick(1)).unwrap();
    let mut buf = Vec::new();
    s.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "chain,iter,name,value");
    // alpha, sigma2, tau2, nu, then 4 kappa per draw
    assert_eq!(lines.len(), 1 + 2 * 100 * 8);
    assert!(lines[1].starts_with("0,210,alpha,"));
    assert!(text.contains(",tau2,"));
    assert!(text.contains(",kappa[r1c1],"));
}
