use coarsen_core::analysis::{
    classify_sites, clusters, containment_check, renormalize, RenormReport, SiteClass, SiteClassification,
};
use coarsen_core::bootstrap::classify_tiling;
use coarsen_core::dynamics::{DynamicsState, RunOptions, UpdateRule};
use coarsen_core::environment::{sample_disordered, EnvironmentParams};
use coarsen_core::lattice::{Adjacency, Boundary, LatticeGeometry};
use proptest::prelude::*;

fn mask_strategy(n: usize) -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(prop::bool::weighted(0.45), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn nn_clusters_refine_linf_clusters(mask in mask_strategy(144), periodic in any::<bool>()) {
        let b = if periodic { Boundary::Periodic } else { Boundary::Free };
        let g = LatticeGeometry::new(vec![12, 12], b).unwrap();
        let nn = clusters(&g, &mask, Adjacency::Nn);
        let linf = clusters(&g, &mask, Adjacency::Linf);
        let mut label = vec![usize::MAX; g.len()];
        for (k, c) in linf.iter().enumerate() {
            for &s in &c.sites {
                label[s] = k;
            }
        }
        let covered: usize = nn.iter().map(|c| c.size()).sum();
        prop_assert_eq!(covered, mask.iter().filter(|&&m| m).count());
        prop_assert!(nn.len() >= linf.len());
        for c in &nn {
            let k = label[c.sites[0]];
            prop_assert!(c.sites.iter().all(|&s| label[s] == k));
            if c.spans(&g) {
                prop_assert!(linf[k].spans(&g));
            }
        }
    }

    #[test]
    fn containment_is_monotone_in_badness(
        good in prop::collection::vec(prop::bool::weighted(0.8), 25),
        extra_bad in prop::collection::vec(prop::bool::weighted(0.2), 25),
        minus in prop::collection::vec(prop::bool::weighted(0.15), 625),
    ) {
        let g = LatticeGeometry::new(vec![25, 25], Boundary::Periodic).unwrap();
        let classification = SiteClassification {
            classes: minus.iter().map(|&m| if m { SiteClass::FixedMinus } else { SiteClass::FixedPlus }).collect(),
            certified: vec![false; g.len()],
            horizon: 1.0,
            window_fraction: 0.1,
        };
        let env = sample_disordered(&g, &EnvironmentParams::default()).unwrap();
        let tiling = g.tile_boxes(2).unwrap();
        let classes = classify_tiling(&env, &tiling, 1).unwrap();
        let worse: Vec<bool> = good.iter().zip(&extra_bad).map(|(&a, &b)| a && !b).collect();
        let before = RenormReport::from_flags(tiling.clone(), good, classes.clone(), 1);
        let after = RenormReport::from_flags(tiling, worse, classes, 1);
        let c0 = containment_check(&g, &classification, &before).unwrap();
        let c1 = containment_check(&g, &classification, &after).unwrap();
        if c0.ok {
            prop_assert!(c1.ok);
        }
        for (r0, r1) in c0.clusters.iter().zip(&c1.clusters) {
            prop_assert!(!r0.contained_in_closure || r1.contained_in_closure);
        }
    }
}

#[test]
fn classification_is_deterministic_and_consistent() {
    let g = LatticeGeometry::new(vec![40, 40], Boundary::Periodic).unwrap();
    for seed in 0..10 {
        let env = sample_disordered(
            &g,
            &EnvironmentParams {
                rho_plus: 0.08,
                rho_minus: 0.02,
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        let run = || {
            let mut state = DynamicsState::new(&env, UpdateRule::default(), seed).unwrap();
            let traj = state.run(&RunOptions::until(200.0), &mut []).unwrap();
            classify_sites(&traj, 200.0, 0.1).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        for s in 0..g.len() {
            if a.certified[s] {
                assert_eq!(a.classes[s], SiteClass::FixedPlus);
            }
            match env.frozen[s].value() {
                Some(1) => assert_eq!(a.classes[s], SiteClass::FixedPlus),
                Some(_) => assert_eq!(a.classes[s], SiteClass::FixedMinus),
                None => {}
            }
        }
        let total: usize = [SiteClass::FixedPlus, SiteClass::FixedMinus, SiteClass::Flipper]
            .iter()
            .map(|&c| a.count(c))
            .sum();
        assert_eq!(total, g.len());
    }
}

#[test]
fn all_good_window_has_no_bad_clusters() {
    let g = LatticeGeometry::new(vec![15, 15], Boundary::Periodic).unwrap();
    let env = sample_disordered(
        &g,
        &EnvironmentParams {
            rho_plus: 1.0,
            ..Default::default()
        },
    )
    .unwrap();
    let report = renormalize(&env, 2, 1).unwrap();
    assert_eq!(report.bad_count(), 0);
    assert!(report.bad_clusters.is_empty() && !report.bad_percolates);
    assert!(report.below_p_star);
    assert!(renormalize(&env, 2, 2).is_err());
}
