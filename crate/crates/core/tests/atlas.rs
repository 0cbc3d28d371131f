use holo_core::anatomy::{BodySystem, ClassId, ClassTable};
use holo_core::atlas::*;
use holo_core::model::{Model, ModelConfig};
use holo_core::partition::PartitionConfig;
use holo_core::rng::SeedStream;
use holo_core::synth::{generate_phantom, make_cohort, CohortConfig, EffectModel, PhantomConfig};

fn random_features(subjects: usize, organs: usize, r: &mut SeedStream, missing: f64) -> OrganFeatureMatrix {
    let values = (0..subjects)
        .map(|_| {
            (0..organs)
                .map(|_| {
                    let v = 2.0 + r.normal();
                    (r.uniform() >= missing).then_some(v)
                })
                .collect()
        })
        .collect();
    OrganFeatureMatrix::new(
        (1..=organs as ClassId).collect(),
        (0..subjects).map(|i| format!("s{i}")).collect(),
        vec![40.0; subjects],
        values,
    )
    .unwrap()
}

/// Sample covariance by the definition, over rows where both are present.
fn oracle_cov(m: &OrganFeatureMatrix, i: usize, j: usize) -> Option<f64> {
    let rows: Vec<(f64, f64)> = m.values.iter().filter_map(|r| Some((r[i]?, r[j]?))).collect();
    if rows.len() < 2 {
        return None;
    }
    let n = rows.len() as f64;
    let mx = rows.iter().map(|p| p.0).sum::<f64>() / n;
    let my = rows.iter().map(|p| p.1).sum::<f64>() / n;
    let mut s = 0.0;
    for (x, y) in &rows {
        s += (x - mx) * (y - my);
    }
    Some(s / (n - 1.0))
}

#[test]
fn covariance_matches_definition_and_is_symmetric() {
    let mut r = SeedStream::new(1);
    for _ in 0..20 {
        let m = random_features(30, 6, &mut r, 0.1);
        let c = covariance_matrix(&m, false);
        for i in 0..6 {
            for j in 0..6 {
                match (c.values[i][j], oracle_cov(&m, i, j)) {
                    (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
                    (a, b) => assert_eq!(a, b),
                }
                assert_eq!(c.values[i][j], c.values[j][i]);
            }
        }
    }
}

#[test]
fn exclusion_commutes_with_covariance() {
    let mut r = SeedStream::new(2);
    let m = random_features(25, 5, &mut r, 0.0);
    let a = covariance_matrix(&m.exclude_organs(&[2, 4]).unwrap(), false);
    let b = covariance_matrix(&m, false).exclude_organs(&[2, 4]).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.excluded, vec![2, 4]);
}

#[test]
fn network_matches_per_pair_recomputation() {
    let mut r = SeedStream::new(3);
    let mut m = random_features(40, 6, &mut r, 0.05);
    // Couple organs 1 and 2 strongly.
    for row in &mut m.values {
        if let (Some(a), Some(b)) = (row[0], row[1]) {
            row[1] = Some(0.2 * b + a);
        }
    }
    let net = correlation_network(&m, 0.5, 0.05).unwrap();
    let mut tests = vec![];
    for i in 0..6 {
        for j in i + 1..6 {
            let (x, y): (Vec<f64>, Vec<f64>) = m.values.iter().filter_map(|r| Some((r[i]?, r[j]?))).unzip();
            let rr = pearson(&x, &y).unwrap();
            tests.push((m.organs[i], m.organs[j], rr, correlation_p_value(rr, x.len()).unwrap()));
        }
    }
    let bh = bh_fdr(&tests.iter().map(|t| t.3).collect::<Vec<_>>(), 0.05);
    let expect: Vec<(ClassId, ClassId)> = tests
        .iter()
        .zip(&bh.q)
        .filter(|(t, &q)| t.2.abs() >= 0.5 && q < 0.05)
        .map(|(t, _)| (t.0, t.1))
        .collect();
    let got: Vec<(ClassId, ClassId)> = net.edges.iter().map(|e| (e.a, e.b)).collect();
    assert_eq!(got, expect);
    assert!(got.contains(&(1, 2)));
    for (t, q) in net.tested.iter().zip(&bh.q) {
        assert_eq!(t.q, *q);
    }
    assert!(net.edges.iter().all(|e| e.a != e.b && e.r.abs() >= 0.5 && e.q < 0.05));
}

#[test]
fn bh_is_monotone_in_alpha() {
    let mut r = SeedStream::new(4);
    for _ in 0..100 {
        let m = r.int_inclusive(1, 40) as usize;
        let p: Vec<f64> = (0..m).map(|_| r.uniform().powi(3)).collect();
        let mut prev = bh_fdr(&p, 0.2).significant;
        for alpha in [0.1, 0.05, 0.01, 0.001] {
            let cur = bh_fdr(&p, alpha).significant;
            assert!(cur.iter().zip(&prev).all(|(c, p)| !c || *p));
            prev = cur;
        }
    }
}

#[test]
fn independent_noise_has_few_false_edges() {
    let (organs, n, alpha) = (10, 200, 0.05);
    let pairs = organs * (organs - 1) / 2;
    let mut edges = 0;
    for seed in 0..20 {
        let m = random_features(n, organs, &mut SeedStream::new(100 + seed), 0.0);
        // Threshold 0 isolates the FDR control.
        edges += correlation_network(&m, 0.0, alpha).unwrap().edges.len();
    }
    let expected = alpha * pairs as f64 * 20.0;
    assert!((edges as f64) <= 2.0 * expected, "{edges} false edges, expectation {expected}");
}

#[test]
fn confounder_tops_ranking_and_exclusion_lowers_max() {
    let organs = 8;
    let confounder: ClassId = 5;
    let mut r = SeedStream::new(5);
    let mut group_a = random_features(150, organs, &mut r, 0.0);
    let group_b = random_features(150, organs, &mut r, 0.0);
    for row in &mut group_a.values {
        let v = row[confounder as usize - 1].unwrap();
        row[confounder as usize - 1] = Some(2.0 + (v - 2.0) * 10f64.sqrt());
    }
    let (ca, cb) = (covariance_matrix(&group_a, false), covariance_matrix(&group_b, false));
    let d = covariance_difference(&ca, &cb, 20).unwrap();
    assert_eq!((d.ranking[0].a, d.ranking[0].b), (confounder, confounder));
    assert_eq!(d.ranking.len(), 20);
    let before = d.matrix.max_abs().unwrap().2.abs();
    let reduced = covariance_difference(
        &ca.exclude_organs(&[confounder]).unwrap(),
        &cb.exclude_organs(&[confounder]).unwrap(),
        20,
    )
    .unwrap();
    let after = reduced.matrix.max_abs().unwrap();
    assert!(after.2.abs() < before);
    assert!(after.0 != confounder && after.1 != confounder);
    assert_eq!(reduced.matrix.excluded, vec![confounder]);
}

#[test]
fn cohort_covariance_matches_analytic() {
    let phantom = PhantomConfig::compact();
    let k = phantom.organs.len();
    // Spread proportional to baseline uptake keeps uptakes positive.
    let base: Vec<f64> = phantom.organs.iter().map(|o| o.uptake).collect();
    let mut effect = EffectModel::independent(k, 0.0);
    effect.noise_sd = base.iter().map(|u| 0.12 * u).collect();
    effect.loadings = vec![(0..k).map(|i| if i < 4 { 0.08 * base[i] } else { 0.0 }).collect()];
    effect.age_slopes[4] = -0.01;
    let cfg = CohortConfig {
        n: 500,
        age_range: (20, 80),
        phantom,
        effect,
    };
    let cohort = make_cohort(9, &cfg).unwrap();
    let m = OrganFeatureMatrix::suv_means(&cohort.studies, &cfg.organs()).unwrap();
    let c = covariance_matrix(&m, false);
    let truth = cfg.suv_covariance().unwrap();
    // Sampling error of a variance at n = 500 is about 6%: the whole matrix
    // must agree to 10% and each variance to four standard errors.
    let (mut err, mut norm) = (0.0, 0.0);
    for i in 0..k {
        for j in 0..k {
            err += (c.values[i][j].unwrap() - truth[i][j]).powi(2);
            norm += truth[i][j].powi(2);
        }
        let v = c.values[i][i].unwrap();
        assert!((v / truth[i][i] - 1.0).abs() < 0.25, "organ {i}: {v} vs {}", truth[i][i]);
    }
    assert!((err / norm).sqrt() < 0.1, "relative error {}", (err / norm).sqrt());
}

#[test]
fn engineered_system_trends() {
    let t = ClassTable::builtin();
    let organs: Vec<ClassId> = ["brain", "uterus", "left_lung_upper_lobe", "liver"]
        .iter()
        .map(|n| t.id_of(n).unwrap())
        .collect();
    // Per-stratum values, with symmetric spread so that the means are exact.
    let levels = [
        [1.000, 1.000, 1.000, 1.000],
        [0.779 / 0.863, 0.826, 0.95, 0.98],
        [0.779, 0.80, 0.891, 0.948],
    ];
    let ages = [20.0, 30.0, 50.0, 60.0, 70.0, 80.0];
    let values: Vec<Vec<Option<f64>>> = ages
        .iter()
        .enumerate()
        .map(|(s, _)| {
            let d = if s % 2 == 0 { 0.01 } else { -0.01 };
            levels[s / 2].iter().map(|v| Some(v + d)).collect()
        })
        .collect();
    let m = OrganFeatureMatrix::new(organs, (0..6).map(|i| i.to_string()).collect(), ages.to_vec(), values).unwrap();
    let strata = stratify(&ages, &StrataConfig::with_split(55));
    let trends = system_trends(&m, &t.system_map(), &strata).unwrap();
    let pct = |s, f: fn(&SystemTrend) -> Option<f64>| (f(trends.get(s).unwrap()).unwrap() * 10.0).round() / 10.0;
    assert_eq!(pct(BodySystem::Nervous, |r| r.young_to_old), 22.1);
    assert_eq!(pct(BodySystem::Nervous, |r| r.middle_to_old), 13.7);
    assert_eq!(pct(BodySystem::Reproductive, |r| r.young_to_middle), 17.4);
    assert_eq!(pct(BodySystem::Respiratory, |r| r.young_to_old), 10.9);
    assert_eq!(pct(BodySystem::Digestive, |r| r.young_to_old), 5.2);
    assert!(trends.get(BodySystem::Urinary).is_none());
    assert!(trends.to_csv().starts_with("system,organs,young"));
}

#[test]
fn organ_embeddings_respond_to_uptake() {
    let cfg = ModelConfig::micro(32);
    let model = Model::new(cfg, 11).unwrap();
    let phantom = PhantomConfig::whole_body();
    let liver = ClassTable::builtin().id_of("liver").unwrap();
    let brain = ClassTable::builtin().id_of("brain").unwrap();
    let a = generate_phantom(3, &phantom).unwrap();
    let mut b = a.clone();
    for (v, &l) in b.pet.values.iter_mut().zip(&b.mask.labels) {
        if l == liver {
            *v += 3.0;
        }
    }
    let organs = [liver, brain, 999];
    let part = PartitionConfig::default();
    let e = OrganEmbeddings::extract(&model, &[a.clone(), b, a], &organs, &part).unwrap();
    let la = e.values[0][0].as_ref().unwrap();
    assert_eq!(la.len(), 16);
    assert_ne!(la, e.values[1][0].as_ref().unwrap());
    assert_eq!(e.values[0], e.values[2]);
    assert!(e.values[0][2].is_none());
    let pc = e.first_component().unwrap();
    assert_eq!(pc.values.len(), 3);
    assert!(pc.values[0][0].is_some() && pc.values[0][2].is_none());
}
