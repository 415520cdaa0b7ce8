use std::sync::Arc;

use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ttnheom::bath::decompose;
use ttnheom::config::RunSpec;
use ttnheom::generator::{build_generator, metric};
use ttnheom::oracle::dense_run;
use ttnheom::propagate::{step_ps1, step_ps2, PsConfig};
use ttnheom::trajectory::{trace, Sample, Trajectory};
use ttnheom::*;

fn config() -> ProptestConfig {
    ProptestConfig { cases: 12, ..ProptestConfig::default() }
}

fn small_generator(e: f64, v: f64, lambda: f64, gamma: f64, n_pade: usize, kind: MetricKind, depth: usize) -> SopGenerator {
    let fs = decompose(&[SpectralComponent::drude_lorentz(lambda, gamma)], 300.0, n_pade).unwrap();
    let space = BexcitonSpace { depths: vec![depth; fs.len()], metric_z: metric(&fs, kind) };
    build_generator(&SystemModel::two_level(e, v), &fs, &space).unwrap()
}

fn plus() -> Array2<C64> {
    Array2::from_elem((2, 2), C64::new(0.5, 0.0))
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn dense_trace_stays_one(e in -2000.0..2000.0f64, v in 0.0..1500.0f64, lambda in 10.0..800.0f64, gamma in 20.0..300.0f64) {
        let g = small_generator(e, v, lambda, gamma, 1, MetricKind::Balanced, 4);
        let tr = dense_run(&g, &plus(), 20.0, 5.0, &IntegratorConfig::tight()).unwrap();
        for s in &tr.samples {
            prop_assert!((trace(&s.rho) - C64::new(1.0, 0.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn metric_is_a_gauge_for_the_dense_hierarchy(e in -1000.0..1000.0f64, lambda in 50.0..500.0f64, gamma in 30.0..200.0f64) {
        let a = small_generator(e, 800.0, lambda, gamma, 1, MetricKind::Balanced, 5);
        let b = small_generator(e, 800.0, lambda, gamma, 1, MetricKind::RealPart, 5);
        let ta = dense_run(&a, &plus(), 10.0, 2.0, &IntegratorConfig::tight()).unwrap();
        let tb = dense_run(&b, &plus(), 10.0, 2.0, &IntegratorConfig::tight()).unwrap();
        prop_assert!(ta.max_diff(&tb) < 1e-7, "{}", ta.max_diff(&tb));
    }

    #[test]
    fn ps_steps_keep_cores_semi_unitary(seed in any::<u64>(), r in 2usize..5, two_site in any::<bool>()) {
        let g = small_generator(500.0, 1000.0, 300.0, 80.0, 1, MetricKind::Balanced, 3);
        let topo = Arc::new(TreeTopology::balanced(2, &g.depths).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut st = TtnState::random(topo.clone(), &topo.uniform_ranks(r), &mut rng).unwrap();
        let ode = IntegratorConfig::default();
        for _ in 0..2 {
            if two_site {
                step_ps2(&mut st, &g, &PsConfig { max_rank: 6, ..Default::default() }, 0.05, &ode).unwrap();
            } else {
                step_ps1(&mut st, &g, 0.05, &ode).unwrap();
            }
        }
        prop_assert!(st.check_semiunitary().into_iter().all(|d| d < 1e-10));
        prop_assert!(topo.validate_ranks(&st.ranks).is_ok());
    }

    #[test]
    fn clamped_ranks_are_valid_and_idempotent(k in 1usize..9, depth in 2usize..6, req in prop::collection::vec(1usize..200, 1..10), train in any::<bool>()) {
        let depths = vec![depth; k];
        let topo = if train { TreeTopology::train(2, &depths) } else { TreeTopology::balanced(2, &depths) }.unwrap();
        let mut want = vec![0];
        want.extend((1..topo.len()).map(|i| req[i % req.len()]));
        let c = topo.clamp_ranks(&want);
        prop_assert!(topo.validate_ranks(&c).is_ok());
        prop_assert_eq!(topo.clamp_ranks(&c), c.clone());
        for s in 1..topo.len() {
            prop_assert!(c[s] >= 1 && c[s] <= want[s]);
        }
    }

    #[test]
    fn trajectory_csv_roundtrip(ts in prop::collection::vec((0.0..1e3f64, -1.0..1.0f64, -1.0..1.0f64, 0.0..1.0f64), 1..6)) {
        let samples: Vec<Sample> = ts
            .iter()
            .enumerate()
            .map(|(i, &(t, re, im, p))| {
                let off = C64::new(re, im) * 0.5;
                let rho = Array2::from_shape_vec((2, 2), vec![C64::new(p, 0.0), off, off.conj(), C64::new(1.0 - p, 0.0)]).unwrap();
                Sample { t: (t * 1e6).round() / 1e6 + i as f64 * 1e3, rho, ranks: vec![i + 1], ttn_size: 10 * i, wall_ms: 1.0 }
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let tr = Trajectory { samples, truncation: 0.0 };
        tr.write_csv(&p).unwrap();
        let back = Trajectory::read_csv(&p).unwrap();
        prop_assert_eq!(back.samples.len(), tr.samples.len());
        prop_assert!(tr.max_diff(&back) < 1e-11);
        for (a, b) in tr.samples.iter().zip(&back.samples) {
            prop_assert_eq!(a.max_rank(), b.max_rank());
            prop_assert_eq!(a.ttn_size, b.ttn_size);
        }
    }

    #[test]
    fn run_spec_toml_roundtrip(e in -5e3..5e3f64, v in 0.0..2e3f64, n_pade in 0usize..4, depth in 2usize..30, rank in 1usize..80, t_end in 1.0..500.0f64) {
        let text = format!(
            "[system]\nkind = \"two_level\"\ne_cm = {e:?}\nv_cm = {v:?}\n\n[bath]\ntemperature_k = 300.0\nn_pade = {n_pade}\n\
             components = [{{ kind = \"drude_lorentz\", lambda_cm = 715.73, gamma_cm = 54.45 }}]\n\n\
             [space]\ndepth = {depth}\n\n[topology]\nkind = \"train\"\nrank = {rank}\n\n[schedule]\nt_end_fs = {t_end:?}\noutput_dt_fs = 0.5\n"
        );
        let spec = RunSpec::from_toml(&text).unwrap();
        let again = RunSpec::from_toml(&spec.to_toml().unwrap()).unwrap();
        prop_assert_eq!(spec, again);
    }

    #[test]
    fn dense_trajectory_ignores_feature_order(seed in any::<u64>(), e in -1000.0..1000.0f64) {
        use rand::seq::SliceRandom;
        let fs = decompose(&[SpectralComponent::drude_lorentz(300.0, 80.0), SpectralComponent::brownian(900.0, 40.0, 60.0)], 300.0, 1).unwrap();
        let mut shuffled = fs.clone();
        shuffled.features.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let model = SystemModel::two_level(e, 800.0);
        let run = |f: &ttnheom::FeatureSet| {
            let space = BexcitonSpace { depths: vec![3; f.len()], metric_z: metric(f, MetricKind::Balanced) };
            dense_run(&build_generator(&model, f, &space).unwrap(), &plus(), 10.0, 2.0, &IntegratorConfig::tight()).unwrap()
        };
        let d = run(&fs).max_diff(&run(&shuffled));
        prop_assert!(d < 1e-8, "{d:e}");
    }
}
