use gradeig::config::BuiltModel;
use gradeig::dual::{log_sum_exp, Dual, Scalar};
use gradeig::eig_est::{pce_value_on, srnmc_value_on, NestedBatch, OuterBatch};
use gradeig::model::{Design, Model, PkModel, Simulator, ToyModel};
use gradeig::report::real;
use gradeig::rng::SeedStream;
use gradeig::selftest::all_models;
use gradeig::with_model;
use proptest::prelude::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn closed_form_partials_match_dual(y in -5.0..5.0f64, f in 0.01..5.0f64) {
        let mut models = all_models();
        models.push(BuiltModel::Pk(PkModel::additive_noise()));
        models.push(BuiltModel::Toy(ToyModel::small_noise()));
        for built in &models {
            with_model!(built, model => {
                let (v, dy, df) = model.obs_log_density_partials(y, f);
                let d = model.obs_log_density(&Dual::variable(y, 0, 2), &Dual::variable(f, 1, 2));
                prop_assert!(close(v, d.value(), 1e-12), "{} value", model.name());
                prop_assert!(close(dy, d.tangent()[0], 1e-12), "{} d/dy", model.name());
                prop_assert!(close(df, d.tangent()[1], 1e-12), "{} d/df", model.name());
            });
        }
    }

    #[test]
    fn estimators_respect_their_caps(seed in any::<u64>(), m in 1usize..40, n in 1usize..40) {
        let model = ToyModel::small_noise();
        let mut rng = SeedStream::new(seed).rng("caps", 0);
        let design = Design::random(model.design_bounds(), &mut rng);
        let mut sim = Simulator::new(&model, design.values()).unwrap();
        let outer = OuterBatch::draw(&model, m, &mut rng);
        prop_assert!(srnmc_value_on(&mut sim, &outer).unwrap().value <= (m as f64).ln());
        let nested = NestedBatch::draw(&model, m, n, &mut rng);
        prop_assert!(pce_value_on(&mut sim, &nested).unwrap().value <= ((n + 1) as f64).ln());
    }

    #[test]
    fn projection_lands_in_the_box(proposal in prop::collection::vec(-100.0..100.0f64, 10)) {
        let model = PkModel::mixture_noise();
        let mut d = Design::random(model.design_bounds(), &mut SeedStream::new(0).rng("p", 0));
        d.set_projected(&proposal);
        prop_assert!(d.is_feasible());
        for (v, (p, (lo, hi))) in d.values().iter().zip(proposal.iter().zip(model.design_bounds())) {
            prop_assert_eq!(*v, p.clamp(*lo, *hi));
        }
    }

    #[test]
    fn log_sum_exp_is_shift_invariant(xs in prop::collection::vec(-50.0..50.0f64, 1..20), c in -700.0..700.0f64) {
        let base = log_sum_exp(&xs);
        let naive = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        prop_assert!(close(base, naive, 1e-12));
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        prop_assert!(close(log_sum_exp(&shifted), base + c, 1e-12));
    }

    #[test]
    fn csv_reals_round_trip(x in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        prop_assert_eq!(real(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn streams_are_reproducible_and_distinct(seed in any::<u64>(), i in 0u64..1000) {
        use rand::RngCore;
        let s = SeedStream::new(seed);
        prop_assert_eq!(s.rng("a", i).next_u64(), s.rng("a", i).next_u64());
        prop_assert_ne!(s.rng("a", i).next_u64(), s.rng("b", i).next_u64());
        prop_assert_ne!(s.rng("a", i).next_u64(), s.rng("a", i + 1).next_u64());
    }
}
