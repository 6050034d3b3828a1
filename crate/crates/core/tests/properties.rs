use proptest::prelude::*;

use qmix::channel::{KrausChannel, SuperOperatorMatrix, TpCheck};
use qmix::cli::format_g;
use qmix::dobrushin::{classical_dobrushin, embed_classical, md_certified_bound, md_scalar_bound, StochasticMatrix};
use qmix::mps::{self, LocalObservable, Method, MpsTensorTrain};
use qmix::opalg::{self, ComplexMatrix, DensityOperator, HermitianOperator, PureState, C64};
use qmix::process::{ergodic_average, qubit_diameter, Direction, GeneratedRule, PrefixCache, ProcessSchedule};
use qmix::rng;
use rand::Rng;

fn channel(d: usize, seed: u64) -> KrausChannel {
    let mut r = rng::seeded(seed);
    let k = r.random_range(1..=d + 1);
    KrausChannel::haar(d, k, &mut r).unwrap()
}

fn state(d: usize, seed: u64) -> DensityOperator {
    let mut r = rng::seeded(seed);
    let rank = r.random_range(1..=d);
    DensityOperator::random(d, rank, &mut r)
}

fn matrix(d: usize, seed: u64) -> ComplexMatrix {
    let mut r = rng::seeded(seed);
    ComplexMatrix::from_fn(d, d, |_, _| rng::complex_gaussian(&mut r))
}

fn stochastic(d: usize, seed: u64) -> StochasticMatrix {
    let mut r = rng::seeded(seed);
    let rows = (0..d)
        .map(|_| {
            let w: Vec<f64> = (0..d).map(|_| r.random_range(0.0..1.0)).collect();
            let s: f64 = w.iter().sum();
            let mut row: Vec<f64> = w.iter().map(|x| x / s).collect();
            let head: f64 = row[..d - 1].iter().sum();
            row[d - 1] = 1.0 - head;
            row
        })
        .collect();
    StochasticMatrix::new(rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tv_norm_axioms(d in 2usize..=4, s in any::<u64>(), c in -3.0f64..3.0) {
        let a = matrix(d, s);
        let b = matrix(d, s ^ 0xabcdef);
        let na = opalg::tv_norm(&a).unwrap();
        let nb = opalg::tv_norm(&b).unwrap();
        prop_assert!(na >= 0.0);
        prop_assert!(opalg::tv_norm(&(&a + &b)).unwrap() <= na + nb + 1e-12);
        let scaled = opalg::tv_norm(&(&a * C64::new(c, 0.0))).unwrap();
        prop_assert!((scaled - c.abs() * na).abs() <= 1e-10 * (1.0 + na));
        prop_assert!(opalg::tv_norm(&ComplexMatrix::zeros(d, d)).unwrap() == 0.0);
    }

    #[test]
    fn jordan_parts_are_disjoint(d in 2usize..=4, s in any::<u64>()) {
        let h = HermitianOperator::random(d, &mut rng::seeded(s));
        let (pos, neg) = opalg::jordan_decomposition(&h).unwrap();
        prop_assert!((pos.matrix() - neg.matrix() - h.matrix()).norm() < 1e-10);
        prop_assert!(pos.min_eigenvalue() > -1e-12 && neg.min_eigenvalue() > -1e-12);
        prop_assert!((pos.matrix() * neg.matrix()).norm() < 1e-9);
    }

    #[test]
    fn haar_channels_are_cptp(d in 2usize..=4, s in any::<u64>()) {
        let ch = channel(d, s);
        prop_assert!(ch.tp_residual() < 1e-10);
        prop_assert!(ch.choi().is_psd(1e-10));
        let rho = state(d, s + 1);
        let out = ch.apply_matrix(rho.matrix());
        prop_assert!((opalg::trace(&out).re - 1.0).abs() < 1e-12);
        prop_assert!(opalg::min_eigenvalue(&out) > -1e-12);
    }

    #[test]
    fn superoperator_composition_matches_kraus(d in 2usize..=3, s in any::<u64>()) {
        let a = channel(d, s);
        let b = channel(d, s.wrapping_add(17));
        let via_kraus = KrausChannel::compose(&a, &b).unwrap().to_superoperator();
        let via_super = a.to_superoperator().compose(&b.to_superoperator());
        prop_assert!((via_kraus.matrix() - via_super.matrix()).norm() < 1e-11);
        prop_assert!((a.superop_trace() - a.superop_trace_by_basis().re).abs() < 1e-11);
    }

    #[test]
    fn md_inequality(d in 2usize..=3, s in any::<u64>(), w in 0.0f64..0.8) {
        let ch = channel(d, s).mix(&KrausChannel::depolarizing(d, 1.0).unwrap(), w).unwrap();
        let kappa = md_certified_bound(&ch, 5e-3).unwrap().trace_lower_bound;
        let rho = state(d, s + 2);
        let sigma = state(d, s + 3);
        let lhs = opalg::tv_norm(&(ch.apply_matrix(rho.matrix()) - ch.apply_matrix(sigma.matrix()))).unwrap();
        let rhs = (1.0 - kappa) * opalg::tv_norm(&(rho.matrix() - sigma.matrix())).unwrap();
        prop_assert!(lhs <= rhs + 1e-9);
    }

    #[test]
    fn certified_below_sampled(d in 2usize..=3, s in any::<u64>(), w in 0.0f64..0.8) {
        let ch = channel(d, s).mix(&KrausChannel::depolarizing(d, 1.0).unwrap(), w).unwrap();
        let cert = md_certified_bound(&ch, 5e-3).unwrap();
        let sampled = md_scalar_bound(&ch, 64, 2, s).unwrap();
        prop_assert!(cert.trace_lower_bound <= sampled.trace_upper_estimate + 1e-9);
        prop_assert!((0.0..=1.0).contains(&cert.trace_lower_bound));
        prop_assert!((cert.contraction_coefficient() - (1.0 - cert.trace_lower_bound)).abs() < 1e-15);
    }

    #[test]
    fn qubit_prefix_diameters_are_monotone(s in any::<u64>()) {
        let sched = ProcessSchedule::generated(2, s, GeneratedRule::HaarNoisy { kraus_count: 2, beta: 0.1 }).unwrap();
        for dir in [Direction::Forward, Direction::Backward] {
            let mut cache = PrefixCache::new(dir);
            let mut prev = 2.0;
            for n in 0..8 {
                let d = qubit_diameter(cache.get(&sched, n).unwrap()).unwrap();
                prop_assert!(d <= prev + 1e-12);
                prev = d;
            }
        }
    }

    #[test]
    fn two_state_distance_within_twice_reference(d in 2usize..=3, s in any::<u64>()) {
        let sched = ProcessSchedule::generated(d, s, GeneratedRule::HaarNoisy { kraus_count: 2, beta: 0.2 }).unwrap();
        let mut cache = PrefixCache::new(Direction::Forward);
        let map = cache.get(&sched, 3).unwrap().clone();
        let reference = map.apply(DensityOperator::maximally_mixed(d).matrix());
        let states: Vec<ComplexMatrix> = (0..6).map(|i| map.apply(state(d, s ^ (i + 1)).matrix())).collect();
        let sup_single = states.iter().map(|z| opalg::tv_norm(&(z - &reference)).unwrap()).fold(0.0, f64::max);
        for a in &states {
            for b in &states {
                prop_assert!(opalg::tv_norm(&(a - b)).unwrap() <= 2.0 * sup_single + 1e-12);
            }
        }
    }

    #[test]
    fn ergodic_average_is_a_channel(d in 2usize..=3, s in any::<u64>(), n in 0usize..6) {
        let sched = ProcessSchedule::generated(d, s, GeneratedRule::HaarNoisy { kraus_count: 2, beta: 0.3 }).unwrap();
        for dir in [Direction::Forward, Direction::Backward] {
            let avg = ergodic_average(&sched, n, dir).unwrap();
            prop_assert!(avg.tp_residual() < 1e-10);
            prop_assert!(avg.choi().unwrap().is_psd(1e-10));
        }
    }

    #[test]
    fn dobrushin_is_submultiplicative(d in 2usize..=4, s in any::<u64>()) {
        let p = stochastic(d, s);
        let q = stochastic(d, s ^ 99);
        let pq = p.product(&q).unwrap();
        prop_assert!(classical_dobrushin(&pq) <= classical_dobrushin(&p) * classical_dobrushin(&q) + 1e-12);
    }

    #[test]
    fn embedding_intertwines(d in 2usize..=4, s in any::<u64>()) {
        let p = stochastic(d, s);
        let ch = embed_classical(&p).unwrap();
        let mut r = rng::seeded(s);
        let w: Vec<f64> = (0..d).map(|_| r.random_range(0.0..1.0)).collect();
        let total: f64 = w.iter().sum();
        let mu: Vec<f64> = w.iter().map(|x| x / total).collect();
        let out = ch.apply_matrix(DensityOperator::diagonal(&mu).unwrap().matrix());
        for j in 0..d {
            let expect: f64 = (0..d).map(|i| mu[i] * p.get(i, j)).sum();
            prop_assert!((out[(j, j)].re - expect).abs() < 1e-12);
        }
        prop_assert!((out.clone() - ComplexMatrix::from_diagonal(&out.diagonal())).norm() < 1e-12);
    }

    #[test]
    fn mps_norm_identity(d in 1usize..=3, m in 1usize..=3, n in 1usize..=5, s in any::<u64>()) {
        let train = MpsTensorTrain::random(d, m, n, s, 0.0).unwrap();
        let brute = mps::norm_squared(&train, n, Method::Bruteforce).unwrap();
        let transfer = mps::norm_squared(&train, n, Method::Transfer).unwrap();
        prop_assert!((brute - transfer).abs() <= 1e-10 * brute.max(1.0));
        for k in 1..=n {
            let ch = mps::site_channel(&train, k, TpCheck::Strict).unwrap();
            prop_assert!(ch.tp_residual() < 1e-9);
        }
    }

    #[test]
    fn mps_state_functional(s in any::<u64>(), a in 1usize..=3) {
        let train = MpsTensorTrain::random(2, 2, 5, s, 0.2).unwrap();
        let m = train.phys_dim();
        let g = matrix(m, s ^ 5);
        let psd = LocalObservable::new((a, a), m, g.adjoint() * &g).unwrap();
        prop_assert!(mps::expectation(&train, &psd, 5, Method::Transfer).unwrap().re >= -1e-9);
        let h = HermitianOperator::random(m, &mut rng::seeded(s)).into_matrix();
        let herm = LocalObservable::new((a, a), m, h).unwrap();
        prop_assert!(mps::expectation(&train, &herm, 5, Method::Transfer).unwrap().im.abs() <= 1e-10);
    }

    #[test]
    fn observable_map_of_identity_is_tp(s in any::<u64>(), a in 1usize..=2, len in 1usize..=3) {
        let train = MpsTensorTrain::random(2, 2, 5, s, 0.0).unwrap();
        let x = LocalObservable::identity((a, a + len - 1), 2).unwrap();
        let map: SuperOperatorMatrix = mps::observable_transfer(&train, &x).unwrap().superoperator().clone();
        prop_assert!(map.tp_residual() < 1e-10);
    }

    #[test]
    fn pure_states_are_unit(d in 1usize..=5, s in any::<u64>()) {
        let psi = PureState::random(d, &mut rng::seeded(s));
        prop_assert!((psi.vector().norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn format_g_round_trips(x in prop::num::f64::NORMAL) {
        let back: f64 = format_g(x, 12).parse().unwrap();
        prop_assert!(((back - x) / x).abs() <= 5e-12);
    }
}
