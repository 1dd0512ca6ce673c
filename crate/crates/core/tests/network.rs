use nalgebra::DMatrix;
use phlearn::constructs::{positive_raw, Signal};
use phlearn::io::{model_to_toml, parse_model_toml};
use phlearn::network::*;
use phlearn::odesolve::{integrate, Method, NoInput};
use phlearn::systems::{build_pendulum_surrogate, build_sparse_toy, sparse_ids, SparseToySpec, SurrogateSpec};
use phlearn::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sine(amplitude: f64, frequency: f64) -> Signal {
    Signal::Sine {
        amplitude,
        frequency,
        phase: 0.3,
    }
}

fn layered(layers: usize, source: Signal) -> Network {
    build_layered_network(&LayeredSpec {
        layers,
        source,
        ..LayeredSpec::default()
    })
    .unwrap()
}

fn rhs(sys: &AssembledSystem, x: &[f64]) -> Vec<f64> {
    let mut dx = vec![0.0; sys.state_dim()];
    sys.rhs(0.0, x, &[], sys.params().values(), &mut dx);
    dx
}

#[test]
fn msd_rhs_by_hand() {
    let sys = assemble_ode(&msd_network(&MsdSpec::default())).unwrap();
    assert_eq!(sys.state_names(), vec!["k", "m"]);
    assert_eq!(rhs(&sys, &[1.0, 0.0]), vec![0.0, -1.0]);
    let sys = assemble_ode(&msd_network(&MsdSpec {
        m: 2.0,
        k: 3.0,
        d: 0.5,
        force: Signal::Constant { value: 1.5 },
    }))
    .unwrap();
    let dx = rhs(&sys, &[0.4, -1.0]);
    // q' = p / m, p' = F - k q - d p / m
    assert!((dx[0] + 0.5).abs() < 1e-15);
    assert!((dx[1] - (1.5 - 1.2 + 0.25)).abs() < 1e-15);
}

#[test]
fn rlc_at_rest_is_an_equilibrium() {
    let sys = assemble_ode(&rlc_network(&RlcSpec::default())).unwrap();
    assert_eq!(rhs(&sys, &[0.0, 0.0]), vec![0.0, 0.0]);
    // q' = i = phi / L, phi' = -q / C - R i
    let dx = rhs(&sys, &[1.0, 2.0]);
    assert!((dx[0] - 2.0).abs() < 1e-15 && (dx[1] + 3.0).abs() < 1e-15);
}

#[test]
fn dirac_residual_of_reference_networks() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for net in [
        msd_network(&MsdSpec::default()),
        rlc_network(&RlcSpec {
            voltage: Some(sine(1.0, 0.5)),
            ..RlcSpec::default()
        }),
    ] {
        let w = net.param_vector().unwrap().values().to_vec();
        for _ in 0..100 {
            let x = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            assert!(check_dirac(&net, &x, &[], &w).unwrap() <= 1e-10);
        }
    }
}

#[test]
fn a_flipped_junction_sign_breaks_the_power_balance() {
    let mut net = msd_network(&MsdSpec::default());
    let port = net.junctions[0]
        .ports
        .iter_mut()
        .find(|p| p.construct.as_deref() == Some("d"))
        .unwrap();
    port.sign = -port.sign;
    let w = net.param_vector().unwrap().values().to_vec();
    assert!(check_dirac(&net, &[0.0, 1.0], &[], &w).unwrap() > 1e-3);
}

#[test]
fn check_dirac_rejects_wrong_dimensions() {
    let net = msd_network(&MsdSpec::default());
    assert!(matches!(check_dirac(&net, &[0.0], &[], &[0.0; 3]), Err(Error::Dimension { .. })));
    assert!(matches!(check_dirac(&net, &[0.0; 2], &[], &[0.0; 2]), Err(Error::Dimension { .. })));
}

#[test]
fn unattached_ports_are_structural_errors() {
    let mut net = msd_network(&MsdSpec::default());
    net.junctions[0].ports.retain(|p| p.construct.as_deref() != Some("k"));
    assert!(matches!(assemble_ode(&net), Err(Error::Structure(_))));
}

#[test]
fn algebraic_loops_are_named() {
    let mut net = Network::new();
    let damper = |c| phlearn::constructs::ConstructKind::Resistive {
        map: phlearn::constructs::ResistiveMap::Linear,
        causality: c,
    };
    net.add("a", damper(phlearn::constructs::Causality::Admittance), vec![0.5])
        .add("b", damper(phlearn::constructs::Causality::Admittance), vec![0.5])
        .junction(
            "J",
            JunctionKind::CommonFlow,
            vec![JunctionPort::construct("a", 0, -1.0), JunctionPort::construct("b", 0, -1.0)],
        );
    match assemble_ode(&net) {
        Err(Error::AlgebraicLoop(names)) => {
            assert!(names.iter().any(|n| n.contains('a')) && names.iter().any(|n| n.contains('b')), "{names:?}");
        }
        other => panic!("expected an algebraic loop, got {other:?}"),
    }
}

#[test]
fn link_flows_at_rest_are_zero() {
    let sys = assemble_ode(&layered(2, Signal::Constant { value: 0.0 })).unwrap();
    let w = sys.params().values().to_vec();
    let traj = integrate(&sys, &[0.0; 6], &w, &NoInput, 1.0, 0.1, Method::Rk4).unwrap();
    let flows = link_flows(&sys, &traj, &w).unwrap();
    assert_eq!(flows.len(), sys.link_names().len());
    assert!(flows.iter().flatten().all(|f| *f == 0.0));
}

#[test]
fn spring_link_carries_the_spring_force() {
    let sys = assemble_ode(&build_sparse_toy(&SparseToySpec {
        m: 1.0,
        k: 1.0,
        d: 0.0,
        ..SparseToySpec::ground_truth()
    }))
    .unwrap();
    assert_eq!(sys.state_names(), vec![sparse_ids::SPRING, sparse_ids::MASS]);
    let w = sys.params().values().to_vec();
    let pv = sys.port_values(0.0, &[1.0, 0.0], &[], &w);
    let link = sys.link_names().iter().position(|n| n == sparse_ids::SPRING_LINK).unwrap();
    assert!((pv.links[link].abs() - 1.0).abs() < 1e-15);
}

#[test]
fn a_zeroed_layer_carries_no_flow() {
    let mut net = layered(2, sine(1.0, 0.5));
    for name in ["k1", "d1", "k2", "d2"] {
        net.element_mut(&layer_id(2, name)).unwrap().params = vec![0.0];
    }
    let sys = assemble_ode(&net).unwrap();
    let w = sys.params().values().to_vec();
    let traj = integrate(&sys, &[0.1, -0.2, 0.3, 0.0, 0.2, 0.1], &w, &NoInput, 2.0, 0.05, Method::Rk4).unwrap();
    let flows = link_flows(&sys, &traj, &w).unwrap();
    let names = sys.link_names();
    for (name, series) in names.iter().zip(&flows) {
        if name.starts_with("b02") {
            assert!(series.iter().all(|f| f.abs() < 1e-15), "{name}");
        }
    }
    assert!(names.iter().zip(&flows).any(|(n, s)| n.starts_with("b01") && s.iter().any(|f| f.abs() > 1e-3)));
}

#[test]
fn layered_network_sizes() {
    let net = layered(1, Signal::Constant { value: 1.0 });
    assert_eq!(net.elements.len(), 6);
    let sys = assemble_ode(&net).unwrap();
    assert_eq!(sys.state_dim(), 3);
    assert_eq!(
        sys.state_names(),
        vec![layer_id(1, "k1"), layer_id(1, "k2"), layer_id(1, "m2")]
    );
    assert!(build_layered_network(&LayeredSpec {
        layers: 0,
        ..LayeredSpec::default()
    })
    .is_err());
    let net = layered(2, sine(1.0, 1.0));
    let sys = assemble_ode(&net).unwrap();
    assert_eq!(sys.state_dim(), 6);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let w = sys.params().values().to_vec();
    for _ in 0..100 {
        let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        assert!(check_dirac(&net, &x, &[], &w).unwrap() <= 1e-10);
    }
}

#[test]
fn serialization_keeps_the_assembly() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let nets = [
        msd_network(&MsdSpec::default()),
        rlc_network(&RlcSpec::default()),
        layered(3, sine(0.5, 0.2)),
        build_pendulum_surrogate(&SurrogateSpec::default(), &mut rng).unwrap(),
    ];
    for net in nets {
        let back = parse_model_toml(&model_to_toml(&net).unwrap()).unwrap();
        let (a, b) = (assemble_ode(&net).unwrap(), assemble_ode(&back).unwrap());
        assert_eq!(a.state_names(), b.state_names());
        assert_eq!(a.params().values(), b.params().values());
        let x: Vec<f64> = (0..a.state_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert_eq!(rhs(&a, &x), rhs(&b, &x));
    }
}

fn check_partials(sys: &AssembledSystem, rng: &mut ChaCha8Rng, samples: usize) {
    let (n, m) = (sys.state_dim(), sys.param_dim());
    let base = sys.params().values().to_vec();
    for _ in 0..samples {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = base.iter().map(|v| v + rng.gen_range(-0.2..0.2)).collect();
        let t = rng.gen_range(0.0..5.0);
        let mut dx = vec![0.0; n];
        let mut fx = DMatrix::zeros(n, n);
        let mut fw = DMatrix::zeros(n, m);
        sys.rhs_partials(t, &x, &[], &w, &mut dx, &mut fx, &mut fw);
        let mut plain = vec![0.0; n];
        sys.rhs(t, &x, &[], &w, &mut plain);
        assert!(dx.iter().zip(&plain).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + b.abs())));
        let eval = |x: &[f64], w: &[f64]| {
            let mut d = vec![0.0; n];
            sys.rhs(t, x, &[], w, &mut d);
            d
        };
        let compare = |col: &dyn Fn(usize) -> f64, fd: &[f64]| {
            let num: f64 = fd.iter().enumerate().map(|(i, v)| (v - col(i)).powi(2)).sum::<f64>().sqrt();
            let den: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(num <= 1e-5 * den.max(1e-8), "{num} vs {den}");
        };
        for j in 0..n {
            let eps = 1e-6;
            let mut xp = x.clone();
            xp[j] += eps;
            let a = eval(&xp, &w);
            xp[j] -= 2.0 * eps;
            let b = eval(&xp, &w);
            let fd: Vec<f64> = (0..n).map(|i| (a[i] - b[i]) / (2.0 * eps)).collect();
            compare(&|i| fx[(i, j)], &fd);
        }
        for j in 0..m {
            let eps = 1e-6;
            let mut wp = w.clone();
            wp[j] += eps;
            let a = eval(&x, &wp);
            wp[j] -= 2.0 * eps;
            let b = eval(&x, &wp);
            let fd: Vec<f64> = (0..n).map(|i| (a[i] - b[i]) / (2.0 * eps)).collect();
            compare(&|i| fw[(i, j)], &fd);
        }
    }
}

#[test]
fn partials_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let surrogate = build_pendulum_surrogate(&SurrogateSpec::default(), &mut rng).unwrap();
    for net in [
        msd_network(&MsdSpec {
            force: sine(1.0, 0.3),
            ..MsdSpec::default()
        }),
        rlc_network(&RlcSpec {
            voltage: Some(sine(2.0, 0.1)),
            ..RlcSpec::default()
        }),
        layered(1, sine(1.0, 0.5)),
        layered(3, sine(1.0, 0.5)),
        build_sparse_toy(&SparseToySpec::initial_guess()),
        surrogate,
    ] {
        let sys = assemble_ode(&net).unwrap();
        check_partials(&sys, &mut rng, 50);
    }
}

fn store_and_port_powers(sys: &AssembledSystem, t: f64, x: &[f64], w: &[f64]) -> (f64, f64, f64) {
    let pv = sys.port_values(t, x, &[], w);
    let (mut store, mut resistive) = (0.0, 0.0);
    for (id, ports) in &pv.elements {
        let el = sys.network().element(id).unwrap();
        let p: f64 = ports.iter().map(|(e, f)| e * f).sum();
        if el.construct.is_store() {
            store += p;
        } else if el.construct.is_resistive() {
            resistive += p;
        }
    }
    let source: f64 = sys.source_powers(t, x, &[], w).iter().sum();
    (store, resistive, source)
}

#[test]
fn stored_power_balances_sources_and_dissipation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for net in [
        msd_network(&MsdSpec {
            force: sine(1.0, 0.3),
            ..MsdSpec::default()
        }),
        rlc_network(&RlcSpec {
            voltage: Some(sine(1.0, 0.3)),
            ..RlcSpec::default()
        }),
        layered(2, sine(1.0, 0.3)),
    ] {
        let sys = assemble_ode(&net).unwrap();
        let w = sys.params().values().to_vec();
        for _ in 0..20 {
            let x: Vec<f64> = (0..sys.state_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let t = rng.gen_range(0.0..3.0);
            let (store, resistive, source) = store_and_port_powers(&sys, t, &x, &w);
            assert!((store - (source - resistive)).abs() < 1e-12);
            assert!(resistive >= 0.0);
            // dH/dt along the vector field
            let mut dx = vec![0.0; x.len()];
            sys.rhs(t, &x, &[], &w, &mut dx);
            let d = 1e-6;
            let shifted = |s: f64| -> Vec<f64> { x.iter().zip(&dx).map(|(a, b)| a + s * b).collect() };
            let dh = (sys.total_energy(&shifted(d), &w).unwrap() - sys.total_energy(&shifted(-d), &w).unwrap()) / (2.0 * d);
            assert!((dh - store).abs() < 1e-7 * (1.0 + store.abs()));
        }
    }
}

fn discrete_balance_error(sys: &AssembledSystem, h: f64) -> f64 {
    let w = sys.params().values().to_vec();
    let x0: Vec<f64> = (0..sys.state_dim()).map(|i| 0.3 - 0.2 * i as f64).collect();
    let traj = integrate(sys, &x0, &w, &NoInput, 4.0, h, Method::Midpoint).unwrap();
    let net_power = |k: usize| {
        let (_, r, s) = store_and_port_powers(sys, traj.times[k], &traj.states[k], &w);
        s - r
    };
    let mut err: f64 = 0.0;
    let mut acc = 0.0;
    for k in 0..traj.len() - 1 {
        let dh = sys.total_energy(&traj.states[k + 1], &w).unwrap() - sys.total_energy(&traj.states[k], &w).unwrap();
        acc += dh - 0.5 * h * (net_power(k) + net_power(k + 1));
        err = err.max(acc.abs());
    }
    err
}

#[test]
fn power_balance_holds_to_second_order_along_trajectories() {
    let sys = assemble_ode(&msd_network(&MsdSpec {
        force: sine(1.0, 0.3),
        ..MsdSpec::default()
    }))
    .unwrap();
    let coarse = discrete_balance_error(&sys, 0.02);
    let fine = discrete_balance_error(&sys, 0.01);
    assert!(fine < 1e-3, "{fine}");
    let ratio = coarse / fine;
    assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn state_order_is_sorted_by_construct_id() {
    let mut net = layered(2, Signal::Constant { value: 0.0 });
    let sorted = assemble_ode(&net).unwrap().state_names();
    net.elements.reverse();
    assert_eq!(assemble_ode(&net).unwrap().state_names(), sorted);
    let mut check = sorted.clone();
    check.sort();
    assert_eq!(check, sorted);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dirac_residual_vanishes_for_any_coefficients(
        m in 0.1f64..5.0, k in 0.1f64..5.0, d in 0.0f64..3.0,
        x in proptest::collection::vec(-5.0f64..5.0, 6),
        layers in 1usize..4,
    ) {
        let msd = msd_network(&MsdSpec { m, k, d, force: sine(1.0, 0.7) });
        let w = msd.param_vector().unwrap().values().to_vec();
        prop_assert!(check_dirac(&msd, &x[..2], &[], &w).unwrap() <= 1e-10);
        let rlc = rlc_network(&RlcSpec { r: d, l: m, c: k, voltage: Some(sine(0.5, 0.2)) });
        let w = rlc.param_vector().unwrap().values().to_vec();
        prop_assert!(check_dirac(&rlc, &x[..2], &[], &w).unwrap() <= 1e-10);
        let net = build_layered_network(&LayeredSpec { layers, m2: m, k1: k, d1: d, k2: k, d2: d, ..LayeredSpec::default() }).unwrap();
        let w = net.param_vector().unwrap().values().to_vec();
        let n = 3 * layers;
        let xs: Vec<f64> = x.iter().cycle().take(n).copied().collect();
        prop_assert!(check_dirac(&net, &xs, &[], &w).unwrap() <= 1e-10);
    }

    #[test]
    fn unforced_energy_never_grows(
        m in 0.2f64..3.0, k in 0.2f64..3.0, d in 0.0f64..2.0,
        x0 in proptest::collection::vec(-2.0f64..2.0, 6),
        layers in 1usize..3,
    ) {
        let h = 0.01;
        let nets = [
            msd_network(&MsdSpec { m, k, d, force: Signal::Constant { value: 0.0 } }),
            build_layered_network(&LayeredSpec { layers, m2: m, k1: k, d1: d, k2: k, d2: d, ..LayeredSpec::default() }).unwrap(),
        ];
        for net in nets {
            let sys = assemble_ode(&net).unwrap();
            let w = sys.params().values().to_vec();
            let x: Vec<f64> = x0.iter().cycle().take(sys.state_dim()).copied().collect();
            let traj = integrate(&sys, &x, &w, &NoInput, 10.0, h, Method::Midpoint).unwrap();
            let mut last = sys.total_energy(&traj.states[0], &w).unwrap();
            for s in &traj.states[1..] {
                let e = sys.total_energy(s, &w).unwrap();
                prop_assert!(e <= last + 10.0 * h * h);
                last = e;
            }
        }
    }
}

#[test]
fn stored_parameters_use_the_positive_map() {
    let net = msd_network(&MsdSpec {
        m: 4.0,
        k: 9.0,
        d: 0.25,
        force: Signal::Constant { value: 0.0 },
    });
    let sys = assemble_ode(&net).unwrap();
    let w = sys.params().values();
    assert_eq!(w, &[positive_raw(0.25), positive_raw(9.0), positive_raw(4.0)]);
}
