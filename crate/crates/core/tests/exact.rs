//! Closed forms checked against exact rational evaluation.

use num::{BigInt, BigRational, One, ToPrimitive, Zero};

use sdwan_core::model::{LinkId, NetworkId, NodeId, OverlayLink, PortId, Priority};
use sdwan_core::queueing::{
    calibrate_theta, loss_probability, mean_delay, mean_occupancy, LoadGrid, Mm1kParams,
};
use sdwan_core::sabe::abw_from_load;
use sdwan_core::sim::{scheduler_model, SchedulerEntry};

fn ratio(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap()
}

/// Stationary weights `ρ^i` for `i = 0..=k`.
fn powers(rho: &BigRational, k: u32) -> Vec<BigRational> {
    let mut out = Vec::with_capacity(k as usize + 1);
    let mut term = BigRational::one();
    for _ in 0..=k {
        out.push(term.clone());
        term *= rho;
    }
    out
}

fn exact_loss(rho: &BigRational, k: u32) -> BigRational {
    let p = powers(rho, k);
    let total: BigRational = p.iter().fold(BigRational::zero(), |a, b| a + b);
    p[k as usize].clone() / total
}

fn exact_occupancy(rho: &BigRational, k: u32) -> BigRational {
    let p = powers(rho, k);
    let total: BigRational = p.iter().fold(BigRational::zero(), |a, b| a + b);
    let weighted = p
        .iter()
        .enumerate()
        .fold(BigRational::zero(), |a, (i, w)| a + w * BigRational::from_integer(BigInt::from(i)));
    weighted / total
}

/// Little's law with the accepted rate `λ (1 − P)`.
fn exact_delay(rho: &BigRational, k: u32, mu: i64) -> BigRational {
    let lambda = rho * BigRational::from_integer(BigInt::from(mu));
    exact_occupancy(rho, k) / (lambda * (BigRational::one() - exact_loss(rho, k)))
}

const LOADS: [(i64, i64); 10] = [
    (1, 20),
    (1, 2),
    (7, 10),
    (9, 10),
    (999, 1000),
    (1, 1),
    (1001, 1000),
    (11, 10),
    (3, 2),
    (2, 1),
];

fn rel_err(got: f64, want: f64) -> f64 {
    if want == 0.0 {
        got.abs()
    } else {
        ((got - want) / want).abs()
    }
}

#[test]
fn loss_probability_matches_exact_sums() {
    for k in [1, 10, 100] {
        for (n, d) in LOADS {
            let want = to_f64(&exact_loss(&ratio(n, d), k));
            let got = loss_probability(n as f64 / d as f64, k).unwrap();
            assert!(rel_err(got, want) < 1e-11, "rho {n}/{d} K {k}: {got} vs {want}");
        }
    }
    let at_09 = to_f64(&exact_loss(&ratio(9, 10), 100));
    assert!((at_09 - 2.66e-6).abs() < 0.01e-6, "{at_09}");
}

#[test]
fn occupancy_matches_exact_sums() {
    for k in [1, 10, 100] {
        for (n, d) in LOADS {
            let want = to_f64(&exact_occupancy(&ratio(n, d), k));
            let got = mean_occupancy(n as f64 / d as f64, k).unwrap();
            assert!(rel_err(got, want) < 1e-11, "rho {n}/{d} K {k}: {got} vs {want}");
        }
    }
    let half = exact_occupancy(&ratio(1, 2), 100);
    let gap = to_f64(&(BigRational::one() - half));
    assert!(gap > 0.0 && gap < 1e-28, "{gap}");
}

#[test]
fn delay_matches_littles_law() {
    let params = Mm1kParams::new(100, 1000.0).unwrap();
    for (n, d) in LOADS {
        let want = to_f64(&exact_delay(&ratio(n, d), 100, 1000));
        let got = mean_delay(n as f64 / d as f64, &params).unwrap();
        assert!(rel_err(got, want) < 1e-11, "rho {n}/{d}: {got} vs {want}");
    }
    // 50 / (1000 (1 - 1/101))
    let at_one = ratio(50, 1000) / (BigRational::one() - ratio(1, 101));
    assert_eq!(exact_delay(&BigRational::one(), 100, 1000), at_one);
    assert!((mean_delay(1.0, &params).unwrap() - to_f64(&at_one)).abs() < 1e-15);
}

/// Largest grid point whose exact loss is within `target`, scanning every
/// point.
fn exact_theta(k: u32, target: &BigRational) -> f64 {
    let grid = LoadGrid::default();
    let mut best = grid.rho_min();
    for i in 0..grid.len() {
        // grid points are multiples of 1/1000
        let milli = (grid.point(i) * 1000.0).round() as i64;
        if exact_loss(&ratio(milli, 1000), k) <= *target {
            best = milli as f64 / 1000.0;
        }
    }
    best
}

#[test]
fn theta_matches_exact_grid_scan() {
    let grid = LoadGrid::default();
    let target = ratio(1, 100_000);
    for k in [10, 100] {
        let got = calibrate_theta(k, 1e-5, &grid);
        assert!((got - exact_theta(k, &target)).abs() < 1e-9, "K {k}: {got}");
    }
    assert!(calibrate_theta(10, 1e-5, &grid) < 0.914);
}

fn link(capacity: f64) -> OverlayLink {
    OverlayLink {
        id: LinkId(0),
        name: "l".into(),
        src: NodeId(0),
        dst: NodeId(1),
        network: NetworkId(0),
        nominal_capacity_mbps: capacity,
        prop_delay: 0.03,
        bottleneck_port: PortId(0),
        bottleneck_group: Vec::new(),
    }
}

#[test]
fn safe_bandwidth_plug_through() {
    // λ = 0.8 · 25 = 20, XT = 20 − 10 = 10, C̃ = 0.914 · 25 − 10 = 12.85
    let theta = ratio(914, 1000);
    let cap = ratio(25, 1);
    let xt = ratio(8, 10) * &cap - ratio(10, 1);
    let safe = theta * cap - &xt;
    let est = abw_from_load(&link(25.0), 0.8, 10.0, 0.914, false);
    assert!((est.cross_traffic_mbps - to_f64(&xt)).abs() < 1e-12);
    assert!((est.safe_abw_mbps - to_f64(&safe)).abs() < 1e-12);
    assert_eq!(to_f64(&safe), 12.85);
}

/// Water-filling by weight over rational inputs.
fn exact_water_fill(capacity: BigRational, entries: &[(BigRational, BigRational)]) -> Vec<BigRational> {
    let mut out = vec![BigRational::zero(); entries.len()];
    let mut residual = capacity;
    let mut active: Vec<usize> = (0..entries.len()).collect();
    while !active.is_empty() {
        let total = active.iter().fold(BigRational::zero(), |a, &i| a + &entries[i].1);
        let capped: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&i| entries[i].0 <= &residual * &entries[i].1 / &total)
            .collect();
        if capped.is_empty() {
            for &i in &active {
                out[i] = &residual * &entries[i].1 / &total;
            }
            break;
        }
        for &i in &capped {
            out[i] = entries[i].0.clone();
            residual -= &entries[i].0;
        }
        active.retain(|i| !capped.contains(i));
    }
    out
}

#[test]
fn shaper_surplus_matches_exact_water_fill() {
    // residual 8 after 2 Mbps of high priority; weights 3:1:4; the first
    // entry is shaped to 1, the second only offers 1.5
    let entries = [
        SchedulerEntry { priority: Priority::High, offered: 2.0, weight: 0.0, shaper: None },
        SchedulerEntry { priority: Priority::Low, offered: 9.0, weight: 0.375, shaper: Some(1.0) },
        SchedulerEntry { priority: Priority::Low, offered: 1.5, weight: 0.125, shaper: None },
        SchedulerEntry { priority: Priority::Low, offered: 20.0, weight: 0.5, shaper: None },
    ];
    let got = scheduler_model(10.0, &entries);
    let want = exact_water_fill(
        ratio(8, 1),
        &[(ratio(1, 1), ratio(3, 8)), (ratio(3, 2), ratio(1, 8)), (ratio(20, 1), ratio(1, 2))],
    );
    assert_eq!(got[0], 2.0);
    for (g, w) in got[1..].iter().zip(&want) {
        assert!((g - to_f64(w)).abs() < 1e-12, "{got:?} vs {want:?}");
    }
    assert_eq!(want[1], ratio(7, 5));
    assert_eq!(want[2], ratio(28, 5));
}
