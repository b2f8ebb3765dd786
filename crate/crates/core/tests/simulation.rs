use relaythp::channel::CorrelationSpec;
use relaythp::majorization::ObjectiveSpec;
use relaythp::sim::{run_sweep, HopTemplate, Scheme, SweepConfig};

fn fig2(grid: Vec<f64>, trials: usize) -> SweepConfig {
    let corr = CorrelationSpec::new(0.0, 0.4, 0.001).unwrap();
    let hop = HopTemplate {
        n_t: 4,
        n_r: 4,
        correlation: corr,
        snr_db: 30.0,
        power: 1.0,
    };
    SweepConfig {
        hops: vec![hop.clone(), hop],
        n_streams: 4,
        modulation: 16,
        objective: ObjectiveSpec::prod_mse(),
        swept_hop: 0,
        snr_grid: grid,
        schemes: vec![Scheme::RobustThp],
        n_trials: trials,
        n_symbols: 300,
        master_seed: 17,
    }
}

#[test]
fn ber_falls_with_first_hop_snr() {
    let result = run_sweep(&fig2(vec![10.0, 15.0, 20.0, 25.0, 30.0], 200)).unwrap();
    let points: Vec<_> = result.points.iter().collect();
    for w in points.windows(2) {
        let se = (w[0].ber_stderr.powi(2) + w[1].ber_stderr.powi(2)).sqrt();
        assert!(
            w[1].ber <= w[0].ber + 2.0 * se,
            "{} dB: {} -> {} dB: {}",
            w[0].snr_db,
            w[0].ber,
            w[1].snr_db,
            w[1].ber
        );
    }
    assert!(points[0].ber > points[4].ber);
}

#[test]
fn identical_seeds_give_identical_results() {
    let config = fig2(vec![15.0], 20);
    assert_eq!(
        run_sweep(&config).unwrap().points,
        run_sweep(&config).unwrap().points
    );
    let mut other = config.clone();
    other.master_seed += 1;
    assert_ne!(
        run_sweep(&config).unwrap().points,
        run_sweep(&other).unwrap().points
    );
}
