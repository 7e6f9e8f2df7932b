fn main() {
    use uavslice::scenario::Scenario;
    let algo: String = std::env::args().nth(1).unwrap();
    let seed: u64 = std::env::args().nth(2).unwrap().parse().unwrap();
    let users: usize = std::env::args().nth(3).unwrap_or("16".into()).parse().unwrap();
    let mut sc = Scenario::default();
    sc.n_users = users;
    sc.uav.count = 3;
    sc.horizon = usize::from_str_radix(&std::env::args().nth(4).unwrap_or("250".into()), 10).unwrap();
    sc.esn.pretrain_episodes = 150;
    sc.cgnet.btu_pretrain_episodes = 1000;
    sc.cgnet.utg_pretrain_episodes = 500;
    sc.env.radio.noise_psd_dbm_hz = -174.0;
    sc.seed = seed;
    sc.algo = algo.parse().unwrap();
    let m = uavslice::sim::run(&sc).unwrap();
    let rows = &m.rows;
    let t = rows.len() as f64;
    let pred: f64 = rows.iter().map(|r| if r.pred_err_m.is_nan() {0.0} else {r.pred_err_m}).sum::<f64>() / t;
    let served: f64 = rows.iter().map(|r| r.rates_mbps.iter().filter(|x| **x > 0.0).count() as f64).sum::<f64>() / t;
    println!("{algo},{seed},{users}: ee={:.3} jain={:.4} pred_err={:.0}m served/slot={:.2} viol={}",
        m.summary.energy_efficiency, m.summary.jain_index, pred, served, m.summary.constraint_violations);
}
