use mevpot::mcmc::{run_chain, FitData, McmcConfig, PriorSpec};
use mevpot::stats::{ks_pvalue, ks_statistic};

fn main() {
    let data = FitData::empty(2);
    let mut prior = PriorSpec::diffuse(3.0);
    prior.k_max = 2;
    let mut cfg = McmcConfig::standard(prior);
    cfg.regional_shape = false;
    cfg.thin = 10;
    cfg.burn_in = 10_000;
    cfg.iterations = cfg.burn_in + 200_000 * cfg.thin;
    cfg.seed = 31;
    let run = run_chain(&data, &cfg, 0).unwrap();
    let mut p1 = Vec::new();
    for s in &run.samples {
        if s.psi.k() == 2 { p1.push(s.psi.weights()[0]); }
    }
    let n2 = p1.len() as f64;
    let n = run.samples.len() as f64;
    println!("P(k=2) = {:.4} (target 0.2574)", n2 / n);
    let f2 = std::f64::consts::LN_2;
    let cdf_p = |p: f64| {
        if p <= 0.5 { p / f2 } else { (0.5 + (p / 0.5).ln() - (p - 0.5)) / f2 }
    };
    let d = ks_statistic(&p1, cdf_p);
    println!("p1 KS D={d:.5} p={:.4}", ks_pvalue(d, p1.len()));
    let mean = p1.iter().sum::<f64>() / n2;
    println!("E[p1] = {mean:.4} (target 0.3607)");
    p1.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for q in [0.1, 0.25, 0.5, 0.75, 0.9] {
        let emp = p1[(q * n2) as usize];
        // invert theory cdf numerically
        let mut lo = 0.0; let mut hi = 1.0;
        for _ in 0..60 { let m = 0.5*(lo+hi); if cdf_p(m) < q { lo = m } else { hi = m } }
        println!("q{q}: emp {emp:.4} theory {lo:.4}");
    }
}
