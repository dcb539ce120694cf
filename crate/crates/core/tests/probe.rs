#[test]
fn probe_other_seed_bases() {
    use osq_core::{pipeline::*, benchmark::planted_ffn_case};
    for base in [30_000_000u64, 77_777_777, 123_456_789] {
        let mut ord = 0; let mut abl = 0;
        for i in 0..40u64 {
            let case = planted_ffn_case(base + i).unwrap();
            let mut cfg = RunConfig::new();
            cfg.set("bits", "6").unwrap();
            cfg.set("methods", "minmax,smoothquant_alpha,fixed_gamma,osplus,osplus_noshift,osplus_noscale").unwrap();
            let (r, _) = compare(&case.activation, &case.block, &cfg).unwrap();
            let g = |m: &str| -> f64 { r.get(&format!("method.{m}.output_change_mse")).unwrap().parse().unwrap() };
            let o = g("osplus");
            if o < g("minmax") && o < g("smoothquant_alpha") && o < g("fixed_gamma") { ord += 1; }
            if g("osplus_noshift") >= o && g("osplus_noscale") >= g("osplus_noshift") { abl += 1; }
        }
        println!("base {base}: ordering {ord}/40, ablation {abl}/40");
    }
}
