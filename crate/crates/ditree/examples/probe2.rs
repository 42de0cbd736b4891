use ditree::expert::Dataset;

fn main() {
    let ds = Dataset::load(std::path::Path::new("/tmp/run/smooth.dkd")).unwrap();
    let t = &ds.trajectories[3];
    println!("traj len {} actions, start v {:.2}", t.actions.len(), t.states[0].v);
    println!("step |   dd   ddelta |    D   delta     v");
    for (i, a) in t.actions.iter().enumerate().take(40) {
        let s = &t.states[i + 1];
        println!("{i:4} | {:+.2} {:+.2} | {:+.3} {:+.3} {:.2}", a.dd, a.ddelta, s.d, s.delta, s.v);
    }
    // aggregate stats over all actions
    let mut n = 0usize;
    let (mut sdd, mut sdl, mut sat) = (0.0f64, 0.0f64, 0usize);
    let mut flips = 0usize;
    for t in &ds.trajectories {
        for w in t.actions.windows(2) {
            if (w[0].dd > 0.0) != (w[1].dd > 0.0) {
                flips += 1;
            }
        }
        for a in &t.actions {
            sdd += a.dd * a.dd;
            sdl += a.ddelta * a.ddelta;
            if a.dd.abs() > 3.99 || a.ddelta.abs() > 1.99 {
                sat += 1;
            }
            n += 1;
        }
    }
    println!(
        "rms dd {:.2}  rms ddelta {:.2}  saturated {:.1}%  dd sign flips {:.1}%",
        (sdd / n as f64).sqrt(),
        (sdl / n as f64).sqrt(),
        100.0 * sat as f64 / n as f64,
        100.0 * flips as f64 / n as f64
    );
}
