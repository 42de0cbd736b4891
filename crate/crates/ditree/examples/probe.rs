// Temporary diagnostic: run one DiTree plan and dump tree statistics.
use ditree::bench::{run_single, Budget, Method};
use ditree::config::AppConfig;
use ditree::dynamics::CarState;
use ditree::grid::{load_map_file, RobotGeometry};
use ditree::planner::Query;
use ditree::policy::PolicyNet;

fn main() {
    let map = std::env::args().nth(1).unwrap_or("/tmp/maps/probe_corner.map".into());
    let start: Vec<f64> = std::env::args()
        .nth(2)
        .unwrap_or("1.75,1.75,1.5708".into())
        .split(',')
        .map(|t| t.parse().unwrap())
        .collect();
    let goal: Vec<f64> = std::env::args()
        .nth(3)
        .unwrap_or("6.25,5.75".into())
        .split(',')
        .map(|t| t.parse().unwrap())
        .collect();
    let budget: f64 = std::env::args().nth(4).unwrap_or("10".into()).parse().unwrap();
    let geom = RobotGeometry::default_car();
    let grid = load_map_file(std::path::Path::new(&map)).unwrap().0;
    let app = AppConfig::load("/tmp/run/policy60.fmw.toml").unwrap();
    let net = PolicyNet::load(std::path::Path::new("/tmp/run/policy60.fmw")).unwrap();
    let query = Query {
        start: CarState::new(start[0], start[1], start[2], 0.0, 0.0, 0.0),
        goal: (goal[0], goal[1]),
        goal_radius: 1.0,
    };
    let (res, tree) = run_single(
        Method::Ditree,
        &query,
        &grid,
        &geom,
        &app,
        Some(&net),
        Budget::Wall(budget),
        7,
    )
    .unwrap();
    println!("status {:?} stats {:?}", res.status, res.stats);
    let tree = tree.unwrap();
    let n = tree.len();
    println!("vertices {n}");
    let mut vmax = 0.0f64;
    let mut vsum = 0.0;
    let mut dmax = 0.0f64;
    let mut held = std::collections::BTreeMap::new();
    for i in 0..n {
        let s = tree.vertex(i as u32).state;
        vmax = vmax.max(s.v.abs());
        vsum += s.v;
        dmax = dmax.max(s.d.abs());
        let b = format!("{:.0}", s.v.abs().min(9.9) / 0.5);
        *held.entry(b).or_insert(0) += 1;
    }
    println!("v mean {:.2} max {:.2}  |d| max {:.2}", vsum / n as f64, vmax, dmax);
    println!("v histogram (0.5 m/s bins): {held:?}");
}
