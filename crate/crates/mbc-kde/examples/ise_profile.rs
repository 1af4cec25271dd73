//! Print ISE(h) profiles per estimator for one seeded sample.
use mbc_kde::densities::mw_density;
use mbc_kde::estimators::{estimate, EstimatorKind, EstimatorSpec, Sample};
use mbc_kde::kernels::Bandwidth;
use mbc_kde::metrics::{ise, simulation_grid, GridSpec, SearchSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let id: u32 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1);
    let n: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(100);
    let seed: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1);
    let truth = mw_density(id).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let s = Sample::new(truth.sample(n, &mut rng).unwrap()).unwrap();
    let grid = simulation_grid(&truth, &s, &SearchSpec::default(), &GridSpec::default()).unwrap();
    print!("h");
    for k in EstimatorKind::TABLE1 {
        print!(",{k}");
    }
    println!();
    let mut h = 0.05f64;
    while h < 14.0 {
        print!("{h:.4}");
        for kind in EstimatorKind::TABLE1 {
            let spec = EstimatorSpec::new(kind, Bandwidth::new(h).unwrap());
            match estimate(&spec, &s, &grid) {
                Ok(est) => print!(",{:.1}", ise(&est, &truth).unwrap() * 1e5),
                Err(_) => print!(",margin"),
            }
        }
        println!();
        h *= 1.25;
    }
}
