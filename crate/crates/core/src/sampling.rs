use rand::seq::SliceRandom;
use rand::Rng;

/// Latin-hypercube sample of `n` points in the box `[lower, upper]`: each axis
/// is cut into `n` equal strata and every stratum is hit exactly once.
pub fn latin_hypercube<const D: usize, R: Rng + ?Sized>(
    n: usize,
    lower: [f64; D],
    upper: [f64; D],
    rng: &mut R,
) -> Vec<[f64; D]> {
    let mut points = vec![[0.0; D]; n];
    for d in 0..D {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        let width = (upper[d] - lower[d]) / n as f64;
        for (point, stratum) in points.iter_mut().zip(strata) {
            point[d] = lower[d] + width * (stratum as f64 + rng.random::<f64>());
        }
    }
    points
}
