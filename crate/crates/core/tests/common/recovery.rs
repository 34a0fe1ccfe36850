use acf_core::mcvq::McvqModel;

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

pub fn aligned<T>(gt: &McvqModel, score: impl Fn(&[usize], &[Vec<usize>]) -> T) -> Vec<T> {
    let (kk, ll) = (gt.n_types(), gt.n_attitudes());
    let mut out = Vec::new();
    for tp in permutations(kk) {
        let per_type = permutations(ll);
        let mut choice = vec![0usize; kk];
        loop {
            let lps: Vec<Vec<usize>> = choice.iter().map(|&c| per_type[c].clone()).collect();
            out.push(score(&tp, &lps));
            let mut i = 0;
            while i < kk {
                choice[i] += 1;
                if choice[i] < per_type.len() {
                    break;
                }
                choice[i] = 0;
                i += 1;
            }
            if i == kk {
                break;
            }
        }
    }
    out
}

/// Worst errors under the best relabeling: per-entry means of the
/// attitude-dependent items on their primary type, and the type-averaged mean
/// of the attitude-independent items (whose type is not identified).
pub fn recovery_errors(gt: &McvqModel, fit: &McvqModel) -> (f64, f64) {
    let (m, kk, ll) = (gt.n_items(), gt.n_types(), gt.n_attitudes());
    let informative = |j: usize| {
        (0..kk).any(|k| (0..ll).any(|l| (gt.rating_mean(j, k, l) - gt.rating_mean(j, k, 0)).abs() > 0.5))
    };
    let averaged = |model: &McvqModel, j: usize| -> f64 {
        (0..kk).map(|k| model.type_prob(j, k) * (0..ll).map(|l| model.rating_mean(j, k, l)).sum::<f64>() / ll as f64).sum()
    };
    let mut flat = 0.0f64;
    for j in (0..m).filter(|&j| !informative(j)) {
        flat = flat.max((averaged(gt, j) - averaged(fit, j)).abs());
    }
    let entry = aligned(gt, |tp, lps| {
        let mut worst = 0.0f64;
        for j in (0..m).filter(|&j| informative(j)) {
            for k in (0..kk).filter(|&k| gt.type_prob(j, k) >= 0.5) {
                for (l, &fl) in lps[k].iter().enumerate() {
                    worst = worst.max((gt.rating_mean(j, k, l) - fit.rating_mean(j, tp[k], fl)).abs());
                }
            }
        }
        worst
    })
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    (entry, flat)
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}
