use leo_consensus::approx_ba::u_f;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Sort, drop `f` from each end, keep every `f`-th survivor, average.
fn oracle(values: &[f64], f: usize) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let kept = &v[f..v.len() - f];
    let picked: Vec<f64> = kept.iter().step_by(f).copied().collect();
    picked.iter().sum::<f64>() / picked.len() as f64
}

fn multisets(len: usize, max: u32) -> Vec<Vec<f64>> {
    if len == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for rest in multisets(len - 1, max) {
        let floor = rest.last().map_or(0, |&x| x as u32);
        for x in floor..=max {
            let mut m = rest.clone();
            m.push(x as f64);
            out.push(m);
        }
    }
    out
}

#[test]
fn matches_brute_force_on_all_small_multisets() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut checked = 0;
    for f in 1..=2 {
        for len in 0..=8 {
            for m in multisets(len, 4) {
                let mut shuffled = m.clone();
                shuffled.shuffle(&mut rng);
                match u_f(&shuffled, f) {
                    Ok(x) => {
                        assert!(len > 3 * f);
                        assert_eq!(x, oracle(&m, f), "{m:?} f={f}");
                        checked += 1;
                    }
                    Err(_) => assert!(len < 3 * f + 1, "{m:?} f={f}"),
                }
            }
        }
    }
    assert!(checked > 1000);
}
