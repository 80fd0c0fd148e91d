//! Plain re-count of corpus BLEU used as a reference in tests. It shares no
//! code with the library: n-grams are listed, counted by linear scan,
//! clipped and pooled.

pub fn reference_bleu(cands: &[Vec<u32>], refs: &[Vec<u32>]) -> f64 {
    let mut matches = [0f64; 4];
    let mut totals = [0f64; 4];
    let (mut c_len, mut r_len) = (0f64, 0f64);
    for (c, r) in cands.iter().zip(refs) {
        c_len += c.len() as f64;
        r_len += r.len() as f64;
        for n in 1..=4 {
            if c.len() < n {
                continue;
            }
            let cg: Vec<&[u32]> = (0..=c.len() - n).map(|i| &c[i..i + n]).collect();
            let rg: Vec<&[u32]> = if r.len() >= n { (0..=r.len() - n).map(|i| &r[i..i + n]).collect() } else { vec![] };
            totals[n - 1] += cg.len() as f64;
            let mut seen: Vec<&[u32]> = Vec::new();
            for g in &cg {
                if seen.contains(g) {
                    continue;
                }
                seen.push(g);
                let in_c = cg.iter().filter(|x| *x == g).count();
                let in_r = rg.iter().filter(|x| *x == g).count();
                matches[n - 1] += in_c.min(in_r) as f64;
            }
        }
    }
    if (0..4).any(|i| matches[i] == 0.0 || totals[i] == 0.0) {
        return 0.0;
    }
    let log_mean = (0..4).map(|i| (matches[i] / totals[i]).ln()).sum::<f64>() / 4.0;
    let bp = if c_len >= r_len { 1.0 } else { (1.0 - r_len / c_len).exp() };
    100.0 * bp * log_mean.exp()
}
