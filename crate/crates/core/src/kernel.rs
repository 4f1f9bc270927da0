//! Inner loop of exact softmax ascent on a bandit objective.
//!
//! The objective separates across states, so every state's row is trained
//! independently. Rows are packed into groups of `L` lanes and advanced
//! together; when a lane finishes, the next pending row takes its place.
//! On x86-64 with AVX2 and FMA the loop is compiled again with those features
//! and a branch-free exponential so the lanes vectorize; with AVX-512 the
//! groups are eight lanes wide.

const L: usize = 4;
const L_WIDE: usize = 8;

/// Outcome of ascent on one state's row.
pub(crate) struct RowRun {
    pub steps: u64,
    pub gap: f64,
    pub min_opt: f64,
}

/// Ascent settings shared by every row.
#[derive(Clone, Copy)]
pub(crate) struct RowOptions {
    pub max_steps: u64,
    pub stop_at: Option<f64>,
}

/// Trains every row of `theta` (row-major, `scales.len()` rows) from zero.
///
/// `q` holds the bandit values, `scales[s]` the effective step `η μ(s)` and
/// `optimal[s]` the greedy actions whose probability is tracked.
pub(crate) fn train_rows(
    theta: &mut [f64],
    q: &[f64],
    scales: &[f64],
    optimal: &[Vec<usize>],
    opts: RowOptions,
) -> Vec<RowRun> {
    let n_states = scales.len();
    if n_states == 0 {
        return Vec::new();
    }
    let n_actions = q.len() / n_states;
    macro_rules! dispatch {
        ($($a:literal)*) => {
            match n_actions {
                $($a => return lanes_entry::<$a>(theta, q, scales, optimal, opts),)*
                _ => {}
            }
        };
    }
    dispatch!(1 2 3 4 5 6 7 8);
    (0..n_states)
        .map(|s| {
            let row = s * n_actions..(s + 1) * n_actions;
            train_row_scalar(&mut theta[row.clone()], &q[row], scales[s], &optimal[s], opts)
        })
        .collect()
}

fn lanes_entry<const A: usize>(
    theta: &mut [f64],
    q: &[f64],
    scales: &[f64],
    optimal: &[Vec<usize>],
    opts: RowOptions,
) -> Vec<RowRun> {
    #[cfg(target_arch = "x86_64")]
    {
        if is_x86_feature_detected!("avx512f") && is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU features were detected at runtime.
            return unsafe { lanes_avx512::<A>(theta, q, scales, optimal, opts) };
        }
        if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU features were detected at runtime.
            return unsafe { lanes_avx2::<A>(theta, q, scales, optimal, opts) };
        }
    }
    lanes::<A, L, _>(theta, q, scales, optimal, opts, f64::exp)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f,avx2,fma")]
unsafe fn lanes_avx512<const A: usize>(
    theta: &mut [f64],
    q: &[f64],
    scales: &[f64],
    optimal: &[Vec<usize>],
    opts: RowOptions,
) -> Vec<RowRun> {
    lanes::<A, L_WIDE, _>(theta, q, scales, optimal, opts, exp_nonpositive)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn lanes_avx2<const A: usize>(
    theta: &mut [f64],
    q: &[f64],
    scales: &[f64],
    optimal: &[Vec<usize>],
    opts: RowOptions,
) -> Vec<RowRun> {
    lanes::<A, L, _>(theta, q, scales, optimal, opts, exp_nonpositive)
}

/// `e^x` for `x ≤ 0` (small positive arguments are fine too), accurate to
/// about two ulp; arguments below −700 are clamped, which only matters far
/// below the scale of a probability.
#[inline(always)]
fn exp_nonpositive(x: f64) -> f64 {
    const SHIFT: f64 = 6755399441055744.0;
    const LN2_HI: f64 = 0.693145751953125;
    const LN2_LO: f64 = 1.428_606_820_309_417_3e-6;
    let x = x.max(-700.0);
    let kk = x.mul_add(std::f64::consts::LOG2_E, SHIFT);
    let k = kk - SHIFT;
    let r = k.mul_add(-LN2_HI, x);
    let r = k.mul_add(-LN2_LO, r);
    const C: [f64; 14] = [
        1.0,
        1.0,
        0.5,
        1.0 / 6.0,
        1.0 / 24.0,
        1.0 / 120.0,
        1.0 / 720.0,
        1.0 / 5040.0,
        1.0 / 40320.0,
        1.0 / 362880.0,
        1.0 / 3628800.0,
        1.0 / 39916800.0,
        1.0 / 479001600.0,
        1.0 / 6227020800.0,
    ];
    let r2 = r * r;
    let r4 = r2 * r2;
    let r8 = r4 * r4;
    let a0 = C[1].mul_add(r, C[0]);
    let a1 = C[3].mul_add(r, C[2]);
    let a2 = C[5].mul_add(r, C[4]);
    let a3 = C[7].mul_add(r, C[6]);
    let a4 = C[9].mul_add(r, C[8]);
    let a5 = C[11].mul_add(r, C[10]);
    let a6 = C[13].mul_add(r, C[12]);
    let b0 = a1.mul_add(r2, a0);
    let b1 = a3.mul_add(r2, a2);
    let b2 = a5.mul_add(r2, a4);
    let c0 = b1.mul_add(r4, b0);
    let c1 = a6.mul_add(r4, b2);
    let p = c1.mul_add(r8, c0);
    p * f64::from_bits(kk.to_bits().wrapping_add(1023) << 52)
}

struct Group<const A: usize, const L: usize> {
    theta: [[f64; L]; A],
    q: [[f64; L]; A],
    /// 0 for greedy actions, +∞ otherwise.
    opt_mask: [[f64; L]; A],
    best: [f64; L],
    scale: [f64; L],
    threshold: [f64; L],
    end: [u64; L],
    start: [u64; L],
    min_opt: [f64; L],
    state: [Option<usize>; L],
    /// Column `j` of a lane holds action `perm[l][j]`; column 0 is greedy.
    perm: [[usize; A]; L],
}

impl<const A: usize, const L: usize> Group<A, L> {
    fn empty() -> Self {
        Group {
            theta: [[0.0; L]; A],
            q: [[0.0; L]; A],
            opt_mask: [[f64::INFINITY; L]; A],
            best: [0.0; L],
            scale: [0.0; L],
            threshold: [f64::NEG_INFINITY; L],
            end: [u64::MAX; L],
            start: [0; L],
            min_opt: [f64::INFINITY; L],
            state: [None; L],
            perm: [std::array::from_fn(|a| a); L],
        }
    }

    fn clear(&mut self, l: usize) {
        for a in 0..A {
            self.theta[a][l] = 0.0;
            self.q[a][l] = 0.0;
            self.opt_mask[a][l] = f64::INFINITY;
        }
        self.best[l] = 0.0;
        self.scale[l] = 0.0;
        self.threshold[l] = f64::NEG_INFINITY;
        self.end[l] = u64::MAX;
        self.min_opt[l] = f64::INFINITY;
        self.state[l] = None;
    }

    #[allow(clippy::too_many_arguments)]
    fn load(
        &mut self,
        l: usize,
        s: usize,
        q: &[f64],
        scale: f64,
        optimal: &[usize],
        opts: RowOptions,
        iter: u64,
    ) {
        self.clear(l);
        let lead = optimal.first().copied().unwrap_or(0);
        let mut perm = [0; A];
        perm[0] = lead;
        let mut j = 1;
        for a in (0..A).filter(|&a| a != lead) {
            perm[j] = a;
            j += 1;
        }
        let mut best = f64::NEG_INFINITY;
        for (j, &a) in perm.iter().enumerate() {
            self.q[j][l] = q[a];
            best = best.max(q[a]);
            if optimal.contains(&a) {
                self.opt_mask[j][l] = 0.0;
            }
        }
        self.perm[l] = perm;
        self.best[l] = best;
        self.scale[l] = scale;
        self.threshold[l] = opts.stop_at.unwrap_or(f64::NEG_INFINITY);
        self.start[l] = iter;
        self.end[l] = iter.saturating_add(opts.max_steps);
        self.state[l] = Some(s);
    }
}

#[inline(always)]
fn lanes<const A: usize, const L: usize, E: Fn(f64) -> f64>(
    theta_out: &mut [f64],
    q: &[f64],
    scales: &[f64],
    optimal: &[Vec<usize>],
    opts: RowOptions,
    exp: E,
) -> Vec<RowRun> {
    let n_states = scales.len();
    let mut runs: Vec<Option<RowRun>> = (0..n_states).map(|_| None).collect();
    let mut pending = 0..n_states;
    let mut remaining = n_states;
    let mut g = Group::<A, L>::empty();
    let mut iter = 0u64;
    for l in 0..L {
        if let Some(s) = pending.next() {
            g.load(l, s, &q[s * A..(s + 1) * A], scales[s], &optimal[s], opts, iter);
        }
    }
    while remaining > 0 {
        // The greedy column carries the largest logit along the whole run, so
        // it serves as the softmax shift.
        let mut e = [[0.0; L]; A];
        let mut total = [0.0; L];
        let mut weighted = [0.0; L];
        for a in 0..A {
            for l in 0..L {
                e[a][l] = exp(g.theta[a][l] - g.theta[0][l]);
                total[l] += e[a][l];
                weighted[l] += e[a][l] * g.q[a][l];
            }
        }
        let mut inv = [0.0; L];
        let mut value = [0.0; L];
        for l in 0..L {
            inv[l] = 1.0 / total[l];
            value[l] = weighted[l] * inv[l];
        }
        let mut p = [[0.0; L]; A];
        for a in 0..A {
            for l in 0..L {
                p[a][l] = e[a][l] * inv[l];
                g.min_opt[l] = g.min_opt[l].min(p[a][l].max(g.opt_mask[a][l]));
            }
        }
        let mut any_done = false;
        for l in 0..L {
            any_done |= (g.best[l] - value[l] <= g.threshold[l]) | (iter == g.end[l]);
        }
        if any_done {
            for l in 0..L {
                let Some(s) = g.state[l] else { continue };
                let gap = g.best[l] - value[l];
                if gap <= g.threshold[l] || iter == g.end[l] {
                    for (j, &a) in g.perm[l].iter().enumerate() {
                        theta_out[s * A + a] = g.theta[j][l];
                    }
                    runs[s] = Some(RowRun {
                        steps: iter - g.start[l],
                        gap: gap.max(0.0),
                        min_opt: g.min_opt[l],
                    });
                    remaining -= 1;
                    match pending.next() {
                        Some(next) => g.load(
                            l,
                            next,
                            &q[next * A..(next + 1) * A],
                            scales[next],
                            &optimal[next],
                            opts,
                            iter,
                        ),
                        None => g.clear(l),
                    }
                }
            }
            // Freshly loaded lanes have not been evaluated yet.
            continue;
        }
        for a in 0..A {
            for l in 0..L {
                g.theta[a][l] += g.scale[l] * (p[a][l] * (g.q[a][l] - value[l]));
            }
        }
        iter += 1;
    }
    runs.into_iter().map(|r| r.expect("every row finishes")).collect()
}

fn train_row_scalar(
    theta: &mut [f64],
    q: &[f64],
    scale: f64,
    optimal: &[usize],
    opts: RowOptions,
) -> RowRun {
    let mut probs = vec![0.0; q.len()];
    let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut min_opt = f64::INFINITY;
    let mut steps = 0u64;
    theta.fill(0.0);
    let gap = loop {
        crate::softmax::softmax_row_into(theta, &mut probs);
        let value: f64 = probs.iter().zip(q).map(|(p, x)| p * x).sum();
        for &a in optimal {
            min_opt = min_opt.min(probs[a]);
        }
        let gap = best - value;
        if steps == opts.max_steps || opts.stop_at.is_some_and(|t| gap <= t) {
            break gap;
        }
        for ((t, p), x) in theta.iter_mut().zip(&probs).zip(q) {
            *t += scale * (p * (x - value));
        }
        steps += 1;
    };
    RowRun {
        steps,
        gap: gap.max(0.0),
        min_opt,
    }
}
