//! Independent reference implementations used as oracles by the
//! integration tests. Deliberately written as plain loops with no shared
//! code from the library beyond its data types.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use dcmann::memory::{InterfaceVector, MemoryShape, MemoryState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Softmax over `beta * cos(M[i], key)`, with 1e-8 added to the norm product.
pub fn content(mem: &[f64], n: usize, d: usize, key: &[f64], beta: f64) -> Vec<f64> {
    let scores: Vec<f64> = (0..n)
        .map(|i| {
            let row = &mem[i * d..(i + 1) * d];
            beta * dot(row, key) / (norm(row) * norm(key) + 1e-8)
        })
        .collect();
    let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

/// Allocation weighting by brute force: build the explicit ascending
/// permutation (stable on ties) and apply the product formula to each
/// position directly.
pub fn allocation(usage: &[f64]) -> Vec<f64> {
    let n = usage.len();
    let mut phi: Vec<usize> = Vec::with_capacity(n);
    let mut taken = vec![false; n];
    for _ in 0..n {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if !taken[i] && best.map_or(true, |b| usage[i] < usage[b]) {
                best = Some(i);
            }
        }
        let b = best.expect("unvisited slot");
        taken[b] = true;
        phi.push(b);
    }
    let mut a = vec![0.0; n];
    for j in 0..n {
        let mut prod = 1.0;
        for i in 0..j {
            prod *= usage[phi[i]];
        }
        a[phi[j]] = (1.0 - usage[phi[j]]) * prod;
    }
    a
}

pub struct OracleStep {
    pub state: MemoryState<f64>,
    pub reads: Vec<Vec<f64>>,
}

/// One encode-phase memory step evaluated line by line, without the tape.
/// With `decode` set, writes are prohibited: contents, usage, precedence and
/// links carry over and the write weighting is zero.
pub fn memory_step(prev: &MemoryState<f64>, iface: &InterfaceVector<f64>, decode: bool) -> OracleStep {
    let MemoryShape {
        slots: n,
        word: d,
        read_heads: r,
    } = prev.shape;
    let mut s = prev.clone();
    if decode {
        s.write_weights = vec![0.0; n];
    } else {
        // usage
        let mut usage = vec![0.0; n];
        for i in 0..n {
            let u = prev.usage[i];
            let w = prev.write_weights[i];
            let mut psi = 1.0;
            for k in 0..r {
                psi *= 1.0 - iface.free_gates[k] * prev.read_weights[k][i];
            }
            usage[i] = (u + w - u * w) * psi;
        }
        // write weighting
        let a = allocation(&usage);
        let cw = content(&prev.mem, n, d, &iface.write_key, iface.write_strength);
        let (gw, ga) = (iface.write_gate, iface.alloc_gate);
        let ww: Vec<f64> = (0..n).map(|i| gw * (ga * a[i] + (1.0 - ga) * cw[i])).collect();
        // memory
        let mut mem = prev.mem.clone();
        for i in 0..n {
            for j in 0..d {
                mem[i * d + j] = prev.mem[i * d + j] * (1.0 - ww[i] * iface.erase[j]) + ww[i] * iface.write_vector[j];
            }
        }
        // links, then precedence
        let mut link = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    link[i * n + j] = (1.0 - ww[i] - ww[j]) * prev.link[i * n + j] + ww[i] * prev.precedence[j];
                }
            }
        }
        let total: f64 = ww.iter().sum();
        let precedence: Vec<f64> = (0..n).map(|i| (1.0 - total) * prev.precedence[i] + ww[i]).collect();
        s.mem = mem;
        s.usage = usage;
        s.link = link;
        s.precedence = precedence;
        s.write_weights = ww;
    }
    // reads
    let mut reads = Vec::with_capacity(r);
    for k in 0..r {
        let wp = &prev.read_weights[k];
        let mut fwd = vec![0.0; n];
        let mut bwd = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                fwd[i] += s.link[i * n + j] * wp[j];
                bwd[i] += s.link[j * n + i] * wp[j];
            }
        }
        let c = content(&s.mem, n, d, &iface.read_keys[k], iface.read_strengths[k]);
        let pi = iface.read_modes[k];
        let w: Vec<f64> = (0..n).map(|i| pi[0] * bwd[i] + pi[1] * c[i] + pi[2] * fwd[i]).collect();
        let mut rv = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                rv[j] += w[i] * s.mem[i * d + j];
            }
        }
        s.read_weights[k] = w;
        reads.push(rv);
    }
    OracleStep { state: s, reads }
}

/// Non-negative vector with sum at most one.
pub fn sub_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    let total: f64 = raw.iter().sum::<f64>() / rng.gen_range(0.05..1.0);
    raw.iter().map(|x| x / total).collect()
}

/// A random state that satisfies the memory invariants.
pub fn random_state(rng: &mut ChaCha8Rng, shape: MemoryShape) -> MemoryState<f64> {
    let (n, d, r) = (shape.slots, shape.word, shape.read_heads);
    let mut link = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                link[i * n + j] = rng.gen::<f64>() / n as f64;
            }
        }
    }
    MemoryState {
        shape,
        mem: (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        usage: (0..n).map(|_| rng.gen::<f64>()).collect(),
        precedence: sub_simplex(rng, n),
        link,
        write_weights: sub_simplex(rng, n),
        read_weights: (0..r).map(|_| sub_simplex(rng, n)).collect(),
    }
}

/// Raw controller emission with entries in `[-scale, scale]`.
pub fn raw_interface(rng: &mut ChaCha8Rng, shape: MemoryShape, scale: f64) -> Vec<f64> {
    (0..shape.interface_len())
        .map(|_| rng.gen_range(-scale..scale))
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Edit distance from the recursive definition, memoized.
pub fn levenshtein_recursive(a: &[usize], b: &[usize]) -> usize {
    fn go(a: &[usize], b: &[usize], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            go(a, b, i + 1, j + 1, memo)
        } else {
            1 + go(a, b, i + 1, j, memo)
                .min(go(a, b, i, j + 1, memo))
                .min(go(a, b, i + 1, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

/// Control tokens removed before scoring: PAD and the end marker.
pub fn content_tokens(s: &[usize]) -> Vec<usize> {
    s.iter().copied().filter(|&t| t != 0 && t != 3).collect()
}

pub fn nld_reference(a: &[usize], b: &[usize]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        0.0
    } else {
        levenshtein_recursive(a, b) as f64 / longest as f64
    }
}

pub fn precision_reference(pred: &[usize], truth: &[usize]) -> f64 {
    let p: BTreeSet<usize> = content_tokens(pred).into_iter().collect();
    let t: BTreeSet<usize> = content_tokens(truth).into_iter().collect();
    if p.is_empty() {
        0.0
    } else {
        p.intersection(&t).count() as f64 / p.len() as f64
    }
}

pub fn jaccard_reference(pred: &[usize], truth: &[usize]) -> f64 {
    let p: BTreeSet<usize> = content_tokens(pred).into_iter().collect();
    let t: BTreeSet<usize> = content_tokens(truth).into_iter().collect();
    let union = p.union(&t).count();
    if union == 0 {
        1.0
    } else {
        p.intersection(&t).count() as f64 / union as f64
    }
}

pub mod primitives {
    //! One small differentiable program per tape operation.

    use dcmann::autodiff::{gradient_check, ParamId, ParamStore, Result, Tape, Tensor, Var};
    use rand::Rng;

    #[derive(Clone, Copy)]
    pub enum Domain {
        Any,
        Positive,
        /// Entries in `(0, 1/len)`, so sums stay below one.
        Weights,
    }

    pub struct Case {
        pub name: &'static str,
        pub inputs: Vec<(Vec<usize>, Domain)>,
        pub build: fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    }

    fn v(n: usize) -> (Vec<usize>, Domain) {
        (vec![n], Domain::Any)
    }

    fn m(r: usize, c: usize) -> (Vec<usize>, Domain) {
        (vec![r, c], Domain::Any)
    }

    /// `Σ out_i c_i` with fixed, distinct coefficients, so every output
    /// entry contributes a different amount.
    pub fn reduce(tape: &mut Tape<f64>, out: Var) -> Result<Var> {
        let n = tape.value(out).len();
        let flat = tape.reshape(out, vec![n])?;
        let coef = tape.vector((0..n).map(|i| ((i + 1) as f64).sin() + 0.3).collect());
        let prod = tape.mul(flat, coef)?;
        Ok(tape.sum(prod))
    }

    pub fn cases() -> Vec<Case> {
        vec![
            Case {
                name: "add",
                inputs: vec![v(4), v(4)],
                build: |t, x| t.add(x[0], x[1]),
            },
            Case {
                name: "sub",
                inputs: vec![v(4), v(4)],
                build: |t, x| t.sub(x[0], x[1]),
            },
            Case {
                name: "mul",
                inputs: vec![v(4), v(4)],
                build: |t, x| t.mul(x[0], x[1]),
            },
            Case {
                name: "div",
                inputs: vec![v(4), (vec![4], Domain::Positive)],
                build: |t, x| t.div(x[0], x[1]),
            },
            Case {
                name: "scale_shift",
                inputs: vec![v(3)],
                build: |t, x| Ok(t.scale_shift(x[0], -1.7, 0.4)),
            },
            Case {
                name: "scale",
                inputs: vec![v(3)],
                build: |t, x| Ok(t.scale(x[0], 2.5)),
            },
            Case {
                name: "one_minus",
                inputs: vec![v(3)],
                build: |t, x| Ok(t.one_minus(x[0])),
            },
            Case {
                name: "mul_scalar",
                inputs: vec![v(4), v(1)],
                build: |t, x| t.mul_scalar(x[0], x[1]),
            },
            Case {
                name: "matvec",
                inputs: vec![m(3, 4), v(4)],
                build: |t, x| t.matvec(x[0], x[1]),
            },
            Case {
                name: "mat_t_vec",
                inputs: vec![m(3, 4), v(3)],
                build: |t, x| t.mat_t_vec(x[0], x[1]),
            },
            Case {
                name: "matmul",
                inputs: vec![m(2, 3), m(3, 4)],
                build: |t, x| t.matmul(x[0], x[1]),
            },
            Case {
                name: "affine",
                inputs: vec![m(3, 4), v(4), v(3)],
                build: |t, x| t.affine(x[0], x[1], x[2]),
            },
            Case {
                name: "outer",
                inputs: vec![v(3), v(2)],
                build: |t, x| t.outer(x[0], x[1]),
            },
            Case {
                name: "concat",
                inputs: vec![v(2), v(3)],
                build: |t, x| t.concat(&[x[1], x[0], x[1]]),
            },
            Case {
                name: "slice",
                inputs: vec![m(4, 2)],
                build: |t, x| t.slice(x[0], 1, 2),
            },
            Case {
                name: "split",
                inputs: vec![v(6)],
                build: |t, x| {
                    let p = t.split(x[0], &[1, 3, 2])?;
                    let a = t.scale(p[0], 3.0);
                    let b = t.exp(p[2]);
                    t.concat(&[b, p[1], a])
                },
            },
            Case {
                name: "reshape",
                inputs: vec![v(6), v(3)],
                build: |t, x| {
                    let m = t.reshape(x[0], vec![2, 3])?;
                    t.matvec(m, x[1])
                },
            },
            Case {
                name: "gather",
                inputs: vec![m(3, 2)],
                build: |t, x| t.gather(x[0], &[2, 0, 2, 1]),
            },
            Case {
                name: "row",
                inputs: vec![m(3, 2)],
                build: |t, x| t.row(x[0], 1),
            },
            Case {
                name: "sigmoid",
                inputs: vec![v(4)],
                build: |t, x| Ok(t.sigmoid(x[0])),
            },
            Case {
                name: "tanh",
                inputs: vec![v(4)],
                build: |t, x| Ok(t.tanh(x[0])),
            },
            Case {
                name: "exp",
                inputs: vec![v(4)],
                build: |t, x| Ok(t.exp(x[0])),
            },
            Case {
                name: "log",
                inputs: vec![(vec![4], Domain::Positive)],
                build: |t, x| Ok(t.log(x[0])),
            },
            Case {
                name: "oneplus",
                inputs: vec![v(4)],
                build: |t, x| Ok(t.oneplus(x[0])),
            },
            Case {
                name: "softmax",
                inputs: vec![v(5)],
                build: |t, x| t.softmax(x[0]),
            },
            Case {
                name: "sum",
                inputs: vec![m(2, 3)],
                build: |t, x| Ok(t.sum(x[0])),
            },
            Case {
                name: "cumprod_exclusive",
                inputs: vec![v(5)],
                build: |t, x| t.cumprod_exclusive(x[0]),
            },
            Case {
                name: "cosine_rows",
                inputs: vec![m(4, 3), v(3)],
                build: |t, x| t.cosine_rows(x[0], x[1]),
            },
            Case {
                name: "cosine",
                inputs: vec![v(3), v(3)],
                build: |t, x| t.cosine(x[0], x[1]),
            },
            Case {
                name: "cross_entropy",
                inputs: vec![v(5)],
                build: |t, x| t.cross_entropy(x[0], 2),
            },
            Case {
                name: "link_update",
                inputs: vec![
                    (vec![4, 4], Domain::Weights),
                    (vec![4], Domain::Weights),
                    (vec![4], Domain::Weights),
                ],
                build: |t, x| t.link_update(x[0], x[1], x[2]),
            },
            Case {
                name: "erase_write",
                inputs: vec![m(4, 3), (vec![4], Domain::Weights), (vec![3], Domain::Weights), v(3)],
                build: |t, x| t.erase_write(x[0], x[1], x[2], x[3]),
            },
        ]
    }

    pub fn random_inputs(seed: u64, shapes: &[(Vec<usize>, Domain)]) -> ParamStore<f64> {
        let mut rng = super::rng(seed);
        let mut store = ParamStore::new();
        for (k, (shape, domain)) in shapes.iter().enumerate() {
            let n: usize = shape.iter().product();
            let values = (0..n)
                .map(|_| match domain {
                    Domain::Any => rng.gen_range(-2.0..2.0),
                    Domain::Positive => rng.gen_range(0.2..3.0),
                    Domain::Weights => rng.gen_range(0.01..0.9) / n as f64,
                })
                .collect();
            store
                .insert(format!("x{k}"), Tensor::new(shape.clone(), values).unwrap())
                .unwrap();
        }
        store
    }

    /// Relative gradient error of every primitive for one random draw.
    pub fn check_all(seed: u64) -> Vec<(&'static str, f64)> {
        cases()
            .into_iter()
            .map(|case| {
                let mut params = random_inputs(seed, &case.inputs);
                let ids: Vec<ParamId> = params.iter().map(|(id, _, _)| id).collect();
                let report = gradient_check(&mut params, 1e-5, |tape, bound| {
                    let xs: Vec<_> = ids.iter().map(|id| bound.get(*id)).collect();
                    let out = (case.build)(tape, &xs)?;
                    reduce(tape, out)
                })
                .unwrap();
                (case.name, report.max_rel_error)
            })
            .collect()
    }
}

/// Library step against [`memory_step`] on a random state and interface.
pub mod compare {
    use dcmann::autodiff::Tape;
    use dcmann::memory::{memory_step, parse_interface_values, DecodeFreeze, MemoryShape, Phase};

    use super::max_abs_diff;

    /// Largest deviation between the library step and the straight-line oracle.
    pub fn oracle_gap(seed: u64, shape: MemoryShape, phase: Phase) -> f64 {
        let mut rng = super::rng(seed);
        let prev = super::random_state(&mut rng, shape);
        let raw = super::raw_interface(&mut rng, shape, 3.0);
        let iface = parse_interface_values(&raw, shape).unwrap();

        let mut tape = Tape::<f64>::new();
        let vars = prev.to_tape(&mut tape).unwrap();
        let iv = iface.to_tape(&mut tape);
        let out = memory_step(&mut tape, &vars, &iv, phase, DecodeFreeze::All).unwrap();
        let got = out.state.snapshot(&tape, shape);
        let want = super::memory_step(&prev, &iface, phase == Phase::Decode);

        let mut gap = 0.0f64;
        for (a, b) in [
            (&got.mem, &want.state.mem),
            (&got.usage, &want.state.usage),
            (&got.precedence, &want.state.precedence),
            (&got.link, &want.state.link),
            (&got.write_weights, &want.state.write_weights),
        ] {
            gap = gap.max(max_abs_diff(a, b));
        }
        for k in 0..shape.read_heads {
            gap = gap.max(max_abs_diff(&got.read_weights[k], &want.state.read_weights[k]));
            gap = gap.max(max_abs_diff(tape.value(out.reads[k]), &want.reads[k]));
        }
        gap
    }
}
