//! Position-aware gated fusion of the rally and player contexts.
//!
//! For each active stream `k` and every decode position:
//!
//! ```text
//! h̃_k = tanh(h_k W_k)
//! α_k = sigmoid([h̃_A, h̃_B, h̃_L] W̃_k)
//! z   = sigmoid(Σ_k β_k ⊗ α_k ⊗ h̃_k)
//! ```
//!
//! Disabled streams drop out of both the sum and the concatenation. With a
//! single active stream the network is skipped and `z` is that stream.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::graph::Graph;
use crate::numerics::{uniform_matrix, Matrix, ParamId, ParamStore, Rng, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stream {
    A,
    B,
    Rally,
}

impl Stream {
    pub const ALL: [Stream; 3] = [Stream::A, Stream::B, Stream::Rally];

    fn tag(self) -> &'static str {
        match self {
            Stream::A => "a",
            Stream::B => "b",
            Stream::Rally => "l",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationFlags {
    pub use_rally: bool,
    pub use_a: bool,
    pub use_b: bool,
    pub use_alpha: bool,
    pub use_beta: bool,
    pub use_taa: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self::FULL
    }
}

impl AblationFlags {
    pub const FULL: AblationFlags = AblationFlags {
        use_rally: true,
        use_a: true,
        use_b: true,
        use_alpha: true,
        use_beta: true,
        use_taa: true,
    };

    /// The ablation table rows, full model first.
    pub fn variants() -> Vec<(&'static str, AblationFlags)> {
        let f = Self::FULL;
        vec![
            ("ShuttleNet", f),
            (
                "w/o L",
                AblationFlags {
                    use_rally: false,
                    ..f
                },
            ),
            ("w/o A", AblationFlags { use_a: false, ..f }),
            ("w/o B", AblationFlags { use_b: false, ..f }),
            (
                "w/o A + w/o B",
                AblationFlags {
                    use_a: false,
                    use_b: false,
                    ..f
                },
            ),
            (
                "w/o A + w/o L",
                AblationFlags {
                    use_a: false,
                    use_rally: false,
                    ..f
                },
            ),
            (
                "w/o B + w/o L",
                AblationFlags {
                    use_b: false,
                    use_rally: false,
                    ..f
                },
            ),
            (
                "w/o beta",
                AblationFlags {
                    use_beta: false,
                    ..f
                },
            ),
            (
                "w/o alpha",
                AblationFlags {
                    use_alpha: false,
                    ..f
                },
            ),
            (
                "w/o TAA",
                AblationFlags {
                    use_taa: false,
                    ..f
                },
            ),
        ]
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.active_streams().is_empty() {
            return Err("at least one of the rally, A and B contexts must be enabled".into());
        }
        Ok(())
    }

    pub fn uses(&self, s: Stream) -> bool {
        match s {
            Stream::A => self.use_a,
            Stream::B => self.use_b,
            Stream::Rally => self.use_rally,
        }
    }

    pub fn active_streams(&self) -> Vec<Stream> {
        Stream::ALL.into_iter().filter(|&s| self.uses(s)).collect()
    }

    pub fn uses_players(&self) -> bool {
        self.use_a || self.use_b
    }
}

impl fmt::Display for AblationFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let on = |b: bool| if b { "on" } else { "off" };
        write!(
            f,
            "L={} A={} B={} alpha={} beta={} taa={}",
            on(self.use_rally),
            on(self.use_a),
            on(self.use_b),
            on(self.use_alpha),
            on(self.use_beta),
            on(self.use_taa)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamGate {
    pub stream: Stream,
    /// `d × d`
    pub w: ParamId,
    /// `(k·d) × d` for `k` active streams; absent without α.
    pub w_tilde: Option<ParamId>,
    /// `1 × d`; absent without β.
    pub beta: Option<ParamId>,
}

/// Empty `gates` means the network is bypassed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pgfn {
    pub flags: AblationFlags,
    pub gates: Vec<StreamGate>,
}

impl Pgfn {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, d: usize, flags: AblationFlags) -> Self {
        flags.validate().expect("invalid ablation flags");
        let active = flags.active_streams();
        if active.len() == 1 {
            return Self {
                flags,
                gates: Vec::new(),
            };
        }
        let k = active.len();
        let gates = active
            .into_iter()
            .map(|stream| {
                let t = stream.tag();
                let lim = |fan_in: usize| (6.0 / (fan_in + d) as f64).sqrt();
                let w = store.add(format!("fusion.w_{t}"), uniform_matrix(rng, d, d, lim(d)));
                let w_tilde = flags.use_alpha.then(|| {
                    store.add(
                        format!("fusion.w_tilde_{t}"),
                        uniform_matrix(rng, k * d, d, lim(k * d)),
                    )
                });
                let beta = flags
                    .use_beta
                    .then(|| store.add(format!("fusion.beta_{t}"), Matrix::filled(1, d, 1.0)));
                StreamGate {
                    stream,
                    w,
                    w_tilde,
                    beta,
                }
            })
            .collect();
        Self { flags, gates }
    }

    pub fn is_bypassed(&self) -> bool {
        self.gates.is_empty()
    }

    /// Fuses `n × d` contexts given in `[A, B, Rally]` order. Inputs for
    /// disabled streams are ignored and may be `None`.
    pub fn forward(&self, g: &mut Graph, inputs: [Option<Var>; 3]) -> Var {
        let get = |s: Stream| {
            let i = Stream::ALL.iter().position(|&x| x == s).unwrap();
            inputs[i].unwrap_or_else(|| panic!("missing context for enabled stream {s:?}"))
        };
        if self.is_bypassed() {
            return get(self.flags.active_streams()[0]);
        }
        let shape = g.value(get(self.gates[0].stream)).shape();
        for gate in &self.gates {
            assert_eq!(
                g.value(get(gate.stream)).shape(),
                shape,
                "context dimension mismatch"
            );
        }
        let hidden: Vec<Var> = self
            .gates
            .iter()
            .map(|gate| {
                let x = g.linear(get(gate.stream), gate.w);
                g.tape.tanh(x)
            })
            .collect();
        let cat = g.tape.concat_cols(&hidden);
        let mut total: Option<Var> = None;
        for (gate, &h) in self.gates.iter().zip(&hidden) {
            let mut term = h;
            if let Some(wt) = gate.w_tilde {
                let a = g.linear(cat, wt);
                let alpha = g.tape.sigmoid(a);
                term = g.tape.mul(alpha, term);
            }
            if let Some(b) = gate.beta {
                let beta = g.p(b);
                term = g.tape.mul_row(term, beta);
            }
            total = Some(match total {
                None => term,
                Some(t) => g.tape.add(t, term),
            });
        }
        g.tape.sigmoid(total.unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    use crate::numerics::sigmoid as sig;

    #[test]
    fn zero_inputs_give_one_half() {
        let mut store = ParamStore::new();
        let p = Pgfn::new(&mut store, &mut Rng::new(0), 6, AblationFlags::FULL);
        let mut g = Graph::eval(&store);
        let z = g.constant(Matrix::zeros(3, 6));
        let out = p.forward(&mut g, [Some(z), Some(z), Some(z)]);
        assert!(g.value(out).as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn outputs_in_unit_interval() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(1);
        let p = Pgfn::new(&mut store, &mut rng, 5, AblationFlags::FULL);
        let mut g = Graph::eval(&store);
        let xs: Vec<Var> = (0..3)
            .map(|_| g.constant(uniform_matrix(&mut rng, 4, 5, 3.0)))
            .collect();
        let out = p.forward(&mut g, [Some(xs[0]), Some(xs[1]), Some(xs[2])]);
        assert!(g.value(out).as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn scalar_case_by_hand() {
        let mut store = ParamStore::new();
        let p = Pgfn::new(&mut store, &mut Rng::new(2), 1, AblationFlags::FULL);
        let w = [0.7, -1.1, 0.4];
        let wt = [[0.2, -0.5, 0.9], [1.3, 0.1, -0.6], [-0.8, 0.45, 0.3]];
        let beta = [1.5, 0.5, -2.0];
        for (i, gate) in p.gates.iter().enumerate() {
            *store.get_mut(gate.w) = Matrix::filled(1, 1, w[i]);
            *store.get_mut(gate.w_tilde.unwrap()) = Matrix::from_vec(3, 1, wt[i].to_vec());
            *store.get_mut(gate.beta.unwrap()) = Matrix::filled(1, 1, beta[i]);
        }
        let h = [0.3, -0.9, 1.7];
        let mut g = Graph::eval(&store);
        let v: Vec<Var> = h
            .iter()
            .map(|&x| g.constant(Matrix::filled(1, 1, x)))
            .collect();
        let out = p.forward(&mut g, [Some(v[0]), Some(v[1]), Some(v[2])]);
        let ht: Vec<f64> = (0..3).map(|i| (h[i] * w[i]).tanh()).collect();
        let mut s = 0.0;
        for i in 0..3 {
            let alpha = sig((0..3).map(|j| ht[j] * wt[i][j]).sum());
            s += beta[i] * alpha * ht[i];
        }
        assert!((g.value(out)[(0, 0)] - sig(s)).abs() < 1e-15);
    }

    #[test]
    fn disabled_gates_equal_unit_weights() {
        let mut rng = Rng::new(3);
        let d = 4;
        let mut full_store = ParamStore::new();
        let full = Pgfn::new(&mut full_store, &mut Rng::new(9), d, AblationFlags::FULL);
        let xs: Vec<Matrix> = (0..3)
            .map(|_| uniform_matrix(&mut rng, 2, d, 1.0))
            .collect();
        let run = |store: &ParamStore, p: &Pgfn| {
            let mut g = Graph::eval(store);
            let v: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
            let out = p.forward(&mut g, [Some(v[0]), Some(v[1]), Some(v[2])]);
            g.value(out).clone()
        };

        // no α, β at its initial ones: z = sigmoid(Σ h̃)
        let no_alpha_flags = AblationFlags {
            use_alpha: false,
            ..AblationFlags::FULL
        };
        let mut s2 = ParamStore::new();
        let no_alpha = Pgfn::new(&mut s2, &mut Rng::new(9), d, no_alpha_flags);
        for (a, b) in full.gates.iter().zip(&no_alpha.gates) {
            *s2.get_mut(b.w) = full_store.get(a.w).clone();
        }
        let got = run(&s2, &no_alpha);
        let want = Matrix::from_fn(2, d, |r, c| {
            let s: f64 = full
                .gates
                .iter()
                .enumerate()
                .map(|(i, gate)| (xs[i].matmul(full_store.get(gate.w)))[(r, c)].tanh())
                .sum();
            sig(s)
        });
        assert_eq!(got, want);

        // β = 1 everywhere makes the full network equal the no-β network
        let no_beta_flags = AblationFlags {
            use_beta: false,
            ..AblationFlags::FULL
        };
        let mut s3 = ParamStore::new();
        let no_beta = Pgfn::new(&mut s3, &mut Rng::new(9), d, no_beta_flags);
        for (a, b) in full.gates.iter().zip(&no_beta.gates) {
            *s3.get_mut(b.w) = full_store.get(a.w).clone();
            *s3.get_mut(b.w_tilde.unwrap()) = full_store.get(a.w_tilde.unwrap()).clone();
        }
        assert_eq!(run(&s3, &no_beta), run(&full_store, &full));
    }

    #[test]
    fn single_stream_bypasses() {
        let mut store = ParamStore::new();
        let flags = AblationFlags {
            use_a: false,
            use_b: false,
            ..AblationFlags::FULL
        };
        let p = Pgfn::new(&mut store, &mut Rng::new(0), 3, flags);
        assert!(p.is_bypassed());
        assert_eq!(store.len(), 0);
        let mut g = Graph::eval(&store);
        let x = g.constant(Matrix::filled(2, 3, 7.0));
        assert_eq!(p.forward(&mut g, [None, None, Some(x)]), x);
    }

    #[test]
    fn two_streams_shrink_the_gate() {
        let mut store = ParamStore::new();
        let flags = AblationFlags {
            use_rally: false,
            ..AblationFlags::FULL
        };
        let p = Pgfn::new(&mut store, &mut Rng::new(0), 3, flags);
        assert_eq!(p.gates.len(), 2);
        assert_eq!(store.get(p.gates[0].w_tilde.unwrap()).shape(), (6, 3));
    }

    #[test]
    fn no_streams_is_invalid() {
        let f = AblationFlags {
            use_a: false,
            use_b: false,
            use_rally: false,
            ..AblationFlags::FULL
        };
        assert!(f.validate().is_err());
    }
}
