use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{lstm_cell, ControllerState, LstmWeights, ModelConfig, ModelError, Result};
use crate::autodiff::{Bound, ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::memory::{memory_step, parse_interface, MemoryShape, MemoryTraceRecord, MemoryVars, Phase};

const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, Copy)]
struct ControllerIds {
    weight: ParamId,
    bias: ParamId,
    interface: Option<(ParamId, ParamId)>,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    input_embed: ParamId,
    output_embed: ParamId,
    encoder: ControllerIds,
    decoder: ControllerIds,
    out_weight: ParamId,
    out_bias: ParamId,
}

/// Everything carried from one time step to the next.
#[derive(Debug, Clone)]
pub struct StepState {
    pub controller: ControllerState,
    pub memory: Option<MemoryVars>,
    /// Read vectors of the previous step, one per head.
    pub reads: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub state: StepState,
    /// Read-mode distributions per head, when the model has memory.
    pub read_modes: Vec<Var>,
    /// Output-vocabulary logits; absent for encoder steps.
    pub logits: Option<Var>,
}

/// How the decoder chooses its inputs and when it stops.
#[derive(Debug, Clone, Copy)]
pub enum DecodeMode<'a> {
    /// Decode exactly `targets.len()` steps. Teacher forcing feeds the
    /// targets back, otherwise the argmax of each step is fed back.
    Train(&'a [usize]),
    /// Decode until the end token or `cap` emitted tokens.
    Infer { cap: usize },
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Vec<Var>,
    /// Argmax token of every decoder step, end token included if emitted.
    pub predictions: Vec<usize>,
    pub encoder_final: ControllerState,
    pub memory_after_encode: Option<MemoryVars>,
    pub final_state: StepState,
    /// Per time step: phase and `[backward, content, forward]` per head.
    pub read_modes: Vec<(Phase, Vec<[f64; 3]>)>,
    pub trace: Vec<MemoryTraceRecord>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub loss: f64,
    pub predictions: Vec<usize>,
    pub read_modes: Vec<(Phase, Vec<[f64; 3]>)>,
}

/// Parameters plus the wiring of one architecture variant.
#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    layout: Layout,
}

/// Parameter names and shapes in registration order.
fn expected_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let h = cfg.hidden;
    let r = cfg.read_width();
    let mut out = vec![
        ("embed.input".to_string(), vec![cfg.input_vocab, cfg.embed]),
        ("embed.output".to_string(), vec![cfg.output_vocab, cfg.embed]),
    ];
    let controllers: &[&str] = if cfg.variant.dual_controller() {
        &["encoder", "decoder"]
    } else {
        &["controller"]
    };
    for name in controllers {
        out.push((format!("{name}.lstm.weight"), vec![4 * h, cfg.embed + r + h]));
        out.push((format!("{name}.lstm.bias"), vec![4 * h]));
        if cfg.variant.has_memory() {
            let n = cfg.memory_shape().interface_len();
            out.push((format!("{name}.interface.weight"), vec![n, h]));
            out.push((format!("{name}.interface.bias"), vec![n]));
        }
    }
    out.push(("output.weight".to_string(), vec![cfg.output_vocab, h + r]));
    out.push(("output.bias".to_string(), vec![cfg.output_vocab]));
    out
}

fn check_tokens(tokens: &[usize], size: usize) -> Result<()> {
    match tokens.iter().find(|&&t| t >= size) {
        Some(&id) => Err(ModelError::UnknownToken { id, size }),
        None => Ok(()),
    }
}

impl<T: Real> Model<T> {
    /// Fresh model: weights and embeddings uniform in `[-0.1, 0.1]`, biases
    /// zero, drawn from a ChaCha stream seeded with `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape) in expected_shapes(&config) {
            let n: usize = shape.iter().product();
            let values = if name.ends_with(".bias") {
                vec![T::zero(); n]
            } else {
                (0..n).map(|_| T::lit(rng.gen_range(-INIT_RANGE..INIT_RANGE))).collect()
            };
            params.insert(name, Tensor::new(shape, values)?)?;
        }
        Self::from_params(config, params)
    }

    /// Wraps an existing parameter set, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let expected = expected_shapes(&config);
        if expected.len() != params.len() {
            return Err(ModelError::Parameter(format!(
                "{} tensors for variant {}, found {}",
                expected.len(),
                config.variant,
                params.len()
            )));
        }
        for (name, shape) in &expected {
            let id = params.find(name).ok_or_else(|| ModelError::Parameter(name.clone()))?;
            if params.get(id).shape() != shape.as_slice() {
                return Err(ModelError::Parameter(format!(
                    "{name}: expected shape {shape:?}, found {:?}",
                    params.get(id).shape()
                )));
            }
        }
        let id = |n: &str| params.find(n).expect("checked above");
        let controller = |prefix: &str| ControllerIds {
            weight: id(&format!("{prefix}.lstm.weight")),
            bias: id(&format!("{prefix}.lstm.bias")),
            interface: config.variant.has_memory().then(|| {
                (
                    id(&format!("{prefix}.interface.weight")),
                    id(&format!("{prefix}.interface.bias")),
                )
            }),
        };
        let (encoder, decoder) = if config.variant.dual_controller() {
            (controller("encoder"), controller("decoder"))
        } else {
            let c = controller("controller");
            (c, c)
        };
        let layout = Layout {
            input_embed: id("embed.input"),
            output_embed: id("embed.output"),
            encoder,
            decoder,
            out_weight: id("output.weight"),
            out_bias: id("output.bias"),
        };
        Ok(Self { config, params, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    fn memory_shape(&self) -> Option<MemoryShape> {
        self.config.variant.has_memory().then(|| self.config.memory_shape())
    }

    /// Zero controller state, fresh memory and zero read vectors.
    pub fn initial_state(&self, tape: &mut Tape<T>) -> Result<StepState> {
        let controller = ControllerState::zeros(tape, self.config.hidden);
        let (memory, reads) = match self.memory_shape() {
            Some(shape) => {
                let mem = MemoryVars::fresh(tape, shape)?;
                let reads = (0..shape.read_heads).map(|_| tape.zeros(vec![shape.word])).collect();
                (Some(mem), reads)
            }
            None => (None, Vec::new()),
        };
        Ok(StepState {
            controller,
            memory,
            reads,
        })
    }

    fn controller_step(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        ids: ControllerIds,
        embedded: Var,
        state: &StepState,
        phase: Phase,
    ) -> Result<(StepState, Vec<Var>)> {
        let mut parts = Vec::with_capacity(1 + state.reads.len());
        parts.push(embedded);
        parts.extend_from_slice(&state.reads);
        let x = tape.concat(&parts)?;
        let weights = LstmWeights {
            weight: bound[ids.weight],
            bias: bound[ids.bias],
        };
        let controller = lstm_cell(tape, x, state.controller, weights)?;
        let (Some((iw, ib)), Some(mem), Some(shape)) = (ids.interface, state.memory.as_ref(), self.memory_shape())
        else {
            return Ok((
                StepState {
                    controller,
                    memory: None,
                    reads: Vec::new(),
                },
                Vec::new(),
            ));
        };
        let raw = tape.affine(bound[iw], controller.h, bound[ib])?;
        let iface = parse_interface(tape, raw, shape)?;
        let step = memory_step(tape, mem, &iface, phase, self.config.decode_freeze)?;
        Ok((
            StepState {
                controller,
                memory: Some(step.state),
                reads: step.reads,
            },
            iface.read_modes,
        ))
    }

    /// Consumes one input token.
    pub fn encode_step(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        token: usize,
        state: &StepState,
    ) -> Result<StepOutput> {
        check_tokens(&[token], self.config.input_vocab)?;
        let embedded = tape.row(bound[self.layout.input_embed], token)?;
        let (state, read_modes) =
            self.controller_step(tape, bound, self.layout.encoder, embedded, state, Phase::Encode)?;
        Ok(StepOutput {
            state,
            read_modes,
            logits: None,
        })
    }

    /// Emits logits for one output position given the previously emitted
    /// token (the GO token at the first position).
    pub fn decode_step(&self, tape: &mut Tape<T>, bound: &Bound, prev: usize, state: &StepState) -> Result<StepOutput> {
        check_tokens(&[prev], self.config.output_vocab)?;
        let embedded = tape.row(bound[self.layout.output_embed], prev)?;
        let phase = if self.config.variant.write_protected() {
            Phase::Decode
        } else {
            Phase::Encode
        };
        let (state, read_modes) = self.controller_step(tape, bound, self.layout.decoder, embedded, state, phase)?;
        let mut parts = Vec::with_capacity(1 + state.reads.len());
        parts.push(state.controller.h);
        parts.extend_from_slice(&state.reads);
        let features = tape.concat(&parts)?;
        let logits = tape.affine(bound[self.layout.out_weight], features, bound[self.layout.out_bias])?;
        Ok(StepOutput {
            state,
            read_modes,
            logits: Some(logits),
        })
    }

    /// Encodes `input` then decodes according to `mode`. With `trace`, a
    /// snapshot of the addressing state is kept for every step.
    pub fn forward_sequence(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        input: &[usize],
        mode: DecodeMode<'_>,
        trace: bool,
    ) -> Result<ForwardOutput> {
        if input.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        check_tokens(input, self.config.input_vocab)?;
        if let DecodeMode::Train(targets) = mode {
            if targets.is_empty() {
                return Err(ModelError::LengthMismatch {
                    what: "target sequence",
                    expected: 1,
                    got: 0,
                });
            }
            check_tokens(targets, self.config.output_vocab)?;
        }

        let mut records = Vec::new();
        let mut read_modes = Vec::new();
        let mut state = self.initial_state(tape)?;
        let mut t = 0;
        let mut observe = |tape: &Tape<T>, out: &StepOutput, phase: Phase, t: &mut usize| {
            let modes: Vec<[f64; 3]> = out
                .read_modes
                .iter()
                .map(|&m| {
                    let v = tape.value(m);
                    [v[0].as_f64(), v[1].as_f64(), v[2].as_f64()]
                })
                .collect();
            if trace {
                if let Some(mem) = &out.state.memory {
                    let f = |v: Var| tape.value(v).iter().map(|x| x.as_f64()).collect::<Vec<_>>();
                    records.push(MemoryTraceRecord {
                        step: *t,
                        phase,
                        write_weights: f(mem.write_weights),
                        read_weights: mem.read_weights.iter().map(|&w| f(w)).collect(),
                        read_modes: modes.clone(),
                        usage: f(mem.usage),
                    });
                }
            }
            if !modes.is_empty() {
                read_modes.push((phase, modes));
            }
            *t += 1;
        };

        for &token in input {
            let out = self.encode_step(tape, bound, token, &state)?;
            observe(tape, &out, Phase::Encode, &mut t);
            state = out.state;
        }
        let encoder_final = state.controller;
        let memory_after_encode = state.memory.clone();

        let steps = match mode {
            DecodeMode::Train(targets) => targets.len(),
            DecodeMode::Infer { cap } => cap,
        };
        let mut logits = Vec::with_capacity(steps);
        let mut predictions = Vec::with_capacity(steps);
        let mut prev = self.config.go_token;
        for i in 0..steps {
            let out = self.decode_step(tape, bound, prev, &state)?;
            observe(tape, &out, Phase::Decode, &mut t);
            let l = out.logits.expect("decoder steps emit logits");
            let pred = argmax(tape.value(l));
            logits.push(l);
            predictions.push(pred);
            state = out.state;
            prev = match mode {
                DecodeMode::Train(targets) if self.config.teacher_forcing => targets[i],
                DecodeMode::Train(_) => pred,
                DecodeMode::Infer { .. } => {
                    if pred == self.config.end_token {
                        break;
                    }
                    pred
                }
            };
        }

        Ok(ForwardOutput {
            logits,
            predictions,
            encoder_final,
            memory_after_encode,
            final_state: state,
            read_modes,
            trace: records,
        })
    }

    /// One training example: forward, mean cross-entropy, backward. The
    /// gradients are added to the stored parameter gradients.
    pub fn accumulate_gradients(&mut self, input: &[usize], targets: &[usize]) -> Result<TrainOutcome> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let out = self.forward_sequence(&mut tape, &bound, input, DecodeMode::Train(targets), false)?;
        let loss = sequence_loss(&mut tape, &out.logits, targets)?;
        let value = tape.scalar(loss).as_f64();
        let grads = tape.backward(loss)?;
        self.params.accumulate_grads(&grads, &bound);
        Ok(TrainOutcome {
            loss: value,
            predictions: out.predictions,
            read_modes: out.read_modes,
        })
    }

    /// Mean cross-entropy of `targets` without building gradients.
    pub fn loss(&self, input: &[usize], targets: &[usize]) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let out = self.forward_sequence(&mut tape, &bound, input, DecodeMode::Train(targets), false)?;
        let loss = sequence_loss(&mut tape, &out.logits, targets)?;
        Ok(tape.scalar(loss).as_f64())
    }

    /// Greedy decoding. The end token, if produced, is not included.
    pub fn predict(&self, input: &[usize], cap: Option<usize>) -> Result<Vec<usize>> {
        Ok(self.predict_traced(input, cap, false)?.0)
    }

    pub fn predict_traced(
        &self,
        input: &[usize],
        cap: Option<usize>,
        trace: bool,
    ) -> Result<(Vec<usize>, Vec<MemoryTraceRecord>)> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let cap = cap.unwrap_or(self.config.max_decode_len);
        let out = self.forward_sequence(&mut tape, &bound, input, DecodeMode::Infer { cap }, trace)?;
        let mut preds = out.predictions;
        if preds.last() == Some(&self.config.end_token) {
            preds.pop();
        }
        Ok((preds, out.trace))
    }
}

/// Mean per-position cross-entropy.
pub fn sequence_loss<T: Real>(tape: &mut Tape<T>, logits: &[Var], targets: &[usize]) -> Result<Var> {
    if logits.len() != targets.len() || logits.is_empty() {
        return Err(ModelError::LengthMismatch {
            what: "logits vs targets",
            expected: targets.len(),
            got: logits.len(),
        });
    }
    let mut total = tape.cross_entropy(logits[0], targets[0])?;
    for (&l, &y) in logits.iter().zip(targets).skip(1) {
        let ce = tape.cross_entropy(l, y)?;
        total = tape.add(total, ce)?;
    }
    Ok(tape.scale(total, 1.0 / targets.len() as f64))
}

/// Index of the first maximal entry. NaN entries never win.
pub fn argmax<T: Real>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] || values[best].is_nan() {
            best = i;
        }
    }
    best
}

pub fn onehot_argmax<T: Real>(values: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); values.len()];
    if !values.is_empty() {
        out[argmax(values)] = T::one();
    }
    out
}
