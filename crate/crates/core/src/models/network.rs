use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::variants::{InceptionSpec, Stage};
use super::{ModelConfig, ModelError, ModelKind};
use crate::nn::{BnStats, BnUpdate, BufferId, Graph, ParamId, ParamStore, PoolSpec, Tensor, Var};

/// Running-average decay of batchnorm statistics.
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Debug, Clone, Copy)]
struct BnIds {
    gamma: ParamId,
    beta: ParamId,
    stats: BnStats,
}

#[derive(Debug, Clone, Copy)]
struct ConvIds {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
enum StageIds {
    Conv(ConvIds),
    Pool3,
}

#[derive(Debug, Clone)]
enum Core {
    Conv(ConvIds),
    Inception { branches: Vec<Vec<StageIds>>, skip: Option<ConvIds> },
}

#[derive(Debug, Clone)]
struct Block {
    bn_in: BnIds,
    core: Core,
    bn_out: BnIds,
    dropout: f64,
    last: bool,
}

#[derive(Debug, Clone, Copy)]
struct Head {
    fc1: ConvIds,
    fc2: ConvIds,
}

/// Shape of a named intermediate activation, recorded on every forward.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub name: String,
    pub shape: Vec<usize>,
}

pub struct Forward {
    pub probs: Var,
    pub shapes: Vec<LayerShape>,
}

/// A CNN-DNN classifier: four convolutional (or inception) blocks, global
/// max pooling, and a two-layer dense head.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore<f32>,
    blocks: Vec<Block>,
    head: Head,
    bn_updates: BufferId,
}

struct Builder<'a> {
    store: &'a mut ParamStore<f32>,
    rng: ChaCha8Rng,
}

impl Builder<'_> {
    fn he_uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor<f32> {
        let limit = (6.0 / fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-limit..limit) as f32).collect();
        Tensor::new(shape, data).expect("shape")
    }

    fn conv(&mut self, name: &str, kh: usize, kw: usize, cin: usize, cout: usize) -> Result<ConvIds, ModelError> {
        let w = self.he_uniform(&[kh, kw, cin, cout], kh * kw * cin);
        Ok(ConvIds {
            w: self.store.add_param(format!("{name}.weight"), w, true)?,
            b: self.store.add_param(format!("{name}.bias"), Tensor::zeros(&[cout]), false)?,
        })
    }

    fn dense(&mut self, name: &str, din: usize, dout: usize) -> Result<ConvIds, ModelError> {
        let w = self.he_uniform(&[din, dout], din);
        Ok(ConvIds {
            w: self.store.add_param(format!("{name}.weight"), w, true)?,
            b: self.store.add_param(format!("{name}.bias"), Tensor::zeros(&[dout]), false)?,
        })
    }

    fn bn(&mut self, name: &str, c: usize) -> Result<BnIds, ModelError> {
        Ok(BnIds {
            gamma: self.store.add_param(format!("{name}.gamma"), Tensor::full(&[c], 1.0), false)?,
            beta: self.store.add_param(format!("{name}.beta"), Tensor::zeros(&[c]), false)?,
            stats: BnStats {
                mean: self.store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[c]))?,
                var: self.store.add_buffer(format!("{name}.running_var"), Tensor::full(&[c], 1.0))?,
            },
        })
    }

    fn inception(&mut self, name: &str, spec: &InceptionSpec, cin: usize, cout: usize) -> Result<Core, ModelError> {
        let widths = spec.split_budget(cout);
        let mut branches = Vec::new();
        for (bi, (stages, &width)) in spec.branches.iter().zip(&widths).enumerate() {
            let last_conv = stages.iter().rposition(|s| matches!(s, Stage::Conv { .. })).expect("validated");
            let reduce = width.div_ceil(2).max(1);
            let mut c = cin;
            let mut ids = Vec::new();
            for (si, stage) in stages.iter().enumerate() {
                match *stage {
                    Stage::Pool3 => ids.push(StageIds::Pool3),
                    Stage::Conv { kh, kw } => {
                        let out = if si == last_conv { width } else { reduce };
                        ids.push(StageIds::Conv(self.conv(&format!("{name}.b{bi}.s{si}"), kh, kw, c, out)?));
                        c = out;
                    }
                }
            }
            branches.push(ids);
        }
        let skip = if spec.residual { Some(self.conv(&format!("{name}.skip"), 1, 1, cin, cout)?) } else { None };
        Ok(Core::Inception { branches, skip })
    }
}

impl Model {
    /// Builds and initializes a network; equal seeds give identical
    /// parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let inception = config.inception_spec()?;
        let mut store = ParamStore::new();
        let mut b = Builder { store: &mut store, rng: ChaCha8Rng::seed_from_u64(seed) };
        let mut blocks = Vec::new();
        let mut cin = config.input_channels;
        for (i, (&cout, &dropout)) in config.block_channels.iter().zip(&config.block_dropout).enumerate() {
            let name = format!("block{}", i + 1);
            let bn_in = b.bn(&format!("{name}.bn_in"), cin)?;
            let core = match &inception {
                None => Core::Conv(b.conv(&format!("{name}.conv"), 3, 3, cin, cout)?),
                Some(spec) => b.inception(&format!("{name}.inception"), spec, cin, cout)?,
            };
            let bn_out = b.bn(&format!("{name}.bn_out"), cout)?;
            blocks.push(Block { bn_in, core, bn_out, dropout, last: i + 1 == config.block_channels.len() });
            cin = cout;
        }
        let head = Head { fc1: b.dense("head.fc1", cin, config.dense_width)?, fc2: b.dense("head.fc2", config.dense_width, config.n_classes)? };
        let bn_updates = store.add_buffer("bn.num_updates", Tensor::scalar(0.0))?;
        Ok(Self { config, store, blocks, head, bn_updates })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn store(&self) -> &ParamStore<f32> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.store
    }

    pub fn bn_update_count(&self) -> u64 {
        self.store.buffer(self.bn_updates).value.data()[0] as u64
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.store.num_scalars()
    }

    /// Every trainable tensor, sorted by name.
    pub fn list_parameters(&self) -> Vec<&crate::nn::Parameter<f32>> {
        self.store.sorted()
    }

    /// Ids of the tensors covered by the L2 term.
    pub fn decayed(&self) -> Vec<ParamId> {
        self.store.decayed_ids()
    }

    /// Folds batch statistics into the running buffers. The decay ramps up
    /// to [`BN_MOMENTUM`] as `(1 + n) / (10 + n)` over the first updates.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) {
        if updates.is_empty() {
            return;
        }
        let n = self.bn_update_count() as f64;
        let decay = BN_MOMENTUM.min((1.0 + n) / (10.0 + n));
        for u in updates {
            for (buf, batch) in [(u.stats.mean, &u.mean), (u.stats.var, &u.var)] {
                let run = self.store.buffer_mut(buf).value.data_mut();
                for (r, b) in run.iter_mut().zip(batch.iter()) {
                    *r = (decay * f64::from(*r) + (1.0 - decay) * b) as f32;
                }
            }
        }
        self.store.buffer_mut(self.bn_updates).value.data_mut()[0] = (n + 1.0) as f32;
    }

    fn bn(g: &mut Graph<f32>, x: Var, ids: BnIds) -> Result<Var, ModelError> {
        let (gamma, beta) = (g.param(ids.gamma), g.param(ids.beta));
        Ok(g.batchnorm(x, gamma, beta, ids.stats)?)
    }

    fn conv(g: &mut Graph<f32>, x: Var, ids: ConvIds) -> Result<Var, ModelError> {
        let (w, b) = (g.param(ids.w), g.param(ids.b));
        Ok(g.conv2d(x, w, Some(b))?)
    }

    fn core(g: &mut Graph<f32>, x: Var, core: &Core) -> Result<Var, ModelError> {
        match core {
            Core::Conv(ids) => Self::conv(g, x, *ids),
            Core::Inception { branches, skip } => {
                let mut outs = Vec::with_capacity(branches.len());
                for stages in branches {
                    let mut h = x;
                    let last = stages.len() - 1;
                    for (si, stage) in stages.iter().enumerate() {
                        h = match stage {
                            StageIds::Pool3 => g.maxpool2d(h, PoolSpec::SAME3)?,
                            StageIds::Conv(ids) => {
                                let y = Self::conv(g, h, *ids)?;
                                if si == last {
                                    y
                                } else {
                                    g.relu(y)
                                }
                            }
                        };
                    }
                    outs.push(h);
                }
                let cat = g.concat(&outs)?;
                match skip {
                    Some(ids) => {
                        let proj = Self::conv(g, x, *ids)?;
                        Ok(g.add(cat, proj)?)
                    }
                    None => Ok(cat),
                }
            }
        }
    }

    /// Forward pass from `[N, H, W, 1]` patches to `[N, C]` probabilities.
    /// Dropout and batch statistics follow the graph's mode.
    pub fn forward<R: Rng + ?Sized>(&self, g: &mut Graph<f32>, x: Var, rng: &mut R) -> Result<Forward, ModelError> {
        let shape = g.value(x).shape().to_vec();
        let expect = [self.config.input_hw.0, self.config.input_hw.1, self.config.input_channels];
        if shape.len() != 4 || shape[1..] != expect {
            return Err(ModelError::InputShape { expected: expect.to_vec(), got: shape });
        }
        let mut shapes = Vec::new();
        let mut h = x;
        for (i, block) in self.blocks.iter().enumerate() {
            h = Self::bn(g, h, block.bn_in)?;
            h = Self::core(g, h, &block.core)?;
            shapes.push(LayerShape { name: format!("block{}.core", i + 1), shape: g.value(h).shape().to_vec() });
            h = g.relu(h);
            h = Self::bn(g, h, block.bn_out)?;
            h = if block.last { g.global_maxpool(h)? } else { g.maxpool2d(h, PoolSpec::HALVE)? };
            h = g.dropout(h, block.dropout, rng);
            shapes.push(LayerShape { name: format!("block{}", i + 1), shape: g.value(h).shape().to_vec() });
        }
        let (w, b) = (g.param(self.head.fc1.w), g.param(self.head.fc1.b));
        h = g.dense(h, w, Some(b))?;
        h = g.relu(h);
        h = g.dropout(h, self.config.dense_dropout, rng);
        shapes.push(LayerShape { name: "head.fc1".into(), shape: g.value(h).shape().to_vec() });
        let (w, b) = (g.param(self.head.fc2.w), g.param(self.head.fc2.b));
        h = g.dense(h, w, Some(b))?;
        let probs = g.softmax(h);
        shapes.push(LayerShape { name: "head.softmax".into(), shape: g.value(probs).shape().to_vec() });
        Ok(Forward { probs, shapes })
    }

    /// Weight tensor shapes of the dense head.
    pub fn head_shapes(&self) -> [Vec<usize>; 4] {
        let s = |id: ParamId| self.store.param(id).value.shape().to_vec();
        [s(self.head.fc1.w), s(self.head.fc1.b), s(self.head.fc2.w), s(self.head.fc2.b)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{read_checkpoint, write_checkpoint};
    use crate::nn::Mode;

    fn probe(model: &Model, n: usize, mode: Mode, seed: u64) -> (Vec<f32>, Vec<LayerShape>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = model.config().input_hw;
        let data = (0..n * h * w).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let mut g = Graph::new(model.store(), mode);
        let x = g.input(Tensor::new(&[n, h, w, 1], data).unwrap());
        let f = model.forward(&mut g, x, &mut rng).unwrap();
        (g.value(f.probs).data().to_vec(), f.shapes)
    }

    fn shape_of<'a>(shapes: &'a [LayerShape], name: &str) -> &'a [usize] {
        &shapes.iter().find(|s| s.name == name).unwrap().shape
    }

    #[test]
    fn baseline_channel_and_spatial_chain() {
        let m = Model::new(ModelConfig::new(ModelKind::Baseline, 4), 1).unwrap();
        let (_, shapes) = probe(&m, 1, Mode::Eval, 0);
        assert_eq!(shape_of(&shapes, "block1"), &[1, 62, 77, 64]);
        assert_eq!(shape_of(&shapes, "block2"), &[1, 31, 39, 128]);
        assert_eq!(shape_of(&shapes, "block3"), &[1, 16, 20, 256]);
        assert_eq!(shape_of(&shapes, "block4"), &[1, 512]);
        assert_eq!(shape_of(&shapes, "head.fc1"), &[1, 1024]);
        assert_eq!(shape_of(&shapes, "head.softmax"), &[1, 4]);
        assert_eq!(m.head_shapes(), [vec![512, 1024], vec![1024], vec![1024, 4], vec![4]]);
    }

    #[test]
    fn every_kind_outputs_distributions() {
        for kind in ModelKind::ALL {
            for c in [3, 4] {
                let m = Model::new(ModelConfig::new(kind, c), 7).unwrap();
                let (p, shapes) = probe(&m, 2, Mode::Train, 3);
                assert_eq!(p.len(), 2 * c);
                for row in p.chunks(c) {
                    assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5, "{kind}");
                    assert!(row.iter().all(|v| *v >= 0.0));
                }
                for (i, ch) in [64, 128, 256].into_iter().enumerate() {
                    assert_eq!(*shape_of(&shapes, &format!("block{}.core", i + 1)).last().unwrap(), ch, "{kind}");
                }
            }
        }
    }

    #[test]
    fn inception_capacity_ordering_and_skip() {
        let count = |k| Model::new(ModelConfig::new(k, 4), 0).unwrap().num_trainable();
        assert!(count(ModelKind::Inception02) > count(ModelKind::Inception01));
        let m4 = Model::new(ModelConfig::new(ModelKind::Inception04, 4), 0).unwrap();
        let skip = m4.store().find_param("block2.inception.skip.weight").unwrap();
        assert_eq!(m4.store().param(skip).value.shape(), &[1, 1, 64, 128]);
        let m1 = Model::new(ModelConfig::new(ModelKind::Inception01, 4), 0).unwrap();
        assert!(m1.store().find_param("block2.inception.skip.weight").is_none());
        let k14 = m1.store().find_param("block1.inception.b2.s1.weight").unwrap();
        assert_eq!(&m1.store().param(k14).value.shape()[..2], &[1, 4]);
    }

    #[test]
    fn seeded_construction_is_deterministic() {
        let a = Model::new(ModelConfig::new(ModelKind::Inception03, 3), 42).unwrap();
        let b = Model::new(ModelConfig::new(ModelKind::Inception03, 3), 42).unwrap();
        let c = Model::new(ModelConfig::new(ModelKind::Inception03, 3), 43).unwrap();
        assert_eq!(a.store().params(), b.store().params());
        assert_ne!(a.store().params(), c.store().params());
    }

    #[test]
    fn checkpoint_round_trip_and_rejections() {
        let mut m = Model::new(ModelConfig::new(ModelKind::Inception04, 3), 5).unwrap();
        m.apply_bn_updates(&[]);
        let mut bytes = Vec::new();
        write_checkpoint(&m, &mut bytes).unwrap();
        let back = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(back.store().params(), m.store().params());
        assert_eq!(back.store().buffers(), m.store().buffers());
        assert_eq!(back.kind(), ModelKind::Inception04);
        assert_eq!(probe(&back, 1, Mode::Eval, 9).0, probe(&m, 1, Mode::Eval, 9).0);

        assert!(read_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(bad.as_slice()).is_err());
    }

    #[test]
    fn bn_running_statistics_ramp() {
        let mut m = Model::new(ModelConfig::new(ModelKind::Baseline, 4), 0).unwrap();
        let (_, _) = probe(&m, 2, Mode::Eval, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = (0..2 * 124 * 154).map(|_| rng.gen_range(2.0f32..3.0)).collect();
        let updates = {
            let mut g = Graph::new(m.store(), Mode::Train);
            let x = g.input(Tensor::new(&[2, 124, 154, 1], data).unwrap());
            m.forward(&mut g, x, &mut rng).unwrap();
            g.take_bn_updates()
        };
        assert_eq!(updates.len(), 8);
        m.apply_bn_updates(&updates);
        assert_eq!(m.bn_update_count(), 1);
        let mean = m.store().find_buffer("block1.bn_in.running_mean").unwrap();
        let v = m.store().buffer(mean).value.data()[0];
        // First decay is 0.1: 0.1 * 0 + 0.9 * batch mean (about 2.5).
        assert!((v - 0.9 * 2.5).abs() < 0.02, "{v}");
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let m = Model::new(ModelConfig::new(ModelKind::Baseline, 4), 0).unwrap();
        let mut g = Graph::new(m.store(), Mode::Eval);
        let x = g.input(Tensor::zeros(&[1, 124, 150, 1]));
        assert!(matches!(m.forward(&mut g, x, &mut ChaCha8Rng::seed_from_u64(0)), Err(ModelError::InputShape { .. })));
        assert!(matches!(Model::new(ModelConfig::new(ModelKind::Baseline, 1), 0), Err(ModelError::BadClassCount(1))));
    }
}
