//! Convolutional + network-in-network trunk over single raw frames, plus the
//! spectral regression heads used only during transfer pretraining.
//!
//! Parameter layout:
//!
//! ```text
//! trunk.conv{1..4}.{weight,bias}     [C_out, C_in, F], [C_out]
//! trunk.nin1.{0..}.{weight,bias}     [C, C, 1], [C]
//! head.<kind>.0.{weight,bias}        [H, C, 1]   tanh
//! head.<kind>.1.{weight,bias}        [D, H, 1]   identity
//! ```

use serde::{Deserialize, Serialize};

use crate::diffcore::{conv_out_len, init::{glorot_uniform, he_uniform}, Bound, Graph, ParameterSet, Tensor, TensorError, Var};
use crate::dsp::{FeatureKind, FrameMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayerSpec {
    pub channels: usize,
    pub filter: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawEncoderConfig {
    pub conv: Vec<ConvLayerSpec>,
    /// Output channels of each stacked 1×1 sublayer of the first NIN block.
    pub nin_channels: Vec<usize>,
    /// Width of the tanh sublayer in each regression head.
    pub head_hidden: usize,
    pub leakiness: f64,
    /// Weight range for the trunk layers; heads always use Glorot.
    pub trunk_init: TrunkInit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrunkInit {
    /// `±sqrt(6 / ((1 + l²)·fan_in))`.
    #[default]
    He,
    /// `±sqrt(6 / (fan_in + fan_out))`.
    Glorot,
}

impl Default for RawEncoderConfig {
    fn default() -> Self {
        let conv = |channels, filter, stride| ConvLayerSpec { channels, filter, stride };
        Self {
            conv: vec![conv(128, 80, 4), conv(128, 25, 2), conv(128, 10, 1), conv(128, 5, 1)],
            nin_channels: vec![128, 128, 128],
            head_hidden: 128,
            leakiness: 0.1,
            trunk_init: TrunkInit::He,
        }
    }
}

impl RawEncoderConfig {
    /// Same filters and strides with every channel count replaced by `channels`.
    pub fn with_channels(channels: usize) -> Self {
        let mut cfg = Self::default();
        cfg.conv.iter_mut().for_each(|c| c.channels = channels);
        cfg.nin_channels.iter_mut().for_each(|c| *c = channels);
        cfg.head_hidden = channels;
        cfg
    }

    /// Channel count of the trunk output (the per-frame representation width).
    pub fn output_channels(&self) -> usize {
        self.nin_channels
            .last()
            .or(self.conv.last().map(|c| &c.channels))
            .copied()
            .unwrap_or(1)
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        if self.conv.is_empty() {
            return Err(TensorError::InvalidArgument("trunk needs at least one conv layer".into()));
        }
        let bad = self.conv.iter().any(|c| c.channels == 0 || c.filter == 0 || c.stride == 0)
            || self.nin_channels.contains(&0)
            || self.head_hidden == 0;
        if bad {
            return Err(TensorError::InvalidArgument("trunk extents must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.leakiness) {
            return Err(TensorError::InvalidArgument(format!("leakiness {} not in [0, 1)", self.leakiness)));
        }
        Ok(())
    }

    /// Time extents after the input and after every conv layer.
    pub fn length_trace(&self, width: usize) -> Result<Vec<usize>, TensorError> {
        let mut trace = vec![width];
        let mut len = width;
        for c in &self.conv {
            if len < c.filter {
                return Err(TensorError::InputShorterThanFilter { len, filter: c.filter });
            }
            len = conv_out_len(len, c.filter, c.stride);
            trace.push(len);
        }
        Ok(trace)
    }

    /// Transferred parameter paths: every conv and NIN sublayer, weights and biases.
    pub fn trunk_paths(&self) -> Vec<String> {
        let mut paths = Vec::new();
        for i in 1..=self.conv.len() {
            paths.push(format!("trunk.conv{i}.weight"));
            paths.push(format!("trunk.conv{i}.bias"));
        }
        for j in 0..self.nin_channels.len() {
            paths.push(format!("trunk.nin1.{j}.weight"));
            paths.push(format!("trunk.nin1.{j}.bias"));
        }
        paths
    }

    pub fn head_paths(&self, kind: FeatureKind) -> Vec<String> {
        let k = kind.name();
        vec![
            format!("head.{k}.0.weight"),
            format!("head.{k}.0.bias"),
            format!("head.{k}.1.weight"),
            format!("head.{k}.1.bias"),
        ]
    }

    /// Number of scalar trunk parameters.
    pub fn trunk_parameter_count(&self) -> usize {
        let mut n = 0;
        let mut c_in = 1;
        for c in &self.conv {
            n += c.channels * c_in * c.filter + c.channels;
            c_in = c.channels;
        }
        for &c in &self.nin_channels {
            n += c * c_in + c;
            c_in = c;
        }
        n
    }
}

fn insert_conv(ps: &mut ParameterSet, prefix: &str, c_out: usize, c_in: usize, filter: usize, seed: u64, leak: Option<f64>) {
    let wpath = format!("{prefix}.weight");
    let shape = vec![c_out, c_in, filter];
    let w = match leak {
        Some(l) => he_uniform(shape, c_in * filter, l, seed, &wpath),
        None => glorot_uniform(shape, c_in * filter, c_out * filter, seed, &wpath),
    };
    ps.insert(wpath, w);
    ps.insert(format!("{prefix}.bias"), Tensor::zeros(vec![c_out]));
}

pub fn init_trunk(cfg: &RawEncoderConfig, seed: u64, ps: &mut ParameterSet) {
    let leak = (cfg.trunk_init == TrunkInit::He).then_some(cfg.leakiness);
    let mut c_in = 1;
    for (i, c) in cfg.conv.iter().enumerate() {
        insert_conv(ps, &format!("trunk.conv{}", i + 1), c.channels, c_in, c.filter, seed, leak);
        c_in = c.channels;
    }
    for (j, &c) in cfg.nin_channels.iter().enumerate() {
        insert_conv(ps, &format!("trunk.nin1.{j}"), c, c_in, 1, seed, leak);
        c_in = c;
    }
}

pub fn init_head(cfg: &RawEncoderConfig, kind: FeatureKind, dim: usize, seed: u64, ps: &mut ParameterSet) {
    let k = kind.name();
    insert_conv(ps, &format!("head.{k}.0"), cfg.head_hidden, cfg.output_channels(), 1, seed, None);
    insert_conv(ps, &format!("head.{k}.1"), dim, cfg.head_hidden, 1, seed, None);
}

/// Runs the conv + NIN stack on `[B, 1, W]` (or `[1, W]`) raw frames.
pub fn trunk_forward(g: &mut Graph, p: &Bound, cfg: &RawEncoderConfig, frames: Var) -> Result<Var, TensorError> {
    let mut x = frames;
    for (i, c) in cfg.conv.iter().enumerate() {
        let n = i + 1;
        x = g.conv1d(x, p.get(&format!("trunk.conv{n}.weight"))?, p.get(&format!("trunk.conv{n}.bias"))?, c.stride)?;
        x = g.lrelu(x, cfg.leakiness)?;
    }
    for j in 0..cfg.nin_channels.len() {
        x = g.conv1d(x, p.get(&format!("trunk.nin1.{j}.weight"))?, p.get(&format!("trunk.nin1.{j}.bias"))?, 1)?;
        x = g.lrelu(x, cfg.leakiness)?;
    }
    Ok(x)
}

/// Trunk output of one frame.
#[derive(Debug, Clone, Copy)]
pub struct FrameEncoding {
    /// `[C, L_final]` feature map before pooling.
    pub map: Var,
    /// `[C]` mean over time.
    pub pooled: Var,
}

pub fn encode_frame(g: &mut Graph, p: &Bound, cfg: &RawEncoderConfig, frame: &[f64]) -> Result<FrameEncoding, TensorError> {
    let first = cfg.conv.first().map(|c| c.filter).unwrap_or(1);
    if frame.len() < first {
        return Err(TensorError::InputShorterThanFilter { len: frame.len(), filter: first });
    }
    let x = g.leaf(vec![1, frame.len()], frame.to_vec(), false)?;
    let map = trunk_forward(g, p, cfg, x)?;
    let pooled = g.mean_last(map)?;
    Ok(FrameEncoding { map, pooled })
}

/// Regression head on a trunk map (`[C, L]` or `[B, C, L]`), mean-pooled to `[D]` or `[B, D]`.
pub fn predict_features(g: &mut Graph, p: &Bound, cfg: &RawEncoderConfig, map: Var, kind: FeatureKind) -> Result<Var, TensorError> {
    let k = kind.name();
    let c = g.shape(map)[g.shape(map).len() - 2];
    if c != cfg.output_channels() {
        return Err(TensorError::ShapeMismatch { op: "predict_features", dim: 0, expected: cfg.output_channels(), found: c });
    }
    let h = g.conv1d(map, p.get(&format!("head.{k}.0.weight"))?, p.get(&format!("head.{k}.0.bias"))?, 1)?;
    let h = g.tanh(h)?;
    let z = g.conv1d(h, p.get(&format!("head.{k}.1.weight"))?, p.get(&format!("head.{k}.1.bias"))?, 1)?;
    g.mean_last(z)
}

/// Trunk feature maps for every frame of an utterance, `[S, C, L_final]`.
pub fn utterance_maps(g: &mut Graph, p: &Bound, cfg: &RawEncoderConfig, fm: &FrameMatrix) -> Result<Var, TensorError> {
    let first = cfg.conv.first().map(|c| c.filter).unwrap_or(1);
    if fm.width < first {
        return Err(TensorError::InputShorterThanFilter { len: fm.width, filter: first });
    }
    let x = g.leaf(vec![fm.n_frames, 1, fm.width], fm.frames.clone(), false)?;
    trunk_forward(g, p, cfg, x)
}

/// Pooled per-frame representations `[S, C]`; row `s` depends only on frame `s`.
pub fn encode_utterance(g: &mut Graph, p: &Bound, cfg: &RawEncoderConfig, fm: &FrameMatrix) -> Result<Var, TensorError> {
    let maps = utterance_maps(g, p, cfg, fm)?;
    g.mean_last(maps)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::diffcore::BindMode;
    use crate::gradcheck::rel_err;

    fn random_frame(width: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..width).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn small_cfg() -> RawEncoderConfig {
        RawEncoderConfig::with_channels(4)
    }

    fn params(cfg: &RawEncoderConfig, seed: u64) -> ParameterSet {
        let mut ps = ParameterSet::new();
        init_trunk(cfg, seed, &mut ps);
        init_head(cfg, FeatureKind::LogMel, 40, seed, &mut ps);
        init_head(cfg, FeatureKind::Mfcc, 13, seed, &mut ps);
        ps
    }

    #[test]
    fn default_reproduces_layer_table() {
        let cfg = RawEncoderConfig::default();
        let rows: Vec<(usize, usize, usize)> = cfg.conv.iter().map(|c| (c.channels, c.filter, c.stride)).collect();
        assert_eq!(rows, vec![(128, 80, 4), (128, 25, 2), (128, 10, 1), (128, 5, 1)]);
        assert_eq!(cfg.nin_channels, vec![128, 128, 128]);
        assert_eq!(cfg.head_hidden, 128);
        assert_eq!(cfg.leakiness, 0.1);
        assert_eq!(cfg.length_trace(400).unwrap(), vec![400, 81, 29, 20, 16]);
    }

    #[test]
    fn full_size_shape_trace() {
        let cfg = RawEncoderConfig::default();
        let ps = params(&cfg, 1);
        let mut g = Graph::new();
        let b = g.bind(&ps, BindMode::All).unwrap();
        let x = g.leaf(vec![1, 400], random_frame(400, 2), false).unwrap();
        let mut shapes = vec![g.shape(x).to_vec()];
        let mut h = x;
        for (i, c) in cfg.conv.iter().enumerate() {
            let n = i + 1;
            h = g.conv1d(h, b.get(&format!("trunk.conv{n}.weight")).unwrap(), b.get(&format!("trunk.conv{n}.bias")).unwrap(), c.stride).unwrap();
            shapes.push(g.shape(h).to_vec());
        }
        assert_eq!(shapes, vec![vec![1, 400], vec![128, 81], vec![128, 29], vec![128, 20], vec![128, 16]]);
        let enc = encode_frame(&mut g, &b, &cfg, &random_frame(400, 2)).unwrap();
        assert_eq!(g.shape(enc.map), &[128, 16]);
        assert_eq!(g.shape(enc.pooled), &[128]);
        let z = predict_features(&mut g, &b, &cfg, enc.map, FeatureKind::LogMel).unwrap();
        assert_eq!(g.shape(z), &[40]);
    }

    #[test]
    fn trunk_parameter_count_matches_shapes() {
        let cfg = RawEncoderConfig::default();
        let ps = params(&cfg, 0);
        let paths = cfg.trunk_paths();
        assert_eq!(paths.len(), 14);
        assert_eq!(ps.scalar_count(paths.iter()), cfg.trunk_parameter_count());
        // 128·80+128, 128·128·25+128, 128·128·10+128, 128·128·5+128, 3·(128·128+128)
        assert_eq!(cfg.trunk_parameter_count(), 10_368 + 409_728 + 163_968 + 82_048 + 3 * 16_512);
    }

    #[test]
    fn zero_frame_and_zero_bias_pool_to_zero() {
        let cfg = small_cfg();
        let ps = params(&cfg, 3);
        let mut g = Graph::new();
        let b = g.bind(&ps, BindMode::All).unwrap();
        let enc = encode_frame(&mut g, &b, &cfg, &[0.0; 400]).unwrap();
        assert!(g.value(enc.pooled).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn head_bias_passes_through_zero_trunk() {
        let cfg = small_cfg();
        let mut ps = params(&cfg, 3);
        let bias: Vec<f64> = (0..40).map(|i| i as f64 * 0.1 - 2.0).collect();
        ps.get_mut("head.logmel.1.bias").unwrap().values_mut().copy_from_slice(&bias);
        let mut g = Graph::new();
        let b = g.bind(&ps, BindMode::All).unwrap();
        let map = g.leaf(vec![4, 16], vec![0.0; 64], false).unwrap();
        let z = predict_features(&mut g, &b, &cfg, map, FeatureKind::LogMel).unwrap();
        assert!(g.value(z).iter().zip(&bias).all(|(a, b)| (a - b).abs() < 1e-14));
        let wrong = g.leaf(vec![5, 16], vec![0.0; 80], false).unwrap();
        assert!(predict_features(&mut g, &b, &cfg, wrong, FeatureKind::LogMel).is_err());
    }

    #[test]
    fn short_frame_is_rejected() {
        let cfg = small_cfg();
        let ps = params(&cfg, 3);
        let mut g = Graph::new();
        let b = g.bind(&ps, BindMode::All).unwrap();
        assert_eq!(
            encode_frame(&mut g, &b, &cfg, &[0.0; 79]).unwrap_err(),
            TensorError::InputShorterThanFilter { len: 79, filter: 80 }
        );
    }

    #[test]
    fn pooled_gradient_wrt_frame_matches_finite_differences() {
        let cfg = small_cfg();
        let ps = params(&cfg, 4);
        let frame = random_frame(400, 5);
        let loss_of = |f: &[f64], grad: bool| -> (f64, Vec<f64>) {
            let mut g = Graph::new();
            let b = g.bind(&ps, BindMode::All).unwrap();
            let x = g.leaf(vec![1, 400], f.to_vec(), grad).unwrap();
            let map = trunk_forward(&mut g, &b, &cfg, x).unwrap();
            let pooled = g.mean_last(map).unwrap();
            let s = g.sum(pooled).unwrap();
            let v = g.scalar(s);
            if grad {
                g.backward(s).unwrap();
                (v, g.grad(x).unwrap().to_vec())
            } else {
                (v, vec![])
            }
        };
        let (_, analytic) = loss_of(&frame, true);
        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in (0..400).step_by(7) {
            let mut p = frame.clone();
            p[i] += h;
            let mut m = frame.clone();
            m[i] -= h;
            let numeric = (loss_of(&p, false).0 - loss_of(&m, false).0) / (2.0 * h);
            worst = worst.max(rel_err(analytic[i], numeric));
        }
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn multi_head_sensitivity() {
        let cfg = small_cfg();
        let ps = params(&cfg, 6);
        let frame = random_frame(400, 7);
        let outputs = |ps: &ParameterSet| -> (Vec<f64>, Vec<f64>) {
            let mut g = Graph::new();
            let b = g.bind(ps, BindMode::All).unwrap();
            let enc = encode_frame(&mut g, &b, &cfg, &frame).unwrap();
            let za = predict_features(&mut g, &b, &cfg, enc.map, FeatureKind::LogMel).unwrap();
            let zb = predict_features(&mut g, &b, &cfg, enc.map, FeatureKind::Mfcc).unwrap();
            (g.value(za).to_vec(), g.value(zb).to_vec())
        };
        let (za, zb) = outputs(&ps);
        assert_eq!((za.len(), zb.len()), (40, 13));

        let mut trunk = ps.clone();
        trunk.get_mut("trunk.conv2.weight").unwrap().values_mut()[5] += 1e-3;
        let (ta, tb) = outputs(&trunk);
        assert!(ta != za && tb != zb);

        let mut head = ps.clone();
        head.get_mut("head.logmel.0.weight").unwrap().values_mut()[3] += 1e-3;
        let (ha, hb) = outputs(&head);
        assert!(ha != za);
        assert_eq!(hb, zb);
    }

    #[test]
    fn utterance_rows_equal_independent_frames() {
        let cfg = small_cfg();
        let ps = params(&cfg, 8);
        let rows: Vec<Vec<f64>> = (0..3).map(|s| random_frame(400, 20 + s)).collect();
        let fm = FrameMatrix::from_rows(&rows, 16000).unwrap();
        let mut g = Graph::new();
        let b = g.bind(&ps, BindMode::All).unwrap();
        let enc = encode_utterance(&mut g, &b, &cfg, &fm).unwrap();
        assert_eq!(g.shape(enc), &[3, 4]);
        let stacked = g.value(enc).to_vec();
        for (s, row) in rows.iter().enumerate() {
            let single = encode_frame(&mut g, &b, &cfg, row).unwrap();
            assert_eq!(g.value(single.pooled), &stacked[s * 4..(s + 1) * 4]);
        }

        let swapped = FrameMatrix::from_rows(&[rows[1].clone(), rows[0].clone(), rows[2].clone()], 16000).unwrap();
        let enc2 = encode_utterance(&mut g, &b, &cfg, &swapped).unwrap();
        let v2 = g.value(enc2);
        assert_eq!(&v2[0..4], &stacked[4..8]);
        assert_eq!(&v2[4..8], &stacked[0..4]);
        assert_eq!(&v2[8..12], &stacked[8..12]);
    }
}
