//! Noise-prediction network with explicit forward caches and backward pass.
//!
//! ```text
//! pose 12 ─ 64 ─ 64 ─────────┐
//! mug cloud  3 ─ 64 ─ 128 max ┤
//! rack cloud 3 ─ 64 ─ 128 max ┼─ gate (5 blocks) ─┐
//! condition 64 ─ 64 ──────────┤                   ├─ 460 ─ 128 ─ 128 ─ 6
//! timestep  sinusoid 64 ──────┘      noisy pose 12 ┘
//! ```
//!
//! The gate projects the concatenated features to a 16-dim agent vector,
//! scores each block against its own 16-dim key, and scales block `i` by
//! `5 · softmax_i`.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const POSE_DIM: usize = 12;
pub const POSE_FEAT: usize = 64;
pub const CLOUD_HIDDEN: usize = 64;
pub const CLOUD_FEAT: usize = 128;
pub const COND_DIM: usize = 64;
pub const TIME_DIM: usize = 64;
pub const GATE_DIM: usize = 16;
pub const HEAD_HIDDEN: usize = 128;
pub const OUT_DIM: usize = 6;
pub const BLOCKS: [usize; 5] = [POSE_FEAT, CLOUD_FEAT, CLOUD_FEAT, COND_DIM, TIME_DIM];
pub const FEAT_DIM: usize = POSE_FEAT + 2 * CLOUD_FEAT + COND_DIM + TIME_DIM;
pub const HEAD_IN: usize = FEAT_DIM + POSE_DIM;

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Dense layer `y = W x + b`, `W` stored out × in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            w: Array2::zeros((output, input)),
            b: Array1::zeros(output),
        }
    }

    fn init<R: Rng + ?Sized>(input: usize, output: usize, gain: f64, rng: &mut R) -> Self {
        let bound = gain * (3.0 / input as f64).sqrt();
        Linear {
            w: Array2::from_shape_fn((output, input), |_| rng.random_range(-bound..bound)),
            b: Array1::zeros(output),
        }
    }

    fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }

    /// Accumulates parameter gradients into `g`; returns the input gradient.
    fn backward(&self, x: &ArrayView2<f64>, dy: &Array2<f64>, g: &mut Linear) -> Array2<f64> {
        g.w += &dy.t().dot(x);
        g.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w)
    }

    fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    fn output_dim(&self) -> usize {
        self.w.nrows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserParams {
    pub pose1: Linear,
    pub pose2: Linear,
    pub mug1: Linear,
    pub mug2: Linear,
    pub rack1: Linear,
    pub rack2: Linear,
    pub cond: Linear,
    pub agent: Linear,
    /// One key projection per feature block (bias unused, kept for layout).
    pub keys: Vec<Linear>,
    pub head1: Linear,
    pub head2: Linear,
    pub head3: Linear,
}

impl DenoiserParams {
    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let hidden = 2f64.sqrt();
        DenoiserParams {
            pose1: Linear::init(POSE_DIM, POSE_FEAT, hidden, rng),
            pose2: Linear::init(POSE_FEAT, POSE_FEAT, 1.0, rng),
            mug1: Linear::init(3, CLOUD_HIDDEN, hidden * 10.0, rng),
            mug2: Linear::init(CLOUD_HIDDEN, CLOUD_FEAT, 1.0, rng),
            rack1: Linear::init(3, CLOUD_HIDDEN, hidden * 10.0, rng),
            rack2: Linear::init(CLOUD_HIDDEN, CLOUD_FEAT, 1.0, rng),
            cond: Linear::init(COND_DIM, COND_DIM, 8.0, rng),
            agent: Linear::init(FEAT_DIM, GATE_DIM, 0.5, rng),
            keys: BLOCKS.iter().map(|&d| Linear::init(d, GATE_DIM, 0.5, rng)).collect(),
            head1: Linear::init(HEAD_IN, HEAD_HIDDEN, hidden, rng),
            head2: Linear::init(HEAD_HIDDEN, HEAD_HIDDEN, hidden, rng),
            head3: Linear::init(HEAD_HIDDEN, OUT_DIM, 0.1, rng),
        }
    }

    /// Same layout, all zeros (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        let z = |l: &Linear| Linear::zeros(l.input_dim(), l.output_dim());
        DenoiserParams {
            pose1: z(&self.pose1),
            pose2: z(&self.pose2),
            mug1: z(&self.mug1),
            mug2: z(&self.mug2),
            rack1: z(&self.rack1),
            rack2: z(&self.rack2),
            cond: z(&self.cond),
            agent: z(&self.agent),
            keys: self.keys.iter().map(z).collect(),
            head1: z(&self.head1),
            head2: z(&self.head2),
            head3: z(&self.head3),
        }
    }

    fn layers(&self) -> Vec<(String, &Linear)> {
        let mut v: Vec<(String, &Linear)> = vec![
            ("pose1".into(), &self.pose1),
            ("pose2".into(), &self.pose2),
            ("mug1".into(), &self.mug1),
            ("mug2".into(), &self.mug2),
            ("rack1".into(), &self.rack1),
            ("rack2".into(), &self.rack2),
            ("cond".into(), &self.cond),
            ("agent".into(), &self.agent),
        ];
        v.extend(self.keys.iter().enumerate().map(|(i, k)| (format!("key{i}"), k)));
        v.push(("head1".into(), &self.head1));
        v.push(("head2".into(), &self.head2));
        v.push(("head3".into(), &self.head3));
        v
    }

    fn layers_mut(&mut self) -> Vec<&mut Linear> {
        let mut v = vec![
            &mut self.pose1,
            &mut self.pose2,
            &mut self.mug1,
            &mut self.mug2,
            &mut self.rack1,
            &mut self.rack2,
            &mut self.cond,
            &mut self.agent,
        ];
        v.extend(self.keys.iter_mut());
        v.push(&mut self.head1);
        v.push(&mut self.head2);
        v.push(&mut self.head3);
        v
    }

    /// Named parameter tensors in a fixed order. Key biases are excluded:
    /// they cancel in the softmax.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (name, l) in self.layers() {
            out.push((format!("{name}.w"), l.w.as_slice().unwrap()));
            if !name.starts_with("key") {
                out.push((format!("{name}.b"), l.b.as_slice().unwrap()));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for (i, l) in self.layers_mut().into_iter().enumerate() {
            out.push(l.w.as_slice_mut().unwrap());
            if !(8..8 + BLOCKS.len()).contains(&i) {
                out.push(l.b.as_slice_mut().unwrap());
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    /// Layer shapes as (name, inputs, outputs).
    pub fn layer_sizes(&self) -> Vec<(String, usize, usize)> {
        self.layers()
            .into_iter()
            .map(|(n, l)| (n, l.input_dim(), l.output_dim()))
            .collect()
    }

    pub fn check_shapes(&self) -> bool {
        let expect: Vec<(usize, usize)> = [
            (POSE_DIM, POSE_FEAT),
            (POSE_FEAT, POSE_FEAT),
            (3, CLOUD_HIDDEN),
            (CLOUD_HIDDEN, CLOUD_FEAT),
            (3, CLOUD_HIDDEN),
            (CLOUD_HIDDEN, CLOUD_FEAT),
            (COND_DIM, COND_DIM),
            (FEAT_DIM, GATE_DIM),
        ]
        .into_iter()
        .chain(BLOCKS.iter().map(|&d| (d, GATE_DIM)))
        .chain([(HEAD_IN, HEAD_HIDDEN), (HEAD_HIDDEN, HEAD_HIDDEN), (HEAD_HIDDEN, OUT_DIM)])
        .collect();
        let got = self.layers();
        got.len() == expect.len()
            && got
                .iter()
                .zip(&expect)
                .all(|((_, l), &(i, o))| l.input_dim() == i && l.output_dim() == o && l.b.len() == o)
    }
}

/// Sinusoidal encoding: component `2i` is `sin(t·f_i)`, `2i+1` is
/// `cos(t·f_i)`, with `f_i = 10000^{−i/32}`.
pub fn timestep_features(t: usize) -> Array1<f64> {
    let half = TIME_DIM / 2;
    Array1::from_shape_fn(TIME_DIM, |k| {
        let f = 10000f64.powf(-((k / 2) as f64) / half as f64);
        let x = t as f64 * f;
        if k % 2 == 0 {
            x.sin()
        } else {
            x.cos()
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudKind {
    Mug,
    Rack,
}

pub(crate) struct CloudCache {
    x: Array2<f64>,
    pre1: Array2<f64>,
    h1: Array2<f64>,
    argmax: Vec<usize>,
}

impl DenoiserParams {
    fn cloud_layers(&self, kind: CloudKind) -> (&Linear, &Linear) {
        match kind {
            CloudKind::Mug => (&self.mug1, &self.mug2),
            CloudKind::Rack => (&self.rack1, &self.rack2),
        }
    }

    /// Shared per-point layers then coordinatewise max over points.
    pub(crate) fn cloud_forward(&self, kind: CloudKind, points: &Array2<f64>) -> (Array1<f64>, CloudCache) {
        let (l1, l2) = self.cloud_layers(kind);
        let pre1 = l1.forward(&points.view());
        let h1 = pre1.mapv(silu);
        let h2 = l2.forward(&h1.view());
        let mut feat = Array1::from_elem(CLOUD_FEAT, f64::NEG_INFINITY);
        let mut argmax = vec![0; CLOUD_FEAT];
        for (i, row) in h2.outer_iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v > feat[j] {
                    feat[j] = v;
                    argmax[j] = i;
                }
            }
        }
        (
            feat,
            CloudCache {
                x: points.clone(),
                pre1,
                h1,
                argmax,
            },
        )
    }

    fn cloud_backward(&self, kind: CloudKind, cache: &CloudCache, dfeat: &ArrayView1<f64>, g: &mut DenoiserParams) {
        let (_, l2) = self.cloud_layers(kind);
        let (g1, g2) = match kind {
            CloudKind::Mug => (&mut g.mug1, &mut g.mug2),
            CloudKind::Rack => (&mut g.rack1, &mut g.rack2),
        };
        // only the argmax rows receive gradient
        let mut rows: Vec<usize> = cache.argmax.clone();
        rows.sort_unstable();
        rows.dedup();
        let mut dh2 = Array2::<f64>::zeros((rows.len(), CLOUD_FEAT));
        for (j, &r) in cache.argmax.iter().enumerate() {
            let k = rows.binary_search(&r).unwrap();
            dh2[[k, j]] += dfeat[j];
        }
        let h1_rows = cache.h1.select(Axis(0), &rows);
        let dh1 = l2.backward(&h1_rows.view(), &dh2, g2);
        let pre_rows = cache.pre1.select(Axis(0), &rows);
        let dpre = dh1 * &pre_rows.mapv(silu_grad);
        let x_rows = cache.x.select(Axis(0), &rows);
        g1.w += &dpre.t().dot(&x_rows);
        g1.b += &dpre.sum_axis(Axis(0));
    }
}

/// Everything the head needs for a batch, with per-row cloud references.
pub struct BatchInput<'a> {
    pub poses: Array2<f64>,
    pub steps: Vec<usize>,
    pub cond: Array2<f64>,
    pub mug_feats: &'a [Array1<f64>],
    pub rack_feats: &'a [Array1<f64>],
    pub mug_idx: Vec<usize>,
    pub rack_idx: Vec<usize>,
}

pub(crate) struct HeadCache {
    poses: Array2<f64>,
    pose_pre1: Array2<f64>,
    pose_h1: Array2<f64>,
    cond_in: Array2<f64>,
    blocks: Vec<Array2<f64>>,
    z: Array2<f64>,
    agent: Array2<f64>,
    keys: Vec<Array2<f64>>,
    weights: Array2<f64>,
    x: Array2<f64>,
    v1: Array2<f64>,
    g1: Array2<f64>,
    v2: Array2<f64>,
    g2: Array2<f64>,
}

fn gather(feats: &[Array1<f64>], idx: &[usize], dim: usize) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), dim));
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).assign(&feats[i]);
    }
    out
}

const GATE_SCALE: f64 = 5.0;

impl DenoiserParams {
    pub(crate) fn head_forward(&self, input: &BatchInput) -> (Array2<f64>, HeadCache) {
        let n = input.poses.nrows();
        let pose_pre1 = self.pose1.forward(&input.poses.view());
        let pose_h1 = pose_pre1.mapv(silu);
        let phi_p = self.pose2.forward(&pose_h1.view());
        let phi_a = gather(input.mug_feats, &input.mug_idx, CLOUD_FEAT);
        let phi_b = gather(input.rack_feats, &input.rack_idx, CLOUD_FEAT);
        let phi_l = self.cond.forward(&input.cond.view());
        let mut phi_t = Array2::zeros((n, TIME_DIM));
        for (r, &t) in input.steps.iter().enumerate() {
            phi_t.row_mut(r).assign(&timestep_features(t));
        }
        let blocks = vec![phi_p, phi_a, phi_b, phi_l, phi_t];
        let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
        let z = concatenate(Axis(1), &views).unwrap();
        let agent = self.agent.forward(&z.view());
        let keys: Vec<Array2<f64>> = blocks
            .iter()
            .zip(&self.keys)
            .map(|(b, k)| b.dot(&k.w.t()))
            .collect();
        let scale = (GATE_DIM as f64).sqrt();
        let mut weights = Array2::zeros((n, BLOCKS.len()));
        for r in 0..n {
            let scores: Vec<f64> = keys.iter().map(|k| agent.row(r).dot(&k.row(r)) / scale).collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let sum: f64 = e.iter().sum();
            for (i, v) in e.iter().enumerate() {
                weights[[r, i]] = v / sum;
            }
        }
        let mut gated: Vec<Array2<f64>> = Vec::with_capacity(blocks.len() + 1);
        for (i, b) in blocks.iter().enumerate() {
            let w = weights.column(i).mapv(|v| v * GATE_SCALE).insert_axis(Axis(1));
            gated.push(b * &w);
        }
        gated.push(input.poses.clone());
        let gviews: Vec<_> = gated.iter().map(|b| b.view()).collect();
        let x = concatenate(Axis(1), &gviews).unwrap();
        let v1 = self.head1.forward(&x.view());
        let g1 = v1.mapv(silu);
        let v2 = self.head2.forward(&g1.view());
        let g2 = v2.mapv(silu);
        let y = self.head3.forward(&g2.view());
        (
            y,
            HeadCache {
                poses: input.poses.clone(),
                pose_pre1,
                pose_h1,
                cond_in: input.cond.clone(),
                blocks,
                z,
                agent,
                keys,
                weights,
                x,
                v1,
                g1,
                v2,
                g2,
            },
        )
    }

    /// Backpropagates `dy` through the head; returns per-row gradients of
    /// the mug and rack cloud features.
    pub(crate) fn head_backward(&self, c: &HeadCache, dy: &Array2<f64>, g: &mut DenoiserParams) -> (Array2<f64>, Array2<f64>) {
        let n = dy.nrows();
        let dg2 = self.head3.backward(&c.g2.view(), dy, &mut g.head3);
        let dv2 = dg2 * &c.v2.mapv(silu_grad);
        let dg1 = self.head2.backward(&c.g1.view(), &dv2, &mut g.head2);
        let dv1 = dg1 * &c.v1.mapv(silu_grad);
        let dx = self.head1.backward(&c.x.view(), &dv1, &mut g.head1);

        let mut dblocks: Vec<Array2<f64>> = Vec::with_capacity(BLOCKS.len());
        let mut dw = Array2::<f64>::zeros((n, BLOCKS.len()));
        let mut off = 0;
        for (i, b) in c.blocks.iter().enumerate() {
            let d = b.ncols();
            let dh = dx.slice(s![.., off..off + d]);
            off += d;
            let w = c.weights.column(i).mapv(|v| v * GATE_SCALE).insert_axis(Axis(1));
            dblocks.push(&dh * &w);
            for r in 0..n {
                dw[[r, i]] = GATE_SCALE * b.row(r).dot(&dh.row(r));
            }
        }

        // softmax, then scores s_i = a·k_i / √d
        let scale = (GATE_DIM as f64).sqrt();
        let mut dagent = Array2::<f64>::zeros((n, GATE_DIM));
        let mut dkeys: Vec<Array2<f64>> = (0..BLOCKS.len()).map(|_| Array2::zeros((n, GATE_DIM))).collect();
        for r in 0..n {
            let w = c.weights.row(r);
            let inner: f64 = (0..BLOCKS.len()).map(|j| w[j] * dw[[r, j]]).sum();
            for i in 0..BLOCKS.len() {
                let ds = w[i] * (dw[[r, i]] - inner) / scale;
                let mut da = dagent.row_mut(r);
                da.scaled_add(ds, &c.keys[i].row(r));
                dkeys[i].row_mut(r).scaled_add(ds, &c.agent.row(r));
            }
        }
        for i in 0..BLOCKS.len() {
            g.keys[i].w += &dkeys[i].t().dot(&c.blocks[i]);
            dblocks[i] += &dkeys[i].dot(&self.keys[i].w);
        }
        let dz = self.agent.backward(&c.z.view(), &dagent, &mut g.agent);
        let mut off = 0;
        for (i, db) in dblocks.iter_mut().enumerate() {
            let d = BLOCKS[i];
            *db += &dz.slice(s![.., off..off + d]);
            off += d;
        }

        // condition projection (input is constant)
        self.cond.backward(&c.cond_in.view(), &dblocks[3], &mut g.cond);
        // pose encoder
        let dh1 = self.pose2.backward(&c.pose_h1.view(), &dblocks[0], &mut g.pose2);
        let dpre1 = dh1 * &c.pose_pre1.mapv(silu_grad);
        self.pose1.backward(&c.poses.view(), &dpre1, &mut g.pose1);
        (dblocks[1].clone(), dblocks[2].clone())
    }
}

/// Mean Smooth-L1 over all entries and its gradient.
pub(crate) fn smooth_l1_batch(y: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    let n = y.len() as f64;
    let diff = y - target;
    let loss = diff.iter().map(|&r| crate::posediff::smooth_l1(r)).sum::<f64>() / n;
    let grad = diff.mapv(|r| crate::posediff::smooth_l1_grad(r) / n);
    (loss, grad)
}

/// A training batch with its clouds, targets and cloud-usage indices.
pub struct TrainBatch {
    pub poses: Array2<f64>,
    pub steps: Vec<usize>,
    pub cond: Array2<f64>,
    pub mug_clouds: Vec<Array2<f64>>,
    pub rack_clouds: Vec<Array2<f64>>,
    pub mug_idx: Vec<usize>,
    pub rack_idx: Vec<usize>,
    pub targets: Array2<f64>,
}

impl DenoiserParams {
    /// Loss of the batch and the gradient with respect to every parameter.
    pub fn loss_and_grad(&self, batch: &TrainBatch) -> (f64, DenoiserParams) {
        let mut g = self.zeros_like();
        let mugs: Vec<_> = batch.mug_clouds.iter().map(|c| self.cloud_forward(CloudKind::Mug, c)).collect();
        let racks: Vec<_> = batch.rack_clouds.iter().map(|c| self.cloud_forward(CloudKind::Rack, c)).collect();
        let mug_feats: Vec<Array1<f64>> = mugs.iter().map(|(f, _)| f.clone()).collect();
        let rack_feats: Vec<Array1<f64>> = racks.iter().map(|(f, _)| f.clone()).collect();
        let input = BatchInput {
            poses: batch.poses.clone(),
            steps: batch.steps.clone(),
            cond: batch.cond.clone(),
            mug_feats: &mug_feats,
            rack_feats: &rack_feats,
            mug_idx: batch.mug_idx.clone(),
            rack_idx: batch.rack_idx.clone(),
        };
        let (y, cache) = self.head_forward(&input);
        let (loss, dy) = smooth_l1_batch(&y, &batch.targets);
        let (dmug, drack) = self.head_backward(&cache, &dy, &mut g);
        for (ci, (_, c)) in mugs.iter().enumerate() {
            let d = rows_sum(&dmug, &batch.mug_idx, ci);
            self.cloud_backward(CloudKind::Mug, c, &d.view(), &mut g);
        }
        for (ci, (_, c)) in racks.iter().enumerate() {
            let d = rows_sum(&drack, &batch.rack_idx, ci);
            self.cloud_backward(CloudKind::Rack, c, &d.view(), &mut g);
        }
        (loss, g)
    }

    pub fn loss(&self, batch: &TrainBatch) -> f64 {
        let mug_feats: Vec<_> = batch.mug_clouds.iter().map(|c| self.cloud_forward(CloudKind::Mug, c).0).collect();
        let rack_feats: Vec<_> = batch.rack_clouds.iter().map(|c| self.cloud_forward(CloudKind::Rack, c).0).collect();
        let input = BatchInput {
            poses: batch.poses.clone(),
            steps: batch.steps.clone(),
            cond: batch.cond.clone(),
            mug_feats: &mug_feats,
            rack_feats: &rack_feats,
            mug_idx: batch.mug_idx.clone(),
            rack_idx: batch.rack_idx.clone(),
        };
        smooth_l1_batch(&self.head_forward(&input).0, &batch.targets).0
    }
}

fn rows_sum(d: &Array2<f64>, idx: &[usize], which: usize) -> Array1<f64> {
    let mut out = Array1::zeros(d.ncols());
    for (r, &i) in idx.iter().enumerate() {
        if i == which {
            out += &d.row(r);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn probe_batch(rng: &mut ChaCha8Rng) -> TrainBatch {
        let cloud = |rng: &mut ChaCha8Rng, n: usize| Array2::from_shape_fn((n, 3), |_| rng.random_range(-0.1..0.1));
        let b = 4;
        TrainBatch {
            poses: Array2::from_shape_fn((b, POSE_DIM), |_| rng.random_range(-1.0..1.0)),
            steps: vec![0, 17, 120, 199],
            cond: Array2::from_shape_fn((b, COND_DIM), |_| rng.random_range(-0.2..0.2)),
            mug_clouds: vec![cloud(rng, 7), cloud(rng, 5)],
            rack_clouds: vec![cloud(rng, 6)],
            mug_idx: vec![0, 1, 1, 0],
            rack_idx: vec![0; b],
            // mix of quadratic and linear Smooth-L1 regions
            targets: Array2::from_shape_fn((b, OUT_DIM), |(r, c)| if (r + c) % 3 == 0 { 2.5 } else { 0.01 * c as f64 }),
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = DenoiserParams::init(&mut rng);
        let batch = probe_batch(&mut rng);
        let (_, grad) = params.loss_and_grad(&batch);
        let h = 1e-5;
        let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
        let analytic: Vec<Vec<f64>> = grad.tensors().into_iter().map(|(_, t)| t.to_vec()).collect();
        for (ti, name) in names.iter().enumerate() {
            let len = analytic[ti].len();
            // probe up to 40 entries per tensor, spread over the tensor
            let stride = (len / 40).max(1);
            let (mut num2, mut diff2, mut ana2) = (0.0, 0.0, 0.0);
            for e in (0..len).step_by(stride) {
                let mut p = params.clone();
                p.tensors_mut()[ti][e] += h;
                let up = p.loss(&batch);
                p.tensors_mut()[ti][e] -= 2.0 * h;
                let down = p.loss(&batch);
                let num = (up - down) / (2.0 * h);
                let ana = analytic[ti][e];
                num2 += num * num;
                ana2 += ana * ana;
                diff2 += (num - ana) * (num - ana);
            }
            let denom = num2.sqrt().max(ana2.sqrt());
            if denom < 1e-12 {
                continue;
            }
            let rel = diff2.sqrt() / denom;
            assert!(rel <= 1e-3, "{name}: relative error {rel}");
        }
    }

    #[test]
    fn shapes_and_counts() {
        let p = DenoiserParams::init(&mut ChaCha8Rng::seed_from_u64(1));
        assert!(p.check_shapes());
        assert_eq!(p.tensors().len(), p.zeros_like().tensors().len());
        assert_eq!(HEAD_IN, 460);
        assert!(p.param_count() > 100_000);
    }

    #[test]
    fn timestep_encoding_properties() {
        let z = timestep_features(0);
        for k in 0..TIME_DIM {
            assert_eq!(z[k], if k % 2 == 0 { 0.0 } else { 1.0 });
        }
        let all: Vec<Array1<f64>> = (0..1000).map(timestep_features).collect();
        for i in 0..1000 {
            assert!(all[i].iter().all(|v| (-1.0..=1.0).contains(v)));
            for j in i + 1..1000 {
                let d = (&all[i] - &all[j]).mapv(|x| x * x).sum().sqrt();
                assert!(d > 1e-3, "{i} {j}");
            }
        }
    }
}
