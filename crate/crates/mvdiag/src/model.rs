//! The learnable core: three per-modality graph encoders, the task-oriented
//! and cross-modal contrastive objectives, the RCL/FTI heads, dynamic loss
//! weighting, and the training loop.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Params, Tape, VarId};
use crate::dataset::FailureSample;
use crate::error::{Error, Result};

pub const MODALITY_COUNT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    Mean,
    Pool,
    /// order-dependent; neighbors are consumed in ascending node index
    Lstm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub n_layers: usize,
    pub aggregator: Aggregator,
    pub head_hidden: usize,
    pub class_count: usize,
    pub tau: f64,
    pub omega: f64,
    pub enable_task_oriented: bool,
    pub enable_cross_modal: bool,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 128,
            hidden_dim: 64,
            output_dim: 32,
            n_layers: 2,
            aggregator: Aggregator::Mean,
            head_hidden: 64,
            class_count: 2,
            tau: 0.3,
            omega: 0.1,
            enable_task_oriented: true,
            enable_cross_modal: true,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            batch_size: 32,
            max_epochs: 500,
            patience: 10,
            min_delta: 1e-4,
        }
    }
}

impl ModelConfig {
    /// Layer widths from input to output.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        for _ in 1..self.n_layers {
            dims.push(self.hidden_dim);
        }
        dims.push(self.output_dim);
        dims
    }

    pub fn fused_dim(&self) -> usize {
        MODALITY_COUNT * self.output_dim
    }
}

#[derive(Debug, Clone)]
struct LstmIdx {
    wx: usize,
    wh: usize,
    b: usize,
}

/// Index map into the parameter store; construction order is fixed.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    enc_w: [Vec<usize>; MODALITY_COUNT],
    lstm: Option<[Vec<LstmIdx>; MODALITY_COUNT]>,
    fti: [usize; 4],
    rcl: [usize; 4],
    rho: [usize; 4],
}

const MODALITY_TAGS: [&str; MODALITY_COUNT] = ["M", "T", "L"];

fn xavier<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

/// The diagnosis model: config, parameter store, and index layout.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Params,
    pub layout: ParamLayout,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let dims = config.layer_dims();

        let mut enc_w: [Vec<usize>; MODALITY_COUNT] = Default::default();
        let mut lstm_idx: [Vec<LstmIdx>; MODALITY_COUNT] = Default::default();
        for (m, tag) in MODALITY_TAGS.iter().enumerate() {
            for l in 0..config.n_layers {
                let (din, dout) = (dims[l], dims[l + 1]);
                enc_w[m].push(params.add(
                    format!("enc_{tag}_w{l}"),
                    xavier(2 * din, dout, &mut rng),
                ));
                if config.aggregator == Aggregator::Lstm {
                    lstm_idx[m].push(LstmIdx {
                        wx: params.add(format!("lstm_{tag}_{l}_wx"), xavier(din, 4 * din, &mut rng)),
                        wh: params.add(format!("lstm_{tag}_{l}_wh"), xavier(din, 4 * din, &mut rng)),
                        b: params.add(format!("lstm_{tag}_{l}_b"), Array2::zeros((1, 4 * din))),
                    });
                }
            }
        }

        let fused = config.fused_dim();
        let fti = [
            params.add("fti_w1", xavier(fused, config.head_hidden, &mut rng)),
            params.add("fti_b1", Array2::zeros((1, config.head_hidden))),
            params.add("fti_w2", xavier(config.head_hidden, config.class_count, &mut rng)),
            params.add("fti_b2", Array2::zeros((1, config.class_count))),
        ];
        let rcl = [
            params.add("rcl_w1", xavier(fused, config.head_hidden, &mut rng)),
            params.add("rcl_b1", Array2::zeros((1, config.head_hidden))),
            params.add("rcl_w2", xavier(config.head_hidden, 1, &mut rng)),
            params.add("rcl_b2", Array2::zeros((1, 1))),
        ];
        // theta_z = exp(rho_z), initialized to 1
        let rho = [
            params.add("rho_rcl", Array2::zeros((1, 1))),
            params.add("rho_fti", Array2::zeros((1, 1))),
            params.add("rho_to", Array2::zeros((1, 1))),
            params.add("rho_cm", Array2::zeros((1, 1))),
        ];

        Model {
            layout: ParamLayout {
                enc_w,
                lstm: (config.aggregator == Aggregator::Lstm).then_some(lstm_idx),
                fti,
                rcl,
                rho,
            },
            config,
            params,
        }
    }

    /// Parameter indices shared between the two diagnosis tasks (encoders).
    pub fn shared_param_indices(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = self.layout.enc_w.iter().flatten().copied().collect();
        if let Some(lstm) = &self.layout.lstm {
            for per_modality in lstm {
                for l in per_modality {
                    idx.extend([l.wx, l.wh, l.b]);
                }
            }
        }
        idx
    }

    pub fn fti_head_indices(&self) -> Vec<usize> {
        self.layout.fti.to_vec()
    }

    pub fn rcl_head_indices(&self) -> Vec<usize> {
        self.layout.rcl.to_vec()
    }

    fn lstm_aggregate(
        &self,
        tape: &mut Tape,
        bound: &[VarId],
        e: VarId,
        groups: &[Vec<usize>],
        idx: &LstmIdx,
        din: usize,
    ) -> VarId {
        let wx = bound[idx.wx];
        let wh = bound[idx.wh];
        let b = bound[idx.b];
        let mut rows = Vec::with_capacity(groups.len());
        for group in groups {
            if group.is_empty() {
                rows.push(tape.constant(Array2::zeros((1, din))));
                continue;
            }
            let mut h = tape.constant(Array2::zeros((1, din)));
            let mut c = tape.constant(Array2::zeros((1, din)));
            for &u in group {
                let x = tape.gather_row(e, u);
                let zx = tape.matmul(x, wx);
                let zh = tape.matmul(h, wh);
                let z0 = tape.add(zx, zh);
                let z = tape.add(z0, b);
                let i_g = tape.slice_cols(z, 0, din);
                let f_g = tape.slice_cols(z, din, 2 * din);
                let o_g = tape.slice_cols(z, 2 * din, 3 * din);
                let g_g = tape.slice_cols(z, 3 * din, 4 * din);
                let i_g = tape.sigmoid(i_g);
                let f_g = tape.sigmoid(f_g);
                let o_g = tape.sigmoid(o_g);
                let g_g = tape.tanh(g_g);
                let fc = tape.mul(f_g, c);
                let ig = tape.mul(i_g, g_g);
                c = tape.add(fc, ig);
                let tc = tape.tanh(c);
                h = tape.mul(o_g, tc);
            }
            rows.push(h);
        }
        tape.stack_rows(rows)
    }

    /// Message aggregation for one modality of one sample: returns
    /// (final node embeddings n x d_out, graph feature 1 x d_out).
    pub fn encode(
        &self,
        tape: &mut Tape,
        bound: &[VarId],
        sample: &FailureSample,
        modality: usize,
    ) -> Result<(VarId, VarId)> {
        let n = sample.graph.nodes.len();
        let d = self.config.input_dim;
        let mut x = Array2::zeros((n, d));
        for (v, tuple) in sample.features.iter().enumerate() {
            let block = &tuple[modality];
            if block.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: block.len(),
                });
            }
            for (j, &val) in block.iter().enumerate() {
                x[(v, j)] = val;
            }
        }
        let groups: Vec<Vec<usize>> = (0..n).map(|v| sample.graph.neighbors(v)).collect();
        let mean_matrix = {
            let mut a = Array2::zeros((n, n));
            for (v, group) in groups.iter().enumerate() {
                if !group.is_empty() {
                    let w = 1.0 / group.len() as f64;
                    for &u in group {
                        a[(v, u)] = w;
                    }
                }
            }
            a
        };

        let dims = self.config.layer_dims();
        let mut e = tape.constant(x);
        for l in 0..self.config.n_layers {
            let agg = match self.config.aggregator {
                Aggregator::Mean => {
                    let a = tape.constant(mean_matrix.clone());
                    tape.matmul(a, e)
                }
                Aggregator::Pool => tape.segment_row_max(e, groups.clone()),
                Aggregator::Lstm => {
                    let idx = &self.layout.lstm.as_ref().unwrap()[modality][l];
                    self.lstm_aggregate(tape, bound, e, &groups, idx, dims[l])
                }
            };
            let cat = tape.concat_cols(e, agg);
            let h = tape.matmul(cat, bound[self.layout.enc_w[modality][l]]);
            let h = tape.relu(h);
            e = tape.row_l2_normalize(h);
        }
        let f = tape.col_max(e);
        Ok((e, f))
    }

    fn mlp(
        &self,
        tape: &mut Tape,
        bound: &[VarId],
        input: VarId,
        idx: &[usize; 4],
    ) -> VarId {
        let n = tape.value(input).nrows();
        let ones = tape.constant(Array2::ones((n, 1)));
        let h = tape.matmul(input, bound[idx[0]]);
        let b1 = tape.matmul(ones, bound[idx[1]]);
        let h = tape.add(h, b1);
        let h = tape.relu(h);
        let out = tape.matmul(h, bound[idx[2]]);
        let ones2 = tape.constant(Array2::ones((n, 1)));
        let b2 = tape.matmul(ones2, bound[idx[3]]);
        tape.add(out, b2)
    }

    /// FTI logits from a fused graph-level feature (rows are samples).
    pub fn fti_logits(&self, tape: &mut Tape, bound: &[VarId], fused: VarId) -> VarId {
        self.mlp(tape, bound, fused, &self.layout.fti)
    }

    /// Per-node RCL scores (n x 1) from fused node-level features.
    pub fn rcl_scores(&self, tape: &mut Tape, bound: &[VarId], fused_nodes: VarId) -> VarId {
        self.mlp(tape, bound, fused_nodes, &self.layout.rcl)
    }

    pub fn bind(&self, tape: &mut Tape) -> Vec<VarId> {
        (0..self.params.tensors.len())
            .map(|i| tape.param(&self.params, i))
            .collect()
    }

    /// Builds the full batch loss graph. Returns per-component and total vars.
    pub fn batch_losses(
        &self,
        tape: &mut Tape,
        bound: &[VarId],
        batch: &[&FailureSample],
    ) -> Result<BatchLosses> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut graph_feats: Vec<[VarId; MODALITY_COUNT]> = Vec::with_capacity(batch.len());
        let mut per_sample_scores: Vec<(VarId, usize)> = Vec::with_capacity(batch.len());
        let mut fti_rows: Vec<VarId> = Vec::with_capacity(batch.len());
        let mut labels = Vec::with_capacity(batch.len());
        let mut roots = Vec::with_capacity(batch.len());
        let mut root_names: Vec<&str> = Vec::new();

        for sample in batch {
            if sample.failure_type >= self.config.class_count {
                return Err(Error::LabelOutOfRange(
                    sample.failure_type,
                    self.config.class_count,
                ));
            }
            if sample.root_cause >= sample.graph.nodes.len() {
                return Err(Error::RootIndexInvalid(
                    sample.root_cause,
                    sample.graph.nodes.len(),
                ));
            }
            let mut nodes_per_mod = Vec::with_capacity(MODALITY_COUNT);
            let mut feats = [0usize; MODALITY_COUNT];
            for m in 0..MODALITY_COUNT {
                let (e, f) = self.encode(tape, bound, sample, m)?;
                nodes_per_mod.push(e);
                feats[m] = f;
            }
            graph_feats.push(feats);

            let cat01 = tape.concat_cols(nodes_per_mod[0], nodes_per_mod[1]);
            let fused_nodes = tape.concat_cols(cat01, nodes_per_mod[2]);
            let scores = self.rcl_scores(tape, bound, fused_nodes);
            per_sample_scores.push((scores, sample.root_cause));

            let gcat01 = tape.concat_cols(feats[0], feats[1]);
            let fused_graph = tape.concat_cols(gcat01, feats[2]);
            let logits = self.fti_logits(tape, bound, fused_graph);
            fti_rows.push(logits);
            labels.push(sample.failure_type);
            // contrastive positives are keyed by the root instance's name;
            // node indices are not comparable across graphs
            let name = sample.graph.nodes[sample.root_cause].as_str();
            let id = root_names
                .iter()
                .position(|n| *n == name)
                .unwrap_or_else(|| {
                    root_names.push(name);
                    root_names.len() - 1
                });
            roots.push(id);
        }

        let all_logits = tape.stack_rows(fti_rows);
        let fti = fti_loss_var(tape, all_logits, &labels, self.config.class_count)?;
        let rcl = rcl_loss_var(tape, &per_sample_scores)?;
        let types: Vec<usize> = labels.clone();
        let to = if self.config.enable_task_oriented && batch.len() >= 2 {
            task_oriented_loss_var(tape, &graph_feats, &roots, &types, self.config.tau)?
        } else {
            tape.constant_scalar(0.0)
        };
        let cm = if self.config.enable_cross_modal {
            cross_modal_loss_var(tape, &graph_feats, self.config.tau)
        } else {
            tape.constant_scalar(0.0)
        };
        let rho = [
            bound[self.layout.rho[0]],
            bound[self.layout.rho[1]],
            bound[self.layout.rho[2]],
            bound[self.layout.rho[3]],
        ];
        let total = total_loss_var(tape, [rcl, fti, to, cm], rho, self.config.omega);
        Ok(BatchLosses {
            rcl,
            fti,
            to,
            cm,
            total,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BatchLosses {
    pub rcl: VarId,
    pub fti: VarId,
    pub to: VarId,
    pub cm: VarId,
    pub total: VarId,
}

/// `phi(F, F') = exp(cos(F, F') / tau)`; zero vectors have cos = 0.
pub fn phi(a: &[f64], b: &[f64], tau: f64) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cos = if na == 0.0 || nb == 0.0 { 0.0 } else { dot / (na * nb) };
    (cos / tau).exp()
}

fn phi_var(tape: &mut Tape, a: VarId, b: VarId, tau: f64) -> VarId {
    let cos = tape.cosine_sim(a, b);
    let scaled = tape.scale(cos, 1.0 / tau);
    tape.exp(scaled)
}

/// Supervised contrastive loss per modality, summed across modalities.
/// Metric and trace positives are keyed by root cause, log positives by
/// failure type. Samples with an empty positive set contribute 0.
pub fn task_oriented_loss_var(
    tape: &mut Tape,
    feats: &[[VarId; MODALITY_COUNT]],
    roots: &[usize],
    types: &[usize],
    tau: f64,
) -> Result<VarId> {
    let n = feats.len();
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    let mut total = tape.constant_scalar(0.0);
    for m in 0..MODALITY_COUNT {
        let keys: &[usize] = if m == 2 { types } else { roots };
        // pairwise phi for i != j
        let mut phis = vec![vec![None; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    phis[i][j] = Some(phi_var(tape, feats[i][m], feats[j][m], tau));
                }
            }
        }
        for i in 0..n {
            let positives: Vec<usize> =
                (0..n).filter(|&j| j != i && keys[j] == keys[i]).collect();
            if positives.is_empty() {
                continue;
            }
            let negatives: Vec<usize> =
                (0..n).filter(|&j| j != i && keys[j] != keys[i]).collect();
            for &j in &positives {
                let phi_ij = phis[i][j].unwrap();
                let mut denom = phi_ij;
                for &z in &negatives {
                    denom = tape.add(denom, phis[i][z].unwrap());
                }
                let ratio = tape.div(phi_ij, denom);
                let log = tape.ln(ratio);
                let term = tape.scale(log, -1.0 / positives.len() as f64);
                total = tape.add(total, term);
            }
        }
    }
    Ok(total)
}

/// Cross-modal association loss: metrics are the core view, aligned with
/// traces and with logs. For n = 1 each term is exactly 0.
pub fn cross_modal_loss_var(
    tape: &mut Tape,
    feats: &[[VarId; MODALITY_COUNT]],
    tau: f64,
) -> VarId {
    let n = feats.len();
    let mut total = tape.constant_scalar(0.0);
    // (metric, trace) and (metric, log)
    for &(d1, d2) in &[(0usize, 1usize), (0, 2)] {
        let mut pair_sum = tape.constant_scalar(0.0);
        for i in 0..n {
            for &(a_mod, b_mod) in &[(d1, d2), (d2, d1)] {
                let num = phi_var(tape, feats[i][a_mod], feats[i][b_mod], tau);
                let mut denom = tape.constant_scalar(0.0);
                for a in 0..n {
                    if a != i {
                        let p = phi_var(tape, feats[i][a_mod], feats[a][a_mod], tau);
                        denom = tape.add(denom, p);
                    }
                }
                for b in 0..n {
                    let p = phi_var(tape, feats[i][a_mod], feats[b][b_mod], tau);
                    denom = tape.add(denom, p);
                }
                let ratio = tape.div(num, denom);
                let log = tape.ln(ratio);
                let term = tape.scale(log, -1.0);
                pair_sum = tape.add(pair_sum, term);
            }
        }
        let pair_loss = tape.scale(pair_sum, 1.0 / (2.0 * n as f64));
        total = tape.add(total, pair_loss);
    }
    total
}

/// Mean softmax cross-entropy over failure-type logits.
pub fn fti_loss_var(
    tape: &mut Tape,
    logits: VarId,
    labels: &[usize],
    class_count: usize,
) -> Result<VarId> {
    for &l in labels {
        if l >= class_count {
            return Err(Error::LabelOutOfRange(l, class_count));
        }
    }
    Ok(tape.softmax_cross_entropy(logits, labels.to_vec()))
}

/// Mean negative log-probability of the root node under a per-sample softmax
/// over that sample's own node scores.
pub fn rcl_loss_var(tape: &mut Tape, per_sample: &[(VarId, usize)]) -> Result<VarId> {
    let n = per_sample.len();
    let mut total = tape.constant_scalar(0.0);
    for &(scores, root) in per_sample {
        let node_count = tape.value(scores).nrows();
        if root >= node_count {
            return Err(Error::RootIndexInvalid(root, node_count));
        }
        let row = tape.transpose(scores);
        let ce = tape.softmax_cross_entropy(row, vec![root]);
        total = tape.add(total, ce);
    }
    Ok(tape.scale(total, 1.0 / n as f64))
}

/// Dynamic-weight total: `sum_z L(z) / (2 theta_z^2) + ln(1 + theta_z^2)`
/// with `theta_z = exp(rho_z)`; the contrastive components are pre-scaled
/// by `omega`.
pub fn total_loss_var(
    tape: &mut Tape,
    components: [VarId; 4],
    rho: [VarId; 4],
    omega: f64,
) -> VarId {
    let mut total = tape.constant_scalar(0.0);
    for z in 0..4 {
        let comp = if z >= 2 {
            tape.scale(components[z], omega)
        } else {
            components[z]
        };
        let theta_sq = {
            let two_rho = tape.scale(rho[z], 2.0);
            tape.exp(two_rho)
        };
        let weighted = {
            let ratio = tape.div(comp, theta_sq);
            tape.scale(ratio, 0.5)
        };
        let reg = {
            let shifted = tape.add_scalar(theta_sq, 1.0);
            tape.ln(shifted)
        };
        total = tape.add(total, weighted);
        total = tape.add(total, reg);
    }
    total
}

/// Serializable snapshot of a trained model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub param_names: Vec<String>,
    pub param_shapes: Vec<(usize, usize)>,
    pub param_data: Vec<Vec<f64>>,
    pub seed: u64,
    pub epoch: usize,
    pub loss_history: Vec<f64>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, seed: u64, epoch: usize, loss_history: Vec<f64>) -> Self {
        Checkpoint {
            version: 1,
            config: model.config.clone(),
            param_names: model.params.names.clone(),
            param_shapes: model.params.tensors.iter().map(|t| t.dim()).collect(),
            param_data: model
                .params
                .tensors
                .iter()
                .map(|t| t.iter().copied().collect())
                .collect(),
            seed,
            epoch,
            loss_history,
        }
    }

    pub fn to_model(&self) -> Result<Model> {
        let mut model = Model::new(self.config.clone(), self.seed);
        if model.params.names != self.param_names {
            return Err(Error::ChecksumMismatch(
                "parameter layout does not match checkpoint".into(),
            ));
        }
        for (i, data) in self.param_data.iter().enumerate() {
            let shape = self.param_shapes[i];
            model.params.tensors[i] =
                Array2::from_shape_vec(shape, data.clone()).map_err(|e| {
                    Error::ChecksumMismatch(format!("bad tensor shape in checkpoint: {e}"))
                })?;
        }
        Ok(model)
    }
}

struct Adam {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: usize,
}

impl Adam {
    fn new(params: &Params) -> Self {
        Adam {
            m: params.tensors.iter().map(|t| Array2::zeros(t.dim())).collect(),
            v: params.tensors.iter().map(|t| Array2::zeros(t.dim())).collect(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut Params, grads: &[Array2<f64>], lr: f64, weight_decay: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let bc1 = 1.0 - B1.powi(self.t as i32);
        let bc2 = 1.0 - B2.powi(self.t as i32);
        for i in 0..params.tensors.len() {
            let g = &grads[i] + &params.tensors[i].mapv(|w| w * weight_decay);
            self.m[i] = self.m[i].mapv(|m| m * B1) + &g.mapv(|g| g * (1.0 - B1));
            self.v[i] = self.v[i].mapv(|v| v * B2) + &g.mapv(|g| g * g * (1.0 - B2));
            let update = ndarray::Zip::from(&self.m[i])
                .and(&self.v[i])
                .map_collect(|&m, &v| lr * (m / bc1) / ((v / bc2).sqrt() + EPS));
            params.tensors[i] -= &update;
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub checkpoint: Checkpoint,
    pub loss_history: Vec<f64>,
    pub best_loss: f64,
    pub stopped_early: bool,
}

/// Trains on the given samples (augmentation is applied by the caller).
/// Deterministic under a fixed seed; returns the best-loss checkpoint.
pub fn train(samples: &[FailureSample], config: &ModelConfig, seed: u64) -> Result<TrainReport> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut model = Model::new(config.clone(), seed);
    let mut optimizer = Adam::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut loss_history = Vec::new();
    let mut best_loss = f64::INFINITY;
    let mut best_snapshot = model.params.clone();
    let mut best_epoch = 0;
    let mut stall = 0usize;
    let mut stopped_early = false;

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut batches: Vec<Vec<usize>> = order
            .chunks(config.batch_size.max(1))
            .map(|c| c.to_vec())
            .collect();
        // avoid singleton trailing batches so the contrastive terms stay active
        if batches.len() >= 2 && batches.last().map(|b| b.len()) == Some(1) {
            let last = batches.pop().unwrap();
            batches.last_mut().unwrap().extend(last);
        }

        let mut epoch_loss = 0.0;
        for (batch_id, batch_idx) in batches.iter().enumerate() {
            let batch: Vec<&FailureSample> = batch_idx.iter().map(|&i| &samples[i]).collect();
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let losses = model.batch_losses(&mut tape, &bound, &batch)?;
            let loss = tape.scalar(losses.total);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss(batch_id));
            }
            epoch_loss += loss * batch.len() as f64;
            if config.learning_rate > 0.0 {
                let grads = tape.backward(losses.total, &model.params);
                optimizer.step(
                    &mut model.params,
                    &grads,
                    config.learning_rate,
                    config.weight_decay,
                );
            }
        }
        epoch_loss /= samples.len() as f64;
        loss_history.push(epoch_loss);

        if epoch_loss < best_loss - config.min_delta {
            best_loss = epoch_loss;
            best_snapshot = model.params.clone();
            best_epoch = epoch;
            stall = 0;
        } else {
            if epoch_loss < best_loss {
                best_loss = epoch_loss;
                best_snapshot = model.params.clone();
                best_epoch = epoch;
            }
            stall += 1;
            if stall >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }

    model.params = best_snapshot;
    let checkpoint = Checkpoint::from_model(&model, seed, best_epoch, loss_history.clone());
    Ok(TrainReport {
        checkpoint,
        loss_history,
        best_loss,
        stopped_early,
    })
}
