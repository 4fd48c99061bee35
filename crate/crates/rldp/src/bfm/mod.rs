//! Behavioral Foundation Model on frozen state features: a successor-feature
//! critic psi(s, a, z), a task-conditioned actor pi(s, z) (continuous) or
//! exact argmax (discrete), and their target copies.
//!
//! Critic architecture: two parallel embedders for (s,a) and (s,z), outputs
//! concatenated into a head that emits a d-vector. A tabular critic variant
//! (a plain [S*A, d] table addressed by one-hot observations) runs through
//! the same loss code paths and is used wherever exact fixed points matter.

mod losses;
mod train;

pub use losses::{
    bc_lambda_hat, bc_term, loss_fb_joint, loss_policy, loss_policy_bc, loss_sm, loss_usfa,
    sm_bellman_residual_term, BfmBatch,
};
pub use train::{train_bfm, BfmMode, TrainMetrics};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    forward_mlp, forward_mlp_eager, hard_copy_targets, init_mlp_params, kernels, Checkpoint,
    Graph, MlpSpec, OutputTransform, ParamStore, Tensor, Var,
};
use crate::envs::Dataset;
use crate::repr::EncoderParams;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorVariant {
    /// Plain greedy improvement: maximize psi(s, pi(s), z)^T z.
    Greedy,
    /// Behavior-cloning regularized improvement with adaptive weight
    /// lambda_hat = alpha / mean|Q|.
    Td3Bc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticVariant {
    /// Contrastive successor-measure parameterization m = psi^T phi.
    SuccessorMeasure,
    /// Vector-valued TD on the features directly.
    Usfa,
}

/// `seed` is never read from config files: the CLI derives it from the root
/// seed, so a stray `seed` key under `[bfm]` is rejected as unknown.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BfmConfig {
    pub gamma: f64,
    /// Probability that a sampled task embedding is goal-encoded phi(s_g)
    /// rather than drawn from the sphere prior.
    pub z_goal_fraction: f64,
    pub actor_variant: ActorVariant,
    pub critic_variant: CriticVariant,
    pub alpha_bc: f64,
    pub batch: usize,
    pub steps: usize,
    pub target_update_period: usize,
    /// Std of Gaussian action noise an online variant would explore with;
    /// accepted for config compatibility, unused by this offline trainer.
    pub exploration_noise: f64,
    pub learning_rate: f64,
    #[serde(skip)]
    pub seed: u64,
    pub critic_hidden: usize,
    pub critic_embed: usize,
    pub actor_hidden: usize,
}

impl Default for BfmConfig {
    fn default() -> Self {
        BfmConfig {
            gamma: 0.98,
            z_goal_fraction: 0.5,
            actor_variant: ActorVariant::Greedy,
            critic_variant: CriticVariant::SuccessorMeasure,
            alpha_bc: 2.5,
            batch: 256,
            steps: 50_000,
            target_update_period: 1000,
            exploration_noise: 0.0,
            learning_rate: 3e-4,
            seed: 0,
            critic_hidden: 256,
            critic_embed: 128,
            actor_hidden: 256,
        }
    }
}

impl BfmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config { detail: format!("bfm.gamma {} not in (0,1)", self.gamma) });
        }
        if !(0.0..=1.0).contains(&self.z_goal_fraction) {
            return Err(Error::Config { detail: "bfm.z_goal_fraction must be in [0,1]".into() });
        }
        if matches!(self.actor_variant, ActorVariant::Td3Bc) && self.alpha_bc <= 0.0 {
            return Err(Error::Config { detail: "bfm.alpha_bc must be > 0 for td3bc".into() });
        }
        Ok(())
    }
}

/// Critic parameterization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CriticNet {
    Mlp { sa_spec: MlpSpec, sz_spec: MlpSpec, head_spec: MlpSpec },
    /// psi_table: [S*A, d], addressed by the argmax of one-hot observation
    /// and action inputs. Ignores z (policy-evaluation fixtures).
    Tabular { n_states: usize, n_actions: usize },
}

#[derive(Debug, Clone)]
pub struct BfmParams {
    pub obs_dim: usize,
    pub action_input_dim: usize,
    pub d: usize,
    pub discrete: bool,
    pub critic_variant: CriticVariant,
    pub actor_variant: ActorVariant,
    pub critic_net: CriticNet,
    pub actor_spec: Option<MlpSpec>,
    pub critic: ParamStore,
    pub critic_target: ParamStore,
    pub actor: ParamStore,
    pub actor_target: ParamStore,
}

impl BfmParams {
    pub fn init(
        config: &BfmConfig,
        obs_dim: usize,
        action_input_dim: usize,
        d: usize,
        discrete: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let sa_spec = MlpSpec::relu(
            vec![obs_dim + action_input_dim, config.critic_hidden, config.critic_embed],
            OutputTransform::None,
        );
        let sz_spec = MlpSpec::relu(
            vec![obs_dim + d, config.critic_hidden, config.critic_embed],
            OutputTransform::None,
        );
        let head_spec = MlpSpec::relu(
            vec![2 * config.critic_embed, config.critic_hidden, d],
            OutputTransform::None,
        );
        let mut critic = ParamStore::new();
        init_mlp_params(&sa_spec, "psi_sa", &mut critic, rng)?;
        init_mlp_params(&sz_spec, "psi_sz", &mut critic, rng)?;
        init_mlp_params(&head_spec, "psi_head", &mut critic, rng)?;

        let (actor_spec, actor) = if discrete {
            (None, ParamStore::new())
        } else {
            let spec = MlpSpec::relu(
                vec![obs_dim + d, config.actor_hidden, config.actor_hidden, action_input_dim],
                OutputTransform::Tanh,
            );
            let mut store = ParamStore::new();
            init_mlp_params(&spec, "actor", &mut store, rng)?;
            (Some(spec), store)
        };

        Ok(BfmParams {
            obs_dim,
            action_input_dim,
            d,
            discrete,
            critic_variant: config.critic_variant,
            actor_variant: config.actor_variant,
            critic_net: CriticNet::Mlp { sa_spec, sz_spec, head_spec },
            actor_spec,
            critic_target: hard_copy_targets(&critic),
            critic,
            actor_target: hard_copy_targets(&actor),
            actor,
        })
    }

    /// Tabular critic over one-hot observations; used by fixed-point tests.
    pub fn init_tabular(
        n_states: usize,
        n_actions: usize,
        d: usize,
        critic_variant: CriticVariant,
    ) -> Result<Self> {
        let mut critic = ParamStore::new();
        critic.insert("psi_table", Tensor::zeros(vec![n_states * n_actions, d]))?;
        Ok(BfmParams {
            obs_dim: n_states,
            action_input_dim: n_actions,
            d,
            discrete: true,
            critic_variant,
            actor_variant: ActorVariant::Greedy,
            critic_net: CriticNet::Tabular { n_states, n_actions },
            actor_spec: None,
            critic_target: hard_copy_targets(&critic),
            critic,
            actor_target: ParamStore::new(),
            actor: ParamStore::new(),
        })
    }

    pub fn refresh_targets(&mut self) {
        self.critic_target = hard_copy_targets(&self.critic);
        self.actor_target = hard_copy_targets(&self.actor);
    }

    /// Taped critic forward psi(s, a, z) -> [B x d].
    ///
    /// `trainable = false` inserts the weights as constants, so the actor
    /// loss can differentiate through actions without touching the critic.
    pub fn critic_forward(
        &self,
        graph: &mut Graph,
        store: &ParamStore,
        trainable: bool,
        s: Var,
        a: Var,
        z: Var,
    ) -> Result<Var> {
        match &self.critic_net {
            CriticNet::Mlp { sa_spec, sz_spec, head_spec } => {
                let sa = graph.concat_cols(s, a)?;
                let e1 = forward_mlp(graph, sa_spec, store, "psi_sa", trainable, sa)?;
                let sz = graph.concat_cols(s, z)?;
                let e2 = forward_mlp(graph, sz_spec, store, "psi_sz", trainable, sz)?;
                let joint = graph.concat_cols(e1, e2)?;
                forward_mlp(graph, head_spec, store, "psi_head", trainable, joint)
            }
            CriticNet::Tabular { n_states, n_actions } => {
                let onehot = tabular_rows(
                    graph.value(s),
                    graph.value(a),
                    *n_states,
                    *n_actions,
                )?;
                let onehot = graph.constant(onehot);
                let table_t = store.get("psi_table")?;
                let table = if trainable {
                    graph.param("psi_table", table_t)
                } else {
                    graph.constant(table_t.clone())
                };
                graph.matmul(onehot, table)
            }
        }
    }

    /// Eager critic forward for target branches and evaluation.
    pub fn critic_forward_eager(
        &self,
        store: &ParamStore,
        s: &Tensor,
        a: &Tensor,
        z: &Tensor,
    ) -> Result<Tensor> {
        match &self.critic_net {
            CriticNet::Mlp { sa_spec, sz_spec, head_spec } => {
                let sa = concat_cols(s, a)?;
                let e1 = forward_mlp_eager(sa_spec, store, "psi_sa", &sa)?;
                let sz = concat_cols(s, z)?;
                let e2 = forward_mlp_eager(sz_spec, store, "psi_sz", &sz)?;
                let joint = concat_cols(&e1, &e2)?;
                forward_mlp_eager(head_spec, store, "psi_head", &joint)
            }
            CriticNet::Tabular { n_states, n_actions } => {
                let onehot = tabular_rows(s, a, *n_states, *n_actions)?;
                let table = store.get("psi_table")?;
                Ok(Tensor::matrix(
                    onehot.rows(),
                    table.cols(),
                    kernels::matmul(
                        onehot.values(),
                        table.values(),
                        onehot.rows(),
                        table.rows(),
                        table.cols(),
                    ),
                )?)
            }
        }
    }

    /// Taped actor forward pi(s, z) -> [B x action_dim], Tanh-bounded.
    pub fn actor_forward(
        &self,
        graph: &mut Graph,
        store: &ParamStore,
        trainable: bool,
        s: Var,
        z: Var,
    ) -> Result<Var> {
        let spec = self.actor_spec.as_ref().ok_or_else(|| Error::InvalidArgument {
            context: "actor_forward on a discrete-action model".into(),
        })?;
        let sz = graph.concat_cols(s, z)?;
        forward_mlp(graph, spec, store, "actor", trainable, sz)
    }

    pub fn actor_forward_eager(&self, store: &ParamStore, s: &Tensor, z: &Tensor) -> Result<Tensor> {
        let spec = self.actor_spec.as_ref().ok_or_else(|| Error::InvalidArgument {
            context: "actor_forward on a discrete-action model".into(),
        })?;
        let sz = concat_cols(s, z)?;
        forward_mlp_eager(spec, store, "actor", &sz)
    }

    /// Q(s, a, z) for every discrete action: [B x n_actions]. The (s,z)
    /// embedder runs once; only the (s,a) branch and head repeat per action.
    pub fn q_all_actions(&self, store: &ParamStore, s: &Tensor, z: &Tensor) -> Result<Tensor> {
        let b = s.rows();
        let n_actions = self.action_input_dim;
        let mut q = vec![0.0; b * n_actions];
        match &self.critic_net {
            CriticNet::Mlp { sa_spec, sz_spec, head_spec } => {
                let sz = concat_cols(s, z)?;
                let e2 = forward_mlp_eager(sz_spec, store, "psi_sz", &sz)?;
                for action in 0..n_actions {
                    let mut onehot = vec![0.0; b * n_actions];
                    for i in 0..b {
                        onehot[i * n_actions + action] = 1.0;
                    }
                    let a = Tensor::matrix(b, n_actions, onehot)?;
                    let sa = concat_cols(s, &a)?;
                    let e1 = forward_mlp_eager(sa_spec, store, "psi_sa", &sa)?;
                    let joint = concat_cols(&e1, &e2)?;
                    let psi = forward_mlp_eager(head_spec, store, "psi_head", &joint)?;
                    for i in 0..b {
                        q[i * n_actions + action] = kernels::dot(psi.row(i), z.row(i));
                    }
                }
            }
            CriticNet::Tabular { n_states, n_actions: na } => {
                let table = store.get("psi_table")?;
                for i in 0..b {
                    let sid = argmax(s.row(i));
                    debug_assert!(sid < *n_states);
                    for action in 0..*na {
                        let row = table.row(sid * na + action);
                        q[i * na + action] = kernels::dot(row, z.row(i));
                    }
                }
            }
        }
        Tensor::matrix(b, n_actions, q)
    }

    /// Greedy discrete actions argmax_a psi(s,a,z)^T z (first argmax wins).
    pub fn greedy_actions(&self, store: &ParamStore, s: &Tensor, z: &Tensor) -> Result<Vec<usize>> {
        let q = self.q_all_actions(store, s, z)?;
        Ok((0..s.rows()).map(|i| argmax(q.row(i))).collect())
    }

    /// Bootstrap action inputs for the critic target: greedy one-hots for
    /// discrete actions, the target actor's output for continuous ones.
    pub fn target_policy_actions(&self, s: &Tensor, z: &Tensor) -> Result<Tensor> {
        if self.discrete {
            let acts = self.greedy_actions(&self.critic_target, s, z)?;
            let n = self.action_input_dim;
            let mut onehot = vec![0.0; s.rows() * n];
            for (i, a) in acts.iter().enumerate() {
                onehot[i * n + a] = 1.0;
            }
            Tensor::matrix(s.rows(), n, onehot)
        } else {
            self.actor_forward_eager(&self.actor_target, s, z)
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.meta.push(("kind".into(), "bfm".into()));
        ck.meta.push(("obs_dim".into(), self.obs_dim.to_string()));
        ck.meta.push(("action_input_dim".into(), self.action_input_dim.to_string()));
        ck.meta.push(("d".into(), self.d.to_string()));
        ck.meta.push(("discrete".into(), self.discrete.to_string()));
        let critic_variant = match self.critic_variant {
            CriticVariant::SuccessorMeasure => "successor_measure",
            CriticVariant::Usfa => "usfa",
        };
        ck.meta.push(("critic_variant".into(), critic_variant.into()));
        let actor_variant = match self.actor_variant {
            ActorVariant::Greedy => "greedy",
            ActorVariant::Td3Bc => "td3bc",
        };
        ck.meta.push(("actor_variant".into(), actor_variant.into()));
        let widths = |s: &MlpSpec| {
            s.layer_widths.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
        };
        match &self.critic_net {
            CriticNet::Mlp { sa_spec, sz_spec, head_spec } => {
                ck.meta.push(("critic_net".into(), "mlp".into()));
                ck.meta.push(("sa_widths".into(), widths(sa_spec)));
                ck.meta.push(("sz_widths".into(), widths(sz_spec)));
                ck.meta.push(("head_widths".into(), widths(head_spec)));
            }
            CriticNet::Tabular { n_states, n_actions } => {
                ck.meta.push(("critic_net".into(), "tabular".into()));
                ck.meta.push(("n_states".into(), n_states.to_string()));
                ck.meta.push(("n_actions".into(), n_actions.to_string()));
            }
        }
        if let Some(spec) = &self.actor_spec {
            ck.meta.push(("actor_widths".into(), widths(spec)));
        }
        ck.sections.insert("critic".into(), self.critic.clone());
        ck.sections.insert("critic_target".into(), self.critic_target.clone());
        ck.sections.insert("actor".into(), self.actor.clone());
        ck.sections.insert("actor_target".into(), self.actor_target.clone());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta = |key: &str| {
            ck.meta_value(key).ok_or_else(|| Error::Format {
                path: "checkpoint".into(),
                offset: None,
                detail: format!("missing meta `{key}`"),
            })
        };
        let widths = |s: &str| -> Result<Vec<usize>> {
            s.split(',')
                .map(|t| {
                    t.parse::<usize>().map_err(|_| Error::Format {
                        path: "checkpoint".into(),
                        offset: None,
                        detail: format!("bad width `{t}`"),
                    })
                })
                .collect()
        };
        let critic_net = match meta("critic_net")? {
            "mlp" => CriticNet::Mlp {
                sa_spec: MlpSpec::relu(widths(meta("sa_widths")?)?, OutputTransform::None),
                sz_spec: MlpSpec::relu(widths(meta("sz_widths")?)?, OutputTransform::None),
                head_spec: MlpSpec::relu(widths(meta("head_widths")?)?, OutputTransform::None),
            },
            "tabular" => CriticNet::Tabular {
                n_states: meta("n_states")?.parse().unwrap_or(0),
                n_actions: meta("n_actions")?.parse().unwrap_or(0),
            },
            other => {
                return Err(Error::Format {
                    path: "checkpoint".into(),
                    offset: None,
                    detail: format!("unknown critic_net `{other}`"),
                })
            }
        };
        let actor_spec = ck
            .meta_value("actor_widths")
            .map(|w| widths(w).map(|v| MlpSpec::relu(v, OutputTransform::Tanh)))
            .transpose()?;
        Ok(BfmParams {
            obs_dim: meta("obs_dim")?.parse().unwrap_or(0),
            action_input_dim: meta("action_input_dim")?.parse().unwrap_or(0),
            d: meta("d")?.parse().unwrap_or(0),
            discrete: meta("discrete")? == "true",
            critic_variant: match meta("critic_variant")? {
                "usfa" => CriticVariant::Usfa,
                _ => CriticVariant::SuccessorMeasure,
            },
            actor_variant: match meta("actor_variant")? {
                "td3bc" => ActorVariant::Td3Bc,
                _ => ActorVariant::Greedy,
            },
            critic_net,
            actor_spec,
            critic: ck.section("critic")?.clone(),
            critic_target: ck.section("critic_target")?.clone(),
            // discrete models have no actor tensors, so the sections are
            // absent from the manifest entirely
            actor: ck.sections.get("actor").cloned().unwrap_or_default(),
            actor_target: ck.sections.get("actor_target").cloned().unwrap_or_default(),
        })
    }
}

/// Q = psi(s,a,z)^T z for a single row.
pub fn q_value(psi: &[f64], z: &[f64]) -> f64 {
    kernels::dot(psi, z)
}

/// Sample `batch` task embeddings: goal-encoded phi(s_g) with probability
/// `z_goal_fraction` (s_g uniform over stored next-states), otherwise uniform
/// on the radius-sqrt(d) sphere. Each row is drawn independently.
pub fn sample_z(
    rng: &mut impl Rng,
    dataset: &Dataset,
    encoder: &EncoderParams,
    z_goal_fraction: f64,
    batch: usize,
) -> Result<Tensor> {
    let d = encoder.d;
    let n = dataset.n_transitions();
    let mut out = Vec::with_capacity(batch * d);
    for _ in 0..batch {
        if n > 0 && rng.random_range(0.0..1.0) < z_goal_fraction {
            let tr = dataset.transition(rng.random_range(0..n));
            let obs = Tensor::matrix(1, tr.next_state.len(), tr.next_state.clone())?;
            out.extend_from_slice(encoder.encode(&obs)?.values());
        } else {
            let mut v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            let scale = (d as f64).sqrt() / norm;
            v.iter_mut().for_each(|x| *x *= scale);
            out.extend_from_slice(&v);
        }
    }
    Tensor::matrix(batch, d, out)
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn concat_cols(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rows() != b.rows() {
        return Err(Error::Shape {
            context: "concat_cols".into(),
            detail: format!("{} vs {} rows", a.rows(), b.rows()),
        });
    }
    let mut vals = Vec::with_capacity(a.rows() * (a.cols() + b.cols()));
    for i in 0..a.rows() {
        vals.extend_from_slice(a.row(i));
        vals.extend_from_slice(b.row(i));
    }
    Tensor::matrix(a.rows(), a.cols() + b.cols(), vals)
}

/// Combined (state, action) one-hot rows for the tabular critic.
fn tabular_rows(s: &Tensor, a: &Tensor, n_states: usize, n_actions: usize) -> Result<Tensor> {
    let b = s.rows();
    let mut vals = vec![0.0; b * n_states * n_actions];
    for i in 0..b {
        let sid = argmax(s.row(i));
        let aid = argmax(a.row(i));
        if sid >= n_states || aid >= n_actions {
            return Err(Error::Shape {
                context: "tabular critic".into(),
                detail: format!("state {sid} or action {aid} out of range"),
            });
        }
        vals[i * n_states * n_actions + sid * n_actions + aid] = 1.0;
    }
    Tensor::matrix(b, n_states * n_actions, vals)
}
