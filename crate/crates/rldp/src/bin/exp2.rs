// Scratch: minimal successor-measure DQN-style loop on a tiny open grid.

use rldp::autodiff::{adam_step, hard_copy_targets, AdamState, Graph, MlpSpec, OutputTransform, ParamStore, Tensor};
use rldp::bfm::{loss_sm, BfmBatch, BfmConfig, BfmParams};
use rldp::envs::{generate_gridworld_dataset, GenPolicy, GridAction, GridObs, GridWorld, Transition};
use rldp::oracle::{successor_measure_exact, value_iteration, TabularMdp, TabularPolicy};
use rldp::repr::{EncoderParams, ReprMethod};
use rldp::seeding::component_rng;

fn onehot_encoder(n: usize) -> EncoderParams {
    let mut params = ParamStore::new();
    let mut eye = vec![0.0; n * n];
    for i in 0..n {
        eye[i * n + i] = 1.0;
    }
    params.insert("phi.w0", Tensor::matrix(n, n, eye).unwrap()).unwrap();
    params.insert("phi.b0", Tensor::new(vec![n], vec![0.0; n]).unwrap()).unwrap();
    let target = hard_copy_targets(&params);
    EncoderParams {
        obs_dim: n,
        action_input_dim: 4,
        d: n,
        horizon: 1,
        lambda: 0.0,
        method: ReprMethod::Rldp,
        phi_spec: MlpSpec::relu(vec![n, n], OutputTransform::Sphere),
        aproj_spec: MlpSpec::relu(vec![4, 4], OutputTransform::None),
        g_spec: MlpSpec::relu(vec![n + 4, n], OutputTransform::None),
        params,
        target,
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let p = |i: usize, d: f64| args.get(i).and_then(|s| s.parse::<f64>().ok()).unwrap_or(d);
    let gamma = p(1, 0.9);
    let steps = p(2, 20_000.0) as usize;
    let lr = p(3, 1e-3);
    let period = p(4, 200.0) as usize;
    let batch = p(5, 64.0) as usize;
    let hidden = p(6, 64.0) as usize;
    let embed = p(7, 32.0) as usize;

    // 5x5 open room, 9 free cells... use 7x7 with 25 free cells
    let env = GridWorld::from_map(
        &["#######", "#     #", "#     #", "#     #", "#     #", "#     #", "#######"],
        GridObs::OneHotSphere,
    )
    .unwrap();
    let n = env.n_free();
    println!("free cells: {n}");
    let data = generate_gridworld_dataset(&env, GenPolicy::UniformRandom, 400, 25, 42, Some((1, 1)))
        .unwrap();
    let enc = onehot_encoder(n);
    let goal = (5usize, 5usize);
    let gid = env.cell_id(goal.0, goal.1).unwrap();
    let goal_obs = env.observe(goal);
    let z1 = enc.encode(&Tensor::matrix(1, n, goal_obs).unwrap()).unwrap();

    let cfg = BfmConfig {
        gamma,
        batch,
        steps,
        target_update_period: period,
        learning_rate: lr,
        critic_hidden: hidden,
        critic_embed: embed,
        seed: 3,
        ..BfmConfig::default()
    };
    let mut init_rng = component_rng(cfg.seed, "bfm-init");
    let mut bfm = BfmParams::init(&cfg, n, 4, enc.d, true, &mut init_rng).unwrap();
    let mut rng = component_rng(cfg.seed, "bfm-train");
    let mut adam = AdamState::new(&bfm.critic, cfg.learning_rate);
    let zbatch = {
        let mut v = Vec::new();
        for _ in 0..cfg.batch {
            v.extend_from_slice(z1.values());
        }
        Tensor::matrix(cfg.batch, enc.d, v).unwrap()
    };
    let t0 = std::time::Instant::now();
    for step in 1..=cfg.steps {
        let tb = rldp::envs::sample_transitions(&data, cfg.batch, &mut rng).unwrap();
        let batch = BfmBatch::from_transitions(&tb, data.meta.action_kind, 4).unwrap();
        let mut graph = Graph::new();
        let loss = loss_sm(&mut graph, &bfm, &enc, &batch, &zbatch, cfg.gamma).unwrap();
        graph.backward(loss, &mut bfm.critic).unwrap();
        adam_step(&mut adam, &mut bfm.critic).unwrap();
        if step % cfg.target_update_period == 0 {
            bfm.refresh_targets();
        }
    }
    println!("train {:.1}s", t0.elapsed().as_secs_f64());

    // oracle: optimal policy for goal reward, then its exact measure
    let mdp = TabularMdp::from_gridworld(&env, gamma).unwrap();
    let mut r = vec![0.0; n];
    r[gid] = 1.0;
    let (q_star, pi_star) = value_iteration(&mdp, &r).unwrap();

    // learned Q field vs oracle argmax field
    let obs_all = {
        let mut v = Vec::new();
        for &c in env.free_cells() {
            v.extend_from_slice(&env.observe(c));
        }
        Tensor::matrix(n, n, v).unwrap()
    };
    let zrep = {
        let mut v = Vec::new();
        for _ in 0..n {
            v.extend_from_slice(z1.values());
        }
        Tensor::matrix(n, z1.cols(), v).unwrap()
    };
    let q_all = bfm.q_all_actions(&bfm.critic, &obs_all, &zrep).unwrap();
    let arrows = ['^', 'v', '<', '>'];
    println!("learned policy / oracle policy / maxQ per cell:");
    for (i, &(x, y)) in env.free_cells().iter().enumerate() {
        let row = q_all.row(i);
        let mut best = 0;
        for a in 0..4 {
            if row[a] > row[best] {
                best = a;
            }
        }
        let q_best = row[best];
        let opt = {
            let qrow = &q_star[i * 4..(i + 1) * 4];
            let m = qrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            qrow[best] >= m - 1e-9
        };
        println!(
            "({x},{y}) learned {} oracle {} {} maxQ {:.2} Q {:?}",
            arrows[best],
            arrows[pi_star.action(i)],
            if opt { "OK " } else { "BAD" },
            q_best,
            row.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>()
        );
    }

    // measure check at a reference (s0, a0)
    let m_oracle = successor_measure_exact(&mdp, &pi_star).unwrap();
    let s0 = env.cell_id(1, 1).unwrap();
    let a0 = GridAction::Right.index();
    let s0_obs = Tensor::matrix(1, n, env.observe((1, 1))).unwrap();
    let mut a_onehot = vec![0.0; 4];
    a_onehot[a0] = 1.0;
    let a0_t = Tensor::matrix(1, 4, a_onehot).unwrap();
    let psi = bfm.critic_forward_eager(&bfm.critic, &s0_obs, &a0_t, &z1).unwrap();
    let mut linf = 0.0f64;
    for x in 0..n {
        let m_model = psi
            .row(0)
            .iter()
            .zip(enc.encode(&Tensor::matrix(1, n, env.observe(env.cell_at(x))).unwrap()).unwrap().values())
            .map(|(a, b)| a * b)
            .sum::<f64>();
        let diff = (m_model * (1.0 / n as f64) - m_oracle[(s0 * 4 + a0) * n + x]).abs();
        linf = linf.max(diff);
    }
    println!("L_inf(m*rho - M_oracle at (s0,a0)) = {linf:.4}   (mass scale {:.1})", 1.0 / (1.0 - gamma));

    // rollout success from every cell
    let mut succ = 0;
    for start in 0..n {
        let mut cell = env.cell_at(start);
        for _ in 0..30 {
            let o = Tensor::matrix(1, n, env.observe(cell)).unwrap();
            let a = bfm.greedy_actions(&bfm.critic, &o, &z1).unwrap()[0];
            cell = env.step(cell, GridAction::from_index(a).unwrap());
            if cell == goal {
                succ += 1;
                break;
            }
        }
    }
    println!("reached goal from {succ}/{n} starts");
}

#[allow(unused_imports)]
use rldp::envs::Dataset;
#[allow(dead_code)]
fn unused(_: &[Transition], _: &TabularPolicy) {}
