// Scratch calibration harness (not part of the deliverable).

use rldp::bfm::{train_bfm, BfmConfig, BfmMode};
use rldp::envs::{generate_gridworld_dataset, GenPolicy, GridObs, GridWorld};
use rldp::repr::{train_representation, EncoderParams, ReprConfig, ReprMethod};
use rldp::zeroshot::{evaluate, infer_z_mean, rescale_z, EvalEnv, EvalPolicy, RewardSpec};
use rldp::autodiff::Tensor;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let p = |i: usize, d: f64| args.get(i).and_then(|s| s.parse::<f64>().ok()).unwrap_or(d);
    let gamma = p(1, 0.9);
    let steps = p(2, 30_000.0) as usize;
    let lr = p(3, 1e-3);
    let target_period = p(4, 200.0) as usize;
    let zfrac = p(5, 0.5);
    let batch = p(6, 64.0) as usize;
    let hidden = p(7, 96.0) as usize;
    let embed = p(8, 48.0) as usize;
    let d = p(9, 24.0) as usize;
    let method_sel = p(10, 0.0) as usize;
    let obs_sel = p(12, 0.0) as usize;

    let env = GridWorld::four_room(if obs_sel == 1 { GridObs::XyNorm } else { GridObs::OneHotSphere });
    let data =
        generate_gridworld_dataset(&env, GenPolicy::CountBonus, 600, 50, 999, None).unwrap();

    let t0 = std::time::Instant::now();
    let enc = if method_sel == 2 {
        // exact one-hot identity encoder
        use rldp::autodiff::{hard_copy_targets, MlpSpec, OutputTransform, ParamStore};
        let n = 104;
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
    } else {
        let method = if method_sel == 1 { ReprMethod::Random } else { ReprMethod::Rldp };
        let rcfg = ReprConfig {
            d,
            horizon: 1,
            lambda: 1.0,
            method,
            batch: 64,
            total_steps: 6000,
            learning_rate: 1e-3,
            target_update_period: 1000,
            phi_hidden: vec![64, 64],
            g_hidden: vec![64, 64],
            action_embed: 16,
            seed: 2,
            ..ReprConfig::default()
        };
        let (enc, _) = train_representation(&rcfg, &data).unwrap();
        enc
    };
    println!("pretrain: {:.1}s", t0.elapsed().as_secs_f64());

    let cfg = BfmConfig {
        gamma,
        z_goal_fraction: zfrac,
        batch,
        steps,
        target_update_period: target_period,
        learning_rate: lr,
        critic_hidden: hidden,
        critic_embed: embed,
        seed: 3,
        ..BfmConfig::default()
    };
    let fixed_z_mode = p(11, 0.0) > 0.5;
    let t0 = std::time::Instant::now();
    let (bfm, enc) = if fixed_z_mode {
        // single-task sanity loop: constant z = phi(goal (10,10))
        use rldp::autodiff::{adam_step, AdamState, Graph};
        use rldp::bfm::{loss_sm, BfmBatch, BfmParams};
        use rldp::envs::sample_transitions;
        use rldp::seeding::component_rng;
        let goal_obs = env.observe((10, 10));
        let z1 = enc
            .encode(&Tensor::matrix(1, goal_obs.len(), goal_obs).unwrap())
            .unwrap();
        let mut init_rng = component_rng(cfg.seed, "bfm-init");
        let mut bfm =
            BfmParams::init(&cfg, env.obs_dim(), 4, enc.d, true, &mut init_rng).unwrap();
        let mut rng = component_rng(cfg.seed, "bfm-train");
        let mut adam = AdamState::new(&bfm.critic, cfg.learning_rate);
        let zbatch = {
            let mut v = Vec::new();
            for _ in 0..cfg.batch {
                v.extend_from_slice(z1.values());
            }
            Tensor::matrix(cfg.batch, enc.d, v).unwrap()
        };
        for step in 1..=cfg.steps {
            if step == cfg.steps / 2 {
                adam.learning_rate = cfg.learning_rate * 0.15;
            }
            let tb = sample_transitions(&data, cfg.batch, &mut rng).unwrap();
            let batch = BfmBatch::from_transitions(&tb, data.meta.action_kind, 4).unwrap();
            let mut graph = Graph::new();
            let loss = loss_sm(&mut graph, &bfm, &enc, &batch, &zbatch, cfg.gamma).unwrap();
            graph.backward(loss, &mut bfm.critic).unwrap();
            adam_step(&mut adam, &mut bfm.critic).unwrap();
            if step % cfg.target_update_period == 0 {
                bfm.refresh_targets();
            }
        }
        (bfm, enc)
    } else {
        let (bfm, enc, metrics) = train_bfm(&cfg, &data, &enc, BfmMode::FrozenFeatures).unwrap();
        for row in metrics.rows.iter().rev().take(2) {
            println!("  step {} critic_loss {:.3} mean_q {:.3}", row.0, row.1, row.3);
        }
        (bfm, enc)
    };
    println!("train: {:.1}s", t0.elapsed().as_secs_f64());

    let mut successes = 0.0;
    for goal in [(2usize, 2usize), (9, 2), (2, 9), (10, 10)] {
        let task = RewardSpec::GoalCell { x: goal.0, y: goal.1 };
        let task_c = task.clone();
        let env_c = env.clone();
        let reward = move |obs: &[f64]| task_c.eval_grid(&env_c, obs);
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let z = infer_z_mean(&data, &enc, &reward, 10_000, &mut rng).unwrap();
        let z = rescale_z(&z);
        let report = evaluate(
            &EvalEnv::Grid(&env),
            &EvalPolicy::Bfm { bfm: &bfm, z: &z },
            &task,
            50,
            60,
            gamma,
            7,
        )
        .unwrap();

        use rldp::oracle::{value_iteration, TabularMdp};
        let mdp = TabularMdp::from_gridworld(&env, gamma).unwrap();
        let gid = env.cell_id(goal.0, goal.1).unwrap();
        let mut r = vec![0.0; 104];
        r[gid] = 1.0;
        let (q_star, _) = value_iteration(&mdp, &r).unwrap();
        let obs_all = rldp::cli::all_observations(&env).unwrap();
        let zrep = {
            let mut v = Vec::new();
            for _ in 0..104 {
                v.extend_from_slice(z.values());
            }
            Tensor::matrix(104, z.cols(), v).unwrap()
        };
        let acts = bfm.greedy_actions(&bfm.critic, &obs_all, &zrep).unwrap();
        let good = (0..104)
            .filter(|&s| {
                let qrow = &q_star[s * 4..(s + 1) * 4];
                let best = qrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                qrow[acts[s]] >= best - 1e-9
            })
            .count();
        successes += report.success_rate;
        println!(
            "goal {:?}: success {:.2} | greedy-optimal at {}/104 states",
            goal, report.success_rate, good
        );
        if std::env::var("EXP_MAP").is_ok() {
            for y in 0..13 {
                let mut line = String::new();
                for x in 0..13 {
                    line.push(match env.cell_id(x, y) {
                        Ok(s) => {
                            let qrow = &q_star[s * 4..(s + 1) * 4];
                            let best = qrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                            if (x, y) == goal { 'G' }
                            else if qrow[acts[s]] >= best - 1e-9 { '.' } else { 'X' }
                        }
                        Err(_) => '#',
                    });
                }
                println!("  {line}");
            }
        }
    }
    println!("MEAN SUCCESS {:.3}", successes / 4.0);
}
