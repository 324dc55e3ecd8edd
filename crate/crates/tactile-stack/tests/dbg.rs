use tactile_stack::config::{PolicyConfig, ScenarioConfig};
use tactile_stack::data::{build_dataset, DatasetConfig};
use tactile_stack::expert::{adverb_force, scripted_expert, DemoStyle, Expectation};
use tactile_stack::policy::flow::train;
use tactile_stack::rollout::{mean_contact_force, run_episode, PolicySource};
use tactile_stack::types::{ForceModifier, Instruction, TargetId, TaskId};

#[test]
fn dbg_adverb_pipeline() {
    let t0 = std::time::Instant::now();
    let scenario = ScenarioConfig::insertion();
    let mut episodes = Vec::new();
    for (i, modifier) in [ForceModifier::Softly, ForceModifier::Hard]
        .iter()
        .flat_map(|m| (0..16).map(move |i| (i, *m)))
    {
        let ins = Instruction::new(TaskId::Insert, modifier, TargetId::UsbPlug);
        let style = DemoStyle {
            external_force: adverb_force(modifier),
            grasp_force: 3.0,
            dither: std::env::var("DBG_DITHER").map(|v| v.parse().unwrap()).unwrap_or(0.0),
            expect: Expectation::Success,
        };
        let seed = 1000 + i as u64 * 7 + if modifier == ForceModifier::Hard { 500 } else { 0 };
        let out = match scripted_expert(&scenario, &ins, &style, seed) {
            Ok(o) => o,
            Err(e) => panic!("demo seed {seed} modifier {:?}: {e}", modifier),
        };
        episodes.push(out.record);
    }
    println!("collected {} demos in {:?}", episodes.len(), t0.elapsed());

    let ds_cfg = DatasetConfig {
        history: std::env::var("DBG_H").map(|v| v.parse().unwrap()).unwrap_or(4),
        n_chunk: std::env::var("DBG_CHUNK").map(|v| v.parse().unwrap()).unwrap_or(16),
        train_fraction: 1.0,
        split_seed: 0,
        required_cells: vec![(TaskId::Insert, ForceModifier::Softly), (TaskId::Insert, ForceModifier::Hard)],
    };
    let dataset = build_dataset(episodes, ds_cfg).unwrap();
    println!("windows: {} in {:?}", dataset.train_windows().len(), t0.elapsed());

    let pol_cfg = PolicyConfig {
        train_steps: std::env::var("DBG_STEPS").map(|v| v.parse().unwrap()).unwrap_or(3000),
        hidden: std::env::var("DBG_HIDDEN")
            .map(|v| v.split(',').map(|x| x.parse().unwrap()).collect())
            .unwrap_or_else(|_| vec![64, 64]),
        learning_rate: std::env::var("DBG_LR").map(|v| v.parse().unwrap()).unwrap_or(1e-3),
        w_kin: std::env::var("DBG_WKIN").map(|v| v.parse().unwrap()).unwrap_or(1.0),
        w_force: std::env::var("DBG_WFORCE").map(|v| v.parse().unwrap()).unwrap_or(1.0),
        history: std::env::var("DBG_H").map(|v| v.parse().unwrap()).unwrap_or(4),
        n_chunk: std::env::var("DBG_CHUNK").map(|v| v.parse().unwrap()).unwrap_or(16),
        n_steps: std::env::var("DBG_NSTEPS").map(|v| v.parse().unwrap()).unwrap_or(32),
        ..PolicyConfig::default()
    };
    let (policy, curve) = train(&dataset, &pol_cfg, 42).unwrap();
    println!(
        "trained in {:?}; loss {:.4} -> {:.4}",
        t0.elapsed(),
        curve[..50].iter().sum::<f64>() / 50.0,
        curve[curve.len() - 200..].iter().sum::<f64>() / 200.0
    );
    for k in (0..curve.len()).step_by(curve.len() / 10) {
        println!("  loss[{k}] = {:.4}", curve[k..(k + 50).min(curve.len())].iter().sum::<f64>() / 50.0f64.min((curve.len() - k) as f64));
    }

    // Inspect raw samples: normalized magnitudes and denormalized targets.
    {
        use tactile_stack::data::WindowRef;
        let w = WindowRef { episode: 0, t: 60 };
        let obs: Vec<Vec<f64>> = dataset.window_obs(w).iter().map(|o| o.to_vec()).collect();
        let tac = dataset.window_tactile(w);
        let ins = dataset.window_instruction(w).clone();
        let ctx = policy.make_context(&obs, &tac, &ins).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        use rand::SeedableRng;
        let chunk = policy.sample_action(&ctx, 32, &mut rng).unwrap();
        let expert_chunk = dataset.window_action_chunk(w);
        for i in [0usize, chunk.len() / 2, chunk.len() - 1] {
            let s_cmd = chunk.commands()[i];
            let e_cmd = expert_chunk.commands()[i];
            println!(
                "cmd{i}: sampled p=({:.4},{:.4},{:.4}) f={:.2} | expert p=({:.4},{:.4},{:.4}) f={:.2}",
                s_cmd.p_target.x, s_cmd.p_target.y, s_cmd.p_target.z, s_cmd.f_target_external.normal,
                e_cmd.p_target.x, e_cmd.p_target.y, e_cmd.p_target.z, e_cmd.f_target_external.normal,
            );
        }
        let xs: Vec<f64> = (0..16).map(|k| dataset.action_norm.std[k * 8]).collect();
        println!("x-dim stds: {:?}", &xs[..4]);
        println!("x-dim means: {:?}", &dataset.action_norm.mean[..8]);
    }

    // Trace one eval episode in detail.
    {
        use tactile_stack::sim::ScenarioState;
        let ins = Instruction::new(TaskId::Insert, ForceModifier::Softly, TargetId::UsbPlug);
        let source = PolicySource::new(&policy, ins, 777);
        let world = tactile_stack::sim::spawn_scenario(&scenario, 555).unwrap();
        let mut runner = tactile_stack::rollout::EpisodeRunner::new(world, source, 4, 555);
        for k in 0..24 {
            runner.run_for(0.5).unwrap();
            let w = &runner.world;
            if let ScenarioState::Insertion(st) = &w.scenario {
                let lat = ((w.robot.tool_position.x - st.socket_pos.x).powi(2)
                    + (w.robot.tool_position.y - st.socket_pos.y).powi(2))
                .sqrt();
                println!(
                    "trace t={:.1} z={:.4} lat={:.4} seat={:.5} engaged={}",
                    w.time, w.robot.tool_position.z, lat, st.seated_depth, st.engaged
                );
            }
            let _ = k;
        }
    }

    for modifier in [
        ForceModifier::Softly,
        ForceModifier::Gently,
        ForceModifier::Neutral,
        ForceModifier::Firmly,
        ForceModifier::Hard,
        ForceModifier::Harder,
    ] {
        let ins = Instruction::new(TaskId::Insert, modifier, TargetId::UsbPlug);
        let mut forces = Vec::new();
        let mut successes = 0;
        for trial in 0..8 {
            let source = PolicySource::new(&policy, ins.clone(), 9000 + trial);
            let out = run_episode(&scenario, source, 20_000 + trial).unwrap();
            if out.record.outcome.is_success() {
                successes += 1;
            }
            if let Some(f) = mean_contact_force(&out.record, 0.05) {
                forces.push(f);
            }
        }
        let mean = forces.iter().sum::<f64>() / forces.len().max(1) as f64;
        println!(
            "{:>8}: mean executed force {:.3} N over {} contact trials, {}/8 success",
            modifier.name(),
            mean,
            forces.len(),
            successes
        );
    }
    println!("total {:?}", t0.elapsed());
}


#[test]
fn dbg_dither_demo() {
    use tactile_stack::sim::ScenarioState;
    use tactile_stack::rollout::EpisodeRunner;
    use tactile_stack::expert::ScriptedExpert;
    let scenario = ScenarioConfig::insertion();
    let ins = Instruction::new(TaskId::Insert, ForceModifier::Softly, TargetId::UsbPlug);
    let style = DemoStyle {
        external_force: 0.5,
        grasp_force: 3.0,
        dither: 0.0008,
        expect: Expectation::Any,
    };
    let expert = ScriptedExpert::new(ins, style, &scenario).unwrap().with_seed(1084);
    let world = tactile_stack::sim::spawn_scenario(&scenario, 1084).unwrap();
    let mut runner = EpisodeRunner::new(world, expert, 4, 1084);
    for _ in 0..28 {
        runner.run_for(0.5).unwrap();
        let w = &runner.world;
        if let ScenarioState::Insertion(st) = &w.scenario {
            println!(
                "t={:.1} z={:.4} seat={:.5} engaged={}",
                w.time, w.robot.tool_position.z, st.seated_depth, st.engaged
            );
        }
    }
}
