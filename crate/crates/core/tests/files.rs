use std::io::Cursor;
use std::path::PathBuf;

use ace_core::agent::{Agent, AgentConfig};
use ace_core::envs::{maze_task, read_transitions, replay_matches, scripted_navigator_dataset, write_transitions, MazeLayout};
use ace_core::nn::checkpoint::{self, Checkpoint};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ace-core-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn transition_file_round_trip_replays_in_the_maze() {
    let layout = MazeLayout::large();
    let (header, records) = scripted_navigator_dataset(&layout, 250, 50, &mut ChaCha8Rng::seed_from_u64(8));
    assert_eq!(header.count, 250);
    let mut bytes = Vec::new();
    write_transitions(&mut bytes, &header, &records).unwrap();
    let first_line = bytes.split(|&b| b == b'\n').next().unwrap();
    assert!(std::str::from_utf8(first_line).unwrap().contains("format=1"));
    let (h2, r2) = read_transitions(Cursor::new(&bytes)).unwrap();
    assert_eq!(h2, header);
    assert_eq!(r2.len(), records.len());
    let mut env = maze_task(layout, 50);
    assert!(replay_matches(&mut env, &h2, &r2));
}

#[test]
fn truncated_transition_file_is_rejected() {
    let (header, records) = scripted_navigator_dataset(&MazeLayout::large(), 20, 10, &mut ChaCha8Rng::seed_from_u64(1));
    let mut bytes = Vec::new();
    write_transitions(&mut bytes, &header, &records).unwrap();
    bytes.truncate(bytes.len() - 3);
    assert!(read_transitions(Cursor::new(&bytes)).is_err());
}

#[test]
fn agent_survives_a_checkpoint() {
    let cfg = AgentConfig {
        latent_dim: 4,
        encoder_hidden: 8,
        mlp_hidden: 8,
        gru_hidden: 6,
        ..AgentConfig::new(3, 2)
    };
    let agent: Agent<f32> = Agent::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let mut ck = Checkpoint::default();
    ck.meta.push(("note".into(), "integration".into()));
    ck.push_group("online", &agent.params);
    ck.push_group("target", &agent.target);
    ck.push_group("stats", &agent.stats);
    let stem = scratch("ckpt").join("agent");
    checkpoint::save(&stem, &ck).unwrap();
    let back = checkpoint::load(&stem).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.meta("note"), Some("integration"));
    let restored = Agent::from_parts(
        cfg,
        back.group("online").unwrap().clone(),
        back.group("target").unwrap().clone(),
        back.group("stats").unwrap().clone(),
    )
    .unwrap();
    let obs = [0.1, -0.2, 0.3];
    let (a, b) = (agent.root(&obs).unwrap(), restored.root(&obs).unwrap());
    assert_eq!(a.z.data(), b.z.data());
}

#[test]
fn corrupt_blob_is_detected() {
    let mut ck = Checkpoint::default();
    let agent: Agent<f32> = Agent::new(AgentConfig::new(2, 1), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    ck.push_group("online", &agent.params);
    let stem = scratch("corrupt").join("c");
    checkpoint::save(&stem, &ck).unwrap();
    let blob = checkpoint::blob_path(&stem);
    let mut bytes = std::fs::read(&blob).unwrap();
    bytes.pop();
    std::fs::write(&blob, bytes).unwrap();
    assert!(checkpoint::load(&stem).is_err());
}
