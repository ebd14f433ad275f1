//! Replays a scripted doctor against the bundled tuberculosis case.
//!
//!     cargo run --example simulation_episode

use std::path::Path;
use std::sync::Arc;

use forge::env::{run_episode, Attempt, Environment, Sample, VignetteStore};
use forge::policy::{PolicyHandle, PolicyRequest, PolicyRole, ScriptedPolicy};
use forge::trajectory::{EnvironmentId, Mode, Role};
use serde_json::{json, Value};

fn act(think: &str, name: &str, args: Value) -> String {
    format!("<think>{think}</think>\n{}", json!({"name": name, "arguments": args}))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let store = Arc::new(VignetteStore::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("vignettes"))?);
    let env = Environment::scripted(EnvironmentId::Simulation, Arc::default()).with_vignettes(store);

    let script = [
        act("Start with the vitals.", "RequestPhysicalExam", json!({"exam": "Vital_Signs"})),
        act("Listen to the chest.", "RequestPhysicalExam", json!({"exam": "Respiratory_Examination"})),
        act("Image the chest.", "RequestTest", json!({"test": "Chest X-Ray"})),
        act("Cavitation. Check the sputum.", "RequestTest", json!({"test": "Sputum Analysis"})),
        act("Acid-fast bacilli seen.", "Terminate", json!({"diagnosis": "Tuberculosis"})),
    ];
    // One reply per doctor turn, chosen by how many the doctor has already sent.
    let doctor = PolicyHandle::scripted(
        PolicyRole::Agent,
        ScriptedPolicy::new().with_responder(move |r: &PolicyRequest| {
            script.get(r.messages.iter().filter(|m| m.role == Role::Gpt).count()).cloned()
        }),
    );

    let mut sample = Sample::new("tb-demo", "mimic_osce", "Diagnose the patient.", "Pulmonary Tuberculosis");
    sample.vignette = Some("pulmonary_tuberculosis".into());
    let result = run_episode(&env, &sample, &doctor, Attempt::single(1))?;
    let t = result.trajectory(Mode::Prospective)?;
    for turn in t.turns.iter().filter(|x| x.role == Role::Observation) {
        println!("observation: {}", turn.content);
    }
    println!("diagnosis: {:?} after {} actions", result.final_answer(), result.depth());
    Ok(())
}
