//! Default prompt templates. Every template can be replaced through
//! configuration; `{name}` placeholders are filled by [`fill`].

pub const DIRECT: &str = "Answer the medical question. Reason inside <think></think>, then give only the answer.";

pub const TOOL_CALLING: &str = "\
You answer chest X-ray questions with the help of imaging tools.
Before every tool call or answer, reason inside <think></think>.
To call a tool, emit one JSON object {\"name\": ..., \"arguments\": {...}} after the reasoning.
Avoid redundant calls and stop as soon as the evidence is sufficient.
Finish with a line `[FINAL] <answer>`; use lowercase yes or no for yes/no questions.";

pub const INTERLEAVED: &str = "\
You inspect a medical image with image-editing tools.
Images are referenced by id: img_original is the input, img_round_N is the output of step N, img_last is the latest output.
Each observation that creates an image names it as [Output Image ID: img_round_N].
Reason inside <think></think>, then emit exactly one JSON action {\"name\": ..., \"arguments\": {...}}.
End by calling Terminate with a short answer in `ans`.";

pub const SIMULATION: &str = "\
You are the physician in a structured clinical encounter.
Request physical examinations and tests one at a time, reasoning inside <think></think> before each request.
Emit each request as one JSON action {\"name\": ..., \"arguments\": {...}}.
Finish by calling Terminate with the diagnosis name only.";

pub const COLLABORATION: &str = "\
A panel of medical agents answers the question. The stages are difficulty assessment, expert recruitment, \
independent analyses, two debate rounds, synthesis and a moderator vote.";

pub const SIMULATION_CASE: &str = "\
{objective}

Patient presentation:
{presentation}

Available physical examinations: {available_exams}
Available tests: {available_tests}";

pub const ASSESSOR: &str = "You triage medical queries by how much expertise they need.";

pub const ASSESS_QUERY: &str = "\
Query: {question}

Classify the query:
1) basic: one expert can answer from the given information.
2) intermediate: several experts should discuss and decide.
3) advanced: teams from several departments must collaborate.";

pub const ASSESS_REASK: &str = "Reply with exactly one of: 1) basic, 2) intermediate, 3) advanced.";

pub const RECRUITER: &str = "You assemble a small panel of medical specialists for a query.";

pub const RECRUIT_QUERY: &str = "\
Query: {question}

Recruit 3 experts with different specialties. Reply with a numbered list, one expert per line:
1. <Specialty> - <focus> - Hierarchy: <relation or Independent>
Do not answer the query.";

pub const RECRUIT_REASK: &str = "List exactly three experts as a numbered list and nothing else.";

pub const EXPERT: &str =
    "You are a {expert}. Analyse the query from your specialty and end with a line `Answer: <answer>`.";

pub const SINGLE_EXPERT: &str = "You are a medical expert. Answer the query and end with a line `Answer: <answer>`.";

pub const EXPERT_QUERY: &str = "Query: {question}";

pub const DEBATE_QUERY: &str = "\
Query: {question}

Debate round {round}. Your current opinion:
{own}

Other experts:
{others}

Respond to the other experts and restate your position, ending with `Answer: <answer>`.";

pub const EXPERT_REASK: &str = "Give your analysis and end with a line `Answer: <answer>`.";

pub const SYNTHESIZER: &str = "You summarize reports from several medical experts into one analysis.";

pub const SYNTHESIS_QUERY: &str = "\
Query: {question}

Expert reports:
{opinions}

Extract the key knowledge and write one refined analysis.";

pub const MODERATOR: &str = "You make the final decision from the experts' answers by majority vote.";

pub const MODERATOR_QUERY: &str = "\
Query: {question}

Final answers:
{answers}

Give brief reasoning, then the answer only.";

pub const FORCE_ANSWER: &str = "The interaction limit is reached. Give your final answer now without calling any tool.";

/// Replace each `{key}` with its value. Unknown placeholders are left as is.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}
