#pragma once

#include <initializer_list>
#include <string>
#include <string_view>
#include <utility>

namespace consultrl::prompts {

// System prompt for the doctor role. The reward table quoted at the bottom is
// the one the consultation evaluator actually implements.
inline constexpr std::string_view kDoctorSystem =
    R"(You are an experienced doctor who needs to provide professional diagnosis and advice to patients through consultation. Please listen carefully to the patient's description, ask targeted questions, and collect sufficient information before giving a diagnosis and treatment recommendation.

Quick Guide
Objectives:
1. Obtain key information through effective questioning, each round of questions should be modified based on the previous round's content, meaning you shouldn't ask similar questions.
2. Comprehensively analyze the patient's condition to provide an accurate diagnosis and appropriate treatment recommendations.

Rules:
1. You can only choose one of the options to respond, you cannot both answer questions and provide a diagnosis simultaneously.
2. Absolutely do not repeat or ask questions similar or identical to those previously asked.

Response:
<think> [your thinking] </think>
<answer>If you believe there is insufficient information, please only ask one question, in this format:
Question: (your question).
</answer> | <answer>If you believe you have obtained enough information, please only provide diagnosis and recommendations, in this format:
Diagnosis: (the patient's most likely disease or symptoms)
Recommendation: (corresponding treatment plan or advice)
</answer>

Rewards:
Incorrect format: -2.0
Effective question (patient can provide an answer and the question is helpful for diagnosis): +1.0
Ineffective questions do not count towards score
Repeated questions: -2.0
The number of conversation turn is limited. Reaching maximum interaction rounds without providing a diagnosis: -5.0
Completely correct diagnosis and recommendations: +10.0)";

// 0-5 semantic similarity rubric for diagnosis / recommendation grading.
inline constexpr std::string_view kSimilarityJudge =
    R"(Task: As a medical expert, evaluate the semantic similarity between the model-generated medical text and the ground truth reference. Score on a 0-5 point scale based on meaning alignment (wording differences are acceptable if meaning matches).
Criteria:
5: Identical meaning (different wording okay).
4: Minor wording/detail differences; overall meaning aligned.
3: Partial meaning overlap; important differences exist but core intent is partially shared.
2: Limited meaning overlap; key details or context differ significantly.
1: Minimal meaning overlap; mostly unrelated or only superficially related.
0: Unrelated or completely different meaning (no meaningful semantic connection).

Now evaluate:
Candidate: "{candidate}"
Reference: "{reference}"
OUTPUT FORMAT: <think> [Your Thinking Process] </think><answer> [Your Score] </answer>)";

// Patient-simulation fidelity rubric; the reply must be a JSON object with
// the three rate fields.
inline constexpr std::string_view kPatientJudge =
    R"(You are evaluating the quality of a patient's simulated responses during a medical consultation.

Original self-report: {self_report}
Diagnosis: {diagnosis}
Recommendation: {recommendation}
Doctor's questions and simulated patient answers: {simulated_dialogue}

Instructions:
1. Information Control Rate (0-1):
 - Check whether the patient's answers include extra information not asked by the doctor.
 - Deduct 20% for each extra information point.
 - Score = max(0, 1 - 0.2 x number_of_extra_points)

2. Response Completeness Rate (0-1):
 - Check whether the patient answered all points asked by the doctor.
 - Deduct 20% for each missing information point.
 - Score = max(0, 1 - 0.2 x number_of_missing_points)

3. Factual Conflict Rate (0-1):
 - Check if the patient's response is completely opposite to the original self-report.
 - Increase 20% for each completely opposite found.
 - Score = min(1, 1 - 0.2 x number_of_opposite)

Return ONLY in JSON format:
{
  "information_control_rate": float,
  "response_completeness_rate": float,
  "factual_conflict_rate": float
})";

// Builds the hidden health profile text from a gold record.
inline constexpr std::string_view kProfileEnhancement =
    R"(As a medical assistant, expand the patient's symptom description based on:
- Original self-report: {self_report}
- Dialogue history: {dialogue_history}
- Diagnosis: {diagnosis}
- Recommendation: {recommendation}

Processing Rules:
1. Summarize the patient's information: Combine the 'Original self-report' and all patient responses from 'dialogue' into a single coherent paragraph. Include only factual patient statements and exclude the doctor's questions. If a patient response only makes sense in the context of the doctor's question, infer its meaning based on the context.
2. Based on diagnosis and recommendations, add medical evidence to clearly support symptoms.
3. Never contradict the patient's original statements.
4. Keep the language natural and clinical.
5. Return ONLY the enhanced description.)";

// Role-play prompt for an LLM-backed patient.
inline constexpr std::string_view kPatientRoleplay =
    R"(You are interacting with a doctor.
Medical Response Instructions:
Answer each medical question concisely in one sentence, strictly describing symptoms while avoiding any mention of diagnoses or recommendations.
If the question is unrelated to your chief complaint, state: "Sorry, I cannot answer this question."
If the question is repetitive, reply: "Sorry, you've already asked this question."
Your chief complaint:
{description}
doctor's question history:
{history_questions}
Current doctor question:
{question}
Output format:
<think>[Your reasoning]</think><answer>[Your response]</answer>)";

// Annotates each doctor question in a gold dialogue with the clinical
// reasoning that motivates it.
inline constexpr std::string_view kReasoningDistill =
    R"(You are a senior clinician annotating a consultation transcript. For each doctor question in the dialogue below, insert the reasoning that motivates it inside <think>...</think> immediately before the question: state the current hypotheses, how the evidence gathered so far supports or weakens them, and which differential the question is meant to separate.
Do not change any question, answer, diagnosis, or recommendation text.

Dialogue:
{dialogue}

Return the full dialogue with the inserted <think> blocks and nothing else.)";

// Replaces each "{name}" placeholder with its value. Unknown placeholders are
// left untouched (the patient-judge template contains literal JSON braces).
inline std::string fill(std::string_view tmpl,
                        std::initializer_list<std::pair<std::string_view, std::string_view>> vars) {
  std::string out(tmpl);
  for (const auto& [name, value] : vars) {
    const std::string key = "{" + std::string(name) + "}";
    std::size_t pos = 0;
    while ((pos = out.find(key, pos)) != std::string::npos) {
      out.replace(pos, key.size(), value);
      pos += value.size();
    }
  }
  return out;
}

}  // namespace consultrl::prompts
