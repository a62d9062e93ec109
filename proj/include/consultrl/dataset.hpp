#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "consultrl/case.hpp"
#include "consultrl/rng.hpp"

namespace consultrl {

enum class IssueKind { Schema, DuplicateId };

struct CorpusIssue {
  IssueKind kind = IssueKind::Schema;
  int line = 0;
  std::string message;
};

// Validation failures for a whole file, each tagged with its line number.
class CorpusError : public std::runtime_error {
 public:
  explicit CorpusError(std::vector<CorpusIssue> issues)
      : std::runtime_error(render(issues)), issues_(std::move(issues)) {}
  const std::vector<CorpusIssue>& issues() const { return issues_; }

 private:
  static std::string render(const std::vector<CorpusIssue>& issues) {
    std::ostringstream out;
    out << issues.size() << " corpus validation failure(s):";
    for (const auto& i : issues) out << "\n  line " << i.line << ": " << i.message;
    return out.str();
  }
  std::vector<CorpusIssue> issues_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Canonical one-line serialization; loading and re-serializing a valid corpus
// is byte-identical.
inline std::string serialize_case(const ConsultationCase& c) {
  nlohmann::json turns = nlohmann::json::array();
  for (const auto& t : c.gold_turns) turns.push_back({t.question, t.answer});
  const nlohmann::json j = {
      {"case_id", c.case_id},
      {"self_report", c.self_report},
      {"gold_turns", turns},
      {"gold_diagnosis", c.gold_diagnosis},
      {"gold_recommendation", c.gold_recommendation},
      {"disease_category", c.disease_category},
      {"split", std::string(split_name(c.split))},
  };
  return j.dump();
}

namespace detail {

inline std::optional<std::string> require_string(const nlohmann::json& j, const char* key,
                                                 bool allow_empty, std::string& error) {
  if (!j.contains(key)) {
    error = std::string("missing field '") + key + "'";
    return std::nullopt;
  }
  if (!j.at(key).is_string()) {
    error = std::string("field '") + key + "' must be a string";
    return std::nullopt;
  }
  std::string value = j.at(key).get<std::string>();
  if (!allow_empty && value.empty()) {
    error = std::string("field '") + key + "' must be non-empty";
    return std::nullopt;
  }
  return value;
}

inline std::optional<ConsultationCase> parse_case(const std::string& line, std::string& error) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    error = std::string("invalid JSON: ") + e.what();
    return std::nullopt;
  }
  if (!j.is_object()) {
    error = "record must be a JSON object";
    return std::nullopt;
  }
  ConsultationCase c;
  auto id = require_string(j, "case_id", false, error);
  if (!id) return std::nullopt;
  c.case_id = *id;
  auto report = require_string(j, "self_report", false, error);
  if (!report) return std::nullopt;
  c.self_report = *report;
  auto diag = require_string(j, "gold_diagnosis", false, error);
  if (!diag) return std::nullopt;
  c.gold_diagnosis = *diag;
  auto rec = require_string(j, "gold_recommendation", true, error);
  if (!rec) return std::nullopt;
  c.gold_recommendation = *rec;
  auto category = require_string(j, "disease_category", false, error);
  if (!category) return std::nullopt;
  c.disease_category = *category;
  auto split = require_string(j, "split", false, error);
  if (!split) return std::nullopt;
  try {
    c.split = parse_split(*split);
  } catch (const std::invalid_argument& e) {
    error = e.what();
    return std::nullopt;
  }
  if (!j.contains("gold_turns") || !j.at("gold_turns").is_array()) {
    error = "field 'gold_turns' must be an array";
    return std::nullopt;
  }
  for (const auto& t : j.at("gold_turns")) {
    if (!t.is_array() || t.size() != 2 || !t[0].is_string() || !t[1].is_string()) {
      error = "each gold turn must be a [question, answer] string pair";
      return std::nullopt;
    }
    GoldTurn turn{t[0].get<std::string>(), t[1].get<std::string>()};
    if (turn.question.empty() || turn.answer.empty()) {
      error = "gold turn question and answer must be non-empty";
      return std::nullopt;
    }
    c.gold_turns.push_back(std::move(turn));
  }
  return c;
}

}  // namespace detail

// Loads a line-delimited corpus, validating every record. All failures are
// collected and reported together with their line numbers.
inline std::vector<ConsultationCase> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file: " + path);
  std::vector<ConsultationCase> cases;
  std::vector<CorpusIssue> issues;
  std::set<std::string> seen_ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::string error;
    auto c = detail::parse_case(line, error);
    if (!c) {
      issues.push_back({IssueKind::Schema, line_no, error});
      continue;
    }
    if (!seen_ids.insert(c->case_id).second) {
      issues.push_back({IssueKind::DuplicateId, line_no, "duplicate case_id '" + c->case_id + "'"});
      continue;
    }
    cases.push_back(std::move(*c));
  }
  if (!issues.empty()) throw CorpusError(std::move(issues));
  return cases;
}

inline void save_corpus(const std::vector<ConsultationCase>& cases, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write corpus file: " + path);
  for (const auto& c : cases) out << serialize_case(c) << "\n";
}

// Drops shallow dialogues: every case with fewer than min_turns gold turns.
// Split labels are never touched. Idempotent.
inline std::pair<std::vector<ConsultationCase>, std::vector<ConsultationCase>> clean_corpus(
    const std::vector<ConsultationCase>& cases, int min_turns = 3) {
  std::vector<ConsultationCase> kept, dropped;
  for (const auto& c : cases) {
    (static_cast<int>(c.gold_turns.size()) < min_turns ? dropped : kept).push_back(c);
  }
  return {std::move(kept), std::move(dropped)};
}

// Uniform sample without replacement from the test split, returned in corpus
// order. Deterministic under the seed.
inline std::vector<ConsultationCase> sample_eval_subset(const std::vector<ConsultationCase>& cases,
                                                        std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> test_indices;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    if (cases[i].split == Split::Test) test_indices.push_back(i);
  }
  if (n > test_indices.size()) {
    throw std::invalid_argument("requested " + std::to_string(n) + " eval cases but only " +
                                std::to_string(test_indices.size()) + " test cases available");
  }
  Rng rng = make_rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = i + static_cast<std::size_t>(
                           uniform_below(rng, static_cast<std::uint64_t>(test_indices.size() - i)));
    std::swap(test_indices[i], test_indices[j]);
  }
  test_indices.resize(n);
  std::sort(test_indices.begin(), test_indices.end());
  std::vector<ConsultationCase> subset;
  subset.reserve(n);
  for (const auto i : test_indices) subset.push_back(cases[i]);
  return subset;
}

struct CorpusStats {
  std::size_t total = 0;
  std::map<std::string, std::size_t> per_split;
  std::map<std::string, std::map<std::string, std::size_t>> per_split_category;
  std::map<std::size_t, std::size_t> turn_histogram;
};

inline CorpusStats corpus_stats(const std::vector<ConsultationCase>& cases) {
  CorpusStats s;
  s.total = cases.size();
  for (const auto& c : cases) {
    const std::string split(split_name(c.split));
    ++s.per_split[split];
    ++s.per_split_category[split][c.disease_category];
    ++s.turn_histogram[c.gold_turns.size()];
  }
  return s;
}

inline std::string render_stats_report(const CorpusStats& s) {
  std::ostringstream out;
  out << "cases: " << s.total << "\n";
  for (const auto& [split, count] : s.per_split) {
    out << split << ": " << count << "\n";
    const auto it = s.per_split_category.find(split);
    if (it != s.per_split_category.end()) {
      for (const auto& [category, n] : it->second) {
        out << "  " << category << ": " << n << "\n";
      }
    }
  }
  out << "turns histogram:\n";
  for (const auto& [turns, n] : s.turn_histogram) {
    out << "  " << turns << " turns: " << n << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Bundled synthetic fixture: twenty fully synthetic consultations covering
// the eight disease categories, 16 train / 4 test. Questions within a case
// carry distinct keyword sets so the scripted patient matches facts cleanly.
// No real medical data is redistributed.
// ---------------------------------------------------------------------------
inline std::vector<ConsultationCase> make_synthetic_corpus() {
  struct Row {
    const char* id;
    const char* category;
    Split split;
    const char* report;
    const char* diagnosis;
    const char* recommendation;
    std::vector<std::pair<const char*, const char*>> turns;
  };
  static const std::vector<Row> rows = {
      {"syn-001", "Digestive System Diseases", Split::Train,
       "I have had stomach pain since yesterday evening.",
       "acute gastritis", "antacids and a bland diet",
       {{"How long has the stomach pain lasted?", "It started about a day ago."},
        {"Do you feel nauseous or have you vomited?", "I feel nauseous and vomited twice this morning."},
        {"Does eating make the discomfort better or worse?", "Eating makes the burning worse."},
        {"Have you taken any medication recently?", "I took ibuprofen for a headache three days in a row."}}},
      {"syn-002", "Respiratory System Diseases", Split::Train,
       "I have been coughing for a week, and my chest feels tight.",
       "acute bronchitis", "rest, fluids, and a cough suppressant",
       {{"Is the cough dry or does it bring up phlegm?", "The cough is dry and hacking."},
        {"Have you had a fever or chills?", "I had a mild fever last night."},
        {"Do you smoke cigarettes?", "I smoke about five cigarettes a day."},
        {"Do you wheeze when breathing out?", "There is a faint whistle when I breathe out."},
        {"Has your voice become hoarse lately?", "My voice cracks and sounds rough by evening."}}},
      {"syn-003", "Infectious Diseases", Split::Train,
       "I suddenly developed a high fever, and my whole body aches.",
       "seasonal influenza", "rest, plenty of fluids, and fever reducers",
       {{"How high has your temperature been?", "It reached thirty nine degrees last night."},
        {"Do you have a sore throat or runny nose?", "My throat is sore and my nose keeps running."},
        {"Have you been around anyone who was sick recently?", "Two coworkers were out sick with similar symptoms this week."},
        {"Are your muscles aching?", "Every muscle in my back and legs aches."},
        {"Do you have a headache or chest discomfort?", "A dull headache sits behind my eyes."}}},
      {"syn-004", "Genitourinary System Diseases", Split::Train,
       "It burns when I urinate, and I feel like I need to go constantly.",
       "urinary tract infection", "a course of antibiotics and plenty of water",
       {{"How often are you urinating each day?", "I go every twenty minutes but pass only a little."},
        {"Is there any blood in your urine?", "The urine looks cloudy but I have not seen blood."},
        {"Do you have pain in your lower back?", "There is a dull ache on my lower right side."},
        {"Have you noticed a strong smell in the urine?", "It smells much stronger than usual."},
        {"Do you have any fever or shivering episodes?", "I felt shivery last evening with a slight fever."}}},
      {"syn-005", "Neurological Disorders", Split::Train,
       "I keep getting a throbbing headache on one side of my head.",
       "migraine", "a dark quiet room and triptan medication",
       {{"Does light or noise make the headache worse?", "Bright light makes it much worse."},
        {"Do you see flashing spots before the pain starts?", "I sometimes see shimmering zigzag lines first."},
        {"How long does each episode last?", "Usually four to six hours."},
        {"Does anyone in your family get similar headaches?", "My mother gets the same kind of headaches."},
        {"Does the pain settle on one side of your skull?", "It always camps on the right side."}}},
      {"syn-006", "Circulatory System Diseases", Split::Train,
       "I have been having dizzy spells, and my face feels flushed in the morning.",
       "essential hypertension", "a low salt diet and blood pressure medication",
       {{"Have you measured your blood pressure recently?", "The pharmacy machine showed one sixty over one hundred."},
        {"Do you get short of breath when climbing stairs?", "I pant heavily after one flight of stairs."},
        {"How much salt do you add to your food?", "I salt everything heavily and eat pickled snacks."},
        {"Do you get headaches at the back of your head?", "Mornings start with a dull ache at the back of my head."},
        {"Is there ringing in your ears?", "A faint ringing comes and goes."}}},
      {"syn-007", "Endocrine Disorders", Split::Train,
       "I am thirsty all the time, and I have lost weight without trying.",
       "type 2 diabetes", "blood sugar testing and dietary changes",
       {{"How often do you need to urinate at night?", "I wake up three or four times every night to go."},
        {"Has your vision been blurry lately?", "Things look blurry by the end of the day."},
        {"Is there diabetes in your family?", "My father was diagnosed in his fifties."},
        {"Do small cuts heal more slowly than before?", "A scratch from last month is still healing."},
        {"Are your feet ever tingling or numb?", "My toes tingle at night."}}},
      {"syn-008", "Skin Diseases", Split::Train,
       "An itchy red rash appeared on both my hands.",
       "contact dermatitis", "avoid the irritant and apply hydrocortisone cream",
       {{"Have you started using any new soap or detergent?", "I switched to a new dish soap last week."},
        {"Does the rash have blisters or is the skin dry?", "There are tiny blisters and the skin flakes."},
        {"Does anything relieve the itching?", "Cold water calms the itching for a while."},
        {"Did the rash spread beyond your hands?", "It stays on my hands only."},
        {"Do your gloves or rings make it worse?", "Wearing rubber gloves makes it flare."}}},
      {"syn-009", "Digestive System Diseases", Split::Train,
       "My belly cramps and bloats after meals.",
       "irritable bowel syndrome", "a high fiber diet and stress management",
       {{"Have your bowel habits changed recently?", "I alternate between loose stools and constipation."},
        {"Does stress make your symptoms worse?", "Flare ups always follow stressful weeks at work."},
        {"Have you noticed any blood in your stool?", "No blood, just mucus now and then."},
        {"Which foods trigger the cramping?", "Dairy and fried food set it off."},
        {"Do you feel empty of energy after meals?", "I feel drained for an hour after eating."}}},
      {"syn-010", "Respiratory System Diseases", Split::Train,
       "I keep sneezing, and my eyes water every spring.",
       "allergic rhinitis", "antihistamines and avoiding pollen exposure",
       {{"Do your symptoms get worse outdoors?", "They flare up the moment I step outside."},
        {"Is your nose congested or runny?", "It runs constantly with clear discharge."},
        {"Do you have a history of asthma or eczema?", "I had mild eczema as a child."},
        {"Do you sneeze more in the morning or at night?", "Mornings are by far the worst."},
        {"Does anyone else at home have the same symptoms?", "No one else at home is affected."}}},
      {"syn-011", "Infectious Diseases", Split::Train,
       "My throat has been extremely sore for two days.",
       "streptococcal pharyngitis", "a penicillin course and warm salt water gargles",
       {{"Is it painful when you swallow?", "Swallowing feels like razor blades."},
        {"Do you have white patches on your tonsils?", "There are white spots at the back of my throat."},
        {"Have you had a fever above thirty eight degrees?", "Yes, it hit thirty nine this morning."},
        {"Are the glands in your neck swollen?", "The sides of my neck are tender and puffy."},
        {"Is your voice muffled or changed?", "I sound like I am talking through cotton."}}},
      {"syn-012", "Genitourinary System Diseases", Split::Train,
       "A sharp pain comes in waves from my side to my groin.",
       "kidney stones", "pain relief, fluids, and imaging of the urinary tract",
       {{"Does the pain come and go or stay constant?", "It comes in sudden waves that double me over."},
        {"Is there pink or red color in your urine?", "This morning the urine looked pink."},
        {"Are you drinking enough water daily?", "I barely drink two glasses a day."},
        {"Have you ever passed a small stone before?", "Years ago something gritty came out."},
        {"Do you feel nauseated during the pain waves?", "Each wave brings a surge of nausea."}}},
      {"syn-013", "Neurological Disorders", Split::Train,
       "A dull band of pressure wraps around my forehead most afternoons.",
       "tension headache", "regular breaks, stretching, and better sleep habits",
       {{"Do you spend long hours at a computer screen?", "I sit at a screen for ten hours most days."},
        {"Does the pain pulse or stay steady?", "It stays steady like a tight strap."},
        {"Are you sleeping well at night?", "I fall asleep late and wake up tired."},
        {"Do your neck and shoulders feel stiff?", "My shoulders are knotted by lunchtime."},
        {"Does caffeine or skipping coffee change the pain?", "Skipping my morning coffee makes it worse."}}},
      {"syn-014", "Circulatory System Diseases", Split::Train,
       "I feel exhausted, and I look pale lately.",
       "iron deficiency anemia", "iron supplements and a blood count test",
       {{"Do you feel your heart racing after light activity?", "My heart pounds after a short walk."},
        {"Are your periods unusually heavy?", "They have been very heavy for several months."},
        {"Do you crave ice or unusual things to chew?", "I chew ice cubes all day long."},
        {"Do you get dizzy when you stand up quickly?", "The room dims for a moment when I jump up."},
        {"Have your nails become brittle?", "They chip and split constantly."}}},
      {"syn-015", "Endocrine Disorders", Split::Train,
       "I feel cold all the time, and my hair is thinning.",
       "hypothyroidism", "thyroid hormone testing and replacement therapy",
       {{"Have you gained weight without changing your diet?", "I gained six kilograms in three months."},
        {"Do you feel sluggish or slowed down?", "Everything feels like moving through syrup."},
        {"Is your skin drier than usual?", "My skin is flaky and rough."},
        {"Is your voice deeper or rougher than before?", "People say I sound hoarse on the phone."},
        {"Are you often constipated?", "I go only every third day."}}},
      {"syn-016", "Skin Diseases", Split::Train,
       "Thick scaly patches keep coming back on my elbows.",
       "plaque psoriasis", "medicated ointments and moisturizing",
       {{"Are the patches silvery and well defined?", "They are silvery and sharply edged."},
        {"Do your fingernails have small pits?", "My nails have tiny dents across them."},
        {"Do the spots itch or bleed when scratched?", "They bleed in places if I pick at them."},
        {"Did the patches appear after a sore throat or stress?", "They multiplied during a stressful work stretch."},
        {"Do your joints ache in the morning?", "My fingers are stiff for an hour after waking."}}},
      {"syn-017", "Digestive System Diseases", Split::Test,
       "A burning feeling rises in my chest after dinner.",
       "gastroesophageal reflux disease", "smaller meals and avoiding late eating",
       {{"Does the burning get worse when you lie down?", "It flares the moment I lie flat."},
        {"Do you taste acid in your mouth?", "A sour taste creeps up my throat at night."},
        {"How soon after eating does it start?", "About half an hour after a big meal."},
        {"Do you drink coffee or alcohol often?", "I drink three coffees and wine with dinner."},
        {"Does bending over bring the burning back?", "Tying my shoes sets it off instantly."}}},
      {"syn-018", "Respiratory System Diseases", Split::Test,
       "I wheeze and cough when I exercise.",
       "exercise induced asthma", "an inhaler before exertion and a lung function test",
       {{"Do you wake at night short of breath?", "I wake up gasping once or twice a week."},
        {"Does cold air set off the wheezing?", "Winter air tightens my chest immediately."},
        {"Did you have allergies as a child?", "I was allergic to dust and pollen growing up."},
        {"How long does the wheezing last after you stop?", "It settles about ten minutes after I rest."},
        {"Does a particular season make it worse?", "Spring training is always the hardest."}}},
      {"syn-019", "Infectious Diseases", Split::Test,
       "I have had watery diarrhea and cramps since last night.",
       "acute gastroenteritis", "oral rehydration and a light diet",
       {{"How many times have you had diarrhea today?", "At least eight times since this morning."},
        {"Did you eat anything unusual yesterday?", "I ate seafood from a street stall."},
        {"Are you able to keep fluids down?", "Small sips stay down but big gulps come back up."},
        {"Do you feel dizzy when standing up?", "The room spins a little when I stand."},
        {"Is there any blood or black color in the stool?", "No blood, it just looks very watery."}}},
      {"syn-020", "Neurological Disorders", Split::Test,
       "My right hand tingles, and it goes numb at night.",
       "carpal tunnel syndrome", "a wrist splint at night and ergonomic changes",
       {{"Which fingers feel the tingling most?", "The thumb, index, and middle finger mostly."},
        {"Do you type or use tools for long hours?", "I type at a keyboard all day at work."},
        {"Does shaking your hand relieve the numbness?", "Shaking it out brings the feeling back."},
        {"Does the tingling wake you from sleep?", "I often shake my hand awake at three in the morning."},
        {"Is your grip weaker than it used to be?", "Jars are suddenly hard to open."}}},
  };

  std::vector<ConsultationCase> corpus;
  corpus.reserve(rows.size());
  for (const auto& row : rows) {
    ConsultationCase c;
    c.case_id = row.id;
    c.disease_category = row.category;
    c.split = row.split;
    c.self_report = row.report;
    c.gold_diagnosis = row.diagnosis;
    c.gold_recommendation = row.recommendation;
    for (const auto& [q, a] : row.turns) c.gold_turns.push_back(GoldTurn{q, a});
    corpus.push_back(std::move(c));
  }
  return corpus;
}

}  // namespace consultrl
