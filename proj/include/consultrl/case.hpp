#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace consultrl {

enum class Split { Train, Test };

inline std::string_view split_name(Split s) { return s == Split::Train ? "train" : "test"; }

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split: " + std::string(s));
}

struct GoldTurn {
  std::string question;
  std::string answer;
};

// One gold consultation record: the unit of the corpus format.
struct ConsultationCase {
  std::string case_id;
  std::string self_report;
  std::vector<GoldTurn> gold_turns;
  std::string gold_diagnosis;
  std::string gold_recommendation;
  std::string disease_category;  // one of the eight category names, or "synthetic"
  Split split = Split::Train;
};

}  // namespace consultrl
