#pragma once

#include <cstddef>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lowfpr/error.hpp"
#include "lowfpr/types.hpp"

namespace lowfpr {

// ===== Example / Dataset =====

/**
 * One labeled example. Which text fields are populated depends on the task:
 *   SafetyPrompt    -> prompt
 *   SafetyResponse  -> prompt, response
 *   Hallucination   -> question, context, answer
 * `positive` is true for the guarded class (Unsafe / FAIL).
 */
struct Example {
  std::string id;
  TaskKind task = TaskKind::SafetyPrompt;
  bool positive = false;

  std::string prompt;
  std::string response;
  std::string question;
  std::string context;
  std::string answer;

  std::string label_string() const {
    return positive ? positive_label(task) : negative_label(task);
  }
};

struct ClassCounts {
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t total() const { return positives + negatives; }
};

struct Dataset {
  TaskKind task = TaskKind::SafetyPrompt;
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }
};

inline ClassCounts class_counts(const Dataset& ds) {
  ClassCounts c;
  for (const auto& ex : ds.examples) (ex.positive ? c.positives : c.negatives)++;
  return c;
}

// ===== JSONL loading =====

struct LineIssue {
  std::size_t line = 0;  // 1-based
  std::string message;
};

struct LoadResult {
  Dataset dataset;
  std::vector<LineIssue> skipped;  // populated only in skip_bad_lines mode
  std::size_t input_lines = 0;     // examples + skipped always sums to this
};

namespace detail {

inline std::string required_string_field(const nlohmann::json& obj, std::size_t line,
                                         const char* field) {
  auto it = obj.find(field);
  if (it == obj.end() || it->is_null()) throw MissingFieldError(line, field);
  if (it->is_string()) return it->get<std::string>();
  throw MalformedLineError(line, std::string("field \"") + field + "\" must be a string");
}

inline Example parse_example_line(const std::string& text, std::size_t line, TaskKind task) {
  nlohmann::json obj;
  try {
    obj = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw MalformedLineError(line, std::string("invalid JSON: ") + e.what());
  }
  if (!obj.is_object()) throw MalformedLineError(line, "line is not a JSON object");

  Example ex;
  ex.task = task;
  ex.id = required_string_field(obj, line, "id");

  const std::string label = required_string_field(obj, line, "label");
  if (label == positive_label(task)) {
    ex.positive = true;
  } else if (label == negative_label(task)) {
    ex.positive = false;
  } else {
    throw LabelOutOfVocabularyError(line, label);
  }

  switch (task) {
    case TaskKind::SafetyPrompt:
      ex.prompt = required_string_field(obj, line, "prompt");
      break;
    case TaskKind::SafetyResponse:
      ex.prompt = required_string_field(obj, line, "prompt");
      ex.response = required_string_field(obj, line, "response");
      break;
    case TaskKind::Hallucination:
      ex.question = required_string_field(obj, line, "question");
      ex.context = required_string_field(obj, line, "context");
      ex.answer = required_string_field(obj, line, "answer");
      break;
  }
  return ex;
}

}  // namespace detail

/**
 * Loads a JSONL dataset from a stream. One JSON object per line.
 *
 * Strict mode (skip_bad_lines = false, the default) throws on the first
 * malformed line, unknown label, missing field, or duplicate id, carrying the
 * 1-based line number. With skip_bad_lines = true those lines are recorded in
 * LoadResult::skipped instead, so every input line is accounted for:
 * dataset.size() + skipped.size() == input_lines.
 *
 * Throws EmptyDatasetError when no examples survive.
 */
inline LoadResult load_dataset(std::istream& in, TaskKind task, bool skip_bad_lines = false) {
  LoadResult result;
  result.dataset.task = task;
  std::unordered_set<std::string> seen_ids;

  std::string line_text;
  std::size_t line_no = 0;
  while (std::getline(in, line_text)) {
    ++line_no;
    if (!line_text.empty() && line_text.back() == '\r') line_text.pop_back();
    try {
      if (line_text.find_first_not_of(" \t") == std::string::npos)
        throw MalformedLineError(line_no, "blank line");
      Example ex = detail::parse_example_line(line_text, line_no, task);
      if (!seen_ids.insert(ex.id).second) throw DuplicateIdError(ex.id);
      result.dataset.examples.push_back(std::move(ex));
    } catch (const Error& e) {
      if (!skip_bad_lines) throw;
      result.skipped.push_back(LineIssue{line_no, e.what()});
    }
  }
  result.input_lines = line_no;

  if (result.dataset.examples.empty()) throw EmptyDatasetError();
  return result;
}

inline LoadResult load_dataset(const std::string& path, TaskKind task,
                               bool skip_bad_lines = false) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path);
  return load_dataset(in, task, skip_bad_lines);
}

// ===== JSONL saving (round-trips with load_dataset) =====

inline nlohmann::ordered_json example_to_json(const Example& ex) {
  nlohmann::ordered_json obj;
  obj["id"] = ex.id;
  obj["label"] = ex.label_string();
  switch (ex.task) {
    case TaskKind::SafetyPrompt:
      obj["prompt"] = ex.prompt;
      break;
    case TaskKind::SafetyResponse:
      obj["prompt"] = ex.prompt;
      obj["response"] = ex.response;
      break;
    case TaskKind::Hallucination:
      obj["question"] = ex.question;
      obj["context"] = ex.context;
      obj["answer"] = ex.answer;
      break;
  }
  return obj;
}

inline void save_dataset(const Dataset& ds, std::ostream& out) {
  for (const auto& ex : ds.examples) out << example_to_json(ex).dump() << "\n";
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open file for writing: " + path);
  save_dataset(ds, out);
}

}  // namespace lowfpr
