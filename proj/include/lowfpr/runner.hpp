#pragma once

// Run orchestration: resolved run configuration, the on-disk cache layout
// (records, trajectories, manifest), resumable threaded evaluation, report
// assembly, plot-data emission, and the synthetic polarization study.
//
// Layout under output_dir:
//   config.json                 resolved configuration, written by evaluate()
//   manifest.json               cell bookkeeping, rewritten after every cell
//   records/<cell>.jsonl        one score record per line, append-only
//   trajectories/<cell>.jsonl   one reasoning trajectory per line
//   reports/report.{txt,csv,json}
//   plots/*.csv

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lowfpr/backend.hpp"
#include "lowfpr/dataset.hpp"
#include "lowfpr/error.hpp"
#include "lowfpr/http_backend.hpp"
#include "lowfpr/metrics.hpp"
#include "lowfpr/prompts.hpp"
#include "lowfpr/report.hpp"
#include "lowfpr/scoring.hpp"
#include "lowfpr/synthetic.hpp"
#include "lowfpr/trajectory.hpp"
#include "lowfpr/types.hpp"
#include "lowfpr/version.hpp"

namespace lowfpr {

// ===== Run configuration =====

struct DatasetSpec {
  std::string name;
  std::string path;
  TaskKind task = TaskKind::SafetyPrompt;
};

struct TrajectorySettings {
  bool enabled = false;
  std::size_t stride = 0;  // 0 picks a stride from the reasoning length
  std::size_t grid_size = 50;
};

struct RunConfig {
  std::vector<DatasetSpec> datasets;
  BackendDescriptor backend;
  ModelFamily model_family;
  SyntheticConfig synthetic;  // synthetic backend knobs; seed below wins
  std::vector<InferenceMode> modes{InferenceMode::ThinkOff, InferenceMode::ThinkOn};
  std::vector<ScoringScheme> schemes{ScoringScheme::TokenBased};
  std::vector<CertaintyLevel> certainty_levels{CertaintyLevel::base()};
  std::vector<double> alphas{0.01, 0.03, 0.05};  // FPR budgets shown in text tables
  std::vector<double> ensemble_weights{0.5};
  TrajectorySettings trajectory;
  std::string output_dir = "out";
  std::uint64_t seed = 42;
  std::size_t max_reasoning_tokens = 1024;
  bool trace_wire = false;

  void validate() const {
    if (datasets.empty()) throw ConfigError("config needs at least one dataset");
    std::set<std::string> names;
    for (const auto& spec : datasets) {
      if (spec.name.empty()) throw ConfigError("dataset name must not be empty");
      if (spec.name.find_first_not_of(
              "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789._-") !=
          std::string::npos)
        throw ConfigError("dataset name \"" + spec.name +
                          "\" may only use letters, digits, '.', '_', '-'");
      if (!names.insert(spec.name).second)
        throw ConfigError("duplicate dataset name \"" + spec.name + "\"");
      if (spec.path.empty()) throw ConfigError("dataset \"" + spec.name + "\" has no path");
    }
    backend.validate();
    synthetic.validate();
    if (modes.empty()) throw ConfigError("config needs at least one inference mode");
    if (schemes.empty()) throw ConfigError("config needs at least one scoring scheme");
    if (certainty_levels.empty()) throw ConfigError("config needs at least one certainty level");
    if (alphas.empty()) throw ConfigError("config needs at least one FPR budget");
    for (double a : alphas)
      if (!(a > 0.0 && a <= 1.0)) throw ConfigError("FPR budgets must lie in (0, 1]");
    for (double w : ensemble_weights)
      if (!(w >= 0.0 && w <= 1.0)) throw ConfigError("ensemble weights must lie in [0, 1]");
    if (trajectory.grid_size < 2) throw ConfigError("trajectory grid_size must be >= 2");
    if (max_reasoning_tokens < 1) throw ConfigError("max_reasoning_tokens must be >= 1");
    if (trajectory.enabled) {
      const bool has_on = std::count(modes.begin(), modes.end(), InferenceMode::ThinkOn) > 0;
      const bool has_token =
          std::count(schemes.begin(), schemes.end(), ScoringScheme::TokenBased) > 0;
      if (!has_on || !has_token)
        throw ConfigError("trajectories need think_on mode and the token scheme enabled");
    }
  }
};

// ===== Config serialization =====

inline nlohmann::ordered_json config_to_json(const RunConfig& cfg) {
  nlohmann::ordered_json j;
  j["datasets"] = nlohmann::ordered_json::array();
  for (const auto& spec : cfg.datasets)
    j["datasets"].push_back(
        {{"name", spec.name}, {"path", spec.path}, {"task", to_string(spec.task)}});
  j["backend"] = {
      {"kind",
       cfg.backend.kind == BackendDescriptor::Kind::Synthetic ? "synthetic" : "http_completion"},
      {"endpoint", cfg.backend.endpoint},
      {"model_name", cfg.backend.model_name},
      {"request_timeout_s", cfg.backend.request_timeout_s},
      {"max_inflight", cfg.backend.max_inflight},
      {"top_k_logprobs", cfg.backend.top_k_logprobs},
      {"max_attempts", cfg.backend.max_attempts},
      {"initial_backoff_ms", cfg.backend.initial_backoff.count()}};
  j["model_family"] = {
      {"kind",
       cfg.model_family.kind == ModelFamily::Kind::Standard ? "standard" : "reasoning_native"},
      {"thinking_open_tag", cfg.model_family.thinking_open_tag},
      {"thinking_close_tag", cfg.model_family.thinking_close_tag}};
  j["synthetic"] = {{"polarization", cfg.synthetic.polarization},
                    {"base_separation", cfg.synthetic.base_separation},
                    {"noise_scale", cfg.synthetic.noise_scale},
                    {"reasoning_tokens", cfg.synthetic.reasoning_tokens}};
  j["modes"] = nlohmann::ordered_json::array();
  for (auto m : cfg.modes) j["modes"].push_back(to_string(m));
  j["schemes"] = nlohmann::ordered_json::array();
  for (auto s : cfg.schemes) j["schemes"].push_back(to_string(s));
  j["certainty_levels"] = nlohmann::ordered_json::array();
  for (const auto& c : cfg.certainty_levels) j["certainty_levels"].push_back(to_string(c));
  j["alphas"] = cfg.alphas;
  j["ensemble_weights"] = cfg.ensemble_weights;
  j["trajectory"] = {{"enabled", cfg.trajectory.enabled},
                     {"stride", cfg.trajectory.stride},
                     {"grid_size", cfg.trajectory.grid_size}};
  j["output_dir"] = cfg.output_dir;
  j["seed"] = cfg.seed;
  j["max_reasoning_tokens"] = cfg.max_reasoning_tokens;
  j["trace_wire"] = cfg.trace_wire;
  return j;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig cfg;
  if (j.contains("datasets")) {
    cfg.datasets.clear();
    for (const auto& d : j.at("datasets")) {
      DatasetSpec spec;
      spec.name = d.at("name").get<std::string>();
      spec.path = d.at("path").get<std::string>();
      spec.task = task_from_string(d.at("task").get<std::string>());
      cfg.datasets.push_back(std::move(spec));
    }
  }
  if (j.contains("backend")) {
    const auto& b = j.at("backend");
    if (b.contains("kind")) {
      const auto kind = b.at("kind").get<std::string>();
      if (kind == "synthetic") cfg.backend.kind = BackendDescriptor::Kind::Synthetic;
      else if (kind == "http_completion") cfg.backend.kind = BackendDescriptor::Kind::HttpCompletion;
      else throw ConfigError("unknown backend kind \"" + kind + "\"");
    }
    if (b.contains("endpoint")) cfg.backend.endpoint = b.at("endpoint").get<std::string>();
    if (b.contains("model_name")) cfg.backend.model_name = b.at("model_name").get<std::string>();
    if (b.contains("request_timeout_s"))
      cfg.backend.request_timeout_s = b.at("request_timeout_s").get<double>();
    if (b.contains("max_inflight")) cfg.backend.max_inflight = b.at("max_inflight").get<std::size_t>();
    if (b.contains("top_k_logprobs"))
      cfg.backend.top_k_logprobs = b.at("top_k_logprobs").get<std::size_t>();
    if (b.contains("max_attempts")) cfg.backend.max_attempts = b.at("max_attempts").get<int>();
    if (b.contains("initial_backoff_ms"))
      cfg.backend.initial_backoff = std::chrono::milliseconds(b.at("initial_backoff_ms").get<long>());
  }
  if (j.contains("model_family")) {
    const auto& f = j.at("model_family");
    const auto kind = f.value("kind", std::string("standard"));
    if (kind == "standard") {
      cfg.model_family = ModelFamily::standard();
    } else if (kind == "reasoning_native") {
      cfg.model_family = ModelFamily::reasoning_native(f.value("thinking_open_tag", "<think>"),
                                                       f.value("thinking_close_tag", "</think>"));
    } else {
      throw ConfigError("unknown model family kind \"" + kind + "\"");
    }
  }
  if (j.contains("synthetic")) {
    const auto& s = j.at("synthetic");
    if (s.contains("polarization")) cfg.synthetic.polarization = s.at("polarization").get<double>();
    if (s.contains("base_separation"))
      cfg.synthetic.base_separation = s.at("base_separation").get<double>();
    if (s.contains("noise_scale")) cfg.synthetic.noise_scale = s.at("noise_scale").get<double>();
    if (s.contains("reasoning_tokens"))
      cfg.synthetic.reasoning_tokens = s.at("reasoning_tokens").get<std::size_t>();
  }
  if (j.contains("modes")) {
    cfg.modes.clear();
    for (const auto& m : j.at("modes")) cfg.modes.push_back(mode_from_string(m.get<std::string>()));
  }
  if (j.contains("schemes")) {
    cfg.schemes.clear();
    for (const auto& s : j.at("schemes"))
      cfg.schemes.push_back(scheme_from_string(s.get<std::string>()));
  }
  if (j.contains("certainty_levels")) {
    cfg.certainty_levels.clear();
    for (const auto& c : j.at("certainty_levels"))
      cfg.certainty_levels.push_back(certainty_from_string(c.get<std::string>()));
  }
  if (j.contains("alphas")) cfg.alphas = j.at("alphas").get<std::vector<double>>();
  if (j.contains("ensemble_weights"))
    cfg.ensemble_weights = j.at("ensemble_weights").get<std::vector<double>>();
  if (j.contains("trajectory")) {
    const auto& t = j.at("trajectory");
    if (t.contains("enabled")) cfg.trajectory.enabled = t.at("enabled").get<bool>();
    if (t.contains("stride")) cfg.trajectory.stride = t.at("stride").get<std::size_t>();
    if (t.contains("grid_size")) cfg.trajectory.grid_size = t.at("grid_size").get<std::size_t>();
  }
  if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("max_reasoning_tokens"))
    cfg.max_reasoning_tokens = j.at("max_reasoning_tokens").get<std::size_t>();
  if (j.contains("trace_wire")) cfg.trace_wire = j.at("trace_wire").get<bool>();
  return cfg;
}

/** Identity of the scored results; storage location and tracing excluded. */
inline std::string config_hash(const RunConfig& cfg) {
  nlohmann::ordered_json j = config_to_json(cfg);
  j.erase("output_dir");
  j.erase("trace_wire");
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(detail::fnv1a64(j.dump())));
  return buf;
}

// ===== Cache keys and layout =====

/** Stable identity of one scored request; any prompt or setting change busts it. */
inline std::string cache_key(const std::string& example_id, const PromptBundle& bundle,
                             InferenceMode mode, ScoringScheme scheme,
                             const CertaintyLevel& certainty, const std::string& model_name) {
  std::string blob;
  const char sep = '\x1f';
  blob += example_id;
  blob += sep;
  blob += bundle.prompt_text;
  blob += sep;
  blob += bundle.generation_prefix;
  blob += sep;
  blob += bundle.forced_suffix;
  blob += sep;
  blob += to_string(mode);
  blob += sep;
  blob += to_string(scheme);
  blob += sep;
  blob += to_string(certainty);
  blob += sep;
  blob += model_name;
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(detail::fnv1a64(blob)));
  return buf;
}

inline std::filesystem::path records_path(const std::string& output_dir, const CellKey& key) {
  return std::filesystem::path(output_dir) / "records" / (cell_slug(key) + ".jsonl");
}

inline std::filesystem::path trajectories_path(const std::string& output_dir, const CellKey& key) {
  return std::filesystem::path(output_dir) / "trajectories" / (cell_slug(key) + ".jsonl");
}

// ===== Cell enumeration =====

/** Escalated certainty phrasings exist only for the safety tasks' token scheme. */
inline bool combination_supported(TaskKind task, ScoringScheme scheme,
                                  const CertaintyLevel& certainty) {
  if (certainty.basep()) return true;
  if (scheme == ScoringScheme::Verbalized) return false;
  return task != TaskKind::Hallucination;
}

inline std::vector<CellKey> enumerate_cells(const RunConfig& cfg) {
  std::vector<CellKey> cells;
  for (const auto& spec : cfg.datasets)
    for (auto scheme : cfg.schemes)
      for (const auto& certainty : cfg.certainty_levels)
        for (auto mode : cfg.modes) {
          if (!combination_supported(spec.task, scheme, certainty)) continue;
          cells.push_back(CellKey{spec.name, mode, scheme, certainty});
        }
  return cells;
}

// ===== Manifest =====

struct CellStatus {
  CellKey key;
  std::string status = "pending";  // pending | partial | complete
  std::size_t records = 0;
  std::size_t expected = 0;
  std::size_t failures = 0;
  std::string first_error;
};

struct RunManifest {
  std::string config_hash;
  std::string tool_version = kVersion;
  std::vector<CellStatus> cells;

  bool all_complete() const {
    return std::all_of(cells.begin(), cells.end(),
                       [](const CellStatus& c) { return c.status == "complete"; });
  }

  const CellStatus* find(const CellKey& key) const {
    for (const auto& cell : cells)
      if (cell_slug(cell.key) == cell_slug(key)) return &cell;
    return nullptr;
  }
};

inline nlohmann::ordered_json manifest_to_json(const RunManifest& m) {
  nlohmann::ordered_json j;
  j["config_hash"] = m.config_hash;
  j["tool_version"] = m.tool_version;
  j["cells"] = nlohmann::ordered_json::array();
  for (const auto& cell : m.cells) {
    j["cells"].push_back({{"dataset", cell.key.dataset},
                          {"mode", to_string(cell.key.mode)},
                          {"scheme", to_string(cell.key.scheme)},
                          {"certainty", to_string(cell.key.certainty)},
                          {"status", cell.status},
                          {"records", cell.records},
                          {"expected", cell.expected},
                          {"failures", cell.failures},
                          {"first_error", cell.first_error}});
  }
  return j;
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
  RunManifest m;
  m.config_hash = j.value("config_hash", std::string());
  m.tool_version = j.value("tool_version", std::string());
  for (const auto& c : j.value("cells", nlohmann::json::array())) {
    CellStatus cell;
    cell.key.dataset = c.at("dataset").get<std::string>();
    cell.key.mode = mode_from_string(c.at("mode").get<std::string>());
    cell.key.scheme = scheme_from_string(c.at("scheme").get<std::string>());
    cell.key.certainty = certainty_from_string(c.at("certainty").get<std::string>());
    cell.status = c.value("status", std::string("pending"));
    cell.records = c.value("records", std::size_t{0});
    cell.expected = c.value("expected", std::size_t{0});
    cell.failures = c.value("failures", std::size_t{0});
    cell.first_error = c.value("first_error", std::string());
    m.cells.push_back(std::move(cell));
  }
  return m;
}

// ===== File helpers =====

namespace detail {

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace detail

inline void save_manifest(const std::string& output_dir, const RunManifest& m) {
  detail::write_text_atomic(std::filesystem::path(output_dir) / "manifest.json",
                            manifest_to_json(m).dump(2) + "\n");
}

inline RunManifest load_manifest(const std::string& output_dir) {
  const auto path = std::filesystem::path(output_dir) / "manifest.json";
  if (!std::filesystem::exists(path))
    throw IoError("no manifest at " + path.string() + "; run evaluate first");
  return manifest_from_json(nlohmann::json::parse(detail::read_text(path)));
}

inline void save_config(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.output_dir);
  detail::write_text_atomic(std::filesystem::path(cfg.output_dir) / "config.json",
                            config_to_json(cfg).dump(2) + "\n");
}

inline RunConfig load_config(const std::string& run_dir) {
  const auto path = std::filesystem::path(run_dir) / "config.json";
  if (!std::filesystem::exists(path))
    throw IoError("no config at " + path.string() + "; run evaluate first");
  RunConfig cfg = config_from_json(nlohmann::json::parse(detail::read_text(path)));
  cfg.output_dir = run_dir;  // the directory we found it in wins over the stored path
  return cfg;
}

// ===== Stored records =====

struct StoredRecord {
  std::string cache_key;
  bool label = false;
  ScoreRecord record;
};

inline nlohmann::ordered_json stored_record_to_json(const StoredRecord& rec) {
  nlohmann::ordered_json env;
  env["cache_key"] = rec.cache_key;
  env["label"] = rec.label;
  env.update(record_to_json(rec.record));
  return env;
}

/** Missing file reads as empty; unparseable lines (torn writes) are dropped. */
inline std::vector<StoredRecord> load_cell_records(const std::filesystem::path& path) {
  std::vector<StoredRecord> out;
  std::ifstream in(path, std::ios::binary);
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      StoredRecord rec;
      rec.cache_key = j.at("cache_key").get<std::string>();
      rec.label = j.at("label").get<bool>();
      rec.record = record_from_json(j);
      out.push_back(std::move(rec));
    } catch (const std::exception&) {
      continue;
    }
  }
  return out;
}

// ===== Backend construction =====

inline std::unique_ptr<Backend> make_backend(const RunConfig& cfg) {
  if (cfg.backend.kind == BackendDescriptor::Kind::Synthetic) {
    SyntheticConfig synth = cfg.synthetic;
    synth.seed = cfg.seed;  // one seed governs the whole run
    return std::make_unique<SyntheticBackend>(cfg.backend, synth);
  }
  return std::make_unique<HttpCompletionBackend>(cfg.backend, cfg.trace_wire);
}

// ===== Evaluation =====

namespace detail {

struct WorkItem {
  const Example* example = nullptr;
  PromptBundle bundle;
  std::string key;
};

/**
 * Scores `items` with up to max_inflight workers and appends results to
 * `out` strictly in item order, so an interrupted file is always an exact
 * prefix of the complete one. Failed items leave a gap and count as failures.
 */
inline void score_items(Backend& backend, const std::vector<WorkItem>& items, InferenceMode mode,
                        ScoringScheme scheme, std::size_t max_reasoning_tokens, std::ofstream& out,
                        std::size_t& failures, std::string& first_error) {
  const std::size_t workers =
      std::min<std::size_t>(backend.descriptor().max_inflight, items.size());
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::map<std::size_t, std::optional<std::string>> ready;
  std::size_t next_write = 0;

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= items.size()) return;
      std::optional<std::string> line;
      std::string error;
      try {
        const WorkItem& item = items[i];
        StoredRecord stored;
        stored.cache_key = item.key;
        stored.label = item.example->positive;
        stored.record = scheme == ScoringScheme::TokenBased
                            ? token_score(backend, item.example->id, item.bundle, mode,
                                          max_reasoning_tokens)
                            : verbalized_score(backend, item.example->id, item.bundle, mode,
                                               max_reasoning_tokens);
        line = stored_record_to_json(stored).dump();
      } catch (const std::exception& e) {
        error = e.what();
      }
      std::lock_guard<std::mutex> lock(mu);
      if (!line) {
        ++failures;
        if (first_error.empty()) first_error = error;
      }
      ready.emplace(i, std::move(line));
      while (true) {
        auto it = ready.find(next_write);
        if (it == ready.end()) break;
        if (it->second) {
          out << *it->second << '\n';
          out.flush();
        }
        ready.erase(it);
        ++next_write;
      }
    }
  };

  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

}  // namespace detail

inline PromptBundle bundle_for(const Example& ex, const CellKey& key,
                               const ModelFamily& family) {
  return key.scheme == ScoringScheme::Verbalized
             ? build_verbalized_prompt(ex, key.mode, family)
             : build_prompt(ex, key.mode, key.scheme, family, key.certainty);
}

/**
 * Scores every enumerated cell with the given backend, resuming from whatever
 * records already sit in output_dir. Per-example failures leave the cell
 * partial; a second run re-requests only the gaps. Trajectories are extracted
 * for ThinkOn token cells once they are complete.
 */
inline RunManifest evaluate(const RunConfig& cfg, Backend& backend) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(cfg.output_dir) / "records");
  if (cfg.trajectory.enabled) fs::create_directories(fs::path(cfg.output_dir) / "trajectories");
  save_config(cfg);

  std::map<std::string, Dataset> datasets;
  for (const auto& spec : cfg.datasets)
    datasets[spec.name] = load_dataset(spec.path, spec.task).dataset;

  RunManifest manifest;
  manifest.config_hash = config_hash(cfg);
  for (const CellKey& key : enumerate_cells(cfg)) {
    CellStatus cell;
    cell.key = key;
    cell.expected = datasets.at(key.dataset).size();
    manifest.cells.push_back(std::move(cell));
  }
  save_manifest(cfg.output_dir, manifest);

  for (CellStatus& cell : manifest.cells) {
    const Dataset& ds = datasets.at(cell.key.dataset);

    std::vector<const Example*> ordered;
    for (const Example& ex : ds.examples) ordered.push_back(&ex);
    std::sort(ordered.begin(), ordered.end(),
              [](const Example* a, const Example* b) { return a->id < b->id; });

    const fs::path path = records_path(cfg.output_dir, cell.key);
    std::vector<StoredRecord> existing = load_cell_records(path);
    std::set<std::string> have;
    for (const auto& rec : existing) have.insert(rec.cache_key);

    std::vector<detail::WorkItem> todo;
    for (const Example* ex : ordered) {
      detail::WorkItem item;
      item.example = ex;
      item.bundle = bundle_for(*ex, cell.key, cfg.model_family);
      item.key = cache_key(ex->id, item.bundle, cell.key.mode, cell.key.scheme,
                           cell.key.certainty, cfg.backend.model_name);
      if (have.count(item.key)) continue;
      todo.push_back(std::move(item));
    }

    std::size_t failures = 0;
    std::string first_error;
    if (!todo.empty()) {
      std::ofstream out(path, std::ios::binary | std::ios::app);
      if (!out) throw IoError("cannot append to " + path.string());
      detail::score_items(backend, todo, cell.key.mode, cell.key.scheme,
                          cfg.max_reasoning_tokens, out, failures, first_error);
    }

    cell.records = have.size() + todo.size() - failures;
    cell.failures = failures;
    cell.first_error = first_error;
    cell.status = cell.records >= cell.expected ? "complete"
                  : cell.records > 0            ? "partial"
                                                : "pending";
    save_manifest(cfg.output_dir, manifest);

    const bool wants_trajectories = cfg.trajectory.enabled &&
                                    cell.key.mode == InferenceMode::ThinkOn &&
                                    cell.key.scheme == ScoringScheme::TokenBased &&
                                    cell.status == "complete";
    if (wants_trajectories) {
      std::map<std::string, double> p_on;
      for (const auto& rec : load_cell_records(path))
        p_on.emplace(rec.record.example_id, rec.record.p_positive);

      const fs::path tpath = trajectories_path(cfg.output_dir, cell.key);
      std::set<std::string> have_traj;
      {
        std::ifstream in(tpath, std::ios::binary);
        std::string line;
        while (in && std::getline(in, line)) {
          if (line.empty()) continue;
          try {
            have_traj.insert(
                nlohmann::json::parse(line).at("example_id").get<std::string>());
          } catch (const std::exception&) {
            continue;
          }
        }
      }

      std::map<std::string, const Example*> by_id;
      for (const Example& ex : ds.examples) by_id[ex.id] = &ex;
      std::ofstream tout(tpath, std::ios::binary | std::ios::app);
      if (!tout) throw IoError("cannot append to " + tpath.string());
      for (const std::string& id : false_positive_ids(ds, p_on)) {
        if (have_traj.count(id)) continue;
        try {
          const PromptBundle bundle = bundle_for(*by_id.at(id), cell.key, cfg.model_family);
          const GenerationResult gen =
              backend.generate(bundle.prompt_text + bundle.generation_prefix,
                                bundle.stop_sequences, cfg.max_reasoning_tokens);
          const std::size_t stride = cfg.trajectory.stride > 0 ? cfg.trajectory.stride
                                                               : default_stride(gen.tokens.size());
          const Trajectory traj = extract_trajectory(backend, id, bundle, gen.tokens, stride);
          tout << trajectory_to_json(traj).dump() << '\n';
          tout.flush();
        } catch (const Error&) {
          continue;  // next run retries this id
        }
      }
    }
  }
  return manifest;
}

/** Same, constructing the backend the config describes. */
inline RunManifest evaluate(const RunConfig& cfg) {
  const std::unique_ptr<Backend> backend = make_backend(cfg);
  return evaluate(cfg, *backend);
}

// ===== Collection for reporting =====

/** Loads a cell's scores off disk, first record per id winning, sorted by id. */
inline std::optional<CellScores> collect_cell(const RunConfig& cfg, const RunManifest& manifest,
                                              const CellKey& key) {
  const std::vector<StoredRecord> records = load_cell_records(records_path(cfg.output_dir, key));
  if (records.empty()) return std::nullopt;

  std::map<std::string, std::pair<double, bool>> by_id;
  for (const auto& rec : records)
    by_id.emplace(rec.record.example_id, std::make_pair(rec.record.p_positive, rec.label));

  CellScores cell;
  cell.key = key;
  for (const auto& [id, entry] : by_id) {
    cell.ids.push_back(id);
    cell.scores.push_back(entry.first);
    cell.labels.push_back(entry.second);
  }
  const CellStatus* status = manifest.find(key);
  cell.partial = status != nullptr && cell.ids.size() < status->expected;
  return cell;
}

// ===== Report assembly =====

struct ReportBundle {
  std::string text;
  std::string csv;
  nlohmann::ordered_json json;
};

namespace detail {

inline nlohmann::ordered_json opr_to_json(const std::string& name, std::size_t n, bool partial,
                                          const OperatingPointReport& opr) {
  nlohmann::ordered_json row;
  row["dataset"] = name;
  row["n"] = n;
  row["partial"] = partial;
  row["accuracy"] = opr.greedy.accuracy;
  if (opr.greedy.gfpr) row["gfpr"] = *opr.greedy.gfpr;
  if (opr.greedy.grec) row["grec"] = *opr.greedy.grec;
  row["auroc"] = opr.auroc;
  nlohmann::ordered_json tprs;
  for (const auto& [alpha, tpr] : opr.tpr_at) tprs[format_number(alpha)] = tpr;
  row["tpr_at"] = tprs;
  return row;
}

inline void append_entries(std::vector<ReportEntry>& entries, const std::string& scheme,
                           const std::string& certainty, const std::string& mode,
                           const std::string& dataset, const OperatingPointReport& opr) {
  auto add = [&](const std::string& metric, double value) {
    entries.push_back(ReportEntry{scheme, certainty, mode, dataset, metric, value});
  };
  add("accuracy", opr.greedy.accuracy);
  if (opr.greedy.gfpr) add("gfpr", *opr.greedy.gfpr);
  if (opr.greedy.grec) add("grec", *opr.greedy.grec);
  for (const auto& [alpha, tpr] : opr.tpr_at) add("tpr@" + format_number(alpha), tpr);
  add("auroc", opr.auroc);
}

}  // namespace detail

/**
 * Builds the full report over whatever cells have records: one metrics table
 * per (scheme, certainty, mode), a Think On / Think Off side-by-side per
 * (scheme, certainty) when both modes ran, and one table per ensemble weight.
 * Throws MissingCellError when nothing at all has been scored.
 */
inline ReportBundle build_report(const RunConfig& cfg, const RunManifest& manifest,
                                 const std::vector<double>& table_alphas) {
  std::vector<double> all_alphas = default_alpha_set();
  all_alphas.insert(all_alphas.end(), table_alphas.begin(), table_alphas.end());
  std::sort(all_alphas.begin(), all_alphas.end());
  all_alphas.erase(std::unique(all_alphas.begin(), all_alphas.end()), all_alphas.end());

  ReportBundle bundle;
  std::vector<ReportEntry> entries;
  bundle.json["tool_version"] = kVersion;
  bundle.json["config_hash"] = manifest.config_hash;
  bundle.json["alphas"] = table_alphas;
  bundle.json["sections"] = nlohmann::ordered_json::array();

  bool any_cell = false;
  for (auto scheme : cfg.schemes) {
    for (const auto& certainty : cfg.certainty_levels) {
      const std::string section_name =
          to_string(scheme) + (certainty.basep() ? "" : " certainty=" + to_string(certainty));

      struct ModeData {
        std::vector<MetricsRow> rows;
        std::map<std::string, CellScores> cells;  // dataset -> scores
      };
      std::map<InferenceMode, ModeData> per_mode;

      for (auto mode : cfg.modes) {
        for (const auto& spec : cfg.datasets) {
          if (!combination_supported(spec.task, scheme, certainty)) continue;
          const CellKey key{spec.name, mode, scheme, certainty};
          auto cell = collect_cell(cfg, manifest, key);
          if (!cell) continue;
          MetricsRow row;
          row.name = spec.name;
          row.n = cell->ids.size();
          row.partial = cell->partial;
          row.opr = operating_point_report(cell->scores, cell->labels, all_alphas);
          per_mode[mode].rows.push_back(std::move(row));
          per_mode[mode].cells.emplace(spec.name, std::move(*cell));
        }
      }
      if (per_mode.empty()) continue;
      any_cell = true;

      nlohmann::ordered_json section;
      section["scheme"] = to_string(scheme);
      section["certainty"] = to_string(certainty);
      section["modes"] = nlohmann::ordered_json::array();

      for (auto mode : cfg.modes) {
        auto it = per_mode.find(mode);
        if (it == per_mode.end() || it->second.rows.empty()) continue;
        const auto& rows = it->second.rows;
        bundle.text +=
            render_mode_table(section_name + " / " + display_name(mode), rows, table_alphas);
        bundle.text += '\n';

        nlohmann::ordered_json mode_json;
        mode_json["mode"] = to_string(mode);
        mode_json["rows"] = nlohmann::ordered_json::array();
        for (const auto& row : rows) {
          mode_json["rows"].push_back(detail::opr_to_json(row.name, row.n, row.partial, row.opr));
          detail::append_entries(entries, to_string(scheme), to_string(certainty),
                                 to_string(mode), row.name, row.opr);
        }
        const OperatingPointReport avg = average_report(rows);
        mode_json["avg"] = detail::opr_to_json("Avg.", avg.greedy.n, false, avg);
        detail::append_entries(entries, to_string(scheme), to_string(certainty), to_string(mode),
                               "Avg.", avg);
        section["modes"].push_back(std::move(mode_json));
      }

      // Side-by-side and ensembles need both modes on the same dataset.
      const auto on_it = per_mode.find(InferenceMode::ThinkOn);
      const auto off_it = per_mode.find(InferenceMode::ThinkOff);
      if (on_it != per_mode.end() && off_it != per_mode.end()) {
        std::vector<PairedRow> paired;
        for (const auto& spec : cfg.datasets) {
          const auto on_cell = on_it->second.cells.find(spec.name);
          const auto off_cell = off_it->second.cells.find(spec.name);
          if (on_cell == on_it->second.cells.end() || off_cell == off_it->second.cells.end())
            continue;
          if (on_cell->second.ids != off_cell->second.ids) continue;  // misaligned partials
          PairedRow row;
          row.dataset = spec.name;
          row.n = on_cell->second.ids.size();
          row.partial = on_cell->second.partial || off_cell->second.partial;
          row.on = operating_point_report(on_cell->second.scores, on_cell->second.labels,
                                          all_alphas);
          row.off = operating_point_report(off_cell->second.scores, off_cell->second.labels,
                                           all_alphas);
          paired.push_back(std::move(row));
        }
        if (!paired.empty()) {
          bundle.text += render_side_by_side(section_name + " / Think On vs Think Off", paired,
                                             table_alphas);
          bundle.text += '\n';

          for (double w : cfg.ensemble_weights) {
            std::vector<MetricsRow> rows;
            for (const auto& row : paired) {
              const CellScores& on = on_it->second.cells.at(row.dataset);
              const CellScores& off = off_it->second.cells.at(row.dataset);
              const std::vector<double> mixed =
                  ensemble_by_id(on.ids, on.scores, off.ids, off.scores, w);
              MetricsRow mixed_row;
              mixed_row.name = row.dataset;
              mixed_row.n = row.n;
              mixed_row.partial = row.partial;
              mixed_row.opr = operating_point_report(mixed, on.labels, all_alphas);
              rows.push_back(std::move(mixed_row));
            }
            const std::string mode_label = "ensemble_w=" + format_number(w);
            bundle.text += render_mode_table(
                section_name + " / ensemble w=" + format_number(w), rows, table_alphas);
            bundle.text += '\n';

            nlohmann::ordered_json ens;
            ens["weight"] = w;
            ens["rows"] = nlohmann::ordered_json::array();
            for (const auto& row : rows) {
              ens["rows"].push_back(detail::opr_to_json(row.name, row.n, row.partial, row.opr));
              detail::append_entries(entries, to_string(scheme), to_string(certainty),
                                     mode_label, row.name, row.opr);
            }
            const OperatingPointReport avg = average_report(rows);
            ens["avg"] = detail::opr_to_json("Avg.", avg.greedy.n, false, avg);
            detail::append_entries(entries, to_string(scheme), to_string(certainty), mode_label,
                                   "Avg.", avg);
            if (!section.contains("ensembles"))
              section["ensembles"] = nlohmann::ordered_json::array();
            section["ensembles"].push_back(std::move(ens));
          }
        }
      }
      bundle.json["sections"].push_back(std::move(section));
    }
  }
  if (!any_cell) throw MissingCellError("no scored records under " + cfg.output_dir);
  bundle.csv = report_csv(entries);
  return bundle;
}

/** Renders and writes reports/report.{txt,csv,json}; returns what it wrote. */
inline ReportBundle write_report(const RunConfig& cfg, const RunManifest& manifest,
                                 const std::vector<double>& table_alphas) {
  const ReportBundle bundle = build_report(cfg, manifest, table_alphas);
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(cfg.output_dir) / "reports";
  fs::create_directories(dir);
  detail::write_text_atomic(dir / "report.txt", bundle.text);
  detail::write_text_atomic(dir / "report.csv", bundle.csv);
  detail::write_text_atomic(dir / "report.json", bundle.json.dump(2) + "\n");
  return bundle;
}

// ===== Plot data =====

enum class PlotKind { Roc, LogitHist, TrajectoryBand, Transition, BarSummary };

inline PlotKind plot_kind_from_string(const std::string& s) {
  if (s == "roc") return PlotKind::Roc;
  if (s == "logit-hist") return PlotKind::LogitHist;
  if (s == "trajectory-band") return PlotKind::TrajectoryBand;
  if (s == "transition") return PlotKind::Transition;
  if (s == "bar-summary") return PlotKind::BarSummary;
  throw ConfigError("unknown plot kind \"" + s +
                    "\"; expected roc, logit-hist, trajectory-band, transition, or bar-summary");
}

/**
 * Writes the requested kind's CSV files under plots/ and returns the paths.
 * Throws MissingCellError when no stored cell can feed the kind.
 */
inline std::vector<std::filesystem::path> emit_plot_data(const RunConfig& cfg,
                                                         const RunManifest& manifest,
                                                         PlotKind kind) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(cfg.output_dir) / "plots";
  fs::create_directories(dir);
  std::vector<fs::path> written;
  auto emit = [&](const std::string& name, const std::string& text) {
    const fs::path path = dir / name;
    detail::write_text_atomic(path, text);
    written.push_back(path);
  };

  if (kind == PlotKind::Roc || kind == PlotKind::LogitHist) {
    for (const CellKey& key : enumerate_cells(cfg)) {
      const auto cell = collect_cell(cfg, manifest, key);
      if (!cell) continue;
      if (kind == PlotKind::Roc) {
        emit("roc__" + cell_slug(key) + ".csv", roc_plot_csv(roc_curve(cell->scores, cell->labels)));
      } else {
        std::vector<double> logits;
        logits.reserve(cell->scores.size());
        for (double p : cell->scores) logits.push_back(logit_transform(p));
        emit("logit_hist__" + cell_slug(key) + ".csv",
             logit_hist_csv(score_histogram(logits, cell->labels, 40, -14.0, 14.0)));
      }
    }
  } else if (kind == PlotKind::TrajectoryBand) {
    for (const CellKey& key : enumerate_cells(cfg)) {
      if (key.mode != InferenceMode::ThinkOn || key.scheme != ScoringScheme::TokenBased) continue;
      const fs::path tpath = trajectories_path(cfg.output_dir, key);
      std::ifstream in(tpath, std::ios::binary);
      if (!in) continue;
      std::vector<Trajectory> trajectories;
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
          trajectories.push_back(trajectory_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception&) {
          continue;
        }
      }
      if (trajectories.empty()) continue;
      emit("trajectory_band__" + cell_slug(key) + ".csv",
           trajectory_band_csv(aggregate_trajectories(trajectories, cfg.trajectory.grid_size)));
    }
  } else if (kind == PlotKind::Transition) {
    for (auto scheme : cfg.schemes) {
      for (const auto& certainty : cfg.certainty_levels) {
        for (const auto& spec : cfg.datasets) {
          if (!combination_supported(spec.task, scheme, certainty)) continue;
          const auto on =
              collect_cell(cfg, manifest, {spec.name, InferenceMode::ThinkOn, scheme, certainty});
          const auto off =
              collect_cell(cfg, manifest, {spec.name, InferenceMode::ThinkOff, scheme, certainty});
          if (!on || !off || on->ids != off->ids) continue;
          std::vector<bool> pred_on;
          std::vector<bool> pred_off;
          for (double p : on->scores) pred_on.push_back(p >= 0.5);
          for (double p : off->scores) pred_off.push_back(p >= 0.5);
          emit("transition__" + spec.name + "__" + to_string(scheme) + "__" +
                   to_string(certainty) + ".csv",
               transition_csv(transition_matrix(pred_off, pred_on, on->labels)));
        }
      }
    }
  } else {  // BarSummary
    std::string csv = "scheme,certainty,mode,metric,value\n";
    bool any = false;
    for (auto scheme : cfg.schemes) {
      for (const auto& certainty : cfg.certainty_levels) {
        for (auto mode : cfg.modes) {
          std::vector<MetricsRow> rows;
          for (const auto& spec : cfg.datasets) {
            if (!combination_supported(spec.task, scheme, certainty)) continue;
            const auto cell = collect_cell(cfg, manifest, {spec.name, mode, scheme, certainty});
            if (!cell) continue;
            MetricsRow row;
            row.name = spec.name;
            row.n = cell->ids.size();
            row.opr = operating_point_report(cell->scores, cell->labels, default_alpha_set());
            rows.push_back(std::move(row));
          }
          if (rows.empty()) continue;
          any = true;
          const OperatingPointReport avg = average_report(rows);
          const std::string prefix = csv_escape(to_string(scheme)) + ',' +
                                     csv_escape(to_string(certainty)) + ',' +
                                     csv_escape(to_string(mode)) + ',';
          csv += prefix + "accuracy," + format_number(avg.greedy.accuracy) + '\n';
          csv += prefix + "tpr@0.01," + format_number(avg.tpr_at.at(0.01)) + '\n';
        }
      }
    }
    if (any) emit("bar_summary.csv", csv);
  }

  if (written.empty())
    throw MissingCellError("no stored cells can feed this plot kind; run evaluate first");
  return written;
}

// ===== Synthetic polarization study =====

struct SynthStudyRow {
  double polarization = 0.0;
  InferenceMode mode = InferenceMode::ThinkOff;
  double accuracy = 0.0;
  std::map<double, double> tpr_at;
  double auroc = 0.0;
};

/**
 * End-to-end polarization sweep: a balanced synthetic dataset is scored
 * through the real prompt and scoring pipeline against synthetic backends of
 * increasing reasoning polarization, in both modes.
 */
inline std::vector<SynthStudyRow> run_synth_study(std::uint64_t seed = 42, std::size_t n = 2000,
                                                  const std::vector<double>& grid = {0.0, 1.0, 2.0,
                                                                                     4.0},
                                                  double separation = 1.0, double noise = 4.0,
                                                  const std::vector<double>& alphas = {0.01, 0.03,
                                                                                       0.05}) {
  const Dataset ds = make_synthetic_dataset(n, seed);
  std::vector<bool> labels;
  for (const Example& ex : ds.examples) labels.push_back(ex.positive);

  std::vector<SynthStudyRow> rows;
  for (double pol : grid) {
    SyntheticConfig synth;
    synth.seed = seed;
    synth.polarization = pol;
    synth.base_separation = separation;
    synth.noise_scale = noise;
    BackendDescriptor desc;
    desc.kind = BackendDescriptor::Kind::Synthetic;
    desc.model_name = "synthetic";
    SyntheticBackend backend(desc, synth);

    for (InferenceMode mode : {InferenceMode::ThinkOff, InferenceMode::ThinkOn}) {
      std::vector<double> scores;
      scores.reserve(ds.size());
      for (const Example& ex : ds.examples) {
        const PromptBundle bundle = build_prompt(ex, mode, ScoringScheme::TokenBased);
        scores.push_back(
            token_score(backend, ex.id, bundle, mode, synth.reasoning_tokens).p_positive);
      }
      const OperatingPointReport opr = operating_point_report(scores, labels, alphas);
      SynthStudyRow row;
      row.polarization = pol;
      row.mode = mode;
      row.accuracy = opr.greedy.accuracy;
      row.tpr_at = opr.tpr_at;
      row.auroc = opr.auroc;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

inline std::string synth_study_csv(const std::vector<SynthStudyRow>& rows) {
  if (rows.empty()) throw InsufficientDataError("synth study produced no rows");
  std::string out = "polarization,mode,accuracy";
  for (const auto& [alpha, ignored] : rows.front().tpr_at) out += ",tpr@" + format_number(alpha);
  out += ",auroc\n";
  for (const auto& row : rows) {
    out += format_number(row.polarization) + ',' + to_string(row.mode) + ',' +
           format_number(row.accuracy);
    for (const auto& [ignored, tpr] : row.tpr_at) out += ',' + format_number(tpr);
    out += ',' + format_number(row.auroc) + '\n';
  }
  return out;
}

}  // namespace lowfpr
