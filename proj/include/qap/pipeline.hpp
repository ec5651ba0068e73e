#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "qap/config.hpp"
#include "qap/synthdata.hpp"

namespace qap {

// One run owns its output directory through a lock file held for the
// Pipeline's lifetime.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& out_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

// Staged pipeline over an output directory:
//   synth -> teacher -> relabel -> distill -> eval_* -> report
// Completed stages are skipped when their manifest key (config subset +
// input hashes) matches and the recorded outputs are intact.
class Pipeline {
 public:
  Pipeline(RunConfig config, std::filesystem::path out_dir);

  // Executes every stage in order and writes <out>/report.json. Returns the
  // report. On stage failure, writes a report with a failed-stage marker
  // and rethrows.
  nlohmann::json run_all();

  void run_synth();
  void run_teacher();
  void run_relabel();
  void run_distill();
  nlohmann::json run_eval_qa();
  nlohmann::json run_eval_paraphrase();
  nlohmann::json run_eval_ner();
  nlohmann::json run_eval_sentiment();

  const std::map<std::string, int>& executions() const { return executions_; }
  const RunConfig& config() const { return config_; }
  const std::filesystem::path& out_dir() const { return out_dir_; }

 private:
  struct StageIo {
    std::vector<std::filesystem::path> inputs;
    std::vector<std::filesystem::path> outputs;
  };

  std::uint64_t stage_key(const std::string& stage, const StageIo& io) const;
  bool stage_is_fresh(const std::string& stage, const StageIo& io);
  void record_stage(const std::string& stage, const StageIo& io);
  void run_stage(const std::string& stage, const StageIo& io,
                 const std::function<void()>& body);

  // Loaded lazily by the eval stages.
  Vocabulary vocabulary() const;

  RunConfig config_;
  std::filesystem::path out_dir_;
  std::map<std::string, int> executions_;
};

std::uint64_t file_hash(const std::filesystem::path& path);

void write_json_file(const std::filesystem::path& path,
                     const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

// Checks that a written report carries the hash of the given config.
void verify_report(const std::filesystem::path& report_path,
                   const RunConfig& config);

// Report bodies compare equal across runs once timing is removed.
nlohmann::json strip_timing(nlohmann::json report);

}  // namespace qap
