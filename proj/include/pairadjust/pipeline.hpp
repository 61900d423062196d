#ifndef PAIRADJUST_PIPELINE_HPP
#define PAIRADJUST_PIPELINE_HPP

#include <string>
#include <vector>

#include <json.hpp>

namespace pairadjust {

// Staged, resumable pipeline over plain CSV artifacts in an output
// directory. A manifest pins the config digest at creation; rerunning a
// stage whose inputs are unchanged is a no-op, and a changed config is
// refused rather than silently overwriting artifacts.
class Pipeline {
public:
  // config_path may be empty (only the simulate stage works then).
  // `overrides` is deep-merged over the file config; the CLI uses it for
  // --seed/--provider/--live and friends.
  Pipeline(const std::string& config_path, const std::string& out_dir,
           const nlohmann::json& overrides = nlohmann::json::object());

  struct StageOutcome {
    bool ran = false;  // false: inputs unchanged, stage skipped
    std::string message;
  };

  StageOutcome run_stage(const std::string& stage);
  // ingest .. evaluate in dependency order (impute/stratify/pair/query/score
  // only when configured); returns one message per executed stage.
  std::vector<std::string> run_all();

  static const std::vector<std::string>& stage_names();
  const std::string& out_dir() const { return out_dir_; }
  std::string artifact_path(const std::string& name) const;
  const nlohmann::json& config() const { return config_; }

private:
  StageOutcome stage_ingest();
  StageOutcome stage_impute();
  StageOutcome stage_stratify();
  StageOutcome stage_pair();
  StageOutcome stage_query();
  StageOutcome stage_score();
  StageOutcome stage_estimate();
  StageOutcome stage_evaluate();
  StageOutcome stage_simulate();

  nlohmann::json effective_section(const std::string& key) const;
  std::uint64_t master_seed() const;
  std::string require_artifact(const std::string& name, const std::string& producer) const;

  void load_manifest();
  void save_manifest() const;
  bool up_to_date(const std::string& stage,
                  const std::vector<std::string>& input_paths) const;
  void record_stage(const std::string& stage,
                    const std::vector<std::string>& input_paths,
                    const std::vector<std::string>& outputs);

  nlohmann::json config_;
  nlohmann::json overrides_;
  std::string out_dir_;
  std::string config_digest_;
  nlohmann::json manifest_;
};

nlohmann::json load_json_file(const std::string& path);
std::string file_digest(const std::string& path);

}  // namespace pairadjust

#endif  // PAIRADJUST_PIPELINE_HPP
