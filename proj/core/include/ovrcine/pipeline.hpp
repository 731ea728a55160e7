#pragma once

#include "ovrcine/classical.hpp"
#include "ovrcine/ghostnet.hpp"
#include "ovrcine/pddl.hpp"
#include "ovrcine/phantom.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ovrcine {

struct PhantomSection
{
  PhantomConfig phantom;
  int coils = 6;
  double snr_db = 30.0; // k-space SNR of the acquisition; <= 0 disables noise
};

struct ScheduleSection
{
  int R_acq = 4; // acquired rate (ghost labels, TGRAPPA reference)
  int R = 8;     // retrospective rate used by every reconstruction
  bool with_center = true;
  int offset0 = 0;
};

struct GhostSection
{
  GhostNetConfig net;
  std::string labels = "oracle"; // "oracle" | "reference"
  int train_frames = 32;
};

struct OvrSection
{
  std::string roi = "detect";          // "detect" | "truth"
  double threshold = 0.3;
  int margin = 0;
  std::string background = "ghostnet"; // "ghostnet" | "oracle"
  std::string refresh = "frame";       // "frame" | "window"
};

struct PddlSection
{
  UnrollConfig unroll;
  PddlTrainConfig train{3, 0.4, 2e-4, 200, 0, 0.02, ConsistencyRegion::Roi};
};

struct EvalSection
{
  CgConfig cg{30, 1e-6, 0.0};
  std::vector<int> panel_frames{9, 21};
  std::vector<int> systolic_frames{9, 21, 33, 45};
  double corruption = 0.9; // background scale used by the failure-mode probe
};

// Unknown keys are rejected at every level.
struct PipelineConfig
{
  std::uint64_t seed = 1;
  // Workspace directory declared by the config; load_config resolves it against
  // the config file's directory. Not part of any stage key.
  std::string workspace;
  PhantomSection phantom;
  ScheduleSection schedule;
  GhostSection ghost_net;
  OvrSection ovr;
  PddlSection pddl;
  EvalSection eval;

  static PipelineConfig from_json(nlohmann::json const &j);
  nlohmann::json to_json() const;
  nlohmann::json section(std::string const &name) const;
};
void validate(PipelineConfig const &cfg);
PipelineConfig load_config(std::filesystem::path const &path);
// Explicit override, else the declared workspace, else ./workspace.
std::filesystem::path resolve_workspace(PipelineConfig const &cfg, std::string const &override_dir = {});

// Stage order of a full run.
std::vector<std::string> const &stage_names();

// Workspace-backed orchestrator. Each stage writes into <workspace>/<stage>/ and
// finishes with stage.json holding its cache key and artifact digests; a stage is
// current when its key (SHA-256 over the config sections it reads and the
// upstream artifact digests) matches the one on disk.
class Pipeline
{
public:
  using Log = std::function<void(std::string const &)>;

  Pipeline(PipelineConfig cfg, std::filesystem::path workspace, Log log = {});

  // Runs every stage that is not current (all of them with `force`).
  void run_all(bool force = false);
  // Regenerates one stage; its upstream stages must be current.
  void run_stage(std::string const &name);
  // Runs `name` after making its upstream stages current.
  void run_with_dependencies(std::string const &name);

  bool is_current(std::string const &name) const;
  std::string stage_key(std::string const &name) const;
  std::filesystem::path stage_dir(std::string const &name) const;
  std::vector<std::string> const &dependencies(std::string const &name) const;

  PipelineConfig const &config() const { return cfg_; }
  PipelineConfig &config() { return cfg_; }
  std::filesystem::path const &workspace() const { return ws_; }

private:
  void execute(std::string const &name);
  void log(std::string const &msg) const;

  PipelineConfig cfg_;
  std::filesystem::path ws_;
  Log log_;
};

// SHA-256 of a byte string / file, lower-case hex.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(std::filesystem::path const &path);

// Workspace readers shared by the CLI and the acceptance suite.
struct DatasetArtifacts
{
  PhantomTruth truth;
  CoilSensitivities sens;
  KSpaceSeries ksp_low; // R_acq
  KSpaceSeries ksp;     // R
};
DatasetArtifacts load_dataset(Pipeline const &p, std::string const &which); // "train" | "test"
FrameSeries load_frames(std::filesystem::path const &path);
std::vector<CoilImages> load_coil_series(std::filesystem::path const &path);
OvrMask load_mask(std::filesystem::path const &path, std::filesystem::path const &roi_json);
std::vector<SampledKSpace> load_kspace_frames(std::filesystem::path const &dir, std::string const &stem);

} // namespace ovrcine
